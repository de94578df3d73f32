"""Command-line interface: optimize, landscape, fringe, fit, validate.

Configs are JSON documents whose physical fields carry explicit units in
their names (omega_max_khz, dt_us, interrogation_time_ms, acceleration_ug)
and are converted to SI at this boundary, including the laboratory
chirp-rate convention (MHz/s of laser frequency difference versus the
internal angular rad/s^2).  Every command writes a run manifest naming its
outputs; with a fixed seed the data outputs are byte-identical across runs
and independent of --threads (the manifest's wall-clock field and the
per-iteration timing column of optimizer traces are the only exceptions).

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    FitError,
    extract_scale_factor,
    find_central_fringe,
    fit_sinusoid,
    fringe_phase,
    visibility,
)
from .core import BlochBasis, rubidium87
from .dynamics import UnitarityError, pulse_propagator, validate_truncation
from .interferometer import (
    InterferometerSequence,
    TruncationError,
    chirp_scan,
    matched_chirp_rate,
    phase_scan,
    write_fringe_csv,
    write_fringe_sidecar,
)
from .objectives import fidelity_landscape, write_landscape_csv
from .optimizer import (
    AdamParams,
    DivergenceError,
    GradientError,
    OptimizationConfig,
    optimize_pulse,
)
from .waveforms import (
    WaveformFormatError,
    read_waveform,
    write_csv,
    write_waveform,
)

LOG = logging.getLogger("bragg_forge")

KHZ = 2.0 * np.pi * 1e3
MICRO_G = 9.80665e-6


class ConfigError(ValueError):
    """Invalid or incomplete configuration document."""


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path} at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object: {path}")
    return doc


def _require(doc: dict, field: str):
    if field not in doc:
        raise ConfigError(f"missing field: {field}")
    return doc[field]


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config_path, seed, outputs, started):
    manifest = {
        "command": command,
        "config_sha256": _sha256(config_path) if config_path else None,
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    for p in outputs:
        if not Path(p).exists():
            raise RuntimeError(f"manifest names missing output {p}")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def _optimization_config(doc: dict, seed_override) -> OptimizationConfig:
    role = _require(doc, "role")
    omega_max = float(_require(doc, "omega_max_khz")) * KHZ
    adam = AdamParams(
        learning_rate=float(doc.get("learning_rate", 1e-2)),
        beta1=float(doc.get("adam_beta1", 0.9)),
        beta2=float(doc.get("adam_beta2", 0.999)),
        epsilon=float(doc.get("adam_epsilon", 1e-8)),
    )
    seed = seed_override if seed_override is not None else int(doc.get("seed", 0))
    try:
        return OptimizationConfig(
            role=role,
            order=int(doc.get("order", 3)),
            n_segments=int(doc.get("segments", 220)),
            dt=float(doc.get("dt_us", 1.0)) * 1e-6,
            rabi_max=omega_max,
            detuning_max=float(doc.get("delta_max_khz", 200.0)) * KHZ,
            cutoff=float(doc.get("cutoff_khz", 80.0)) * KHZ,
            sigma_p=float(doc.get("sigma_p_hbark", 0.15)),
            beta_min=float(doc.get("beta_min", -0.15)),
            beta_max=float(doc.get("beta_max", 0.15)),
            batch_size=int(doc.get("batch_size", 32)),
            iterations=int(doc.get("iterations", 2000)),
            resample=bool(doc.get("resample", True)),
            seed=seed,
            adam=adam,
            basis_buffer=int(doc.get("basis_buffer", 3)),
            validation_size=int(doc.get("validation_size", 128)),
            validate_every=int(doc.get("validate_every", 20)),
            phase_grid_size=int(doc.get("phase_grid_size", 16)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def cmd_optimize(args) -> int:
    started = time.perf_counter()
    doc = _load_json(args.config)
    config = _optimization_config(doc, args.seed)
    out = _out_dir(args)
    LOG.info("optimizing %s pulse: %d iterations", config.role, config.iterations)
    result = optimize_pulse(config)
    wf_path = out / f"{config.role}_waveform.json"
    csv_path = out / f"{config.role}_waveform.csv"
    trace_path = out / "trace.csv"
    write_waveform(result.waveform, wf_path)
    write_csv(result.waveform, csv_path)
    result.trace.write_csv(trace_path)
    LOG.info(
        "best validation cost %.6g at iteration %d",
        result.trace.best_cost,
        result.trace.best_iteration,
    )
    _write_manifest(out, "optimize", args.config, config.seed,
                    [wf_path, csv_path, trace_path], started)
    return 0


# ---------------------------------------------------------------------------
# landscape
# ---------------------------------------------------------------------------


def _parse_grid_spec(spec: str) -> dict[str, np.ndarray]:
    grids = {}
    try:
        for part in spec.split(","):
            name, rng = part.split("=")
            lo, hi, count = rng.split(":")
            grids[name.strip()] = np.linspace(float(lo), float(hi), int(count))
    except (ValueError, AttributeError):
        raise ConfigError(
            f"bad grid spec {spec!r}; expected 'delta_p=-0.5:0.5:61,beta=-0.3:0.3:61'"
        )
    for name in ("delta_p", "beta"):
        if name not in grids:
            raise ConfigError(f"grid spec missing axis: {name}")
    return grids


def cmd_landscape(args) -> int:
    started = time.perf_counter()
    waveform = read_waveform(args.waveform)
    if waveform.order is None:
        raise ConfigError("waveform file lacks the 'order' field")
    grids = _parse_grid_spec(args.grid)
    basis = BlochBasis.for_order(waveform.order, args.basis_buffer)
    species = rubidium87()
    out = _out_dir(args)
    grid = fidelity_landscape(
        waveform, grids["delta_p"], grids["beta"], basis, species
    )
    csv_path = out / "landscape.csv"
    write_landscape_csv(csv_path, grids["delta_p"], grids["beta"], grid)
    sidecar = out / "landscape.json"
    sidecar.write_text(
        json.dumps(
            {
                "waveform_sha256": _sha256(args.waveform),
                "order": waveform.order,
                "basis": [basis.m_min, basis.m_max],
                "delta_p": [float(grids["delta_p"][0]), float(grids["delta_p"][-1]),
                            len(grids["delta_p"])],
                "beta": [float(grids["beta"][0]), float(grids["beta"][-1]),
                         len(grids["beta"])],
            },
            indent=1,
        )
    )
    _write_manifest(out, "landscape", None, None, [csv_path, sidecar], started)
    return 0


# ---------------------------------------------------------------------------
# fringe
# ---------------------------------------------------------------------------


def _load_sequence(doc: dict, t_interr: float) -> tuple[InterferometerSequence, BlochBasis]:
    bs = read_waveform(_require(doc, "beamsplitter"))
    mirror = read_waveform(_require(doc, "mirror"))
    order = int(doc.get("order") or mirror.order or 3)
    seq = InterferometerSequence(
        beamsplitter=bs,
        mirror=mirror,
        order=order,
        interrogation_time=t_interr,
    )
    if "basis_m_min" in doc or "basis_m_max" in doc:
        basis = BlochBasis(
            order,
            int(doc.get("basis_m_min", -3)),
            int(doc.get("basis_m_max", order + 3)),
        )
    else:
        basis = BlochBasis.for_order(order, int(doc.get("basis_buffer", 3)))
    return seq, basis


def _scan_common(doc: dict) -> dict:
    return {
        "source_sigma": float(doc.get("source_sigma_hbark", 0.8)),
        "quadrature_points": int(doc.get("quadrature_points", 64)),
    }


def _fit_and_write(dataset, order, out, stem, outputs):
    csv_path = out / f"{stem}.csv"
    sidecar_path = out / f"{stem}.meta.json"
    write_fringe_csv(dataset, csv_path)
    write_fringe_sidecar(dataset, sidecar_path)
    outputs += [csv_path, sidecar_path]
    sigma = dataset.shot_sigma
    if sigma is not None and not np.any(sigma > 0):
        sigma = None
    fit = fit_sinusoid(
        dataset.scan_values, dataset.values, frequency=float(order), sigma=sigma
    )
    vis, vis_err = visibility(fit, dataset.kind)
    report = fit.to_dict()
    report["interferometer_phase"] = fringe_phase(fit)
    report["visibility"] = vis
    report["visibility_error"] = vis_err
    fit_path = out / f"{stem}.fit.json"
    fit_path.write_text(json.dumps(report, indent=1))
    outputs.append(fit_path)
    return fit


def cmd_fringe(args) -> int:
    started = time.perf_counter()
    doc = _load_json(args.config)
    scan = _require(doc, "scan")
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out = _out_dir(args)
    species = rubidium87()
    outputs: list[Path] = []

    if scan == "phase":
        t_interr = float(_require(doc, "interrogation_time_ms")) * 1e-3
        seq, basis = _load_sequence(doc, t_interr)
        sigma_betas = doc.get("sigma_beta", 0.0)
        if not isinstance(sigma_betas, list):
            sigma_betas = [sigma_betas]
        points = int(doc.get("points", 33))
        for sb in sigma_betas:
            dataset = phase_scan(
                seq, basis, species,
                phase_values=np.linspace(0, 2 * np.pi, points, endpoint=False),
                sigma_beta=float(sb),
                seed=seed,
                shots=int(doc.get("shots", 1)),
                threads=args.threads,
                **_scan_common(doc),
            )
            stem = f"phase_sigma_beta_{float(sb):g}"
            _fit_and_write(dataset, seq.order, out, stem, outputs)
    elif scan == "chirp":
        times = _require(doc, "interrogation_time_ms")
        if not isinstance(times, list):
            times = [times]
        times = [float(t) * 1e-3 for t in times]
        gravity = float(doc.get("gravity_m_s2", 9.79674))
        seq, basis = _load_sequence(doc, max(times))
        center = matched_chirp_rate(-gravity, species)
        if "chirp_grid_mhz_per_s" in doc:
            spec = doc["chirp_grid_mhz_per_s"]
            # laboratory sweep rate of the frequency difference, MHz/s
            grid = np.linspace(
                float(spec["min"]), float(spec["max"]), int(spec["count"])
            ) * (2.0 * np.pi * 1e6)
        else:
            periods = float(doc.get("chirp_span_periods", 1.6))
            count = int(doc.get("chirp_points", 121))
            span = periods * 2.0 * np.pi / (seq.order * min(times) ** 2)
            grid = np.linspace(center - span, center + span, count)
        datasets = chirp_scan(
            seq, basis, species, grid, gravity, times,
            threads=args.threads, **_scan_common(doc),
        )
        for t_interr, dataset in zip(times, datasets):
            stem = f"chirp_T_{t_interr * 1e3:g}ms"
            csv_path = out / f"{stem}.csv"
            sidecar_path = out / f"{stem}.meta.json"
            write_fringe_csv(dataset, csv_path)
            write_fringe_sidecar(dataset, sidecar_path)
            fit = fit_sinusoid(dataset.scan_values, dataset.values, with_slope=True)
            fit_path = out / f"{stem}.fit.json"
            fit_path.write_text(json.dumps(fit.to_dict(), indent=1))
            outputs += [csv_path, sidecar_path, fit_path]
        try:
            center_report = find_central_fringe(datasets, species.wavenumber)
        except FitError as exc:
            center_report = {"error": str(exc)}
        report_path = out / "central_fringe.json"
        report_path.write_text(json.dumps(center_report, indent=1, default=list))
        outputs.append(report_path)
    elif scan == "acceleration":
        t_interr = float(_require(doc, "interrogation_time_ms")) * 1e-3
        seq, basis = _load_sequence(doc, t_interr)
        spec = _require(doc, "acceleration_ug")
        accelerations = (
            np.array([float(a) for a in spec]) * MICRO_G
            if isinstance(spec, list)
            else np.linspace(float(spec["min"]), float(spec["max"]), int(spec["count"]))
            * MICRO_G
        )
        from .interferometer import acceleration_scan

        rows = acceleration_scan(
            seq, basis, species, accelerations,
            sigma_beta=float(doc.get("sigma_beta", 0.0)),
            seed=seed,
            shots=int(doc.get("shots", 1)),
            phase_points=int(doc.get("points", 33)),
            threads=args.threads,
            **_scan_common(doc),
        )
        table_path = out / "phase_vs_acceleration.csv"
        with open(table_path, "w") as handle:
            handle.write("acceleration_m_s2,phase_rad,phase_error_rad,visibility,visibility_error\n")
            for r in rows:
                handle.write(
                    f"{r['acceleration']!r},{r['phase']!r},{r['phase_error']!r},"
                    f"{r['visibility']!r},{r['visibility_error']!r}\n"
                )
        slope, slope_err = extract_scale_factor(rows)
        expected = 2.0 * seq.order * species.wavenumber * t_interr**2
        report_path = out / "scale_factor.json"
        report_path.write_text(
            json.dumps(
                {
                    "slope_rad_per_m_s2": slope,
                    "slope_error": slope_err,
                    "expected_2nkT2": expected,
                    "relative_deviation": slope / expected - 1.0,
                },
                indent=1,
            )
        )
        outputs += [table_path, report_path]
    else:
        raise ConfigError(f"unknown scan type: {scan}")

    _write_manifest(out, f"fringe:{scan}", args.config, seed, outputs, started)
    return 0


# ---------------------------------------------------------------------------
# fit / validate
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    started = time.perf_counter()
    data = np.genfromtxt(args.fringe, delimiter=",", names=True)
    if data.dtype.names is None or "scan_value" not in data.dtype.names:
        raise ConfigError("fringe CSV must carry a scan_value column")
    x = data["scan_value"]
    y = data["asymmetry"]
    sigma = data["shot_sigma"] if "shot_sigma" in data.dtype.names else None
    if sigma is not None and not np.any(sigma > 0):
        sigma = None
    fit = fit_sinusoid(
        x, y,
        frequency=args.frequency,
        with_slope=args.with_slope,
        sigma=sigma,
    )
    out = _out_dir(args)
    report = fit.to_dict()
    report["interferometer_phase"] = fringe_phase(fit)
    path = out / (Path(args.fringe).stem + ".fit.json")
    path.write_text(json.dumps(report, indent=1))
    _write_manifest(out, "fit", None, None, [path], started)
    return 0


def cmd_validate(args) -> int:
    waveform = read_waveform(args.waveform)
    report = {"segments": waveform.n_segments, "duration_s": waveform.duration}
    problems = []
    if waveform.rabi[0] != 0.0 or waveform.rabi[-1] != 0.0:
        problems.append("endpoint amplitudes nonzero")
    if waveform.rabi_max is not None and np.any(
        waveform.rabi > waveform.rabi_max * (1 + 1e-9)
    ):
        problems.append("amplitude exceeds rabi_max")
    if waveform.detuning_max is not None and np.any(
        np.abs(waveform.detuning) > waveform.detuning_max * (1 + 1e-9)
    ):
        problems.append("detuning exceeds detuning_max")
    if waveform.cutoff is not None:
        omega = 2.0 * np.pi * np.fft.rfftfreq(waveform.n_segments, waveform.dt)
        for name, channel in (
            ("R", waveform.rabi * np.cos(waveform.phase)),
            ("I", waveform.rabi * np.sin(waveform.phase)),
            ("detuning", waveform.detuning),
        ):
            spec = np.abs(np.fft.rfft(channel))
            if spec.max() > 0 and spec[omega >= 1.25 * waveform.cutoff].max() > 1e-3 * spec.max():
                problems.append(f"channel {name} violates the spectral contract")
    if waveform.order is not None:
        basis = BlochBasis.for_order(waveform.order, args.basis_buffer)
        species = rubidium87()
        for attempt in range(3):
            unit = pulse_propagator(waveform, 0.0, 0.0, basis, species)
            passed, leaked = validate_truncation(unit, 0, 1e-4)
            if passed:
                report["truncation_leakage"] = leaked
                report["basis"] = [basis.m_min, basis.m_max]
                break
            basis = basis.enlarged()
        else:
            problems.append("truncation check failed even after enlarging basis")
    report["problems"] = problems
    print(json.dumps(report, indent=1))
    return 0 if not problems else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bragg-forge",
        description="Error-robust Bragg pulse synthesis and interferometer simulation",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    env_threads = os.environ.get("BRAGG_FORGE_THREADS")
    default_threads = int(env_threads) if env_threads else 1

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=default_threads)

    p_opt = sub.add_parser("optimize", help="synthesize an error-robust pulse")
    add_common(p_opt)
    p_opt.set_defaults(func=cmd_optimize)

    p_land = sub.add_parser("landscape", help="fidelity landscape of a waveform")
    p_land.add_argument("--waveform", required=True)
    p_land.add_argument(
        "--grid", default="delta_p=-0.5:0.5:61,beta=-0.3:0.3:61",
        help="axis spec, e.g. delta_p=-0.5:0.5:61,beta=-0.3:0.3:61",
    )
    p_land.add_argument("--basis-buffer", type=int, default=3)
    p_land.add_argument("--out", required=True)
    p_land.add_argument("--threads", type=int, default=default_threads)
    p_land.set_defaults(func=cmd_landscape)

    p_fr = sub.add_parser("fringe", help="simulate fringe scans")
    add_common(p_fr)
    p_fr.set_defaults(func=cmd_fringe)

    p_fit = sub.add_parser("fit", help="fit a sinusoid to a fringe CSV")
    p_fit.add_argument("--fringe", required=True, help="fringe CSV path")
    p_fit.add_argument("--frequency", type=float, default=None,
                       help="fixed angular frequency per scan unit")
    p_fit.add_argument("--with-slope", action="store_true")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_val = sub.add_parser("validate", help="check waveform invariants")
    p_val.add_argument("--waveform", required=True)
    p_val.add_argument("--basis-buffer", type=int, default=3)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, WaveformFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, GradientError, UnitarityError, TruncationError,
            FitError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
