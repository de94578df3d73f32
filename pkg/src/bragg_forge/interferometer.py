"""Mach-Zehnder sequences: composition, scans, and noise studies.

Timing convention: the interrogation time T is measured center-to-center
between consecutive pulses.  The first beamsplitter is centered at t = 0,
the mirror at T, the final beamsplitter at 2T; free evolution fills the
gaps edge-to-edge with exactly integrated diagonal phases.  A constant
acceleration advances the momentum detuning linearly in time and the
two-photon detuning is chirped linearly, both referenced to t = 0, with
per-segment evaluation inside the pulses.

Readout convention: scanning the fringe offsets the mirror's laser phases
by -phi/2 and the final beamsplitter's by +phi, which yields the asymmetry
P1 - P2 = V*cos(n*phi - phi_int) so the interferometer phase phi_int obeys
phi_int ~ n*(2*k*a + alpha)*T^2 (scale factor 2nkT^2, positive slope in a).
"""
from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import HBAR, AtomSpecies, BlochBasis, resonant_detuning
from .dynamics import free_phases, pulse_unitaries_batch
from .objectives import phase_offset_factors
from .waveforms import PulseWaveform, serialize

DEFAULT_SOURCE_SIGMA = 0.8  # momentum width 1.6 hbar*k at 2 sigma
DEFAULT_QUADRATURE_POINTS = 64
DEFAULT_PHASE_POINTS = 33


class TruncationError(RuntimeError):
    """Basis leakage above tolerance; enlarge the Bloch basis."""


@dataclass(frozen=True)
class InterferometerSequence:
    """Three-pulse Mach-Zehnder configuration for one realization."""

    beamsplitter: PulseWaveform
    mirror: PulseWaveform
    order: int
    interrogation_time: float
    acceleration: float = 0.0
    chirp_rate: float = 0.0
    readout_phase: float = 0.0
    intensity_scalings: tuple[float, float, float] = (1.0, 1.0, 1.0)
    momentum_detuning: float = 0.0
    detuning_offset: float = 0.0
    reference_time: float = 0.0

    def __post_init__(self):
        if self.interrogation_time <= 0:
            raise ValueError("interrogation time must be > 0")
        longest = max(self.beamsplitter.duration, self.mirror.duration)
        if longest / self.interrogation_time > 0.1:
            warnings.warn(
                "pulse duration exceeds 10% of the interrogation time; "
                "the scale factor will deviate noticeably from 2nkT^2",
                stacklevel=2,
            )
        gap = (
            self.interrogation_time
            - 0.5 * self.beamsplitter.duration
            - 0.5 * self.mirror.duration
        )
        if gap <= 0:
            raise ValueError("pulses overlap: T too short for the pulse durations")
        if any(s <= 0 for s in self.intensity_scalings):
            raise ValueError("intensity scalings must be positive")


@dataclass(frozen=True)
class SequenceOutcome:
    p1: float
    p2: float
    leakage: float


@dataclass(frozen=True)
class FringeDataset:
    """Sampled fringe: scan variable, per-point signal, optional shot error."""

    scan_name: str
    scan_values: np.ndarray
    values: np.ndarray
    kind: str = "asymmetry"  # or "fraction"
    shot_sigma: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        scan = np.asarray(self.scan_values, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if scan.shape != vals.shape:
            raise ValueError("scan_values and values must have equal shape")
        if self.kind == "asymmetry":
            if np.any(np.abs(vals) > 1.0 + 1e-9):
                raise ValueError("asymmetry values must lie in [-1, 1]")
        elif self.kind == "fraction":
            if np.any((vals < -1e-9) | (vals > 1.0 + 1e-9)):
                raise ValueError("fraction values must lie in [0, 1]")
        else:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        object.__setattr__(self, "scan_values", scan)
        object.__setattr__(self, "values", vals)


def waveform_digest(waveform: PulseWaveform) -> str:
    return hashlib.sha256(serialize(waveform).encode()).hexdigest()


def _doppler_rate(acceleration: float, species: AtomSpecies) -> float:
    """d(delta_p)/dt for constant acceleration along the beam axis."""
    return species.mass * acceleration / (HBAR * species.wavenumber)


def matched_chirp_rate(acceleration: float, species: AtomSpecies) -> float:
    """Chirp rate that freezes every pulse at its design detuning."""
    return -2.0 * species.wavenumber * acceleration


class SequenceEvaluator:
    """Batched Mach-Zehnder evaluation sharing pulse propagators.

    Builds the three pulse propagators once per batch of momentum
    detunings and per intensity-scaling draw; readout-phase offsets are
    then applied as exact diagonal conjugations, so scanning the fringe
    costs only matrix-vector work.
    """

    def __init__(
        self,
        sequence: InterferometerSequence,
        basis: BlochBasis,
        species: AtomSpecies,
    ):
        if basis.order != sequence.order:
            raise ValueError("basis order does not match sequence order")
        self.sequence = sequence
        self.basis = basis
        self.species = species
        self.reference_detuning = resonant_detuning(sequence.order, 0.0, species)
        self.last_edge_population = 0.0

    def _pulse_units(
        self,
        waveform: PulseWaveform,
        center_time: float,
        scaling: float,
        delta_p: np.ndarray,
        phase_noise: np.ndarray | None = None,
    ) -> np.ndarray:
        seq = self.sequence
        start = seq.reference_time + center_time - 0.5 * waveform.duration
        return pulse_unitaries_batch(
            waveform,
            delta_p,
            np.full(len(delta_p), scaling - 1.0),
            self.basis,
            self.species,
            momentum_detuning_rate=_doppler_rate(seq.acceleration, self.species),
            detuning_offset=seq.detuning_offset,
            chirp_rate=seq.chirp_rate,
            start_time=start,
            phase_noise=phase_noise,
        )

    def _free_factors(
        self, t_start: float, t_end: float, delta_p: np.ndarray
    ) -> np.ndarray:
        seq = self.sequence
        phases = free_phases(
            t_end - t_start,
            delta_p,
            self.basis,
            self.species,
            momentum_detuning_rate=_doppler_rate(seq.acceleration, self.species),
            detuning=self.reference_detuning + seq.detuning_offset,
            chirp_rate=seq.chirp_rate,
            start_time=seq.reference_time + t_start,
        )
        return np.exp(-1j * phases)

    def populations(
        self,
        delta_p: np.ndarray,
        readout_phases: np.ndarray,
        scalings: tuple[float, float, float] | None = None,
        phase_noise: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(P1, P2, leakage) arrays of shape (G, S) over phases x atoms."""
        seq = self.sequence
        t_interr = seq.interrogation_time
        scalings = scalings or seq.intensity_scalings
        delta_p = np.atleast_1d(np.asarray(delta_p, dtype=float))
        noise_bs1, noise_m, noise_bs2 = phase_noise or (None, None, None)
        u_bs1 = self._pulse_units(seq.beamsplitter, 0.0, scalings[0], delta_p, noise_bs1)
        u_mir = self._pulse_units(seq.mirror, t_interr, scalings[1], delta_p, noise_m)
        u_bs2 = self._pulse_units(
            seq.beamsplitter, 2.0 * t_interr, scalings[2], delta_p, noise_bs2
        )
        f1 = self._free_factors(
            0.5 * seq.beamsplitter.duration, t_interr - 0.5 * seq.mirror.duration, delta_p
        )
        f2 = self._free_factors(
            t_interr + 0.5 * seq.mirror.duration,
            2.0 * t_interr - 0.5 * seq.beamsplitter.duration,
            delta_p,
        )
        i0, i1 = self.basis.index_of(0), self.basis.index_of(seq.order)
        psi = f1 * u_bs1[:, :, i0]  # (S, d) after BS1 and first free flight
        phases = np.atleast_1d(np.asarray(readout_phases, dtype=float))
        fm = phase_offset_factors(self.basis, -0.5 * phases)  # (G, d)
        fb = phase_offset_factors(self.basis, phases)
        mid = np.einsum("sij,gsj->gsi", u_mir, np.conj(fm)[:, None, :] * psi)
        mid = fm[:, None, :] * mid
        mid = f2[None] * mid
        out = np.einsum("sij,gsj->gsi", u_bs2, np.conj(fb)[:, None, :] * mid)
        pops = np.abs(out) ** 2
        p1 = pops[:, :, i0]
        p2 = pops[:, :, i1]
        leakage = pops.sum(axis=2) - p1 - p2
        self.last_edge_population = float(np.max(pops[:, :, 0] + pops[:, :, -1]))
        return p1, p2, leakage


def run_sequence(
    sequence: InterferometerSequence,
    basis: BlochBasis,
    species: AtomSpecies,
    truncation_tol: float | None = None,
) -> SequenceOutcome:
    """Arm populations for a single atom and realization.

    With `truncation_tol` set, raises TruncationError when the population
    reaching the extremal ladder states exceeds the tolerance.
    """
    evaluator = SequenceEvaluator(sequence, basis, species)
    p1, p2, leakage = evaluator.populations(
        np.array([sequence.momentum_detuning]),
        np.array([sequence.readout_phase]),
    )
    if truncation_tol is not None and evaluator.last_edge_population > truncation_tol:
        raise TruncationError(
            f"extremal-state population {evaluator.last_edge_population:.3e} "
            f"exceeds {truncation_tol}; enlarge the basis (e.g. basis.enlarged())"
        )
    return SequenceOutcome(float(p1[0, 0]), float(p2[0, 0]), float(leakage[0, 0]))


def _gauss_hermite_nodes(sigma: float, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for a Gaussian momentum distribution."""
    if sigma == 0.0 or n_points == 1:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite.hermgauss(n_points)
    return np.sqrt(2.0) * sigma * x, w / np.sqrt(np.pi)


def _point_scalings(rng, sigma_beta: float, shots: int) -> np.ndarray:
    draws = rng.normal(1.0, sigma_beta, size=(shots, 3)) if sigma_beta else np.ones((shots, 3))
    return np.maximum(draws, 1e-6)


def phase_scan(
    sequence: InterferometerSequence,
    basis: BlochBasis,
    species: AtomSpecies,
    phase_values: np.ndarray | None = None,
    sigma_beta: float = 0.0,
    seed: int | None = 0,
    shots: int = 1,
    source_sigma: float = DEFAULT_SOURCE_SIGMA,
    quadrature_points: int = DEFAULT_QUADRATURE_POINTS,
    threads: int = 1,
) -> FringeDataset:
    """Fringe vs readout phase with pulse-to-pulse intensity noise.

    Each point draws fresh per-pulse intensity scalings from N(1, sigma_beta)
    (clipped positive) for every shot, and averages the asymmetry over shots
    and over the source momentum distribution (Gauss-Hermite quadrature).
    Per-point random draws are derived from the master seed by point index,
    so results do not depend on the number of worker threads.
    """
    if phase_values is None:
        phase_values = np.linspace(0.0, 2.0 * np.pi, DEFAULT_PHASE_POINTS, endpoint=False)
    phase_values = np.asarray(phase_values, dtype=float)
    if phase_values.size == 0:
        raise ValueError("phase grid must not be empty")
    nodes, weights = _gauss_hermite_nodes(source_sigma, quadrature_points)
    evaluator = SequenceEvaluator(sequence, basis, species)
    noiseless = sigma_beta == 0.0

    if noiseless:
        # Propagators are shared by every readout phase and shot.
        p1, p2, _ = evaluator.populations(nodes, phase_values)
        asym = (p1 - p2) @ weights
        sigma_arr = np.zeros_like(asym)
    else:
        seeds = np.random.SeedSequence(seed).spawn(len(phase_values))

        def one_point(index: int) -> tuple[float, float]:
            rng = np.random.default_rng(seeds[index])
            scalings = _point_scalings(rng, sigma_beta, shots)
            shot_vals = np.empty(shots)
            for k in range(shots):
                p1, p2, _ = evaluator.populations(
                    nodes, phase_values[index : index + 1], tuple(scalings[k])
                )
                shot_vals[k] = (p1[0] - p2[0]) @ weights
            err = shot_vals.std(ddof=1) / np.sqrt(shots) if shots > 1 else 0.0
            return float(shot_vals.mean()), float(err)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one_point, range(len(phase_values))))
        else:
            results = [one_point(i) for i in range(len(phase_values))]
        asym = np.array([r[0] for r in results])
        sigma_arr = np.array([r[1] for r in results])

    return FringeDataset(
        scan_name="readout_phase",
        scan_values=phase_values,
        values=np.clip(asym, -1.0, 1.0),
        kind="asymmetry",
        shot_sigma=sigma_arr,
        metadata=_scan_metadata(
            sequence, species, seed=seed, sigma_beta=sigma_beta, shots=shots,
            source_sigma=source_sigma, quadrature_points=quadrature_points,
        ),
    )


def chirp_scan(
    sequence: InterferometerSequence,
    basis: BlochBasis,
    species: AtomSpecies,
    chirp_values: np.ndarray,
    gravity: float,
    interrogation_times: np.ndarray | list[float],
    source_sigma: float = DEFAULT_SOURCE_SIGMA,
    quadrature_points: int = DEFAULT_QUADRATURE_POINTS,
    threads: int = 1,
) -> list[FringeDataset]:
    """Transfer-port fringes vs chirp rate for several interrogation times.

    The acceleration is fixed at -gravity (free fall against the beam axis);
    at the matched chirp every pulse stays on its design detuning, so all
    datasets share an exact extremum there.  The grid must span that point.
    """
    chirp_values = np.asarray(chirp_values, dtype=float)
    matched = matched_chirp_rate(-gravity, species)
    if not (chirp_values.min() <= matched <= chirp_values.max()):
        raise ValueError(
            f"chirp grid [{chirp_values.min():.6g}, {chirp_values.max():.6g}] "
            f"does not span the matched rate {matched:.6g}"
        )
    nodes, weights = _gauss_hermite_nodes(source_sigma, quadrature_points)
    datasets = []
    for t_interr in interrogation_times:
        seq_t = replace(
            sequence,
            interrogation_time=float(t_interr),
            acceleration=-gravity,
            readout_phase=0.0,
        )

        def one_point(alpha: float) -> float:
            evaluator = SequenceEvaluator(replace(seq_t, chirp_rate=float(alpha)), basis, species)
            _, p2, _ = evaluator.populations(nodes, np.zeros(1))
            return float(p2[0] @ weights)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                vals = list(pool.map(one_point, chirp_values))
        else:
            vals = [one_point(a) for a in chirp_values]
        datasets.append(
            FringeDataset(
                scan_name="chirp_rate",
                scan_values=chirp_values,
                values=np.clip(np.array(vals), 0.0, 1.0),
                kind="fraction",
                shot_sigma=None,
                metadata=_scan_metadata(
                    seq_t, species, gravity=gravity, source_sigma=source_sigma,
                    quadrature_points=quadrature_points,
                ),
            )
        )
    return datasets


def acceleration_scan(
    sequence: InterferometerSequence,
    basis: BlochBasis,
    species: AtomSpecies,
    accelerations: np.ndarray,
    sigma_beta: float = 0.0,
    seed: int | None = 0,
    shots: int = 1,
    phase_points: int = DEFAULT_PHASE_POINTS,
    source_sigma: float = DEFAULT_SOURCE_SIGMA,
    quadrature_points: int = DEFAULT_QUADRATURE_POINTS,
    threads: int = 1,
) -> list[dict]:
    """Fitted fringe phase vs applied acceleration.

    Runs a readout-phase scan at each acceleration and fits a fixed-period
    sinusoid; returns one record per acceleration with the fitted phase and
    its standard error.  Warns when the expected phase leaves (-pi, pi].
    """
    from .analysis import fit_sinusoid, fringe_phase

    accelerations = np.asarray(accelerations, dtype=float)
    scale = 2.0 * sequence.order * species.wavenumber * sequence.interrogation_time**2
    if np.any(np.abs(scale * accelerations) >= np.pi):
        warnings.warn(
            "expected phase exceeds one fringe; fitted phases will wrap",
            stacklevel=2,
        )
    seeds = np.random.SeedSequence(seed).spawn(len(accelerations))
    records = []
    for j, a in enumerate(accelerations):
        seq_a = replace(sequence, acceleration=float(a))
        dataset = phase_scan(
            seq_a, basis, species,
            phase_values=np.linspace(0, 2 * np.pi, phase_points, endpoint=False),
            sigma_beta=sigma_beta,
            seed=int(np.random.default_rng(seeds[j]).integers(2**32)),
            shots=shots, source_sigma=source_sigma,
            quadrature_points=quadrature_points, threads=threads,
        )
        fit = fit_sinusoid(
            dataset.scan_values, dataset.values, frequency=float(sequence.order)
        )
        records.append(
            {
                "acceleration": float(a),
                "phase": fringe_phase(fit),
                "phase_error": float(fit.phase_error),
                "visibility": fit.amplitude,
                "visibility_error": fit.amplitude_error,
            }
        )
    return records


@dataclass(frozen=True)
class PhaseNoiseStudy:
    phases: np.ndarray
    reference_phase: float
    max_error: float
    std: float


def phase_noise_study(
    sequence: InterferometerSequence,
    basis: BlochBasis,
    species: AtomSpecies,
    sigma_phase: float,
    trials: int,
    seed: int | None = 0,
    phase_points: int = DEFAULT_PHASE_POINTS,
    source_sigma: float = DEFAULT_SOURCE_SIGMA,
    quadrature_points: int = 16,
    threads: int = 1,
) -> PhaseNoiseStudy:
    """Interferometer phase scatter from segment-level laser phase noise.

    Every trial adds independent N(0, sigma_phase) offsets to each segment
    phase of all three pulses, extracts the fringe phase from a full
    readout scan, and compares with the noiseless reference.
    """
    from .analysis import fit_sinusoid, fringe_phase

    if trials < 100:
        raise ValueError("need at least 100 trials")
    nodes, weights = _gauss_hermite_nodes(source_sigma, quadrature_points)
    evaluator = SequenceEvaluator(sequence, basis, species)
    grid = np.linspace(0, 2 * np.pi, phase_points, endpoint=False)

    def trial_phase(noise) -> float:
        p1, p2, _ = evaluator.populations(nodes, grid, phase_noise=noise)
        asym = (p1 - p2) @ weights
        fit = fit_sinusoid(grid, asym, frequency=float(sequence.order))
        return fringe_phase(fit)

    reference = trial_phase(None)
    seeds = np.random.SeedSequence(seed).spawn(trials)

    def one_trial(index: int) -> float:
        rng = np.random.default_rng(seeds[index])
        n_bs = sequence.beamsplitter.n_segments
        n_m = sequence.mirror.n_segments
        noise = (
            rng.normal(0.0, sigma_phase, n_bs),
            rng.normal(0.0, sigma_phase, n_m),
            rng.normal(0.0, sigma_phase, n_bs),
        )
        return trial_phase(noise)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            phases = np.array(list(pool.map(one_trial, range(trials))))
    else:
        phases = np.array([one_trial(i) for i in range(trials)])
    errors = np.angle(np.exp(1j * (phases - reference)))
    return PhaseNoiseStudy(
        phases=phases,
        reference_phase=reference,
        max_error=float(np.max(np.abs(errors))),
        std=float(errors.std()),
    )


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


def _scan_metadata(sequence: InterferometerSequence, species: AtomSpecies, **extra) -> dict:
    meta = {
        "order": sequence.order,
        "interrogation_time_s": sequence.interrogation_time,
        "acceleration_m_s2": sequence.acceleration,
        "chirp_rate_rad_s2": sequence.chirp_rate,
        "wavenumber_rad_m": species.wavenumber,
        "beamsplitter_sha256": waveform_digest(sequence.beamsplitter),
        "mirror_sha256": waveform_digest(sequence.mirror),
    }
    meta.update({k: v for k, v in extra.items() if v is not None})
    return meta


def write_fringe_csv(dataset: FringeDataset, path) -> None:
    with open(path, "w") as handle:
        handle.write("scan_value,asymmetry,shot_sigma\n")
        sigma = (
            dataset.shot_sigma
            if dataset.shot_sigma is not None
            else np.zeros_like(dataset.values)
        )
        for x, y, s in zip(dataset.scan_values, dataset.values, sigma):
            handle.write(f"{float(x)!r},{float(y)!r},{float(s)!r}\n")


def write_fringe_sidecar(dataset: FringeDataset, path) -> None:
    doc = {
        "scan_name": dataset.scan_name,
        "kind": dataset.kind,
        "points": len(dataset.scan_values),
        "metadata": dataset.metadata,
    }
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=1)
