"""Piecewise-constant pulse waveforms: construction, filtering, bounds, I/O.

A waveform is a fixed grid of segments, each holding a two-photon Rabi
amplitude (rad/s), a laser phase (rad) and a two-photon detuning (rad/s).
Control synthesis operates on the quadrature channels R = rabi*cos(phase),
I = rabi*sin(phase) and the detuning channel; band-limiting acts on those
three channels and the amplitude is pinned to zero in the first and last
segment so hardware sees no intensity step at the pulse edges.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import sici

LABELS = ("mirror", "beamsplitter", "custom")

CSV_HEADER = "t_s,omega_r_rad_s,phi_l_rad,delta_rad_s"


class WaveformFormatError(ValueError):
    """Raised when a serialized waveform document cannot be parsed."""


@dataclass(frozen=True)
class ControlSegment:
    """One piecewise-constant control interval."""

    duration: float
    rabi: float
    phase: float
    detuning: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be > 0, got {self.duration}")
        if self.rabi < 0:
            raise ValueError(f"rabi amplitude must be >= 0, got {self.rabi}")


@dataclass(frozen=True)
class PulseWaveform:
    """Equal-grid piecewise-constant pulse.

    Invariants enforced at construction: all segments share the same
    duration `dt`, the first and last segments have zero Rabi amplitude,
    and no amplitude exceeds `rabi_max` when that bound is given.
    """

    dt: float
    rabi: np.ndarray
    phase: np.ndarray
    detuning: np.ndarray
    label: str = "custom"
    rabi_max: float | None = None
    detuning_max: float | None = None
    cutoff: float | None = None
    order: int | None = None

    def __post_init__(self):
        rabi = np.atleast_1d(np.asarray(self.rabi, dtype=float))
        phase = np.atleast_1d(np.asarray(self.phase, dtype=float))
        detuning = np.atleast_1d(np.asarray(self.detuning, dtype=float))
        if not (len(rabi) == len(phase) == len(detuning)):
            raise ValueError("rabi, phase and detuning must have equal length")
        if len(rabi) < 1:
            raise ValueError("waveform must contain at least one segment")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not (np.all(np.isfinite(rabi)) and np.all(np.isfinite(phase))
                and np.all(np.isfinite(detuning))):
            raise ValueError("waveform values must be finite")
        if np.any(rabi < 0):
            raise ValueError("rabi amplitudes must be >= 0")
        if rabi[0] != 0.0 or rabi[-1] != 0.0:
            raise ValueError("first and last segment must have zero rabi amplitude")
        if self.rabi_max is not None and np.any(rabi > self.rabi_max * (1 + 1e-9)):
            raise ValueError("rabi amplitude exceeds rabi_max")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        for name, arr in (("rabi", rabi), ("phase", phase), ("detuning", detuning)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_segments(self) -> int:
        return len(self.rabi)

    @property
    def duration(self) -> float:
        return self.n_segments * self.dt

    @property
    def segment_starts(self) -> np.ndarray:
        return np.arange(self.n_segments) * self.dt

    @property
    def segment_centers(self) -> np.ndarray:
        return (np.arange(self.n_segments) + 0.5) * self.dt

    @property
    def segments(self) -> list[ControlSegment]:
        # Zero-amplitude endpoints have duration > 0, so ControlSegment's
        # own validation is satisfied for every element.
        return [
            ControlSegment(self.dt, r, p, d)
            for r, p, d in zip(self.rabi, self.phase, self.detuning)
        ]

    def scaled(self, amplitude_scale: float) -> "PulseWaveform":
        """Same waveform with all Rabi amplitudes multiplied by a factor."""
        if amplitude_scale < 0:
            raise ValueError("amplitude scale must be >= 0")
        return replace(self, rabi=self.rabi * amplitude_scale)

    def with_phase_offset(self, offset: float) -> "PulseWaveform":
        """Same waveform with a DC offset added to every laser phase."""
        return replace(self, phase=self.phase + offset)


@dataclass(frozen=True)
class QuadratureControls:
    """Quadrature view (R, I, detuning) of a waveform on its grid."""

    dt: float
    in_phase: np.ndarray
    quadrature: np.ndarray
    detuning: np.ndarray

    def __post_init__(self):
        for name in ("in_phase", "quadrature", "detuning"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.in_phase) == len(self.quadrature) == len(self.detuning)):
            raise ValueError("channel lengths differ")

    @classmethod
    def from_waveform(cls, waveform: PulseWaveform) -> "QuadratureControls":
        return cls(
            dt=waveform.dt,
            in_phase=waveform.rabi * np.cos(waveform.phase),
            quadrature=waveform.rabi * np.sin(waveform.phase),
            detuning=waveform.detuning.copy(),
        )

    def to_waveform(self, **metadata) -> PulseWaveform:
        """Back to amplitude/phase form; phase is the principal atan2 value."""
        rabi = np.hypot(self.in_phase, self.quadrature)
        phase = np.arctan2(self.quadrature, self.in_phase)
        rabi = rabi.copy()
        rabi[0] = 0.0
        rabi[-1] = 0.0
        return PulseWaveform(
            dt=self.dt, rabi=rabi, phase=phase, detuning=self.detuning, **metadata
        )


def gaussian_pulse(
    rabi_max: float,
    sigma: float,
    duration: float,
    dt: float,
    detuning: float = 0.0,
    phase: float = 0.0,
    label: str = "custom",
    order: int | None = None,
) -> PulseWaveform:
    """Gaussian-envelope pulse rabi(t) = rabi_max * exp(-t^2 / (2*sigma)^2).

    The envelope is sampled at segment centers, referenced to the waveform
    midpoint, and the endpoint amplitudes are clamped to zero.  `duration`
    must be an integer multiple of `dt`.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    n = duration / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError("duration must be an integer multiple of dt")
    n = int(round(n))
    if n < 2:
        raise ValueError("need at least two segments")
    t = (np.arange(n) + 0.5) * dt - duration / 2.0
    rabi = rabi_max * np.exp(-(t**2) / (2.0 * sigma) ** 2)
    rabi[0] = 0.0
    rabi[-1] = 0.0
    return PulseWaveform(
        dt=dt,
        rabi=rabi,
        phase=np.full(n, float(phase)),
        detuning=np.full(n, float(detuning)),
        label=label,
        rabi_max=float(rabi_max),
        order=order,
    )


def two_level_area(waveform: PulseWaveform) -> float:
    """Rotation angle 2 * integral(rabi dt) of the pulse on a two-level pair.

    With the coupling convention used by the Hamiltonian (the full Rabi
    amplitude on the off-diagonal), resonant two-level transfer is
    sin^2(area / 2), so a mirror has area pi.
    """
    return 2.0 * float(np.sum(waveform.rabi)) * waveform.dt


# ---------------------------------------------------------------------------
# band-limiting filters
# ---------------------------------------------------------------------------


def band_limit_spectral(values: np.ndarray, dt: float, cutoff: float) -> np.ndarray:
    """Zero every DFT bin of the sampled channel above `cutoff` (rad/s).

    Orthogonal projection onto the retained Fourier modes of the waveform
    window: linear, idempotent, and exactly band-limited in the DFT sense.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    spectrum = np.fft.rfft(values, axis=-1)
    omega = 2.0 * np.pi * np.fft.rfftfreq(n, dt)
    spectrum[..., omega > cutoff] = 0.0
    return np.fft.irfft(spectrum, n=n, axis=-1)


@lru_cache(maxsize=32)
def sine_integral_kernel(n: int, dt: float, cutoff: float) -> np.ndarray:
    """Matrix form of the continuous sinc convolution on the segment grid.

    Entry (i, j) integrates sin(cutoff*(t - t'))/(pi*(t - t')) over segment
    j, evaluated at the center of segment i; channels are treated as zero
    outside the pulse window, consistent with the zero-amplitude endpoints.
    """
    starts = np.arange(n + 1) * dt
    centers = (np.arange(n) + 0.5) * dt
    si_edges, _ = sici(cutoff * (centers[:, None] - starts[None, :]))
    kernel = (si_edges[:, :-1] - si_edges[:, 1:]) / np.pi
    kernel.setflags(write=False)
    return kernel


def sinc_filter(
    controls: QuadratureControls, cutoff: float, method: str = "spectral"
) -> QuadratureControls:
    """Low-pass each control channel (R, I, detuning) at `cutoff` (rad/s).

    `method="spectral"` projects out DFT components above the cutoff, so the
    output spectrum is exactly zero there.  `method="sine-integral"`
    evaluates the continuous-time sinc convolution and re-discretizes onto
    the original grid; interior values of slowly varying channels are
    preserved but edges roll off where the kernel hangs off the window.
    """
    if cutoff <= 0:
        raise ValueError(f"cutoff must be > 0, got {cutoff}")
    if method == "spectral":
        def apply(x):
            return band_limit_spectral(x, controls.dt, cutoff)
    elif method == "sine-integral":
        kernel = sine_integral_kernel(len(controls.in_phase), controls.dt, cutoff)

        def apply(x):
            return kernel @ x
    else:
        raise ValueError(f"unknown filter method {method!r}")
    return QuadratureControls(
        dt=controls.dt,
        in_phase=apply(controls.in_phase),
        quadrature=apply(controls.quadrature),
        detuning=apply(controls.detuning),
    )


@lru_cache(maxsize=32)
def band_projection_matrix(
    n: int, dt: float, cutoff: float, zero_endpoints: bool = False
) -> np.ndarray:
    """Orthogonal projector onto the band-limited subspace of the grid.

    With `zero_endpoints` the subspace is additionally intersected with
    {x[0] = x[-1] = 0}, which is how the optimizer keeps amplitude channels
    pinned at the pulse edges without leaving the band limit.
    """
    omega = 2.0 * np.pi * np.fft.rfftfreq(n, dt)
    keep = np.nonzero(omega <= cutoff)[0]
    columns = []
    for k in keep:
        spec = np.zeros(n // 2 + 1, dtype=complex)
        spec[k] = 1.0
        columns.append(np.fft.irfft(spec, n=n))
        if 0 < k < (n - n // 2):  # bins with an independent imaginary part
            spec[k] = 1.0j
            columns.append(np.fft.irfft(spec, n=n))
    basis = np.array(columns).T
    if zero_endpoints:
        constraints = basis[[0, -1], :]
        _, s, vt = np.linalg.svd(constraints, full_matrices=True)
        rank = int(np.sum(s > 1e-12 * s.max())) if s.size else 0
        basis = basis @ vt[rank:].T
    q, r = np.linalg.qr(basis)
    q = q[:, np.abs(np.diag(r)) > 1e-12]
    projector = q @ q.T
    projector.setflags(write=False)
    return projector


def enforce_bounds(
    waveform: PulseWaveform, rabi_max: float, detuning_max: float
) -> PulseWaveform:
    """Clip amplitudes into [0, rabi_max], detunings into +-detuning_max.

    Also zeroes the endpoint amplitudes.  Idempotent, and never increases
    any channel's sup norm.
    """
    rabi = np.clip(waveform.rabi, 0.0, rabi_max)
    rabi[0] = 0.0
    rabi[-1] = 0.0
    detuning = np.clip(waveform.detuning, -detuning_max, detuning_max)
    return replace(
        waveform,
        rabi=rabi,
        detuning=detuning,
        rabi_max=float(rabi_max),
        detuning_max=float(detuning_max),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

SCHEMA = "bragg-forge/waveform/v1"

_UNITS = {"dt": "s", "rabi": "rad/s", "phase": "rad", "detuning": "rad/s"}


def serialize(waveform: PulseWaveform) -> str:
    """Waveform as a schema-versioned JSON document (lossless round trip)."""
    doc = {
        "schema": SCHEMA,
        "label": waveform.label,
        "units": _UNITS,
        "dt": waveform.dt,
        "order": waveform.order,
        "rabi_max": waveform.rabi_max,
        "detuning_max": waveform.detuning_max,
        "cutoff": waveform.cutoff,
        "segments": [
            {"rabi": r, "phase": p, "detuning": d}
            for r, p, d in zip(waveform.rabi, waveform.phase, waveform.detuning)
        ],
    }
    return json.dumps(doc, indent=1)


def deserialize(text: str) -> PulseWaveform:
    """Parse a waveform document, naming the offending field on failure."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WaveformFormatError(
            f"invalid JSON at line {exc.lineno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise WaveformFormatError("document root must be an object")
    if doc.get("schema") != SCHEMA:
        raise WaveformFormatError(
            f"unsupported schema {doc.get('schema')!r}, expected {SCHEMA!r}"
        )
    for name in ("dt", "segments"):
        if name not in doc:
            raise WaveformFormatError(f"missing field: {name}")
    segments = doc["segments"]
    if not isinstance(segments, list) or not segments:
        raise WaveformFormatError("field 'segments' must be a non-empty list")
    channels = {"rabi": [], "phase": [], "detuning": []}
    for i, seg in enumerate(segments):
        for name in channels:
            if not isinstance(seg, dict) or name not in seg:
                raise WaveformFormatError(f"missing field: segments[{i}].{name}")
            channels[name].append(seg[name])
    try:
        return PulseWaveform(
            dt=doc["dt"],
            rabi=np.array(channels["rabi"], dtype=float),
            phase=np.array(channels["phase"], dtype=float),
            detuning=np.array(channels["detuning"], dtype=float),
            label=doc.get("label", "custom"),
            rabi_max=doc.get("rabi_max"),
            detuning_max=doc.get("detuning_max"),
            cutoff=doc.get("cutoff"),
            order=doc.get("order"),
        )
    except (TypeError, ValueError) as exc:
        raise WaveformFormatError(f"invalid waveform values: {exc}") from exc


def write_waveform(waveform: PulseWaveform, path) -> None:
    with open(path, "w") as handle:
        handle.write(serialize(waveform))


def read_waveform(path) -> PulseWaveform:
    with open(path) as handle:
        return deserialize(handle.read())


def write_csv(waveform: PulseWaveform, path) -> None:
    """Columnar export (segment start time, rabi, phase, detuning)."""
    with open(path, "w") as handle:
        handle.write(CSV_HEADER + "\n")
        for t, r, p, d in zip(
            waveform.segment_starts, waveform.rabi, waveform.phase, waveform.detuning
        ):
            handle.write(f"{float(t)!r},{float(r)!r},{float(p)!r},{float(d)!r}\n")
