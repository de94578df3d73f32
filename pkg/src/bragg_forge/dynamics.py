"""Bragg Hamiltonians, segment propagators, and pulse/free-flight evolution.

The atom-light Hamiltonian in the Bloch-band basis is tridiagonal: the
diagonal holds the generalized detunings of the ladder states and the
off-diagonals the complex two-photon coupling rabi * exp(+-i*phase/2),
scaled by (1 + amplitude_error) for intensity-error studies.  Propagation
is by Hermitian eigendecomposition per segment; whole pulses compose as
ordered products with the last segment leftmost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import AtomSpecies, BlochBasis
from .waveforms import PulseWaveform

UNITARITY_TOL = 1e-10


class UnitarityError(RuntimeError):
    """Raised when a computed propagator fails the unitarity check."""


@dataclass(frozen=True)
class Propagator:
    """Unitary on a Bloch-band basis; checked at construction."""

    matrix: np.ndarray
    basis: BlochBasis

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.complex128)
        if matrix.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"matrix shape {matrix.shape} does not match basis dim {self.basis.dim}"
            )
        defect = unitarity_defect(matrix)
        if defect > UNITARITY_TOL:
            raise UnitarityError(f"unitarity defect {defect:.3e} > {UNITARITY_TOL}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def __matmul__(self, other: "Propagator") -> "Propagator":
        if other.basis != self.basis:
            raise ValueError("cannot compose propagators on different bases")
        return Propagator(self.matrix @ other.matrix, self.basis)


def unitarity_defect(matrix: np.ndarray) -> float:
    """Max-norm of U^dagger U - I."""
    d = matrix.shape[-1]
    return float(
        np.max(np.abs(np.conj(matrix.swapaxes(-1, -2)) @ matrix - np.eye(d)))
    )


def waveform_elements(
    waveform: PulseWaveform,
    momentum_detuning: np.ndarray | float,
    amplitude_error: np.ndarray | float,
    basis: BlochBasis,
    species: AtomSpecies,
    *,
    momentum_detuning_rate: float = 0.0,
    detuning_offset: np.ndarray | float = 0.0,
    chirp_rate: float = 0.0,
    start_time: float = 0.0,
    phase_noise: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal Hamiltonian elements for a pulse, batched over samples.

    `momentum_detuning` and `amplitude_error` may be scalars or length-S
    arrays; the result is (diag, offdiag) with shapes (S, N, d) and
    (S, N, d-1).  Time-dependent inputs (Doppler advance of the momentum
    detuning, a linear chirp added to the waveform's detuning channel) are
    evaluated at each segment center, offset by `start_time` relative to
    the sequence time origin.
    """
    delta_p = np.atleast_1d(np.asarray(momentum_detuning, dtype=float))
    beta = np.atleast_1d(np.asarray(amplitude_error, dtype=float))
    if delta_p.shape != beta.shape:
        delta_p, beta = np.broadcast_arrays(delta_p, beta)
    if np.any(1.0 + beta <= 0.0):
        raise ValueError("amplitude error must satisfy 1 + beta > 0")
    w_r = species.recoil_frequency
    times = start_time + waveform.segment_centers
    delta = waveform.detuning + np.asarray(detuning_offset) + chirp_rate * times
    dp_t = delta_p[:, None] + momentum_detuning_rate * times[None, :]
    m_vals = basis.m_values
    diag = w_r * (
        2.0 * m_vals[None, None, :]
        + dp_t[:, :, None]
        + delta[None, :, None] / (4.0 * w_r)
    ) ** 2
    phase = waveform.phase if phase_noise is None else waveform.phase + phase_noise
    coupling = waveform.rabi * np.exp(0.5j * phase)
    offdiag = (1.0 + beta)[:, None, None] * coupling[None, :, None] * np.ones(
        (1, 1, basis.dim - 1)
    )
    return diag, np.ascontiguousarray(offdiag)


def build_hamiltonian(
    rabi: float,
    phase: float,
    detuning: float,
    momentum_detuning: float,
    amplitude_error: float,
    basis: BlochBasis,
    species: AtomSpecies,
) -> np.ndarray:
    """Dense tridiagonal Hamiltonian of a single control segment."""
    values = [rabi, phase, detuning, momentum_detuning, amplitude_error]
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite Hamiltonian inputs: {values}")
    if 1.0 + amplitude_error <= 0.0:
        raise ValueError("amplitude error must satisfy 1 + beta > 0")
    w_r = species.recoil_frequency
    diag = w_r * (
        2.0 * basis.m_values + momentum_detuning + detuning / (4.0 * w_r)
    ) ** 2
    coupling = (1.0 + amplitude_error) * rabi * np.exp(0.5j * phase)
    h = np.diag(diag.astype(np.complex128))
    idx = np.arange(basis.dim - 1)
    h[idx, idx + 1] = coupling
    h[idx + 1, idx] = np.conj(coupling)
    return h


def segment_propagator(hamiltonian: np.ndarray, dt: float, basis: BlochBasis) -> Propagator:
    """exp(-i H dt) for a Hermitian H, via eigendecomposition."""
    h = np.asarray(hamiltonian, dtype=np.complex128)
    if np.max(np.abs(h - np.conj(h.T))) > 1e-12 * max(1.0, np.max(np.abs(h))):
        raise ValueError("Hamiltonian is not Hermitian")
    lam, vec = np.linalg.eigh(h)
    matrix = (vec * np.exp(-1j * lam * dt)) @ np.conj(vec.T)
    return Propagator(matrix, basis)


def pulse_propagator(
    waveform: PulseWaveform,
    momentum_detuning: float,
    amplitude_error: float,
    basis: BlochBasis,
    species: AtomSpecies,
    **time_kwargs,
) -> Propagator:
    """Whole-pulse propagator, last segment leftmost."""
    diag, offdiag = waveform_elements(
        waveform, momentum_detuning, amplitude_error, basis, species, **time_kwargs
    )
    total = _kernels.total_unitaries(diag, offdiag, waveform.dt)
    return Propagator(total[0], basis)


def pulse_unitaries_batch(
    waveform: PulseWaveform,
    momentum_detuning: np.ndarray,
    amplitude_error: np.ndarray,
    basis: BlochBasis,
    species: AtomSpecies,
    **time_kwargs,
) -> np.ndarray:
    """Raw (S, d, d) pulse unitaries for a batch of noise samples."""
    diag, offdiag = waveform_elements(
        waveform, momentum_detuning, amplitude_error, basis, species, **time_kwargs
    )
    return _kernels.total_unitaries(diag, offdiag, waveform.dt)


def free_evolution(
    duration: float,
    momentum_detuning: float,
    basis: BlochBasis,
    species: AtomSpecies,
    *,
    momentum_detuning_rate: float = 0.0,
    detuning: float = 0.0,
    chirp_rate: float = 0.0,
    start_time: float = 0.0,
) -> Propagator:
    """Diagonal inter-pulse propagator with exactly integrated phases.

    Both the momentum detuning (constant acceleration) and the two-photon
    detuning (constant chirp) are linear in time, so each ladder state's
    phase integral of the generalized detuning is a cubic polynomial
    evaluated in closed form over [start_time, start_time + duration].
    """
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    matrix = np.diag(
        np.exp(
            -1j
            * free_phases(
                duration,
                momentum_detuning,
                basis,
                species,
                momentum_detuning_rate=momentum_detuning_rate,
                detuning=detuning,
                chirp_rate=chirp_rate,
                start_time=start_time,
            )
        )
    )
    return Propagator(matrix, basis)


def free_phases(
    duration: float,
    momentum_detuning: float | np.ndarray,
    basis: BlochBasis,
    species: AtomSpecies,
    *,
    momentum_detuning_rate: float = 0.0,
    detuning: float = 0.0,
    chirp_rate: float = 0.0,
    start_time: float = 0.0,
) -> np.ndarray:
    """Integral of each generalized detuning over the free-flight window.

    Broadcasts over a batch of momentum detunings: scalar input gives shape
    (d,), an (S,) array gives (S, d).
    """
    w_r = species.recoil_frequency
    delta_p = np.asarray(momentum_detuning, dtype=float)
    c0 = (
        2.0 * basis.m_values
        + delta_p[..., None]
        + detuning / (4.0 * w_r)
    )
    c1 = momentum_detuning_rate + chirp_rate / (4.0 * w_r)
    a, b = start_time, start_time + duration
    integral = (
        c0**2 * duration
        + c0 * c1 * (b**2 - a**2)
        + c1**2 * (b**3 - a**3) / 3.0
    )
    return w_r * integral


def state_transfer_fidelity(propagator: Propagator, m_from: int, m_to: int) -> float:
    """|<m_to|U|m_from>|^2 in ladder indices."""
    i = propagator.basis.index_of(m_from)
    j = propagator.basis.index_of(m_to)
    return float(np.abs(propagator.matrix[j, i]) ** 2)


def validate_truncation(
    propagator: Propagator, m_initial: int, tol: float
) -> tuple[bool, float]:
    """Population leaked to the two extremal ladder states from m_initial.

    Returns (passed, leaked); a failing check advises enlarging the basis.
    """
    i = propagator.basis.index_of(m_initial)
    leaked = float(
        np.abs(propagator.matrix[0, i]) ** 2 + np.abs(propagator.matrix[-1, i]) ** 2
    )
    return leaked <= tol, leaked
