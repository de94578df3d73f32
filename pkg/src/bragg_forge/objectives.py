"""Noise ensembles, mirror/beamsplitter cost functions, fidelity landscapes.

Costs are ensemble averages over draws of the atom's dimensionless momentum
detuning (Gaussian, width sigma_p) and per-pulse fractional amplitude errors
(uniform on [beta_min, beta_max]).  The amplitude error is redrawn for each
pulse slot of the three-pulse sequence because laser-intensity errors vary
from pulse to pulse, while the momentum detuning is common to all pulses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AtomSpecies, BlochBasis
from .dynamics import Propagator, pulse_unitaries_batch
from .waveforms import PulseWaveform

N_PULSE_SLOTS = 3
MIRROR_SLOT = 1
BEAMSPLITTER_SLOTS = (0, 2)


@dataclass(frozen=True)
class NoiseSample:
    """One draw of (momentum detuning, per-pulse amplitude errors)."""

    momentum_detuning: float
    amplitude_errors: tuple[float, float, float]

    def __post_init__(self):
        if any(1.0 + b <= 0.0 for b in self.amplitude_errors):
            raise ValueError("amplitude errors must satisfy 1 + beta > 0")


@dataclass(frozen=True)
class NoiseEnsemble:
    """Reproducible finite sample of noise draws with its parameters."""

    samples: tuple[NoiseSample, ...]
    sigma_p: float
    beta_min: float
    beta_max: float
    seed: int | None = None

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("ensemble must contain at least one sample")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def momentum_detunings(self) -> np.ndarray:
        return np.array([s.momentum_detuning for s in self.samples])

    @property
    def amplitude_errors(self) -> np.ndarray:
        """(S, 3) array of per-slot amplitude errors."""
        return np.array([s.amplitude_errors for s in self.samples])


def sample_ensemble(
    sigma_p: float,
    beta_min: float,
    beta_max: float,
    size: int,
    seed: int | None,
) -> NoiseEnsemble:
    """Draw `size` noise samples; identical (seed, parameters) regenerate
    identical ensembles."""
    if size < 1:
        raise ValueError("size must be >= 1")
    if beta_min > beta_max:
        raise ValueError("beta_min must not exceed beta_max")
    if sigma_p < 0:
        raise ValueError("sigma_p must be >= 0")
    rng = np.random.default_rng(seed)
    delta_p = rng.normal(0.0, sigma_p, size=size) if sigma_p else np.zeros(size)
    betas = rng.uniform(beta_min, beta_max, size=(size, N_PULSE_SLOTS))
    samples = tuple(
        NoiseSample(float(dp), tuple(float(b) for b in row))
        for dp, row in zip(delta_p, betas)
    )
    return NoiseEnsemble(
        samples=samples,
        sigma_p=sigma_p,
        beta_min=beta_min,
        beta_max=beta_max,
        seed=seed,
    )


def target_unitary(basis: BlochBasis, order: int, literal: bool = False) -> np.ndarray:
    """Ideal order-n mirror: identity outside the arms, -i swap on them.

    `literal=True` keeps ones on the whole diagonal alongside the -i
    off-diagonal couplings (a non-unitary variant retained for study; with
    the matching literal projector the cost of a perfect mirror is 0.5).
    """
    i0, i1 = basis.index_of(0), basis.index_of(order)
    u = np.eye(basis.dim, dtype=np.complex128)
    if not literal:
        u[i0, i0] = 0.0
        u[i1, i1] = 0.0
    u[i0, i1] = -1.0j
    u[i1, i0] = -1.0j
    return u


def subspace_projector(
    basis: BlochBasis, order: int, literal: bool = False
) -> np.ndarray:
    """Projector onto the two interferometer arms (diagonal 0/1 matrix).

    `literal=True` adds the off-diagonal ones of the study variant.
    """
    i0, i1 = basis.index_of(0), basis.index_of(order)
    p = np.zeros((basis.dim, basis.dim), dtype=np.complex128)
    p[i0, i0] = 1.0
    p[i1, i1] = 1.0
    if literal:
        p[i0, i1] = 1.0
        p[i1, i0] = 1.0
    return p


def mirror_cost(
    propagator: Propagator | np.ndarray,
    basis: BlochBasis,
    order: int,
    literal: bool = False,
) -> float:
    """Projected trace distance of a pulse propagator from the ideal mirror.

    1 - |Tr((P U_target)^dag (P U)) / Tr((P U_target)^dag (P U_target))|^2,
    zero exactly at the target (up to global phase), one for the identity.
    """
    matrix = propagator.matrix if isinstance(propagator, Propagator) else propagator
    return float(
        _mirror_costs(matrix[None], basis, order, literal=literal)[0]
    )


def _mirror_costs(
    matrices: np.ndarray, basis: BlochBasis, order: int, literal: bool = False
) -> np.ndarray:
    proj = subspace_projector(basis, order, literal)
    target = proj @ target_unitary(basis, order, literal)
    t0 = np.sum(np.abs(target) ** 2)
    overlaps = np.einsum("ij,sij->s", np.conj(target), proj @ matrices)
    return 1.0 - np.abs(overlaps / t0) ** 2


def mirror_overlap_kmat(basis: BlochBasis, order: int) -> tuple[np.ndarray, float]:
    """K and normalization such that cost = 1 - |Tr(K U)|^2 / T0^2."""
    proj = subspace_projector(basis, order)
    target = proj @ target_unitary(basis, order)
    kmat = np.conj(target).T @ proj
    t0 = float(np.sum(np.abs(target) ** 2))
    return kmat, t0


def ensemble_mirror_cost(
    waveform: PulseWaveform,
    ensemble: NoiseEnsemble,
    basis: BlochBasis,
    species: AtomSpecies,
    slot: int = MIRROR_SLOT,
) -> float:
    """Mean mirror cost over the ensemble (fixed sample-index reduction)."""
    units = pulse_unitaries_batch(
        waveform,
        ensemble.momentum_detunings,
        ensemble.amplitude_errors[:, slot],
        basis,
        species,
    )
    costs = _mirror_costs(units, basis, waveform.order or basis.order)
    return float(np.mean(costs))


def phase_offset_factors(basis: BlochBasis, offset: float | np.ndarray) -> np.ndarray:
    """Diagonal of the frame rotation representing a DC laser-phase offset.

    Adding a constant `offset` to every segment phase of a pulse multiplies
    its coupling elements by exp(i*offset/2), which conjugates the pulse
    propagator by diag(exp(-i*m*offset/2)) over ladder indices m.
    """
    offset = np.asarray(offset, dtype=float)
    return np.exp(-0.5j * np.multiply.outer(offset, basis.m_values))


def apply_phase_offset(matrix: np.ndarray, basis: BlochBasis, offset: float) -> np.ndarray:
    """Propagator of the same pulse with all segment phases offset."""
    f = phase_offset_factors(basis, offset)
    return f[..., :, None] * matrix * np.conj(f)[..., None, :]


def waveform_mean_phase(waveform: PulseWaveform) -> float:
    """Amplitude-weighted circular mean of the segment phases.

    Shifts by exactly c when every segment phase is shifted by c, which is
    what lets the beamsplitter cost hold its ideal mirror in the same laser
    frame as the beamsplitter waveform.
    """
    return float(
        np.arctan2(
            np.sum(waveform.rabi * np.sin(waveform.phase)),
            np.sum(waveform.rabi * np.cos(waveform.phase)),
        )
    )


def beamsplitter_fringe(
    bs_unitaries_first: np.ndarray,
    bs_unitaries_final: np.ndarray,
    readout_phases: np.ndarray,
    basis: BlochBasis,
    order: int,
    mirror_reference_phase: float = 0.0,
) -> np.ndarray:
    """Population asymmetry fringe of BS -> ideal mirror -> BS vs phase.

    The readout offset enters as -phi/2 on the ideal mirror and +phi on the
    final beamsplitter, producing the asymmetry cos(n*phi - phase_error)
    for ideal pulses.  `mirror_reference_phase` anchors the ideal mirror to
    the beamsplitters' common laser frame.  Returns shape (G, S) for
    (phases, samples).
    """
    i0, i1 = basis.index_of(0), basis.index_of(order)
    psi0 = np.zeros(basis.dim, dtype=np.complex128)
    psi0[i0] = 1.0
    psi1 = bs_unitaries_first @ psi0  # (S, d)
    target = target_unitary(basis, order)
    f_mirror = phase_offset_factors(
        basis, mirror_reference_phase - 0.5 * readout_phases
    )  # (G, d)
    mirrors = f_mirror[:, :, None] * target[None] * np.conj(f_mirror)[:, None, :]
    v = np.einsum("gij,sj->gsi", mirrors, psi1)
    f_final = phase_offset_factors(basis, readout_phases)  # (G, d)
    v = np.conj(f_final)[:, None, :] * v
    psi = np.einsum("sij,gsj->gsi", bs_unitaries_final, v)
    return np.abs(psi[:, :, i0]) ** 2 - np.abs(psi[:, :, i1]) ** 2


def beamsplitter_cost(
    bs_waveform: PulseWaveform,
    ensemble: NoiseEnsemble,
    basis: BlochBasis,
    species: AtomSpecies,
    phase_grid_size: int = 16,
) -> float:
    """Shape-phase-and-modulation distance of the recombination fringe.

    Simulates the pulse pair around a perfect mirror over a uniform readout
    phase grid, ensemble-averages the asymmetry fringe, projects it onto the
    ideal fringe cos(n*phi) and returns 1 minus that projection.  Zero means
    the averaged fringe matches the ideal's shape, phase and full modulation
    depth; a flat fringe scores 1 and an anti-phased one up to 2.
    """
    if phase_grid_size < 8:
        raise ValueError("phase grid must have at least 8 points")
    order = bs_waveform.order or basis.order
    u_first = pulse_unitaries_batch(
        bs_waveform,
        ensemble.momentum_detunings,
        ensemble.amplitude_errors[:, BEAMSPLITTER_SLOTS[0]],
        basis,
        species,
    )
    u_final = pulse_unitaries_batch(
        bs_waveform,
        ensemble.momentum_detunings,
        ensemble.amplitude_errors[:, BEAMSPLITTER_SLOTS[1]],
        basis,
        species,
    )
    phases = np.arange(phase_grid_size) * (2.0 * np.pi / phase_grid_size)
    fringe = beamsplitter_fringe(
        u_first,
        u_final,
        phases,
        basis,
        order,
        mirror_reference_phase=waveform_mean_phase(bs_waveform),
    ).mean(axis=1)
    ideal = np.cos(order * phases)
    return float(1.0 - fringe @ ideal / (ideal @ ideal))


def fidelity_landscape(
    waveform: PulseWaveform,
    momentum_detunings: np.ndarray,
    amplitude_errors: np.ndarray,
    basis: BlochBasis,
    species: AtomSpecies,
) -> np.ndarray:
    """State-transfer fidelity 0 -> n over a (beta, delta_p) grid.

    Rows follow the amplitude-error axis (the laser-intensity fraction),
    columns the momentum-detuning axis.
    """
    dp_grid = np.asarray(momentum_detunings, dtype=float)
    beta_grid = np.asarray(amplitude_errors, dtype=float)
    if np.any(np.diff(dp_grid) < 0) or np.any(np.diff(beta_grid) < 0):
        raise ValueError("grids must be monotone non-decreasing")
    order = waveform.order or basis.order
    bb, pp = np.meshgrid(beta_grid, dp_grid, indexing="ij")
    units = pulse_unitaries_batch(
        waveform, pp.ravel(), bb.ravel(), basis, species
    )
    i0, i1 = basis.index_of(0), basis.index_of(order)
    fid = np.abs(units[:, i1, i0]) ** 2
    return fid.reshape(len(beta_grid), len(dp_grid))


def contour_width(
    axis_values: np.ndarray, profile: np.ndarray, level: float = 0.9
) -> float:
    """Width of the contiguous region around the profile's peak above `level`.

    Crossings are linearly interpolated; the width is clipped to the grid
    span when the region reaches an edge.
    """
    axis_values = np.asarray(axis_values, dtype=float)
    profile = np.asarray(profile, dtype=float)
    peak = int(np.argmax(profile))
    if profile[peak] < level:
        return 0.0
    lo = axis_values[0]
    for i in range(peak, 0, -1):
        if profile[i - 1] < level:
            frac = (level - profile[i]) / (profile[i - 1] - profile[i])
            lo = axis_values[i] + frac * (axis_values[i - 1] - axis_values[i])
            break
    hi = axis_values[-1]
    for i in range(peak, len(profile) - 1):
        if profile[i + 1] < level:
            frac = (level - profile[i]) / (profile[i + 1] - profile[i])
            hi = axis_values[i] + frac * (axis_values[i + 1] - axis_values[i])
            break
    return float(hi - lo)


def write_landscape_csv(
    path,
    momentum_detunings: np.ndarray,
    amplitude_errors: np.ndarray,
    fidelities: np.ndarray,
) -> None:
    """CSV grid: one row per amplitude error, one column per detuning."""
    with open(path, "w") as handle:
        header = ",".join(["beta/delta_p"] + [repr(float(x)) for x in momentum_detunings])
        handle.write(header + "\n")
        for beta, row in zip(amplitude_errors, fidelities):
            cells = ",".join([repr(float(beta))] + [repr(float(v)) for v in row])
            handle.write(cells + "\n")
