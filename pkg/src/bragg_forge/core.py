"""Physical constants, momentum-ladder bases, and detuning arithmetic.

Everything downstream works in the Bloch-band basis of momentum states
|p + 2m*hbar*k> indexed by the integer m.  The two interferometer arms are
m = 0 and m = n for a Bragg process of order n.  Atomic inputs are carried
by :class:`AtomSpecies` so that synthetic-unit tests (e.g. mass = 2*hbar,
k = 2, giving a recoil frequency of exactly 1) run through the same code
paths as SI rubidium-87.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Reduced Planck constant (J*s), CODATA 2018.
HBAR = 1.054571817e-34

# Rubidium-87: mass (kg) and D2-line wavelength (m).
RB87_MASS = 1.443160648e-25
RB87_WAVELENGTH = 780.2412097e-9


@dataclass(frozen=True)
class AtomSpecies:
    """Atomic mass and interferometry-beam wavenumber.

    Parameters
    ----------
    mass : float
        Atomic mass in kg.
    wavenumber : float
        Average wavenumber k of the counter-propagating beams, rad/m.
    """

    mass: float
    wavenumber: float

    def __post_init__(self):
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise ValueError(f"mass must be positive and finite, got {self.mass}")
        if not (self.wavenumber > 0 and np.isfinite(self.wavenumber)):
            raise ValueError(
                f"wavenumber must be positive and finite, got {self.wavenumber}"
            )

    @property
    def recoil_frequency(self) -> float:
        """Single-photon recoil angular frequency hbar*k^2/(2M), rad/s."""
        return HBAR * self.wavenumber**2 / (2.0 * self.mass)


def rubidium87() -> AtomSpecies:
    """Rb-87 addressed on the D2 line."""
    return AtomSpecies(mass=RB87_MASS, wavenumber=2.0 * np.pi / RB87_WAVELENGTH)


def recoil_frequency(species: AtomSpecies) -> float:
    """Single-photon recoil angular frequency hbar*k^2/(2M) in rad/s."""
    return species.recoil_frequency


@dataclass(frozen=True)
class BlochBasis:
    """Truncated ladder of momentum states |p + 2m*hbar*k>, m in [m_min, m_max].

    The ladder must contain both interferometer arms (m = 0 and m = order).
    Array index i maps to ladder index m = m_min + i.

    Small bases (down to exactly the two arm states) are permitted so that
    closed-form two-level reductions run on the production code path; use
    :meth:`for_order` for simulation bases with buffer states on both sides.
    """

    order: int
    m_min: int
    m_max: int

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if not (self.m_min <= 0 and self.order <= self.m_max):
            raise ValueError(
                f"basis [{self.m_min}, {self.m_max}] must contain both arms "
                f"m=0 and m={self.order}"
            )

    @classmethod
    def for_order(cls, order: int, buffer: int = 3) -> "BlochBasis":
        """Simulation basis with `buffer` extra states beyond each arm.

        The default (buffer=3) gives m in [-3, n+3], e.g. [-3, 6] at order 3.
        """
        if buffer < 1:
            raise ValueError("buffer must be >= 1")
        return cls(order=order, m_min=-buffer, m_max=order + buffer)

    @property
    def dim(self) -> int:
        return self.m_max - self.m_min + 1

    @property
    def m_values(self) -> np.ndarray:
        """Ladder indices m as an integer array of length dim."""
        return np.arange(self.m_min, self.m_max + 1)

    def index_of(self, m: int) -> int:
        """Array index of ladder state m."""
        if not (self.m_min <= m <= self.m_max):
            raise ValueError(f"m={m} outside basis [{self.m_min}, {self.m_max}]")
        return m - self.m_min

    @property
    def arm_indices(self) -> tuple[int, int]:
        """Array indices of the two interferometer arms (m=0, m=order)."""
        return self.index_of(0), self.index_of(self.order)

    def enlarged(self, extra: int = 1) -> "BlochBasis":
        """Same order with `extra` more states on each side."""
        return BlochBasis(self.order, self.m_min - extra, self.m_max + extra)

    @property
    def has_buffers(self) -> bool:
        """True when each arm has at least one buffer state beyond it."""
        return self.m_min <= -1 and self.m_max >= self.order + 1


def generalized_detuning(
    m: int | np.ndarray,
    momentum_detuning: float | np.ndarray,
    detuning: float | np.ndarray,
    species: AtomSpecies,
) -> float | np.ndarray:
    """Diagonal Hamiltonian element of ladder state m, rad/s.

    Evaluates w_R*(2m + delta_p + delta/(4 w_R))^2 with w_R the recoil
    frequency, delta_p the dimensionless momentum detuning p/(hbar k) and
    delta the two-photon detuning.  Broadcasts over array arguments.
    """
    w_r = species.recoil_frequency
    return w_r * (2.0 * np.asarray(m) + momentum_detuning + detuning / (4.0 * w_r)) ** 2


def resonant_detuning(
    order: int, momentum_detuning: float, species: AtomSpecies
) -> float:
    """Two-photon detuning that makes the arms m=0 and m=order degenerate.

    Returns the signed value -4*w_R*(order + delta_p); with this sign the
    generalized detunings of the two arm states coincide exactly.  Mapping
    to a laboratory sweep direction is the CLI's concern, not this module's.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    return -4.0 * species.recoil_frequency * (order + momentum_detuning)
