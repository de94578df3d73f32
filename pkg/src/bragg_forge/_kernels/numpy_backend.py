"""Reference numpy implementation of the propagation kernels.

All kernels operate on batches of piecewise-constant tridiagonal Hermitian
Hamiltonians described by their diagonals `diag` (S, N, d) and upper
off-diagonals `offdiag` (S, N, d-1); the (m, m+1) element is offdiag[m]
and the (m+1, m) element its conjugate.  Each segment propagator is
exp(-i * H * dt) computed by Hermitian eigendecomposition; a pulse is the
ordered product U_{N-1} ... U_1 U_0 (last segment leftmost).

`chain_with_adjoint` additionally returns the derivatives of the complex
overlap T = Tr(K @ U_total) with respect to every Hamiltonian element:
d(diag) entries are real parameters, the off-diagonal pair (u, conj(u))
is reported as the Wirtinger partials dT/du and dT/d(conj(u)).
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _dense_hamiltonians(diag: np.ndarray, offdiag: np.ndarray) -> np.ndarray:
    s, n, d = diag.shape
    h = np.zeros((s, n, d, d), dtype=np.complex128)
    idx = np.arange(d)
    h[:, :, idx, idx] = diag
    sub = np.arange(d - 1)
    h[:, :, sub, sub + 1] = offdiag
    h[:, :, sub + 1, sub] = np.conj(offdiag)
    return h


def segment_unitaries(
    diag: np.ndarray, offdiag: np.ndarray, dt: float
) -> np.ndarray:
    """Per-segment propagators exp(-i H dt), shape (S, N, d, d)."""
    lam, vec = np.linalg.eigh(_dense_hamiltonians(diag, offdiag))
    phases = np.exp(-1j * lam * dt)
    return np.einsum("snab,snb,sncb->snac", vec, phases, np.conj(vec))


def chain_product(units: np.ndarray) -> np.ndarray:
    """Ordered product over the segment axis of (S, N, d, d) unitaries."""
    s, n, d, _ = units.shape
    total = np.broadcast_to(np.eye(d, dtype=np.complex128), (s, d, d)).copy()
    for j in range(n):
        total = units[:, j] @ total
    return total


def total_unitaries(diag: np.ndarray, offdiag: np.ndarray, dt: float) -> np.ndarray:
    """Whole-pulse propagators, shape (S, d, d)."""
    return chain_product(segment_unitaries(diag, offdiag, dt))


def _phase_divided_differences(lam: np.ndarray, dt: float) -> np.ndarray:
    """Loewner matrix of f(x) = exp(-i x dt) on each eigenvalue set.

    (f(a) - f(b)) / (a - b) written as -i*dt*exp(-i*(a+b)/2*dt)*sinc(...)
    which is exact and stable for degenerate pairs.
    """
    mean = 0.5 * (lam[..., :, None] + lam[..., None, :])
    gap = lam[..., :, None] - lam[..., None, :]
    return -1j * dt * np.exp(-1j * mean * dt) * np.sinc(gap * dt / (2.0 * np.pi))


def chain_with_adjoint(
    diag: np.ndarray, offdiag: np.ndarray, dt: float, kmat: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pulse propagators plus gradients of T = Tr(K @ U_total).

    Parameters
    ----------
    diag, offdiag : ndarray
        Hamiltonian elements, shapes (S, N, d) and (S, N, d-1).
    dt : float
        Segment duration.
    kmat : ndarray
        Per-sample overlap matrices K, shape (S, d, d).

    Returns
    -------
    total : (S, d, d) pulse propagators.
    dt_ddiag : (S, N, d) complex, dT/d(diag element).
    dt_du : (S, N, d-1) complex, dT/d(upper off-diagonal element).
    dt_duc : (S, N, d-1) complex, dT/d(conjugated lower element).
    """
    s, n, d = diag.shape
    lam, vec = np.linalg.eigh(_dense_hamiltonians(diag, offdiag))
    phases = np.exp(-1j * lam * dt)
    units = np.einsum("snab,snb,sncb->snac", vec, phases, np.conj(vec))

    prefixes = np.empty((s, n, d, d), dtype=np.complex128)
    running = np.broadcast_to(np.eye(d, dtype=np.complex128), (s, d, d)).copy()
    for j in range(n):
        prefixes[:, j] = running
        running = units[:, j] @ running
    total = running

    dt_ddiag = np.empty((s, n, d), dtype=np.complex128)
    dt_du = np.empty((s, n, d - 1), dtype=np.complex128)
    dt_duc = np.empty((s, n, d - 1), dtype=np.complex128)
    suffix = np.broadcast_to(np.eye(d, dtype=np.complex128), (s, d, d)).copy()
    idx = np.arange(d)
    sub = np.arange(d - 1)
    for j in range(n - 1, -1, -1):
        mid = prefixes[:, j] @ kmat @ suffix
        vj = vec[:, j]
        gamma = _phase_divided_differences(lam[:, j], dt)
        packed = gamma * np.swapaxes(
            np.conj(np.swapaxes(vj, -1, -2)) @ mid @ vj, -1, -2
        )
        zmat = np.conj(vj) @ packed @ np.swapaxes(vj, -1, -2)
        dt_ddiag[:, j] = zmat[:, idx, idx]
        dt_du[:, j] = zmat[:, sub, sub + 1]
        dt_duc[:, j] = zmat[:, sub + 1, sub]
        suffix = suffix @ units[:, j]
    return total, dt_ddiag, dt_du, dt_duc
