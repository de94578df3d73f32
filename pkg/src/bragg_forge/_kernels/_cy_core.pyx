# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled propagation kernels.

Same contract as `numpy_backend`: batches of piecewise-constant tridiagonal
Hermitian Hamiltonians, eigendecomposition-based segment propagators,
ordered products, and adjoint derivatives of Tr(K @ U_total) with respect
to every Hamiltonian element.

A Hermitian tridiagonal matrix is phase-similar to a real symmetric
tridiagonal one (H = Q T Q* with Q a diagonal of unit phases accumulating
the off-diagonal arguments), so each segment reduces to LAPACK's dstevd
plus cheap complex assembly.  All inner loops run without the GIL.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, exp, fabs, hypot, sin, sqrt
from scipy.linalg.cython_lapack cimport dstevd

cnp.import_array()

BACKEND_NAME = "cython"

ctypedef double complex zdouble


cdef inline double _sinc(double x) nogil:
    if fabs(x) < 1e-8:
        return 1.0 - x * x / 6.0
    return sin(x) / x


cdef inline zdouble _cis(double x) nogil:
    return cos(x) + 1j * sin(x)


cdef int _eigen_segment(
    const double[::1] diag,
    const zdouble[::1] offdiag,
    double[::1] w,
    zdouble[:, ::1] vec,
    double* td,
    double* te,
    double* zbuf,
    double* work,
    int lwork,
    int* iwork,
    int liwork,
    zdouble* qphase,
) nogil:
    """Eigen-decompose one tridiagonal segment; vec[p, a] = <p|a>."""
    cdef int n = diag.shape[0]
    cdef int info = 0, ldz = n
    cdef int p, a
    cdef double mag
    cdef zdouble u
    cdef char jobz = b'V'
    for p in range(n):
        td[p] = diag[p]
    qphase[0] = 1.0
    for p in range(n - 1):
        u = offdiag[p]
        mag = hypot(u.real, u.imag)
        te[p] = mag
        if mag > 0.0:
            qphase[p + 1] = qphase[p] * (u.real - 1j * u.imag) / mag
        else:
            qphase[p + 1] = qphase[p]
    dstevd(&jobz, &n, td, te, zbuf, &ldz, work, &lwork, iwork, &liwork, &info)
    if info != 0:
        return info
    for p in range(n):
        w[p] = td[p]
    for a in range(n):
        for p in range(n):
            vec[p, a] = qphase[p] * zbuf[p + a * n]
    return 0


cdef void _propagator_from_eigen(
    const double[::1] w,
    const zdouble[:, ::1] vec,
    double dt,
    zdouble[:, ::1] out,
    zdouble* fbuf,
) nogil:
    cdef int n = w.shape[0]
    cdef int p, r, a
    cdef zdouble scaled
    for a in range(n):
        fbuf[a] = _cis(-w[a] * dt)
    for p in range(n):
        for r in range(n):
            out[p, r] = 0.0
    for a in range(n):
        for p in range(n):
            scaled = vec[p, a] * fbuf[a]
            for r in range(n):
                out[p, r] = out[p, r] + scaled * vec[r, a].conjugate()


cdef void _matmul(
    const zdouble[:, ::1] a, const zdouble[:, ::1] b, zdouble[:, ::1] out
) nogil:
    cdef int n = a.shape[0]
    cdef int p, r, k
    cdef zdouble scale
    for p in range(n):
        for r in range(n):
            out[p, r] = 0.0
        for k in range(n):
            scale = a[p, k]
            for r in range(n):
                out[p, r] = out[p, r] + scale * b[k, r]


cdef class _Workspace:
    cdef double* td
    cdef double* te
    cdef double* zbuf
    cdef double* work
    cdef int* iwork
    cdef zdouble* qphase
    cdef zdouble* fbuf
    cdef int lwork, liwork
    cdef object _arrays

    def __cinit__(self, int n):
        self.lwork = 1 + 4 * n + 2 * n * n + 16
        self.liwork = 3 + 5 * n + 8
        arrays = {
            "td": np.empty(n, dtype=np.float64),
            "te": np.empty(max(n - 1, 1), dtype=np.float64),
            "zbuf": np.empty(n * n, dtype=np.float64),
            "work": np.empty(self.lwork, dtype=np.float64),
            "iwork": np.empty(self.liwork, dtype=np.int32),
            "qphase": np.empty(n, dtype=np.complex128),
            "fbuf": np.empty(n, dtype=np.complex128),
        }
        self._arrays = arrays
        self.td = <double*> cnp.PyArray_DATA(arrays["td"])
        self.te = <double*> cnp.PyArray_DATA(arrays["te"])
        self.zbuf = <double*> cnp.PyArray_DATA(arrays["zbuf"])
        self.work = <double*> cnp.PyArray_DATA(arrays["work"])
        self.iwork = <int*> cnp.PyArray_DATA(arrays["iwork"])
        self.qphase = <zdouble*> cnp.PyArray_DATA(arrays["qphase"])
        self.fbuf = <zdouble*> cnp.PyArray_DATA(arrays["fbuf"])


def segment_unitaries(diag, offdiag, double dt):
    """Per-segment propagators exp(-i H dt), shape (S, N, d, d)."""
    cdef double[:, :, ::1] dg = np.ascontiguousarray(diag, dtype=np.float64)
    cdef zdouble[:, :, ::1] od = np.ascontiguousarray(offdiag, dtype=np.complex128)
    cdef int s_count = dg.shape[0], n_seg = dg.shape[1], dim = dg.shape[2]
    out_arr = np.empty((s_count, n_seg, dim, dim), dtype=np.complex128)
    cdef zdouble[:, :, :, ::1] out = out_arr
    w_arr = np.empty(dim, dtype=np.float64)
    v_arr = np.empty((dim, dim), dtype=np.complex128)
    cdef double[::1] w = w_arr
    cdef zdouble[:, ::1] vec = v_arr
    cdef _Workspace ws = _Workspace(dim)
    cdef int s, j, info = 0
    with nogil:
        for s in range(s_count):
            for j in range(n_seg):
                info = _eigen_segment(
                    dg[s, j], od[s, j], w, vec, ws.td, ws.te, ws.zbuf,
                    ws.work, ws.lwork, ws.iwork, ws.liwork, ws.qphase,
                )
                if info != 0:
                    break
                _propagator_from_eigen(w, vec, dt, out[s, j], ws.fbuf)
            if info != 0:
                break
    if info != 0:
        raise RuntimeError(f"dstevd failed with info={info}")
    return out_arr


def chain_product(units):
    """Ordered product over the segment axis of (S, N, d, d) unitaries."""
    cdef zdouble[:, :, :, ::1] u = np.ascontiguousarray(units, dtype=np.complex128)
    cdef int s_count = u.shape[0], n_seg = u.shape[1], dim = u.shape[2]
    total_arr = np.empty((s_count, dim, dim), dtype=np.complex128)
    cdef zdouble[:, :, ::1] total = total_arr
    scratch_arr = np.empty((dim, dim), dtype=np.complex128)
    cdef zdouble[:, ::1] scratch = scratch_arr
    cdef int s, j, p, r
    with nogil:
        for s in range(s_count):
            for p in range(dim):
                for r in range(dim):
                    total[s, p, r] = 1.0 if p == r else 0.0
            for j in range(n_seg):
                _matmul(u[s, j], total[s], scratch)
                total[s, :, :] = scratch
    return total_arr


def total_unitaries(diag, offdiag, double dt):
    """Whole-pulse propagators, shape (S, d, d)."""
    cdef double[:, :, ::1] dg = np.ascontiguousarray(diag, dtype=np.float64)
    cdef zdouble[:, :, ::1] od = np.ascontiguousarray(offdiag, dtype=np.complex128)
    cdef int s_count = dg.shape[0], n_seg = dg.shape[1], dim = dg.shape[2]
    total_arr = np.empty((s_count, dim, dim), dtype=np.complex128)
    cdef zdouble[:, :, ::1] total = total_arr
    w_arr = np.empty(dim, dtype=np.float64)
    v_arr = np.empty((dim, dim), dtype=np.complex128)
    u_arr = np.empty((dim, dim), dtype=np.complex128)
    scratch_arr = np.empty((dim, dim), dtype=np.complex128)
    cdef double[::1] w = w_arr
    cdef zdouble[:, ::1] vec = v_arr
    cdef zdouble[:, ::1] unit = u_arr
    cdef zdouble[:, ::1] scratch = scratch_arr
    cdef _Workspace ws = _Workspace(dim)
    cdef int s, j, p, r, info = 0
    with nogil:
        for s in range(s_count):
            for p in range(dim):
                for r in range(dim):
                    total[s, p, r] = 1.0 if p == r else 0.0
            for j in range(n_seg):
                info = _eigen_segment(
                    dg[s, j], od[s, j], w, vec, ws.td, ws.te, ws.zbuf,
                    ws.work, ws.lwork, ws.iwork, ws.liwork, ws.qphase,
                )
                if info != 0:
                    break
                _propagator_from_eigen(w, vec, dt, unit, ws.fbuf)
                _matmul(unit, total[s], scratch)
                total[s, :, :] = scratch
            if info != 0:
                break
    if info != 0:
        raise RuntimeError(f"dstevd failed with info={info}")
    return total_arr


def chain_with_adjoint(diag, offdiag, double dt, kmat):
    """Pulse propagators plus dT/d(element) for T = Tr(K @ U_total).

    Returns (total, dT_ddiag, dT_du, dT_duconj) with the same shapes and
    conventions as the numpy backend.
    """
    cdef double[:, :, ::1] dg = np.ascontiguousarray(diag, dtype=np.float64)
    cdef zdouble[:, :, ::1] od = np.ascontiguousarray(offdiag, dtype=np.complex128)
    cdef zdouble[:, :, ::1] kk = np.ascontiguousarray(kmat, dtype=np.complex128)
    cdef int s_count = dg.shape[0], n_seg = dg.shape[1], dim = dg.shape[2]

    total_arr = np.empty((s_count, dim, dim), dtype=np.complex128)
    ddiag_arr = np.empty((s_count, n_seg, dim), dtype=np.complex128)
    du_arr = np.empty((s_count, n_seg, dim - 1), dtype=np.complex128)
    duc_arr = np.empty((s_count, n_seg, dim - 1), dtype=np.complex128)
    cdef zdouble[:, :, ::1] total = total_arr
    cdef zdouble[:, :, ::1] ddiag = ddiag_arr
    cdef zdouble[:, :, ::1] du = du_arr
    cdef zdouble[:, :, ::1] duc = duc_arr

    units_arr = np.empty((n_seg, dim, dim), dtype=np.complex128)
    vecs_arr = np.empty((n_seg, dim, dim), dtype=np.complex128)
    lams_arr = np.empty((n_seg, dim), dtype=np.float64)
    prefix_arr = np.empty((n_seg, dim, dim), dtype=np.complex128)
    cdef zdouble[:, :, ::1] units = units_arr
    cdef zdouble[:, :, ::1] vecs = vecs_arr
    cdef double[:, ::1] lams = lams_arr
    cdef zdouble[:, :, ::1] prefix = prefix_arr

    suffix_arr = np.empty((dim, dim), dtype=np.complex128)
    m1_arr = np.empty((dim, dim), dtype=np.complex128)
    m2_arr = np.empty((dim, dim), dtype=np.complex128)
    m3_arr = np.empty((dim, dim), dtype=np.complex128)
    cdef zdouble[:, ::1] suffix = suffix_arr
    cdef zdouble[:, ::1] m1 = m1_arr
    cdef zdouble[:, ::1] m2 = m2_arr
    cdef zdouble[:, ::1] m3 = m3_arr

    cdef _Workspace ws = _Workspace(dim)
    cdef int s, j, p, r, a, b, info = 0
    cdef zdouble acc, gamma
    cdef double wa, wb
    with nogil:
        for s in range(s_count):
            # forward sweep: eigendata, segment propagators, prefixes
            for p in range(dim):
                for r in range(dim):
                    prefix[0, p, r] = 1.0 if p == r else 0.0
            for j in range(n_seg):
                info = _eigen_segment(
                    dg[s, j], od[s, j], lams[j], vecs[j], ws.td, ws.te,
                    ws.zbuf, ws.work, ws.lwork, ws.iwork, ws.liwork, ws.qphase,
                )
                if info != 0:
                    break
                _propagator_from_eigen(lams[j], vecs[j], dt, units[j], ws.fbuf)
                if j + 1 < n_seg:
                    _matmul(units[j], prefix[j], prefix[j + 1])
            if info != 0:
                break
            _matmul(units[n_seg - 1], prefix[n_seg - 1], total[s])

            # backward sweep
            for p in range(dim):
                for r in range(dim):
                    suffix[p, r] = 1.0 if p == r else 0.0
            for j in range(n_seg - 1, -1, -1):
                # m1 = prefix_j @ K @ suffix_j
                _matmul(prefix[j], kk[s], m2)
                _matmul(m2, suffix, m1)
                # m3 = V^dag m1, then m2 = m3 V
                for p in range(dim):
                    for r in range(dim):
                        m3[p, r] = 0.0
                for a in range(dim):
                    for p in range(dim):
                        acc = vecs[j, a, p].conjugate()
                        for r in range(dim):
                            m3[p, r] = m3[p, r] + acc * m1[a, r]
                for p in range(dim):
                    for r in range(dim):
                        m2[p, r] = 0.0
                    for a in range(dim):
                        acc = m3[p, a]
                        for r in range(dim):
                            m2[p, r] = m2[p, r] + acc * vecs[j, a, r]
                # m3 = gamma o m2^T  (Loewner weights of exp(-i x dt))
                for a in range(dim):
                    wa = lams[j, a]
                    for b in range(dim):
                        wb = lams[j, b]
                        gamma = -1j * dt * _cis(-0.5 * (wa + wb) * dt) * _sinc(
                            0.5 * (wa - wb) * dt
                        )
                        m3[a, b] = gamma * m2[b, a]
                # Z = conj(V) m3 V^T; store needed elements
                for p in range(dim):
                    for r in range(dim):
                        m2[p, r] = 0.0
                    for a in range(dim):
                        acc = vecs[j, p, a].conjugate()
                        for r in range(dim):
                            m2[p, r] = m2[p, r] + acc * m3[a, r]
                for p in range(dim):
                    for r in range(dim):
                        acc = 0.0
                        for a in range(dim):
                            acc = acc + m2[p, a] * vecs[j, r, a]
                        m1[p, r] = acc
                for p in range(dim):
                    ddiag[s, j, p] = m1[p, p]
                for p in range(dim - 1):
                    du[s, j, p] = m1[p, p + 1]
                    duc[s, j, p] = m1[p + 1, p]
                # suffix <- suffix @ units_j
                _matmul(suffix, units[j], m2)
                suffix[:, :] = m2
    if info != 0:
        raise RuntimeError(f"dstevd failed with info={info}")
    return total_arr, ddiag_arr, du_arr, duc_arr
