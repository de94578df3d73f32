"""Least-squares fringe analysis: sinusoid fits, scale factor, gravity.

Fits use the model y = A*cos(w*x + phi) + c + s*x.  With the frequency
fixed the model is linear in (A*cos(phi), -A*sin(phi), c, s) and is solved
exactly; free-frequency fits run a deterministic multi-start refinement.
Standard errors come from the Jacobian-based covariance at the optimum
scaled by the residual variance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares


class FitError(RuntimeError):
    """Fit could not converge or the data are degenerate."""


@dataclass(frozen=True)
class SinusoidFit:
    """Fitted y = amplitude*cos(frequency*x + phase) + offset + slope*x."""

    amplitude: float
    frequency: float
    phase: float
    offset: float
    slope: float
    amplitude_error: float
    frequency_error: float
    phase_error: float
    offset_error: float
    slope_error: float
    residual_rms: float
    n_points: int
    frequency_fixed: bool
    slope_fitted: bool
    covariance_condition: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be reported non-negative")
        if not (-np.pi < self.phase <= np.pi + 1e-12):
            raise ValueError("phase must be reported in (-pi, pi]")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (
            self.amplitude * np.cos(self.frequency * x + self.phase)
            + self.offset
            + self.slope * x
        )

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "phase": self.phase,
            "offset": self.offset,
            "slope": self.slope,
            "amplitude_error": self.amplitude_error,
            "frequency_error": self.frequency_error,
            "phase_error": self.phase_error,
            "offset_error": self.offset_error,
            "slope_error": self.slope_error,
            "residual_rms": self.residual_rms,
            "n_points": self.n_points,
            "frequency_fixed": self.frequency_fixed,
            "slope_fitted": self.slope_fitted,
            "covariance_condition": self.covariance_condition,
        }


def _wrap_phase(phi: float) -> float:
    wrapped = math.remainder(phi, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _covariance(jacobian: np.ndarray, residuals: np.ndarray, n_params: int):
    n = len(residuals)
    dof = max(n - n_params, 1)
    sigma2 = float(residuals @ residuals) / dof
    jtj = jacobian.T @ jacobian
    try:
        cov = np.linalg.inv(jtj) * sigma2
    except np.linalg.LinAlgError as exc:
        raise FitError("singular design matrix") from exc
    cond = float(np.linalg.cond(jtj))
    return cov, cond


def _linear_fixed_frequency_fit(x, y, weights, frequency, with_slope):
    """Exact linear solution of the fixed-frequency model."""
    cols = [np.cos(frequency * x), np.sin(frequency * x), np.ones_like(x)]
    if with_slope:
        cols.append(x)
    design = np.stack(cols, axis=1)
    w = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    a_cos, b_sin = coef[0], coef[1]
    amplitude = float(np.hypot(a_cos, b_sin))
    phase = float(np.arctan2(-b_sin, a_cos))
    offset = float(coef[2])
    slope = float(coef[3]) if with_slope else 0.0
    residuals = (design @ coef - y) * w
    cov, cond = _covariance(design * w[:, None], residuals, design.shape[1])
    # Propagate (a, b) covariance to (amplitude, phase).
    if amplitude > 0:
        jac_amp = np.array([a_cos, b_sin]) / amplitude
        jac_phase = np.array([b_sin, -a_cos]) / amplitude**2
        amp_err = float(np.sqrt(jac_amp @ cov[:2, :2] @ jac_amp))
        phase_err = float(np.sqrt(jac_phase @ cov[:2, :2] @ jac_phase))
    else:
        amp_err = float(np.sqrt(max(cov[0, 0], cov[1, 1])))
        phase_err = float(np.pi)
    rms = float(np.sqrt(np.mean(((design @ coef - y)) ** 2)))
    return SinusoidFit(
        amplitude=amplitude,
        frequency=float(frequency),
        phase=_wrap_phase(phase),
        offset=offset,
        slope=slope,
        amplitude_error=amp_err,
        frequency_error=0.0,
        phase_error=phase_err,
        offset_error=float(np.sqrt(cov[2, 2])),
        slope_error=float(np.sqrt(cov[3, 3])) if with_slope else 0.0,
        residual_rms=rms,
        n_points=len(x),
        frequency_fixed=True,
        slope_fitted=with_slope,
        covariance_condition=cond,
    )


def _frequency_seeds(x, y):
    """Candidate angular frequencies from a dense rectangular periodogram."""
    span = x.max() - x.min()
    n = len(x)
    w_min = 2.0 * np.pi * 0.5 / span
    w_max = np.pi * (n - 1) / span  # about the sampling Nyquist
    omegas = np.linspace(w_min, w_max, 512)
    yc = y - y.mean()
    power = np.abs(np.exp(-1j * np.outer(omegas, x)) @ yc)
    order = np.argsort(power)[::-1]
    return omegas[order[:3]]


def fit_sinusoid(
    x: np.ndarray,
    y: np.ndarray,
    frequency: float | None = None,
    with_slope: bool = False,
    sigma: np.ndarray | None = None,
) -> SinusoidFit:
    """Least-squares sinusoid fit with optional fixed frequency and slope.

    With `frequency` given the problem is linear and solved exactly; the
    free-frequency path refines a deterministic grid of periodogram and
    phase starts with scipy's least_squares and keeps the lowest-residual
    solution (ties broken toward the smallest |phase|).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be matching one-dimensional arrays")
    if len(x) < 5:
        raise FitError("need at least 5 points")
    if np.ptp(y) == 0.0:
        raise FitError("degenerate data: zero variance")
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        good = sigma > 0
        weights = np.ones_like(x)
        if np.any(good):
            floor = sigma[good].min()
            weights = 1.0 / np.maximum(sigma, floor) ** 2
    else:
        weights = np.ones_like(x)

    if frequency is not None:
        if frequency <= 0:
            raise ValueError("frequency must be positive")
        return _linear_fixed_frequency_fit(x, y, weights, frequency, with_slope)

    span = x.max() - x.min()
    best = None
    for w0 in _frequency_seeds(x, y):
        if w0 * span < 2.0 * np.pi * 1.5:
            continue  # require at least 1.5 periods for a free frequency
        seed_fit = _linear_fixed_frequency_fit(x, y, weights, w0, with_slope)
        for phase0 in np.linspace(-np.pi, np.pi, 8, endpoint=False):
            p0 = [
                max(seed_fit.amplitude, 1e-12 + 0.1 * np.ptp(y)),
                w0,
                phase0,
                seed_fit.offset,
                seed_fit.slope,
            ]

            def residual(p):
                model = p[0] * np.cos(p[1] * x + p[2]) + p[3] + p[4] * x
                return (model - y) * np.sqrt(weights)

            sol = least_squares(residual, p0, method="lm", max_nfev=4000)
            cost = float(np.sum(sol.fun**2))
            key = (round(cost, 14), abs(_wrap_phase(sol.x[2])))
            if sol.success and (best is None or key < best[0]):
                best = (key, sol)
    if best is None:
        raise FitError("free-frequency fit did not converge from any start")
    sol = best[1]
    amp, w_fit, phase, offset, slope = sol.x
    if amp < 0:
        amp, phase = -amp, phase + np.pi
    if w_fit < 0:
        w_fit, phase = -w_fit, -phase
    residuals = sol.fun
    cov, cond = _covariance(sol.jac, residuals, 5)
    rms = float(np.sqrt(np.mean((residuals / np.sqrt(weights)) ** 2)))
    return SinusoidFit(
        amplitude=float(amp),
        frequency=float(w_fit),
        phase=_wrap_phase(float(phase)),
        offset=float(offset),
        slope=float(slope) if with_slope else 0.0,
        amplitude_error=float(np.sqrt(cov[0, 0])),
        frequency_error=float(np.sqrt(cov[1, 1])),
        phase_error=float(np.sqrt(cov[2, 2])),
        offset_error=float(np.sqrt(cov[3, 3])),
        slope_error=float(np.sqrt(cov[4, 4])),
        residual_rms=rms,
        n_points=len(x),
        frequency_fixed=False,
        slope_fitted=with_slope,
        covariance_condition=cond,
    )


def fringe_phase(fit: SinusoidFit) -> float:
    """Interferometer phase from a readout-phase fringe fit.

    The simulated asymmetry follows V*cos(n*phi_readout - phi_int), so the
    interferometer phase is minus the fitted cosine phase.
    """
    return _wrap_phase(-fit.phase)


def single_shot_phase_uncertainty(fit: SinusoidFit) -> float:
    """Per-shot phase noise implied by a fringe fit.

    The fitted phase error shrinks with the number of points averaged, so
    the single-shot figure multiplies it back by sqrt(points fitted).
    """
    return fit.phase_error * math.sqrt(fit.n_points)


def visibility(fit: SinusoidFit, kind: str = "asymmetry") -> tuple[float, float]:
    """Peak-to-peak amplitude of the normalized port-population fringe.

    An ideal fringe scores 1.  Asymmetry data span [-1, 1], twice the range
    of a port fraction, so the fitted cosine amplitude is already the
    normalized peak-to-peak there; fraction data need the factor 2.
    """
    if kind == "asymmetry":
        return fit.amplitude, fit.amplitude_error
    if kind == "fraction":
        return 2.0 * fit.amplitude, 2.0 * fit.amplitude_error
    raise ValueError(f"unknown dataset kind {kind!r}")


def extract_scale_factor(records: list[dict]) -> tuple[float, float]:
    """Weighted linear regression of fitted phase on acceleration.

    Accepts the row dicts produced by the acceleration scan; weights are
    inverse-variance from the per-point phase errors when available.
    Returns (slope, standard error).
    """
    if len(records) < 3:
        raise FitError("need at least 3 acceleration points")
    a = np.array([r["acceleration"] for r in records], dtype=float)
    phi = np.array([r["phase"] for r in records], dtype=float)
    err = np.array([r.get("phase_error", 0.0) or 0.0 for r in records], dtype=float)
    if np.ptp(a) == 0.0:
        raise FitError("singular design: all accelerations equal")
    if np.all(err > 0):
        weights = 1.0 / err**2
    else:
        weights = np.ones_like(a)
    design = np.stack([a, np.ones_like(a)], axis=1)
    w = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * w[:, None], phi * w, rcond=None)
    residuals = (design @ coef - phi) * w
    cov, _ = _covariance(design * w[:, None], residuals, 2)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


def find_central_fringe(
    datasets: list,
    species_wavenumber: float,
    fit_slope: bool = True,
) -> dict:
    """Shared extremum of chirp-scan fringes and the implied gravity.

    Fits each fringe with a free frequency (and optional linear trend),
    enumerates candidate minima of the fraction signal, and selects the
    combination (one candidate per interrogation time) with the smallest
    spread.  The chirp-to-gravity conversion uses |alpha*| = 2*k*g.
    """
    if len(datasets) < 2:
        raise FitError("need fringes for at least 2 interrogation times")
    candidate_sets = []
    periods = []
    for ds in datasets:
        x = ds.scan_values
        fit = fit_sinusoid(x, ds.values, with_slope=fit_slope)
        periods.append(2.0 * np.pi / fit.frequency)
        # The transfer-port fraction is minimal where cos(w*x + phi) = -1.
        j_lo = int(np.floor((fit.frequency * x.min() + fit.phase - np.pi) / (2 * np.pi))) - 1
        j_hi = int(np.ceil((fit.frequency * x.max() + fit.phase - np.pi) / (2 * np.pi))) + 1
        candidates = [
            (np.pi - fit.phase + 2.0 * np.pi * j) / fit.frequency
            for j in range(j_lo, j_hi + 1)
        ]
        candidates = [c for c in candidates if x.min() <= c <= x.max()]
        if not candidates:
            raise FitError(
                f"no fringe minimum inside the scan for T = "
                f"{ds.metadata.get('interrogation_time_s')}"
            )
        candidate_sets.append(candidates)
    reference, *others = candidate_sets
    best = None
    for anchor in reference:
        chosen = [anchor]
        for cands in others:
            chosen.append(min(cands, key=lambda c: abs(c - anchor)))
        spread = max(chosen) - min(chosen)
        if best is None or spread < best[0]:
            best = (spread, chosen)
    spread, chosen = best
    if spread > 0.5 * min(periods):
        raise FitError(
            f"no common minimum: candidates per dataset {candidate_sets}"
        )
    center = float(np.mean(chosen))
    gravity = abs(center) / (2.0 * species_wavenumber)
    return {
        "chirp_center": center,
        "chirp_spread": float(spread),
        "gravity": gravity,
        "gravity_spread": float(spread) / (2.0 * species_wavenumber),
        "candidates": candidate_sets,
    }
