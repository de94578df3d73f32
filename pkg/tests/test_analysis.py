import numpy as np
import pytest

from bragg_forge.analysis import (
    FitError,
    extract_scale_factor,
    find_central_fringe,
    fit_sinusoid,
    fringe_phase,
    visibility,
)
from bragg_forge.interferometer import FringeDataset


def synthetic(x, amplitude, frequency, phase, offset, slope=0.0):
    return amplitude * np.cos(frequency * x + phase) + offset + slope * x


class TestFixedFrequencyFit:
    def test_exact_recovery(self):
        x = np.linspace(0, 2 * np.pi, 33, endpoint=False)
        y = synthetic(x, 0.8, 3.0, 0.6, 0.05)
        fit = fit_sinusoid(x, y, frequency=3.0)
        assert fit.amplitude == pytest.approx(0.8, abs=1e-10)
        assert fit.phase == pytest.approx(0.6, abs=1e-10)
        assert fit.offset == pytest.approx(0.05, abs=1e-10)
        assert fit.amplitude_error < 1e-8
        assert fit.phase_error < 1e-8
        assert fit.residual_rms < 1e-12

    def test_phase_equivariance(self):
        x = np.linspace(0, 4 * np.pi, 40)
        y = synthetic(x, 1.0, 2.0, -0.4, 0.0)
        shift = 0.37
        base = fit_sinusoid(x, y, frequency=2.0)
        moved = fit_sinusoid(x + shift, y, frequency=2.0)
        expected = (base.phase - 2.0 * shift + np.pi) % (2 * np.pi) - np.pi
        assert moved.phase == pytest.approx(expected, abs=1e-9)

    def test_constant_plus_trend(self):
        x = np.linspace(0, 1, 21)
        rng = np.random.default_rng(0)
        y = 0.3 + 1.7 * x + rng.normal(0, 1e-3, x.size)
        fit = fit_sinusoid(x, y, frequency=40.0, with_slope=True)
        assert fit.slope == pytest.approx(1.7, abs=0.05)
        assert fit.amplitude < 3.0 * fit.amplitude_error + 1e-3

    def test_residual_never_exceeds_data_std(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = np.linspace(0, 2 * np.pi, 25)
            y = rng.normal(size=25)
            fit = fit_sinusoid(x, y, frequency=rng.uniform(0.5, 4.0))
            assert fit.residual_rms <= y.std() + 1e-12

    def test_coverage_and_error_scaling(self):
        # 68% coverage of the phase within +-3 points over Monte-Carlo
        # repeats, and errors shrinking like 1/sqrt(N).
        rng = np.random.default_rng(7)
        true_phase = 0.45
        hits = 0
        repeats = 800
        errs_n = []
        errs_4n = []
        for _ in range(repeats):
            x = np.linspace(0, 2 * np.pi, 33, endpoint=False)
            y = synthetic(x, 1.0, 3.0, true_phase, 0.0) + rng.normal(0, 0.08, x.size)
            fit = fit_sinusoid(x, y, frequency=3.0)
            errs_n.append(fit.phase_error)
            if abs(fit.phase - true_phase) <= fit.phase_error:
                hits += 1
            x4 = np.linspace(0, 2 * np.pi, 132, endpoint=False)
            y4 = synthetic(x4, 1.0, 3.0, true_phase, 0.0) + rng.normal(0, 0.08, x4.size)
            errs_4n.append(fit_sinusoid(x4, y4, frequency=3.0).phase_error)
        assert abs(hits / repeats - 0.68) < 0.03
        ratio = np.mean(errs_n) / np.mean(errs_4n)
        assert ratio == pytest.approx(2.0, rel=0.15)

    def test_input_validation(self):
        x = np.linspace(0, 1, 4)
        with pytest.raises(FitError):
            fit_sinusoid(x, np.ones(4), frequency=1.0)
        x = np.linspace(0, 1, 10)
        with pytest.raises(FitError):
            fit_sinusoid(x, np.ones(10), frequency=1.0)


class TestFreeFrequencyFit:
    def test_recovers_frequency(self):
        x = np.linspace(0, 10.0, 80)
        y = synthetic(x, 0.5, 2.7, 1.1, -0.2, slope=0.03)
        fit = fit_sinusoid(x, y, with_slope=True)
        assert fit.frequency == pytest.approx(2.7, rel=1e-6)
        assert fit.amplitude == pytest.approx(0.5, rel=1e-6)
        assert fit.phase == pytest.approx(1.1, abs=1e-6)
        assert fit.slope == pytest.approx(0.03, abs=1e-6)
        assert not fit.frequency_fixed

    def test_noisy_frequency_recovery(self):
        rng = np.random.default_rng(3)
        x = np.linspace(0, 6.0, 60)
        y = synthetic(x, 1.0, 4.2, -0.8, 0.5) + rng.normal(0, 0.05, x.size)
        fit = fit_sinusoid(x, y)
        assert fit.frequency == pytest.approx(4.2, rel=0.02)


class TestFringeHelpers:
    def test_fringe_phase_sign(self):
        # Simulated asymmetry cos(n*phi - phi_int) should report +phi_int.
        phi_int = 0.9
        x = np.linspace(0, 2 * np.pi, 33, endpoint=False)
        y = np.cos(3.0 * x - phi_int)
        fit = fit_sinusoid(x, y, frequency=3.0)
        assert fringe_phase(fit) == pytest.approx(phi_int, abs=1e-9)

    def test_visibility_anchors(self):
        x = np.linspace(0, 2 * np.pi, 33, endpoint=False)
        ideal = fit_sinusoid(x, np.cos(3.0 * x), frequency=3.0)
        v, dv = visibility(ideal)
        assert v == pytest.approx(1.0, abs=1e-10)
        rng = np.random.default_rng(5)
        flat = fit_sinusoid(x, rng.normal(0, 1e-3, x.size), frequency=3.0)
        v, dv = visibility(flat)
        assert v < 3.0 * dv + 1e-3
        frac = fit_sinusoid(x, 0.5 - 0.5 * np.cos(3.0 * x), frequency=3.0)
        v, _ = visibility(frac, kind="fraction")
        assert v == pytest.approx(1.0, abs=1e-10)


class TestScaleFactor:
    def test_exact_line(self):
        slope_true = 4831.7
        a = np.linspace(-1e-3, 1e-3, 9)
        records = [
            {"acceleration": float(ai), "phase": slope_true * ai, "phase_error": 0.0}
            for ai in a
        ]
        slope, err = extract_scale_factor(records)
        assert slope == pytest.approx(slope_true, rel=1e-12)
        assert err < 1e-6

    def test_formula_value_t10ms(self):
        k = 2.0 * np.pi / 780.24e-9
        assert 6.0 * k * (10e-3) ** 2 == pytest.approx(4.83e3, rel=2e-3)

    def test_weighting_beats_unweighted(self):
        # Two clusters with very different noise; inverse-variance weights
        # should shrink the sampling spread of the slope roughly twofold.
        rng = np.random.default_rng(11)
        a = np.concatenate([np.linspace(-1, 1, 6), np.linspace(-1, 1, 6)])
        sig = np.concatenate([np.full(6, 0.05), np.full(6, 0.5)])
        slopes_w, slopes_u = [], []
        for _ in range(400):
            phi = 2.0 * a + rng.normal(0, sig)
            rec_w = [
                {"acceleration": ai, "phase": pi, "phase_error": si}
                for ai, pi, si in zip(a, phi, sig)
            ]
            rec_u = [
                {"acceleration": ai, "phase": pi} for ai, pi in zip(a, phi)
            ]
            slopes_w.append(extract_scale_factor(rec_w)[0])
            slopes_u.append(extract_scale_factor(rec_u)[0])
        assert np.std(slopes_w) < 0.6 * np.std(slopes_u)

    def test_sign_symmetry(self):
        rng = np.random.default_rng(2)
        a = np.linspace(-1, 1, 7)
        phi = 3.3 * a + rng.normal(0, 0.01, 7)
        rec = [{"acceleration": x, "phase": p, "phase_error": 0.01} for x, p in zip(a, phi)]
        flipped = [
            {"acceleration": -x, "phase": -p, "phase_error": 0.01} for x, p in zip(a, phi)
        ]
        assert extract_scale_factor(rec)[0] == pytest.approx(
            extract_scale_factor(flipped)[0], rel=1e-12
        )

    def test_degenerate_design(self):
        rec = [{"acceleration": 1.0, "phase": 0.1, "phase_error": 0.1}] * 4
        with pytest.raises(FitError):
            extract_scale_factor(rec)


def make_chirp_dataset(t_interr, center, alphas, slope=0.0):
    omega = 3.0 * t_interr**2
    frac = 0.5 - 0.5 * np.cos(omega * (alphas - center)) + slope * (alphas - alphas[0])
    return FringeDataset(
        scan_name="chirp_rate",
        scan_values=alphas,
        values=np.clip(frac, 0, 1),
        kind="fraction",
        metadata={"interrogation_time_s": t_interr},
    )


class TestCentralFringe:
    K = 2.0 * np.pi / 780.2412097e-9

    def test_recovers_gravity(self):
        g = 9.79674
        center = 2.0 * self.K * g
        alphas = np.linspace(center - 3e5, center + 3e5, 161)
        datasets = [
            make_chirp_dataset(t, center, alphas) for t in (5e-3, 7.5e-3, 10e-3)
        ]
        result = find_central_fringe(datasets, self.K)
        assert result["gravity"] == pytest.approx(g, abs=1e-6)
        assert result["gravity_spread"] < 1e-6

    def test_single_dataset_rejected(self):
        center = 2.0 * self.K * 9.8
        alphas = np.linspace(center - 3e5, center + 3e5, 101)
        with pytest.raises(FitError):
            find_central_fringe([make_chirp_dataset(5e-3, center, alphas)], self.K)

    def test_linear_trend_shifts_small_t_more(self):
        # Ignoring an injected linear offset biases the imputed center more
        # at short interrogation times.
        g = 9.79674
        center = 2.0 * self.K * g
        alphas = np.linspace(center - 3e5, center + 3e5, 161)
        shifts = {}
        for t in (5e-3, 10e-3):
            ds = make_chirp_dataset(t, center, alphas, slope=2.5e-7)
            fit_centers = {}
            for with_trend in (True, False):
                res = find_central_fringe(
                    [ds, make_chirp_dataset(t, center, alphas, slope=2.5e-7)],
                    self.K,
                    fit_slope=with_trend,
                )
                fit_centers[with_trend] = res["chirp_center"]
            shifts[t] = abs(fit_centers[False] - fit_centers[True])
        assert shifts[5e-3] > shifts[10e-3]
