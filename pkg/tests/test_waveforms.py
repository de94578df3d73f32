import json

import numpy as np
import pytest

from bragg_forge.waveforms import (
    CSV_HEADER,
    PulseWaveform,
    QuadratureControls,
    WaveformFormatError,
    band_limit_spectral,
    band_projection_matrix,
    deserialize,
    enforce_bounds,
    gaussian_pulse,
    serialize,
    sinc_filter,
    sine_integral_kernel,
    two_level_area,
    write_csv,
)

CUTOFF = 2.0 * np.pi * 80e3


def random_waveform(rng, n=24, dt=1e-6, rabi_max=2.5e5, detuning_max=1.3e6):
    rabi = rng.uniform(0.0, rabi_max, n)
    rabi[0] = rabi[-1] = 0.0
    return PulseWaveform(
        dt=dt,
        rabi=rabi,
        phase=rng.uniform(-np.pi, np.pi, n),
        detuning=rng.uniform(-detuning_max, detuning_max, n),
        rabi_max=rabi_max,
        detuning_max=detuning_max,
    )


class TestGaussianPulse:
    def test_center_and_two_sigma_values(self):
        # Odd segment count puts one sample exactly on the envelope peak.
        wf = gaussian_pulse(1.0, sigma=25e-6, duration=221e-6, dt=1e-6)
        mid = wf.n_segments // 2
        assert wf.rabi[mid] == pytest.approx(1.0, abs=1e-12)
        # Samples 50 us (= 2 sigma) either side of the peak sit at 1/e.
        assert wf.rabi[mid + 50] == pytest.approx(np.exp(-1.0), rel=1e-12)
        assert wf.rabi[mid - 50] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_paper_grid(self):
        wf = gaussian_pulse(2.0 * np.pi * 40e3, 25e-6, 220e-6, 1e-6)
        assert wf.n_segments == 220
        assert wf.rabi[0] == 0.0 and wf.rabi[-1] == 0.0

    def test_even_about_midpoint(self):
        wf = gaussian_pulse(1.0, 20e-6, 220e-6, 1e-6)
        interior = wf.rabi[1:-1]
        assert np.allclose(interior, interior[::-1], rtol=0, atol=1e-12)

    def test_rejects_bad_sigma_and_grid(self):
        with pytest.raises(ValueError):
            gaussian_pulse(1.0, -1e-6, 100e-6, 1e-6)
        with pytest.raises(ValueError):
            gaussian_pulse(1.0, 10e-6, 100.5e-6, 1e-6)


class TestWaveformInvariants:
    def test_requires_zero_endpoints(self):
        with pytest.raises(ValueError):
            PulseWaveform(dt=1e-6, rabi=[1.0, 1.0], phase=[0, 0], detuning=[0, 0])

    def test_rejects_amplitude_over_bound(self):
        with pytest.raises(ValueError):
            PulseWaveform(
                dt=1e-6, rabi=[0, 2.0, 0], phase=[0] * 3, detuning=[0] * 3, rabi_max=1.0
            )

    def test_area_convention(self):
        wf = PulseWaveform(
            dt=0.5, rabi=[0, 1.0, 1.0, 0], phase=[0] * 4, detuning=[0] * 4
        )
        assert two_level_area(wf) == pytest.approx(2.0)

    def test_quadrature_round_trip(self):
        rng = np.random.default_rng(5)
        wf = random_waveform(rng)
        back = QuadratureControls.from_waveform(wf).to_waveform()
        assert np.allclose(back.rabi, wf.rabi, atol=1e-9)
        # Phase agreement is modulo 2*pi wherever the amplitude is nonzero.
        nz = wf.rabi > 0
        dphi = (back.phase[nz] - wf.phase[nz] + np.pi) % (2 * np.pi) - np.pi
        assert np.max(np.abs(dphi)) < 1e-9


class TestSincFilter:
    def test_linearity(self):
        rng = np.random.default_rng(11)
        n, dt = 180, 1e-6
        a = QuadratureControls(dt, rng.normal(size=n), rng.normal(size=n), rng.normal(size=n))
        b = QuadratureControls(dt, rng.normal(size=n), rng.normal(size=n), rng.normal(size=n))
        for method in ("spectral", "sine-integral"):
            combo = QuadratureControls(
                dt,
                2.0 * a.in_phase - 0.5 * b.in_phase,
                2.0 * a.quadrature - 0.5 * b.quadrature,
                2.0 * a.detuning - 0.5 * b.detuning,
            )
            fa = sinc_filter(a, CUTOFF, method)
            fb = sinc_filter(b, CUTOFF, method)
            fc = sinc_filter(combo, CUTOFF, method)
            for ch in ("in_phase", "quadrature", "detuning"):
                lhs = getattr(fc, ch)
                rhs = 2.0 * getattr(fa, ch) - 0.5 * getattr(fb, ch)
                assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1.0, np.max(np.abs(rhs)))

    def test_spectral_contract(self):
        # DFT magnitude above 1.25x cutoff is at most -60 dB of the peak.
        rng = np.random.default_rng(13)
        n, dt = 220, 1e-6
        omega = 2.0 * np.pi * np.fft.rfftfreq(n, dt)
        for _ in range(25):
            x = rng.uniform(-1.0, 1.0, n)
            y = band_limit_spectral(x, dt, CUTOFF)
            spec = np.abs(np.fft.rfft(y))
            assert spec[omega >= 1.25 * CUTOFF].max() <= 1e-3 * spec.max()

    def test_constant_channel_interior_preserved(self):
        # Closed-form sinc-vs-boxcar integral: interior flat within 2%,
        # edge roll-off to about one half.
        n, dt = 220, 1e-6
        kernel = sine_integral_kernel(n, dt, CUTOFF)
        filtered = kernel @ np.ones(n)
        third = n // 3
        assert np.max(np.abs(filtered[third:-third] - 1.0)) < 0.02
        assert 0.4 < filtered[0] < 0.7

    def test_tone_above_cutoff_suppressed(self):
        n, dt = 220, 1e-6
        t = (np.arange(n) + 0.5) * dt
        tone = np.cos(2.0 * CUTOFF * t)
        for method in ("spectral", "sine-integral"):
            out = sinc_filter(
                QuadratureControls(dt, tone, np.zeros(n), np.zeros(n)), CUTOFF, method
            ).in_phase
            sl = slice(30, n - 30)
            c, s = np.cos(2.0 * CUTOFF * t[sl]), np.sin(2.0 * CUTOFF * t[sl])
            amp = np.hypot(c @ out[sl], s @ out[sl]) / (c @ c)
            assert amp < 1e-3  # >= 60 dB down

    def test_tone_in_band_preserved(self):
        n, dt = 220, 1e-6
        t = (np.arange(n) + 0.5) * dt
        tone = np.cos(0.25 * CUTOFF * t)
        for method in ("spectral", "sine-integral"):
            out = sinc_filter(
                QuadratureControls(dt, tone, np.zeros(n), np.zeros(n)), CUTOFF, method
            ).in_phase
            sl = slice(30, n - 30)
            c, s = np.cos(0.25 * CUTOFF * t[sl]), np.sin(0.25 * CUTOFF * t[sl])
            amp = np.hypot(c @ out[sl], s @ out[sl]) / (c @ c)
            assert amp == pytest.approx(1.0, abs=0.01)


class TestBandProjection:
    def test_projector_properties(self):
        p = band_projection_matrix(160, 1e-6, CUTOFF, zero_endpoints=True)
        assert np.max(np.abs(p @ p - p)) < 1e-12
        assert np.max(np.abs(p - p.T)) < 1e-12
        rng = np.random.default_rng(2)
        v = p @ rng.normal(size=160)
        assert abs(v[0]) < 1e-12 and abs(v[-1]) < 1e-12
        spec = np.abs(np.fft.rfft(v))
        omega = 2.0 * np.pi * np.fft.rfftfreq(160, 1e-6)
        assert spec[omega > CUTOFF].max() < 1e-12 * max(spec.max(), 1e-30)

    def test_band_limited_vectors_are_fixed_points(self):
        n, dt = 128, 1e-6
        p = band_projection_matrix(n, dt, CUTOFF)
        t = np.arange(n) * dt
        x = 1.5 + np.cos(2 * np.pi * 20e3 * t + 0.3)  # well inside the band
        # In-band DFT modes of the window are reproduced exactly only for
        # exact bin frequencies; use one.
        f_bin = np.fft.rfftfreq(n, dt)[3]
        x = np.cos(2 * np.pi * f_bin * t + 0.7)
        assert np.max(np.abs(p @ x - x)) < 1e-10


class TestEnforceBounds:
    def test_clipping_and_idempotence(self):
        wf = PulseWaveform(
            dt=1e-6,
            rabi=[0.0, 3.0, 1.0, 0.5, 0.0],
            phase=[0.0] * 5,
            detuning=[0.0, 5.0, -5.0, 0.2, 0.0],
        )
        bounded = enforce_bounds(wf, rabi_max=2.0, detuning_max=1.0)
        assert bounded.rabi.max() == 2.0
        assert bounded.detuning.min() == -1.0 and bounded.detuning.max() == 1.0
        again = enforce_bounds(bounded, rabi_max=2.0, detuning_max=1.0)
        assert np.array_equal(again.rabi, bounded.rabi)
        assert np.array_equal(again.detuning, bounded.detuning)

    def test_feasible_waveform_unchanged(self):
        rng = np.random.default_rng(8)
        wf = random_waveform(rng)
        bounded = enforce_bounds(wf, wf.rabi_max, wf.detuning_max)
        assert np.array_equal(bounded.rabi, wf.rabi)
        assert np.array_equal(bounded.detuning, wf.detuning)

    def test_never_increases_sup_norm(self):
        rng = np.random.default_rng(9)
        wf = random_waveform(rng)
        bounded = enforce_bounds(wf, wf.rabi_max / 3, wf.detuning_max / 2)
        assert bounded.rabi.max() <= wf.rabi.max()
        assert np.max(np.abs(bounded.detuning)) <= np.max(np.abs(wf.detuning))


class TestSerialization:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(21)
        wf = random_waveform(rng, n=37)
        back = deserialize(serialize(wf))
        assert back.dt == wf.dt
        assert np.array_equal(back.rabi, wf.rabi)
        assert np.array_equal(back.phase, wf.phase)
        assert np.array_equal(back.detuning, wf.detuning)
        assert back.rabi_max == wf.rabi_max
        assert back.label == wf.label

    def test_missing_dt(self):
        doc = json.loads(serialize(random_waveform(np.random.default_rng(1))))
        del doc["dt"]
        with pytest.raises(WaveformFormatError, match="missing field: dt"):
            deserialize(json.dumps(doc))

    def test_missing_segment_field(self):
        doc = json.loads(serialize(random_waveform(np.random.default_rng(1))))
        del doc["segments"][2]["phase"]
        with pytest.raises(WaveformFormatError, match=r"segments\[2\].phase"):
            deserialize(json.dumps(doc))

    def test_parse_error_carries_line(self):
        with pytest.raises(WaveformFormatError, match="line"):
            deserialize('{"schema": "bragg-forge/waveform/v1",\n  "dt": }')

    def test_csv_export(self, tmp_path):
        wf = random_waveform(np.random.default_rng(3), n=5)
        path = tmp_path / "wf.csv"
        write_csv(wf, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == CSV_HEADER
        assert len(lines) == 6
        t0, r0, p0, d0 = (float(x) for x in lines[1].split(","))
        assert t0 == 0.0 and r0 == wf.rabi[0]
