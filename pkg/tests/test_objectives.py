import numpy as np
import pytest

from bragg_forge.core import BlochBasis, resonant_detuning, rubidium87
from bragg_forge.dynamics import pulse_propagator
from bragg_forge.objectives import (
    NoiseEnsemble,
    NoiseSample,
    beamsplitter_cost,
    beamsplitter_fringe,
    contour_width,
    ensemble_mirror_cost,
    fidelity_landscape,
    mirror_cost,
    sample_ensemble,
    subspace_projector,
    target_unitary,
    waveform_mean_phase,
    write_landscape_csv,
    _mirror_costs,
)
from bragg_forge.waveforms import PulseWaveform, gaussian_pulse

SPECIES = rubidium87()
BASIS3 = BlochBasis.for_order(3)


def two_level_bs_waveform(phase=0.0):
    # Constant resonant coupling, rotation pi/2 (integral of rabi = pi/4).
    n, dt = 10, 1e-6
    rabi = np.zeros(n)
    rabi[1:-1] = (np.pi / 4.0) / ((n - 2) * dt)
    return PulseWaveform(
        dt=dt,
        rabi=rabi,
        phase=np.full(n, phase),
        detuning=np.full(n, resonant_detuning(1, 0.0, SPECIES)),
        order=1,
    )


class TestSampleEnsemble:
    def test_degenerate_distributions(self):
        ens = sample_ensemble(0.0, 0.0, 0.0, size=5, seed=1)
        assert np.all(ens.momentum_detunings == 0.0)
        assert np.all(ens.amplitude_errors == 0.0)

    def test_reproducible(self):
        a = sample_ensemble(0.15, -0.15, 0.15, size=64, seed=42)
        b = sample_ensemble(0.15, -0.15, 0.15, size=64, seed=42)
        assert np.array_equal(a.momentum_detunings, b.momentum_detunings)
        assert np.array_equal(a.amplitude_errors, b.amplitude_errors)

    def test_law_of_large_numbers(self):
        n = 10**5
        ens = sample_ensemble(0.15, -0.15, 0.15, size=n, seed=3)
        assert abs(ens.momentum_detunings.mean()) < 3.0 * 0.15 / np.sqrt(n)
        betas = ens.amplitude_errors
        assert betas.shape == (n, 3)
        assert betas.min() >= -0.15 and betas.max() <= 0.15

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_ensemble(0.1, 0.2, -0.2, size=4, seed=0)
        with pytest.raises(ValueError):
            sample_ensemble(0.1, 0.0, 0.1, size=0, seed=0)
        with pytest.raises(ValueError):
            NoiseSample(0.0, (0.0, -1.5, 0.0))


class TestTargetAndProjector:
    def test_target_squares_to_minus_identity_on_arms(self):
        u = target_unitary(BASIS3, 3)
        i0, i3 = BASIS3.arm_indices
        block = (u @ u)[np.ix_([i0, i3], [i0, i3])]
        assert np.allclose(block, -np.eye(2))

    def test_target_is_unitary(self):
        u = target_unitary(BASIS3, 3)
        assert np.allclose(u.conj().T @ u, np.eye(BASIS3.dim), atol=1e-15)

    def test_arm_row_structure(self):
        u = target_unitary(BASIS3, 3)
        i0, i3 = BASIS3.arm_indices
        row = u[i0]
        assert row[i3] == -1.0j
        assert np.count_nonzero(row) == 1

    def test_projector_properties(self):
        p = subspace_projector(BASIS3, 3)
        assert np.allclose(p @ p, p)
        assert np.trace(p).real == pytest.approx(2.0)
        rng = np.random.default_rng(0)
        v = rng.normal(size=BASIS3.dim)
        pv = p @ v
        i0, i3 = BASIS3.arm_indices
        keep = np.zeros(BASIS3.dim)
        keep[[i0, i3]] = v[[i0, i3]]
        assert np.allclose(pv.real, keep)


class TestMirrorCost:
    def test_anchor_values(self):
        tgt = target_unitary(BASIS3, 3)
        assert mirror_cost(tgt, BASIS3, 3) == pytest.approx(0.0, abs=1e-14)
        assert mirror_cost(np.eye(BASIS3.dim, dtype=complex), BASIS3, 3) == pytest.approx(1.0)

    def test_global_phase_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(BASIS3.dim, BASIS3.dim)) + 1j * rng.normal(
            size=(BASIS3.dim, BASIS3.dim)
        )
        u, _ = np.linalg.qr(z)
        for theta in (0.3, 1.2, -2.8):
            assert mirror_cost(np.exp(1j * theta) * u, BASIS3, 3) == pytest.approx(
                mirror_cost(u, BASIS3, 3), abs=1e-14
            )

    def test_bounded_on_random_unitaries(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = rng.normal(size=(BASIS3.dim, BASIS3.dim)) + 1j * rng.normal(
                size=(BASIS3.dim, BASIS3.dim)
            )
            u, _ = np.linalg.qr(z)
            c = mirror_cost(u, BASIS3, 3)
            assert -1e-12 <= c <= 1.0 + 1e-12

    def test_literal_variant_worked_value(self):
        basis = BlochBasis(order=1, m_min=0, m_max=1)
        proper_swap = np.array([[0, -1j], [-1j, 0]])
        cost = _mirror_costs(proper_swap[None], basis, 1, literal=True)[0]
        assert cost == pytest.approx(0.5, abs=1e-12)


class TestEnsembleMirrorCost:
    def gaussian_mirror(self, scale=1.0):
        return gaussian_pulse(
            scale * 2.0 * np.pi * 44.8e3, 25e-6, 220e-6, 1e-6,
            detuning=resonant_detuning(3, 0.0, SPECIES), order=3,
        )

    def test_single_zero_noise_sample_matches_single_cost(self):
        wf = self.gaussian_mirror()
        ens = sample_ensemble(0.0, 0.0, 0.0, size=1, seed=0)
        u = pulse_propagator(wf, 0.0, 0.0, BASIS3, SPECIES)
        assert ensemble_mirror_cost(wf, ens, BASIS3, SPECIES) == pytest.approx(
            mirror_cost(u, BASIS3, 3), abs=1e-12
        )

    def test_duplicated_samples_and_permutation(self):
        wf = self.gaussian_mirror()
        base = sample_ensemble(0.15, -0.15, 0.15, size=8, seed=5)
        doubled = NoiseEnsemble(
            samples=base.samples + base.samples,
            sigma_p=0.15, beta_min=-0.15, beta_max=0.15,
        )
        shuffled = NoiseEnsemble(
            samples=base.samples[::-1],
            sigma_p=0.15, beta_min=-0.15, beta_max=0.15,
        )
        c0 = ensemble_mirror_cost(wf, base, BASIS3, SPECIES)
        assert ensemble_mirror_cost(wf, doubled, BASIS3, SPECIES) == pytest.approx(c0, abs=1e-12)
        assert ensemble_mirror_cost(wf, shuffled, BASIS3, SPECIES) == pytest.approx(c0, abs=1e-12)

    def test_calibrated_beats_miscalibrated(self):
        ens = sample_ensemble(0.15, -0.15, 0.15, size=32, seed=9)
        good = ensemble_mirror_cost(self.gaussian_mirror(), ens, BASIS3, SPECIES)
        bad = ensemble_mirror_cost(self.gaussian_mirror(0.5), ens, BASIS3, SPECIES)
        assert good < bad


class TestBeamsplitterCost:
    def test_ideal_two_level_pair_costs_zero(self):
        basis = BlochBasis(order=1, m_min=0, m_max=1)
        ens = sample_ensemble(0.0, 0.0, 0.0, size=1, seed=0)
        cost = beamsplitter_cost(two_level_bs_waveform(), ens, basis, SPECIES)
        assert cost == pytest.approx(0.0, abs=1e-8)

    def test_zero_amplitude_is_maximal(self):
        basis = BlochBasis(order=1, m_min=0, m_max=1)
        wf = PulseWaveform(
            dt=1e-6, rabi=np.zeros(6), phase=np.zeros(6),
            detuning=np.full(6, resonant_detuning(1, 0.0, SPECIES)), order=1,
        )
        ens = sample_ensemble(0.0, 0.0, 0.0, size=1, seed=0)
        assert beamsplitter_cost(wf, ens, basis, SPECIES) == pytest.approx(1.0, abs=1e-12)

    def test_common_phase_invariance(self):
        basis = BlochBasis(order=1, m_min=0, m_max=1)
        ens = sample_ensemble(0.05, -0.1, 0.1, size=6, seed=7)
        base = two_level_bs_waveform(phase=0.2)
        c0 = beamsplitter_cost(base, ens, basis, SPECIES)
        for shift in (0.9, -2.3):
            c1 = beamsplitter_cost(base.with_phase_offset(shift), ens, basis, SPECIES)
            assert c1 == pytest.approx(c0, abs=1e-10)

    def test_grid_size_validated(self):
        basis = BlochBasis(order=1, m_min=0, m_max=1)
        ens = sample_ensemble(0.0, 0.0, 0.0, size=1, seed=0)
        with pytest.raises(ValueError):
            beamsplitter_cost(two_level_bs_waveform(), ens, basis, SPECIES, phase_grid_size=4)

    def test_mean_phase_tracks_common_offset(self):
        wf = two_level_bs_waveform(phase=0.3)
        p0 = waveform_mean_phase(wf)
        p1 = waveform_mean_phase(wf.with_phase_offset(0.7))
        assert p1 - p0 == pytest.approx(0.7, abs=1e-12)


class TestFidelityLandscape:
    def test_zero_amplitude_landscape_is_zero(self):
        wf = PulseWaveform(
            dt=1e-6, rabi=np.zeros(4), phase=np.zeros(4),
            detuning=np.full(4, resonant_detuning(3, 0.0, SPECIES)), order=3,
        )
        grid = fidelity_landscape(wf, np.linspace(-0.2, 0.2, 3),
                                  np.linspace(-0.1, 0.1, 3), BASIS3, SPECIES)
        assert np.all(grid == 0.0)

    def test_center_matches_single_evaluation(self):
        from bragg_forge.dynamics import state_transfer_fidelity

        wf = gaussian_pulse(
            2.0 * np.pi * 44.8e3, 25e-6, 220e-6, 1e-6,
            detuning=resonant_detuning(3, 0.0, SPECIES), order=3,
        )
        dp = np.array([-0.1, 0.0, 0.1])
        beta = np.array([-0.05, 0.0, 0.05])
        grid = fidelity_landscape(wf, dp, beta, BASIS3, SPECIES)
        u = pulse_propagator(wf, 0.0, 0.0, BASIS3, SPECIES)
        assert grid[1, 1] == pytest.approx(state_transfer_fidelity(u, 0, 3), abs=1e-12)
        assert np.all((grid >= 0.0) & (grid <= 1.0))

    def test_monotone_grids_required(self):
        wf = gaussian_pulse(1e4, 25e-6, 100e-6, 1e-6, order=3)
        with pytest.raises(ValueError):
            fidelity_landscape(wf, np.array([0.1, -0.1]), np.array([0.0]), BASIS3, SPECIES)


class TestContourWidth:
    def test_triangular_profile(self):
        x = np.linspace(-1.0, 1.0, 201)
        profile = np.clip(1.0 - np.abs(x), 0.0, None)
        # profile >= 0.9 for |x| <= 0.1
        assert contour_width(x, profile, 0.9) == pytest.approx(0.2, abs=1e-9)

    def test_peak_below_level(self):
        x = np.linspace(-1.0, 1.0, 11)
        assert contour_width(x, np.full(11, 0.5), 0.9) == 0.0

    def test_clipped_at_grid_edges(self):
        x = np.linspace(-1.0, 1.0, 11)
        assert contour_width(x, np.ones(11), 0.9) == pytest.approx(2.0)


def test_landscape_csv(tmp_path):
    path = tmp_path / "grid.csv"
    write_landscape_csv(
        path, np.array([-0.1, 0.0, 0.1]), np.array([-0.2, 0.2]),
        np.arange(6, dtype=float).reshape(2, 3),
    )
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 3
    assert lines[0].startswith("beta/delta_p,")
    assert [float(v) for v in lines[1].split(",")] == [-0.2, 0.0, 1.0, 2.0]
