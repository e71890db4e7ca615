import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from synthpi.constraints import ConstraintSystem, from_options, materialize
from synthpi.estimator import fit
from synthpi.exceptions import ConfigError, QregCrossingWarning, ZeroDonorVarianceError
from synthpi.panel import PanelData, apply_missing_rules, build_matrices
from synthpi.uncertainty import (
    InSampleModel,
    UncertaintyConfig,
    _variance_corrections,
    assemble_intervals,
    build_delta_star,
    compute_rho,
    estimate_u_moments,
    in_sample_bounds,
    leverage_diagonal,
    out_of_sample_bounds,
    prediction_intervals,
    quantile_loss_fit,
    rho_formula,
    sensitivity_analysis,
    sigma_and_qhat,
)

from conftest import make_panel


def pinball_loss(e, D, theta, q):
    r = e - D @ theta
    return float(np.sum(r * (q - (r < 0))))


def small_fit(seed=0, n_donors=3, spec="simplex", **panel_kwargs):
    panel = make_panel(n_donors=n_donors, seed=seed, **panel_kwargs)
    m = build_matrices(panel)
    return fit(m, spec)


class TestRho:
    def test_formula_iid(self):
        # C=1 and T0=e^2 gives sqrt(2)/e
        assert rho_formula(1.0, math.e**2, cointegrated=False) == pytest.approx(
            math.sqrt(2.0) / math.e, abs=1e-12
        )

    def test_formula_cointegrated(self):
        assert rho_formula(1.0, math.e**2, cointegrated=True) == pytest.approx(
            2.0 / math.e, abs=1e-12
        )

    def test_override_passthrough(self):
        res = small_fit()
        assert compute_rho(res.matrices, res, override=0.1) == 0.1

    def test_constant_c1_construction(self):
        res = small_fit(seed=3)
        m = res.matrices
        rho = compute_rho(m, res, choice="C1")
        sd_u = np.std(res.u_hat, ddof=1)
        sd_b = np.std(m.B, axis=0, ddof=1)
        expected = rho_formula(sd_u / sd_b.min(), m.dims.T0, False)
        assert rho == pytest.approx(expected, rel=1e-12)

    def test_c2_and_c3_variants(self):
        res = small_fit(seed=5)
        m = res.matrices
        sd_u = np.std(res.u_hat, ddof=1)
        sd_b = np.std(m.B, axis=0, ddof=1)
        c2 = sd_b.max() * sd_u / sd_b.min() ** 2
        assert compute_rho(m, res, choice="C2") == pytest.approx(
            rho_formula(c2, m.dims.T0, False), rel=1e-12
        )
        cov = [np.cov(m.B[:, j], res.u_hat, ddof=1)[0, 1] for j in range(3)]
        c3 = max(cov) / sd_b.min() ** 2
        if c3 > 0:
            assert compute_rho(m, res, choice="C3") == pytest.approx(
                rho_formula(c3, m.dims.T0, False), rel=1e-12
            )

    def test_zero_donor_variance(self):
        panel = make_panel(n_donors=2)
        values = {k: (1.0 if k[0] == "D1" else v) for k, v in panel.values.items()}
        flat = PanelData(values, "T", panel.donors, panel.pre_periods,
                         panel.post_periods, panel.features)
        m = build_matrices(flat)
        res = fit(m, "simplex")
        with pytest.raises(ZeroDonorVarianceError):
            compute_rho(m, res)


class TestDeltaStar:
    def test_binding_classification_by_hand(self):
        cs = materialize(from_options(name="simplex"), n_w=3)
        beta = np.array([0.5, 0.05, 0.45])
        ds, rho_j, binding = build_delta_star(cs, beta, rho=0.1)
        assert_allclose(rho_j, [0.1, 0.1, 0.1])  # sign-constraint gradients have l1 norm 1
        assert binding.tolist() == [False, True, False]
        # non-binding keeps the original bound: -delta_1 <= 0.5
        assert ds.ineq[0].rhs == pytest.approx(0.5)
        # binding keeps fitted slack: -delta_2 <= 0
        assert ds.ineq[1].rhs == pytest.approx(0.0)

    def test_ols_gives_unconstrained_delta(self):
        cs = materialize(from_options(name="ols"), n_w=4)
        ds, rho_j, binding = build_delta_star(cs, np.zeros(4), rho=0.1)
        assert ds.is_empty

    def test_delta_zero_always_feasible(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            spec = ["simplex", {"name": "lasso", "Q": 1.0}, {"name": "ridge", "Q": 0.9},
                    {"name": "L1-L2", "Q": 1.0, "Q2": 0.95}][trial % 4]
            res = small_fit(seed=trial, spec=spec)
            rho = 10.0 ** rng.uniform(-3, 0)
            ds, _, _ = build_delta_star(res.system, res.beta_hat, rho)
            assert ds.is_member(np.zeros(res.beta_hat.size), tol=1e-9)

    def test_ridge_norm_constraint_centered(self):
        res = small_fit(spec={"name": "ridge", "Q": 0.5})
        ds, _, binding = build_delta_star(res.system, res.beta_hat, rho=0.05)
        norm_con = ds.ineq[-1]
        assert norm_con.p == 2
        assert_allclose(norm_con.center, res.w_hat)


class TestUMoments:
    def test_mean_case_kronecker(self):
        res = small_fit(pre=(1, 2, 3), post=(4,), noise=0.5)
        res.u_hat = np.array([1.0, 2.0, 3.0])
        cfg = UncertaintyConfig(u_order=0, u_lags=0)
        e_u, v_u, w_star, sel, df, notes = estimate_u_moments(
            res.matrices, res, cfg, rho=0.01
        )
        assert_allclose(e_u, [2.0, 2.0, 2.0])

    def test_mean_case_two_features(self):
        panel = make_panel(features=("f1", "f2"), pre=(1, 2, 3), post=(4,))
        m = build_matrices(panel)
        res = fit(m, "simplex")
        res.u_hat = np.array([1.0, 2.0, 3.0, 10.0, 20.0, 30.0])
        cfg = UncertaintyConfig(u_order=0, u_lags=0)
        e_u, *_ = estimate_u_moments(m, res, cfg, rho=0.01)
        assert_allclose(e_u, [2.0, 2.0, 2.0, 20.0, 20.0, 20.0])

    def test_misspecification_off_forces_zero_mean(self):
        res = small_fit()
        cfg = UncertaintyConfig(u_missp=False, u_sigma="HC0")
        e_u, v_u, *_ = estimate_u_moments(res.matrices, res, cfg, rho=0.01)
        assert_allclose(e_u, 0.0)
        assert_allclose(v_u, res.u_hat**2)

    def test_regularized_weights_threshold(self):
        res = small_fit(weights=np.array([0.6, 0.3, 0.1]), noise=0.01)
        cfg = UncertaintyConfig()
        _, _, w_star, sel, *_ = estimate_u_moments(res.matrices, res, cfg, rho=0.2)
        assert set(sel.tolist()) <= {0, 1}
        assert np.all(w_star[w_star > 0] > 0.2)

    def test_hc1_arithmetic(self):
        panel = make_panel(pre=tuple(range(1, 32)), post=(40,))
        m = build_matrices(panel)
        vc = _variance_corrections(m, UncertaintyConfig(u_sigma="HC1"), df=4.0)
        assert_allclose(vc, np.full(31, 31.0 / 27.0), atol=1e-12)

    def test_hc0_is_one(self):
        panel = make_panel(pre=(1, 2, 3), post=(4,))
        m = build_matrices(panel)
        vc = _variance_corrections(m, UncertaintyConfig(u_sigma="HC0"), df=4.0)
        assert_allclose(vc, 1.0)

    def test_hc234_hand_arithmetic(self):
        # single donor, three periods: leverage is z_i^2 / sum(z^2)
        values = {}
        z = [1.0, 2.0, 3.0]
        for i, t in enumerate((1, 2, 3)):
            values[("T", t, "y")] = 0.5 * z[i]
            values[("D1", t, "y")] = z[i]
        values[("T", 4, "y")] = 1.0
        values[("D1", 4, "y")] = 1.0
        panel = PanelData(values, "T", ("D1",), (1, 2, 3), (4,), ("y",))
        m = build_matrices(panel)
        lev = np.array(z) ** 2 / 14.0
        assert_allclose(leverage_diagonal(m), lev, atol=1e-12)
        vc2 = _variance_corrections(m, UncertaintyConfig(u_sigma="HC2"), df=1.0)
        assert_allclose(vc2, 1.0 / (1.0 - lev), atol=1e-12)
        vc3 = _variance_corrections(m, UncertaintyConfig(u_sigma="HC3"), df=1.0)
        assert_allclose(vc3, 1.0 / (1.0 - lev) ** 2, atol=1e-12)
        delta = np.minimum(4.0, 3.0 * lev / 1.0)
        vc4 = _variance_corrections(m, UncertaintyConfig(u_sigma="HC4"), df=1.0)
        assert_allclose(vc4, 1.0 / (1.0 - lev) ** delta, atol=1e-12)

    def test_sigma_hat_psd(self):
        for seed in range(8):
            res = small_fit(seed=seed)
            cfg = UncertaintyConfig(u_sigma=["HC0", "HC1", "HC2", "HC3", "HC4"][seed % 5])
            _, v_u, *_ = estimate_u_moments(res.matrices, res, cfg, rho=0.05)
            sigma, _ = sigma_and_qhat(res.matrices, v_u)
            eig = np.linalg.eigvalsh(sigma)
            assert eig[0] >= -1e-10 * max(eig[-1], 1.0)

    def test_u_design_override(self):
        res = small_fit(pre=(1, 2, 3, 4), post=(5,))
        D = np.ones((4, 1))
        cfg = UncertaintyConfig(u_design=D)
        e_u, *_ = estimate_u_moments(res.matrices, res, cfg, rho=0.01)
        assert_allclose(e_u, np.mean(res.u_hat))


def disk_model(m, rho=0.05):
    d = m.dims.d
    return InSampleModel(
        rho=rho,
        rho_j=np.zeros(0),
        binding=np.zeros(0, dtype=bool),
        w_star=np.zeros(d),
        selected=np.arange(d),
        D_u=np.empty((0, 0)),
        e_u_hat=np.zeros(m.dims.T0),
        v_u_hat=np.zeros(m.dims.T0),
        sigma_hat=np.eye(d),
        qhat=np.eye(d),
        delta_star=ConstraintSystem(dim=d, n_w=d),
        df_used=1.0,
    )


def disk_panel(p_rows):
    """Two-donor panel whose post predictor rows equal the requested vectors."""
    values = {}
    pre = (1, 2, 3, 4)
    post = tuple(range(5, 5 + len(p_rows)))
    rng = np.random.default_rng(0)
    for t in pre:
        values[("T", t, "y")] = rng.normal()
        values[("D1", t, "y")] = rng.normal()
        values[("D2", t, "y")] = rng.normal()
    for i, t in enumerate(post):
        values[("T", t, "y")] = 0.0
        values[("D1", t, "y")] = p_rows[i][0]
        values[("D2", t, "y")] = p_rows[i][1]
    panel = PanelData(values, "T", ("D1", "D2"), pre, post, ("y",))
    return build_matrices(panel)


class TestInSampleBounds:
    def test_zero_sigma_gives_zero_bounds(self):
        m = disk_panel([(1.0, 0.0), (0.5, -0.5)])
        res = fit(m, "ols")
        model = disk_model(m)
        model.sigma_hat = np.zeros((2, 2))
        cfg = UncertaintyConfig(sims=20, seed=1)
        b = in_sample_bounds(m, res, cfg, model)
        assert_allclose(b.m1_l, 0.0, atol=1e-12)
        assert_allclose(b.m1_u, 0.0, atol=1e-12)

    def test_null_predictor_row_gives_zero(self):
        m = disk_panel([(0.0, 0.0), (1.0, 1.0)])
        res = fit(m, "ols")
        cfg = UncertaintyConfig(sims=10, seed=2)
        b = in_sample_bounds(m, res, cfg, disk_model(m))
        assert b.m1_l[0] == 0.0 and b.m1_u[0] == 0.0

    def test_disk_quantiles_match_hand_computation(self):
        p_rows = [(1.0, 0.0), (0.5, -0.5)]
        m = disk_panel(p_rows)
        res = fit(m, "ols")
        cfg = UncertaintyConfig(sims=2, seed=99, u_alpha=0.05)
        b = in_sample_bounds(m, res, cfg, disk_model(m))
        # reproduce the two draws and apply the closed-form disk extremes
        children = np.random.SeedSequence(99).spawn(2)
        draws = [np.random.default_rng(c).standard_normal(2) for c in children]
        for t, p in enumerate(p_rows):
            p = np.asarray(p)
            lows = sorted(float(p @ g) - np.linalg.norm(g) * np.linalg.norm(p) for g in draws)
            highs = sorted(float(p @ g) + np.linalg.norm(g) * np.linalg.norm(p) for g in draws)
            assert b.m1_l[t] == pytest.approx(np.quantile(lows, 0.025), abs=1e-9)
            assert b.m1_u[t] == pytest.approx(np.quantile(highs, 0.975), abs=1e-9)

    def test_quantile_monotonicity_zero_inside(self):
        for seed in range(5):
            res = small_fit(seed=seed)
            unc = prediction_intervals(res, UncertaintyConfig(sims=40, seed=seed))
            iv = unc.intervals
            assert np.all(iv.m1_l <= 1e-9)
            assert np.all(iv.m1_u >= -1e-9)

    def test_joint_dominates_per_period(self):
        res = small_fit(seed=7, post=(9, 10, 11))
        unc = prediction_intervals(
            res, UncertaintyConfig(sims=60, seed=3, joint=True, L=3)
        )
        iv = unc.intervals
        assert iv.joint.m1_l <= np.min(iv.m1_l) + 1e-12
        assert iv.joint.m1_u >= np.max(iv.m1_u) - 1e-12

    def test_seed_determinism_across_cores(self):
        res = small_fit(seed=11)
        a = prediction_intervals(res, UncertaintyConfig(sims=30, seed=5, cores=1))
        b = prediction_intervals(res, UncertaintyConfig(sims=30, seed=5, cores=3))
        assert np.array_equal(a.intervals.lower, b.intervals.lower)
        assert np.array_equal(a.intervals.upper, b.intervals.upper)

    def test_epsilon_adjustment_for_ridge(self):
        res = small_fit(seed=2, spec={"name": "ridge", "Q": 0.6})
        base = prediction_intervals(
            res, UncertaintyConfig(sims=30, seed=9, epsilon_per_period=False)
        )
        adj = prediction_intervals(
            res, UncertaintyConfig(sims=30, seed=9, epsilon_per_period=True)
        )
        eps = np.asarray(base.diagnostics["epsilon"])
        assert np.all(eps > 0)
        assert_allclose(adj.intervals.m1_l, base.intervals.m1_l - eps, atol=1e-12)
        assert_allclose(adj.intervals.m1_u, base.intervals.m1_u + eps, atol=1e-12)


class TestOutOfSample:
    def worked_fit(self, residuals):
        res = small_fit(pre=tuple(range(1, len(residuals) + 1)), post=(99,))
        res.u_hat = np.asarray(residuals, dtype=float)
        return res

    def test_gaussian_worked_example(self):
        res = self.worked_fit([1.0, 2.0, 3.0, 4.0])
        cfg = UncertaintyConfig(e_order=0, e_lags=0, e_alpha=0.05)
        b = out_of_sample_bounds(res.matrices, res, cfg, selected=np.array([], int))
        half = math.sqrt(2.0 * (5.0 / 3.0) * math.log(40.0))
        assert b.m2_l[0] == pytest.approx(2.5 - half, abs=1e-3)
        assert b.m2_u[0] == pytest.approx(2.5 + half, abs=1e-3)
        assert b.m2_u[0] - 2.5 == pytest.approx(3.5066, abs=1e-3)

    def test_zero_variance_collapses(self):
        res = self.worked_fit([2.0, 2.0, 2.0, 2.0])
        cfg = UncertaintyConfig(e_order=0, e_lags=0)
        b = out_of_sample_bounds(res.matrices, res, cfg, selected=np.array([], int))
        assert b.m2_l[0] == pytest.approx(2.0)
        assert b.m2_u[0] == pytest.approx(2.0)

    def test_joint_widening_ratio(self):
        res = small_fit(pre=tuple(range(1, 21)), post=tuple(range(30, 43)), seed=1)
        cfg = UncertaintyConfig(e_order=0, e_lags=0, e_alpha=0.05, joint=True, L=13)
        b = out_of_sample_bounds(res.matrices, res, cfg, selected=np.array([], int))
        half = b.m2_u - b.e_mean_post
        half_joint = b.joint_m2_u - b.e_mean_post
        ratio = half_joint[0] / half[0]
        assert ratio == pytest.approx(math.sqrt(math.log(520.0) / math.log(40.0)), abs=1e-12)
        assert ratio == pytest.approx(1.302, abs=1e-3)

    def test_gaussian_alpha_monotonicity_exact_ratio(self):
        res = self.worked_fit([1.0, 2.0, 3.0, 4.0])
        halves = {}
        for a2 in (0.05, 0.01):
            cfg = UncertaintyConfig(e_order=0, e_lags=0, e_alpha=a2)
            b = out_of_sample_bounds(res.matrices, res, cfg, selected=np.array([], int))
            halves[a2] = float(b.m2_u[0] - b.e_mean_post[0])
        expected = math.sqrt(math.log(2 / 0.01) / math.log(2 / 0.05))
        assert halves[0.01] / halves[0.05] == pytest.approx(expected, rel=1e-12)

    def test_ls_method_quantiles(self):
        e = np.array([1.0, 2.0, 3.0, 4.0])
        res = self.worked_fit(e)
        cfg = UncertaintyConfig(e_order=0, e_lags=0, e_method="ls", e_alpha=0.10)
        b = out_of_sample_bounds(res.matrices, res, cfg, selected=np.array([], int))
        sd = math.sqrt(5.0 / 3.0)
        eps = (e - 2.5) / sd
        assert b.m2_l[0] == pytest.approx(2.5 + sd * np.quantile(eps, 0.05), rel=1e-12)
        assert b.m2_u[0] == pytest.approx(2.5 + sd * np.quantile(eps, 0.95), rel=1e-12)

    def test_qreg_beats_reference_on_pinball_loss(self):
        rng = np.random.default_rng(3)
        n = 60
        x = rng.uniform(0.5, 2.0, n)
        D = np.column_stack([np.ones(n), x])
        e = 1.0 + 0.5 * x + x * rng.normal(0, 0.3, n)
        for q in (0.1, 0.9):
            theta = quantile_loss_fit(D, e, q)
            loss = pinball_loss(e, D, theta, q)
            for _ in range(25):
                perturbed = theta + rng.normal(0, 0.05, 2)
                assert loss <= pinball_loss(e, D, perturbed, q) + 1e-6

    def test_qreg_end_to_end_orders_bounds(self):
        res = small_fit(seed=13, pre=tuple(range(1, 25)), post=(30, 31))
        cfg = UncertaintyConfig(e_method="qreg", e_order=1, e_lags=0)
        b = out_of_sample_bounds(res.matrices, res, cfg, selected=np.array([0, 1], int))
        assert np.all(b.m2_u >= b.m2_l)

    def test_unavailable_periods_propagate_nan(self):
        panel = make_panel(missing=[("D2", 9, "y")])
        panel, _ = apply_missing_rules(panel)
        m = build_matrices(panel)
        res = fit(m, "simplex")
        cfg = UncertaintyConfig(e_order=0, e_lags=0)
        b = out_of_sample_bounds(m, res, cfg, selected=np.array([], int))
        assert np.isnan(b.m2_l[0]) and not np.isnan(b.m2_l[1])


class TestAssembly:
    def test_degenerate_bounds_collapse_to_tau(self):
        res = small_fit(seed=1)
        unc = prediction_intervals(res, UncertaintyConfig(sims=10, seed=1))
        iv = unc.intervals
        from synthpi.uncertainty import InSampleBounds, OutOfSampleBounds

        T1 = res.matrices.dims.T1
        zero_in = InSampleBounds(
            m1_l=np.zeros(T1), m1_u=np.zeros(T1), joint_l=None, joint_u=None,
            dropped_draws=0, cone_calls=0, epsilon=np.zeros(T1),
        )
        zero_out = OutOfSampleBounds(
            m2_l=np.zeros(T1), m2_u=np.zeros(T1), joint_m2_l=None, joint_m2_u=None,
            e_mean_post=np.zeros(T1), e_sd_post=np.zeros(T1), notes=(),
        )
        cfg = UncertaintyConfig()
        out = assemble_intervals(res, zero_in, zero_out, cfg)
        assert_allclose(out.lower, res.tau_hat)
        assert_allclose(out.upper, res.tau_hat)

    def test_override_bounds_assembly(self):
        res = small_fit(seed=1)
        T1 = res.matrices.dims.T1
        from synthpi.uncertainty import InSampleBounds, OutOfSampleBounds

        insample = InSampleBounds(
            m1_l=np.full(T1, np.nan), m1_u=np.full(T1, np.nan), joint_l=None,
            joint_u=None, dropped_draws=0, cone_calls=0, epsilon=np.zeros(T1),
        )
        outsample = OutOfSampleBounds(
            m2_l=np.full(T1, -2.0), m2_u=np.full(T1, 2.0), joint_m2_l=None,
            joint_m2_u=None, e_mean_post=np.zeros(T1), e_sd_post=np.ones(T1), notes=(),
        )
        cfg = UncertaintyConfig(
            w_bounds=np.column_stack([np.full(T1, -1.0), np.full(T1, 1.0)])
        )
        out = assemble_intervals(res, insample, outsample, cfg)
        assert_allclose(out.lower, res.tau_hat - 3.0)
        assert_allclose(out.upper, res.tau_hat + 3.0)

    def test_joint_reduces_to_per_period_at_l1(self):
        res = small_fit(seed=4, post=(9, 10, 11))
        unc = prediction_intervals(
            res, UncertaintyConfig(sims=50, seed=2, joint=True, L=1)
        )
        iv = unc.intervals
        assert iv.joint.horizon == 1
        assert iv.joint.lower[0] == pytest.approx(iv.lower[0], rel=1e-12)
        assert iv.joint.upper[0] == pytest.approx(iv.upper[0], rel=1e-12)

    def test_joint_requires_gaussian(self):
        res = small_fit(seed=4)
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(sims=10, joint=True, e_method="ls"))

    def test_coverage_label(self):
        res = small_fit(seed=4)
        unc = prediction_intervals(
            res, UncertaintyConfig(sims=10, seed=1, u_alpha=0.05, e_alpha=0.05)
        )
        assert unc.intervals.coverage_label == pytest.approx(0.90)


class TestSensitivity:
    def make_result(self):
        res = small_fit(seed=6)
        cfg = UncertaintyConfig(sims=30, seed=8, sens_period=9)
        return res, prediction_intervals(res, cfg), cfg

    def test_unit_scale_matches_base_interval(self):
        res, unc, cfg = self.make_result()
        row = next(r for r in unc.sensitivity if r["scale"] == 1.0)
        t = res.matrices.post_periods.index(9)
        assert row["lower"] == pytest.approx(unc.intervals.lower[t], rel=1e-12)
        assert row["upper"] == pytest.approx(unc.intervals.upper[t], rel=1e-12)

    def test_zero_scale_is_in_sample_only_shifted(self):
        res, unc, cfg = self.make_result()
        rows = sensitivity_analysis(
            res,
            type("B", (), {"m1_l": unc.intervals.m1_l, "m1_u": unc.intervals.m1_u})(),
            type("B", (), {
                "e_mean_post": unc.e_mean_post, "e_sd_post": unc.e_sd_post
            })(),
            cfg,
            period=9,
            scales=(0.0,),
        )
        t = res.matrices.post_periods.index(9)
        mean = unc.e_mean_post[t]
        assert rows[0]["lower"] == pytest.approx(
            res.tau_hat[t] + unc.intervals.m1_l[t] - mean, rel=1e-12
        )
        assert rows[0]["upper"] == pytest.approx(
            res.tau_hat[t] + unc.intervals.m1_u[t] - mean, rel=1e-12
        )

    def test_width_strictly_increasing(self):
        res, unc, cfg = self.make_result()
        widths = [r["upper"] - r["lower"] for r in unc.sensitivity]
        assert all(b > a for a, b in zip(widths, widths[1:]))


class TestConfigValidation:
    def test_bad_alpha(self):
        res = small_fit()
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(u_alpha=1.5))

    def test_bad_sims(self):
        res = small_fit()
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(sims=1))

    def test_bad_horizon(self):
        res = small_fit()
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(joint=True, L=99))

    def test_bad_choice_strings(self):
        res = small_fit()
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(u_sigma="HC9"))
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(e_method="bootstrap"))
        with pytest.raises(ConfigError):
            prediction_intervals(res, UncertaintyConfig(rho_constant="C9"))
