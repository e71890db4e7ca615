"""Prediction intervals: simulation-based in-sample bounds, out-of-sample
bounds under three residual models, simultaneous intervals, and sensitivity
scaling of the sub-Gaussian parameter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from multiprocessing import get_context

import numpy as np

from .constraints import ConstraintSystem, LinearConstraint, NormConstraint
from .estimator import FitResult
from .exceptions import (
    ConfigError,
    LeverageOneWarning,
    MissingBoundsError,
    NegativeVarianceFitWarning,
    QregCrossingWarning,
    SingularDesignWarning,
    SynthpiWarning,
    UnboundedBoundWarning,
    ZeroDonorVarianceError,
)
from .panel import ScMatrices
from .solver import LevelSetFamily

E_METHODS = ("gaussian", "ls", "qreg")
HC_CHOICES = ("HC0", "HC1", "HC2", "HC3", "HC4")
RHO_CHOICES = ("C1", "C2", "C3")


@dataclass(frozen=True)
class UncertaintyConfig:
    """Options controlling both uncertainty components.

    ``sims`` simulation draws are split over ``cores`` workers; every draw
    uses its own seed-derived substream, so results do not depend on the
    worker count.
    """

    u_missp: bool = True
    u_order: int = 1
    u_lags: int = 0
    u_design: np.ndarray | None = None
    u_sigma: str = "HC1"
    u_alpha: float = 0.05
    e_method: str = "gaussian"
    e_order: int = 1
    e_lags: int = 0
    e_design: np.ndarray | None = None
    e_alpha: float = 0.05
    sims: int = 1000
    rho: float | None = None
    rho_constant: str = "C1"
    cores: int = 1
    seed: int | None = None
    w_bounds: np.ndarray | None = None
    e_bounds: np.ndarray | None = None
    sens_scales: tuple[float, ...] = (0.25, 0.5, 1.0, 1.5, 2.0)
    sens_period: int | None = None
    joint: bool = False
    L: int | None = None
    epsilon_per_period: bool = False

    def validate(self, T1: int) -> None:
        if not (0.0 < self.u_alpha < 1.0 and 0.0 < self.e_alpha < 1.0):
            raise ConfigError("u.alpha and e.alpha must lie in (0, 1)")
        if self.sims < 2:
            raise ConfigError("sims must be at least 2")
        if self.u_sigma not in HC_CHOICES:
            raise ConfigError(f"u.sigma must be one of {HC_CHOICES}")
        if self.e_method not in E_METHODS:
            raise ConfigError(f"e.method must be one of {E_METHODS}")
        if self.rho_constant not in RHO_CHOICES:
            raise ConfigError(f"rho constant must be one of {RHO_CHOICES}")
        if self.u_order < 0 or self.u_lags < 0 or self.e_order < 0 or self.e_lags < 0:
            raise ConfigError("polynomial orders and lag counts must be nonnegative")
        if self.L is not None and not (1 <= self.L <= T1):
            raise ConfigError(f"joint horizon L must lie in [1, {T1}]")
        if self.joint and self.e_method != "gaussian":
            raise ConfigError(
                "simultaneous intervals require e.method='gaussian'"
            )
        if self.cores < 1:
            raise ConfigError("cores must be at least 1")


@dataclass
class InSampleModel:
    """Everything needed to simulate the in-sample error bounds."""

    rho: float
    rho_j: np.ndarray
    binding: np.ndarray
    w_star: np.ndarray
    selected: np.ndarray
    D_u: np.ndarray
    e_u_hat: np.ndarray
    v_u_hat: np.ndarray
    sigma_hat: np.ndarray
    qhat: np.ndarray
    delta_star: ConstraintSystem
    df_used: float
    notes: tuple[str, ...] = ()


@dataclass
class JointInterval:
    horizon: int
    periods: tuple[int, ...]
    m1_l: float
    m1_u: float
    m2_l: np.ndarray
    m2_u: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    y0_lower: np.ndarray
    y0_upper: np.ndarray
    coverage_label: float


@dataclass
class PredictionInterval:
    """Per-period interval table for the treatment effect and the
    counterfactual level, plus the simultaneous variant when requested."""

    periods: tuple[int, ...]
    tau_hat: np.ndarray
    y0_hat: np.ndarray
    m1_l: np.ndarray
    m1_u: np.ndarray
    m2_l: np.ndarray
    m2_u: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    y0_lower: np.ndarray
    y0_upper: np.ndarray
    coverage_label: float
    available: np.ndarray
    joint: JointInterval | None = None
    dropped_draws: int = 0


@dataclass
class UncertaintyResult:
    fit: FitResult
    config: UncertaintyConfig
    model: InSampleModel
    intervals: PredictionInterval
    sensitivity: list[dict] | None
    e_mean_post: np.ndarray
    e_sd_post: np.ndarray
    diagnostics: dict


# ---------------------------------------------------------------------------
# rho
# ---------------------------------------------------------------------------

def rho_formula(constant: float, T0: float, cointegrated: bool) -> float:
    """C * log(T0)^c / sqrt(T0), c = 1 for cointegrated data and 1/2 otherwise."""
    c = 1.0 if cointegrated else 0.5
    return constant * math.log(T0) ** c / math.sqrt(T0)


def compute_rho(
    m: ScMatrices,
    fit: FitResult,
    choice: str = "C1",
    cointegrated: bool | None = None,
    override: float | None = None,
) -> float:
    """Localization parameter from unconditional residual/donor moments."""
    if override is not None:
        return float(override)
    if cointegrated is None:
        cointegrated = m.cointegrated
    u = fit.u_hat
    sd_u = float(np.std(u, ddof=1))
    sd_b = np.std(m.B, axis=0, ddof=1)
    if np.any(sd_b <= 0.0):
        raise ZeroDonorVarianceError("a donor column has zero variance; rho undefined")
    if choice == "C1":
        const = sd_u / float(np.min(sd_b))
    elif choice == "C2":
        const = float(np.max(sd_b)) * sd_u / float(np.min(sd_b) ** 2)
    else:  # C3
        cov_bu = np.array(
            [np.cov(m.B[:, j], u, ddof=1)[0, 1] for j in range(m.B.shape[1])]
        )
        const = float(np.max(cov_bu)) / float(np.min(sd_b) ** 2)
    rho = rho_formula(const, m.dims.T0, cointegrated)
    if rho <= 0.0:
        warnings.warn(
            "rho formula produced a nonpositive value; falling back to C1",
            SynthpiWarning,
        )
        rho = rho_formula(sd_u / float(np.min(sd_b)), m.dims.T0, cointegrated)
    return float(rho)


# ---------------------------------------------------------------------------
# Delta* construction
# ---------------------------------------------------------------------------

def build_delta_star(
    cs: ConstraintSystem, beta_hat: np.ndarray, rho: float
) -> tuple[ConstraintSystem, np.ndarray, np.ndarray]:
    """Localized constraint set over delta = beta - beta_hat.

    Inequality j is binding when m_in_j(beta_hat) > -rho_j with
    rho_j = ||grad m_in_j(beta_hat)||_1 * rho; binding constraints keep their
    fitted slack, the rest keep their original bound.  delta = 0 is always
    feasible.
    """
    rho_j = np.array(
        [float(np.sum(np.abs(c.grad(beta_hat)))) * rho for c in cs.ineq]
    )
    values = cs.m_in(beta_hat) if cs.n_in else np.empty(0)
    binding = values > -rho_j if cs.n_in else np.zeros(0, dtype=bool)

    eq_linear = tuple(
        LinearConstraint(a=c.a, rhs=0.0) for c in cs.eq_linear
    )
    eq_norm = tuple(
        NormConstraint(
            p=c.p,
            idx=c.idx,
            center=beta_hat[c.idx] + c.center,
            bound=float(np.linalg.norm(beta_hat[c.idx] + c.center)),
            equality=True,
        )
        for c in cs.eq_norm
    )
    ineq = []
    for j, c in enumerate(cs.ineq):
        if isinstance(c, LinearConstraint):
            rhs_delta = 0.0 if binding[j] else -values[j]
            ineq.append(LinearConstraint(a=c.a, rhs=rhs_delta))
        else:
            center = beta_hat[c.idx] + c.center
            if binding[j]:
                inner = center
                bound = float(np.sum(np.abs(inner)) if c.p == 1 else np.linalg.norm(inner))
            else:
                bound = c.bound
            ineq.append(NormConstraint(p=c.p, idx=c.idx, center=center, bound=bound))
    system = ConstraintSystem(
        dim=cs.dim,
        n_w=cs.n_w,
        eq_linear=eq_linear,
        eq_norm=eq_norm,
        ineq=tuple(ineq),
    )
    return system, rho_j, binding


# ---------------------------------------------------------------------------
# Residual-model design matrices
# ---------------------------------------------------------------------------

def _first_diff_cols(cols: np.ndarray) -> np.ndarray:
    """Column-wise first differences; the first row repeats the first
    available difference so the row count is preserved."""
    if cols.shape[0] < 2:
        return np.zeros_like(cols)
    d = np.diff(cols, axis=0)
    return np.vstack([d[:1], d])


def _lag_cols(cols: np.ndarray, lag: int) -> np.ndarray:
    """Shift rows down by ``lag`` with edge padding at the start."""
    if lag == 0:
        return cols
    out = np.empty_like(cols)
    out[:lag] = cols[:1]
    out[lag:] = cols[:-lag]
    return out


def _poly_terms(cols: np.ndarray, order: int) -> np.ndarray:
    """Fully interacted polynomial of the given order (order 0 -> no terms)."""
    n, k = cols.shape
    if order <= 0 or k == 0:
        return np.empty((n, 0))
    terms = [cols]
    for deg in range(2, order + 1):
        for combo in combinations_with_replacement(range(k), deg):
            terms.append(np.prod(cols[:, combo], axis=1, keepdims=True))
    return np.hstack(terms)


def _feature_cov_columns(m: ScMatrices, l: int, rows: slice) -> np.ndarray:
    block = m.C[rows]
    keep = np.flatnonzero(np.any(block != 0.0, axis=0))
    return block[:, keep]


def _selected_feature_block(
    m: ScMatrices, l: int, selected: np.ndarray, difference: bool
) -> np.ndarray:
    block = m.B[m.feature_rows(l)][:, selected]
    return _first_diff_cols(block) if difference else block


def build_u_design(
    m: ScMatrices, selected: np.ndarray, cfg: UncertaintyConfig
) -> tuple[np.ndarray, list[str]]:
    """Design for the conditional moments of the pre-treatment residuals:
    block-diagonal polynomial/lag expansion of the selected donor columns,
    then the covariate columns."""
    notes: list[str] = []
    if cfg.u_design is not None:
        D = np.asarray(cfg.u_design, dtype=float)
        if D.shape[0] != m.dims.T0 * m.dims.M:
            raise ConfigError("u.design must have T0*M rows")
        return D, notes
    T0, M = m.dims.T0, m.dims.M
    per_feature: list[np.ndarray] = []
    for l in range(M):
        base = _selected_feature_block(m, l, selected, m.cointegrated)
        parts = [_poly_terms(base, cfg.u_order)]
        for lag in range(1, cfg.u_lags + 1):
            parts.append(_lag_cols(base, lag))
        per_feature.append(np.hstack(parts))
    width = sum(p.shape[1] for p in per_feature)
    block = np.zeros((T0 * M, width))
    col = 0
    for l, part in enumerate(per_feature):
        block[l * T0 : (l + 1) * T0, col : col + part.shape[1]] = part
        col += part.shape[1]
    D = np.hstack([block, m.C]) if m.dims.KM else block
    return D, notes


def estimate_u_moments(
    m: ScMatrices,
    fit: FitResult,
    cfg: UncertaintyConfig,
    rho: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float, list[str]]:
    """Regularized-weight residual model: conditional mean, conditional
    variance diagonal, regularized weights, selected donors, df used."""
    notes: list[str] = []
    w = fit.w_hat
    w_star = np.where(w > rho, w, 0.0)
    selected = np.flatnonzero(w_star > 0.0)
    u = fit.u_hat
    n = u.shape[0]
    T0, M = m.dims.T0, m.dims.M

    if not cfg.u_missp:
        e_u = np.zeros(n)
    elif cfg.u_order == 0 and cfg.u_lags == 0 and cfg.u_design is None:
        means = np.array([u[m.feature_rows(l)].mean() for l in range(M)])
        e_u = np.kron(means, np.ones(T0))
    else:
        D_u, d_notes = build_u_design(m, selected, cfg)
        notes.extend(d_notes)
        if D_u.shape[1] == 0:
            means = np.array([u[m.feature_rows(l)].mean() for l in range(M)])
            e_u = np.kron(means, np.ones(T0))
            notes.append("empty residual design; fell back to per-feature means")
        else:
            if np.linalg.matrix_rank(D_u) < D_u.shape[1]:
                warnings.warn(
                    "residual design is rank deficient; least-norm fit used",
                    SingularDesignWarning,
                )
            theta, *_ = np.linalg.lstsq(D_u, u, rcond=None)
            e_u = D_u @ theta

    vc = _variance_corrections(m, cfg, fit.df_hat)
    v_u = vc * (u - e_u) ** 2
    D_u_final = cfg.u_design if cfg.u_design is not None else None
    return e_u, v_u, w_star, selected, fit.df_hat, notes


def _variance_corrections(m: ScMatrices, cfg: UncertaintyConfig, df: float) -> np.ndarray:
    n = m.dims.T0 * m.dims.M
    kind = cfg.u_sigma
    if kind == "HC0":
        return np.ones(n)
    if kind == "HC1":
        denom = n - df
        if denom <= 0:
            warnings.warn(
                "HC1 denominator nonpositive; flooring at 1", SynthpiWarning
            )
            denom = 1.0
        return np.full(n, n / denom)
    lev = leverage_diagonal(m)
    if np.any(lev >= 1.0 - 1e-10):
        warnings.warn("leverage reached one; capping", LeverageOneWarning)
        lev = np.minimum(lev, 1.0 - 1e-10)
    if kind == "HC2":
        return 1.0 / (1.0 - lev)
    if kind == "HC3":
        return 1.0 / (1.0 - lev) ** 2
    df_safe = df if df > 0 else 1.0
    delta = np.minimum(4.0, n * lev / df_safe)
    return 1.0 / (1.0 - lev) ** delta


def leverage_diagonal(m: ScMatrices) -> np.ndarray:
    """Diagonal of Z (Z'VZ)^{-1} Z'V."""
    Z = m.Z
    ZtVZ = Z.T @ (m.v[:, None] * Z)
    Zv = m.v[:, None] * Z
    core = np.linalg.pinv(ZtVZ)
    return np.einsum("ij,jk,ik->i", Z, core, Zv)


def sigma_and_qhat(m: ScMatrices, v_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sandwich covariance of the simulated score and the quadratic kernel."""
    Z = m.Z
    sigma = Z.T @ ((m.v**2 * v_u)[:, None] * Z)
    qhat = Z.T @ (m.v[:, None] * Z)
    return sigma, qhat


# ---------------------------------------------------------------------------
# In-sample simulation bounds
# ---------------------------------------------------------------------------

@dataclass
class InSampleBounds:
    m1_l: np.ndarray
    m1_u: np.ndarray
    joint_l: float | None
    joint_u: float | None
    dropped_draws: int
    cone_calls: int
    epsilon: np.ndarray


def _simulate_chunk(args):
    family, factor, seed, sims, start, stop = args
    d = factor.shape[0]
    children = np.random.SeedSequence(seed).spawn(sims)
    n_t = family.p_rows.shape[0]
    lows = np.empty((stop - start, n_t))
    highs = np.empty((stop - start, n_t))
    calls = fails = 0
    for i in range(start, stop):
        rng = np.random.default_rng(children[i])
        G = factor @ rng.standard_normal(d)
        lo, hi, c, f = family.extremes_for_draw(G)
        lows[i - start] = lo
        highs[i - start] = hi
        calls += c
        fails += f
    return lows, highs, calls, fails


def in_sample_bounds(
    m: ScMatrices,
    fit: FitResult,
    cfg: UncertaintyConfig,
    model: InSampleModel,
) -> InSampleBounds:
    """Quantiles of simulated extremes of p_t'delta over the localized set.

    Per-period bounds take the (alpha1/2, 1-alpha1/2) quantiles of the
    per-draw inf/sup; the simultaneous bounds apply the same quantiles to the
    per-draw envelope over the joint window.
    """
    d = m.dims.d
    eigval, eigvec = np.linalg.eigh(model.sigma_hat)
    factor = eigvec * np.sqrt(np.maximum(eigval, 0.0))
    family = LevelSetFamily(model.qhat, model.delta_star, m.P)

    seed = cfg.seed if cfg.seed is not None else np.random.SeedSequence().entropy
    sims = cfg.sims
    spans = _chunk_spans(sims, cfg.cores)
    args = [(family, factor, seed, sims, a, b) for a, b in spans]
    if cfg.cores > 1 and len(spans) > 1:
        ctx = get_context("fork")
        with ctx.Pool(processes=cfg.cores) as pool:
            parts = pool.map(_simulate_chunk, args)
    else:
        parts = [_simulate_chunk(a) for a in args]

    lows = np.vstack([p[0] for p in parts])
    highs = np.vstack([p[1] for p in parts])
    cone_calls = sum(p[2] for p in parts)
    failures = sum(p[3] for p in parts)

    T1 = m.P.shape[0]
    a1 = cfg.u_alpha
    m1_l = np.full(T1, np.nan)
    m1_u = np.full(T1, np.nan)
    available = ~np.isnan(m.P).any(axis=1)
    for t in range(T1):
        if not available[t]:
            continue
        lo_t = lows[:, t]
        hi_t = highs[:, t]
        ok = ~(np.isnan(lo_t) | np.isnan(hi_t))
        if not np.any(ok):
            continue
        if np.any(np.isinf(lo_t[ok])) or np.any(np.isinf(hi_t[ok])):
            warnings.warn(
                f"unbounded simulated bound at post period index {t}",
                UnboundedBoundWarning,
            )
        m1_l[t] = np.quantile(lo_t[ok], a1 / 2.0)
        m1_u[t] = np.quantile(hi_t[ok], 1.0 - a1 / 2.0)

    eps = np.zeros(T1)
    if model.delta_star.has_nonlinear:
        beta_norm = float(np.linalg.norm(fit.beta_hat))
        if beta_norm > 0:
            p_l1 = np.nansum(np.abs(m.P), axis=1)
            eps = p_l1 * model.rho**2 / (2.0 * beta_norm)
    if cfg.epsilon_per_period:
        m1_l = m1_l - eps
        m1_u = m1_u + eps

    joint_l = joint_u = None
    dropped = failures
    if cfg.joint:
        L = cfg.L if cfg.L is not None else T1
        window = [t for t in range(L) if available[t]]
        if window:
            lo_w = lows[:, window]
            hi_w = highs[:, window]
            ok = ~(np.isnan(lo_w).any(axis=1) | np.isnan(hi_w).any(axis=1))
            if np.any(ok):
                env_lo = lo_w[ok].min(axis=1)
                env_hi = hi_w[ok].max(axis=1)
                joint_l = float(np.quantile(env_lo, a1 / 2.0))
                joint_u = float(np.quantile(env_hi, 1.0 - a1 / 2.0))
                if model.delta_star.has_nonlinear:
                    widen = float(np.max(eps[window], initial=0.0))
                    joint_l -= widen
                    joint_u += widen
    return InSampleBounds(
        m1_l=m1_l,
        m1_u=m1_u,
        joint_l=joint_l,
        joint_u=joint_u,
        dropped_draws=dropped,
        cone_calls=cone_calls,
        epsilon=eps,
    )


def _chunk_spans(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    base = n // parts
    rem = n % parts
    spans = []
    start = 0
    for i in range(parts):
        size = base + (1 if i < rem else 0)
        spans.append((start, start + size))
        start += size
    return spans


# ---------------------------------------------------------------------------
# Out-of-sample bounds
# ---------------------------------------------------------------------------

@dataclass
class OutOfSampleBounds:
    m2_l: np.ndarray
    m2_u: np.ndarray
    joint_m2_l: np.ndarray | None
    joint_m2_u: np.ndarray | None
    e_mean_post: np.ndarray
    e_sd_post: np.ndarray
    notes: tuple[str, ...]


def build_e_design(
    m: ScMatrices, selected: np.ndarray, cfg: UncertaintyConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Design rows for the out-of-sample residual model at pre and post
    periods: expansion of the selected feature-1 donor columns plus the
    feature-1 covariates; donor levels are first-differenced for
    cointegrated data."""
    if cfg.e_design is not None:
        D = np.asarray(cfg.e_design, dtype=float)
        if D.shape[0] != m.dims.T0 + m.dims.T1:
            raise ConfigError("e.design must have T0+T1 rows (pre then post)")
        return D[: m.dims.T0], D[m.dims.T0 :]
    T0, T1 = m.dims.T0, m.dims.T1
    pre_block = m.B[m.feature_rows(0)][:, selected]
    post_block = m.donor_post[:, selected]
    combined = np.vstack([pre_block, post_block])
    if m.cointegrated:
        combined = _first_diff_cols(combined)
    parts = [_poly_terms(combined, cfg.e_order)]
    for lag in range(1, cfg.e_lags + 1):
        parts.append(_lag_cols(combined, lag))
    cov_pre = _feature_cov_columns(m, 0, m.feature_rows(0))
    if cov_pre.shape[1]:
        cov_names = [t for t in m.cov_adj[0]] + (["constant"] if m.constant else [])
        ordinals = np.arange(1, T0 + T1 + 1, dtype=float)
        cov_cols = []
        for name in cov_names:
            cov_cols.append(np.ones(T0 + T1) if name == "constant" else ordinals)
        parts.append(np.column_stack(cov_cols))
    D = np.hstack(parts) if parts else np.empty((T0 + T1, 0))
    return D[:T0], D[T0:]


def _fit_mean_variance(
    e: np.ndarray, D_pre: np.ndarray, D_post: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Linear conditional-mean and conditional-variance fits with flooring."""
    notes: list[str] = []
    theta, *_ = np.linalg.lstsq(D_pre, e, rcond=None)
    mean_pre = D_pre @ theta
    mean_post = D_post @ theta
    centered = e - mean_pre
    var_floor = float(np.var(centered, ddof=1)) if centered.size > 1 else 0.0
    theta_v, *_ = np.linalg.lstsq(D_pre, centered**2, rcond=None)
    var_pre = D_pre @ theta_v
    var_post = D_post @ theta_v
    if np.any(var_post <= 0.0) or np.any(var_pre <= 0.0):
        warnings.warn(
            "conditional variance fit nonpositive; floored at the unconditional value",
            NegativeVarianceFitWarning,
        )
        notes.append("variance fit floored at the unconditional residual variance")
        var_pre = np.where(var_pre > 0.0, var_pre, var_floor)
        var_post = np.where(var_post > 0.0, var_post, var_floor)
    return mean_pre, mean_post, var_pre, var_post, notes


def quantile_loss_fit(
    D: np.ndarray, e: np.ndarray, q: float, smoothing: float = 1e-6, iters: int = 100
) -> np.ndarray:
    """Linear quantile regression via iteratively reweighted least squares on
    a smoothed pinball loss."""
    n, k = D.shape
    theta, *_ = np.linalg.lstsq(D, e, rcond=None)
    ones_term = (q - 0.5) * D.sum(axis=0)
    for _ in range(iters):
        r = e - D @ theta
        s = np.sqrt(r**2 + smoothing**2)
        w = 0.5 / s
        lhs = D.T @ (w[:, None] * D)
        rhs = D.T @ (w * e) + ones_term
        theta_new, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        if np.max(np.abs(theta_new - theta), initial=0.0) < 1e-12:
            theta = theta_new
            break
        theta = theta_new
    return theta


def out_of_sample_bounds(
    m: ScMatrices,
    fit: FitResult,
    cfg: UncertaintyConfig,
    selected: np.ndarray,
) -> OutOfSampleBounds:
    """Bounds on the post-treatment shock from the feature-1 pre-treatment
    residuals under the chosen residual model."""
    notes: list[str] = []
    e = fit.u_hat[m.feature_rows(0)]
    T1 = m.dims.T1
    a2 = cfg.e_alpha
    available = ~np.isnan(m.P).any(axis=1)

    plain_moments = cfg.e_order == 0 and cfg.e_lags == 0 and cfg.e_design is None
    if not plain_moments:
        D_pre, D_post = build_e_design(m, selected, cfg)
        if D_pre.shape[1] == 0:
            plain_moments = True
            notes.append("empty out-of-sample design; using unconditional moments")

    if plain_moments:
        mean_post = np.full(T1, float(np.mean(e)))
        var_post = np.full(T1, float(np.var(e, ddof=1)))
        mean_pre = np.full(e.shape[0], float(np.mean(e)))
        var_pre = np.full(e.shape[0], float(np.var(e, ddof=1)))
    else:
        mean_pre, mean_post, var_pre, var_post, fit_notes = _fit_mean_variance(
            e, D_pre, D_post
        )
        notes.extend(fit_notes)

    sd_post = np.sqrt(np.maximum(var_post, 0.0))
    joint_m2_l = joint_m2_u = None

    if cfg.e_method == "gaussian":
        half = sd_post * math.sqrt(2.0 * math.log(2.0 / a2))
        m2_l = mean_post - half
        m2_u = mean_post + half
        if cfg.joint:
            L = cfg.L if cfg.L is not None else T1
            half_joint = sd_post * math.sqrt(2.0 * math.log(2.0 * L / a2))
            joint_m2_l = mean_post - half_joint
            joint_m2_u = mean_post + half_joint
    elif cfg.e_method == "ls":
        sd_pre = np.sqrt(np.maximum(var_pre, 0.0))
        safe = np.where(sd_pre > 0.0, sd_pre, 1.0)
        eps_std = (e - mean_pre) / safe
        c_lo = float(np.quantile(eps_std, a2 / 2.0))
        c_hi = float(np.quantile(eps_std, 1.0 - a2 / 2.0))
        m2_l = mean_post + sd_post * c_lo
        m2_u = mean_post + sd_post * c_hi
    else:  # qreg
        if plain_moments:
            D_pre = np.ones((e.shape[0], 1))
            D_post = np.ones((T1, 1))
        theta_lo = quantile_loss_fit(D_pre, e, a2 / 2.0)
        theta_hi = quantile_loss_fit(D_pre, e, 1.0 - a2 / 2.0)
        m2_l = D_post @ theta_lo
        m2_u = D_post @ theta_hi
        if np.any(m2_u < m2_l):
            warnings.warn("fitted quantile bounds crossed; swapping", QregCrossingWarning)
            m2_l, m2_u = np.minimum(m2_l, m2_u), np.maximum(m2_l, m2_u)

    m2_l = np.where(available, m2_l, np.nan)
    m2_u = np.where(available, m2_u, np.nan)
    mean_post = np.where(available, mean_post, np.nan)
    sd_post = np.where(available, sd_post, np.nan)
    if joint_m2_l is not None:
        joint_m2_l = np.where(available, joint_m2_l, np.nan)
        joint_m2_u = np.where(available, joint_m2_u, np.nan)
    return OutOfSampleBounds(
        m2_l=m2_l,
        m2_u=m2_u,
        joint_m2_l=joint_m2_l,
        joint_m2_u=joint_m2_u,
        e_mean_post=mean_post,
        e_sd_post=sd_post,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Assembly, sensitivity, orchestration
# ---------------------------------------------------------------------------

def assemble_intervals(
    fit: FitResult,
    insample: InSampleBounds,
    outsample: OutOfSampleBounds,
    cfg: UncertaintyConfig,
) -> PredictionInterval:
    """Combine the two error bounds into intervals for the effect and the
    counterfactual level; user-supplied overrides replace computed bounds."""
    m = fit.matrices
    T1 = m.dims.T1
    available = ~np.isnan(m.P).any(axis=1)

    m1_l, m1_u = insample.m1_l.copy(), insample.m1_u.copy()
    m2_l, m2_u = outsample.m2_l.copy(), outsample.m2_u.copy()
    if cfg.w_bounds is not None:
        wb = np.asarray(cfg.w_bounds, dtype=float).reshape(T1, 2)
        m1_l = np.where(np.isnan(wb[:, 0]), m1_l, wb[:, 0])
        m1_u = np.where(np.isnan(wb[:, 1]), m1_u, wb[:, 1])
    if cfg.e_bounds is not None:
        eb = np.asarray(cfg.e_bounds, dtype=float).reshape(T1, 2)
        m2_l = np.where(np.isnan(eb[:, 0]), m2_l, eb[:, 0])
        m2_u = np.where(np.isnan(eb[:, 1]), m2_u, eb[:, 1])

    needed = available & (
        np.isnan(m1_l) | np.isnan(m1_u) | np.isnan(m2_l) | np.isnan(m2_u)
    )
    if np.any(needed):
        bad = [m.post_periods[i] for i in np.flatnonzero(needed)]
        raise MissingBoundsError(f"no bounds available for post periods {bad}")

    lower = fit.tau_hat + m1_l - m2_u
    upper = fit.tau_hat + m1_u - m2_l
    y0_lower = fit.y0_hat - m1_u + m2_l
    y0_upper = fit.y0_hat - m1_l + m2_u
    coverage = 1.0 - cfg.u_alpha - cfg.e_alpha

    joint = None
    if cfg.joint and insample.joint_l is not None and outsample.joint_m2_l is not None:
        L = cfg.L if cfg.L is not None else T1
        idx = np.arange(L)
        j_lower = fit.tau_hat[idx] + insample.joint_l - outsample.joint_m2_u[idx]
        j_upper = fit.tau_hat[idx] + insample.joint_u - outsample.joint_m2_l[idx]
        joint = JointInterval(
            horizon=L,
            periods=tuple(m.post_periods[:L]),
            m1_l=insample.joint_l,
            m1_u=insample.joint_u,
            m2_l=outsample.joint_m2_l[idx],
            m2_u=outsample.joint_m2_u[idx],
            lower=j_lower,
            upper=j_upper,
            y0_lower=fit.y0_hat[idx] - insample.joint_u + outsample.joint_m2_l[idx],
            y0_upper=fit.y0_hat[idx] - insample.joint_l + outsample.joint_m2_u[idx],
            coverage_label=coverage,
        )

    return PredictionInterval(
        periods=m.post_periods,
        tau_hat=fit.tau_hat,
        y0_hat=fit.y0_hat,
        m1_l=m1_l,
        m1_u=m1_u,
        m2_l=m2_l,
        m2_u=m2_u,
        lower=lower,
        upper=upper,
        y0_lower=y0_lower,
        y0_upper=y0_upper,
        coverage_label=coverage,
        available=available,
        joint=joint,
        dropped_draws=insample.dropped_draws,
    )


def sensitivity_analysis(
    fit: FitResult,
    insample: InSampleBounds,
    outsample: OutOfSampleBounds,
    cfg: UncertaintyConfig,
    period: int,
    scales: tuple[float, ...] | None = None,
) -> list[dict]:
    """Rescale the sub-Gaussian parameter and reassemble the interval at one
    post period, producing rows for a sensitivity figure."""
    m = fit.matrices
    scales = tuple(scales if scales is not None else cfg.sens_scales)
    if period not in m.post_periods:
        raise ConfigError(f"period {period} is not a post-treatment period")
    t = m.post_periods.index(period)
    e_mean = float(outsample.e_mean_post[t])
    e_sd = float(outsample.e_sd_post[t])
    half0 = math.sqrt(2.0 * math.log(2.0 / cfg.e_alpha))
    rows = []
    for kappa in scales:
        half = kappa * e_sd * half0
        m2_l, m2_u = e_mean - half, e_mean + half
        rows.append(
            {
                "period": period,
                "scale": kappa,
                "tau_hat": float(fit.tau_hat[t]),
                "m1_l": float(insample.m1_l[t]),
                "m1_u": float(insample.m1_u[t]),
                "m2_l": m2_l,
                "m2_u": m2_u,
                "lower": float(fit.tau_hat[t] + insample.m1_l[t] - m2_u),
                "upper": float(fit.tau_hat[t] + insample.m1_u[t] - m2_l),
                "y0_lower": float(fit.y0_hat[t] - insample.m1_u[t] + m2_l),
                "y0_upper": float(fit.y0_hat[t] - insample.m1_l[t] + m2_u),
            }
        )
    return rows


def prediction_intervals(fit: FitResult, cfg: UncertaintyConfig | None = None) -> UncertaintyResult:
    """End-to-end uncertainty quantification for a fitted synthetic control."""
    cfg = cfg or UncertaintyConfig()
    m = fit.matrices
    cfg.validate(m.dims.T1)

    rho = compute_rho(m, fit, choice=cfg.rho_constant, override=cfg.rho)
    delta_star, rho_j, binding = build_delta_star(fit.system, fit.beta_hat, rho)
    e_u, v_u, w_star, selected, df_used, notes = estimate_u_moments(m, fit, cfg, rho)
    sigma_hat, qhat = sigma_and_qhat(m, v_u)

    model = InSampleModel(
        rho=rho,
        rho_j=rho_j,
        binding=binding,
        w_star=w_star,
        selected=selected,
        D_u=np.empty((0, 0)),
        e_u_hat=e_u,
        v_u_hat=v_u,
        sigma_hat=sigma_hat,
        qhat=qhat,
        delta_star=delta_star,
        df_used=df_used,
        notes=tuple(notes),
    )

    insample = in_sample_bounds(m, fit, cfg, model)
    outsample = out_of_sample_bounds(m, fit, cfg, selected)
    intervals = assemble_intervals(fit, insample, outsample, cfg)

    sens = None
    if cfg.e_method == "gaussian" and cfg.sens_period is not None:
        sens = sensitivity_analysis(fit, insample, outsample, cfg, cfg.sens_period)

    diagnostics = {
        "rho": rho,
        "rho_j": rho_j.tolist(),
        "binding": binding.tolist(),
        "selected_donors": selected.tolist(),
        "dropped_draws": int(insample.dropped_draws),
        "cone_calls": int(insample.cone_calls),
        "epsilon": insample.epsilon.tolist(),
        "seed": cfg.seed,
        "sims": cfg.sims,
        "cores": cfg.cores,
        "notes": list(notes) + list(outsample.notes),
    }
    return UncertaintyResult(
        fit=fit,
        config=cfg,
        model=model,
        intervals=intervals,
        sensitivity=sens,
        e_mean_post=outsample.e_mean_post,
        e_sd_post=outsample.e_sd_post,
        diagnostics=diagnostics,
    )
