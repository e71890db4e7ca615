"""Point prediction: constrained fit, tuning rules of thumb, degrees of freedom.

``fit`` solves the weighted least-squares problem over the requested
feasibility set, predicts the counterfactual path through the post-treatment
predictor rows, and attaches the constraint-specific effective degrees of
freedom used later by the variance corrections.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSpec, ConstraintSystem, from_options, materialize
from .exceptions import (
    DegenerateOLSError,
    NonBindingRidgeWarning,
    NumericalFailureError,
    SynthpiWarning,
)
from .panel import ScMatrices
from .solver import Solution, solve_wls, wls_objective

POSITIVE_WEIGHT_TOL = 1e-8  # interior-point solutions never return exact zeros


@dataclass
class FitResult:
    """Fitted weights/coefficients, residuals, predictions, and diagnostics."""

    spec: ConstraintSpec
    system: ConstraintSystem
    matrices: ScMatrices
    w_hat: np.ndarray
    r_hat: np.ndarray
    u_hat: np.ndarray
    a_hat: np.ndarray
    y0_hat: np.ndarray
    tau_hat: np.ndarray
    df_hat: float
    q_used: float | None
    q2_used: float | None
    active_set: np.ndarray
    objective: float
    solution: Solution
    notes: tuple[str, ...] = ()

    @property
    def beta_hat(self) -> np.ndarray:
        return np.concatenate([self.w_hat, self.r_hat])


def fit(m: ScMatrices, spec: ConstraintSpec | str | dict | None = None) -> FitResult:
    """Solve the constrained fit and predict the counterfactual path.

    ``spec`` may be a ConstraintSpec, a preset name, an option dict, or None
    (simplex with Q=1).  Unset tuning values are resolved first.
    """
    spec = _coerce_spec(spec)
    notes: list[str] = []
    if spec.needs_tuning():
        spec, tuning_note = resolve_tuning(m, spec)
        notes.append(tuning_note)

    cs = materialize(spec, n_w=m.dims.J, n_r=m.dims.KM)
    sol = solve_wls(m.A, m.B, m.C, m.v, cs)
    beta = sol.x
    if not cs.is_member(beta, tol=1e-7):
        raise NumericalFailureError("fitted coefficients violate the constraint set")
    if sol.note:
        notes.append(sol.note)

    J = m.dims.J
    w_hat = beta[:J]
    r_hat = beta[J:]
    Z = m.Z
    a_hat = Z @ beta
    u_hat = m.A - a_hat
    y0_hat = m.P @ beta  # NaN rows propagate for unavailable periods
    tau_hat = m.treated_post - y0_hat

    df_hat = estimate_df(w_hat, r_hat, spec, m)
    active = np.flatnonzero(w_hat > POSITIVE_WEIGHT_TOL)

    return FitResult(
        spec=spec,
        system=cs,
        matrices=m,
        w_hat=w_hat,
        r_hat=r_hat,
        u_hat=u_hat,
        a_hat=a_hat,
        y0_hat=y0_hat,
        tau_hat=tau_hat,
        df_hat=df_hat,
        q_used=spec.Q,
        q2_used=spec.Q2,
        active_set=active,
        objective=sol.objective,
        solution=sol,
        notes=tuple(notes),
    )


def _coerce_spec(spec) -> ConstraintSpec:
    if spec is None:
        return from_options(name="simplex")
    if isinstance(spec, ConstraintSpec):
        return spec
    if isinstance(spec, str):
        return from_options(name=spec)
    if isinstance(spec, dict):
        return from_options(spec)
    raise TypeError(f"cannot interpret constraint spec {spec!r}")


# ---------------------------------------------------------------------------
# Tuning rules of thumb
# ---------------------------------------------------------------------------

def resolve_tuning(m: ScMatrices, spec: ConstraintSpec) -> tuple[ConstraintSpec, str]:
    """Fill unset Q (and Q2) using the rules of thumb.

    Lasso takes Q=1.  Ridge uses the risk-minimizing shrinkage map from the
    per-feature least-squares fit, taking the tightest constraint across
    features; high-dimensional designs are first reduced by a lasso selection
    step.  L1-L2 combines both rules.
    """
    if spec.p == "L1" and spec.Q is None:
        return spec.with_q(Q=1.0), "tuning: lasso rule of thumb Q=1"
    if spec.p == "L2" and spec.Q is None:
        q = _ridge_q(m)
        return spec.with_q(Q=q), f"tuning: ridge rule of thumb Q={q:.6g}"
    if spec.p == "L1-L2":
        q = 1.0 if spec.Q is None else spec.Q
        q2 = _ridge_q(m) if spec.Q2 is None else spec.Q2
        return spec.with_q(Q=q, Q2=q2), f"tuning: L1-L2 rule of thumb Q={q:.6g}, Q2={q2:.6g}"
    return spec, "tuning: nothing to resolve"


def _feature_design(m: ScMatrices, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rows = m.feature_rows(l)
    A_l = m.A[rows]
    B_l = m.B[rows]
    C_l = m.C[rows]
    keep = np.flatnonzero(np.any(C_l != 0.0, axis=0))
    return A_l, B_l, C_l[:, keep], m.v[rows]


def _ridge_q(m: ScMatrices) -> float:
    qs = [_ridge_q_feature(m, l) for l in range(m.dims.M)]
    return float(min(qs))


def _ridge_q_feature(m: ScMatrices, l: int) -> float:
    A_l, B_l, C_l, v_l = _feature_design(m, l)
    T0, J = B_l.shape
    if J > T0:
        sel = _lasso_selection(A_l, B_l, C_l, v_l)
        if sel.size == 0:
            raise DegenerateOLSError(
                "lasso preselection kept no donors; ridge rule of thumb undefined"
            )
        B_use = B_l[:, sel]
    else:
        B_use = B_l
    Z = np.hstack([B_use, C_l]) if C_l.size else B_use
    sw = np.sqrt(v_l)
    theta, *_ = np.linalg.lstsq(sw[:, None] * Z, sw * A_l, rcond=None)
    w_ols = theta[: B_use.shape[1]]
    norm_sq = float(w_ols @ w_ols)
    if norm_sq <= 0.0:
        raise DegenerateOLSError("least-squares weights are all zero; lambda undefined")
    resid = A_l - Z @ theta
    rss = float(resid @ (v_l * resid))
    dof = T0 - Z.shape[1]
    if dof <= 0:
        warnings.warn(
            "nonpositive residual degrees of freedom; using the raw sample size",
            SynthpiWarning,
        )
        dof = T0
    sigma2 = rss / dof
    lam = B_use.shape[1] * sigma2 / norm_sq
    return math.sqrt(norm_sq) / (1.0 + lam)


def _lasso_selection(A_l, B_l, C_l, v_l) -> np.ndarray:
    spec = from_options(name="lasso", Q=1.0)
    cs = materialize(spec, n_w=B_l.shape[1], n_r=C_l.shape[1])
    sol = solve_wls(A_l, B_l, C_l, v_l, cs)
    return np.flatnonzero(np.abs(sol.x[: B_l.shape[1]]) > POSITIVE_WEIGHT_TOL)


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------

def estimate_df(
    w_hat: np.ndarray,
    r_hat: np.ndarray,
    spec: ConstraintSpec,
    m: ScMatrices,
) -> float:
    """Effective degrees of freedom for the chosen constraint family."""
    J, KM = m.dims.J, m.dims.KM
    n_active = int(np.sum(w_hat > POSITIVE_WEIGHT_TOL))
    if spec.p == "none":
        return float(J + KM)
    if spec.p == "L1":
        if spec.dir == "==":
            return float(n_active - 1 + KM)
        return float(n_active + KM)
    if spec.p == "L1-L2":
        # the l1 equality is the dimension-reducing constraint
        return float(n_active - 1 + KM)
    if spec.p == "L2":
        lam = _recover_ridge_lambda(w_hat, r_hat, spec, m)
        s = np.linalg.svd(m.B, compute_uv=False)
        return shrinkage_df(s, lam) + float(KM)
    raise ValueError(f"unknown norm {spec.p!r}")


def shrinkage_df(singular_values: np.ndarray, lam: float) -> float:
    """Sum of s_j^2 / (s_j^2 + lambda) over the design's singular values."""
    s2 = np.asarray(singular_values, dtype=float) ** 2
    return float(np.sum(s2 / (s2 + lam)))


def _recover_ridge_lambda(
    w_hat: np.ndarray, r_hat: np.ndarray, spec: ConstraintSpec, m: ScMatrices
) -> float:
    w_norm = float(np.linalg.norm(w_hat))
    if spec.Q is not None and spec.dir == "<=" and w_norm < spec.Q * (1 - 1e-6):
        warnings.warn(
            "l2 constraint is slack; using lambda=0 in the degrees of freedom",
            NonBindingRidgeWarning,
        )
        return 0.0
    u = m.A - m.B @ w_hat - (m.C @ r_hat if m.dims.KM else 0.0)
    grad = m.B.T @ (m.v * u)
    denom = float(w_hat @ w_hat)
    if denom <= 0.0:
        return 0.0
    return max(float(w_hat @ grad) / denom, 0.0)


# ---------------------------------------------------------------------------
# Plain-text summary
# ---------------------------------------------------------------------------

def render_summary(fit_result: FitResult) -> str:
    """Weights table, active donors, degrees of freedom, and resolved tuning."""
    m = fit_result.matrices
    spec = fit_result.spec
    lines = [
        "synthetic control fit",
        "=====================",
        f"constraint:       {spec.label()}"
        + (f" (Q={spec.Q:.6g}" + (f", Q2={spec.Q2:.6g}" if spec.Q2 is not None else "") + ")"
           if spec.Q is not None else ""),
        f"donors (J):       {m.dims.J}",
        f"features (M):     {m.dims.M}",
        f"pre periods (T0): {m.dims.T0}",
        f"post periods (T1):{m.dims.T1}",
        f"covariate cols:   {m.dims.KM}",
        f"objective:        {fit_result.objective:.6g}",
        f"degrees of freedom: {fit_result.df_hat:.6g}",
        "",
        "donor weights",
        "-------------",
    ]
    for j, name in enumerate(m.donors):
        marker = "*" if j in fit_result.active_set else " "
        lines.append(f"  {marker} {name:<24s} {fit_result.w_hat[j]: .6f}")
    lines.append("  (* active, weight > 1e-8)")
    if m.dims.KM:
        lines.append("")
        lines.append("covariate coefficients")
        lines.append("----------------------")
        names = _covariate_names(m)
        for name, val in zip(names, fit_result.r_hat):
            lines.append(f"    {name:<24s} {val: .6f}")
    if fit_result.notes:
        lines.append("")
        for note in fit_result.notes:
            lines.append(f"note: {note}")
    return "\n".join(lines)


def _covariate_names(m: ScMatrices) -> list[str]:
    names = []
    for feat, block in zip(m.features, m.cov_adj):
        for term in block:
            names.append(f"{feat}:{term}")
    if m.constant:
        names.append("constant (shared)")
    return names
