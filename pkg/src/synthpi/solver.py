"""Conic solver layer: constrained weighted least squares and level-set programs.

Both problem families are reduced to linear/second-order-cone programs and
handed to a primal-dual interior-point method (cvxopt's cone solvers).  The
module also provides closed-form extremes over pure ellipsoidal level sets and
a batched driver used by the simulation loop, which tries the closed form
first and falls back to the cone solver only when a constraint cuts off the
unconstrained optimizer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix as _cvxmat
from cvxopt import solvers as _cvxsolvers

from .constraints import ConstraintSystem, LinearConstraint, NormConstraint
from .exceptions import (
    DegenerateObjectiveWarning,
    InfeasibleError,
    NumericalFailureError,
)

_SOLVER_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-9,
    "reltol": 1e-9,
    "feastol": 1e-9,
    "maxiters": 200,
    "refinement": 2,
}

# fallback rungs for ill-conditioned instances; results are still checked
# against the independent KKT residuals before acceptance
_OPTION_LADDER = (
    _SOLVER_OPTIONS,
    {**_SOLVER_OPTIONS, "abstol": 1e-7, "reltol": 1e-6, "feastol": 1e-7},
    {**_SOLVER_OPTIONS, "abstol": 1e-6, "reltol": 1e-5, "feastol": 1e-6, "maxiters": 300},
)

SYMMETRY_TOL = 1e-10


@dataclass
class KKTResiduals:
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.complementarity)


@dataclass
class Solution:
    x: np.ndarray
    objective: float
    status: str  # optimal | infeasible | unbounded | max_iter
    kkt: KKTResiduals | None = None
    note: str = ""


@dataclass
class ConicProblem:
    """Normalized cone program: min 1/2 x'Px + q'x (c'x when P is None)
    subject to Ax = b and Gx + s = h, s in R_+^l x SOC(q_1) x ..."""

    n: int
    q: np.ndarray
    P: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    dims: dict = field(default_factory=lambda: {"l": 0, "q": [], "s": []})
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.P is not None:
            asym = np.max(np.abs(self.P - self.P.T), initial=0.0)
            if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(self.P)))):
                raise ValueError(f"quadratic term is not symmetric (residual {asym:.2e})")


class _Encoder:
    """Accumulates cone-program rows over x = (y, aux).

    The original variable is var = offset + T y; auxiliary variables come from
    l1 epigraph splits and are appended after the y block.
    """

    def __init__(self, T: np.ndarray, offset: np.ndarray):
        self.T = np.asarray(T, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.ny = self.T.shape[1]
        self.naux = 0
        self.eq_rows: list[tuple[np.ndarray, float]] = []
        # linear inequality rows: (y-coeffs, [(aux_index, coeff)], rhs)
        self.lin_rows: list[tuple[np.ndarray, list[tuple[int, float]], float]] = []
        self.soc_blocks: list[tuple[np.ndarray, np.ndarray]] = []  # y-coeff block, h

    def add_equality(self, c: LinearConstraint) -> None:
        self.eq_rows.append((c.a @ self.T, c.rhs - float(c.a @ self.offset)))

    def add_linear_ineq(self, a_var: np.ndarray, rhs: float) -> None:
        self.lin_rows.append((a_var @ self.T, [], rhs - float(a_var @ self.offset)))

    def add_norm(self, c: NormConstraint) -> None:
        k = len(c.idx)
        inner_T = self.T[c.idx, :]                   # inner = inner_T y + inner_0
        inner_0 = self.offset[c.idx] + c.center
        if c.p == 2:
            gb = np.zeros((k + 1, self.ny))
            hb = np.empty(k + 1)
            hb[0] = c.bound
            gb[1:, :] = -inner_T
            hb[1:] = inner_0
            self.soc_blocks.append((gb, hb))
            return
        start = self.naux
        self.naux += k
        for i in range(k):
            #  inner_i - t_i <= 0   and   -inner_i - t_i <= 0
            self.lin_rows.append((inner_T[i].copy(), [(start + i, -1.0)], -float(inner_0[i])))
            self.lin_rows.append((-inner_T[i], [(start + i, -1.0)], float(inner_0[i])))
        self.lin_rows.append((np.zeros(self.ny), [(start + i, 1.0) for i in range(k)], c.bound))

    def add_quadratic_level_set(self, Q: np.ndarray, lin: np.ndarray, const: float) -> None:
        """Encode var'Q var + 2 lin'var + const <= 0 via a rotated cone.

        With u := -2 lin'var - const and w := R var (R'R = Q), the constraint
        is ||w||^2 <= u, i.e. ||(2w, u-1)|| <= u+1.
        """
        eigw, U = np.linalg.eigh(0.5 * (Q + Q.T))
        R = (U * np.sqrt(np.maximum(eigw, 0.0))) @ U.T
        R_T = R @ self.T
        R_0 = R @ self.offset
        u_row = -2.0 * (lin @ self.T)
        u_0 = -2.0 * float(lin @ self.offset) - const
        k = R.shape[0]
        gb = np.zeros((k + 2, self.ny))
        hb = np.empty(k + 2)
        gb[0, :] = -u_row
        hb[0] = u_0 + 1.0
        gb[1 : k + 1, :] = -2.0 * R_T
        hb[1 : k + 1] = 2.0 * R_0
        gb[k + 1, :] = -u_row
        hb[k + 1] = u_0 - 1.0
        self.soc_blocks.append((gb, hb))

    def build(self):
        """Assemble (G, h, A, b, dims); rows and cone blocks are equilibrated
        to unit scale, which leaves the feasible set unchanged."""
        n = self.ny + self.naux
        nl = len(self.lin_rows)
        soc_dims = [gb.shape[0] for gb, _ in self.soc_blocks]
        mrows = nl + sum(soc_dims)
        G = np.zeros((mrows, n)) if mrows else None
        h = np.zeros(mrows) if mrows else None
        for i, (ycoef, aux, rhs) in enumerate(self.lin_rows):
            G[i, : self.ny] = ycoef
            for j, coef in aux:
                G[i, self.ny + j] = coef
            h[i] = rhs
            scale = np.max(np.abs(G[i]), initial=0.0)
            if scale > 0:
                G[i] /= scale
                h[i] /= scale
        r = nl
        for gb, hb in self.soc_blocks:
            k = gb.shape[0]
            G[r : r + k, : self.ny] = gb
            h[r : r + k] = hb
            scale = max(
                float(np.max(np.abs(gb), initial=0.0)),
                float(np.max(np.abs(hb), initial=0.0)),
            )
            if scale > 0:  # a positive factor keeps the cone membership
                G[r : r + k] /= scale
                h[r : r + k] /= scale
            r += k
        if self.eq_rows:
            A = np.zeros((len(self.eq_rows), n))
            b = np.empty(len(self.eq_rows))
            for i, (row, rhs) in enumerate(self.eq_rows):
                A[i, : self.ny] = row
                b[i] = rhs
                scale = np.max(np.abs(A[i]), initial=0.0)
                if scale > 0:
                    A[i] /= scale
                    b[i] /= scale
        else:
            A = b = None
        dims = {"l": nl, "q": soc_dims, "s": []}
        return G, h, A, b, dims, n


def encode_system(
    cs: ConstraintSystem,
    T: np.ndarray,
    offset: np.ndarray,
    relax_norm_equalities: bool = False,
) -> _Encoder:
    enc = _Encoder(T, offset)
    for c in cs.eq_linear:
        enc.add_equality(c)
    for c in cs.eq_norm:
        if not relax_norm_equalities:
            raise NumericalFailureError(
                "norm-equality constraints need the dedicated sphere solver"
            )
        enc.add_norm(NormConstraint(p=c.p, idx=c.idx, center=c.center, bound=c.bound))
    for c in cs.ineq:
        if isinstance(c, LinearConstraint):
            enc.add_linear_ineq(c.a, c.rhs)
        else:
            enc.add_norm(c)
    return enc


def _to_cvx(a):
    return None if a is None else _cvxmat(np.asarray(a, dtype=float))


def _kkt_from_cvxopt(prob: ConicProblem, sol: dict) -> KKTResiduals:
    x = np.asarray(sol["x"]).reshape(-1)
    z = np.asarray(sol["z"]).reshape(-1) if sol.get("z") is not None else np.zeros(0)
    y = np.asarray(sol["y"]).reshape(-1) if sol.get("y") is not None else np.zeros(0)
    stat = prob.q.copy()
    if prob.P is not None:
        stat = stat + prob.P @ x
    if prob.G is not None and z.size:
        stat = stat + prob.G.T @ z
    if prob.A is not None and y.size:
        stat = stat + prob.A.T @ y
    dual = float(np.max(np.abs(stat), initial=0.0))

    primal = 0.0
    comp = 0.0
    if prob.A is not None:
        primal = max(primal, float(np.max(np.abs(prob.A @ x - prob.b), initial=0.0)))
    if prob.G is not None:
        s = prob.h - prob.G @ x
        nl = prob.dims["l"]
        if nl:
            primal = max(primal, float(np.max(-s[:nl], initial=0.0)))
        r = nl
        for qd in prob.dims["q"]:
            blk = s[r : r + qd]
            primal = max(primal, float(np.linalg.norm(blk[1:]) - blk[0]))
            r += qd
        comp = abs(float(s @ z)) if z.size else 0.0
    return KKTResiduals(primal=primal, dual=dual, complementarity=comp)


def _run_cvxopt(prob: ConicProblem, options: dict) -> dict:
    _cvxsolvers.options.clear()
    _cvxsolvers.options.update(options)
    if prob.P is not None:
        return _cvxsolvers.coneqp(
            _to_cvx(prob.P),
            _to_cvx(prob.q.reshape(-1, 1)),
            _to_cvx(prob.G),
            _to_cvx(prob.h.reshape(-1, 1)) if prob.h is not None else None,
            prob.dims if prob.G is not None else None,
            _to_cvx(prob.A),
            _to_cvx(prob.b.reshape(-1, 1)) if prob.b is not None else None,
        )
    return _cvxsolvers.conelp(
        _to_cvx(prob.q.reshape(-1, 1)),
        _to_cvx(prob.G),
        _to_cvx(prob.h.reshape(-1, 1)),
        prob.dims,
        _to_cvx(prob.A),
        _to_cvx(prob.b.reshape(-1, 1)) if prob.b is not None else None,
    )


def solve_cone_program(prob: ConicProblem) -> Solution:
    """Run the interior-point method on a normalized cone program.

    Ill-conditioned instances are retried down a small tolerance ladder; an
    accepted point must still pass the independent KKT residual check.
    """
    last_error: Exception | None = None
    best: Solution | None = None
    for rung, options in enumerate(_OPTION_LADDER):
        try:
            raw = _run_cvxopt(prob, options)
        except ValueError as exc:  # rank deficiencies, scaling breakdowns
            last_error = exc
            continue
        except ArithmeticError as exc:
            last_error = exc
            continue

        status = raw["status"]
        if status == "primal infeasible":
            return Solution(x=np.full(prob.n, np.nan), objective=np.nan, status="infeasible")
        if status == "dual infeasible":
            return Solution(x=np.full(prob.n, np.nan), objective=-np.inf, status="unbounded")
        x = np.asarray(raw["x"]).reshape(-1)
        kkt = _kkt_from_cvxopt(prob, raw)
        obj = float(prob.q @ x) + (0.5 * float(x @ prob.P @ x) if prob.P is not None else 0.0)
        note = "" if rung == 0 else f"solved at fallback tolerance rung {rung}"
        if status == "optimal":
            return Solution(x=x, objective=obj, status="optimal", kkt=kkt, note=note)
        if kkt.max() <= 1e-6:  # 'unknown' but numerically converged
            return Solution(x=x, objective=obj, status="optimal", kkt=kkt,
                            note=(note + "; " if note else "") + "accepted at relaxed tolerance")
        if best is None or (best.kkt is not None and kkt.max() < best.kkt.max()):
            best = Solution(x=x, objective=obj, status="max_iter", kkt=kkt, note=note)
    if best is not None:
        return best
    raise NumericalFailureError(f"cone solver failed on every rung: {last_error}")


# ---------------------------------------------------------------------------
# Constrained weighted least squares
# ---------------------------------------------------------------------------

def wls_objective(A: np.ndarray, Z: np.ndarray, v: np.ndarray, beta: np.ndarray) -> float:
    r = A - Z @ beta
    return float(r @ (v * r))


def solve_wls(
    A: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    v: np.ndarray,
    cs: ConstraintSystem,
) -> Solution:
    """Minimize (A - Bw - Cr)'V(A - Bw - Cr) over the constraint system.

    Columns of [B C] are scaled to unit l2 norm internally; the returned point
    is in the original coordinates.
    """
    A = np.asarray(A, dtype=float).reshape(-1)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.asarray(C, dtype=float).reshape(B.shape[0], -1)
    v = np.asarray(v, dtype=float).reshape(-1)
    Z = np.hstack([B, C]) if C.shape[1] else B
    d = Z.shape[1]
    if cs.dim != d:
        raise ValueError(f"constraint system dimension {cs.dim} != design dimension {d}")

    if cs.is_empty:
        return _solve_wls_unconstrained(A, Z, v)
    if cs.eq_norm:
        return _solve_wls_sphere(A, Z, v, cs)

    col_norms = np.linalg.norm(Z, axis=0)
    scale = np.where(col_norms > 0, col_norms, 1.0)
    T = np.diag(1.0 / scale)
    Zs = Z / scale

    enc = encode_system(cs, T=T, offset=np.zeros(d))
    G, h, Aeq, beq, dims, n = enc.build()

    H = Zs.T @ (v[:, None] * Zs)
    P = np.zeros((n, n))
    P[:d, :d] = 2.0 * H
    q = np.zeros(n)
    q[:d] = -2.0 * (Zs.T @ (v * A))

    prob = ConicProblem(n=n, q=q, P=P, G=G, h=h, dims=dims, A=Aeq, b=beq)
    sol = solve_cone_program(prob)
    if sol.status == "infeasible":
        raise InfeasibleError("constraint set is empty")
    if sol.status != "optimal" and (sol.kkt is None or sol.kkt.max() > 1e-4):
        raise NumericalFailureError(f"fit solver did not converge (status={sol.status})")

    beta = sol.x[:d] / scale
    kkt = sol.kkt
    note = sol.note
    base_obj = wls_objective(A, Z, v, beta)
    tol = 1e-9 * (base_obj + float(A @ (v * A)))  # below the solver's resolution
    for tau in (1e-6, 1e-5, 1e-4, 1e-3):
        polished = _polish_support(A, Z, v, cs, beta, tau, base_obj, tol)
        if polished is None:
            continue
        beta, kkt, extra = polished
        note = (note + "; " if note else "") + extra
    eigs = np.linalg.eigvalsh(H)
    if eigs[0] <= 1e-12 * max(eigs[-1], 1.0):
        note = (note + "; " if note else "") + "degenerate objective: optimum may be non-unique"
        warnings.warn(
            "least-squares objective is not strictly convex", DegenerateObjectiveWarning
        )
    return Solution(
        x=beta,
        objective=wls_objective(A, Z, v, beta),
        status="optimal",
        kkt=kkt,
        note=note,
    )


def _restrict_system(cs: ConstraintSystem, keep: np.ndarray) -> ConstraintSystem | None:
    """Constraint system after fixing the dropped coordinates at zero.

    Only valid for systems whose norm constraints are centered at the origin
    (fit-time systems); returns None when the surgery is not applicable.
    """
    eq_linear = tuple(LinearConstraint(a=c.a[keep], rhs=c.rhs) for c in cs.eq_linear)
    ineq = []
    for c in cs.ineq:
        if isinstance(c, LinearConstraint):
            a = c.a[keep]
            if not np.any(a):
                if c.rhs < -1e-12:
                    return None
                continue
            ineq.append(LinearConstraint(a=a, rhs=c.rhs))
        else:
            if np.any(c.center):
                return None
            pos = {orig: new for new, orig in enumerate(np.flatnonzero(keep))}
            idx = np.array([pos[i] for i in c.idx if i in pos], dtype=int)
            if idx.size == 0:
                continue
            ineq.append(
                NormConstraint(p=c.p, idx=idx, center=np.zeros(idx.size), bound=c.bound)
            )
    n_w = int(np.sum(keep[: cs.n_w]))
    return ConstraintSystem(
        dim=int(np.sum(keep)),
        n_w=n_w,
        eq_linear=eq_linear,
        eq_norm=(),
        ineq=tuple(ineq),
    )


def _polish_support(
    A: np.ndarray,
    Z: np.ndarray,
    v: np.ndarray,
    cs: ConstraintSystem,
    beta: np.ndarray,
    tau: float,
    base_obj: float,
    tol: float,
) -> tuple[np.ndarray, KKTResiduals, str] | None:
    """Zero out numerically-dead weight coordinates (|w| <= tau) and re-solve
    on the support; accepted only when the original objective is preserved."""
    if cs.eq_norm:
        return None
    n_w = cs.n_w
    w = beta[:n_w]
    dead = (np.abs(w) <= tau) & (w != 0.0)
    if not np.any(dead) or np.all(np.abs(w) <= tau):
        return None
    keep = np.ones(beta.shape[0], dtype=bool)
    keep[:n_w] = np.abs(w) > tau
    reduced = _restrict_system(cs, keep)
    if reduced is None:
        return None
    try:
        sub = solve_wls(A, Z[:, keep], np.empty((Z.shape[0], 0)), v, reduced)
    except (InfeasibleError, NumericalFailureError):
        return None
    if sub.status != "optimal":
        return None
    if sub.objective > base_obj + tol:
        return None
    full = np.zeros_like(beta)
    full[keep] = sub.x
    return full, sub.kkt, f"support polish zeroed {int(np.sum(dead))} weights"


def _solve_wls_unconstrained(A: np.ndarray, Z: np.ndarray, v: np.ndarray) -> Solution:
    sw = np.sqrt(v)
    beta, *_ = np.linalg.lstsq(sw[:, None] * Z, sw * A, rcond=None)
    col_norms = np.linalg.norm(Z, axis=0)
    scale = np.where(col_norms > 0, col_norms, 1.0)
    stat = float(np.max(np.abs((Z / scale).T @ (v * (A - Z @ beta))), initial=0.0))
    kkt = KKTResiduals(primal=0.0, dual=stat, complementarity=0.0)
    note = ""
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        note = "degenerate objective: least-norm optimum returned"
        warnings.warn(
            "least-squares objective is not strictly convex", DegenerateObjectiveWarning
        )
    return Solution(
        x=beta, objective=wls_objective(A, Z, v, beta), status="optimal", kkt=kkt, note=note
    )


def _solve_wls_sphere(
    A: np.ndarray, Z: np.ndarray, v: np.ndarray, cs: ConstraintSystem
) -> Solution:
    """l2-equality constraint: solve the ball problem first; when the ball
    solution is interior, find the sphere optimum by a one-dimensional search
    over the Lagrange multiplier."""
    norm_eq = cs.eq_norm[0]
    Q = norm_eq.bound
    ball_cs = ConstraintSystem(
        dim=cs.dim,
        n_w=cs.n_w,
        eq_linear=cs.eq_linear,
        eq_norm=(),
        ineq=(*cs.ineq, NormConstraint(p=2, idx=norm_eq.idx, center=norm_eq.center, bound=Q)),
    )
    sol = solve_wls(A, Z, np.empty((Z.shape[0], 0)), v, ball_cs)
    w_norm = float(np.linalg.norm(sol.x[norm_eq.idx] + norm_eq.center))
    if w_norm >= Q * (1 - 1e-6):
        sol.note = (sol.note + "; " if sol.note else "") + "l2 equality active at ball solution"
        return sol

    if cs.eq_linear or cs.ineq:
        raise NumericalFailureError(
            "a slack l2 equality combined with other constraints is not supported"
        )
    H = Z.T @ (v[:, None] * Z)
    g = Z.T @ (v * A)
    d = Z.shape[1]
    e_w = np.zeros(d)
    e_w[norm_eq.idx] = 1.0
    E = np.diag(e_w)

    def beta_at(lam: float) -> np.ndarray:
        return np.linalg.solve(H + lam * E, g)

    # ||w(lam)|| decreases in lam; an interior ball solution means lam < 0,
    # bounded below so that H + lam E stays positive definite
    eigs = np.linalg.eigvalsh(H)
    lo = -0.999 * eigs[0] if eigs[0] > 0 else -1e-12
    hi = 0.0
    if float(np.linalg.norm(beta_at(lo)[norm_eq.idx])) < Q:
        raise NumericalFailureError("sphere constraint unreachable within the stable range")
    lam = 0.0
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        nw = float(np.linalg.norm(beta_at(lam)[norm_eq.idx]))
        if abs(nw - Q) <= 1e-13 * max(Q, 1.0):
            break
        if nw > Q:
            lo = lam
        else:
            hi = lam
    beta = beta_at(lam)
    scale = max(1.0, float(np.max(np.abs(H))))
    stat = (H @ beta - g + lam * (E @ beta)) / scale
    kkt = KKTResiduals(
        primal=abs(float(np.linalg.norm(beta[norm_eq.idx])) - Q),
        dual=float(np.max(np.abs(stat), initial=0.0)),
        complementarity=0.0,
    )
    return Solution(
        x=beta,
        objective=wls_objective(A, Z, v, beta),
        status="optimal",
        kkt=kkt,
        note="sphere optimum via multiplier search",
    )


# ---------------------------------------------------------------------------
# Linear objective over a quadratic level set intersected with Delta*
# ---------------------------------------------------------------------------

def closed_form_level_extreme(
    c: np.ndarray, Qhat: np.ndarray, G: np.ndarray, sense: str
) -> tuple[float, np.ndarray]:
    """Extreme of c'x over {x : x'Qhat x <= 2 G'x} for positive-definite Qhat.

    The set is the ellipsoid ||Rx - m|| <= ||m|| with R'R = Qhat, m = R^{-T}G;
    its support function gives the optimum in closed form.
    """
    np.linalg.cholesky(Qhat)  # positive-definite or raise
    z = np.linalg.solve(Qhat, G)
    y = np.linalg.solve(Qhat, c)
    radius = math.sqrt(max(float(G @ z), 0.0))
    n_c = math.sqrt(max(float(c @ y), 0.0))
    sgn = 1.0 if sense == "max" else -1.0
    value = float(c @ z) + sgn * radius * n_c
    x = z + sgn * (radius / n_c) * y if n_c > 0 else np.zeros_like(z)
    return value, x


def solve_linear_over_level_set(
    c: np.ndarray,
    Qhat: np.ndarray,
    G: np.ndarray,
    cs_delta: ConstraintSystem,
    sense: str = "min",
    method: str = "auto",
) -> Solution:
    """Optimize c'delta over delta in Delta* and delta'Qhat delta - 2G'delta <= 0.

    ``method='auto'`` uses the closed form when Delta* is unconstrained and
    Qhat is positive definite; ``method='conic'`` always runs the cone solver.
    An unbounded problem is reported via status and the caller treats the
    bound as +/-inf.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    c = np.asarray(c, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float).reshape(-1)
    d = c.shape[0]
    Qhat = np.asarray(Qhat, dtype=float)
    asym = np.max(np.abs(Qhat - Qhat.T), initial=0.0)
    if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(Qhat)))):
        raise ValueError("Qhat must be symmetric")

    if method == "auto" and cs_delta.is_empty:
        try:
            value, x = closed_form_level_extreme(c, Qhat, G, sense)
            return Solution(x=x, objective=value, status="optimal",
                            kkt=KKTResiduals(0.0, 0.0, 0.0), note="closed form")
        except np.linalg.LinAlgError:
            pass  # singular Qhat: defer to the cone solver

    diag = np.diag(Qhat).copy()
    s = np.ones(d)
    pos = diag > 0
    s[pos] = 1.0 / np.sqrt(diag[pos])
    T = np.diag(s)
    enc = encode_system(cs_delta, T=T, offset=np.zeros(d), relax_norm_equalities=True)
    enc.add_quadratic_level_set(Qhat, lin=-G, const=0.0)  # encoder applies the T map
    Gm, h, Aeq, beq, dims, n = enc.build()

    cs_scaled = c * s
    obj_scale = float(np.linalg.norm(cs_scaled))
    q = np.zeros(n)
    if obj_scale > 0:
        q[:d] = cs_scaled / obj_scale
    if sense == "max":
        q = -q

    # coordinates untouched by any constraint make the problem structurally
    # unbounded when they carry objective weight, and are droppable otherwise
    stacked = Gm if Aeq is None else np.vstack([Gm, Aeq])
    free = ~np.any(stacked != 0.0, axis=0)
    if np.any(free):
        if np.any(np.abs(q[free]) > 0):
            obj = math.inf if sense == "max" else -math.inf
            return Solution(x=np.full(d, np.nan), objective=obj, status="unbounded",
                            note="free coordinate with nonzero objective")
        keep = ~free
        Gm = Gm[:, keep]
        Aeq = None if Aeq is None else Aeq[:, keep]
        q_red = q[keep]
        prob = ConicProblem(n=int(keep.sum()), q=q_red, G=Gm, h=h, dims=dims, A=Aeq, b=beq)
        sol = solve_cone_program(prob)
        if sol.status not in ("infeasible", "unbounded"):
            full = np.zeros(n)
            full[keep] = sol.x
            sol = Solution(x=full, objective=sol.objective, status=sol.status,
                           kkt=sol.kkt, note=sol.note)
    else:
        prob = ConicProblem(n=n, q=q, G=Gm, h=h, dims=dims, A=Aeq, b=beq)
        sol = solve_cone_program(prob)
    if sol.status == "infeasible":
        raise InfeasibleError(
            "level-set problem infeasible: delta=0 should always be feasible"
        )
    if sol.status == "unbounded":
        obj = math.inf if sense == "max" else -math.inf
        return Solution(x=sol.x, objective=obj, status="unbounded", note=sol.note)
    delta = sol.x[:d] * s
    value = float(c @ delta)
    note = sol.note
    if cs_delta.eq_norm:
        note = (note + "; " if note else "") + "norm equality relaxed to a ball (conservative)"
    return Solution(x=delta, objective=value, status=sol.status, kkt=sol.kkt, note=note)


# ---------------------------------------------------------------------------
# Active-set solver for linearly-constrained level-set problems
# ---------------------------------------------------------------------------

def _face_extreme(
    c: np.ndarray,
    Qr: np.ndarray,
    g: np.ndarray,
    A_act: np.ndarray,
    b_act: np.ndarray,
) -> tuple[float, np.ndarray] | None:
    """Extreme of c'xi over {A_act xi = b_act, xi'Qr xi - 2 g'xi <= 0}.

    Returns (value, maximizer) or None when the face misses the ellipsoid or
    the reduced system degenerates.
    """
    k = Qr.shape[0]
    if A_act.shape[0]:
        xi0, *_ = np.linalg.lstsq(A_act, b_act, rcond=None)
        _, sv, vt = np.linalg.svd(A_act)
        rank = int(np.sum(sv > 1e-12 * (sv[0] if sv.size else 1.0)))
        N = vt[rank:].T
    else:
        xi0 = np.zeros(k)
        N = np.eye(k)
    const0 = float(xi0 @ Qr @ xi0 - 2.0 * g @ xi0)
    if N.shape[1] == 0:
        if const0 > 1e-9 * max(1.0, abs(const0)):
            return None
        return float(c @ xi0), xi0
    QS = N.T @ Qr @ N
    gS = N.T @ (g - Qr @ xi0)
    try:
        zS = np.linalg.solve(QS, gS)
        cS = N.T @ c
        yS = np.linalg.solve(QS, cS)
    except np.linalg.LinAlgError:
        return None
    r2 = float(gS @ zS) - const0
    if r2 < 0.0:
        if r2 < -1e-9 * max(1.0, abs(const0)):
            return None
        r2 = 0.0
    radius = math.sqrt(r2)
    nc = math.sqrt(max(float(cS @ yS), 0.0))
    center = xi0 + N @ zS
    if nc <= 0.0:
        return float(c @ center), center
    xi = center + (radius / nc) * (N @ yS)
    return float(c @ center) + radius * nc, xi


def active_set_level_extreme(
    c: np.ndarray,
    Qr: np.ndarray,
    g: np.ndarray,
    A_bnd: np.ndarray,
    b_bnd: np.ndarray,
    feas_tol: float = 1e-9,
) -> tuple[float, np.ndarray] | None:
    """Maximize c'xi over {A_bnd xi <= b_bnd, xi'Qr xi <= 2 g'xi} for positive
    definite Qr by activating violated bounds one at a time; every candidate
    is verified through its KKT multipliers.  Returns None when the method
    does not converge cleanly (caller falls back to the cone solver).
    """
    m = A_bnd.shape[0]
    scale_b = np.maximum(1.0, np.abs(b_bnd)) if m else np.empty(0)
    active: list[int] = []
    last_added = -1
    for _ in range(3 * (m + 2)):
        A_act = A_bnd[active] if active else np.empty((0, Qr.shape[0]))
        b_act = b_bnd[active] if active else np.empty(0)
        res = _face_extreme(c, Qr, g, A_act, b_act)
        if res is None:
            return None
        value, xi = res
        viol = (A_bnd @ xi - b_bnd) / scale_b if m else np.empty(0)
        worst = int(np.argmax(viol)) if m else -1
        if m and viol[worst] > feas_tol:
            if worst in active:
                return None  # numerically stuck on an active face
            active.append(worst)
            last_added = worst
            continue
        # candidate is feasible: verify multipliers
        grad_q = 2.0 * (Qr @ xi - g)
        cols = [grad_q]
        cols.extend(A_bnd[j] for j in active)
        M = np.column_stack(cols)
        mult, *_ = np.linalg.lstsq(M, c, rcond=None)
        resid = float(np.max(np.abs(M @ mult - c), initial=0.0))
        if resid > 1e-7 * max(1.0, float(np.max(np.abs(c), initial=0.0))):
            return None
        mu, lam = mult[0], mult[1:]
        if mu < -1e-9:
            return None
        if lam.size and np.min(lam) < -1e-9:
            drop = active[int(np.argmin(lam))]
            active.remove(drop)
            if drop == last_added:
                return None  # would cycle
            continue
        return value, xi
    return None


# ---------------------------------------------------------------------------
# Batched level-set driver used by the simulation loop
# ---------------------------------------------------------------------------

class LevelSetFamily:
    """Pre-reduced level-set problems sharing Delta* and the objective rows.

    Linear equalities are eliminated through a null-space parametrization.
    For each draw, the closed-form ellipsoid extreme in the reduced space is
    used whenever it already satisfies the remaining constraints; only the
    violators go to the cone solver.
    """

    def __init__(
        self,
        Qhat: np.ndarray,
        cs_delta: ConstraintSystem,
        p_rows: np.ndarray,
        feas_tol: float = 1e-8,
    ):
        self.cs = cs_delta
        self.Qhat = np.asarray(Qhat, dtype=float)
        self.d = self.Qhat.shape[0]
        self.feas_tol = feas_tol
        self.p_rows = np.atleast_2d(np.asarray(p_rows, dtype=float))

        if cs_delta.eq_linear:
            eq_rows = np.vstack([c.a for c in cs_delta.eq_linear])
            _, sv, vt = np.linalg.svd(eq_rows)
            rank = int(np.sum(sv > 1e-12 * (sv[0] if sv.size else 1.0)))
            self.N = vt[rank:].T
        else:
            self.N = np.eye(self.d)

        self.Qr = self.N.T @ self.Qhat @ self.N
        self.c_r = self.p_rows @ self.N  # (T, k)
        try:
            np.linalg.cholesky(self.Qr)
            self.pd = self.Qr.shape[0] > 0
        except np.linalg.LinAlgError:
            self.pd = False
        if self.pd:
            self.Qinv_c = np.linalg.solve(self.Qr, self.c_r.T)  # (k, T)
            self.c_norms = np.sqrt(
                np.maximum(np.einsum("tk,kt->t", self.c_r, self.Qinv_c), 0.0)
            )

        lin = [c for c in cs_delta.ineq if isinstance(c, LinearConstraint)]
        self.linear_only = (
            len(lin) == len(cs_delta.ineq) and not cs_delta.eq_norm
        )
        if self.linear_only and lin:
            self.A_bnd = np.vstack([c.a for c in lin]) @ self.N
            self.b_bnd = np.array([c.rhs for c in lin])
        else:
            self.A_bnd = np.empty((0, self.N.shape[1]))
            self.b_bnd = np.empty(0)

    def _feasible(self, delta: np.ndarray) -> bool:
        for con in self.cs.ineq:
            if con.value(delta) > self.feas_tol:
                return False
        for con in self.cs.eq_norm:
            if abs(con.value(delta)) > self.feas_tol:
                return False
        return True

    def extremes_for_draw(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray, int, int]:
        """Per-period (inf, sup) of p_t'delta for one simulated draw G.

        Returns (lows, highs, n_cone_calls, n_failures); failed subproblems
        leave NaN entries for the caller to drop.
        """
        T = self.p_rows.shape[0]
        lows = np.full(T, np.nan)
        highs = np.full(T, np.nan)
        cone_calls = 0
        failures = 0

        fast = None
        g_r = None
        if self.pd:
            g_r = self.N.T @ G
            z = np.linalg.solve(self.Qr, g_r)
            radius = math.sqrt(max(float(g_r @ z), 0.0))
            if radius == 0.0:
                # the level set degenerates to {0}, which is always feasible
                ok = ~np.isnan(self.p_rows).any(axis=1)
                lows[ok] = 0.0
                highs[ok] = 0.0
                return lows, highs, 0, 0
            fast = (z, radius)

        for t in range(T):
            p = self.p_rows[t]
            if np.any(np.isnan(p)):
                continue
            lo = hi = None
            if fast is not None:
                z, radius = fast
                n_t = float(self.c_norms[t])
                if n_t == 0.0:
                    lows[t] = highs[t] = 0.0
                    continue
                c_t = self.c_r[t]
                if self.linear_only:
                    for sense, sgn in (("min", -1.0), ("max", 1.0)):
                        res = active_set_level_extreme(
                            sgn * c_t, self.Qr, g_r, self.A_bnd, self.b_bnd
                        )
                        if res is None:
                            continue
                        val, xi = res
                        if not self._feasible(self.N @ xi):
                            continue
                        if sense == "min":
                            lo = -val
                        else:
                            hi = val
                else:
                    center_val = float(c_t @ z)
                    y_t = self.Qinv_c[:, t]
                    for sense, sgn in (("min", -1.0), ("max", 1.0)):
                        delta = self.N @ (z + sgn * (radius / n_t) * y_t)
                        if self._feasible(delta):
                            val = center_val + sgn * radius * n_t
                            if sense == "min":
                                lo = val
                            else:
                                hi = val
                if lo is not None and hi is not None:
                    lows[t], highs[t] = lo, hi
                    continue

            for sense in ("min", "max"):
                if (sense == "min" and lo is not None) or (sense == "max" and hi is not None):
                    continue
                cone_calls += 1
                try:
                    sol = solve_linear_over_level_set(
                        p, self.Qhat, G, self.cs, sense=sense, method="conic"
                    )
                except NumericalFailureError:
                    failures += 1
                    continue
                if sol.status == "unbounded":
                    val = math.inf if sense == "max" else -math.inf
                elif sol.status == "optimal":
                    val = sol.objective
                else:
                    failures += 1
                    continue
                if sense == "min":
                    lo = val
                else:
                    hi = val
            if lo is not None:
                lows[t] = lo
            if hi is not None:
                highs[t] = hi
        return lows, highs, cone_calls, failures
