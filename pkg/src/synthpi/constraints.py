"""Feasibility-set grammar for the weight vector and its materialized form.

A :class:`ConstraintSpec` captures the (name, p, dir, Q, Q2, lb) options; a
:class:`ConstraintSystem` realizes them as explicit equality/inequality
functions with analytic gradients over the full coefficient vector
beta = (w', r')'.  The covariate coefficients r are never constrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .exceptions import InconsistentSpecError, MissingQError

PRESETS = ("ols", "simplex", "lasso", "ridge", "L1-L2")
NORM_CHOICES = ("none", "L1", "L2", "L1-L2")
DIR_CHOICES = ("==", "<=", "==/<=")


@dataclass(frozen=True)
class ConstraintSpec:
    """Validated constraint options; Q/Q2 may stay None until tuning."""

    p: str = "none"
    dir: str | None = None
    Q: float | None = None
    Q2: float | None = None
    lb: float = -math.inf
    name: str | None = None

    def needs_tuning(self) -> bool:
        if self.p == "none":
            return False
        if self.Q is None:
            return True
        return self.p == "L1-L2" and self.Q2 is None

    def with_q(self, Q: float | None = None, Q2: float | None = None) -> "ConstraintSpec":
        return replace(
            self,
            Q=self.Q if Q is None else Q,
            Q2=self.Q2 if Q2 is None else Q2,
        )

    def label(self) -> str:
        if self.name:
            return self.name
        if self.p == "none":
            return "ols"
        parts = [self.p, self.dir or ""]
        if self.lb == 0:
            parts.append("lb0")
        return "-".join(p for p in parts if p)


def from_options(raw: dict | None = None, **kwargs) -> ConstraintSpec:
    """Build a ConstraintSpec from a preset name and/or manual options.

    Presets expand to: ols -> R^J; simplex -> {w >= 0, ||w||_1 = Q};
    lasso -> {||w||_1 <= Q}; ridge -> {||w||_2 <= Q};
    L1-L2 -> {w >= 0, ||w||_1 = Q, ||w||_2 <= Q2}.
    """
    opts = dict(raw or {})
    opts.update(kwargs)
    name = opts.pop("name", None)
    p = opts.pop("p", None)
    dir_ = opts.pop("dir", None)
    Q = opts.pop("Q", None)
    Q2 = opts.pop("Q2", None)
    lb = opts.pop("lb", None)
    if opts:
        raise InconsistentSpecError(f"unknown constraint options: {sorted(opts)}")

    if p == "no norm":
        p = "none"

    if name is not None:
        if name not in PRESETS:
            raise InconsistentSpecError(f"unknown preset {name!r}; choose from {PRESETS}")
        preset = {
            "ols": dict(p="none", dir=None, lb=-math.inf),
            "simplex": dict(p="L1", dir="==", lb=0.0, Q=1.0 if Q is None else Q),
            "lasso": dict(p="L1", dir="<=", lb=-math.inf, Q=Q),
            "ridge": dict(p="L2", dir="<=", lb=-math.inf, Q=Q),
            "L1-L2": dict(p="L1-L2", dir="==/<=", lb=0.0, Q=1.0 if Q is None else Q, Q2=Q2),
        }[name]
        conflicts = {
            "p": (p, preset["p"]),
            "dir": (dir_, preset["dir"]),
            "lb": (lb, preset["lb"]),
        }
        for key, (given, expected) in conflicts.items():
            if given is not None and given != expected:
                raise InconsistentSpecError(
                    f"option {key}={given!r} conflicts with preset {name!r}"
                )
        if name == "ols" and Q is not None:
            raise InconsistentSpecError("preset 'ols' takes no Q")
        if name != "L1-L2" and Q2 is not None:
            raise InconsistentSpecError(f"preset {name!r} takes no Q2")
        spec = ConstraintSpec(name=name, Q=preset.get("Q"), Q2=preset.get("Q2"),
                              p=preset["p"], dir=preset["dir"], lb=preset["lb"])
        _validate(spec)
        return spec

    if p is None:
        raise InconsistentSpecError("either a preset name or a norm choice p is required")
    if p not in NORM_CHOICES:
        raise InconsistentSpecError(f"unknown norm {p!r}; choose from {NORM_CHOICES}")

    if p == "none":
        if Q is not None or Q2 is not None or dir_ is not None:
            raise InconsistentSpecError("p='none' admits no dir/Q/Q2")
        spec = ConstraintSpec(p="none", dir=None, lb=-math.inf if lb is None else float(lb))
        _validate(spec)
        return spec

    if dir_ is None:
        dir_ = "==/<=" if p == "L1-L2" else "<="
    if dir_ not in DIR_CHOICES:
        raise InconsistentSpecError(f"unknown dir {dir_!r}; choose from {DIR_CHOICES}")
    if lb is None:
        lb = 0.0 if (dir_ in ("==", "==/<=") and p in ("L1", "L1-L2")) else -math.inf
    spec = ConstraintSpec(p=p, dir=dir_, Q=Q, Q2=Q2, lb=float(lb))
    _validate(spec)
    return spec


def _validate(spec: ConstraintSpec) -> None:
    if spec.p == "none":
        return
    if spec.lb not in (0.0, -math.inf):
        raise InconsistentSpecError("lb must be 0 or -inf")
    if spec.p == "L1-L2":
        if spec.dir != "==/<=":
            raise InconsistentSpecError("p='L1-L2' requires dir='==/<='")
        if spec.lb != 0.0:
            raise InconsistentSpecError(
                "p='L1-L2' needs lb=0: an l1 equality on sign-free weights is nonconvex"
            )
        return
    if spec.dir == "==/<=":
        raise InconsistentSpecError("dir='==/<=' is only valid with p='L1-L2'")
    if spec.p == "L1" and spec.dir == "==" and spec.lb != 0.0:
        raise InconsistentSpecError(
            "an l1 equality with lb=-inf is a nonconvex sphere; use lb=0"
        )
    if spec.p == "L2" and spec.dir == "==" and spec.lb == 0.0:
        raise InconsistentSpecError(
            "an l2 equality restricted to w >= 0 is nonconvex; use lb=-inf"
        )


@dataclass(frozen=True)
class LinearConstraint:
    """m(x) = a'x - rhs, with constant gradient a."""

    a: np.ndarray
    rhs: float

    def value(self, x: np.ndarray) -> float:
        return float(self.a @ x - self.rhs)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.a

    nonlinear = False


@dataclass(frozen=True)
class NormConstraint:
    """m(x) = ||x[idx] + center||_p - bound for p in {1, 2}.

    The l1 subgradient takes 0 on zero coordinates (minimal-norm selection);
    the l2 gradient is left at 0 at the center point where it is undefined.
    """

    p: int
    idx: np.ndarray
    center: np.ndarray
    bound: float
    equality: bool = False

    def _inner(self, x: np.ndarray) -> np.ndarray:
        return x[self.idx] + self.center

    def value(self, x: np.ndarray) -> float:
        z = self._inner(x)
        norm = np.sum(np.abs(z)) if self.p == 1 else math.sqrt(float(z @ z))
        return float(norm - self.bound)

    def grad(self, x: np.ndarray) -> np.ndarray:
        z = self._inner(x)
        g = np.zeros_like(x, dtype=float)
        if self.p == 1:
            g[self.idx] = np.sign(z)
        else:
            norm = math.sqrt(float(z @ z))
            if norm > 0:
                g[self.idx] = z / norm
        return g

    @property
    def nonlinear(self) -> bool:
        # l1 sets are polyhedral; only l2 constraints count as genuinely nonlinear
        return self.p == 2


Constraint = Union[LinearConstraint, NormConstraint]


@dataclass(frozen=True)
class ConstraintSystem:
    """W x R as {beta: m_eq(beta) = 0, m_in(beta) <= 0} over R^dim."""

    dim: int
    n_w: int
    eq_linear: tuple[LinearConstraint, ...] = ()
    eq_norm: tuple[NormConstraint, ...] = ()
    ineq: tuple[Constraint, ...] = ()

    @property
    def n_eq(self) -> int:
        return len(self.eq_linear) + len(self.eq_norm)

    @property
    def n_in(self) -> int:
        return len(self.ineq)

    @property
    def is_empty(self) -> bool:
        return self.n_eq == 0 and self.n_in == 0

    @property
    def has_nonlinear(self) -> bool:
        return any(c.nonlinear for c in self.ineq) or bool(self.eq_norm)

    def m_eq(self, x: np.ndarray) -> np.ndarray:
        return np.array([c.value(x) for c in (*self.eq_linear, *self.eq_norm)])

    def m_in(self, x: np.ndarray) -> np.ndarray:
        return np.array([c.value(x) for c in self.ineq])

    def grad_in(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.ineq[j].grad(x)

    def is_member(self, x: np.ndarray, tol: float = 1e-7) -> bool:
        if self.n_eq and np.max(np.abs(self.m_eq(x)), initial=0.0) > tol:
            return False
        if self.n_in and np.max(self.m_in(x), initial=0.0) > tol:
            return False
        return True


def materialize(spec: ConstraintSpec, n_w: int, n_r: int = 0) -> ConstraintSystem:
    """Realize a constraint spec over beta = (w', r')' in R^(n_w + n_r).

    An l1 equality on nonnegative weights becomes the linear equality
    sum(w) = Q plus sign constraints; l2 balls stay as norm constraints
    flagged nonlinear.
    """
    dim = n_w + n_r
    w_idx = np.arange(n_w)
    zero_center = np.zeros(n_w)

    def sum_row() -> np.ndarray:
        a = np.zeros(dim)
        a[:n_w] = 1.0
        return a

    def sign_constraints() -> list[LinearConstraint]:
        out = []
        for j in range(n_w):
            a = np.zeros(dim)
            a[j] = -1.0
            out.append(LinearConstraint(a=a, rhs=0.0))
        return out

    if spec.p == "none":
        return ConstraintSystem(dim=dim, n_w=n_w)

    if spec.Q is None:
        raise MissingQError(f"constraint {spec.label()!r} needs Q (resolve tuning first)")
    Q = float(spec.Q)
    if Q <= 0:
        raise InconsistentSpecError("Q must be strictly positive")

    eq_linear: list[LinearConstraint] = []
    eq_norm: list[NormConstraint] = []
    ineq: list[Constraint] = []

    if spec.p == "L1":
        if spec.lb == 0.0:
            ineq.extend(sign_constraints())
            if spec.dir == "==":
                eq_linear.append(LinearConstraint(a=sum_row(), rhs=Q))
            else:
                ineq.append(LinearConstraint(a=sum_row(), rhs=Q))
        else:
            ineq.append(NormConstraint(p=1, idx=w_idx, center=zero_center, bound=Q))
    elif spec.p == "L2":
        if spec.lb == 0.0:
            ineq.extend(sign_constraints())
        norm = NormConstraint(
            p=2, idx=w_idx, center=zero_center, bound=Q, equality=spec.dir == "=="
        )
        if norm.equality:
            eq_norm.append(norm)
        else:
            ineq.append(norm)
    elif spec.p == "L1-L2":
        if spec.Q2 is None:
            raise MissingQError("p='L1-L2' needs Q2 (resolve tuning first)")
        if spec.Q2 <= 0:
            raise InconsistentSpecError("Q2 must be strictly positive")
        ineq.extend(sign_constraints())
        eq_linear.append(LinearConstraint(a=sum_row(), rhs=Q))
        ineq.append(
            NormConstraint(p=2, idx=w_idx, center=zero_center, bound=float(spec.Q2))
        )
    else:
        raise InconsistentSpecError(f"unknown norm {spec.p!r}")

    return ConstraintSystem(
        dim=dim,
        n_w=n_w,
        eq_linear=tuple(eq_linear),
        eq_norm=tuple(eq_norm),
        ineq=tuple(ineq),
    )
