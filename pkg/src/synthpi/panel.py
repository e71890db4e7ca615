"""Long-format panel ingestion and construction of the stacked design system.

The treated unit's feature paths are stacked feature-major into ``A``; donor
paths form the columns of ``B``; deterministic covariate adjustments
(constant, trend) form the block-diagonal ``C``; post-treatment predictor rows
go into ``P``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    AllPrePeriodsDroppedError,
    CollinearCovariatesError,
    ConfigError,
    DuplicateKeyError,
    EmptyPeriodSetError,
    RankDeficientCError,
    UnknownUnitError,
)

COVARIATE_TERMS = ("constant", "trend")


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for :func:`load_panel`.

    ``features`` defaults to the outcome variable alone; when given, the
    outcome is always treated as the first feature.
    """

    id_var: str
    time_var: str
    outcome_var: str
    unit_tr: str
    unit_co: tuple[str, ...]
    period_pre: tuple[int, ...]
    period_post: tuple[int, ...]
    features: tuple[str, ...] = ()

    def feature_list(self) -> tuple[str, ...]:
        feats = list(self.features) if self.features else [self.outcome_var]
        if self.outcome_var not in feats:
            feats.insert(0, self.outcome_var)
        elif feats[0] != self.outcome_var:
            feats.remove(self.outcome_var)
            feats.insert(0, self.outcome_var)
        return tuple(feats)


@dataclass(frozen=True)
class PanelData:
    """Validated long-format panel keyed by (unit, time, feature).

    ``values`` maps (unit, time, feature) to a float; a missing observation is
    simply an absent key.  Feature 1 is the outcome.
    """

    values: Mapping[tuple[str, int, str], float]
    treated: str
    donors: tuple[str, ...]
    pre_periods: tuple[int, ...]
    post_periods: tuple[int, ...]
    features: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.pre_periods or not self.post_periods:
            raise EmptyPeriodSetError("pre- and post-period sets must both be nonempty")
        if set(self.pre_periods) & set(self.post_periods):
            raise EmptyPeriodSetError("pre- and post-period sets overlap")
        if max(self.pre_periods) >= min(self.post_periods):
            raise EmptyPeriodSetError("every pre-period must precede every post-period")
        if self.treated in self.donors:
            raise UnknownUnitError(f"treated unit {self.treated!r} cannot be a donor")
        if len(self.donors) < 1:
            raise UnknownUnitError("donor set must have at least one member")

    def value(self, unit: str, time: int, feature: str) -> float | None:
        v = self.values.get((unit, time, feature))
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return None
        return v

    def is_missing(self, unit: str, time: int, feature: str) -> bool:
        return self.value(unit, time, feature) is None


@dataclass(frozen=True)
class MissingReport:
    """Outcome of :func:`apply_missing_rules`."""

    dropped_pre_periods: tuple[int, ...]
    unavailable_post_periods: tuple[int, ...]
    tau_unavailable_post_periods: tuple[int, ...]

    @property
    def clean(self) -> bool:
        return not (
            self.dropped_pre_periods
            or self.unavailable_post_periods
            or self.tau_unavailable_post_periods
        )


@dataclass(frozen=True)
class ScDims:
    """Dimension metadata for the stacked system; d = J + KM."""

    J: int
    M: int
    T0: int
    T1: int
    KM: int
    K_per_feature: tuple[int, ...]

    @property
    def d(self) -> int:
        return self.J + self.KM


@dataclass(frozen=True)
class ScMatrices:
    """The stacked design system and everything needed to reproduce it.

    ``A`` is (T0*M,), ``B`` is (T0*M, J), ``C`` is (T0*M, KM), ``P`` is
    (T1, d) with NaN rows for post periods flagged unavailable.  ``v`` holds
    the diagonal of the weighting matrix V.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    P: np.ndarray
    v: np.ndarray
    dims: ScDims
    cointegrated: bool
    constant: bool
    cov_adj: tuple[tuple[str, ...], ...]  # per-feature covariate terms
    treated: str
    donors: tuple[str, ...]
    features: tuple[str, ...]
    pre_periods: tuple[int, ...]
    post_periods: tuple[int, ...]
    treated_post: np.ndarray          # (T1,) treated outcome, NaN where missing
    unavailable_post: tuple[int, ...] # periods with missing donor data
    donor_post: np.ndarray = field(default=None)  # (T1, J) donor outcome levels

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([self.B, self.C]) if self.dims.KM else self.B

    def feature_rows(self, l: int) -> slice:
        t0 = self.dims.T0
        return slice(l * t0, (l + 1) * t0)


def load_panel(
    source,
    schema: PanelSchema,
    delimiter: str = ",",
) -> PanelData:
    """Parse delimiter-separated long-format panel text into a PanelData.

    ``source`` may be a path, a file-like object, or a string of CSV text.
    Records outside the declared units/periods are dropped.
    """
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        frame = pd.read_csv(source, sep=delimiter, header=0)
    except (FileNotFoundError, OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot read panel data: {exc}") from exc

    features = schema.feature_list()
    needed = {schema.id_var, schema.time_var, *features}
    missing_cols = needed - set(frame.columns)
    if missing_cols:
        raise ConfigError(f"missing columns in input: {sorted(missing_cols)}")

    units = {schema.unit_tr, *schema.unit_co}
    if schema.unit_tr in schema.unit_co:
        raise UnknownUnitError(f"treated unit {schema.unit_tr!r} is in the donor set")
    present_units = set(frame[schema.id_var].astype(str))
    absent = units - present_units
    if absent:
        raise UnknownUnitError(f"declared units not found in data: {sorted(absent)}")

    if not schema.period_pre or not schema.period_post:
        raise EmptyPeriodSetError("period.pre and period.post must be nonempty")

    periods = set(schema.period_pre) | set(schema.period_post)
    sub = frame[
        frame[schema.id_var].astype(str).isin(units)
        & frame[schema.time_var].isin(periods)
    ]

    values: dict[tuple[str, int, str], float] = {}
    for _, row in sub.iterrows():
        unit = str(row[schema.id_var])
        time = int(row[schema.time_var])
        for feat in features:
            key = (unit, time, feat)
            raw = row[feat]
            if key in values:
                raise DuplicateKeyError(f"duplicate record for {key}")
            values[key] = float(raw) if pd.notna(raw) else float("nan")

    for feat in features:
        if all(
            math.isnan(values.get((u, t, feat), float("nan")))
            for u in units
            for t in periods
        ):
            raise ConfigError(f"feature {feat!r} has no observed values in the panel")

    return PanelData(
        values=values,
        treated=schema.unit_tr,
        donors=tuple(schema.unit_co),
        pre_periods=tuple(sorted(schema.period_pre)),
        post_periods=tuple(sorted(schema.period_post)),
        features=features,
    )


def apply_missing_rules(panel: PanelData) -> tuple[PanelData, MissingReport]:
    """Apply the three missing-data rules and report what was done.

    Pre-treatment periods with any missing entry (treated or donor, any
    feature) are removed.  Post-treatment donor missingness makes the
    prediction at that period unavailable.  Post-treatment treated-outcome
    missingness only makes the effect estimate unavailable.
    """
    all_units = (panel.treated, *panel.donors)

    dropped = tuple(
        t
        for t in panel.pre_periods
        if any(panel.is_missing(u, t, f) for u in all_units for f in panel.features)
    )
    kept_pre = tuple(t for t in panel.pre_periods if t not in dropped)
    if not kept_pre:
        raise AllPrePeriodsDroppedError("no complete pre-treatment period remains")

    unavailable = tuple(
        t
        for t in panel.post_periods
        if any(panel.is_missing(u, t, f) for u in panel.donors for f in panel.features)
    )
    tau_unavailable = tuple(
        t for t in panel.post_periods if panel.is_missing(panel.treated, t, panel.features[0])
    )

    report = MissingReport(dropped, unavailable, tau_unavailable)
    if not dropped:
        return panel, report
    return replace(panel, pre_periods=kept_pre), report


def _normalize_cov_adj(
    cov_adj,
    features: Sequence[str],
) -> tuple[tuple[str, ...], ...]:
    """Expand the covariate-adjustment grammar to one term tuple per feature."""
    if cov_adj is None:
        return tuple(() for _ in features)
    if isinstance(cov_adj, (list, tuple)) and all(isinstance(x, str) for x in cov_adj):
        # single unnamed list: identical block for every feature
        block = tuple(cov_adj)
        _check_terms(block)
        return tuple(block for _ in features)
    if isinstance(cov_adj, Mapping):
        unknown = set(cov_adj) - set(features)
        if unknown:
            raise ConfigError(f"cov.adj names unknown features: {sorted(unknown)}")
        out = []
        for f in features:
            block = tuple(cov_adj.get(f, ()))
            _check_terms(block)
            out.append(block)
        return tuple(out)
    raise ConfigError("cov.adj must be a list of terms or a {feature: terms} mapping")


def _check_terms(block: Sequence[str]) -> None:
    bad = set(block) - set(COVARIATE_TERMS)
    if bad:
        raise ConfigError(f"unknown covariate terms: {sorted(bad)}")
    if len(set(block)) != len(block):
        raise RankDeficientCError(f"repeated covariate terms in one block: {block}")


def _cov_column(term: str, ordinals: np.ndarray) -> np.ndarray:
    if term == "constant":
        return np.ones_like(ordinals, dtype=float)
    if term == "trend":
        return ordinals.astype(float)
    raise ConfigError(f"unknown covariate term {term!r}")


def build_matrices(
    panel: PanelData,
    cov_adj=None,
    constant: bool = False,
    cointegrated: bool = False,
    v_weights: np.ndarray | None = None,
) -> ScMatrices:
    """Construct A, B, C, P, V and dimension metadata from a clean panel.

    Pre-treatment missingness must have been handled first (see
    :func:`apply_missing_rules`); any leftover gap raises.  Post-treatment
    donor gaps produce NaN rows in P, recorded in ``unavailable_post``.
    """
    features = panel.features
    blocks = _normalize_cov_adj(cov_adj, features)
    if constant and any("constant" in b for b in blocks):
        raise CollinearCovariatesError(
            "constant=true duplicates a per-feature 'constant' term"
        )

    pre = panel.pre_periods
    post = panel.post_periods
    T0, T1, M, J = len(pre), len(post), len(features), len(panel.donors)

    def need(unit: str, t: int, f: str) -> float:
        v = panel.value(unit, t, f)
        if v is None:
            raise ConfigError(
                f"missing pre-treatment entry ({unit!r}, {t}, {f!r});"
                " apply_missing_rules first"
            )
        return v

    A = np.empty(T0 * M)
    B = np.empty((T0 * M, J))
    for l, f in enumerate(features):
        rows = slice(l * T0, (l + 1) * T0)
        A[rows] = [need(panel.treated, t, f) for t in pre]
        for j, donor in enumerate(panel.donors):
            B[rows, j] = [need(donor, t, f) for t in pre]

    pre_ordinals = np.arange(1, T0 + 1)
    c_blocks: list[np.ndarray] = []
    for block in blocks:
        cols = [_cov_column(term, pre_ordinals) for term in block]
        c_blocks.append(np.column_stack(cols) if cols else np.empty((T0, 0)))
    KM_blocks = sum(b.shape[1] for b in c_blocks)
    C = np.zeros((T0 * M, KM_blocks + (1 if constant else 0)))
    col = 0
    for l, cb in enumerate(c_blocks):
        k = cb.shape[1]
        if k:
            C[l * T0 : (l + 1) * T0, col : col + k] = cb
            rank = np.linalg.matrix_rank(cb)
            if rank < k:
                raise RankDeficientCError(
                    f"covariate block for feature {features[l]!r} is rank deficient"
                )
        col += k
    if constant:
        C[:, -1] = 1.0
    KM = C.shape[1]

    dims = ScDims(J=J, M=M, T0=T0, T1=T1, KM=KM, K_per_feature=tuple(b.shape[1] for b in c_blocks))

    outcome = features[0]
    unavailable = [
        t
        for t in post
        if any(panel.is_missing(u, t, f) for u in panel.donors for f in features)
    ]
    P = np.full((T1, dims.d), np.nan)
    donor_post = np.full((T1, J), np.nan)
    for i, t in enumerate(post):
        for j, donor in enumerate(panel.donors):
            v = panel.value(donor, t, outcome)
            donor_post[i, j] = np.nan if v is None else v
        if t in unavailable:
            continue
        g = np.zeros(KM)
        col = 0
        for l, block in enumerate(blocks):
            for term in block:
                if l == 0:  # only the outcome equation predicts Y(0)
                    g[col] = 1.0 if term == "constant" else float(T0 + i + 1)
                col += 1
        if constant:
            g[-1] = 1.0
        P[i, :J] = donor_post[i]
        P[i, J:] = g

    treated_post = np.array(
        [
            np.nan if panel.value(panel.treated, t, outcome) is None
            else panel.value(panel.treated, t, outcome)
            for t in post
        ]
    )

    if v_weights is None:
        v = np.ones(T0 * M)
    else:
        v = np.asarray(v_weights, dtype=float).reshape(-1)
        if v.shape[0] != T0 * M:
            raise ConfigError(f"V diagonal must have length T0*M={T0 * M}, got {v.shape[0]}")
        if np.any(v < 0):
            raise ConfigError("V diagonal must be nonnegative")

    return ScMatrices(
        A=A,
        B=B,
        C=C,
        P=P,
        v=v,
        dims=dims,
        cointegrated=cointegrated,
        constant=constant,
        cov_adj=blocks,
        treated=panel.treated,
        donors=panel.donors,
        features=features,
        pre_periods=pre,
        post_periods=post,
        treated_post=treated_post,
        unavailable_post=tuple(unavailable),
        donor_post=donor_post,
    )


def dump_matrices(m: ScMatrices, directory) -> None:
    """Debug dump of A/B/C/P as CSV files with 17 significant digits."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in (("A", m.A.reshape(-1, 1)), ("B", m.B), ("C", m.C), ("P", m.P)):
        np.savetxt(out / f"{name}.csv", arr, delimiter=",", fmt="%.17g")
