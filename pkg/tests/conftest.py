import numpy as np
import pytest

from synthpi.panel import PanelData, PanelSchema, apply_missing_rules, build_matrices, load_panel

DONORS16 = (
    "Aurora", "Borealis", "Cascadia", "Deltaria", "Eastmark", "Fjordia",
    "Glenhaven", "Highmoor", "Istria", "Jutland", "Kestrel", "Lowdale",
    "Midgard", "Northold", "Ostmark", "Pinedale",
)


def make_panel(
    n_donors=3,
    pre=tuple(range(1, 9)),
    post=(9, 10),
    features=("y",),
    seed=0,
    noise=0.1,
    weights=None,
    missing=(),
):
    """Small random panel whose treated unit is a noisy donor combination."""
    rng = np.random.default_rng(seed)
    donors = tuple(f"D{i}" for i in range(1, n_donors + 1))
    if weights is None:
        weights = rng.dirichlet(np.ones(n_donors))
    periods = tuple(pre) + tuple(post)
    values = {}
    paths = {f: rng.normal(5.0, 1.0, (n_donors, len(periods))) for f in features}
    for f in features:
        for i, t in enumerate(periods):
            for j, d in enumerate(donors):
                values[(d, t, f)] = float(paths[f][j, i])
            values[("T", t, f)] = float(
                weights @ paths[f][:, i] + rng.normal(0.0, noise)
            )
    for key in missing:
        values.pop(key, None)
    return PanelData(
        values=values,
        treated="T",
        donors=donors,
        pre_periods=tuple(pre),
        post_periods=tuple(post),
        features=tuple(features),
    )


@pytest.fixture(scope="session")
def demo_schema():
    return PanelSchema(
        id_var="country",
        time_var="year",
        outcome_var="gdp",
        unit_tr="Treatland",
        unit_co=DONORS16,
        period_pre=tuple(range(1960, 1991)),
        period_post=tuple(range(1991, 2004)),
    )


@pytest.fixture(scope="session")
def demo_schema_m2(demo_schema):
    from dataclasses import replace

    return replace(demo_schema, features=("gdp", "trade"))


@pytest.fixture(scope="session")
def demo_panel(demo_schema):
    from synthpi.datasets import demo_panel_path

    panel = load_panel(demo_panel_path(), demo_schema)
    panel, _ = apply_missing_rules(panel)
    return panel


@pytest.fixture(scope="session")
def demo_matrices(demo_panel):
    return build_matrices(demo_panel, constant=True, cointegrated=True)
