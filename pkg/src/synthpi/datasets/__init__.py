"""Bundled datasets for demos and tests."""

from importlib import resources
from pathlib import Path


def demo_panel_path() -> Path:
    """Path to the bundled deterministic demo panel.

    Seventeen units over 1960-2003 with two features (gdp, trade); the
    treated unit diverges from its donor combination after 1990.  The data
    are simulated and carry no real-world meaning.
    """
    with resources.as_file(resources.files(__package__) / "demo_panel.csv") as p:
        return Path(p)
