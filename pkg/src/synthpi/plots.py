"""Render result figures to files: trajectory plots with interval bars and a
joint band, plus the sensitivity panel when a sensitivity table was produced.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def render_figures(bundle, out_dir) -> dict[str, Path]:
    """One trajectory figure per constraint spec (plus sensitivity figures);
    returns {figure name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    m = bundle.matrices
    periods = list(m.pre_periods) + list(m.post_periods)
    treated = list(m.A[: m.dims.T0]) + list(m.treated_post)
    for name, (fit_res, unc) in bundle.results.items():
        iv = unc.intervals
        synthetic = list(fit_res.a_hat[: m.dims.T0]) + list(fit_res.y0_hat)

        fig, ax = plt.subplots(figsize=(9, 5.5))
        ax.plot(periods, treated, color="black", lw=1.8, label="treated")
        ax.plot(periods, synthetic, color="tab:blue", lw=1.8, ls="--", label="synthetic")
        ax.axvline(m.post_periods[0] - 0.5, color="gray", ls=":", lw=1.2)
        if iv.joint is not None:
            ax.fill_between(
                iv.joint.periods,
                iv.joint.y0_lower,
                iv.joint.y0_upper,
                color="tab:blue",
                alpha=0.15,
                label=f"joint {iv.joint.coverage_label * 100:.0f}% band",
            )
        label_done = False
        for i, p in enumerate(iv.periods):
            if not iv.available[i]:
                continue
            ax.plot(
                [p, p],
                [iv.y0_lower[i], iv.y0_upper[i]],
                color="tab:blue",
                lw=2.2,
                alpha=0.85,
                label=None if label_done else f"{iv.coverage_label * 100:.0f}% interval",
            )
            label_done = True
        ax.set_xlabel("period")
        ax.set_ylabel(m.features[0])
        ax.set_title(f"synthetic control: {name}")
        ax.legend(frameon=False, loc="best")
        fig.tight_layout()
        path = out / f"figure_{name}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written[name] = path

        if unc.sensitivity:
            written[f"{name}-sensitivity"] = _sensitivity_figure(
                bundle, name, unc, out
            )
    return written


def _sensitivity_figure(bundle, name, unc, out: Path) -> Path:
    m = bundle.matrices
    rows = unc.sensitivity
    period = rows[0]["period"]
    t = m.post_periods.index(period)
    observed = m.treated_post[t]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = range(len(rows))
    for x, row in zip(xs, rows):
        ax.plot([x, x], [row["y0_lower"], row["y0_upper"]], color="tab:red",
                lw=2.0, ls="--" if row["scale"] != 1.0 else "-")
    ax.axhline(observed, color="black", lw=1.5, label="observed treated outcome")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{row['scale']:g}x" for row in rows])
    ax.set_xlabel("out-of-sample scale multiplier")
    ax.set_ylabel(m.features[0])
    ax.set_title(f"sensitivity at {period}: {name}")
    ax.legend(frameon=False, loc="best")
    fig.tight_layout()
    path = out / f"figure_{name}_sensitivity.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
