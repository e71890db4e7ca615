"""Run orchestration: config parsing, pipeline execution, and file outputs.

A run executes ingest -> fit -> uncertainty for each requested constraint and
writes results.json (lossless 17-significant-digit numbers), intervals.csv,
summary.txt, plotspec.json, and rendered figures.
"""

from __future__ import annotations

import configparser
import datetime
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import ConstraintSpec, from_options
from .estimator import FitResult, fit, render_summary
from .exceptions import ConfigError
from .panel import PanelSchema, ScMatrices, apply_missing_rules, build_matrices, load_panel
from .uncertainty import UncertaintyConfig, UncertaintyResult, prediction_intervals

EMIT_CHOICES = ("json", "csv", "summary", "plotspec", "figures")


@dataclass
class RunConfig:
    data_path: str
    schema: PanelSchema
    delimiter: str = ","
    constant: bool = False
    cointegrated: bool = False
    cov_adj: object = None
    specs: list[tuple[str, ConstraintSpec]] = field(default_factory=list)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    out_dir: str = "out"
    emit: tuple[str, ...] = EMIT_CHOICES
    quiet: bool = False


@dataclass
class ResultsBundle:
    config: RunConfig
    matrices: ScMatrices
    missing_report: object
    results: dict[str, tuple[FitResult, UncertaintyResult]]

    def to_dict(self, timestamp: str | None = None) -> dict:
        m = self.matrices
        out: dict = {
            "meta": {
                "timestamp": timestamp
                or datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "seed": self.config.uncertainty.seed,
                "sims": self.config.uncertainty.sims,
                "cores": self.config.uncertainty.cores,
                "u_alpha": self.config.uncertainty.u_alpha,
                "e_alpha": self.config.uncertainty.e_alpha,
                "coverage_label": 1.0
                - self.config.uncertainty.u_alpha
                - self.config.uncertainty.e_alpha,
                "e_method": self.config.uncertainty.e_method,
                "joint": self.config.uncertainty.joint,
                "scaling_matrix": "identity",
            },
            "panel": {
                "treated": m.treated,
                "donors": list(m.donors),
                "features": list(m.features),
                "pre_periods": list(m.pre_periods),
                "post_periods": list(m.post_periods),
                "constant": m.constant,
                "cointegrated": m.cointegrated,
                "J": m.dims.J,
                "M": m.dims.M,
                "T0": m.dims.T0,
                "T1": m.dims.T1,
                "KM": m.dims.KM,
                "d": m.dims.d,
                "dropped_pre_periods": list(self.missing_report.dropped_pre_periods),
                "unavailable_post_periods": list(m.unavailable_post),
                "tau_unavailable_post_periods": list(
                    self.missing_report.tau_unavailable_post_periods
                ),
            },
            "series": {
                "periods": list(m.pre_periods) + list(m.post_periods),
                "treated": _clean_list(
                    np.concatenate([m.A[: m.dims.T0], m.treated_post])
                ),
            },
            "results": {},
        }
        for name, (fit_res, unc) in self.results.items():
            iv = unc.intervals
            synthetic = np.concatenate([fit_res.a_hat[: m.dims.T0], fit_res.y0_hat])
            rows = []
            for i, period in enumerate(iv.periods):
                rows.append(
                    {
                        "period": period,
                        "available": bool(iv.available[i]),
                        "tau_hat": _clean(iv.tau_hat[i]),
                        "y0_hat": _clean(iv.y0_hat[i]),
                        "m1_l": _clean(iv.m1_l[i]),
                        "m1_u": _clean(iv.m1_u[i]),
                        "m2_l": _clean(iv.m2_l[i]),
                        "m2_u": _clean(iv.m2_u[i]),
                        "lower": _clean(iv.lower[i]),
                        "upper": _clean(iv.upper[i]),
                        "y0_lower": _clean(iv.y0_lower[i]),
                        "y0_upper": _clean(iv.y0_upper[i]),
                    }
                )
            joint = None
            if iv.joint is not None:
                joint = {
                    "horizon": iv.joint.horizon,
                    "periods": list(iv.joint.periods),
                    "m1_l": _clean(iv.joint.m1_l),
                    "m1_u": _clean(iv.joint.m1_u),
                    "m2_l": _clean_list(iv.joint.m2_l),
                    "m2_u": _clean_list(iv.joint.m2_u),
                    "lower": _clean_list(iv.joint.lower),
                    "upper": _clean_list(iv.joint.upper),
                    "y0_lower": _clean_list(iv.joint.y0_lower),
                    "y0_upper": _clean_list(iv.joint.y0_upper),
                    "coverage_label": iv.joint.coverage_label,
                }
            out["results"][name] = {
                "fit": {
                    "constraint": fit_res.spec.label(),
                    "q_used": _clean(fit_res.q_used),
                    "q2_used": _clean(fit_res.q2_used),
                    "weights": {
                        donor: _clean(fit_res.w_hat[j]) for j, donor in enumerate(m.donors)
                    },
                    "covariate_coefficients": _clean_list(fit_res.r_hat),
                    "active_donors": [m.donors[j] for j in fit_res.active_set],
                    "df_hat": _clean(fit_res.df_hat),
                    "objective": _clean(fit_res.objective),
                    "notes": list(fit_res.notes),
                },
                "synthetic_series": _clean_list(synthetic),
                "uncertainty": unc.diagnostics,
                "intervals": rows,
                "joint": joint,
                "sensitivity": unc.sensitivity,
            }
        return out


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def _parse_periods(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk[1:]:
            lo, hi = chunk.split("-", 1) if not chunk.startswith("-") else (None, None)
            if lo is None:
                raise ConfigError(f"cannot parse period range {chunk!r}")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(chunk))
    if not out:
        raise ConfigError("empty period list")
    return tuple(out)


def _parse_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _parse_cov_adj(text: str):
    text = text.strip()
    if not text:
        return None
    if ":" in text:
        mapping = {}
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            feat, terms = part.split(":", 1)
            mapping[feat.strip()] = list(_parse_list(terms))
        return mapping
    return list(_parse_list(text))


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse the INI-style run configuration, applying CLI overrides."""
    overrides = overrides or {}
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    if "data" not in cp:
        raise ConfigError("config needs a [data] section")
    data = cp["data"]

    def req(key: str) -> str:
        if key not in data:
            raise ConfigError(f"[data] is missing {key!r}")
        return data[key]

    donors = _parse_list(req("unit.co"))
    if not donors:
        raise ConfigError("donor list unit.co is empty")
    schema = PanelSchema(
        id_var=req("id.var"),
        time_var=req("time.var"),
        outcome_var=req("outcome.var"),
        unit_tr=req("unit.tr"),
        unit_co=donors,
        period_pre=_parse_periods(req("period.pre")),
        period_post=_parse_periods(req("period.post")),
        features=_parse_list(data.get("features", "")),
    )

    spec_names = _parse_list(cp.get("constraints", "specs", fallback="simplex"))
    if "constraint" in overrides and overrides["constraint"]:
        spec_names = tuple(overrides["constraint"])
    specs = []
    for name in spec_names:
        section = f"constraint.{name}"
        opts: dict = {}
        if cp.has_section(section):
            sec = cp[section]
            for key in ("p", "dir"):
                if key in sec:
                    opts[key] = sec[key]
            for key in ("Q", "Q2", "lb"):
                if key in sec:
                    opts[key] = float(sec[key]) if sec[key] != "-inf" else -math.inf
        if name in ("ols", "simplex", "lasso", "ridge", "L1-L2"):
            opts["name"] = name
        elif not opts:
            raise ConfigError(
                f"constraint {name!r} is not a preset and has no [constraint.{name}] section"
            )
        try:
            specs.append((name, from_options(opts)))
        except Exception as exc:
            raise ConfigError(f"bad constraint {name!r}: {exc}") from exc

    unc_kwargs: dict = {}
    if cp.has_section("uncertainty"):
        sec = cp["uncertainty"]
        mapping = {
            "u.missp": ("u_missp", sec.getboolean),
            "u.order": ("u_order", sec.getint),
            "u.lags": ("u_lags", sec.getint),
            "u.sigma": ("u_sigma", sec.get),
            "u.alpha": ("u_alpha", sec.getfloat),
            "e.method": ("e_method", sec.get),
            "e.order": ("e_order", sec.getint),
            "e.lags": ("e_lags", sec.getint),
            "e.alpha": ("e_alpha", sec.getfloat),
            "sims": ("sims", sec.getint),
            "rho": ("rho", sec.getfloat),
            "rho.constant": ("rho_constant", sec.get),
            "cores": ("cores", sec.getint),
            "seed": ("seed", sec.getint),
            "joint": ("joint", sec.getboolean),
            "L": ("L", sec.getint),
            "sens.period": ("sens_period", sec.getint),
            "epsilon.per.period": ("epsilon_per_period", sec.getboolean),
        }
        for key, (attr, getter) in mapping.items():
            if key in sec and sec[key].strip() != "":
                unc_kwargs[attr] = getter(key)
        if "sens.scales" in sec and sec["sens.scales"].strip():
            unc_kwargs["sens_scales"] = tuple(
                float(x) for x in _parse_list(sec["sens.scales"])
            )
    for key in ("seed", "sims", "cores"):
        if key in overrides and overrides[key] is not None:
            unc_kwargs[key] = overrides[key]
    if overrides.get("joint"):
        unc_kwargs["joint"] = True
    try:
        unc = UncertaintyConfig(**unc_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [uncertainty] options: {exc}") from exc

    out_sec = cp["output"] if cp.has_section("output") else {}
    emit = tuple(_parse_list(out_sec.get("emit", ", ".join(EMIT_CHOICES))))
    bad = set(emit) - set(EMIT_CHOICES)
    if bad:
        raise ConfigError(f"unknown emit targets {sorted(bad)}; choose from {EMIT_CHOICES}")

    cfg = RunConfig(
        data_path=overrides.get("data") or data.get("path", ""),
        schema=schema,
        delimiter=data.get("delimiter", ","),
        constant=data.getboolean("constant", fallback=False),
        cointegrated=data.getboolean("cointegrated", fallback=False),
        cov_adj=_parse_cov_adj(data.get("cov.adj", "")),
        specs=specs,
        uncertainty=unc,
        out_dir=overrides.get("out") or out_sec.get("dir", "out"),
        emit=emit,
        quiet=bool(overrides.get("quiet", False)),
    )
    if not cfg.data_path:
        raise ConfigError("no data path: set [data] path or pass --data")
    if not cfg.specs:
        raise ConfigError("at least one constraint spec is required")
    return cfg


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def run(cfg: RunConfig) -> ResultsBundle:
    """Execute ingest -> fit -> uncertainty for every constraint spec."""
    panel = load_panel(cfg.data_path, cfg.schema, delimiter=cfg.delimiter)
    panel, report = apply_missing_rules(panel)
    m = build_matrices(
        panel,
        cov_adj=cfg.cov_adj,
        constant=cfg.constant,
        cointegrated=cfg.cointegrated,
    )
    results: dict[str, tuple[FitResult, UncertaintyResult]] = {}
    for name, spec in cfg.specs:
        fit_res = fit(m, spec)
        unc = prediction_intervals(fit_res, cfg.uncertainty)
        results[name] = (fit_res, unc)
    return ResultsBundle(config=cfg, matrices=m, missing_report=report, results=results)


def write_outputs(bundle: ResultsBundle, out_dir=None) -> dict[str, Path]:
    """Write the requested artifacts; returns {kind: path}."""
    cfg = bundle.config
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    if "json" in cfg.emit:
        path = out / "results.json"
        path.write_text(dumps17(bundle.to_dict()) + "\n")
        written["json"] = path
    if "csv" in cfg.emit:
        path = out / "intervals.csv"
        path.write_text(render_intervals_csv(bundle))
        written["csv"] = path
    if "summary" in cfg.emit:
        path = out / "summary.txt"
        path.write_text(render_text_summary(bundle))
        written["summary"] = path
    if "plotspec" in cfg.emit:
        path = out / "plotspec.json"
        path.write_text(dumps17(emit_plotspec(bundle)) + "\n")
        written["plotspec"] = path
    if "figures" in cfg.emit:
        from .plots import render_figures

        for name, fig_path in render_figures(bundle, out).items():
            written[f"figure:{name}"] = fig_path
    return written


def render_intervals_csv(bundle: ResultsBundle) -> str:
    """Per-period interval table; unavailable periods keep their row with NA
    markers.  A leading constraint column distinguishes multi-spec runs."""
    lines = ["constraint,period,tau_hat,lower,upper,M1_L,M1_U,M2_L,M2_U"]
    for name, (_fit, unc) in bundle.results.items():
        iv = unc.intervals
        for i, period in enumerate(iv.periods):
            cells = [name, str(period)]
            for x in (iv.tau_hat[i], iv.lower[i], iv.upper[i],
                      iv.m1_l[i], iv.m1_u[i], iv.m2_l[i], iv.m2_u[i]):
                val = float(x)
                cells.append("NA" if math.isnan(val) else format(val, ".17g"))
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def render_text_summary(bundle: ResultsBundle) -> str:
    blocks = []
    for name, (fit_res, unc) in bundle.results.items():
        iv = unc.intervals
        lines = [render_summary(fit_res), "", "prediction intervals"
                 f" ({iv.coverage_label * 100:.0f}% label)", "-" * 48]
        lines.append(f"{'period':>8s} {'tau_hat':>12s} {'lower':>12s} {'upper':>12s}")
        for i, period in enumerate(iv.periods):
            if not iv.available[i]:
                lines.append(f"{period:>8d} {'NA':>12s} {'NA':>12s} {'NA':>12s}")
                continue
            lines.append(
                f"{period:>8d} {iv.tau_hat[i]:>12.6g} {iv.lower[i]:>12.6g} {iv.upper[i]:>12.6g}"
            )
        if iv.joint is not None:
            lines.append(
                f"joint over first {iv.joint.horizon} periods: "
                f"M1 in [{iv.joint.m1_l:.6g}, {iv.joint.m1_u:.6g}]"
            )
        if unc.sensitivity:
            lines.append("")
            lines.append("sensitivity of the out-of-sample scale")
            for row in unc.sensitivity:
                lines.append(
                    f"  scale {row['scale']:>5.2f}: "
                    f"[{row['lower']:.6g}, {row['upper']:.6g}]"
                )
        blocks.append("\n".join(lines))
    return ("\n\n" + "=" * 64 + "\n\n").join(blocks) + "\n"


def emit_plotspec(bundle: ResultsBundle) -> dict:
    """Declarative plot document: data + mark + encoding, no render commands."""
    m = bundle.matrices
    periods = list(m.pre_periods) + list(m.post_periods)
    treatment_date = m.post_periods[0]
    panels = []
    for name, (fit_res, unc) in bundle.results.items():
        iv = unc.intervals
        synthetic = np.concatenate([fit_res.a_hat[: m.dims.T0], fit_res.y0_hat])
        datasets = {
            "treated_path": [
                {"period": p, "value": _clean(v)}
                for p, v in zip(periods, np.concatenate([m.A[: m.dims.T0], m.treated_post]))
            ],
            "synthetic_path": [
                {"period": p, "value": _clean(v)} for p, v in zip(periods, synthetic)
            ],
            "intervals": [
                {
                    "period": p,
                    "lower": _clean(iv.y0_lower[i]),
                    "upper": _clean(iv.y0_upper[i]),
                }
                for i, p in enumerate(iv.periods)
            ],
        }
        layers = [
            {
                "mark": "line",
                "data": "treated_path",
                "encoding": {"x": "period", "y": "value", "series": "treated"},
            },
            {
                "mark": "line",
                "data": "synthetic_path",
                "encoding": {"x": "period", "y": "value", "series": "synthetic"},
            },
            {
                "mark": "rule",
                "data": "intervals",
                "encoding": {"x": "period", "y": "lower", "y2": "upper"},
            },
            {"mark": "vline", "encoding": {"x": treatment_date}},
        ]
        if iv.joint is not None:
            datasets["joint_band"] = [
                {
                    "period": p,
                    "lower": _clean(iv.joint.y0_lower[i]),
                    "upper": _clean(iv.joint.y0_upper[i]),
                }
                for i, p in enumerate(iv.joint.periods)
            ]
            layers.append(
                {
                    "mark": "band",
                    "data": "joint_band",
                    "encoding": {"x": "period", "y": "lower", "y2": "upper"},
                }
            )
        panel = {"name": name, "datasets": datasets, "layers": layers}
        panels.append(panel)
        if unc.sensitivity:
            panels.append(
                {
                    "name": f"{name}-sensitivity",
                    "datasets": {"sensitivity": unc.sensitivity},
                    "layers": [
                        {
                            "mark": "rule",
                            "data": "sensitivity",
                            "encoding": {"x": "scale", "y": "y0_lower", "y2": "y0_upper"},
                        },
                        {
                            "mark": "hline",
                            "encoding": {
                                "y": _clean(
                                    m.treated_post[
                                        m.post_periods.index(unc.sensitivity[0]["period"])
                                    ]
                                )
                            },
                        },
                    ],
                }
            )
    return {"panels": panels}


# ---------------------------------------------------------------------------
# Lossless JSON
# ---------------------------------------------------------------------------

def _clean(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return None
    return x


def _clean_list(arr) -> list:
    return [_clean(v) for v in np.asarray(arr).reshape(-1)]


def dumps17(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits (lossless round trip)."""
    pad = "  " * indent
    if obj is None:
        return "null"
    if obj is True or obj is False:
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ",\n".join("  " * (indent + 1) + dumps17(v, indent + 1) for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            "  " * (indent + 1) + json.dumps(str(k)) + ": " + dumps17(v, indent + 1)
            for k, v in obj.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        return dumps17(obj.tolist(), indent)
    raise TypeError(f"cannot serialize {type(obj)!r}")
