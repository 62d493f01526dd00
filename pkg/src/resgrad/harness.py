"""Run configuration, sweep orchestration, statistics, and reporting.

A run is fully determined by its ``RunConfig``; the emitted ``RunSummary``
echoes the config verbatim and excludes only wall-clock timing from its
determinism digest.  Outputs are one JSON object per run plus one CSV row
per (arm, seed); sweeps add an aggregate CSV with mean and sample standard
deviation per arm.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import net as dn
from . import stage1 as s1
from . import stage2 as s2

SCHEMA_VERSION = 1
OUT_DIR_ENV = "RESGRAD_OUT_DIR"

STAGE1_CSV_COLUMNS = (
    "stage", "arm", "seed_init", "seed_cloud", "seed_audit", "failed",
    "final_loss", "best_val", "rel_l2_u", "rel_l2_grad_u", "residual_rmse",
    "grad_r_rmse", "aux_weight", "runtime_s",
)
STAGE2_CSV_COLUMNS = (
    "stage", "arm", "seed_init", "seed_cloud", "seed_audit", "failed",
    "final_loss", "best_val", "wall_bc_rmse", "dtdn_wall_rmse", "t_wall_rmse",
    "bc_residual_rmse", "shell_probe", "shell_weight", "runtime_s",
)

# Metric hierarchies used by report(); smaller is better at every level.
STAGE2_HIERARCHY = (
    "dtdn_wall_rmse", "bc_residual_rmse", "wall_bc_rmse", "final_loss",
    "best_val", "t_wall_rmse",
)
STAGE1_HIERARCHY = (
    "best_val", "residual_rmse", "grad_r_rmse", "rel_l2_u", "rel_l2_grad_u",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    stage: str
    stage1: s1.Stage1TrainConfig | None = None
    stage2: s2.Stage2TrainConfig | None = None
    out_dir: str = "runs"

    def __post_init__(self):
        if self.stage not in ("stage1", "stage2"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.stage == "stage1" and self.stage1 is None:
            object.__setattr__(self, "stage1", s1.Stage1TrainConfig())
        if self.stage == "stage2" and self.stage2 is None:
            object.__setattr__(self, "stage2", s2.Stage2TrainConfig())

    def active(self):
        return self.stage1 if self.stage == "stage1" else self.stage2

    def replace_active(self, **kwargs) -> "RunConfig":
        new_active = dataclasses.replace(self.active(), **kwargs)
        if self.stage == "stage1":
            return dataclasses.replace(self, stage1=new_active)
        return dataclasses.replace(self, stage2=new_active)

    def to_dict(self) -> dict:
        out = {"stage": self.stage, "out_dir": self.out_dir}
        out[self.stage] = dataclasses.asdict(self.active())
        return out


def _coerce_field(fld: dataclasses.Field, value):
    """Coerce a TOML / CLI value to the dataclass field's type."""
    tp = fld.type
    if isinstance(value, str) and value.lower() in ("none", "null") and "None" in str(tp):
        return None
    if "tuple" in str(tp):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        return tuple(float(v) if "." in str(v) or "e" in str(v).lower() else int(v) for v in value)
    if "int" in str(tp) and "| None" not in str(tp):
        return int(value)
    if "float" in str(tp):
        return float(value)
    return value


def _build_stage_config(cls, section: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - set(names))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    kwargs = {k: _coerce_field(names[k], v) for k, v in section.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid {where} config: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    allowed = {"stage", "out_dir", "stage1", "stage2"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    stage = data.get("stage")
    if stage not in ("stage1", "stage2"):
        raise ConfigError(f"config must set stage to stage1 or stage2, got {stage!r}")
    kwargs: dict = {"stage": stage, "out_dir": data.get("out_dir", "runs")}
    if "stage1" in data:
        kwargs["stage1"] = _build_stage_config(s1.Stage1TrainConfig, data["stage1"], "[stage1]")
    if "stage2" in data:
        kwargs["stage2"] = _build_stage_config(s2.Stage2TrainConfig, data["stage2"], "[stage2]")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Flag overrides on top of the active stage config (flags beat the file)."""
    if not overrides:
        return cfg
    if "out_dir" in overrides:
        cfg = dataclasses.replace(cfg, out_dir=overrides.pop("out_dir"))
    cls = type(cfg.active())
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - set(names))
    if unknown:
        raise ConfigError(f"flags not valid for {cfg.stage}: {unknown}")
    coerced = {k: _coerce_field(names[k], v) for k, v in overrides.items()}
    return cfg.replace_active(**coerced)


def resolve_out_dir(cfg: RunConfig) -> Path:
    override = os.environ.get(OUT_DIR_ENV)
    return Path(override) if override else Path(cfg.out_dir)


@dataclass
class RunSummary:
    schema_version: int
    stage: str
    arm: str
    config: dict
    final_loss: float
    final_terms: dict
    best_val: float
    best_epoch: int
    epochs_run: int
    failed: bool
    last_finite_epoch: int
    metrics: dict
    matched_ad_weight: float | None
    runtime_s: float
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def core_dict(self) -> dict:
        """Deterministic payload: timing and filesystem paths excluded."""
        out = self.to_dict()
        out.pop("runtime_s")
        out.pop("checkpoint_path")
        out["metrics"] = {k: v for k, v in out["metrics"].items() if k != "runtime_s"}
        out["config"] = {k: v for k, v in out["config"].items() if k != "out_dir"}
        return out

    def core_digest(self) -> str:
        blob = json.dumps(self.core_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def run_id(self) -> str:
        seeds = self.config[self.stage]
        return (
            f"{self.stage}_{self.arm}_i{seeds['seed_init']}"
            f"c{seeds['seed_cloud']}a{seeds['seed_audit']}_{self.core_digest()[:8]}"
        )

    def csv_row(self) -> dict:
        cfg = self.config[self.stage]
        row = {
            "stage": self.stage,
            "arm": self.arm,
            "seed_init": cfg["seed_init"],
            "seed_cloud": cfg["seed_cloud"],
            "seed_audit": cfg["seed_audit"],
            "failed": int(self.failed),
            "final_loss": self.final_loss,
            "best_val": self.best_val,
            "runtime_s": self.runtime_s,
        }
        if self.stage == "stage1":
            row.update({k: self.metrics[k] for k in
                        ("rel_l2_u", "rel_l2_grad_u", "residual_rmse", "grad_r_rmse")})
            row["aux_weight"] = cfg["aux_weight"] if self.arm != "off" else 0.0
        else:
            row.update({k: self.metrics[k] for k in
                        ("wall_bc_rmse", "dtdn_wall_rmse", "t_wall_rmse",
                         "bc_residual_rmse", "shell_probe")})
            row["shell_weight"] = cfg["shell_weight"] if self.arm != "off" else 0.0
        return row


def _summary_from_stage1(cfg: RunConfig, res: s1.Stage1TrainResult) -> RunSummary:
    metrics = res.metrics.as_dict()
    metrics["runtime_s"] = res.metrics.runtime_s
    return RunSummary(
        schema_version=SCHEMA_VERSION,
        stage="stage1",
        arm=res.config.arm,
        config=cfg.to_dict(),
        final_loss=res.final_loss,
        final_terms=res.final_terms,
        best_val=res.best_val,
        best_epoch=res.best_epoch,
        epochs_run=res.epochs_run,
        failed=res.failed,
        last_finite_epoch=res.last_finite_epoch,
        metrics=metrics,
        matched_ad_weight=res.matched_ad_weight,
        runtime_s=res.runtime_s,
    )


def _summary_from_stage2(cfg: RunConfig, res: s2.Stage2TrainResult) -> RunSummary:
    return RunSummary(
        schema_version=SCHEMA_VERSION,
        stage="stage2",
        arm=res.config.arm,
        config=cfg.to_dict(),
        final_loss=res.final_loss,
        final_terms=res.final_terms,
        best_val=res.best_val,
        best_epoch=res.best_epoch,
        epochs_run=res.epochs_run,
        failed=res.failed,
        last_finite_epoch=res.last_finite_epoch,
        metrics=res.report.as_dict(),
        matched_ad_weight=None,
        runtime_s=res.runtime_s,
    )


def run(cfg: RunConfig, write: bool = True) -> RunSummary:
    """Execute one training run and (optionally) write JSON/CSV/checkpoint."""
    if cfg.stage == "stage1":
        res = s1.train_stage1(cfg.stage1)
        summary = _summary_from_stage1(cfg, res)
    else:
        res = s2.train_stage2(cfg.stage2)
        summary = _summary_from_stage2(cfg, res)
    if write:
        out = resolve_out_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        run_id = summary.run_id()
        ckpt = out / f"{run_id}.ckpt"
        dn.save_checkpoint(res.checkpoint, ckpt)
        summary.checkpoint_path = str(ckpt)
        with open(out / f"{run_id}.json", "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        _append_csv_row(out / f"runs_{cfg.stage}.csv", summary)
    return summary


def _csv_columns(stage: str) -> Sequence[str]:
    return STAGE1_CSV_COLUMNS if stage == "stage1" else STAGE2_CSV_COLUMNS


def _format_cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _append_csv_row(path: Path, summary: RunSummary) -> None:
    columns = _csv_columns(summary.stage)
    new = not path.exists()
    row = summary.csv_row()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        if new:
            writer.writeheader()
        writer.writerow({k: _format_cell(row.get(k)) for k in columns})


def sweep(
    template: RunConfig,
    arms: Sequence[str],
    seeds: Sequence[int],
    weights: Sequence[float] | None = None,
    write: bool = True,
) -> tuple[list[RunSummary], list[dict]]:
    """Cartesian product of runs plus per-arm aggregate rows.

    ``weights`` (stage-1 only) sweeps the auxiliary anchor weight; a weight
    of exactly 0 runs the plain baseline arm instead.  Aggregates report
    mean and sample standard deviation (n-1 denominator) over completed
    runs, with failure counts kept alongside.
    """
    if not arms or not seeds:
        raise ConfigError("sweep needs non-empty arm and seed axes")
    summaries = []
    for arm in arms:
        for weight in (weights if weights is not None else [None]):
            for seed in seeds:
                cfg = template.replace_active(seed_init=seed, seed_cloud=seed, seed_audit=seed)
                if weight is not None:
                    if template.stage != "stage1":
                        raise ConfigError("weight axis is a stage-1 sweep feature")
                    if weight == 0.0:
                        cfg = cfg.replace_active(arm="off", aux_weight=0.0)
                    else:
                        cfg = cfg.replace_active(arm=arm, aux_weight=weight)
                else:
                    cfg = cfg.replace_active(arm=arm)
                summaries.append(run(cfg, write=write))
    agg = aggregate(summaries)
    if write:
        out = resolve_out_dir(template)
        out.mkdir(parents=True, exist_ok=True)
        write_aggregate_csv(out / f"aggregate_{template.stage}.csv", agg, template.stage)
    return summaries, agg


_AGG_METRICS = {
    "stage1": ("final_loss", "best_val", "rel_l2_u", "rel_l2_grad_u",
               "residual_rmse", "grad_r_rmse"),
    "stage2": ("final_loss", "best_val", "wall_bc_rmse", "dtdn_wall_rmse",
               "t_wall_rmse", "bc_residual_rmse", "shell_probe"),
}


def _group_key(summary: RunSummary) -> str:
    if summary.stage == "stage1":
        w = summary.config["stage1"]["aux_weight"]
        return f"{summary.arm}" if summary.arm == "off" else f"{summary.arm}@{w:g}"
    return summary.arm


def aggregate(summaries: Sequence[RunSummary]) -> list[dict]:
    """Mean +- sample std per arm over completed (non-failed) runs."""
    stages = {s.stage for s in summaries}
    if len(stages) != 1:
        raise ConfigError("aggregate needs summaries from a single stage")
    stage = stages.pop()
    groups: dict[str, list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault(_group_key(s), []).append(s)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        done = [s for s in members if not s.failed]
        row: dict = {"arm": key, "n_runs": len(members), "n_completed": len(done)}
        for metric in _AGG_METRICS[stage]:
            values = [_metric_value(s, metric) for s in done]
            values = [v for v in values if v is not None and math.isfinite(v)]
            if values:
                row[f"{metric}_mean"] = float(np.mean(values))
                row[f"{metric}_std"] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            else:
                row[f"{metric}_mean"] = math.nan
                row[f"{metric}_std"] = math.nan
        rows.append(row)
    return rows


def _metric_value(summary: RunSummary, metric: str):
    if metric == "final_loss":
        return summary.final_loss
    if metric == "best_val":
        return summary.best_val
    return summary.metrics.get(metric)


def write_aggregate_csv(path, rows: list[dict], stage: str) -> None:
    cols = ["arm", "n_runs", "n_completed"]
    for metric in _AGG_METRICS[stage]:
        cols += [f"{metric}_mean", f"{metric}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row.get(k)) for k in cols})


def paired_sign_test(wins: int, n: int) -> float:
    """Exact two-sided binomial sign test p-value (ties already dropped)."""
    if n <= 0:
        raise ValueError("sign test needs n >= 1 untied pairs")
    if not 0 <= wins <= n:
        raise ValueError("wins must lie in [0, n]")
    k = max(wins, n - wins)
    tail = sum(math.comb(n, j) for j in range(k, n + 1)) / 2**n
    return min(1.0, 2.0 * tail)


def report(summaries: Sequence[RunSummary | dict]) -> list[dict]:
    """Per-arm mean metrics ranked under the stage's metric hierarchy.

    Stage 2 ranks by wall-flux RMSE against the reference first, then the
    reference BC residual, the dense wall BC audit, the scalar losses, and
    wall temperature last; missing levels (no reference slice) fall through
    to the next.  Ties at one level break at the next.
    """
    if not summaries:
        raise ConfigError("report needs at least one summary")
    rows = [s.to_dict() if isinstance(s, RunSummary) else dict(s) for s in summaries]
    stages = {r["stage"] for r in rows}
    if len(stages) != 1:
        raise ConfigError(f"report cannot mix stages: {sorted(stages)}")
    stage = stages.pop()
    hierarchy = STAGE1_HIERARCHY if stage == "stage1" else STAGE2_HIERARCHY

    def metric_of(row: dict, metric: str):
        if metric in ("final_loss", "best_val"):
            return row.get(metric)
        return row.get("metrics", {}).get(metric, row.get(metric))

    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["arm"], []).append(row)
    entries = []
    for arm in sorted(groups):
        means = {}
        for metric in hierarchy:
            values = [metric_of(r, metric) for r in groups[arm]]
            values = [v for v in values if v is not None and math.isfinite(v)]
            means[metric] = float(np.mean(values)) if values else math.inf
        entries.append({"arm": arm, **means})
    entries.sort(key=lambda e: tuple(e[m] for m in hierarchy))
    for rank, entry in enumerate(entries, start=1):
        entry["rank"] = rank
    return entries
