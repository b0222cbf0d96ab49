"""Grid runs over (strategy, gamma, alpha pair, seed) with a budget summary.

Only fedmfs is crossed with the gamma and alpha grids; the baselines have no
such knobs and run once per seed with those columns left blank.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .domain import (
    ALPHA_TOL,
    ConfigError,
    ExperimentConfig,
    Strategy,
    Violation,
    load_dataset,
    read_manifest,
    save_config,
    size_bytes_for,
    validate_config,
)
from .federation import run_experiment
from .reporting import write_csv, write_run

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "strategy",
    "gamma",
    "alpha_s",
    "alpha_c",
    "seed",
    "accuracy_at_budget",
    "bytes_per_round",
    "rounds_within_budget",
    "status",
    "error",
)

# 50 MB against 2.5 MB for one model of every modality in the original setting
BUDGET_MODEL_MULTIPLE = 20


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    gammas: tuple = (1,)
    alpha_pairs: tuple = ((0.2, 0.8),)
    strategies: tuple = (Strategy.FEDMFS,)
    seeds: tuple = (0,)
    budget_bytes: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(int(g) for g in self.gammas))
        object.__setattr__(self, "alpha_pairs", tuple((float(a), float(c)) for a, c in self.alpha_pairs))
        object.__setattr__(self, "strategies", tuple(Strategy(s) for s in self.strategies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        problems = []
        for name in ("gammas", "alpha_pairs", "strategies", "seeds"):
            if not getattr(self, name):
                problems.append(Violation("EmptyList", name, "must not be empty"))
        for a, c in self.alpha_pairs:
            if abs(a + c - 1.0) > ALPHA_TOL:
                problems.append(Violation("AlphaSumViolation", "alpha_pairs", f"({a}, {c}) does not sum to 1"))
        if any(g < 1 for g in self.gammas):
            problems.append(Violation("NonPositiveValue", "gammas", "every gamma must be >= 1"))
        if self.budget_bytes is not None and self.budget_bytes < 0:
            problems.append(Violation("NegativeValue", "budget_bytes", "must be >= 0"))
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "SweepSpec":
        d = dict(d)
        base = dict(d.pop("base"))
        ds = base.get("dataset_path")
        if base_dir is not None and isinstance(ds, str) and not Path(ds).is_absolute():
            base["dataset_path"] = str((Path(base_dir) / ds).resolve())
        known = {"gammas", "alpha_pairs", "strategies", "seeds", "budget_bytes"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([Violation("UnknownField", k, "not a sweep field") for k in unknown])
        return cls(ExperimentConfig.from_dict(base), **d)

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "gammas": list(self.gammas),
            "alpha_pairs": [list(p) for p in self.alpha_pairs],
            "strategies": [s.value for s in self.strategies],
            "seeds": list(self.seeds),
            "budget_bytes": self.budget_bytes,
        }


def load_sweep(path) -> SweepSpec:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return SweepSpec.from_dict(data, Path(path).parent)


@dataclass(frozen=True)
class Cell:
    config: ExperimentConfig
    name: str
    gamma: int | None = None
    alpha_s: float | None = None
    alpha_c: float | None = None


def cells(spec: SweepSpec) -> list[Cell]:
    out = []
    for seed in spec.seeds:
        for strategy in spec.strategies:
            if strategy is Strategy.FEDMFS:
                for g in spec.gammas:
                    for a, c in spec.alpha_pairs:
                        cfg = spec.base.with_(strategy=strategy, seed=seed, gamma=g, alpha_s=a, alpha_c=c)
                        out.append(Cell(cfg, f"fedmfs_g{g}_a{a!r}-{c!r}_seed{seed}", g, a, c))
            else:
                cfg = spec.base.with_(strategy=strategy, seed=seed)
                out.append(Cell(cfg, f"{strategy.value}_seed{seed}"))
    return out


def default_budget(dataset_path) -> float:
    manifest = read_manifest(dataset_path)
    total = sum(size_bytes_for((m.feature_dim, m.hidden_dim, manifest.num_classes)) for m in manifest.modalities)
    return float(BUDGET_MODEL_MULTIPLE * total)


def _row(cell: Cell, **values) -> dict:
    row = dict.fromkeys(SUMMARY_COLUMNS)
    row.update(strategy=cell.config.strategy.value, gamma=cell.gamma, alpha_s=cell.alpha_s, alpha_c=cell.alpha_c, seed=cell.config.seed)
    row.update(values)
    return row


def run_cell(cell: Cell, out_dir, budget: float, data=None) -> dict:
    """Runs one experiment into its own subdirectory; failures become error rows."""
    target = Path(out_dir) / cell.name
    try:
        validate_config(cell.config)
        result = run_experiment(cell.config, data=data)
        target.mkdir(parents=True, exist_ok=True)
        save_config(cell.config, target / "config.json")
        write_run(result, target)
        acc, completed = result.accuracy_at_budget(budget)
        per_round = sum(m.uploaded_bytes for m in result.metrics) / len(result.metrics)
        return _row(cell, accuracy_at_budget=acc, bytes_per_round=per_round, rounds_within_budget=completed, status="ok", error="")
    except Exception as exc:  # recorded, the sweep goes on
        log.warning("cell %s failed: %s", cell.name, exc)
        return _row(cell, status="error", error=f"{type(exc).__name__}: {exc}")


def _run_cell_job(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec, out_dir, workers: int = 1) -> list[dict]:
    validate_config(spec.base)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    budget = spec.budget_bytes if spec.budget_bytes is not None else default_budget(spec.base.dataset_path)
    todo = cells(spec)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_job, [(c, out, budget) for c in todo]))
    else:
        data = load_dataset(spec.base.dataset_path)
        rows = [run_cell(c, out, budget, data) for c in todo]
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    return rows
