"""Sweep planning and execution.

A plan enumerates (architecture, x-value, learning rate, seed index)
cells over one swept parameter (d, N, M, L, batch, or S). Every cell is
seeded by hashing the experiment seed with the cell identity, so results
are independent of scheduling and each cell is reproducible in isolation.
Results append to one JSONL file; a rerun skips cells whose summary line
is already present, which makes interrupted sweeps resumable.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import os
import traceback
from dataclasses import dataclass, field, fields

import numpy as np

from . import ConfigError
from . import records, trainer
from .archzoo import ArchVariant, KINDS
from .rng import hash64
from .taskgen import TaskSpec
from .trainer import TrainConfig

X_PARAMS = ("d", "N", "M", "L", "batch", "S")

# paper-style default axes; the learning-rate grid is 10 values
# log-uniform from 1e-5 to 1e-2
DEFAULT_AXES = {
    "d": [8, 16, 32, 64, 128, 256, 512, 1024],
    "N": [4, 8, 16, 32, 64, 128, 256, 512],
    "M": [1, 2, 4, 8, 16, 32],
    "L": [1, 2, 4, 8, 16, 32, 64],
    "batch": [1, 2, 4, 8, 16, 32, 64, 128],
    "S": [2, 4, 8, 16, 32, 64, 128, 256],
}
DEFAULT_LRS = [float(v) for v in np.logspace(-5, -2, 10)]


@dataclass
class SweepPlan:
    task: dict = field(default_factory=lambda: {"kind": "case", "S": 100, "N": 128,
                                                "head": "per_token"})
    archs: list = field(default_factory=lambda: list(KINDS))
    x_param: str = "d"
    x_values: list = field(default_factory=list)
    lrs: list = field(default_factory=lambda: list(DEFAULT_LRS))
    seeds_per_cell: int = 5
    experiment_seed: int = 0
    d: int = 128
    M: int = 4
    L: int = 2
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x_param not in X_PARAMS:
            raise ConfigError(f"x_param must be one of {X_PARAMS}, got {self.x_param!r}")
        for a in self.archs:
            if a not in KINDS:
                raise ConfigError(f"unknown architecture {a!r}")
        if not self.x_values:
            self.x_values = list(DEFAULT_AXES[self.x_param])
        if not self.lrs or any(lr <= 0 for lr in self.lrs):
            raise ConfigError("lrs must be non-empty and positive")
        if self.seeds_per_cell < 1:
            raise ConfigError("seeds_per_cell must be positive")
        TaskSpec(**self.task)  # validates early
        allowed = {f.name for f in fields(TrainConfig)} - {"lr", "seed"}
        allowed |= {"precision"}
        unknown = set(self.overrides) - allowed
        if unknown:
            raise ConfigError(f"unknown override keys {sorted(unknown)}")


def plan_from_json(obj: dict) -> SweepPlan:
    known = {f.name for f in fields(SweepPlan)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown plan keys {sorted(unknown)}")
    return SweepPlan(**obj)


def plan_to_json(plan: SweepPlan) -> dict:
    return {f.name: getattr(plan, f.name) for f in fields(SweepPlan)}


def cells_of(plan: SweepPlan) -> list[dict]:
    """All cells in deterministic plan order, each with its derived seed."""
    out = []
    for arch in plan.archs:
        for x in plan.x_values:
            for lr in plan.lrs:
                for si in range(plan.seeds_per_cell):
                    out.append({
                        "arch": arch, "x_param": plan.x_param, "x_value": x,
                        "lr": float(lr), "seed_index": si,
                        "seed": cell_seed(plan.experiment_seed, arch, x, lr, si),
                    })
    return out


def cell_seed(experiment_seed: int, arch: str, x_value, lr: float,
              seed_index: int) -> int:
    return hash64(experiment_seed, arch, x_value, float(lr), seed_index)


def cell_key(cell: dict) -> tuple:
    return (cell["arch"], cell["x_param"], cell["x_value"],
            float(cell["lr"]), cell["seed_index"])


def configs_for_cell(plan: SweepPlan, cell: dict):
    """Materialize (ModelConfig, TrainConfig, TaskSpec) for one cell."""
    task_kw = dict(plan.task)
    d, m, layers = plan.d, plan.M, plan.L
    ov = dict(plan.overrides)
    precision = ov.pop("precision", "f64")
    train_kw = dict(lr=cell["lr"], seed=cell["seed"], **ov)

    x, v = cell["x_param"], cell["x_value"]
    if x == "d":
        d = v
    elif x == "M":
        m = v
    elif x == "L":
        layers = v
    elif x == "N":
        task_kw["N"] = v
    elif x == "batch":
        train_kw["batch_size"] = v
        train_kw.setdefault("total_steps", trainer.batch_sweep_steps(v))
    elif x == "S":
        task_kw["S"] = v
        train_kw.setdefault("total_steps", trainer.vocab_sweep_steps(v))

    task = TaskSpec(**task_kw)
    model_config = trainer.model_config_for(
        task, d=d, M=m, L=layers, variant=ArchVariant(cell["arch"]),
        precision=precision)
    return model_config, TrainConfig(**train_kw), task


def _run_cell(args):
    plan_obj, cell = args
    plan = SweepPlan(**plan_obj)
    try:
        model_config, train_config, task = configs_for_cell(plan, cell)
        record = trainer.train_run(model_config, train_config, task)
        return cell, records.record_to_lines(record, cell), None
    except Exception:
        return cell, None, traceback.format_exc()


def existing_cell_keys(out_path: str) -> set:
    done = set()
    if os.path.exists(out_path):
        for obj in records.read_records(out_path):
            if obj["kind"] == records.SUMMARY:
                c = obj["cell"]
                if "x_param" in c:
                    done.add(cell_key(c))
    return done


def run_sweep(plan: SweepPlan, out_path: str, workers: int = 1,
              log=None) -> dict:
    """Execute all missing cells of the plan, appending JSONL to out_path.

    Returns {"planned", "skipped", "ran", "failed"}. Failed cells get a
    summary line with status "failed" and zero metrics so grids render
    them black; the sweep continues.
    """
    all_cells = cells_of(plan)
    done = existing_cell_keys(out_path)
    todo = [c for c in all_cells if cell_key(c) not in done]
    stats = {"planned": len(all_cells), "skipped": len(all_cells) - len(todo),
             "ran": 0, "failed": 0}
    if log:
        log(f"sweep: {stats['planned']} cells planned, {stats['skipped']} already done")
    if not todo:
        return stats

    plan_obj = plan_to_json(plan)
    jobs = [(plan_obj, c) for c in todo]
    with open(out_path, "a") as out:
        def consume(result):
            cell, lines, err = result
            if err is not None:
                stats["failed"] += 1
                fail = {"kind": records.SUMMARY, "cell": cell, "status": "failed",
                        "train_acc": 0.0, "val_acc": 0.0, "error": err.strip().splitlines()[-1]}
                out.write(json.dumps(fail, sort_keys=True) + "\n")
            else:
                stats["ran"] += 1
                out.write("\n".join(lines) + "\n")
            out.flush()
            if log:
                state = "failed" if err else "done"
                log(f"cell {cell['arch']} {cell['x_param']}={cell['x_value']} "
                    f"lr={cell['lr']:g} seed#{cell['seed_index']} {state} "
                    f"({stats['ran'] + stats['failed']}/{len(todo)})")

        if workers <= 1:
            for job in jobs:
                consume(_run_cell(job))
        else:
            # spawned workers read the thread caps at import time, so each
            # sticks to one BLAS thread instead of oversubscribing the cores
            blas_vars = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
            saved = {v: os.environ.get(v) for v in blas_vars}
            os.environ.update({v: "1" for v in blas_vars})
            try:
                ctx = mp.get_context("spawn")
                with ctx.Pool(workers) as pool:
                    for result in pool.imap_unordered(_run_cell, jobs):
                        consume(result)
            finally:
                for v, old in saved.items():
                    if old is None:
                        os.environ.pop(v, None)
                    else:
                        os.environ[v] = old
    return stats


def aggregate_best(summaries: list[dict], metric: str = "val_acc"):
    """Best (x_value, lr) cell by seed-mean of the summary metric.

    Ties break toward the lower learning rate, then the lower x value.
    Returns ((x_value, lr), mean).
    """
    if not summaries:
        raise ValueError("aggregate_best: no records")
    groups: dict[tuple, list[float]] = {}
    for s in summaries:
        if s["kind"] != records.SUMMARY:
            continue
        cell = s["cell"]
        key = (cell["x_value"], float(cell["lr"]))
        groups.setdefault(key, []).append(float(s.get(metric, 0.0)))
    if not groups:
        raise ValueError("aggregate_best: no summary records")
    best_key, best_mean = None, -1.0
    for key in sorted(groups, key=lambda k: (k[1], k[0])):
        mean = float(np.mean(groups[key]))
        if mean > best_mean + 1e-15:
            best_key, best_mean = key, mean
    return best_key, best_mean
