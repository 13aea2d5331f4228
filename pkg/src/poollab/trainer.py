"""Single-run training and evaluation.

A run draws a fresh batch at every step (infinite-data regime), trains
with Adam under the variant's learning-rate schedule, evaluates every
`eval_interval` steps (overall accuracy at the training and validation
lengths, plus per-case accuracies for the case task), and records the
snapshots together with the max-over-training summary of each metric.

Schedules: linear decay for the pre-residual-norm family; warmup followed
by linear decay plus gradient-norm clipping for the BERT baseline (warmup
length defaults to 10% of total steps, clip norm to 1.0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ConfigError
from . import archzoo, gradcore as gc, taskgen
from .archzoo import Model, ModelConfig
from .rng import make_rng
from .taskgen import TaskSpec

SCHEDULES = ("linear_decay", "warmup_then_linear_decay")

TOTAL_EXAMPLES_BUDGET = 3200 * 32


@dataclass
class TrainConfig:
    lr: float = 1e-3
    total_steps: int = 3200
    batch_size: int = 32
    schedule: str | None = None        # None: resolved from the variant flags
    warmup_steps: int | None = None    # None: ceil(0.1 * total_steps)
    grad_clip: float | None = None     # None: resolved from the variant flags
    dropout: float = 0.0
    l2: float = 0.0
    eval_interval: int = 100
    eval_batches: int = 32
    per_case_count: int = 1000         # 0 disables per-case evaluation
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.total_steps < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ConfigError("total_steps, batch_size, eval_interval must be positive")
        if self.schedule is not None and self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps is not None and not (0 < self.warmup_steps < self.total_steps):
            raise ConfigError("warmup_steps must lie in (0, total_steps)")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must be in [0, 1)")
        if self.l2 < 0 or self.per_case_count < 0 or self.eval_batches < 1:
            raise ConfigError("l2, per_case_count, eval_batches out of range")

    def resolved_for(self, variant: archzoo.ArchVariant) -> "TrainConfig":
        """Fill schedule/warmup/clip from the variant's training flags."""
        schedule = self.schedule
        if schedule is None:
            schedule = "warmup_then_linear_decay" if variant.use_warmup else "linear_decay"
        warmup = self.warmup_steps
        if warmup is None and schedule == "warmup_then_linear_decay":
            warmup = max(1, math.ceil(0.1 * self.total_steps))
        clip = self.grad_clip
        if clip is None and variant.use_grad_clip:
            clip = 1.0
        return replace(self, schedule=schedule, warmup_steps=warmup, grad_clip=clip)


@dataclass
class Snapshot:
    step: int
    train_acc: float
    val_acc: float
    case_train: tuple | None = None
    case_val: tuple | None = None


@dataclass
class MetricRecord:
    run: dict
    snapshots: list
    summary: dict
    status: str = "ok"


def lr_at(config: TrainConfig, step: int) -> float:
    """Learning rate for a 0-based step under the resolved schedule."""
    if not (0 <= step < config.total_steps):
        raise ValueError(f"step {step} outside [0, {config.total_steps})")
    t, lr0 = config.total_steps, config.lr
    if config.schedule == "warmup_then_linear_decay":
        w = config.warmup_steps
        if step < w:
            return lr0 * step / w
        return lr0 * (1.0 - (step - w) / (t - w))
    return lr0 * (1.0 - step / t)


def adam_init(model: Model) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(p.data) for k, p in model.params.items()},
        "v": {k: np.zeros_like(p.data) for k, p in model.params.items()},
    }


def adam_step(params, grads: dict, state: dict, lr: float, l2: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place Adam update with bias correction; L2 is added to the raw
    gradient as weight * parameter before the moment updates."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if l2 > 0.0:
            g = g + l2 * p.data
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return math.sqrt(total)


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_grad_norm(grads)
    if norm > max_norm and math.isfinite(norm):
        factor = max_norm / norm
        return {k: g * factor for k, g in grads.items()}
    return grads


_EVAL_CHUNK = 64


def _accuracy(model: Model, tokens: np.ndarray, targets: np.ndarray) -> float:
    hits = 0
    for lo in range(0, tokens.shape[0], _EVAL_CHUNK):
        chunk = tokens[lo: lo + _EVAL_CHUNK]
        logits = archzoo.forward(model, chunk, train_mode=False)
        hits += int((logits.data.argmax(axis=1) == targets[lo: lo + _EVAL_CHUNK]).sum())
    return hits / tokens.shape[0]


def evaluate(model: Model, task: TaskSpec, n_eval: int, rng: np.random.Generator,
             n_batches: int = 32, batch_size: int = 32, per_case_count: int = 0):
    """Accuracy on fresh data at length n_eval; dropout off.

    Returns (accuracy, per-case accuracies or None). Per-case accuracies
    are measured on `per_case_count` conditional samples per case, case
    task only.
    """
    tokens, targets = task.train_arrays(n_batches * batch_size, rng, n=n_eval)
    acc = _accuracy(model, tokens, targets)
    cases = None
    if task.kind == "case" and per_case_count > 0:
        accs = []
        for case in taskgen.CASES:
            ct, cy = taskgen.case_conditional_arrays(case, task.S, n_eval,
                                                     per_case_count, rng)
            accs.append(_accuracy(model, ct, cy))
        cases = tuple(accs)
    return acc, cases


def model_config_for(task: TaskSpec, d: int = 128, M: int = 4, L: int = 2,
                     variant: archzoo.ArchVariant | None = None,
                     precision: str = "f64", dropout: float = 0.0) -> ModelConfig:
    """ModelConfig matched to a task (head, vocabulary, positional table)."""
    if variant is None:
        variant = archzoo.ArchVariant("NAP")
    n_max = max(task.N, task.N_val) if task.head == "first_token" else task.N
    return ModelConfig(d=d, M=M, L=L, N_max=max(n_max, task.N), S=task.S,
                       variant=variant, head=task.head,
                       use_positional=task.uses_positional,
                       dropout=dropout, precision=precision)


def _summarize(snapshots: list, task: TaskSpec) -> dict:
    def best(vals):
        return max(vals) if vals else 0.0

    summary = {
        "train_acc": best([s.train_acc for s in snapshots]),
        "val_acc": best([s.val_acc for s in snapshots]),
    }
    if task.kind == "case" and any(s.case_train for s in snapshots):
        for key, grab in (("case_train", lambda s: s.case_train),
                          ("case_val", lambda s: s.case_val)):
            triples = [grab(s) for s in snapshots if grab(s)]
            summary[key] = [best([t[i] for t in triples]) for i in range(3)]
    return summary


def train_run(model_config: ModelConfig, train_config: TrainConfig,
              task: TaskSpec) -> MetricRecord:
    """Train one model; fresh batch per step; returns the metric record.

    Deterministic per seed: the init, data, dropout, and evaluation streams
    are all derived from train_config.seed.
    """
    cfg = train_config.resolved_for(model_config.variant)
    model_config = replace(model_config, dropout=cfg.dropout)
    model = archzoo.build_model(model_config, make_rng(cfg.seed, "init"))
    data_rng = make_rng(cfg.seed, "data")
    drop_rng = make_rng(cfg.seed, "dropout")
    state = adam_init(model)

    run = {
        "arch": model_config.variant.kind, "task": task.kind, "head": task.head,
        "d": model_config.d, "M": model_config.M, "L": model_config.L,
        "N": task.N, "S": task.S, "batch": cfg.batch_size, "lr": cfg.lr,
        "seed": cfg.seed, "precision": model_config.precision,
    }
    snapshots: list[Snapshot] = []
    status = "ok"

    for step in range(cfg.total_steps):
        tokens, targets = task.train_arrays(cfg.batch_size, data_rng)
        with gc.Tape() as tape:
            logits = archzoo.forward(model, tokens, train_mode=True, rng=drop_rng)
            loss = gc.cross_entropy_from_logits(logits, targets)
            if not math.isfinite(float(loss.data)):
                status = "diverged"
                break
            tape.backward(loss)
        grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
        norm = global_grad_norm(grads)
        if not math.isfinite(norm):
            status = "diverged"
            break
        if cfg.grad_clip is not None:
            grads = clip_global_norm(grads, cfg.grad_clip)
        adam_step(model.parameters(), grads, state, lr_at(cfg, step), l2=cfg.l2)
        model.zero_grads()

        done = step + 1
        if done % cfg.eval_interval == 0 or done == cfg.total_steps:
            eval_rng = make_rng(cfg.seed, "eval", done)
            train_acc, case_train = evaluate(
                model, task, task.N, eval_rng, cfg.eval_batches,
                cfg.batch_size, cfg.per_case_count)
            val_acc, case_val = evaluate(
                model, task, task.N_val, eval_rng, cfg.eval_batches,
                cfg.batch_size, cfg.per_case_count)
            snapshots.append(Snapshot(done, train_acc, val_acc,
                                      case_train, case_val))

    return MetricRecord(run=run, snapshots=snapshots,
                        summary=_summarize(snapshots, task), status=status)


def batch_sweep_steps(batch_size: int) -> int:
    """Steps for a batch-size sweep cell, keeping total examples constant."""
    return TOTAL_EXAMPLES_BUDGET // batch_size


def vocab_sweep_steps(S: int) -> int:
    """Steps for a vocabulary sweep cell (examples per token roughly constant)."""
    return 400 * S
