"""Deterministic generators for the synthetic sequence tasks.

Case-distinction task: sequences of uniform random token ids are labeled
by two trigger tokens (64 and 50). A sequence containing 64 asks for the
position of its minimum; otherwise, one containing 50 asks for position 0;
otherwise the position of its maximum. Because the triggers are rare, the
three cases are heavily and controllably imbalanced (at S=100, N=128
roughly 72/20/8).

Mode task: the target class is the most frequent token id, with ties
broken toward the smallest id.

All generators draw fresh examples from a numpy Generator; there is no
fixed dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ConfigError

ARGMIN, FIRST, ARGMAX = "argmin", "first", "argmax"
CASES = (ARGMIN, FIRST, ARGMAX)

ARGMIN_TRIGGER = 64
FIRST_TRIGGER = 50


@dataclass(frozen=True)
class Example:
    tokens: tuple
    target: int
    case: str | None = None


def case_of(tokens) -> str:
    """Label one sequence: contains 64 -> argmin; else contains 50 -> first;
    else argmax."""
    tokens = np.asarray(tokens)
    if (tokens == ARGMIN_TRIGGER).any():
        return ARGMIN
    if (tokens == FIRST_TRIGGER).any():
        return FIRST
    return ARGMAX


def target_of(tokens, case: str) -> int:
    """Target position for a labeled sequence (first occurrence on ties)."""
    tokens = np.asarray(tokens)
    if case == ARGMIN:
        return int(tokens.argmin())
    if case == FIRST:
        return 0
    if case == ARGMAX:
        return int(tokens.argmax())
    raise ValueError(f"unknown case {case!r}")


def case_probabilities(S: int, N: int):
    """Exact case frequencies of the generator under i.i.d. uniform tokens."""
    if S < 2:
        raise ValueError("case_probabilities: S must be at least 2")
    p_no64 = (1.0 - 1.0 / S) ** N
    p_argmin = 1.0 - p_no64
    p_first = p_no64 * (1.0 - (1.0 - 1.0 / (S - 1)) ** N)
    return p_argmin, p_first, 1.0 - p_argmin - p_first


def _label_arrays(tokens: np.ndarray):
    """Vectorized case codes (0/1/2 = argmin/first/argmax) and targets."""
    has64 = (tokens == ARGMIN_TRIGGER).any(axis=1)
    has50 = (tokens == FIRST_TRIGGER).any(axis=1)
    codes = np.where(has64, 0, np.where(has50, 1, 2)).astype(np.int8)
    targets = np.where(has64, tokens.argmin(axis=1),
                       np.where(has50, 0, tokens.argmax(axis=1)))
    return codes, targets.astype(np.int64)


def case_batch_arrays(S: int, N: int, batch: int, rng: np.random.Generator):
    """(tokens, targets, case codes) for a fresh batch of the case task."""
    tokens = rng.integers(0, S, size=(batch, N), dtype=np.int64)
    codes, targets = _label_arrays(tokens)
    return tokens, targets, codes


def gen_case_batch(S: int, N: int, batch: int, rng: np.random.Generator) -> list[Example]:
    tokens, targets, codes = case_batch_arrays(S, N, batch, rng)
    return [Example(tuple(int(t) for t in row), int(tgt), CASES[c])
            for row, tgt, c in zip(tokens, targets, codes)]


def _sample_excluding(rng, S, shape, excluded):
    """Uniform ids over [0, S) minus the sorted excluded values."""
    out = rng.integers(0, S - len(excluded), size=shape, dtype=np.int64)
    for cut in sorted(excluded):
        out += out >= cut
    return out


def case_conditional_arrays(case: str, S: int, N: int, count: int,
                            rng: np.random.Generator):
    """Sample the exact conditional distribution of the generator given the case.

    argmax needs no rejection (uniform over ids excluding both triggers);
    first and argmin reject until the required trigger appears.
    """
    if S <= ARGMIN_TRIGGER:
        raise ConfigError(f"case task needs S > {ARGMIN_TRIGGER}, got {S}")
    if case == ARGMAX:
        tokens = _sample_excluding(rng, S, (count, N), (FIRST_TRIGGER, ARGMIN_TRIGGER))
    else:
        if case == ARGMIN:
            accept = 1.0 - (1.0 - 1.0 / S) ** N
            draw = lambda k: rng.integers(0, S, size=(k, N), dtype=np.int64)
            trigger = ARGMIN_TRIGGER
        elif case == FIRST:
            accept = 1.0 - (1.0 - 1.0 / (S - 1)) ** N
            draw = lambda k: _sample_excluding(rng, S, (k, N), (ARGMIN_TRIGGER,))
            trigger = FIRST_TRIGGER
        else:
            raise ValueError(f"unknown case {case!r}")
        if accept < 1e-6:
            raise ValueError(
                f"conditional sampling for {case} at S={S}, N={N} has expected "
                f"acceptance {accept:.2e}; use a constructive sampler instead")
        tokens = draw(count)
        bad = ~(tokens == trigger).any(axis=1)
        while bad.any():
            tokens[bad] = draw(int(bad.sum()))
            bad = ~(tokens == trigger).any(axis=1)
    _, targets = _label_arrays(tokens)
    return tokens, targets


def gen_case_conditional(case: str, S: int, N: int, count: int,
                         rng: np.random.Generator) -> list[Example]:
    tokens, targets = case_conditional_arrays(case, S, N, count, rng)
    return [Example(tuple(int(t) for t in row), int(tgt), case)
            for row, tgt in zip(tokens, targets)]


def mode_targets(tokens: np.ndarray, S: int) -> np.ndarray:
    """Most frequent id per row, smallest id winning ties."""
    batch = tokens.shape[0]
    counts = np.zeros((batch, S), dtype=np.int64)
    np.add.at(counts, (np.arange(batch)[:, None], tokens), 1)
    return counts.argmax(axis=1)


def mode_batch_arrays(S: int, N: int, batch: int, rng: np.random.Generator):
    tokens = rng.integers(0, S, size=(batch, N), dtype=np.int64)
    return tokens, mode_targets(tokens, S)


def gen_mode_batch(S: int, N: int, batch: int, rng: np.random.Generator) -> list[Example]:
    tokens, targets = mode_batch_arrays(S, N, batch, rng)
    return [Example(tuple(int(t) for t in row), int(tgt))
            for row, tgt in zip(tokens, targets)]


def dump_jsonl(examples, fh):
    """One {"tokens": [...], "target": t, "case": ...} object per line."""
    for ex in examples:
        fh.write(json.dumps({"tokens": list(ex.tokens), "target": ex.target,
                             "case": ex.case}) + "\n")


@dataclass
class TaskSpec:
    """Which task to train on, at which sizes, with which output head."""

    kind: str = "case"           # "case" or "mode"
    S: int = 100
    N: int = 128
    head: str = "per_token"      # case: per_token/first_token; mode: mode
    N_val: int | None = None     # default: N // 2 for case, 2 * N for mode

    def __post_init__(self):
        if self.kind not in ("case", "mode"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == "case":
            if self.head not in ("per_token", "first_token"):
                raise ConfigError(f"case task head must be per_token or first_token")
            if self.S <= ARGMIN_TRIGGER:
                raise ConfigError(
                    f"case task needs S > {ARGMIN_TRIGGER}, got {self.S}")
        else:
            if self.head != "mode":
                raise ConfigError("mode task requires the mode head")
            if self.S < 2:
                raise ConfigError("mode task needs S >= 2")
        if self.N < 1:
            raise ConfigError("N must be positive")
        if self.N_val is None:
            self.N_val = max(1, self.N // 2) if self.kind == "case" else 2 * self.N

    @property
    def uses_positional(self) -> bool:
        return self.kind != "mode"

    def train_arrays(self, batch: int, rng: np.random.Generator, n: int | None = None):
        """(tokens, targets) of a fresh batch, at length `n` (default train N)."""
        n = self.N if n is None else n
        if self.kind == "case":
            tokens, targets, _ = case_batch_arrays(self.S, n, batch, rng)
        else:
            tokens, targets = mode_batch_arrays(self.S, n, batch, rng)
        return tokens, targets
