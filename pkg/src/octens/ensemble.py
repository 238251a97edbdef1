"""Weighted averaging of parallel branch predictions and branch-weight search.

Each branch is one (architecture, training subset) pair that scores the same
samples. Branch scores are averaged with non-negative weights, thresholded,
and the weights are chosen to maximize macro F1 on one or more validation
sets.

Weights are always normalized before use, so any non-negative vector with a
positive sum is accepted. The combination is accumulated branch by branch in a
fixed order; the single-vector path and the batched search path share that
code, which keeps the objective reported by the search bit-identical to what
:func:`predict` followed by :func:`~octens.metrics.evaluate` yields.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from octens.data import DataFormatError, LabelMatrix, ScoreMatrix, align
from octens.metrics import DEFAULT_THRESHOLD, binarize_array, macro_f1_array

logger = logging.getLogger(__name__)

WEIGHTS_HEADER = ("branch_id", "weight")

GRID = "exhaustive-grid"
COORD = "coordinate-ascent"
_METHOD_ALIASES = {"grid": GRID, GRID: GRID, "coord": COORD, COORD: COORD}

# cap on lattice points for the exhaustive search
MAX_GRID_POINTS = 20_000_000
# cells (weights x samples x labels) evaluated per batch
_BATCH_CELLS = 2_000_000


@dataclass(frozen=True)
class BranchSet:
    """Ordered branch score matrices over one common, identically ordered sample set."""

    branch_ids: tuple[str, ...]
    scores: tuple[ScoreMatrix, ...]

    def __post_init__(self):
        object.__setattr__(self, "branch_ids", tuple(self.branch_ids))
        object.__setattr__(self, "scores", tuple(self.scores))
        if not self.scores:
            raise ValueError("a branch set needs at least one branch")
        if len(self.branch_ids) != len(self.scores):
            raise ValueError("one branch id per score matrix required")
        if len(set(self.branch_ids)) != len(self.branch_ids):
            raise ValueError("duplicate branch id")
        first = self.scores[0]
        for bid, s in zip(self.branch_ids, self.scores):
            if s.sample_ids != first.sample_ids or s.labels != first.labels:
                raise ValueError(
                    f"branch {bid!r} is not aligned with branch {self.branch_ids[0]!r}"
                )

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, ScoreMatrix]]) -> BranchSet:
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def __len__(self):
        return len(self.scores)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return self.scores[0].sample_ids

    @property
    def labels(self) -> tuple[str, ...]:
        return self.scores[0].labels

    def stack(self) -> np.ndarray:
        """Scores as a ``(branches, samples, labels)`` array."""
        return np.stack([s.values for s in self.scores])

    def take(self, ids) -> BranchSet:
        return BranchSet(self.branch_ids, tuple(s.take(ids) for s in self.scores))


def align_branches(
    pairs: Sequence[tuple[str, ScoreMatrix]], truth: LabelMatrix | None = None
) -> tuple[BranchSet, LabelMatrix | None, list[str]]:
    """Restrict branches (and truth) to the samples all of them cover.

    Returns the aligned branch set, the aligned truth (or ``None``) and the
    sorted ids that were dropped because some input lacked them.
    """
    if not pairs:
        raise ValueError("no branches given")
    all_ids = set()
    common = None
    matrices = [s for _, s in pairs] + ([truth] if truth is not None else [])
    for m in matrices:
        ids = set(m.sample_ids)
        all_ids |= ids
        common = ids if common is None else common & ids
    if not common:
        raise DataFormatError("the inputs share no sample_id")
    ids = sorted(common)
    dropped = sorted(all_ids - common)
    if dropped:
        logger.warning("dropped %d sample(s) not covered by every input", len(dropped))
    branches = BranchSet.from_pairs([(bid, s.take(ids)) for bid, s in pairs])
    return branches, (truth.take(ids) if truth is not None else None), dropped


def _check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if not w.sum() > 0:
        raise ValueError("weights must not all be zero")
    return w


def _normalize_rows(weights: np.ndarray) -> np.ndarray:
    total = weights[:, 0].copy()
    for k in range(1, weights.shape[1]):
        total += weights[:, k]
    return weights / total[:, None]


def _combine_rows(stack: np.ndarray, normalized: np.ndarray) -> np.ndarray:
    """``(B, K)`` normalized weights against ``(K, n, L)`` scores -> ``(B, n, L)``."""
    out = normalized[:, 0, None, None] * stack[0]
    for k in range(1, stack.shape[0]):
        out += normalized[:, k, None, None] * stack[k]
    return out


def normalize_weights(w) -> np.ndarray:
    """Scale a non-negative weight vector to sum to one."""
    return _normalize_rows(_check_weights(w)[None, :])[0]


def combine(branches: BranchSet, w) -> ScoreMatrix:
    """Weighted average of branch scores with weights ``w / sum(w)``."""
    w = _check_weights(w)
    if w.size != len(branches):
        raise ValueError(f"{w.size} weights given for {len(branches)} branches")
    out = _combine_rows(branches.stack(), _normalize_rows(w[None, :]))[0]
    # convex combination; clip only float spill past [0, 1]
    return ScoreMatrix(branches.sample_ids, np.clip(out, 0.0, 1.0), branches.labels)


def predict(branches: BranchSet, w, threshold: float = DEFAULT_THRESHOLD) -> LabelMatrix:
    combined = combine(branches, w)
    return LabelMatrix(
        combined.sample_ids, binarize_array(combined.values, threshold), combined.labels
    )


# ---------------------------------------------------------------------------
# Simplex lattice
# ---------------------------------------------------------------------------


def lattice_divisions(step: float) -> int:
    """Number of steps ``m`` with ``m * step == 1``; raises if none exists."""
    if not 0 < step <= 1:
        raise ValueError(f"step must lie in (0, 1], got {step}")
    m = round(1 / step)
    if abs(m * step - 1) > 1e-9:
        raise ValueError(f"step {step} does not divide 1 evenly")
    return m


def simplex_compositions(n: int, m: int) -> np.ndarray:
    """All non-negative integer vectors of length ``n`` summing to ``m``.

    Rows come in ascending lexicographic order; there are ``C(m + n - 1, n - 1)``.
    """
    if n < 1:
        raise ValueError("need at least one part")
    if n == 1:
        return np.array([[m]], dtype=np.int64)
    count = math.comb(m + n - 1, n - 1)
    out = np.empty((count, n), dtype=np.int64)
    # stars and bars: bar positions in lexicographic order give the parts in order
    slots = m + n - 1
    for row, bars in enumerate(itertools.combinations(range(slots), n - 1)):
        prev = -1
        for j, b in enumerate(bars):
            out[row, j] = b - prev - 1
            prev = b
        out[row, n - 1] = slots - 1 - prev
    return out


def enumerate_simplex(n_branches: int, step: float) -> np.ndarray:
    """Every lattice weight vector with resolution ``step``, one per row."""
    m = lattice_divisions(step)
    return simplex_compositions(n_branches, m) / m


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    step: float = 0.05
    method: str = GRID
    max_rounds: int = 100
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.method not in _METHOD_ALIASES:
            raise ValueError(f"unknown search method {self.method!r}")
        object.__setattr__(self, "method", _METHOD_ALIASES[self.method])
        lattice_divisions(self.step)
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    @property
    def divisions(self) -> int:
        return lattice_divisions(self.step)


@dataclass(frozen=True)
class SearchResult:
    weights: np.ndarray
    objective: float
    method: str
    evaluations: int
    flags: tuple[str, ...] = field(default=())


class _Objective:
    """Mean macro F1 over validation sets, evaluated for a batch of weight rows."""

    def __init__(self, pairs: Sequence[tuple[BranchSet, LabelMatrix]], threshold: float):
        if not pairs:
            raise ValueError("no validation data")
        self.sets = []
        n_branches = None
        for branches, truth in pairs:
            if not len(truth):
                raise ValueError("empty ground truth")
            if branches.sample_ids != truth.sample_ids or branches.labels != truth.labels:
                raise DataFormatError("branches and ground truth are not aligned")
            if n_branches is not None and len(branches) != n_branches:
                raise ValueError("every validation set needs the same branches")
            n_branches = len(branches)
            self.sets.append((branches.stack(), truth.values.astype(bool)))
        self.n_branches = n_branches
        self.threshold = threshold
        self.evaluations = 0
        cells = max(s.shape[1] * s.shape[2] for s, _ in self.sets)
        self.batch = max(1, _BATCH_CELLS // cells)

    def __call__(self, weights: np.ndarray) -> np.ndarray:
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        out = np.empty(len(weights))
        for start in range(0, len(weights), self.batch):
            chunk = _normalize_rows(weights[start:start + self.batch])
            total = None
            for stack, truth in self.sets:
                pred = _combine_rows(stack, chunk) >= self.threshold
                f1 = macro_f1_array(pred, truth)
                total = f1 if total is None else total + f1
            out[start:start + len(chunk)] = total / len(self.sets)
        self.evaluations += len(weights)
        return out


def _grid_search(objective: _Objective, m: int) -> tuple[np.ndarray, float]:
    n = objective.n_branches
    count = math.comb(m + n - 1, n - 1)
    if count > MAX_GRID_POINTS:
        raise ValueError(
            f"{count} lattice points for {n} branches; use coordinate ascent or a coarser step"
        )
    lattice = simplex_compositions(n, m)
    best_value, best_row = -np.inf, None
    for start in range(0, count, objective.batch):
        values = objective(lattice[start:start + objective.batch] / m)
        i = int(np.argmax(values))  # first maximum = lexicographically smallest
        if values[i] > best_value:
            best_value, best_row = values[i], lattice[start + i]
    return best_row / m, float(best_value)


def _redistribute(state: list[Fraction], k: int, j: int, m: int) -> list[int]:
    """Set coordinate ``k`` to ``j`` and share ``m - j`` among the rest by ratio.

    Shares are rounded to integers with the largest-remainder rule (ties go
    to the lower index); if the rest is all zero it is split evenly.
    """
    rest = [i for i in range(len(state)) if i != k]
    budget = m - j
    mass = sum(state[i] for i in rest)
    if mass == 0:
        ideal = {i: Fraction(budget, len(rest)) for i in rest}
    else:
        ideal = {i: state[i] * budget / mass for i in rest}
    out = [0] * len(state)
    out[k] = j
    for i in rest:
        out[i] = math.floor(ideal[i])
    leftover = budget - sum(out[i] for i in rest)
    by_remainder = sorted(rest, key=lambda i: (-(ideal[i] - out[i]), i))
    for i in by_remainder[:leftover]:
        out[i] += 1
    return out


def _coordinate_ascent(objective: _Objective, m: int, max_rounds: int):
    n = objective.n_branches
    state = [Fraction(m, n)] * n
    current = float(objective(np.array([[float(s) / m for s in state]]))[0])
    if n == 1:
        return np.array([1.0]), current
    for _ in range(max_rounds):
        improved = False
        for k in range(n):
            candidates = np.array(
                [_redistribute(state, k, j, m) for j in range(m + 1)], dtype=np.int64
            )
            values = objective(candidates / m)
            i = int(np.argmax(values))
            if values[i] > current:
                state = [Fraction(int(c)) for c in candidates[i]]
                current = float(values[i])
                improved = True
        if not improved:
            break
    return np.array([float(s) / m for s in state]), current


def optimize_weights_multi(
    pairs: Sequence[tuple[BranchSet, LabelMatrix]], cfg: SearchConfig = SearchConfig()
) -> SearchResult:
    """Maximize the unweighted mean macro F1 over several validation sets.

    The exhaustive grid returns the best lattice point, breaking ties toward
    the lexicographically smallest vector. Coordinate ascent starts from
    uniform weights and, one branch at a time, tries every lattice value for
    that branch with the others rescaled to fill the remainder, keeping only
    strict improvements; it stops after a sweep without one or after
    ``cfg.max_rounds`` sweeps.
    """
    objective = _Objective(pairs, cfg.threshold)
    m = cfg.divisions
    if cfg.method == GRID:
        weights, value = _grid_search(objective, m)
    else:
        weights, value = _coordinate_ascent(objective, m, cfg.max_rounds)
    flags = ()
    if any(len(truth) == 1 for _, truth in pairs):
        flags = ("single-sample",)
        logger.warning("weights were fitted on a single-sample validation set")
    return SearchResult(weights, value, cfg.method, objective.evaluations, flags)


def optimize_weights(
    branches: BranchSet, truth: LabelMatrix, cfg: SearchConfig = SearchConfig()
) -> SearchResult:
    return optimize_weights_multi([(branches, truth)], cfg)


def objective_value(
    pairs: Sequence[tuple[BranchSet, LabelMatrix]], w, threshold: float = DEFAULT_THRESHOLD
) -> float:
    """The search objective at one weight vector."""
    return float(_Objective(pairs, threshold)(_check_weights(w)[None, :])[0])


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------


def read_weights(path) -> dict[str, float]:
    """Read a ``branch_id,weight`` CSV, preserving row order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != WEIGHTS_HEADER:
            raise DataFormatError(f"bad header; expected {','.join(WEIGHTS_HEADER)}", path, 1)
        weights: dict[str, float] = {}
        for fields in reader:
            line = reader.line_num
            if not fields:
                continue
            if len(fields) != 2:
                raise DataFormatError(f"row has {len(fields)} fields, expected 2", path, line)
            bid = fields[0].strip()
            if not bid:
                raise DataFormatError("empty branch_id", path, line)
            if bid in weights:
                raise DataFormatError(f"duplicate branch_id {bid!r}", path, line)
            try:
                value = float(fields[1])
            except ValueError:
                raise DataFormatError(f"weight {fields[1]!r} is not a number", path, line) from None
            if not (math.isfinite(value) and value >= 0):
                raise DataFormatError(f"weight {fields[1]!r} must be non-negative", path, line)
            weights[bid] = value
    if not weights:
        raise DataFormatError("no weights in file", path)
    if not sum(weights.values()) > 0:
        raise DataFormatError("weights sum to zero", path)
    return weights


def format_weights(branch_ids: Sequence[str], weights) -> str:
    lines = [",".join(WEIGHTS_HEADER)]
    lines += [f"{bid},{w:.6g}" for bid, w in zip(branch_ids, weights)]
    return "\n".join(lines) + "\n"


def write_weights(path, branch_ids: Sequence[str], weights) -> None:
    Path(path).write_text(format_weights(branch_ids, weights), encoding="utf-8", newline="")


__all__ = [
    "BranchSet",
    "SearchConfig",
    "SearchResult",
    "align",
    "align_branches",
    "combine",
    "enumerate_simplex",
    "lattice_divisions",
    "normalize_weights",
    "objective_value",
    "optimize_weights",
    "optimize_weights_multi",
    "predict",
    "read_weights",
    "simplex_compositions",
    "write_weights",
]
