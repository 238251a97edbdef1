"""Score, label and manifest files, row alignment and the eye-wise split.

Score and label CSVs share one header, ``sample_id`` followed by the six
biomarker columns in a fixed order. Readers validate everything and raise
:class:`DataFormatError` with the offending line number instead of repairing
input.
"""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from octens import BIOMARKERS

logger = logging.getLogger(__name__)

SCORE_HEADER = ("sample_id",) + BIOMARKERS
MANIFEST_HEADER = ("sample_id", "eye_id")
SPLIT_HEADER = ("sample_id", "split")


class DataFormatError(ValueError):
    """A data file violates its format or invariants."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-sample biomarker probabilities, one row per ``sample_id``."""

    sample_ids: tuple[str, ...]
    values: np.ndarray
    labels: tuple[str, ...] = BIOMARKERS

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        _check_shape(self.sample_ids, values, self.labels)
        if values.size and not (np.all(values >= 0) and np.all(values <= 1)):
            raise DataFormatError("score values must lie in [0, 1]")

    def __len__(self):
        return len(self.sample_ids)

    def take(self, ids) -> ScoreMatrix:
        index = {s: i for i, s in enumerate(self.sample_ids)}
        rows = [index[s] for s in ids]
        return type(self)(tuple(ids), self.values[rows], self.labels)


@dataclass(frozen=True)
class LabelMatrix:
    """Binary ground truth (or thresholded predictions), same layout as scores."""

    sample_ids: tuple[str, ...]
    values: np.ndarray
    labels: tuple[str, ...] = BIOMARKERS

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        values = np.array(self.values)
        if values.size and not np.all((values == 0) | (values == 1)):
            raise DataFormatError("label values must be 0 or 1")
        values = values.astype(np.int8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        _check_shape(self.sample_ids, values, self.labels)

    def __len__(self):
        return len(self.sample_ids)

    def take(self, ids) -> LabelMatrix:
        index = {s: i for i, s in enumerate(self.sample_ids)}
        rows = [index[s] for s in ids]
        return type(self)(tuple(ids), self.values[rows], self.labels)


def _check_shape(sample_ids, values, labels):
    if values.ndim != 2 or values.shape != (len(sample_ids), len(labels)):
        raise DataFormatError(
            f"values have shape {values.shape}, expected ({len(sample_ids)}, {len(labels)})"
        )
    if len(set(sample_ids)) != len(sample_ids):
        raise DataFormatError("duplicate sample_id")
    if any(not s for s in sample_ids):
        raise DataFormatError("empty sample_id")


@dataclass(frozen=True)
class SampleManifest:
    """Ordered ``(sample_id, eye_id)`` pairs."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        entries = tuple((str(s), str(e)) for s, e in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for sample_id, eye_id in entries:
            if not sample_id or not eye_id:
                raise DataFormatError("empty id in manifest")
            if sample_id in seen:
                raise DataFormatError(f"duplicate sample_id {sample_id!r}")
            seen.add(sample_id)

    def __len__(self):
        return len(self.entries)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.entries)

    def eyes(self) -> OrderedDict[str, list[str]]:
        """Eye id to its sample ids, eyes in order of first appearance."""
        groups: OrderedDict[str, list[str]] = OrderedDict()
        for sample_id, eye_id in self.entries:
            groups.setdefault(eye_id, []).append(sample_id)
        return groups


@dataclass(frozen=True)
class SplitResult:
    train_ids: frozenset[str]
    val_ids: frozenset[str]


# ---------------------------------------------------------------------------
# Reading and writing
# ---------------------------------------------------------------------------


def _rows(path):
    """Yield ``(line_number, fields)``; the header is line 1."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for fields in reader:
            yield reader.line_num, fields


def _read_matrix(path, parse_cell):
    rows = _rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataFormatError("empty file, expected a header", path) from None
    if tuple(h.strip() for h in header) != SCORE_HEADER:
        missing = [c for c in SCORE_HEADER if c not in header]
        detail = f"missing column(s) {', '.join(missing)}" if missing else "wrong column order"
        raise DataFormatError(
            f"bad header ({detail}); expected {','.join(SCORE_HEADER)}", path, 1
        )
    ids, values, seen = [], [], {}
    for line, fields in rows:
        if not fields:
            continue
        if len(fields) != len(SCORE_HEADER):
            raise DataFormatError(
                f"row has {len(fields)} fields, expected {len(SCORE_HEADER)}", path, line
            )
        sample_id = fields[0].strip()
        if not sample_id:
            raise DataFormatError("empty sample_id", path, line)
        if sample_id in seen:
            raise DataFormatError(
                f"duplicate sample_id {sample_id!r} (first seen on line {seen[sample_id]})",
                path, line,
            )
        seen[sample_id] = line
        row = []
        for column, cell in zip(BIOMARKERS, fields[1:]):
            try:
                row.append(parse_cell(cell.strip()))
            except ValueError as exc:
                raise DataFormatError(
                    f"sample {sample_id!r}, column {column}: {exc}", path, line
                ) from None
        ids.append(sample_id)
        values.append(row)
    return tuple(ids), np.array(values, dtype=np.float64).reshape(len(ids), len(BIOMARKERS))


def _parse_score(cell: str) -> float:
    value = float(cell)
    if not 0.0 <= value <= 1.0:  # also rejects nan
        raise ValueError(f"value {cell} out of range [0, 1]")
    return value


def _parse_label(cell: str) -> float:
    value = float(cell)
    if value not in (0.0, 1.0):
        raise ValueError(f"value {cell} is not a binary label (0 or 1)")
    return value


def read_scores(path) -> ScoreMatrix:
    ids, values = _read_matrix(path, _parse_score)
    return ScoreMatrix(ids, values)


def read_labels(path) -> LabelMatrix:
    ids, values = _read_matrix(path, _parse_label)
    return LabelMatrix(ids, values)


def read_manifest(path) -> SampleManifest:
    rows = _rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataFormatError("empty file, expected a header", path) from None
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise DataFormatError(f"bad header; expected {','.join(MANIFEST_HEADER)}", path, 1)
    entries, seen = [], {}
    for line, fields in rows:
        if not fields:
            continue
        if len(fields) != 2:
            raise DataFormatError(f"row has {len(fields)} fields, expected 2", path, line)
        sample_id, eye_id = fields[0].strip(), fields[1].strip()
        if not sample_id or not eye_id:
            raise DataFormatError("empty id", path, line)
        if sample_id in seen:
            raise DataFormatError(
                f"duplicate sample_id {sample_id!r} (first seen on line {seen[sample_id]})",
                path, line,
            )
        seen[sample_id] = line
        entries.append((sample_id, eye_id))
    return SampleManifest(tuple(entries))


def format_scores(scores: ScoreMatrix) -> str:
    lines = [",".join(SCORE_HEADER)]
    for sample_id, row in zip(scores.sample_ids, scores.values):
        lines.append(sample_id + "," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def format_labels(labels: LabelMatrix) -> str:
    lines = [",".join(SCORE_HEADER)]
    for sample_id, row in zip(labels.sample_ids, labels.values):
        lines.append(sample_id + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def format_manifest(manifest: SampleManifest) -> str:
    lines = [",".join(MANIFEST_HEADER)] + [f"{s},{e}" for s, e in manifest.entries]
    return "\n".join(lines) + "\n"


def format_split(manifest: SampleManifest, split: SplitResult) -> str:
    lines = [",".join(SPLIT_HEADER)]
    for sample_id in manifest.sample_ids:
        lines.append(f"{sample_id},{'val' if sample_id in split.val_ids else 'train'}")
    return "\n".join(lines) + "\n"


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


def write_scores(path, scores: ScoreMatrix) -> None:
    _write(path, format_scores(scores))


def write_labels(path, labels: LabelMatrix) -> None:
    _write(path, format_labels(labels))


def write_manifest(path, manifest: SampleManifest) -> None:
    _write(path, format_manifest(manifest))


def write_split(path, manifest: SampleManifest, split: SplitResult) -> None:
    _write(path, format_split(manifest, split))


# ---------------------------------------------------------------------------
# Alignment and splitting
# ---------------------------------------------------------------------------


def align(a, b):
    """Restrict two matrices to their shared samples in sorted id order.

    Returns ``(a_aligned, b_aligned, dropped)`` where ``dropped`` lists, in
    sorted order, every id present in only one of the inputs.
    """
    if not len(a) or not len(b):
        raise DataFormatError("cannot align an empty matrix")
    if tuple(a.labels) != tuple(b.labels):
        raise DataFormatError("label columns differ between the matrices")
    ids_a, ids_b = set(a.sample_ids), set(b.sample_ids)
    common = sorted(ids_a & ids_b)
    if not common:
        raise DataFormatError("the two matrices share no sample_id")
    dropped = sorted(ids_a ^ ids_b)
    if dropped:
        logger.warning("alignment dropped %d unmatched sample(s)", len(dropped))
    return a.take(common), b.take(common), dropped


def eyewise_split(manifest: SampleManifest, val_fraction: float, seed: int) -> SplitResult:
    """Partition samples so that no eye contributes to both sides.

    Eyes (in order of first appearance) are shuffled with ``seed``; whole eyes
    then move to validation until it holds at least ``val_fraction`` of all
    samples. The overshoot is therefore smaller than the largest eye.
    """
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    groups = manifest.eyes()
    if len(groups) < 2:
        raise ValueError(f"need at least 2 distinct eyes to split, got {len(groups)}")
    eyes = list(groups)
    order = np.random.default_rng(seed).permutation(len(eyes))
    # exact comparison against the float the caller passed
    target = Fraction(val_fraction) * len(manifest)
    val, count = [], 0
    for i in order:
        if count >= target:
            break
        val.extend(groups[eyes[i]])
        count += len(groups[eyes[i]])
    val_ids = frozenset(val)
    return SplitResult(frozenset(manifest.sample_ids) - val_ids, val_ids)
