"""The shipped five-branch weight table and its golden combine/predict outputs.

The branch scores under ``fixtures/`` are synthetic; only the weights and the
branch layout come from the published best-performing distribution. Parameter
counts are kept as descriptive metadata and are not used anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path

import numpy as np

from octens import BIOMARKERS
from octens.data import ScoreMatrix, format_labels, format_scores, read_scores, write_scores
from octens.ensemble import BranchSet, combine, predict, read_weights, write_weights

FIXTURE_THRESHOLD = 0.5


@dataclass(frozen=True)
class Branch:
    branch_id: str
    model: str
    training_data: str
    weight: str
    parameters: str


BRANCHES = (
    Branch("effnetv2m_trex_prime", "EfficientNetV2-M", "TREX+PRIME", "0.1", "54M"),
    Branch("maxvit_trex_prime", "MaxViT-base", "TREX+PRIME", "0.45", "119M"),
    Branch("effnetv2m_trex", "EfficientNetV2-M", "TREX", "0.1", "54M"),
    Branch("maxvit_trex", "MaxViT-base", "TREX", "0.25", "119M"),
    Branch("effnetv2m_prime", "EfficientNetV2-M", "PRIME", "0.1", "54M"),
)

WEIGHTS_FILE = "weights.csv"
GOLDEN_SCORES_FILE = "golden_scores.csv"
GOLDEN_LABELS_FILE = "golden_labels.csv"


def branch_file(branch_id: str) -> str:
    return f"branch_{branch_id}.csv"


def default_dir() -> Path:
    return Path(str(resources.files("octens") / "fixtures"))


@dataclass
class FixtureReport:
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else "")
               for name, ok, detail in self.checks]
        out += [f"FLAG {flag}" for flag in self.flags]
        return out


def load_branches(directory) -> BranchSet:
    directory = Path(directory)
    return BranchSet.from_pairs(
        [(b.branch_id, read_scores(directory / branch_file(b.branch_id))) for b in BRANCHES]
    )


def reproduce_fixture(directory=None) -> FixtureReport:
    """Check the weight file against the table and the golden outputs.

    Missing files raise :class:`FileNotFoundError`. A weight file that does
    not sum to one is normalized as usual and flagged.
    """
    directory = Path(directory) if directory is not None else default_dir()
    report = FixtureReport()
    weights = read_weights(directory / WEIGHTS_FILE)

    expected = {b.branch_id: float(b.weight) for b in BRANCHES}
    report.checks.append((
        "weights_match_table", weights == expected,
        ", ".join(f"{k}={v:g}" for k, v in weights.items()),
    ))
    # exact decimal sum of the written values
    total = sum(Decimal(repr(v)) for v in weights.values())
    report.checks.append(("weights_sum_to_one", total == 1, f"sum={total}"))
    if total != 1:
        report.flags.append(f"weights normalized from sum {total}")

    branches = load_branches(directory)
    try:
        w = [weights[b.branch_id] for b in BRANCHES]
    except KeyError as exc:
        raise ValueError(f"weight file has no row for branch {exc.args[0]!r}") from None
    if len(weights) != len(BRANCHES):
        raise ValueError("weight file rows do not match the fixture branches")

    scores_text = format_scores(combine(branches, w))
    golden = (directory / GOLDEN_SCORES_FILE).read_bytes()
    report.checks.append(("golden_scores", scores_text.encode() == golden, GOLDEN_SCORES_FILE))

    labels_text = format_labels(predict(branches, w, FIXTURE_THRESHOLD))
    golden = (directory / GOLDEN_LABELS_FILE).read_bytes()
    report.checks.append(("golden_labels", labels_text.encode() == golden, GOLDEN_LABELS_FILE))
    return report


def build_fixture(directory, n_samples: int = 16, seed: int = 2023) -> None:
    """Regenerate the synthetic branch scores, weight file and goldens.

    Scores are drawn at six decimals so they survive the CSV round trip;
    samples whose combined score lands within 1e-6 of the threshold are
    redrawn so the golden labels do not hinge on the last float bit.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    w = np.array([float(b.weight) for b in BRANCHES])
    ids = tuple(f"s{i:03d}" for i in range(n_samples))
    stack = np.empty((len(BRANCHES), n_samples, len(BIOMARKERS)))
    for i in range(n_samples):
        while True:
            rows = np.round(rng.uniform(0, 1, size=(len(BRANCHES), len(BIOMARKERS))), 6)
            if np.all(np.abs(w @ rows - FIXTURE_THRESHOLD) > 1e-6):
                break
        stack[:, i, :] = rows
    for b, values in zip(BRANCHES, stack):
        write_scores(directory / branch_file(b.branch_id), ScoreMatrix(ids, values))
    write_weights(directory / WEIGHTS_FILE, [b.branch_id for b in BRANCHES], w)
    branches = load_branches(directory)
    (directory / GOLDEN_SCORES_FILE).write_text(
        format_scores(combine(branches, w)), encoding="utf-8", newline="")
    (directory / GOLDEN_LABELS_FILE).write_text(
        format_labels(predict(branches, w, FIXTURE_THRESHOLD)), encoding="utf-8", newline="")
