"""Kendall rank correlations, FOIL pairwise accuracy and corpus-level tables.

Pair tallies are exact integers; the only floating-point step is the final
division, so results do not depend on pair order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from gveval.errors import (
    DegenerateCategories,
    DegenerateInput,
    EmptyPairs,
    LengthMismatch,
    MissingColumn,
)
from gveval.model import ACCR_DIMENSIONS, CorpusRecord, HumanJudgment, HumanKind


@dataclass(frozen=True)
class PairTally:
    concordant: int
    discordant: int
    ties_x: int  # pairs tied in x, including those also tied in y
    ties_y: int
    ties_both: int
    total_pairs: int

    def __post_init__(self) -> None:
        x_only = self.ties_x - self.ties_both
        y_only = self.ties_y - self.ties_both
        if self.concordant + self.discordant + x_only + y_only + self.ties_both != self.total_pairs:
            raise ValueError("pair tally does not add up")


def _as_vectors(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(x) != len(y):
        raise LengthMismatch(f"x has {len(x)} values, y has {len(y)}")
    if len(x) < 2:
        raise DegenerateInput("need at least two observations")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise DegenerateInput("inputs contain non-finite values")
    return xa, ya


def pair_tally(x: Sequence[float], y: Sequence[float]) -> PairTally:
    xa, ya = _as_vectors(x, y)
    n = len(xa)
    c = d = tx = ty = tb = 0
    for i in range(n - 1):
        sx = np.sign(xa[i + 1 :] - xa[i])
        sy = np.sign(ya[i + 1 :] - ya[i])
        prod = sx * sy
        c += int(np.count_nonzero(prod > 0))
        d += int(np.count_nonzero(prod < 0))
        zx = sx == 0
        zy = sy == 0
        tx += int(np.count_nonzero(zx))
        ty += int(np.count_nonzero(zy))
        tb += int(np.count_nonzero(zx & zy))
    return PairTally(c, d, tx, ty, tb, n * (n - 1) // 2)


def _check_not_constant(xa: np.ndarray, ya: np.ndarray) -> None:
    if np.all(xa == xa[0]):
        raise DegenerateInput("x is constant")
    if np.all(ya == ya[0]):
        raise DegenerateInput("y is constant")


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    xa, ya = _as_vectors(x, y)
    _check_not_constant(xa, ya)
    t = pair_tally(xa, ya)
    denom = (t.total_pairs - t.ties_x) * (t.total_pairs - t.ties_y)
    return (t.concordant - t.discordant) / math.sqrt(denom)


def kendall_tau_c(x: Sequence[float], y: Sequence[float]) -> float:
    """Stuart's tau-c: 2m(C - D) / (n^2 (m - 1)), m = min distinct counts."""
    xa, ya = _as_vectors(x, y)
    m = min(len(np.unique(xa)), len(np.unique(ya)))
    if m < 2:
        raise DegenerateCategories("tau-c needs at least two categories in each variable")
    t = pair_tally(xa, ya)
    n = len(xa)
    return 2 * m * (t.concordant - t.discordant) / (n * n * (m - 1))


def foil_pairwise_accuracy(pairs: Iterable[tuple[float, float]]) -> float:
    """Share of pairs where the true caption outscores its foil; ties count half."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyPairs("no caption pairs")
    wins = sum(1 for t, f in pairs if t > f)
    ties = sum(1 for t, f in pairs if t == f)
    return (wins + 0.5 * ties) / len(pairs)


class HumanProjection(str, Enum):
    AUTO = "auto"
    EXPERT_MEAN = "expert-mean"
    CROWD_PROPORTION = "crowd-proportion"
    VATEX_SCORE = "vatex-score"
    ACCR_MEAN = "accr-mean"
    ACCURACY = "accuracy"
    COMPLETENESS = "completeness"
    CONCISENESS = "conciseness"
    RELEVANCE = "relevance"
    RAW_JUDGMENTS = "raw-judgments"

    @property
    def accr_dimension(self) -> str | None:
        return self.value if self.value in ACCR_DIMENSIONS else None


_DEFAULT_PROJECTION = {
    HumanKind.EXPERT_MEAN: HumanProjection.EXPERT_MEAN,
    HumanKind.CROWD_PROPORTION: HumanProjection.CROWD_PROPORTION,
    HumanKind.VATEX_SCORE: HumanProjection.VATEX_SCORE,
    HumanKind.ACCR: HumanProjection.ACCR_MEAN,
}

_SCALAR_PROJECTION = {
    HumanProjection.EXPERT_MEAN: HumanKind.EXPERT_MEAN,
    HumanProjection.CROWD_PROPORTION: HumanKind.CROWD_PROPORTION,
    HumanProjection.VATEX_SCORE: HumanKind.VATEX_SCORE,
}


def project_human(human: HumanJudgment, projection: HumanProjection, record_id: str = "") -> list[float]:
    """Scalar(s) a judgment contributes under ``projection``.

    Returns one value, or one per annotator for ``RAW_JUDGMENTS``.
    """
    if projection is HumanProjection.AUTO:
        projection = _DEFAULT_PROJECTION[human.kind]
    if projection is HumanProjection.RAW_JUDGMENTS:
        if not human.raw:
            raise MissingColumn(record_id, "human.raw")
        if human.kind is HumanKind.ACCR:
            return [float(np.mean(r)) if isinstance(r, (list, tuple)) else float(r) for r in human.raw]
        return [float(r) for r in human.raw]
    if projection in _SCALAR_PROJECTION:
        if human.kind is not _SCALAR_PROJECTION[projection]:
            raise MissingColumn(record_id, f"human:{projection.value}")
        return [float(human.value)]  # type: ignore[arg-type]
    if human.kind is not HumanKind.ACCR:
        raise MissingColumn(record_id, f"human:{projection.value}")
    values = human.value  # type: ignore[assignment]
    if projection is HumanProjection.ACCR_MEAN:
        return [math.fsum(values) / 4]  # type: ignore[arg-type]
    return [values[ACCR_DIMENSIONS.index(projection.value)]]  # type: ignore[index]


@dataclass(frozen=True)
class CorrelationEntry:
    dataset: str
    metric: str
    tau_b: float
    tau_c: float
    n: int
    projection: str = HumanProjection.AUTO.value

    def __post_init__(self) -> None:
        for tau in (self.tau_b, self.tau_c):
            if abs(tau) > 1 + 1e-12:
                raise ValueError(f"|tau| > 1: {tau}")


def paired_vectors(
    records: Sequence[CorpusRecord],
    metric_column: str,
    projection: HumanProjection = HumanProjection.AUTO,
) -> tuple[list[float], list[float]]:
    metric: list[float] = []
    human: list[float] = []
    for rec in records:
        if metric_column not in rec.precomputed_metrics:
            raise MissingColumn(rec.id, metric_column)
        if rec.human is None:
            raise MissingColumn(rec.id, "human")
        value = float(rec.precomputed_metrics[metric_column])
        for h in project_human(rec.human, projection, rec.id):
            metric.append(value)
            human.append(h)
    return metric, human


def correlate_corpus(
    records: Sequence[CorpusRecord],
    metric_column: str,
    human_projection: HumanProjection = HumanProjection.AUTO,
    *,
    dataset: str = "",
) -> CorrelationEntry:
    metric, human = paired_vectors(records, metric_column, human_projection)
    return CorrelationEntry(
        dataset=dataset,
        metric=metric_column,
        tau_b=kendall_tau_b(metric, human),
        tau_c=kendall_tau_c(metric, human),
        n=len(metric),
        projection=human_projection.value,
    )
