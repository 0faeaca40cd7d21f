"""Average precision of ranked pair lists against labelled ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataValidationError
from .rating import RatingMatrix
from .synth import GroundTruth


@dataclass(frozen=True, eq=False)
class RankedList:
    """Pairs in descending score order, ties broken by ascending (drug, condition)."""

    drug_ids: np.ndarray
    condition_ids: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_matrix(cls, matrix: RatingMatrix) -> "RankedList":
        return cls(*matrix.ranking())

    @classmethod
    def from_entries(cls, entries) -> "RankedList":
        """Build from (drug, condition, score) triples in any order."""
        arr = np.array([(d, c) for d, c, _ in entries], dtype=np.int64).reshape(-1, 2)
        s = np.array([x for _, _, x in entries], dtype=np.float64)
        order = np.lexsort((arr[:, 1], arr[:, 0], -s))
        return cls(arr[order, 0], arr[order, 1], s[order])

    def __len__(self) -> int:
        return len(self.scores)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.drug_ids.tolist(), self.condition_ids.tolist()))


def hits(ranked: RankedList, truth: GroundTruth) -> np.ndarray:
    """Boolean relevance vector of the ranked list."""
    if not truth.positives or not len(ranked):
        return np.zeros(len(ranked), dtype=bool)
    pos = np.array(sorted(truth.positives), dtype=np.int64)
    width = int(max(pos[:, 1].max(), ranked.condition_ids.max())) + 1
    keys = ranked.drug_ids * width + ranked.condition_ids
    return np.isin(keys, pos[:, 0] * width + pos[:, 1])


def average_precision(ranked: RankedList, truth: GroundTruth) -> float:
    """Mean over all labelled positives of the precision at each positive's rank.

    Positives missing from the list contribute 0.  Labelled negatives and
    unlabelled pairs are both non-positive.
    """
    n_pos = len(truth.positives)
    if n_pos == 0:
        raise DataValidationError("average precision needs at least one positive pair")
    rel = hits(ranked, truth)
    ranks = np.flatnonzero(rel) + 1
    found = np.arange(1, len(ranks) + 1)
    # left-to-right float sum in rank order
    return sum((found / ranks).tolist()) / n_pos


def map_by_year(ratings: Sequence[RatingMatrix], truth: GroundTruth) -> tuple[list[float], float]:
    """Per-year average precision and its arithmetic mean."""
    if not ratings:
        raise DataValidationError("no yearly matrices to evaluate")
    per_year = [average_precision(RankedList.from_matrix(r), truth) for r in ratings]
    return per_year, float(np.mean(per_year))


def write_report(per_year: Sequence[float], mean: float, path) -> None:
    rows = [(str(y), ap) for y, ap in enumerate(per_year, start=1)] + [("mean", mean)]
    pd.DataFrame(rows, columns=["year", "ap"]).to_csv(
        path, index=False, float_format="%.6f", lineterminator="\n")
