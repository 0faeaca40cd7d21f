"""Observed-versus-expected ratings of drug/condition pairs.

Two exposure models give the expected pair count under independence:

* ``occurrence``: b = (n_d / N) * n_c, with n_d the number of era starts of d;
* ``duration``:   b = (h_d / H) * n_c, with h_d the era-days of d.

The rating is f((n_dc + alpha) / (b_dc + alpha)) with f the natural log or a
power function.  Ratings of later years are averaged cumulatively.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .counting import CountTables
from .errors import ConfigError, DataValidationError, NoExposureError, ScopeMismatchError

EXPOSURE_MODELS = ("occurrence", "duration")
TRANSFORMS = ("log", "power")


@dataclass(frozen=True)
class RatingConfig:
    alpha: float = 0.3
    transform: str = "log"
    power: float = 0.5
    exposure_model: str = "occurrence"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        if self.transform == "power" and not self.power > 0:
            raise ConfigError(f"power exponent must be > 0, got {self.power}")
        if self.exposure_model not in EXPOSURE_MODELS:
            raise ConfigError(
                f"exposure_model must be one of {EXPOSURE_MODELS}, got {self.exposure_model!r}")


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Drug x condition scores over fixed id scopes.

    Stored densely; ``present`` marks the keys of the sparse map.  Absent keys
    mean "no evidence", hold score 0 and are left out of rankings.
    """

    drug_ids: np.ndarray
    condition_ids: np.ndarray
    scores: np.ndarray
    present: np.ndarray
    period: str = ""

    def __post_init__(self):
        d = np.asarray(self.drug_ids, dtype=np.int64)
        c = np.asarray(self.condition_ids, dtype=np.int64)
        if (np.diff(d) <= 0).any() or (np.diff(c) <= 0).any():
            raise ValueError("scope ids must be strictly increasing")
        present = np.asarray(self.present, dtype=bool)
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(d), len(c)) or present.shape != scores.shape:
            raise ValueError("scores/present shape does not match the scopes")
        scores = np.where(present, scores, 0.0)
        for name, val in (("drug_ids", d), ("condition_ids", c),
                          ("scores", scores), ("present", present)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def empty(cls, drug_ids, condition_ids, period: str = "") -> "RatingMatrix":
        shape = (len(drug_ids), len(condition_ids))
        return cls(drug_ids, condition_ids, np.zeros(shape), np.zeros(shape, dtype=bool), period)

    @classmethod
    def from_dict(cls, scores: dict, drug_ids=None, condition_ids=None,
                  period: str = "") -> "RatingMatrix":
        keys = list(scores)
        if drug_ids is None:
            drug_ids = sorted({d for d, _ in keys})
        if condition_ids is None:
            condition_ids = sorted({c for _, c in keys})
        drug_ids = np.asarray(drug_ids, dtype=np.int64)
        condition_ids = np.asarray(condition_ids, dtype=np.int64)
        s = np.zeros((len(drug_ids), len(condition_ids)))
        p = np.zeros(s.shape, dtype=bool)
        if keys:
            k = np.array(keys, dtype=np.int64).reshape(-1, 2)
            r, c = _positions(drug_ids, k[:, 0]), _positions(condition_ids, k[:, 1])
            if (r < 0).any() or (c < 0).any():
                raise ScopeMismatchError("score keys fall outside the given scopes")
            s[r, c] = list(scores.values())
            p[r, c] = True
        return cls(drug_ids, condition_ids, s, p, period)

    def to_dict(self) -> dict[tuple[int, int], float]:
        r, c = np.nonzero(self.present)
        return dict(zip(zip(self.drug_ids[r].tolist(), self.condition_ids[c].tolist()),
                        self.scores[r, c].tolist()))

    def get(self, d: int, c: int, default=None):
        r = _positions(self.drug_ids, np.array([d]))[0]
        k = _positions(self.condition_ids, np.array([c]))[0]
        if r < 0 or k < 0 or not self.present[r, k]:
            return default
        return float(self.scores[r, k])

    def __len__(self) -> int:
        return int(self.present.sum())

    def same_scope(self, other: "RatingMatrix") -> bool:
        return (np.array_equal(self.drug_ids, other.drug_ids)
                and np.array_equal(self.condition_ids, other.condition_ids))

    def with_period(self, period: str) -> "RatingMatrix":
        return RatingMatrix(self.drug_ids, self.condition_ids, self.scores, self.present, period)

    def ranking(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Present entries as (drug, condition, score), best first, ties by key."""
        r, c = np.nonzero(self.present)
        s = self.scores[r, c]
        order = np.lexsort((c, r, -s))
        return self.drug_ids[r[order]], self.condition_ids[c[order]], s[order]


def _positions(scope: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Index of each id within a sorted scope, -1 when missing."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(scope) == 0:
        return np.full(len(ids), -1)
    pos = np.searchsorted(scope, ids).clip(0, len(scope) - 1)
    return np.where(scope[pos] == ids, pos, -1)


def check_scopes(matrices: Sequence[RatingMatrix]) -> None:
    for mat in matrices[1:]:
        if not mat.same_scope(matrices[0]):
            raise ScopeMismatchError("rating matrices have different drug/condition scopes")


# -- expected counts and scores ----------------------------------------------------


def _exposure(tables: CountTables, i: int, model: str) -> tuple[np.ndarray, int]:
    if model == "occurrence":
        row = tables.drug_counts[i]
    elif model == "duration":
        row = tables.drug_durations[i]
    else:
        raise ConfigError(f"unknown exposure model {model!r}")
    return row, int(row.sum())


def expected_count(tables: CountTables, i: int, d: int, c: int, model: str) -> float:
    """Expected pair count for (d, c) in subinterval ``i`` under independence."""
    row, total = _exposure(tables, i, model)
    if total == 0:
        raise NoExposureError(f"subinterval {i} has zero total {model} exposure")
    n_d = int(row[d]) if 0 <= d < len(row) else 0
    return (n_d / total) * tables.n_c(i, c)


def expected_matrix(tables: CountTables, i: int, model: str,
                    drug_ids: np.ndarray, condition_ids: np.ndarray) -> np.ndarray:
    """Vectorised :func:`expected_count` over a scope (same arithmetic)."""
    row, total = _exposure(tables, i, model)
    if total == 0:
        raise NoExposureError(f"subinterval {i} has zero total {model} exposure")
    share = np.zeros(len(drug_ids))
    ok = drug_ids < len(row)
    share[ok] = row[drug_ids[ok]] / total
    cc = tables.cond_counts[i]
    n_c = np.zeros(len(condition_ids), dtype=np.int64)
    ok = condition_ids < len(cc)
    n_c[ok] = cc[condition_ids[ok]]
    return share[:, None] * n_c[None, :]


def shrunk_score(n_dc, b_dc, alpha: float, transform: str = "log", power: float = 0.5):
    """f((n_dc + alpha) / (b_dc + alpha)) for f = natural log or x ** power."""
    ratio = (np.asarray(n_dc, dtype=np.float64) + alpha) / (np.asarray(b_dc, dtype=np.float64) + alpha)
    if transform == "log":
        return np.log(ratio)
    return ratio ** power


def default_scopes(tables: CountTables) -> tuple[np.ndarray, np.ndarray]:
    return (np.arange(1, tables.drug_counts.shape[1], dtype=np.int64),
            np.arange(1, tables.cond_counts.shape[1], dtype=np.int64))


def rate(tables: CountTables, config: RatingConfig, i: int,
         drug_scope: Iterable[int] | None = None,
         condition_scope: Iterable[int] | None = None) -> RatingMatrix:
    """Rating matrix for subinterval ``i``.

    Keys with an observed or an expected count are present.  A subinterval
    with no exposure at all yields an empty matrix.
    """
    dd, cc = default_scopes(tables)
    drug_ids = dd if drug_scope is None else np.unique(np.asarray(list(drug_scope), dtype=np.int64))
    cond_ids = cc if condition_scope is None else np.unique(
        np.asarray(list(condition_scope), dtype=np.int64))
    period = f"year-{i + 1}"
    if _exposure(tables, i, config.exposure_model)[1] == 0:
        return RatingMatrix.empty(drug_ids, cond_ids, period)

    b = expected_matrix(tables, i, config.exposure_model, drug_ids, cond_ids)
    n = np.zeros(b.shape, dtype=tables.pair_value.dtype)
    pd_, pc, pv = tables.subinterval_pairs(i)
    r, c = _positions(drug_ids, pd_), _positions(cond_ids, pc)
    keep = (r >= 0) & (c >= 0)
    n[r[keep], c[keep]] = pv[keep]
    present = (n > 0) | (b > 0)
    scores = shrunk_score(n, b, config.alpha, config.transform, config.power)
    return RatingMatrix(drug_ids, cond_ids, scores, present, period)


def rate_all(tables: CountTables, config: RatingConfig, drug_scope=None,
             condition_scope=None) -> list[RatingMatrix]:
    return [rate(tables, config, i, drug_scope, condition_scope) for i in range(tables.m)]


def cumulate(ratings: Sequence[RatingMatrix]) -> list[RatingMatrix]:
    """Running mean over years: s_y = (r_1 + ... + r_y) / y, absent keys as 0."""
    if not ratings:
        raise ConfigError("cumulate needs at least one rating matrix")
    check_scopes(ratings)
    out = []
    total = ratings[0].scores.copy()
    present = ratings[0].present.copy()
    for y, r in enumerate(ratings, start=1):
        if y > 1:
            total = total + r.scores
            present = present | r.present
        out.append(RatingMatrix(r.drug_ids, r.condition_ids, total / y, present,
                                f"cumulative-{y}"))
    return out


# -- CSV exchange ---------------------------------------------------------------------


def _fmt_scores(x: np.ndarray) -> np.ndarray:
    # rounding first keeps sort order and printed text consistent; + 0.0 clears -0.0
    return np.round(x, 6) + 0.0


def write_matrix(matrix: RatingMatrix, path) -> None:
    """Single matrix as drug_id,condition_id,score sorted by descending score."""
    r, c = np.nonzero(matrix.present)
    s = _fmt_scores(matrix.scores[r, c])
    order = np.lexsort((c, r, -s))
    pd.DataFrame({
        "drug_id": matrix.drug_ids[r[order]],
        "condition_id": matrix.condition_ids[c[order]],
        "score": s[order],
    }).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def write_series(matrices: Sequence[RatingMatrix], path, dense: bool = False) -> int:
    """Year series in submission format ``year,drug_id,condition_id,score``.

    Rows are sorted by (year, descending score, drug_id, condition_id).  With
    ``dense`` every scope pair is emitted, absent ones with score 0.  Returns
    the number of rows written.
    """
    frames = []
    for y, mat in enumerate(matrices, start=1):
        mask = np.ones_like(mat.present) if dense else mat.present
        r, c = np.nonzero(mask)
        s = _fmt_scores(mat.scores[r, c])
        order = np.lexsort((c, r, -s))
        frames.append(pd.DataFrame({
            "year": np.full(len(r), y, dtype=np.int64),
            "drug_id": mat.drug_ids[r[order]],
            "condition_id": mat.condition_ids[c[order]],
            "score": s[order],
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["year", "drug_id", "condition_id", "score"])
    df.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    return len(df)


def read_series(path, drug_ids=None, condition_ids=None) -> list[RatingMatrix]:
    """Inverse of :func:`write_series`; every row read becomes a present key."""
    try:
        df = pd.read_csv(path, dtype={"year": np.int64, "drug_id": np.int64,
                                      "condition_id": np.int64, "score": np.float64})
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataValidationError(f"{path}: unreadable score file ({exc})") from None
    if list(df.columns) != ["year", "drug_id", "condition_id", "score"]:
        raise DataValidationError(f"{path}: header must be year,drug_id,condition_id,score")
    drug_ids = np.unique(df["drug_id"]) if drug_ids is None else np.asarray(drug_ids)
    condition_ids = (np.unique(df["condition_id"]) if condition_ids is None
                     else np.asarray(condition_ids))
    m = int(df["year"].max()) if len(df) else 0
    out = []
    for y in range(1, m + 1):
        part = df[df["year"] == y]
        scores = dict(zip(zip(part["drug_id"].tolist(), part["condition_id"].tolist()),
                          part["score"].tolist()))
        out.append(RatingMatrix.from_dict(scores, drug_ids, condition_ids, f"year-{y}"))
    return out
