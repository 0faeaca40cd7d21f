"""Bagged ratings over random patient subsets and fusion of two estimators.

Replicate ``j`` of a bagging run includes a patient when a uniform draw keyed
by ``(seed, j, patient_id)`` falls at or below ``inclusion_prob``, and uses a
window width drawn uniformly from the integers ``[delta_min, delta_max]`` with
a stream keyed by ``(seed, j)``.  Replicates are therefore reproducible in
isolation and independent of how they are scheduled.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .counting import Kernel, UniformKernel, count
from .errors import ConfigError, ScopeMismatchError
from .events import Cohort
from .rating import RatingConfig, RatingMatrix, cumulate, rate

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class BagConfig:
    k: int = 100
    inclusion_prob: float = 0.65
    delta_min: int = 40
    delta_max: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0 < self.inclusion_prob <= 1:
            raise ConfigError(f"inclusion_prob must be in (0, 1], got {self.inclusion_prob}")
        if not 0 <= self.delta_min <= self.delta_max:
            raise ConfigError("need 0 <= delta_min <= delta_max")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class EnsembleConfig:
    tau: float = 0.3

    def __post_init__(self):
        # tau = 0 is accepted so that fusion can be checked against its fixed point
        if not 0 <= self.tau < 1:
            raise ConfigError(f"tau must be in [0, 1), got {self.tau}")


@dataclass(frozen=True)
class Replicate:
    j: int
    delta: int
    n_patients: int
    seconds: float


@dataclass
class BagResult:
    series: list[list[RatingMatrix]]
    """One list of yearly matrices per rating config."""
    replicates: list[Replicate] = field(default_factory=list)

    @property
    def k_effective(self) -> int:
        return sum(1 for r in self.replicates if r.n_patients > 0)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def inclusion_uniforms(seed: int, j: int, patient_ids: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws keyed by (seed, replicate, patient id)."""
    base = _splitmix64(_splitmix64(np.array([seed], dtype=np.uint64)) ^ np.uint64(j))
    z = _splitmix64(base ^ np.asarray(patient_ids).astype(np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 2 ** 53)


def replicate_delta(bag_config: BagConfig, j: int) -> int:
    rng = np.random.default_rng([bag_config.seed, j])
    return int(rng.integers(bag_config.delta_min, bag_config.delta_max + 1))


def replicate_mask(cohort: Cohort, bag_config: BagConfig, j: int) -> np.ndarray:
    return inclusion_uniforms(bag_config.seed, j, cohort.patient_ids) <= bag_config.inclusion_prob


# worker processes receive the shared arguments once
_SHARED: dict = {}


def _init_worker(shared: dict) -> None:
    _SHARED.clear()
    _SHARED.update(shared)


def _run_replicate(j: int, shared: dict | None = None):
    a = _SHARED if shared is None else shared
    cohort: Cohort = a["cohort"]
    bag_config: BagConfig = a["bag_config"]
    t0 = time.perf_counter()
    delta = replicate_delta(bag_config, j)
    mask = replicate_mask(cohort, bag_config, j)
    n_in = int(mask.sum())
    if n_in == 0:
        return Replicate(j, delta, 0, time.perf_counter() - t0), None
    kernel = a["kernel"].with_delta(delta) if a["kernel"] is not None else UniformKernel(delta)
    tables = count(cohort, delta, kernel, a["m"], a["first_era_only"], mask)
    out = []
    for cfg in a["rating_configs"]:
        yearly = [rate(tables, cfg, i, a["drug_scope"], a["condition_scope"])
                  for i in range(a["m"])]
        s = cumulate(yearly)
        out.append((np.stack([x.scores for x in s]), np.stack([x.present for x in s])))
    return Replicate(j, delta, n_in, time.perf_counter() - t0), out


def bag_many(cohort: Cohort, rating_configs: Sequence[RatingConfig], bag_config: BagConfig,
             m: int | None = None, kernel: Kernel | None = None, first_era_only: bool = False,
             drug_scope=None, condition_scope=None, workers: int = 1) -> BagResult:
    """Bagged cumulative ratings for several rating configs sharing the same replicates.

    Each replicate counts once and rates every config from the same tables.
    Replicates with an empty patient subset are skipped and the average is
    taken over the remaining ones.
    """
    m = cohort.time_axis.m if m is None else m
    if drug_scope is None:
        drug_scope = cohort.drug_universe
    if condition_scope is None:
        condition_scope = cohort.condition_universe
    drug_ids = np.unique(np.asarray(list(drug_scope), dtype=np.int64))
    cond_ids = np.unique(np.asarray(list(condition_scope), dtype=np.int64))
    shared = dict(cohort=cohort, bag_config=bag_config, kernel=kernel, m=m,
                  first_era_only=first_era_only, rating_configs=list(rating_configs),
                  drug_scope=drug_ids, condition_scope=cond_ids)
    js = range(1, bag_config.k + 1)

    acc: list | None = None
    reps: list[Replicate] = []

    def fold(result):
        nonlocal acc
        rep, out = result
        reps.append(rep)
        if out is None:
            return
        if acc is None:
            acc = [(s.copy(), p.copy()) for s, p in out]
        else:
            acc = [(sa + s, pa | p) for (sa, pa), (s, p) in zip(acc, out)]

    if workers > 1 and bag_config.k > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(shared,)) as pool:
            for result in pool.map(_run_replicate, js):
                fold(result)
    else:
        for j in js:
            fold(_run_replicate(j, shared))

    k_eff = sum(1 for r in reps if r.n_patients > 0)
    series = []
    for c in range(len(shared["rating_configs"])):
        if acc is None:
            series.append([RatingMatrix.empty(drug_ids, cond_ids, f"bagged-{y}")
                           for y in range(1, m + 1)])
            continue
        total, present = acc[c]
        series.append([RatingMatrix(drug_ids, cond_ids, total[y] / k_eff, present[y],
                                    f"bagged-{y + 1}") for y in range(m)])
    return BagResult(series, reps)


def bag(cohort: Cohort, rating_config: RatingConfig, bag_config: BagConfig,
        m: int | None = None, kernel: Kernel | None = None, first_era_only: bool = False,
        drug_scope=None, condition_scope=None, workers: int = 1) -> list[RatingMatrix]:
    """Yearly bagged ratings z_1..z_m for a single rating config."""
    return bag_many(cohort, [rating_config], bag_config, m, kernel, first_era_only,
                    drug_scope, condition_scope, workers).series[0]


# -- heterogeneous fusion -----------------------------------------------------------


def scale_adjust(source: RatingMatrix, target: RatingMatrix) -> RatingMatrix:
    """Map ``source`` onto the score distribution of ``target`` by rank.

    Both matrices are ranked over the union of their keys (missing keys score
    0, ties broken by key); the key at source rank t receives the score at
    target rank t.
    """
    if not source.same_scope(target):
        raise ScopeMismatchError("scale_adjust needs matrices over the same scopes")
    union = source.present | target.present
    idx = np.flatnonzero(union.ravel())
    src = source.scores.ravel()[idx]
    tgt = np.sort(target.scores.ravel()[idx])[::-1]
    order = np.lexsort((idx, -src))
    out = np.zeros(union.size)
    out[idx[order]] = tgt
    return RatingMatrix(source.drug_ids, source.condition_ids, out.reshape(union.shape),
                        union, source.period)


def fuse(dpa1: RatingMatrix, dpa2: RatingMatrix, config: EnsembleConfig) -> RatingMatrix:
    """tau * (dpa1 rescaled onto dpa2) + (1 - tau) * dpa2."""
    adjusted = scale_adjust(dpa1, dpa2)
    tau = config.tau
    scores = tau * adjusted.scores + (1.0 - tau) * dpa2.scores
    present = dpa2.present | adjusted.present if tau > 0 else dpa2.present
    return RatingMatrix(dpa2.drug_ids, dpa2.condition_ids, scores, present, dpa2.period)


def fuse_series(dpa1: Sequence[RatingMatrix], dpa2: Sequence[RatingMatrix],
                config: EnsembleConfig) -> list[RatingMatrix]:
    if len(dpa1) != len(dpa2):
        raise ScopeMismatchError(f"series lengths differ ({len(dpa1)} vs {len(dpa2)})")
    return [fuse(a, b, config) for a, b in zip(dpa1, dpa2)]
