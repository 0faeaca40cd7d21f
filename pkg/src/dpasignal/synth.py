"""Synthetic longitudinal cohorts with injected drug -> condition effects.

Background drug eras and condition occurrences are homogeneous Poisson
processes over each patient's observation window, so under the null every
drug/condition pair is independent.  A set of spiked pairs is then laid on
top: each era start of a spiked drug triggers, with ``effect_prob``, one
occurrence of the paired condition after a uniform integer lag.

Every patient draws from its own stream seeded by ``(seed, patient_id)``; the
spiked/negative pair sampling uses a separate stream seeded by ``seed`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataValidationError
from .events import TRUTH_COLUMNS, Cohort, TimeAxis, write_tables

_PATIENT_STREAM = 1
_TRUTH_STREAM = 0


@dataclass(frozen=True)
class GenConfig:
    n_patients: int = 5000
    n_drugs: int = 50
    n_conditions: int = 40
    years: int = 10
    drug_rate: float = 2.0
    cond_rate: float = 5.0
    era_length_days: float = 30.0
    n_spiked: int = 10
    effect_prob: float = 0.5
    lag_min_days: int = 3
    lag_max_days: int = 20
    seed: int = 0
    year_length_days: int = 365

    def __post_init__(self):
        if not 0 < self.effect_prob <= 1:
            raise ConfigError(f"effect_prob must be in (0, 1], got {self.effect_prob}")
        if not 0 <= self.lag_min_days <= self.lag_max_days:
            raise ConfigError("need 0 <= lag_min_days <= lag_max_days")
        if self.n_patients < 0 or self.n_drugs < 1 or self.n_conditions < 1 or self.years < 1:
            raise ConfigError("n_patients >= 0, n_drugs >= 1, n_conditions >= 1, years >= 1")
        if not 0 <= self.n_spiked <= self.n_drugs * self.n_conditions:
            raise ConfigError("n_spiked must lie in [0, n_drugs * n_conditions]")
        if self.drug_rate < 0 or self.cond_rate < 0 or self.era_length_days < 1:
            raise ConfigError("rates must be >= 0 and era_length_days >= 1")

    @property
    def time_axis(self) -> TimeAxis:
        return TimeAxis(horizon_days=self.years * self.year_length_days,
                        year_length_days=self.year_length_days)


@dataclass(frozen=True)
class GroundTruth:
    positives: frozenset = frozenset()
    negatives: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(map(tuple, self.positives)))
        object.__setattr__(self, "negatives", frozenset(map(tuple, self.negatives)))
        if self.positives & self.negatives:
            raise DataValidationError("pairs labelled both positive and negative",
                                      [str(p) for p in sorted(self.positives & self.negatives)])


@dataclass
class Simulation:
    cohort: Cohort
    truth: GroundTruth
    injected: dict = field(default_factory=dict)
    """Injected occurrence count per spiked pair."""

    @property
    def n_injected(self) -> int:
        return int(sum(self.injected.values()))


def sample_truth(config: GenConfig) -> GroundTruth:
    """Draw the spiked pairs and an equally sized disjoint set of negatives."""
    rng = np.random.default_rng([config.seed, _TRUTH_STREAM])
    n_pairs = config.n_drugs * config.n_conditions
    k = config.n_spiked
    neg = min(k, n_pairs - k)
    picks = rng.choice(n_pairs, size=k + neg, replace=False)
    to_pair = lambda x: (int(x // config.n_conditions) + 1, int(x % config.n_conditions) + 1)
    return GroundTruth(positives={to_pair(x) for x in picks[:k]},
                       negatives={to_pair(x) for x in picks[k:]})


def spike_conditions(rng: np.random.Generator, era_drug: np.ndarray, era_start: np.ndarray,
                     obs_end: int, spiked: dict[int, list[int]], effect_prob: float,
                     lag_min: int, lag_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Injected occurrences for one patient as (trigger drug, condition_id, day).

    ``spiked`` maps a drug id to its paired condition ids.  Occurrences that
    would fall after ``obs_end`` are dropped.
    """
    rows = []
    for d, s in zip(era_drug.tolist(), era_start.tolist()):
        for c in spiked.get(d, ()):
            if rng.random() < effect_prob:
                day = s + int(rng.integers(lag_min, lag_max + 1))
                if day <= obs_end:
                    rows.append((d, c, day))
    out = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return out[:, 0], out[:, 1], out[:, 2]


def _simulate_patient(config: GenConfig, pid: int, horizon: int,
                      spiked: dict[int, list[int]]):
    rng = np.random.default_rng([config.seed, _PATIENT_STREAM, pid])
    a, b = rng.integers(0, horizon + 1, size=2)
    obs_start, obs_end = int(min(a, b)), int(max(a, b))
    age = int(rng.integers(0, 90))
    sex = "FM"[int(rng.integers(0, 2))]
    span_years = (obs_end - obs_start + 1) / config.year_length_days

    n_e = rng.poisson(config.drug_rate * span_years)
    drugs = rng.integers(1, config.n_drugs + 1, size=n_e)
    starts = rng.integers(obs_start, obs_end + 1, size=n_e)
    lengths = rng.geometric(1.0 / config.era_length_days, size=n_e)
    ends = np.minimum(starts + lengths - 1, obs_end)

    n_c = rng.poisson(config.cond_rate * span_years)
    conds = rng.integers(1, config.n_conditions + 1, size=n_c)
    cstarts = rng.integers(obs_start, obs_end + 1, size=n_c)

    inj_d, inj_c, inj_day = spike_conditions(rng, drugs, starts, obs_end, spiked,
                                             config.effect_prob, config.lag_min_days,
                                             config.lag_max_days)
    return (obs_start, obs_end, age, sex, drugs, starts, ends,
            np.concatenate([conds, inj_c]), np.concatenate([cstarts, inj_day]),
            list(zip(inj_d.tolist(), inj_c.tolist())))


def simulate(config: GenConfig) -> Simulation:
    """Generate a cohort, its ground truth and the per-pair injection tally."""
    truth = sample_truth(config)
    spiked: dict[int, list[int]] = {}
    for d, c in sorted(truth.positives):
        spiked.setdefault(d, []).append(c)
    axis = config.time_axis
    n = config.n_patients

    obs = np.zeros((n, 3), dtype=np.int64)
    sex = np.empty(n, dtype="<U1")
    era_parts, cond_parts = [], []
    injected: dict = {p: 0 for p in truth.positives}
    for i in range(n):
        (s, e, age, sx, drugs, starts, ends, conds, cstarts,
         hits) = _simulate_patient(config, i + 1, axis.horizon_days, spiked)
        obs[i] = (s, e, age)
        sex[i] = sx
        era_parts.append(np.column_stack([np.full(len(drugs), i), drugs, starts, ends]))
        cond_parts.append(np.column_stack([np.full(len(conds), i), conds, cstarts]))
        for pair in hits:
            injected[pair] += 1
    eras = np.concatenate(era_parts) if era_parts else np.zeros((0, 4), dtype=np.int64)
    conds = np.concatenate(cond_parts) if cond_parts else np.zeros((0, 3), dtype=np.int64)
    eo = np.lexsort((eras[:, 3], eras[:, 2], eras[:, 1], eras[:, 0]))
    co = np.lexsort((conds[:, 2], conds[:, 1], conds[:, 0]))
    eras, conds = eras[eo], conds[co]
    cohort = Cohort(
        patient_ids=np.arange(1, n + 1), obs_start=obs[:, 0], obs_end=obs[:, 1],
        age_years=obs[:, 2], sex=sex,
        era_patient=eras[:, 0], era_drug=eras[:, 1], era_start=eras[:, 2], era_end=eras[:, 3],
        cond_patient=conds[:, 0], cond_id=conds[:, 1], cond_start=conds[:, 2],
        drug_universe=np.arange(1, config.n_drugs + 1),
        condition_universe=np.arange(1, config.n_conditions + 1),
        time_axis=axis,
    )
    return Simulation(cohort, truth, injected)


def generate(config: GenConfig) -> tuple[Cohort, GroundTruth]:
    sim = simulate(config)
    return sim.cohort, sim.truth


# -- truth file ---------------------------------------------------------------


def write_truth(truth: GroundTruth, path) -> None:
    rows = [(d, c, 1) for d, c in sorted(truth.positives)]
    rows += [(d, c, 0) for d, c in sorted(truth.negatives)]
    pd.DataFrame(rows, columns=TRUTH_COLUMNS).to_csv(path, index=False, lineterminator="\n")


def load_truth(path) -> GroundTruth:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataValidationError(f"truth: unreadable ({exc})") from None
    if list(df.columns) != TRUTH_COLUMNS:
        raise DataValidationError(f"truth: header must be {','.join(TRUTH_COLUMNS)}")
    problems = []
    pos, neg = set(), set()
    for i, (d, c, lab) in enumerate(df.itertuples(index=False)):
        try:
            key, lab = (int(d), int(c)), int(lab)
        except ValueError:
            problems.append(f"truth line {i + 2}: non-integer field")
            continue
        if lab not in (0, 1):
            problems.append(f"truth line {i + 2}: label {lab} not in {{0, 1}}")
        (pos if lab == 1 else neg).add(key)
    if problems:
        raise DataValidationError("truth: malformed rows", problems)
    return GroundTruth(pos, neg)


def write_cohort(cohort: Cohort, truth: GroundTruth, out_dir) -> None:
    """Write the cohort CSVs plus truth.csv into ``out_dir``."""
    out = Path(out_dir)
    write_tables(cohort, out)
    write_truth(truth, out / "truth.csv")
