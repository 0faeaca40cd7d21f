"""Test-side cohort builders and brute-force oracles.

The oracles deliberately avoid the library's vectorised code paths: they loop
over patients, eras, occurrences and days in plain Python.
"""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction

import numpy as np

from dpasignal.events import Cohort, ConditionOccurrence, DrugEra, PatientRecord, TimeAxis


def make_cohort(patients, axis=None, drug_universe=None, condition_universe=None) -> Cohort:
    """Build a cohort from ``(obs_start, obs_end, eras, conds)`` tuples.

    ``eras`` holds ``(drug, start, end)`` and ``conds`` holds ``(condition, day)``;
    both are sorted into canonical order.  Patient ids are 1, 2, ...
    """
    records = []
    for pid, (s, e, eras, conds) in enumerate(patients, start=1):
        records.append(PatientRecord(
            pid, s, e, 40, "F",
            tuple(DrugEra(*x) for x in sorted(eras)),
            tuple(ConditionOccurrence(*x) for x in sorted(conds))))
    return Cohort.from_records(records, axis or TimeAxis(), drug_universe, condition_universe)


def random_micro_cohort(rng: np.random.Generator, axis=None, max_patients=10, max_events=50,
                        n_drugs=4, n_conds=4, cluster=True) -> Cohort:
    """At most ``max_patients`` patients and ``max_events`` events in total.

    With ``cluster`` events bunch into a short stretch of days so that windowed
    pairs are common.
    """
    axis = axis or TimeAxis()
    H = axis.horizon_days
    n_p = int(rng.integers(1, max_patients + 1))
    budget = int(rng.integers(0, max_events + 1))
    split = rng.multinomial(budget, np.ones(n_p) / n_p)
    patients = []
    for n_ev in split:
        a, b = sorted(rng.integers(0, H + 1, size=2).tolist())
        if cluster and b - a > 120:
            a = int(rng.integers(a, b - 100))
            b = min(b, a + int(rng.integers(60, 400)))
        n_era = int(rng.integers(0, n_ev + 1))
        eras, conds = [], []
        for _ in range(n_era):
            s = int(rng.integers(a, b + 1))
            e = int(min(b, s + rng.integers(0, 400)))
            eras.append((int(rng.integers(1, n_drugs + 1)), s, e))
        for _ in range(n_ev - n_era):
            conds.append((int(rng.integers(1, n_conds + 1)), int(rng.integers(a, b + 1))))
        patients.append((a, b, eras, conds))
    return make_cohort(patients, axis, range(1, n_drugs + 1), range(1, n_conds + 1))


def _subinterval(day: int, m: int, horizon: int) -> int:
    """Largest i < m with i * horizon / m <= day, by exact rational comparison."""
    found = 0
    for i in range(m):
        if Fraction(i * horizon, m) <= day:
            found = i
    return found


def kernel_weight(lag, delta, w0=0.2, peak_start=6, peak_end=10) -> float:
    """Piecewise-linear kernel evaluated branch by branch."""
    if lag < 0 or lag > delta:
        return 0.0
    if lag < peak_start:
        return w0 + (1 - w0) * lag / peak_start
    if lag <= peak_end:
        return 1.0
    return (delta - lag) / (delta - peak_end)


def brute_force_count(cohort: Cohort, delta: int, m: int, weight=None,
                      first_era_only=False, keep_ids=None):
    """Quadruple loop over (patient, era, occurrence, subinterval).

    Returns dicts keyed by subinterval: pairs[(i, d, c)], n_d[(i, d)],
    n_c[(i, c)], h_d[(i, d)].
    """
    H = cohort.time_axis.horizon_days
    pairs = defaultdict(float)
    n_d, n_c, h_d = defaultdict(int), defaultdict(int), defaultdict(int)
    for p in cohort.patients:
        if keep_ids is not None and p.patient_id not in keep_ids:
            continue
        eras = list(p.drug_eras)
        if first_era_only:
            best = {}
            for e in eras:
                if e.drug_id not in best or e.start_day < best[e.drug_id].start_day:
                    best[e.drug_id] = e
            eras = list(best.values())
        for e in eras:
            i_start = _subinterval(e.start_day, m, H)
            n_d[(i_start, e.drug_id)] += 1
            for day in range(e.start_day, e.end_day + 1):
                h_d[(_subinterval(day, m, H), e.drug_id)] += 1
            for c in p.conditions:
                lag = c.start_day - e.start_day
                for i in range(m):
                    if i == i_start and 0 <= lag <= delta:
                        pairs[(i, e.drug_id, c.condition_id)] += (
                            1 if weight is None else weight(lag))
        for c in p.conditions:
            n_c[(_subinterval(c.start_day, m, H), c.condition_id)] += 1
    return pairs, n_d, n_c, h_d


def tables_as_dicts(tables):
    pairs = {(int(s), int(d), int(c)): v for s, d, c, v in zip(
        tables.pair_sub, tables.pair_drug, tables.pair_cond, tables.pair_value.tolist())}
    n_d = {(i, d): int(v) for (i, d), v in np.ndenumerate(tables.drug_counts) if v}
    n_c = {(i, c): int(v) for (i, c), v in np.ndenumerate(tables.cond_counts) if v}
    h_d = {(i, d): int(v) for (i, d), v in np.ndenumerate(tables.drug_durations) if v}
    return pairs, n_d, n_c, h_d


def textbook_ap(ranked_pairs, positives) -> float:
    """Walk the list once, summing precision at every positive."""
    hits = 0
    total = 0.0
    for rank, pair in enumerate(ranked_pairs, start=1):
        if pair in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)
