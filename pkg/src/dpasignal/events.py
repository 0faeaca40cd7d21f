"""In-memory model of longitudinal patient event data and its CSV formats.

A :class:`Cohort` is stored column-wise: one set of numpy arrays for the
patients, one for the drug eras and one for the condition occurrences.  Event
rows point at their patient through a row index into the patient arrays.
:class:`PatientRecord` objects are materialised on demand for inspection and
tests; the counting code only ever touches the arrays.

All days are integer offsets from day 0 of the first observation year.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataValidationError

SEXES = ("F", "M", "U")

PATIENT_COLUMNS = ["patient_id", "obs_start", "obs_end", "age_years", "sex"]
ERA_COLUMNS = ["patient_id", "drug_id", "start_day", "end_day"]
CONDITION_COLUMNS = ["patient_id", "condition_id", "start_day"]
TRUTH_COLUMNS = ["drug_id", "condition_id", "label"]


@dataclass(frozen=True)
class TimeAxis:
    epoch_day: int = 0
    horizon_days: int = 3650
    year_length_days: int = 365

    def __post_init__(self):
        if self.horizon_days <= 0 or self.year_length_days <= 0:
            raise ValueError("horizon_days and year_length_days must be positive")
        if self.horizon_days % self.year_length_days:
            raise ValueError("horizon_days must be a whole number of years")

    @property
    def m(self) -> int:
        """Number of year-long subintervals covering the horizon."""
        return self.horizon_days // self.year_length_days

    def year_of(self, day):
        """Zero-based year index; the closing horizon day folds into the last year."""
        return np.minimum(np.asarray(day) // self.year_length_days, self.m - 1)

    def subinterval_of(self, day, m: int):
        """Index of the subinterval holding ``day`` when the horizon is cut into ``m`` parts."""
        day = np.asarray(day, dtype=np.int64)
        return np.minimum(day * m // self.horizon_days, m - 1)

    def subinterval_starts(self, m: int) -> np.ndarray:
        """First day of each of the ``m`` subintervals (length ``m``)."""
        i = np.arange(m, dtype=np.int64)
        return -((-i * self.horizon_days) // m)


@dataclass(frozen=True)
class DrugEra:
    drug_id: int
    start_day: int
    end_day: int


@dataclass(frozen=True)
class ConditionOccurrence:
    condition_id: int
    start_day: int


@dataclass(frozen=True)
class PatientRecord:
    patient_id: int
    obs_start: int
    obs_end: int
    age_years: int = 0
    sex: str = "U"
    drug_eras: tuple[DrugEra, ...] = ()
    conditions: tuple[ConditionOccurrence, ...] = ()


def _i64(values) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Cohort:
    """Column-oriented cohort.

    ``era_patient`` and ``cond_patient`` are row indices into the patient
    arrays, not patient ids.  Arrays are treated as immutable once the cohort
    is built.
    """

    patient_ids: np.ndarray
    obs_start: np.ndarray
    obs_end: np.ndarray
    age_years: np.ndarray
    sex: np.ndarray
    era_patient: np.ndarray
    era_drug: np.ndarray
    era_start: np.ndarray
    era_end: np.ndarray
    cond_patient: np.ndarray
    cond_id: np.ndarray
    cond_start: np.ndarray
    drug_universe: np.ndarray
    condition_universe: np.ndarray
    time_axis: TimeAxis = field(default_factory=TimeAxis)

    def __post_init__(self):
        for name in (
            "patient_ids", "obs_start", "obs_end", "age_years",
            "era_patient", "era_drug", "era_start", "era_end",
            "cond_patient", "cond_id", "cond_start",
        ):
            arr = _i64(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        sex = np.asarray(self.sex, dtype="<U1")
        sex.setflags(write=False)
        object.__setattr__(self, "sex", sex)
        for name in ("drug_universe", "condition_universe"):
            arr = np.unique(_i64(getattr(self, name)))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(
        cls,
        records: Iterable[PatientRecord],
        time_axis: TimeAxis | None = None,
        drug_universe: Iterable[int] | None = None,
        condition_universe: Iterable[int] | None = None,
    ) -> "Cohort":
        """Build a cohort from patient records, keeping event order as given.

        Universes default to the ids referenced by the events.
        """
        records = list(records)
        era_rows = [(i, e.drug_id, e.start_day, e.end_day)
                    for i, r in enumerate(records) for e in r.drug_eras]
        cond_rows = [(i, c.condition_id, c.start_day)
                     for i, r in enumerate(records) for c in r.conditions]
        eras = np.array(era_rows, dtype=np.int64).reshape(-1, 4)
        conds = np.array(cond_rows, dtype=np.int64).reshape(-1, 3)
        if drug_universe is None:
            drug_universe = eras[:, 1]
        if condition_universe is None:
            condition_universe = conds[:, 1]
        return cls(
            patient_ids=[r.patient_id for r in records],
            obs_start=[r.obs_start for r in records],
            obs_end=[r.obs_end for r in records],
            age_years=[r.age_years for r in records],
            sex=[r.sex for r in records] or np.empty(0, dtype="<U1"),
            era_patient=eras[:, 0], era_drug=eras[:, 1],
            era_start=eras[:, 2], era_end=eras[:, 3],
            cond_patient=conds[:, 0], cond_id=conds[:, 1], cond_start=conds[:, 2],
            drug_universe=list(drug_universe),
            condition_universe=list(condition_universe),
            time_axis=time_axis or TimeAxis(),
        )

    # -- views ------------------------------------------------------------

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    @property
    def n_eras(self) -> int:
        return len(self.era_drug)

    @property
    def n_conditions(self) -> int:
        return len(self.cond_id)

    @cached_property
    def patients(self) -> list[PatientRecord]:
        eras = [[] for _ in range(self.n_patients)]
        for p, d, s, e in zip(self.era_patient.tolist(), self.era_drug.tolist(),
                              self.era_start.tolist(), self.era_end.tolist()):
            eras[p].append(DrugEra(d, s, e))
        conds = [[] for _ in range(self.n_patients)]
        for p, c, s in zip(self.cond_patient.tolist(), self.cond_id.tolist(),
                           self.cond_start.tolist()):
            conds[p].append(ConditionOccurrence(c, s))
        return [
            PatientRecord(pid, a, b, age, str(sex), tuple(eras[i]), tuple(conds[i]))
            for i, (pid, a, b, age, sex) in enumerate(zip(
                self.patient_ids.tolist(), self.obs_start.tolist(),
                self.obs_end.tolist(), self.age_years.tolist(), self.sex.tolist()))
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        if self.time_axis != other.time_axis:
            return False
        names = (
            "patient_ids", "obs_start", "obs_end", "age_years", "sex",
            "era_patient", "era_drug", "era_start", "era_end",
            "cond_patient", "cond_id", "cond_start",
            "drug_universe", "condition_universe",
        )
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)

    __hash__ = None

    def subset_events(self, era_mask: np.ndarray | None = None,
                      cond_mask: np.ndarray | None = None) -> "Cohort":
        """Copy of the cohort keeping only the selected event rows."""
        kw = {n: getattr(self, n) for n in self.__dataclass_fields__}
        if era_mask is not None:
            for n in ("era_patient", "era_drug", "era_start", "era_end"):
                kw[n] = kw[n][era_mask]
        if cond_mask is not None:
            for n in ("cond_patient", "cond_id", "cond_start"):
                kw[n] = kw[n][cond_mask]
        return Cohort(**kw)


def first_era_mask(era_patient: np.ndarray, era_drug: np.ndarray,
                   era_start: np.ndarray) -> np.ndarray:
    """Boolean mask selecting, per (patient, drug), the era with the earliest start."""
    n = len(era_drug)
    if n == 0:
        return np.zeros(0, dtype=bool)
    order = np.lexsort((era_start, era_drug, era_patient))
    p, d = era_patient[order], era_drug[order]
    head = np.ones(n, dtype=bool)
    head[1:] = (p[1:] != p[:-1]) | (d[1:] != d[:-1])
    mask = np.zeros(n, dtype=bool)
    mask[order[head]] = True
    return mask


def first_eras_only(cohort: Cohort) -> Cohort:
    """Keep only the earliest era of each drug for each patient."""
    return cohort.subset_events(
        era_mask=first_era_mask(cohort.era_patient, cohort.era_drug, cohort.era_start))


# -- validation ------------------------------------------------------------


@dataclass
class ValidationReport:
    n_patients: int
    n_eras: int
    n_conditions: int
    min_day: int | None
    max_day: int | None
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _unsorted_patients(patient: np.ndarray, key1: np.ndarray, key2: np.ndarray) -> np.ndarray:
    if len(patient) < 2:
        return np.zeros(0, dtype=np.int64)
    same = patient[1:] == patient[:-1]
    back = (key1[1:] < key1[:-1]) | ((key1[1:] == key1[:-1]) & (key2[1:] < key2[:-1]))
    split = patient[1:] < patient[:-1]
    return np.unique(np.concatenate([patient[1:][same & back], patient[1:][split]]))


def validate(cohort: Cohort) -> ValidationReport:
    """Check every cohort invariant and report violations as data."""
    c = cohort
    horizon = c.time_axis.horizon_days
    v: list[str] = []
    pid = c.patient_ids

    uniq, counts = np.unique(pid, return_counts=True)
    for p in uniq[counts > 1]:
        v.append(f"duplicate patient_id {p}")
    for i in np.flatnonzero(c.obs_start > c.obs_end):
        v.append(f"patient {pid[i]}: obs_start {c.obs_start[i]} > obs_end {c.obs_end[i]}")
    bad = (c.obs_start < 0) | (c.obs_end > horizon) | (c.obs_start > horizon) | (c.obs_end < 0)
    for i in np.flatnonzero(bad):
        v.append(f"patient {pid[i]}: observation [{c.obs_start[i]}, {c.obs_end[i]}] "
                 f"outside [0, {horizon}]")
    bad_sex = ~np.isin(c.sex, SEXES)
    for i in np.flatnonzero(bad_sex):
        v.append(f"patient {pid[i]}: unknown sex code {c.sex[i]!r}")

    n_p = c.n_patients
    bad_ref = (c.era_patient < 0) | (c.era_patient >= n_p)
    for i in np.flatnonzero(bad_ref):
        v.append(f"era row {i}: dangling patient index {c.era_patient[i]}")
    ok = ~bad_ref
    ep = c.era_patient.clip(0, max(n_p - 1, 0))
    if n_p:
        lo, hi = c.obs_start[ep], c.obs_end[ep]
        for i in np.flatnonzero(ok & (c.era_start > c.era_end)):
            v.append(f"patient {pid[ep[i]]}: era of drug {c.era_drug[i]} "
                     f"start {c.era_start[i]} > end {c.era_end[i]}")
        for i in np.flatnonzero(ok & ((c.era_start < lo) | (c.era_end > hi))):
            v.append(f"patient {pid[ep[i]]}: era of drug {c.era_drug[i]} "
                     f"[{c.era_start[i]}, {c.era_end[i]}] outside observation [{lo[i]}, {hi[i]}]")
    for i in np.flatnonzero((c.era_start < 0) | (c.era_end > horizon)):
        v.append(f"era row {i} (drug {c.era_drug[i]}): day outside [0, {horizon}]")
    for d in np.unique(c.era_drug[~np.isin(c.era_drug, c.drug_universe)]):
        v.append(f"drug_id {d} not in drug universe")

    bad_ref = (c.cond_patient < 0) | (c.cond_patient >= n_p)
    for i in np.flatnonzero(bad_ref):
        v.append(f"condition row {i}: dangling patient index {c.cond_patient[i]}")
    ok = ~bad_ref
    cp = c.cond_patient.clip(0, max(n_p - 1, 0))
    if n_p:
        lo, hi = c.obs_start[cp], c.obs_end[cp]
        for i in np.flatnonzero(ok & ((c.cond_start < lo) | (c.cond_start > hi))):
            v.append(f"patient {pid[cp[i]]}: condition {c.cond_id[i]} at day {c.cond_start[i]} "
                     f"outside observation [{lo[i]}, {hi[i]}]")
    for i in np.flatnonzero((c.cond_start < 0) | (c.cond_start > horizon)):
        v.append(f"condition row {i} (condition {c.cond_id[i]}): day {c.cond_start[i]} "
                 f"outside [0, {horizon}]")
    for k in np.unique(c.cond_id[~np.isin(c.cond_id, c.condition_universe)]):
        v.append(f"condition_id {k} not in condition universe")

    for p in _unsorted_patients(c.era_patient, c.era_drug, c.era_start):
        v.append(f"patient {pid[p]}: drug eras not sorted by (drug_id, start_day)")
    for p in _unsorted_patients(c.cond_patient, c.cond_id, c.cond_start):
        v.append(f"patient {pid[p]}: conditions not sorted by (condition_id, start_day)")

    days = np.concatenate([c.obs_start, c.obs_end, c.era_start, c.era_end, c.cond_start])
    return ValidationReport(
        n_patients=n_p,
        n_eras=c.n_eras,
        n_conditions=c.n_conditions,
        min_day=int(days.min()) if len(days) else None,
        max_day=int(days.max()) if len(days) else None,
        violations=v,
    )


# -- CSV loading -------------------------------------------------------------


def _read_table(path: Path, columns: Sequence[str], label: str) -> pd.DataFrame:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataValidationError(f"{label}: missing header row")
    header = [h.strip() for h in rows[0]]
    if header != list(columns):
        raise DataValidationError(
            f"{label}: header must be {','.join(columns)}, got {','.join(header)}")
    body = rows[1:]
    bad = [f"{label} line {i + 2}: expected {len(columns)} fields, got {len(r)}"
           for i, r in enumerate(body) if len(r) != len(columns)]
    if bad:
        raise DataValidationError(f"{label}: malformed rows", bad)
    return pd.DataFrame(body, columns=list(columns), dtype=str)


def _to_int(df: pd.DataFrame, columns: Sequence[str], label: str) -> dict[str, np.ndarray]:
    out = {}
    problems = []
    for col in columns:
        s = df[col].str.strip()
        good = s.str.fullmatch(r"[+-]?\d+")
        for i in np.flatnonzero(~good.to_numpy(dtype=bool)):
            problems.append(f"{label} line {i + 2}: column {col} is not an integer ({s.iat[i]!r})")
        out[col] = pd.to_numeric(s.where(good, "0")).to_numpy(dtype=np.int64)
    if problems:
        raise DataValidationError(f"{label}: malformed rows", problems)
    return out


def _patient_index(ids: np.ndarray, pid_sorted: np.ndarray, order: np.ndarray,
                   label: str) -> np.ndarray:
    pos = np.searchsorted(pid_sorted, ids)
    pos_c = pos.clip(0, max(len(pid_sorted) - 1, 0))
    found = (pos < len(pid_sorted)) & (pid_sorted[pos_c] == ids) if len(pid_sorted) else \
        np.zeros(len(ids), dtype=bool)
    if not found.all():
        rows = np.flatnonzero(~found)
        raise DataValidationError(
            f"{label}: unknown patient_id",
            [f"{label} line {i + 2}: patient_id {ids[i]}" for i in rows])
    return order[pos_c]


def load_cohort(patients_path, drug_eras_path, conditions_path,
                axis: TimeAxis | None = None,
                drug_universe: Iterable[int] | None = None,
                condition_universe: Iterable[int] | None = None) -> Cohort:
    """Read the three cohort CSV files and return a validated, sorted cohort.

    Raises :class:`DataValidationError` listing offending rows on malformed
    input, unknown patients, inverted eras or events outside observation.
    """
    axis = axis or TimeAxis()
    pdf = _read_table(Path(patients_path), PATIENT_COLUMNS, "patients")
    p = _to_int(pdf, PATIENT_COLUMNS[:4], "patients")
    sex = pdf["sex"].str.strip().to_numpy(dtype="<U8")
    bad = ~np.isin(sex, SEXES)
    if bad.any():
        raise DataValidationError("patients: bad sex code", [
            f"patients line {i + 2}: sex {sex[i]!r} not in F/M/U" for i in np.flatnonzero(bad)])

    edf = _read_table(Path(drug_eras_path), ERA_COLUMNS, "drug_eras")
    e = _to_int(edf, ERA_COLUMNS, "drug_eras")
    cdf = _read_table(Path(conditions_path), CONDITION_COLUMNS, "conditions")
    c = _to_int(cdf, CONDITION_COLUMNS, "conditions")

    pid = p["patient_id"]
    dup = np.unique(pid, return_counts=True)
    if (dup[1] > 1).any():
        raise DataValidationError("patients: duplicate patient_id",
                                  [str(x) for x in dup[0][dup[1] > 1]])
    order = np.argsort(pid, kind="stable")
    pid_sorted = pid[order]
    e_idx = _patient_index(e["patient_id"], pid_sorted, order, "drug_eras")
    c_idx = _patient_index(c["patient_id"], pid_sorted, order, "conditions")

    problems = []
    obs_s, obs_e = p["obs_start"], p["obs_end"]
    for i in np.flatnonzero((obs_s > obs_e) | (obs_s < 0) | (obs_e > axis.horizon_days)):
        problems.append(f"patients line {i + 2}: observation [{obs_s[i]}, {obs_e[i]}] invalid "
                        f"for horizon {axis.horizon_days}")
    for i in np.flatnonzero(e["start_day"] > e["end_day"]):
        problems.append(f"drug_eras line {i + 2}: start_day {e['start_day'][i]} > "
                        f"end_day {e['end_day'][i]}")
    outside = (e["start_day"] < obs_s[e_idx]) | (e["end_day"] > obs_e[e_idx])
    for i in np.flatnonzero(outside & (e["start_day"] <= e["end_day"])):
        problems.append(f"drug_eras line {i + 2}: era outside observation period")
    outside = (c["start_day"] < obs_s[c_idx]) | (c["start_day"] > obs_e[c_idx])
    for i in np.flatnonzero(outside):
        problems.append(f"conditions line {i + 2}: occurrence outside observation period")
    if problems:
        raise DataValidationError("invalid cohort rows", problems)

    # canonical order: patients by id, events grouped by patient then (id, day)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    eo = np.lexsort((e["end_day"], e["start_day"], e["drug_id"], rank[e_idx]))
    co = np.lexsort((c["start_day"], c["condition_id"], rank[c_idx]))
    return Cohort(
        patient_ids=pid[order], obs_start=obs_s[order], obs_end=obs_e[order],
        age_years=p["age_years"][order], sex=sex[order].astype("<U1"),
        era_patient=rank[e_idx][eo], era_drug=e["drug_id"][eo],
        era_start=e["start_day"][eo], era_end=e["end_day"][eo],
        cond_patient=rank[c_idx][co], cond_id=c["condition_id"][co],
        cond_start=c["start_day"][co],
        drug_universe=e["drug_id"] if drug_universe is None else list(drug_universe),
        condition_universe=(c["condition_id"] if condition_universe is None
                            else list(condition_universe)),
        time_axis=axis,
    )


def write_tables(cohort: Cohort, out_dir) -> None:
    """Write patients.csv, drug_eras.csv and conditions.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    c = cohort
    pd.DataFrame({
        "patient_id": c.patient_ids, "obs_start": c.obs_start, "obs_end": c.obs_end,
        "age_years": c.age_years, "sex": c.sex,
    }, columns=PATIENT_COLUMNS).to_csv(out / "patients.csv", index=False, lineterminator="\n")
    pd.DataFrame({
        "patient_id": c.patient_ids[c.era_patient], "drug_id": c.era_drug,
        "start_day": c.era_start, "end_day": c.era_end,
    }, columns=ERA_COLUMNS).to_csv(out / "drug_eras.csv", index=False, lineterminator="\n")
    pd.DataFrame({
        "patient_id": c.patient_ids[c.cond_patient], "condition_id": c.cond_id,
        "start_day": c.cond_start,
    }, columns=CONDITION_COLUMNS).to_csv(out / "conditions.csv", index=False,
                                         lineterminator="\n")


def load_cohort_dir(data_dir, axis: TimeAxis | None = None, **kw) -> Cohort:
    d = Path(data_dir)
    return load_cohort(d / "patients.csv", d / "drug_eras.csv", d / "conditions.csv", axis, **kw)
