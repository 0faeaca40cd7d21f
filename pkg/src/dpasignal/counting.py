"""Windowed drug -> condition pair counts and per-subinterval marginals.

A pair (era of drug d starting at t_d, occurrence of condition c at t_c) from
the same patient is counted when ``0 <= t_c - t_d <= delta``.  The pair and
the drug marginal are attributed to the subinterval holding t_d, the
condition marginal to the subinterval holding t_c, and era durations are
split day by day across the subintervals they overlap (eras are closed
intervals, so an era with start == end lasts one day).

Patients are processed in fixed-size chunks.  Chunk boundaries depend only on
the cohort, never on the worker count, and partial tables are reduced in
chunk order, so weighted (floating point) counts are bit-identical for any
number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .errors import ConfigError
from .events import Cohort, first_era_mask

CHUNK_PATIENTS = 8192
COUNTS_FORMAT = "dpasignal-counts"
COUNTS_VERSION = 1


@dataclass(frozen=True)
class UniformKernel:
    """Flat window: every lag in [0, delta] weighs 1 (integer counts)."""

    delta: int

    def weights(self, lags: np.ndarray) -> np.ndarray:
        lags = np.asarray(lags)
        return ((lags >= 0) & (lags <= self.delta)).astype(np.int64)

    def with_delta(self, delta: int) -> "UniformKernel":
        return UniformKernel(delta)

    def __call__(self, lag):
        return self.weights(lag)


@dataclass(frozen=True)
class WeightKernel:
    """Piecewise-linear lag weight.

    Rises linearly from ``w0`` at lag 0 to 1 at ``peak_start_day``, stays at 1
    through ``peak_end_day`` and falls linearly to 0 at ``delta``.
    """

    delta: int
    w0: float = 0.2
    peak_start_day: int = 6
    peak_end_day: int = 10

    def __post_init__(self):
        if not 0.0 <= self.w0 <= 1.0:
            raise ConfigError(f"kernel w0 must be in [0, 1], got {self.w0}")
        if not 0 <= self.peak_start_day <= self.peak_end_day < self.delta:
            raise ConfigError(
                "kernel needs 0 <= peak_start_day <= peak_end_day < delta "
                f"(got {self.peak_start_day}, {self.peak_end_day}, {self.delta})")

    def weights(self, lags: np.ndarray) -> np.ndarray:
        x = np.asarray(lags, dtype=np.float64)
        ps, pe, d = float(self.peak_start_day), float(self.peak_end_day), float(self.delta)
        rise = self.w0 + (1.0 - self.w0) * x / ps if ps > 0 else np.ones_like(x)
        fall = (d - x) / (d - pe)
        w = np.where(x < ps, rise, np.where(x <= pe, 1.0, fall))
        return np.where((x < 0) | (x > d), 0.0, w)

    def with_delta(self, delta: int) -> "WeightKernel":
        return WeightKernel(delta, self.w0, self.peak_start_day, self.peak_end_day)

    def __call__(self, lag):
        return self.weights(lag)


Kernel = Union[UniformKernel, WeightKernel]


@dataclass(frozen=True, eq=False)
class CountTables:
    """Count statistics for ``m`` subintervals.

    Pair counts are stored sparsely as parallel arrays sorted by
    (subinterval, drug, condition).  Marginals are dense ``(m, max_id + 1)``
    arrays indexed directly by drug or condition id.
    """

    m: int
    pair_sub: np.ndarray
    pair_drug: np.ndarray
    pair_cond: np.ndarray
    pair_value: np.ndarray
    drug_counts: np.ndarray
    cond_counts: np.ndarray
    drug_durations: np.ndarray

    @property
    def N(self) -> np.ndarray:
        return self.drug_counts.sum(axis=1)

    @property
    def H(self) -> np.ndarray:
        return self.drug_durations.sum(axis=1)

    @property
    def weighted(self) -> bool:
        return self.pair_value.dtype.kind == "f"

    def pair_counts(self, i: int) -> dict[tuple[int, int], float]:
        sel = self.pair_sub == i
        return dict(zip(zip(self.pair_drug[sel].tolist(), self.pair_cond[sel].tolist()),
                        self.pair_value[sel].tolist()))

    def subinterval_pairs(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, hi = np.searchsorted(self.pair_sub, [i, i + 1])
        return self.pair_drug[lo:hi], self.pair_cond[lo:hi], self.pair_value[lo:hi]

    def n_dc(self, i: int, d: int, c: int):
        return self.pair_counts(i).get((d, c), 0)

    def n_d(self, i: int, d: int) -> int:
        return int(self.drug_counts[i, d]) if d < self.drug_counts.shape[1] else 0

    def n_c(self, i: int, c: int) -> int:
        return int(self.cond_counts[i, c]) if c < self.cond_counts.shape[1] else 0

    def h_d(self, i: int, d: int) -> int:
        return int(self.drug_durations[i, d]) if d < self.drug_durations.shape[1] else 0

    @classmethod
    def empty(cls, m: int, n_drug_ids: int = 1, n_cond_ids: int = 1,
              weighted: bool = False) -> "CountTables":
        z = np.zeros(0, dtype=np.int64)
        return cls(m, z, z, z, np.zeros(0, dtype=np.float64 if weighted else np.int64),
                   np.zeros((m, n_drug_ids), dtype=np.int64),
                   np.zeros((m, n_cond_ids), dtype=np.int64),
                   np.zeros((m, n_drug_ids), dtype=np.int64))

    def equals(self, other: "CountTables") -> bool:
        """Exact equality, ignoring zero padding of the marginal arrays."""
        if self.m != other.m:
            return False
        a, b = _pad_pair(self, other)
        return all(np.array_equal(getattr(a, n), getattr(b, n)) for n in (
            "pair_sub", "pair_drug", "pair_cond", "pair_value",
            "drug_counts", "cond_counts", "drug_durations"))


def _pad(arr: np.ndarray, width: int) -> np.ndarray:
    if arr.shape[1] == width:
        return arr
    out = np.zeros((arr.shape[0], width), dtype=arr.dtype)
    out[:, :arr.shape[1]] = arr
    return out


def _pad_pair(a: CountTables, b: CountTables) -> tuple[CountTables, CountTables]:
    nd = max(a.drug_counts.shape[1], b.drug_counts.shape[1])
    nc = max(a.cond_counts.shape[1], b.cond_counts.shape[1])

    def pad(t):
        return CountTables(t.m, t.pair_sub, t.pair_drug, t.pair_cond, t.pair_value,
                           _pad(t.drug_counts, nd), _pad(t.cond_counts, nc),
                           _pad(t.drug_durations, nd))
    return pad(a), pad(b)


def _reduce_pairs(sub, drug, cond, value, nd: int, nc: int):
    """Sum values of identical (sub, drug, cond) keys, accumulating in input order."""
    if len(sub) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, value[:0]
    key = (sub * nd + drug) * nc + cond
    uniq, inv = np.unique(key, return_inverse=True)
    out = np.zeros(len(uniq), dtype=value.dtype)
    np.add.at(out, inv, value)
    rest, c = np.divmod(uniq, nc)
    s, d = np.divmod(rest, nd)
    return s, d, c, out


def _concat(tables: list[CountTables]) -> CountTables:
    """Element-wise sum of many tables; pair sums accumulate in list order."""
    m = tables[0].m
    nd = max(t.drug_counts.shape[1] for t in tables)
    nc = max(t.cond_counts.shape[1] for t in tables)
    weighted = any(t.weighted for t in tables)
    vdt = np.float64 if weighted else np.int64
    sub, drug, cond, value = _reduce_pairs(
        np.concatenate([t.pair_sub for t in tables]),
        np.concatenate([t.pair_drug for t in tables]),
        np.concatenate([t.pair_cond for t in tables]),
        np.concatenate([t.pair_value.astype(vdt) for t in tables]),
        nd, nc)
    dc = np.zeros((m, nd), dtype=np.int64)
    cc = np.zeros((m, nc), dtype=np.int64)
    dd = np.zeros((m, nd), dtype=np.int64)
    for t in tables:
        dc += _pad(t.drug_counts, nd)
        cc += _pad(t.cond_counts, nc)
        dd += _pad(t.drug_durations, nd)
    return CountTables(m, sub, drug, cond, value, dc, cc, dd)


def merge(a: CountTables, b: CountTables) -> CountTables:
    """Element-wise sum of two count tables over the same subdivision."""
    if a.m != b.m:
        raise ConfigError(f"cannot merge tables with m={a.m} and m={b.m}")
    return _concat([a, b])


PatientFilter = Union[None, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _patient_mask(cohort: Cohort, patient_filter: PatientFilter) -> np.ndarray:
    if patient_filter is None:
        return np.ones(cohort.n_patients, dtype=bool)
    if callable(patient_filter):
        mask = np.asarray(patient_filter(cohort.patient_ids), dtype=bool)
    else:
        mask = np.asarray(patient_filter, dtype=bool)
    if mask.shape != (cohort.n_patients,):
        raise ConfigError("patient filter must yield one boolean per patient")
    return mask


def _count_chunk(cohort: Cohort, eras: np.ndarray, conds: np.ndarray, delta: int,
                 kernel: Kernel, m: int, nd: int, nc: int) -> CountTables:
    axis = cohort.time_axis
    ep, ed = cohort.era_patient[eras], cohort.era_drug[eras]
    es, ee = cohort.era_start[eras], cohort.era_end[eras]
    cp, cid, cs = cohort.cond_patient[conds], cohort.cond_id[conds], cohort.cond_start[conds]

    e_sub = axis.subinterval_of(es, m)
    c_sub = axis.subinterval_of(cs, m)

    drug_counts = np.zeros((m, nd), dtype=np.int64)
    np.add.at(drug_counts, (e_sub, ed), 1)
    cond_counts = np.zeros((m, nc), dtype=np.int64)
    np.add.at(cond_counts, (c_sub, cid), 1)

    durations = np.zeros((m, nd), dtype=np.int64)
    starts = axis.subinterval_starts(m)
    stops = np.append(starts[1:] - 1, np.iinfo(np.int64).max // 4)
    first_sub = e_sub
    last_sub = axis.subinterval_of(ee, m)
    for i in range(m):
        sel = (first_sub <= i) & (last_sub >= i)
        if not sel.any():
            continue
        days = np.minimum(ee[sel], stops[i]) - np.maximum(es[sel], starts[i]) + 1
        np.add.at(durations[i], ed[sel], days)

    # windowed pairs: for each era, the patient's occurrences with start in [t_d, t_d + delta]
    stride = axis.horizon_days + delta + 2
    order = np.lexsort((cs, cp))
    ckey = cp[order] * stride + cs[order]
    lo = np.searchsorted(ckey, ep * stride + es, side="left")
    hi = np.searchsorted(ckey, ep * stride + es + delta, side="right")
    n_hits = hi - lo
    total = int(n_hits.sum())
    if total:
        era_rep = np.repeat(np.arange(len(ed)), n_hits)
        offset = np.arange(total) - np.repeat(np.cumsum(n_hits) - n_hits, n_hits)
        hit = order[np.repeat(lo, n_hits) + offset]
        lag = cs[hit] - es[era_rep]
        w = kernel.weights(lag)
        sub, drug, cond, value = _reduce_pairs(
            e_sub[era_rep], ed[era_rep], cid[hit], w, nd, nc)
    else:
        z = np.zeros(0, dtype=np.int64)
        sub = drug = cond = z
        value = np.asarray(kernel.weights(np.zeros(0, dtype=np.int64)))[:0]
    return CountTables(m, sub, drug, cond, value, drug_counts, cond_counts, durations)


def count(cohort: Cohort, delta: int, kernel: Kernel | None = None, m: int | None = None,
          first_era_only: bool = False, patient_filter: PatientFilter = None,
          workers: int = 1) -> CountTables:
    """Count windowed pairs, era starts, occurrences and era-days per subinterval.

    ``kernel`` defaults to the flat window, which yields integer pair counts.
    ``patient_filter`` is a boolean mask over the cohort's patients or a
    callable mapping the patient id array to such a mask.
    """
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    m = cohort.time_axis.m if m is None else m
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if kernel is None:
        kernel = UniformKernel(delta)
    elif kernel.delta != delta:
        raise ConfigError(f"kernel delta {kernel.delta} does not match window delta {delta}")

    keep = _patient_mask(cohort, patient_filter)
    era_sel = keep[cohort.era_patient] if cohort.n_eras else np.zeros(0, dtype=bool)
    if first_era_only:
        era_sel &= first_era_mask(np.where(era_sel, cohort.era_patient, -1),
                                  cohort.era_drug, cohort.era_start)
    cond_sel = keep[cohort.cond_patient] if cohort.n_conditions else np.zeros(0, dtype=bool)

    ids = np.concatenate([cohort.drug_universe, cohort.era_drug, [0]])
    nd = int(ids.max()) + 1
    ids = np.concatenate([cohort.condition_universe, cohort.cond_id, [0]])
    nc = int(ids.max()) + 1

    era_idx = np.flatnonzero(era_sel)
    cond_idx = np.flatnonzero(cond_sel)
    era_idx = era_idx[np.argsort(cohort.era_patient[era_idx], kind="stable")]
    cond_idx = cond_idx[np.argsort(cohort.cond_patient[cond_idx], kind="stable")]
    n_chunks = max(1, -(-cohort.n_patients // CHUNK_PATIENTS))
    bounds = np.arange(n_chunks + 1) * CHUNK_PATIENTS
    e_cut = np.searchsorted(cohort.era_patient[era_idx], bounds)
    c_cut = np.searchsorted(cohort.cond_patient[cond_idx], bounds)
    jobs = [(era_idx[e_cut[k]:e_cut[k + 1]], cond_idx[c_cut[k]:c_cut[k + 1]])
            for k in range(n_chunks)]

    def run(job):
        return _count_chunk(cohort, job[0], job[1], delta, kernel, m, nd, nc)

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    if len(parts) == 1:
        return parts[0]
    return _concat(parts)


def lambda_d(tables: CountTables, i: int) -> np.ndarray:
    """Occurrence-based exposure shares n_d / N for subinterval ``i``."""
    return tables.drug_counts[i] / tables.N[i]


def theta_d(tables: CountTables, i: int) -> np.ndarray:
    """Duration-based exposure shares h_d / H for subinterval ``i``."""
    return tables.drug_durations[i] / tables.H[i]


# -- checkpoint files -----------------------------------------------------------


def save_counts(tables: CountTables, path, drug_universe=None, condition_universe=None) -> None:
    """Write a versioned ``.npz`` checkpoint, optionally with the cohort's id universes."""
    extra = {}
    if drug_universe is not None:
        extra["drug_universe"] = np.asarray(drug_universe, dtype=np.int64)
    if condition_universe is not None:
        extra["condition_universe"] = np.asarray(condition_universe, dtype=np.int64)
    with open(Path(path), "wb") as fh:
        np.savez(
            fh, format=np.array(COUNTS_FORMAT), version=np.array(COUNTS_VERSION),
            m=np.array(tables.m), pair_sub=tables.pair_sub, pair_drug=tables.pair_drug,
            pair_cond=tables.pair_cond, pair_value=tables.pair_value,
            drug_counts=tables.drug_counts, cond_counts=tables.cond_counts,
            drug_durations=tables.drug_durations, **extra)


def load_counts(path, with_universes: bool = False):
    """Read a checkpoint; with ``with_universes`` also return (drug, condition) id arrays."""
    with np.load(Path(path), allow_pickle=False) as z:
        if str(z["format"]) != COUNTS_FORMAT or int(z["version"]) != COUNTS_VERSION:
            raise ConfigError(f"{path}: not a version-{COUNTS_VERSION} count table file")
        tables = CountTables(int(z["m"]), z["pair_sub"], z["pair_drug"], z["pair_cond"],
                             z["pair_value"], z["drug_counts"], z["cond_counts"],
                             z["drug_durations"])
        if not with_universes:
            return tables
        du = z["drug_universe"] if "drug_universe" in z.files else None
        cu = z["condition_universe"] if "condition_universe" in z.files else None
        return tables, du, cu
