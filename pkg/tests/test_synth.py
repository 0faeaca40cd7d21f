import filecmp

import numpy as np
import pytest

from dpasignal.counting import count
from dpasignal.errors import ConfigError, DataValidationError
from dpasignal.events import load_cohort_dir, validate
from dpasignal.rating import expected_matrix
from dpasignal.synth import (
    GenConfig, GroundTruth, generate, load_truth, simulate, spike_conditions, write_cohort,
)


SMALL = GenConfig(n_patients=400, n_drugs=12, n_conditions=9, n_spiked=4, seed=21)


def test_deterministic(tmp_path):
    a, ta = generate(SMALL)
    b, tb = generate(SMALL)
    assert a == b and ta == tb
    write_cohort(a, ta, tmp_path / "a")
    write_cohort(b, tb, tmp_path / "b")
    for name in ("patients.csv", "drug_eras.csv", "conditions.csv", "truth.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_patient_streams_independent_of_cohort_size():
    small, _ = generate(GenConfig(n_patients=30, seed=4))
    big, _ = generate(GenConfig(n_patients=60, seed=4))
    assert small.patients[:30] == big.patients[:30]


def test_valid_cohort():
    cohort, truth = generate(SMALL)
    assert validate(cohort).ok
    assert len(truth.positives) == len(truth.negatives) == 4
    assert not truth.positives & truth.negatives


def test_forced_injection_lands_at_lag():
    rng = np.random.default_rng(0)
    d, c, day = spike_conditions(rng, np.array([3]), np.array([100]), obs_end=500,
                                 spiked={3: [8]}, effect_prob=1.0, lag_min=5, lag_max=5)
    assert (d.tolist(), c.tolist(), day.tolist()) == ([3], [8], [105])


def test_injection_after_observation_dropped():
    rng = np.random.default_rng(0)
    _, c, _ = spike_conditions(rng, np.array([3]), np.array([100]), obs_end=103,
                               spiked={3: [8]}, effect_prob=1.0, lag_min=5, lag_max=5)
    assert len(c) == 0


def test_no_spikes():
    sim = simulate(GenConfig(n_patients=200, n_spiked=0, seed=2))
    assert sim.truth.positives == frozenset()
    assert sim.n_injected == 0


def test_injected_bounded_by_spiked_eras():
    sim = simulate(GenConfig(n_patients=2000, n_spiked=6, effect_prob=0.7, seed=8))
    cohort = sim.cohort
    for (d, c), n in sim.injected.items():
        assert n <= int((cohort.era_drug == d).sum())
    spiked_drugs = {d for d, _ in sim.truth.positives}
    n_spiked_eras = int(np.isin(cohort.era_drug, list(spiked_drugs)).sum())
    assert sim.n_injected <= sum(int((cohort.era_drug == d).sum()) * sum(
        1 for dd, _ in sim.truth.positives if dd == d) for d in spiked_drugs)
    assert n_spiked_eras > 0


def test_spiked_pair_count_covers_first_era_exposures():
    # effect_prob 1 and every lag far from the observation edge: each first era
    # of d produces an occurrence of c inside the window
    cfg = GenConfig(n_patients=3000, n_drugs=8, n_conditions=6, n_spiked=2, effect_prob=1.0,
                    lag_min_days=3, lag_max_days=20, seed=5)
    sim = simulate(cfg)
    cohort = sim.cohort
    tables = count(cohort, delta=20, m=1, first_era_only=True)
    end = cohort.obs_end[cohort.era_patient]
    for d, c in sim.truth.positives:
        first = np.zeros(cohort.n_eras, dtype=bool)
        seen = set()
        for i in np.lexsort((cohort.era_start, cohort.era_drug, cohort.era_patient)):
            key = (cohort.era_patient[i], cohort.era_drug[i])
            if key not in seen:
                seen.add(key)
                first[i] = True
        inside = first & (cohort.era_drug == d) & (cohort.era_start + cfg.lag_max_days <= end)
        assert tables.n_dc(0, d, c) >= inside.sum()


@pytest.mark.parametrize("kw", [
    dict(effect_prob=0.0), dict(effect_prob=1.5), dict(lag_min_days=5, lag_max_days=2),
    dict(n_spiked=10_000), dict(lag_min_days=-1),
])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        GenConfig(**kw)


def test_truth_disjoint():
    with pytest.raises(DataValidationError):
        GroundTruth({(1, 2)}, {(1, 2)})


def test_write_round_trip(tmp_path):
    cohort, truth = generate(SMALL)
    write_cohort(cohort, truth, tmp_path)
    back = load_cohort_dir(tmp_path, cohort.time_axis)
    assert back == cohort
    assert load_truth(tmp_path / "truth.csv") == truth


def test_write_empty(tmp_path):
    cohort, truth = generate(GenConfig(n_patients=0, n_spiked=0))
    write_cohort(cohort, truth, tmp_path)
    assert (tmp_path / "patients.csv").read_text() == \
        "patient_id,obs_start,obs_end,age_years,sex\n"
    assert (tmp_path / "drug_eras.csv").read_text() == "patient_id,drug_id,start_day,end_day\n"
    assert (tmp_path / "conditions.csv").read_text() == "patient_id,condition_id,start_day\n"
    assert (tmp_path / "truth.csv").read_text() == "drug_id,condition_id,label\n"


def test_truth_file_rows(tmp_path):
    truth = GroundTruth({(1, 2), (3, 4), (5, 6)}, {(7, 8)})
    write_cohort(generate(GenConfig(n_patients=1, n_spiked=0))[0], truth, tmp_path)
    lines = (tmp_path / "truth.csv").read_text().splitlines()
    assert sum(line.endswith(",1") for line in lines[1:]) == 3


@pytest.mark.slow
def test_null_pairs_share_one_calibration_level():
    # Pilot at 50,000 patients (drug_rate 2, cond_rate 5): for unspiked pairs
    # n_dc / b_dc concentrates near delta * drug_rate / 365 rather than 1
    # (0.27 at delta 50, 0.93 at delta 182).  Relative to that common level every
    # unspiked pair lies within [0.5, 2.0]; with delta ~ 365 / drug_rate the raw
    # ratio itself does.
    cfg = GenConfig(n_patients=50_000, drug_rate=2, cond_rate=5, seed=11)
    sim = simulate(cfg)
    d_ids, c_ids = sim.cohort.drug_universe, sim.cohort.condition_universe
    null = np.ones((len(d_ids), len(c_ids)), dtype=bool)
    for d, c in sim.truth.positives:
        null[d - 1, c - 1] = False
    for delta, raw_ok in ((50, False), (182, True)):
        tables = count(sim.cohort, delta, m=1)
        b = expected_matrix(tables, 0, "occurrence", d_ids, c_ids)
        n = np.zeros_like(b)
        pd_, pc, pv = tables.subinterval_pairs(0)
        n[pd_ - 1, pc - 1] = pv
        ratio = (n / b)[null]
        rel = ratio / np.median(ratio)
        assert rel.min() >= 0.5 and rel.max() <= 2.0
        if raw_ok:
            assert ratio.min() >= 0.5 and ratio.max() <= 2.0
