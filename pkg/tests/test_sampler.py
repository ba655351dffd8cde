import json

import numpy as np
import pytest
from scipy.stats import chisquare

from pairfas.errors import ConfigError, DomainError
from pairfas.pairmine import TrainPair
from pairfas.sampler import (
    batches_per_epoch,
    dump_plans,
    oversampling_histogram,
    plan_epoch,
    plan_epochs,
)


def _pairs(n, live_of=lambda i: f"L{i:05d}"):
    return [TrainPair(f"A{i:05d}", live_of(i), 0.95) for i in range(n)]


def test_sixteen_pairs_batch_eight():
    plans = plan_epoch(_pairs(16), 8, seed=0)
    assert len(plans) == 2
    assert all(len(p) == 8 and len(p.slots) == 4 for p in plans)


def test_nominal_epoch_for_7918_pairs():
    pairs = _pairs(7918)
    plans = plan_epoch(pairs, 32, seed=1)
    assert len(plans) == batches_per_epoch(7918, 32) == 248
    assert all(len(p) == 32 for p in plans[:-1])
    assert len(plans[-1]) == 14  # 3959 - 247 * 16 = 7 pairs
    used = [a for p in plans for a in p.attack_ids]
    assert len(used) == len(set(used)) == 3959


def test_small_trailing_batch_is_dropped():
    # 10 pairs -> 5 per epoch -> one batch of 4 pairs and 1 leftover pair (2 samples)
    plans = plan_epoch(_pairs(10), 8, seed=0)
    assert [len(p) for p in plans] == [8]
    assert batches_per_epoch(10, 8) == 1


def test_batch_size_validation():
    for bad in (7, 2, 0):
        with pytest.raises(ConfigError):
            plan_epoch(_pairs(8), bad, seed=0)
    with pytest.raises(DomainError):
        plan_epoch([], 8, seed=0)


def test_determinism_and_reshuffle():
    pairs = _pairs(40)
    assert plan_epoch(pairs, 8, 5) == plan_epoch(pairs, 8, 5)
    epochs = plan_epochs(pairs, 8, seed=5, epochs=3)
    assert epochs[0] != epochs[1]


def test_batch_composition_and_matching():
    rng = np.random.default_rng(0)
    pairs = [TrainPair(f"A{i:03d}", f"L{int(rng.integers(12)):02d}", 0.9) for i in range(90)]
    match = {p.attack_id: p.live_id for p in pairs}
    for plans in plan_epochs(pairs, 16, seed=2, epochs=20):
        for plan in plans:
            flat = plan.flat_ids
            half = len(flat) // 2
            assert all(a.startswith("A") for a in flat[:half])
            for i in range(half):
                assert flat[half + i] == match[flat[i]]


def test_single_live_matched_by_all():
    pairs = _pairs(16, live_of=lambda i: "L0")
    plans = plan_epochs(pairs, 8, seed=0, epochs=10)
    total = sum(len(p) for p in plans)
    assert oversampling_histogram(plans) == {"L0": total * 4}


def test_live_counts_proportional_to_matches():
    ks = [1, 2, 3, 4, 5, 1, 2, 3, 4, 5, 6, 4]  # 40 pairs
    owners = [f"L{j:02d}" for j, k in enumerate(ks) for _ in range(k)]
    pairs = [TrainPair(f"A{i:03d}", owner, 0.95) for i, owner in enumerate(owners)]
    epochs = 200
    plans = plan_epochs(pairs, 8, seed=3, epochs=epochs)
    # 20 pairs per epoch in 5 full batches, nothing dropped
    assert all(sum(len(p.slots) for p in e) == 20 for e in plans)
    hist = oversampling_histogram(plans)
    keys = sorted(hist)
    observed = np.array([hist[k] for k in keys])
    expected = np.array([ks[int(k[1:])] * epochs * 20 / 40 for k in keys])
    assert chisquare(observed, expected).pvalue > 0.01


def test_perfect_matching_is_symmetric():
    pairs = _pairs(30)
    epochs = 200
    hist = oversampling_histogram(plan_epochs(pairs, 6, seed=4, epochs=epochs))
    observed = np.array([hist.get(f"L{i:05d}", 0) for i in range(30)])
    assert observed.sum() == epochs * 15
    assert chisquare(observed).pvalue > 0.01


def test_duplicate_live_within_batch_is_allowed():
    pairs = _pairs(8, live_of=lambda i: "L0" if i < 4 else "L1")
    for plan in plan_epoch(pairs, 8, seed=0):
        assert len(set(plan.live_ids)) < len(plan.live_ids)


def test_dump_plans(tmp_path):
    plans = plan_epochs(_pairs(16), 8, seed=0, epochs=2)
    dump_plans(tmp_path / "plans.jsonl", plans)
    rows = [json.loads(l) for l in (tmp_path / "plans.jsonl").read_text().splitlines()]
    assert len(rows) == 4
    assert rows[0]["slots"][0] == list(plans[0][0].slots[0])
