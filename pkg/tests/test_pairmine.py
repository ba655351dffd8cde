import math

import numpy as np
import pytest

from oracles import best_live_scan
from pairfas.datamodel import AttackCategory, Label, Sample, SynthConfig, generate_synthetic
from pairfas.errors import DimensionError, DomainError
from pairfas.pairmine import (
    TrainPair,
    best_live_match,
    cosine_similarity,
    filter_pairs,
    load_pairs,
    match_all,
    write_pairs,
)

IMG = np.zeros((8, 8, 3))


def _random_instance(rng, n_attacks, n_lives, dim=8):
    lives = {f"L{j:03d}": rng.normal(size=dim) for j in range(n_lives)}
    # exact ties: a few lives share a vector, others are positive multiples
    keys = sorted(lives)
    for j in range(0, n_lives - 1, 7):
        lives[keys[j + 1]] = lives[keys[j]] * (2.0 if j % 2 else 1.0)
    attacks = {}
    for i in range(n_attacks):
        if i % 5 == 0:
            attacks[f"A{i:03d}"] = lives[keys[int(rng.integers(n_lives))]].copy()
        else:
            attacks[f"A{i:03d}"] = rng.normal(size=dim)
    return attacks, lives


def test_cosine_examples():
    v = np.array([0.3, -1.2, 4.0])
    assert cosine_similarity(v, v) == 1.0
    assert cosine_similarity([1, 0, 0], [0, 1, 0]) == 0.0
    assert cosine_similarity([1, 1, 0], [1, 0, 0]) == pytest.approx(1 / math.sqrt(2), rel=1e-15)


def test_cosine_errors():
    with pytest.raises(DomainError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimensionError):
        cosine_similarity([1, 0], [1, 0, 0])


def test_cosine_range_is_clamped():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.normal(size=5) * 10 ** rng.uniform(-50, 50)
        assert -1.0 <= cosine_similarity(v, -v) <= 1.0
        assert cosine_similarity(v, v * 3.0) <= 1.0


def test_single_candidate_and_self_match():
    emb = {"a": np.array([1.0, 2.0]), "l1": np.array([-3.0, 1.0]), "l2": np.array([1.0, 2.0])}
    assert best_live_match("a", emb, ["l1"])[0] == "l1"
    assert best_live_match("a", emb, ["l1", "l2"]) == ("l2", 1.0)


def test_ties_go_to_smallest_id():
    emb = {"a": np.array([1.0, 0.0]), "z": np.array([1.0, 1.0]), "b": np.array([1.0, -1.0])}
    assert best_live_match("a", emb, ["z", "b"])[0] == "b"


def test_empty_live_set():
    with pytest.raises(DomainError):
        best_live_match("a", {"a": np.ones(2)}, [])


def test_matches_exhaustive_scan_50x200():
    rng = np.random.default_rng(50)
    attacks, lives = _random_instance(rng, 50, 200)
    emb = {**attacks, **lives}
    live_items = list(lives.items())
    got = match_all(list(attacks), emb, list(lives))
    for (aid, vec), res in zip(attacks.items(), got):
        assert res == best_live_scan(vec, live_items, cosine_similarity)
        assert res == best_live_match(aid, emb, list(lives))


def _samples(attacks, lives, categories=None):
    out = [Sample(k, k, Label.LIVE, AttackCategory.LIVE, True, IMG) for k in lives]
    cats = categories or [AttackCategory.PRINT]
    for i, k in enumerate(attacks):
        out.append(Sample(k, k, Label.ATTACK, cats[i % len(cats)], True, IMG))
    return out


def filter_oracle(samples, emb, tau):
    live_items = [(s.id, emb[s.id]) for s in sorted(samples, key=lambda s: s.id) if s.valid and s.is_live]
    out = []
    for s in sorted(samples, key=lambda s: s.id):
        if s.valid and not s.is_live:
            lid, sim = best_live_scan(emb[s.id], live_items, cosine_similarity)
            if sim > tau:
                out.append(TrainPair(s.id, lid, sim))
    return out


def test_filter_matches_oracle_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(10):
        attacks, lives = _random_instance(rng, int(rng.integers(1, 60)), int(rng.integers(1, 40)))
        emb = {**attacks, **lives}
        samples = _samples(attacks, lives)
        tau = float(rng.uniform(-0.5, 0.9))
        pairs, report = filter_pairs(samples, emb, tau)
        assert pairs == filter_oracle(samples, emb, tau)
        assert report.total_before == len(attacks)
        assert report.total_after == len(pairs)
        assert report.live_retained == len({p.live_id for p in pairs})


def test_scale_invariance_is_exact():
    rng = np.random.default_rng(3)
    attacks, lives = _random_instance(rng, 40, 30)
    emb = {**attacks, **lives}
    scaled = {k: v * float(rng.choice([0.5, 2.0, 4.0, 0.25])) for k, v in emb.items()}
    a = [m[0] for m in match_all(list(attacks), emb, list(lives))]
    b = [m[0] for m in match_all(list(attacks), scaled, list(lives))]
    assert a == b


def test_vacuous_and_impossible_thresholds():
    samples, store = generate_synthetic(SynthConfig(n_identities=5, seed=1))
    n_valid_attacks = sum(1 for s in samples if s.valid and not s.is_live)
    assert len(filter_pairs(samples, store, -1.0)[0]) == n_valid_attacks
    pairs, report = filter_pairs(samples, store, 1.0)
    assert pairs == [] and report.total_after == 0 and report.total_before == n_valid_attacks


def test_threshold_is_strict():
    emb = {"a": np.array([1.0, 1.0]), "l": np.array([1.0, 0.0])}
    samples = _samples(["a"], ["l"])
    sim = cosine_similarity(emb["a"], emb["l"])
    assert filter_pairs(samples, emb, sim)[0] == []
    assert len(filter_pairs(samples, emb, np.nextafter(sim, -1))[0]) == 1


def test_no_live_samples_is_domain_error():
    emb = {"a": np.ones(2)}
    with pytest.raises(DomainError):
        filter_pairs(_samples(["a"], []), emb, 0.5)


def test_threshold_outside_range():
    emb = {"a": np.ones(2), "l": np.ones(2)}
    with pytest.raises(DomainError):
        filter_pairs(_samples(["a"], ["l"]), emb, 1.5)


def test_invalid_samples_are_ignored():
    emb = {"a": np.array([1.0, 0.0]), "l": np.array([1.0, 0.01]), "bad": np.array([1.0, 0.0])}
    samples = _samples(["a"], ["l"]) + [Sample("bad", "x", Label.LIVE, AttackCategory.LIVE, False, IMG)]
    pairs, report = filter_pairs(samples, emb, 0.5)
    assert pairs[0].live_id == "l"
    assert report.live_before == 1


def test_synthetic_filter_report_shape():
    samples, store = generate_synthetic(SynthConfig(n_identities=10, seed=0))
    _, report = filter_pairs(samples, store, 0.9)
    assert set(report.before) == {c.value for c in AttackCategory if c is not AttackCategory.LIVE}
    for cat, n in report.before.items():
        assert report.after[cat] <= n
    # identity-preserving categories survive, orphan-style ones mostly do not
    assert report.after["PixelLevel"] > 0.9 * report.before["PixelLevel"]
    assert report.after["Replay"] <= report.before["Replay"] // 2
    assert "Replay" in report.table()


def test_monotone_nested_over_grid():
    samples, store = generate_synthetic(SynthConfig(n_identities=20, seed=5))
    prev = None
    for tau in np.round(np.arange(0.84, 0.915, 0.01), 2):
        ids = {p.attack_id for p in filter_pairs(samples, store, float(tau))[0]}
        if prev is not None:
            assert ids <= prev
        prev = ids


def test_pairs_file_round_trip(tmp_path):
    pairs = [TrainPair("b", "l1", 0.95), TrainPair("a", "l2", 0.91)]
    write_pairs(tmp_path / "p.jsonl", pairs, meta={"tau_sim": 0.9})
    assert load_pairs(tmp_path / "p.jsonl") == sorted(pairs, key=lambda p: p.attack_id)
