"""Live/attack pair mining over face-recognition embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .datamodel import ATTACK_CATEGORIES, AttackCategory, Sample
from .errors import DataIntegrityError, DimensionError, DomainError

# Screening window for re-scoring argmax candidates with the scalar cosine.
_RESCORE_WINDOW = 1e-9


@dataclass(frozen=True)
class TrainPair:
    attack_id: str
    live_id: str
    similarity: float


@dataclass
class FilterReport:
    tau_sim: float
    before: Dict[str, int] = field(default_factory=dict)
    after: Dict[str, int] = field(default_factory=dict)
    live_before: int = 0
    live_retained: int = 0

    @property
    def total_before(self) -> int:
        return sum(self.before.values())

    @property
    def total_after(self) -> int:
        return sum(self.after.values())

    def to_dict(self) -> dict:
        return {
            "tau_sim": self.tau_sim,
            "before": dict(self.before),
            "after": dict(self.after),
            "live_before": self.live_before,
            "live_retained": self.live_retained,
            "total_before": self.total_before,
            "total_after": self.total_after,
        }

    def table(self) -> str:
        rows = [f"{'Category':<16}{'Before':>10}{'After':>10}"]
        for cat in ATTACK_CATEGORIES:
            b, a = self.before.get(cat.value, 0), self.after.get(cat.value, 0)
            rows.append(f"{cat.value:<16}{b:>10}{(a if a else '--'):>10}")
        rows.append(f"{'Live':<16}{self.live_before:>10}{self.live_retained:>10}")
        rows.append(f"tau_sim={self.tau_sim}  pairs={self.total_after}")
        return "\n".join(rows)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    ma, mb = np.max(np.abs(a)), np.max(np.abs(b))
    if ma == 0.0 or mb == 0.0:
        raise DomainError("cosine_similarity: zero-norm vector")
    a, b = a / ma, b / mb
    # One square root of the product keeps sim(v, v) == 1 exactly.
    value = np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(min(1.0, max(-1.0, value)))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("zero-norm embedding")
    return m / norms


def _resolve(attack_vec, live_ids: Sequence[str], live_vecs, row: np.ndarray) -> Tuple[str, float]:
    """Pick the argmax of one similarity row; near-ties are re-scored exactly."""
    top = row.max()
    candidates = np.flatnonzero(row >= top - _RESCORE_WINDOW)
    best_id, best_sim = None, -np.inf
    for j in candidates:
        sim = cosine_similarity(attack_vec, live_vecs[j])
        lid = live_ids[j]
        if sim > best_sim or (sim == best_sim and lid < best_id):
            best_id, best_sim = lid, sim
    return best_id, best_sim


def best_live_match(attack_id: str, embeddings: Mapping[str, np.ndarray], live_ids: Sequence[str]) -> Tuple[str, float]:
    """Live sample most similar to ``attack_id``; ties go to the smallest id."""
    if len(live_ids) == 0:
        raise DomainError("best_live_match: empty live set")
    live_vecs = np.asarray([embeddings[k] for k in live_ids], dtype=np.float64)
    a = np.asarray(embeddings[attack_id], dtype=np.float64)
    if live_vecs.shape[1] != a.shape[0]:
        raise DimensionError("best_live_match: attack and live dimensions differ")
    row = _unit_rows(live_vecs) @ (a / np.linalg.norm(a))
    return _resolve(a, list(live_ids), live_vecs, row)


def match_all(attack_ids: Sequence[str], embeddings: Mapping[str, np.ndarray], live_ids: Sequence[str]) -> List[Tuple[str, float]]:
    """Vectorized :func:`best_live_match` for many attacks."""
    if len(live_ids) == 0:
        raise DomainError("match_all: empty live set")
    if len(attack_ids) == 0:
        return []
    live_vecs = np.asarray([embeddings[k] for k in live_ids], dtype=np.float64)
    attack_vecs = np.asarray([embeddings[k] for k in attack_ids], dtype=np.float64)
    if live_vecs.shape[1] != attack_vecs.shape[1]:
        raise DimensionError("match_all: attack and live dimensions differ")
    sims = _unit_rows(attack_vecs) @ _unit_rows(live_vecs).T
    live_ids = list(live_ids)
    return [_resolve(attack_vecs[i], live_ids, live_vecs, sims[i]) for i in range(len(attack_ids))]


def filter_pairs(samples: Sequence[Sample], embeddings: Mapping[str, np.ndarray], tau_sim: float) -> Tuple[List[TrainPair], FilterReport]:
    """Keep each valid attack whose best live match has similarity > ``tau_sim``.

    Returns pairs sorted by attack id plus per-category before/after counts.
    Invalid samples are ignored on both sides.
    """
    if not -1.0 <= tau_sim <= 1.0:
        raise DomainError(f"tau_sim {tau_sim} outside [-1, 1]")
    valid = [s for s in samples if s.valid]
    for s in valid:
        if s.id not in embeddings:
            raise DataIntegrityError(f"no embedding for sample {s.id!r}")
    live_ids = sorted(s.id for s in valid if s.is_live)
    attacks = sorted((s for s in valid if not s.is_live), key=lambda s: s.id)
    if not live_ids:
        raise DomainError("filter_pairs: no valid live samples")

    report = FilterReport(tau_sim=tau_sim, live_before=len(live_ids))
    for cat in ATTACK_CATEGORIES:
        report.before[cat.value] = 0
        report.after[cat.value] = 0

    matches = match_all([s.id for s in attacks], embeddings, live_ids)
    pairs: List[TrainPair] = []
    for s, (lid, sim) in zip(attacks, matches):
        report.before[s.category.value] += 1
        if sim > tau_sim:
            report.after[s.category.value] += 1
            pairs.append(TrainPair(s.id, lid, sim))
    report.live_retained = len({p.live_id for p in pairs})
    return pairs, report


def write_pairs(path, pairs: Sequence[TrainPair], meta: Optional[dict] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for p in sorted(pairs, key=lambda p: p.attack_id):
            fh.write(json.dumps({"attack_id": p.attack_id, "live_id": p.live_id, "similarity": p.similarity}) + "\n")


def load_pairs(path) -> List[TrainPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "_meta" in rec:
                continue
            pairs.append(TrainPair(rec["attack_id"], rec["live_id"], float(rec["similarity"])))
    return pairs
