"""Paired batch planning: half a batch of attacks, then each one's matched live."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DomainError
from .pairmine import TrainPair

MIN_BATCH = 4


@dataclass(frozen=True)
class PairedBatchPlan:
    slots: Tuple[Tuple[str, str], ...]  # (attack_id, live_id)

    @property
    def attack_ids(self) -> List[str]:
        return [a for a, _ in self.slots]

    @property
    def live_ids(self) -> List[str]:
        return [l for _, l in self.slots]

    @property
    def flat_ids(self) -> List[str]:
        """Attacks first, then their matched lives in the same order."""
        return self.attack_ids + self.live_ids

    def __len__(self) -> int:
        return 2 * len(self.slots)


def epoch_seed(seed: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, epoch])


def plan_epoch(pairs: Sequence[TrainPair], batch_size: int, seed) -> List[PairedBatchPlan]:
    """Plan one nominal epoch.

    Draws ceil(|pairs| / 2) pairs without replacement and cuts them into
    batches of ``batch_size // 2`` pairs. A trailing batch is kept only if it
    holds at least 4 samples.
    """
    if batch_size % 2 or batch_size < MIN_BATCH:
        raise ConfigError(f"batch_size must be even and >= {MIN_BATCH}, got {batch_size}")
    if not pairs:
        raise DomainError("plan_epoch: no training pairs")
    rng = np.random.default_rng(seed)
    n_take = math.ceil(len(pairs) / 2)
    chosen = rng.permutation(len(pairs))[:n_take]
    half = batch_size // 2
    plans = []
    for start in range(0, n_take, half):
        chunk = chosen[start:start + half]
        if 2 * len(chunk) < MIN_BATCH:
            break
        plans.append(PairedBatchPlan(tuple((pairs[i].attack_id, pairs[i].live_id) for i in chunk)))
    return plans


def batches_per_epoch(n_pairs: int, batch_size: int) -> int:
    n_take = math.ceil(n_pairs / 2)
    half = batch_size // 2
    full, rest = divmod(n_take, half)
    return full + (1 if 2 * rest >= MIN_BATCH else 0)


def plan_epochs(pairs: Sequence[TrainPair], batch_size: int, seed: int, epochs: int) -> List[List[PairedBatchPlan]]:
    return [plan_epoch(pairs, batch_size, epoch_seed(seed, e)) for e in range(epochs)]


def oversampling_histogram(plans: Iterable[PairedBatchPlan]) -> Dict[str, int]:
    """Count live-slot occurrences across plans (nested epoch lists accepted)."""
    counts: Counter = Counter()
    for plan in plans:
        if isinstance(plan, PairedBatchPlan):
            counts.update(plan.live_ids)
        else:
            counts.update(oversampling_histogram(plan))
    return dict(counts)


def dump_plans(path, epochs: Sequence[Sequence[PairedBatchPlan]]):
    with Path(path).open("w", encoding="utf-8") as fh:
        for e, plans in enumerate(epochs):
            for b, plan in enumerate(plans):
                fh.write(json.dumps({"epoch": e, "batch": b, "slots": [list(s) for s in plan.slots]}) + "\n")
