"""End-to-end workflows shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .config import RunConfig
from .datamodel import EmbeddingStore, Sample, generate_synthetic, validation_config
from .errors import PairFASError
from .pairmine import FilterReport, TrainPair, filter_pairs
from .trainer import TrainResult, train

log = logging.getLogger(__name__)

DEFAULT_TAU_GRID = tuple(round(0.84 + 0.01 * i, 2) for i in range(8))

ABLATION_SETUPS: Dict[str, Dict[str, object]] = {
    "full": {},
    "w/o SupCon": {"loss.supcon_weight": 0.0},
    "w/o lives augmentations": {"augment.live_augment": False},
}


@dataclass
class PreparedData:
    train: List[Sample]
    store: EmbeddingStore
    val: List[Sample]
    pairs: List[TrainPair]
    report: FilterReport


def synthetic_splits(config: RunConfig):
    """Training samples, their embeddings, and a disjoint validation split."""
    samples, store = generate_synthetic(config.synth)
    val, _ = generate_synthetic(validation_config(config.synth, config.n_val_identities))
    return samples, store, val


def prepare(config: RunConfig, samples=None, store=None, val=None) -> PreparedData:
    """Generate whatever is missing and mine pairs at ``config.tau_sim``."""
    if samples is None or store is None or val is None:
        gen_samples, gen_store, gen_val = synthetic_splits(config)
        samples = gen_samples if samples is None else samples
        store = gen_store if store is None else store
        val = gen_val if val is None else val
    pairs, report = filter_pairs(samples, store, config.tau_sim)
    return PreparedData(list(samples), store, list(val), pairs, report)


def dataset_size(pairs: Sequence[TrainPair]) -> int:
    """Retained attacks plus the distinct lives they are matched to."""
    return len(pairs) + len({p.live_id for p in pairs})


def best_metrics(result: TrainResult) -> dict:
    rec = result.history[result.best.epoch]
    return {k: rec[k] for k in ("val_acer", "val_accuracy", "val_auc", "val_eer")}


def sweep(config: RunConfig, taus: Sequence[float] = DEFAULT_TAU_GRID, samples=None, store=None,
          val=None) -> List[dict]:
    """Filter, train and validate once per threshold; rows come back in grid order.

    A cell that raises records the error text and the sweep moves on.
    """
    if samples is None or store is None or val is None:
        samples, store, val = synthetic_splits(config)
    rows = []
    for tau in taus:
        row = {"tau_sim": float(tau), "dataset_size": "", "n_pairs": "", "acer": "", "accuracy": "",
               "auc": "", "eer": "", "error": ""}
        try:
            pairs, _ = filter_pairs(samples, store, float(tau))
            row["dataset_size"] = dataset_size(pairs)
            row["n_pairs"] = len(pairs)
            m = best_metrics(train(samples, pairs, val, replace(config, tau_sim=float(tau))))
            row.update(acer=m["val_acer"], accuracy=m["val_accuracy"], auc=m["val_auc"], eer=m["val_eer"])
        except PairFASError as exc:
            log.error("sweep cell tau=%s failed: %s", tau, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def mean_ci(values: Sequence[float], level: float = 0.95):
    """Mean and Student-t confidence half-width (0 for a single value)."""
    x = np.asarray(values, dtype=np.float64)
    mean = float(x.mean())
    if x.size < 2:
        return mean, 0.0
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return mean, half


def ablate(config: RunConfig, k: int = 5, setups: Optional[Dict[str, Dict[str, object]]] = None):
    """Train every setup under seeds ``config.seed .. config.seed + k - 1``.

    The data split is fixed by ``config.synth``; only the training seed
    varies, so all setups see identical pairs and batch plans per seed.
    Returns ``(runs, summary)``: one record per (setup, seed) and one
    aggregate row per setup with means and 95% intervals.
    """
    setups = ABLATION_SETUPS if setups is None else setups
    data = prepare(config)
    runs = []
    for name, overrides in setups.items():
        for s in range(k):
            cfg = config.with_overrides({**overrides, "seed": config.seed + s})
            result = train(data.train, data.pairs, data.val, cfg)
            m = best_metrics(result)
            runs.append({
                "setup": name,
                "seed": cfg.seed,
                "acer": m["val_acer"],
                "accuracy": m["val_accuracy"],
                "auc": m["val_auc"],
                "eer": m["val_eer"],
                "max_mean_supcon": max(h["mean_supcon"] for h in result.history),
            })
    summary = []
    for name in setups:
        rows = [r for r in runs if r["setup"] == name]
        agg = {"setup": name, "k": len(rows)}
        for metric in ("acer", "accuracy", "auc"):
            mean, half = mean_ci([r[metric] for r in rows])
            agg[metric] = mean
            agg[f"{metric}_ci95"] = half
        summary.append(agg)
    return runs, summary


def ablation_direction(summary: Sequence[dict]) -> bool:
    """True when mean ACER is ordered full <= w/o SupCon <= w/o lives augmentations."""
    acer = {row["setup"]: row["acer"] for row in summary}
    order = list(ABLATION_SETUPS)
    return all(acer[a] <= acer[b] for a, b in zip(order, order[1:]))
