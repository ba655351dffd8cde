"""Toy detector, AdamW with warm-up cosine schedule, and the training loop.

Checkpoint file layout (all integers little-endian)::

    b"PFCK"                magic
    u32                    format version (1)
    u64                    header length in bytes
    header                 UTF-8 JSON, keys sorted: version, epoch, val_eer,
                           adam_step, rng_state, config, config_hash,
                           blocks = [{"name", "shape"}, ...]
    blocks                 each block as float64 LE, row-major, in header order

Block names are ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentConfig, apply_batch_policy, stack
from .config import ModelConfig, OptimConfig, RunConfig
from .datamodel import Sample
from .diffcore import affine, l2_normalize, rectify, sigmoid
from .errors import DataIntegrityError, DomainError, NumericalError, ParseError, TrainingError
from .losses import LossBundle, LossConfig, combined_objective
from .metrics import evaluate
from .pairmine import TrainPair
from .sampler import batches_per_epoch, epoch_seed, plan_epoch

log = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

CKPT_MAGIC = b"PFCK"
CKPT_VERSION = 1

_LAYERS = ("enc1", "enc2", "cls", "proj1", "proj2")


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------

class ToyModel:
    """Two-stage ReLU encoder with a logit head and a normalized projection head."""

    def __init__(self, input_dim: int, config: ModelConfig = ModelConfig()):
        self.input_dim = input_dim
        self.config = config
        c = config
        self.shapes = {
            "enc1": (input_dim, c.hidden),
            "enc2": (c.hidden, c.features),
            "cls": (c.features, 1),
            "proj1": (c.features, c.proj_hidden),
            "proj2": (c.proj_hidden, c.proj_dim),
        }

    def param_names(self) -> List[str]:
        return [f"{layer}.{kind}" for layer in _LAYERS for kind in ("W", "b")]

    def init_params(self, rng: np.random.Generator) -> Params:
        params: Params = {}
        for layer in _LAYERS:
            fan_in, fan_out = self.shapes[layer]
            params[f"{layer}.W"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params[f"{layer}.b"] = np.zeros(fan_out)
        # Nonzero bias keeps projection outputs away from the origin.
        params["proj2.b"] = rng.normal(0.0, 0.1, size=self.shapes["proj2"][1])
        return params

    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in self.shapes.values())

    @staticmethod
    def prepare(images) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        return 2.0 * images.reshape(images.shape[0], -1) - 1.0

    def forward(self, params: Params, x: np.ndarray):
        """Return ``(logits, raw_projections, backward)``.

        ``x`` is the flattened input (N, input_dim). ``backward(d_logits,
        d_raw)`` returns gradients for every parameter.
        """
        h1, v1 = affine(x, params["enc1.W"], params["enc1.b"])
        a1, r1 = rectify(h1)
        h2, v2 = affine(a1, params["enc2.W"], params["enc2.b"])
        feat, r2 = rectify(h2)
        logit, vc = affine(feat, params["cls.W"], params["cls.b"])
        p1, vp1 = affine(feat, params["proj1.W"], params["proj1.b"])
        pa, rp = rectify(p1)
        raw, vp2 = affine(pa, params["proj2.W"], params["proj2.b"])

        def backward(d_logits, d_raw) -> Params:
            g: Params = {}
            d_feat_c, g["cls.W"], g["cls.b"] = vc(np.asarray(d_logits).reshape(-1, 1))
            d_pa, g["proj2.W"], g["proj2.b"] = vp2(d_raw)
            d_feat_p, g["proj1.W"], g["proj1.b"] = vp1(rp(d_pa))
            d_a1, g["enc2.W"], g["enc2.b"] = v2(r2(d_feat_c + d_feat_p))
            _, g["enc1.W"], g["enc1.b"] = v1(r1(d_a1))
            return g

        return logit[:, 0], raw, backward

    def preactivations(self, params: Params, x: np.ndarray) -> List[np.ndarray]:
        """Inputs of the three rectifiers, for kink-distance checks."""
        h1 = x @ params["enc1.W"] + params["enc1.b"]
        h2 = np.maximum(h1, 0) @ params["enc2.W"] + params["enc2.b"]
        p1 = np.maximum(h2, 0) @ params["proj1.W"] + params["proj1.b"]
        return [h1, h2, p1]

    def project(self, params: Params, x: np.ndarray) -> np.ndarray:
        _, raw, _ = self.forward(params, x)
        return l2_normalize(raw)[0]

    def scores(self, params: Params, images) -> np.ndarray:
        logits, _, _ = self.forward(params, self.prepare(images))
        return sigmoid(logits)


def flatten(params: Params, names: Sequence[str]) -> np.ndarray:
    return np.concatenate([params[n].ravel() for n in names])


def unflatten(vec: np.ndarray, like: Params, names: Sequence[str]) -> Params:
    out, off = {}, 0
    for n in names:
        size = like[n].size
        out[n] = vec[off:off + size].reshape(like[n].shape)
        off += size
    return out


def objective_and_grad(model: ToyModel, params: Params, x, focal_targets, supcon_labels, loss_config: LossConfig):
    logits, raw, backward = model.forward(params, x)
    bundle, d_logits, d_raw = combined_objective(logits, raw, focal_targets, supcon_labels, loss_config)
    return bundle, backward(d_logits, d_raw)


# --------------------------------------------------------------------------
# Schedule and optimizer
# --------------------------------------------------------------------------

def warmup_steps(total_steps: int, config: OptimConfig) -> int:
    return min(math.ceil(config.warmup_fraction * total_steps), max(total_steps - 1, 0))


def lr_at(step: int, total_steps: int, config: OptimConfig = OptimConfig()) -> float:
    """Linear warm-up from 0 to ``peak_lr``, then one cosine half-cycle to ``floor_lr``.

    The peak is reached at step ``ceil(warmup_fraction * total_steps)`` and
    the floor at the final step ``total_steps - 1``.
    """
    if not 0 <= step < total_steps:
        raise DomainError(f"step {step} outside [0, {total_steps})")
    peak, floor = config.peak_lr, config.floor_lr
    w = warmup_steps(total_steps, config)
    if step < w:
        return peak * step / w
    span = total_steps - 1 - w
    if span == 0:
        return peak
    c = 0.5 * (1.0 + math.cos(math.pi * (step - w) / span))
    return peak * c + floor * (1.0 - c)


@dataclass
class AdamState:
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params: Params, grads: Params, state: AdamState, lr: float, config: OptimConfig = OptimConfig()):
    """One decoupled-weight-decay Adam update; returns ``(params, state)`` copies."""
    b1, b2, eps, wd = config.beta1, config.beta2, config.adam_epsilon, config.weight_decay
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise TrainingError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[name] = p * (1.0 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(t, new_m, new_v)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: Params
    adam: AdamState
    epoch: int
    val_eer: float
    rng_state: dict
    config: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_bytes(self) -> bytes:
        blocks = []
        for prefix, src in (("param", self.params), ("adam_m", self.adam.m), ("adam_v", self.adam.v)):
            for name in sorted(src):
                blocks.append((f"{prefix}/{name}", np.asarray(src[name], dtype="<f8")))
        header = {
            "version": CKPT_VERSION,
            "epoch": self.epoch,
            "val_eer": self.val_eer,
            "adam_step": self.adam.step,
            "rng_state": self.rng_state,
            "config": self.config,
            "config_hash": self.config_hash,
            "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(head)), head]
        parts.extend(a.tobytes() for _, a in blocks)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != CKPT_MAGIC:
            raise ParseError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack_from("<IQ", data, 4)
        if version != CKPT_VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        off = 16
        header = json.loads(data[off:off + hlen].decode("utf-8"))
        off += hlen
        groups: Dict[str, Params] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for blk in header["blocks"]:
            shape = tuple(blk["shape"])
            count = int(np.prod(shape)) if shape else 1
            if off + 8 * count > len(data):
                raise ParseError(f"checkpoint truncated in block {blk['name']}")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
            off += 8 * count
            prefix, name = blk["name"].split("/", 1)
            groups[prefix][name] = arr
        if off != len(data):
            raise DataIntegrityError("trailing bytes after checkpoint blocks")
        return cls(
            params=groups["param"],
            adam=AdamState(header["adam_step"], groups["adam_m"], groups["adam_v"]),
            epoch=header["epoch"],
            val_eer=header["val_eer"],
            rng_state=header["rng_state"],
            config=header["config"],
            config_hash=header["config_hash"],
        )

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    best: Checkpoint
    history: List[dict]
    aborted: bool = False
    final_params: Optional[Params] = None


def _labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.label.numeric for s in samples])


def _aug_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def evaluate_model(model: ToyModel, params: Params, samples: Sequence[Sample], threshold: float = 0.5):
    scores = model.scores(params, np.stack([s.image for s in samples]))
    return scores, evaluate(scores, _labels(samples), threshold)


def train(train_samples: Sequence[Sample], pairs: Sequence[TrainPair], val_samples: Sequence[Sample],
          config: RunConfig = RunConfig(), lr_fn: Optional[Callable[[int, int], float]] = None,
          config_hash: str = "") -> TrainResult:
    """Paired-batch training with selection of the lowest validation EER.

    ``lr_fn(step, total_steps)`` overrides the warm-up cosine schedule.
    Ties in validation EER keep the earlier epoch. A non-finite loss or
    gradient stops training and returns the best checkpoint so far with
    ``aborted=True``.
    """
    if not pairs:
        raise DomainError("train: no training pairs")
    val = [s for s in val_samples if s.valid]
    if not val:
        raise DomainError("train: empty validation set")
    by_id = {s.id: s for s in train_samples}
    for p in pairs:
        if p.attack_id not in by_id or p.live_id not in by_id:
            raise DataIntegrityError(f"pair ({p.attack_id}, {p.live_id}) references an unknown sample")

    opt, aug, loss_cfg = config.optim, config.augment, config.loss
    size = next(iter(by_id.values())).image.shape
    model = ToyModel(int(np.prod(size)), config.model)
    params = model.init_params(np.random.default_rng(np.random.SeedSequence([config.seed, 2])))
    adam = AdamState.zeros_like(params)
    rng = _aug_rng(config.seed)
    per_epoch = batches_per_epoch(len(pairs), opt.batch_size)
    total_steps = per_epoch * opt.epochs
    schedule = lr_fn or (lambda s, t: lr_at(s, t, opt))
    cfg_dict = config.to_dict()

    history: List[dict] = []
    best: Optional[Checkpoint] = None
    step = 0
    aborted = False
    for epoch in range(opt.epochs):
        t0 = time.perf_counter()
        plans = plan_epoch(pairs, opt.batch_size, epoch_seed(config.seed, epoch))
        sums = np.zeros(3)
        lr = 0.0
        degenerate = 0
        try:
            for plan in plans:
                batch = [by_id[i] for i in plan.flat_ids]
                mixed = apply_batch_policy(batch, aug, rng)
                images, targets, labels = stack(mixed)
                bundle, grads = objective_and_grad(model, params, model.prepare(images), targets, labels, loss_cfg)
                if not math.isfinite(bundle.total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
                degenerate += bundle.supcon_degenerate
                lr = schedule(step, total_steps)
                params, adam = adamw_step(params, grads, adam, lr, opt)
                sums += (bundle.focal, bundle.supcon, bundle.total)
                step += 1
        except NumericalError as exc:  # includes TrainingError
            if best is None:
                raise
            log.error("training aborted: %s", exc)
            aborted = True
            break
        _, report = evaluate_model(model, params, val)
        means = sums / len(plans)
        record = {
            "epoch": epoch,
            "mean_focal": float(means[0]),
            "mean_supcon": float(means[1]),
            "mean_total": float(means[2]),
            "val_eer": report.eer,
            "val_acer": report.acer,
            "val_auc": report.auc,
            "val_accuracy": report.accuracy,
            "lr_last": lr,
            "n_batches": len(plans),
            "supcon_active": loss_cfg.supcon_weight > 0,
            "cutmix_active": aug.cutmix_prob > 0,
            "live_augment": aug.live_augment,
            "supcon_degenerate_batches": degenerate,
        }
        history.append(record)
        log.info("epoch %d  loss %.4f  val EER %.4f  ACER %.4f  (%.1fs)", epoch, means[2], report.eer,
                 report.acer, time.perf_counter() - t0)
        if best is None or report.eer < best.val_eer:
            best = Checkpoint(
                params={k: v.copy() for k, v in params.items()},
                adam=AdamState(adam.step, {k: v.copy() for k, v in adam.m.items()},
                               {k: v.copy() for k, v in adam.v.items()}),
                epoch=epoch, val_eer=report.eer, rng_state=rng.bit_generator.state,
                config=cfg_dict, config_hash=config_hash,
            )
    return TrainResult(best, history, aborted, params)


def write_history(path, history: Sequence[dict], meta: Optional[dict] = None):
    with Path(path).open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
