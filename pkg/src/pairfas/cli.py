"""Command-line front end: ``pairfas <command> [options]``.

Every config key is also a flag named after its dotted path, for example
``--loss.supcon_weight 0`` or ``--optim.epochs 5``. Flags override values
loaded with ``--config``. Exit codes: 0 success, 2 configuration error,
3 data-integrity or I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import CITATIONS, RunConfig, load_config
from .datamodel import (
    generate_synthetic,
    load_embeddings,
    load_manifest,
    validation_config,
    write_embeddings_binary,
    write_embeddings_jsonl,
    write_manifest,
)
from .errors import ConfigError, DataIntegrityError, NumericalError, PairFASError
from .gradcheck import SUITES, run_suite
from .metrics import evaluate, read_scores_csv, roc_polyline, roc_svg, write_scores_csv
from .pairmine import filter_pairs, write_pairs
from .pipeline import DEFAULT_TAU_GRID, ablate, ablation_direction, dataset_size, sweep, synthetic_splits
from .trainer import Checkpoint, ToyModel, train, write_history

log = logging.getLogger("pairfas")

CHECKPOINT_NAME = "checkpoint.pfck"


# --------------------------------------------------------------------------
# Config flags
# --------------------------------------------------------------------------

def _flatten(d: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k != "attacks_per_identity_per_category":
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_json_object(text: str) -> dict:
    try:
        value = json.loads(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a JSON object: {exc}") from None
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return value


def add_config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("configuration (defaults in brackets)")
    group.add_argument("--config", metavar="PATH", help="JSON config document; flags below override it")
    for key, default in _flatten(RunConfig().to_dict()).items():
        note = CITATIONS.get(key)
        help_text = f"[{default}] {note or 'toolkit setting'}".replace("%", "%%")
        kw: Dict[str, Any] = {"dest": f"cfg:{key}", "default": None, "help": help_text,
                              "metavar": key.split(".")[-1].upper()}
        if isinstance(default, bool):
            kw["type"] = _parse_bool
        elif isinstance(default, (list, tuple)):
            kw["type"] = type(default[0])
            kw["nargs"] = 2
        elif isinstance(default, dict):
            kw["type"] = _parse_json_object
        else:
            kw["type"] = type(default)
        group.add_argument(f"--{key}", **kw)


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    overrides = config_overrides(args)
    return base.with_overrides(overrides) if overrides else base


def _meta(command: str, config: RunConfig, **extra) -> dict:
    return {"command": command, "config_hash": config.hash(), "seed": config.seed, "version": __version__, **extra}


def _header_line(meta: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in meta.items())


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(args, config: RunConfig):
    """(train samples, embeddings, validation samples) from files or the generator."""
    if args.manifest is None:
        if args.embeddings is not None or args.val_manifest is not None:
            raise ConfigError("--embeddings/--val-manifest need --manifest")
        return synthetic_splits(config)
    if args.embeddings is None:
        raise ConfigError("--manifest needs --embeddings")
    samples = load_manifest(args.manifest)
    store = load_embeddings(args.embeddings, manifest_ids=[s.id for s in samples])
    if store.stale_count:
        log.warning("%d embeddings have no manifest entry", store.stale_count)
    val = load_manifest(args.val_manifest) if args.val_manifest else None
    return samples, store, val


def _write_csv(path: Path, rows: Sequence[dict], header: str):
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_synth(args, config: RunConfig) -> int:
    out = _out_dir(args)
    meta = _meta("synth", config)
    samples, store = generate_synthetic(config.synth)
    val, _ = generate_synthetic(validation_config(config.synth, config.n_val_identities))
    write_manifest(out / "manifest.jsonl", samples, meta=meta)
    write_manifest(out / "val_manifest.jsonl", val, meta=meta)
    write_embeddings_jsonl(out / "embeddings.jsonl", store, meta=meta)
    write_embeddings_binary(out / "embeddings.bin", store)
    _write_json(out / "config.json", config.to_dict())
    n_live = sum(s.is_live for s in samples)
    print(f"wrote {len(samples)} samples ({n_live} live, {len(samples) - n_live} attack), "
          f"{len(val)} validation samples, {len(store)} embeddings of dim {store.dim} to {out}")
    return 0


def cmd_filter(args, config: RunConfig) -> int:
    out = _out_dir(args)
    samples, store, _ = _load_data(args, config)
    pairs, report = filter_pairs(samples, store, config.tau_sim)
    meta = _meta("filter", config)
    write_pairs(out / "pairs.jsonl", pairs, meta=meta)
    _write_json(out / "report.json", {"_meta": meta, **report.to_dict(), "dataset_size": dataset_size(pairs)})
    print(report.table())
    return 0


def cmd_sweep(args, config: RunConfig) -> int:
    out = _out_dir(args)
    samples, store, val = _load_data(args, config)
    if val is None:
        raise ConfigError("sweep with --manifest needs --val-manifest")
    rows = sweep(config, args.taus, samples, store, val)
    _write_csv(out / "sweep.csv", rows, _header_line(_meta("sweep", config)))
    for r in rows:
        status = r["error"] or f"size={r['dataset_size']} acer={r['acer']:.4f} auc={r['auc']:.4f}"
        print(f"tau={r['tau_sim']:.2f}  {status}")
    return 0


def cmd_train(args, config: RunConfig) -> int:
    out = _out_dir(args)
    samples, store, val = _load_data(args, config)
    if val is None:
        raise ConfigError("train with --manifest needs --val-manifest")
    pairs, report = filter_pairs(samples, store, config.tau_sim)
    meta = _meta("train", config)
    write_pairs(out / "pairs.jsonl", pairs, meta=meta)
    _write_json(out / "filter_report.json", {"_meta": meta, **report.to_dict()})
    _write_json(out / "config.json", config.to_dict())
    t0 = time.perf_counter()
    result = train(samples, pairs, val, config, config_hash=config.hash())
    write_history(out / "history.jsonl", result.history, meta=meta)
    result.best.save(out / CHECKPOINT_NAME)
    best = result.history[result.best.epoch]
    print(f"best epoch {result.best.epoch}: val EER {best['val_eer']:.4f}  ACER {best['val_acer']:.4f}  "
          f"AUC {best['val_auc']:.4f}  ({time.perf_counter() - t0:.1f}s)")
    if result.aborted:
        print("training diverged; kept the last good checkpoint", file=sys.stderr)
        return NumericalError.exit_code
    return 0


def _eval_config(args, ck: Checkpoint) -> RunConfig:
    """Checkpoint config, unless flags disagree with it (refused without --force)."""
    stored = RunConfig.from_dict(ck.config)
    if not args.config and not config_overrides(args):
        return stored
    requested = resolve_config(args)
    if requested.hash() != ck.config_hash and not args.force:
        raise ConfigError(
            f"config hash {requested.hash()} differs from checkpoint's {ck.config_hash}; pass --force to proceed"
        )
    return stored


def cmd_eval(args, config: Optional[RunConfig]) -> int:
    out = _out_dir(args)
    if (args.scores is None) == (args.checkpoint is None):
        raise ConfigError("eval needs exactly one of --checkpoint or --scores")
    if args.scores is not None:
        ids, scores, labels = read_scores_csv(args.scores)
        meta = {"command": "eval", "source": str(args.scores), "version": __version__}
    else:
        ck = Checkpoint.load(args.checkpoint)
        cfg = _eval_config(args, ck)
        if args.manifest is not None:
            samples = [s for s in load_manifest(args.manifest) if s.valid]
        else:
            _, _, samples = synthetic_splits(cfg)
            samples = [s for s in samples if s.valid]
        if not samples:
            raise DataIntegrityError("no valid samples to evaluate")
        images = np.stack([s.image for s in samples])
        model = ToyModel(int(np.prod(images.shape[1:])), cfg.model)
        missing = set(model.param_names()) - set(ck.params)
        if missing:
            raise DataIntegrityError(f"checkpoint lacks parameters {sorted(missing)}")
        scores = model.scores(ck.params, images)
        ids = [s.id for s in samples]
        labels = np.array([s.label.numeric for s in samples])
        meta = _meta("eval", cfg, checkpoint_hash=ck.config_hash, checkpoint_epoch=ck.epoch)
    report = evaluate(scores, labels, args.threshold)
    at_eer = evaluate(scores, labels, report.eer_threshold)
    points = roc_polyline(scores, labels)
    payload = {
        "_meta": meta,
        "report": report.to_dict(),
        "at_eer_threshold": at_eer.to_dict(),
        "roc": [list(p) for p in points],
    }
    _write_json(out / "report.json", payload)
    write_scores_csv(out / "scores.csv", ids, scores, labels, header=_header_line(meta))
    (out / "roc.svg").write_text(roc_svg(points), encoding="utf-8")
    print(f"threshold {report.threshold:g}: APCER {report.apcer:.4f}  BPCER {report.bpcer:.4f}  "
          f"ACER {report.acer:.4f}  accuracy {report.accuracy:.4f}")
    print(f"EER {report.eer:.4f} at threshold {report.eer_threshold:.4f}  AUC {report.auc:.4f}")
    return 0


def cmd_ablate(args, config: RunConfig) -> int:
    if args.k < 1:
        raise ConfigError("--k must be >= 1")
    out = _out_dir(args)
    runs, summary = ablate(config, args.k)
    header = _header_line(_meta("ablate", config, k=args.k))
    _write_csv(out / "ablation.csv", summary, header)
    _write_csv(out / "ablation_runs.csv", runs, header)
    for row in summary:
        print(f"{row['setup']:<26} ACER {row['acer']:.4f} +- {row['acer_ci95']:.4f}  "
              f"acc {row['accuracy']:.4f}  AUC {row['auc']:.4f}")
    if not ablation_direction(summary):
        print("note: mean ACER is not ordered full <= w/o SupCon <= w/o lives augmentations on this data")
    return 0


def cmd_gradcheck(args, config: Optional[RunConfig]) -> int:
    ok = True
    for name in args.suites or list(SUITES):
        t0 = time.perf_counter()
        res = run_suite(name, args.cases, args.seed)
        ok &= res.passed
        print(f"{'PASS' if res.passed else 'FAIL'}  {name:<20} cases={res.cases}  worst={res.worst:.2e}  "
              f"tol={res.tolerance:g}  ({time.perf_counter() - t0:.1f}s)")
    return 0 if ok else NumericalError.exit_code


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _data_flags(p: argparse.ArgumentParser, val: bool = True):
    p.add_argument("--manifest", help="training manifest (JSONL); omitted = synthetic data from the config")
    p.add_argument("--embeddings", help="embeddings for --manifest (JSONL or EMB1 binary)")
    if val:
        p.add_argument("--val-manifest", dest="val_manifest", help="validation manifest")
    else:
        p.set_defaults(val_manifest=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairfas", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with embeddings")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filter", help="mine live/attack pairs above the similarity threshold")
    p.add_argument("--out", required=True)
    _data_flags(p, val=False)
    add_config_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sweep", help="filter, train and validate over a threshold grid")
    p.add_argument("--out", required=True)
    p.add_argument("--taus", type=float, nargs="+", default=list(DEFAULT_TAU_GRID),
                   help="threshold grid [0.84 .. 0.91 step 0.01]")
    _data_flags(p)
    add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train and keep the checkpoint with the lowest validation EER")
    p.add_argument("--out", required=True)
    _data_flags(p)
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset with a checkpoint, or evaluate a scores CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--scores", help="CSV with id,score,label rows")
    p.add_argument("--manifest", help="samples to score; omitted = the checkpoint config's validation split")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold on the live score [0.5]")
    p.add_argument("--force", action="store_true", help="evaluate even if flags disagree with the checkpoint config")
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="full vs w/o SupCon vs w/o live augmentation over k seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5, help="number of seeds [5]")
    add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference verification of every gradient")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suites", nargs="+", choices=list(SUITES))
    p.set_defaults(func=cmd_gradcheck, no_config=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "no_config", False):
            config = None
        elif args.command == "eval" and args.checkpoint is not None:
            config = None  # resolved against the checkpoint
        else:
            config = resolve_config(args)
        return args.func(args, config)
    except PairFASError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataIntegrityError.exit_code


if __name__ == "__main__":
    sys.exit(main())
