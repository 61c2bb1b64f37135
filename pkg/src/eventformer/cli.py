"""Command-line pipeline: simulate -> augment -> pretrain -> finetune -> evaluate.

Every command accepts ``--config FILE`` (flat ``key = value`` lines, ``#``
comments) and repeated ``--set key=value`` overrides. The resolved
configuration is written next to the command's outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import EncoderConfig, EncoderModel, represent
from .finetune import FinetuneConfig, FinetuneHead, evaluate, finetune, make_pairs, predict_pairs
from .generators import get_model, loglik, simulate
from .pretrain import PretrainConfig, pretrain
from .seeding import resolve_seed, stream
from .streams import (AugmentedSequence, EventSequence, MaskPolicy, apply_mask, augment_plain, dumps_jsonl,
                      inject_voids, load_jsonl, rescale, split)
from .tensor import checkpoint

log = logging.getLogger("eventformer")


class UsageError(ValueError):
    """Bad configuration or inputs; reported without a traceback."""


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class Key:
    kind: type
    default: object

    def parse(self, name: str, raw: str):
        raw = raw.strip()
        try:
            if self.kind is bool:
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "1", "yes")
            if self.kind is tuple:
                return tuple(float(v) for v in raw.replace(",", " ").split())
            if self.kind is list:
                return tuple(int(v) for v in raw.replace(",", " ").split())
            return self.kind(raw)
        except ValueError:
            raise UsageError(f"config key {name!r}: cannot parse {raw!r} as {self.kind.__name__}") from None


KEYS: dict[str, Key] = {
    "seed": Key(int, None),
    "profile": Key(str, "desk"),
    "time_scale": Key(str, "none"),
    "encoder.d_model": Key(int, None),
    "encoder.n_blocks": Key(int, None),
    "encoder.n_heads": Key(int, None),
    "encoder.d_ff": Key(int, None),
    "encoder.dropout": Key(float, 0.1),
    "encoder.max_len": Key(int, 4096),
    "void.enabled": Key(bool, True),
    "void.count_per_gap": Key(int, 1),
    "mask.strategy": Key(str, "independent"),
    "mask.fraction": Key(float, 0.15),
    "mask.mean_run_length": Key(float, 3.0),
    "pretrain.gamma": Key(float, 1.0),
    "pretrain.lam": Key(float, 0.01),
    "pretrain.omega": Key(float, 1.0),
    "pretrain.batch_size": Key(int, 16),
    "pretrain.lr": Key(float, 1e-4),
    "pretrain.max_epochs": Key(int, 100),
    "pretrain.patience": Key(int, 5),
    "pretrain.train_fraction": Key(float, 0.75),
    "finetune.alpha": Key(float, 0.01),
    "finetune.lrs": Key(tuple, (0.001, 0.002)),
    "finetune.batch_size": Key(int, 32),
    "finetune.max_epochs": Key(int, 100),
    "finetune.patience": Key(int, 10),
    "finetune.hidden": Key(list, (512, 512, 512)),
    "finetune.time_target": Key(str, "absolute"),
    "finetune.train_fraction": Key(float, 0.6),
    "finetune.dev_fraction": Key(float, 0.2),
}

PROFILES = {
    "desk": {"encoder.d_model": 32, "encoder.n_blocks": 2, "encoder.n_heads": 2, "encoder.d_ff": 64},
    "full": {"encoder.d_model": 512, "encoder.n_blocks": 4, "encoder.n_heads": 4, "encoder.d_ff": 1024},
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = KEYS[key].parse(key, value)
    return out


def resolve_config(path: str | None, overrides: list[str], flags: dict) -> dict:
    cfg = {k: v.default for k, v in KEYS.items()}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        cfg.update(parse_config_text(text, path))
    for item in overrides:
        cfg.update(parse_config_text(item, "--set"))
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if cfg["profile"] not in PROFILES:
        raise UsageError(f"unknown profile {cfg['profile']!r}; choose from {sorted(PROFILES)}")
    for k, v in PROFILES[cfg["profile"]].items():
        if cfg[k] is None:
            cfg[k] = v
    if cfg["time_scale"] not in ("none", "horizon"):
        raise UsageError("time_scale must be 'none' or 'horizon'")
    cfg["seed"] = resolve_seed(cfg["seed"])
    return cfg


def format_config(cfg: dict, extra: dict | None = None) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(repr(x) for x in v)
        return str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)

    lines = [f"# eventformer {__version__} resolved configuration"]
    lines += [f"# {k} = {v}" for k, v in sorted((extra or {}).items())]
    lines += [f"{k} = {fmt(v)}" for k, v in sorted(cfg.items())]
    return "\n".join(lines) + "\n"


def write_resolved(cfg: dict, path: Path, extra: dict | None = None) -> None:
    path.write_text(format_config(cfg, extra), encoding="utf-8")


def encoder_config(cfg: dict, label_count: int) -> EncoderConfig:
    return EncoderConfig(label_count, cfg["encoder.d_model"], cfg["encoder.n_blocks"], cfg["encoder.n_heads"],
                         cfg["encoder.d_ff"], cfg["encoder.dropout"], cfg["encoder.max_len"])


def mask_policy(cfg: dict) -> MaskPolicy:
    return MaskPolicy(cfg["mask.strategy"], cfg["mask.fraction"], cfg["mask.mean_run_length"])


def pretrain_config(cfg: dict) -> PretrainConfig:
    return PretrainConfig(cfg["pretrain.gamma"], cfg["pretrain.lam"], cfg["pretrain.omega"], mask_policy(cfg),
                          cfg["pretrain.batch_size"], cfg["pretrain.lr"], cfg["pretrain.max_epochs"],
                          cfg["pretrain.patience"], cfg["seed"])


def finetune_config(cfg: dict) -> FinetuneConfig:
    return FinetuneConfig(cfg["finetune.alpha"], cfg["finetune.lrs"], cfg["finetune.batch_size"],
                          cfg["finetune.max_epochs"], cfg["finetune.patience"], cfg["finetune.hidden"],
                          cfg["finetune.time_target"], cfg["seed"])


# ---------------------------------------------------------------- io helpers

def _load(path) -> list:
    try:
        return load_jsonl(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _raw(dataset: list) -> list[EventSequence]:
    return [s.source() if isinstance(s, AugmentedSequence) else s for s in dataset]


def _label_count(dataset: list, what: str) -> int | None:
    ms = {s.label_count for s in dataset}
    if len(ms) > 1:
        raise UsageError(f"{what}: sequences declare different label counts {sorted(ms)}")
    return ms.pop() if ms else None


def _scaled(seq: EventSequence, cfg: dict) -> EventSequence:
    return rescale(seq) if cfg["time_scale"] == "horizon" else seq


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_jsonl(path: Path, records) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records),
                    encoding="utf-8")


def _load_encoder(path) -> tuple[EncoderModel, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "encoder.ckpt"
    try:
        tensors, meta = checkpoint.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if meta.get("kind") != "encoder":
        raise UsageError(f"{path} is not an encoder checkpoint")
    return EncoderModel(EncoderConfig(**meta["encoder"]), params=tensors), meta


def _guard_m(model: EncoderModel, data_m: int | None, path) -> None:
    m = model.config.label_count
    if data_m is not None and data_m != m:
        raise UsageError(f"label count mismatch: encoder was pretrained with M={m} but {path} declares M={data_m} "
                         "(pretraining and fine-tuning data must share one label vocabulary)")


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg) -> None:
    params = get_model(args.family, args.model)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    seqs = [simulate(params, stream(cfg["seed"], "simulation", k)) for k in range(args.count)]
    out = Path(args.out)
    out.write_text(dumps_jsonl(seqs), encoding="utf-8")
    write_resolved(cfg, Path(f"{out}.config"), {"command": "simulate", "family": args.family, "model": args.model,
                                               "count": args.count})
    print(f"wrote {len(seqs)} sequences to {out}")


def cmd_augment(args, cfg) -> None:
    data = _raw(_load(args.inp))
    policy = mask_policy(cfg)
    out = []
    for k, seq in enumerate(data):
        seq = _scaled(seq, cfg)
        if cfg["void.enabled"]:
            aug = inject_voids(seq, stream(cfg["seed"], "void", k), cfg["void.count_per_gap"])
        else:
            aug = augment_plain(seq)
        out.append(apply_mask(aug, stream(cfg["seed"], "masking", k), policy))
    Path(args.out).write_text(dumps_jsonl(out), encoding="utf-8")
    write_resolved(cfg, Path(f"{args.out}.config"), {"command": "augment", "in": args.inp})
    n = sum(len(a) for a in out)
    print(f"wrote {len(out)} augmented sequences ({n} epochs, {sum(int(a.is_masked.sum()) for a in out)} masked)")


def cmd_pretrain(args, cfg) -> None:
    data = _load(args.data)
    if any(not isinstance(s, AugmentedSequence) for s in data):
        raise UsageError(f"{args.data}: pretraining needs augmented sequences (run `eventformer augment` first)")
    if args.dev:
        train, dev = data, _load(args.dev)
        if any(not isinstance(s, AugmentedSequence) for s in dev):
            raise UsageError(f"{args.dev}: dev data must be augmented")
    else:
        if len(data) < 2:
            raise UsageError("need at least two sequences to form train and dev splits")
        train, dev = split(data, stream(cfg["seed"], "split"), cfg["pretrain.train_fraction"])
    m = _label_count([*train, *dev], "pretraining data")
    model = EncoderModel(encoder_config(cfg, m), rng=stream(cfg["seed"], "init"))
    result = pretrain(train, dev, model, pretrain_config(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"kind": "encoder", "encoder": model.config.to_dict(), "best_epoch": result.best_epoch,
            "time_scale": cfg["time_scale"]}
    checkpoint.save(out / "encoder.ckpt", model.state_dict(), meta)
    checkpoint.save(out / "heads.ckpt", result.heads.state_dict(), {"kind": "pretrain-heads", "label_count": m})
    _write_jsonl(out / "log.jsonl", [r.to_dict() for r in result.log])
    summary = {"best_epoch": result.best_epoch, "best_dev_event": result.best_dev, "epochs_run": len(result.log),
               "stopped_early": result.stopped_early, "skipped": result.skipped, "n_train": len(train),
               "n_dev": len(dev), "n_parameters": model.n_parameters()}
    (out / "summary.json").write_text(_dump_json(summary), encoding="utf-8")
    write_resolved(cfg, out / "run.config", {"command": "pretrain", "data": args.data, "dev": args.dev})
    print(_dump_json(summary), end="")


def _pair_records(pairs, t_hat, y_hat, origin):
    pred, truth = [], []
    for j in range(len(pairs)):
        k, i = origin[j]
        base = {"seq": int(k), "index": int(i), "t_last": float(pairs.t_last[j])}
        pred.append({**base, "t": float(t_hat[j]), "y": int(y_hat[j])})
        truth.append({**base, "t": float(pairs.t_next[j]), "y": int(pairs.y_next[j])})
    return pred, truth


def cmd_finetune(args, cfg) -> None:
    model, meta = _load_encoder(args.encoder)
    data = [_scaled(s, cfg) for s in _raw(_load(args.data))]
    _guard_m(model, _label_count(data, str(args.data)), args.data)
    if meta.get("time_scale", "none") != cfg["time_scale"]:
        log.warning("time_scale differs from the encoder's pretraining run (%s)", meta.get("time_scale"))
    ft = finetune_config(cfg)
    indexed = list(enumerate(data))
    train, rest = split(indexed, stream(cfg["seed"], "split"), cfg["finetune.train_fraction"])
    dev_share = cfg["finetune.dev_fraction"] / max(1.0 - cfg["finetune.train_fraction"], 1e-12)
    if len(rest) < 2:
        raise UsageError("not enough sequences for dev and test splits")
    dev, test = split(rest, stream(cfg["seed"], "split", 1), dev_share)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    pairs = {name: make_pairs(model, [s for _, s in part]) for name, part in (("train", train), ("dev", dev), ("test", test))}
    result = finetune(pairs["train"], pairs["dev"], model.config.d_model, model.config.label_count, ft)
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items()), "encoder weights changed"
    test_pairs = pairs["test"]
    if len(test_pairs) == 0:
        raise UsageError("test split has no next-event pairs")
    t_hat, y_hat = predict_pairs(result.head, test_pairs, ft.time_target)
    origin = [(k, i) for k, s in test for i in range(len(s) - 1)]
    pred, truth = _pair_records(test_pairs, t_hat, y_hat, origin)
    metrics = evaluate(t_hat, y_hat, test_pairs.t_next, test_pairs.y_next, test_pairs.t_last, ft.time_target)
    vals, counts = np.unique(pairs["train"].y_next, return_counts=True)
    majority = int(vals[counts.argmax()])
    metrics.update({"lr": result.lr, "best_dev": result.best_dev, "time_scale": cfg["time_scale"],
                    "majority_label": majority,
                    "majority_accuracy": float(np.mean(test_pairs.y_next == majority))})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    head_meta = {"kind": "finetune-head", "d_model": model.config.d_model, "label_count": model.config.label_count,
                 "hidden": list(ft.hidden), "time_target": ft.time_target, "lr": result.lr}
    checkpoint.save(out / "head.ckpt", result.head.state_dict(), head_meta)
    _write_jsonl(out / "log.jsonl", [r.to_dict() for r in result.log])
    _write_jsonl(out / "predictions.jsonl", pred)
    _write_jsonl(out / "truth.jsonl", truth)
    (out / "metrics.json").write_text(_dump_json(metrics), encoding="utf-8")
    write_resolved(cfg, out / "run.config", {"command": "finetune", "data": args.data, "encoder": args.encoder})
    print(_dump_json(metrics), end="")


def _read_pairs(path) -> list[dict]:
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    rows.append({"t": float(rec["t"]), "y": int(rec["y"]), "t_last": rec.get("t_last")})
                except (ValueError, KeyError, TypeError) as exc:
                    raise UsageError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return rows


def cmd_evaluate(args, cfg) -> None:
    pred, truth = _read_pairs(args.predictions), _read_pairs(args.truth)
    if len(pred) != len(truth):
        raise UsageError(f"{len(pred)} predictions but {len(truth)} truth records")
    mode = cfg["finetune.time_target"]
    t_last = None
    if mode == "gap":
        if any(r["t_last"] is None for r in truth):
            raise UsageError("gap mode needs t_last in the truth records")
        t_last = [r["t_last"] for r in truth]
    metrics = evaluate([r["t"] for r in pred], [r["y"] for r in pred], [r["t"] for r in truth],
                       [r["y"] for r in truth], t_last, mode)
    if args.out:
        Path(args.out).write_text(_dump_json(metrics), encoding="utf-8")
        write_resolved(cfg, Path(f"{args.out}.config"), {"command": "evaluate", "predictions": args.predictions,
                                                        "truth": args.truth})
    print(_dump_json(metrics), end="")


def cmd_embed(args, cfg) -> None:
    model, _ = _load_encoder(args.encoder)
    data = [_scaled(s, cfg) for s in _raw(_load(args.data))]
    _guard_m(model, _label_count(data, str(args.data)), args.data)
    _write_jsonl(Path(args.out), ({"seq": k, "H": represent(model, s).tolist()} for k, s in enumerate(data)))
    write_resolved(cfg, Path(f"{args.out}.config"), {"command": "embed", "data": args.data, "encoder": args.encoder})
    print(f"wrote representations for {len(data)} sequences to {args.out}")


def cmd_loglik(args, cfg) -> None:
    params = get_model(args.family, args.model)
    data = _raw(_load(args.data))
    m = _label_count(data, str(args.data))
    if m is not None and m != params.dim:
        raise UsageError(f"{args.data} declares M={m} but {args.family} model {args.model} has {params.dim} labels")
    values = [float(loglik(params, s)) for s in data]
    records = [{"seq": k, "loglik": v, "n_events": len(s)} for k, (s, v) in enumerate(zip(data, values))]
    if args.out:
        _write_jsonl(Path(args.out), records)
        write_resolved(cfg, Path(f"{args.out}.config"), {"command": "loglik", "family": args.family,
                                                        "model": args.model, "data": args.data})
    summary = {"n_sequences": len(values), "mean_loglik": float(np.mean(values)) if values else None,
               "all_finite": bool(np.all(np.isfinite(values)))}
    print(_dump_json(summary), end="")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventformer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help="master seed (falls back to EVENTFORMER_SEED, then 0)")
        return p

    p = common(sub.add_parser("simulate", help="sample sequences from a registry model"))
    p.add_argument("--family", required=True, choices=("hawkes", "pgem"))
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("augment", help="inject void events and mask epochs"))
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", choices=("independent", "geometric"))
    p.add_argument("--fraction", type=float)
    p.add_argument("--mean-run-length", type=float)
    p.add_argument("--no-void", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = common(sub.add_parser("pretrain", help="masked event model pretraining"))
    p.add_argument("--data", required=True, help="augmented JSON Lines")
    p.add_argument("--dev", help="augmented dev set (default: split --data)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.set_defaults(func=cmd_pretrain)

    p = common(sub.add_parser("finetune", help="train the next-event head on frozen representations"))
    p.add_argument("--encoder", required=True, help="encoder checkpoint or pretrain output directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_finetune)

    p = common(sub.add_parser("evaluate", help="time RMSE and type accuracy of a predictions file"))
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--target-mode", choices=("absolute", "gap"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("embed", help="export per-event representations"))
    p.add_argument("--encoder", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = common(sub.add_parser("loglik", help="score sequences under a registry model"))
    p.add_argument("--family", required=True, choices=("hawkes", "pgem"))
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loglik)
    return parser


def _flags(args) -> dict:
    flags = {"seed": args.seed}
    if args.command == "augment":
        flags.update({"mask.strategy": args.mask, "mask.fraction": args.fraction,
                      "mask.mean_run_length": args.mean_run_length})
        if args.no_void:
            flags["void.enabled"] = False
    elif args.command == "pretrain":
        flags["profile"] = args.profile
    elif args.command == "evaluate":
        flags["finetune.time_target"] = args.target_mode
    return flags


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, args.set, _flags(args))
        args.func(args, cfg)
    except (UsageError, ValueError, KeyError, checkpoint.CheckpointError) as exc:
        print(f"eventformer {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
