"""Command-line entry point: ``predict-cluster <command> [options]``.

Every command writes into ``--out`` using fixed file names. Settings come
from an optional JSON config (``--config``) and are overridden by flags.

Exit codes: 0 success, 2 usage or config error, 3 training divergence,
4 I/O or input-data failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .features import (
    bottleneck,
    evaluate,
    extract_features,
    pca_project,
    records_from,
    split_records,
    stack,
    train_autoencoder,
)
from .model import DivergenceError, ModelDims, encode, init_params
from .skeleton import (
    NormStats,
    SequenceError,
    load_dataset,
    load_processed,
    preprocess,
    save_processed,
    write_dataset,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, hyperparam_search, train

log = logging.getLogger("predict_cluster")

SCHEMA = "predict-cluster-config/1"

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

CHECKPOINT = "checkpoint.bin"
AEC_CHECKPOINT = "aec.bin"
TRAINLOG = "trainlog.csv"
CONFUSION = "confusion.csv"
FEATURES = "features.csv"
PCA = "pca.csv"
HPSEARCH = "hpsearch.json"
NORMSTATS = "normstats.json"
METRICS = "metrics.json"
PROCESSED = "processed.npz"
MANIFEST = "manifest.json"

DEFAULTS = {
    "schema": SCHEMA,
    "seed": 0,
    "out": "out",
    "threads": 1,
    "synthetic": {"classes": 4, "per_class": 50, "frames": 50, "joints": 15, "noise": 0.5,
                  "train_fraction": 0.7, "randomize_camera": True},
    "preprocess": {"manifest": None, "t_max": 50, "norm_mode": "global", "stats": None,
                   "view_invariant": True},
    "model": {"hidden": 1024, "layers": 3, "strategy": "FW", "recurrent_gain": None},
    "train": {"data": None, "init": None},  # plus any TrainConfig field
    "eval": {"data": None, "checkpoint": None, "features": "raw", "k": 1, "pca": False,
             "aec_epochs": 100, "aec_lr": 1e-3},
    "hpsearch": {"data": None, "space": [{"hidden": 4}, {"hidden": 256}]},
}

_TRAIN_FIELDS = set(TrainConfig.__dataclass_fields__)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        allowed = set(base) | (_TRAIN_FIELDS if where == "train" else set())
        if k not in allowed:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{k}")
        if isinstance(base.get(k), dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config section {k} must be an object")
            out[k] = _merge(base[k], v, k)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    """Defaults merged with a JSON config file (if any); validates the schema tag."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: schema must be {SCHEMA!r}, got {raw.get('schema')!r}")
    return _merge(DEFAULTS, raw)


def _override(cfg: dict, section: str, args, mapping: dict) -> None:
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg[section][key] = v


def _train_config(cfg: dict) -> TrainConfig:
    d = {k: v for k, v in cfg["train"].items() if k in _TRAIN_FIELDS}
    d.setdefault("seed", cfg["seed"])
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc


def _model_dims(cfg: dict, input_dim: int) -> ModelDims:
    m = cfg["model"]
    try:
        return ModelDims(input_dim=input_dim, hidden=int(m["hidden"]), layers=int(m["layers"]),
                         strategy=str(m["strategy"]))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _set_threads(n: int):
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_path(cfg: dict, section: str, out: Path) -> Path:
    p = cfg[section].get("data")
    return Path(p) if p else out / PROCESSED


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: dict) -> int:
    s = cfg["synthetic"]
    try:
        spec = SyntheticSpec(seed=cfg["seed"], **s)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synthetic: {exc}") from exc
    out = _out_dir(cfg)
    ds = generate_synthetic(spec)
    mpath = write_dataset(ds, out)
    print(f"wrote {len(ds)} sequences and {mpath}")
    return EXIT_OK


def cmd_preprocess(cfg: dict) -> int:
    p = cfg["preprocess"]
    if p["norm_mode"] not in ("global", "axis"):
        raise ConfigError("norm_mode must be 'global' or 'axis'")
    if int(p["t_max"]) < 1:
        raise ConfigError("t_max must be >= 1")
    out = _out_dir(cfg)
    manifest = Path(p["manifest"]) if p["manifest"] else out / MANIFEST
    ds = load_dataset(manifest)
    stats = None
    if p["stats"]:
        stats = NormStats.from_dict(json.loads(Path(p["stats"]).read_text()))
    proc, stats, skipped = preprocess(ds, t_max=int(p["t_max"]), norm_mode=p["norm_mode"],
                                      stats=stats, view_invariant=bool(p["view_invariant"]))
    for sid in skipped:
        print(f"warning: skipped sequence {sid}: degenerate pose in frame 0", file=sys.stderr)
    if skipped:
        print(f"warning: {len(skipped)} of {len(ds)} sequences skipped", file=sys.stderr)
    if not proc.sequences:
        raise SequenceError("no usable sequences left after preprocessing")
    save_processed(proc, out / PROCESSED)
    _write_text(out / NORMSTATS, json.dumps(stats.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"processed {len(proc)} sequences ({len(skipped)} skipped) -> {out / PROCESSED}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    tcfg = _train_config(cfg)
    ds = load_processed(_dataset_path(cfg, "train", out))
    X, _ = ds.arrays()
    init = cfg["train"].get("init")
    if init:
        model = checkpoint.load_model(init)
    else:
        dims = _model_dims(cfg, X.shape[2])
        gain = cfg["model"]["recurrent_gain"]
        try:
            model = init_params(dims, cfg["seed"], recurrent_gain=None if gain is None else float(gain))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc

    def progress(it, loss, tlog):
        if (it + 1) % 100 == 0 or it + 1 == tcfg.iterations:
            acc = f" acc {tlog.accuracy[-1]:.4f}" if tlog.eval_iteration and tlog.eval_iteration[-1] == it else ""
            log.info("iter %d loss %.6g%s", it + 1, loss, acc)

    model, tlog = train(model, ds, tcfg, progress=progress)
    checkpoint.save_model(model, out / CHECKPOINT)
    _write_text(out / TRAINLOG, tlog.to_csv(timing=True))
    msg = f"trained {tcfg.iterations} iterations"
    if tlog.loss:
        msg += f", final loss {tlog.loss[-1]:.6g}"
    print(msg + f" -> {out / CHECKPOINT}")
    return EXIT_OK


def _features(cfg: dict, out: Path, section: str):
    """(dataset, records) for the configured feature kind; fits the AEC on train records."""
    e = cfg["eval"]
    if e["features"] not in ("raw", "aec"):
        raise ConfigError("features must be 'raw' or 'aec'")
    ds = load_processed(_dataset_path(cfg, section, out))
    ck = Path(e["checkpoint"]) if e["checkpoint"] else out / CHECKPOINT
    model = checkpoint.load_model(ck)
    records = extract_features(model, ds)
    if e["features"] == "aec":
        train_recs, _ = split_records(records, ds)
        if not train_recs:
            raise ConfigError("aec features need a train split")
        F_train, _, _ = stack(train_recs)
        aec = train_autoencoder(F_train, epochs=int(e["aec_epochs"]), lr=float(e["aec_lr"]),
                                seed=cfg["seed"])
        checkpoint.save_aec(aec, out / AEC_CHECKPOINT)
        F, labels, ids = stack(records)
        records = records_from(bottleneck(aec, F), labels, ids)
    return ds, model, records


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_eval(cfg: dict) -> int:
    out = _out_dir(cfg)
    ds, _, records = _features(cfg, out, "eval")
    train_recs, test_recs = split_records(records, ds)
    if not train_recs or not test_recs:
        raise ConfigError("evaluation needs both train and test splits")
    acc, cm = evaluate(train_recs, test_recs, k=int(cfg["eval"]["k"]))
    _write_text(out / CONFUSION, cm.to_csv())
    metrics = {"accuracy": acc, "features": cfg["eval"]["features"], "k": int(cfg["eval"]["k"]),
               "num_train": len(train_recs), "num_test": len(test_recs)}
    _write_text(out / METRICS, json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    if cfg["eval"]["pca"]:
        F, labels, ids = stack(records)
        proj, _ = pca_project(F, 3)
        lines = ["id,pc1,pc2,pc3,label"]
        lines += [f"{i},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{l}" for i, p, l in zip(ids, proj, labels)]
        _write_text(out / PCA, "\n".join(lines) + "\n")
    print(f"accuracy {acc:.4f} ({len(test_recs)} test sequences, {cfg['eval']['features']} features)")
    return EXIT_OK


def cmd_export_features(cfg: dict, trajectory: str | None = None) -> int:
    out = _out_dir(cfg)
    ds, model, records = _features(cfg, out, "eval")
    F, labels, ids = stack(records)
    lines = ["id,label," + ",".join(f"f{j}" for j in range(F.shape[1]))]
    lines += [f"{i},{l}," + ",".join(_fmt(v) for v in f) for i, l, f in zip(ids, labels, F)]
    _write_text(out / FEATURES, "\n".join(lines) + "\n")
    if trajectory is not None:
        # per-step encoder states of one sequence, for trajectory plots
        try:
            idx = ds.ids().index(trajectory)
        except ValueError:
            raise ConfigError(f"unknown sequence id {trajectory!r}") from None
        X, mask = ds.arrays()
        traj = encode(model, X[idx:idx + 1], mask[idx:idx + 1], trajectory=True).trajectory[0]
        traj = traj[np.asarray(mask[idx], dtype=bool)]
        proj, _ = pca_project(traj, 3)
        lab = ds.labels()[idx]
        lines = ["step,pc1,pc2,pc3,label"]
        lines += [f"{t},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{lab}" for t, p in enumerate(proj)]
        _write_text(out / PCA, "\n".join(lines) + "\n")
    print(f"wrote {len(records)} feature rows -> {out / FEATURES}")
    return EXIT_OK


def cmd_hpsearch(cfg: dict) -> int:
    out = _out_dir(cfg)
    space = cfg["hpsearch"]["space"]
    if not isinstance(space, list) or not space or not all(isinstance(c, dict) for c in space):
        raise ConfigError("hpsearch.space must be a non-empty list of objects")
    for c in space:
        unknown = set(c) - {"hidden", "layers", "strategy", "seed"}
        if unknown:
            raise ConfigError(f"hpsearch candidate has unknown keys {sorted(unknown)}")
    ds = load_processed(_dataset_path(cfg, "hpsearch", out))
    try:
        ranked = hyperparam_search(space, ds, seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(f"hpsearch: {exc}") from exc
    _write_text(out / HPSEARCH, json.dumps(ranked, indent=1, sort_keys=True) + "\n")
    for r in ranked:
        print(f"{json.dumps(r['config'], sort_keys=True)} accuracy {r['accuracy']:.4f} params {r['num_params']}")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def _hidden_list(s: str) -> list:
    try:
        return [{"hidden": int(h)} for h in s.split(",") if h.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the command name; SUPPRESS keeps
    # the subcommand parser from resetting values given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--threads", type=int, help="BLAS thread count (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="predict-cluster", parents=[common],
                                description="Unsupervised skeleton action recognition with weak-decoder regeneration.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic labelled dataset")
    s.add_argument("--classes", type=int)
    s.add_argument("--per-class", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--joints", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--fixed-camera", action="store_true", help="skip the random camera pose")

    s = sub.add_parser("preprocess", parents=[common], help="view-invariant transform, resample, normalize")
    s.add_argument("manifest", nargs="?", help="dataset manifest (default OUT/manifest.json)")
    s.add_argument("--t-max", type=int)
    s.add_argument("--norm-mode", choices=["global", "axis"])
    s.add_argument("--stats", help="reuse normalization stats from this JSON file")
    s.add_argument("--no-view-invariant", action="store_true")

    s = sub.add_parser("train", parents=[common], help="train the encoder by regeneration")
    s.add_argument("--data", help="processed archive (default OUT/processed.npz)")
    s.add_argument("--init", help="start from this checkpoint instead of a fresh model")
    s.add_argument("--hidden", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--strategy", choices=["FW", "FS"])
    s.add_argument("--iterations", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--loss", choices=["mse", "mae"])
    s.add_argument("--eval-every", type=int)

    for name, hlp in (("eval", "1-NN evaluation on the test split"),
                      ("export-features", "write per-sequence features as CSV")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--data", help="processed archive (default OUT/processed.npz)")
        s.add_argument("--checkpoint", help="model checkpoint (default OUT/checkpoint.bin)")
        s.add_argument("--features", choices=["raw", "aec"])
        s.add_argument("--aec-epochs", type=int)
        s.add_argument("--aec-lr", type=float)
        if name == "eval":
            s.add_argument("--k", type=int)
            s.add_argument("--pca", action="store_true", help="also write pca.csv of all features")
        else:
            s.add_argument("--trajectory", metavar="ID",
                           help="write pca.csv of this sequence's encoder state trajectory")

    s = sub.add_parser("hpsearch", parents=[common], help="rank architectures by untrained-encoder accuracy")
    s.add_argument("--data", help="processed archive (default OUT/processed.npz)")
    s.add_argument("--hidden", type=_hidden_list, help="comma-separated hidden sizes, e.g. 4,256")
    return p


def _apply_flags(cfg: dict, args) -> None:
    for key in ("seed", "out", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cmd = args.command
    if cmd == "synth":
        _override(cfg, "synthetic", args, {"classes": "classes", "per_class": "per_class", "frames": "frames",
                                           "joints": "joints", "noise": "noise",
                                           "train_fraction": "train_fraction"})
        if args.fixed_camera:
            cfg["synthetic"]["randomize_camera"] = False
    elif cmd == "preprocess":
        _override(cfg, "preprocess", args, {"manifest": "manifest", "t_max": "t_max",
                                            "norm_mode": "norm_mode", "stats": "stats"})
        if args.no_view_invariant:
            cfg["preprocess"]["view_invariant"] = False
    elif cmd == "train":
        _override(cfg, "model", args, {"hidden": "hidden", "layers": "layers", "strategy": "strategy"})
        _override(cfg, "train", args, {"data": "data", "init": "init", "iterations": "iterations",
                                       "batch_size": "batch_size", "lr": "lr", "loss": "loss",
                                       "eval_every": "eval_every"})
    elif cmd in ("eval", "export-features"):
        _override(cfg, "eval", args, {"data": "data", "checkpoint": "checkpoint", "features": "features",
                                      "aec_epochs": "aec_epochs", "aec_lr": "aec_lr"})
        if cmd == "eval":
            _override(cfg, "eval", args, {"k": "k"})
            if args.pca:
                cfg["eval"]["pca"] = True
    elif cmd == "hpsearch":
        _override(cfg, "hpsearch", args, {"data": "data", "hidden": "space"})


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        _apply_flags(cfg, args)
        if not isinstance(cfg["seed"], int):
            raise ConfigError("seed must be an integer")
        limiter = _set_threads(int(cfg["threads"]))
        try:
            if args.command == "synth":
                return cmd_synth(cfg)
            if args.command == "preprocess":
                return cmd_preprocess(cfg)
            if args.command == "train":
                return cmd_train(cfg)
            if args.command == "eval":
                return cmd_eval(cfg)
            if args.command == "export-features":
                return cmd_export_features(cfg, args.trajectory)
            return cmd_hpsearch(cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, SequenceError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
