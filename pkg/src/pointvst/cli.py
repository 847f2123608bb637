"""Command-line entry point.

Exit codes: 0 success, 2 missing or unreadable inputs and unwritable outputs,
3 numerical abort, 64 usage errors (bad flags, bad config keys or values).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data
from .errors import ConfigError, FormatError, NumericalError
from .evaluation import DEFAULT_THRESHOLDS, ProbeConfig, probe_codewords, visibility_accuracy
from .model import POOLING_MODES, LossWeights, ModelConfig, init_params
from .rendering import CameraIntrinsics
from .training import TrainConfig, load_checkpoint, new_state, pretrain, save_checkpoint, write_loss_log

EXIT_OK, EXIT_IO, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 64

CHECKPOINT_NAME = "checkpoint.pvst"
LOSS_LOG_NAME = "loss.log"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config files ---------------------------------------------------------------

_TC = TrainConfig()
_LW = LossWeights()

# key -> (type, default); the train keys mirror TrainConfig, the rest are paths
CONFIG_KEYS = {
    "data": (str, "none"),
    "cache": (str, "none"),
    "out": (str, "none"),
    "epochs": (int, _TC.epochs),
    "batch_size": (int, _TC.batch_size),
    "views_per_cloud": (int, _TC.views_per_cloud),
    "lr": (float, _TC.lr),
    "seed": (int, _TC.seed),
    "image_size": (int, _TC.image_size),
    "pooling": (str, _TC.pooling),
    "widths": (str, _TC.widths),
    "weight_visibility": (float, _LW.visibility),
    "weight_depth": (float, _LW.depth),
    "weight_silhouette": (float, _LW.silhouette),
    "weight_contour": (float, _LW.contour),
}


CONFIG_HELP = {
    "data": "dataset directory with a manifest",
    "cache": "render cache directory, rendered if missing",
    "out": "run directory for the checkpoint and loss log",
    "epochs": "training epochs; 0 writes the initialization only",
    "batch_size": "clouds per step",
    "views_per_cloud": "views per cloud and epoch",
    "lr": "Adam learning rate",
    "seed": "seed for initialization, schedule and rendering",
    "image_size": "rendered image side in pixels",
    "pooling": "pooling variant",
    "widths": "layer width preset",
    "weight_visibility": "visibility constraint weight",
    "weight_depth": "depth loss weight",
    "weight_silhouette": "silhouette loss weight",
    "weight_contour": "contour loss weight",
}


def parse_config_text(text: str) -> dict:
    """``key = value`` lines with ``#`` comments; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        typ = CONFIG_KEYS[key][0]
        try:
            out[key] = typ(value)
        except ValueError:
            raise UsageError(f"config line {lineno}: bad value {value!r} for {key}") from None
    return out


def resolve_settings(args, config_path=None) -> dict:
    """Documented defaults, overridden by the config file, overridden by flags."""
    settings = {k: (None if d == "none" else d) for k, (_, d) in CONFIG_KEYS.items()}
    if config_path:
        settings.update(parse_config_text(Path(config_path).read_text(encoding="utf-8")))
    for k in CONFIG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def train_config_from(settings) -> TrainConfig:
    weights = LossWeights(*(settings[f"weight_{n}"] for n in ("visibility", "depth", "silhouette", "contour")))
    names = {f.name for f in fields(TrainConfig)} - {"weights", "out_dir"}
    return TrainConfig(weights=weights, out_dir=settings["out"], **{k: settings[k] for k in names})


# --- commands ---------------------------------------------------------------------


def cmd_gen_data(args):
    manifest = data.generate_dataset(args.out, args.seed, args.per_class, args.points, args.split)
    print(f"wrote {len(manifest.entries)} clouds to {args.out}")
    return EXIT_OK


def cmd_render_views(args):
    manifest = data.read_manifest(args.data)
    intr = CameraIntrinsics(height=args.image_size, width=args.image_size)
    records, failures = data.prepare_render_cache(manifest, args.out, args.views, intr, args.seed, args.jobs)
    for sid, msg in failures:
        print(f"failed {sid}: {msg}", file=sys.stderr)
    print(f"wrote {len(records)} targets to {args.out}")
    return EXIT_IO if failures else EXIT_OK


def _require(settings, *keys):
    missing = [k for k in keys if not settings.get(k)]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def cmd_pretrain(args):
    s = resolve_settings(args, args.config)
    _require(s, "out")
    config = train_config_from(s)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_NAME
    state = load_checkpoint(args.resume, config.model_config()) if args.resume else None
    if config.epochs == 0 and state is None:
        state = new_state(config)
    else:
        _require(s, "data", "cache")
        manifest = data.read_manifest(s["data"])
        intr = CameraIntrinsics(height=config.image_size, width=config.image_size)
        ds = data.build_pretext_set(manifest, s["cache"], config.views_per_cloud, intr, config.seed, args.jobs)
        if ds.depth.shape[-1] != config.image_size:
            raise UsageError(f"cache images are {ds.depth.shape[-1]} px, config wants {config.image_size}")

        def log(entry):
            print(entry.line(), flush=True)
        state = pretrain(ds, config, state, log=log, checkpoint_path=ckpt)
    save_checkpoint(ckpt, state)
    write_loss_log(state.history, out / LOSS_LOG_NAME)
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def _load_params(args):
    if args.checkpoint:
        return load_checkpoint(args.checkpoint).params
    cfg = ModelConfig.desk(args.image_size) if args.widths == "desk" else ModelConfig(image_size=args.image_size)
    return init_params(cfg, seed=args.seed)


def _clouds(path):
    manifest = data.read_manifest(path)
    return np.stack(manifest.load_all()), manifest.labels()


def cmd_probe(args):
    params = _load_params(args)
    xtr, ytr = _clouds(args.train)
    xte, yte = _clouds(args.test)
    results = []
    for k in range(args.repeats):
        cfg = ProbeConfig(epochs=args.probe_epochs, lr=args.probe_lr, seed=args.seed + k)
        results.append(probe_codewords(params, xtr, ytr, xte, yte, cfg))
    oaccs = [r.oacc for r in results]
    middle = results[int(np.argsort(oaccs)[len(oaccs) // 2])]
    print(middle.table(list(data.CLASSES)))
    if args.confusion:
        Path(args.confusion).write_text(middle.confusion_csv(), encoding="ascii")
    print(f"OAcc={float(np.median(oaccs)):.4f}")
    return EXIT_OK


def cmd_visibility_eval(args):
    state = load_checkpoint(args.checkpoint)
    manifest = data.read_manifest(args.data)
    intr = CameraIntrinsics(height=state.model.image_size, width=state.model.image_size)
    ds = data.build_pretext_set(manifest, args.cache, args.views, intr, args.seed, args.jobs)
    thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else DEFAULT_THRESHOLDS
    for t, acc in visibility_accuracy(state.params, ds, thresholds).items():
        print(f"thr={t:.2f} OAcc={acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    results = run_suite(seeds=range(args.seeds), max_entries=args.max_entries, log=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERICAL if failed else EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="pointvst", description="View-conditioned point cloud pre-training at desk scale.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-data", help="generate a synthetic shape dataset", formatter_class=fmt)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=7, help="global seed")
    g.add_argument("--per-class", type=int, default=40, help="clouds per class")
    g.add_argument("--points", type=int, default=data.DEFAULT_POINTS, help="points per cloud")
    g.add_argument("--split", choices=("train", "test"), default="train", help="split tag")
    g.add_argument("--jobs", type=int, default=1, help="worker processes (generation is sequential)")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("render-views", help="precompute render targets", formatter_class=fmt)
    r.add_argument("--data", required=True, help="dataset directory with a manifest")
    r.add_argument("--out", required=True, help="cache directory")
    r.add_argument("--views", type=int, default=8, help="views per cloud")
    r.add_argument("--image-size", type=int, choices=(64, 128, 256), default=128, help="image side in pixels")
    r.add_argument("--seed", type=int, default=0, help="viewpoint seed")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.set_defaults(func=cmd_render_views)

    t = sub.add_parser("pretrain", help="pre-train the network", formatter_class=argparse.RawDescriptionHelpFormatter,
                       description="Flags override --config values, which override the defaults shown.")
    t.add_argument("--config", help="key=value config file (default: none)")
    for key, (typ, default) in CONFIG_KEYS.items():
        kw = {"type": typ, "default": None, "help": f"{CONFIG_HELP[key]} (default: {default})"}
        if key == "pooling":
            kw["choices"] = POOLING_MODES
        if key == "widths":
            kw["choices"] = ("desk", "full")
        if key == "image_size":
            kw["choices"] = (64, 128, 256)
        t.add_argument("--" + key.replace("_", "-"), dest=key, **kw)
    t.add_argument("--resume", help="checkpoint to resume from (default: none)")
    t.add_argument("--jobs", type=int, default=1, help="render worker processes if the cache is missing (default: 1)")
    t.set_defaults(func=cmd_pretrain)

    pr = sub.add_parser("probe", help="linear probe on frozen codewords", formatter_class=fmt)
    pr.add_argument("--train", required=True, help="probe training dataset directory")
    pr.add_argument("--test", required=True, help="probe test dataset directory")
    pr.add_argument("--checkpoint", help="pre-trained checkpoint; random init when omitted")
    pr.add_argument("--seed", type=int, default=0, help="probe seed (and init seed without a checkpoint)")
    pr.add_argument("--repeats", type=int, default=1, help="probe seeds; the median OAcc is reported")
    pr.add_argument("--probe-epochs", type=int, default=ProbeConfig.epochs, help="full-batch probe epochs")
    pr.add_argument("--probe-lr", type=float, default=ProbeConfig.lr, help="probe learning rate")
    pr.add_argument("--image-size", type=int, choices=(64, 128, 256), default=64, help="architecture for random init")
    pr.add_argument("--widths", choices=("desk", "full"), default="desk", help="architecture for random init")
    pr.add_argument("--confusion", help="write the confusion matrix CSV here")
    pr.set_defaults(func=cmd_probe)

    v = sub.add_parser("visibility-eval", help="visibility accuracy per threshold", formatter_class=fmt)
    v.add_argument("--checkpoint", required=True, help="trained checkpoint")
    v.add_argument("--data", required=True, help="dataset directory")
    v.add_argument("--cache", required=True, help="render cache directory (rendered if missing)")
    v.add_argument("--views", type=int, default=8, help="views per cloud when rendering")
    v.add_argument("--seed", type=int, default=0, help="viewpoint seed when rendering")
    v.add_argument("--thresholds", help="comma-separated thresholds (default 0.20..0.80 step 0.05)")
    v.add_argument("--jobs", type=int, default=1, help="render worker processes")
    v.set_defaults(func=cmd_visibility_eval)

    c = sub.add_parser("gradcheck", help="run the finite-difference suite", formatter_class=fmt)
    c.add_argument("--seeds", type=int, default=20, help="number of random seeds per case")
    c.add_argument("--max-entries", type=int, default=24, help="entries perturbed per parameter")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pointvst: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"pointvst: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError, RuntimeError) as exc:
        print(f"pointvst: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
