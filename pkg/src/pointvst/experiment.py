"""Desk-scale experiment pipeline: data, caches, pre-training and probes.

Everything is written under one root directory and reused when present, so a
second call with the same setup only loads from disk.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data
from .evaluation import ProbeConfig, probe_codewords, visibility_accuracy
from .model import init_params
from .rendering import CameraIntrinsics
from .training import TrainConfig, load_checkpoint, pretrain, save_checkpoint, write_loss_log


@dataclass(frozen=True)
class DeskSetup:
    root: str
    train_seed: int = 7
    test_seed: int = 1234
    train_per_class: int = 40
    test_per_class: int = 20
    n_points: int = 1024
    image_size: int = 64
    views: int = 8
    epochs: int = 30
    seed: int = 7
    probe_seeds: tuple = (0, 1, 2)
    jobs: int = 1

    def train_config(self, pooling="avs") -> TrainConfig:
        return TrainConfig(epochs=self.epochs, views_per_cloud=self.views, seed=self.seed,
                           image_size=self.image_size, pooling=pooling)

    @property
    def intrinsics(self):
        return CameraIntrinsics(height=self.image_size, width=self.image_size)


def _dataset(root: Path, split, seed, per_class, n_points):
    d = root / split
    if not (d / data.MANIFEST_NAME).exists():
        data.generate_dataset(d, seed, per_class, n_points, split=split)
    return data.read_manifest(d)


def prepare(setup: DeskSetup):
    """Datasets and render caches for both splits; returns ``(train_set, test_set)``."""
    root = Path(setup.root)
    out = []
    for split, seed, per_class in (("train", setup.train_seed, setup.train_per_class),
                                   ("test", setup.test_seed, setup.test_per_class)):
        m = _dataset(root, split, seed, per_class, setup.n_points)
        out.append(data.build_pretext_set(m, root / f"cache_{split}_{setup.image_size}", setup.views,
                                          setup.intrinsics, seed, setup.jobs))
    return tuple(out)


def run_dir(setup: DeskSetup, pooling, tag=""):
    return Path(setup.root) / f"run_{pooling}{tag}"


def train(setup: DeskSetup, ds, pooling="avs", tag="", log=None, reuse=True):
    """Pre-train one variant; returns ``(state, seconds)``. Reuses a finished run."""
    d = run_dir(setup, pooling, tag)
    ckpt = d / "checkpoint.pvst"
    config = setup.train_config(pooling)
    if reuse and ckpt.exists():
        state = load_checkpoint(ckpt)
        if state.config == config and state.epoch == config.epochs:
            return state, float((d / "seconds.txt").read_text())
    d.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    state = pretrain(ds, config, log=log)
    seconds = time.perf_counter() - t0
    save_checkpoint(ckpt, state)
    write_loss_log(state.history, d / "loss.log")
    (d / "seconds.txt").write_text(f"{seconds:.3f}\n")
    return state, seconds


def probe_median(params_for_seed, train_ds, test_ds, seeds=(0, 1, 2), config=ProbeConfig()):
    """Median probe OAcc over seeds; ``params_for_seed(k)`` gives the frozen params."""
    oaccs = []
    for k in seeds:
        res = probe_codewords(params_for_seed(k), train_ds.points, train_ds.labels,
                              test_ds.points, test_ds.labels, replace(config, seed=k))
        oaccs.append(res.oacc)
    return float(np.median(oaccs)), oaccs


def random_init_probe(setup: DeskSetup, train_ds, test_ds):
    cfg = setup.train_config().model_config()
    return probe_median(lambda k: init_params(cfg, seed=k), train_ds, test_ds, setup.probe_seeds)


def pretrained_probe(state, train_ds, test_ds, seeds=(0, 1, 2)):
    return probe_median(lambda k: state.params, train_ds, test_ds, seeds)


def held_out_visibility(state, test_ds, threshold=0.5):
    return visibility_accuracy(state.params, test_ds, (threshold,))[threshold]
