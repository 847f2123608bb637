"""Deterministic pre-training and checkpoints.

Checkpoint layout (all integers little-endian)::

    b"PVST" | u32 version | u64 header length | UTF-8 JSON header | tensor bytes

The header holds the training and model configs, the epoch counter, the
schedule RNG state, Adam hyperparameters and step count, the loss history and
a tensor table of ``{name, shape, offset}`` entries. Offsets index into the
tensor bytes, which are raw float64 little-endian. Parameters are stored under
their own names, Adam moments under ``adam.m/<name>`` and ``adam.s/<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import PretextSet
from .errors import ArchitectureMismatchError, ConfigError, FormatError, NumericalError
from .model import (
    IMAGE_SIZES,
    Batch,
    LossWeights,
    ModelConfig,
    forward,
    init_params,
    param_shapes,
)
from .optim import Adam
from .tensor import Tape, Tensor

MAGIC = b"PVST"
FORMAT_VERSION = 1
LOG_COLUMNS = ("C_v", "L_d", "L_s", "L_c")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    views_per_cloud: int = 8
    lr: float = 1e-3
    seed: int = 7
    image_size: int = 64
    pooling: str = "avs"
    widths: str = "desk"  # "desk" or "full"
    weights: LossWeights = LossWeights()
    out_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        for name in ("batch_size", "views_per_cloud"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.image_size not in IMAGE_SIZES:
            raise ConfigError(f"image size {self.image_size} not in {IMAGE_SIZES}")
        if self.widths not in ("desk", "full"):
            raise ConfigError(f"unknown width preset {self.widths!r}")
        self.model_config()  # validates pooling

    def model_config(self) -> ModelConfig:
        if self.widths == "desk":
            return ModelConfig.desk(self.image_size, self.pooling)
        return ModelConfig(image_size=self.image_size, pooling=self.pooling)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    total: float
    C_v: float
    L_d: float
    L_s: float
    L_c: float

    def line(self):
        return f"{self.epoch} {self.total:.6f} {self.C_v:.6f} {self.L_d:.6f} {self.L_s:.6f} {self.L_c:.6f}"


@dataclass
class TrainState:
    config: TrainConfig
    model: ModelConfig
    params: dict
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)


def new_state(config: TrainConfig) -> TrainState:
    model = config.model_config()
    params = init_params(model, seed=config.seed)
    opt = Adam(params, lr=config.lr)
    return TrainState(config, model, params, opt, np.random.default_rng(config.seed))


def epoch_schedule(rng, n_clouds, n_views, batch_size):
    """Batches of (cloud, view) index pairs covering every pair once.

    The epoch runs ``n_views`` rounds. Each round visits every cloud once in
    a fresh random order, with that cloud's views drawn without replacement
    across rounds, so a batch never holds the same cloud twice.
    """
    view_order = np.stack([rng.permutation(n_views) for _ in range(n_clouds)])
    batches = []
    for r in range(n_views):
        order = rng.permutation(n_clouds)
        for i in range(0, n_clouds, batch_size):
            clouds = order[i:i + batch_size]
            batches.append(np.stack([clouds, view_order[clouds, r]], axis=1))
    return batches


def make_batch(ds: PretextSet, pairs) -> Batch:
    c, v = pairs[:, 0], pairs[:, 1]
    return Batch(
        points=ds.points[c],
        lat_rad=np.radians(ds.lat[c, v]),
        lon_rad=np.radians(ds.lon[c, v]),
        visibility=ds.visibility[c, v].astype(np.float64),
        depth=ds.depth[c, v],
        silhouette=ds.silhouette[c, v].astype(np.float64),
        contour=ds.contour[c, v].astype(np.float64),
    )


def train_step(state: TrainState, batch: Batch, step=0):
    with Tape() as tape:
        result = forward(state.params, state.model, batch, state.config.weights)
        total = result.loss.item()
        if not np.isfinite(total):
            bad = [k for k, v in result.components.items() if not np.isfinite(v)] or ["total"]
            raise NumericalError(f"non-finite loss at step {step} in component {', '.join(bad)}")
        grads = tape.backward(result.loss, wrt=list(state.params.values()))
    state.optimizer.step({name: grads[p] for name, p in state.params.items()})
    return total, result.components


def run_epoch(state: TrainState, ds: PretextSet):
    cfg = state.config
    if ds.n_views < cfg.views_per_cloud:
        raise ConfigError(f"dataset has {ds.n_views} views per cloud, config wants {cfg.views_per_cloud}")
    batches = epoch_schedule(state.rng, ds.n_clouds, cfg.views_per_cloud, cfg.batch_size)
    sums = dict.fromkeys(("total",) + LOG_COLUMNS, 0.0)
    weight = 0
    for k, pairs in enumerate(batches):
        total, comps = train_step(state, make_batch(ds, pairs), step=state.optimizer.t)
        n = len(pairs)
        sums["total"] += total * n
        for c in LOG_COLUMNS:
            sums[c] += comps.get(c, 0.0) * n
        weight += n
    state.epoch += 1
    entry = EpochLog(state.epoch, *(sums[k] / weight for k in ("total",) + LOG_COLUMNS))
    state.history.append(entry)
    return entry


def pretrain(ds: PretextSet, config: TrainConfig, state: TrainState | None = None, log=None, checkpoint_path=None):
    """Train until ``config.epochs`` epochs are done; resumes from ``state`` if given."""
    if ds.n_clouds == 0:
        raise ConfigError("empty dataset")
    if state is None:
        state = new_state(config)
    else:
        # resuming may extend the run; anything else would change the trajectory
        keep = replace(config, epochs=state.config.epochs, out_dir=state.config.out_dir)
        if keep != state.config:
            raise ConfigError("resume config differs from the checkpoint in more than epochs/out_dir")
        state.config = config
    while state.epoch < config.epochs:
        entry = run_epoch(state, ds)
        if log is not None:
            log(entry)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state)
    return state


def write_loss_log(history, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for e in history:
            fh.write(e.line() + "\n")


# --- checkpoints ---------------------------------------------------------------


def _tensor_items(state: TrainState):
    for name, p in state.params.items():
        yield name, p.data
    for name, s in state.optimizer.states.items():
        yield f"adam.m/{name}", s.m
        yield f"adam.s/{name}", s.s


def checkpoint_bytes(state: TrainState) -> bytes:
    table, blobs, offset = [], [], 0
    for name, arr in _tensor_items(state):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": state.config.to_dict(),
        "model": state.model.to_dict(),
        "epoch": state.epoch,
        "rng": state.rng.bit_generator.state,
        "adam": {"t": state.optimizer.t, "lr": state.optimizer.lr, "beta1": state.optimizer.beta1,
                 "beta2": state.optimizer.beta2, "eps": state.optimizer.eps},
        "history": [asdict(e) for e in state.history],
        "tensors": table,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(blobs)


def save_checkpoint(path, state: TrainState):
    data = checkpoint_bytes(state)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    tmp.replace(path)
    return path


def parse_checkpoint(buf: bytes, expected: ModelConfig | None = None) -> TrainState:
    if buf[:4] != MAGIC:
        raise FormatError("bad checkpoint magic")
    if len(buf) < 16:
        raise FormatError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", buf[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    body = memoryview(buf)[16 + hlen:]
    config = TrainConfig.from_dict(header["config"])
    model = ModelConfig.from_dict(header["model"])
    want = param_shapes(expected or model)
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start, stop = entry["offset"], entry["offset"] + 8 * count
        if stop > len(body):
            raise FormatError(f"tensor {entry['name']} runs past the end of the file")
        tensors[entry["name"]] = np.frombuffer(body[start:stop], dtype="<f8").reshape(shape).astype(np.float64)
    stored = {k: v.shape for k, v in tensors.items() if not k.startswith("adam.")}
    if set(stored) != set(want) or any(stored[k] != tuple(want[k]) for k in want):
        diff = sorted(k for k in set(stored) | set(want) if stored.get(k) != (tuple(want[k]) if k in want else None))
        raise ArchitectureMismatchError(f"checkpoint tensors do not match the architecture: {diff[:5]}")
    params = {name: Tensor(tensors[name], requires_grad=True, name=name) for name in want}
    a = header["adam"]
    opt = Adam(params, lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    for name, st in opt.states.items():
        st.m = tensors[f"adam.m/{name}"]
        st.s = tensors[f"adam.s/{name}"]
        st.t = a["t"]
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    history = [EpochLog(**e) for e in header["history"]]
    return TrainState(config, expected or model, params, opt, rng, header["epoch"], history)


def load_checkpoint(path, expected: ModelConfig | None = None) -> TrainState:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read(), expected)
