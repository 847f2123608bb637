"""The view-translation pretext network.

Everything operates on batches: points (B, N, 3), viewpoint angles (B,) in
radians, per-point visibility (B, N), and images (B, H, W, 1) channels-last.

Parameters live in a flat ``{name: Tensor}`` dict. Names are
``<group>.<layer>.<w|b>``; the group prefix is one of ``PARAM_GROUPS``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, InsufficientPointsError, ShapeError
from .tensor import (
    Tensor,
    add,
    bce_loss,
    concat,
    conv2d,
    l1_loss,
    linear,
    max_points,
    mean_points,
    mul_channel,
    relu,
    reshape,
    sigmoid,
    tile_points,
    upsample2x,
    weighted_l1,
    weighted_sum,
)

PARAM_GROUPS = ("backbone", "view_lat", "view_lon", "embed", "global_proj", "fuse", "score", "codeword", "head")
POOLING_MODES = ("avs", "avs-unsupervised", "max", "avg", "gt-vis")
VISIBILITY_REDUCTIONS = ("mean", "balanced")
IMAGE_SIZES = (64, 128, 256)
MIN_POINTS = 8
HEAD_BASE_CHANNELS = 8


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths. The defaults are the full-size network."""

    backbone: tuple = (64, 128, 256)
    global_dim: int = 1024
    view: tuple = (64, 128)
    embed: int = 1024
    global_proj: int = 1024
    fuse: int = 1024
    score: tuple = (256, 128, 1)
    codeword: tuple = (2048, 2048)
    head_stem: int = 32
    head_res: tuple = (64, 128)
    head_wide: int = 512
    head_out: tuple = (128, 64, 1)
    head_out_kernels: tuple = (3, 3, 3)
    image_size: int = 128
    pooling: str = "avs"
    visibility_reduction: str = "balanced"

    def __post_init__(self):
        if self.visibility_reduction not in VISIBILITY_REDUCTIONS:
            raise ConfigError(f"unknown visibility reduction {self.visibility_reduction!r}")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"unknown pooling mode {self.pooling!r}; expected one of {POOLING_MODES}")
        if self.image_size not in IMAGE_SIZES:
            raise ConfigError(f"image size {self.image_size} not in {IMAGE_SIZES}")
        if self.score[-1] != 1 or self.head_out[-1] != 1:
            raise ConfigError("score and output heads must end with one channel")
        if len(self.head_out_kernels) != len(self.head_out) or any(k not in (1, 3) for k in self.head_out_kernels):
            raise ConfigError("head_out_kernels must give a 1 or 3 kernel per output layer")
        if len(self.head_res) != 2:
            raise ConfigError("the head upsamples twice, so it needs exactly two residual blocks")
        widths = [*self.backbone, self.global_dim, *self.view, self.embed, self.global_proj, self.fuse,
                  *self.score, *self.codeword, self.head_stem, *self.head_res, self.head_wide, *self.head_out]
        if any(int(w) < 1 for w in widths):
            raise ConfigError("all widths must be positive")

    @property
    def feature_dim(self):
        return self.backbone[-1]

    @property
    def view_dim(self):
        return 2 * self.view[-1]

    @property
    def fuse_in(self):
        return self.embed + self.global_proj + self.view_dim

    @property
    def seed_size(self):
        # spatial size of the reshaped codeword; two 2x upsamplings follow
        return self.image_size // 4

    @property
    def seed_dim(self):
        return HEAD_BASE_CHANNELS * self.seed_size ** 2

    @classmethod
    def desk(cls, image_size=64, pooling="avs"):
        """Reduced widths that train in minutes on one CPU core."""
        return cls(
            backbone=(32, 64, 64), global_dim=128, view=(16, 32), embed=48, global_proj=48, fuse=64,
            score=(32, 16, 1), codeword=(256, 256), head_stem=16, head_res=(16, 8), head_wide=8,
            head_out=(4, 4, 1), head_out_kernels=(1, 1, 1), image_size=image_size, pooling=pooling,
        )

    def with_pooling(self, pooling):
        return replace(self, pooling=pooling)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class LossWeights:
    visibility: float = 1.0
    depth: float = 1.0
    silhouette: float = 1.0
    contour: float = 1.0

    def __post_init__(self):
        if min(self.visibility, self.depth, self.silhouette, self.contour) < 0:
            raise ConfigError("loss weights must be nonnegative")


# --- parameter layout --------------------------------------------------------


def _dense(shapes, group, widths, fan_in):
    for i, w in enumerate(widths):
        shapes[f"{group}.{i}.w"] = (fan_in, w)
        shapes[f"{group}.{i}.b"] = (w,)
        fan_in = w


def _conv(shapes, name, k, cin, cout):
    shapes[f"{name}.w"] = (k, k, cin, cout)
    shapes[f"{name}.b"] = (cout,)


def param_shapes(cfg: ModelConfig) -> dict:
    s: dict = {}
    _dense(s, "backbone", cfg.backbone, 3)
    s["backbone.global.w"] = (cfg.feature_dim, cfg.global_dim)
    s["backbone.global.b"] = (cfg.global_dim,)
    _dense(s, "view_lat", cfg.view, 1)
    _dense(s, "view_lon", cfg.view, 1)
    _dense(s, "embed", (cfg.embed,), cfg.feature_dim)
    _dense(s, "global_proj", (cfg.global_proj,), cfg.global_dim)
    _dense(s, "fuse", (cfg.fuse,), cfg.fuse_in)
    _dense(s, "score", cfg.score, cfg.fuse)
    _dense(s, "codeword", cfg.codeword, cfg.fuse + cfg.view_dim)
    s["head.fc.w"] = (cfg.codeword[-1], cfg.seed_dim)
    s["head.fc.b"] = (cfg.seed_dim,)
    _conv(s, "head.stem", 3, HEAD_BASE_CHANNELS, cfg.head_stem)
    cin = cfg.head_stem
    for i, c in enumerate(cfg.head_res):
        _conv(s, f"head.res{i}.conv1", 3, cin, c)
        _conv(s, f"head.res{i}.conv2", 3, c, c)
        if cin != c:
            _conv(s, f"head.res{i}.skip", 1, cin, c)
        cin = c
    _conv(s, "head.wide", 3, cin, cfg.head_wide)
    for out in ("depth", "silhouette", "contour"):
        c = cfg.head_wide
        for j, (w, k) in enumerate(zip(cfg.head_out, cfg.head_out_kernels)):
            _conv(s, f"head.{out}{j}", k, c, w)
            c = w
    return s


def param_group(name):
    return name.split(".", 1)[0]


def closed_form_param_count(cfg: ModelConfig) -> int:
    """Parameter count summed directly from the widths (independent of ``param_shapes``)."""

    def mlp(fan_in, widths):
        total = 0
        for w in widths:
            total += fan_in * w + w
            fan_in = w
        return total

    def conv(k, cin, cout):
        return k * k * cin * cout + cout

    n = mlp(3, cfg.backbone) + mlp(cfg.backbone[-1], (cfg.global_dim,))
    n += 2 * mlp(1, cfg.view)
    n += mlp(cfg.backbone[-1], (cfg.embed,)) + mlp(cfg.global_dim, (cfg.global_proj,))
    n += mlp(cfg.embed + cfg.global_proj + 2 * cfg.view[-1], (cfg.fuse,))
    n += mlp(cfg.fuse, cfg.score) + mlp(cfg.fuse + 2 * cfg.view[-1], cfg.codeword)
    n += mlp(cfg.codeword[-1], (8 * (cfg.image_size // 4) ** 2,))
    n += conv(3, 8, cfg.head_stem)
    cin = cfg.head_stem
    for c in cfg.head_res:
        n += conv(3, cin, c) + conv(3, c, c) + (conv(1, cin, c) if cin != c else 0)
        cin = c
    n += conv(3, cin, cfg.head_wide)
    c = cfg.head_wide
    for w, k in zip(cfg.head_out, cfg.head_out_kernels):
        n += 3 * conv(k, c, w)
        c = w
    return n


def init_params(cfg: ModelConfig, seed=0) -> dict:
    """Uniform fan-in scaled weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = math.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def count_params(params: dict) -> int:
    return int(sum(p.size for p in params.values()))


# --- sub-networks ------------------------------------------------------------


def _mlp(params, group, x, n_layers, final_relu=True):
    for i in range(n_layers):
        x = linear(x, params[f"{group}.{i}.w"], params[f"{group}.{i}.b"])
        if final_relu or i < n_layers - 1:
            x = relu(x)
    return x


def _n_layers(params, group):
    return sum(1 for k in params if k.startswith(group + ".") and k.endswith(".w") and k.split(".")[1].isdigit())


def backbone_forward(params, points):
    """Shared per-point MLP features E (B, N, D_e) and codeword g (B, D_g)."""
    pts = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    if pts.ndim == 2:
        pts = pts[None]
    if pts.ndim != 3 or pts.shape[-1] != 3:
        raise ShapeError("backbone", pts.shape, detail="expected (B, N, 3)")
    if pts.shape[1] < MIN_POINTS:
        raise InsufficientPointsError(f"need at least {MIN_POINTS} points, got {pts.shape[1]}")
    E = _mlp(params, "backbone", Tensor(pts), _n_layers(params, "backbone"))
    g = linear(max_points(E), params["backbone.global.w"], params["backbone.global.b"])
    return E, g


def encode_viewpoint(params, lat_rad, lon_rad):
    """Viewpoint indicator (B, 2 * view[-1]) from per-sample angles in radians."""
    lat = np.asarray(lat_rad, dtype=np.float64).reshape(-1, 1)
    lon = np.asarray(lon_rad, dtype=np.float64).reshape(-1, 1)
    if lat.shape != lon.shape:
        raise ShapeError("encode_viewpoint", lat.shape, lon.shape)
    a = _mlp(params, "view_lat", Tensor(lat), _n_layers(params, "view_lat"), final_relu=False)
    b = _mlp(params, "view_lon", Tensor(lon), _n_layers(params, "view_lon"), final_relu=False)
    return concat([a, b], axis=-1)


def fuse_view_conditioned(params, E, g, v):
    """Non-negative view-conditioned point embeddings (B, N, fuse)."""
    if E.data.ndim != 3 or g.data.ndim != 2 or v.data.ndim != 2 or not (E.shape[0] == g.shape[0] == v.shape[0]):
        raise ShapeError("fuse_view_conditioned", E.shape, g.shape, v.shape)
    n = E.shape[1]
    e = relu(linear(E, params["embed.0.w"], params["embed.0.b"]))
    gg = linear(g, params["global_proj.0.w"], params["global_proj.0.b"])
    x = concat([e, tile_points(gg, n), tile_points(v, n)], axis=-1)
    if x.shape[-1] != params["fuse.0.w"].shape[0]:
        raise ShapeError("fuse_view_conditioned", E.shape, g.shape, v.shape, detail="fusion width mismatch")
    return relu(linear(x, params["fuse.0.w"], params["fuse.0.b"]))


def predict_visibility_scores(params, Ev):
    """Per-point scores in (0, 1), shape (B, N, 1)."""
    return sigmoid(_mlp(params, "score", Ev, _n_layers(params, "score"), final_relu=False))


def visibility_weights(S_true, reduction="mean"):
    """Per-point weights of the visibility L1 term, shape (B, N).

    ``mean`` averages over every point of the batch. ``balanced`` averages the
    visible and the invisible points of each mask separately, then averages
    those means (classes absent from a mask are skipped) and the masks.
    """
    y = np.asarray(S_true, dtype=np.float64)
    y = y.reshape(1, -1) if y.ndim == 1 else y.reshape(y.shape[0], -1)
    if reduction == "mean":
        return np.full(y.shape, 1.0 / y.size)
    if reduction != "balanced":
        raise ConfigError(f"unknown visibility reduction {reduction!r}")
    nv = y.sum(axis=1, keepdims=True)
    ni = y.shape[1] - nv
    present = (nv > 0).astype(float) + (ni > 0).astype(float)
    w = np.where(y > 0.5, 1.0 / np.maximum(nv, 1), 1.0 / np.maximum(ni, 1)) / present
    return w / y.shape[0]


def visibility_constraint(S, S_true, reduction="mean"):
    """L1 distance between predicted scores and the 0/1 mask, mean-reduced by default."""
    s = S if isinstance(S, Tensor) else Tensor(S)
    t = np.asarray(S_true.data if isinstance(S_true, Tensor) else S_true, dtype=np.float64)
    if t.size != s.size:
        raise ShapeError("visibility_constraint", s.shape, t.shape)
    w = visibility_weights(t.reshape(s.shape[0], -1) if s.data.ndim > 1 else t, reduction)
    return weighted_l1(s, t.reshape(s.shape), w.reshape(s.shape))


def avs_pool(params, Ev, S, v):
    """Score-masked channel max, joined with the viewpoint indicator and projected."""
    if S.shape != Ev.shape[:-1] + (1,):
        raise ShapeError("avs_pool", Ev.shape, S.shape)
    return codeword_projection(params, max_points(mul_channel(Ev, S)), v)


def codeword_projection(params, pooled, v):
    x = concat([pooled, v], axis=-1)
    return _mlp(params, "codeword", x, _n_layers(params, "codeword"), final_relu=False)


def _conv_relu(params, name, x):
    return relu(conv2d(x, params[f"{name}.w"], params[f"{name}.b"]))


def _resblock(params, name, x):
    h = _conv_relu(params, f"{name}.conv1", x)
    h = conv2d(h, params[f"{name}.conv2.w"], params[f"{name}.conv2.b"])
    skip = x
    if f"{name}.skip.w" in params:
        skip = conv2d(x, params[f"{name}.skip.w"], params[f"{name}.skip.b"])
    return relu(add(h, skip))


def translate_images(params, gv, cfg: ModelConfig):
    """Depth, silhouette and contour maps, each (B, S, S, 1) in (0, 1)."""
    B = gv.shape[0]
    s = cfg.seed_size
    x = linear(gv, params["head.fc.w"], params["head.fc.b"])
    x = reshape(x, (B, s, s, HEAD_BASE_CHANNELS))
    x = _conv_relu(params, "head.stem", x)
    for i in range(len(cfg.head_res)):
        x = upsample2x(_resblock(params, f"head.res{i}", x))
    x = _conv_relu(params, "head.wide", x)
    outs = []
    for out in ("depth", "silhouette", "contour"):
        h = x
        n = len(cfg.head_out)
        for j in range(n):
            h = conv2d(h, params[f"head.{out}{j}.w"], params[f"head.{out}{j}.b"])
            h = sigmoid(h) if j == n - 1 else relu(h)
        outs.append(h)
    return tuple(outs)


def loss_components(mode):
    return ("C_v", "L_d", "L_s", "L_c") if mode == "avs" else ("L_d", "L_s", "L_c")


def overall_loss(images, targets, S, S_true, weights=LossWeights(), mode="avs", visibility_reduction="mean"):
    """Weighted sum of the visibility constraint and the three image losses.

    ``images`` is (I_d, I_s, I_c) and ``targets`` the matching arrays, each
    (B, H, W) or (B, H, W, 1). Returns ``(loss, {component: float})``.
    """
    if mode not in POOLING_MODES:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    terms, ws, names = [], [], []
    if mode == "avs":
        terms.append(visibility_constraint(S, S_true, visibility_reduction))
        ws.append(weights.visibility)
        names.append("C_v")
    I_d, I_s, I_c = images
    t_d, t_s, t_c = (np.asarray(t, dtype=np.float64) for t in targets)
    for pred, t in ((I_d, t_d), (I_s, t_s), (I_c, t_c)):
        if t.size != pred.size:
            raise ShapeError("overall_loss", pred.shape, t.shape)
    terms += [l1_loss(I_d, t_d.reshape(I_d.shape)), bce_loss(I_s, t_s.reshape(I_s.shape)), bce_loss(I_c, t_c.reshape(I_c.shape))]
    ws += [weights.depth, weights.silhouette, weights.contour]
    names += ["L_d", "L_s", "L_c"]
    loss = weighted_sum(terms, ws)
    return loss, {n: t.item() for n, t in zip(names, terms)}


# --- whole model -------------------------------------------------------------


@dataclass
class Batch:
    points: np.ndarray  # (B, N, 3)
    lat_rad: np.ndarray  # (B,)
    lon_rad: np.ndarray  # (B,)
    visibility: np.ndarray  # (B, N) 0/1
    depth: np.ndarray  # (B, H, W)
    silhouette: np.ndarray
    contour: np.ndarray


@dataclass
class ForwardResult:
    loss: Tensor
    components: dict
    scores: Tensor | None
    images: tuple
    codeword: Tensor
    g: Tensor
    extras: dict = field(default_factory=dict)


def forward(params, cfg: ModelConfig, batch: Batch, weights=LossWeights()) -> ForwardResult:
    """Full pretext forward pass for one batch under ``cfg.pooling``."""
    E, g = backbone_forward(params, batch.points)
    v = encode_viewpoint(params, batch.lat_rad, batch.lon_rad)
    Ev = fuse_view_conditioned(params, E, g, v)
    mode = cfg.pooling
    S = None
    if mode in ("avs", "avs-unsupervised"):
        S = predict_visibility_scores(params, Ev)
        gv = avs_pool(params, Ev, S, v)
    elif mode == "gt-vis":
        truth = np.asarray(batch.visibility, dtype=np.float64)[..., None]
        gv = codeword_projection(params, max_points(mul_channel(Ev, truth)), v)
    elif mode == "max":
        gv = codeword_projection(params, max_points(Ev), v)
    else:
        gv = codeword_projection(params, mean_points(Ev), v)
    images = translate_images(params, gv, cfg)
    targets = (batch.depth, batch.silhouette, batch.contour)
    loss, comps = overall_loss(images, targets, S, batch.visibility, weights, mode, cfg.visibility_reduction)
    if mode == "avs-unsupervised":
        comps["C_v"] = visibility_constraint(S, batch.visibility, cfg.visibility_reduction).item()
    return ForwardResult(loss, comps, S, images, gv, g)


def extract_codewords(params, clouds, batch_size=32):
    """Global codewords g for a stack of clouds (C, N, 3), no tape."""
    clouds = np.asarray(clouds, dtype=np.float64)
    out = []
    for i in range(0, len(clouds), batch_size):
        _, g = backbone_forward(params, clouds[i:i + batch_size])
        out.append(g.data)
    return np.concatenate(out, axis=0)


def predict_visibility(params, points, lat_rad, lon_rad):
    """Visibility scores (B, N) for clouds seen from the given viewpoints."""
    E, g = backbone_forward(params, points)
    v = encode_viewpoint(params, lat_rad, lon_rad)
    return predict_visibility_scores(params, fuse_view_conditioned(params, E, g, v)).data[..., 0]
