"""The finite-difference suite: every primitive and every model sub-network.

Each case builds small random inputs from a seed and returns ``(f, params)``
for :func:`finite_difference_check`. Array-valued outputs are reduced with a
positive random weighting of their sigmoid, which is smooth and has no sign
cancellations that would leave an exactly-zero analytic gradient facing a
rounding-noise numeric one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import model as M
from . import tensor as T
from .gradcheck import GradCheckReport, finite_difference_check
from .tensor import Tensor

DEFAULT_SEEDS = tuple(range(20))


def _leaf(rng, shape, name, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, name=name)


def _readout(y, rng):
    """Smooth positive scalar summary of an array-valued tensor."""
    w = rng.uniform(0.5, 1.5, size=y.shape)
    return T.weighted_l1(T.sigmoid(y), np.zeros(y.shape), w)


def _seeded(build):
    """Wrap a builder so its readout weights are fixed across evaluations."""
    def wrapped(rng):
        f_of_rng, params = build(rng)
        seed = int(rng.integers(1 << 31))
        return (lambda: f_of_rng(np.random.default_rng(seed))), params
    return wrapped


@_seeded
def matmul_case(rng):
    x, w = _leaf(rng, (2, 5, 4), "x"), _leaf(rng, (4, 3), "w")
    return (lambda r: _readout(T.matmul(x, w), r)), [x, w]


@_seeded
def bias_add_case(rng):
    x, b = _leaf(rng, (2, 5, 3), "x"), _leaf(rng, (3,), "b")
    return (lambda r: _readout(T.bias_add(x, b), r)), [x, b]


@_seeded
def add_case(rng):
    x, y = _leaf(rng, (3, 4), "x"), _leaf(rng, (3, 4), "y")
    return (lambda r: _readout(T.add(x, y), r)), [x, y]


@_seeded
def relu_case(rng):
    # keep entries away from the kink so central differences stay one-sided-free
    data = rng.standard_normal((3, 4, 5))
    data += np.sign(data) * 0.05
    x = Tensor(data, requires_grad=True, name="x")
    return (lambda r: _readout(T.relu(x), r)), [x]


@_seeded
def sigmoid_case(rng):
    x = _leaf(rng, (3, 4, 5), "x", 2.0)
    return (lambda r: _readout(T.sigmoid(x), r)), [x]


@_seeded
def concat_case(rng):
    a, b = _leaf(rng, (2, 5, 3), "a"), _leaf(rng, (2, 5, 2), "b")
    return (lambda r: _readout(T.concat([a, b], axis=-1), r)), [a, b]


@_seeded
def tile_points_case(rng):
    x = _leaf(rng, (2, 3), "x")
    return (lambda r: _readout(T.tile_points(x, 4), r)), [x]


@_seeded
def mul_channel_case(rng):
    x, s = _leaf(rng, (2, 5, 3), "x"), _leaf(rng, (2, 5, 1), "s")
    return (lambda r: _readout(T.mul_channel(x, s), r)), [x, s]


@_seeded
def max_points_case(rng):
    # distinct entries with a clear gap so the argmax is stable under the step
    x = Tensor(rng.permutation(2 * 6 * 3).reshape(2, 6, 3) * 0.1, requires_grad=True, name="x")
    return (lambda r: _readout(T.max_points(x), r)), [x]


@_seeded
def mean_points_case(rng):
    x = _leaf(rng, (2, 6, 3), "x")
    return (lambda r: _readout(T.mean_points(x), r)), [x]


@_seeded
def conv3x3_case(rng):
    x, w, b = _leaf(rng, (2, 5, 6, 3), "x"), _leaf(rng, (3, 3, 3, 4), "w", 0.3), _leaf(rng, (4,), "b")
    return (lambda r: _readout(T.conv2d(x, w, b), r)), [x, w, b]


@_seeded
def conv1x1_case(rng):
    x, w, b = _leaf(rng, (2, 4, 4, 3), "x"), _leaf(rng, (1, 1, 3, 2), "w"), _leaf(rng, (2,), "b")
    return (lambda r: _readout(T.conv2d(x, w, b), r)), [x, w, b]


@_seeded
def upsample_case(rng):
    x = _leaf(rng, (2, 3, 4, 2), "x")
    return (lambda r: _readout(T.upsample2x(x), r)), [x]


@_seeded
def reshape_case(rng):
    x = _leaf(rng, (2, 12), "x")
    return (lambda r: _readout(T.reshape(x, (2, 2, 3, 2)), r)), [x]


def sum_case(rng):
    x = _leaf(rng, (3, 4), "x")
    return (lambda: T.tsum(T.sigmoid(x))), [x]


def l1_case(rng):
    # targets sit at least 0.1 away from the predictions, so no term is at its kink
    x = _leaf(rng, (2, 8, 8, 1), "x")
    t = x.data + rng.choice([-1.0, 1.0], size=x.shape) * rng.uniform(0.1, 1.0, size=x.shape)
    return (lambda: T.l1_loss(x, t)), [x]


def weighted_l1_case(rng):
    x = _leaf(rng, (3, 7, 1), "x")
    t = x.data + rng.choice([-1.0, 1.0], size=x.shape) * rng.uniform(0.1, 1.0, size=x.shape)
    w = rng.uniform(0.0, 1.0, size=x.shape)
    return (lambda: T.weighted_l1(x, t, w)), [x]


def bce_case(rng):
    z = _leaf(rng, (2, 6, 6, 1), "z")
    t = (rng.random(z.shape) < 0.5).astype(float)
    return (lambda: T.bce_loss(T.sigmoid(z), t)), [z]


def bce_matmul_case(rng):
    w = _leaf(rng, (4, 4), "W")
    x = rng.standard_normal((5, 4))
    t = (rng.random((5, 4)) < 0.5).astype(float)
    return (lambda: T.bce_loss(T.sigmoid(T.matmul(x, w)), t)), [w]


def weighted_sum_case(rng):
    a, b = _leaf(rng, (3,), "a"), _leaf(rng, (4,), "b")
    wa, wb = rng.uniform(0.1, 2.0, size=2)
    return (lambda: T.weighted_sum([T.tsum(T.sigmoid(a)), T.tsum(T.sigmoid(b))], [wa, wb])), [a, b]


def softmax_ce_case(rng):
    z = _leaf(rng, (6, 4), "z")
    y = rng.integers(0, 4, size=6)
    return (lambda: T.softmax_cross_entropy(z, y)), [z]


# --- sub-networks -------------------------------------------------------------

TINY = M.ModelConfig(
    backbone=(6, 5), global_dim=6, view=(3, 2), embed=4, global_proj=3, fuse=5, score=(4, 1),
    codeword=(5, 8), head_stem=3, head_res=(3, 2), head_wide=3, head_out=(2, 1), head_out_kernels=(3, 1),
    image_size=64,
)


def _tiny_params(rng, cfg=TINY, prefixes=None):
    params = M.init_params(cfg, seed=int(rng.integers(1 << 31)))
    for p in params.values():
        # nonzero biases so bias gradients are exercised away from symmetric points
        if p.data.ndim == 1:
            p.data[:] = rng.uniform(-0.1, 0.1, size=p.data.shape)
    chosen = [p for k, p in params.items() if prefixes is None or k.split(".")[0] in prefixes]
    return params, chosen


def _cloud(rng, B=2, N=10):
    return rng.standard_normal((B, N, 3)) / np.sqrt(3)


@_seeded
def backbone_case(rng):
    params, chosen = _tiny_params(rng, prefixes={"backbone"})
    pts = _cloud(rng)

    def f(r):
        E, g = M.backbone_forward(params, pts)
        return T.weighted_sum([_readout(E, r), _readout(g, r)], [1.0, 1.0])
    return f, chosen


@_seeded
def viewpoint_case(rng):
    params, chosen = _tiny_params(rng, prefixes={"view_lat", "view_lon"})
    lat, lon = rng.uniform(-1.3, 1.3, 3), rng.uniform(0, 2 * np.pi, 3)
    return (lambda r: _readout(M.encode_viewpoint(params, lat, lon), r)), chosen


@_seeded
def fuse_case(rng):
    params, chosen = _tiny_params(rng, prefixes={"embed", "global_proj", "fuse"})
    E = _leaf(rng, (2, 7, TINY.feature_dim), "E")
    g = _leaf(rng, (2, TINY.global_dim), "g")
    v = _leaf(rng, (2, TINY.view_dim), "v")
    return (lambda r: _readout(M.fuse_view_conditioned(params, E, g, v), r)), chosen + [E, g, v]


def score_case(rng):
    params, chosen = _tiny_params(rng, prefixes={"score"})
    Ev = _leaf(rng, (2, 7, TINY.fuse), "Ev")
    y = (rng.random((2, 7)) < 0.6).astype(float)
    # BCE on the scores keeps the check smooth; the L1 constraint is checked separately
    return (lambda: T.bce_loss(M.predict_visibility_scores(params, Ev), y[..., None])), chosen + [Ev]


def visibility_constraint_case(rng):
    z = _leaf(rng, (3, 9, 1), "z")
    y = (rng.random((3, 9)) < 0.6).astype(float)
    # sigmoid scores never equal a 0/1 target, so the L1 is smooth here
    return (lambda: T.weighted_sum([M.visibility_constraint(T.sigmoid(z), y, "mean"),
                                    M.visibility_constraint(T.sigmoid(z), y, "balanced")], [1.0, 0.5])), [z]


@_seeded
def avs_pool_case(rng):
    params, chosen = _tiny_params(rng, prefixes={"codeword"})
    Ev = Tensor(rng.permutation(2 * 7 * TINY.fuse).reshape(2, 7, TINY.fuse) * 0.05 + 0.1, requires_grad=True, name="Ev")
    S = Tensor(rng.uniform(0.2, 1.0, size=(2, 7, 1)), requires_grad=True, name="S")
    v = _leaf(rng, (2, TINY.view_dim), "v")
    return (lambda r: _readout(M.avs_pool(params, Ev, S, v), r)), chosen + [Ev, S, v]


def translation_case(rng):
    # the head code only reads seed_size and the block counts from its config, so
    # a 2x2 seed (8x8 images) checks the same path with few ReLU kinks in reach
    cfg = SimpleNamespace(seed_size=2, head_res=TINY.head_res, head_out=TINY.head_out)
    params, chosen = _tiny_params(rng, prefixes={"head"})
    for name, shape in (("head.fc.w", (TINY.codeword[-1], 8 * 4)), ("head.fc.b", (8 * 4,))):
        params[name].data = rng.standard_normal(shape) * (0.5 if name.endswith("w") else 0.1)
    gv = _leaf(rng, (2, TINY.codeword[-1]), "gv")
    # zero-mean projections keep |f| small next to the gradients, so rounding in f
    # does not swamp the weakly connected weights; the loss itself has its own case
    proj = [rng.standard_normal((2, 8, 8, 1)) for _ in range(3)]

    def f():
        images = M.translate_images(params, gv, cfg)
        return T.weighted_sum([T.tsum(T.mul_channel(im, r)) for im, r in zip(images, proj)], [1.0, 1.0, 1.0])
    return f, chosen + [gv]


def overall_loss_case(rng):
    zd, zs, zc = (_leaf(rng, (2, 4, 4, 1), n) for n in ("zd", "zs", "zc"))
    zv = _leaf(rng, (2, 6, 1), "zv")
    d = np.where(rng.random((2, 4, 4)) > 0.5, 1.5, -0.5)
    s = (rng.random((2, 4, 4)) < 0.5).astype(float)
    c = (rng.random((2, 4, 4)) < 0.3).astype(float)
    y = (rng.random((2, 6)) < 0.6).astype(float)
    w = M.LossWeights(*rng.uniform(0.2, 2.0, size=4))

    def f():
        images = (T.sigmoid(zd), T.sigmoid(zs), T.sigmoid(zc))
        loss, _ = M.overall_loss(images, (d, s, c), T.sigmoid(zv), y, w, mode="avs", visibility_reduction="balanced")
        return loss
    return f, [zd, zs, zc, zv]


PRIMITIVE_CASES = {
    "matmul": matmul_case,
    "bias_add": bias_add_case,
    "add": add_case,
    "relu": relu_case,
    "sigmoid": sigmoid_case,
    "concat": concat_case,
    "tile_points": tile_points_case,
    "mul_channel": mul_channel_case,
    "max_points": max_points_case,
    "mean_points": mean_points_case,
    "conv2d_3x3": conv3x3_case,
    "conv2d_1x1": conv1x1_case,
    "upsample2x": upsample_case,
    "reshape": reshape_case,
    "sum": sum_case,
    "l1_loss": l1_case,
    "weighted_l1": weighted_l1_case,
    "bce_loss": bce_case,
    "bce_sigmoid_matmul": bce_matmul_case,
    "weighted_sum": weighted_sum_case,
    "softmax_cross_entropy": softmax_ce_case,
}

NETWORK_CASES = {
    "backbone": backbone_case,
    "viewpoint_encoder": viewpoint_case,
    "view_conditioned_fusion": fuse_case,
    "visibility_scores": score_case,
    "visibility_constraint": visibility_constraint_case,
    "avs_pool": avs_pool_case,
    "translation_head": translation_case,
    "overall_loss": overall_loss_case,
}

ALL_CASES = {**PRIMITIVE_CASES, **NETWORK_CASES}


@dataclass
class SuiteResult:
    name: str
    seed: int
    report: GradCheckReport

    @property
    def passed(self):
        return self.report.passed


def run_case(name, seed, step=1e-6, tol=1e-4, max_entries=24):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    f, params = ALL_CASES[name](rng)
    return SuiteResult(name, seed, finite_difference_check(f, params, step=step, tol=tol, max_entries=max_entries, seed=seed))


def run_suite(seeds=DEFAULT_SEEDS, names=None, step=1e-6, tol=1e-4, max_entries=24, log=None):
    """Run every case for every seed; returns the list of results."""
    results = []
    for name in names or ALL_CASES:
        t0 = time.perf_counter()
        worst = 0.0
        for seed in seeds:
            res = run_case(name, seed, step, tol, max_entries)
            worst = max(worst, res.report.worst)
            results.append(res)
        if log is not None:
            ok = all(r.passed for r in results if r.name == name)
            log(f"{'PASS' if ok else 'FAIL'} {name:<26s} max_rel_err={worst:.2e} ({time.perf_counter() - t0:.1f}s)")
    return results
