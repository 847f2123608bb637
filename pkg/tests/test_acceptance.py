"""Desk-scale acceptance runs, one test per criterion.

The pre-training criteria share one session of runs (two identical AVS runs and
one average-pool run, about 25 minutes each on one core). Set PVST_ACCEPTANCE_ROOT
to keep the runs between sessions; by default they live in a temporary directory.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from pointvst import data, pgm
from pointvst.experiment import (
    DeskSetup,
    held_out_visibility,
    prepare,
    pretrained_probe,
    random_init_probe,
    train,
)
from pointvst.geometry import hpr_visibility, normalize_unit_sphere, oracle_visibility, sample_viewpoints
from pointvst.gradsuite import ALL_CASES, run_suite
from pointvst.rendering import (
    CameraIntrinsics,
    analytic_sphere_radius_px,
    project_points,
    render_depth,
    silhouette_from_depth,
)
from pointvst.training import checkpoint_bytes, load_checkpoint, pretrain, save_checkpoint


def report(key, ok, text):
    ACCEPTANCE_LINES[key] = f"[{'PASS' if ok else 'FAIL'}] {key}: {text}"


# --- 1. gradients ----------------------------------------------------------------


def test_c1_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite()
    seconds = time.perf_counter() - t0
    failed = sorted({r.name for r in results if not r.passed})
    worst = max(r.report.worst for r in results)
    ok = not failed and worst < 1e-4 and seconds < 300
    report("C1 gradient suite", ok, f"{len(ALL_CASES)} cases x 20 seeds, max rel err {worst:.2e}, "
           f"{seconds:.0f}s, failed={failed}")
    assert ok


# --- 2. visibility geometry ---------------------------------------------------------


def test_c2_visibility_geometry():
    fractions, agree, slow = [], {"sphere": [], "cube": []}, 0.0
    for label in ("sphere", "cube"):
        for seed in range(3):
            pts = data.generate_shape(label, 100 + seed, 2048).points
            for view in sample_viewpoints(200 + seed, 3):
                t0 = time.perf_counter()
                hpr = hpr_visibility(pts, view)
                oracle = oracle_visibility(pts, view)
                slow = max(slow, time.perf_counter() - t0)
                agree[label].append(np.mean(hpr == oracle))
                if label == "sphere":
                    fractions.append(hpr.mean())
    frac_ok = all(abs(f - 0.25) <= 0.05 for f in fractions)
    agree_ok = {k: min(v) >= 0.90 for k, v in agree.items()}
    ok = frac_ok and all(agree_ok.values()) and slow < 10
    report("C2 visibility geometry", ok,
           f"sphere visible fraction {min(fractions):.3f}..{max(fractions):.3f}; "
           f"oracle agreement min sphere {min(agree['sphere']):.3f}, cube {min(agree['cube']):.3f}; "
           f"slowest shape {slow:.2f}s")
    assert ok


# --- 3. rendering -----------------------------------------------------------------------


def test_c3_rendering_consistency():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(100):
        label = data.CLASSES[i % len(data.CLASSES)]
        pts = data.generate_shape(label, int(rng.integers(2**31)), 1024).points
        (view,) = sample_viewpoints(int(rng.integers(2**31)), 1)
        depth = render_depth(pts, view)
        mismatches += not np.array_equal(silhouette_from_depth(depth).astype(bool), depth > 0)
    v = np.random.default_rng(5).normal(size=(2048, 3))
    sphere = v / np.linalg.norm(v, axis=1, keepdims=True)
    intr = CameraIntrinsics()
    analytic = analytic_sphere_radius_px()
    # the rendered support is the projected disk grown by the splat disk
    grown = analytic + intr.default_splat_px
    rims, radii = [], []
    for view in sample_viewpoints(6, 4):
        p = project_points(sphere, view, intr)
        rims.append(np.hypot(p.row - intr.height / 2, p.col - intr.width / 2)[p.valid].max())
        sil = silhouette_from_depth(render_depth(sphere, view, intr))
        radii.append(math.sqrt(sil.sum() / math.pi))
    rim_err = max(abs(r - analytic) for r in rims)
    sil_err = max(abs(r - grown) for r in radii)
    ok = mismatches == 0 and rim_err <= 1.0 and sil_err <= 1.0
    report("C3 rendering consistency", ok, f"support mismatches {mismatches}/100; projected silhouette radius "
           f"{min(rims):.2f}..{max(rims):.2f} px vs {analytic:.2f}; rendered area radius "
           f"{min(radii):.2f}..{max(radii):.2f} px vs {grown:.2f} with the splat disk")
    assert ok


# --- 4-7. desk pre-training -----------------------------------------------------------------


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    root = os.environ.get("PVST_ACCEPTANCE_ROOT") or str(tmp_path_factory.mktemp("desk"))
    setup = DeskSetup(root=root)
    train_ds, test_ds = prepare(setup)
    return setup, train_ds, test_ds


@pytest.fixture(scope="session")
def avs_run(desk):
    setup, train_ds, _ = desk
    return train(setup, train_ds, "avs")


def test_c4_pretraining_smoke(desk, avs_run):
    setup, train_ds, _ = desk
    state, seconds = avs_run
    again = pretrain(train_ds, setup.train_config("avs"))
    identical = checkpoint_bytes(again) == checkpoint_bytes(state)
    first, last = state.history[0].total, state.history[-1].total
    ok = last < 0.5 * first and seconds < 1800 and identical
    report("C4 pre-training smoke", ok, f"L_overall {first:.4f} -> {last:.4f} (ratio {last / first:.3f}), "
           f"{seconds:.0f}s, second run bit-identical={identical}")
    assert ok


def test_c5_visibility_learning(desk, avs_run):
    _, _, test_ds = desk
    acc = held_out_visibility(avs_run[0], test_ds)
    ok = acc >= 0.85
    report("C5 visibility learning", ok, f"held-out visibility OAcc {acc:.4f} at threshold 0.5 (target 0.85)")
    assert ok


def test_c6_probe_improvement(desk, avs_run):
    setup, train_ds, test_ds = desk
    rand, rand_all = random_init_probe(setup, train_ds, test_ds)
    pre, pre_all = pretrained_probe(avs_run[0], train_ds, test_ds, setup.probe_seeds)
    margin = 100 * (pre - rand)
    ok = margin >= 5.0
    report("C6 probe improvement", ok, f"median OAcc pretrained {pre:.3f} {np.round(pre_all, 3).tolist()} vs "
           f"random {rand:.3f} {np.round(rand_all, 3).tolist()}, margin {margin:+.1f} points (target +5)")
    assert ok


def test_c7_avg_pool_ablation(desk, avs_run):
    setup, train_ds, test_ds = desk
    avg_state, _ = train(setup, train_ds, "avg")
    avs, _ = pretrained_probe(avs_run[0], train_ds, test_ds, setup.probe_seeds)
    avg, _ = pretrained_probe(avg_state, train_ds, test_ds, setup.probe_seeds)
    ok = avg <= avs
    report("C7 avg-pool ablation", ok, f"median probe OAcc avg-pool {avg:.3f} vs AVS {avs:.3f}")
    assert ok


# --- 8. determinism and formats ------------------------------------------------------------------


def test_c8_determinism_and_formats(tmp_path, tiny_dataset):
    from pointvst.training import TrainConfig

    _, manifest, ds = tiny_dataset
    cfg = TrainConfig(epochs=2, views_per_cloud=2, batch_size=4, image_size=64, seed=5)
    full = pretrain(ds, cfg)
    half = pretrain(ds, replace(cfg, epochs=1))
    save_checkpoint(tmp_path / "half.pvst", half)
    resumed = pretrain(ds, cfg, state=load_checkpoint(tmp_path / "half.pvst"))
    save_checkpoint(tmp_path / "full.pvst", full)
    checkpoint_ok = (checkpoint_bytes(resumed) == checkpoint_bytes(full)
                     == checkpoint_bytes(load_checkpoint(tmp_path / "full.pvst")))

    rng = np.random.default_rng(8)
    depth = rng.random((64, 64)) * (rng.random((64, 64)) < 0.6)
    depth_err = np.abs(pgm.decode(pgm.encode(depth, "depth")) - depth).max()
    mask = (rng.random((64, 64)) < 0.5).astype(np.uint8)
    mask_ok = np.array_equal(pgm.decode(pgm.encode(mask)), mask)
    pts = normalize_unit_sphere(rng.normal(size=(500, 3)))
    xyz_err = np.abs(data.parse_xyz(data.format_xyz(pts)) - pts).max()

    caches = []
    for k in range(2):
        data.prepare_render_cache(manifest, tmp_path / f"cache{k}", 2, CameraIntrinsics(height=64, width=64), seed=3)
        caches.append(data.tree_digest(tmp_path / f"cache{k}"))

    ok = checkpoint_ok and depth_err <= 0.5 / 65535 + 1e-15 and mask_ok and xyz_err <= 1e-8 and caches[0] == caches[1]
    report("C8 determinism and formats", ok, f"resume bit-exact={checkpoint_ok}, depth err {depth_err:.2e}, "
           f"mask exact={mask_ok}, xyz err {xyz_err:.1e}, cache bytes equal={caches[0] == caches[1]}")
    assert ok
