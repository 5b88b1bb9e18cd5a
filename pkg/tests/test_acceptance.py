"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Criteria 8 and 9 train real networks on the single-core budget and dominate
the runtime of the whole test session.
"""

import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_scene
from s2sr import cli, raster_io
from s2sr.infer import TilingSpec, crop_scene, superresolve
from s2sr.metrics import rmse, sam, sre, uiq
from s2sr.network import NetworkConfig, forward, init_he_uniform, param_count, zero_weights
from s2sr.resample import (
    DegradationSpec,
    area_downsample_array,
    bicubic_upsample,
    bilinear_upsample,
    gaussian_blur_array,
    mtf_to_sigma,
    simulate_scene,
)
from s2sr.synthetic import make_scene
from s2sr.train import TrainConfig, sample_patches, split_train_val, train
from test_metrics import brute_rmse, brute_sam, brute_sre, brute_uiq
from test_network import fd_worst_relative_error

# desk-scale training settings shared by criteria 7-9
DESK_LR = 1e-3
DESK_BATCH = 32
DESK_SECONDS = 15 * 60
HOLDOUT_COL = 192


def report(number, name, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line, file=sys.stderr)
    assert passed, line


def test_criterion_01_gradient_exactness():
    start = time.perf_counter()
    worst, n = fd_worst_relative_error(eps=1e-3)
    secs = time.perf_counter() - start
    ok = worst < 1e-4 and n == param_count(NetworkConfig.t2x(2, 4))[1] and secs < 60
    report(1, "gradient exactness", ok, f"max rel err {worst:.2e} over {n} parameters in {secs:.1f} s")


def test_criterion_02_parameter_count():
    small = param_count(NetworkConfig.t2x(6, 128))
    deep = param_count(NetworkConfig.t2x(32, 256))
    allocated = sum(t.size for t in init_he_uniform(NetworkConfig.t2x(6, 128), 0).tensors())
    ok = small == (14, 1_789_574) and deep == (66, 37_802_246) and allocated == small[1]
    report(2, "parameter count", ok, f"d6f128 {small}, d32f256 {deep}, allocated {allocated}")


def test_criterion_03_skip_identity():
    scene = random_scene(96, seed=21, with_c=False)
    cfg = NetworkConfig.t2x(4, 8)
    w = zero_weights(cfg)
    want = [bilinear_upsample(b, 2).data for b in scene.set_b]
    ya, yb = scene.stack("a") / 2000.0, scene.stack("b") / 2000.0
    untiled = forward(cfg, w, ya, yb)
    want_scaled = np.stack([(bilinear_upsample(b.with_data(b.data / 2000.0), 2)).data for b in scene.set_b], -1)
    ok_untiled = np.array_equal(untiled, want_scaled)
    ok_tiled = True
    for tile in (512, 32, 24):
        got = superresolve(scene, cfg, w, TilingSpec(tile=tile))
        ok_tiled &= all(np.array_equal(g.data, e) for g, e in zip(got, want))
    report(3, "skip-connection identity", ok_untiled and ok_tiled, f"untiled exact {ok_untiled}, tiled exact {ok_tiled}")


def _max_tiled_diff(scene, cfg, w, tiling):
    ref = forward(cfg, w, scene.stack("a") / 2000.0, scene.stack("b") / 2000.0)
    got = np.stack([b.data for b in superresolve(scene, cfg, w, tiling)], -1) / 2000.0
    return float(np.abs(got - ref).max())


def test_criterion_04_tiled_equals_untiled():
    scene = random_scene(96, seed=22, with_c=False)
    start = time.perf_counter()
    deep = NetworkConfig.t2x(6, 16)
    diff_deep = _max_tiled_diff(scene, deep, init_he_uniform(deep, 3), TilingSpec(tile=64, overlap_lowres=2))
    shallow = NetworkConfig.t2x(1, 16)
    literal = TilingSpec(tile=64, overlap_lowres=2, widen_to_receptive_field=False)
    diff_literal = _max_tiled_diff(scene, shallow, init_he_uniform(shallow, 4), literal)
    secs = time.perf_counter() - start
    ok = diff_deep <= 1e-4 and diff_literal <= 1e-4
    report(
        4,
        "tiled equals untiled",
        ok,
        f"d=6 widened {diff_deep:.1e}, d=1 literal 2 px {diff_literal:.1e}, {secs:.1f} s",
    )


def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(2024)
    worst = {"rmse": 0.0, "sre": 0.0, "uiq": 0.0, "sam": 0.0}
    for _ in range(50):
        h, w = rng.integers(8, 17, size=2)
        t = rng.uniform(100, 6000, (h, w, 3))
        p = t + rng.normal(0, 200, t.shape)
        b0p, b0t = p[..., 0], t[..., 0]
        worst["rmse"] = max(worst["rmse"], abs(rmse(b0p, b0t) - brute_rmse(b0p, b0t)))
        worst["sre"] = max(worst["sre"], abs(sre(b0p, b0t) - brute_sre(b0p, b0t)))
        worst["uiq"] = max(worst["uiq"], abs(uiq(b0p, b0t) - brute_uiq(b0p, b0t)))
        worst["sam"] = max(worst["sam"], abs(sam(p, t) - brute_sam(p, t)))
    truth = np.full((10, 10), 100.0)
    spot = sre(truth + np.where(np.arange(100).reshape(10, 10) % 2, 1.0, -1.0), truth)
    ok = (
        worst["rmse"] <= 1e-9
        and worst["sre"] <= 1e-9
        and worst["uiq"] <= 1e-9
        and worst["sam"] <= 1e-6
        and abs(spot - 40.0) < 1e-12
    )
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", SRE spot {spot:.6f} dB"
    report(5, "metric oracle equivalence", ok, detail)


def test_criterion_06_degradation_properties():
    rng = np.random.default_rng(6)
    block_err = 0.0
    for _ in range(20):
        x = rng.uniform(0, 10000, (12, 12))
        got = area_downsample_array(x, 6, axes=(0, 1))
        want = np.array([[x[6 * i : 6 * i + 6, 6 * j : 6 * j + 6].mean() for j in range(2)] for i in range(2)])
        block_err = max(block_err, float(np.abs(got - want).max()))
    const = np.full((20, 20), 1234.5)
    blur_exact = all(np.array_equal(gaussian_blur_array(const, s), const) for s in (0.5, 1 / 6, 0.55, 2.0))
    s1, s2 = mtf_to_sigma(0.3849), mtf_to_sigma(0.2247)
    ok = block_err < 1e-9 and blur_exact and abs(s1 - 0.44) <= 0.005 and abs(s2 - 0.55) <= 0.005
    report(
        6,
        "degradation model",
        ok,
        f"block mean err {block_err:.1e}, blur keeps constants {blur_exact}, sigma {s1:.4f} / {s2:.4f}",
    )


def test_criterion_07_memorization():
    scene, _ = make_scene(128, seed=1, with_c=False)
    inputs, targets = simulate_scene(scene, DegradationSpec(2))
    patches = sample_patches(inputs, targets, 10, 32, seed=0)
    cfg = NetworkConfig.t2x(1, 8)
    tc = TrainConfig(lr0=DESK_LR, max_epochs=200, seed=0)
    start = time.perf_counter()
    _, history = train(cfg, tc, patches, patches)
    secs = time.perf_counter() - start
    ratio = history.train_loss[-1] / history.train_loss[1]
    epochs = history.epochs[-1]
    ok = ratio < 0.10 and epochs == 200 and secs < 600
    report(
        7,
        "memorization",
        ok,
        f"final/epoch-1 training L1 {ratio:.3f} after {epochs} epochs in {secs:.0f} s",
    )


@pytest.fixture(scope="module")
def desk_scene():
    """512 px synthetic scene degraded 2x: training columns [0, 192), held out [192, 256)."""
    scene, _ = make_scene(512, seed=0, with_c=False)
    inputs, targets = simulate_scene(scene, DegradationSpec(2))
    return inputs, targets


def _heldout_rmse(inputs, targets, cfg, weights):
    pred = superresolve(inputs, cfg, weights, TilingSpec(tile=512))
    rows = []
    for p, t, low in zip(pred, targets, inputs.set_b):
        bic = bicubic_upsample(low, 2).data[:, HOLDOUT_COL:]
        truth = t.data[:, HOLDOUT_COL:]
        rows.append((t.band_id, rmse(p.data[:, HOLDOUT_COL:], truth), rmse(bic, truth)))
    return rows


def _train_desk(inputs, targets, n_patches, seed=0):
    patches = sample_patches(inputs, targets, n_patches, 32, seed)
    trn, val = split_train_val(patches, 0.9, seed)
    cfg = NetworkConfig.t2x(4, 32)
    tc = TrainConfig(
        batch_size=DESK_BATCH, lr0=DESK_LR, max_epochs=10_000, seed=seed, max_seconds=DESK_SECONDS
    )
    start = time.perf_counter()
    weights, history = train(cfg, tc, trn, val)
    return cfg, weights, history, time.perf_counter() - start


def _format_rows(rows):
    return "; ".join(f"{b} {net:.1f} vs {bic:.1f}" for b, net, bic in rows)


def test_criterion_08_beats_bicubic(desk_scene):
    inputs, targets = desk_scene
    w_cols = HOLDOUT_COL
    train_inputs = crop_scene(inputs, (w_cols, inputs.height))
    train_targets = [t.with_data(t.data[:, :w_cols]) for t in targets]
    cfg, weights, history, secs = _train_desk(train_inputs, train_targets, 1024)
    rows = _heldout_rmse(inputs, targets, cfg, weights)
    ok = all(net < bic for _, net, bic in rows) and secs <= 3600
    report(
        8,
        "beats bicubic",
        ok,
        f"held-out RMSE net vs bicubic: {_format_rows(rows)}; {history.epochs[-1]} epochs, {secs / 60:.1f} min",
    )


def test_criterion_09_scale_invariance(desk_scene):
    inputs, targets = desk_scene
    # a second 2x degradation of the 20 m inputs gives the 4x training pair
    coarse_inputs, coarse_targets = simulate_scene(inputs, DegradationSpec(2))
    cols = HOLDOUT_COL // 2
    train_inputs = crop_scene(coarse_inputs, (cols, coarse_inputs.height))
    train_targets = [t.with_data(t.data[:, :cols]) for t in coarse_targets]
    cfg, weights, history, secs = _train_desk(train_inputs, train_targets, 1024)
    rows = _heldout_rmse(inputs, targets, cfg, weights)
    wins = sum(net < bic for _, net, bic in rows)
    ok = wins > len(rows) / 2
    report(
        9,
        "scale invariance",
        ok,
        f"{wins}/{len(rows)} bands below bicubic: {_format_rows(rows)}; {secs / 60:.1f} min",
    )


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path):
    src = tmp_path / "scene"
    raster_io.write_scene(random_scene(72, seed=23), src)
    cfg = NetworkConfig.s6x(1, 4)
    raster_io.save_weights(cfg, init_he_uniform(cfg, 5), tmp_path / "six.ckpt")
    trees = []
    for run in ("a", "b"):
        root = tmp_path / run
        steps = [
            ["simulate", "--scene", src, "--scale", 2, "--out", root / "sim"],
            ["simulate", "--scene", src, "--scale", 6, "--out", root / "sim6"],
            ["make-patches", "--sim", root / "sim", "--n", 16, "--patch-size", 16, "--seed", 3, "--out", root / "p.bin"],
            ["train", "--patches", root / "p.bin", "--d", 1, "--f", 4, "--epochs", 3, "--seed", 3, "--out-ckpt", root / "two.ckpt"],
            ["superres", "--scene", src, "--ckpt2x", root / "two.ckpt", "--ckpt6x", tmp_path / "six.ckpt", "--tile", 36, "--out", root / "sr"],
            ["superres", "--scene", root / "sim" / "input", "--ckpt2x", root / "two.ckpt", "--out", root / "sr20"],
            ["evaluate", "--pred", root / "sr20", "--truth", root / "sim" / "targets", "--out-report", root / "eval20.txt"],
        ]
        codes = [cli.main(["--threads", "1", *map(str, argv)]) for argv in steps]
        assert codes == [0] * len(steps), codes
        trees.append(_tree(root))
    same = trees[0] == trees[1]
    report(10, "determinism", same, f"{len(trees[0])} artifacts from {len(steps)} subcommand runs, identical {same}")
