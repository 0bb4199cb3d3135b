"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The end-to-end smoke
(criterion 5) trains the full default configuration for 2000 iterations
and takes on the order of hours on a single CPU core; everything else
finishes in minutes.
"""

import json
import time

import numpy as np
import pytest
import torch

from uadsn.cli import run_ablation
from uadsn.config import load_config
from uadsn.grid import BinaryMask, Connectivity, connected_components
from uadsn.losses import (
    LossWeights,
    StreamOutputs,
    beta_schedule,
    consistency_loss,
    dice_loss,
    hard_label_skeleton,
    soft_cldice_loss,
    total_loss,
    uncertainty_mask,
)
from uadsn.metrics import ahd, assd, dsc
from uadsn.nets import SpatialGate3d, sse_apply
from uadsn.phantom import PhantomSpec, generate_dataset, generate_phantom, load_dataset
from uadsn.skeleton import skeletonize_array
from uadsn.trainer import (
    Checkpoint,
    TrainConfig,
    build_models,
    evaluate,
    load_checkpoint,
    train,
)

from helpers import brute_ahd, brute_assd, random_mask

SP = (0.625, 0.293, 0.293)


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    print(f"\n[ACCEPTANCE] criterion {number} ({name}): {status}{suffix}")


# -------------------------------------------------------------------------
# criterion 1: metric oracle suite


def test_criterion_1_metric_oracles():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    checked = 0
    worst = 0.0
    for _ in range(500):
        a = BinaryMask(random_mask(int(rng.integers(1 << 30)), (4, 4, 4)), SP)
        b = BinaryMask(random_mask(int(rng.integers(1 << 30)), (4, 4, 4)), SP)
        expected_dsc = (
            2 * int((a.data & b.data).sum()) / (a.count() + b.count())
            if a.count() + b.count() else 1.0
        )
        assert dsc(a, b) == expected_dsc
        if a.count() and b.count():
            err_assd = abs(assd(a, b) - brute_assd(a, b))
            err_ahd = abs(ahd(a, b) - brute_ahd(a, b))
            worst = max(worst, err_assd, err_ahd)
            assert err_assd <= 1e-9
            assert err_ahd <= 1e-9
        checked += 1
    elapsed = time.monotonic() - t0
    ok = checked == 500 and worst <= 1e-9 and elapsed < 60.0
    report(1, "metric oracle suite", ok,
           f"500 pairs, worst distance err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# -------------------------------------------------------------------------
# criterion 2: gradient suite


def _distinct_grid(rng, shape):
    """Strictly distinct values with >= 1/(n-1) pairwise gaps, clear of the
    0.5 binarization threshold: pooling and masking stay away from ties."""
    n = int(np.prod(shape))
    vals = np.linspace(0.02, 0.98, n)
    vals = vals[np.abs(vals - 0.5) > 1e-3]
    while len(vals) < n:
        vals = np.append(vals, 0.98 + (len(vals) - n) * 1e-3)
    rng.shuffle(vals)
    return vals[:n].reshape(shape)


def _fd_check(fn, p0, rng, n_coords=24, step=1e-5, tol=1e-4):
    p = torch.tensor(p0, requires_grad=True)
    fn(p).backward()
    grad = p.grad.numpy()
    worst = 0.0
    shape = p0.shape
    for _ in range(n_coords):
        coord = tuple(int(rng.integers(s)) for s in shape)
        plus = p0.copy(); plus[coord] += step
        minus = p0.copy(); minus[coord] -= step
        fd = (fn(torch.tensor(plus)).item() - fn(torch.tensor(minus)).item()) / (2 * step)
        denom = max(abs(fd), abs(grad[coord]), 1e-7)
        worst = max(worst, abs(fd - grad[coord]) / denom)
    return worst, tol


def test_criterion_2_gradient_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    shape = (4, 8, 8)  # 8 x 8 x 4 in the (X, Y, Z) convention
    y = np.zeros(shape)
    y[1:3, 2:6, 2:6] = 1.0
    yt = torch.tensor(y)
    skel = hard_label_skeleton(yt)
    other = torch.tensor(_distinct_grid(rng, shape))
    m = (torch.tensor(rng.random(shape)) > 0.4).double()
    w = LossWeights(alpha=0.4, t=3, t_max=20)

    worst = {}
    worst["dice_loss"], tol = _fd_check(
        lambda p: dice_loss(p, yt), _distinct_grid(rng, shape), rng)
    worst["soft_cldice_loss"], _ = _fd_check(
        lambda p: soft_cldice_loss(p, yt, iterations=3, label_skeleton=skel),
        _distinct_grid(rng, shape), rng)
    worst["consistency_loss"], _ = _fd_check(
        lambda p: consistency_loss(p, other, yt, m), _distinct_grid(rng, shape), rng)
    worst["total_loss"], _ = _fd_check(
        lambda p: total_loss(StreamOutputs(prob_3d=p, prob_2d=other), yt, w,
                             skeleton_iterations=3, label_skeleton=skel)[0],
        _distinct_grid(rng, shape), rng)

    gate = SpatialGate3d(2).double()
    x0 = np.stack([_distinct_grid(rng, shape), _distinct_grid(rng, shape)])[None]

    def sse_scalar(p):
        return sse_apply(p, gate).square().mean()

    worst["sse_apply"], _ = _fd_check(sse_scalar, x0, rng)

    elapsed = time.monotonic() - t0
    bad = {k: v for k, v in worst.items() if v >= tol}
    ok = not bad and elapsed < 300.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, "gradient suite", ok, f"{detail}, {elapsed:.0f}s")
    assert ok, f"relative errors over tolerance: {bad}"


# -------------------------------------------------------------------------
# criterion 3: topology suite


def test_criterion_3_topology_suite():
    t0 = time.monotonic()
    failures = []
    for seed in range(100):
        spec = PhantomSpec(
            volume_shape=(24, 48, 48), spacing_mm=SP,
            tube_radius_mm=(0.4, 0.75), noise_std=0.0,
            background_structures=0, seed=seed,
        )
        label = generate_phantom(spec).label.data
        skel = skeletonize_array(label)
        mask_sig = (
            len(connected_components(BinaryMask(label, SP), Connectivity(26))[1]),
            len(connected_components(BinaryMask(1 - label, SP), Connectivity(6))[1]),
        )
        skel_sig = (
            len(connected_components(BinaryMask(skel, SP), Connectivity(26))[1]),
            len(connected_components(BinaryMask(1 - skel, SP), Connectivity(6))[1]),
        )
        subset = bool((skel <= label).all())
        idempotent = bool((skeletonize_array(skel) == skel).all())
        if not (mask_sig == skel_sig and subset and idempotent):
            failures.append((seed, mask_sig, skel_sig, subset, idempotent))
    elapsed = time.monotonic() - t0
    ok = not failures and elapsed < 300.0
    report(3, "topology suite", ok, f"100 phantoms, {elapsed:.0f}s")
    assert ok, failures[:5]


# -------------------------------------------------------------------------
# criterion 4: schedule and loss identities


def test_criterion_4_schedule_and_loss_identities():
    import math

    checks = {}
    checks["beta(0) exact"] = beta_schedule(0, 50000) == 0.1 * math.exp(-5.0)
    checks["beta(t_max) exact"] = beta_schedule(50000, 50000) == 0.1

    shape = (4, 8, 8)
    rng = np.random.default_rng(1)
    probs = [torch.tensor(_distinct_grid(rng, shape)) for _ in range(2)]
    label = torch.tensor((rng.random(shape) > 0.8).astype(np.float64))
    empty = torch.zeros(shape, dtype=torch.float64)
    checks["empty-mask consistency is 0"] = (
        consistency_loss(probs[0], probs[1], label, empty).item() == 0.0
    )
    checks["disagreement mask symmetric"] = torch.equal(
        uncertainty_mask(probs[0], probs[1]), uncertainty_mask(probs[1], probs[0])
    )
    y = np.zeros(shape)
    y[1:3, 2:6, 2:6] = 1.0
    yt = torch.tensor(y)
    w = LossWeights(alpha=0.35, t=11, t_max=60)
    total, bd = total_loss(
        StreamOutputs(prob_3d=probs[0], prob_2d=probs[1]), yt, w,
        skeleton_iterations=3,
    )
    recombined = (
        (1 - w.alpha) * bd["dice_term"]
        + w.alpha * bd["cldice_term"]
        + bd["beta"] * bd["consistency_term"]
    )
    checks["breakdown recombines within 1e-12"] = abs(total.item() - recombined) < 1e-12

    ok = all(checks.values())
    report(4, "schedule/loss identities", ok,
           ", ".join(k for k, v in checks.items() if not v) or "all identities hold")
    assert ok, checks


# -------------------------------------------------------------------------
# criteria 5 and 7 share the full-scale dataset and checkpoints


@pytest.fixture(scope="session")
def full_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_data")
    cfg = load_config()
    spec = PhantomSpec(
        volume_shape=tuple(cfg["phantom.volume_shape"]),
        spacing_mm=tuple(cfg["phantom.spacing_mm"]),
        tube_radius_mm=tuple(cfg["phantom.tube_radius_mm"]),
        centerline_control_points=cfg["phantom.control_points"],
        noise_std=cfg["phantom.noise_std"],
        background_structures=cfg["phantom.distractors"],
        seed=0,
    )
    generate_dataset(root, spec, n_train=23, n_eval=5, seed=0)
    return load_dataset(root)


@pytest.fixture(scope="session")
def smoke_config():
    return TrainConfig(t_max=2000, seed=0, checkpoint_every=1000)


@pytest.fixture(scope="session")
def untrained_checkpoint(smoke_config):
    torch.manual_seed(smoke_config.seed)
    net3d, net2d = build_models(smoke_config)
    return Checkpoint(smoke_config, net3d, net2d, 0)


@pytest.fixture(scope="session")
def trained_run(full_dataset, smoke_config, tmp_path_factory):
    train_samples, _ = full_dataset
    out = tmp_path_factory.mktemp("acceptance_run")
    t0 = time.monotonic()
    result = train(train_samples, smoke_config, out)
    elapsed = time.monotonic() - t0
    print(f"\n[ACCEPTANCE] smoke training: {smoke_config.t_max} iterations "
          f"in {elapsed / 60:.1f} min")
    assert elapsed < 4 * 3600, "training exceeded the 4 h CPU budget"
    return load_checkpoint(result.checkpoint_path), result.log_path


@pytest.mark.slow
def test_criterion_5_end_to_end_smoke(full_dataset, trained_run,
                                      untrained_checkpoint):
    _, eval_samples = full_dataset
    trained_checkpoint, log_path = trained_run
    _, agg_trained = evaluate(trained_checkpoint, eval_samples, postprocess=True)
    _, agg_untrained = evaluate(untrained_checkpoint, eval_samples, postprocess=True)
    trained_dsc = agg_trained["dsc"]["mean"]
    trained_cl = agg_trained["cldice"]["mean"]
    floor_dsc = agg_untrained["dsc"]["mean"]
    totals = [json.loads(line)["total"] for line in log_path.read_text().splitlines()]
    early_avg = float(np.mean(totals[:10]))
    late = totals[-1]
    ok = (
        trained_dsc >= 0.6 and trained_cl >= 0.6 and floor_dsc < 0.2
        and late < early_avg
    )
    report(5, "end-to-end smoke", ok,
           f"trained DSC {trained_dsc:.3f}, clDice {trained_cl:.3f}, "
           f"untrained floor DSC {floor_dsc:.3f}, "
           f"loss {early_avg:.3f} -> {late:.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_7_postprocessing_contract(full_dataset, trained_run,
                                             untrained_checkpoint):
    _, eval_samples = full_dataset
    trained_checkpoint, _ = trained_run

    def component_counts(ckpt, postprocess):
        _, _, masks = evaluate(
            ckpt, eval_samples, postprocess=postprocess, return_predictions=True
        )
        return [
            len(connected_components(m, Connectivity(26))[1]) for m in masks
        ]

    with_pp_trained = component_counts(trained_checkpoint, True)
    with_pp_untrained = component_counts(untrained_checkpoint, True)
    without_pp_untrained = component_counts(untrained_checkpoint, False)
    multi = sum(1 for c in without_pp_untrained if c > 1)
    ok = (
        all(c <= 1 for c in with_pp_trained)
        and all(c <= 1 for c in with_pp_untrained)
        and multi >= 1
    )
    report(7, "post-processing contract", ok,
           f"postprocessed components {with_pp_trained}+{with_pp_untrained}, "
           f"{multi}/5 raw untrained cases with >1 components "
           f"(counts {without_pp_untrained})")
    assert ok


# -------------------------------------------------------------------------
# criterion 6: ablation trend at reduced scale


@pytest.mark.slow
def test_criterion_6_ablation_trend(tmp_path_factory):
    # operating point calibrated so every configuration trains to a
    # meaningful score inside the budget while the thin, noisy tubes keep
    # the topology signal away from saturation
    root = tmp_path_factory.mktemp("ablation")
    spec = PhantomSpec(
        volume_shape=(48, 96, 96), spacing_mm=SP,
        tube_radius_mm=(0.4, 0.55), noise_std=0.2,
        background_structures=3, seed=0,
    )
    generate_dataset(root / "data", spec, n_train=8, n_eval=4, seed=500)
    cfg = load_config()
    cfg.update({
        "train.t_max": 400,
        "train.batch_size": 2,
        "train.checkpoint_every": 10_000,
        "train.soft_skeleton_iterations": 3,
        "ablate.seeds": [0, 1, 2],
    })
    t0 = time.monotonic()
    result = run_ablation(root / "data", root / "out", cfg)
    elapsed = time.monotonic() - t0
    rows = {row["key"]: row for row in result["rows"]}
    for key in ("a", "b", "d"):
        per_seed = ", ".join(
            f"seed {s['seed']}: DSC {s['dsc']:.3f} clDice {s['cldice']:.3f}"
            for s in rows[key]["per_seed"]
        )
        print(f"\n[ACCEPTANCE] ablation ({key}) {per_seed}")
    cl_gain = rows["b"]["mean"]["cldice"] - rows["a"]["mean"]["cldice"]
    dsc_gap = rows["d"]["mean"]["dsc"] - rows["a"]["mean"]["dsc"]
    ok = cl_gain >= 0.0 and dsc_gap >= -0.01
    report(6, "ablation trend", ok,
           f"clDice (b)-(a) {cl_gain:+.4f}, DSC (d)-(a) {dsc_gap:+.4f}, "
           f"{elapsed / 60:.0f} min")
    assert ok, result["rows"]
