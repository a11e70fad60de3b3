"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with the measured numbers (run with ``pytest -s`` to see the
lines as they complete). The desk-scale training criterion dominates the
runtime; expect roughly 20 minutes on one modern core.
"""

import time

import numpy as np
import pytest

from markgrid.augment import (
    AugmentationFactors,
    augment,
    mu_upper_bound,
    solve_mu,
    solve_policy,
)
from markgrid.evaluate import evaluate, kfold_split
from markgrid.labels import GridLabel, from_text, to_text
from markgrid.model import ChannelConfig, GridUNet
from markgrid.synth import (
    KIND_CFMT,
    RenderSpec,
    paper_like_composition,
    synthesize_samples,
)
from markgrid.train import TrainConfig, gradient_check, train

from test_augment import bisect_mu
from test_evaluate import brute_force_counts
from test_model import closed_form_count

SMALLEST = ChannelConfig((16, 16, 32, 64), 8)


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"{'PASS' if passed else 'FAIL'} [{criterion}] {detail}")


def test_c1_calibration_golden_section():
    factors = AugmentationFactors(0.4, 0.3, 0.3)
    mu = solve_mu(0.5, factors)
    residual = abs((1 - mu * 0.4) * (1 - mu * 0.3) ** 2 - 0.5)
    oracle = bisect_mu(0.5, factors)
    reps = 200
    t0 = time.perf_counter()
    for _ in range(reps):
        solve_mu(0.5, factors)
    per_call_ms = (time.perf_counter() - t0) / reps * 1e3
    ok = residual < 1e-6 and abs(mu - oracle) < 1e-6 and per_call_ms < 1.0
    report(
        "1 calibration",
        ok,
        f"mu={mu:.6f} residual={residual:.2e} |mu-bisect|={abs(mu - oracle):.2e} "
        f"runtime={per_call_ms:.3f}ms/call",
    )
    assert residual < 1e-6
    assert abs(mu - oracle) < 1e-6
    assert abs(mu - 0.6173) < 1e-4
    assert per_call_ms < 1.0


def test_c2_codec_roundtrip_10000():
    rng = np.random.default_rng(0xC0DEC)
    failures = 0
    for _ in range(10_000):
        label = GridLabel(rng.integers(0, 2, size=(10, 10)))
        if from_text(to_text(label)) != label:
            failures += 1
    report("2 codec", failures == 0, f"10000 uniform labels, {failures} round-trip failures")
    assert failures == 0


def test_c3_gradient_check():
    t0 = time.perf_counter()
    err = gradient_check(n_params=200, step=1e-5, seed=0)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-5 and elapsed < 120
    report(
        "3 gradients",
        ok,
        f"max relative error {err:.3g} on 200 params (double precision, "
        f"{elapsed:.1f}s < 120s)",
    )
    assert err < 1e-5
    assert elapsed < 120


def test_c4_parameter_scaling():
    table = [
        (ChannelConfig((16, 16, 32, 64), 8), 349_473),
        (ChannelConfig((32, 32, 64, 128), 16), 1_396_033),
        (ChannelConfig((64, 64, 128, 256), 32), 5_580_417),
    ]
    counts = []
    for cfg, reference in table:
        model = GridUNet(cfg)
        count = model.param_count()
        assert count == closed_form_count(cfg.channels, cfg.last_channel)
        counts.append((count, reference))
    ratios = [counts[i + 1][0] / counts[i][0] for i in range(2)]
    ref_ratios = [counts[i + 1][1] / counts[i][1] for i in range(2)]
    ok = all(3.85 <= r <= 4.05 for r in ratios)
    detail = ", ".join(
        f"{c:,} (reference {r:,})" for c, r in counts
    ) + f"; ratios {ratios[0]:.3f}, {ratios[1]:.3f} (reference {ref_ratios[0]:.3f}, {ref_ratios[1]:.3f})"
    report("4 parameter scaling", ok, detail)
    # Absolute counts deviate from the reference table (single-conv blocks,
    # see README architecture notes); the scaling law is what must hold.
    assert all(3.85 <= r <= 4.05 for r in ratios)


def _pairs(records):
    return [(r.image, r.label) for r in records]


def test_c5_desk_scale_training():
    t0 = time.time()
    train_records = synthesize_samples(
        2000, paper_like_composition(2000), seed=101, dtype=np.uint8
    )
    val_records = synthesize_samples(
        500, paper_like_composition(500), seed=202, dtype=np.uint8
    )
    gen_minutes = (time.time() - t0) / 60

    model = GridUNet(SMALLEST, seed=0)
    config = TrainConfig(epochs=30, batch_size=32, seed=0)
    policy = solve_policy(config.p_org, config.factors)
    t0 = time.time()
    model, history = train(
        model, _pairs(train_records), val_set=_pairs(val_records),
        config=config, policy=policy,
    )
    train_minutes = (time.time() - t0) / 60
    final = history[-1].val
    ok = final.acc >= 0.90 and final.alpha_rate <= 0.03
    report(
        "5 desk-scale training",
        ok,
        f"val acc={final.acc:.4f} (>=0.90), alpha={final.alpha_rate:.4f} (<=0.03), "
        f"beta={final.beta_rate:.4f}; reference real-data points acc 0.9497 alpha 0.0062; "
        f"runtime {train_minutes:.1f} min train + {gen_minutes:.1f} min synthesis "
        f"(target <= 30 min on a desktop core)",
    )
    assert final.acc >= 0.90
    assert final.alpha_rate <= 0.03


def test_c6_overfit_oracle():
    records = synthesize_samples(8, {KIND_CFMT: 8}, RenderSpec(), seed=10)
    samples = _pairs(records)
    model = GridUNet(SMALLEST, seed=0)
    config = TrainConfig(epochs=300, batch_size=32, seed=0)
    t0 = time.time()
    model, history = train(model, samples, val_set=samples, config=config, policy=None)
    elapsed = time.time() - t0
    accs = [h.val.acc for h in history]
    first = next((i for i, a in enumerate(accs) if a == 1.0), None)
    ok = first is not None
    report(
        "6 overfit oracle",
        ok,
        f"training acc 1.0 first reached at epoch {first} (<300, no augmentation, "
        f"{elapsed:.0f}s)",
    )
    assert first is not None


def test_c7_metrics_oracle():
    rng = np.random.default_rng(7_000)
    pairs = []
    for _ in range(1000):
        y = GridLabel(rng.integers(0, 2, size=(10, 10)))
        if rng.random() < 0.5:
            cells = y.cells.copy()
            cells[rng.integers(0, 10), rng.integers(0, 10)] ^= 1
            yhat = GridLabel(cells)
        else:
            yhat = GridLabel(rng.integers(0, 2, size=(10, 10)))
        pairs.append((y, yhat))
    rep = evaluate(pairs)
    oracle = brute_force_counts(pairs)
    got = (rep.exact, rep.pred_cfmt, rep.alpha_errors, rep.true_cfmt, rep.beta_errors)

    hand = evaluate(
        [
            (GridLabel.from_id("0123456789"), GridLabel.from_id("0123456789")),
            (GridLabel.from_id("0123456789"), GridLabel.from_id("0123456780")),
            (GridLabel.from_id("0123456789"), from_text("X123456789")),
            (from_text("[01]123456789"), GridLabel.from_id("0123456789")),
        ]
    )
    hand_ok = (
        hand.acc == 0.25
        and abs(hand.alpha_rate - 2 / 3) < 1e-12
        and abs(hand.beta_rate - 2 / 3) < 1e-12
    )
    ok = got == oracle and hand_ok
    report(
        "7 metrics oracle",
        ok,
        f"1000-pair counts {got} == brute force {oracle}; 4-pair example "
        f"acc={hand.acc} alpha={hand.alpha_rate:.4f} beta={hand.beta_rate:.4f}",
    )
    assert got == oracle
    assert hand_ok


def test_c8_augmentation_statistics():
    policy = solve_policy(0.5)
    image = synthesize_samples(1, {KIND_CFMT: 1}, seed=3)[0].image[:64, :64]
    rng = np.random.default_rng(0xA06)
    n = 20_000
    untouched = sum(np.array_equal(augment(image, policy, rng), image) for _ in range(n))
    frac = untouched / n
    ok = abs(frac - 0.5) <= 0.0106
    report(
        "8 augmentation statistics",
        ok,
        f"untouched fraction {frac:.4f} over {n} draws, bound 0.5 +/- 0.0106 (3 sigma)",
    )
    assert abs(frac - 0.5) <= 0.0106


def test_c9_determinism(tmp_path):
    from markgrid.cli import main

    # byte-identical datasets
    args = ["gen", "--n", "6", "--cfmt", "4", "--seed", "13"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    files_a = sorted((tmp_path / "a").rglob("*.*"))
    files_b = sorted((tmp_path / "b").rglob("*.*"))
    data_same = [fa.read_bytes() for fa in files_a] == [fb.read_bytes() for fb in files_b]

    # identical loss traces
    records = synthesize_samples(8, {KIND_CFMT: 8}, seed=5)
    samples = _pairs(records)
    tiny = ChannelConfig((2, 2, 4, 8), 2)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=9)
    policy = solve_policy(0.5)
    traces = []
    for _ in range(2):
        _, hist = train(GridUNet(tiny, seed=1), samples, config=cfg, policy=policy)
        traces.append([h.loss for h in hist])
    traces_same = traces[0] == traces[1]

    # identical k-fold reports
    manifest = tmp_path / "a" / "manifest.tsv"
    kf_args = [
        "kfold", "--manifest", str(manifest), "--k", "2", "--epochs", "1",
        "--batch-size", "4", "--channels", "2,2,4,8", "--last-channel", "2",
        "--no-augment", "--seed", "4",
    ]
    assert main([*kf_args, "--report", str(tmp_path / "k1.csv")]) == 0
    assert main([*kf_args, "--report", str(tmp_path / "k2.csv")]) == 0
    kfold_same = (tmp_path / "k1.csv").read_bytes() == (tmp_path / "k2.csv").read_bytes()

    sizes = [len(f) for f in kfold_split(1703, 5, seed=0)]
    sizes_ok = sizes == [341, 341, 341, 340, 340]

    ok = data_same and traces_same and kfold_same and sizes_ok
    report(
        "9 determinism",
        ok,
        f"datasets identical={data_same}, loss traces identical={traces_same}, "
        f"kfold reports identical={kfold_same}, 1703/5 fold sizes {sizes}",
    )
    assert data_same and traces_same and kfold_same and sizes_ok
