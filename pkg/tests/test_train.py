import numpy as np
import pytest

from markgrid.augment import solve_policy
from markgrid.labels import GridLabel
from markgrid.model import ChannelConfig, GridUNet
from markgrid.synth import KIND_CFMT, NoiseModel, RenderSpec, render, sample_label
from markgrid.train import (
    AdamState,
    EpochStats,
    NumericsError,
    TrainConfig,
    adam_step,
    bce_loss,
    eval_model,
    gradient_check,
    history_log,
    lr_at,
    preprocess,
    train,
)

TINY = ChannelConfig((2, 2, 4, 8), 2)


def make_samples(n, seed=0, spec=None):
    spec = spec or RenderSpec(noise=NoiseModel(0.01, 0.001))
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        label = sample_label(rng, KIND_CFMT)
        out.append((render(label, spec, KIND_CFMT, rng).astype(np.float32), label))
    return out


# -- preprocess ---------------------------------------------------------------

def test_preprocess_shapes_and_identity():
    img = np.random.default_rng(0).random((128, 128)).astype(np.float32)
    out = preprocess(img)
    assert out.shape == (1, 128, 128)
    assert np.array_equal(out[0], img)
    assert preprocess(np.zeros((320, 320), dtype=np.float32)).shape == (1, 128, 128)


def test_preprocess_preserves_constants():
    for size in (17, 100, 128, 333):
        img = np.full((size, size), 0.7, dtype=np.float64)
        assert np.allclose(preprocess(img), 0.7, atol=1e-6)


def test_preprocess_scales_uint8():
    img = np.full((128, 128), 255, dtype=np.uint8)
    assert np.allclose(preprocess(img), 1.0)


def test_preprocess_rejects_degenerate():
    with pytest.raises(ValueError):
        preprocess(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        preprocess(np.zeros((4, 128, 128)))


# -- loss ----------------------------------------------------------------------

def test_bce_analytic_values():
    t = np.zeros((3, 10, 10))
    t[:, 0, 0] = 1
    assert bce_loss(np.full((3, 10, 10), 0.5), t) == pytest.approx(np.log(2))
    assert bce_loss(t.copy(), t) < 1e-6
    assert bce_loss(np.array([[0.75]]), np.array([[1.0]])) == pytest.approx(-np.log(0.75))


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(np.zeros((2, 10, 10)), np.zeros((3, 10, 10)))


# -- schedule -------------------------------------------------------------------

def test_lr_schedule_values():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == pytest.approx(0.0015)
    assert lr_at(19, cfg) == pytest.approx(0.0015)
    assert lr_at(20, cfg) == pytest.approx(0.00135)
    assert lr_at(45, cfg) == pytest.approx(0.0015 * 0.81)
    jumps = [e for e in range(1, 150) if lr_at(e, cfg) != lr_at(e - 1, cfg)]
    assert jumps == [20, 40, 60, 80, 100, 120, 140]
    with pytest.raises(ValueError):
        lr_at(150, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(initial_lr=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=1.5)


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.zeros(3)}
    state = AdamState(params)
    adam_step(params, grads, state, lr=0.1)
    assert np.array_equal(params["w"], [1.0, -2.0, 3.0])


def test_adam_first_step_magnitude_is_lr():
    params = {"w": np.array([0.0])}
    state = AdamState(params)
    adam_step(params, {"w": np.array([0.37])}, state, lr=0.01)
    assert params["w"][0] == pytest.approx(-0.01, rel=1e-4)


def test_adam_deterministic():
    def run():
        params = {"w": np.linspace(-1, 1, 7)}
        state = AdamState(params)
        for i in range(5):
            adam_step(params, {"w": np.sin(params["w"]) + i}, state, lr=0.05)
        return params["w"]

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite():
    params = {"enc0.w": np.zeros(2)}
    state = AdamState(params)
    with pytest.raises(NumericsError, match="enc0.w"):
        adam_step(params, {"enc0.w": np.array([1.0, np.nan])}, state, lr=0.1)


# -- gradient check ----------------------------------------------------------------

def test_gradient_check_tiny_config():
    err = gradient_check()
    assert err < 1e-5, f"max relative error {err:.3g}"


def test_gradient_check_detects_corruption():
    err = gradient_check(n_params=60, include=("up1.conv",), negate=("up1.conv",))
    assert err > 1e-1


def test_gradient_check_zero_sample_finite():
    sample = (np.zeros((128, 128)), GridLabel.zeros())
    err = gradient_check(sample=sample, n_params=40)
    assert np.isfinite(err)
    assert err < 1e-5


# -- training loop ------------------------------------------------------------------

def test_first_adam_steps_make_progress_on_fixed_batch():
    # At lr 0.0015 the first sign-scale Adam steps reach the base-rate basin
    # within ~3 updates and then oscillate around it, so per-step strict
    # monotonicity does not hold at this rate (it does at lr <= 3e-4). The
    # robust smoke property is that five steps cut the loss substantially.
    samples = make_samples(8, seed=1)
    x = np.stack([preprocess(img) for img, _ in samples])
    t = np.stack([lab.cells for _, lab in samples]).astype(np.float32)
    wins = 0
    drops = []
    for seed in range(20):
        model = GridUNet(ChannelConfig((16, 16, 32, 64), 8), seed=seed)
        model.train_mode(dropout_seed=seed)
        params = model.parameters()
        state = AdamState(params)
        with model.inference():
            first = bce_loss(model.forward(x), t)
        for _ in range(5):
            probs = model.forward(x)
            model.backward_from_logits((probs - t) / t.size)
            adam_step(params, model.gradients(), state, lr=0.0015)
        with model.inference():
            last = bce_loss(model.forward(x), t)
        wins += last < first
        drops.append(first - last)
    assert wins >= 19  # >= 95% of 20 seeds
    assert float(np.median(drops)) > 0.2


def test_train_deterministic_trace():
    samples = make_samples(6, seed=2)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=11)

    def run():
        model = GridUNet(TINY, seed=5)
        _, history = train(model, samples, config=cfg, policy=solve_policy(0.5))
        return [h.loss for h in history], model.parameters()

    la, pa = run()
    lb, pb = run()
    assert la == lb
    for name in pa:
        assert np.array_equal(pa[name], pb[name]), name


def test_train_p_org_one_equals_no_augmentation():
    samples = make_samples(6, seed=3)
    cfg = TrainConfig(epochs=2, batch_size=4, seed=7)

    model_a = GridUNet(TINY, seed=1)
    _, hist_a = train(model_a, samples, config=cfg, policy=solve_policy(1.0))
    model_b = GridUNet(TINY, seed=1)
    _, hist_b = train(model_b, samples, config=cfg, policy=None)

    assert [h.loss for h in hist_a] == [h.loss for h in hist_b]
    for name, p in model_a.parameters().items():
        assert np.array_equal(p, model_b.parameters()[name]), name


def test_train_records_validation_and_ends_in_inference():
    samples = make_samples(6, seed=4)
    model = GridUNet(TINY, seed=2)
    model, history = train(
        model, samples, val_set=samples[:3], config=TrainConfig(epochs=2, batch_size=4, seed=1)
    )
    assert model.mode == "inference"
    assert len(history) == 2
    assert all(h.val is not None and h.val.n == 3 for h in history)


def test_train_rejects_empty_set():
    with pytest.raises(ValueError):
        train(GridUNet(TINY), [], config=TrainConfig(epochs=1))


def test_history_log_schema():
    from markgrid.evaluate import EvalReport

    history = [
        EpochStats(0, 0.0015, 0.69, None),
        EpochStats(1, 0.0015, 0.42, EvalReport(4, 2, 3, 1, 4, 2)),
    ]
    text = history_log(history)
    lines = text.strip().split("\n")
    assert lines[0] == "epoch\tlr\tloss\tval_acc\tval_alpha\tval_beta"
    assert lines[1].split("\t")[3:] == ["-", "-", "-"]
    assert lines[2].split("\t")[0] == "1"
    assert lines[2].split("\t")[3] == "0.500000"
