"""Preprocessing, loss, Adam optimizer, LR schedule, and the training loop.

Inputs are resized to 128x128 and fed through the network; mean binary
cross-entropy over the 10x10 output grid is minimized with Adam at an
initial rate of 0.0015, multiplied by 0.9 every 20 epochs. Augmentation is
decided per sample from a stream derived from (seed, epoch, sample index),
shuffling from (seed, epoch), and dropout from its own seeded stream, so a
run is reproducible end to end and sample processing is order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationFactors, AugmentationPolicy, augment
from .evaluate import EvalReport, evaluate
from .labels import GridLabel
from .model import GRID, INPUT_SIZE, ChannelConfig, GridUNet, predict_label

CLAMP_EPS = 1e-7


class NumericsError(RuntimeError):
    """Non-finite loss or gradient; the run cannot continue."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    initial_lr: float = 0.0015
    lr_decay: float = 0.9
    lr_step: int = 20
    batch_size: int = 32
    p_org: float = 0.5
    factors: AugmentationFactors = field(default_factory=AugmentationFactors)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.lr_step < 1:
            raise ValueError("lr_step must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    loss: float
    val: EvalReport | None = None


HISTORY_HEADER = "epoch\tlr\tloss\tval_acc\tval_alpha\tval_beta"


def history_log(history: list[EpochStats]) -> str:
    """Plain-text history: tab-separated, one line per epoch, '-' for
    missing validation columns."""
    lines = [HISTORY_HEADER]
    for h in history:
        if h.val is None:
            val_cols = "-\t-\t-"
        else:
            val_cols = f"{h.val.acc:.6f}\t{h.val.alpha_rate:.6f}\t{h.val.beta_rate:.6f}"
        lines.append(f"{h.epoch}\t{h.lr:.8g}\t{h.loss:.8f}\t{val_cols}")
    return "\n".join(lines) + "\n"


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers and edge clamping.

    Exact identity when sizes already match; preserves constant images.
    """
    h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.astype(np.float32, copy=True)
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    img = image.astype(np.float64, copy=False)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bottom * fy).astype(np.float32)


def preprocess(image: np.ndarray) -> np.ndarray:
    """Normalize a grayscale image to a (1, 128, 128) float tensor in [0, 1].

    Accepts any spatial size >= 16 in both dimensions; uint8 input is scaled
    by 1/255, float input is assumed to be in [0, 1] already.
    """
    if image.ndim != 2:
        raise ValueError(f"expected a 2D grayscale image, got shape {image.shape}")
    if min(image.shape) < 16:
        raise ValueError(f"image too small to resize: {image.shape}")
    if image.dtype == np.uint8:
        image = image.astype(np.float32) / 255.0
    return bilinear_resize(image, INPUT_SIZE, INPUT_SIZE)[None, :, :]


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy with predictions clamped to
    [1e-7, 1 - 1e-7]; zero (up to clamping) iff pred equals target."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred.astype(np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    t = target.astype(np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Step-decay schedule: initial rate times decay^(epoch // step)."""
    if epoch < 0 or epoch >= config.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{config.epochs - 1}")
    return config.initial_lr * config.lr_decay ** (epoch // config.lr_step)


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to the parameters in place.

    Raises NumericsError naming the offending tensor when a gradient is not
    finite.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in {name}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


Sample = tuple[np.ndarray, GridLabel]


def _stack_targets(samples: list[Sample]) -> np.ndarray:
    return np.stack([lab.cells for _, lab in samples]).astype(np.float32)


def _to_unit_float(image: np.ndarray) -> np.ndarray:
    """uint8 images scale by 1/255; float images pass through in [0, 1]."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32, copy=False)


def eval_model(
    model: GridUNet,
    inputs: np.ndarray,
    labels: list[GridLabel],
    threshold: float = 0.5,
    batch_size: int = 64,
) -> EvalReport:
    """Score preprocessed inputs (N, 1, 128, 128) against their labels."""
    pairs = []
    with model.inference():
        for start in range(0, len(labels), batch_size):
            probs = model.forward(inputs[start : start + batch_size])
            for y, grid in zip(labels[start : start + batch_size], probs):
                pairs.append((y, predict_label(grid, threshold)))
    return evaluate(pairs)


def train(
    model: GridUNet,
    train_set: list[Sample],
    val_set: list[Sample] | None = None,
    config: TrainConfig | None = None,
    policy: AugmentationPolicy | None = None,
) -> tuple[GridUNet, list[EpochStats]]:
    """Run the full training loop; returns the model in inference mode.

    ``policy=None`` disables augmentation entirely; a p_org = 1 policy is
    trace-identical to that because augmentation draws live in per-sample
    streams that nothing else consumes. Validation samples are never
    augmented.
    """
    if not train_set:
        raise ValueError("training set is empty")
    config = config or TrainConfig()
    n = len(train_set)
    targets = _stack_targets(train_set)

    val_inputs = None
    val_labels: list[GridLabel] = []
    if val_set:
        val_inputs = np.stack([preprocess(_to_unit_float(img)) for img, _ in val_set])
        val_labels = [lab for _, lab in val_set]

    model.train_mode(dropout_seed=[config.seed, 4])
    params = model.parameters()
    state = AdamState(params)
    history: list[EpochStats] = []

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = []
            for i in idx:
                img = _to_unit_float(train_set[int(i)][0])
                if policy is not None:
                    rng = np.random.default_rng([config.seed, 3, epoch, int(i)])
                    img = augment(img, policy, rng)
                batch.append(preprocess(img))
            x = np.stack(batch)
            t = targets[idx]
            probs = model.forward(x)
            loss = bce_loss(probs, t)
            if not np.isfinite(loss):
                raise NumericsError(f"non-finite loss at epoch {epoch} batch {start // config.batch_size}")
            loss_sum += loss * len(idx)
            model.backward_from_logits((probs - t) / t.size)
            adam_step(params, model.gradients(), state, lr,
                      config.beta1, config.beta2, config.eps)

        val_report = None
        if val_inputs is not None:
            val_report = eval_model(model, val_inputs, val_labels)
        history.append(EpochStats(epoch, lr, loss_sum / n, val_report))

    model.eval_mode()
    return model, history


def gradient_check(
    config: ChannelConfig | None = None,
    sample: Sample | None = None,
    n_params: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    include: tuple[str, ...] = (),
    negate: tuple[str, ...] = (),
    fd_resolution: float = 1e-9,
) -> float:
    """Max relative error between backprop and central finite differences.

    Builds a tiny double-precision model with dropout inactive, computes
    analytic gradients of the mean BCE loss once, then compares them on
    ``n_params`` randomly chosen parameters. Pairs agreeing within
    ``fd_resolution`` absolute count as exact: central differences on a
    double-precision loss cannot resolve differences below roughly
    eps * |loss| / step (~1e-11 here), so tiny-magnitude gradients would
    otherwise inflate the relative error with pure roundoff. Any genuine
    backprop defect shifts gradients at their own scale and stays visible.
    ``include`` restricts sampling to parameter names with the given
    prefixes; ``negate`` flips the sign of matching analytic gradients
    (both are test hooks for sensitivity checks).
    """
    config = config or ChannelConfig((2, 2, 4, 8), 2)
    rng = np.random.default_rng(seed)
    model = GridUNet(config, seed=seed, dtype=np.float64)
    if sample is None:
        image = rng.random((INPUT_SIZE, INPUT_SIZE))
        target = GridLabel(rng.integers(0, 2, size=(GRID, GRID)))
    else:
        image, target = sample
    x = preprocess(np.asarray(image, dtype=np.float64)).astype(np.float64)[None]
    t = target.cells.astype(np.float64)[None]

    def loss() -> float:
        return bce_loss(model.forward(x), t)

    probs = model.forward(x)
    model.backward_from_logits((probs - t) / t.size)
    grads = {k: v.copy() for k, v in model.gradients().items()}
    for name in grads:
        if any(name.startswith(p) for p in negate):
            grads[name] = -grads[name]

    params = model.parameters()
    names = [k for k in params if not include or any(k.startswith(p) for p in include)]
    sizes = np.array([params[k].size for k in names])
    flat_total = int(sizes.sum())
    chosen = rng.choice(flat_total, size=min(n_params, flat_total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat_idx in chosen:
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name = names[which]
        local = int(flat_idx - offsets[which])
        p = params[name].reshape(-1)
        orig = p[local]
        p[local] = orig + step
        lp = loss()
        p[local] = orig - step
        lm = loss()
        p[local] = orig
        numeric = (lp - lm) / (2.0 * step)
        analytic = float(grads[name].reshape(-1)[local])
        diff = abs(analytic - numeric)
        if diff <= fd_resolution:
            continue
        worst = max(worst, diff / max(abs(analytic), abs(numeric), 1e-12))
    return worst
