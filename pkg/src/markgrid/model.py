"""Truncated U-Net that maps a 128x128 scan to 10x10 mark probabilities.

Stage chain (spatial sizes): 128 -> 64 -> 32 -> 16 -> 8 -> 4 -> 2 encoder,
bottleneck at 2, three upscales back to 4 -> 8 -> 16 with skip concatenation
from the encoder stage of equal resolution, a 7x7 valid convolution squeezing
16x16 down to the 10x10 output grid, and a 1x1 sigmoid head.

Encoder blocks are single stride-2 5x5 convolutions with LeakyReLU(0.2) and
dropout 0.1; channel widths come from a four-entry list (c0 for stages 0-1,
c1 for 2-3, c2 for 4-5, c3 for the bottleneck) and mirror on the way up. The
width of the 16->10 squeeze layer is the separate ``last_channel`` knob.
Weights start as fan-in-scaled normals (std = sqrt(2/fan_in), the usual
rectifier gain); biases start at zero.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .labels import GridLabel
from .layers import Conv2d, ConvTranspose2d, Dropout, LeakyReLU, sigmoid

INPUT_SIZE = 128
GRID = 10
MAGIC = b"MGRD"
FORMAT_VERSION = 1

LEAKY_ALPHA = 0.2
DROPOUT_RATE = 0.1

# encoder stage -> entry of the channel list
_ENC_CHANNEL = (0, 0, 1, 1, 2, 2)
# upscale stage -> (encoder stage whose output is concatenated, channel entry)
_UP_WIRING = ((4, 2), (3, 1), (2, 1))

TRAINING = "training"
INFERENCE = "inference"


class ModelFormatError(ValueError):
    """Raised when a model file cannot be decoded."""


@dataclass(frozen=True)
class ChannelConfig:
    channels: tuple[int, int, int, int] = (16, 16, 32, 64)
    last_channel: int = 8
    double_bottleneck: bool = False

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ValueError(f"channels must have 4 entries, got {len(self.channels)}")
        if any(int(c) < 1 for c in self.channels) or self.last_channel < 1:
            raise ValueError("all channel counts must be >= 1")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))


class GridUNet:
    """See module docstring for the architecture."""

    def __init__(self, config: ChannelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.mode = INFERENCE
        rng = np.random.default_rng(seed)
        c = config.channels

        self.encoder = []
        in_ch = 1
        for i, ci in enumerate(_ENC_CHANNEL):
            conv = Conv2d(f"enc{i}", in_ch, c[ci], 5, stride=2, padding=2, rng=rng,
                          dtype=dtype, input_grad=i > 0)
            self.encoder.append((conv, LeakyReLU(LEAKY_ALPHA), Dropout(DROPOUT_RATE)))
            in_ch = c[ci]

        self.bottleneck = [
            (Conv2d("bott", in_ch, c[3], 5, stride=1, padding=2, rng=rng, dtype=dtype),
             LeakyReLU(LEAKY_ALPHA), Dropout(DROPOUT_RATE))
        ]
        if config.double_bottleneck:
            self.bottleneck.append(
                (Conv2d("bott2", c[3], c[3], 5, stride=1, padding=2, rng=rng, dtype=dtype),
                 LeakyReLU(LEAKY_ALPHA), Dropout(DROPOUT_RATE))
            )

        self.upscales = []
        in_ch = c[3]
        for i, (skip_stage, ci) in enumerate(_UP_WIRING):
            out_ch = c[ci]
            deconv = ConvTranspose2d(f"up{i}.deconv", in_ch, out_ch, 3, stride=2,
                                     padding=1, output_padding=1, rng=rng, dtype=dtype)
            skip_ch = c[_ENC_CHANNEL[skip_stage]]
            conv = Conv2d(f"up{i}.conv", out_ch + skip_ch, out_ch, 5, stride=1,
                          padding=2, rng=rng, dtype=dtype)
            self.upscales.append((deconv, skip_stage, Dropout(DROPOUT_RATE), conv))
            in_ch = out_ch

        self.squeeze = Conv2d("squeeze", in_ch, config.last_channel, 7, stride=1,
                              padding=0, rng=rng, dtype=dtype)
        self.squeeze_act = LeakyReLU(LEAKY_ALPHA)
        self.head = Conv2d("head", config.last_channel, 1, 1, stride=1, padding=0,
                           rng=rng, dtype=dtype)
        self._dropout_rng: np.random.Generator | None = None

    # -- mode handling ---------------------------------------------------

    def train_mode(self, dropout_seed: int = 0) -> None:
        self.mode = TRAINING
        self._dropout_rng = np.random.default_rng(dropout_seed)

    def eval_mode(self) -> None:
        self.mode = INFERENCE
        self._dropout_rng = None

    @contextmanager
    def inference(self):
        """Temporarily run in inference mode, preserving the dropout stream."""
        prev = self.mode
        self.mode = INFERENCE
        try:
            yield self
        finally:
            self.mode = prev

    # -- forward / backward ----------------------------------------------

    def forward(self, x: np.ndarray, trace: list | None = None) -> np.ndarray:
        """Probabilities of shape (B, 10, 10) for a (B, 1, 128, 128) batch."""
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (INPUT_SIZE, INPUT_SIZE):
            raise ValueError(
                f"expected input of shape (B, 1, {INPUT_SIZE}, {INPUT_SIZE}), got {x.shape}"
            )
        rng = self._dropout_rng if self.mode == TRAINING else None
        # channels-last internally; the public contract stays (B, 1, H, W)
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)

        self._skip_out = []
        for conv, act, drop in self.encoder:
            h = drop.forward(act.forward(conv.forward(h)), rng)
            self._skip_out.append(h)
            if trace is not None:
                trace.append((conv.name, h.shape[1:3]))
        for conv, act, drop in self.bottleneck:
            h = drop.forward(act.forward(conv.forward(h)), rng)
            if trace is not None:
                trace.append((conv.name, h.shape[1:3]))
        self._concat_splits = []
        for deconv, skip_stage, drop, conv in self.upscales:
            up = deconv.forward(h)
            self._concat_splits.append(up.shape[3])
            h = np.concatenate([up, self._skip_out[skip_stage]], axis=3)
            h = conv.forward(drop.forward(h, rng))
            if trace is not None:
                trace.append((conv.name, h.shape[1:3]))
        h = self.squeeze_act.forward(self.squeeze.forward(h))
        if trace is not None:
            trace.append((self.squeeze.name, h.shape[1:3]))
        z = self.head.forward(h)
        if trace is not None:
            trace.append((self.head.name, z.shape[1:3]))
        probs = sigmoid(z)
        self._probs = probs
        return probs.reshape(x.shape[0], GRID, GRID)

    def backward_from_logits(self, dz: np.ndarray) -> None:
        """Backpropagate from the gradient w.r.t. the pre-sigmoid output.

        The trainer folds the sigmoid into the loss gradient (for mean
        binary cross-entropy dL/dz = (p - t) / n), so backward starts at the
        1x1 head convolution.
        """
        dh = self.head.backward(dz.reshape(dz.shape[0], GRID, GRID, 1))
        dh = self.squeeze.backward(self.squeeze_act.backward(dh))

        pending_skip: dict[int, np.ndarray] = {}
        for (deconv, skip_stage, drop, conv), split in zip(
            reversed(self.upscales), reversed(self._concat_splits)
        ):
            dcat = drop.backward(conv.backward(dh))
            pending_skip[skip_stage] = dcat[..., split:]
            dh = deconv.backward(np.ascontiguousarray(dcat[..., :split]))

        for conv, act, drop in reversed(self.bottleneck):
            dh = conv.backward(act.backward(drop.backward(dh)))
        for stage in range(5, -1, -1):
            if stage in pending_skip:
                dh = dh + pending_skip[stage]
            conv, act, drop = self.encoder[stage]
            dh = conv.backward(act.backward(drop.backward(dh)))

    # -- parameter access --------------------------------------------------

    def _param_layers(self):
        for conv, _, _ in self.encoder:
            yield conv
        for conv, _, _ in self.bottleneck:
            yield conv
        for deconv, _, _, conv in self.upscales:
            yield deconv
            yield conv
        yield self.squeeze
        yield self.head

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._param_layers():
            out.update(layer.params())
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._param_layers():
            out.update(layer.grads())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def shape_trace(self, batch_size: int = 1) -> list[tuple[str, tuple[int, int]]]:
        """Stage-by-stage spatial sizes, for architecture audits."""
        trace: list = []
        mode = self.mode
        self.eval_mode()
        self.forward(np.zeros((batch_size, 1, INPUT_SIZE, INPUT_SIZE), dtype=self.dtype), trace)
        self.mode = mode
        return trace

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Binary format: magic "MGRD", version byte, flags byte (bit0 =
        double bottleneck), five little-endian uint32 (c0..c3, last_channel),
        then every parameter tensor as little-endian float32 in declaration
        order (each conv's weight then bias)."""
        cfg = self.config
        header = MAGIC + struct.pack(
            "<BB5I", FORMAT_VERSION, int(cfg.double_bottleneck), *cfg.channels,
            cfg.last_channel,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            for _, p in sorted_params_in_order(self):
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    @staticmethod
    def load(path) -> "GridUNet":
        with open(path, "rb") as fh:
            blob = fh.read()
        head_len = 4 + 2 + 5 * 4
        if len(blob) < head_len or blob[:4] != MAGIC:
            raise ModelFormatError(f"{path}: not a model file (bad magic)")
        version, flags, c0, c1, c2, c3, last = struct.unpack("<BB5I", blob[4:head_len])
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        config = ChannelConfig((c0, c1, c2, c3), last, double_bottleneck=bool(flags & 1))
        model = GridUNet(config, seed=0, dtype=np.float32)
        offset = head_len
        for name, p in sorted_params_in_order(model):
            nbytes = p.size * 4
            if offset + nbytes > len(blob):
                raise ModelFormatError(f"{path}: truncated at parameter {name}")
            p[...] = np.frombuffer(blob[offset : offset + nbytes], dtype="<f4").reshape(p.shape)
            offset += nbytes
        if offset != len(blob):
            raise ModelFormatError(f"{path}: {len(blob) - offset} trailing bytes")
        model.eval_mode()
        return model


def sorted_params_in_order(model: GridUNet):
    """Parameters in the documented serialization order."""
    for layer in model._param_layers():
        yield from layer.params()


def predict_label(probabilities: np.ndarray, threshold: float = 0.5) -> GridLabel:
    """Binarize a 10x10 probability grid; a cell is marked iff p > threshold."""
    probs = np.asarray(probabilities)
    if probs.shape != (GRID, GRID):
        raise ValueError(f"expected a {GRID}x{GRID} grid, got {probs.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return GridLabel((probs > threshold).astype(np.uint8))


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    label: GridLabel
    confidence: float  # min over columns of (top probability - runner-up)


def predict(model: GridUNet, batch: np.ndarray, threshold: float = 0.5) -> list[Prediction]:
    """Run inference on a preprocessed batch and decode every grid."""
    probs = model.forward(batch)
    out = []
    for grid in probs:
        top2 = np.sort(grid, axis=0)[-2:, :]
        confidence = float((top2[1] - top2[0]).min())
        out.append(Prediction(grid, predict_label(grid, threshold), confidence))
    return out
