"""Batch command line interface.

Subcommands: ``gen`` (synthesize a labeled dataset), ``calibrate`` (solve the
augmentation multiplier), ``train`` (fit a model from a manifest), ``kfold``
(k-fold cross validation), and ``predict`` (batch inference with review
flagging). Every option can also come from a key=value configuration file
passed with --config; explicit command-line flags win. Exit codes are stable:
0 success, 2 invalid configuration, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentationFactors, TransformRanges, probabilities, solve_mu, solve_policy
from .evaluate import FoldError, fold_report_csv, kfold_run, report_row
from .labels import is_cfmt, to_student_id, to_text
from .model import ChannelConfig, GridUNet, ModelFormatError, predict_label
from .synth import (
    KIND_CFMT,
    KIND_CROSSED,
    KIND_MISSING,
    KIND_MULTI,
    GlyphStyle,
    InkModel,
    NoiseModel,
    RenderSpec,
    generate_dataset,
    load_image,
    load_manifest,
    load_samples,
)
from .train import NumericsError, TrainConfig, history_log, preprocess, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_STRINGS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}")


def _parse_channels(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in str(text).split(",")]
    return tuple(int(p) for p in parts)


# every key a configuration file may carry, with its parser
KEY_TYPES = {
    "out": str, "manifest": str, "val_manifest": str, "model": str,
    "model_out": str, "history_out": str, "report": str, "inputs": str,
    "n": int, "cfmt": int, "multi_mark": int, "missing_column": int,
    "crossed_out": int, "seed": int, "epochs": int, "batch_size": int,
    "lr_step": int, "last_channel": int, "k": int, "canvas_size": int,
    "cell_size": int, "grid_line_width": int, "jitter": int,
    "p_org": float, "gamma_rt": float, "gamma_sh": float, "gamma_sc": float,
    "lr": float, "lr_decay": float, "threshold": float, "rotation": float,
    "shear": float, "scale_min": float, "scale_max": float,
    "noise_sigma": float, "salt_pepper": float, "background": float,
    "ink_mean": float, "ink_std": float, "glyph_level": float,
    "no_augment": _parse_bool, "deterministic": _parse_bool,
    "double_bottleneck": _parse_bool,
    "channels": _parse_channels,
}


def read_config_file(path: str) -> dict:
    """Parse a ``key = value`` configuration file ('#' starts a comment)."""
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ValueError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        if key not in KEY_TYPES:
            raise ValueError(f"{path}:{ln}: unknown configuration key {key!r}")
        values[key] = KEY_TYPES[key](value.strip())
    return values


class Options:
    """Resolved options: command-line flag, else config file, else default."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._file = read_config_file(args.config) if args.config else {}

    def get(self, key: str, default=None):
        flag = self._args.get(key)
        if flag is not None:
            return flag
        if key in self._file:
            return self._file[key]
        return default

    def require(self, key: str, what: str):
        value = self.get(key)
        if value is None:
            raise ValueError(f"missing required option --{key.replace('_', '-')} ({what})")
        return value


def _render_spec(opt: Options) -> RenderSpec:
    base = RenderSpec()
    return RenderSpec(
        canvas_size=opt.get("canvas_size", base.canvas_size),
        cell_size=opt.get("cell_size", base.cell_size),
        grid_line_width=opt.get("grid_line_width", base.grid_line_width),
        glyph_style=GlyphStyle(level=opt.get("glyph_level", GlyphStyle().level)),
        ink_model=InkModel(
            mean=opt.get("ink_mean", InkModel().mean),
            std=opt.get("ink_std", InkModel().std),
        ),
        jitter=opt.get("jitter", base.jitter),
        noise=NoiseModel(
            gaussian_sigma=opt.get("noise_sigma", NoiseModel().gaussian_sigma),
            salt_pepper=opt.get("salt_pepper", NoiseModel().salt_pepper),
        ),
        background_level=opt.get("background", base.background_level),
    )


def _factors(opt: Options) -> AugmentationFactors:
    base = AugmentationFactors()
    return AugmentationFactors(
        opt.get("gamma_rt", base.gamma_rt),
        opt.get("gamma_sh", base.gamma_sh),
        opt.get("gamma_sc", base.gamma_sc),
    )


def _ranges(opt: Options) -> TransformRanges:
    base = TransformRanges()
    return TransformRanges(
        rotation_deg=opt.get("rotation", base.rotation_deg),
        shear=opt.get("shear", base.shear),
        scale=(opt.get("scale_min", base.scale[0]), opt.get("scale_max", base.scale[1])),
    )


def _train_config(opt: Options) -> TrainConfig:
    base = TrainConfig()
    return TrainConfig(
        epochs=opt.get("epochs", base.epochs),
        initial_lr=opt.get("lr", base.initial_lr),
        lr_decay=opt.get("lr_decay", base.lr_decay),
        lr_step=opt.get("lr_step", base.lr_step),
        batch_size=opt.get("batch_size", base.batch_size),
        p_org=opt.get("p_org", base.p_org),
        factors=_factors(opt),
        seed=opt.get("seed", 0),
    )


def _channel_config(opt: Options) -> ChannelConfig:
    base = ChannelConfig()
    channels = opt.get("channels", base.channels)
    if len(channels) != 4:
        raise ValueError(f"--channels needs 4 comma-separated counts, got {channels}")
    return ChannelConfig(
        tuple(channels),
        opt.get("last_channel", base.last_channel),
        double_bottleneck=bool(opt.get("double_bottleneck", False)),
    )


def _composition(opt: Options, n: int) -> dict[str, int]:
    explicit = {
        KIND_MULTI: opt.get("multi_mark"),
        KIND_MISSING: opt.get("missing_column"),
        KIND_CROSSED: opt.get("crossed_out"),
    }
    cfmt = opt.get("cfmt")
    if cfmt is None and all(v is None for v in explicit.values()):
        cfmt = round(n * 1658 / 1703)
    if cfmt is None:
        cfmt = n - sum(v or 0 for v in explicit.values())
    rest = n - cfmt - sum(v for v in explicit.values() if v is not None)
    if rest < 0:
        raise ValueError(f"composition exceeds n={n}")
    missing_kinds = [k for k, v in explicit.items() if v is None]
    counts = {KIND_CFMT: cfmt}
    counts.update({k: v for k, v in explicit.items() if v is not None})
    for i, kind in enumerate(missing_kinds):
        share = rest // len(missing_kinds) + (1 if i < rest % len(missing_kinds) else 0)
        counts[kind] = share
    return counts


def _load_training_samples(manifest: str):
    samples = load_samples(manifest, dtype=np.uint8)
    return [(img, label) for img, label, _ in samples]


# -- commands -------------------------------------------------------------------


def cmd_gen(opt: Options) -> int:
    out = opt.require("out", "output directory")
    n = opt.get("n", 1703)
    composition = _composition(opt, n)
    spec = _render_spec(opt)
    manifest = generate_dataset(out, n, composition, spec, seed=opt.get("seed", 0))
    print(f"wrote {n} samples to {manifest.parent}")
    for kind in (KIND_CFMT, KIND_MULTI, KIND_MISSING, KIND_CROSSED):
        print(f"  {kind}: {composition.get(kind, 0)}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_calibrate(opt: Options) -> int:
    p_org = opt.get("p_org", 0.5)
    factors = _factors(opt)
    mu = solve_mu(p_org, factors)
    p_rt, p_sh, p_sc = probabilities(mu, factors)
    residual = abs((1 - p_rt) * (1 - p_sh) * (1 - p_sc) - p_org)
    print(f"p_org    = {p_org}")
    print(f"mu       = {mu:.10f}")
    print(f"p_rt     = {p_rt:.10f}")
    print(f"p_sh     = {p_sh:.10f}")
    print(f"p_sc     = {p_sc:.10f}")
    print(f"residual = {residual:.3e}")
    return EXIT_OK


def cmd_train(opt: Options) -> int:
    manifest = opt.require("manifest", "training manifest")
    config = _train_config(opt)
    train_set = _load_training_samples(manifest)
    val_manifest = opt.get("val_manifest")
    val_set = _load_training_samples(val_manifest) if val_manifest else None
    policy = None
    if not opt.get("no_augment", False):
        policy = solve_policy(config.p_org, config.factors, _ranges(opt))
    model = GridUNet(_channel_config(opt), seed=config.seed)
    model, history = train(model, train_set, val_set=val_set, config=config, policy=policy)
    model_out = opt.get("model_out", "model.mgrd")
    model.save(model_out)
    history_out = opt.get("history_out", str(Path(model_out).with_suffix(".history.tsv")))
    Path(history_out).write_text(history_log(history), encoding="utf-8")
    final = history[-1]
    print(f"trained {config.epochs} epochs; final loss {final.loss:.6f}")
    if final.val is not None:
        print(f"validation acc {final.val.acc:.4f} alpha {final.val.alpha_rate:.4f} "
              f"beta {final.val.beta_rate:.4f}")
    print(f"model: {model_out}")
    print(f"history: {history_out}")
    return EXIT_OK


def cmd_kfold(opt: Options) -> int:
    manifest = opt.require("manifest", "dataset manifest")
    k = opt.get("k", 5)
    config = _train_config(opt)
    channel_config = _channel_config(opt)
    policy = None
    if not opt.get("no_augment", False):
        policy = solve_policy(config.p_org, config.factors, _ranges(opt))
    dataset = _load_training_samples(manifest)
    threshold = opt.get("threshold", 0.5)

    def train_fn(train_pairs, fold):
        model = GridUNet(channel_config, seed=config.seed + fold)
        model, _ = train(model, train_pairs, config=config, policy=policy)

        def predictor(images):
            labels = []
            for img in images:
                x = preprocess(img.astype(np.float32) / 255.0 if img.dtype == np.uint8 else img)
                labels.append(predict_label(model.forward(x[None])[0], threshold))
            return labels

        return predictor

    report = kfold_run(dataset, k, train_fn, seed=config.seed)
    text = fold_report_csv(report)
    out = opt.get("report", "kfold.csv")
    Path(out).write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"report: {out}")
    return EXIT_OK


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def cmd_predict(opt: Options) -> int:
    model_path = opt.require("model", "model file")
    inputs = Path(opt.require("inputs", "input image directory"))
    threshold = opt.get("threshold", 0.5)
    model = GridUNet.load(model_path)
    if not inputs.is_dir():
        raise OSError(f"input directory not found: {inputs}")
    paths = sorted(p for p in inputs.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    rows = ["path,record,cfmt,student_id,needs_review"]
    for path in paths:
        image = load_image(path)
        grid = model.forward(preprocess(image)[None])[0]
        label = predict_label(grid, threshold)
        ok = is_cfmt(label)
        student = to_student_id(label) if ok else ""
        rows.append(
            f"{path},{to_text(label)},{'true' if ok else 'false'},{student},"
            f"{'false' if ok else 'true'}"
        )
    report = "\n".join(rows) + "\n"
    out = opt.get("report")
    if out:
        Path(out).write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


# -- wiring ------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value configuration file; flags override it")
    sub.add_argument("--seed", type=int, help="master random seed (default 0)")
    sub.add_argument(
        "--deterministic", action="store_const", const=True,
        help="accepted for contract stability; every command is already "
             "deterministic given --seed",
    )


def _add_train_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--lr", type=float, help="initial learning rate")
    sub.add_argument("--lr-decay", dest="lr_decay", type=float)
    sub.add_argument("--lr-step", dest="lr_step", type=int)
    sub.add_argument("--channels", type=_parse_channels, help="c0,c1,c2,c3")
    sub.add_argument("--last-channel", dest="last_channel", type=int)
    sub.add_argument("--double-bottleneck", dest="double_bottleneck",
                     action="store_const", const=True)
    sub.add_argument("--p-org", dest="p_org", type=float)
    sub.add_argument("--gamma-rt", dest="gamma_rt", type=float)
    sub.add_argument("--gamma-sh", dest="gamma_sh", type=float)
    sub.add_argument("--gamma-sc", dest="gamma_sc", type=float)
    sub.add_argument("--rotation", type=float, help="max abs rotation, degrees")
    sub.add_argument("--shear", type=float, help="max abs shear ratio")
    sub.add_argument("--scale-min", dest="scale_min", type=float)
    sub.add_argument("--scale-max", dest="scale_max", type=float)
    sub.add_argument("--no-augment", dest="no_augment", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markgrid",
        description="Mark-grid student ID toolkit: synthesize, calibrate, train, "
                    "evaluate, predict.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate a labeled synthetic dataset")
    gen.add_argument("--out", help="output directory")
    gen.add_argument("--n", type=int, help="total sample count (default 1703)")
    gen.add_argument("--cfmt", type=int, help="correctly filled count")
    gen.add_argument("--multi-mark", dest="multi_mark", type=int)
    gen.add_argument("--missing-column", dest="missing_column", type=int)
    gen.add_argument("--crossed-out", dest="crossed_out", type=int)
    for key in ("canvas-size", "cell-size", "grid-line-width", "jitter"):
        gen.add_argument(f"--{key}", dest=key.replace("-", "_"), type=int)
    for key in ("noise-sigma", "salt-pepper", "background", "ink-mean", "ink-std",
                "glyph-level"):
        gen.add_argument(f"--{key}", dest=key.replace("-", "_"), type=float)
    _add_common(gen)
    gen.set_defaults(func=cmd_gen)

    cal = subs.add_parser("calibrate", help="solve the augmentation multiplier")
    cal.add_argument("--p-org", dest="p_org", type=float)
    cal.add_argument("--gamma-rt", dest="gamma_rt", type=float)
    cal.add_argument("--gamma-sh", dest="gamma_sh", type=float)
    cal.add_argument("--gamma-sc", dest="gamma_sc", type=float)
    _add_common(cal)
    cal.set_defaults(func=cmd_calibrate)

    tr = subs.add_parser("train", help="train a model from a manifest")
    tr.add_argument("--manifest")
    tr.add_argument("--val-manifest", dest="val_manifest")
    tr.add_argument("--model-out", dest="model_out")
    tr.add_argument("--history-out", dest="history_out")
    _add_train_options(tr)
    _add_common(tr)
    tr.set_defaults(func=cmd_train)

    kf = subs.add_parser("kfold", help="k-fold cross validation")
    kf.add_argument("--manifest")
    kf.add_argument("--k", type=int, help="fold count (default 5)")
    kf.add_argument("--report")
    kf.add_argument("--threshold", type=float)
    _add_train_options(kf)
    _add_common(kf)
    kf.set_defaults(func=cmd_kfold)

    pr = subs.add_parser("predict", help="batch prediction with review flags")
    pr.add_argument("--model")
    pr.add_argument("--inputs", help="directory of template images")
    pr.add_argument("--report", help="output CSV path (also printed)")
    pr.add_argument("--threshold", type=float)
    _add_common(pr)
    pr.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for bad usage
        return int(exc.code or 0)
    try:
        opt = Options(args)
        return args.func(opt)
    except (ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FoldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.__cause__
        if isinstance(cause, NumericsError):
            return EXIT_NUMERIC
        if isinstance(cause, OSError):
            return EXIT_IO
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
