"""Toolkit for recognizing 10-digit student IDs from mark-grid templates.

Pipeline pieces: synthetic labeled template rendering (synth), the textual
label codec (labels), calibrated stochastic augmentation (augment), a
truncated U-Net with hand-rolled numpy backprop (model, layers), the Adam
training loop (train), exact-match / alpha / beta evaluation with k-fold
support (evaluate), and a batch CLI (cli).
"""

from .augment import (
    AugmentationFactors,
    AugmentationPolicy,
    TransformRanges,
    augment,
    identity_policy,
    probabilities,
    solve_mu,
    solve_policy,
)
from .evaluate import (
    EvalReport,
    FoldReport,
    evaluate,
    exact_match,
    kfold_run,
    kfold_split,
)
from .labels import (
    GridLabel,
    LabelFormatError,
    NotCfmtError,
    from_text,
    is_cfmt,
    to_student_id,
    to_text,
)
from .model import (
    ChannelConfig,
    GridUNet,
    ModelFormatError,
    Prediction,
    predict,
    predict_label,
)
from .synth import (
    RenderSpec,
    SampleRecord,
    generate_dataset,
    label_from_pixels,
    load_manifest,
    load_samples,
    make_sample,
    paper_like_composition,
    render,
    sample_label,
    synthesize_samples,
)
from .train import (
    TrainConfig,
    adam_step,
    bce_loss,
    gradient_check,
    lr_at,
    preprocess,
    train,
)

__version__ = "0.1.0"
