"""Exact-match accuracy, alpha/beta error rates, and k-fold evaluation.

A prediction scores 1 only when all 100 cells equal the ground truth. Two
error classes matter beyond raw accuracy: an alpha error is a wrong
prediction that itself looks correctly filled (one mark per column), so it
slips through unflagged; a beta error is a wrong prediction whose ground
truth is correctly filled, forcing needless manual review. Alpha rate is
normalized by the number of correctly-filled predictions, beta rate by the
number of correctly-filled ground truths. A pair can count toward both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .labels import GridLabel, is_cfmt


class FoldError(RuntimeError):
    """Training failure inside a k-fold run, annotated with the fold index."""

    def __init__(self, fold: int, message: str):
        super().__init__(f"fold {fold}: {message}")
        self.fold = fold


@dataclass(frozen=True)
class EvalReport:
    n: int
    exact: int
    pred_cfmt: int
    alpha_errors: int
    true_cfmt: int
    beta_errors: int

    @property
    def acc(self) -> float:
        return self.exact / self.n

    @property
    def alpha_rate(self) -> float:
        return self.alpha_errors / self.pred_cfmt if self.pred_cfmt else 0.0

    @property
    def beta_rate(self) -> float:
        return self.beta_errors / self.true_cfmt if self.true_cfmt else 0.0

    @property
    def alpha_undefined(self) -> bool:
        """True when no prediction satisfies the one-mark-per-column shape,
        so the reported alpha rate of 0 is a convention, not a measurement."""
        return self.pred_cfmt == 0

    @property
    def beta_undefined(self) -> bool:
        return self.true_cfmt == 0


@dataclass(frozen=True)
class FoldReport:
    folds: tuple[EvalReport, ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def mean_acc(self) -> float:
        return sum(f.acc for f in self.folds) / self.k

    @property
    def mean_alpha_rate(self) -> float:
        return sum(f.alpha_rate for f in self.folds) / self.k

    @property
    def mean_beta_rate(self) -> float:
        return sum(f.beta_rate for f in self.folds) / self.k


def exact_match(y: GridLabel, yhat: GridLabel) -> int:
    """1 iff every cell of the two labels agrees."""
    return int(np.array_equal(y.cells, yhat.cells))


def evaluate(pairs: Sequence[tuple[GridLabel, GridLabel]]) -> EvalReport:
    """Score (truth, prediction) pairs.

    Raises ValueError on an empty sequence. Zero denominators report a rate
    of 0 with the corresponding ``*_undefined`` flag set.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot evaluate an empty pair sequence")
    exact = pred_cfmt = alpha = true_cfmt = beta = 0
    for y, yhat in pairs:
        match = exact_match(y, yhat)
        exact += match
        if is_cfmt(yhat):
            pred_cfmt += 1
            if not match:
                alpha += 1
        if is_cfmt(y):
            true_cfmt += 1
            if not match:
                beta += 1
    return EvalReport(len(pairs), exact, pred_cfmt, alpha, true_cfmt, beta)


def kfold_split(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Partition indices 0..n-1 into k folds whose sizes differ by at most 1.

    A seeded permutation is cut into contiguous chunks, the first n % k of
    them one element larger.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start : start + size]))
        start += size
    return folds


def kfold_run(
    dataset: Sequence[tuple[object, GridLabel]],
    k: int,
    train_fn: Callable[[list[tuple[object, GridLabel]], int], Callable],
    seed: int = 0,
) -> FoldReport:
    """Train k times, holding out each fold once, and score the holdouts.

    ``train_fn(train_pairs, fold_index)`` must return a predictor mapping a
    list of inputs to a list of GridLabels. Training failures are re-raised
    as FoldError with the fold index attached.
    """
    folds = kfold_split(len(dataset), k, seed)
    reports = []
    for i, holdout in enumerate(folds):
        mask = np.zeros(len(dataset), dtype=bool)
        mask[holdout] = True
        train_pairs = [dataset[j] for j in range(len(dataset)) if not mask[j]]
        try:
            predictor = train_fn(train_pairs, i)
            predicted = predictor([dataset[j][0] for j in holdout])
        except Exception as exc:
            raise FoldError(i, str(exc)) from exc
        truths = [dataset[j][1] for j in holdout]
        reports.append(evaluate(list(zip(truths, predicted))))
    return FoldReport(tuple(reports))


CSV_HEADER = "fold,n,acc,alpha_rate,beta_rate,exact,pred_cfmt,alpha_errors,true_cfmt,beta_errors"


def report_row(report: EvalReport, tag: str) -> str:
    return (
        f"{tag},{report.n},{report.acc:.6f},{report.alpha_rate:.6f},{report.beta_rate:.6f},"
        f"{report.exact},{report.pred_cfmt},{report.alpha_errors},{report.true_cfmt},"
        f"{report.beta_errors}"
    )


def fold_report_csv(report: FoldReport) -> str:
    """CSV rendering: one row per fold plus a mean row."""
    lines = [CSV_HEADER]
    for i, fold in enumerate(report.folds):
        lines.append(report_row(fold, str(i)))
    lines.append(
        f"mean,,{report.mean_acc:.6f},{report.mean_alpha_rate:.6f},"
        f"{report.mean_beta_rate:.6f},,,,,"
    )
    return "\n".join(lines) + "\n"
