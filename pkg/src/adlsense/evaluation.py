"""Evaluation battery: cross-subject splits, classification metrics,
success-rate aggregation, and the Friedman / McNemar method-comparison tests.

Predicted and true labels are strings; the reserved label ``"unseen"`` marks
samples of activity classes outside the training registry. Macro precision /
recall / F1 cover the known classes (zero-support classes are excluded with a
warning); accuracy on the unseen marker is reported separately as new-ADL
detection accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaincc
from scipy.stats import rankdata

from .errors import FileFormatError, ValidationError

UNSEEN_LABEL = "unseen"

LABELS_REQUIRED_FIELDS = ("sample_id", "subject_id", "class")


class CoverageError(ValidationError):
    """Predictions do not cover the sample universe."""


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    subject_id: str
    true_class: str
    path: str | None = None

    def __post_init__(self):
        if not self.subject_id:
            raise ValidationError(f"sample {self.sample_id!r} has an empty subject_id")


@dataclass(frozen=True)
class PredictionSet:
    method_name: str
    predictions: dict[str, str]


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricReport:
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    labels: tuple[str, ...]
    confusion: np.ndarray  # rows = truth, cols = prediction
    success_rate: float
    nuadl_accuracy: float | None = None
    zero_support: tuple[str, ...] = ()
    averaging: str = "macro"

    def to_dict(self) -> dict:
        return {
            "per_class": {
                label: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for label, m in sorted(self.per_class.items())
            },
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "labels": list(self.labels),
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "success_rate": self.success_rate,
            "nuadl_accuracy": self.nuadl_accuracy,
            "zero_support": list(self.zero_support),
            "averaging": self.averaging,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(
            per_class={
                label: ClassMetrics(
                    precision=float(m["precision"]),
                    recall=float(m["recall"]),
                    f1=float(m["f1"]),
                    support=int(m["support"]),
                )
                for label, m in data["per_class"].items()
            },
            macro_precision=float(data["macro_precision"]),
            macro_recall=float(data["macro_recall"]),
            macro_f1=float(data["macro_f1"]),
            labels=tuple(data["labels"]),
            confusion=np.asarray(data["confusion"], dtype=np.int64),
            success_rate=float(data["success_rate"]),
            nuadl_accuracy=(
                None if data.get("nuadl_accuracy") is None else float(data["nuadl_accuracy"])
            ),
            zero_support=tuple(data.get("zero_support", ())),
            averaging=str(data.get("averaging", "macro")),
        )

    def __eq__(self, other):
        if not isinstance(other, MetricReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class FriedmanResult:
    q: float
    df: int
    p: float


@dataclass(frozen=True)
class McNemarResult:
    z: float
    p: float
    exact_p: float | None = None


# -- dataset and prediction files ---------------------------------------------


def load_labels(path) -> list[LabeledSample]:
    """Line-delimited records: {"sample_id", "subject_id", "class", "path"}."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from exc
            missing = [f for f in LABELS_REQUIRED_FIELDS if f not in record]
            if missing:
                raise FileFormatError(
                    f"{path}: line {lineno}: missing fields {missing}"
                )
            samples.append(
                LabeledSample(
                    sample_id=str(record["sample_id"]),
                    subject_id=str(record["subject_id"]),
                    true_class=str(record["class"]),
                    path=record.get("path"),
                )
            )
    return samples


def load_predictions(path) -> PredictionSet:
    """Header {"method": name} then lines {"sample_id", "class"}."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: line 1: {exc}") from exc
        if "method" not in header:
            raise FileFormatError(f"{path}: prediction header must declare a method name")
        predictions: dict[str, str] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from exc
            if "sample_id" not in record or "class" not in record:
                raise FileFormatError(
                    f"{path}: line {lineno}: prediction records need sample_id and class"
                )
            predictions[str(record["sample_id"])] = str(record["class"])
    return PredictionSet(method_name=str(header["method"]), predictions=predictions)


def save_predictions(pred: PredictionSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"method": pred.method_name}) + "\n")
        for sample_id in sorted(pred.predictions):
            fh.write(
                json.dumps({"sample_id": sample_id, "class": pred.predictions[sample_id]})
                + "\n"
            )


# -- splits -------------------------------------------------------------------


def cross_subject_split(
    samples: Sequence[LabeledSample], train_fraction: float, seed: int
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Partition subjects disjointly; every sample follows its subject."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must lie strictly between 0 and 1")
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 2:
        raise ValidationError("cross-subject split needs at least 2 distinct subjects")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n_train = int(round(train_fraction * len(subjects)))
    n_train = min(max(n_train, 1), len(subjects) - 1)
    train_subjects = set(order[:n_train])
    train = [s for s in samples if s.subject_id in train_subjects]
    test = [s for s in samples if s.subject_id not in train_subjects]
    return train, test


# -- classification metrics -----------------------------------------------------


def compute_metrics(
    truth: Sequence[LabeledSample],
    predictions: PredictionSet | Mapping[str, str],
    averaging: str = "macro",
) -> MetricReport:
    """Confusion matrix, per-class P/R/F1, macro (or micro) averages.

    The ``unseen`` marker participates in the confusion matrix and in new-ADL
    detection accuracy, but not in the per-class averages.
    """
    if isinstance(predictions, PredictionSet):
        predicted = predictions.predictions
    else:
        predicted = dict(predictions)
    if averaging not in ("macro", "micro"):
        raise ValidationError("averaging must be 'macro' or 'micro'")

    missing = sorted(s.sample_id for s in truth if s.sample_id not in predicted)
    if missing:
        raise CoverageError(f"predictions missing for samples: {missing}")

    labels = sorted({s.true_class for s in truth} | set(predicted.values()))
    index = {label: i for i, label in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for sample in truth:
        confusion[index[sample.true_class], index[predicted[sample.sample_id]]] += 1

    per_class: dict[str, ClassMetrics] = {}
    zero_support: list[str] = []
    for label in labels:
        i = index[label]
        tp = int(confusion[i, i])
        support = int(confusion[i].sum())
        fp = int(confusion[:, i].sum()) - tp
        fn = support - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[label] = ClassMetrics(precision, recall, f1, support)
        if support == 0 and label != UNSEEN_LABEL:
            zero_support.append(label)

    scored = [
        label
        for label in labels
        if label != UNSEEN_LABEL and per_class[label].support > 0
    ]
    if averaging == "macro":
        macro_p = float(np.mean([per_class[c].precision for c in scored])) if scored else 0.0
        macro_r = float(np.mean([per_class[c].recall for c in scored])) if scored else 0.0
        macro_f = float(np.mean([per_class[c].f1 for c in scored])) if scored else 0.0
    else:
        tp = sum(int(confusion[index[c], index[c]]) for c in scored)
        fp = sum(int(confusion[:, index[c]].sum()) - int(confusion[index[c], index[c]]) for c in scored)
        fn = sum(int(confusion[index[c]].sum()) - int(confusion[index[c], index[c]]) for c in scored)
        macro_p = tp / (tp + fp) if tp + fp > 0 else 0.0
        macro_r = tp / (tp + fn) if tp + fn > 0 else 0.0
        macro_f = (
            2 * macro_p * macro_r / (macro_p + macro_r) if macro_p + macro_r > 0 else 0.0
        )

    n_unseen = sum(1 for s in truth if s.true_class == UNSEEN_LABEL)
    nuadl = None
    if n_unseen:
        correct_unseen = sum(
            1
            for s in truth
            if s.true_class == UNSEEN_LABEL and predicted[s.sample_id] == UNSEEN_LABEL
        )
        nuadl = correct_unseen / n_unseen

    correct = sum(1 for s in truth if predicted[s.sample_id] == s.true_class)
    return MetricReport(
        per_class=per_class,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f,
        labels=tuple(labels),
        confusion=confusion,
        success_rate=correct / len(truth) if truth else 0.0,
        nuadl_accuracy=nuadl,
        zero_support=tuple(zero_support),
        averaging=averaging,
    )


def aggregate_rates(rows: Iterable[tuple[int, int]]) -> float:
    """Pooled success rate: total successes over total attempts."""
    successes = 0
    attempts = 0
    for s, a in rows:
        if a <= 0:
            raise ValidationError("every row needs attempts > 0")
        if not 0 <= s <= a:
            raise ValidationError(f"successes {s} outside [0, attempts={a}]")
        successes += s
        attempts += a
    if attempts == 0:
        raise ValidationError("no rows to aggregate")
    return successes / attempts


# -- nonparametric method comparison --------------------------------------------


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability via the regularized upper incomplete
    gamma function (series/continued-fraction evaluation handled by scipy)."""
    if x < 0 or df < 1:
        raise ValidationError("chi2_sf needs x >= 0 and df >= 1")
    return float(gammaincc(df / 2.0, x / 2.0))


def friedman_test(outcomes: np.ndarray) -> FriedmanResult:
    """Friedman rank test over an (n_blocks, k_methods) outcome matrix.

    Values are ranked within each block with midrank ties;
    Q = 12 / (n k (k+1)) * sum_j R_j^2 - 3 n (k+1) over column rank sums R_j,
    referred to the chi-square distribution with k-1 degrees of freedom.
    """
    matrix = np.asarray(outcomes, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValidationError("friedman_test needs an (n_blocks, k_methods) matrix")
    n, k = matrix.shape
    if n < 2 or k < 2:
        raise ValidationError(f"need n >= 2 blocks and k >= 2 methods, got {n}x{k}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("outcome matrix must be finite")

    ranks = np.apply_along_axis(rankdata, 1, matrix)
    rank_sums = ranks.sum(axis=0)
    q = 12.0 / (n * k * (k + 1)) * float((rank_sums**2).sum()) - 3.0 * n * (k + 1)
    df = k - 1
    return FriedmanResult(q=q, df=df, p=chi2_sf(max(q, 0.0), df))


def mcnemar_test(b: int, c: int) -> McNemarResult:
    """Continuity-corrected McNemar test on discordant-pair counts.

    ``b`` counts blocks where only method A was correct and ``c`` where only
    method B was. z carries the sign of b - c (antisymmetric); the two-sided
    p uses the normal tail, with an exact binomial companion for b + c <= 25.
    """
    if b < 0 or c < 0:
        raise ValidationError("discordant counts must be nonnegative")
    n = b + c
    if n == 0:
        z = 0.0
    else:
        magnitude = max(0.0, abs(b - c) - 1.0) / math.sqrt(n)
        z = magnitude if b >= c else -magnitude
        if magnitude == 0.0:
            z = 0.0
    p = math.erfc(abs(z) / math.sqrt(2.0))

    exact_p = None
    if n <= 25:
        if n == 0:
            exact_p = 1.0
        else:
            hi = max(b, c)
            tail = sum(math.comb(n, i) for i in range(hi, n + 1)) / 2.0**n
            exact_p = min(1.0, 2.0 * tail)
    return McNemarResult(z=z, p=p, exact_p=exact_p)


def correctness_matrix(
    truth: Sequence[LabeledSample], prediction_sets: Sequence[PredictionSet]
) -> np.ndarray:
    """Binary (samples, methods) matrix of per-sample correctness."""
    if not prediction_sets:
        raise ValidationError("need at least one prediction set")
    matrix = np.zeros((len(truth), len(prediction_sets)), dtype=np.float64)
    for j, pred in enumerate(prediction_sets):
        missing = sorted(s.sample_id for s in truth if s.sample_id not in pred.predictions)
        if missing:
            raise CoverageError(
                f"method {pred.method_name!r} missing predictions for: {missing}"
            )
        for i, sample in enumerate(truth):
            matrix[i, j] = float(pred.predictions[sample.sample_id] == sample.true_class)
    return matrix


def discordant_counts(
    truth: Sequence[LabeledSample], a: PredictionSet, b: PredictionSet
) -> tuple[int, int]:
    """(only-A-correct, only-B-correct) counts for a McNemar comparison."""
    matrix = correctness_matrix(truth, [a, b])
    only_a = int(((matrix[:, 0] == 1) & (matrix[:, 1] == 0)).sum())
    only_b = int(((matrix[:, 0] == 0) & (matrix[:, 1] == 1)).sum())
    return only_a, only_b
