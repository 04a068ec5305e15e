"""Hard-prediction performance and group-fairness metrics.

Inputs are flat arrays: scores p (class-1 probability), labels y and
sensitive attribute a, both binary. Threshold metrics predict 1 when
p >= threshold. Missing groups or (y, a) cells raise instead of scoring 0.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import roc_curve

from .errors import ContractError, DegenerateSplitError, EmptyGroupError, ShapeError
from .fairloss import CELLS, ConstraintKind

DEFAULT_THRESHOLD = 0.5
DEFAULT_ABROCA_GRID = 10_001
EO_DIFF_MODES = ("max", "sum")


@dataclass(frozen=True)
class MetricSettings:
    threshold: float = DEFAULT_THRESHOLD
    abroca_grid: int = DEFAULT_ABROCA_GRID
    eo_mode: str = "max"


def _binary(name: str, values, length: int) -> np.ndarray:
    arr = np.asarray(values).reshape(-1)
    if arr.shape[0] != length:
        raise ShapeError(f"{name} has {arr.shape[0]} entries, expected {length}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ShapeError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def _inputs(p, y, a=None) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    scores = np.asarray(p, dtype=np.float64).reshape(-1)
    labels = _binary("y", y, scores.shape[0])
    groups = None if a is None else _binary("a", a, scores.shape[0])
    return scores, labels, groups


@dataclass
class GroupCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def size(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def errors(self) -> int:
        return self.fp + self.fn


@dataclass
class GroupConfusion:
    group0: GroupCounts
    group1: GroupCounts
    threshold: float

    def __getitem__(self, group: int) -> GroupCounts:
        return self.group1 if group == 1 else self.group0


def _counts(pred: np.ndarray, labels: np.ndarray) -> GroupCounts:
    return GroupCounts(
        tp=int(np.sum((pred == 1) & (labels == 1))),
        fp=int(np.sum((pred == 1) & (labels == 0))),
        tn=int(np.sum((pred == 0) & (labels == 0))),
        fn=int(np.sum((pred == 0) & (labels == 1))),
    )


def confusion_by_group(p, y, a, threshold: float = DEFAULT_THRESHOLD) -> GroupConfusion:
    scores, labels, groups = _inputs(p, y, a)
    pred = (scores >= threshold).astype(np.int64)
    per_group = []
    for g in (0, 1):
        member = groups == g
        if not member.any():
            raise EmptyGroupError(f"group a={g} is empty")
        per_group.append(_counts(pred[member], labels[member]))
    return GroupConfusion(per_group[0], per_group[1], threshold)


def bacc(p, y, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Balanced accuracy (TPR + TNR) / 2 over the whole split."""
    scores, labels, _ = _inputs(p, y)
    positives = int(np.sum(labels == 1))
    negatives = int(np.sum(labels == 0))
    if positives == 0 or negatives == 0:
        raise DegenerateSplitError("balanced accuracy needs both classes")
    counts = _counts((scores >= threshold).astype(np.int64), labels)
    return (counts.tp / positives + counts.tn / negatives) / 2.0


def auc(p, y) -> float:
    """Mann-Whitney AUC; tied (positive, negative) pairs count one half."""
    scores, labels, _ = _inputs(p, y)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateSplitError("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def _cell_rates(confusion: GroupConfusion) -> Dict[str, Tuple[float, float]]:
    rates = {}
    for g in (0, 1):
        c = confusion[g]
        if c.tp + c.fn == 0:
            raise EmptyGroupError(f"cell (y=1, a={g}) is empty")
        if c.fp + c.tn == 0:
            raise EmptyGroupError(f"cell (y=0, a={g}) is empty")
        rates[g] = (c.tp / (c.tp + c.fn), c.fp / (c.fp + c.tn))
    return rates


def eo_diff(p, y, a, threshold: float = DEFAULT_THRESHOLD, mode: str = "max") -> float:
    """Equalized-odds difference: max (or sum) of the TPR gap and the FPR gap."""
    if mode not in EO_DIFF_MODES:
        raise ContractError(f"unknown eo_diff mode '{mode}', expected one of {EO_DIFF_MODES}")
    rates = _cell_rates(confusion_by_group(p, y, a, threshold))
    tpr_gap = abs(rates[1][0] - rates[0][0])
    fpr_gap = abs(rates[1][1] - rates[0][1])
    return max(tpr_gap, fpr_gap) if mode == "max" else tpr_gap + fpr_gap


def ae_diff(p, y, a, threshold: float = DEFAULT_THRESHOLD) -> float:
    confusion = confusion_by_group(p, y, a, threshold)
    return abs(confusion[1].errors / confusion[1].size - confusion[0].errors / confusion[0].size)


def worst_accuracy(p, y, a, threshold: float = DEFAULT_THRESHOLD) -> float:
    scores, labels, groups = _inputs(p, y, a)
    correct = (scores >= threshold).astype(np.int64) == labels
    accuracies = []
    for y_value, a_value in CELLS:
        cell = (labels == y_value) & (groups == a_value)
        size = int(cell.sum())
        if size == 0:
            raise EmptyGroupError(f"cell (y={y_value}, a={a_value}) is empty")
        accuracies.append(int(correct[cell].sum()) / size)
    return min(accuracies)


def af_score(bacc_value: float, fairness_value: float, kind) -> float:
    """Aggregate fairness: BACC - EO_Diff, BACC - AE_Diff or BACC + WA."""
    kind = ConstraintKind(kind)
    if kind is ConstraintKind.EO or kind is ConstraintKind.AE:
        return bacc_value - fairness_value
    if kind is ConstraintKind.MMF:
        return bacc_value + fairness_value
    raise ContractError("AF is undefined without a fairness constraint")


def group_roc(p, y) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical ROC vertices (fpr, tpr), one per distinct score, from (0, 0) to (1, 1)."""
    scores, labels, _ = _inputs(p, y)
    if labels.min() == labels.max():
        raise DegenerateSplitError("ROC needs both classes in the group")
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return fpr, tpr


def roc_at(fpr: np.ndarray, tpr: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate a ROC curve at FPR values.

    Right-continuous: at an FPR shared by several vertices the highest TPR is
    taken; between vertices the curve follows its segment, which is flat for
    distinct scores and diagonal across tied scores.
    """
    k = np.searchsorted(fpr, points, side="right") - 1
    k = np.clip(k, 0, len(fpr) - 1)
    nxt = np.minimum(k + 1, len(fpr) - 1)
    width = fpr[nxt] - fpr[k]
    safe_width = np.where(width > 0, width, 1.0)
    slope = np.where(width > 0, (tpr[nxt] - tpr[k]) / safe_width, 0.0)
    return tpr[k] + slope * (points - fpr[k])


def abroca(p, y, a, grid: int = DEFAULT_ABROCA_GRID) -> float:
    """Area between the two groups' ROC curves over FPR in [0, 1] (trapezoid rule)."""
    if grid < 2:
        raise ContractError(f"ABROCA grid needs at least 2 points, got {grid}")
    scores, labels, groups = _inputs(p, y, a)
    curves = []
    for g in (0, 1):
        member = groups == g
        if not member.any():
            raise EmptyGroupError(f"group a={g} is empty")
        curves.append(group_roc(scores[member], labels[member]))
    points = np.linspace(0.0, 1.0, grid)
    gap = np.abs(roc_at(*curves[1], points) - roc_at(*curves[0], points))
    step = 1.0 / (grid - 1)
    return float(step * (gap.sum() - 0.5 * (gap[0] + gap[-1])))


@dataclass
class MetricsReport:
    bacc: float
    auc: float
    eo_diff: float
    ae_diff: float
    worst_accuracy: float
    af: Optional[float]
    abroca: float
    threshold: float
    split: str
    constraint: str

    def fairness_value(self) -> float:
        kind = ConstraintKind(self.constraint)
        if kind is ConstraintKind.EO:
            return self.eo_diff
        if kind is ConstraintKind.AE:
            return self.ae_diff
        return self.worst_accuracy

    def to_dict(self) -> Dict[str, object]:
        fields = asdict(self)
        return {
            "bacc": fields["bacc"],
            "auc": fields["auc"],
            "eo_diff": fields["eo_diff"],
            "ae_diff": fields["ae_diff"],
            "wa": fields["worst_accuracy"],
            "af": fields["af"],
            "abroca": fields["abroca"],
            "threshold": fields["threshold"],
            "split": fields["split"],
            "constraint": fields["constraint"],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "MetricsReport":
        return cls(
            bacc=data["bacc"], auc=data["auc"], eo_diff=data["eo_diff"], ae_diff=data["ae_diff"],
            worst_accuracy=data["wa"], af=data["af"], abroca=data["abroca"],
            threshold=data["threshold"], split=data["split"], constraint=data["constraint"],
        )


def metrics_report(p, y, a, kind=ConstraintKind.NONE, split: str = "",
                   settings: MetricSettings = MetricSettings()) -> MetricsReport:
    """Every metric for one model on one split; AF is None when no constraint is active."""
    kind = ConstraintKind(kind)
    threshold, grid, eo_mode = settings.threshold, settings.abroca_grid, settings.eo_mode
    report = MetricsReport(
        bacc=bacc(p, y, threshold),
        auc=auc(p, y),
        eo_diff=eo_diff(p, y, a, threshold, eo_mode),
        ae_diff=ae_diff(p, y, a, threshold),
        worst_accuracy=worst_accuracy(p, y, a, threshold),
        af=None,
        abroca=abroca(p, y, a, grid),
        threshold=threshold,
        split=split,
        constraint=kind.value,
    )
    if kind is not ConstraintKind.NONE:
        report.af = af_score(report.bacc, report.fairness_value(), kind)
    return report
