"""Post-training analyses: loss interpolation, per-group ROC export and comparison reports."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import auc

from .checkpoint import Checkpoint
from .datasets import TripletDataset
from .errors import ContractError, DataError, ShapeError
from .fairloss import FairnessConstraint
from .fairmetrics import MetricSettings, MetricsReport, group_roc, roc_at
from .network import Network, params, predict_proba, unflatten
from .pipeline import evaluate_model, objective_value

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 101
REPORT_METHODS = ("baseline", "fdr", "tfs")
REPORT_SPLITS = ("train", "balanced", "test")


def lerp(theta0: np.ndarray, theta_star: np.ndarray, alpha: float) -> np.ndarray:
    return (1.0 - alpha) * theta0 + alpha * theta_star


def default_grid(points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    if points < 2:
        raise ContractError(f"interpolation grid needs at least 2 points, got {points}")
    return np.linspace(0.0, 1.0, points)


def _check_grid(grid, allow_extrapolation: bool) -> np.ndarray:
    alphas = np.asarray(grid, dtype=np.float64).reshape(-1)
    if alphas.size == 0:
        raise ContractError("interpolation grid is empty")
    if not allow_extrapolation and (alphas.min() < 0.0 or alphas.max() > 1.0):
        raise ContractError("interpolation grid leaves [0, 1]; pass allow_extrapolation to evaluate outside it")
    return alphas


def interpolation_curve(objective: Callable[[np.ndarray], float], theta0, theta_star, grid,
                        allow_extrapolation: bool = False) -> np.ndarray:
    """Objective along the segment theta(alpha) = (1 - alpha) theta0 + alpha theta_star."""
    theta0 = np.asarray(theta0, dtype=np.float64).reshape(-1)
    theta_star = np.asarray(theta_star, dtype=np.float64).reshape(-1)
    if theta0.shape != theta_star.shape:
        raise ContractError(f"endpoints have {theta0.size} and {theta_star.size} parameters")
    alphas = _check_grid(grid, allow_extrapolation)
    return np.array([objective(lerp(theta0, theta_star, float(alpha))) for alpha in alphas])


@dataclass
class InterpolationCurve:
    alphas: np.ndarray
    values: Dict[str, np.ndarray]
    theta0_id: str
    theta_star_id: str
    ce_only: bool = False

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"alpha": self.alphas})
        for name, values in self.values.items():
            frame[name] = values
        return frame


def _network(model: Union[Checkpoint, Network]) -> Tuple[Network, str]:
    if isinstance(model, Checkpoint):
        return model.network, model.path or model.meta.phase
    return model, "network"


def _aligned_start(theta0: Network, theta_star: Network) -> Network:
    """theta0 with theta_star's trainable flags, after checking both share one topology."""
    if theta0.dims != theta_star.dims or theta0.stitch_index != theta_star.stitch_index:
        raise ContractError(
            f"topology mismatch: dims {theta0.dims} stitch {theta0.stitch_index} vs "
            f"dims {theta_star.dims} stitch {theta_star.stitch_index}")
    aligned = theta0.copy()
    flags = {name: block.trainable for name, block in theta_star.layers()}
    for name, block in aligned.layers():
        block.trainable = flags[name]
    return aligned


def interpolate_loss(theta0: Union[Checkpoint, Network], theta_star: Union[Checkpoint, Network],
                     datasets: Mapping[str, TripletDataset], constraint: FairnessConstraint, grid=None,
                     ce_only: bool = False, interpolate_frozen: bool = False,
                     allow_extrapolation: bool = False) -> InterpolationCurve:
    """
    Training objective along the line from theta0 to theta_star on each dataset.

    Only the layers trainable in theta_star move; frozen layers stay at
    theta_star's values unless `interpolate_frozen` is set.

    Args:
        theta0: Start point, a checkpoint or network with theta_star's topology
        theta_star: End point, usually the selected checkpoint
        datasets: Datasets to evaluate, by name
        constraint: Fairness constraint of the objective
        grid: Interpolation coefficients (101 evenly spaced points in [0, 1] when None)
        ce_only: Drop the fairness penalty
        interpolate_frozen: Move frozen layers along the line too
        allow_extrapolation: Accept coefficients outside [0, 1]

    Returns:
        InterpolationCurve with one objective series per dataset
    """
    start_net, start_id = _network(theta0)
    end_net, end_id = _network(theta_star)
    start = _aligned_start(start_net, end_net)
    trainable_only = not interpolate_frozen
    v0 = params(start, trainable_only)
    v1 = params(end_net, trainable_only)
    alphas = default_grid() if grid is None else _check_grid(grid, allow_extrapolation)
    objective_constraint = FairnessConstraint() if ce_only else constraint

    values = {}
    for name, ds in datasets.items():
        def objective(vector: np.ndarray, ds=ds) -> float:
            return objective_value(unflatten(end_net, vector, trainable_only), ds, objective_constraint)

        values[name] = interpolation_curve(objective, v0, v1, alphas, allow_extrapolation=True)
        logger.info("Interpolated %d points on %s: J(0)=%.6f J(1)=%.6f",
                    alphas.size, name, values[name][0], values[name][-1])
    return InterpolationCurve(alphas, values, start_id, end_id, ce_only)


@dataclass
class GroupROC:
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(auc(self.fpr, self.tpr))


def roc_export(p, y, a) -> Dict[int, GroupROC]:
    """Per-group ROC vertices, one threshold per distinct score, ordered by FPR."""
    scores = np.asarray(p, dtype=np.float64).reshape(-1)
    labels = np.asarray(y).reshape(-1)
    groups = np.asarray(a).reshape(-1)
    if not (scores.shape == labels.shape == groups.shape):
        raise ShapeError(f"roc_export: lengths {scores.size}, {labels.size}, {groups.size} differ")
    curves = {}
    for g in (0, 1):
        member = groups == g
        fpr, tpr = group_roc(scores[member], labels[member])
        curves[g] = GroupROC(fpr, tpr)
    return curves


def roc_frame(curves: Mapping[int, GroupROC]) -> pd.DataFrame:
    """Both group curves on the union of their FPR vertices."""
    axis = np.unique(np.concatenate([curves[0].fpr, curves[1].fpr]))
    return pd.DataFrame({
        "fpr": axis,
        "tpr_a0": roc_at(curves[0].fpr, curves[0].tpr, axis),
        "tpr_a1": roc_at(curves[1].fpr, curves[1].tpr, axis),
    })


@dataclass
class ReportRow:
    method: str
    split: str
    metrics: MetricsReport
    objective: float

    def to_dict(self) -> Dict[str, object]:
        return {"method": self.method, "split": self.split, "objective": self.objective, **self.metrics.to_dict()}


@dataclass
class ComparisonReport:
    rows: List[ReportRow]
    abroca: Dict[str, float]
    constraint: Dict[str, object]
    metadata: Dict[str, object] = field(default_factory=dict)

    def row(self, method: str, split: str) -> ReportRow:
        for row in self.rows:
            if row.method == method and row.split == split:
                return row
        raise KeyError((method, split))

    def to_dict(self) -> Dict[str, object]:
        return {
            "metadata": self.metadata,
            "constraint": self.constraint,
            "rows": [row.to_dict() for row in self.rows],
            "abroca": self.abroca,
        }

    def to_text(self) -> str:
        columns = ["method", "split", "bacc", "auc", "eo_diff", "ae_diff", "wa", "af", "abroca", "objective"]
        frame = pd.DataFrame([row.to_dict() for row in self.rows], columns=columns)
        frame["af"] = frame["af"].map(lambda v: "-" if v is None or pd.isna(v) else f"{v:.4f}")
        return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n"


def emit_report(models: Mapping[str, Network], splits: Mapping[str, TripletDataset],
                constraint: FairnessConstraint, settings: MetricSettings = MetricSettings(),
                abroca_split: str = "test", metadata: Optional[Dict[str, object]] = None) -> ComparisonReport:
    """
    Evaluate every (method, split) pair.

    Args:
        models: Networks by method name
        splits: Datasets by split name
        constraint: Constraint that decides AF and the objective value
        settings: Threshold, ABROCA grid and EO-Diff mode
        abroca_split: Split whose ABROCA is listed per method
        metadata: Extra fields written under `metadata`

    Returns:
        ComparisonReport with one row per (method, split)

    A metric failure is re-raised with the same type, prefixed by `[method, split]`.
    """
    rows = []
    abroca = {}
    for method, net in models.items():
        for split_name, ds in splits.items():
            try:
                report = evaluate_model(net, ds, constraint.kind, settings)
                objective = objective_value(net, ds, constraint)
            except (DataError, ContractError, ShapeError) as e:
                raise type(e)(f"[{method}, {split_name}] {e}") from e
            report.split = split_name
            rows.append(ReportRow(method, split_name, report, objective))
            if split_name == abroca_split:
                abroca[method] = report.abroca
    return ComparisonReport(rows, abroca, constraint.to_dict(), dict(metadata or {}))


def report_roc_frames(models: Mapping[str, Network], ds: TripletDataset) -> Dict[str, pd.DataFrame]:
    return {method: roc_frame(roc_export(predict_proba(net, ds.x), ds.y, ds.a)) for method, net in models.items()}
