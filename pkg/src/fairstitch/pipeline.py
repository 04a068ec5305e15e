"""Full-batch training procedures: ERM pretraining, stitch training and last-block fine-tuning.

Every procedure runs plain heavy-ball SGD on the whole split at once, scores
the validation split after each epoch and keeps the trainable vector of every
epoch so the best one can be restored after the run.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .datasets import TripletDataset
from .diffcore import GradTape, Tensor, backward
from .errors import ContractError, DivergenceError, PreconditionError
from .fairloss import BatchContext, ConstraintKind, FairnessConstraint, composite_objective
from .fairmetrics import MetricSettings, MetricsReport, metrics_report
from .network import (
    Network,
    TrainableSelector,
    glorot_uniform,
    flatten_grads,
    forward,
    insert_stitch,
    params,
    predict_proba,
    set_trainable,
    trainable_count,
    unflatten,
)

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
LOG_EVERY = 100
PHASES = ("erm", "tfs", "fdr")


@dataclass
class OptimizerState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def reset(self, size: int) -> "OptimizerState":
        """Same hyperparameters, zero velocity for `size` trainable parameters."""
        return replace(self, velocity=np.zeros(size))

    def hyperparameters(self) -> Dict[str, float]:
        return {"lr": self.learning_rate, "momentum": self.momentum, "weight_decay": self.weight_decay}


def sgd_step(theta, grads, state: OptimizerState):
    """One heavy-ball step: v <- mu*v + g + lambda*theta, theta <- theta - eta*v.

    Returns the new parameter vector and the new state; inputs are not modified.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    grads = np.asarray(grads, dtype=np.float64).reshape(-1)
    velocity = state.velocity if state.velocity.size else np.zeros_like(theta)
    if not (theta.size == grads.size == velocity.size):
        raise ContractError(
            f"sgd_step: {theta.size} parameters, {grads.size} gradients, {velocity.size} velocity entries")
    velocity = state.momentum * velocity + grads + state.weight_decay * theta
    return theta - state.learning_rate * velocity, replace(state, velocity=velocity)


@dataclass
class RunRecord:
    phase: str
    epoch: int
    objective: float
    validation: Optional[MetricsReport]
    constraint: Dict[str, object]
    seed: int
    wall_time: float = 0.0

    def to_dict(self, include_wall_time: bool = False) -> Dict[str, object]:
        data = {
            "phase": self.phase,
            "epoch": self.epoch,
            "objective": self.objective,
            "validation": None if self.validation is None else self.validation.to_dict(),
            "constraint": self.constraint,
            "seed": self.seed,
        }
        if include_wall_time:
            data["wall_time"] = self.wall_time
        return data


@dataclass
class TrainingResult:
    """Outcome of one training procedure.

    `initial` is the network as training started (for TFS it carries the
    freshly initialised stitch); `best` is the epoch chosen by select_best,
    or `final` when there is no validation split or no epochs ran.
    """

    phase: str
    initial: Network
    final: Network
    best: Network
    best_epoch: int
    records: List[RunRecord]
    optimizer: OptimizerState

    @property
    def epochs(self) -> int:
        return len(self.records)


def objective_value(net: Network, ds: TripletDataset, constraint: FairnessConstraint) -> float:
    """Training objective (cross-entropy plus weighted penalty) of `net` on a whole split."""
    logits = forward(net, Tensor(ds.x))
    return composite_objective(logits, BatchContext.from_logits(logits, ds.y, ds.a), constraint).item()


def evaluate_model(net: Network, ds: TripletDataset, kind=ConstraintKind.NONE,
                   settings: MetricSettings = MetricSettings()) -> MetricsReport:
    return metrics_report(predict_proba(net, ds.x), ds.y, ds.a, kind, ds.name, settings)


def select_best(records: List[RunRecord]) -> int:
    """Epoch with the highest validation AF (BACC when no constraint is active); ties go to the earliest."""
    if not records:
        raise PreconditionError("select_best: no records")
    best_epoch, best_value = None, None
    for record in records:
        if record.validation is None:
            raise PreconditionError(f"select_best: epoch {record.epoch} has no validation report")
        report = record.validation
        value = report.bacc if report.af is None else report.af
        if best_value is None or value > best_value:
            best_epoch, best_value = record.epoch, value
    return best_epoch


def _fit(net: Network, train: TripletDataset, val: Optional[TripletDataset], constraint: FairnessConstraint,
         epochs: int, opt: OptimizerState, phase: str, seed: int,
         settings: MetricSettings) -> TrainingResult:
    if epochs < 0:
        raise PreconditionError(f"epochs must be non-negative, got {epochs}")
    if len(train) == 0:
        raise PreconditionError(f"{phase}: empty training split")
    net.check()
    initial = net.copy()
    frozen_before = params(_flip_trainable(net), trainable_only=True)
    state = opt.reset(trainable_count(net))
    theta = params(net, trainable_only=True)
    x = Tensor(train.x)

    logger.info("%s: %d epochs on %d rows, %d trainable parameters, constraint=%s alpha=%g",
                phase, epochs, len(train), theta.size, constraint.kind.value, constraint.effective_alpha)
    records: List[RunRecord] = []
    snapshots: List[np.ndarray] = []
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        tape = GradTape()
        logits = forward(net, x, tape)
        objective = composite_objective(logits, BatchContext.from_logits(logits, train.y, train.a), constraint)
        value = objective.item()
        if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise DivergenceError(epoch, state.learning_rate, value)

        grads = flatten_grads(net, backward(tape, objective))
        theta, state = sgd_step(theta, grads, state)
        net = unflatten(net, theta, trainable_only=True)
        snapshots.append(theta)

        report = None if val is None else evaluate_model(net, val, constraint.kind, settings)
        records.append(RunRecord(phase, epoch, value, report, constraint.to_dict(), seed,
                                 time.perf_counter() - started))
        if epoch % LOG_EVERY == 0 or epoch == epochs:
            logger.info("%s epoch %d/%d: objective=%.6f%s", phase, epoch, epochs, value,
                        "" if report is None else f" val_bacc={report.bacc:.4f} val_af={report.af}")

    if not np.array_equal(params(_flip_trainable(net), trainable_only=True), frozen_before):
        raise ContractError(f"{phase}: a frozen parameter changed during training")

    best, best_epoch = net, len(records)
    if records and val is not None:
        best_epoch = select_best(records)
        best = unflatten(net, snapshots[best_epoch - 1], trainable_only=True)
        logger.info("%s: selected epoch %d of %d", phase, best_epoch, epochs)
    return TrainingResult(phase, initial, net, best, best_epoch, records, state)


def _flip_trainable(net: Network) -> Network:
    """Copy of `net` whose frozen layers are marked trainable and vice versa."""
    flipped = net.copy()
    for _, block in flipped.layers():
        block.trainable = not block.trainable
    return flipped


def train_erm(net: Network, train: TripletDataset, val: Optional[TripletDataset], epochs: int,
              opt: OptimizerState, seed: int, settings: MetricSettings = MetricSettings()) -> TrainingResult:
    """Plain cross-entropy on every parameter; returns the final network."""
    if any(not block.trainable for _, block in net.layers()):
        raise ContractError("train_erm expects a fully trainable network")
    result = _fit(net, train, val, FairnessConstraint(), epochs, opt, "erm", seed, settings)
    result.best, result.best_epoch = result.final, result.epochs
    return result


def train_tfs(pretrained: Network, balanced: TripletDataset, val: Optional[TripletDataset],
              constraint: FairnessConstraint, epochs: int, opt: OptimizerState, seed: int,
              stitch_index: Optional[int] = None, stitch_init: str = "random",
              settings: MetricSettings = MetricSettings()) -> TrainingResult:
    """
    Insert a stitch, freeze everything else and train it on the balanced split.

    Args:
        pretrained: Network without a stitch
        balanced: Training data
        val: Selection data (no selection when None)
        constraint: Fairness penalty and its weight
        epochs: Number of full-batch steps
        opt: Optimizer hyperparameters
        seed: Seed for the stitch initialisation
        stitch_index: Block the stitch sits in front of (the last block when None)
        stitch_init: "random" or "identity"
        settings: Metric settings for the validation reports

    Returns:
        TrainingResult with initial, best and final networks and per-epoch records
    """
    if pretrained.stitch is not None:
        raise ContractError("train_tfs expects a network without a stitch")
    stitched = insert_stitch(pretrained, stitch_index, stitch_init, seed)
    return _fit(stitched, balanced, val, constraint, epochs, opt, "tfs", seed, settings)


def train_fdr(pretrained: Network, balanced: TripletDataset, val: Optional[TripletDataset],
              constraint: FairnessConstraint, epochs: int, opt: OptimizerState, seed: int,
              reinit_last_block: bool = False, settings: MetricSettings = MetricSettings()) -> TrainingResult:
    """Fine-tune only the last block; optionally re-initialise it from `seed` first."""
    if pretrained.stitch is not None:
        raise ContractError("train_fdr expects a network without a stitch")
    net = set_trainable(pretrained, TrainableSelector.LAST_BLOCK_ONLY)
    if reinit_last_block:
        last = net.blocks[-1]
        last.weight = glorot_uniform(np.random.default_rng(seed), last.in_dim, last.out_dim)
        last.bias = np.zeros_like(last.bias)
    return _fit(net, balanced, val, constraint, epochs, opt, "fdr", seed, settings)
