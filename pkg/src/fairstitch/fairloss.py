"""Differentiable fairness surrogates and the regularised training objective.

The objective is ``cross_entropy + alpha * R`` where R is one of the soft
group-fairness penalties below, all computed from class-1 probabilities p on
the full batch. Rows are (p_i, y_i, a_i) with binary label and attribute.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict

import numpy as np

from .diffcore import (
    Tensor,
    abs_scalar,
    as_column,
    cross_entropy,
    elementwise_affine,
    masked_mean,
    max_scalar,
    per_row_cross_entropy,
    softmax_probs,
    weighted_sum,
)
from .errors import ConfigError, EmptyGroupError, PreconditionError, ShapeError


class ConstraintKind(str, Enum):
    NONE = "none"
    EO = "eo"
    AE = "ae"
    MMF = "mmf"


class EODenominator(str, Enum):
    # group_size divides by group sizes; conditional by label-conditioned cell counts
    GROUP_SIZE = "group_size"
    CONDITIONAL = "conditional"


DEFAULT_ALPHA = {
    ConstraintKind.NONE: 0.0,
    ConstraintKind.EO: 20.0,
    ConstraintKind.AE: 20.0,
    ConstraintKind.MMF: 1.0,
}

# (y, a) cells in tie-break order
CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class FairnessConstraint:
    kind: ConstraintKind = ConstraintKind.NONE
    alpha: float = 0.0
    eo_denominator: EODenominator = EODenominator.GROUP_SIZE

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ConstraintKind(self.kind))
            object.__setattr__(self, "eo_denominator", EODenominator(self.eo_denominator))
        except ValueError as e:
            raise ConfigError(str(e), "constraint") from e
        alpha = float(self.alpha)
        if not np.isfinite(alpha) or alpha < 0:
            raise ConfigError(f"alpha must be a finite non-negative number, got {self.alpha}", "constraint.alpha")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def default_for(cls, kind, eo_denominator=EODenominator.GROUP_SIZE) -> "FairnessConstraint":
        kind = ConstraintKind(kind)
        return cls(kind, DEFAULT_ALPHA[kind], eo_denominator)

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.kind is ConstraintKind.NONE else self.alpha

    def to_dict(self) -> Dict[str, object]:
        return {"kind": self.kind.value, "alpha": self.alpha, "eo_denominator": self.eo_denominator.value}


@dataclass
class BatchContext:
    p: Tensor
    y: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        m = self.p.rows
        if self.p.cols != 1:
            raise ShapeError(f"BatchContext: p must be a column, got {self.p.shape}")
        self.y = as_column(self.y, m).reshape(-1)
        self.a = as_column(self.a, m).reshape(-1)
        for label, values in (("y", self.y), ("a", self.a)):
            if not np.all((values == 0) | (values == 1)):
                raise PreconditionError(f"BatchContext: {label} must be 0/1")

    @classmethod
    def from_logits(cls, logits: Tensor, y, a) -> "BatchContext":
        return cls(softmax_probs(logits), y, a)


def _nonempty(mask: np.ndarray, what: str) -> np.ndarray:
    if mask.sum() == 0:
        raise EmptyGroupError(f"{what} has no rows in this batch")
    return mask


def _gap(left: Tensor, right: Tensor) -> Tensor:
    return abs_scalar(weighted_sum([left, right], [1.0, -1.0]))


def eo_surrogate(ctx: BatchContext, denominator: EODenominator = EODenominator.GROUP_SIZE) -> Tensor:
    """Soft equalized-odds gap T + F between the a=1 and a=0 groups.

    T compares p on negatives, F compares (1 - p) on positives.
    """
    y, a = ctx.y, ctx.a
    group1 = _nonempty(a, "group a=1")
    group0 = _nonempty(1.0 - a, "group a=0")
    if EODenominator(denominator) is EODenominator.GROUP_SIZE:
        p_on_neg = elementwise_affine(ctx.p, 1.0 - y, 0.0)
        miss_on_pos = elementwise_affine(ctx.p, -y, y)
        t_term = _gap(masked_mean(p_on_neg, group1), masked_mean(p_on_neg, group0))
        f_term = _gap(masked_mean(miss_on_pos, group1), masked_mean(miss_on_pos, group0))
    else:
        one_minus_p = elementwise_affine(ctx.p, -1.0, 1.0)
        t_term = _gap(masked_mean(ctx.p, _nonempty((1.0 - y) * group1, "cell (y=0, a=1)")),
                      masked_mean(ctx.p, _nonempty((1.0 - y) * group0, "cell (y=0, a=0)")))
        f_term = _gap(masked_mean(one_minus_p, _nonempty(y * group1, "cell (y=1, a=1)")),
                      masked_mean(one_minus_p, _nonempty(y * group0, "cell (y=1, a=0)")))
    return weighted_sum([t_term, f_term], [1.0, 1.0])


def ae_surrogate(ctx: BatchContext) -> Tensor:
    """Gap in group-mean soft error p(1-y) + (1-p)y."""
    y, a = ctx.y, ctx.a
    soft_error = elementwise_affine(ctx.p, 1.0 - 2.0 * y, y)
    return _gap(masked_mean(soft_error, _nonempty(a, "group a=1")),
                masked_mean(soft_error, _nonempty(1.0 - a, "group a=0")))


def mmf_surrogate(ctx: BatchContext, per_row_ce: Tensor) -> Tensor:
    """Largest (y, a)-cell mean cross-entropy."""
    cell_losses = []
    for y_value, a_value in CELLS:
        mask = ((ctx.y == y_value) & (ctx.a == a_value)).astype(np.float64)
        _nonempty(mask, f"cell (y={y_value}, a={a_value})")
        cell_losses.append(masked_mean(per_row_ce, mask))
    return max_scalar(cell_losses)


def _eo_penalty(logits: Tensor, ctx: BatchContext, constraint: FairnessConstraint) -> Tensor:
    return eo_surrogate(ctx, constraint.eo_denominator)


def _ae_penalty(logits: Tensor, ctx: BatchContext, constraint: FairnessConstraint) -> Tensor:
    return ae_surrogate(ctx)


def _mmf_penalty(logits: Tensor, ctx: BatchContext, constraint: FairnessConstraint) -> Tensor:
    return mmf_surrogate(ctx, per_row_cross_entropy(logits, ctx.y))


PENALTIES: Dict[ConstraintKind, Callable[[Tensor, BatchContext, FairnessConstraint], Tensor]] = {
    ConstraintKind.EO: _eo_penalty,
    ConstraintKind.AE: _ae_penalty,
    ConstraintKind.MMF: _mmf_penalty,
}


def fairness_penalty(logits: Tensor, ctx: BatchContext, constraint: FairnessConstraint) -> Tensor:
    return PENALTIES[constraint.kind](logits, ctx, constraint)


def composite_objective(logits: Tensor, ctx: BatchContext, constraint: FairnessConstraint) -> Tensor:
    """Cross-entropy plus alpha times the selected fairness penalty."""
    ce = cross_entropy(logits, ctx.y)
    if constraint.kind is ConstraintKind.NONE:
        return ce
    return weighted_sum([ce, fairness_penalty(logits, ctx, constraint)], [1.0, constraint.alpha])
