"""Reverse-mode differentiation over dense 2-D float64 arrays.

A `GradTape` records every operation whose inputs require gradients as a
node holding the cached forward value and a vector-Jacobian product. Leaves
are named so gradients come back as ``{name: array}``. Operations on tensors
that do not require gradients are evaluated eagerly and never recorded, so
the same op functions double as a plain numeric forward pass.

Scalars are 1x1 tensors.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, EmptyGroupError, PreconditionError, ShapeError

VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def as_matrix(values) -> np.ndarray:
    """Coerce scalars, vectors (as a single row) and matrices to a float64 2-D array."""
    data = np.asarray(values, dtype=np.float64)
    if data.ndim == 0:
        return data.reshape(1, 1)
    if data.ndim == 1:
        return data.reshape(1, -1)
    if data.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {data.shape}")
    return data


def as_column(values, length: Optional[int] = None) -> np.ndarray:
    data = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    if length is not None and data.shape[0] != length:
        raise ShapeError(f"expected {length} rows, got {data.shape[0]}")
    return data


class Tensor:
    """A dense row-major matrix, optionally tracked by a tape."""

    __slots__ = ("data", "requires_grad", "tape", "node_id", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 tape: Optional["GradTape"] = None, node_id: Optional[int] = None,
                 name: Optional[str] = None):
        self.data = data
        self.requires_grad = requires_grad
        self.tape = tape
        self.node_id = node_id
        self.name = name

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tracked = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tracked})"


def constant(values) -> Tensor:
    return Tensor(as_matrix(values).copy())


@dataclass
class TapeNode:
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    vjp: Optional[VJP] = None
    name: Optional[str] = None


@dataclass
class GradTape:
    """Append-only operation record; node ids are list positions, so inputs always precede outputs."""

    nodes: List[TapeNode] = field(default_factory=list)
    leaves: Dict[str, int] = field(default_factory=dict)

    def variable(self, values, name: Optional[str] = None, requires_grad: bool = True) -> Tensor:
        data = as_matrix(values).copy()
        if not requires_grad:
            return Tensor(data)
        node_id = len(self.nodes)
        name = name or f"v{node_id}"
        if name in self.leaves:
            raise ContractError(f"variable name '{name}' already used on this tape")
        self.nodes.append(TapeNode("leaf", (), data, None, name))
        self.leaves[name] = node_id
        return Tensor(data, True, self, node_id, name)

    def record(self, kind: str, inputs: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
        for tensor in inputs:
            if tensor.requires_grad and tensor.tape is not self:
                raise ContractError(f"{kind}: inputs were recorded on a different tape")
        node_id = len(self.nodes)
        input_ids = tuple(t.node_id if t.requires_grad else -1 for t in inputs)
        self.nodes.append(TapeNode(kind, input_ids, data, vjp))
        return Tensor(data, True, self, node_id)


def _emit(kind: str, inputs: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
    tape = next((t.tape for t in inputs if t.requires_grad), None)
    if tape is None:
        return Tensor(data)
    return tape.record(kind, inputs, data, vjp)


def _require_scalar(op: str, tensor: Tensor) -> None:
    if tensor.shape != (1, 1):
        raise ShapeError(f"{op}: expected a 1x1 scalar, got {tensor.shape}")


def _binary_labels(op: str, values, length: int) -> np.ndarray:
    labels = np.asarray(values).reshape(-1)
    if labels.shape[0] != length:
        raise ShapeError(f"{op}: {labels.shape[0]} labels for {length} rows")
    if not np.all((labels == 0) | (labels == 1)):
        raise PreconditionError(f"{op}: labels must be 0 or 1")
    return labels.astype(np.int64)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return g @ b_data.T, a_data.T @ g

    return _emit("matmul", (a, b), a_data @ b_data, vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    if x.cols != w.rows or b.shape != (1, w.cols):
        raise ShapeError(f"affine: incompatible shapes x={x.shape}, w={w.shape}, b={b.shape}")
    x_data, w_data = x.data, w.data

    def vjp(g):
        return g @ w_data.T, x_data.T @ g, g.sum(axis=0, keepdims=True)

    return _emit("affine", (x, w, b), x_data @ w_data + b.data, vjp)


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    active = x.data > 0.0

    def vjp(g):
        return (g * active,)

    return _emit("relu", (x,), np.where(active, x.data, 0.0), vjp)


def softmax_probs(logits: Tensor) -> Tensor:
    """Class-1 probability per row of a two-column logit matrix (m x 1)."""
    if logits.cols != 2:
        raise ShapeError(f"softmax_probs: expected 2 logit columns, got {logits.cols}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    p = expd[:, 1:2] / expd.sum(axis=1, keepdims=True)

    def vjp(g):
        d = g * p * (1.0 - p)
        return (np.hstack([-d, d]),)

    return _emit("softmax_probs", (logits,), p, vjp)


def _log_softmax(data: np.ndarray) -> np.ndarray:
    shifted = data - data.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_row_cross_entropy(logits: Tensor, y) -> Tensor:
    """-log softmax probability of the true class for every row (m x 1)."""
    if logits.cols != 2:
        raise ShapeError(f"cross_entropy: expected 2 logit columns, got {logits.cols}")
    if logits.rows == 0:
        raise PreconditionError("cross_entropy: empty batch")
    labels = _binary_labels("cross_entropy", y, logits.rows)
    log_probs = _log_softmax(logits.data)
    rows = np.arange(logits.rows)
    losses = -log_probs[rows, labels].reshape(-1, 1)
    residual = np.exp(log_probs)
    residual[rows, labels] -= 1.0

    def vjp(g):
        return (g * residual,)

    return _emit("per_row_cross_entropy", (logits,), losses, vjp)


def cross_entropy(logits: Tensor, y) -> Tensor:
    """Mean cross-entropy of a two-class logit matrix against 0/1 labels."""
    if logits.cols != 2:
        raise ShapeError(f"cross_entropy: expected 2 logit columns, got {logits.cols}")
    if logits.rows == 0:
        raise PreconditionError("cross_entropy: empty batch")
    labels = _binary_labels("cross_entropy", y, logits.rows)
    log_probs = _log_softmax(logits.data)
    rows = np.arange(logits.rows)
    m = logits.rows
    value = np.array([[-log_probs[rows, labels].sum() / m]])
    residual = np.exp(log_probs)
    residual[rows, labels] -= 1.0

    def vjp(g):
        return (g[0, 0] * residual / m,)

    return _emit("cross_entropy", (logits,), value, vjp)


def masked_mean(v: Tensor, mask) -> Tensor:
    """(sum v*mask) / (sum mask); the mask is a constant 0/1 column."""
    if v.cols != 1:
        raise ShapeError(f"masked_mean: expected a column, got {v.shape}")
    mask_col = as_column(mask, v.rows)
    if not np.all((mask_col == 0.0) | (mask_col == 1.0)):
        raise PreconditionError("masked_mean: mask entries must be 0 or 1")
    total = mask_col.sum()
    if total == 0:
        raise EmptyGroupError("masked_mean: mask selects no rows")
    value = np.array([[(v.data * mask_col).sum() / total]])

    def vjp(g):
        return (g[0, 0] * mask_col / total,)

    return _emit("masked_mean", (v,), value, vjp)


def _constant_like(values, v: Tensor) -> np.ndarray:
    if np.ndim(values) == 0:
        return np.full(v.shape, float(values))
    return np.broadcast_to(as_column(values, v.rows), v.shape)


def elementwise_affine(v: Tensor, scale, shift) -> Tensor:
    """v * scale + shift with constant per-row scale and shift."""
    scale_arr = _constant_like(scale, v)
    shift_arr = _constant_like(shift, v)

    def vjp(g):
        return (g * scale_arr,)

    return _emit("elementwise_affine", (v,), v.data * scale_arr + shift_arr, vjp)


def abs_scalar(s: Tensor) -> Tensor:
    _require_scalar("abs_scalar", s)
    sign = np.sign(s.data)

    def vjp(g):
        return (g * sign,)

    return _emit("abs", (s,), np.abs(s.data), vjp)


def max_scalar(scalars: Sequence[Tensor]) -> Tensor:
    """Maximum of scalars; the whole subgradient goes to the lowest-index argmax."""
    if not scalars:
        raise PreconditionError("max_scalar: no arguments")
    for s in scalars:
        _require_scalar("max_scalar", s)
    values = np.array([s.data[0, 0] for s in scalars])
    winner = int(np.argmax(values))

    def vjp(g):
        return tuple(g if i == winner else None for i in range(len(scalars)))

    return _emit("max", tuple(scalars), np.array([[values[winner]]]), vjp)


def weighted_sum(scalars: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    if len(scalars) != len(weights):
        raise ShapeError(f"weighted_sum: {len(scalars)} scalars but {len(weights)} weights")
    for s in scalars:
        _require_scalar("weighted_sum", s)
    coefficients = [float(w) for w in weights]
    total = 0.0
    for s, w in zip(scalars, coefficients):
        total = total + w * s.data[0, 0]

    def vjp(g):
        return tuple(g * w for w in coefficients)

    return _emit("weighted_sum", tuple(scalars), np.array([[total]]), vjp)


def sum_of_squares(x: Tensor) -> Tensor:
    x_data = x.data

    def vjp(g):
        return (2.0 * g[0, 0] * x_data,)

    return _emit("sum_of_squares", (x,), np.array([[np.sum(x_data * x_data)]]), vjp)


def backward(tape: GradTape, root: Tensor) -> Dict[str, np.ndarray]:
    """Gradients of a scalar root for every leaf variable on the tape.

    Leaves the root does not depend on get zero arrays. Nodes are visited in
    reverse recording order, so accumulation order is fixed.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward: root must be a 1x1 scalar, got {root.shape}")
    grads = {name: np.zeros_like(tape.nodes[node_id].value) for name, node_id in tape.leaves.items()}
    if not root.requires_grad:
        return grads
    if root.tape is not tape:
        raise ContractError("backward: root was not recorded on this tape")

    pending: Dict[int, np.ndarray] = {root.node_id: np.ones((1, 1))}
    for node_id in range(root.node_id, -1, -1):
        g = pending.pop(node_id, None)
        if g is None:
            continue
        node = tape.nodes[node_id]
        if node.vjp is None:
            grads[node.name] = np.array(g, dtype=np.float64, copy=True)
            continue
        for input_id, input_grad in zip(node.inputs, node.vjp(g)):
            if input_id < 0 or input_grad is None:
                continue
            if input_id in pending:
                pending[input_id] = pending[input_id] + input_grad
            else:
                pending[input_id] = input_grad
    return grads


@dataclass
class GradCheckReport:
    analytic: List[np.ndarray]
    numeric: List[np.ndarray]
    max_rel_error: float
    max_abs_error: float
    worst: Tuple[int, int]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def finite_diff_check(f: Callable[[List[Tensor]], Tensor], params: Sequence, h: float = 1e-6,
                      tol: float = 1e-5, denominator_floor: float = 1e-8) -> GradCheckReport:
    """Compare tape gradients of `f` with central differences.

    `f` maps a list of tensors (one per parameter array) to a scalar tensor.
    Relative error per entry is |g - g_hat| / max(|g|, |g_hat|, denominator_floor).
    """
    if h <= 0:
        raise PreconditionError(f"finite_diff_check: step must be positive, got {h}")
    arrays = [as_matrix(p).copy() for p in params]

    tape = GradTape()
    leaves = [tape.variable(a, name=f"p{i}") for i, a in enumerate(arrays)]
    root = f(leaves)
    grads = backward(tape, root)
    analytic = [grads[f"p{i}"] for i in range(len(arrays))]

    def evaluate() -> float:
        return f([Tensor(a) for a in arrays]).item()

    numeric = []
    max_rel, max_abs, worst = 0.0, 0.0, (0, 0)
    for i, array in enumerate(arrays):
        estimate = np.zeros_like(array)
        flat = array.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            upper = evaluate()
            flat[j] = original - h
            lower = evaluate()
            flat[j] = original
            estimate.reshape(-1)[j] = (upper - lower) / (2.0 * h)
        numeric.append(estimate)

        diff = np.abs(analytic[i] - estimate)
        scale = np.maximum(np.maximum(np.abs(analytic[i]), np.abs(estimate)), denominator_floor)
        rel = diff / scale
        if rel.size and rel.max() > max_rel:
            max_rel = float(rel.max())
            worst = (i, int(np.argmax(rel)))
        if diff.size:
            max_abs = max(max_abs, float(diff.max()))

    return GradCheckReport(analytic, numeric, max_rel, max_abs, worst, tol)
