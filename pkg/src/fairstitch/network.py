"""Feed-forward networks with per-block freezing and an optional stitching layer.

A network is a chain of affine blocks (relu on hidden blocks, linear output
block producing two logits). A stitch is an extra affine block without
activation placed between block ``stitch_index - 1`` and block
``stitch_index``; data flows input -> blocks before the stitch -> stitch ->
remaining blocks -> logits.

Networks are treated as values: every mutating operation returns a copy.
"""

import copy
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diffcore import GradTape, Tensor, affine, as_matrix, relu, softmax_probs
from .errors import ConfigError, ContractError, RangeError, ShapeError

ACTIVATIONS = ("relu", "none")
STITCH_INITS = ("identity", "random")


class TrainableSelector(str, Enum):
    ALL = "all"
    LAST_BLOCK_ONLY = "last_block_only"
    STITCH_ONLY = "stitch_only"
    NONE = "none"


@dataclass
class LayerBlock:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    trainable: bool = True

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class Network:
    blocks: List[LayerBlock]
    stitch: Optional[LayerBlock] = None
    stitch_index: Optional[int] = None
    seed: Optional[int] = None

    @property
    def dims(self) -> List[int]:
        return [self.blocks[0].in_dim] + [block.out_dim for block in self.blocks]

    def layers(self) -> List[Tuple[str, LayerBlock]]:
        """(name, block) pairs in forward order; the stitch is named 'stitch'."""
        ordered = []
        for i, block in enumerate(self.blocks):
            if self.stitch is not None and i == self.stitch_index:
                ordered.append(("stitch", self.stitch))
            ordered.append((f"block{i}", block))
        return ordered

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def check(self) -> None:
        """Raise ShapeError unless every block chains into the next."""
        if (self.stitch is None) != (self.stitch_index is None):
            raise ShapeError("stitch and stitch_index must be set together")
        previous = None
        for name, block in self.layers():
            if block.bias.shape != (1, block.out_dim):
                raise ShapeError(f"{name}: bias shape {block.bias.shape} does not match weight {block.weight.shape}")
            if block.activation not in ACTIVATIONS:
                raise ShapeError(f"{name}: unknown activation '{block.activation}'")
            if previous is not None and previous.out_dim != block.in_dim:
                raise ShapeError(f"{name}: input dim {block.in_dim} does not chain from {previous.out_dim}")
            previous = block


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(dims: Sequence[int], seed: int) -> Network:
    """Glorot-uniform MLP with zero biases, relu hidden blocks and a 2-logit output."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"dims must be positive, got {dims}")
    if dims[-1] != 2:
        raise ConfigError(f"final dim must be 2 (binary logits), got {dims[-1]}")

    rng = np.random.default_rng(seed)
    blocks = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        blocks.append(LayerBlock(
            weight=glorot_uniform(rng, fan_in, fan_out),
            bias=np.zeros((1, fan_out)),
            activation="none" if last else "relu",
            trainable=True,
        ))
    return Network(blocks=blocks, seed=seed)


def forward(net: Network, x, tape: Optional[GradTape] = None) -> Tensor:
    """Logits for a batch; trainable layers become named tape variables when a tape is given."""
    h = x if isinstance(x, Tensor) else Tensor(as_matrix(x))
    if h.cols != net.blocks[0].in_dim:
        raise ShapeError(f"forward: features have {h.cols} columns, network expects {net.blocks[0].in_dim}")
    for name, block in net.layers():
        if tape is not None and block.trainable:
            w = tape.variable(block.weight, name=f"{name}.w")
            b = tape.variable(block.bias, name=f"{name}.b")
        else:
            w, b = Tensor(block.weight), Tensor(block.bias)
        h = affine(h, w, b)
        if block.activation == "relu":
            h = relu(h)
    return h


def predict_proba(net: Network, x) -> np.ndarray:
    return softmax_probs(forward(net, x)).data.reshape(-1)


def insert_stitch(net: Network, position: Optional[int] = None, init: str = "random",
                  seed: Optional[int] = None) -> Network:
    """Insert a trainable affine stitch before block `position` and freeze everything else.

    `position` defaults to the last block.
    """
    if net.stitch is not None:
        raise ContractError(f"network already has a stitch at position {net.stitch_index}")
    n = len(net.blocks)
    position = n - 1 if position is None else int(position)
    if not 1 <= position <= n - 1:
        raise RangeError(f"stitch position must be in [1, {n - 1}], got {position}")
    if init not in STITCH_INITS:
        raise ConfigError(f"unknown stitch init '{init}', expected one of {STITCH_INITS}")

    in_dim = net.blocks[position - 1].out_dim
    out_dim = net.blocks[position].in_dim
    if init == "identity":
        if in_dim != out_dim:
            raise ShapeError(f"identity stitch needs a square layer, got {in_dim}x{out_dim}")
        weight = np.eye(in_dim)
    else:
        weight = glorot_uniform(np.random.default_rng(seed), in_dim, out_dim)

    stitched = net.copy()
    for block in stitched.blocks:
        block.trainable = False
    stitched.stitch = LayerBlock(weight=weight, bias=np.zeros((1, out_dim)), activation="none", trainable=True)
    stitched.stitch_index = position
    stitched.check()
    return stitched


def set_trainable(net: Network, selector) -> Network:
    selector = TrainableSelector(selector)
    if selector is TrainableSelector.STITCH_ONLY and net.stitch is None:
        raise ContractError("stitch_only selected but the network has no stitch")
    updated = net.copy()
    last = len(updated.blocks) - 1
    for i, block in enumerate(updated.blocks):
        block.trainable = (selector is TrainableSelector.ALL
                           or (selector is TrainableSelector.LAST_BLOCK_ONLY and i == last))
    if updated.stitch is not None:
        updated.stitch.trainable = selector in (TrainableSelector.ALL, TrainableSelector.STITCH_ONLY)
    return updated


def _selected(net: Network, trainable_only: bool) -> List[Tuple[str, LayerBlock]]:
    return [(name, block) for name, block in net.layers() if block.trainable or not trainable_only]


def trainable_count(net: Network) -> int:
    return sum(block.param_count for _, block in _selected(net, True))


def params(net: Network, trainable_only: bool = False) -> np.ndarray:
    """Flat parameter vector: forward layer order, weight before bias, row-major."""
    parts = []
    for _, block in _selected(net, trainable_only):
        parts.append(block.weight.reshape(-1))
        parts.append(block.bias.reshape(-1))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def unflatten(net: Network, vector: np.ndarray, trainable_only: bool = False) -> Network:
    """Copy of `net` with the selected parameters replaced from a flat vector (inverse of `params`)."""
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    updated = net.copy()
    selected = _selected(updated, trainable_only)
    expected = sum(block.param_count for _, block in selected)
    if vector.size != expected:
        raise ContractError(f"parameter vector has {vector.size} entries, expected {expected}")
    offset = 0
    for _, block in selected:
        for attr in ("weight", "bias"):
            current = getattr(block, attr)
            setattr(block, attr, vector[offset:offset + current.size].reshape(current.shape).copy())
            offset += current.size
    return updated


def flatten_grads(net: Network, grads: Dict[str, np.ndarray]) -> np.ndarray:
    """Trainable-parameter gradients from a backward pass, in `params(net, True)` order."""
    parts = []
    for name, _ in _selected(net, True):
        parts.append(grads[f"{name}.w"].reshape(-1))
        parts.append(grads[f"{name}.b"].reshape(-1))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)
