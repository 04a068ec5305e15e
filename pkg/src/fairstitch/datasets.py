"""Triplet datasets (features x, sensitive attribute a, label y).

CSV layout: header ``f0,...,f{d-1},a,y``; features written with 17
significant digits so a save/load round trip is bit-exact.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyGroupError, ParseError, ShapeError
from .fairloss import CELLS

logger = logging.getLogger(__name__)


@dataclass
class TripletDataset:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.a = np.asarray(self.a).reshape(-1).astype(np.int64)
        self.y = np.asarray(self.y).reshape(-1).astype(np.int64)
        if self.x.ndim != 2:
            raise ShapeError(f"features must be a matrix, got shape {self.x.shape}")
        if not (self.x.shape[0] == self.a.shape[0] == self.y.shape[0]):
            raise ShapeError(f"inconsistent lengths: x={self.x.shape[0]}, a={self.a.shape[0]}, y={self.y.shape[0]}")
        if not np.all(np.isfinite(self.x)):
            raise ShapeError("features must be finite")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, index: np.ndarray, name: str) -> "TripletDataset":
        return TripletDataset(self.x[index], self.a[index], self.y[index], name)

    def cell_mask(self, y_value: int, a_value: int) -> np.ndarray:
        return (self.y == y_value) & (self.a == a_value)


@dataclass
class CellCounts:
    """Row counts per (y, a) cell."""

    counts: Dict[Tuple[int, int], int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def minimum(self) -> int:
        return min(self.counts.values())

    def to_dict(self) -> Dict[str, int]:
        return {f"y{y}_a{a}": self.counts[(y, a)] for y, a in CELLS}


def cell_counts(ds: TripletDataset) -> CellCounts:
    return CellCounts({cell: int(ds.cell_mask(*cell).sum()) for cell in CELLS})


def concat(datasets: Sequence[TripletDataset], name: str) -> TripletDataset:
    return TripletDataset(
        np.vstack([d.x for d in datasets]),
        np.concatenate([d.a for d in datasets]),
        np.concatenate([d.y for d in datasets]),
        name,
    )


def _parse_floats(column: pd.Series) -> np.ndarray:
    """Convert a string column to float64, exact on the literals save_csv writes; bad cells become NaN."""
    values = np.empty(len(column))
    for i, text in enumerate(column):
        try:
            values[i] = float(text)
        except ValueError:
            values[i] = np.nan
    return values


def load_csv(path, name: str = "") -> TripletDataset:
    """
    Parse a triplet CSV with header f0,...,f{d-1},a,y.

    Args:
        path: Path to the CSV file
        name: Dataset name (the file stem when empty)

    Returns:
        TripletDataset with float64 features and 0/1 labels

    Raises ParseError naming the row and column of the first malformed cell.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} is empty") from e

    columns = list(frame.columns)
    for required in ("a", "y"):
        if required not in columns:
            raise ParseError(f"{path}: missing column", column=required)
    feature_columns = [c for c in columns if c not in ("a", "y")]
    expected = [f"f{i}" for i in range(len(feature_columns))]
    if not feature_columns:
        raise ParseError(f"{path}: no feature columns f0..f{{d-1}}")
    if feature_columns != expected:
        raise ParseError(f"{path}: feature columns must be {expected[:3]}..., got {feature_columns[:3]}...")
    if frame.empty:
        raise ParseError(f"{path}: no data rows")

    features = np.empty((len(frame), len(feature_columns)))
    for j, column in enumerate(feature_columns):
        values = _parse_floats(frame[column])
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            row = int(bad[0])
            raise ParseError(f"{path}: non-numeric feature value {frame[column].iloc[row]!r}",
                             row=row + 1, column=column)
        features[:, j] = values

    binary = {}
    for column in ("a", "y"):
        raw = frame[column].str.strip()
        bad = np.flatnonzero(~raw.isin(["0", "1"]).to_numpy())
        if bad.size:
            row = int(bad[0])
            raise ParseError(f"{path}: value {frame[column].iloc[row]!r} is not 0 or 1", row=row + 1, column=column)
        binary[column] = raw.astype(np.int64).to_numpy()

    logger.info("Loaded %d rows with %d features from %s", len(frame), len(feature_columns), path)
    return TripletDataset(features, binary["a"], binary["y"], name or path.stem)


def save_csv(ds: TripletDataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(ds.x, columns=[f"f{i}" for i in range(ds.dim)])
    frame["a"] = ds.a
    frame["y"] = ds.y
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic biased generator; cell_probs follow (y, a) order (0,0), (0,1), (1,0), (1,1)."""

    n: int
    d: int
    cell_probs: Tuple[float, float, float, float] = (0.45, 0.45, 0.05, 0.05)
    class_separation: float = 2.0
    attribute_shift: float = 1.5
    label_noise: float = 0.05
    seed: int = 0


def synth_biased(spec: SynthSpec) -> TripletDataset:
    """Gaussian features whose mean depends on y, a and their interaction; labels flipped with prob label_noise."""
    probs = np.asarray(spec.cell_probs, dtype=np.float64)
    if probs.shape != (4,) or np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ConfigError(f"cell_probs must be 4 positive numbers summing to 1, got {list(spec.cell_probs)}",
                          "data.synthetic.cell_probs")
    if spec.n < 1:
        raise ConfigError(f"n must be at least 1, got {spec.n}", "data.synthetic.n")
    if spec.d < 3:
        raise ConfigError(f"d must be at least 3, got {spec.d}", "data.synthetic.d")
    if not 0.0 <= spec.label_noise <= 1.0:
        raise ConfigError(f"label_noise must be in [0, 1], got {spec.label_noise}", "data.synthetic.label_noise")

    rng = np.random.default_rng(spec.seed)
    cells = rng.choice(4, size=spec.n, p=probs / probs.sum())
    y_true = np.array([CELLS[c][0] for c in range(4)])[cells]
    a = np.array([CELLS[c][1] for c in range(4)])[cells]

    delta, gamma = spec.class_separation, spec.attribute_shift
    mean = np.zeros((spec.n, spec.d))
    mean[:, 0] = delta * y_true
    mean[:, 1] = gamma * a
    mean[:, 2] = (gamma * delta / 2.0) * y_true * a
    x = mean + rng.standard_normal((spec.n, spec.d))

    flips = rng.random(spec.n) < spec.label_noise
    y = np.where(flips, 1 - y_true, y_true)
    return TripletDataset(x, a, y, "synthetic")


def balanced_subsample(train: TripletDataset, val: TripletDataset, seed: int) -> TripletDataset:
    """
    Equal-size (y, a) cells drawn without replacement from train and val pooled.

    Args:
        train: Training split
        val: Validation split
        seed: Seed for the per-cell draws

    Returns:
        Dataset with as many rows per cell as the smallest pooled cell
    """
    pool = concat([train, val], "pool")
    counts = cell_counts(pool)
    for cell, count in counts.counts.items():
        if count == 0:
            raise EmptyGroupError(f"cell (y={cell[0]}, a={cell[1]}) is empty in the pooled train+val rows")
    per_cell = counts.minimum()

    rng = np.random.default_rng(seed)
    chosen = []
    for cell in CELLS:
        members = np.flatnonzero(pool.cell_mask(*cell))
        chosen.append(rng.choice(members, size=per_cell, replace=False))
    index = rng.permutation(np.concatenate(chosen))
    logger.info("Balanced subsample: %d rows per cell, %d total", per_cell, index.size)
    return pool.subset(index, "balanced")


def _largest_remainder(total: int, fractions: Sequence[float]) -> List[int]:
    quotas = [f * total for f in fractions]
    sizes = [int(np.floor(q)) for q in quotas]
    remainders = [q - s for q, s in zip(quotas, sizes)]
    for i in sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))[: total - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(ds: TripletDataset, fractions: Sequence[float], seed: int, stratify_by_cell: bool = True,
          names: Sequence[str] = ("train", "val", "test")) -> List[TripletDataset]:
    """
    Disjoint, exhaustive random split of a dataset.

    Args:
        ds: Dataset to split
        fractions: Share of rows per part, positive and summing to 1
        seed: Seed for the row shuffle
        stratify_by_cell: Allocate each (y, a) cell separately by largest remainder
        names: Name given to each part

    Returns:
        One dataset per fraction, in the order given
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != len(names):
        raise ConfigError(f"expected {len(names)} fractions, got {len(fractions)}", "data.fractions")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be positive and sum to 1, got {fractions}", "data.fractions")

    rng = np.random.default_rng(seed)
    if stratify_by_cell:
        groups = [np.flatnonzero(ds.cell_mask(*cell)) for cell in CELLS]
    else:
        groups = [np.arange(len(ds))]

    parts: List[List[np.ndarray]] = [[] for _ in fractions]
    for members in groups:
        shuffled = rng.permutation(members)
        offset = 0
        for k, size in enumerate(_largest_remainder(len(shuffled), fractions)):
            parts[k].append(shuffled[offset:offset + size])
            offset += size

    result = []
    for name, pieces in zip(names, parts):
        index = np.concatenate(pieces)
        if index.size == 0:
            raise ConfigError(f"split '{name}' would be empty for {len(ds)} rows", "data.fractions")
        result.append(ds.subset(rng.permutation(index), name))
    return result
