"""Synthetic data, stratified splits and the dataset / split file formats."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, StratificationError

SPLIT_KEYS = ("train", "val", "cal", "eval", "test")

# Fractions of each class assigned to (train, val, cal, eval, test).
SPLIT_FRACTIONS = {
    "rq12": (0.5, 0.1, 0.2, 0.0, 0.2),
    "rq3": (0.5, 0.1, 0.1, 0.1, 0.2),
}


@dataclass(frozen=True)
class LabeledExample:
    features: tuple
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix in the unit box plus integer labels.

    ``X`` has shape ``(n, dim)`` and ``y`` shape ``(n,)``. Both arrays are
    made read-only on construction.
    """

    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.int64, copy=True)
        if X.ndim != 2:
            raise ParameterError("features must be a 2-D array")
        if y.shape != (X.shape[0],):
            raise ParameterError("labels must have one entry per row")
        if X.shape[0] == 0:
            raise ParameterError("dataset is empty")
        if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
            raise ParameterError("features must lie in [0, 1]")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ParameterError("labels must lie in 0..num_classes-1")
        missing = set(range(self.num_classes)) - set(np.unique(y).tolist())
        if missing:
            raise ParameterError(f"classes without examples: {sorted(missing)}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(tuple(self.X[i].tolist()), int(self.y[i]))

    @property
    def examples(self) -> list[LabeledExample]:
        return [self[i] for i in range(len(self))]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    cal: np.ndarray
    eval: np.ndarray
    test: np.ndarray
    mode: str = field(default="rq12")

    def __post_init__(self):
        for key in SPLIT_KEYS:
            arr = np.array(getattr(self, key), dtype=np.int64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        seen = np.concatenate([getattr(self, k) for k in SPLIT_KEYS])
        if len(np.unique(seen)) != len(seen):
            raise ParameterError("split index sets overlap")

    def as_dict(self) -> dict[str, list[int]]:
        return {k: getattr(self, k).tolist() for k in SPLIT_KEYS}

    def __eq__(self, other):
        if not isinstance(other, SplitIndices):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in SPLIT_KEYS)

    __hash__ = None


def generate_synthetic(num_classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian mixture with one mean per class drawn from ``[0.2, 0.8]^dim``.

    Samples are clipped coordinate-wise to the unit box. Rows are ordered by
    class (all of class 0, then class 1, ...).
    """
    if num_classes < 2 or dim < 1 or per_class < 1:
        raise ParameterError("need num_classes >= 2, dim >= 1, per_class >= 1")
    if not spread > 0:
        raise ParameterError("spread must be positive")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.2, 0.8, size=(num_classes, dim))
    noise = rng.standard_normal((num_classes, per_class, dim))
    X = np.clip(means[:, None, :] + spread * noise, 0.0, 1.0).reshape(-1, dim)
    y = np.repeat(np.arange(num_classes), per_class)
    return Dataset(X, y, num_classes)


def _largest_remainder(total: int, fractions) -> list[int]:
    quotas = [total * f for f in fractions]
    counts = [math.floor(q + 1e-9) for q in quotas]
    left = total - sum(counts)
    # Ties go to the earlier part.
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def _class_members(y: np.ndarray, num_classes: int, min_count: int = 2) -> list[np.ndarray]:
    members = []
    for c in range(num_classes):
        idx = np.flatnonzero(y == c)
        if len(idx) < min_count:
            raise StratificationError(f"class {c} has {len(idx)} examples; need at least {min_count}")
        members.append(idx)
    return members


def stratified_split(ds: Dataset, mode: str, seed: int) -> SplitIndices:
    """Split each class into train/val/cal/eval/test by the mode's fractions.

    Per class: train 50%, val 10%, and the remaining 40% pool goes to
    cal/test (``rq12``, halves) or cal/eval/test (``rq3``, 25/25/50).
    Counts use largest-remainder rounding so each part is within one
    example of its exact share.
    """
    if mode not in SPLIT_FRACTIONS:
        raise ParameterError(f"unknown split mode {mode!r}")
    fractions = SPLIT_FRACTIONS[mode]
    rng = np.random.default_rng(seed)
    parts = {k: [] for k in SPLIT_KEYS}
    for idx in _class_members(ds.y, ds.num_classes):
        perm = rng.permutation(idx)
        start = 0
        for key, count in zip(SPLIT_KEYS, _largest_remainder(len(perm), fractions)):
            parts[key].append(perm[start:start + count])
            start += count
    return SplitIndices(**{k: np.sort(np.concatenate(v)) for k, v in parts.items()}, mode=mode)


def resplit_pool(ds: Dataset, split: SplitIndices, seed: int) -> SplitIndices:
    """Redraw cal/eval/test from their union, keeping train and val fixed.

    Used for replications: trained models stay valid because the training
    indices do not move.
    """
    fractions = SPLIT_FRACTIONS[split.mode][2:]
    total = sum(fractions)
    fractions = [f / total for f in fractions]
    pool = np.sort(np.concatenate([split.cal, split.eval, split.test]))
    rng = np.random.default_rng(seed)
    parts = {k: [] for k in SPLIT_KEYS[2:]}
    for c in range(ds.num_classes):
        idx = pool[ds.y[pool] == c]
        perm = rng.permutation(idx)
        start = 0
        for key, count in zip(SPLIT_KEYS[2:], _largest_remainder(len(perm), fractions)):
            parts[key].append(perm[start:start + count])
            start += count
    return SplitIndices(
        train=split.train,
        val=split.val,
        mode=split.mode,
        **{k: np.sort(np.concatenate(v)) for k, v in parts.items()},
    )


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(v: float) -> str:
    return format(float(v), ".17g")


def write_dataset(ds: Dataset, path) -> None:
    header = ",".join(["label"] + [f"f{j}" for j in range(ds.dim)])
    lines = [header]
    for row, label in zip(ds.X, ds.y):
        lines.append(",".join([str(int(label))] + [fmt_float(v) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset(path, num_classes: int | None = None) -> Dataset:
    """Read a dataset CSV.

    ``num_classes`` defaults to ``max(label) + 1``; when given, larger
    labels are rejected as unknown.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError("file not found", path=path) from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].strip():
        raise FormatError("no rows", path=path)
    header = lines[0].rstrip("\r").split(",")
    if header[0] != "label" or header[1:] != [f"f{j}" for j in range(len(header) - 1)] or len(header) < 2:
        raise FormatError("header must be label,f0,...,f{d-1}", path=path, line=1)
    dim = len(header) - 1
    if len(lines) == 1:
        raise FormatError("no rows", path=path)
    X = np.empty((len(lines) - 1, dim))
    y = np.empty(len(lines) - 1, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        cells = line.rstrip("\r").split(",")
        if len(cells) != dim + 1:
            raise FormatError(f"expected {dim + 1} fields, got {len(cells)}", path=path, line=lineno)
        try:
            label = int(cells[0])
            values = [float(c) for c in cells[1:]]
        except ValueError:
            raise FormatError("unparseable field", path=path, line=lineno) from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise FormatError(f"unknown label {label}", path=path, line=lineno)
        if not all(0.0 <= v <= 1.0 for v in values):
            raise FormatError("feature outside [0, 1]", path=path, line=lineno)
        y[i] = label
        X[i] = values
    C = num_classes if num_classes is not None else int(y.max()) + 1
    try:
        return Dataset(X, y, C)
    except ParameterError as exc:
        raise FormatError(str(exc), path=path) from None


def write_split(split: SplitIndices, path) -> None:
    payload = split.as_dict()
    payload["mode"] = split.mode
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def read_split(path) -> SplitIndices:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError("file not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
    missing = [k for k in SPLIT_KEYS if k not in payload]
    if missing:
        raise FormatError(f"missing keys {missing}", path=path)
    try:
        return SplitIndices(**{k: payload[k] for k in SPLIT_KEYS}, mode=payload.get("mode", "rq12"))
    except ParameterError as exc:
        raise FormatError(str(exc), path=path) from None
