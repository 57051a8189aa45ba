"""Small softmax classifiers with analytic gradients.

Two architectures are supported: ``linear`` (logits = W x + b) and ``mlp1``
(one tanh hidden layer). Every function accepts a single feature vector or a
2-D batch; single vectors come back unbatched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, NumericError, ParameterError

PARAM_NAMES = {"linear": ("W1", "b1"), "mlp1": ("W1", "b1", "W2", "b2")}


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Classifier:
    kind: str
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray | None = None
    b2: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PARAM_NAMES:
            raise ParameterError(f"unknown classifier kind {self.kind!r}")
        for name in ("W1", "b1", "W2", "b2"):
            value = getattr(self, name)
            if name in PARAM_NAMES[self.kind]:
                if value is None:
                    raise ParameterError(f"{self.kind} classifier needs {name}")
                value = _freeze(value)
                if not np.all(np.isfinite(value)):
                    raise NumericError(f"non-finite values in {name}")
                object.__setattr__(self, name, value)
            elif value is not None:
                raise ParameterError(f"{self.kind} classifier takes no {name}")
        W1, b1 = self.W1, self.b1
        if W1.ndim != 2 or b1.shape != (W1.shape[0],):
            raise ParameterError("W1/b1 shapes disagree")
        if self.kind == "mlp1" and (
            self.W2.ndim != 2 or self.W2.shape[1] != W1.shape[0] or self.b2.shape != (self.W2.shape[0],)
        ):
            raise ParameterError("W2/b2 shapes disagree with the hidden layer")

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W1.shape[0] if self.kind == "linear" else self.W2.shape[0]

    @property
    def hidden(self) -> int | None:
        return self.W1.shape[0] if self.kind == "mlp1" else None

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES[self.kind]}

    def with_params(self, **params) -> "Classifier":
        return replace(self, **params)

    def _hidden(self, X):
        return np.tanh(X @ self.W1.T + self.b1)

    def logits(self, X: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return X @ self.W1.T + self.b1
        return self._hidden(X) @ self.W2.T + self.b2

    def logit_vjp(self, X: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Row-wise gradient of ``sum_c coeffs[i, c] * logits[i, c]`` w.r.t. ``X[i]``."""
        if self.kind == "linear":
            return coeffs @ self.W1
        h = self._hidden(X)
        return ((coeffs @ self.W2) * (1.0 - h * h)) @ self.W1

    def param_vjp(self, X: np.ndarray, coeffs: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of ``sum_i sum_c coeffs[i, c] * logits[i, c]`` w.r.t. the parameters."""
        if self.kind == "linear":
            return {"W1": coeffs.T @ X, "b1": coeffs.sum(axis=0)}
        h = self._hidden(X)
        da = (coeffs @ self.W2) * (1.0 - h * h)
        return {
            "W1": da.T @ X,
            "b1": da.sum(axis=0),
            "W2": coeffs.T @ h,
            "b2": coeffs.sum(axis=0),
        }


@dataclass(frozen=True, eq=False)
class AggregateClassifier:
    """Element-wise max (or min) over member logits; softmax comes after."""

    members: tuple
    mode: str = "max"

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ParameterError("aggregate needs at least one member")
        if self.mode not in ("max", "min"):
            raise ParameterError(f"aggregate mode must be max or min, not {self.mode!r}")
        shapes = {(m.num_classes, m.dim) for m in members}
        if len(shapes) != 1:
            raise ParameterError("aggregate members disagree on (num_classes, dim)")
        object.__setattr__(self, "members", members)

    @property
    def kind(self) -> str:
        return "aggregate"

    @property
    def dim(self) -> int:
        return self.members[0].dim

    @property
    def num_classes(self) -> int:
        return self.members[0].num_classes

    def _stack(self, X):
        return np.stack([m.logits(X) for m in self.members])

    def logits(self, X):
        stacked = self._stack(X)
        return stacked.max(axis=0) if self.mode == "max" else stacked.min(axis=0)

    def logit_vjp(self, X, coeffs):
        # Subgradient: each (row, class) routes through the first member
        # attaining the extremum.
        stacked = self._stack(X)
        pick = stacked.argmax(axis=0) if self.mode == "max" else stacked.argmin(axis=0)
        grad = np.zeros_like(X)
        for k, member in enumerate(self.members):
            mask = pick == k
            if mask.any():
                grad += member.logit_vjp(X, np.where(mask, coeffs, 0.0))
        return grad


Model = Classifier | AggregateClassifier


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ParameterError(f"expected feature dimension {model.dim}, got shape {x.shape}")
    return X, single


def _labels(model, y, n):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape == (1,) and n > 1:
        y = np.repeat(y, n)
    if y.shape != (n,):
        raise ParameterError("one label per input row is required")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ParameterError("label out of range")
    return y


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logits(model, x) -> np.ndarray:
    X, single = _as_batch(model, x)
    Z = model.logits(X)
    return Z[0] if single else Z


def probabilities(model, x) -> np.ndarray:
    X, single = _as_batch(model, x)
    P = _softmax(model.logits(X))
    return P[0] if single else P


def _log_softmax(Z):
    Zs = Z - Z.max(axis=1, keepdims=True)
    return Zs - np.log(np.exp(Zs).sum(axis=1, keepdims=True))


def loss(model, x, y):
    """Cross-entropy ``-ln p_y(x)``; a scalar for one input, else one value per row."""
    X, single = _as_batch(model, x)
    y = _labels(model, y, X.shape[0])
    L = -_log_softmax(model.logits(X))[np.arange(len(y)), y]
    # Rounding can leave -0.0 or a tiny negative when p_y == 1.
    L = np.maximum(L, 0.0)
    return float(L[0]) if single else L


def _dloss_dlogits(model, X, y):
    P = _softmax(model.logits(X))
    P[np.arange(len(y)), y] -= 1.0
    return P


def input_gradient(model, x, y) -> np.ndarray:
    """Analytic gradient of the cross-entropy loss with respect to the input."""
    X, single = _as_batch(model, x)
    y = _labels(model, y, X.shape[0])
    G = model.logit_vjp(X, _dloss_dlogits(model, X, y))
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite input gradient")
    return G[0] if single else G


def parameter_gradients(model: Classifier, X, y) -> dict[str, np.ndarray]:
    """Gradient of the mean batch loss with respect to each parameter array."""
    X, _ = _as_batch(model, X)
    y = _labels(model, y, X.shape[0])
    coeffs = _dloss_dlogits(model, X, y) / X.shape[0]
    return model.param_vjp(X, coeffs)


def init_classifier(kind: str, num_classes: int, dim: int, hidden: int = 32, seed: int = 0) -> Classifier:
    """Random small-weight initialisation (Glorot-style scale)."""
    if num_classes < 2 or dim < 1:
        raise ParameterError("need num_classes >= 2 and dim >= 1")
    rng = np.random.default_rng(seed)
    if kind == "linear":
        W1 = rng.normal(0.0, 0.01, size=(num_classes, dim))
        return Classifier("linear", W1, np.zeros(num_classes))
    if kind == "mlp1":
        if hidden < 1:
            raise ParameterError("hidden size must be >= 1")
        W1 = rng.normal(0.0, np.sqrt(2.0 / (dim + hidden)), size=(hidden, dim))
        W2 = rng.normal(0.0, np.sqrt(2.0 / (hidden + num_classes)), size=(num_classes, hidden))
        return Classifier("mlp1", W1, np.zeros(hidden), W2, np.zeros(num_classes))
    raise ParameterError(f"unknown classifier kind {kind!r}")


def zero_classifier(num_classes: int, dim: int) -> Classifier:
    return Classifier("linear", np.zeros((num_classes, dim)), np.zeros(num_classes))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.1
    lr_decay: float = 0.99
    seed: int = 0
    kind: str = "mlp1"
    hidden: int = 32

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ParameterError("lr_decay must lie in (0, 1]")


def train(ds, indices, attack=None, target_model=None, cfg: TrainConfig = TrainConfig()) -> Classifier:
    """Minibatch SGD on cross-entropy over ``ds`` rows ``indices``.

    With ``attack``, every batch is swapped for its perturbed version
    generated against ``target_model`` (the fixed clean model). Attacks are
    pure functions of (spec, target, x, y), so the perturbed rows are the same
    every epoch and are computed once up front.
    """
    from .attacks import attack_batch

    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ParameterError("cannot train on an empty index set")
    X = ds.X[indices]
    y = ds.y[indices]
    if attack is not None and attack.kind != "Clean":
        if target_model is None:
            raise ParameterError("adversarial training needs the target model")
        X = attack_batch(attack, target_model, X, y)

    model = init_classifier(cfg.kind, ds.num_classes, ds.dim, cfg.hidden, cfg.seed)
    params = {k: np.array(v) for k, v in model.params().items()}
    rng = np.random.default_rng([cfg.seed, 1])
    lr = cfg.learning_rate
    n = len(y)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            current = model.with_params(**params)
            grads = parameter_gradients(current, X[batch], y[batch])
            for name, g in grads.items():
                params[name] -= lr * g
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                raise NumericError("training diverged")
            model = current
        lr *= cfg.lr_decay
    return model.with_params(**params)


def accuracy(model, X, y) -> float:
    return float(np.mean(np.argmax(logits(model, X), axis=-1) == np.asarray(y)))


def model_to_dict(model) -> dict:
    if isinstance(model, AggregateClassifier):
        return {"kind": "aggregate", "mode": model.mode, "members": [model_to_dict(m) for m in model.members]}
    out = {"kind": model.kind, "num_classes": model.num_classes, "dim": model.dim}
    if model.kind == "mlp1":
        out["hidden"] = model.hidden
    for name, value in model.params().items():
        out[name] = value.tolist()
    return out


def model_from_dict(payload: dict):
    kind = payload["kind"]
    if kind == "aggregate":
        return AggregateClassifier(tuple(model_from_dict(m) for m in payload["members"]), payload["mode"])
    model = Classifier(kind, **{name: payload[name] for name in PARAM_NAMES.get(kind, ())})
    if model.num_classes != payload["num_classes"] or model.dim != payload["dim"]:
        raise ParameterError("stored dimensions disagree with parameter shapes")
    return model


def save_model(model, path) -> None:
    from .dataio import atomic_write_text

    # json writes floats with repr(), the shortest string that round-trips.
    atomic_write_text(path, json.dumps(model_to_dict(model)) + "\n")


def load_model(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError("model file not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
    try:
        return model_from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad model payload: {exc}", path=path) from None


def aggregate(members: Sequence[Classifier], mode: str) -> AggregateClassifier:
    return AggregateClassifier(tuple(members), mode)
