"""Input-space attacks: Clean, FGSM, PGD, SPSA and Carlini-Wagner (L2).

All attacks work on batches. Each output row depends only on the AttackSpec
(including its seed), the target model and that row's ``(x, y)``, so the
same example is perturbed identically whatever batch it arrives in.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import NumericError, ParameterError
from .model import _as_batch, _labels, input_gradient, loss

ATTACK_KINDS = ("Clean", "FGSM", "PGD", "SPSA", "CW")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "Clean"
    epsilon: float = 0.1
    pgd_step: float = 0.025
    pgd_iters: int = 10
    spsa_delta: float = 0.01
    spsa_samples: int = 8
    spsa_step: float = 0.025
    spsa_iters: int = 10
    cw_c: float = 1.0
    cw_kappa: float = 0.0
    cw_steps: int = 100
    cw_lr: float = 0.05
    cw_clip_to_eps: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        if not self.epsilon >= 0:
            raise ParameterError("epsilon must be >= 0")
        counts, positives = {
            "PGD": (["pgd_iters"], ["pgd_step"]),
            "SPSA": (["spsa_iters", "spsa_samples"], ["spsa_delta", "spsa_step"]),
            "CW": (["cw_steps"], ["cw_lr"]),
        }.get(self.kind, ([], []))
        for name in counts:
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1 for {self.kind}")
        for name in positives:
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive for {self.kind}")
        if self.kind == "CW" and (not self.cw_c >= 0 or not self.cw_kappa >= 0):
            raise ParameterError("cw_c and cw_kappa must be >= 0")

    @property
    def name(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "AttackSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ParameterError(f"unknown attack fields {sorted(unknown)}")
        return cls(**payload)


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")


def _project(X, X0, eps):
    return np.clip(X, np.maximum(X0 - eps, 0.0), np.minimum(X0 + eps, 1.0))


def _fgsm(model, X, y, eps):
    G = input_gradient(model, X, y)
    return np.clip(X + eps * np.sign(G), 0.0, 1.0)


def _pgd(model, X0, y, eps, step, iters):
    X = X0.copy()
    for _ in range(iters):
        G = input_gradient(model, X, y)
        X = _project(X + step * np.sign(G), X0, eps)
    return X


def spsa_gradient(model, X, y, delta, directions) -> np.ndarray:
    """SPSA estimate of the input gradient, averaged over ``directions``.

    ``directions`` has shape ``(samples, d)`` with entries in {-1, +1} and is
    shared by every row of ``X``.
    """
    n, d = X.shape
    S = directions.shape[0]
    plus = (X[:, None, :] + delta * directions[None]).reshape(-1, d)
    minus = (X[:, None, :] - delta * directions[None]).reshape(-1, d)
    yy = np.repeat(y, S)
    diff = (loss(model, plus, yy) - loss(model, minus, yy)).reshape(n, S) / (2.0 * delta)
    return diff @ directions / S


def _spsa(model, X0, y, spec):
    rng = np.random.default_rng([spec.seed, 0x5A5A])
    X = X0.copy()
    for _ in range(spec.spsa_iters):
        directions = rng.choice([-1.0, 1.0], size=(spec.spsa_samples, X.shape[1]))
        G = spsa_gradient(model, X, y, spec.spsa_delta, directions)
        _check_finite(G, "SPSA gradient estimate")
        X = _project(X + spec.spsa_step * np.sign(G), X0, spec.epsilon)
    return X


def cw_margin(model, X, y) -> np.ndarray:
    """``Z_y - max_{j != y} Z_j`` per row."""
    Z = model.logits(X)
    rows = np.arange(len(y))
    true = Z[rows, y]
    Z = Z.copy()
    Z[rows, y] = -np.inf
    return true - Z.max(axis=1)


def _cw(model, X0, y, spec):
    # x' = (tanh(w) + 1) / 2 keeps the iterate inside the open unit box;
    # bounding |w| stops tanh from rounding to exactly +-1.
    tiny = 1e-6
    w_max = np.arctanh(1.0 - 2.0 * tiny)
    W = np.arctanh(2.0 * np.clip(X0, tiny, 1.0 - tiny) - 1.0)
    rows = np.arange(len(y))
    for _ in range(spec.cw_steps):
        T = np.tanh(W)
        Xp = 0.5 * (T + 1.0)
        grad_x = 2.0 * (Xp - X0)
        if spec.cw_c > 0:
            Z = model.logits(Xp)
            other = Z.copy()
            other[rows, y] = -np.inf
            j_star = other.argmax(axis=1)
            active = (Z[rows, y] - other[rows, j_star]) > -spec.cw_kappa
            coeffs = np.zeros_like(Z)
            coeffs[rows, y] = 1.0
            coeffs[rows, j_star] = -1.0
            coeffs *= active[:, None]
            grad_x = grad_x + spec.cw_c * model.logit_vjp(Xp, coeffs)
        grad_w = grad_x * 0.5 * (1.0 - T * T)
        _check_finite(grad_w, "CW gradient")
        W = np.clip(W - spec.cw_lr * grad_w, -w_max, w_max)
    Xp = 0.5 * (np.tanh(W) + 1.0)
    if spec.cw_clip_to_eps:
        Xp = _project(Xp, X0, spec.epsilon)
    return Xp


def attack_batch(spec: AttackSpec, model, X, y) -> np.ndarray:
    X, single = _as_batch(model, X)
    y = _labels(model, y, X.shape[0])
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ParameterError("attack inputs must lie in [0, 1]")
    if spec.kind == "Clean":
        out = X.copy()
    elif spec.kind == "FGSM":
        out = _fgsm(model, X, y, spec.epsilon)
    elif spec.kind == "PGD":
        out = _pgd(model, X, y, spec.epsilon, spec.pgd_step, spec.pgd_iters)
    elif spec.kind == "SPSA":
        out = _spsa(model, X, y, spec)
    else:
        out = _cw(model, X, y, spec)
    _check_finite(out, f"{spec.kind} output")
    return out[0] if single else out


def apply_attack(spec: AttackSpec, model, x, y) -> np.ndarray:
    """Perturb one input (or a batch) according to ``spec``."""
    return attack_batch(spec, model, x, y)


def fgsm(model, x, y, epsilon: float) -> np.ndarray:
    return attack_batch(AttackSpec("FGSM", epsilon=epsilon), model, x, y)


def pgd(model, x, y, epsilon: float, step: float, iters: int, seed: int = 0) -> np.ndarray:
    spec = AttackSpec("PGD", epsilon=epsilon, pgd_step=step, pgd_iters=iters, seed=seed)
    return attack_batch(spec, model, x, y)


def spsa(model, x, y, spec: AttackSpec) -> np.ndarray:
    return attack_batch(_with_kind(spec, "SPSA"), model, x, y)


def cw(model, x, y, spec: AttackSpec) -> np.ndarray:
    return attack_batch(_with_kind(spec, "CW"), model, x, y)


def _with_kind(spec, kind):
    if spec.kind == kind:
        return spec
    return AttackSpec(**{**spec.to_dict(), "kind": kind})


def default_attacks(epsilon: float = 0.1, seed: int = 0) -> list[AttackSpec]:
    """The five attacks in the canonical order FGSM, PGD, SPSA, CW, Clean."""
    return [AttackSpec(kind, epsilon=epsilon, seed=seed) for kind in ("FGSM", "PGD", "SPSA", "CW", "Clean")]
