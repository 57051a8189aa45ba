"""Nonconformity scores. Smaller score means the label is more plausible."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ParameterError
from .model import _as_batch, _labels, probabilities

SCORE_KINDS = ("THR", "APS", "RSCP", "VRCP_I", "VRCP_C")
BASE_KINDS = ("THR", "APS")


@dataclass(frozen=True)
class ScoreSpec:
    kind: str = "APS"
    base: str = "APS"
    sigma: float = 0.05
    n_noise: int = 32
    vrcp_epsilon: float = 0.1
    n_perturb: int = 16
    include_clean_copy: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ParameterError(f"unknown score kind {self.kind!r}")
        if self.base not in BASE_KINDS:
            raise ParameterError(f"score base must be THR or APS, not {self.base!r}")
        if self.n_noise < 1 or self.n_perturb < 1:
            raise ParameterError("sample counts must be >= 1")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if not self.vrcp_epsilon >= 0:
            raise ParameterError("vrcp_epsilon must be >= 0")

    @property
    def label(self) -> str:
        return self.kind if self.kind in BASE_KINDS else f"{self.kind}[{self.base}]"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ScoreSpec":
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown score fields {sorted(unknown)}")
        return cls(**payload)


def thr_scores(P: np.ndarray) -> np.ndarray:
    return -np.asarray(P, dtype=np.float64)


def aps_scores(P: np.ndarray) -> np.ndarray:
    """Deterministic APS: mass of every label at least as probable as ``y``.

    Labels are ranked by descending probability, ties by label index. The
    score is computed as one minus the mass ranked strictly below ``y``,
    which equals the descending cumulative sum but keeps the least probable
    label at exactly 1.
    """
    P = np.asarray(P, dtype=np.float64)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    order = np.argsort(-P, axis=1, kind="stable")
    ranked = np.take_along_axis(P, order, axis=1)
    below = np.cumsum(ranked[:, ::-1], axis=1)[:, ::-1]
    tail = np.concatenate([below[:, 1:], np.zeros((P.shape[0], 1))], axis=1)
    out = np.empty_like(P)
    np.put_along_axis(out, order, 1.0 - tail, axis=1)
    return out[0] if single else out


def base_scores(base: str, P: np.ndarray) -> np.ndarray:
    if base == "THR":
        return thr_scores(P)
    if base == "APS":
        return aps_scores(P)
    raise ParameterError(f"unknown base score {base!r}")


def stream_rng(seed: int, stream: str, index: int) -> np.random.Generator:
    """Generator for one example; independent of evaluation order."""
    return np.random.default_rng([int(seed), zlib.crc32(stream.encode()), int(index)])


def score_matrix(spec: ScoreSpec, model, X, indices=None, stream: str = "test") -> np.ndarray:
    """Scores for every label of every row: shape ``(n, C)``.

    ``indices`` identifies each row (usually its dataset index) for the
    per-example sampling stream of RSCP/VRCP; it defaults to row position.
    One noise or perturbation draw per row is shared by all labels.
    """
    X, single = _as_batch(model, X)
    n, d = X.shape
    if spec.kind in BASE_KINDS:
        S = base_scores(spec.kind, probabilities(model, X))
        return S[0] if single else S
    indices = np.arange(n) if indices is None else np.atleast_1d(np.asarray(indices))
    if indices.shape != (n,):
        raise ParameterError("need one index per row")
    if spec.kind == "RSCP":
        copies = spec.n_noise
        noise = np.stack([
            spec.sigma * stream_rng(spec.seed, stream, i).standard_normal((copies, d)) for i in indices
        ])
    else:
        eps = spec.vrcp_epsilon
        noise = np.stack([
            stream_rng(spec.seed, stream, i).uniform(-eps, eps, size=(spec.n_perturb, d)) for i in indices
        ])
        if spec.include_clean_copy:
            noise = np.concatenate([np.zeros((n, 1, d)), noise], axis=1)
        copies = noise.shape[1]
    Xn = np.clip(X[:, None, :] + noise, 0.0, 1.0).reshape(-1, d)
    S = base_scores(spec.base, probabilities(model, Xn)).reshape(n, copies, -1)
    if spec.kind == "RSCP":
        out = S.mean(axis=1)
    elif spec.kind == "VRCP_I":
        out = S.min(axis=1)
    else:
        out = S.max(axis=1)
    return out[0] if single else out


def score_all_labels(spec: ScoreSpec, model, x, index: int = 0, stream: str = "test") -> np.ndarray:
    return score_matrix(spec, model, np.asarray(x)[None, :], [index], stream)[0]


def score(spec: ScoreSpec, model, x, y, index: int = 0, stream: str = "test") -> float:
    y = int(_labels(model, [y], 1)[0])
    return float(score_all_labels(spec, model, x, index, stream)[y])


def true_label_scores(spec: ScoreSpec, model, X, y, indices=None, stream: str = "test") -> np.ndarray:
    X, _ = _as_batch(model, X)
    y = _labels(model, y, X.shape[0])
    S = score_matrix(spec, model, X, indices, stream)
    return S[np.arange(len(y)), y]
