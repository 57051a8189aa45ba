"""Split-conformal calibration, known-attack and conservative (max over attacks) variants."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackSpec, attack_batch
from .errors import FormatError, ParameterError
from .scores import ScoreSpec, score_matrix

ATTACK_TARGETS = ("f0", "fk")


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((n + 1)(1 - alpha))``-th smallest score, or +inf if that rank exceeds n."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ParameterError("cannot take a quantile of no scores")
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    n = scores.size
    # The guard keeps float noise such as 18.000000000000004 from bumping the rank.
    k = math.ceil((n + 1) * (1 - alpha) - 1e-9)
    if k > n:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


@dataclass(frozen=True)
class PredictionSet:
    labels: frozenset

    def __len__(self):
        return len(self.labels)

    def __contains__(self, y):
        return y in self.labels

    def __iter__(self):
        return iter(sorted(self.labels))


def set_masks(S: np.ndarray, q) -> np.ndarray:
    """Boolean membership ``S <= q``; ``q`` may be a scalar or one value per row."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    return np.asarray(S) <= q


def masks_to_sets(masks: np.ndarray) -> list[PredictionSet]:
    return [PredictionSet(frozenset(np.flatnonzero(row).tolist())) for row in np.atleast_2d(masks)]


def prediction_set(spec: ScoreSpec, model, x, q: float, index: int = 0, stream: str = "test") -> PredictionSet:
    S = score_matrix(spec, model, np.asarray(x, dtype=np.float64)[None, :], [index], stream)
    return masks_to_sets(set_masks(S, q))[0]


def _attack_target(model_k, f0, attack_target):
    if attack_target not in ATTACK_TARGETS:
        raise ParameterError(f"attack_target must be one of {ATTACK_TARGETS}")
    return f0 if attack_target == "f0" else model_k


def attacked_scores(model_k, attack: AttackSpec, f0, X, y, spec: ScoreSpec, indices=None,
                    stream: str = "cal", attack_target: str = "f0") -> np.ndarray:
    """Full ``(n, C)`` score matrix of ``model_k`` on inputs perturbed by ``attack``."""
    Xa = attack_batch(attack, _attack_target(model_k, f0, attack_target), X, y)
    return score_matrix(spec, model_k, np.atleast_2d(Xa), indices, stream)


def calibrate_known_attack(model_k, attack: AttackSpec, f0, X_cal, y_cal, spec: ScoreSpec, alpha: float,
                           indices=None, attack_target: str = "f0") -> float:
    """Threshold from calibration data perturbed by the known attack."""
    y_cal = np.asarray(y_cal)
    S = attacked_scores(model_k, attack, f0, X_cal, y_cal, spec, indices, "cal", attack_target)
    return conformal_quantile(S[np.arange(len(y_cal)), y_cal], alpha)


@dataclass(frozen=True)
class CalibrationResult:
    """Per-attack thresholds for one defense and their maximum."""

    per_attack_q: dict
    alpha: float
    model_id: str = "model"
    conservative_q: float = field(default=None)

    def __post_init__(self):
        if not self.per_attack_q:
            raise ParameterError("calibration needs at least one attack")
        top = max(self.per_attack_q.values())
        if self.conservative_q is None:
            object.__setattr__(self, "conservative_q", float(top))
        elif self.conservative_q != top:
            raise ParameterError("conservative_q must equal the largest per-attack threshold")

    def to_dict(self) -> dict:
        enc = lambda v: "inf" if math.isinf(v) else v  # noqa: E731
        return {
            "model_id": self.model_id,
            "alpha": self.alpha,
            "per_attack_q": {k: enc(v) for k, v in self.per_attack_q.items()},
            "conservative_q": enc(self.conservative_q),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CalibrationResult":
        dec = lambda v: math.inf if v == "inf" else float(v)  # noqa: E731
        return cls(
            per_attack_q={k: dec(v) for k, v in payload["per_attack_q"].items()},
            alpha=float(payload["alpha"]),
            model_id=payload["model_id"],
            conservative_q=dec(payload["conservative_q"]),
        )

    def save(self, path) -> None:
        from .dataio import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise FormatError("calibration file not found", path=path) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad calibration payload: {exc}", path=path) from None


def calibrate_conservative(model_k, attacks: Sequence[AttackSpec], f0, X_cal, y_cal, spec: ScoreSpec,
                           alpha: float, model_id: str = "model", indices=None,
                           attack_target: str = "f0") -> CalibrationResult:
    """One threshold per attack on the same calibration rows, plus their maximum."""
    if not attacks:
        raise ParameterError("attack set is empty")
    per_attack = {}
    for attack in attacks:
        if attack.name in per_attack:
            raise ParameterError(f"duplicate attack id {attack.name!r}")
        per_attack[attack.name] = calibrate_known_attack(
            model_k, attack, f0, X_cal, y_cal, spec, alpha, indices, attack_target)
    return CalibrationResult(per_attack, alpha, model_id)


def evaluate_pipeline(model_k, X_test, y_test, attack: AttackSpec, f0, spec: ScoreSpec, q: float,
                      indices=None, stream: str = "test", attack_target: str = "f0") -> np.ndarray:
    """Membership masks ``(n, C)`` for test rows perturbed by ``attack`` and thresholded at ``q``.

    Use :func:`masks_to_sets` for explicit label sets.
    """
    S = attacked_scores(model_k, attack, f0, X_test, y_test, spec, indices, stream, attack_target)
    return set_masks(S, q)
