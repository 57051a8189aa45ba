"""Defender-vs-attacker zero-sum game over mean prediction-set size.

Rows are defenses (the minimizing player), columns are attacks (the
maximizing player). ``solve_zero_sum`` enumerates square support pairs;
``lp_minimax`` is an independent simplex-based solver used as a cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .conformal import CalibrationResult, attacked_scores, set_masks
from .errors import EquilibriumError, FormatError, ParameterError
from .metrics import report
from .scores import stream_rng

TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PayoffMatrix:
    values: np.ndarray
    row_ids: tuple = ()
    col_ids: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.size == 0:
            raise ParameterError("payoff matrix must be a nonempty 2-D array")
        if not np.all(np.isfinite(values)):
            raise ParameterError("payoff matrix has non-finite entries")
        values.setflags(write=False)
        p, m = values.shape
        row_ids = tuple(self.row_ids) or tuple(f"d{k}" for k in range(p))
        col_ids = tuple(self.col_ids) or tuple(f"a{j}" for j in range(m))
        if len(row_ids) != p or len(col_ids) != m:
            raise ParameterError("id lists do not match the matrix shape")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self) -> str:
        from .dataio import fmt_float

        lines = [",".join(["defense", *self.col_ids])]
        for rid, row in zip(self.row_ids, self.values):
            lines.append(",".join([rid, *(fmt_float(v) for v in row)]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        from .dataio import atomic_write_text

        atomic_write_text(path, self.to_csv())

    @classmethod
    def load(cls, path) -> "PayoffMatrix":
        path = Path(path)
        try:
            lines = [ln.rstrip("\r") for ln in path.read_text(encoding="utf-8").split("\n") if ln.strip()]
        except FileNotFoundError:
            raise FormatError("payoff file not found", path=path) from None
        if not lines:
            raise FormatError("no rows", path=path)
        header = lines[0].split(",")
        if header[0] != "defense" or len(header) < 2:
            raise FormatError("header must be defense,<attack ids...>", path=path, line=1)
        rows, ids = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            cells = line.split(",")
            if len(cells) != len(header):
                raise FormatError(f"expected {len(header)} fields", path=path, line=lineno)
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError:
                raise FormatError("unparseable payoff value", path=path, line=lineno) from None
            ids.append(cells[0])
        if not rows:
            raise FormatError("no rows", path=path)
        try:
            return cls(np.array(rows), tuple(ids), tuple(header[1:]))
        except ParameterError as exc:
            raise FormatError(str(exc), path=path) from None


@dataclass(frozen=True, eq=False)
class MixedStrategy:
    defender: np.ndarray
    attacker: np.ndarray
    value: float
    row_ids: tuple = ()
    col_ids: tuple = ()
    support: tuple = field(default=((), ()))

    def to_dict(self) -> dict:
        rows = self.row_ids or tuple(f"d{k}" for k in range(len(self.defender)))
        cols = self.col_ids or tuple(f"a{j}" for j in range(len(self.attacker)))
        return {
            "defender": dict(zip(rows, self.defender.tolist())),
            "attacker": dict(zip(cols, self.attacker.tolist())),
            "value": self.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "MixedStrategy":
        return cls(
            defender=np.array(list(payload["defender"].values()), dtype=np.float64),
            attacker=np.array(list(payload["attacker"].values()), dtype=np.float64),
            value=float(payload["value"]),
            row_ids=tuple(payload["defender"]),
            col_ids=tuple(payload["attacker"]),
        )


def _as_values(P):
    if isinstance(P, PayoffMatrix):
        return P.values, P.row_ids, P.col_ids
    P = PayoffMatrix(P)
    return P.values, (), ()


def _support_solution(A, rows, cols, scale):
    """Solve the indifference systems for one square support pair, or None."""
    k = len(rows)
    M = A[np.ix_(rows, cols)]
    border = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    border[:k, k] = -1.0
    border[k, :k] = 1.0

    border[:k, :k] = M
    sol_y, _, rank, _ = np.linalg.lstsq(border, rhs, rcond=None)
    if rank < k + 1 or np.abs(border @ sol_y - rhs).max() > TOL * scale:
        return None
    border[:k, :k] = M.T
    sol_x, _, rank, _ = np.linalg.lstsq(border, rhs, rcond=None)
    if rank < k + 1 or np.abs(border @ sol_x - rhs).max() > TOL * scale:
        return None

    if sol_x[:k].min() < -TOL or sol_y[:k].min() < -TOL:
        return None
    x = np.zeros(A.shape[0])
    y = np.zeros(A.shape[1])
    x[list(rows)] = np.clip(sol_x[:k], 0.0, None)
    y[list(cols)] = np.clip(sol_y[:k], 0.0, None)
    x /= x.sum()
    y /= y.sum()
    v = float(x @ A @ y)
    # No row may do better than v for the minimizer, no column better for the maximizer.
    if (A @ y).min() < v - TOL * scale or (x @ A).max() > v + TOL * scale:
        return None
    return x, y, v


def solve_zero_sum(P, all_equilibria: bool = False):
    """Nash equilibrium of the zero-sum game with the defender minimizing.

    Square support pairs are tried in order of size, then row subset, then
    column subset (lexicographically); the first pair whose indifference
    systems give nonnegative, normalized, best-response-consistent
    strategies is returned. Singular support systems are skipped. With
    ``all_equilibria`` every such solution is returned (deduplicated).
    """
    A, row_ids, col_ids = _as_values(P)
    p, m = A.shape
    scale = max(1.0, float(np.abs(A).max()))
    found = []
    for k in range(1, min(p, m) + 1):
        for rows in combinations(range(p), k):
            for cols in combinations(range(m), k):
                sol = _support_solution(A, rows, cols, scale)
                if sol is None:
                    continue
                x, y, v = sol
                eq = MixedStrategy(x, y, v, row_ids, col_ids, (rows, cols))
                if not all_equilibria:
                    return eq
                if not any(np.allclose(x, e.defender, atol=1e-9) and np.allclose(y, e.attacker, atol=1e-9)
                           for e in found):
                    found.append(eq)
    if not found:
        raise EquilibriumError("support enumeration found no equilibrium")
    return found


def lp_minimax(P):
    """Minimax value and defender strategy via a dense simplex method.

    Solves ``max 1'z  s.t.  A'z <= 1, z >= 0`` where ``A`` is the payoff
    shifted to be strictly positive; then ``value = 1 / sum(z)`` (undoing the
    shift) and the defender plays ``z / sum(z)``. Bland's rule picks the
    entering and leaving variables, so the method cannot cycle. Also returns
    the attacker strategy read off the optimal duals.
    """
    A, _, _ = _as_values(P)
    shift = 1.0 - A.min()
    Ap = A + shift
    p, m = Ap.shape
    T = np.zeros((m + 1, p + m + 1))
    T[:m, :p] = Ap.T
    T[:m, p:p + m] = np.eye(m)
    T[:m, -1] = 1.0
    T[m, :p] = -1.0
    basis = list(range(p, p + m))
    eps = 1e-12
    while True:
        entering = next((j for j in range(p + m) if T[m, j] < -eps), None)
        if entering is None:
            break
        col = T[:m, entering]
        candidates = [i for i in range(m) if col[i] > eps]
        if not candidates:
            raise EquilibriumError("LP unbounded; cannot happen for a shifted payoff")
        best = min(T[i, -1] / col[i] for i in candidates)
        leaving = min(
            (i for i in candidates if T[i, -1] / col[i] <= best + eps),
            key=lambda i: basis[i],
        )
        T[leaving] /= T[leaving, entering]
        for i in range(m + 1):
            if i != leaving and T[i, entering] != 0.0:
                T[i] -= T[i, entering] * T[leaving]
        basis[leaving] = entering
    z = np.zeros(p)
    for i, var in enumerate(basis):
        if var < p:
            z[var] = T[i, -1]
    total = z.sum()
    duals = np.clip(T[m, p:p + m], 0.0, None)
    return 1.0 / total - shift, z / total, duals / duals.sum()


def uniform_strategy(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _calibration_q(calibrations, k, defense_id):
    if calibrations is None or k >= len(calibrations) or calibrations[k] is None:
        raise ParameterError(f"missing calibration for defense {defense_id!r}")
    return calibrations[k].conservative_q


def payoff_from_tables(tables, qs, row_ids=(), col_ids=()) -> PayoffMatrix:
    """Mean set size per (defense, attack) from precomputed score matrices.

    ``tables[k][j]`` is the ``(n, C)`` score matrix of defense ``k`` on rows
    perturbed by attack ``j``; ``qs[k]`` is that defense's threshold.
    """
    values = np.array([[set_masks(S, qs[k]).sum(axis=1).mean() for S in row] for k, row in enumerate(tables)])
    return PayoffMatrix(values, row_ids, col_ids)


def build_payoff(defenses: Sequence, attacks: Sequence, f0, X_eval, y_eval, spec, calibrations,
                 defense_ids=None, indices=None, attack_target: str = "f0") -> PayoffMatrix:
    """Mean set size on the evaluation rows for every (defense, attack) pair."""
    defense_ids = tuple(defense_ids or (f"d{k}" for k in range(len(defenses))))
    qs = [_calibration_q(calibrations, k, d) for k, d in enumerate(defense_ids)]
    tables = [
        [attacked_scores(model, a, f0, X_eval, y_eval, spec, indices, "eval", attack_target) for a in attacks]
        for model in defenses
    ]
    P = payoff_from_tables(tables, qs, defense_ids, tuple(a.name for a in attacks))
    C = defenses[0].num_classes
    if P.values.min() < 0 or P.values.max() > C:
        raise ParameterError("payoff entries outside [0, C]")
    return P


def draw_choices(probs, indices, seed: int, stream: str) -> np.ndarray:
    """One categorical draw per example from its own ``(seed, stream, index)`` generator."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.min() < -TOL or abs(probs.sum() - 1.0) > 1e-9:
        raise ParameterError("strategy must be a probability vector")
    cdf = np.cumsum(np.clip(probs, 0.0, None))
    cdf /= cdf[-1]
    u = np.array([stream_rng(seed, stream, i).random() for i in indices])
    picks = np.searchsorted(cdf, u, side="right")
    return np.minimum(picks, len(probs) - 1)


def strategy_masks(tables, qs, defender, attacker, indices, seed: int):
    """Sets when each example draws its defense and attack independently."""
    indices = np.asarray(indices)
    k_pick = draw_choices(defender, indices, seed, "defender")
    j_pick = draw_choices(attacker, indices, seed, "attacker")
    n = len(indices)
    C = tables[0][0].shape[1]
    masks = np.zeros((n, C), dtype=bool)
    for k in np.unique(k_pick):
        for j in np.unique(j_pick):
            rows = (k_pick == k) & (j_pick == j)
            if rows.any():
                masks[rows] = set_masks(tables[k][j][rows], qs[k])
    return masks, k_pick, j_pick


@dataclass(frozen=True)
class StrategyOutcome:
    masks: np.ndarray
    defense_choice: np.ndarray
    attack_choice: np.ndarray
    report: object

    @property
    def mean_size(self) -> float:
        return self.report.mean_size

    @property
    def coverage(self) -> float:
        return self.report.coverage


def evaluate_strategy(defender, attacker, defenses, attacks, f0, X_test, y_test, spec,
                      calibrations: Sequence[CalibrationResult], seed: int, indices=None,
                      attack_target: str = "f0") -> StrategyOutcome:
    """Sample a defense and an attack per test example and build its set.

    Pass :func:`uniform_strategy` as ``defender`` for the uniform baseline.
    """
    y_test = np.asarray(y_test)
    indices = np.arange(len(y_test)) if indices is None else np.asarray(indices)
    qs = [_calibration_q(calibrations, k, f"d{k}") for k in range(len(defenses))]
    if len(defender) != len(defenses) or len(attacker) != len(attacks):
        raise ParameterError("strategy lengths do not match defenses/attacks")
    tables = [
        [attacked_scores(model, a, f0, X_test, y_test, spec, indices, "test", attack_target) for a in attacks]
        for model in defenses
    ]
    masks, k_pick, j_pick = strategy_masks(tables, qs, defender, attacker, indices, seed)
    return StrategyOutcome(masks, k_pick, j_pick, report(masks, y_test, calibrations[0].alpha))
