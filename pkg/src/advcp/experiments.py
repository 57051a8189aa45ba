"""Replicated end-to-end pipelines for the three research questions.

Models are trained once on the fixed training split. Each replication then
redraws cal/eval/test from the held-out pool. Attacks and scores are pure
functions of the example, so they are computed once per pool row and the
replications only re-index them.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackSpec, attack_batch
from .conformal import CalibrationResult, conformal_quantile, set_masks
from .dataio import Dataset, SplitIndices, resplit_pool
from .errors import ParameterError
from .game import MixedStrategy, PayoffMatrix, payoff_from_tables, solve_zero_sum, strategy_masks, uniform_strategy
from .metrics import report
from .model import AggregateClassifier, TrainConfig, train
from .scores import BASE_KINDS, ScoreSpec, score_matrix

TRAINED_DEFENSES = ("FGSM", "PGD", "SPSA")


def substream_seed(seed: int, name: str) -> int:
    """Deterministic child seed for a named purpose."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def build_defenses(ds: Dataset, split: SplitIndices, names, attack_specs: dict, cfg: TrainConfig,
                   seed: int) -> dict:
    """Train the clean model and the requested defenses.

    ``names`` may contain ``Normal``, any attack kind (adversarial training
    against that attack, generated on the clean model), ``max`` and ``min``
    (logit aggregates over the adversarially trained defenses, or over all
    trained models when there are none).
    """
    def cfg_for(name):
        return replace(cfg, seed=substream_seed(seed, f"train/{name}"))

    f0 = train(ds, split.train, cfg=cfg_for("Normal"))
    models = {"Normal": f0}
    for name in names:
        if name in ("Normal", "max", "min"):
            continue
        if name not in attack_specs:
            raise ParameterError(f"no attack spec for defense {name!r}")
        models[name] = train(ds, split.train, attack_specs[name], f0, cfg_for(name))
    adversarial = [models[n] for n in names if n not in ("Normal", "max", "min")]
    members = tuple(adversarial or [f0])
    for mode in ("max", "min"):
        if mode in names:
            models[mode] = AggregateClassifier(members, mode)
    return {"Normal": f0} | {n: models[n] for n in names}


class ScoreBank:
    """Lazily computed score matrices over the pool rows, per (defense, attack, stream)."""

    def __init__(self, ds: Dataset, pool: np.ndarray, defenses: dict, attacks: list, f0, spec: ScoreSpec,
                 attack_target: str = "f0"):
        self.ds = ds
        self.pool = np.asarray(pool)
        self.defenses = defenses
        self.attacks = {a.name: a for a in attacks}
        self.f0 = f0
        self.spec = spec
        self.attack_target = attack_target
        self.position = np.full(len(ds), -1, dtype=np.int64)
        self.position[self.pool] = np.arange(len(self.pool))
        self._inputs = {}
        self._scores = {}

    def inputs(self, defense: str, attack: str) -> np.ndarray:
        target_key = "f0" if self.attack_target == "f0" else defense
        key = (target_key, attack)
        if key not in self._inputs:
            target = self.f0 if self.attack_target == "f0" else self.defenses[defense]
            X = self.ds.X[self.pool]
            y = self.ds.y[self.pool]
            self._inputs[key] = attack_batch(self.attacks[attack], target, X, y)
        return self._inputs[key]

    def scores(self, defense: str, attack: str, stream: str) -> np.ndarray:
        if self.spec.kind in BASE_KINDS:
            stream = "-"
        key = (defense, attack, stream)
        if key not in self._scores:
            self._scores[key] = score_matrix(
                self.spec, self.defenses[defense], self.inputs(defense, attack), self.pool, stream)
        return self._scores[key]

    def rows(self, defense: str, attack: str, stream: str, indices) -> np.ndarray:
        return self.scores(defense, attack, stream)[self.position[np.asarray(indices)]]

    def true_scores(self, defense: str, attack: str, stream: str, indices) -> np.ndarray:
        S = self.rows(defense, attack, stream, indices)
        return S[np.arange(len(indices)), self.ds.y[np.asarray(indices)]]


@dataclass
class CellStats:
    """Per-replication metric values for one report row."""

    coverage: list = field(default_factory=list)
    size: list = field(default_factory=list)
    sscv: list = field(default_factory=list)
    q: list = field(default_factory=list)

    def add(self, rep, q=None):
        self.coverage.append(rep.coverage)
        self.size.append(rep.mean_size)
        self.sscv.append(np.nan if rep.sscv is None else rep.sscv)
        if q is not None:
            self.q.append(q)

    @staticmethod
    def _mean_sd(values):
        a = np.asarray(values, dtype=np.float64)
        sd = float(a.std(ddof=1)) if len(a) > 1 else 0.0
        return float(a.mean()), sd

    def summary(self) -> dict:
        cm, cs = self._mean_sd(self.coverage)
        sm, ss = self._mean_sd(self.size)
        vm, vs = self._mean_sd(self.sscv)
        return {"coverage_mean": cm, "coverage_sd": cs, "size_mean": sm, "size_sd": ss,
                "sscv_mean": vm, "sscv_sd": vs}

    def coverage_se(self) -> float:
        return self._mean_sd(self.coverage)[1] / np.sqrt(len(self.coverage))


def replication_splits(ds, base_split, replications: int, seed: int):
    if replications < 1:
        raise ParameterError("replications must be >= 1")
    return [resplit_pool(ds, base_split, substream_seed(seed, f"rep/{r}")) for r in range(replications)]


@dataclass
class PipelineResult:
    cells: dict
    calibrations: list = field(default_factory=list)


def run_rq1(bank: ScoreBank, splits, defense_names, attack_names, alpha: float) -> PipelineResult:
    """Known attack: calibrate and test under the same attack, for every (defense, attack)."""
    y = bank.ds.y
    C = bank.ds.num_classes
    cells = {(d, a): CellStats() for d in defense_names for a in attack_names}
    for split in splits:
        for d in defense_names:
            for a in attack_names:
                q = conformal_quantile(bank.true_scores(d, a, "cal", split.cal), alpha)
                masks = set_masks(bank.rows(d, a, "test", split.test), q)
                cells[d, a].add(report(masks, y[split.test], alpha, num_classes=C), q)
    return PipelineResult(cells)


def conservative_calibrations(bank: ScoreBank, split, defense_names, attack_names, alpha):
    return [
        CalibrationResult(
            {a: conformal_quantile(bank.true_scores(d, a, "cal", split.cal), alpha) for a in attack_names},
            alpha,
            d,
        )
        for d in defense_names
    ]


def run_rq2(bank: ScoreBank, splits, defense_names, attack_names, alpha: float) -> PipelineResult:
    """Unknown attack: one conservative threshold per defense, tested under each attack."""
    if not attack_names:
        raise ParameterError("attack set is empty")
    y = bank.ds.y
    C = bank.ds.num_classes
    cells = {(d, a): CellStats() for d in defense_names for a in attack_names}
    first = None
    for split in splits:
        cals = conservative_calibrations(bank, split, defense_names, attack_names, alpha)
        first = first or cals
        for d, cal in zip(defense_names, cals):
            for a in attack_names:
                masks = set_masks(bank.rows(d, a, "test", split.test), cal.conservative_q)
                cells[d, a].add(report(masks, y[split.test], alpha, num_classes=C), cal.conservative_q)
    return PipelineResult(cells, first)


@dataclass
class RQ3Replication:
    calibrations: list
    eval_payoff: PayoffMatrix
    test_payoff: PayoffMatrix
    equilibrium: MixedStrategy
    outcomes: dict


@dataclass
class RQ3Result:
    cells: dict
    replications: list


def run_rq3(bank: ScoreBank, splits, defense_names, attack_names, alpha: float, seed: int) -> RQ3Result:
    """Game-theoretic defense: payoff on eval rows, equilibrium, then test-time comparison.

    At test time every strategy (equilibrium mix, uniform, each pure defense)
    faces the attacker's equilibrium mix, sampled per example.
    """
    if not attack_names:
        raise ParameterError("attack set is empty")
    y = bank.ds.y
    C = bank.ds.num_classes
    p = len(defense_names)
    strategies = ["equilibrium", "uniform", *defense_names]
    cells = {(s, "equilibrium_attack"): CellStats() for s in strategies}
    reps = []
    for r, split in enumerate(splits):
        if len(split.eval) == 0:
            raise ParameterError("rq3 needs an evaluation split (split mode rq3)")
        cals = conservative_calibrations(bank, split, defense_names, attack_names, alpha)
        qs = [c.conservative_q for c in cals]
        eval_tables = [[bank.rows(d, a, "eval", split.eval) for a in attack_names] for d in defense_names]
        test_tables = [[bank.rows(d, a, "test", split.test) for a in attack_names] for d in defense_names]
        eval_P = payoff_from_tables(eval_tables, qs, tuple(defense_names), tuple(attack_names))
        test_P = payoff_from_tables(test_tables, qs, tuple(defense_names), tuple(attack_names))
        eq = solve_zero_sum(eval_P)
        rep_seed = substream_seed(seed, f"rq3/{r}")
        defenders = {"equilibrium": eq.defender, "uniform": uniform_strategy(p)}
        for k, d in enumerate(defense_names):
            defenders[d] = np.eye(p)[k]
        outcomes = {}
        for name, defender in defenders.items():
            masks, _, _ = strategy_masks(test_tables, qs, defender, eq.attacker, split.test, rep_seed)
            rep = report(masks, y[split.test], alpha, num_classes=C)
            cells[name, "equilibrium_attack"].add(rep)
            outcomes[name] = rep
        reps.append(RQ3Replication(cals, eval_P, test_P, eq, outcomes))
    return RQ3Result(cells, reps)
