import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from advcp.attacks import default_attacks
from advcp.conformal import CalibrationResult, calibrate_conservative, evaluate_pipeline
from advcp.errors import FormatError, ParameterError
from advcp.game import (PayoffMatrix, build_payoff, evaluate_strategy, lp_minimax, solve_zero_sum,
                        uniform_strategy)
from advcp.scores import ScoreSpec

linprog = pytest.importorskip("scipy.optimize").linprog


def scipy_value(P):
    """Defender LP: min v s.t. P' x <= v, x in simplex."""
    p, m = P.shape
    c = np.r_[np.zeros(p), 1.0]
    A_ub = np.c_[P.T, -np.ones(m)]
    A_eq = np.r_[np.ones(p), 0.0][None]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * p + [(None, None)], method="highs")
    assert res.status == 0
    return res.fun


def check_equilibrium(P, eq, tol=1e-7):
    x, z = eq.defender, eq.attacker
    assert x.min() >= -1e-9 and z.min() >= -1e-9
    assert abs(x.sum() - 1) < 1e-9 and abs(z.sum() - 1) < 1e-9
    # Neither player gains by deviating.
    assert (x @ P).max() <= eq.value + tol
    assert (P @ z).min() >= eq.value - tol


def test_matching_pennies():
    eq = solve_zero_sum(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert np.allclose(eq.defender, [0.5, 0.5], atol=1e-9)
    assert np.allclose(eq.attacker, [0.5, 0.5], atol=1e-9)
    assert abs(eq.value) < 1e-9


def test_constant_matrix_pure():
    eq = solve_zero_sum(np.full((3, 4), 2.5))
    assert eq.defender.tolist() == [1.0, 0.0, 0.0]
    assert eq.attacker.tolist() == [1.0, 0.0, 0.0, 0.0]
    assert eq.value == 2.5


def test_dominated_row_gets_zero():
    P = np.array([[1.0, 2.0, 1.5], [3.0, 3.0, 3.0], [2.0, 1.0, 1.8]])
    eq = solve_zero_sum(P)
    assert eq.defender[1] == 0.0
    check_equilibrium(P, eq)


def test_random_matrices_agree_with_lp_and_scipy():
    rng = np.random.default_rng(0)
    for _ in range(200):
        P = rng.uniform(0, 3, size=(6, 5))
        eq = solve_zero_sum(P)
        value, x, z = lp_minimax(P)
        assert abs(eq.value - value) < 1e-7
        assert abs(eq.value - scipy_value(P)) < 1e-7
        check_equilibrium(P, eq)


def test_lp_single_entry():
    value, x, z = lp_minimax(np.array([[4.2]]))
    assert value == pytest.approx(4.2) and x.tolist() == [1.0] and z.tolist() == [1.0]


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(0, 3)),
       st.floats(0.1, 5), st.floats(-3, 3))
def test_value_bounds_and_affine_equivariance(P, a, b):
    eq = solve_zero_sum(P)
    assert P.min() - 1e-9 <= eq.value <= P.max() + 1e-9
    check_equilibrium(P, eq)
    shifted = solve_zero_sum(a * P + b)
    assert shifted.value == pytest.approx(a * eq.value + b, abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (3, 3), elements=st.integers(0, 3).map(float)), st.integers(0, 2), st.integers(0, 2))
def test_duplicate_rows_and_columns(P, r, c):
    P = np.vstack([P, P[r]])
    P = np.hstack([P, P[:, [c]]])
    check_equilibrium(P, solve_zero_sum(P))
    assert solve_zero_sum(P).value == pytest.approx(lp_minimax(P)[0], abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(1, 3)), st.integers(0, 3))
def test_strictly_minimal_row_is_pure(P, k):
    P = P.copy()
    P[k] = P.min() - 0.5
    eq = solve_zero_sum(P)
    assert eq.defender[k] == pytest.approx(1.0, abs=1e-9)


def test_all_equilibria_includes_default():
    P = np.full((2, 2), 1.0)
    eqs = solve_zero_sum(P, all_equilibria=True)
    assert len(eqs) >= 1
    for eq in eqs:
        check_equilibrium(P, eq)
    assert np.array_equal(eqs[0].defender, solve_zero_sum(P).defender)


def test_payoff_csv_round_trip(tmp_path):
    P = PayoffMatrix(np.array([[1.0, 1 / 3], [2.0, 0.1]]), ("Normal", "PGD"), ("FGSM", "CW"))
    P.save(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("defense,FGSM,CW\n")
    back = PayoffMatrix.load(tmp_path / "p.csv")
    assert np.array_equal(back.values, P.values)
    assert back.row_ids == P.row_ids and back.col_ids == P.col_ids


def test_payoff_load_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("defense,a\nx,notanumber\n")
    with pytest.raises(FormatError):
        PayoffMatrix.load(bad)
    with pytest.raises(FormatError):
        PayoffMatrix.load(tmp_path / "missing.csv")


def test_strategy_json_round_trip():
    eq = solve_zero_sum(PayoffMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]), ("A", "B"), ("x", "y")))
    from advcp.game import MixedStrategy

    back = MixedStrategy.from_dict(eq.to_dict())
    assert np.array_equal(back.defender, eq.defender) and back.row_ids == ("A", "B")


@pytest.fixture(scope="module")
def game_setup(small_ds, small_split, clean_model):
    from conftest import random_classifier

    defenses = [clean_model, random_classifier("linear", 3, small_ds.dim, seed=1)]
    attacks = default_attacks(0.1, seed=2)
    spec = ScoreSpec("APS")
    X, y = small_ds.X[small_split.cal], small_ds.y[small_split.cal]
    cals = [calibrate_conservative(m, attacks, clean_model, X, y, spec, 0.1) for m in defenses]
    return defenses, attacks, spec, cals


def test_build_payoff_shape_and_bounds(small_ds, small_split, clean_model, game_setup):
    defenses, attacks, spec, cals = game_setup
    X, y = small_ds.X[small_split.test], small_ds.y[small_split.test]
    P = build_payoff(defenses, attacks + attacks[:1], clean_model, X, y, spec, cals)
    assert P.shape == (2, 6)
    assert np.all(P.values >= 0) and np.all(P.values <= 3)
    assert np.array_equal(P.values[:, 0], P.values[:, 5])
    inf_cals = [CalibrationResult({"a": math.inf}, 0.1, "m")] * 2
    P_inf = build_payoff(defenses, attacks, clean_model, X, y, spec, inf_cals)
    assert np.all(P_inf.values == 3)
    with pytest.raises(ParameterError):
        build_payoff(defenses, attacks, clean_model, X, y, spec, cals[:1])


def test_pure_strategy_matches_pipeline(small_ds, small_split, clean_model, game_setup):
    defenses, attacks, spec, cals = game_setup
    X, y = small_ds.X[small_split.test], small_ds.y[small_split.test]
    for k in range(2):
        for j in (0, 3):
            d = np.eye(2)[k]
            a = np.eye(5)[j]
            out = evaluate_strategy(d, a, defenses, attacks, clean_model, X, y, spec, cals, seed=0)
            ref = evaluate_pipeline(defenses[k], X, y, attacks[j], clean_model, spec, cals[k].conservative_q)
            assert np.array_equal(out.masks, ref)
    one = evaluate_strategy(uniform_strategy(1), uniform_strategy(5), defenses[:1], attacks, clean_model, X, y,
                            spec, cals[:1], seed=4)
    pure = evaluate_strategy(np.array([1.0]), uniform_strategy(5), defenses[:1], attacks, clean_model, X, y,
                             spec, cals[:1], seed=4)
    assert np.array_equal(one.masks, pure.masks)


def test_strategy_sampling_deterministic(small_ds, small_split, clean_model, game_setup):
    defenses, attacks, spec, cals = game_setup
    X, y = small_ds.X[small_split.test], small_ds.y[small_split.test]
    runs = [evaluate_strategy(uniform_strategy(2), uniform_strategy(5), defenses, attacks, clean_model, X, y,
                              spec, cals, seed=9) for _ in range(2)]
    assert np.array_equal(runs[0].masks, runs[1].masks)
    assert set(np.unique(runs[0].defense_choice)) == {0, 1}
    with pytest.raises(ParameterError):
        evaluate_strategy(np.array([0.7, 0.7]), uniform_strategy(5), defenses, attacks, clean_model, X, y,
                          spec, cals, seed=9)
