import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advcp.attacks import AttackSpec
from advcp.conformal import (CalibrationResult, calibrate_conservative, calibrate_known_attack, conformal_quantile,
                             evaluate_pipeline, masks_to_sets, prediction_set, set_masks)
from advcp.errors import ParameterError
from advcp.metrics import coverage
from advcp.model import Classifier, zero_classifier
from advcp.scores import ScoreSpec


def brute_quantile(scores, alpha):
    n = len(scores)
    # Smallest k with k / (n + 1) >= 1 - alpha, by search.
    k = next(k for k in range(1, n + 2) if k >= (n + 1) * (1 - alpha) - 1e-9)
    return math.inf if k > n else sorted(scores)[k - 1]


def test_quantile_hand_examples():
    scores = [0.1 * i for i in range(1, 11)]
    assert conformal_quantile(scores, 0.1) == scores[-1]
    s19 = list(np.linspace(0, 1, 19))
    assert conformal_quantile(s19, 0.1) == sorted(s19)[17]
    assert conformal_quantile([1.0, 2.0, 3.0], 0.1) == math.inf


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=80), st.floats(0.01, 0.99))
def test_quantile_matches_brute_force(scores, alpha):
    assert conformal_quantile(scores, alpha) == brute_quantile(scores, alpha)


def test_quantile_validation():
    with pytest.raises(ParameterError):
        conformal_quantile([], 0.1)
    with pytest.raises(ParameterError):
        conformal_quantile([1.0], 1.0)


def prob_model(p):
    return Classifier("linear", np.zeros((len(p), 1)), np.log(np.asarray(p)))


def test_prediction_set_examples():
    m = prob_model([0.7, 0.2, 0.1])
    thr = ScoreSpec("THR")
    assert set(prediction_set(thr, m, [0.5], math.inf).labels) == {0, 1, 2}
    assert len(prediction_set(thr, m, [0.5], -0.99)) == 0
    assert set(prediction_set(thr, m, [0.5], -0.15).labels) == {0, 1}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(-1, 1), st.floats(-1, 1))
def test_prediction_set_monotone_in_q(row, q1, q2):
    q1, q2 = min(q1, q2), max(q1, q2)
    S = np.array([row])
    assert np.all(set_masks(S, q1) <= set_masks(S, q2))


def test_known_attack_clean_is_plain_split_conformal(small_ds, small_split, clean_model):
    spec = ScoreSpec("APS")
    X, y = small_ds.X[small_split.cal], small_ds.y[small_split.cal]
    q = calibrate_known_attack(clean_model, AttackSpec("Clean"), clean_model, X, y, spec, 0.1)
    from advcp.scores import true_label_scores

    assert q == conformal_quantile(true_label_scores(spec, clean_model, X, y), 0.1)


def test_constant_scores_give_constant_threshold(small_ds, small_split):
    m = zero_classifier(3, small_ds.dim)
    X, y = small_ds.X[small_split.cal], small_ds.y[small_split.cal]
    q = calibrate_known_attack(m, AttackSpec("FGSM"), m, X, y, ScoreSpec("THR"), 0.1)
    assert q == pytest.approx(-1 / 3)


def test_conservative_is_max(small_ds, small_split, clean_model):
    X, y = small_ds.X[small_split.cal], small_ds.y[small_split.cal]
    spec = ScoreSpec("APS")
    attacks = [AttackSpec(k, seed=1) for k in ("FGSM", "PGD", "SPSA", "CW", "Clean")]
    one = calibrate_conservative(clean_model, attacks[:1], clean_model, X, y, spec, 0.1)
    assert one.conservative_q == one.per_attack_q["FGSM"]
    prev = -math.inf
    for m in range(1, 6):
        res = calibrate_conservative(clean_model, attacks[:m], clean_model, X, y, spec, 0.1)
        assert res.conservative_q >= prev
        assert all(res.conservative_q >= v for v in res.per_attack_q.values())
        prev = res.conservative_q
    with pytest.raises(ParameterError):
        calibrate_conservative(clean_model, [], clean_model, X, y, spec, 0.1)


def test_calibration_result_max_and_serialization(tmp_path):
    res = CalibrationResult({"a": 0.3, "b": 0.7, "c": 0.5}, 0.1, "m")
    assert res.conservative_q == 0.7
    inf = CalibrationResult({"a": math.inf, "b": 0.2}, 0.1, "m")
    assert inf.to_dict()["conservative_q"] == "inf"
    inf.save(tmp_path / "c.json")
    back = CalibrationResult.load(tmp_path / "c.json")
    assert back.per_attack_q == inf.per_attack_q and back.conservative_q == math.inf
    with pytest.raises(ParameterError):
        CalibrationResult({"a": 0.3}, 0.1, "m", conservative_q=0.2)


def test_evaluate_pipeline_infinite_threshold(small_ds, small_split, clean_model):
    X, y = small_ds.X[small_split.test], small_ds.y[small_split.test]
    masks = evaluate_pipeline(clean_model, X, y, AttackSpec("PGD"), clean_model, ScoreSpec("APS"), math.inf)
    assert masks.all()
    assert coverage(masks, y) == 1.0


def test_evaluate_pipeline_deterministic(small_ds, small_split, clean_model):
    X, y = small_ds.X[small_split.test], small_ds.y[small_split.test]
    spec = ScoreSpec("RSCP", seed=3)
    a = evaluate_pipeline(clean_model, X, y, AttackSpec("SPSA", seed=2), clean_model, spec, 0.9)
    b = evaluate_pipeline(clean_model, X, y, AttackSpec("SPSA", seed=2), clean_model, spec, 0.9)
    assert np.array_equal(a, b)
    assert [len(s) for s in masks_to_sets(a)] == a.sum(axis=1).tolist()


def test_attack_target_flag(small_ds, small_split, clean_model):
    X, y = small_ds.X[small_split.cal], small_ds.y[small_split.cal]
    other = zero_classifier(3, small_ds.dim)
    spec = ScoreSpec("THR")
    # Attacking the zero model perturbs nothing, so fk equals clean calibration.
    q_fk = calibrate_known_attack(clean_model, AttackSpec("FGSM"), other, X, y, spec, 0.1, attack_target="fk")
    q_f0 = calibrate_known_attack(clean_model, AttackSpec("FGSM"), clean_model, X, y, spec, 0.1)
    q_clean = calibrate_known_attack(clean_model, AttackSpec("Clean"), other, X, y, spec, 0.1)
    assert q_fk == q_f0
    assert calibrate_known_attack(other, AttackSpec("FGSM"), clean_model, X, y, spec, 0.1,
                                  attack_target="fk") == pytest.approx(-1 / 3)
    assert q_clean <= q_f0
    with pytest.raises(ParameterError):
        calibrate_known_attack(clean_model, AttackSpec("FGSM"), other, X, y, spec, 0.1, attack_target="fx")


def test_clean_split_conformal_coverage_by_simulation(small_ds):
    # Re-split a pooled set many times; mean coverage sits in the finite-sample band.
    from advcp.dataio import generate_synthetic
    from advcp.model import TrainConfig, train
    from advcp.scores import score_matrix

    ds = generate_synthetic(3, 2, 200, 0.15, seed=4)
    idx = np.random.default_rng(0).permutation(len(ds))
    model = train(ds, idx[:200], cfg=TrainConfig(epochs=40, seed=1))
    pool = idx[200:]
    S = score_matrix(ScoreSpec("THR"), model, ds.X[pool])
    true = S[np.arange(len(pool)), ds.y[pool]]
    rng = np.random.default_rng(1)
    covs = []
    for _ in range(300):
        perm = rng.permutation(len(pool))
        cal, test = perm[:100], perm[100:]
        q = conformal_quantile(true[cal], 0.1)
        covs.append(np.mean(true[test] <= q))
    se = np.std(covs, ddof=1) / np.sqrt(len(covs))
    assert 0.9 - 2 * se <= np.mean(covs) <= 0.9 + 1 / 101 + 2 * se
