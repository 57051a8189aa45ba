import numpy as np
import pytest

from advcp.attacks import AttackSpec, apply_attack, attack_batch, cw, cw_margin, fgsm, pgd, spsa, spsa_gradient
from advcp.errors import NumericError, ParameterError
from advcp.model import Classifier, input_gradient, loss, zero_classifier

from conftest import random_classifier


def one_d_model(w=2.0):
    # logits (w x, 0)
    return Classifier("linear", np.array([[w], [0.0]]), np.zeros(2))


def test_clean_is_identity(rng):
    m = random_classifier("mlp1", 3, 4, seed=0)
    X = rng.uniform(size=(20, 4))
    out = apply_attack(AttackSpec("Clean"), m, X, rng.integers(3, size=20))
    assert out.tobytes() == X.tobytes()


def test_fgsm_zero_budget(rng):
    m = random_classifier("linear", 3, 4, seed=0)
    x = rng.uniform(size=4)
    assert np.array_equal(fgsm(m, x, 0, 0.0), x)


def test_fgsm_known_direction():
    # y = 1 with w > 0: d loss / dx = softmax(wx)_0 * w > 0, so x moves up.
    m = one_d_model(2.0)
    assert input_gradient(m, [0.5], 1)[0] > 0
    assert fgsm(m, [0.5], 1, 0.1)[0] == pytest.approx(0.6, abs=1e-15)
    assert fgsm(m, [0.95], 1, 0.1)[0] == 1.0


def test_fgsm_zero_gradient_leaves_input():
    x = np.array([0.3, 0.6])
    assert np.array_equal(fgsm(zero_classifier(2, 2), x, 0, 0.2), x)


def test_fgsm_increases_loss_on_linear_models(rng):
    for t in range(50):
        m = random_classifier("linear", 3, 5, seed=t)
        x = rng.uniform(0.2, 0.8, size=5)
        y = int(rng.integers(3))
        assert loss(m, fgsm(m, x, y, 0.05), y) >= loss(m, x, y)


def test_pgd_one_step_equals_fgsm(rng):
    for t in range(30):
        m = random_classifier("mlp1", 3, 4, seed=t)
        X = rng.uniform(size=(5, 4))
        y = rng.integers(3, size=5)
        for step in (0.1, 0.3):
            assert pgd(m, X, y, 0.1, step, 1).tobytes() == fgsm(m, X, y, 0.1).tobytes()


def test_pgd_zero_budget(rng):
    m = random_classifier("mlp1", 3, 4, seed=1)
    x = rng.uniform(size=4)
    assert np.array_equal(pgd(m, x, 2, 0.0, 0.05, 7), x)


def test_pgd_beats_fgsm_usually(rng):
    wins = 0
    for t in range(100):
        m = random_classifier("mlp1", 3, 5, seed=t, scale=3.0)
        x = rng.uniform(size=5)
        y = int(rng.integers(3))
        wins += loss(m, pgd(m, x, y, 0.1, 0.025, 10), y) >= loss(m, fgsm(m, x, y, 0.1), y)
    assert wins >= 90


def test_pgd_iterates_stay_in_ball():
    # Every iterate, not only the last: run each prefix length.
    m = random_classifier("mlp1", 2, 3, seed=4, scale=3.0)
    x = np.array([0.02, 0.5, 0.97])
    for iters in range(1, 8):
        out = pgd(m, x, 1, 0.05, 0.03, iters)
        assert np.max(np.abs(out - x)) <= 0.05 + 1e-12
        assert out.min() >= 0 and out.max() <= 1


def test_pgd_requires_positive_step():
    with pytest.raises(ParameterError):
        AttackSpec("PGD", pgd_step=0.0)


def test_spsa_constant_loss_is_identity(rng):
    x = rng.uniform(size=3)
    spec = AttackSpec("SPSA", epsilon=0.1, seed=3)
    assert np.array_equal(spsa(zero_classifier(3, 3), x, 0, spec), x)


def test_spsa_is_deterministic(rng):
    m = random_classifier("mlp1", 3, 4, seed=2)
    X = rng.uniform(size=(4, 4))
    y = rng.integers(3, size=4)
    spec = AttackSpec("SPSA", seed=42)
    assert attack_batch(spec, m, X, y).tobytes() == attack_batch(spec, m, X, y).tobytes()
    # Row results do not depend on the batch they were computed in.
    assert np.array_equal(attack_batch(spec, m, X[1], y[1]), attack_batch(spec, m, X, y)[1])


def _spsa_sign_agreement(samples, trials=300, d=8, seed=0):
    rng = np.random.default_rng(seed)
    agree = []
    for t in range(trials):
        m = random_classifier("linear", 3, d, seed=1000 + t)
        x = rng.uniform(size=d)
        y = int(rng.integers(3))
        directions = rng.choice([-1.0, 1.0], size=(samples, d))
        est = spsa_gradient(m, x[None], np.array([y]), 0.01, directions)[0]
        agree.append(np.mean(np.sign(est) == np.sign(input_gradient(m, x, y))))
    return float(np.mean(agree))


def test_spsa_sign_recovery_improves_with_samples():
    # Cross-terms between coordinates leave noise of order |grad| / sqrt(samples).
    assert _spsa_sign_agreement(64) >= 0.85
    assert _spsa_sign_agreement(2048, trials=100) >= 0.97


@pytest.mark.xfail(strict=True, reason="i.i.d. Rademacher SPSA agrees on about 90% of coordinates at 64 samples")
def test_spsa_sign_agreement_95_percent_at_64_samples():
    assert _spsa_sign_agreement(64) >= 0.95


def test_cw_zero_c_returns_input(rng):
    m = random_classifier("mlp1", 3, 4, seed=0)
    X = rng.uniform(size=(10, 4))
    out = cw(m, X, rng.integers(3, size=10), AttackSpec("CW", cw_c=0.0))
    assert np.max(np.abs(out - X)) < 1e-3


def test_cw_rejects_zero_steps():
    with pytest.raises(ParameterError):
        AttackSpec("CW", cw_steps=0)


def test_cw_reduces_margin(rng):
    for t in range(20):
        m = random_classifier("linear", 3, 4, seed=t, scale=5.0)
        x = rng.uniform(0.2, 0.8, size=4)
        y = int(np.argmax(m.logits(x[None])[0]))
        adv = cw(m, x, y, AttackSpec("CW", cw_c=10.0))
        assert cw_margin(m, adv[None], np.array([y]))[0] < cw_margin(m, x[None], np.array([y]))[0]


def test_cw_output_in_open_box_and_optional_eps_clip(rng):
    m = random_classifier("mlp1", 3, 4, seed=5, scale=3.0)
    X = rng.uniform(size=(10, 4))
    y = rng.integers(3, size=10)
    out = cw(m, X, y, AttackSpec("CW", cw_c=50.0))
    assert out.min() > 0 and out.max() < 1
    clipped = cw(m, X, y, AttackSpec("CW", cw_c=50.0, epsilon=0.01, cw_clip_to_eps=True))
    assert np.max(np.abs(clipped - X)) <= 0.01 + 1e-12


@pytest.mark.parametrize("kind", ["FGSM", "PGD", "SPSA"])
def test_budget_and_box(kind, rng):
    m = random_classifier("mlp1", 4, 6, seed=8, scale=3.0)
    X = rng.uniform(size=(200, 6))
    y = rng.integers(4, size=200)
    spec = AttackSpec(kind, epsilon=0.07, pgd_step=0.03, spsa_step=0.03, seed=1)
    out = attack_batch(spec, m, X, y)
    assert np.max(np.abs(out - X)) <= 0.07 + 1e-12
    assert out.min() >= 0 and out.max() <= 1


def test_input_validation():
    m = zero_classifier(2, 3)
    with pytest.raises(ParameterError):
        apply_attack(AttackSpec("FGSM"), m, np.zeros(2), 0)
    with pytest.raises(ParameterError):
        apply_attack(AttackSpec("FGSM"), m, np.full(3, 1.5), 0)
    with pytest.raises(ParameterError):
        AttackSpec("Nope")


def test_nan_gradient_raises():
    m = Classifier("linear", np.zeros((2, 1)), np.zeros(2))
    object.__setattr__(m, "W1", np.array([[np.nan], [0.0]]))
    with pytest.raises(NumericError):
        fgsm(m, [0.5], 0, 0.1)
