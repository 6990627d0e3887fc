import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alulab.attacks import (
    UNROLL_CAP,
    AttackConfig,
    attack_success_rate,
    fgsm,
    pgd,
    pipeline_pgd,
    pipeline_predict,
)
from alulab.errors import ConfigError
from alulab.models import LogitClassifier
from helpers import LinearDecoderModel


def identity_classifier():
    return LogitClassifier.from_params({"final.weight": np.eye(2, dtype=np.float32)})


def test_fgsm_hand_example():
    c = identity_classifier()
    out = fgsm(c, np.array([1.0, 0.0]), 0, 0.1)
    np.testing.assert_allclose(out, [0.9, 0.1], atol=1e-7)
    cfg = AttackConfig.fgsm(0.1)
    assert pgd(c, np.array([1.0, 0.0]), 0, cfg).tobytes() == out.tobytes()


def test_zero_epsilon_is_identity(small):
    X, y = small["test"].features, small["test"].labels
    out = pgd(small["c"], X, y, AttackConfig(epsilon=0.0))
    assert out.tobytes() == X.tobytes()
    out = pipeline_pgd(small["v"], small["c"], X, y, AttackConfig(epsilon=0.0), purify_steps=2)
    assert out.tobytes() == X.tobytes()
    assert attack_success_rate(small["c"], X, y, AttackConfig(epsilon=0.0)) == 0.0


def test_fgsm_equals_one_step_pgd_bitwise(small):
    X, y = small["test"].features, small["test"].labels
    for eps in (0.01, 0.05, 0.2):
        a = fgsm(small["c"], X, y, eps)
        b = pgd(small["c"], X, y, AttackConfig(epsilon=eps, step_size=eps, iterations=1, random_start=False))
        assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.3), st.integers(0, 8), st.booleans(), st.integers(0, 2**31))
def test_linf_and_clip_constraints(small, eps, iters, random_start, seed):
    X, y = small["test"].features[:20], small["test"].labels[:20]
    cfg = AttackConfig(epsilon=eps, iterations=iters, random_start=random_start, seed=seed, step_size=eps)
    out = pgd(small["c"], X, y, cfg)
    assert np.max(np.abs(out - X)) <= eps + 1e-6
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_custom_clip_range(small):
    X, y = small["test"].features[:20], small["test"].labels[:20]
    out = pgd(small["c"], X, y, AttackConfig(epsilon=0.3, clip_range=(0.2, 0.8)))
    assert out.min() >= 0.2 and out.max() <= 0.8


def test_seeded_random_start_is_deterministic(small):
    X, y = small["test"].features, small["test"].labels
    cfg = AttackConfig(epsilon=0.1, seed=3)
    assert pgd(small["c"], X, y, cfg).tobytes() == pgd(small["c"], X, y, cfg).tobytes()
    assert pgd(small["c"], X, y, AttackConfig(epsilon=0.1, seed=4)).tobytes() != pgd(small["c"], X, y, cfg).tobytes()


def test_default_step_size():
    assert AttackConfig(epsilon=0.2, iterations=20).step_size == pytest.approx(0.025)


def test_config_validation():
    for kw in (dict(epsilon=-1), dict(iterations=-1), dict(clip_range=(1.0, 0.0))):
        with pytest.raises(ConfigError):
            AttackConfig(**kw)


def test_label_out_of_range(small):
    with pytest.raises(IndexError):
        pgd(small["c"], small["test"].features[:2], [0, 7], AttackConfig(epsilon=0.1))


def test_pipeline_with_identity_autoencoder_matches_pgd(small):
    X, y = small["test"].features, small["test"].labels
    ident = LinearDecoderModel(np.eye(8), np.eye(8))
    for steps in (0, 3):
        cfg = AttackConfig(epsilon=0.1, seed=1)
        assert pipeline_pgd(ident, small["c"], X, y, cfg, purify_steps=steps).tobytes() == pgd(small["c"], X, y, cfg).tobytes()
    assert np.array_equal(pipeline_predict(ident, small["c"], X, 0), small["c"].predict(X))


def test_unroll_cap(small):
    X, y = small["test"].features[:2], small["test"].labels[:2]
    with pytest.raises(ConfigError):
        pipeline_pgd(small["v"], small["c"], X, y, AttackConfig(epsilon=0.1), purify_steps=UNROLL_CAP + 1)


def test_pipeline_attack_respects_constraints(small):
    X, y = small["test"].features[:30], small["test"].labels[:30]
    out = pipeline_pgd(small["v"], small["c"], X, y, AttackConfig(epsilon=0.05, iterations=5), purify_steps=3, purify_lr=0.5)
    assert np.max(np.abs(out - X)) <= 0.05 + 1e-6
    assert 0.0 <= out.min() and out.max() <= 1.0


def test_success_rate_counts_only_initially_correct():
    rng = np.random.default_rng(0)
    c = LogitClassifier(hidden=(8,), epochs=1, learning_rate=0.0).fit(rng.uniform(size=(40, 4)), np.arange(40) % 3)
    X = rng.uniform(size=(60, 4)).astype(np.float32)
    y = rng.integers(0, 3, size=60)
    correct = c.predict(X) == y
    adv = pgd(c, X[correct], y[correct], AttackConfig(epsilon=0.2))
    expected = np.mean(c.predict(adv) != y[correct])
    assert attack_success_rate(c, X, y, AttackConfig(epsilon=0.2)) == pytest.approx(expected)
    with pytest.raises(ConfigError):
        attack_success_rate(c, np.zeros((0, 4)), np.zeros(0), AttackConfig(epsilon=0.1))


def test_pgd_dominates_fgsm(bench):
    art, acfg = bench["art"], bench["acfg"]
    X, y = art.test.features, art.test.labels
    pgd_rate = attack_success_rate(art.classifier, X, y, acfg)
    fgsm_rate = attack_success_rate(art.classifier, X, y, AttackConfig.fgsm(acfg.epsilon))
    assert pgd_rate >= fgsm_rate


def test_pgd20_breaks_the_desk_classifier(bench):
    art = bench["art"]
    assert art.classifier.score(art.test.features, art.test.labels) >= 0.99
    assert art.classifier.score(bench["adv"], art.test.labels) < 0.05


def test_pipeline_attack_success_recorded(bench):
    art, acfg = bench["art"], bench["acfg"]
    X, y = art.test.features[:100], art.test.labels[:100]
    rate = attack_success_rate(art.classifier, X, y, acfg, vae=art.vae, purify_steps=5, purify_lr=2.0)
    assert 0.0 <= rate <= 1.0
