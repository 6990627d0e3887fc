import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alulab import alu
from alulab.analysis import AttackDelta, categorize_attack
from alulab.errors import ConfigError, DimensionError, NotTrainedError
from alulab.experiment import write_decisions
from alulab.purifier import PurifyConfig


def rec(pre, post):
    return alu.LogitRecord(np.asarray(pre, float), np.asarray(post, float))


def test_alu_predict_examples():
    r = rec([4, 0, 2], [1, 5, 2])
    np.testing.assert_array_equal(r.purification_delta, [-3, 5, 0])
    assert alu.alu_predict(r) == 1
    assert alu.alu_predict(rec([1, 2, 3], [1, 2, 3])) == 0


def test_record_invariants():
    r = rec([[1, 2], [0, 0]], [[1, 2], [3, -1]])
    np.testing.assert_array_equal(r.delta_sum, [0.0, 4.0])
    assert len(r) == 2 and r[1].delta_sum == 4.0
    with pytest.raises(DimensionError):
        rec([1, 2], [1, 2, 3])
    with pytest.raises(DimensionError):
        alu.alu_predict(rec([1.0], [2.0]))


# dyadic grid so that shifting by an integer is exact in float32
grid = st.integers(-30 * 1024, 30 * 1024).map(lambda k: k / 1024)
logit_pairs = st.integers(2, 10).flatmap(
    lambda m: st.tuples(
        st.lists(grid, min_size=m, max_size=m),
        st.lists(grid, min_size=m, max_size=m),
        st.integers(-1000, 1000),
    )
)


@settings(max_examples=300, deadline=None)
@given(logit_pairs)
def test_softmax_equivalence_and_shift_invariance(pair):
    pre, post, c = (np.asarray(v, dtype=float) for v in pair)
    r = rec(pre, post)
    assert np.argmax(alu.alu_likelihood(r)) == alu.alu_predict(r)
    assert alu.alu_predict(rec(pre + c, post + c)) == alu.alu_predict(r)


def test_nearest_rank_examples():
    stats = [0.1 * k for k in range(1, 11)]
    assert alu.nearest_rank(stats, 99.5) == pytest.approx(1.0)
    assert alu.nearest_rank([2.5] * 7, 99.5) == 2.5
    assert alu.nearest_rank([5, 1, 3, 2, 4], 40) == 2
    assert alu.nearest_rank([5, 1, 3, 2, 4], 100) == 5
    with pytest.raises(ConfigError):
        alu.nearest_rank([], 50)
    with pytest.raises(ConfigError):
        alu.nearest_rank([1.0], 0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 400), elements=st.floats(0, 100)), st.floats(0.5, 100))
def test_calibration_coverage(stats, percentile):
    th = alu.threshold_from_statistics(stats, percentile)
    assert np.mean(stats <= th.tau) >= percentile / 100 - 1e-12
    assert th.tau in stats


def test_detect_examples():
    th = alu.DetectionThreshold(tau=1.5)
    assert alu.detect(rec([0, 0], [4, 0]), th)
    assert not alu.detect(rec([0, 0], [1, 0]), th)
    assert not alu.detect(rec([0, 0], [1.5, 0]), th)


def test_threshold_dict_round_trip():
    th = alu.threshold_from_statistics([0.3, 0.1, 0.2], 50)
    assert alu.DetectionThreshold.from_dict(th.to_dict()) == th


def test_branch_soundness_in_decide():
    rng = np.random.default_rng(0)
    r = rec(rng.normal(size=(500, 5)), rng.normal(size=(500, 5)))
    th = alu.threshold_from_statistics(r.delta_sum, 50)
    d = alu.decide(r, th)
    flagged = d.branch == alu.ALU
    np.testing.assert_array_equal(flagged, d.detected)
    np.testing.assert_array_equal(d.label[flagged], alu.alu_predict(r)[flagged])
    np.testing.assert_array_equal(d.label[~flagged], np.argmax(r.post, 1)[~flagged])
    single = alu.decide(r[0], th)
    assert single.label == d.label[0] and single.branch == d.branch[0]


def test_calibrate_rejects_empty(small):
    with pytest.raises(ConfigError):
        alu.calibrate_threshold(small["v"], small["c"], np.zeros((0, 8)))


def test_classify_clean_input_is_conventional(small):
    cfg = PurifyConfig(learning_rate=0.5, iterations=10)
    th = alu.calibrate_threshold(small["v"], small["c"], small["train"].features, cfg)
    x = small["test"].features
    d = alu.classify(small["v"], small["c"], th, x, cfg)
    assert th.calibration_size == len(small["train"].features)
    clean = ~d.detected
    assert clean.mean() > 0.9
    np.testing.assert_array_equal(d.label[clean], np.argmax(d.record.post, 1)[clean])
    np.testing.assert_array_equal(d.record.pre, small["c"].decision_function(x))


def _bench_decisions(bench):
    art, cfg = bench["art"], bench["cfg"]
    th = alu.calibrate_threshold(art.vae, art.classifier, art.train.features, cfg.purify, cfg.percentile)
    return th, alu.classify(art.vae, art.classifier, th, bench["adv"], cfg.purify)


def test_attacked_case1_sample_takes_alu_branch(bench):
    art = bench["art"]
    th, d = _bench_decisions(bench)
    clean = art.classifier.decision_function(art.test.features)
    y = art.test.labels
    found = False
    for i in range(len(y)):
        delta = AttackDelta.from_logits(clean[i], d.record.pre[i], y[i])
        if delta.successful and categorize_attack(delta) == "case1" and d.label[i] == y[i] != np.argmax(d.record.post[i]):
            assert d.branch[i] == alu.ALU
            assert alu.alu_predict(d.record[i]) == y[i]
            found = True
            break
    assert found, "no case-1 sample recovered only by the logit update"


def test_algorithm_ordering_on_benchmark(bench):
    y = bench["art"].test.labels
    _, d = _bench_decisions(bench)
    acc_alu = np.mean(d.label == y)
    acc_post = np.mean(np.argmax(d.record.post, 1) == y)
    acc_pre = np.mean(np.argmax(d.record.pre, 1) == y)
    assert acc_alu > acc_post > acc_pre


def test_estimator_wrapper(small):
    est = alu.ALUClassifier(small["c"], small["v"], learning_rate=0.5, iterations=10)
    with pytest.raises(NotTrainedError):
        est.predict(small["test"].features)
    est.fit(small["train"].features)
    X = small["test"].features
    np.testing.assert_array_equal(est.predict(X), alu.classify(small["v"], small["c"], est.threshold_, X, est.purify_config()).label)
    proba = est.predict_proba(X)
    np.testing.assert_allclose(proba.sum(1), 1.0, atol=1e-9)
    assert 0.0 <= est.score(X, small["test"].labels) <= 1.0
    with pytest.raises(ConfigError):
        alu.ALUClassifier().fit(X)


def test_decision_dump(tmp_path):
    r = rec([[0, 0, 0], [1, 0, 0]], [[0, 3, 0], [1, 0, 0]])
    d = alu.decide(r, alu.DetectionThreshold(tau=1.0))
    path = tmp_path / "d.csv"
    write_decisions(path, d, np.array([1, 0]))
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["sample_id", "true_label", "pre_argmax", "post_argmax", "alu_argmax",
                             "delta_sum", "detected", "final_label", "branch"]
    assert rows[0]["detected"] == "1" and rows[0]["branch"] == "alu" and rows[0]["final_label"] == "1"
    assert rows[1]["detected"] == "0" and rows[1]["branch"] == "conventional" and float(rows[1]["delta_sum"]) == 0.0
