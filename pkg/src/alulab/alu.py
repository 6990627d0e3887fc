"""Logit-difference decision rule, sum-|delta| detector and the combined classifier.

For an input ``x`` with purified version ``x_hat``, ``pre`` are the logits of
``x`` and ``post`` those of ``x_hat``.  Inputs whose total logit movement
exceeds a threshold calibrated on clean data are treated as adversarial and
labelled by the largest logit *increase*; all others by the usual argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from alulab import tensor as T
from alulab.errors import ConfigError, DimensionError
from alulab.purifier import PurifyConfig, purify
from alulab.validation import check_features, check_nonempty, check_trained

ALU = "alu"
CONVENTIONAL = "conventional"


@dataclass(frozen=True)
class LogitRecord:
    """Pre- and post-purification logits, one row per sample (or a single vector)."""

    pre: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        pre = np.asarray(self.pre, dtype=np.float32)
        post = np.asarray(self.post, dtype=np.float32)
        if pre.shape != post.shape or pre.ndim not in (1, 2):
            raise DimensionError(f"pre {pre.shape} and post {post.shape} must be equal vectors/matrices")
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)

    @property
    def purification_delta(self) -> np.ndarray:
        return self.post - self.pre

    @property
    def delta_sum(self):
        s = np.abs(self.purification_delta).sum(axis=-1, dtype=np.float64)
        return float(s) if self.pre.ndim == 1 else s

    def __len__(self) -> int:
        return 1 if self.pre.ndim == 1 else self.pre.shape[0]

    def __getitem__(self, i) -> "LogitRecord":
        return LogitRecord(self.pre[i], self.post[i])


@dataclass(frozen=True)
class DetectionThreshold:
    tau: float
    percentile: float = 99.5
    calibration_size: int = 0
    statistics: tuple = field(default=(), repr=False)

    def to_dict(self, include_statistics: bool = True) -> dict:
        out = {"tau": self.tau, "percentile": self.percentile, "calibration_size": self.calibration_size}
        if include_statistics:
            out["statistics"] = list(self.statistics)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionThreshold":
        return cls(
            tau=float(d["tau"]),
            percentile=float(d.get("percentile", 99.5)),
            calibration_size=int(d.get("calibration_size", 0)),
            statistics=tuple(d.get("statistics", ())),
        )


@dataclass(frozen=True)
class ALUDecision:
    label: np.ndarray
    branch: np.ndarray
    record: LogitRecord
    detected: np.ndarray


def alu_predict(record: LogitRecord) -> np.ndarray:
    """Class with the largest logit increase; ties go to the lowest index."""
    if record.pre.shape[-1] < 2:
        raise DimensionError("need at least two classes")
    return np.argmax(record.purification_delta, axis=-1)


def alu_likelihood(record: LogitRecord) -> np.ndarray:
    return T.softmax(T.Tensor(record.purification_delta, dtype=np.float64)).data


def nearest_rank(values, percentile: float) -> float:
    """Value at 1-based rank ``ceil(percentile/100 * n)`` of the sorted values."""
    if not 0 < percentile <= 100:
        raise ConfigError(f"percentile must be in (0, 100], got {percentile}")
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 0:
        raise ConfigError("cannot take a percentile of no values")
    rank = max(1, math.ceil(percentile / 100.0 * vals.size - 1e-9))
    return float(vals[rank - 1])


def threshold_from_statistics(stats, percentile: float = 99.5) -> DetectionThreshold:
    stats = np.asarray(stats, dtype=np.float64)
    return DetectionThreshold(
        tau=nearest_rank(stats, percentile),
        percentile=float(percentile),
        calibration_size=int(stats.size),
        statistics=tuple(float(s) for s in stats),
    )


def logit_record(v, c, x, purify_cfg: PurifyConfig | None = None) -> LogitRecord:
    """Logits of ``x`` (computed first) and of its purification."""
    X, single = check_features(x, c.n_features_in_)
    pre = c.decision_function(X)
    x_hat, _ = purify(v, X, purify_cfg)
    post = c.decision_function(x_hat)
    rec = LogitRecord(pre, post)
    return rec[0] if single else rec


def calibrate_threshold(v, c, clean_data, purify_cfg: PurifyConfig | None = None, percentile: float = 99.5):
    check_nonempty(clean_data, "calibration data")
    rec = logit_record(v, c, np.atleast_2d(np.asarray(clean_data)), purify_cfg)
    return threshold_from_statistics(np.atleast_1d(rec.delta_sum), percentile)


def detect(record: LogitRecord, th: DetectionThreshold):
    """``True`` where the input is flagged adversarial (``delta_sum > tau``)."""
    return record.delta_sum > th.tau


def decide(record: LogitRecord, th: DetectionThreshold) -> ALUDecision:
    flagged = np.atleast_1d(detect(record, th))
    alu_label = np.atleast_1d(alu_predict(record))
    conventional = np.atleast_1d(np.argmax(record.post, axis=-1))
    label = np.where(flagged, alu_label, conventional)
    branch = np.where(flagged, ALU, CONVENTIONAL)
    if record.pre.ndim == 1:
        return ALUDecision(int(label[0]), str(branch[0]), record, bool(flagged[0]))
    return ALUDecision(label, branch, record, flagged)


def classify(v, c, th: DetectionThreshold, x, purify_cfg: PurifyConfig | None = None) -> ALUDecision:
    return decide(logit_record(v, c, x, purify_cfg), th)


class ALUClassifier(ClassifierMixin, BaseEstimator):
    """Purify, compare logits, and switch decision rule on detection.

    Wraps an already trained classifier and VAE; ``fit`` only calibrates the
    detector on clean data (labels are ignored).
    """

    def __init__(self, classifier=None, vae=None, learning_rate=1e-4, iterations=100, init="encode", seed=0, percentile=99.5):
        self.classifier = classifier
        self.vae = vae
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.init = init
        self.seed = seed
        self.percentile = percentile

    def purify_config(self) -> PurifyConfig:
        return PurifyConfig(self.learning_rate, self.iterations, self.init, self.seed)

    def fit(self, X, y=None):
        if self.classifier is None or self.vae is None:
            raise ConfigError("ALUClassifier needs a trained classifier and a trained VAE")
        check_trained(self.classifier)
        check_trained(self.vae)
        self.threshold_ = calibrate_threshold(self.vae, self.classifier, X, self.purify_config(), self.percentile)
        self.classes_ = self.classifier.classes_
        self.n_features_in_ = self.classifier.n_features_in_
        return self

    def decide(self, X) -> ALUDecision:
        check_trained(self, "threshold_")
        return classify(self.vae, self.classifier, self.threshold_, X, self.purify_config())

    def predict(self, X):
        return self.decide(X).label

    def predict_proba(self, X):
        dec = self.decide(X)
        rec = dec.record
        alu = alu_likelihood(rec)
        conv = T.softmax(T.Tensor(rec.post, dtype=np.float64)).data
        flagged = np.asarray(dec.detected)[..., None]
        return np.where(flagged, alu, conv)
