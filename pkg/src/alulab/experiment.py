"""Seeded end-to-end runs: train, calibrate, attack, and evaluate the defense arms."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from alulab import alu
from alulab.analysis import pattern_stats
from alulab.attacks import UNROLL_CAP, AttackConfig, fgsm, pgd, pipeline_pgd
from alulab.data import Dataset, gen_synthetic
from alulab.errors import ConfigError, StageError
from alulab.models import VAE, LogitClassifier, TrainConfig, train_classifier, train_unified, train_vae
from alulab.purifier import PurifyConfig, purify

ARMS = ("standard", "purification", "alu")


@dataclass
class DataSpec:
    n_classes: int = 4
    n_features: int = 32
    n_train: int = 2000
    n_test: int = 1000
    separation: float = 0.5
    cluster_std: float = 0.05
    intrinsic_dim: int | None = 4
    off_manifold_std: float = 0.005

    def generate(self, seed: int) -> tuple[Dataset, Dataset]:
        kw = dict(
            M=self.n_classes,
            d=self.n_features,
            separation=self.separation,
            seed=seed,
            cluster_std=self.cluster_std,
            intrinsic_dim=self.intrinsic_dim,
            off_manifold_std=self.off_manifold_std,
        )
        return gen_synthetic(n=self.n_train, split="train", **kw), gen_synthetic(n=self.n_test, split="test", **kw)


@dataclass
class ClassifierSpec:
    hidden: tuple = (64, 64)


@dataclass
class VAESpec:
    latent_dim: int = 8
    hidden: int = 64


@dataclass
class AttackSpec:
    """Attack settings; ``epsilon`` defaults to ``epsilon_fraction`` of the smallest class-mean distance.

    ``target="pipeline"`` attacks ``c(purify(x))`` through at most
    ``UNROLL_CAP`` unrolled purification steps.
    """

    kind: str = "pgd"
    epsilon: float | None = None
    epsilon_fraction: float = 0.15
    iterations: int = 20
    step_size: float | None = None
    random_start: bool = True
    target: str = "classifier"

    def __post_init__(self):
        if self.kind not in ("pgd", "fgsm"):
            raise ConfigError(f"attack kind must be 'pgd' or 'fgsm', got {self.kind!r}")
        if self.target not in ("classifier", "pipeline"):
            raise ConfigError(f"attack target must be 'classifier' or 'pipeline', got {self.target!r}")
        if self.epsilon is not None and self.epsilon < 0 or self.epsilon_fraction < 0:
            raise ConfigError("epsilon must be nonnegative")

    @property
    def name(self) -> str:
        return "fgsm" if self.kind == "fgsm" else f"pgd{self.iterations}"

    def resolve(self, train: Dataset, seed: int) -> AttackConfig:
        eps = self.epsilon if self.epsilon is not None else self.epsilon_fraction * train.min_mean_distance()
        if self.kind == "fgsm":
            return AttackConfig.fgsm(float(eps))
        return AttackConfig(float(eps), self.step_size, self.iterations, self.random_start, seed)


def _default_vae_train() -> TrainConfig:
    return TrainConfig(epochs=100, kl_weight=1e-6)


@dataclass
class ExperimentConfig:
    """Everything a run depends on.  ``seed`` overrides every nested seed."""

    data: DataSpec = field(default_factory=DataSpec)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    vae: VAESpec = field(default_factory=VAESpec)
    classifier_train: TrainConfig = field(default_factory=TrainConfig)
    vae_train: TrainConfig = field(default_factory=_default_vae_train)
    attack: AttackSpec = field(default_factory=AttackSpec)
    purify: PurifyConfig = field(default_factory=lambda: PurifyConfig(learning_rate=2.0, iterations=100))
    percentile: float = 99.5
    unified: bool = False
    output_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise ConfigError(f"percentile must be in (0, 100], got {self.percentile}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        self.classifier_train = dataclasses.replace(self.classifier_train, seed=self.seed)
        self.vae_train = dataclasses.replace(self.vae_train, seed=self.seed)
        self.purify = dataclasses.replace(self.purify, seed=self.seed)

    _NESTED = {
        "data": DataSpec,
        "classifier": ClassifierSpec,
        "vae": VAESpec,
        "classifier_train": TrainConfig,
        "vae_train": TrainConfig,
        "attack": AttackSpec,
        "purify": PurifyConfig,
    }

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        base = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            sub = cls._NESTED.get(key)
            if sub is None:
                kwargs[key] = value
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            fields = {f.name for f in dataclasses.fields(sub)}
            bad = set(value) - fields
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
            merged = {**dataclasses.asdict(getattr(base, key)), **value}
            if "hidden" in merged and isinstance(merged["hidden"], list):
                merged["hidden"] = tuple(merged["hidden"])
            try:
                kwargs[key] = sub(**merged)
            except TypeError as exc:
                raise ConfigError(f"bad value in {key!r}: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def run_dict(self) -> dict:
        """Serialized config without the output location, which does not affect results."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.run_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class ResultRecord:
    config_hash: str
    config: dict
    epsilon: float
    attack: str
    threshold: dict
    clean_accuracy: dict
    adversarial_accuracy: dict
    detection: dict
    patterns: dict
    digests: dict
    timings: dict = field(default_factory=dict)

    @property
    def adv_alu(self) -> float:
        return self.adversarial_accuracy[self.attack]["alu"]

    def to_dict(self, include_timings: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not include_timings:
            d.pop("timings")
        return d

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), sort_keys=True, indent=2)


@dataclass
class Artifacts:
    """Trained state shared between evaluations of one configuration."""

    train: Dataset
    test: Dataset
    classifier: LogitClassifier
    vae: VAE
    unified: LogitClassifier | None = None
    timings: dict = field(default_factory=dict)


@contextmanager
def stage(name: str, timings: dict | None = None):
    start = time.perf_counter()
    try:
        yield
    except ConfigError as exc:
        raise ConfigError(f"stage {name!r}: {exc}") from exc
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def prepare(cfg: ExperimentConfig) -> Artifacts:
    timings: dict = {}
    with stage("data", timings):
        train, test = cfg.data.generate(cfg.seed)
    with stage("train_classifier", timings):
        c = LogitClassifier(hidden=tuple(cfg.classifier.hidden))
        train_classifier(c, train.features, train.labels, cfg.classifier_train, n_classes=train.n_classes)
    with stage("train_vae", timings):
        v = VAE(latent_dim=cfg.vae.latent_dim, hidden=cfg.vae.hidden)
        train_vae(v, train.features, cfg.vae_train)
    unified = None
    if cfg.unified:
        with stage("train_unified", timings):
            unified = LogitClassifier(hidden=tuple(cfg.classifier.hidden))
            train_unified(v, unified, train.features, train.labels, cfg.classifier_train, n_classes=train.n_classes)
    return Artifacts(train, test, c, v, unified, timings)


def attack_test_set(cfg: ExperimentConfig, art: Artifacts, classifier=None) -> tuple[np.ndarray, AttackConfig]:
    c = classifier or art.classifier
    acfg = cfg.attack.resolve(art.train, cfg.seed)
    X, y = art.test.features, art.test.labels
    if cfg.attack.target == "pipeline":
        steps = min(cfg.purify.iterations, UNROLL_CAP)
        return pipeline_pgd(art.vae, c, X, y, acfg, steps, cfg.purify.learning_rate), acfg
    if cfg.attack.kind == "fgsm":
        return fgsm(c, X, y, acfg.epsilon, acfg.clip_range), acfg
    return pgd(c, X, y, acfg), acfg


def _records(v, c, X, pcfg) -> alu.LogitRecord:
    x_hat, _ = purify(v, X, pcfg)
    return alu.LogitRecord(c.decision_function(X), c.decision_function(x_hat))


def _arm_accuracies(rec: alu.LogitRecord, th, y) -> tuple[dict, alu.ALUDecision]:
    dec = alu.decide(rec, th)
    acc = {
        "standard": float(np.mean(np.argmax(rec.pre, 1) == y)),
        "purification": float(np.mean(np.argmax(rec.post, 1) == y)),
        "alu": float(np.mean(dec.label == y)),
    }
    return acc, dec


def decision_rows(dec: alu.ALUDecision, y) -> list[list]:
    rec = dec.record
    pre, post, ad = np.argmax(rec.pre, 1), np.argmax(rec.post, 1), alu.alu_predict(rec)
    return [
        [i, int(y[i]), int(pre[i]), int(post[i]), int(ad[i]), repr(float(rec.delta_sum[i])),
         int(dec.detected[i]), int(dec.label[i]), str(dec.branch[i])]
        for i in range(len(y))
    ]


DECISION_HEADER = ["sample_id", "true_label", "pre_argmax", "post_argmax", "alu_argmax",
                   "delta_sum", "detected", "final_label", "branch"]


def write_decisions(path, dec: alu.ALUDecision, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_HEADER)
        w.writerows(decision_rows(dec, y))


def write_attack_dump(path, clean_logits, adv_logits, y) -> None:
    m = clean_logits.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "true_label"] + [f"clean_{k}" for k in range(m)] + [f"adv_{k}" for k in range(m)])
        for i in range(len(y)):
            w.writerow([i, int(y[i])] + [repr(float(v)) for v in clean_logits[i]] + [repr(float(v)) for v in adv_logits[i]])


def read_attack_dump(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"attack dump not found: {path}") from exc
    if not rows:
        raise ConfigError(f"attack dump {path} is empty")
    header, body = rows[0], rows[1:]
    clean_cols = [i for i, h in enumerate(header) if h.startswith("clean_")]
    adv_cols = [i for i, h in enumerate(header) if h.startswith("adv_")]
    if header[:2] != ["sample_id", "true_label"] or not clean_cols or len(clean_cols) != len(adv_cols):
        raise ConfigError(f"attack dump {path} has an unexpected header")
    body.sort(key=lambda r: int(r[0]))
    arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
    return arr[:, clean_cols], arr[:, adv_cols], arr[:, 1].astype(np.int64)


def evaluate(cfg: ExperimentConfig, art: Artifacts, adv: np.ndarray | None = None, acfg: AttackConfig | None = None,
             write_outputs: bool = True) -> ResultRecord:
    timings = dict(art.timings)
    c, v, y = art.classifier, art.vae, art.test.labels
    if adv is None:
        with stage("attack", timings):
            adv, acfg = attack_test_set(cfg, art)
    with stage("calibrate", timings):
        th = alu.calibrate_threshold(v, c, art.train.features, cfg.purify, cfg.percentile)
    with stage("evaluate", timings):
        clean_rec = _records(v, c, art.test.features, cfg.purify)
        adv_rec = _records(v, c, adv, cfg.purify)
        clean_acc, clean_dec = _arm_accuracies(clean_rec, th, y)
        adv_acc, adv_dec = _arm_accuracies(adv_rec, th, y)
        detection = {
            "clean": float(1.0 - np.mean(clean_dec.detected)),
            "adversarial": float(np.mean(adv_dec.detected)),
        }
    if art.unified is not None:
        with stage("unified", timings):
            u = art.unified
            uth = alu.calibrate_threshold(v, u, art.train.features, cfg.purify, cfg.percentile)
            u_adv = attack_test_set(cfg, art, classifier=u)[0]
            clean_acc["unified"] = float(np.mean(alu.decide(_records(v, u, art.test.features, cfg.purify), uth).label == y))
            adv_acc["unified"] = float(np.mean(alu.decide(_records(v, u, u_adv, cfg.purify), uth).label == y))
    with stage("patterns", timings):
        patterns = pattern_stats(clean_rec.pre, adv_rec.pre, y)

    max_pert = float(np.max(np.abs(adv - art.test.features))) if len(adv) else 0.0
    record = ResultRecord(
        config_hash=cfg.config_hash(),
        config=cfg.run_dict(),
        epsilon=float(acfg.epsilon),
        attack=cfg.attack.name,
        threshold={**th.to_dict(include_statistics=False), "logits": "raw"},
        clean_accuracy=clean_acc,
        adversarial_accuracy={cfg.attack.name: adv_acc},
        detection=detection,
        patterns=patterns,
        digests={
            "classifier": c.digest(),
            "vae": v.digest(),
            "attack_step_size": float(acfg.step_size),
            "attack_random_start": bool(acfg.random_start),
            "max_perturbation": max_pert,
        },
        timings=timings,
    )
    if write_outputs and cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        with open(os.path.join(cfg.output_dir, "result.json"), "w") as fh:
            fh.write(record.to_json() + "\n")
        write_decisions(os.path.join(cfg.output_dir, "decisions_adversarial.csv"), adv_dec, y)
        write_decisions(os.path.join(cfg.output_dir, "decisions_clean.csv"), clean_dec, y)
        write_attack_dump(os.path.join(cfg.output_dir, "attack_dump.csv"), clean_rec.pre, adv_rec.pre, y)
    return record


def run_ablation(cfg: ExperimentConfig) -> ResultRecord:
    """Train models, attack the test set and evaluate every defense arm."""
    return evaluate(cfg, prepare(cfg))


SWEEP_PARAMETERS = ("learning_rate", "iterations")
SWEEP_HEADER = ["value", "clean_acc", "adv_acc", "clean_det_rate", "adv_det_rate"]


def sweep(cfg: ExperimentConfig, parameter: str, values, art: Artifacts | None = None) -> list[ResultRecord]:
    """One evaluation per purifier setting, with models (and classifier-targeted attacks) shared."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    values = sorted(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    cast = int if parameter == "iterations" else float
    art = art or prepare(cfg)
    shared = None
    if cfg.attack.target == "classifier":
        with stage("attack", art.timings):
            shared = attack_test_set(cfg, art)
    records = []
    for value in values:
        point = dataclasses.replace(cfg, purify=dataclasses.replace(cfg.purify, **{parameter: cast(value)}), output_dir=None)
        adv, acfg = shared if shared is not None else (None, None)
        records.append(evaluate(point, art, adv, acfg, write_outputs=False))
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        write_sweep_csv(os.path.join(cfg.output_dir, f"sweep_{parameter}.csv"), parameter, records)
        with open(os.path.join(cfg.output_dir, f"sweep_{parameter}.json"), "w") as fh:
            json.dump([r.to_dict() for r in records], fh, sort_keys=True, indent=2)
            fh.write("\n")
    return records


def sweep_rows(parameter: str, records: list[ResultRecord]) -> list[list]:
    rows = []
    for r in records:
        value = r.config["purify"][parameter]
        rows.append([value, r.clean_accuracy["alu"], r.adv_alu, r.detection["clean"], r.detection["adversarial"]])
    return rows


def write_sweep_csv(path, parameter: str, records: list[ResultRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(sweep_rows(parameter, records))
