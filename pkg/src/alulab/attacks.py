"""L-infinity gradient-sign attacks (FGSM, PGD) on a classifier or a purify+classify pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from alulab import tensor as T
from alulab.errors import ConfigError
from alulab.validation import check_features, check_labels, check_nonempty, check_trained

UNROLL_CAP = 10


@dataclass
class AttackConfig:
    epsilon: float = 0.1
    step_size: float | None = None
    iterations: int = 20
    random_start: bool = True
    seed: int = 0
    clip_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigError(f"clip_range must satisfy lo < hi, got {self.clip_range}")
        self.clip_range = (float(lo), float(hi))
        if self.step_size is None:
            self.step_size = 2.5 * self.epsilon / max(self.iterations, 1)

    @classmethod
    def fgsm(cls, epsilon: float, clip_range=(0.0, 1.0)) -> "AttackConfig":
        return cls(epsilon=epsilon, step_size=epsilon, iterations=1, random_start=False, clip_range=clip_range)


def _input_gradient(loss_fn, x: np.ndarray) -> np.ndarray:
    xt = T.Tensor(x, requires_grad=True)
    loss_fn(xt).backward()
    return xt.grad


def _run_pgd(loss_fn, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    lo, hi = np.float32(cfg.clip_range[0]), np.float32(cfg.clip_range[1])
    eps = np.float32(cfg.epsilon)
    step = np.float32(cfg.step_size)
    if cfg.epsilon == 0:
        return x0.copy()
    ball_lo, ball_hi = x0 - eps, x0 + eps
    x = x0.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        x = x0 + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape).astype(np.float32)
        x = np.clip(np.clip(x, ball_lo, ball_hi), lo, hi)
    for _ in range(cfg.iterations):
        g = _input_gradient(loss_fn, x)
        x = x + step * np.sign(g).astype(np.float32)
        x = np.clip(np.clip(x, ball_lo, ball_hi), lo, hi)
    return x


def _prepare(c, x, label):
    check_trained(c)
    X, single = check_features(x, c.n_features_in_)
    labels = check_labels(label, X.shape[0], c.n_classes_)
    return X, labels, single


def pgd(c, x, label, cfg: AttackConfig):
    """Untargeted PGD maximizing cross-entropy of the bare classifier.

    Each step moves by ``step_size * sign(grad)``, then projects onto the
    epsilon ball around the original input and onto ``clip_range``.
    """
    X, labels, single = _prepare(c, x, label)

    def loss_fn(xt):
        return T.cross_entropy(c.logits_graph(xt), labels, reduction="sum")

    out = _run_pgd(loss_fn, X, cfg)
    return out[0] if single else out


def fgsm(c, x, label, epsilon: float, clip_range=(0.0, 1.0)):
    """Closed-form FGSM: ``clip(x + epsilon * sign(grad_x CE))``."""
    X, labels, single = _prepare(c, x, label)
    g = _input_gradient(lambda xt: T.cross_entropy(c.logits_graph(xt), labels, reduction="sum"), X)
    out = np.clip(X + np.float32(epsilon) * np.sign(g).astype(np.float32), *map(np.float32, clip_range))
    return out[0] if single else out


def unrolled_purify_graph(v, xt: T.Tensor, steps: int, learning_rate: float) -> T.Tensor:
    """``D(z_K)`` after ``steps`` latent descent steps from ``E_mu(x)``, as one graph."""
    z = v.encode_mean_graph(xt)
    for _ in range(steps):
        z = z - v.latent_grad_graph(z, xt) * float(learning_rate)
    return v.decode_graph(z)


def _check_unroll(purify_steps: int) -> None:
    if purify_steps < 0 or purify_steps > UNROLL_CAP:
        raise ConfigError(f"purify_steps must be in [0, {UNROLL_CAP}], got {purify_steps}")


def pipeline_pgd(v, c, x, label, cfg: AttackConfig, purify_steps: int = UNROLL_CAP, purify_lr: float = 1e-4):
    """White-box PGD through ``c(purify(x))`` with a bounded unrolled purifier."""
    _check_unroll(purify_steps)
    X, labels, single = _prepare(c, x, label)

    def loss_fn(xt):
        x_hat = unrolled_purify_graph(v, xt, purify_steps, purify_lr)
        return T.cross_entropy(c.logits_graph(x_hat), labels, reduction="sum")

    out = _run_pgd(loss_fn, X, cfg)
    return out[0] if single else out


def pipeline_predict(v, c, x, purify_steps: int = UNROLL_CAP, purify_lr: float = 1e-4) -> np.ndarray:
    _check_unroll(purify_steps)
    X, single = check_features(x, c.n_features_in_)
    logits = c.logits_graph(unrolled_purify_graph(v, T.Tensor(X), purify_steps, purify_lr)).data
    pred = np.argmax(logits, axis=1)
    return pred[0] if single else pred


def attack_success_rate(c, X, y, cfg: AttackConfig, vae=None, purify_steps: int = UNROLL_CAP, purify_lr: float = 1e-4) -> float:
    """Fraction of initially-correct samples that the attack misclassifies.

    With ``vae`` given, the target is the pipeline ``c(purify(x))`` and
    the attack is :func:`pipeline_pgd`.
    """
    check_nonempty(X, "dataset")
    X, _ = check_features(X, c.n_features_in_)
    y = check_labels(y, len(X), c.n_classes_)
    if vae is None:
        predict = c.predict
        attack = lambda xs, ys: pgd(c, xs, ys, cfg)  # noqa: E731
    else:
        predict = lambda xs: pipeline_predict(vae, c, xs, purify_steps, purify_lr)  # noqa: E731
        attack = lambda xs, ys: pipeline_pgd(vae, c, xs, ys, cfg, purify_steps, purify_lr)  # noqa: E731
    correct = predict(X) == y
    if not correct.any():
        return 0.0
    adv = attack(X[correct], y[correct])
    return float(np.mean(predict(adv) != y[correct]))
