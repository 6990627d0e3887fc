"""Test-time purification by gradient descent on a VAE latent code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from alulab import tensor as T
from alulab.errors import ConfigError
from alulab.validation import check_features, check_trained


@dataclass
class PurifyConfig:
    learning_rate: float = 1e-4
    iterations: int = 100
    init: str = "encode"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("purification learning_rate must be positive")
        if self.iterations < 0:
            raise ConfigError("purification iterations must be nonnegative")
        if self.init not in ("encode", "random"):
            raise ConfigError(f"init must be 'encode' or 'random', got {self.init!r}")


@dataclass
class PurifyTrace:
    """Per-step reconstruction losses, shape ``(iterations + 1, n)``.

    Row ``t`` is the loss of ``x_rec^t``; row 0 comes from the initial latent.
    ``outputs`` holds every ``x_rec^t`` when requested.
    """

    losses: np.ndarray
    z_final: np.ndarray
    x_hat: np.ndarray
    outputs: np.ndarray | None = None

    def to_csv(self, path, sample: int = 0) -> None:
        lines = [f"{t},{loss!r}" for t, loss in enumerate(self.losses[:, sample].tolist())]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def reconstruction_loss(v, x, z) -> float:
    """``mse(D(z), x)`` for a single latent/target pair."""
    x_arr, _ = check_features(x, v.n_features_in_)
    z_arr = np.atleast_2d(np.asarray(z, dtype=np.float32))
    return float(T.mse(v.decode_graph(T.Tensor(z_arr)), T.Tensor(x_arr)).data)


def initial_latent(v, X: np.ndarray, cfg: PurifyConfig) -> np.ndarray:
    if cfg.init == "encode":
        return v.encode(X)[0].astype(np.float32, copy=True)
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal((X.shape[0], v.latent_dim)).astype(np.float32)


def purify(v, x, cfg: PurifyConfig | None = None, keep_outputs: bool = False):
    """Run ``cfg.iterations`` descent steps on each row's latent code.

    Rows are independent: the batch objective is the sum of per-row MSEs, so
    each row follows exactly its own gradient.  Returns ``(x_hat, trace)``.
    """
    cfg = cfg or PurifyConfig()
    check_trained(v)
    X, single = check_features(x, v.n_features_in_)
    target = T.Tensor(X)
    z = initial_latent(v, X, cfg)
    n = X.shape[0]
    lr = np.float32(cfg.learning_rate)

    losses = np.empty((cfg.iterations + 1, n), dtype=np.float32)
    outputs = np.empty((cfg.iterations + 1,) + X.shape, dtype=np.float32) if keep_outputs else None
    for t in range(cfg.iterations + 1):
        zt = T.Tensor(z, requires_grad=True)
        out = v.decode_graph(zt)
        losses[t] = np.mean(np.square(out.data - X, dtype=np.float64), axis=1)
        if keep_outputs:
            outputs[t] = out.data
        if t == cfg.iterations:
            x_hat = out.data
            break
        loss = T.mse(out, target) * float(n)
        loss.backward()
        z = z - lr * zt.grad
    trace = PurifyTrace(losses=losses, z_final=z, x_hat=x_hat, outputs=outputs)
    if single:
        return x_hat[0], trace
    return x_hat, trace


class LatentPurifier(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`purify` for a fitted :class:`~alulab.models.VAE`.

    ``fit`` trains the VAE on clean data unless it is already fitted and
    ``refit=False``.
    """

    def __init__(self, vae=None, learning_rate=1e-4, iterations=100, init="encode", seed=0, refit=False):
        self.vae = vae
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.init = init
        self.seed = seed
        self.refit = refit

    def config(self) -> PurifyConfig:
        return PurifyConfig(self.learning_rate, self.iterations, self.init, self.seed)

    def fit(self, X, y=None):
        if self.vae is None:
            raise ConfigError("LatentPurifier needs a VAE")
        if self.refit or getattr(self.vae, "params_", None) is None:
            self.vae.fit(X)
        self.vae_ = self.vae
        return self

    def _backend(self):
        vae = getattr(self, "vae_", None) or self.vae
        if vae is None:
            raise ConfigError("LatentPurifier needs a VAE")
        check_trained(vae)
        return vae

    def transform(self, X):
        return purify(self._backend(), X, self.config())[0]

    def purify(self, X, keep_outputs: bool = False):
        return purify(self._backend(), X, self.config(), keep_outputs=keep_outputs)
