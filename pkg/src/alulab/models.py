"""Classifier and VAE estimators built on :mod:`alulab.tensor`.

``LogitClassifier`` realizes ``logits = W^T f(x)``: a stack of affine+ReLU
feature layers followed by a bias-free final weight matrix.  ``VAE`` is a pair
of MLPs with a Gaussian latent and a sigmoid decoder output.  Both follow the
scikit-learn estimator protocol (``fit`` returns ``self``; learned state ends in
an underscore).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from alulab import tensor as T
from alulab.errors import ConfigError, DimensionError
from alulab.optim import make_optimizer, scheduled_lr, validate_schedule
from alulab.validation import check_features, check_labels, check_nonempty, check_trained


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    schedule: list = field(default_factory=list)
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    kl_weight: float = 1e-3
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.kl_weight < 0 or self.weight_decay < 0:
            raise ConfigError("kl_weight and weight_decay must be nonnegative")
        try:
            self.schedule = validate_schedule(self.schedule)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _dense(x: T.Tensor, vars_, name: str) -> T.Tensor:
    return T.bias_add(T.matmul(x, vars_[f"{name}.weight"]), vars_[f"{name}.bias"])


def _init_dense(rng, fan_in: int, fan_out: int, gain: float = 2.0):
    w = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)).astype(np.float32)
    return w, np.zeros(fan_out, dtype=np.float32)


def _wrap(params: dict[str, np.ndarray], requires_grad: bool) -> dict[str, T.Tensor]:
    return {k: T.Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def _minibatch_loop(n, cfg: TrainConfig, step_fn, params):
    """Shared epoch loop; ``step_fn(idx, lr)`` returns the batch loss."""
    rng = np.random.default_rng(cfg.seed + 1)
    opt = make_optimizer(cfg.optimizer, params)
    history, lr_trace = [], []
    for epoch in range(cfg.epochs):
        lr = scheduled_lr(cfg.learning_rate, cfg.schedule, epoch)
        lr_trace.append(lr)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = step_fn(idx)
            if cfg.weight_decay:
                grads = {k: g + cfg.weight_decay * params[k] for k, g in grads.items()}
            opt.step(grads, lr)
            total += loss * len(idx)
        history.append(total / n)
    return history, lr_trace


class LogitClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier exposing raw logits.

    Parameters
    ----------
    hidden : tuple of int
        Widths of the ReLU feature layers. ``()`` makes the feature map the
        identity, so the model is the single matrix ``W``.
    optimizer, learning_rate, schedule, epochs, batch_size, seed
        Training settings, see :class:`TrainConfig`.
    """

    def __init__(
        self,
        hidden=(64, 64),
        optimizer="adam",
        learning_rate=1e-3,
        schedule=(),
        epochs=30,
        batch_size=64,
        seed=0,
        weight_decay=0.0,
    ):
        self.hidden = hidden
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.schedule = schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.weight_decay = weight_decay

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray], **kwargs) -> "LogitClassifier":
        """Build a fitted classifier from explicit weights."""
        n_hidden = sum(1 for k in params if k.startswith("hidden") and k.endswith(".weight"))
        hidden = tuple(params[f"hidden{i}.weight"].shape[1] for i in range(n_hidden))
        clf = cls(hidden=hidden, **kwargs)
        clf._set_params_arrays(params)
        return clf

    def _set_params_arrays(self, params):
        self.params_ = {k: np.array(v, dtype=np.float32) for k, v in params.items()}
        w = self.params_["final.weight"]
        first = self.params_.get("hidden0.weight", w)
        self.n_features_in_ = first.shape[0]
        self.n_classes_ = w.shape[1]
        self.classes_ = np.arange(self.n_classes_)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            schedule=list(self.schedule),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            weight_decay=self.weight_decay,
        )

    def init_params(self, n_features: int, n_classes: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        params = {}
        width = n_features
        for i, h in enumerate(self.hidden):
            params[f"hidden{i}.weight"], params[f"hidden{i}.bias"] = _init_dense(rng, width, h)
            width = h
        params["final.weight"] = _init_dense(rng, width, n_classes, gain=1.0)[0]
        return params

    # -- graph construction ------------------------------------------------
    def features_graph(self, x: T.Tensor, vars_: dict[str, T.Tensor]) -> T.Tensor:
        h = x
        for i in range(len(self.hidden)):
            h = T.relu(_dense(h, vars_, f"hidden{i}"))
        return h

    def logits_graph(self, x: T.Tensor, vars_: dict[str, T.Tensor] | None = None) -> T.Tensor:
        """Differentiable logits; parameters are constants unless ``vars_`` says otherwise."""
        check_trained(self)
        if x.data.ndim != 2 or x.shape[1] != self.n_features_in_:
            raise DimensionError(f"input shape {x.shape} does not match {self.n_features_in_} features")
        if vars_ is None:
            vars_ = _wrap(self.params_, requires_grad=False)
        return T.matmul(self.features_graph(x, vars_), vars_["final.weight"])

    # -- estimator API -----------------------------------------------------
    def fit(self, X, y, n_classes: int | None = None):
        check_nonempty(X, "training data")
        X, _ = check_features(X)
        labels = check_labels(y, len(X))
        m = int(n_classes if n_classes is not None else labels.max() + 1)
        check_labels(labels, len(X), m)
        cfg = self.train_config()
        self._set_params_arrays(self.init_params(X.shape[1], m))
        params = self.params_

        def step(idx):
            vars_ = _wrap(params, requires_grad=True)
            loss = T.cross_entropy(self.logits_graph(T.Tensor(X[idx]), vars_), labels[idx])
            loss.backward()
            return float(loss.data), {k: v.grad for k, v in vars_.items()}

        self.history_, self.lr_trace_ = _minibatch_loop(len(X), cfg, step, params)
        return self

    def features(self, X) -> np.ndarray:
        check_trained(self)
        X, single = check_features(X, self.n_features_in_)
        out = self.features_graph(T.Tensor(X), _wrap(self.params_, False)).data
        return out[0] if single else out

    def decision_function(self, X) -> np.ndarray:
        """Raw logits ``W^T f(x)``; no softmax."""
        check_trained(self)
        X, single = check_features(X, self.n_features_in_)
        out = self.logits_graph(T.Tensor(X)).data
        return out[0] if single else out

    forward_logits = decision_function

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        return T.softmax(T.Tensor(logits)).data

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=-1)

    def digest(self) -> str:
        check_trained(self)
        return params_digest(self.params_)


class VAE(TransformerMixin, BaseEstimator):
    """MLP variational autoencoder with a sigmoid decoder.

    ``transform`` returns the noise-free reconstruction ``D(E_mu(x))``.
    """

    def __init__(
        self,
        latent_dim=8,
        hidden=64,
        optimizer="adam",
        learning_rate=1e-3,
        schedule=(),
        epochs=30,
        batch_size=64,
        seed=0,
        kl_weight=1e-3,
        weight_decay=0.0,
    ):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.schedule = schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.kl_weight = kl_weight
        self.weight_decay = weight_decay

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            schedule=list(self.schedule),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            kl_weight=self.kl_weight,
            weight_decay=self.weight_decay,
        )

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray], **kwargs) -> "VAE":
        latent = params["enc.mu.weight"].shape[1]
        hidden = params["enc.hidden.weight"].shape[1]
        vae = cls(latent_dim=latent, hidden=hidden, **kwargs)
        vae._set_params_arrays(params)
        return vae

    def _set_params_arrays(self, params):
        self.params_ = {k: np.array(v, dtype=np.float32) for k, v in params.items()}
        self.n_features_in_ = self.params_["enc.hidden.weight"].shape[0]

    def init_params(self, n_features: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        p = {}
        p["enc.hidden.weight"], p["enc.hidden.bias"] = _init_dense(rng, n_features, self.hidden)
        p["enc.mu.weight"], p["enc.mu.bias"] = _init_dense(rng, self.hidden, self.latent_dim, 1.0)
        p["enc.log_var.weight"], p["enc.log_var.bias"] = _init_dense(rng, self.hidden, self.latent_dim, 1.0)
        p["enc.log_var.weight"] *= 0.1
        p["dec.hidden.weight"], p["dec.hidden.bias"] = _init_dense(rng, self.latent_dim, self.hidden)
        p["dec.out.weight"], p["dec.out.bias"] = _init_dense(rng, self.hidden, n_features, 1.0)
        return p

    # -- graph construction ------------------------------------------------
    def _vars(self, vars_):
        check_trained(self)
        return _wrap(self.params_, False) if vars_ is None else vars_

    def encode_graph(self, x: T.Tensor, vars_=None) -> tuple[T.Tensor, T.Tensor]:
        vars_ = self._vars(vars_)
        if x.data.ndim != 2 or x.shape[1] != self.n_features_in_:
            raise DimensionError(f"input shape {x.shape} does not match {self.n_features_in_} features")
        h = T.relu(_dense(x, vars_, "enc.hidden"))
        return _dense(h, vars_, "enc.mu"), _dense(h, vars_, "enc.log_var")

    def encode_mean_graph(self, x: T.Tensor, vars_=None) -> T.Tensor:
        return self.encode_graph(x, vars_)[0]

    def decode_graph(self, z: T.Tensor, vars_=None) -> T.Tensor:
        vars_ = self._vars(vars_)
        if z.data.ndim != 2 or z.shape[1] != self.latent_dim:
            raise DimensionError(f"latent shape {z.shape} does not match latent_dim={self.latent_dim}")
        h = T.relu(_dense(z, vars_, "dec.hidden"))
        return T.sigmoid(_dense(h, vars_, "dec.out"))

    def latent_grad_graph(self, z: T.Tensor, x: T.Tensor) -> T.Tensor:
        """Per-row ``d/dz mse(D(z_i), x_i)`` built from first-order ops.

        Expressing the gradient as a graph lets an attacker differentiate
        through unrolled purification steps without second-order autodiff.
        The ReLU mask is piecewise constant and enters as a constant.
        """
        vars_ = self._vars(None)
        pre1 = _dense(z, vars_, "dec.hidden")
        h = T.relu(pre1)
        out = T.sigmoid(_dense(h, vars_, "dec.out"))
        d = x.shape[1]
        g_out = (out - x) * (2.0 / d)
        g_pre2 = g_out * out * (1.0 - out)
        g_h = T.matmul(g_pre2, T.transpose(vars_["dec.out.weight"]))
        g_pre1 = g_h * T.Tensor((pre1.data > 0).astype(pre1.data.dtype))
        return T.matmul(g_pre1, T.transpose(vars_["dec.hidden.weight"]))

    # -- numeric API ---------------------------------------------------------
    def encode(self, X) -> tuple[np.ndarray, np.ndarray]:
        X, single = check_features(X, getattr(self, "n_features_in_", None))
        mu, log_var = self.encode_graph(T.Tensor(X))
        if single:
            return mu.data[0], log_var.data[0]
        return mu.data, log_var.data

    def decode(self, Z) -> np.ndarray:
        check_trained(self)
        Z = np.asarray(Z, dtype=np.float32)
        single = Z.ndim == 1
        out = self.decode_graph(T.Tensor(Z[None, :] if single else Z)).data
        return out[0] if single else out

    def forward(self, X, noise) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(x_hat, mu, log_var)`` with ``x_hat = D(mu + exp(log_var/2) * noise)``."""
        check_trained(self)
        mu, log_var = self.encode(X)
        noise = np.asarray(noise, dtype=np.float32)
        if noise.shape != mu.shape:
            raise DimensionError(f"noise shape {noise.shape} does not match latent shape {mu.shape}")
        z = reparameterize(mu, log_var, noise)
        return self.decode(z), mu, log_var

    vae_forward = forward

    def transform(self, X) -> np.ndarray:
        mu, _ = self.encode(X)
        return self.decode(mu)

    reconstruct = transform

    def fit(self, X, y=None):
        check_nonempty(X, "training data")
        X, _ = check_features(X)
        cfg = self.train_config()
        self._set_params_arrays(self.init_params(X.shape[1]))
        params = self.params_
        noise_rng = np.random.default_rng(cfg.seed + 2)

        def step(idx):
            vars_ = _wrap(params, requires_grad=True)
            xb = T.Tensor(X[idx])
            mu, log_var = self.encode_graph(xb, vars_)
            noise = T.Tensor(noise_rng.standard_normal(mu.shape).astype(np.float32))
            z = mu + T.exp(log_var * 0.5) * noise
            x_hat = self.decode_graph(z, vars_)
            loss = vae_loss(xb, x_hat, mu, log_var, cfg.kl_weight)
            loss.backward()
            return float(loss.data), {k: v.grad for k, v in vars_.items()}

        self.history_, self.lr_trace_ = _minibatch_loop(len(X), cfg, step, params)
        return self

    def digest(self) -> str:
        check_trained(self)
        return params_digest(self.params_)


def reparameterize(mu, log_var, noise):
    mu, log_var, noise = (np.asarray(a, dtype=np.float32) for a in (mu, log_var, noise))
    return mu + np.exp(log_var / np.float32(2.0)) * noise


def kl_divergence(mu: T.Tensor, log_var: T.Tensor) -> T.Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dims, averaged over rows."""
    rows = mu.shape[0] if mu.data.ndim == 2 else 1
    inner = 1.0 + log_var - mu * mu - T.exp(log_var)
    return inner.sum() * (-0.5 / rows)


def vae_loss(x, x_hat, mu, log_var, kl_weight: float) -> T.Tensor:
    """Reconstruction MSE plus ``kl_weight`` times the Gaussian KL term."""
    x, x_hat, mu, log_var = (T._lift(a) for a in (x, x_hat, mu, log_var))
    if mu.shape != log_var.shape:
        raise DimensionError(f"mu {mu.shape} and log_var {log_var.shape} differ")
    return T.mse(x, x_hat) + kl_divergence(mu, log_var) * float(kl_weight)


def forward_logits(c: LogitClassifier, x) -> np.ndarray:
    return c.decision_function(x)


def vae_forward(v: VAE, x, noise):
    return v.forward(x, noise)


def train_classifier(c: LogitClassifier, X, y, cfg: TrainConfig | None = None, n_classes=None):
    """Fit ``c`` in place; returns ``(c, per-epoch mean cross-entropy)``."""
    if cfg is not None:
        c.set_params(
            optimizer=cfg.optimizer,
            learning_rate=cfg.learning_rate,
            schedule=tuple(cfg.schedule),
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
        )
    c.fit(X, y, n_classes=n_classes)
    return c, c.history_


def train_vae(v: VAE, X, cfg: TrainConfig | None = None):
    if cfg is not None:
        v.set_params(
            optimizer=cfg.optimizer,
            learning_rate=cfg.learning_rate,
            schedule=tuple(cfg.schedule),
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            kl_weight=cfg.kl_weight,
        )
    v.fit(X)
    return v, v.history_


def train_unified(v: VAE, c: LogitClassifier, X, y, cfg: TrainConfig | None = None, n_classes=None):
    """Train ``c`` on the noise-free reconstructions ``D(E_mu(x))`` of clean data.

    ``v`` must already be fitted; it is only read.
    """
    check_trained(v)
    check_nonempty(X, "training data")
    X, _ = check_features(X, v.n_features_in_)
    recon = v.transform(X)
    return train_classifier(c, recon, y, cfg, n_classes=n_classes)
