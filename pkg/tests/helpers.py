"""Shared builders for tests: gradient-check cases and tiny duck-typed models."""

from __future__ import annotations

import numpy as np

from alulab import tensor as T


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-2.0, 2.0, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _case_binary(op, rng, shape=(3, 4), positive=False):
    a = rng.uniform(0.5, 2.0, shape) if positive else rng.normal(size=shape)
    b = rng.uniform(0.5, 2.0, shape) if positive else rng.normal(size=shape)
    ta, tb = T.Tensor(a), T.Tensor(b, requires_grad=True)
    w = T.Tensor(rng.normal(size=shape))

    def f():
        return T.tsum(T.mul(op(ta, tb), w))

    return f, tb, ta


def _weighted(unary, x, rng):
    w = T.Tensor(rng.normal(size=x.shape))

    def f():
        out = unary(x)
        return T.tsum(T.mul(out, w)) if out.shape == w.shape else T.tsum(out)

    return f


def grad_cases():
    """``name -> builder(rng) -> (f, leaf)`` for every differentiable op."""
    cases = {}

    def unary(name, fn, sampler):
        def build(rng):
            leaf = T.Tensor(sampler(rng), requires_grad=True)
            return _weighted(fn, leaf, rng), leaf

        cases[name] = build

    normal = lambda rng: rng.normal(size=(3, 4))  # noqa: E731
    positive = lambda rng: rng.uniform(0.5, 2.0, size=(3, 4))  # noqa: E731

    for name, op in [("add", T.add), ("sub", T.sub), ("mul", T.mul)]:
        def build_l(rng, op=op):
            f, _, leaf_a = _case_binary(op, rng)
            leaf_a.requires_grad = True
            return f, leaf_a

        def build_r(rng, op=op):
            f, leaf_b, _ = _case_binary(op, rng)
            return f, leaf_b

        cases[f"{name}[lhs]"] = build_l
        cases[f"{name}[rhs]"] = build_r

    unary("scalar_mul", lambda x: x * 1.7, normal)
    unary("scalar_add", lambda x: x + 0.3, normal)
    unary("neg", lambda x: -x, normal)
    unary("div_scalar", lambda x: x / 3.0, normal)
    unary("power2", lambda x: T.power(x, 2.0), normal)
    unary("power2.5", lambda x: T.power(x, 2.5), positive)
    unary("relu", T.relu, lambda rng: _away_from_zero(rng, (3, 4)))
    unary("tanh", T.tanh, normal)
    unary("sigmoid", T.sigmoid, normal)
    unary("exp", T.exp, normal)
    unary("log", T.log, positive)
    unary("sum", T.tsum, normal)
    unary("sum[axis0]", lambda x: T.tsum(x, axis=0), normal)
    unary("sum[axis1]", lambda x: T.tsum(x, axis=1), normal)
    unary("mean", T.mean, normal)
    unary("mean[axis0]", lambda x: T.mean(x, axis=0), normal)
    unary("mean[axis1]", lambda x: T.mean(x, axis=1), normal)
    unary("reshape", lambda x: T.reshape(x, (4, 3)), normal)
    unary("transpose", T.transpose, normal)
    unary("slice", lambda x: T.getitem(x, (slice(0, 2), slice(1, 4))), normal)
    unary("concat", lambda x: T.concat([x, T.mul(x, x)], axis=0), normal)
    unary("concat[axis1]", lambda x: T.concat([x, x], axis=1), normal)
    unary("softmax[vector]", lambda x: T.softmax(T.reshape(x, (12,))), normal)
    unary("softmax[rows]", T.softmax, normal)

    def matmul_l(rng):
        a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(4, 2)))
        return _weighted(lambda x: T.matmul(x, b), a, rng), a

    def matmul_r(rng):
        a = T.Tensor(rng.normal(size=(3, 4)))
        b = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        return _weighted(lambda x: T.matmul(a, x), b, rng), b

    def bias_add_b(rng):
        x = T.Tensor(rng.normal(size=(3, 4)))
        b = T.Tensor(rng.normal(size=(4,)), requires_grad=True)
        return _weighted(lambda bb: T.bias_add(x, bb), b, rng), b

    def bias_add_x(rng):
        x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(4,)))
        return _weighted(lambda xx: T.bias_add(xx, b), x, rng), x

    def ce(reduction):
        def build(rng):
            logits = T.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
            labels = rng.integers(0, 4, size=5)
            return (lambda: T.cross_entropy(logits, labels, reduction=reduction)), logits

        return build

    def ce_vector(rng):
        logits = T.Tensor(rng.normal(size=(4,)), requires_grad=True)
        label = int(rng.integers(0, 4))
        return (lambda: T.cross_entropy(logits, label)), logits

    def mse_a(rng):
        a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(3, 4)))
        return (lambda: T.mse(a, b)), a

    def mse_b(rng):
        a = T.Tensor(rng.normal(size=(3, 4)))
        b = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return (lambda: T.mse(a, b)), b

    def composite(rng):
        w1 = T.Tensor(rng.normal(size=(4, 5)) * 0.5, requires_grad=True)
        x = T.Tensor(rng.normal(size=(3, 4)))
        w2 = T.Tensor(rng.normal(size=(5, 3)) * 0.5)
        labels = rng.integers(0, 3, size=3)

        def f():
            h = T.tanh(T.matmul(x, w1))
            return T.cross_entropy(T.matmul(h, w2), labels) + T.mse(T.sigmoid(h), T.Tensor(np.full((3, 5), 0.5)))

        return f, w1

    cases.update(
        {
            "matmul[lhs]": matmul_l,
            "matmul[rhs]": matmul_r,
            "bias_add[bias]": bias_add_b,
            "bias_add[x]": bias_add_x,
            "cross_entropy[mean]": ce("mean"),
            "cross_entropy[sum]": ce("sum"),
            "cross_entropy[vector]": ce_vector,
            "mse[lhs]": mse_a,
            "mse[rhs]": mse_b,
            "composite_mlp": composite,
        }
    )
    return cases


class LinearDecoderModel:
    """Purifier test double: identity-free linear decoder ``D(z) = z @ Dm`` and encoder ``z = x @ E``."""

    def __init__(self, Dm: np.ndarray, E: np.ndarray | None = None):
        self.Dm = np.asarray(Dm, dtype=np.float32)
        self.E = np.asarray(E if E is not None else np.linalg.pinv(Dm), dtype=np.float32)
        self.latent_dim, self.n_features_in_ = self.Dm.shape
        self.params_ = {"D": self.Dm}

    def encode(self, X):
        mu = np.asarray(X, dtype=np.float32) @ self.E
        return mu, np.zeros_like(mu)

    def encode_mean_graph(self, x):
        return T.matmul(x, T.Tensor(self.E))

    def decode_graph(self, z):
        return T.matmul(z, T.Tensor(self.Dm))

    def latent_grad_graph(self, z, x):
        n = self.n_features_in_
        resid = self.decode_graph(z) - x
        return T.matmul(resid, T.Tensor(self.Dm.T)) * (2.0 / n)
