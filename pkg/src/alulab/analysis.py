"""Attack logit-pattern statistics and closed-form one-step learning-rate checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from alulab.errors import ConfigError, DataIntegrityError, DegenerateInstanceError, DimensionError

CASES = ("case1", "case2", "case3", "unsuccessful")


@dataclass(frozen=True)
class AttackDelta:
    """Logit change of one sample under attack (adversarial minus clean).

    ``delta_true`` and ``delta_adv`` are taken at the true class ``t`` and at
    the post-attack argmax ``a``.
    """

    delta_true: float
    delta_adv: float
    successful: bool
    true_class: int = 0
    adv_class: int = 0

    @classmethod
    def from_logits(cls, clean, adv, true_class: int) -> "AttackDelta":
        clean = np.asarray(clean, dtype=np.float64)
        adv = np.asarray(adv, dtype=np.float64)
        a = int(np.argmax(adv))
        t = int(true_class)
        return cls(float(adv[t] - clean[t]), float(adv[a] - clean[a]), a != t, t, a)


def categorize_attack(d: AttackDelta) -> str:
    if not d.successful:
        return "unsuccessful"
    if d.delta_true < 0:
        return "case1" if d.delta_adv > 0 else "case2"
    if d.delta_adv > 0:
        return "case3"
    raise DataIntegrityError(
        f"successful attack with delta_true={d.delta_true} >= 0 and delta_adv={d.delta_adv} <= 0 "
        f"(true class {d.true_class}, adversarial class {d.adv_class})"
    )


def pattern_stats(clean_logits, adv_logits, labels) -> dict:
    """Counting statistics over a batch of (clean logits, adversarial logits, label).

    Only samples the classifier got right on clean input enter the statistics;
    the others are counted in ``excluded``.  Case fractions are over the
    included samples, so they sum to one.
    """
    clean = np.atleast_2d(np.asarray(clean_logits, dtype=np.float64))
    adv = np.atleast_2d(np.asarray(adv_logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    if clean.size == 0 or len(labels) == 0:
        raise ConfigError("pattern statistics need a nonempty batch")
    if clean.shape != adv.shape or labels.shape != (clean.shape[0],):
        raise DimensionError(f"clean {clean.shape}, adversarial {adv.shape} and labels {labels.shape} disagree")

    keep = np.argmax(clean, axis=1) == labels
    counts = dict.fromkeys(CASES, 0)
    n_success = n_true_min = 0
    other_abs, ta_abs = [], []
    for c_row, a_row, t in zip(clean[keep], adv[keep], labels[keep]):
        d = AttackDelta.from_logits(c_row, a_row, t)
        counts[categorize_attack(d)] += 1
        if not d.successful:
            continue
        n_success += 1
        delta = a_row - c_row
        n_true_min += int(np.argmin(delta) == t)
        ta_abs.append(0.5 * (abs(d.delta_true) + abs(d.delta_adv)))
        mask = np.ones(delta.size, dtype=bool)
        mask[[d.true_class, d.adv_class]] = False
        other_abs.extend(np.abs(delta[mask]).tolist())

    n = int(keep.sum())
    out = {k: (counts[k] / n if n else 0.0) for k in CASES}
    out.update(
        counts=counts,
        included=n,
        excluded=int((~keep).sum()),
        successful=n_success,
        greatest_decrease_true_fraction=n_true_min / n_success if n_success else None,
        other_class_mean_abs_delta=float(np.mean(other_abs)) if other_abs else None,
        true_adv_mean_abs_delta=float(np.mean(ta_abs)) if ta_abs else None,
    )
    return out


# -- one-step learning rate for a linear encoder/decoder/classifier ---------------


@dataclass(frozen=True)
class LinearInstance:
    """Scalar (or per-coordinate diagonal) linear model: output ``C*D*z``, reconstruction ``D*z``."""

    C: float | np.ndarray
    D: float | np.ndarray
    z: float | np.ndarray
    x: float | np.ndarray
    y0: float | np.ndarray

    def arrays(self):
        vals = [np.asarray(v, dtype=np.float64) for v in (self.C, self.D, self.z, self.x, self.y0)]
        try:
            np.broadcast_shapes(*(v.shape for v in vals))
        except ValueError as exc:
            raise DimensionError(f"instance shapes do not compose: {[v.shape for v in vals]}") from exc
        return vals


def _maybe_scalar(a: np.ndarray):
    return float(a) if np.ndim(a) == 0 else a


def one_step_update(inst: LinearInstance, alpha):
    """``z + alpha * 2 (x - D z) D``: one descent step on ``(x - D z)^2``."""
    C, D, z, x, y0 = inst.arrays()
    return z + np.asarray(alpha) * 2.0 * (x - D * z) * D


def verify_one_step_mse(inst: LinearInstance) -> dict:
    """Learning rate that zeroes ``(y0 - C D z')^2`` after one latent step."""
    C, D, z, x, y0 = inst.arrays()
    num = y0 - C * D * z
    den = 2.0 * C * D * (x - D * z) * D
    zero = den == 0
    if np.any(zero & (num != 0)):
        raise DegenerateInstanceError("zero denominator (x = D z) with nonzero classification residual")
    alpha = np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=~zero)
    z_new = one_step_update(inst, alpha)
    loss = float(np.sum((y0 - C * D * z_new) ** 2))
    return {"alpha": _maybe_scalar(alpha), "z_updated": _maybe_scalar(z_new), "post_update_loss": loss}


def verify_alpha_positive(inst: LinearInstance) -> bool:
    try:
        alpha = np.asarray(verify_one_step_mse(inst)["alpha"])
    except DegenerateInstanceError:
        return False
    return bool(np.all(alpha > 0))


def verify_one_step_ce(inst: LinearInstance, tol: float = 1e-9) -> dict:
    """Evaluate the cross-entropy variant of the one-step rate as written.

    ``alpha = (1/(C D) - z y0) / (2 (x - D z y0) D)`` is applied with the same
    update as the MSE case; the surrogate loss ``-y0 log(C D z')`` and whether
    ``C D z'`` lands on ``1/y0`` are reported, not asserted.
    """
    C, D, z, x, y0 = inst.arrays()
    cd = C * D
    if np.any(cd == 0):
        raise DegenerateInstanceError("C * D is zero")
    den = 2.0 * (x - D * z * y0) * D
    if np.any(den == 0):
        raise DegenerateInstanceError("zero denominator (x = D z y0)")
    alpha = (1.0 / cd - z * y0) / den
    z_new = one_step_update(inst, alpha)
    out = cd * z_new
    if np.any(out <= 0):
        raise DegenerateInstanceError(f"log argument C D z' = {out} is not positive")
    loss = float(np.sum(-y0 * np.log(out)))
    with np.errstate(divide="ignore"):
        target = np.where(y0 != 0, 1.0 / y0, np.inf)
    return {
        "alpha": _maybe_scalar(alpha),
        "z_updated": _maybe_scalar(z_new),
        "output": _maybe_scalar(out),
        "post_update_loss": loss,
        "reaches_stationary": bool(np.all(np.abs(out - target) <= tol * np.maximum(1.0, np.abs(target)))),
    }


# -- seeded instance generators ----------------------------------------------------


def _magnitude(rng, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi) * rng.choice([-1.0, 1.0]))


def random_mse_instances(n: int, seed: int) -> list[LinearInstance]:
    """Scalar instances with ``|C|, |D| >= 0.5`` and ``|x - D z| >= 0.1``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        C, D = _magnitude(rng, 0.5, 3.0), _magnitude(rng, 0.5, 3.0)
        z = float(rng.uniform(-2.0, 2.0))
        x = D * z + _magnitude(rng, 0.1, 2.0)
        y0 = float(rng.uniform(-5.0, 5.0))
        out.append(LinearInstance(C, D, z, x, y0))
    return out


def sign_condition_instances(n: int, seed: int) -> list[LinearInstance]:
    """Instances with ``sign(y0 - C D z) == sign(x - D z)`` and ``C, D > 0``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        C, D = float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.5, 3.0))
        z = float(rng.uniform(-2.0, 2.0))
        s = float(rng.choice([-1.0, 1.0]))
        x = D * z + s * float(rng.uniform(0.1, 2.0))
        y0 = C * D * z + s * float(rng.uniform(0.1, 5.0))
        out.append(LinearInstance(C, D, z, x, y0))
    return out


def random_ce_instances(n: int, seed: int) -> list[LinearInstance]:
    """Admissible cross-entropy instances: positive outputs, nonzero denominators."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        C, D = float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.5, 3.0))
        z = float(rng.uniform(0.1, 2.0))
        y0 = float(rng.choice([1.0, rng.uniform(0.2, 1.0)]))
        x = D * z * y0 + _magnitude(rng, 0.1, 2.0)
        inst = LinearInstance(C, D, z, x, y0)
        try:
            verify_one_step_ce(inst)
        except DegenerateInstanceError:
            continue
        out.append(inst)
    return out


def proof_report(n: int = 100, seed: int = 0) -> dict:
    """Run all three checks on ``n`` seeded instances each."""
    if n < 1:
        raise ConfigError("need at least one instance")
    mse = [verify_one_step_mse(i) for i in random_mse_instances(n, seed)]
    signs = [verify_alpha_positive(i) for i in sign_condition_instances(n, seed + 1)]
    ce = [verify_one_step_ce(i) for i in random_ce_instances(n, seed + 2)]
    ce_losses = [r["post_update_loss"] for r in ce]
    return {
        "instances": n,
        "seed": seed,
        "mse": {
            "max_post_update_loss": max(r["post_update_loss"] for r in mse),
            "all_below_1e-10": all(r["post_update_loss"] < 1e-10 for r in mse),
        },
        "alpha_positive": {"fraction_true": sum(signs) / n, "all_true": all(signs)},
        "ce": {
            "all_alpha_finite": all(math.isfinite(r["alpha"]) for r in ce),
            "fraction_reaching_stationary": sum(r["reaches_stationary"] for r in ce) / n,
            "max_post_update_loss": max(ce_losses),
            "min_post_update_loss": min(ce_losses),
        },
    }
