"""Gradient estimators for the routing function.

Routing weights pick which primitive acts, and the pick itself (an argmax or
a categorical draw) has no gradient.  The primary estimator here is the
frequency loss: regress the weights onto the one-hot indicator of the
primitive whose sampled action the critic currently scores highest.  Its
stationary point is the best-primitive frequency vector, so descending it
steers the router toward primitives that win more often.

Three baselines ride along for comparison: Gumbel-Softmax relaxation of the
categorical draw, the score-function (REINFORCE) estimator, and gating, which
sidesteps discreteness by composing all primitives into a single Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, TrainingError
from .policy import MixtureOutput, tanh_log_det

__all__ = [
    "BestPrimitiveIndicator", "RouterLossReport", "GatingSample",
    "compute_v", "freq_loss", "freq_report", "gumbel_router_sample",
    "reinforce_router_loss", "gating_compose",
]


@dataclass(frozen=True)
class BestPrimitiveIndicator:
    """One-hot rows marking the primitive with the highest critic score."""

    v: np.ndarray           # same shape as q_values, one-hot per row
    best_index: np.ndarray  # () or (N,) int
    q_values: np.ndarray    # detached copy of the scores


@dataclass(frozen=True)
class RouterLossReport:
    """Scalar router loss plus the per-component residuals behind it."""

    loss: float
    delta: np.ndarray  # -v + w, rows sum to zero
    estimator: str


def compute_v(q_values) -> BestPrimitiveIndicator:
    """Eq.-style one-hot indicator of the best-scored primitive per row.

    Ties break to the lowest index.  The scores are copied as plain data:
    the indicator is a constant target, never a gradient path into the critic
    or the primitives.
    """
    q = q_values.data if isinstance(q_values, Tensor) else np.asarray(q_values)
    q = np.array(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise TrainingError("non-finite critic scores while selecting best primitive")
    single = q.ndim == 1
    q2 = q.reshape(1, -1) if single else q
    idx = np.argmax(q2, axis=1)
    v = np.zeros_like(q2)
    v[np.arange(q2.shape[0]), idx] = 1.0
    if single:
        return BestPrimitiveIndicator(v=v[0], best_index=idx[0], q_values=q)
    return BestPrimitiveIndicator(v=v, best_index=idx, q_values=q)


def freq_loss(w, indicator: BestPrimitiveIndicator) -> Tensor:
    """Batch-mean squared distance between routing weights and the indicator.

    For each sample, sum_k (v_k - w_k)^2; gradient flows through w only, and
    equals twice the per-component residual (-v + w) pushed through the
    softmax, which is the frequency-gradient estimator up to that constant.
    """
    diff = ad.sub(indicator.v, w)
    per_sample = ad.tsum(ad.square(diff), axis=-1)
    return ad.tmean(per_sample)


def freq_report(w, indicator: BestPrimitiveIndicator) -> RouterLossReport:
    """Loss value and residuals as plain data, for logging."""
    w = w.data if isinstance(w, Tensor) else np.asarray(w)
    delta = -indicator.v + w
    loss = float(np.mean(np.sum(delta * delta, axis=-1)))
    return RouterLossReport(loss=loss, delta=delta, estimator="freq")


def gumbel_router_sample(logits, temperature, rng: np.random.Generator) -> Tensor:
    """Relaxed categorical draw: softmax((logits + Gumbel noise)/temperature).

    Differentiable in the logits; the temperature trades bias (high) for
    gradient variance (low).
    """
    if temperature <= 0.0:
        raise ConfigError(f"gumbel temperature must be > 0, got {temperature}")
    logits = ad.as_tensor(logits)
    noise = rng.gumbel(size=logits.shape)
    return ad.softmax(ad.div(ad.add(logits, noise), temperature), axis=-1)


def reinforce_router_loss(w, component, signal) -> Tensor:
    """Score-function surrogate: -mean(signal * log w[component]).

    The signal (a detached critic score, usually baseline-subtracted) weights
    the log-probability of the component that was actually drawn; its gradient
    is the REINFORCE estimator for the routing parameters.
    """
    w = ad.as_tensor(w)
    n, k = w.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), np.asarray(component, dtype=np.int64)] = 1.0
    signal = signal.data if isinstance(signal, Tensor) else np.asarray(signal)
    picked = ad.tsum(ad.mul(ad.log(w), onehot), axis=-1)
    return ad.neg(ad.tmean(ad.mul(picked, signal)))


@dataclass(frozen=True)
class GatingSample:
    """A reparameterized draw from the gating composition's single Gaussian."""

    action: Tensor        # (N, A)
    pre_squash: Tensor    # (N, A)
    mu: Tensor            # (N, A) composed mean, sum_i w_i mu_i
    sigma: Tensor         # (N, A) composed std, sqrt(sum_i w_i sigma_i^2)
    own_log_prob: Tensor  # (N,) density of the draw under the composition


def gating_compose(out: MixtureOutput, rng: np.random.Generator,
                   squash=True) -> GatingSample:
    """Collapse the mixture into one Gaussian via the weighted-action rule.

    The weighted action sum degenerates the mixture into a single Gaussian
    with mean sum_i w_i mu_i and variance sum_i w_i sigma_i^2; sampling that
    Gaussian directly keeps the whole baseline differentiable end-to-end,
    including the routing weights.
    """
    n, k, a = out.batch, out.k, out.act_dim
    w3 = ad.reshape(out.w, (n, k, 1))
    mu_c = ad.tsum(ad.mul(w3, out.mu), axis=1)                      # (N, A)
    var_c = ad.tsum(ad.mul(w3, ad.square(out.sigma)), axis=1)
    sigma_c = ad.sqrt(var_c)
    raw = ad.add(mu_c, ad.mul(sigma_c, rng.standard_normal((n, a))))
    z = ad.div(ad.sub(raw, mu_c), sigma_c)
    per_dim = ad.sub(ad.mul(ad.square(z), -0.5),
                     ad.add(ad.mul(ad.log(var_c), 0.5), 0.5 * np.log(2.0 * np.pi)))
    own = ad.tsum(per_dim, axis=-1)
    if squash:
        own = ad.sub(own, tanh_log_det(raw))
        action = ad.tanh(raw)
    else:
        action = raw
    return GatingSample(action=action, pre_squash=raw, mu=mu_c, sigma=sigma_c,
                        own_log_prob=own)
