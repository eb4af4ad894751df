"""Losses for the primitive parameters: update-all and update-max.

Both losses consume one reparameterized action per primitive (so gradients
flow into the Gaussian heads through the sample pathway) together with the
critic's score of each action.  In entropy-regularized training each score is
augmented to Q + alpha * H with H the negative per-primitive log-density.

bpa descends the negated sum over primitives, pulling every primitive toward
higher-value actions; bpm descends the negated maximum, so exactly one
primitive receives gradient per sample, which keeps the primitives from
collapsing onto each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

__all__ = ["PrimitiveLossSpec", "primitive_loss", "score_function_form_check"]

_MODES = ("bpa", "bpm")


@dataclass(frozen=True)
class PrimitiveLossSpec:
    """Inputs for one primitive update step.

    q_values and log_probs have shape (N, K): the critic score and own
    log-density of the i-th primitive's sampled action.  With alpha = 0 the
    entropy term drops out (the on-policy trainer's case).
    """

    mode: str
    alpha: float
    q_values: Tensor   # (N, K), differentiable through the sampled actions
    log_probs: Tensor  # (N, K), own log pi_i(a^i | s)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"primitive loss mode must be one of {_MODES}, "
                              f"got {self.mode!r}")
        if self.alpha < 0.0:
            raise ConfigError(f"entropy temperature must be >= 0, got {self.alpha}")


def primitive_loss(spec: PrimitiveLossSpec) -> Tensor:
    """Batch-mean primitive loss: -sum_i or -max_i of (Q + alpha * H)_i.

    The max picks one primitive per sample (ties to the lowest index), so on
    the tape only that primitive's parameters lie on the gradient path.
    """
    scored = spec.q_values
    if spec.alpha != 0.0:
        entropy = ad.neg(spec.log_probs)
        scored = ad.add(scored, ad.mul(entropy, spec.alpha))
    if spec.mode == "bpa":
        per_sample = ad.tsum(scored, axis=-1)
    else:
        per_sample = ad.tmax(scored, axis=-1)
    return ad.neg(ad.tmean(per_sample))


def score_function_form_check(mu, sigma, q_fn, n_samples, rng, h=1e-6):
    """Compare the two gradient forms of the expected-value objective.

    For a 1-D Gaussian primitive N(mu, sigma^2) and a critic a -> Q(a), the
    loss -E[Q] admits a pathwise gradient (through a = mu + sigma * eps) and a
    score-function gradient (-Q * d log pi / d mu).  Both estimate the same
    quantity; this returns their Monte Carlo means, standard errors, and
    whether they agree within three combined standard errors.  Kept as a
    diagnostic oracle; training always uses the pathwise form.
    """
    eps = rng.standard_normal(n_samples)
    a = mu + sigma * eps
    dq_da = (q_fn(a + h) - q_fn(a - h)) / (2.0 * h)
    pathwise = -dq_da
    score = -q_fn(a) * (a - mu) / sigma**2
    pw_mean, pw_se = pathwise.mean(), pathwise.std(ddof=1) / np.sqrt(n_samples)
    sc_mean, sc_se = score.mean(), score.std(ddof=1) / np.sqrt(n_samples)
    combined_se = float(np.hypot(pw_se, sc_se))
    return {
        "pathwise_mean": float(pw_mean), "pathwise_se": float(pw_se),
        "score_mean": float(sc_mean), "score_se": float(sc_se),
        "combined_se": combined_se,
        "agree": bool(abs(pw_mean - sc_mean) <= 3.0 * max(combined_se, 1e-12)),
    }
