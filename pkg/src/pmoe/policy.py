"""Gaussian mixture policy: routing weights plus per-primitive Gaussian heads.

A state is encoded once by a shared relu trunk.  A single-layer routing head
turns the features into K softmax weights; two single-layer heads emit the
K x act_dim means and log-stds of the primitives.  Actions are drawn
ancestrally (component from Categorical(w), then the component's Gaussian) and
densities are exact mixture densities via logsumexp over all components.

Routing weights are trained by a separate estimator with its own loss, so the
trunk features are detached before the routing head: the routing parameter set
is exactly the head's single layer, and routing gradients can never reach the
trunk shared with the primitive heads.

With squashing enabled, actions live in (-1, 1) via tanh and densities carry
the change-of-variables term, computed from the pre-squash point u with the
overflow-free identity log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, TrainingError

__all__ = ["MixtureOutput", "SampledAction", "MixturePolicy", "SquashedGaussianPolicy"]

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))


@dataclass(frozen=True)
class MixtureOutput:
    """One forward pass: routing weights and per-primitive Gaussian parameters."""

    w: Tensor          # (N, K) simplex rows
    logits: Tensor     # (N, K) pre-softmax routing scores
    mu: Tensor         # (N, K, A)
    sigma: Tensor      # (N, K, A), clamped positive
    log_sigma: Tensor  # (N, K, A)

    @property
    def batch(self):
        return self.w.shape[0]

    @property
    def k(self):
        return self.w.shape[1]

    @property
    def act_dim(self):
        return self.mu.shape[2]

    def detach_weights(self) -> "MixtureOutput":
        """Same mixture with routing weights treated as constants."""
        return replace(self, w=ad.detach(self.w), logits=ad.detach(self.logits))


@dataclass(frozen=True)
class SampledAction:
    """An ancestral draw plus the densities the trainers need."""

    action: np.ndarray                  # (N, A)
    pre_squash: np.ndarray              # (N, A)
    component: np.ndarray               # (N,) int
    log_prob_mixture: np.ndarray        # (N,)
    per_primitive_log_prob: np.ndarray  # (N, K), density of each primitive at action


def diag_gaussian_log_prob(u, mu, sigma, log_sigma) -> Tensor:
    """log N(u; mu, diag sigma^2), summed over the trailing action axis."""
    z = ad.div(ad.sub(u, mu), sigma)
    per_dim = ad.sub(ad.mul(ad.square(z), -0.5), ad.add(log_sigma, 0.5 * _LOG_2PI))
    return ad.tsum(per_dim, axis=-1)


def tanh_log_det(u) -> Tensor:
    """Sum over action dims of log(1 - tanh(u)^2), stable for large |u|."""
    inner = ad.sub(ad.sub(_LOG_2, u), ad.softplus(ad.mul(u, -2.0)))
    return ad.tsum(ad.mul(inner, 2.0), axis=-1)


def _mixture_log_prob_pre_squash(out: MixtureOutput, u) -> Tensor:
    """logsumexp_i [log w_i + log N(u; mu_i, sigma_i)] for u of shape (N, A)."""
    u3 = ad.reshape(u, (-1, 1, out.act_dim))
    per_comp = diag_gaussian_log_prob(u3, out.mu, out.sigma, out.log_sigma)  # (N, K)
    return ad.logsumexp(ad.add(ad.log(out.w), per_comp), axis=1)


def categorical_rows(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (N, K) probability matrix."""
    cum = np.cumsum(w, axis=1)
    u = rng.random((w.shape[0], 1))
    return np.minimum((u > cum).sum(axis=1), w.shape[1] - 1)


class MixturePolicy:
    """Parameter container and operations for the K-primitive mixture policy."""

    def __init__(self, obs_dim, act_dim, k, hidden=(256, 256), seed=0,
                 squash=True, name="actor", init_spread=0.3):
        if k < 1:
            raise ConfigError(f"primitive count must be >= 1, got {k}")
        if not hidden:
            raise ConfigError("need at least one hidden layer for the trunk")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.k = k
        self.squash = squash
        self.name = name
        feat = hidden[-1]
        sizes = [obs_dim, *hidden]
        self.trunk = ad.Mlp.build(sizes, ["relu"] * len(hidden),
                                  ad.init_rng(seed, f"{name}.trunk"),
                                  name=f"{name}.trunk")
        self.routing = ad.Mlp.build([feat, k], ["identity"],
                                    ad.init_rng(seed, f"{name}.routing"),
                                    name=f"{name}.routing")
        self.mu_head = ad.Mlp.build([feat, k * act_dim], ["identity"],
                                    ad.init_rng(seed, f"{name}.mu"),
                                    name=f"{name}.mu")
        self.log_std_head = ad.Mlp.build([feat, k * act_dim], ["identity"],
                                         ad.init_rng(seed, f"{name}.logstd"),
                                         name=f"{name}.logstd")
        if k > 1 and init_spread > 0.0:
            # Near-identical components are a stationary point of any mixture
            # fit; stagger the mean-head biases so the primitives start apart,
            # and zero the head weights so the stagger is the exact start.
            offsets = init_spread * (2.0 * np.arange(k) / (k - 1) - 1.0)
            self.mu_head.layers[-1][0][:] = 0.0
            self.mu_head.layers[-1][1][:] += np.repeat(offsets, act_dim)

    # -- parameter groups ---------------------------------------------------

    def routing_arrays(self) -> dict:
        """The routing parameter set: exactly the single softmax layer."""
        return self.routing.arrays()

    def primitive_arrays(self) -> dict:
        """The primitive parameter set: trunk plus both Gaussian heads."""
        return {**self.trunk.arrays(), **self.mu_head.arrays(),
                **self.log_std_head.arrays()}

    def arrays(self) -> dict:
        return {**self.routing_arrays(), **self.primitive_arrays()}

    def load_arrays(self, arrays: dict):
        for net in (self.trunk, self.routing, self.mu_head, self.log_std_head):
            net.load_arrays(arrays)

    # -- forward ------------------------------------------------------------

    def mixture_forward(self, state, tape) -> MixtureOutput:
        """Encode states (N, obs_dim) into routing weights and Gaussian heads."""
        state = np.atleast_2d(np.asarray(state, dtype=np.float64))
        n = state.shape[0]
        h = ad.forward(self.trunk, state, tape)
        logits = ad.forward(self.routing, ad.detach(h), tape)
        w = ad.softmax(logits, axis=-1)
        mu = ad.reshape(ad.forward(self.mu_head, h, tape), (n, self.k, self.act_dim))
        log_sigma = ad.clip(
            ad.reshape(ad.forward(self.log_std_head, h, tape),
                       (n, self.k, self.act_dim)),
            LOG_STD_MIN, LOG_STD_MAX)
        sigma = ad.exp(log_sigma)
        if not (np.all(np.isfinite(logits.data)) and np.all(np.isfinite(mu.data))
                and np.all(np.isfinite(sigma.data))):
            raise TrainingError("non-finite policy activations",
                                {"net": self.name})
        return MixtureOutput(w=w, logits=logits, mu=mu, sigma=sigma,
                             log_sigma=log_sigma)

    # -- sampling and densities ----------------------------------------------

    def sample(self, out: MixtureOutput, rng: np.random.Generator,
               squash=None) -> SampledAction:
        """Ancestral draw: component ~ Categorical(w), action ~ its Gaussian.

        The K=1 case skips the categorical draw entirely, so the random stream
        it consumes is identical to a plain Gaussian policy's.
        """
        squash = self.squash if squash is None else squash
        n, k, a = out.batch, out.k, out.act_dim
        if k == 1:
            comp = np.zeros(n, dtype=np.int64)
        else:
            comp = categorical_rows(out.w.data, rng)
        rows = np.arange(n)
        mu = out.mu.data[rows, comp]
        sigma = out.sigma.data[rows, comp]
        u = mu + sigma * rng.standard_normal((n, a))
        return self._finish_sample(out, u, comp, squash)

    def _finish_sample(self, out, u, comp, squash) -> SampledAction:
        u3 = u.reshape(-1, 1, out.act_dim)
        per_comp = diag_gaussian_log_prob(
            ad.constant(u3), ad.detach(out.mu), ad.detach(out.sigma),
            ad.detach(out.log_sigma)).data
        log_w = np.log(np.maximum(out.w.data, 1e-300))
        mix = ad.logsumexp(ad.constant(log_w + per_comp), axis=1).data
        action = u
        if squash:
            corr = tanh_log_det(ad.constant(u)).data
            mix = mix - corr
            per_comp = per_comp - corr[:, None]
            action = np.tanh(u)
        return SampledAction(action=action, pre_squash=u, component=comp,
                             log_prob_mixture=mix,
                             per_primitive_log_prob=per_comp)

    def log_prob(self, out: MixtureOutput, action, squash=None) -> Tensor:
        """Exact mixture log-density of given actions, differentiable w.r.t. params.

        With squashing the density lives on (-1, 1)^A; actions on or outside
        the boundary are out of the distribution's support.
        """
        squash = self.squash if squash is None else squash
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        if not squash:
            return _mixture_log_prob_pre_squash(out, action)
        if np.any(np.abs(action) >= 1.0):
            raise DomainError("squashed density requires |action| < 1 per dimension")
        u = np.arctanh(action)
        lp = _mixture_log_prob_pre_squash(out, u)
        return ad.sub(lp, tanh_log_det(ad.constant(u)))

    def per_primitive_samples(self, out: MixtureOutput, rng: np.random.Generator,
                              squash=None):
        """One reparameterized draw from every primitive.

        Returns (actions, own_log_prob): actions is a (N, K, A) tensor built
        from mu + sigma * eps with eps constant, so gradients flow into the
        primitive parameters; own_log_prob[n, i] = log pi_i(a^i | s), the
        negative of the per-primitive entropy term.
        """
        squash = self.squash if squash is None else squash
        n, k, a = out.batch, out.k, out.act_dim
        eps = rng.standard_normal((n, k, a))
        raw = ad.add(out.mu, ad.mul(out.sigma, eps))
        own = diag_gaussian_log_prob(raw, out.mu, out.sigma, out.log_sigma)  # (N, K)
        if squash:
            own = ad.sub(own, tanh_log_det(raw))
            actions = ad.tanh(raw)
        else:
            actions = raw
        return actions, own


@dataclass(frozen=True)
class GaussianOutput:
    """Forward pass of the plain single-Gaussian actor."""

    mu: Tensor         # (N, A)
    sigma: Tensor      # (N, A)
    log_sigma: Tensor  # (N, A)

    @property
    def batch(self):
        return self.mu.shape[0]


class SquashedGaussianPolicy:
    """Reference single-Gaussian actor, written without any mixture machinery.

    Network names match the mixture policy's trunk and Gaussian heads, so this
    policy and a one-primitive mixture built from the same seed start from
    identical parameters and consume identical random streams.  Keeping the
    forward, sampling and density code separate from the mixture path makes
    agreement between the two a genuine cross-check rather than a tautology.
    """

    def __init__(self, obs_dim, act_dim, hidden=(256, 256), seed=0,
                 squash=True, name="actor"):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.squash = squash
        self.name = name
        feat = hidden[-1]
        self.trunk = ad.Mlp.build([obs_dim, *hidden], ["relu"] * len(hidden),
                                  ad.init_rng(seed, f"{name}.trunk"),
                                  name=f"{name}.trunk")
        self.mu_head = ad.Mlp.build([feat, act_dim], ["identity"],
                                    ad.init_rng(seed, f"{name}.mu"),
                                    name=f"{name}.mu")
        self.log_std_head = ad.Mlp.build([feat, act_dim], ["identity"],
                                         ad.init_rng(seed, f"{name}.logstd"),
                                         name=f"{name}.logstd")

    def arrays(self) -> dict:
        return {**self.trunk.arrays(), **self.mu_head.arrays(),
                **self.log_std_head.arrays()}

    def load_arrays(self, arrays: dict):
        for net in (self.trunk, self.mu_head, self.log_std_head):
            net.load_arrays(arrays)

    def gaussian_forward(self, state, tape) -> GaussianOutput:
        state = np.atleast_2d(np.asarray(state, dtype=np.float64))
        h = ad.forward(self.trunk, state, tape)
        mu = ad.forward(self.mu_head, h, tape)
        log_sigma = ad.clip(ad.forward(self.log_std_head, h, tape),
                            LOG_STD_MIN, LOG_STD_MAX)
        sigma = ad.exp(log_sigma)
        if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(sigma.data))):
            raise TrainingError("non-finite policy activations", {"net": self.name})
        return GaussianOutput(mu=mu, sigma=sigma, log_sigma=log_sigma)

    def sample(self, out: GaussianOutput, rng: np.random.Generator,
               squash=None) -> SampledAction:
        squash = self.squash if squash is None else squash
        n = out.batch
        u = out.mu.data + out.sigma.data * rng.standard_normal((n, self.act_dim))
        lp = diag_gaussian_log_prob(ad.constant(u), ad.detach(out.mu),
                                    ad.detach(out.sigma),
                                    ad.detach(out.log_sigma)).data
        action = u
        if squash:
            lp = lp - tanh_log_det(ad.constant(u)).data
            action = np.tanh(u)
        return SampledAction(action=action, pre_squash=u,
                             component=np.zeros(n, dtype=np.int64),
                             log_prob_mixture=lp,
                             per_primitive_log_prob=lp[:, None])

    def log_prob(self, out: GaussianOutput, action, squash=None) -> Tensor:
        squash = self.squash if squash is None else squash
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        if not squash:
            return diag_gaussian_log_prob(action, out.mu, out.sigma, out.log_sigma)
        if np.any(np.abs(action) >= 1.0):
            raise DomainError("squashed density requires |action| < 1 per dimension")
        u = np.arctanh(action)
        lp = diag_gaussian_log_prob(ad.constant(u), out.mu, out.sigma, out.log_sigma)
        return ad.sub(lp, tanh_log_det(ad.constant(u)))

    def reparam_sample(self, out: GaussianOutput, rng: np.random.Generator):
        """One pathwise draw: (N, A) action tensor and its own log-prob tensor."""
        squash = self.squash
        eps = rng.standard_normal((out.batch, self.act_dim))
        raw = ad.add(out.mu, ad.mul(out.sigma, eps))
        own = diag_gaussian_log_prob(raw, out.mu, out.sigma, out.log_sigma)
        if squash:
            own = ad.sub(own, tanh_log_det(raw))
            return ad.tanh(raw), own
        return raw, own
