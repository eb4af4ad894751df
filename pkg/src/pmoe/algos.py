"""Off-policy and on-policy trainers for mixture policies.

One shared environment/update loop drives five actor-side variants: the
frequency-routed mixture, a plain unimodal Gaussian reference, and the
gating / Gumbel-relaxation / score-ratio router baselines.  The variants
differ only in how the actor update is built; critics, replay, target
updates, and logging are common plumbing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Mlp, Tape, adam_step, backward, grads_by_name
from .config import RunConfig, save_config
from .critic import TwinCritic, ValueHead, bellman_target, critic_loss, gae_advantages
from .envs import make_env
from .errors import ConfigError, TrainingError
from .metrics import MetricLog, write_csv
from .policy import (MixturePolicy, SquashedGaussianPolicy, categorical_rows,
                     diag_gaussian_log_prob, tanh_log_det)
from .primitives import PrimitiveLossSpec, primitive_loss
from .replay import ReplayBuffer
from .routers import (compute_v, freq_loss, gating_compose,
                      gumbel_router_sample, reinforce_router_loss)


@dataclass(frozen=True)
class EvalResult:
    """Aggregate of one evaluation round."""

    mean_return: float
    std_return: float
    success_rate: float
    routing_entropy: float
    w_mean: tuple
    returns: tuple


@dataclass
class TrainResult:
    """Everything a finished run hands back to the harness."""

    config: RunConfig
    actor: object
    critic: object
    heads: dict
    log: MetricLog
    positions: object
    env_steps: int
    updates: int
    final_eval: object


# ---------------------------------------------------------------------------
# Actor variants.  Each exposes: policy, action_scale, act(), sample_eager(),
# weights_for(), optimizers(), update().  Policy-space actions live in (-1, 1)
# for the squashed off-policy family and are scaled by action_scale at the
# environment boundary.
# ---------------------------------------------------------------------------


class MixtureSacActor:
    """Frequency-routed Gaussian mixture actor."""

    def __init__(self, cfg, obs_dim, act_dim, action_bound):
        self.policy = MixturePolicy(obs_dim, act_dim, cfg.k,
                                    hidden=tuple(cfg.hidden_actor),
                                    seed=cfg.seed, squash=True,
                                    init_spread=cfg.init_spread)
        self.alpha = cfg.alpha
        self.mode = cfg.mode
        self.k = cfg.k
        self.action_scale = float(action_bound)

    def optimizers(self, cfg) -> dict:
        return {"theta": AdamState(self.policy.routing_arrays(), cfg.lr_routing),
                "psi": AdamState(self.policy.primitive_arrays(), cfg.lr_primitive)}

    def act(self, obs, rng) -> np.ndarray:
        out = self.policy.mixture_forward(obs[None, :], None)
        return self.policy.sample(out, rng).action[0]

    def sample_eager(self, states, rng):
        out = self.policy.mixture_forward(states, None)
        drawn = self.policy.sample(out, rng)
        return drawn.action, drawn.log_prob_mixture

    def weights_for(self, states) -> np.ndarray:
        return self.policy.mixture_forward(states, None).w.data

    def primitive_means(self, states) -> np.ndarray:
        """Per-primitive mean actions in policy units, shape (N, K, A)."""
        mu = self.policy.mixture_forward(states, None).mu.data
        return np.tanh(mu) if self.policy.squash else mu

    def export_sample(self, obs, rng):
        out = self.policy.mixture_forward(obs[None, :], None)
        drawn = self.policy.sample(out, rng)
        return drawn.action[0], int(drawn.component[0])

    def update(self, states, critic, rng, opts) -> dict:
        tape = Tape()
        out = self.policy.mixture_forward(states, tape)
        actions, own_lp = self.policy.per_primitive_samples(out, rng)
        n, k, a = actions.shape
        flat = ad.reshape(actions, (n * k, a))
        q = ad.reshape(critic.q_min(np.repeat(states, k, axis=0), flat, tape,
                                    frozen=True), (n, k))
        indicator = compute_v(q)
        l_freq = freq_loss(out.w, indicator)
        l_pri = primitive_loss(PrimitiveLossSpec(mode=self.mode, alpha=self.alpha,
                                                 q_values=q, log_probs=own_lp))
        grads = grads_by_name(tape, backward(tape, ad.add(l_freq, l_pri)),
                              self.policy.arrays())
        adam_step(self.policy.routing_arrays(), grads, opts["theta"])
        adam_step(self.policy.primitive_arrays(), grads, opts["psi"])
        return {"loss_routing": float(l_freq.data),
                "loss_primitive": float(l_pri.data)}


class UnimodalSacActor:
    """Reference single-Gaussian actor; no router anywhere."""

    def __init__(self, cfg, obs_dim, act_dim, action_bound):
        self.policy = SquashedGaussianPolicy(obs_dim, act_dim,
                                             hidden=tuple(cfg.hidden_actor),
                                             seed=cfg.seed, squash=True)
        self.alpha = cfg.alpha
        self.k = 1
        self.action_scale = float(action_bound)

    def optimizers(self, cfg) -> dict:
        return {"psi": AdamState(self.policy.arrays(), cfg.lr_primitive)}

    def act(self, obs, rng) -> np.ndarray:
        out = self.policy.gaussian_forward(obs[None, :], None)
        return self.policy.sample(out, rng).action[0]

    def sample_eager(self, states, rng):
        out = self.policy.gaussian_forward(states, None)
        drawn = self.policy.sample(out, rng)
        return drawn.action, drawn.log_prob_mixture

    def weights_for(self, states) -> np.ndarray:
        return np.ones((np.atleast_2d(states).shape[0], 1))

    def primitive_means(self, states) -> np.ndarray:
        mu = self.policy.gaussian_forward(states, None).mu.data
        return np.tanh(mu)[:, None, :]

    def export_sample(self, obs, rng):
        out = self.policy.gaussian_forward(obs[None, :], None)
        return self.policy.sample(out, rng).action[0], 0

    def update(self, states, critic, rng, opts) -> dict:
        tape = Tape()
        out = self.policy.gaussian_forward(states, tape)
        action, own_lp = self.policy.reparam_sample(out, rng)
        q = critic.q_min(states, action, tape, frozen=True)
        scored = ad.add(q, ad.mul(ad.neg(own_lp), self.alpha))
        loss = ad.neg(ad.tmean(scored))
        grads = grads_by_name(tape, backward(tape, loss), self.policy.arrays())
        adam_step(self.policy.arrays(), grads, opts["psi"])
        return {"loss_routing": 0.0, "loss_primitive": float(loss.data)}


class GatingSacActor(MixtureSacActor):
    """Weighted-action composition: one joint pathwise loss trains both
    the routing and primitive parameters."""

    def act(self, obs, rng) -> np.ndarray:
        out = self.policy.mixture_forward(obs[None, :], None)
        return gating_compose(out, rng, squash=True).action.data[0]

    def sample_eager(self, states, rng):
        out = self.policy.mixture_forward(states, None)
        drawn = gating_compose(out, rng, squash=True)
        return drawn.action.data, drawn.own_log_prob.data

    def export_sample(self, obs, rng):
        out = self.policy.mixture_forward(obs[None, :], None)
        drawn = gating_compose(out, rng, squash=True)
        return drawn.action.data[0], int(np.argmax(out.w.data[0]))

    def update(self, states, critic, rng, opts) -> dict:
        tape = Tape()
        out = self.policy.mixture_forward(states, tape)
        drawn = gating_compose(out, rng, squash=True)
        q = critic.q_min(states, drawn.action, tape, frozen=True)
        scored = ad.add(q, ad.mul(ad.neg(drawn.own_log_prob), self.alpha))
        loss = ad.neg(ad.tmean(scored))
        grads = grads_by_name(tape, backward(tape, loss), self.policy.arrays())
        adam_step(self.policy.routing_arrays(), grads, opts["theta"])
        adam_step(self.policy.primitive_arrays(), grads, opts["psi"])
        return {"loss_routing": None, "loss_primitive": float(loss.data)}


class GumbelSacActor(MixtureSacActor):
    """Relaxed-categorical router: actions are the Gumbel-softmax-weighted
    sum of per-primitive draws, so routing learns pathwise through the mix."""

    def __init__(self, cfg, obs_dim, act_dim, action_bound):
        super().__init__(cfg, obs_dim, act_dim, action_bound)
        self.temperature = cfg.gumbel_temperature

    def update(self, states, critic, rng, opts) -> dict:
        tape = Tape()
        out = self.policy.mixture_forward(states, tape)
        actions, own_lp = self.policy.per_primitive_samples(out, rng)
        n, k, _ = actions.shape
        soft_w = gumbel_router_sample(out.logits, self.temperature, rng)
        mixed = ad.tsum(ad.mul(ad.reshape(soft_w, (n, k, 1)), actions), axis=1)
        q = critic.q_min(states, mixed, tape, frozen=True)
        entropy = ad.neg(ad.tsum(ad.mul(soft_w, own_lp), axis=-1))
        loss = ad.neg(ad.tmean(ad.add(q, ad.mul(entropy, self.alpha))))
        grads = grads_by_name(tape, backward(tape, loss), self.policy.arrays())
        adam_step(self.policy.routing_arrays(), grads, opts["theta"])
        adam_step(self.policy.primitive_arrays(), grads, opts["psi"])
        return {"loss_routing": None, "loss_primitive": float(loss.data)}


class ReinforceSacActor(MixtureSacActor):
    """Score-ratio router: primitives learn pathwise through the selected
    component; routing learns from a baselined score-function term."""

    def update(self, states, critic, rng, opts) -> dict:
        tape = Tape()
        out = self.policy.mixture_forward(states, tape)
        n, k, a = out.mu.shape
        comp = categorical_rows(out.w.data, rng)
        onehot = np.eye(k)[comp][:, :, None]            # (N, K, 1) constant
        eps = rng.standard_normal((n, a))
        mu_sel = ad.tsum(ad.mul(out.mu, onehot), axis=1)
        sigma_sel = ad.tsum(ad.mul(out.sigma, onehot), axis=1)
        logsig_sel = ad.tsum(ad.mul(out.log_sigma, onehot), axis=1)
        raw = ad.add(mu_sel, ad.mul(sigma_sel, eps))
        own_lp = ad.sub(diag_gaussian_log_prob(raw, mu_sel, sigma_sel, logsig_sel),
                        tanh_log_det(raw))
        q = critic.q_min(states, ad.tanh(raw), tape, frozen=True)
        scored = ad.add(q, ad.mul(ad.neg(own_lp), self.alpha))
        l_psi = ad.neg(ad.tmean(scored))
        signal = q.data - float(np.mean(q.data))        # batch-mean baseline
        l_theta = reinforce_router_loss(out.w, comp, signal)
        grads = grads_by_name(tape, backward(tape, ad.add(l_theta, l_psi)),
                              self.policy.arrays())
        adam_step(self.policy.routing_arrays(), grads, opts["theta"])
        adam_step(self.policy.primitive_arrays(), grads, opts["psi"])
        return {"loss_routing": float(l_theta.data),
                "loss_primitive": float(l_psi.data)}


class PpoActor:
    """Unsquashed mixture actor for the on-policy trainer; the environment
    clips actions, so policy units are environment units."""

    def __init__(self, cfg, obs_dim, act_dim, action_bound):
        self.policy = MixturePolicy(obs_dim, act_dim, cfg.k,
                                    hidden=tuple(cfg.hidden_actor),
                                    seed=cfg.seed, squash=False,
                                    init_spread=cfg.init_spread)
        self.k = cfg.k
        self.mode = cfg.mode
        self.action_scale = 1.0

    def act(self, obs, rng) -> np.ndarray:
        out = self.policy.mixture_forward(obs[None, :], None)
        return self.policy.sample(out, rng).action[0]

    def weights_for(self, states) -> np.ndarray:
        return self.policy.mixture_forward(states, None).w.data

    def primitive_means(self, states) -> np.ndarray:
        return self.policy.mixture_forward(states, None).mu.data

    def export_sample(self, obs, rng):
        out = self.policy.mixture_forward(obs[None, :], None)
        drawn = self.policy.sample(out, rng)
        return drawn.action[0], int(drawn.component[0])


_SAC_ACTORS = {
    "pmoe-sac": MixtureSacActor,
    "sac": UnimodalSacActor,
    "gating-sac": GatingSacActor,
    "gumbel-sac": GumbelSacActor,
    "reinforce-sac": ReinforceSacActor,
}


def make_actor(cfg, obs_dim, act_dim, action_bound):
    """Instantiate the actor variant named by the algorithm tag."""
    if cfg.algo == "pmoe-ppo":
        return PpoActor(cfg, obs_dim, act_dim, action_bound)
    if cfg.algo in _SAC_ACTORS:
        return _SAC_ACTORS[cfg.algo](cfg, obs_dim, act_dim, action_bound)
    raise ConfigError(f"unknown algorithm {cfg.algo!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(actor, env, episodes, obs_noise_sigma=0.0, seed=0) -> EvalResult:
    """Run sampled-action episodes; the policy sees noised observations.

    The noise vectors are drawn for every step and scaled by sigma, so two
    calls with different sigmas share layouts and noise directions (common
    random numbers); the environment itself always sees the true state.
    """
    action_rng = ad.init_rng(seed, "eval_action")
    noise_rng = ad.init_rng(seed, "eval_noise")
    returns, successes, seen = [], 0, []
    for _ in range(int(episodes)):
        obs = env.reset()
        total, done = 0.0, False
        while not done:
            noisy = obs + obs_noise_sigma * noise_rng.standard_normal(obs.shape[0])
            seen.append(noisy)
            step = env.step(actor.act(noisy, action_rng) * actor.action_scale)
            total += step.reward
            obs, done = step.observation, step.done
            if done and step.info.get("reached", False):
                successes += 1
        returns.append(total)
    weights = actor.weights_for(np.stack(seen))
    entropy = float(np.mean(
        -np.sum(weights * np.log(np.maximum(weights, 1e-300)), axis=1)))
    return EvalResult(mean_return=float(np.mean(returns)),
                      std_return=float(np.std(returns)),
                      success_rate=successes / float(episodes),
                      routing_entropy=entropy,
                      w_mean=tuple(float(x) for x in weights.mean(axis=0)),
                      returns=tuple(float(r) for r in returns))


# ---------------------------------------------------------------------------
# Shared harness pieces
# ---------------------------------------------------------------------------


def _emit(callbacks, event):
    for callback in callbacks:
        callback(dict(event))


def _check_finite(losses, step):
    bad = {k: v for k, v in losses.items()
           if v is not None and not np.isfinite(v)}
    if bad:
        raise TrainingError("non-finite loss", {"step": step, **bad})


def _build_env(config, seed_stream):
    return make_env(config.env, n_obstacles=config.n_obstacles,
                    horizon=config.horizon, fixed_layout=config.fixed_layout,
                    seed=int(seed_stream.integers(2 ** 31)))


class _RunState:
    """Logging, evaluation, and checkpoint plumbing shared by both loops."""

    def __init__(self, config, actor, arrays_fn, callbacks):
        self.config = config
        self.actor = actor
        self.arrays_fn = arrays_fn
        self.callbacks = callbacks
        self.eval_env_stream = ad.init_rng(config.trainer.seed, "eval_env")
        self.eval_seed_stream = ad.init_rng(config.trainer.seed, "eval_seed")
        path = None
        if config.out_dir:
            os.makedirs(config.out_dir, exist_ok=True)
            save_config(config, os.path.join(config.out_dir, "config.cfg"))
            path = os.path.join(config.out_dir, "metrics.jsonl")
        meta = {"algo": config.trainer.algo, "k": config.trainer.k,
                "seed": config.trainer.seed, "env": config.env}
        self.log = MetricLog(path, meta=meta)
        self.episode = 0
        self.last_eval_step = None
        self.final_eval = None
        self.positions = []

    def log_episode(self, step, updates, ep_return, ep_length):
        self.episode += 1
        if self.episode % self.config.episode_log_interval == 0:
            self.log.log("episode", step=step, updates=updates,
                         episode=self.episode, episode_return=ep_return,
                         episode_length=ep_length)
        _emit(self.callbacks, {"event": "episode", "step": step,
                               "episode": self.episode,
                               "episode_return": ep_return})

    def run_eval(self, step, updates):
        env = _build_env(self.config, self.eval_env_stream)
        seed = int(self.eval_seed_stream.integers(2 ** 31))
        result = evaluate(self.actor, env, self.config.eval_episodes,
                          obs_noise_sigma=0.0, seed=seed)
        self.last_eval_step = step
        self.final_eval = result
        self.log.log("eval", step=step, updates=updates,
                     eval_return_mean=result.mean_return,
                     eval_return_std=result.std_return,
                     success_rate=result.success_rate,
                     routing_entropy=result.routing_entropy,
                     w_mean=list(result.w_mean))
        _emit(self.callbacks, {"event": "eval", "step": step, "result": result})

    def maybe_eval(self, step, updates):
        if self.config.eval_interval and step % self.config.eval_interval == 0:
            self.run_eval(step, updates)

    def checkpoint(self, step, force=False):
        interval = self.config.checkpoint_interval
        due = force or (interval and step % interval == 0)
        if self.config.out_dir and due:
            path = os.path.join(self.config.out_dir, f"checkpoint_{step}.bin")
            ad.save_arrays(path, self.arrays_fn())

    def finish(self, step, updates):
        if self.last_eval_step != step and self.config.eval_interval:
            self.run_eval(step, updates)
        self.checkpoint(step, force=True)
        if (self.config.out_dir and self.config.export_trajectories
                and self.positions):
            rows = [(i + 1, float(p[0]), float(p[1]))
                    for i, p in enumerate(self.positions)]
            write_csv(os.path.join(self.config.out_dir, "trajectories.csv"),
                      ("step", "x", "y"), rows)
        self.log.close()


# ---------------------------------------------------------------------------
# Off-policy trainer
# ---------------------------------------------------------------------------


def _critic_update(critic, batch, actor, cfg, rng, opt_phi) -> float:
    next_actions, next_lp = actor.sample_eager(batch.next_observations, rng)
    targets = bellman_target(batch.rewards, batch.dones,
                             critic.target_q_min(batch.next_observations,
                                                 next_actions),
                             next_lp, cfg.gamma, cfg.alpha)
    tape = Tape()
    loss = critic_loss(critic, batch.observations, batch.actions, targets, tape)
    grads = grads_by_name(tape, backward(tape, loss), critic.online_arrays())
    adam_step(critic.online_arrays(), grads, opt_phi)
    return float(loss.data)


def train_sac(config: RunConfig, env=None, callbacks=()) -> TrainResult:
    """Interleaved environment/update loop: one gradient step per env step
    after warmup; each update runs router loss, primitive loss, critic loss,
    then the polyak target move."""
    config.validate()
    cfg = config.trainer
    if cfg.algo == "pmoe-ppo":
        raise ConfigError("train_sac cannot run the on-policy algorithm")
    if env is None:
        env = _build_env(config, ad.init_rng(cfg.seed, "env"))
    actor = make_actor(cfg, env.obs_dim, env.act_dim, env.action_bound)
    critic = TwinCritic(env.obs_dim, env.act_dim, hidden=tuple(cfg.hidden_critic),
                        seed=cfg.seed, tau=cfg.tau)
    replay = ReplayBuffer(cfg.replay_capacity, env.obs_dim, env.act_dim,
                          ad.init_rng(cfg.seed, "replay"))
    opts = actor.optimizers(cfg)
    opt_phi = AdamState(critic.online_arrays(), cfg.lr_critic)
    action_rng = ad.init_rng(cfg.seed, "action")
    warmup_rng = ad.init_rng(cfg.seed, "warmup")
    update_rng = ad.init_rng(cfg.seed, "update")

    state = _RunState(config, actor, lambda: {**actor.policy.arrays(),
                                              **critic.arrays()}, callbacks)
    obs = env.reset()
    ep_return, ep_length = 0.0, 0
    updates = 0
    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.warmup_steps:
            action = warmup_rng.uniform(-1.0, 1.0, env.act_dim)
        else:
            action = actor.act(obs, action_rng)
        env_step = env.step(action * actor.action_scale)
        truncated = env_step.info.get("truncated", False)
        replay.add(obs, action, env_step.reward, env_step.observation,
                   env_step.done and not truncated)
        if "position" in env_step.info:
            state.positions.append(env_step.info["position"])
        ep_return += env_step.reward
        ep_length += 1
        obs = env_step.observation
        if env_step.done or ep_length >= cfg.episode_length:
            state.log_episode(step, updates, ep_return, ep_length)
            obs = env.reset()
            ep_return, ep_length = 0.0, 0

        if step > cfg.warmup_steps and len(replay) >= cfg.batch_size:
            batch = replay.sample(cfg.batch_size)
            losses = actor.update(batch.observations, critic, update_rng, opts)
            losses["loss_critic"] = _critic_update(critic, batch, actor, cfg,
                                                   update_rng, opt_phi)
            updates += 1
            if updates % cfg.target_interval == 0:
                critic.polyak()
            _check_finite(losses, step)
            _emit(callbacks, {"event": "update", "step": step,
                              "updates": updates, "losses": dict(losses)})
            if updates % config.loss_interval == 0:
                state.log.log("loss", step=step, updates=updates, **losses)
        state.maybe_eval(step, updates)
        state.checkpoint(step)

    state.finish(cfg.total_steps, updates)
    positions = np.asarray(state.positions) if state.positions else None
    return TrainResult(config=config, actor=actor, critic=critic, heads={},
                       log=state.log, positions=positions,
                       env_steps=cfg.total_steps, updates=updates,
                       final_eval=state.final_eval)


# ---------------------------------------------------------------------------
# On-policy trainer
# ---------------------------------------------------------------------------


def _ppo_minibatch_update(actor, value_head, aux_q, batch, cfg, rng, opts) -> dict:
    states, actions, logp_old, adv, returns = batch
    n, k, act_dim = states.shape[0], actor.k, actions.shape[1]

    tape = Tape()
    out = actor.policy.mixture_forward(states, tape)
    comp_lp = diag_gaussian_log_prob(ad.constant(actions.reshape(n, 1, act_dim)),
                                     out.mu, out.sigma, out.log_sigma)  # (N, K)

    # Best-primitive indicator from the auxiliary Q-head on fresh draws.
    fresh = out.mu.data + out.sigma.data * rng.standard_normal(out.mu.shape)
    q_in = np.concatenate([np.repeat(states, k, axis=0),
                           fresh.reshape(n * k, act_dim)], axis=1)
    q_fresh = ad.forward(aux_q, q_in, None).data.reshape(n, k)
    indicator = compute_v(q_fresh)

    # Only the selected primitive's density stays on the gradient path; the
    # rest enter as constants, so the surrogate value is the full mixture
    # log-density while its gradient is masked per-primitive.
    selected = indicator.v
    masked = ad.add(ad.mul(comp_lp, selected),
                    ad.mul(ad.detach(comp_lp), 1.0 - selected))
    log_w = ad.constant(np.log(np.maximum(out.w.data, 1e-300)))
    logp_new = ad.logsumexp(ad.add(log_w, masked), axis=-1)
    ratio = ad.exp(ad.sub(logp_new, logp_old))
    clipped = ad.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    objective = ad.minimum(ad.mul(ratio, adv), ad.mul(clipped, adv))
    l_surrogate = ad.neg(ad.tmean(objective))
    l_freq = freq_loss(out.w, indicator)
    grads = grads_by_name(tape, backward(tape, ad.add(l_surrogate, l_freq)),
                          actor.policy.arrays())
    adam_step(actor.policy.routing_arrays(), grads, opts["theta"])
    adam_step(actor.policy.primitive_arrays(), grads, opts["psi"])

    tape_v = Tape()
    v_pred = value_head.values(states, tape_v)
    l_value = ad.tmean(ad.square(ad.sub(v_pred, returns)))
    grads_v = grads_by_name(tape_v, backward(tape_v, l_value),
                            value_head.arrays())
    adam_step(value_head.arrays(), grads_v, opts["value"])

    tape_q = Tape()
    q_pred = ad.reshape(ad.forward(aux_q, np.concatenate([states, actions],
                                                         axis=1), tape_q), (n,))
    l_aux = ad.tmean(ad.square(ad.sub(q_pred, returns)))
    grads_q = grads_by_name(tape_q, backward(tape_q, l_aux), aux_q.arrays())
    adam_step(aux_q.arrays(), grads_q, opts["aux"])

    return {"loss_primitive": float(l_surrogate.data),
            "loss_routing": float(l_freq.data),
            "loss_value": float(l_value.data),
            "loss_aux": float(l_aux.data)}


def train_ppo(config: RunConfig, env=None, callbacks=()) -> TrainResult:
    """Rollout / generalized-advantage / clipped-surrogate loop.

    The ratio uses the full mixture log-density of the stored actions with
    routing weights held constant; routing itself is trained by the
    frequency loss against an auxiliary Q-head regressed to the returns.
    """
    config.validate()
    cfg = config.trainer
    if cfg.algo != "pmoe-ppo":
        raise ConfigError("train_ppo requires the on-policy algorithm tag")
    if cfg.total_steps < cfg.episode_length:
        raise ConfigError("total_steps is smaller than one rollout")
    if env is None:
        env = _build_env(config, ad.init_rng(cfg.seed, "env"))
    actor = make_actor(cfg, env.obs_dim, env.act_dim, env.action_bound)
    value_head = ValueHead(env.obs_dim, hidden=tuple(cfg.hidden_critic),
                           seed=cfg.seed)
    sizes = [env.obs_dim + env.act_dim, *cfg.hidden_critic, 1]
    aux_q = Mlp.build(sizes, ["relu"] * len(cfg.hidden_critic) + ["identity"],
                      ad.init_rng(cfg.seed, "auxq"), name="auxq")
    opts = {"theta": AdamState(actor.policy.routing_arrays(), cfg.lr_routing),
            "psi": AdamState(actor.policy.primitive_arrays(), cfg.lr_primitive),
            "value": AdamState(value_head.arrays(), cfg.lr_critic),
            "aux": AdamState(aux_q.arrays(), cfg.lr_critic)}
    action_rng = ad.init_rng(cfg.seed, "action")
    update_rng = ad.init_rng(cfg.seed, "update")

    state = _RunState(config, actor,
                      lambda: {**actor.policy.arrays(), **value_head.arrays(),
                               **aux_q.arrays()}, callbacks)
    horizon = cfg.episode_length
    n_rollouts = cfg.total_steps // horizon
    obs = env.reset()
    ep_return, ep_length = 0.0, 0
    updates, env_steps = 0, 0
    for _ in range(n_rollouts):
        obs_buf = np.zeros((horizon, env.obs_dim))
        act_buf = np.zeros((horizon, env.act_dim))
        rew_buf = np.zeros(horizon)
        done_buf = np.zeros(horizon)
        logp_buf = np.zeros(horizon)
        value_buf = np.zeros(horizon)
        eval_before = env_steps // config.eval_interval if config.eval_interval else 0
        for t in range(horizon):
            out = actor.policy.mixture_forward(obs[None, :], None)
            drawn = actor.policy.sample(out, action_rng)
            obs_buf[t] = obs
            act_buf[t] = drawn.action[0]
            logp_buf[t] = drawn.log_prob_mixture[0]
            value_buf[t] = value_head.values(obs[None, :], None).data[0]
            env_step = env.step(drawn.action[0])
            rew_buf[t] = env_step.reward
            done_buf[t] = float(env_step.done)
            if "position" in env_step.info:
                state.positions.append(env_step.info["position"])
            ep_return += env_step.reward
            ep_length += 1
            env_steps += 1
            obs = env_step.observation
            if env_step.done:
                state.log_episode(env_steps, updates, ep_return, ep_length)
                obs = env.reset()
                ep_return, ep_length = 0.0, 0
        last_value = float(value_head.values(obs[None, :], None).data[0])
        advantages, returns = gae_advantages(rew_buf, value_buf, done_buf,
                                             last_value, cfg.gamma,
                                             cfg.gae_lambda)
        norm_adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        # Pre-update ratio over the whole rollout: exactly 1 by construction.
        out = actor.policy.mixture_forward(obs_buf, None)
        fresh_lp = actor.policy.log_prob(out, act_buf, squash=False).data
        _emit(callbacks, {"event": "rollout", "step": env_steps,
                          "ratio_dev": float(np.max(np.abs(
                              np.exp(fresh_lp - logp_buf) - 1.0)))})

        for _ in range(cfg.ppo_epochs):
            order = update_rng.permutation(horizon)
            for start in range(0, horizon, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                losses = _ppo_minibatch_update(
                    actor, value_head, aux_q,
                    (obs_buf[idx], act_buf[idx], logp_buf[idx],
                     norm_adv[idx], returns[idx]),
                    cfg, update_rng, opts)
                updates += 1
                _check_finite(losses, env_steps)
                _emit(callbacks, {"event": "update", "step": env_steps,
                                  "updates": updates, "losses": dict(losses)})
                if updates % config.loss_interval == 0:
                    state.log.log("loss", step=env_steps, updates=updates,
                                  **losses)
        if config.eval_interval and env_steps // config.eval_interval > eval_before:
            state.run_eval(env_steps, updates)
        state.checkpoint(env_steps)

    state.finish(env_steps, updates)
    positions = np.asarray(state.positions) if state.positions else None
    return TrainResult(config=config, actor=actor, critic=None,
                       heads={"value": value_head, "aux_q": aux_q},
                       log=state.log, positions=positions, env_steps=env_steps,
                       updates=updates, final_eval=state.final_eval)


def train(config: RunConfig, env=None, callbacks=()) -> TrainResult:
    """Dispatch on the algorithm tag."""
    if config.trainer.algo == "pmoe-ppo":
        return train_ppo(config, env=env, callbacks=callbacks)
    return train_sac(config, env=env, callbacks=callbacks)


def load_actor(config: RunConfig, checkpoint_path):
    """Rebuild the actor for a finished run and load its weights."""
    env = _build_env(config, ad.init_rng(config.trainer.seed, "env"))
    actor = make_actor(config.trainer, env.obs_dim, env.act_dim,
                       env.action_bound)
    arrays = ad.load_arrays(checkpoint_path)
    actor.policy.load_arrays({k: v for k, v in arrays.items()
                              if k.startswith("actor.")})
    return actor
