"""Actor-critic training loop around the diffusion policy.

The actor maximizes confidence-weighted critic value of freshly generated
actions minus a denoising-consistency penalty on replayed actions; critics
regress pessimistic bootstrapped targets; target copies of every network
trail their online versions through exponential averaging.

Mode switches (see ``config.MODES``): ``no-confidence`` pins the confidence
weight to one, ``no-consistency`` drops the replay penalty,
``plain-diffusion`` does both, leaving pure value maximization through the
sampler.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionPolicy, NoiseSchedule, confidence
from .errors import DivergenceError
from .nn import Adam, DenseNet, load_checkpoint, save_checkpoint


@dataclass
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Bounded FIFO transition store with uniform sampling.

    Storage grows geometrically up to the configured capacity, so huge
    capacities cost nothing until actually filled.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int,
                 initial: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self._alloc = min(self.capacity, initial)
        self._obs = np.zeros((self._alloc, obs_dim))
        self._act = np.zeros((self._alloc, act_dim))
        self._rew = np.zeros(self._alloc)
        self._next_obs = np.zeros((self._alloc, obs_dim))
        self._term = np.zeros(self._alloc, dtype=bool)
        self.size = 0
        self._head = 0  # next write position once the buffer is full

    def __len__(self) -> int:
        return self.size

    def _grow(self) -> None:
        new_alloc = min(self.capacity, self._alloc * 2)
        for name in ("_obs", "_act", "_rew", "_next_obs", "_term"):
            old = getattr(self, name)
            fresh = np.zeros((new_alloc,) + old.shape[1:], dtype=old.dtype)
            fresh[:self.size] = old[:self.size]
            setattr(self, name, fresh)
        self._alloc = new_alloc

    def push(self, tr: Transition) -> None:
        if self.size == self._alloc and self._alloc < self.capacity:
            self._grow()
        if self.size < self._alloc:
            i = self.size
            self.size += 1
        else:  # full: overwrite the oldest entry
            i = self._head
            self._head = (self._head + 1) % self.capacity
        self._obs[i] = tr.observation
        self._act[i] = tr.action
        self._rew[i] = tr.reward
        self._next_obs[i] = tr.next_observation
        self._term[i] = tr.terminal

    def sample(self, batch_size: int, rng) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self._obs[idx],
            "act": self._act[idx],
            "rew": self._rew[idx],
            "next_obs": self._next_obs[idx],
            "term": self._term[idx],
        }


def td_target_value(reward: float, q1: float, q2: float, discount: float,
                    terminal: bool) -> float:
    """Bootstrapped pessimistic one-step target; terminals drop the bootstrap."""
    if terminal:
        return reward
    return reward + discount * min(q1, q2)


class Trainer:
    """Owns the six networks, optimizers, replay buffer, and update rules."""

    def __init__(self, obs_dim: int, action_dim: int, cfg, rng):
        cfg.validate()
        if cfg.mode == "random":
            raise ValueError("the random baseline does not train; use the harness")
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.rng = rng
        self.mode = cfg.mode
        # effective regularizer strengths per mode
        self.kappa = cfg.confidence_sensitivity
        self.rho = cfg.consistency_weight
        if cfg.mode in ("no-confidence", "plain-diffusion"):
            self.kappa = 0.0
        if cfg.mode in ("no-consistency", "plain-diffusion"):
            self.rho = 0.0

        self.schedule = NoiseSchedule(cfg.denoising_steps, cfg.beta_min, cfg.beta_max)
        denoiser_in = action_dim + cfg.embed_dim + obs_dim
        self.actor_net = DenseNet([denoiser_in, *cfg.actor_hidden, action_dim], rng=rng)
        critic_widths = [obs_dim + action_dim, *cfg.critic_hidden, 1]
        self.critic1 = DenseNet(critic_widths, rng=rng)
        self.critic2 = DenseNet(critic_widths, rng=rng)
        self.target_actor_net = self.actor_net.clone()
        self.target_critic1 = self.critic1.clone()
        self.target_critic2 = self.critic2.clone()

        self.policy = DiffusionPolicy(self.actor_net, self.schedule,
                                      action_dim, obs_dim, cfg.embed_dim)
        self.target_policy = DiffusionPolicy(self.target_actor_net, self.schedule,
                                             action_dim, obs_dim, cfg.embed_dim)

        self.actor_opt = Adam(self.actor_net.param_count, lr=cfg.actor_lr)
        self.critic1_opt = Adam(self.critic1.param_count, lr=cfg.critic_lr)
        self.critic2_opt = Adam(self.critic2.param_count, lr=cfg.critic_lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, obs_dim, action_dim)
        self.optimizer_steps = 0

    # -- update rules ------------------------------------------------------

    def td_targets(self, rewards, next_obs, terminals) -> np.ndarray:
        """Vectorized targets using the target policy's full sampling chain."""
        next_actions, _ = self.target_policy.sample_with_tape(
            next_obs, self.rng, keep_tape=False)
        q_in = np.concatenate([next_obs, next_actions], axis=1)
        q1, _ = self.target_critic1.apply(q_in)
        q2, _ = self.target_critic2.apply(q_in)
        boot = np.minimum(q1[:, 0], q2[:, 0])
        return np.where(terminals, rewards, rewards + self.cfg.discount * boot)

    def critic_update(self, batch) -> float:
        y = self.td_targets(batch["rew"], batch["next_obs"], batch["term"])
        q_in = np.concatenate([batch["obs"], batch["act"]], axis=1)
        n = len(y)
        loss = 0.0
        for net, opt in ((self.critic1, self.critic1_opt),
                         (self.critic2, self.critic2_opt)):
            q, cache = net.apply(q_in)
            resid = q[:, 0] - y
            loss += float(np.mean(resid ** 2))
            grad_out = (2.0 * resid / n)[:, None]
            pgrad, _ = net.backward(grad_out, cache)
            net.set_params(opt.step(net.get_params(), pgrad))
        if not np.isfinite(loss):
            raise DivergenceError("critic loss diverged")
        self.optimizer_steps += 2
        return loss

    def draw_actor_noise(self, batch_size: int) -> dict:
        """All random draws one actor step consumes, fixed up front."""
        n = batch_size
        steps = self.schedule.steps
        return {
            "chain": self.policy.draw_chain_noise(n, self.rng),
            "k_gen": self.rng.integers(1, steps + 1, size=n),
            "eps_gen": self.rng.standard_normal((n, self.action_dim)),
            "k_bc": self.rng.integers(1, steps + 1, size=n),
            "eps_bc": self.rng.standard_normal((n, self.action_dim)),
        }

    def actor_objective_and_grad(self, batch, draws, denom=None):
        """Objective value and its actor-parameter gradient for fixed draws.

        The critic-value scale ``denom`` (batch mean |Q|) is treated as a
        constant; pass the value from an earlier evaluation to probe the
        exact function the update descends.
        """
        cfg = self.cfg
        obs = batch["obs"]
        n = obs.shape[0]
        # consistency losses enter the objective and the confidence in
        # per-dimension mean form so kappa and rho stay scale-free across
        # action sizes (same reason the Q values are scale-normalized below)
        dim = float(self.action_dim)

        actions, tape = self.policy.sample_with_tape(obs, noises=draws["chain"])

        # confidence of the freshly generated actions
        gen_loss, gen_ctx = self.policy.consistency_forward(
            obs, actions, draws["k_gen"], draws["eps_gen"])
        w = confidence(gen_loss / dim, self.kappa)

        # critic guidance, scale-normalized by the batch's mean |Q|
        q_in = np.concatenate([obs, actions], axis=1)
        q1, cache1 = self.critic1.apply(q_in)
        q = q1[:, 0]
        cache_min = None
        if cfg.guide_with_min_q:
            q2, cache2 = self.critic2.apply(q_in)
            use2 = q2[:, 0] < q
            q = np.where(use2, q2[:, 0], q)
            cache_min = (cache2, use2)
        if denom is None:
            denom = float(np.mean(np.abs(q))) + 1e-8
        qn = q / denom

        # replay-consistency penalty on buffer actions
        bc_loss = np.zeros(n)
        bc_ctx = None
        if self.rho > 0.0:
            bc_loss, bc_ctx = self.policy.consistency_forward(
                obs, batch["act"], draws["k_bc"], draws["eps_bc"])

        objective = float(np.mean(w * qn)) - self.rho * float(np.mean(bc_loss)) / dim
        if not np.isfinite(objective):
            raise DivergenceError("actor objective diverged")

        # gradient of the negated objective --------------------------------
        # value path: d/da of -(1/n) sum w_i * q_i / denom
        grad_q_out = (-(w / (n * denom)))[:, None]
        if cfg.guide_with_min_q and cache_min is not None:
            cache2, use2 = cache_min
            _, gin1 = self.critic1.backward(
                grad_q_out * (~use2)[:, None], cache1)
            _, gin2 = self.critic2.backward(
                grad_q_out * use2[:, None], cache2)
            grad_actions = (gin1 + gin2)[:, self.obs_dim:]
        else:
            _, gin1 = self.critic1.backward(grad_q_out, cache1)
            grad_actions = gin1[:, self.obs_dim:]

        total = np.zeros(self.actor_net.param_count)
        # confidence path: dw/dtheta through the generated-action noise check
        if self.kappa > 0.0 and not cfg.stop_confidence_gradient:
            # d(-w_i*qn_i)/d gen_loss_i = (kappa/dim) * w_i * qn_i, batch-meaned
            row_w = self.kappa * w * qn / (n * dim)
            pgrad_conf, act_grad_conf = self.policy.consistency_backward(
                gen_ctx, row_w)
            total += pgrad_conf
            grad_actions = grad_actions + act_grad_conf
        total += self.policy.backprop_action_gradient(tape, grad_actions)

        bc_grad_norm = 0.0
        if self.rho > 0.0 and bc_ctx is not None:
            pgrad_bc, _ = self.policy.consistency_backward(
                bc_ctx, np.full(n, self.rho / (n * dim)))
            bc_grad_norm = float(np.linalg.norm(pgrad_bc))
            total += pgrad_bc

        telemetry = {
            "objective": objective,
            "mean_confidence": float(np.mean(w)),
            "consistency_grad_norm": bc_grad_norm,
            "denom": denom,
        }
        return objective, total, telemetry

    def actor_update(self, batch) -> dict:
        """One ascent step on the confidence-weighted objective.

        Returns telemetry: objective value, mean confidence, and the norm of
        the replay-consistency gradient contribution.
        """
        draws = self.draw_actor_noise(batch["obs"].shape[0])
        _, grad, telemetry = self.actor_objective_and_grad(batch, draws)
        self.actor_net.set_params(
            self.actor_opt.step(self.actor_net.get_params(), grad))
        self.optimizer_steps += 1
        return telemetry

    def soft_update(self) -> None:
        tau = self.cfg.soft_update_rate
        for online, target in ((self.actor_net, self.target_actor_net),
                               (self.critic1, self.target_critic1),
                               (self.critic2, self.target_critic2)):
            blended = tau * online.get_params() + (1.0 - tau) * target.get_params()
            target.set_params(blended)

    # -- persistence -------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        nets = {
            "actor": self.actor_net, "critic1": self.critic1,
            "critic2": self.critic2, "target_actor": self.target_actor_net,
            "target_critic1": self.target_critic1,
            "target_critic2": self.target_critic2,
        }
        opts = {"actor": self.actor_opt, "critic1": self.critic1_opt,
                "critic2": self.critic2_opt}
        meta = {"obs_dim": self.obs_dim, "action_dim": self.action_dim,
                "mode": self.mode, "optimizer_steps": self.optimizer_steps}
        meta.update(extra or {})
        save_checkpoint(path, nets, opts, meta)

    def load(self, path) -> dict:
        nets, opts, extra = load_checkpoint(path)
        for name, net in (("actor", self.actor_net), ("critic1", self.critic1),
                          ("critic2", self.critic2),
                          ("target_actor", self.target_actor_net),
                          ("target_critic1", self.target_critic1),
                          ("target_critic2", self.target_critic2)):
            net.set_params(nets[name].get_params())
        for name, opt in (("actor", self.actor_opt),
                          ("critic1", self.critic1_opt),
                          ("critic2", self.critic2_opt)):
            opt.m = opts[name].m
            opt.v = opts[name].v
            opt.t = opts[name].t
        self.optimizer_steps = int(extra.get("optimizer_steps", 0))
        return extra


def collect_trajectory(env, trainer: Trainer, seed: int) -> tuple[float, int]:
    """Roll one episode with the stochastic policy into the replay buffer."""
    obs = env.reset(seed)
    done = False
    episode_reward = 0.0
    fallbacks = 0
    while not done:
        action = trainer.policy.sample(obs, trainer.rng)
        next_obs, r, done, info = env.step(action)
        trainer.buffer.push(Transition(obs, action, r, next_obs, done))
        episode_reward += r
        fallbacks += info["fallback_count"]
        obs = next_obs
    return episode_reward, fallbacks


def evaluate_policy(env, act_fn, seeds) -> float:
    """Mean episode reward of ``act_fn(obs)`` over the given episode seeds."""
    rewards = []
    for seed in seeds:
        obs = env.reset(int(seed))
        done = False
        total = 0.0
        while not done:
            obs, r, done, _ = env.step(act_fn(obs))
            total += r
        rewards.append(total)
    return float(np.mean(rewards))


def train(env, trainer: Trainer, epochs: int, seed: int,
          grad_steps_per_epoch: int, eval_episodes: int = 5,
          on_epoch=None) -> list[dict]:
    """Run the training loop; returns one telemetry dict per epoch.

    ``seed`` drives every stream: episode seeds, evaluation seeds, and the
    trainer's own rng are all spawned from it, so one (config, seed) pair
    pins the whole run.
    """
    root = np.random.SeedSequence(seed)
    episode_ss, eval_ss = root.spawn(2)
    episode_seeds = iter(episode_ss.generate_state(
        max(epochs, 1) * trainer.cfg.trajectories_per_epoch * 2 + 1))
    # fixed held-out evaluation episodes so the test curve tracks policy
    # quality rather than episode-to-episode world variation
    eval_seeds = eval_ss.generate_state(eval_episodes)
    log = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        train_rewards = []
        fallbacks = 0
        for _ in range(trainer.cfg.trajectories_per_epoch):
            ep_reward, ep_fallbacks = collect_trajectory(
                env, trainer, int(next(episode_seeds)))
            train_rewards.append(ep_reward)
            fallbacks += ep_fallbacks
        critic_losses, objectives, confidences, bc_norms = [], [], [], []
        for _ in range(grad_steps_per_epoch):
            batch = trainer.buffer.sample(trainer.cfg.batch_size, trainer.rng)
            stats = trainer.actor_update(batch)
            critic_losses.append(trainer.critic_update(batch))
            trainer.soft_update()
            objectives.append(stats["objective"])
            confidences.append(stats["mean_confidence"])
            bc_norms.append(stats["consistency_grad_norm"])
        test_reward = evaluate_policy(
            env, lambda o: trainer.policy.sample(o, trainer.rng, deterministic=True),
            eval_seeds)
        entry = {
            "epoch": epoch,
            "train_reward": float(np.mean(train_rewards)),
            "test_reward": test_reward,
            "critic_loss": float(np.mean(critic_losses)) if critic_losses else 0.0,
            "actor_objective": float(np.mean(objectives)) if objectives else 0.0,
            "mean_confidence": float(np.mean(confidences)) if confidences else 1.0,
            "consistency_grad_norm": float(np.mean(bc_norms)) if bc_norms else 0.0,
            "fallback_count": fallbacks,
            "optimizer_steps": trainer.optimizer_steps,
            "wall_time": time.perf_counter() - t0,
        }
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return log
