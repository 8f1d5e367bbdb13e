"""Denoising-diffusion policy machinery.

A fixed exponential variance schedule corrupts actions toward white noise;
the policy runs the learned reverse chain from Gaussian noise to an action
vector, conditioned on the observation. The chain is built from
reparameterized steps, so gradients can flow from the final action back to
the denoiser parameters (``sample_with_tape`` / ``backprop_action_gradient``).

Step indices ``k`` are 1-based (1..K); schedule arrays are stored 0-based.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DivergenceError
from .nn import DenseNet, timestep_embedding


class NoiseSchedule:
    """Per-step noise strengths and their cumulative products."""

    def __init__(self, steps: int, beta_min: float = 0.1, beta_max: float = 10.0):
        if steps < 1:
            raise ConfigError("denoising steps must be >= 1")
        if not 0.0 < beta_min < beta_max:
            raise ConfigError("noise bounds must satisfy 0 < beta_min < beta_max")
        self.steps = int(steps)
        self.beta_min = beta_min
        self.beta_max = beta_max
        k = np.arange(1, self.steps + 1, dtype=np.float64)
        self.beta = 1.0 - np.exp(
            -beta_min / self.steps
            - (beta_max - beta_min) * (2.0 * k - 1.0) / (2.0 * self.steps ** 2))
        if not np.all((self.beta > 0.0) & (self.beta < 1.0)):
            raise ConfigError("schedule parameters give noise strengths outside (0, 1)")
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        # previous cumulative product, with the k=1 predecessor pinned to 1
        self.alpha_bar_prev = np.concatenate(([1.0], self.alpha_bar[:-1]))
        self.beta_tilde = (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar) * self.beta


def _rowwise(values: np.ndarray, k, x: np.ndarray):
    """Index 1-based step values, shaped to broadcast against ``x``."""
    picked = values[np.asarray(k) - 1]
    if np.ndim(picked) == 0 or x.ndim == 1:
        return picked
    return picked[:, None]


def forward_sample(x0, k, schedule: NoiseSchedule, eps):
    """Corrupt a clean vector to its step-``k`` noisy version in closed form."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = _rowwise(schedule.alpha_bar, k, x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean(x_k, k, noise_pred, schedule: NoiseSchedule,
                   squash: bool = True):
    """Mean of the reverse step given the predicted noise.

    The noise estimate is squashed componentwise into (-1, 1) before use so a
    wild prediction cannot blow up the chain; ``squash=False`` exposes the
    raw form (useful when feeding in the exactly known noise).
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    noise_pred = np.asarray(noise_pred, dtype=np.float64)
    if squash:
        noise_pred = np.tanh(noise_pred)
    alpha = _rowwise(schedule.alpha, k, x_k)
    beta = _rowwise(schedule.beta, k, x_k)
    ab = _rowwise(schedule.alpha_bar, k, x_k)
    return (x_k - beta * noise_pred / np.sqrt(1.0 - ab)) / np.sqrt(alpha)


def reverse_step(x_k, k, noise_pred, schedule: NoiseSchedule, eps,
                 squash: bool = True):
    """One reparameterized denoising step; the k=1 step is noiseless."""
    mu = posterior_mean(x_k, k, noise_pred, schedule, squash=squash)
    bt = _rowwise(schedule.beta_tilde, k, mu)
    return mu + np.sqrt(bt) * np.asarray(eps, dtype=np.float64)


def squash_action(x0):
    """Map the raw chain output into the [0, 1] action box."""
    return 0.5 * (np.tanh(np.asarray(x0, dtype=np.float64)) + 1.0)


def confidence(loss, sensitivity: float):
    """Exponential confidence weight in (0, 1] for a given consistency loss."""
    return np.exp(-sensitivity * np.asarray(loss, dtype=np.float64))


class DiffusionPolicy:
    """Denoiser network plus schedule, sampling actions in [0, 1]^dim.

    The noise estimate is parameterized as the standard-normal prior
    component ``sqrt(1 - alpha_bar_k) * x`` plus the network's learned
    correction. An untrained network then leaves the reverse chain
    variance-preserving instead of inflating it by ``1/alpha_bar_K``, which
    would pin the squashed actions to the corners and kill their gradients.
    """

    def __init__(self, denoiser: DenseNet, schedule: NoiseSchedule,
                 action_dim: int, obs_dim: int, embed_dim: int = 16,
                 squash_noise: bool = True, squash_temperature: float = 4.0):
        expected = action_dim + embed_dim + obs_dim
        if denoiser.input_dim != expected:
            raise ValueError(
                f"denoiser input dim {denoiser.input_dim} != {expected} "
                "(action + step embedding + observation)")
        if denoiser.output_dim != action_dim:
            raise ValueError("denoiser output dim must equal the action dim")
        self.denoiser = denoiser
        self.schedule = schedule
        self.action_dim = action_dim
        self.obs_dim = obs_dim
        self.embed_dim = embed_dim
        self.squash_noise = squash_noise
        # a tempered squash keeps decisive actions off the saturated tail,
        # where the chain gradient would vanish and training would freeze
        self.squash_temperature = squash_temperature

    def _net_input(self, x, k, obs):
        n = x.shape[0]
        k_rows = np.broadcast_to(np.asarray(k, dtype=np.float64), (n,))
        emb = timestep_embedding(k_rows, self.embed_dim)
        return np.concatenate([x, emb, obs], axis=1)

    def _prior_coeff(self, k, x):
        return _rowwise(np.sqrt(1.0 - self.schedule.alpha_bar), k, x)

    def predict_noise(self, x, k, obs):
        """Noise estimate (prior drift + network correction) and net cache."""
        out, cache = self.denoiser.apply(self._net_input(x, k, obs))
        return out + self._prior_coeff(k, x) * x, cache

    def draw_chain_noise(self, n: int, rng) -> dict:
        """Pre-draw the chain's randomness so it can be replayed exactly."""
        return {
            "init": rng.standard_normal((n, self.action_dim)),
            "steps": [rng.standard_normal((n, self.action_dim))
                      for _ in range(self.schedule.steps)],
        }

    def sample(self, obs, rng, deterministic: bool = False) -> np.ndarray:
        actions, _ = self.sample_with_tape(obs, rng, deterministic=deterministic,
                                           keep_tape=False)
        return actions

    def sample_with_tape(self, obs, rng=None, deterministic: bool = False,
                         keep_tape: bool = True, noises: dict | None = None):
        """Run the reverse chain; optionally keep what backprop needs.

        ``deterministic`` starts from zeros and adds no step noise, giving a
        repeatable greedy action per observation. ``noises`` (as produced by
        :meth:`draw_chain_noise`) replays a fixed set of draws instead of
        consuming the rng.
        """
        obs = np.asarray(obs, dtype=np.float64)
        squeeze = obs.ndim == 1
        obs = np.atleast_2d(obs)
        n = obs.shape[0]
        sched = self.schedule
        if noises is not None:
            x = noises["init"].copy()
        elif deterministic:
            x = np.zeros((n, self.action_dim))
        else:
            x = rng.standard_normal((n, self.action_dim))
        steps = []
        for k in range(sched.steps, 0, -1):
            eps_hat, cache = self.predict_noise(x, k, obs)
            u = np.tanh(eps_hat) if self.squash_noise else eps_hat
            c1 = 1.0 / np.sqrt(sched.alpha[k - 1])
            c2 = sched.beta[k - 1] / np.sqrt(1.0 - sched.alpha_bar[k - 1])
            mu = (x - c2 * u) * c1
            if keep_tape:
                steps.append((k, cache, u, c1, c2))
            if noises is not None:
                x = mu + np.sqrt(sched.beta_tilde[k - 1]) * noises["steps"][
                    sched.steps - k]
            elif deterministic:
                x = mu
            else:
                x = mu + np.sqrt(sched.beta_tilde[k - 1]) * rng.standard_normal(
                    (n, self.action_dim))
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite value in the denoising chain")
        tanh_x0 = np.tanh(x / self.squash_temperature)
        actions = 0.5 * (tanh_x0 + 1.0)
        tape = {"steps": steps, "tanh_x0": tanh_x0} if keep_tape else None
        if squeeze:
            actions = actions[0]
        return actions, tape

    def backprop_action_gradient(self, tape, grad_actions) -> np.ndarray:
        """Flat denoiser-parameter gradient of a loss, given its gradient at
        the sampled actions; follows the recorded chain in reverse."""
        grad_actions = np.atleast_2d(np.asarray(grad_actions, dtype=np.float64))
        g = grad_actions * 0.5 * (1.0 - tape["tanh_x0"] ** 2) \
            / self.squash_temperature
        total = np.zeros(self.denoiser.param_count)
        for k, cache, u, c1, c2 in reversed(tape["steps"]):
            g_u = -(c1 * c2) * g
            g_eps = g_u * (1.0 - u ** 2) if self.squash_noise else g_u
            pgrad, g_in = self.denoiser.backward(g_eps, cache)
            total += pgrad
            # prior-drift term routes part of the noise-estimate gradient
            # straight back to the step input
            pc = np.sqrt(1.0 - self.schedule.alpha_bar[k - 1])
            g = c1 * g + g_in[:, :self.action_dim] + pc * g_eps
        return total

    def consistency_forward(self, obs, actions, k_rows, eps):
        """Per-sample squared error between predicted and injected noise.

        ``actions`` are corrupted to their per-row step ``k`` with the given
        noise draws; the denoiser's raw (pre-squash) output is compared to the
        injected noise. Returns (per-sample losses, context for backward).
        """
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
        k_rows = np.asarray(k_rows)
        noisy = forward_sample(actions, k_rows, self.schedule, eps)
        eps_hat, cache = self.predict_noise(noisy, k_rows, obs)
        diff = eps_hat - eps
        per_sample = np.sum(diff * diff, axis=1)
        sqrt_ab = np.sqrt(self.schedule.alpha_bar[k_rows - 1])
        prior = self._prior_coeff(k_rows, noisy)
        return per_sample, (cache, diff, sqrt_ab, prior)

    def consistency_backward(self, ctx, row_weights):
        """Gradients of ``sum_i row_weights[i] * per_sample[i]``.

        Returns the flat denoiser-parameter gradient and the gradient with
        respect to the clean actions (for chaining into the sampler).
        """
        cache, diff, sqrt_ab, prior = ctx
        w = np.asarray(row_weights, dtype=np.float64)[:, None]
        out_grad = 2.0 * w * diff
        pgrad, g_in = self.denoiser.backward(out_grad, cache)
        action_grad = (g_in[:, :self.action_dim] + prior * out_grad) \
            * sqrt_ab[:, None]
        return pgrad, action_grad

    def consistency_loss(self, obs, actions, k_rows, eps) -> float:
        """Mean per-sample consistency loss (no gradient bookkeeping)."""
        per_sample, _ = self.consistency_forward(obs, actions, k_rows, eps)
        return float(per_sample.mean())
