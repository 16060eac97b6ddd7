"""Trajectory collection, GAE and minibatch iteration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .envs import VecEnv
from .nn import ParamSet, forward, log_softmax

ADV_EPS = 1e-8


@dataclass
class RolloutBuffer:
    """Transitions laid out as ``(n_steps, n_envs, ...)``.

    ``bootstrap_values`` holds V(s') of the true successor state for steps
    that were truncated by the time limit (the stored next observation of
    such a step is already a reset state); it is zero elsewhere.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    bootstrap_values: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[1]

    @property
    def size(self) -> int:
        return self.rewards.size

    @classmethod
    def from_arrays(cls, obs, actions, rewards, terminated, values, log_probs,
                    truncated=None, bootstrap_values=None, last_values=None) -> RolloutBuffer:
        """Build a buffer from ``(T, N)``-shaped arrays; missing pieces default to zero."""
        rewards = np.asarray(rewards, dtype=np.float64)
        shape = rewards.shape
        zeros = np.zeros(shape)
        return cls(
            obs=np.asarray(obs, dtype=np.float64),
            actions=np.asarray(actions, dtype=np.int64),
            rewards=rewards,
            terminated=np.asarray(terminated, dtype=bool),
            truncated=np.zeros(shape, bool) if truncated is None else np.asarray(truncated, bool),
            values=np.asarray(values, dtype=np.float64),
            log_probs=np.asarray(log_probs, dtype=np.float64),
            bootstrap_values=zeros if bootstrap_values is None else np.asarray(bootstrap_values, float),
            last_values=np.zeros(shape[1]) if last_values is None else np.asarray(last_values, float),
        )


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF categorical sampling, one draw per row."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    a = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


def collect(params: ParamSet, venv: VecEnv, n_steps: int, rng: np.random.Generator) -> RolloutBuffer:
    """Roll the current policy for ``n_steps`` in every environment."""
    n, d = venv.n_envs, venv.config.obs_dim
    obs = np.empty((n_steps, n, d))
    actions = np.empty((n_steps, n), dtype=np.int64)
    rewards = np.empty((n_steps, n))
    term = np.empty((n_steps, n), dtype=bool)
    trunc = np.empty((n_steps, n), dtype=bool)
    values = np.empty((n_steps, n))
    logp = np.empty((n_steps, n))
    boot = np.zeros((n_steps, n))
    ep_returns: list[float] = []
    ep_lengths: list[int] = []
    rows = np.arange(n)
    for t in range(n_steps):
        x = venv.obs
        logits, v = forward(params, x)
        lp = log_softmax(logits)
        a = sample_actions(np.exp(lp), rng)
        step = venv.step(a)
        obs[t], actions[t], values[t] = x, a, v
        logp[t] = lp[rows, a]
        rewards[t], term[t], trunc[t] = step.rewards, step.terminated, step.truncated
        cut = step.truncated & ~step.terminated
        if cut.any():
            boot[t, cut] = forward(params, step.final_observations[cut])[1]
        ep_returns.extend(step.episode_returns)
        ep_lengths.extend(step.episode_lengths)
    last_values = forward(params, venv.obs)[1]
    return RolloutBuffer(obs, actions, rewards, term, trunc, values, logp, boot, last_values,
                         episode_returns=ep_returns, episode_lengths=ep_lengths)


def compute_gae(buffer: RolloutBuffer, last_values: np.ndarray | None, gamma: float, lam: float) -> RolloutBuffer:
    """Generalised advantage estimates and value targets.

    Termination zeroes the bootstrap; truncation bootstraps from the value of
    the state the episode was cut at. Either ends the advantage recursion.
    """
    if last_values is None:
        last_values = buffer.last_values
    last_values = np.asarray(last_values, dtype=np.float64)
    T = buffer.n_steps
    adv = np.zeros_like(buffer.rewards)
    running = np.zeros(buffer.n_envs)
    for t in range(T - 1, -1, -1):
        next_v = last_values if t == T - 1 else buffer.values[t + 1]
        next_v = np.where(buffer.truncated[t], buffer.bootstrap_values[t], next_v)
        not_term = 1.0 - buffer.terminated[t]
        not_done = 1.0 - (buffer.terminated[t] | buffer.truncated[t])
        delta = buffer.rewards[t] + gamma * next_v * not_term - buffer.values[t]
        running = delta + gamma * lam * not_done * running
        adv[t] = running
    return dataclasses.replace(buffer, advantages=adv, returns=adv + buffer.values,
                               last_values=last_values)


@dataclass
class Minibatch:
    indices: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + ADV_EPS)


def minibatches(buffer: RolloutBuffer, batch_size: int, rng: np.random.Generator) -> list[Minibatch]:
    """Shuffle the buffer into equal minibatches with per-batch advantage normalisation."""
    if buffer.advantages is None:
        raise ValueError("compute_gae must run before minibatching")
    size = buffer.size
    if batch_size < 1 or size % batch_size:
        raise ValueError(f"batch_size {batch_size} does not divide buffer size {size}")
    obs = buffer.obs.reshape(size, -1)
    actions = buffer.actions.reshape(size)
    logp = buffer.log_probs.reshape(size)
    adv = buffer.advantages.reshape(size)
    ret = buffer.returns.reshape(size)
    perm = rng.permutation(size)
    out = []
    for start in range(0, size, batch_size):
        idx = perm[start:start + batch_size]
        out.append(Minibatch(idx, obs[idx], actions[idx], logp[idx], normalize(adv[idx]), ret[idx]))
    return out
