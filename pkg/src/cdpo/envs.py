"""CartPole and CARTerpillar physics with a synchronous vectorised wrapper.

The dynamics are written with scalar ``math`` so every transition is
bit-reproducible. State is a flat tuple of floats laid out per cart as
``(x, x_dot, theta, theta_dot)``; the observation is the same vector as a
float64 array.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ENV_KINDS = ("cartpole", "carterpillar")


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "cartpole"
    carts: int = 1
    gravity: float = 9.81
    spring: float = 1.0
    damper: float = 1.0
    max_episode_steps: int = 500
    dt: float = 0.02
    force_mag: float = 10.0
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    x_threshold: float = 2.4
    theta_threshold: float = 12 * 2 * math.pi / 360
    coupling: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown env kind {self.kind!r}")
        if self.kind == "cartpole" and self.carts != 1:
            raise ValueError("cartpole has exactly one cart")
        if self.carts < 1:
            raise ValueError("carts must be >= 1")
        for name in ("gravity", "spring", "damper", "dt", "force_mag", "cart_mass",
                     "pole_mass", "pole_half_length", "x_threshold", "theta_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")

    @property
    def obs_dim(self) -> int:
        return 4 * self.carts

    @property
    def n_actions(self) -> int:
        return 2 * self.carts


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    state: tuple[float, ...]

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


def reset(config: EnvConfig, seed: int | np.random.Generator) -> tuple[tuple[float, ...], np.ndarray]:
    """Sample an initial state uniformly in [-0.05, 0.05] per component."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = tuple(float(v) for v in rng.uniform(-0.05, 0.05, size=config.obs_dim))
    return state, np.array(state)


def _integrate(x, x_dot, theta, theta_dot, force, cfg: EnvConfig):
    # classic cart-pole equations, semi-implicit Euler
    total_mass = cfg.cart_mass + cfg.pole_mass
    pml = cfg.pole_mass * cfg.pole_half_length
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (cfg.gravity * sin_t - cos_t * temp) / (
        cfg.pole_half_length * (4.0 / 3.0 - cfg.pole_mass * cos_t * cos_t / total_mass))
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    x_dot = x_dot + cfg.dt * x_acc
    x = x + cfg.dt * x_dot
    theta_dot = theta_dot + cfg.dt * theta_acc
    theta = theta + cfg.dt * theta_dot
    return x, x_dot, theta, theta_dot


def _failed(x: float, theta: float, cfg: EnvConfig) -> bool:
    return x < -cfg.x_threshold or x > cfg.x_threshold or \
        theta < -cfg.theta_threshold or theta > cfg.theta_threshold


def step_cartpole(state: Sequence[float], action: int, config: EnvConfig, elapsed: int = 0) -> StepResult:
    """Advance a single cart-pole by one step.

    ``elapsed`` is the number of steps already taken in the episode and
    drives time-limit truncation.
    """
    if action not in (0, 1):
        raise ValueError(f"cartpole action must be 0 or 1, got {action!r}")
    force = config.force_mag if action == 1 else -config.force_mag
    new = _integrate(*state, force, config)
    terminated = _failed(new[0], new[2], config)
    truncated = elapsed + 1 >= config.max_episode_steps
    return StepResult(np.array(new), 1.0, terminated, truncated, new)


def _coupling(xs: Sequence[float], vs: Sequence[float], k: float, b: float) -> list[float]:
    c = len(xs)
    forces = [0.0] * c
    for i in range(c):
        for j in range(i + 1, c):
            f = k * (xs[j] - xs[i]) + b * (vs[j] - vs[i])
            forces[i] += f
            forces[j] -= f
    return forces


def coupling_forces(positions: Sequence[float], velocities: Sequence[float], k: float, b: float) -> np.ndarray:
    """Net spring/damper force on each cart from every other cart.

    Springs have zero rest length; each pair contributes equal and opposite
    forces.
    """
    if len(positions) != len(velocities):
        raise ValueError("positions and velocities differ in length")
    if len(positions) < 2:
        raise ValueError("coupling needs at least two carts")
    return np.array(_coupling([float(x) for x in positions], [float(v) for v in velocities], k, b))


def step_carterpillar(state: Sequence[float], action: int, config: EnvConfig, elapsed: int = 0) -> StepResult:
    """Advance C coupled cart-poles by one step.

    Action ``2i`` pushes cart ``i`` left, ``2i + 1`` pushes it right. Every
    cart also feels the coupling force computed from the pre-step state.
    """
    c = config.carts
    if not isinstance(action, (int, np.integer)) or not 0 <= action < 2 * c:
        raise ValueError(f"action must be in [0, {2 * c}), got {action!r}")
    if config.coupling and c > 1:
        forces = _coupling(state[0::4], state[1::4], config.spring, config.damper)
    else:
        forces = [0.0] * c
    cart, push = divmod(int(action), 2)
    forces[cart] += config.force_mag if push else -config.force_mag
    new: list[float] = []
    terminated = False
    for i in range(c):
        s = _integrate(*state[4 * i:4 * i + 4], forces[i], config)
        terminated = terminated or _failed(s[0], s[2], config)
        new.extend(s)
    new_t = tuple(new)
    truncated = elapsed + 1 >= config.max_episode_steps
    return StepResult(np.array(new_t), 1.0, terminated, truncated, new_t)


class Env:
    """Single environment instance owning its state, step counter and RNG."""

    def __init__(self, config: EnvConfig, seed: int | np.random.SeedSequence | None = None):
        self.config = config
        seed = config.seed if seed is None else seed
        self.rng = np.random.default_rng(seed)
        self._step_fn = step_cartpole if config.kind == "cartpole" else step_carterpillar
        self.state: tuple[float, ...] | None = None
        self.elapsed = 0

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    def reset(self) -> np.ndarray:
        self.state, obs = reset(self.config, self.rng)
        self.elapsed = 0
        return obs

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        res = self._step_fn(self.state, action, self.config, self.elapsed)
        self.state = res.state
        self.elapsed += 1
        return res


@dataclass
class VecStep:
    observations: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_observations: np.ndarray
    episode_returns: list[float]
    episode_lengths: list[int]


class VecEnv:
    """N environments stepped in slot order with automatic reset.

    For slots whose episode ended, ``observations`` holds the fresh reset
    observation and ``final_observations`` the last state of the finished
    episode; rewards and flags describe the step that ended it.
    """

    def __init__(self, config: EnvConfig, n_envs: int, seed: int):
        if n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        seqs = np.random.SeedSequence(seed).spawn(n_envs)
        self.config = config
        self.envs = [Env(config, s) for s in seqs]
        self.returns = np.zeros(n_envs)
        self.lengths = np.zeros(n_envs, dtype=np.int64)
        self.obs = np.stack([e.reset() for e in self.envs])

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def step(self, actions: Sequence[int]) -> VecStep:
        if len(actions) != self.n_envs:
            raise ValueError(f"expected {self.n_envs} actions, got {len(actions)}")
        n = self.n_envs
        obs = np.empty((n, self.config.obs_dim))
        final = obs.copy()
        rewards = np.empty(n)
        term = np.zeros(n, dtype=bool)
        trunc = np.zeros(n, dtype=bool)
        ep_returns, ep_lengths = [], []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            res = env.step(int(a))
            rewards[i] = res.reward
            term[i], trunc[i] = res.terminated, res.truncated
            final[i] = res.observation
            self.returns[i] += res.reward
            self.lengths[i] += 1
            if res.done:
                ep_returns.append(float(self.returns[i]))
                ep_lengths.append(int(self.lengths[i]))
                self.returns[i] = 0.0
                self.lengths[i] = 0
                obs[i] = env.reset()
            else:
                obs[i] = res.observation
        self.obs = obs
        return VecStep(obs, rewards, term, trunc, final, ep_returns, ep_lengths)


def make_env_config(kind: str, carts: int = 1, **overrides) -> EnvConfig:
    if kind == "cartpole":
        carts = 1
    return EnvConfig(kind=kind, carts=carts, **overrides)


def dump_trajectory(config: EnvConfig, seed: int, steps: int, path, actions: Sequence[int] | None = None) -> int:
    """Write a debug trajectory as CSV; random actions unless ``actions`` is given.

    Stops at the first episode end. Returns the number of rows written.
    """
    env = Env(config, seed)
    env.reset()
    rng = np.random.default_rng(seed)
    names = [f"{q}_{i}" for i in range(config.carts) for q in ("x", "x_dot", "theta", "theta_dot")]
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *names, "action", "reward", "terminated", "truncated"])
        for t in range(steps):
            a = int(actions[t]) if actions is not None else int(rng.integers(config.n_actions))
            state = env.state
            res = env.step(a)
            w.writerow([t, *(repr(v) for v in state), a, repr(res.reward),
                        int(res.terminated), int(res.truncated)])
            rows += 1
            if res.done:
                break
    return rows
