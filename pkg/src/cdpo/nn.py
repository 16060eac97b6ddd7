"""Two-trunk tanh MLP with hand-written reverse-mode gradients and Adam.

The policy trunk maps an observation to action logits, the value trunk maps
it to a scalar state value. The two trunks share no weights. Every array is
float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN = (64, 64)

# Orthogonal-init gains: hidden layers, policy head, value head.
HIDDEN_GAIN = float(np.sqrt(2.0))
POLICY_GAIN = 0.01
VALUE_GAIN = 1.0


class NonFiniteError(FloatingPointError):
    """Raised when a gradient, loss or parameter stops being finite."""


class ParamSet:
    """Ordered weights and biases of the policy and value trunks.

    Arrays are keyed ``"policy.{i}.weight"``, ``"policy.{i}.bias"``,
    ``"value.{i}.weight"`` and ``"value.{i}.bias"``. Weights are stored as
    ``(out, in)``. The same container is used for gradients and optimizer
    moments, which keeps them shape-congruent by construction.
    """

    __slots__ = ("arrays",)

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def n_layers(self, trunk: str) -> int:
        return sum(1 for k in self.arrays if k.startswith(trunk + ".") and k.endswith(".weight"))

    def layer(self, trunk: str, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.arrays[f"{trunk}.{i}.weight"], self.arrays[f"{trunk}.{i}.bias"]

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.arrays.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def copy(self) -> ParamSet:
        return ParamSet({k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> ParamSet:
        return ParamSet({k: np.zeros_like(v) for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def with_flat(self, vec: np.ndarray) -> ParamSet:
        """Return a new ParamSet with the same shapes filled from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"expected {self.size} values, got shape {vec.shape}")
        out, offset = {}, 0
        for k, v in self.arrays.items():
            out[k] = vec[offset:offset + v.size].reshape(v.shape).copy()
            offset += v.size
        return ParamSet(out)

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def congruent(self, other: ParamSet) -> bool:
        return self.shapes == other.shapes

    def equal(self, other: ParamSet) -> bool:
        """Bitwise equality of every array."""
        return self.congruent(other) and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


GradSet = ParamSet


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((rows, cols) if rows >= cols else (cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def init_params(obs_dim: int, action_count: int, seed: int,
                hidden: tuple[int, ...] = HIDDEN) -> ParamSet:
    """Orthogonally initialised policy and value trunks with zero biases."""
    if obs_dim < 1:
        raise ValueError(f"obs_dim must be >= 1, got {obs_dim}")
    if action_count < 2:
        raise ValueError(f"action_count must be >= 2, got {action_count}")
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for trunk, out_dim, head_gain in (("policy", action_count, POLICY_GAIN),
                                      ("value", 1, VALUE_GAIN)):
        sizes = (obs_dim, *hidden, out_dim)
        n = len(sizes) - 1
        for i in range(n):
            gain = head_gain if i == n - 1 else HIDDEN_GAIN
            arrays[f"{trunk}.{i}.weight"] = _orthogonal(rng, (sizes[i + 1], sizes[i]), gain)
            arrays[f"{trunk}.{i}.bias"] = np.zeros(sizes[i + 1])
    return ParamSet(arrays)


@dataclass
class Tape:
    """Activations recorded by :func:`forward_tape` for one batch."""

    params: ParamSet
    obs: np.ndarray
    hidden: dict[str, list[np.ndarray]] = field(default_factory=dict)
    single: bool = False


def _trunk(params: ParamSet, trunk: str, x: np.ndarray, keep: list | None) -> np.ndarray:
    n = params.n_layers(trunk)
    h = x
    for i in range(n):
        w, b = params.layer(trunk, i)
        h = h @ w.T + b
        if i < n - 1:
            h = np.tanh(h)
            if keep is not None:
                keep.append(h)
    return h


def forward_tape(params: ParamSet, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, Tape]:
    """Forward pass that also returns the tape needed by :func:`backward`.

    ``obs`` is ``(obs_dim,)`` or ``(B, obs_dim)``; outputs follow the same
    leading shape: logits ``(B, A)`` and values ``(B,)``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    tape = Tape(params=params, obs=x, hidden={"policy": [], "value": []}, single=single)
    logits = _trunk(params, "policy", x, tape.hidden["policy"])
    value = _trunk(params, "value", x, tape.hidden["value"])[:, 0]
    if single:
        return logits[0], value[0], tape
    return logits, value, tape


def forward(params: ParamSet, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and state value(s) for one observation or a batch."""
    obs = np.asarray(obs, dtype=np.float64)
    x = obs[None, :] if obs.ndim == 1 else obs
    logits = _trunk(params, "policy", x, None)
    value = _trunk(params, "value", x, None)[:, 0]
    if obs.ndim == 1:
        return logits[0], value[0]
    return logits, value


def backward(params: ParamSet, tape: Tape, dlogits: np.ndarray, dvalue: np.ndarray) -> GradSet:
    """Reverse-mode gradient of a scalar loss through the recorded pass.

    ``dlogits`` and ``dvalue`` are the loss derivatives with respect to the
    forward outputs, shaped like them.
    """
    if tape.params is not params:
        raise ValueError("tape was recorded with a different ParamSet")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    dvalue = np.asarray(dvalue, dtype=np.float64)
    if tape.single:
        dlogits, dvalue = dlogits[None, :], np.reshape(dvalue, (1,))
    grads: dict[str, np.ndarray] = {}
    for trunk, dout in (("policy", dlogits), ("value", dvalue[:, None])):
        acts = tape.hidden[trunk]
        n = params.n_layers(trunk)
        delta = dout
        for i in range(n - 1, -1, -1):
            w, _ = params.layer(trunk, i)
            inp = acts[i - 1] if i > 0 else tape.obs
            grads[f"{trunk}.{i}.weight"] = delta.T @ inp
            grads[f"{trunk}.{i}.bias"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ w) * (1.0 - acts[i - 1] ** 2)
    return ParamSet({k: grads[k] for k in params})


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class AdamState:
    """First/second moment accumulators and the number of steps taken."""

    m: ParamSet
    v: ParamSet
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ParamSet) -> AdamState:
        return cls(m=params.zeros_like(), v=params.zeros_like())


def global_norm(grads: ParamSet) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays.values())))


def clip_by_global_norm(grads: ParamSet, max_norm: float) -> tuple[ParamSet, float]:
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the pre-clipping norm.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NonFiniteError(f"gradient norm is {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        grads = ParamSet({k: g * scale for k, g in grads.items()})
    return grads, norm


def optimizer_step(params: ParamSet, grads: GradSet, state: AdamState, lr: float,
                   max_norm: float) -> tuple[ParamSet, AdamState]:
    """One clipped Adam step in the ascent direction of ``grads``.

    ``grads`` is the gradient of an objective being maximised. Neither input
    is modified; the update aborts with :class:`NonFiniteError` before any
    state changes if the gradients are not finite.
    """
    if not params.congruent(grads):
        raise ValueError("gradient shapes do not match parameters")
    grads, _ = clip_by_global_norm(grads, max_norm)
    b1, b2, eps = state.beta1, state.beta2, state.eps
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, g in grads.items():
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = params[k] + lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    out = ParamSet(new_p)
    if not out.is_finite():
        raise NonFiniteError("parameters became non-finite after the update")
    return out, AdamState(ParamSet(new_m), ParamSet(new_v), t, b1, b2, eps)
