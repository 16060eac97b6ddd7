"""Self-checks behind the ``verify`` command.

Each check returns ``(name, passed, detail)``. They mirror the property
tests so a user without pytest can still audit an install.
"""
from __future__ import annotations

import math

import numpy as np

from . import regularizers as reg
from .envs import EnvConfig, coupling_forces, step_carterpillar, step_cartpole
from .nn import backward, forward_tape, init_params


def check_regularizer_values():
    c = float(reg.complexity(np.array([0.8, 0.2])))
    zeros = [float(reg.complexity(np.full(n, 1.0 / n))) for n in range(2, 19)]
    zeros += [float(reg.complexity(np.eye(n)[0])) for n in range(2, 19)]
    ok = abs(c - 0.0900724) < 1e-6 and all(z == 0.0 for z in zeros)
    return "complexity values", ok, f"C([0.8,0.2])={c:.9f}; uniform/one-hot max={max(zeros):.1e}"


def _fd_projected(f, p, h=1e-6):
    n = len(p)
    out = np.empty(n)
    for a in range(n):
        d = -np.full(n, 1.0 / n)
        d[a] += 1.0
        out[a] = (f(p + h * d) - f(p - h * d)) / (2 * h)
    return out


def check_complexity_gradient(cases=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 19))
        p = 0.9 * rng.dirichlet(np.ones(n)) + 0.1 / n
        an = reg.tangent_projection(reg.complexity_grad(p))
        fd = _fd_projected(reg.complexity, p)
        worst = max(worst, np.linalg.norm(an - fd) / max(np.linalg.norm(an), 1e-12))
    return "complexity gradient vs finite differences", worst < 1e-6, f"max rel err {worst:.2e}"


def check_backprop(cases=20, seed=0, h=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(cases):
        params = init_params(3, 3, seed=k, hidden=(5, 4))
        obs = rng.normal(size=(4, 3))
        wl, wv = rng.normal(size=(4, 3)), rng.normal(size=4)

        def loss(p):
            lg, v, _ = forward_tape(p, obs)
            return float(np.sum(wl * np.tanh(lg)) + np.sum(wv * v ** 2))

        lg, v, tape = forward_tape(params, obs)
        g = backward(params, tape, wl * (1 - np.tanh(lg) ** 2), 2 * wv * v).flat()
        flat = params.flat()
        for i in range(flat.size):
            e = np.zeros_like(flat)
            e[i] = h
            fd = (loss(params.with_flat(flat + e)) - loss(params.with_flat(flat - e))) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    return "backprop vs finite differences", worst < 1e-5, f"max rel err {worst:.2e}"


def check_stationarity(ns=(2, 3, 4), tol=1e-4):
    details, ok = [], True
    for n in ns:
        r = reg.verify_stationarity(n, starts=10 * n, tol=tol)
        uni = max(r.uniform_grad_norms.values())
        good = r.ok and uni < 1e-10
        ok = ok and good
        details.append(f"n={n}: {r.n_maxima} maxima, C*={r.max_complexity:.6f}, "
                       f"sorted p*={np.round(np.sort(r.maxima[0]), 6).tolist()}")
    return "simplex stationary structure", ok, "; ".join(details)


def check_physics(seed=0, states=2000):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(states):
        c = int(rng.integers(2, 12))
        f = coupling_forces(rng.normal(size=c), rng.normal(size=c), 1.0, 1.0)
        worst = max(worst, abs(math.fsum(f)))
    cp = EnvConfig()
    c1 = EnvConfig(kind="carterpillar", carts=1, coupling=False)
    same = True
    s = tuple(rng.uniform(-0.05, 0.05, 4))
    for t in range(500):
        a = int(rng.integers(2))
        r1, r2 = step_cartpole(s, a, cp, t), step_carterpillar(s, a, c1, t)
        same = same and r1.state == r2.state and r1.terminated == r2.terminated
        s = r1.state if not r1.terminated else tuple(rng.uniform(-0.05, 0.05, 4))
    ok = worst < 1e-12 and same
    return "physics invariants", ok, f"max |sum F|={worst:.1e}; C=1 matches cartpole: {same}"


CHECKS = (check_regularizer_values, check_complexity_gradient, check_backprop,
          check_stationarity, check_physics)


def run_all(out=print) -> bool:
    all_ok = True
    for check in CHECKS:
        name, ok, detail = check()
        all_ok = all_ok and ok
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
