"""Compiled rk4 DNS for the registered benchmarks, used to build reference tables.

The right-hand sides here are written independently of the Python fields in
``systems`` (full field ``f0 + f1/eps`` fused, written in place); a test checks
both routes agree on short runs.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is optional
    njit = None

_SINGULAR = 1e-12


def _dissipative(x, eps, out):
    out[0] = 1.0 + 0.5 * (x[0] + x[1])
    out[1] = (x[0] - x[1]) / eps


def _const_spiral(x, eps, out):
    u, v = x[0], x[1]
    r = math.sqrt(u * u + v * v)
    if r < _SINGULAR:
        out[0] = math.nan
        out[1] = math.nan
        return
    c = 0.25 + 5.0 * u / r
    out[0] = c * u - v / eps
    out[1] = c * v + u / eps


def _nonlinear_spirals(x, eps, out):
    rx = math.sqrt(x[0] * x[0] + x[1] * x[1])
    ry = math.sqrt(x[2] * x[2] + x[3] * x[3])
    if rx < _SINGULAR or ry < _SINGULAR:
        for i in range(4):
            out[i] = math.nan
        return
    cx = rx ** -1.5 + 5.0 * (x[0] / rx + x[2] / ry) / rx
    cy = ry ** -1.5 + x[2] / (ry * ry)
    wy = ry / math.sqrt(2.0)
    out[0] = cx * x[0] - rx * x[1] / eps
    out[1] = cx * x[1] + rx * x[0] / eps
    out[2] = cy * x[2] - wy * x[3] / eps
    out[3] = cy * x[3] + wy * x[2] / eps


def _stellar(x, eps, out):
    # a = 2, b = 1
    out[0] = 2.0 * x[1] / eps
    out[1] = -2.0 * x[0] / eps + 0.5 * x[2] * x[2]
    out[2] = x[3] / eps
    out[3] = -x[2] / eps + 2.0 * x[0] * x[1]


def _rk4_loop(rhs, x0, eps, dt, n_steps, stride):
    d = x0.size
    x = x0.copy()
    y = np.empty(d)
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    out = np.empty((n_steps // stride + 1, d))
    out[0] = x
    row = 1
    for step in range(n_steps):
        rhs(x, eps, k1)
        for i in range(d):
            y[i] = x[i] + (dt / 2) * k1[i]
        rhs(y, eps, k2)
        for i in range(d):
            y[i] = x[i] + (dt / 2) * k2[i]
        rhs(y, eps, k3)
        for i in range(d):
            y[i] = x[i] + dt * k3[i]
        rhs(y, eps, k4)
        for i in range(d):
            x[i] = x[i] + (dt / 6) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        if (step + 1) % stride == 0:
            for i in range(d):
                if not math.isfinite(x[i]):
                    return out[:row], step + 1
            out[row] = x
            row += 1
    return out, -1


RHS = {}
if njit is not None:
    RHS = {
        "dissipative": njit(cache=True)(_dissipative),
        "const_spiral": njit(cache=True)(_const_spiral),
        "nonlinear_spirals": njit(cache=True)(_nonlinear_spirals),
        "stellar": njit(cache=True)(_stellar),
    }
    _rk4_loop_jit = njit(cache=True)(_rk4_loop)


def available(name: str) -> bool:
    return name in RHS


def rk4_samples(name: str, x0, eps: float, dt: float, n_steps: int, stride: int):
    """States every ``stride`` steps (row 0 is ``x0``) and the failing step or -1."""
    return _rk4_loop_jit(RHS[name], np.asarray(x0, dtype=float), float(eps), float(dt),
                         int(n_steps), int(stride))
