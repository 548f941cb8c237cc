"""One-step explicit integrators for autonomous fields.

Every stepper takes a field ``v`` (any callable ``x -> dx/dt``), a state and a
step size, and returns the new state. Counting of field evaluations is done by
wrapping the field in a :class:`FieldRef`.
"""

from __future__ import annotations

from collections import Counter
from typing import Callable

import numpy as np


class NumericFailure(ArithmeticError):
    """A step produced a non-finite state.

    ``method``, ``time`` and ``step`` are filled in by the trajectory driver
    that owns the step loop.
    """

    def __init__(self, message, state=None, method=None, time=None, step=None):
        super().__init__(message)
        self.message = message
        self.state = state
        self.method = method
        self.time = time
        self.step = step

    def __str__(self):
        parts = [self.message]
        if self.method is not None:
            parts.append(f"method={self.method}")
        if self.time is not None:
            parts.append(f"t={self.time!r}")
        if self.step is not None:
            parts.append(f"step={self.step}")
        return ", ".join(parts)


class FieldRef:
    """Derivative field that increments ``counters[key]`` on every call."""

    __slots__ = ("fn", "counters", "key")

    def __init__(self, fn: Callable, counters: Counter | None = None, key: str = "full"):
        self.fn = fn
        self.counters = Counter() if counters is None else counters
        self.key = key

    def __call__(self, *args):
        self.counters[self.key] += 1
        return self.fn(*args)

    @property
    def count(self) -> int:
        return self.counters[self.key]


def _checked(x):
    if not np.isfinite(x).all():
        raise NumericFailure("non-finite state", state=np.array(x, copy=True))
    return x


def euler_step(v, x, h):
    return _checked(x + h * v(x))


def rk2_step(v, x, h):
    """Explicit midpoint rule: half step to ``x*``, full step with ``v(x*)``."""
    x_star = x + (h / 2) * v(x)
    return _checked(x + h * v(x_star))


def rk4_step(v, x, h):
    k1 = v(x)
    k2 = v(x + (h / 2) * k1)
    k3 = v(x + (h / 2) * k2)
    k4 = v(x + h * k3)
    return _checked(x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4))


STEPPERS = {"euler": euler_step, "rk2": rk2_step, "rk4": rk4_step}

# field evaluations per step
STAGES = {"euler": 1, "rk2": 2, "rk4": 4}


def get_stepper(name: str):
    try:
        return STEPPERS[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(STEPPERS)}") from None
