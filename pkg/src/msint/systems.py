"""Benchmark slow/fast systems and their reference solutions.

Systems store the stiff field unscaled: an integrator evaluates
``f0(x) + f1(x) / epsilon`` itself, so ``epsilon`` never appears inside the
field functions. Complex states are stored as interleaved ``(Re, Im)`` pairs.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .steppers import NumericFailure

SINGULAR_RADIUS = 1e-12


class SingularStateError(NumericFailure):
    """A field was evaluated too close to a coordinate singularity."""


@dataclass(frozen=True)
class SplitSystem:
    """``dx/dt = f0(x) + f1(x) / epsilon``."""

    name: str
    dim: int
    epsilon: float
    initial_state: np.ndarray
    f0: Callable[[np.ndarray], np.ndarray]
    f1: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        x0 = np.array(self.initial_state, dtype=float)
        x0.setflags(write=False)
        object.__setattr__(self, "initial_state", x0)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if x0.shape != (self.dim,):
            raise ValueError(f"initial_state has shape {x0.shape}, expected ({self.dim},)")

    def full_field(self, x):
        return self.f0(x) + self.f1(x) / self.epsilon

    def with_epsilon(self, epsilon: float) -> SplitSystem:
        return SplitSystem(self.name, self.dim, epsilon, self.initial_state, self.f0, self.f1)


@dataclass(frozen=True)
class PartitionedSystem:
    """``dxi/dt = f0(xi, eta)``, ``deta/dt = f1(xi, eta) / epsilon``."""

    name: str
    slow_dim: int
    fast_dim: int
    epsilon: float
    initial_slow: np.ndarray
    initial_fast: np.ndarray
    f0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f1: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        for attr, n in (("initial_slow", self.slow_dim), ("initial_fast", self.fast_dim)):
            v = np.array(getattr(self, attr), dtype=float)
            if v.shape != (n,):
                raise ValueError(f"{attr} has shape {v.shape}, expected ({n},)")
            v.setflags(write=False)
            object.__setattr__(self, attr, v)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def dim(self) -> int:
        return self.slow_dim + self.fast_dim

    def split(self, x):
        return x[: self.slow_dim], x[self.slow_dim:]

    def embed(self) -> SplitSystem:
        """Standard embedding with ``f0 -> (f0, 0)`` and ``f1 -> (0, f1)``."""
        ns, nf = self.slow_dim, self.fast_dim
        f0, f1 = self.f0, self.f1
        zs, zf = np.zeros(ns), np.zeros(nf)

        def g0(x):
            return np.concatenate((f0(x[:ns], x[ns:]), zf))

        def g1(x):
            return np.concatenate((zs, f1(x[:ns], x[ns:])))

        x0 = np.concatenate((self.initial_slow, self.initial_fast))
        return SplitSystem(self.name, ns + nf, self.epsilon, x0, g0, g1)


@dataclass(frozen=True)
class SlowMap:
    out_dim: int
    observe: Callable[[np.ndarray], np.ndarray]
    labels: tuple[str, ...]

    def __call__(self, x):
        return self.observe(x)

    def over(self, states) -> np.ndarray:
        """Apply the map row-wise to a ``(n, dim)`` array of states."""
        states = np.atleast_2d(states)
        return np.array([self.observe(s) for s in states]).reshape(len(states), self.out_dim)


@dataclass(frozen=True)
class ReferenceSolution:
    kind: str  # "closed_form" or "dns_oracle"
    evaluate: Callable[[float], np.ndarray]
    provenance: str
    times: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def __call__(self, t):
        return self.evaluate(t)

    def at(self, times) -> np.ndarray:
        return np.array([np.atleast_1d(self.evaluate(float(t))) for t in times])


# dissipative ----------------------------------------------------------------

def make_dissipative(epsilon: float) -> PartitionedSystem:
    def f0(xi, eta):
        return np.array([1.0 + (xi[0] + eta[0]) / 2])

    def f1(xi, eta):
        return np.array([xi[0] - eta[0]])

    return PartitionedSystem("dissipative", 1, 1, epsilon, [-1.0], [1.0], f0, f1)


# constant angular period spiral --------------------------------------------

def make_const_spiral(epsilon: float) -> SplitSystem:
    def f0(x):
        u, v = x[0], x[1]
        r = math.hypot(u, v)
        if r < SINGULAR_RADIUS:
            raise SingularStateError("const_spiral: |x| below singularity threshold", state=x)
        c = 0.25 + 5.0 * u / r
        return np.array([c * u, c * v])

    def f1(x):
        return np.array([-x[1], x[0]])

    return SplitSystem("const_spiral", 2, epsilon, [1.0, 0.0], f0, f1)


# coupled nonlinear spirals -------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def _moduli(x):
    rx = math.hypot(x[0], x[1])
    ry = math.hypot(x[2], x[3])
    if rx < SINGULAR_RADIUS or ry < SINGULAR_RADIUS:
        raise SingularStateError("nonlinear_spirals: |x| or |y| below singularity threshold", state=x)
    return rx, ry


def make_nonlinear_spirals(epsilon: float) -> SplitSystem:
    def f0(x):
        rx, ry = _moduli(x)
        cx = rx ** -1.5 + 5.0 * (x[0] / rx + x[2] / ry) / rx
        cy = ry ** -1.5 + x[2] / (ry * ry)
        return np.array([cx * x[0], cx * x[1], cy * x[2], cy * x[3]])

    def f1(x):
        rx, ry = _moduli(x)
        sy = ry / _SQRT2
        return np.array([-rx * x[1], rx * x[0], -sy * x[3], sy * x[2]])

    return SplitSystem("nonlinear_spirals", 4, epsilon, [1.0, 0.0, 0.0, 1.0], f0, f1)


# resonant stellar orbits ---------------------------------------------------

def make_stellar(epsilon: float, a: float = 2.0, b: float = 1.0) -> SplitSystem:
    if a == 0 or b == 0:
        raise ValueError("a and b must be nonzero")

    def f0(x):
        return np.array([0.0, x[2] * x[2] / a, 0.0, 2.0 * x[0] * x[1] / b])

    def f1(x):
        return np.array([a * x[1], -a * x[0], b * x[3], -b * x[2]])

    name = "stellar" if (a, b) == (2.0, 1.0) else f"stellar_a{a:g}_b{b:g}"
    return SplitSystem(name, 4, epsilon, [1.0, 0.0, 1.0, 0.0], f0, f1)


def stellar_matrix(a: float = 2.0, b: float = 1.0) -> np.ndarray:
    return np.array([[0, a, 0, 0], [-a, 0, 0, 0], [0, 0, 0, b], [0, 0, -b, 0]], dtype=float)


# slow maps -----------------------------------------------------------------

def _first(x):
    return np.array([x[0]])


def _modulus(x):
    return np.array([math.hypot(x[0], x[1])])


def _two_moduli(x):
    return np.array([math.hypot(x[0], x[1]), math.hypot(x[2], x[3])])


def _stellar_slow(x):
    x1, x2, x3, x4 = x
    return np.array([
        x1 * x1 + x2 * x2,
        x3 * x3 + x4 * x4,
        x1 * x3 * x3 + 2.0 * x2 * x3 * x4 - x1 * x4 * x4,
    ])


SLOW_MAPS = {
    "dissipative": SlowMap(1, _first, ("xi",)),
    "const_spiral": SlowMap(1, _modulus, ("abs_x",)),
    "nonlinear_spirals": SlowMap(2, _two_moduli, ("abs_x", "abs_y")),
    "stellar": SlowMap(3, _stellar_slow, ("xi1", "xi2", "xi3")),
}


# registry ------------------------------------------------------------------

@dataclass(frozen=True)
class Benchmark:
    name: str
    make: Callable[..., SplitSystem | PartitionedSystem]
    slow: SlowMap
    reference_kind: str
    macro_dt: float
    t_final: float
    description: str
    oracle_dt_factor: float = 0.1  # DNS oracle micro step / epsilon

    def split_system(self, epsilon: float) -> SplitSystem:
        s = self.make(epsilon)
        return s.embed() if isinstance(s, PartitionedSystem) else s

    def partitioned_system(self, epsilon: float) -> PartitionedSystem | None:
        s = self.make(epsilon)
        return s if isinstance(s, PartitionedSystem) else None


BENCHMARKS = {
    b.name: b
    for b in (
        Benchmark("dissipative", make_dissipative, SLOW_MAPS["dissipative"], "closed_form", 0.2, 1.0,
                  "stiff dissipative slow/fast pair, averaged solution -1", 0.1),
        Benchmark("const_spiral", make_const_spiral, SLOW_MAPS["const_spiral"], "closed_form", 0.25, 3.0,
                  "expanding spiral with constant angular period, averaged |x| = exp(t/4)", 0.1),
        Benchmark("nonlinear_spirals", make_nonlinear_spirals, SLOW_MAPS["nonlinear_spirals"], "dns_oracle",
                  0.6, 3.0, "two coupled spirals with amplitude-dependent frequency", 0.01),
        Benchmark("stellar", make_stellar, SLOW_MAPS["stellar"], "dns_oracle", 0.2, 1.0,
                  "resonant stellar orbits (a=2, b=1) with three hidden slow variables", 0.01),
    )
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; valid ids: {', '.join(BENCHMARKS)}") from None


# references ----------------------------------------------------------------

DNS_DT_FACTOR = 0.1  # dt_dns = epsilon / 10; samples every epsilon


def _closed_form(name: str) -> ReferenceSolution:
    if name == "dissipative":
        return ReferenceSolution("closed_form", lambda t: np.array([-1.0]),
                                 "fixed point of dXi/dt = 1 + Xi at Xi(0) = -1")
    if name == "const_spiral":
        return ReferenceSolution("closed_form", lambda t: np.array([math.exp(t / 4.0)]),
                                 "averaged equation dXi/dt = Xi/4, Xi(0) = 1")
    raise ValueError(f"no closed-form averaged reference for {name!r}")


def default_cache_dir() -> Path:
    return Path(os.environ.get("MSINT_CACHE_DIR", Path.home() / ".cache" / "msint"))


def _cache_path(cache_dir, name, epsilon, dt, t_final) -> Path:
    return Path(cache_dir) / f"dns_{name}_eps{epsilon!r}_dt{dt!r}_T{t_final!r}.csv"


def _table_reference(times, values, provenance) -> ReferenceSolution:
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float).reshape(len(times), -1)
    t_end = times[-1]

    def evaluate(t):
        if t < 0 or t > t_end * (1 + 1e-12):
            raise ValueError(f"t={t} outside reference table [0, {t_end}]")
        return np.array([np.interp(t, times, values[:, j]) for j in range(values.shape[1])])

    return ReferenceSolution("dns_oracle", evaluate, provenance, times, values)


def dns_reference(system: SplitSystem, slow: SlowMap, t_final: float, cache_dir=None,
                  use_cache: bool = True, dt_factor: float = DNS_DT_FACTOR,
                  compiled: bool = True) -> ReferenceSolution:
    """Slow map of an rk4 DNS trajectory with ``dt = dt_factor * epsilon``, sampled every ``epsilon``.

    Tables are cached as CSV keyed by (system, epsilon, dt, T). Registered
    benchmarks use the compiled stepper when numba is importable.
    """
    from . import _fastdns

    if dt_factor > DNS_DT_FACTOR:
        raise ValueError(f"DNS oracle needs dt <= epsilon/10, got dt_factor={dt_factor}")
    eps = system.epsilon
    stride = max(1, round(1.0 / dt_factor))
    dt = eps / stride
    provenance = f"rk4 DNS of {system.name}, eps={eps!r}, dt={dt!r}, T={t_final!r}"
    path = _cache_path(cache_dir or default_cache_dir(), system.name, eps, dt, t_final)
    if use_cache and path.exists():
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return _table_reference(data[:, 0], data[:, 1:], provenance + " (cached)")

    n_samples = max(1, round(t_final / eps))
    spacing = t_final / n_samples
    if compiled and _fastdns.available(system.name):
        dt = spacing / stride
        states, failed = _fastdns.rk4_samples(system.name, system.initial_state, eps, dt,
                                              n_samples * stride, stride)
        if failed >= 0:
            raise NumericFailure("non-finite state in DNS oracle", method="dns", time=failed * dt, step=failed)
        times = np.arange(n_samples + 1) * spacing
        values = slow.over(states)
    else:
        from .multiscale import MethodConfig, dns_integrate

        cfg = MethodConfig("dns", delta_t=dt, macro_dt=spacing, t_final=t_final, micro_scheme="rk4")
        traj = dns_integrate(system, cfg, slow)
        times, values = traj.macro_times, traj.slow
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"s{i + 1}" for i in range(slow.out_dim)])
            for t, s in zip(times, values):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in s])
        tmp.replace(path)
    return _table_reference(times, values, provenance)


def averaged_reference(system_name: str, epsilon: float | None = None, t_final: float | None = None,
                       kind: str = "auto", cache_dir=None, **dns_kw) -> ReferenceSolution:
    """Reference slow trajectory for a registered benchmark.

    ``kind="auto"`` picks the closed form where one exists, otherwise a DNS oracle
    (which needs ``epsilon`` and ``t_final``).
    """
    bench = get_benchmark(system_name)
    if kind == "auto":
        kind = bench.reference_kind
    if kind == "closed_form":
        return _closed_form(system_name)
    if kind not in ("dns", "dns_oracle"):
        raise ValueError(f"unknown reference kind {kind!r}")
    if epsilon is None:
        raise ValueError(f"{system_name}: a DNS-oracle reference needs epsilon")
    if t_final is None:
        t_final = bench.t_final
    dns_kw.setdefault("dt_factor", bench.oracle_dt_factor)
    return dns_reference(bench.split_system(epsilon), bench.slow, t_final, cache_dir=cache_dir, **dns_kw)
