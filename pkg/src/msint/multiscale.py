"""Trajectory drivers: DNS, MSHMM, FLAVORS and VSHMM.

All drivers sample the state only at macro times ``n * macro_dt``; the cycle
structure inside a macro interval is built so that the last step lands on the
sample time exactly.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel_schedule import build_schedule, get_kernel
from .steppers import STAGES, FieldRef, NumericFailure, euler_step, get_stepper, rk2_step
from .systems import PartitionedSystem, SlowMap, SplitSystem

METHODS = ("dns", "mshmm", "flavors", "vshmm")
ALIGN_RTOL = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    method: str
    delta_t: float
    macro_dt: float
    t_final: float
    alpha: float | None = None
    meso_h: float | None = None
    meso_order: int = 2
    micro_scheme: str = "rk4"
    kernel: str = "cosine"
    record_intermediate: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.delta_t > 0:
            raise ConfigError("delta_t must be positive")
        if not self.macro_dt > 0 or not self.t_final > 0:
            raise ConfigError("macro_dt and t_final must be positive")
        if self.meso_order not in (1, 2):
            raise ConfigError("meso_order must be 1 or 2")
        get_stepper(self.micro_scheme)
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.meso_h is not None and self.meso_h < 0:
            raise ConfigError("meso_h must be nonnegative")
        ratio = self.t_final / self.macro_dt
        if abs(ratio - round(ratio)) > ALIGN_RTOL * max(1.0, ratio):
            raise ConfigError(f"macro_dt={self.macro_dt} does not divide t_final={self.t_final}")
        if self.method in ("flavors", "mshmm") and self.alpha is None and self.meso_h is None:
            raise ConfigError(f"{self.method} needs alpha or meso_h")
        if self.method == "vshmm":
            if self.alpha is None:
                raise ConfigError("vshmm needs alpha")
            if self.macro_dt < (1 + self.alpha) * self.delta_t * (1 - 1e-12):
                raise ConfigError("vshmm needs macro_dt >= (1 + alpha) * delta_t")

    @property
    def n_macro(self) -> int:
        return round(self.t_final / self.macro_dt)

    @property
    def meso_step(self) -> float:
        """Nominal meso step for flavors/mshmm."""
        if self.meso_h is not None:
            return self.meso_h
        if self.method == "mshmm":
            # delta_tau + h_flavors with h_flavors = alpha * delta_tau
            return (1.0 + self.alpha) * self.delta_t
        return (self.alpha or 0.0) * self.delta_t

    @property
    def savings_factor(self) -> float:
        if self.alpha is not None:
            return self.alpha
        if self.meso_h is None:
            return 0.0
        if self.method == "mshmm":
            return self.meso_h / self.delta_t - 1.0
        return self.meso_h / self.delta_t

    def aligned(self) -> MethodConfig:
        """Copy with delta_t nudged so that whole cycles of length (1+alpha)*delta_t tile macro_dt."""
        a = self.savings_factor
        cycle = (1.0 + a) * self.delta_t
        n = max(1, round(self.macro_dt / cycle))
        dt = self.macro_dt / ((1.0 + a) * n)
        if self.meso_h is not None:
            h = self.meso_h * dt / self.delta_t
            return replace(self, delta_t=dt, meso_h=h)
        return replace(self, delta_t=dt)


@dataclass
class Trajectory:
    method: str
    macro_times: np.ndarray
    states: np.ndarray
    slow: np.ndarray
    counters: Counter
    wall_time: float
    config: MethodConfig | None = None
    info: dict = field(default_factory=dict)
    intermediate_times: np.ndarray | None = None
    intermediate_states: np.ndarray | None = None

    @property
    def total_evals(self) -> int:
        return sum(self.counters.values())


@dataclass(frozen=True)
class CostReport:
    method: str
    alpha: float
    predicted_efficiency: float
    effective_epsilon: object = None
    measured_full_evals_dns: int | None = None
    measured_evals_method: int | None = None
    full_evals: int | None = None
    f0_evals: int | None = None
    wall_seconds: float | None = None

    @property
    def measured_ratio(self) -> float | None:
        if self.measured_full_evals_dns is None or not self.measured_evals_method:
            return None
        return self.measured_full_evals_dns / self.measured_evals_method


@dataclass
class ParamReport:
    alpha: float
    epsilon: float
    effective_product: float  # (alpha + 1) * epsilon
    status: str  # ok | warning | error
    step_margins: dict  # name -> (ratio, satisfied)

    @property
    def ok(self) -> bool:
        return self.status != "error"


FACTOR_MUCH_LESS = 10.0


def validate_params(alpha: float, epsilon: float, delta_t: float | None = None,
                    meso_h: float | None = None) -> ParamReport:
    prod = (alpha + 1.0) * epsilon
    status = "ok" if prod <= 0.1 else "warning" if prod <= 1.0 else "error"
    margins = {}
    if delta_t is not None:
        h = alpha * delta_t if meso_h is None else meso_h
        lower = delta_t ** 2 / epsilon ** 2
        upper = delta_t / epsilon
        window = h + delta_t
        r1 = window / lower if lower > 0 else math.inf
        r2 = upper / window
        margins["dt^2/eps^2 << h+dt"] = (r1, r1 >= FACTOR_MUCH_LESS)
        margins["h+dt << dt/eps"] = (r2, r2 >= FACTOR_MUCH_LESS)
    return ParamReport(alpha, epsilon, prod, status, margins)


def effective_epsilon(method: str, epsilon: float, delta_t: float | None = None,
                      meso_h: float | None = None, alpha: float | None = None, kernel_sup: float = 2.0):
    if method == "dns":
        return epsilon
    if method == "mshmm":
        return epsilon * meso_h / delta_t
    if alpha is None:
        alpha = meso_h / delta_t
    if method == "flavors":
        return (1.0 + alpha) * epsilon
    if method == "vshmm":
        return (epsilon, (1.0 + alpha * kernel_sup) * epsilon)
    raise ValueError(f"unknown method {method!r}")


def cost_model(cfg: MethodConfig, trajectory: Trajectory | None = None,
               dns: Trajectory | None = None) -> CostReport:
    alpha = cfg.savings_factor if cfg.method != "dns" else 0.0
    predicted = math.ceil(1.0 + alpha) / 2.0
    kw = {}
    if trajectory is not None:
        kw.update(measured_evals_method=trajectory.total_evals,
                  full_evals=trajectory.counters["full"] + trajectory.counters["f1"],
                  f0_evals=trajectory.counters["f0"], wall_seconds=trajectory.wall_time)
    if dns is not None:
        kw["measured_full_evals_dns"] = dns.counters["full"]
    return CostReport(cfg.method, alpha, predicted, **kw)


# one-cycle maps --------------------------------------------------------------

def flavors_cycle(full, f0, x, delta_t, h, micro=None, meso=euler_step):
    """Micro step of the full field over ``delta_t`` then a meso step of ``f0`` over ``h``."""
    micro = micro or euler_step
    return meso(f0, micro(full, x, delta_t), h)


def mshmm_step(sys: PartitionedSystem, xi, eta, delta_tau, h, f0=None, f1=None):
    """First-order MSHMM: fast Euler update with ``delta_tau``, slow update over ``h`` using the new fast state."""
    f0 = f0 or sys.f0
    f1 = f1 or sys.f1
    eta_new = eta + delta_tau * (f1(xi, eta) / sys.epsilon)
    xi_new = xi + h * f0(xi, eta_new)
    return xi_new, eta_new


# drivers ---------------------------------------------------------------------

def _meso_stepper(order: int):
    return euler_step if order == 1 else rk2_step


def _run_cycles(method, system: SplitSystem, cfg: MethodConfig, slow: SlowMap, plan, info):
    """Shared loop. ``plan()`` returns (micro step, list of meso steps or None) for one macro interval."""
    counters = Counter()
    full = FieldRef(system.full_field, counters, "full")
    f0 = FieldRef(system.f0, counters, "f0")
    micro = get_stepper(cfg.micro_scheme)
    meso = _meso_stepper(cfg.meso_order)
    record = cfg.record_intermediate
    it, ix = ([], []) if record else (None, None)

    x = np.array(system.initial_state, dtype=float)
    states = [x.copy()]
    step = 0
    t = 0.0
    start = _time.perf_counter()
    try:
        for n in range(cfg.n_macro):
            dt, hs = plan()
            t0 = n * cfg.macro_dt
            t = t0
            if hs is None:
                for _ in range(info["steps_per_macro"]):
                    x = micro(full, x, dt)
                    step += 1
                    t += dt
                    if record:
                        it.append(t); ix.append(x)
            else:
                for h in hs:
                    x = micro(full, x, dt)
                    t += dt
                    if record:
                        it.append(t); ix.append(x)
                    x = meso(f0, x, h)
                    step += 1
                    t += h
                    if record:
                        it.append(t); ix.append(x)
            states.append(x.copy())
    except NumericFailure as exc:
        exc.method, exc.time, exc.step = method, t, step
        raise
    wall = _time.perf_counter() - start

    states = np.array(states)
    times = np.arange(cfg.n_macro + 1) * cfg.macro_dt
    traj = Trajectory(method, times, states, slow.over(states), counters, wall, cfg, info)
    if record:
        traj.intermediate_times = np.array(it)
        traj.intermediate_states = np.array(ix).reshape(len(ix), system.dim)
    return traj


def dns_integrate(sys: SplitSystem, cfg: MethodConfig, slow: SlowMap) -> Trajectory:
    n = max(1, round(cfg.macro_dt / cfg.delta_t))
    dt = cfg.macro_dt / n
    if dt > sys.epsilon / 2:
        warnings.warn(f"DNS step {dt:g} exceeds epsilon/2 = {sys.epsilon / 2:g}", RuntimeWarning, stacklevel=2)
    info = {"delta_t": dt, "steps_per_macro": n}
    return _run_cycles("dns", sys, cfg, slow, lambda: (dt, None), info)


def _flavors_steps(cfg: MethodConfig):
    h = cfg.meso_step
    ratio = cfg.macro_dt / (cfg.delta_t + h)
    n = max(1, round(ratio))
    if abs(n - ratio) > ALIGN_RTOL * n:
        raise ConfigError(f"macro_dt={cfg.macro_dt} is not a multiple of delta_t + h = {cfg.delta_t + h}")
    if h == 0:
        return cfg.macro_dt / n, 0.0, n
    return cfg.delta_t, (cfg.macro_dt - n * cfg.delta_t) / n, n


def flavors_integrate(sys: SplitSystem, cfg: MethodConfig, slow: SlowMap) -> Trajectory:
    dt, h, n = _flavors_steps(cfg)
    hs = [h] * n
    info = {"delta_t": dt, "meso_h": h, "cycles_per_macro": n}
    return _run_cycles("flavors", sys, cfg, slow, lambda: (dt, hs), info)


def vshmm_integrate(sys: SplitSystem, cfg: MethodConfig, slow: SlowMap) -> Trajectory:
    kernel = get_kernel(cfg.kernel)
    first = build_schedule(kernel, cfg.delta_t, cfg.alpha, cfg.macro_dt)

    def plan():
        # rebuilt each macro step; identical every time
        p = build_schedule(kernel, cfg.delta_t, cfg.alpha, cfg.macro_dt)
        return p.delta_t, p.meso.tolist()

    info = {"delta_t": first.delta_t, "cycles_per_macro": first.n_cycles, "mean_meso": first.mean_meso,
            "max_meso": float(first.meso.max()), "rounding_defect": first.rounding_defect}
    return _run_cycles("vshmm", sys, cfg, slow, plan, info)


def mshmm_integrate(sys: PartitionedSystem, cfg: MethodConfig, slow: SlowMap | None = None) -> Trajectory:
    if not isinstance(sys, PartitionedSystem):
        raise ConfigError("mshmm needs a partitioned (slow/fast) system")
    h_nom = cfg.meso_step
    ratio = cfg.macro_dt / h_nom
    n = max(1, round(ratio))
    if abs(n - ratio) > ALIGN_RTOL * n:
        raise ConfigError(f"macro_dt={cfg.macro_dt} is not a multiple of h = {h_nom}")
    h = cfg.macro_dt / n
    dtau = cfg.delta_t
    counters = Counter()
    f0 = FieldRef(sys.f0, counters, "f0")
    f1 = FieldRef(sys.f1, counters, "f1")

    xi = np.array(sys.initial_slow)
    eta = np.array(sys.initial_fast)
    states = [np.concatenate((xi, eta))]
    it, ix = ([], []) if cfg.record_intermediate else (None, None)
    step = 0
    start = _time.perf_counter()
    for m in range(cfg.n_macro):
        for j in range(n):
            xi, eta = mshmm_step(sys, xi, eta, dtau, h, f0, f1)
            step += 1
            if not (np.isfinite(xi).all() and np.isfinite(eta).all()):
                raise NumericFailure("non-finite state", np.concatenate((xi, eta)), "mshmm",
                                     m * cfg.macro_dt + (j + 1) * h, step)
            if it is not None:
                it.append(m * cfg.macro_dt + (j + 1) * h); ix.append(np.concatenate((xi, eta)))
        states.append(np.concatenate((xi, eta)))
    wall = _time.perf_counter() - start

    states = np.array(states)
    times = np.arange(cfg.n_macro + 1) * cfg.macro_dt
    if slow is None:
        ns = sys.slow_dim
        slow = SlowMap(ns, lambda x: x[:ns], tuple(f"xi{i + 1}" for i in range(ns)))
    info = {"delta_t": dtau, "meso_h": h, "steps_per_macro": n}
    traj = Trajectory("mshmm", times, states, slow.over(states), counters, wall, cfg, info)
    if it is not None:
        traj.intermediate_times = np.array(it)
        traj.intermediate_states = np.array(ix)
    return traj


def integrate(system, cfg: MethodConfig, slow: SlowMap) -> Trajectory:
    """Dispatch on ``cfg.method``; ``system`` may be split or partitioned."""
    if cfg.method == "mshmm":
        return mshmm_integrate(system, cfg, slow)
    if isinstance(system, PartitionedSystem):
        system = system.embed()
    driver = {"dns": dns_integrate, "flavors": flavors_integrate, "vshmm": vshmm_integrate}[cfg.method]
    return driver(system, cfg, slow)


def per_cycle_evals(cfg: MethodConfig) -> dict:
    """Exact field-evaluation counts for one cycle (one step for dns/mshmm)."""
    if cfg.method == "dns":
        return {"full": STAGES[cfg.micro_scheme]}
    if cfg.method == "mshmm":
        return {"f1": 1, "f0": 1}
    return {"full": STAGES[cfg.micro_scheme], "f0": cfg.meso_order}
