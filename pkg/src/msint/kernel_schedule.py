"""Step-size kernels, the warped clock and per-macro-step cycle schedules.

A kernel ``K`` on [0, 1] shapes the meso steps inside one macro interval of
length ``dT``. The rescaled kernel is ``K(t/dT)``; its antiderivative
``theta(t) = dT * Kint(t/dT)`` maps [0, dT] onto itself.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Kernel:
    name: str
    func: Callable
    q: int
    antiderivative_fn: Callable | None = None
    sup_norm: float | None = None
    symmetric: bool = False  # K(s) == K(1 - s); schedules are then mirrored exactly

    def __call__(self, s):
        return self.func(s)

    def antiderivative(self, s):
        if self.antiderivative_fn is not None:
            return self.antiderivative_fn(s)
        return integrate.quad(self.func, 0.0, s, epsabs=1e-14, epsrel=1e-13)[0]

    @property
    def max_value(self) -> float:
        if self.sup_norm is not None:
            return self.sup_norm
        return float(np.max(self.func(np.linspace(0.0, 1.0, 10001))))


_TWO_PI = 2.0 * math.pi


def _x_minus_sin(x):
    # x - sin(x) without cancellation for small x (Taylor series to x^17)
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    x2 = x * x
    series, term = np.zeros_like(x), x.copy()
    for n in range(3, 19, 2):
        term = term * x2 / ((n - 1) * n) if n > 3 else x * x2 / 6.0
        series = series + (term if (n // 2) % 2 == 1 else -term)
    out = np.where(small, series, x - np.sin(x))
    return out if out.ndim else float(out)


def cosine_kernel() -> Kernel:
    """``K(s) = 1 - cos(2 pi s) = 2 sin(pi s)^2``, sup norm 2, regularity order 1."""
    return Kernel(
        "cosine",
        lambda s: 2.0 * np.sin(np.pi * s) ** 2,
        1,
        lambda s: _x_minus_sin(_TWO_PI * np.asarray(s, dtype=float)) / _TWO_PI,
        2.0,
        True,
    )


def uniform_kernel() -> Kernel:
    # violates the endpoint condition on purpose; reduces VSHMM to FLAVORS
    return Kernel("uniform", lambda s: np.ones_like(s, dtype=float) if np.ndim(s) else 1.0, 0,
                  lambda s: s, 1.0, True)


def quadratic_kernel() -> Kernel:
    # unit mass but K'(0) = 6; negative control for the r = 1 condition
    return Kernel("quadratic", lambda s: 6.0 * s * (1.0 - s), 1,
                  lambda s: 3.0 * s * s - 2.0 * s ** 3, 1.5, True)


KERNELS = {"cosine": cosine_kernel, "uniform": uniform_kernel, "quadratic": quadratic_kernel}


def get_kernel(name: str) -> Kernel:
    try:
        return KERNELS[name]()
    except KeyError:
        raise KeyError(f"unknown kernel {name!r}; valid ids: {', '.join(KERNELS)}") from None


# validation ------------------------------------------------------------------

@dataclass
class KernelReport:
    kernel: str
    q: int
    moment_defect: float
    moment_defect_quadrature: float
    endpoint_derivatives: dict  # r -> (|d^r K(0)|, |d^r K(1)|)
    min_value: float
    tol_moment: float
    tol_reg: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def regularity_failures(self) -> list[int]:
        return [r for r, (a, b) in self.endpoint_derivatives.items() if max(a, b) > self.tol_reg]

    def lines(self) -> list[str]:
        out = [f"kernel {self.kernel} (q={self.q})",
               f"  moment defect (closed form)   {self.moment_defect:.3e}",
               f"  moment defect (quadrature)    {self.moment_defect_quadrature:.3e}"]
        for r, (a, b) in self.endpoint_derivatives.items():
            out.append(f"  |d^{r}K| at s=0: {a:.3e}  s=1: {b:.3e}")
        out.append(f"  min K on grid                 {self.min_value:.3e}")
        out.append("  PASS" if self.passed else "  FAIL: " + "; ".join(self.failures))
        return out


def central_difference(f, s: float, r: int, width: float = 1e-4) -> float:
    """r-th central difference quotient of ``f`` at ``s`` with step ``width``."""
    if r == 0:
        return float(f(s))
    total = 0.0
    for j in range(r + 1):
        total += (-1) ** j * math.comb(r, j) * float(f(s + (r / 2 - j) * width))
    return total / width ** r


def validate_kernel(k: Kernel, tol_moment: float = 1e-8, tol_reg: float = 1e-6,
                    panels: int = 10_000, width: float = 1e-4) -> KernelReport:
    if tol_moment <= 0 or tol_reg <= 0:
        raise ValueError("tolerances must be positive")
    defect = abs(float(k.antiderivative(1.0)) - 1.0)
    grid = np.linspace(0.0, 1.0, panels + 1)
    values = np.asarray(k(grid), dtype=float) * np.ones_like(grid)
    defect_quad = abs(float(integrate.simpson(values, x=grid)) - 1.0)
    derivs = {r: (abs(central_difference(k, 0.0, r, width)), abs(central_difference(k, 1.0, r, width)))
              for r in range(k.q + 1)}
    min_value = float(values.min())

    report = KernelReport(k.name, k.q, defect, defect_quad, derivs, min_value, tol_moment, tol_reg)
    if defect > tol_moment:
        report.failures.append(f"moment defect {defect:.3e} > {tol_moment:g}")
    if defect_quad > tol_moment:
        report.failures.append(f"quadrature moment defect {defect_quad:.3e} > {tol_moment:g}")
    for r in report.regularity_failures():
        report.failures.append(f"regularity r={r}: endpoint derivative {max(derivs[r]):.3e} > {tol_reg:g}")
    if min_value < 0:
        report.failures.append(f"negative value {min_value:.3e}")
    return report


# warped clock ----------------------------------------------------------------

def theta(k: Kernel, macro_dt: float, t: float) -> float:
    if not 0.0 <= t <= macro_dt:
        raise ValueError(f"t={t} outside [0, {macro_dt}]")
    return macro_dt * float(k.antiderivative(t / macro_dt))


def theta_inverse(k: Kernel, macro_dt: float, tau: float, tol: float = 4e-16) -> float:
    """Solve ``theta(u) = tau`` by safeguarded Newton on [0, 1], stopping when the step in ``u/dT`` is below ``tol``.

    Near the endpoints the kernel vanishes and theta is flat, so the residual
    alone says little about the error in ``u``; bisection takes over there.
    """
    if not 0.0 <= tau <= macro_dt:
        raise ValueError(f"tau={tau} outside [0, {macro_dt}]")
    target = tau / macro_dt
    if target == 0.0:
        return 0.0
    if target == 1.0:
        return macro_dt
    lo, hi = 0.0, 1.0
    s = target
    for _ in range(400):
        g = float(k.antiderivative(s)) - target
        if g == 0.0:
            break
        if g > 0:
            hi = s
        else:
            lo = s
        dk = float(k(s))
        s_new = s - g / dk if dk > 1e-6 else -1.0
        if not lo < s_new < hi:
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= tol * max(s, 1e-300) or hi - lo <= 1e-24:
            s = s_new
            break
        s = s_new
    return macro_dt * s


# schedules -------------------------------------------------------------------

@dataclass(frozen=True)
class SchedulePlan:
    """Micro/meso step pairs covering one macro interval."""

    kernel: str
    delta_t: float
    alpha: float
    macro_dt: float
    n_cycles: int
    meso: np.ndarray = field(repr=False)
    scale: float  # lambda: h_k = scale * K((k + 1/2) / N)
    rounding_defect: float  # |N - dT / ((1 + alpha) dt)|

    @property
    def cycles(self) -> list[tuple[float, float]]:
        return [(self.delta_t, h) for h in self.meso.tolist()]

    @property
    def integral_n(self) -> bool:
        return self.rounding_defect <= 1e-6 * self.n_cycles

    @property
    def coverage(self) -> float:
        return float(self.n_cycles * self.delta_t + math.fsum(self.meso.tolist()))

    @property
    def mean_meso(self) -> float:
        return float(np.mean(self.meso))

    def start_times(self) -> np.ndarray:
        steps = self.delta_t + self.meso
        return np.concatenate(([0.0], np.cumsum(steps)[:-1]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "h_k"])
            for i, h in enumerate(self.meso.tolist()):
                w.writerow([i, f"{h:.17g}"])


def build_schedule(k: Kernel, delta_t: float, alpha: float, macro_dt: float) -> SchedulePlan:
    """Cycles ``(dt, h_k)`` tiling ``[0, macro_dt]``.

    ``N = round(dT / ((1 + alpha) dt))`` cycles; meso steps follow the kernel on
    the midpoint grid ``(k + 1/2) / N`` and are scaled so the cycles sum to dT.
    With ``alpha = 0`` the micro step is adjusted to ``dT / N`` instead.
    """
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    cycle = (1.0 + alpha) * delta_t
    if macro_dt < cycle * (1 - 1e-12):
        raise ValueError(f"macro step {macro_dt} cannot fit one cycle of length (1+alpha)*dt = {cycle}")
    ratio = macro_dt / cycle
    n = max(1, round(ratio))

    if alpha == 0:
        return SchedulePlan(k.name, macro_dt / n, 0.0, macro_dt, n, np.zeros(n), 0.0, abs(n - ratio))

    while n > 1 and n * delta_t > macro_dt:
        n -= 1
    budget = macro_dt - n * delta_t
    if k.symmetric:
        half = (n + 1) // 2
        first = np.asarray(k((np.arange(half) + 0.5) / n), dtype=float) * np.ones(half)
        weights = np.concatenate((first, first[: n - half][::-1]))
    else:
        weights = np.asarray(k((np.arange(n) + 0.5) / n), dtype=float) * np.ones(n)
    total = weights.sum()
    scale = budget / total if total > 0 else 0.0
    meso = scale * weights
    meso.setflags(write=False)
    return SchedulePlan(k.name, delta_t, alpha, macro_dt, n, meso, scale, abs(n - ratio))


def pointwise_h(k: Kernel, delta_t: float, alpha: float, macro_dt: float, t: float) -> float:
    """``alpha * dt * K(theta^{-1}(t mod dT) / dT)``, the continuous step-size law."""
    tau = math.fmod(t, macro_dt)
    return alpha * delta_t * float(k(theta_inverse(k, macro_dt, tau) / macro_dt))
