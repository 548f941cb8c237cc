"""Experiment orchestration: configs, error metrics, sweeps, order studies, CSV output."""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernel_schedule import KERNELS
from .multiscale import (
    ConfigError,
    CostReport,
    MethodConfig,
    Trajectory,
    cost_model,
    effective_epsilon,
    integrate,
    validate_params,
)
from .systems import BENCHMARKS, ReferenceSolution, averaged_reference, get_benchmark

REFERENCE_KINDS = ("auto", "closed_form", "dns")
TOP_KEYS = {"system", "epsilon", "kernel", "methods", "record_intermediate", "reference"}
METHOD_KEYS = {"method", "delta_t", "alpha", "meso_h", "macro_dt", "t_final", "meso_order", "micro_scheme"}


def fmt(v) -> str:
    return f"{float(v):.17g}"


@dataclass
class ExperimentConfig:
    system: str
    epsilon: float
    methods: list[MethodConfig]
    kernel: str = "cosine"
    reference: str = "auto"
    out_dir: Path | None = None
    record_intermediate: bool = False
    cache_dir: Path | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def benchmark(self):
        return get_benchmark(self.system)

    @property
    def t_final(self) -> float:
        return max(m.t_final for m in self.methods)


@dataclass
class ErrorReport:
    label: str
    method: str
    times: np.ndarray
    errors: np.ndarray  # |slow - reference| per component
    norms: np.ndarray  # Euclidean norm of the difference per row
    sup_norm: float
    rel_sup_norm: float
    counters: dict
    wall_time: float

    @property
    def running_sup(self) -> np.ndarray:
        return np.maximum.accumulate(self.norms)


def compute_errors(traj: Trajectory, ref: ReferenceSolution, label: str | None = None) -> ErrorReport:
    ref_vals = ref.at(traj.macro_times)
    diff = traj.slow - ref_vals
    norms = np.sqrt(np.sum(diff * diff, axis=1))
    ref_norms = np.sqrt(np.sum(ref_vals * ref_vals, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ref_norms > 0, norms / ref_norms, np.inf)
    return ErrorReport(label or traj.method, traj.method, traj.macro_times, np.abs(diff), norms,
                       float(norms.max()), float(rel.max()), dict(traj.counters), traj.wall_time)


# configuration -------------------------------------------------------------

def _num(d, key, where, positive=True, required=False, default=None):
    if key not in d:
        if required:
            raise ConfigError(f"{where}: missing required field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{where}.{key}: must be positive, got {v!r}")
    return float(v)


def _method_from_dict(d, system, epsilon, kernel, record, align=True) -> tuple[MethodConfig, list[str]]:
    where = f"methods[{d.get('method', '?')}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - METHOD_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}; allowed {sorted(METHOD_KEYS)}")
    if "method" not in d:
        raise ConfigError("methods[]: missing required field 'method'")
    bench = get_benchmark(system)
    alpha = _num(d, "alpha", where, positive=False)
    meso_h = _num(d, "meso_h", where, positive=False)
    if alpha is not None and alpha < 0:
        raise ConfigError(f"{where}.alpha: must be nonnegative")
    if alpha is not None and meso_h is not None:
        raise ConfigError(f"{where}: give either alpha or meso_h, not both")
    meso_order = d.get("meso_order", 2)
    if meso_order not in (1, 2) or isinstance(meso_order, bool):
        raise ConfigError(f"{where}.meso_order: must be 1 or 2")
    try:
        cfg = MethodConfig(
            method=d["method"],
            delta_t=_num(d, "delta_t", where, default=epsilon / 10),
            macro_dt=_num(d, "macro_dt", where, default=bench.macro_dt),
            t_final=_num(d, "t_final", where, default=bench.t_final),
            alpha=alpha,
            meso_h=meso_h,
            meso_order=meso_order,
            micro_scheme=d.get("micro_scheme", "rk4"),
            kernel=kernel,
            record_intermediate=record,
        )
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None

    notes = []
    if cfg.method != "dns":
        if cfg.method == "mshmm" and bench.partitioned_system(epsilon) is None:
            raise ConfigError(f"{where}: mshmm needs a partitioned system; {system!r} has no slow/fast split")
        report = validate_params(cfg.savings_factor, epsilon, cfg.delta_t,
                                 cfg.meso_h if cfg.method != "mshmm" else None)
        msg = f"{where}: (alpha+1)*epsilon = {report.effective_product:.4g} ({report.status})"
        if report.status == "error":
            raise ConfigError(msg + "; must be <= 1")
        if report.status == "warning":
            notes.append(msg)
        if align and cfg.alpha is not None:
            cfg = cfg.aligned()
    return cfg, notes


def config_from_dict(raw: dict, out_dir=None, align=True) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"config: unknown key(s) {sorted(unknown)}; allowed {sorted(TOP_KEYS)}")
    system = raw.get("system")
    if system not in BENCHMARKS:
        raise ConfigError(f"config.system: unknown system {system!r}; valid ids: {', '.join(BENCHMARKS)}")
    epsilon = _num(raw, "epsilon", "config", required=True)
    kernel = raw.get("kernel", "cosine")
    if kernel not in KERNELS:
        raise ConfigError(f"config.kernel: unknown kernel {kernel!r}; valid ids: {', '.join(KERNELS)}")
    reference = raw.get("reference", "auto")
    if reference not in REFERENCE_KINDS:
        raise ConfigError(f"config.reference: must be one of {REFERENCE_KINDS}")
    if reference == "closed_form" and get_benchmark(system).reference_kind != "closed_form":
        raise ConfigError(f"config.reference: {system!r} has no closed-form reference")
    record = raw.get("record_intermediate", False)
    if not isinstance(record, bool):
        raise ConfigError("config.record_intermediate: expected true or false")
    methods = raw.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("config.methods: expected a non-empty list")
    cfgs, notes = [], []
    for m in methods:
        c, n = _method_from_dict(m, system, epsilon, kernel, record, align)
        cfgs.append(c)
        notes.extend(n)
    return ExperimentConfig(system, epsilon, cfgs, kernel, reference, Path(out_dir) if out_dir else None,
                            record, warnings=notes)


def parse_config(path, overrides: dict | None = None, out_dir=None) -> ExperimentConfig:
    """Strictly parse a JSON experiment config; ``overrides`` replace top-level or per-method fields."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in TOP_KEYS:
            raw[key] = value
        elif key in METHOD_KEYS:
            for m in raw.get("methods", []):
                if isinstance(m, dict):
                    m[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    cfg = config_from_dict(raw, out_dir)
    for note in cfg.warnings:
        print(f"warning: {note}", file=sys.stderr)
    return cfg


# running ---------------------------------------------------------------------

def _labels(methods: list[MethodConfig]) -> list[str]:
    names = [m.method for m in methods]
    seen: dict[str, int] = {}
    out = []
    for n in names:
        if names.count(n) == 1:
            out.append(n)
        else:
            seen[n] = seen.get(n, 0) + 1
            out.append(f"{n}_{seen[n]}")
    return out


def reference_for(cfg: ExperimentConfig, **dns_kw) -> ReferenceSolution:
    kind = cfg.reference
    return averaged_reference(cfg.system, cfg.epsilon, cfg.t_final, kind=kind, cache_dir=cfg.cache_dir, **dns_kw)


def system_for(cfg: ExperimentConfig, method: str):
    bench = cfg.benchmark
    if method == "mshmm":
        return bench.partitioned_system(cfg.epsilon)
    return bench.split_system(cfg.epsilon)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reference: ReferenceSolution
    labels: list[str]
    trajectories: dict[str, Trajectory]
    reports: dict[str, ErrorReport]
    costs: dict[str, CostReport]


def run_experiment(cfg: ExperimentConfig, out_dir=None, reference: ReferenceSolution | None = None) -> ExperimentResult:
    bench = cfg.benchmark
    ref = reference or reference_for(cfg)
    labels = _labels(cfg.methods)
    trajs, reports = {}, {}
    for label, m in zip(labels, cfg.methods):
        traj = integrate(system_for(cfg, m.method), m, bench.slow)
        trajs[label] = traj
        reports[label] = compute_errors(traj, ref, label)
    dns = next((t for t in trajs.values() if t.method == "dns"), None)
    costs = {}
    for label, m in zip(labels, cfg.methods):
        same_span = dns is not None and dns.config.t_final == m.t_final
        costs[label] = cost_model(m, trajs[label], dns if same_span else None)
    result = ExperimentResult(cfg, ref, labels, trajs, reports, costs)
    out_dir = out_dir or cfg.out_dir
    if out_dir is not None:
        write_experiment(result, Path(out_dir))
    return result


def write_trajectory_csv(traj: Trajectory, slow_labels, path) -> None:
    dim = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(dim)] + list(slow_labels))
        for t, x, s in zip(traj.macro_times, traj.states, traj.slow):
            w.writerow([fmt(t)] + [fmt(v) for v in x] + [fmt(v) for v in s])
    if traj.intermediate_times is not None:
        inter = Path(path).with_name(Path(path).stem + "_intermediate.csv")
        with open(inter, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(dim)])
            for t, x in zip(traj.intermediate_times, traj.intermediate_states):
                w.writerow([fmt(t)] + [fmt(v) for v in x])


def write_errors_csv(reports: dict[str, ErrorReport], path) -> None:
    m = next(iter(reports.values())).errors.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "method"] + [f"err_{i + 1}" for i in range(m)] + ["sup_running"])
        for label, rep in reports.items():
            for t, e, s in zip(rep.times, rep.errors, rep.running_sup):
                w.writerow([fmt(t), label] + [fmt(v) for v in e] + [fmt(s)])


def write_cost_csv(costs: dict[str, CostReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "predicted_efficiency", "full_evals", "f0_evals", "wall_seconds"])
        for label, c in costs.items():
            w.writerow([label, fmt(c.predicted_efficiency), c.full_evals, c.f0_evals,
                        f"{c.wall_seconds:.6f}"])


def write_experiment(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    slow_labels = cfg.benchmark.slow.labels
    for label, traj in result.trajectories.items():
        write_trajectory_csv(traj, slow_labels, out_dir / f"trajectory_{label}.csv")
    write_errors_csv(result.reports, out_dir / "errors.csv")
    write_cost_csv(result.costs, out_dir / "cost.csv")
    summary = {
        "system": cfg.system,
        "epsilon": cfg.epsilon,
        "kernel": cfg.kernel,
        "reference": {"kind": result.reference.kind, "provenance": result.reference.provenance},
        "methods": {},
    }
    for label, m in zip(result.labels, cfg.methods):
        rep, traj = result.reports[label], result.trajectories[label]
        eff = effective_epsilon(m.method, cfg.epsilon, m.delta_t, traj.info.get("meso_h"), m.alpha)
        summary["methods"][label] = {
            "method": m.method,
            "delta_t": traj.info.get("delta_t", m.delta_t),
            "alpha": m.savings_factor if m.method != "dns" else 0.0,
            "macro_dt": m.macro_dt,
            "t_final": m.t_final,
            "meso_order": m.meso_order,
            "micro_scheme": m.micro_scheme,
            "effective_epsilon": list(eff) if isinstance(eff, tuple) else eff,
            "sup_error": rep.sup_norm,
            "relative_sup_error": rep.rel_sup_norm,
            "evaluations": dict(sorted(rep.counters.items())),
            "predicted_efficiency": result.costs[label].predicted_efficiency,
        }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# sweeps ----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    alpha: float
    method: str
    sup_error: float
    delta_t: float


def alpha_sweep(system: str, epsilon: float, alphas, base: MethodConfig, reference: str = "auto",
                cache_dir=None, ref: ReferenceSolution | None = None) -> list[SweepRow]:
    """VSHMM and FLAVORS at matched cost (FLAVORS h = alpha * dt) for each alpha."""
    bench = get_benchmark(system)
    sys_ = bench.split_system(epsilon)
    for a in alphas:
        if validate_params(a, epsilon).status == "error":
            raise ConfigError(f"alpha={a}: (alpha+1)*epsilon = {(a + 1) * epsilon:g} > 1")
    if ref is None:
        ref = averaged_reference(system, epsilon, base.t_final, kind=reference, cache_dir=cache_dir)
    rows = []
    for a in alphas:
        for method in ("vshmm", "flavors"):
            cfg = replace(base, method=method, alpha=float(a), meso_h=None).aligned()
            traj = integrate(sys_, cfg, bench.slow)
            rows.append(SweepRow(float(a), method, compute_errors(traj, ref).sup_norm, cfg.delta_t))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "method", "sup_error", "delta_t"])
        for r in rows:
            w.writerow([fmt(r.alpha), r.method, fmt(r.sup_error), fmt(r.delta_t)])


# order study -----------------------------------------------------------------

class InsufficientRowsError(ValueError):
    pass


@dataclass(frozen=True)
class OrderStudyRow:
    mean_meso_step: float
    error: float
    meso_order: int
    delta_t: float


@dataclass
class OrderStudyResult:
    rows: list[OrderStudyRow]
    floor: float
    slopes: dict  # order -> fitted slope or None
    used: dict  # order -> number of rows in the fit
    notes: dict  # order -> reason a fit is missing

    def errors(self, order: int) -> np.ndarray:
        return np.array([r.error for r in self.rows if r.meso_order == order])


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2:
        raise InsufficientRowsError("need at least two points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def fit_above_floor(rows: list[OrderStudyRow], order: int, floor: float, factor: float = 10.0,
                    min_rows: int = 3) -> tuple[float, int]:
    sel = [r for r in rows if r.meso_order == order and r.error > factor * floor]
    if len(sel) < min_rows:
        raise InsufficientRowsError(
            f"order {order}: only {len(sel)} row(s) with error above {factor:g} x floor ({floor:.3e}); need {min_rows}")
    return fit_loglog_slope([r.mean_meso_step for r in sel], [r.error for r in sel]), len(sel)


def order_study(system: str, epsilon: float, alpha: float, delta_ts, macro_dt: float, t_final: float,
                kernel: str = "cosine", micro_scheme: str = "rk4", reference: str = "auto",
                cache_dir=None, ref: ReferenceSolution | None = None) -> OrderStudyResult:
    """VSHMM error against the reference for meso orders 1 and 2 over a list of micro steps.

    The floor is the order-2 error at the smallest micro step; slopes are fitted
    on rows whose error exceeds ten times the floor.
    """
    bench = get_benchmark(system)
    sys_ = bench.split_system(epsilon)
    if ref is None:
        ref = averaged_reference(system, epsilon, t_final, kind=reference, cache_dir=cache_dir)
    rows = []
    for dt in delta_ts:
        if macro_dt < (1 + alpha) * dt:
            raise ConfigError(f"delta_t={dt}: macro_dt must be >= (1+alpha)*delta_t")
        for order in (1, 2):
            cfg = MethodConfig("vshmm", delta_t=dt, macro_dt=macro_dt, t_final=t_final, alpha=alpha,
                               meso_order=order, micro_scheme=micro_scheme, kernel=kernel)
            traj = integrate(sys_, cfg, bench.slow)
            rows.append(OrderStudyRow(traj.info["mean_meso"], compute_errors(traj, ref).sup_norm, order, dt))
    rows.sort(key=lambda r: (-r.mean_meso_step, r.meso_order))
    smallest = min(delta_ts)
    floor = next(r.error for r in rows if r.meso_order == 2 and r.delta_t == smallest)
    slopes, used, notes = {}, {}, {}
    for order in (1, 2):
        try:
            slopes[order], used[order] = fit_above_floor(rows, order, floor)
        except InsufficientRowsError as exc:
            slopes[order], used[order], notes[order] = None, 0, str(exc)
    return OrderStudyResult(rows, floor, slopes, used, notes)


def write_order_csv(result: OrderStudyResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mean_meso_step", "order", "error"])
        for r in result.rows:
            w.writerow([fmt(r.mean_meso_step), r.meso_order, fmt(r.error)])


# efficiency --------------------------------------------------------------------

def efficiency_report(trajectories: list[Trajectory]) -> list[CostReport]:
    """Measured DNS-to-method evaluation ratios beside the ceil(1+alpha)/2 prediction."""
    dns = next((t for t in trajectories if t.method == "dns"), None)
    if dns is None:
        raise ValueError("efficiency report needs a DNS baseline trajectory")
    out = []
    for t in trajectories:
        if t is dns:
            continue
        if not math.isclose(t.macro_times[-1], dns.macro_times[-1], rel_tol=1e-12):
            raise ValueError(f"{t.method}: final time differs from the DNS baseline")
        out.append(cost_model(t.config, t, dns))
    return out
