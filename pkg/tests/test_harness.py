import csv
import json
import math

import numpy as np
import pytest

from msint import cli
from msint.harness import (
    InsufficientRowsError,
    OrderStudyRow,
    config_from_dict,
    efficiency_report,
    fit_above_floor,
    fit_loglog_slope,
    parse_config,
    run_experiment,
)
from msint.multiscale import ConfigError, MethodConfig, integrate
from msint.systems import averaged_reference, dns_reference, get_benchmark


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


SMALL = {
    "system": "const_spiral",
    "epsilon": 1e-3,
    "methods": [
        {"method": "dns", "macro_dt": 0.05, "t_final": 0.5},
        {"method": "flavors", "alpha": 9, "macro_dt": 0.05, "t_final": 0.5},
        {"method": "vshmm", "alpha": 9, "macro_dt": 0.05, "t_final": 0.5},
    ],
}


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {"system": "const_spiral", "epsilon": 1e-3, "methods": [{"method": "dns"}]}))
    m = cfg.methods[0]
    assert m.delta_t == pytest.approx(1e-4)
    assert (m.macro_dt, m.t_final) == (0.25, 3.0)
    assert (m.meso_order, m.micro_scheme, m.kernel) == (2, "rk4", "cosine")
    assert cfg.reference == "auto" and cfg.record_intermediate is False


def test_config_rejects_large_alpha(tmp_path):
    raw = {"system": "const_spiral", "epsilon": 1e-2, "methods": [{"method": "vshmm", "alpha": 200, "delta_t": 1e-5}]}
    with pytest.raises(ConfigError, match="alpha"):
        config_from_dict(raw)
    assert cli.main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path / "o")]) == 2


def test_config_warning_printed(tmp_path, capsys):
    raw = {"system": "const_spiral", "epsilon": 1e-3,
           "methods": [{"method": "flavors", "alpha": 199, "delta_t": 1e-5, "macro_dt": 0.25}]}
    parse_config(write(tmp_path, raw))
    assert "warning" in capsys.readouterr().err


@pytest.mark.parametrize("raw,match", [
    ({"system": "pendulum", "epsilon": 1e-3, "methods": [{"method": "dns"}]}, "const_spiral"),
    ({"system": "const_spiral", "epsilon": 1e-3, "methods": [{"method": "dns"}], "colour": 1}, "unknown key"),
    ({"system": "const_spiral", "epsilon": 1e-3, "methods": [{"method": "dns", "dt": 1}]}, "unknown key"),
    ({"system": "const_spiral", "epsilon": -1, "methods": [{"method": "dns"}]}, "positive"),
    ({"system": "const_spiral", "methods": [{"method": "dns"}]}, "epsilon"),
    ({"system": "const_spiral", "epsilon": 1e-3, "methods": []}, "non-empty"),
    ({"system": "const_spiral", "epsilon": 1e-3, "methods": [{"method": "flavors", "alpha": 1, "meso_h": 1e-4}]},
     "either"),
    ({"system": "const_spiral", "epsilon": 1e-3, "methods": [{"method": "mshmm", "alpha": 9}]}, "partitioned"),
    ({"system": "stellar", "epsilon": 1e-3, "reference": "closed_form", "methods": [{"method": "dns"}]},
     "closed-form"),
    ({"system": "const_spiral", "epsilon": 1e-3, "kernel": "gauss", "methods": [{"method": "dns"}]}, "cosine"),
    ({"system": "const_spiral", "epsilon": 1e-3, "methods": [{"method": "dns", "macro_dt": 0.7}]}, "divide"),
])
def test_config_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"system": "const_spiral",\n "epsilon": }')
    with pytest.raises(ConfigError, match=":2:"):
        parse_config(p)
    with pytest.raises(ConfigError, match="no such file"):
        parse_config(tmp_path / "missing.json")


def test_overrides(tmp_path):
    cfg = parse_config(write(tmp_path, SMALL), {"epsilon": 2e-3, "t_final": 0.25})
    assert cfg.epsilon == 2e-3
    assert all(m.t_final == 0.25 for m in cfg.methods)
    assert cfg.methods[0].delta_t == pytest.approx(2e-4)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_outputs_recomputable(tmp_path):
    cfg = config_from_dict(SMALL)
    res = run_experiment(cfg, tmp_path)
    for name in ("trajectory_dns.csv", "trajectory_flavors.csv", "trajectory_vshmm.csv",
                 "errors.csv", "cost.csv", "summary.json"):
        assert (tmp_path / name).exists()
    rows = read_csv(tmp_path / "errors.csv")
    summary = json.loads((tmp_path / "summary.json").read_text())
    for label in res.labels:
        mine = [r for r in rows if r["method"] == label]
        errs = np.array([float(r["err_1"]) for r in mine])
        assert float(mine[-1]["sup_running"]) == errs.max() == res.reports[label].sup_norm
        assert summary["methods"][label]["sup_error"] == errs.max()
    traj = read_csv(tmp_path / "trajectory_vshmm.csv")
    assert list(traj[0]) == ["t", "x1", "x2", "abs_x"]
    assert float(traj[-1]["t"]) == 0.5
    cost = {r["method"]: r for r in read_csv(tmp_path / "cost.csv")}
    assert float(cost["vshmm"]["predicted_efficiency"]) == 5.0
    assert int(cost["vshmm"]["f0_evals"]) == res.trajectories["vshmm"].counters["f0"]


def test_rerun_is_idempotent(tmp_path):
    cfg = config_from_dict(SMALL)
    run_experiment(cfg, tmp_path)
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    run_experiment(cfg, tmp_path)
    for p in tmp_path.iterdir():
        if p.name == "cost.csv":
            # wall_seconds is a timing, everything else must match
            strip = lambda b: [r.rsplit(",", 1)[0] for r in b.decode().splitlines()]
            assert strip(p.read_bytes()) == strip(first[p.name])
        else:
            assert p.read_bytes() == first[p.name], p.name


def test_duplicate_methods_get_labels(tmp_path):
    raw = {"system": "const_spiral", "epsilon": 1e-3, "methods": [
        {"method": "vshmm", "alpha": 4, "macro_dt": 0.05, "t_final": 0.1},
        {"method": "vshmm", "alpha": 9, "macro_dt": 0.05, "t_final": 0.1}]}
    res = run_experiment(config_from_dict(raw), tmp_path)
    assert res.labels == ["vshmm_1", "vshmm_2"]
    assert (tmp_path / "trajectory_vshmm_2.csv").exists()


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
def test_fitter_recovers_planted_slope(p):
    x = np.geomspace(1e-4, 1e-1, 7)
    assert abs(fit_loglog_slope(x, 3.7 * x ** p) - p) <= 1e-8


def test_floor_rule():
    rows = [OrderStudyRow(h, 5.0 * h * h, 2, h / 50) for h in (1e-1, 5e-2, 2.5e-2)]
    rows += [OrderStudyRow(1e-3, 1e-7, 2, 1e-3 / 50)]
    slope, used = fit_above_floor(rows, 2, 1e-7)
    assert used == 3 and slope == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(InsufficientRowsError):
        fit_above_floor(rows, 2, 1e-3)


def efficiency_trajs(micro, order, alpha):
    b = get_benchmark("const_spiral")
    sys_ = b.split_system(1e-3)
    dns = integrate(sys_, MethodConfig("dns", delta_t=1e-4, macro_dt=0.101, t_final=1.01, micro_scheme=micro), b.slow)
    cfg = MethodConfig("vshmm", delta_t=1e-4, macro_dt=0.101, t_final=1.01, alpha=alpha,
                       micro_scheme=micro, meso_order=order)
    return [dns, integrate(sys_, cfg, b.slow)]


def test_efficiency_euler():
    (rep,) = efficiency_report(efficiency_trajs("euler", 1, 100))
    assert rep.measured_ratio == 50.5 == rep.predicted_efficiency


def test_efficiency_alpha_zero():
    (rep,) = efficiency_report(efficiency_trajs("euler", 1, 0.0))
    assert rep.measured_ratio == 0.5 == rep.predicted_efficiency


def test_efficiency_rk4_rk2():
    (rep,) = efficiency_report(efficiency_trajs("rk4", 2, 100))
    assert rep.measured_ratio == pytest.approx(404 / 6)


def test_efficiency_needs_dns():
    with pytest.raises(ValueError, match="DNS"):
        efficiency_report(efficiency_trajs("euler", 1, 100)[1:])


def test_reference_consistency():
    b = get_benchmark("const_spiral")
    ref = dns_reference(b.split_system(1e-5), b.slow, 3.0, dt_factor=0.01)
    closed = averaged_reference("const_spiral")
    for t in (1.0, 2.0, 3.0):
        assert abs(ref(t)[0] - closed(t)[0]) < 1e-4


# command line ------------------------------------------------------------------

def test_cli_list_and_kernel(capsys):
    assert cli.main(["list-problems"]) == 0
    out = capsys.readouterr().out
    for name in ("dissipative", "const_spiral", "nonlinear_spirals", "stellar"):
        assert name in out
    assert cli.main(["validate-kernel", "--kernel", "cosine"]) == 0
    assert cli.main(["validate-kernel", "--kernel", "quadratic"]) == 1
    assert "r=1" in capsys.readouterr().out


def test_cli_run(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(write(tmp_path, SMALL)), "--out", str(out)]) == 0
    assert (out / "errors.csv").exists()
    assert "vshmm" in capsys.readouterr().out


def test_cli_unknown_system(tmp_path, capsys):
    raw = dict(SMALL, system="pendulum")
    assert cli.main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 2
    assert "valid ids" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_numeric_failure(tmp_path, capsys):
    raw = {"system": "const_spiral", "epsilon": 1e-3,
           "methods": [{"method": "dns", "delta_t": 1e-3, "micro_scheme": "euler"}]}
    assert cli.main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "method=dns" in err and "step=" in err and "t=" in err


def test_cli_sweep(tmp_path):
    raw = {"system": "const_spiral", "epsilon": 1e-3,
           "methods": [{"method": "vshmm", "alpha": 9, "macro_dt": 0.05, "t_final": 0.2}]}
    out = tmp_path / "sw"
    assert cli.main(["sweep-alpha", "--config", str(write(tmp_path, raw)), "--out", str(out), "--alphas", "0,4,9"]) == 0
    rows = read_csv(out / "alpha_sweep.csv")
    assert [(r["alpha"], r["method"]) for r in rows][:2] == [("0", "vshmm"), ("0", "flavors")]
    # alpha = 0: both coincide with DNS
    assert rows[0]["sup_error"] == rows[1]["sup_error"]
    assert cli.main(["sweep-alpha", "--config", str(write(tmp_path, raw)), "--out", str(out), "--alphas", "x"]) == 2


def test_cli_order_study(tmp_path, capsys):
    raw = {"system": "const_spiral", "epsilon": 1e-3,
           "methods": [{"method": "vshmm", "alpha": 9, "delta_t": 4e-4, "macro_dt": 0.05, "t_final": 0.2}]}
    out = tmp_path / "os"
    assert cli.main(["order-study", "--config", str(write(tmp_path, raw)), "--out", str(out), "--halvings", "2"]) == 0
    rows = read_csv(out / "order_study.csv")
    assert list(rows[0]) == ["mean_meso_step", "order", "error"]
    steps = [float(r["mean_meso_step"]) for r in rows]
    assert steps == sorted(steps, reverse=True)
    assert len(rows) == 6
