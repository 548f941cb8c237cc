import math

import numpy as np
import pytest

from msint import _fastdns
from msint.multiscale import MethodConfig, dns_integrate
from msint.steppers import rk4_step
from msint.systems import (
    BENCHMARKS,
    PartitionedSystem,
    SingularStateError,
    SLOW_MAPS,
    averaged_reference,
    dns_reference,
    get_benchmark,
    make_const_spiral,
    make_dissipative,
    make_nonlinear_spirals,
    make_stellar,
    stellar_matrix,
)


def test_dissipative_examples():
    s = make_dissipative(2e-4)
    xi, eta = np.array([-1.0]), np.array([1.0])
    assert s.f0(xi, eta)[0] == 1.0
    assert s.f1(xi, eta)[0] == -2.0
    assert (s.slow_dim, s.fast_dim) == (1, 1)


def test_dissipative_reference_is_fixed_point():
    ref = averaged_reference("dissipative")
    assert ref(0.7)[0] == -1.0
    # dXi/dt = 1 + Xi from Xi(0) = -1 stays put under any integrator
    x = np.array([-1.0])
    for _ in range(100):
        x = rk4_step(lambda v: 1.0 + v, x, 0.01)
    assert x[0] == -1.0


def test_const_spiral_examples():
    s = make_const_spiral(1e-3)
    assert np.allclose(s.f1(np.array([1.0, 0.0])), [0.0, 1.0])
    assert SLOW_MAPS["const_spiral"](np.array([3.0, 4.0]))[0] == 5.0
    ref = averaged_reference("const_spiral")
    assert ref(0.0)[0] == 1.0
    assert ref(4.0)[0] == pytest.approx(math.e, rel=1e-15)


def test_const_spiral_singular():
    s = make_const_spiral(1e-3)
    with pytest.raises(SingularStateError):
        s.f0(np.zeros(2))


def test_nonlinear_spirals_examples():
    s = make_nonlinear_spirals(1e-3)
    assert np.allclose(s.f1(np.array([1.0, 0.0, 0.0, 1.0])), [0.0, 1.0, -1 / math.sqrt(2), 0.0], atol=1e-15)
    slow = SLOW_MAPS["nonlinear_spirals"]
    assert np.allclose(slow(np.array([1.0, 0.0, 0.0, 1.0])), [1.0, 1.0])
    assert np.allclose(slow(np.array([0.6, 0.8, 0.0, 2.0])), [1.0, 2.0])


def test_stellar_examples():
    s = make_stellar(1e-4)
    x0 = np.array([1.0, 0.0, 1.0, 0.0])
    assert np.array_equal(s.initial_state, x0)
    assert np.array_equal(SLOW_MAPS["stellar"](x0), [1.0, 1.0, 1.0])
    assert np.array_equal(s.f1(x0), [0.0, -2.0, 0.0, -1.0])
    assert np.array_equal(s.f0(x0), [0.0, 0.5, 0.0, 0.0])
    assert np.array_equal(averaged_reference("stellar", 1e-4, 0.05)(0.0), [1.0, 1.0, 1.0])


def test_stellar_f1_is_skew():
    rng = np.random.default_rng(0)
    s = make_stellar(1e-4)
    A = stellar_matrix()
    assert np.array_equal(A, -A.T)
    for x in rng.normal(size=(100, 4)):
        assert abs(x @ s.f1(x)) <= 1e-12 * (x @ x)
        assert np.allclose(s.f1(x), A @ x, rtol=0, atol=1e-15)


def test_stellar_resonant_quantities_are_slow_under_f1():
    # gradient of each slow map is orthogonal to f1
    rng = np.random.default_rng(1)
    s = make_stellar(1e-4)
    slow = SLOW_MAPS["stellar"]
    for x in rng.normal(size=(20, 4)):
        v = s.f1(x)
        d = (slow(x + 1e-6 * v) - slow(x - 1e-6 * v)) / 2e-6
        assert np.allclose(d, 0.0, atol=1e-6)


def test_embedding_consistency():
    p = make_dissipative(2e-4)
    s = p.embed()
    rng = np.random.default_rng(2)
    for x in rng.normal(size=(50, 2)):
        xi, eta = x[:1], x[1:]
        expect = np.concatenate((p.f0(xi, eta), p.f1(xi, eta) / p.epsilon))
        assert np.allclose(s.full_field(x), expect, rtol=1e-15, atol=0)
        assert np.array_equal(s.f0(x), np.concatenate((p.f0(xi, eta), [0.0])))
        assert np.array_equal(s.f1(x), np.concatenate(([0.0], p.f1(xi, eta))))


def test_const_spiral_pure_rotation():
    eps = 1e-3
    s = make_const_spiral(eps)
    x = np.array([0.3, -1.2])
    y = rk4_step(lambda v: s.f1(v) / eps, x, eps / 20)
    assert abs(np.hypot(*y) / np.hypot(*x) - 1) < 1e-8


def test_epsilon_only_through_integrator():
    for name in BENCHMARKS:
        a = get_benchmark(name).split_system(1e-3)
        b = get_benchmark(name).split_system(1e-5)
        x = np.array(a.initial_state) + 0.1
        assert np.array_equal(a.f0(x), b.f0(x))
        assert np.array_equal(a.f1(x), b.f1(x))
        assert np.allclose(a.full_field(x), a.f0(x) + a.f1(x) / 1e-3)


def test_fields_deterministic_and_finite_at_x0():
    for name in BENCHMARKS:
        s = get_benchmark(name).split_system(1e-3)
        x0 = np.array(s.initial_state)
        assert np.isfinite(s.f0(x0)).all() and np.isfinite(s.f1(x0)).all()
        assert s.f0(x0).tobytes() == s.f0(x0).tobytes()


def test_partitioned_registry():
    assert isinstance(BENCHMARKS["dissipative"].make(1e-3), PartitionedSystem)
    assert BENCHMARKS["const_spiral"].partitioned_system(1e-3) is None


def test_unknown_system_lists_ids():
    with pytest.raises(KeyError, match="const_spiral"):
        get_benchmark("pendulum")


@pytest.mark.parametrize("name", list(BENCHMARKS))
def test_compiled_dns_matches_python(name):
    eps = 1e-3
    s = get_benchmark(name).split_system(eps)
    dt, n = eps / 10, 200
    fast, failed = _fastdns.rk4_samples(name, s.initial_state, eps, dt, n, 20)
    assert failed == -1
    cfg = MethodConfig("dns", delta_t=dt, macro_dt=20 * dt, t_final=n * dt)
    slow = get_benchmark(name).slow
    traj = dns_integrate(s, cfg, slow)
    assert np.allclose(fast, traj.states, rtol=1e-12, atol=1e-13)


def test_dns_cache_roundtrip(tmp_path):
    bench = get_benchmark("stellar")
    s = bench.split_system(1e-3)
    a = dns_reference(s, bench.slow, 0.2, cache_dir=tmp_path)
    files = list(tmp_path.glob("*.csv"))
    assert len(files) == 1
    assert files[0].read_text().splitlines()[0] == "t,s1,s2,s3"
    b = dns_reference(s, bench.slow, 0.2, cache_dir=tmp_path)
    assert "cached" in b.provenance
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.times, b.times)


def test_dns_oracle_rejects_coarse_step():
    bench = get_benchmark("stellar")
    with pytest.raises(ValueError):
        dns_reference(bench.split_system(1e-3), bench.slow, 0.1, dt_factor=0.2, use_cache=False)


def test_stellar_oracle_step_bias():
    # rk4 at eps/10 damps the a=2 rotation enough to move xi3 by ~0.09 by t=1;
    # eps/100 and eps/1000 agree, which is why the rotating oracles default to eps/100
    bench = get_benchmark("stellar")
    s = bench.split_system(1e-4)
    coarse = dns_reference(s, bench.slow, 1.0, dt_factor=0.1)(1.0)
    fine = dns_reference(s, bench.slow, 1.0, dt_factor=0.01)(1.0)
    finer = dns_reference(s, bench.slow, 1.0, dt_factor=0.001)(1.0)
    assert np.max(np.abs(fine - finer)) < 1e-5
    assert abs(coarse[2] - fine[2]) > 0.05
    assert bench.oracle_dt_factor == 0.01
