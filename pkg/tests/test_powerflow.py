import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotstart.errors import MissingInput, NonConvergence
from hotstart.network import build_dc, build_ybus
from hotstart.powerflow import (
    InitialConditions,
    InitMode,
    LoadScenario,
    NewtonWorkspace,
    assemble_initial,
    compute_mismatch,
    solve_acpf,
    solve_dcpf,
)

from _cases import branch, bus, gen, make_net, three_bus_ring, two_bus
from _oracle import ppc_for, pypower

STUDY = ["case9", "case14", "case118", "pegase"]


def _solve(net, mode="flat", tol=1e-10, scenario=None):
    dc = solve_dcpf(net, build_dc(net), scenario)
    init = assemble_initial(net, mode, dc_solution=dc)
    return solve_acpf(net, build_ybus(net), scenario, init, tol=tol)


# -- DC -------------------------------------------------------------------------


def test_dc_zero_injection():
    net = make_net([bus(1, 3, va=5.0), bus(2, 1), bus(3, 1)], [gen(1)],
                   [branch(1, 2), branch(2, 3)])
    sol = solve_dcpf(net, build_dc(net))
    np.testing.assert_allclose(sol.va, np.deg2rad(5.0), rtol=0, atol=1e-14)
    assert sol.iterations == 0
    assert np.all(sol.vm == 1.0)


def test_dc_two_bus():
    sol = solve_dcpf(two_bus(), build_dc(two_bus()))
    assert sol.va[1] == pytest.approx(-0.1, abs=1e-15)


def test_dc_three_bus_ring():
    net = three_bus_ring()
    sol = solve_dcpf(net, build_dc(net))
    np.testing.assert_allclose(sol.va, [0.0, 1 / 30, -1 / 30], atol=1e-15)


def test_dc_shunt_conductance_acts_as_load():
    net = make_net([bus(1, 3), bus(2, 1, gs=100.0)], [gen(1)], [branch(1, 2)])
    assert solve_dcpf(net, build_dc(net)).va[1] == pytest.approx(-0.1)


@pytest.mark.parametrize("name", STUDY)
def test_dc_residual(name, request):
    net = request.getfixturevalue(name)
    assert solve_dcpf(net, build_dc(net)).max_mismatch < 1e-10


def test_dc_linearity(case118):
    dc = build_dc(case118)
    # zero generation so doubling demand doubles every net injection
    base = LoadScenario(case118.pd - case118.pg, case118.qd)
    doubled = LoadScenario(2 * base.pd, base.qd)
    pg = case118.pg
    net = case118
    a = solve_dcpf(net, dc, LoadScenario(base.pd + pg, base.qd))
    b = solve_dcpf(net, dc, LoadScenario(doubled.pd + pg, base.qd))
    np.testing.assert_allclose(b.va - dc.slack_va, 2 * (a.va - dc.slack_va), atol=1e-10)


@pytest.mark.parametrize("name", ["case118", "case2869pegase"])
def test_dc_matches_oracle(name, request):
    pp = pypower()
    net = request.getfixturevalue("pegase" if name.endswith("pegase") else name)
    ref, ok = pp.rundcpf(ppc_for(name), pp.ppoption(VERBOSE=0, OUT_ALL=0))
    assert ok
    va = solve_dcpf(net, build_dc(net)).va
    np.testing.assert_allclose(va, np.deg2rad(ref["bus"][:, 8]), atol=1e-9)


# -- AC -------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["case118", "case2869pegase"])
def test_ac_matches_oracle(name, request):
    pp = pypower()
    net = request.getfixturevalue("pegase" if name.endswith("pegase") else name)
    ref, ok = pp.runpf(ppc_for(name), pp.ppoption(PF_TOL=1e-8, VERBOSE=0, OUT_ALL=0))
    assert ok
    sol = _solve(net, "flat", tol=1e-8)
    assert sol.converged and sol.iterations <= 10
    np.testing.assert_allclose(sol.vm, ref["bus"][:, 7], atol=1e-8)
    np.testing.assert_allclose(sol.va, np.deg2rad(ref["bus"][:, 8]), atol=1e-8)


def test_ac_flat_118_stock(case118):
    sol = _solve(case118, "flat", tol=1e-3)
    assert sol.converged
    assert sol.iterations <= 10
    assert sol.max_mismatch < 1e-3


def test_ac_two_bus_closed_form():
    net = two_bus(load_mw=100.0, x=0.1)
    sol = _solve(net, "flat", tol=1e-12)
    # lossless line, unity-pf load: V^2 (1 - V^2) = (P x)^2 and cos(delta) = V
    v2 = (1 + np.sqrt(1 - 4 * 0.01)) / 2
    vm = np.sqrt(v2)
    assert sol.vm[1] == pytest.approx(vm, abs=1e-6)
    assert sol.va[1] == pytest.approx(-np.arccos(vm), abs=1e-6)
    v = sol.vm * np.exp(1j * sol.va)
    s1 = v[1] * np.conj((build_ybus(net) @ v)[1])
    assert s1 == pytest.approx(-1.0 + 0j, abs=1e-10)


def test_exact_start_takes_zero_iterations(case118):
    sol = _solve(case118, tol=1e-10)
    again = solve_acpf(case118, build_ybus(case118), None,
                       InitialConditions(sol.vm, sol.va, InitMode.HOT), tol=1e-8)
    assert again.iterations == 0 and again.converged


@pytest.mark.parametrize("name", ["case9", "case14", "case118"])
def test_converged_recheck(name, request):
    net = request.getfixturevalue(name)
    sol = _solve(net, "warm", tol=1e-3)
    dp, dq = compute_mismatch(net, build_ybus(net), None, sol.vm, sol.va)
    assert max(np.abs(dp).max(), np.abs(dq).max()) < 1e-3
    assert max(np.abs(dp).max(), np.abs(dq).max()) == pytest.approx(sol.max_mismatch)


def test_mismatch_zero_on_unloaded_lossless():
    net = make_net([bus(1, 3), bus(2, 1), bus(3, 2)], [gen(1), gen(3)],
                   [branch(1, 2), branch(2, 3)])
    dp, dq = compute_mismatch(net, build_ybus(net), None, np.ones(3), np.zeros(3))
    assert np.all(dp == 0) and np.all(dq == 0)


def test_mismatch_masks():
    net = three_bus_ring()
    dp, dq = compute_mismatch(net, build_ybus(net), None, np.ones(3), np.zeros(3))
    assert dp[0] == 0 and dq[0] == 0 and dq[1] == 0
    assert dp[1] == pytest.approx(-1.0) and dp[2] == pytest.approx(1.0)


def test_mismatch_first_order_in_angle():
    net = two_bus()
    ybus = build_ybus(net)
    sol = _solve(net, tol=1e-12)
    eps = 1e-6
    va = sol.va.copy()
    va[1] += eps
    dp0, _ = compute_mismatch(net, ybus, None, sol.vm, sol.va)
    dp1, _ = compute_mismatch(net, ybus, None, sol.vm, va)
    # dP1/dtheta1 = V0 V1 cos(theta1 - theta0) / x
    slope = sol.vm[1] * np.cos(sol.va[1]) / 0.1
    assert (dp1[1] - dp0[1]) / eps == pytest.approx(slope, rel=1e-5)


def test_jacobian_matches_finite_differences(case14):
    net = case14
    ybus = build_ybus(net)
    ws = NewtonWorkspace(net, ybus)
    rng = np.random.default_rng(3)
    vm = 1 + 0.02 * rng.standard_normal(net.n_bus)
    va = 0.1 * rng.standard_normal(net.n_bus)
    v = vm * np.exp(1j * va)
    jac = ws.assemble(ybus.data, v, ybus @ v).toarray()
    pvpq, pq = net.pvpq, net.pq

    def f(x):
        a, m = va.copy(), vm.copy()
        a[pvpq] = x[:len(pvpq)]
        m[pq] = x[len(pvpq):]
        dp, dq = compute_mismatch(net, ybus, None, m, a)
        return np.r_[dp[pvpq], dq[pq]]

    x0 = np.r_[va[pvpq], vm[pq]]
    h = 1e-7
    fd = np.column_stack([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(len(x0))])
    np.testing.assert_allclose(jac, fd, atol=1e-6)


def test_quadratic_convergence(case118):
    sol = _solve(case118, tol=1e-10)
    rng = np.random.default_rng(0)
    init = InitialConditions(sol.vm + 1e-4 * rng.standard_normal(118),
                             sol.va + 1e-4 * rng.standard_normal(118), InitMode.HOT)
    again = solve_acpf(case118, build_ybus(case118), None, init, tol=1e-3)
    assert again.converged and again.iterations <= 2


def test_bit_deterministic(case118):
    a, b = _solve(case118, "warm", 1e-6), _solve(case118, "warm", 1e-6)
    assert a.iterations == b.iterations
    assert a.vm.tobytes() == b.vm.tobytes() and a.va.tobytes() == b.va.tobytes()


def test_warm_iterations_depend_on_tolerance(case118):
    # stock 118-bus warm start: mismatch 2.56 -> 0.126 -> 3.6e-4 -> 7e-9 pu
    assert _solve(case118, "warm", 1e-3).iterations == 2
    assert _solve(case118, "warm", 1e-5).iterations == 3


def test_nonconvergence():
    net = two_bus(load_mw=1000.0)
    dc = solve_dcpf(net, build_dc(net))
    init = assemble_initial(net, "warm", dc)
    with pytest.raises(NonConvergence) as e:
        solve_acpf(net, build_ybus(net), None, init, max_iter=5)
    assert e.value.iterations == 5
    sol = solve_acpf(net, build_ybus(net), None, init, max_iter=5, strict=False)
    assert not sol.converged and sol.iterations == 5


def test_tolerance_must_be_positive(case9):
    init = assemble_initial(case9, "flat")
    with pytest.raises(ValueError):
        solve_acpf(case9, build_ybus(case9), None, init, tol=0.0)


# -- initial conditions ----------------------------------------------------------


def test_flat_init():
    net = make_net([bus(1, 3, vm=1.01), bus(2, 2), bus(3, 1)], [gen(1, vg=1.01), gen(2, vg=1.02)],
                   [branch(1, 2), branch(2, 3)])
    init = assemble_initial(net, "flat")
    assert init.vm0.tolist() == [1.01, 1.02, 1.0]
    assert init.va0.tolist() == [0.0, 0.0, 0.0]


def test_slack_magnitude_follows_generator_setpoint(case9):
    # case9 stores Vm = 1 on the slack bus but its generator holds 1.04
    assert case9.vm[case9.slack] == 1.0
    assert assemble_initial(case9, "flat").vm0[case9.slack] == 1.04


def test_warm_init():
    net = two_bus()
    dc = solve_dcpf(net, build_dc(net))
    init = assemble_initial(net, InitMode.WARM, dc_solution=dc)
    assert init.va0.tolist() == pytest.approx([0.0, -0.1])
    assert init.vm0.tolist() == [1.0, 1.0]


def test_hot_init_overrides_pv_and_slack():
    net = three_bus_ring(vg=1.03)
    init = assemble_initial(net, "hot", prediction=(np.array([0.9, 1.01, 0.97]),
                                                    np.array([0.2, -0.05, -0.1])))
    assert init.vm0.tolist() == [1.0, 1.03, 0.97]
    assert init.va0.tolist() == [0.0, -0.05, -0.1]


def test_missing_inputs(case9):
    with pytest.raises(MissingInput):
        assemble_initial(case9, "warm")
    with pytest.raises(MissingInput):
        assemble_initial(case9, "hot")


def test_initial_conditions_contract():
    with pytest.raises(ValueError):
        InitialConditions(np.array([1.0, np.nan]), np.zeros(2), InitMode.FLAT)
    with pytest.raises(ValueError):
        InitialConditions(np.array([1.0, 0.0]), np.zeros(2), InitMode.FLAT)


@settings(max_examples=40, deadline=None)
@given(p=st.floats(-150, 150), q=st.floats(-50, 50), x=st.floats(0.05, 0.3))
def test_two_bus_power_balance(p, q, x):
    net = two_bus(load_mw=p, load_mvar=q, x=x)
    sol = _solve(net, "flat", tol=1e-9)
    v = sol.vm * np.exp(1j * sol.va)
    s = v * np.conj(build_ybus(net) @ v)
    # lossless line: the slack supplies exactly the load
    assert s[1] == pytest.approx(-(p + 1j * q) / 100, abs=1e-8)
    assert s[0].real == pytest.approx(p / 100, abs=1e-8)
