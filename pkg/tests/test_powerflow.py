import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridveil.netmodel import parse_case
from gridveil.powerflow import (
    check_limits,
    dSbus_dV,
    ds_response,
    line_flows,
    newton_pf,
)

from oracles import bfs_powerflow, fd_jacobian, stamp_ybus, two_bus_flow

TWO_BUS_LOADED = """
case two
base 100
bus 1 slack 0.9 1.1 -1.5707963267 1.5707963267 0 0
bus 2 pq 0.9 1.1 -1.5707963267 1.5707963267 30 10
branch 1 2 0.02 0.08 0 1 90 1
gen 1 0 100 -50 50 0 1 0
"""


def make_two_bus(p_mw=30.0, x=0.08):
    text = TWO_BUS_LOADED.replace("30 10", f"{p_mw} 10").replace("0.02 0.08", f"0.02 {x}")
    return parse_case(text)


# ---------------------------------------------------------------- newton_pf


def test_flat_case_is_solution():
    case = parse_case(TWO_BUS_LOADED.replace("30 10", "0 0"))
    res = newton_pf(case)
    assert res.converged
    assert np.allclose(res.v, 1.0 + 0j, atol=1e-12)


def test_newton_matches_sweep_on_radial_feeder(ds1):
    res = newton_pf(ds1, tol=1e-12)
    assert res.converged
    v_oracle = bfs_powerflow(ds1, v_root=1.0)
    assert np.max(np.abs(np.abs(res.v) - np.abs(v_oracle))) < 1e-8
    assert np.max(np.abs(res.v - v_oracle)) < 1e-8


def test_root_injection_covers_load_plus_losses(ds1):
    res = newton_pf(ds1, tol=1e-10)
    total_load = sum(b.p_d for b in ds1.buses)
    root = ds1.bus_index(next(iter(ds1.pcc_map.values()))[0][0])
    losses = float(np.sum(res.s_inj.real))
    assert losses > 0
    assert np.isclose(res.s_inj[root].real, total_load + losses, atol=1e-6)


def test_unsupportable_load_does_not_converge():
    case = make_two_bus(p_mw=5000.0, x=1.0)
    res = newton_pf(case)
    assert not res.converged
    assert res.reason in ("diverged", "") or res.max_mismatch > 1e-8


def test_balance_residual_via_independent_product(ds2):
    res = newton_pf(ds2, tol=1e-10)
    assert res.converged
    y = stamp_ybus(ds2)
    s = res.v * np.conj(y @ res.v)
    for i, b in enumerate(ds2.buses):
        if b.kind == "pq":
            assert abs(s[i] + complex(b.p_d, b.q_d) / ds2.base_mva) < 1e-9


def test_power_flow_jacobian_matches_fd(toy3):
    rng = np.random.default_rng(4)
    y = toy3.ybus
    n = 3
    for _ in range(5):
        vm = rng.uniform(0.95, 1.05, n)
        va = rng.uniform(-0.2, 0.2, n)
        v = vm * np.exp(1j * va)
        ds_dva, ds_dvm = dSbus_dV(y, v)

        def s_of(z):
            vv = z[n:] * np.exp(1j * z[:n])
            s = vv * np.conj(y @ vv)
            return np.concatenate([s.real, s.imag])

        jfd = fd_jacobian(s_of, np.concatenate([va, vm]), h=1e-7)
        mine = np.block(
            [[ds_dva.real, ds_dvm.real], [ds_dva.imag, ds_dvm.imag]]
        )
        assert np.max(np.abs(mine - jfd)) < 1e-6


# --------------------------------------------------------------- line_flows


def test_open_branch_zero_flow(ds1):
    res = newton_pf(ds1)
    sf, st = line_flows(ds1, res.v)
    for i, br in enumerate(ds1.branches):
        if not br.status:
            assert sf[i] == 0 and st[i] == 0


def test_two_bus_flow_analytic():
    case = make_two_bus()
    res = newton_pf(case, tol=1e-12)
    sf, st = line_flows(case, res.v)
    v1, v2 = np.abs(res.v)
    th1, th2 = np.angle(res.v)
    p, q = two_bus_flow(v1, th1, v2, th2, 0.02, 0.08)
    assert np.isclose(sf[0].real, p * case.base_mva, atol=1e-8)
    assert np.isclose(sf[0].imag, q * case.base_mva, atol=1e-8)
    p2, q2 = two_bus_flow(v2, th2, v1, th1, 0.02, 0.08)
    assert np.isclose(st[0].real, p2 * case.base_mva, atol=1e-8)


def test_flow_conservation_identity(ds2):
    res = newton_pf(ds2, tol=1e-10)
    sf, st = line_flows(ds2, res.v)
    losses = float(np.sum(sf.real + st.real))
    net_injection = float(np.sum(res.s_inj.real))
    assert np.isclose(losses, net_injection, atol=1e-6)


# ------------------------------------------------------------- check_limits


def test_check_limits_trivial_feasible():
    case = parse_case(TWO_BUS_LOADED.replace("30 10", "0 0"))
    rep = check_limits(case, np.ones(2, dtype=complex))
    assert rep.ok and not rep.v_violations and not rep.flow_violations


def test_check_limits_engineered_overload():
    case = make_two_bus()
    res = newton_pf(case, tol=1e-10)
    tight = parse_case(TWO_BUS_LOADED.replace("90 1", "10 1"))
    rep = check_limits(tight, res.v)
    assert not rep.ok
    assert any(idx == 0 for idx, _, _ in rep.flow_violations)
    assert rep.max_flow_ratio > 1.0


def test_check_limits_band_override(ds1):
    res = newton_pf(ds1, tol=1e-10)
    assert check_limits(ds1, res.v, v_band=(0.0, 2.0)).ok
    assert not check_limits(ds1, res.v, v_band=(0.9999, 1.0001)).ok


@settings(max_examples=40, deadline=None)
@given(
    lo=st.floats(0.8, 0.99),
    hi=st.floats(1.01, 1.2),
    shrink=st.floats(0.0, 0.05),
)
def test_check_limits_monotone_in_band(lo, hi, shrink):
    # tightening the band can only move verdicts toward infeasible
    case = make_two_bus()
    res = newton_pf(case, tol=1e-10)
    wide = check_limits(case, res.v, v_band=(lo, hi))
    narrow = check_limits(case, res.v, v_band=(lo + shrink, hi - shrink))
    if narrow.ok:
        assert wide.ok
    assert len(narrow.v_violations) >= len(wide.v_violations)


# -------------------------------------------------------------- ds_response


def test_ds_response_import_matches_sweep(ds1):
    n_dg = ds1.n_gen
    resp = ds_response(ds1, np.array([1.0]), np.zeros(n_dg), np.zeros(n_dg))
    assert resp.converged
    v_oracle = bfs_powerflow(ds1, v_root=1.0)
    root = ds1.bus_index(next(iter(ds1.pcc_map.values()))[0][0])
    s = v_oracle * np.conj(stamp_ybus(ds1) @ v_oracle) * ds1.base_mva
    total_load = sum(b.p_d for b in ds1.buses)
    losses = float(np.sum(s.real))
    # the feeder imports its whole demand through the single coupling point
    assert np.isclose(resp.p_pcc[0], -(total_load + losses), atol=1e-6)


def test_ds_response_balanced_dg_zeroes_import(ds1):
    n_dg = ds1.n_gen

    def pcc_flow(scale):
        resp = ds_response(
            ds1, np.array([1.0]), np.full(n_dg, scale), np.zeros(n_dg)
        )
        assert resp.converged
        return float(resp.p_pcc.sum())

    lo, hi = 0.0, 2.5
    assert pcc_flow(lo) < 0
    assert pcc_flow(hi) > 0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if pcc_flow(mid) < 0:
            lo = mid
        else:
            hi = mid
    assert abs(pcc_flow(0.5 * (lo + hi))) < 1e-6


def test_ds_response_voltage_cap_without_sources(ds1):
    resp = ds_response(ds1, np.array([1.05]), np.zeros(1), np.zeros(1))
    assert resp.converged
    assert np.max(np.abs(resp.v)) <= 1.05 + 1e-12


def test_ds_response_nonconvergence_is_infeasible(ds1):
    resp = ds_response(ds1, np.array([1.0]), np.array([1e5]), np.array([1e5]))
    assert not resp.converged
    assert resp.label == 1
    assert np.all(np.isnan(resp.p_pcc))


def test_ds_response_rejects_bad_shapes(ds1):
    with pytest.raises(ValueError):
        ds_response(ds1, np.array([1.0, 1.0]), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        ds_response(ds1, np.array([1.0]), np.zeros(3), np.zeros(3))
