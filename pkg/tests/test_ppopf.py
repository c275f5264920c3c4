import copy
import dataclasses
import inspect

import numpy as np
import pytest

import gridveil.ppopf as ppopf_module
from gridveil.acopf import NlpOptions
from gridveil.netmodel import rectangle_chart
from gridveil.ppopf import assemble_pp, solve_pp, verify_dispatch
from gridveil.surrogate import PolytopeModel

from oracles import fd_jacobian, rel_err


@pytest.fixture(scope="module")
def pp(ts30, quick_bundles):
    return assemble_pp(ts30, quick_bundles, charts_enforced=True)


@pytest.fixture(scope="module")
def pp_sol(pp):
    sol = solve_pp(pp)
    assert sol.optimal, sol.message
    return sol


# ----------------------------------------------------------------- assembly


def test_variable_and_row_layout(pp, ts30, quick_bundles):
    problem = pp.problem
    n, ng = ts30.n_bus, ts30.n_gen
    npcc = sum(b.n_pcc for b in quick_bundles.values())
    n_xds = sum(b.n_x for b in quick_bundles.values())
    assert problem.n == 2 * n + 2 * ng + 2 * npcc + n_xds
    assert problem.var_slices["px"].stop - problem.var_slices["px"].start == npcc

    sl1 = problem.meta["x_ds_slices"][1]
    assert sl1.stop - sl1.start == 3  # one PCC voltage + one DG (p, q)

    g, jg = problem.eq(problem.x0)
    # balance rows, one v-link per PCC, one coupling per PCC per direction
    assert len(g) == 2 * n + npcc + 2 * npcc
    assert jg.shape == (len(g), problem.n)

    h, _ = problem.ineq(problem.x0)
    n_facets = sum(b.fr.n_h for b in quick_bundles.values())
    n_chart_rows = sum(
        chart.n_vertices for b in quick_bundles.values() for chart in b.charts
    )
    n_flow_rows = 2 * sum(1 for br in ts30.branches if br.s_max > 0 and br.status)
    assert len(h) == n_flow_rows + n_facets + n_chart_rows


def test_assembly_requires_full_pcc_coverage(ts30, quick_bundles):
    with pytest.raises(ValueError, match="bundles cover PCC buses"):
        assemble_pp(ts30, {1: quick_bundles[1]})


def test_assembly_rejects_pcc_count_mismatch(ts30, quick_bundles):
    bad = dataclasses.replace(quick_bundles[1], n_pcc=2)
    with pytest.raises(ValueError, match="bundle has 2 PCCs"):
        assemble_pp(ts30, {**quick_bundles, 1: bad})


def test_assembly_rejects_missing_costs(ts30, quick_bundles):
    bad = dataclasses.replace(quick_bundles[2], costs=[])
    with pytest.raises(ValueError, match="missing DG costs"):
        assemble_pp(ts30, {**quick_bundles, 2: bad})


# ----------------------------------------------------------- solution facts


def test_solution_satisfies_surrogate_constraints(pp, pp_sol):
    x = pp_sol.x
    for ds, bundle in pp.bundles.items():
        xj = x[pp.problem.meta["x_ds_slices"][ds]]
        assert np.max(bundle.fr.a_fr @ xj - bundle.fr.b_fr) <= 1e-6
        r = bundle.n_pcc
        for k, chart in enumerate(bundle.charts):
            pq = np.array([xj[r + k], xj[r + bundle.n_dg + k]])
            assert np.max(chart.a_pq @ pq - chart.b_pq) <= 1e-6
        assert np.all(xj >= bundle.x_min - 1e-8)
        assert np.all(xj <= bundle.x_max + 1e-8)


def test_solution_links_voltages_and_flows(pp, pp_sol):
    g, _ = pp.problem.eq(pp_sol.x)
    assert np.max(np.abs(g)) < 1e-6  # v-links and couplings included
    vm = pp_sol.x[pp.problem.var_slices["vm"]]
    for ds, buses in pp.pcc_order.items():
        xj = pp_sol.x[pp.problem.meta["x_ds_slices"][ds]]
        for u, bus in enumerate(buses):
            assert abs(xj[u] - vm[pp.ts_case.bus_index(bus)]) < 1e-8


def test_pseudo_sources_match_regressions(pp, pp_sol):
    x = pp_sol.x
    px = x[pp.problem.var_slices["px"]]
    qx = x[pp.problem.var_slices["qx"]]
    col = 0
    for ds in sorted(pp.bundles):
        bundle = pp.bundles[ds]
        xj = x[pp.problem.meta["x_ds_slices"][ds]]
        for u in range(bundle.n_pcc):
            assert abs(bundle.pcc[u]["p"].predict(xj) + px[col]) < 1e-6
            assert abs(bundle.pcc[u]["q"].predict(xj) + qx[col]) < 1e-6
            col += 1


# ------------------------------------------------------- relaxation ordering


def test_dropping_facets_never_raises_cost(ts30, quick_bundles, pp_sol):
    relaxed_bundles = {}
    for ds, b in quick_bundles.items():
        keep = max(1, b.fr.n_h // 2)
        fr = PolytopeModel(b.fr.w[:keep].copy(), b.fr.b[:keep].copy())
        relaxed_bundles[ds] = dataclasses.replace(b, fr=fr)
    relaxed = solve_pp(assemble_pp(ts30, relaxed_bundles, charts_enforced=True))
    assert relaxed.optimal
    assert relaxed.objective <= pp_sol.objective + 1e-6 * (1 + abs(pp_sol.objective))


def test_vacuous_facets_lower_bound_everything(ts30, quick_bundles, pp_sol):
    free_bundles = {
        ds: dataclasses.replace(
            b, fr=PolytopeModel(np.zeros((1, b.n_x)), np.full(1, -1.0))
        )
        for ds, b in quick_bundles.items()
    }
    free = solve_pp(assemble_pp(ts30, free_bundles, charts_enforced=True))
    assert free.optimal
    assert free.objective <= pp_sol.objective + 1e-6 * (1 + abs(pp_sol.objective))


def test_rectangle_charts_equal_unenforced(ts30, quick_bundles):
    plain = solve_pp(assemble_pp(ts30, quick_bundles, charts_enforced=False))
    rect_bundles = {}
    for ds, b in quick_bundles.items():
        r = b.n_pcc
        rects = [
            rectangle_chart(b.x_min[r + k], b.x_max[r + k], b.x_min[r + b.n_dg + k], b.x_max[r + b.n_dg + k])
            for k in range(b.n_dg)
        ]
        rect_bundles[ds] = dataclasses.replace(b, charts=rects)
    boxed = solve_pp(assemble_pp(ts30, rect_bundles, charts_enforced=True))
    assert plain.optimal and boxed.optimal
    rel = abs(boxed.objective - plain.objective) / (1 + abs(plain.objective))
    assert rel < 1e-5


def test_dg_price_steers_dispatch(ts30, quick_bundles):
    from gridveil.netmodel import CostPoly

    def total_dg_p(price):
        bundles = {
            ds: dataclasses.replace(b, costs=[CostPoly(0.0, price, 0.0)] * b.n_dg)
            for ds, b in quick_bundles.items()
        }
        sol = solve_pp(assemble_pp(ts30, bundles, charts_enforced=True))
        assert sol.optimal
        return sum(
            float(np.sum(sol.x_ds[ds][b.n_pcc : b.n_pcc + b.n_dg]))
            for ds, b in quick_bundles.items()
        )

    cheap = total_dg_p(0.1)
    dear = total_dg_p(500.0)
    assert cheap > dear + 2.0  # MW swing across 11 DGs
    lo_total = sum(float(np.sum(b.x_min[b.n_pcc : b.n_pcc + b.n_dg])) for b in quick_bundles.values())
    assert dear < lo_total + 1.0


# ----------------------------------------------------------- derivatives


def test_pp_callbacks_match_fd(pp, rng):
    problem = pp.problem
    lb, ub = problem.lb, problem.ub
    span = ub - lb
    lo = np.where(np.isfinite(span), lb + 0.05 * span, -1.0)
    hi = np.where(np.isfinite(span), ub - 0.05 * span, 1.0)
    m_eq = len(problem.eq(problem.x0)[0])
    m_ineq = len(problem.ineq(problem.x0)[0])
    for _ in range(3):
        x = lo + rng.uniform(size=problem.n) * (hi - lo)
        g, jg = problem.eq(x)
        assert rel_err(fd_jacobian(lambda z: problem.eq(z)[0], x, h=1e-6), jg) < 1e-5
        h, jh = problem.ineq(x)
        assert rel_err(fd_jacobian(lambda z: problem.ineq(z)[0], x, h=1e-6), jh) < 1e-5

        lam = rng.normal(size=m_eq)
        mu = rng.uniform(0.1, 1.0, size=m_ineq)

        def grad_l(z):
            _, df = problem.objective(z)
            _, jgz = problem.eq(z)
            _, jhz = problem.ineq(z)
            return df + jgz.T @ lam + jhz.T @ mu

        hess = problem.lag_hess(x, 1.0, lam, mu)
        assert rel_err(fd_jacobian(grad_l, x, h=1e-6), hess) < 1e-4


# ------------------------------------------------------------------ privacy


def test_module_never_touches_network_files():
    src = inspect.getsource(ppopf_module)
    for forbidden in ("load_case", "bundled_case", "parse_case", "open(", "read_csv"):
        assert forbidden not in src, f"ppopf source references {forbidden}"


def test_assembly_runs_with_loaders_disabled(ts30, quick_bundles, monkeypatch):
    import gridveil.netmodel as netmodel
    import gridveil.powerflow as powerflow

    def bomb(*a, **k):
        raise AssertionError("privacy boundary crossed")

    monkeypatch.setattr(netmodel, "load_case", bomb)
    monkeypatch.setattr(netmodel, "bundled_case", bomb)
    monkeypatch.setattr(netmodel, "parse_case", bomb)
    monkeypatch.setattr(powerflow, "newton_pf", bomb)
    monkeypatch.setattr(powerflow, "ds_response", bomb)

    pp = assemble_pp(ts30, quick_bundles, charts_enforced=True)
    x = pp.problem.x0
    pp.problem.objective(x)
    g, _ = pp.problem.eq(x)
    h, _ = pp.problem.ineq(x)
    pp.problem.lag_hess(x, 1.0, np.zeros(len(g)), np.zeros(len(h)))


# ------------------------------------------------------------- verification


def test_verified_cost_close_to_raw(integrated, pp_sol, quick_bundles):
    rep = verify_dispatch(integrated, pp_sol, quick_bundles)
    assert rep.feasible_true, rep.violations
    assert np.isfinite(rep.verified_cost)
    gap = abs(rep.verified_cost - rep.raw_cost) / abs(rep.raw_cost)
    assert gap < 0.05
    assert rep.pcc_flow_error < 1.0  # MW


def test_verify_catches_out_of_chart_dispatch(integrated, pp_sol, quick_bundles):
    corrupted = copy.deepcopy(pp_sol)
    b3 = quick_bundles[3]
    r = b3.n_pcc
    # push the first DG of DS 3 far outside its capability chart
    corrupted.x_ds[3][r] = 2.0 * b3.x_max[r] + 5.0
    rep = verify_dispatch(integrated, corrupted, quick_bundles)
    assert not rep.feasible_true


def test_verify_requires_optimal_input(integrated, pp_sol, quick_bundles):
    stuck = copy.deepcopy(pp_sol)
    stuck.status = "iteration_limit"
    with pytest.raises(ValueError, match="not optimal"):
        verify_dispatch(integrated, stuck, quick_bundles)
