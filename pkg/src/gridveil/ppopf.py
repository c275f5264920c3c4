"""Privacy-preserving OPF: transmission dispatch against imported surrogates.

The DS networks are absent here by construction.  Each distribution system
contributes one variable block x_j = (v at its PCC buses, DG p, DG q), a
facet block A_FR x_j <= b_FR standing in for its internal feasibility, and
quadratic couplings tying the regression-predicted PCC flows to pseudo
sources at the PCC buses.  Everything the assembly touches comes from the
transmission case and the SurrogateBundle files.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .acopf import (
    BranchSet,
    NlpOptions,
    NlpProblem,
    OpfSolution,
    assemble_standard,
    assemble_polygon_extension,
    bus_injection_hessian,
    solve_nlp,
)
from .netmodel import NetworkCase
from .powerflow import LimitReport, check_limits, dSbus_dV, line_flows
from .surrogate import QuadraticModel, SurrogateBundle


@dataclass
class PpProblem:
    """Assembled privacy-preserving OPF with its inputs kept for reporting."""

    ts_case: NetworkCase
    bundles: dict[int, SurrogateBundle]
    problem: NlpProblem
    pcc_order: dict[int, tuple[int, ...]]  # ds_id -> TS bus ids, x_j v order


def _quad_box_bound(model: QuadraticModel, x_min: np.ndarray, x_max: np.ndarray) -> float:
    """Cheap interval bound on |t(x)| over the box (for pseudo-source limits)."""
    m = np.maximum(np.abs(x_min), np.abs(x_max))
    return float(abs(model.c_quad) + np.abs(model.b_quad) @ m + m @ np.abs(model.a_quad) @ m)


def assemble_pp(
    ts_case: NetworkCase,
    bundles: dict[int, SurrogateBundle],
    charts_enforced: bool = False,
) -> PpProblem:
    """Build the surrogate-coupled OPF over the TS network.

    Variables: (theta, vm, pg, qg) of the TS, pseudo-source injections
    (px, qx) at every PCC bus, then one x_j block per DS in ascending ds_id.
    The pseudo sources enter the bus balance like generators; couplings
    t_p(x_j) + px = 0 and t_q(x_j) + qx = 0 hand them the regression outputs,
    and v-link rows pin each x_j voltage component to the PCC bus magnitude.
    """
    n = ts_case.n_bus
    ng = ts_case.n_gen
    if ng == 0:
        raise ValueError("transmission case has no generators")
    base = ts_case.base_mva
    ybus = ts_case.ybus
    branches = BranchSet(ts_case)
    kg = ts_case.gen_incidence()
    sd = np.array([complex(b.p_d, b.q_d) for b in ts_case.buses]) / base

    ds_ids = sorted(bundles)
    pcc_order: dict[int, tuple[int, ...]] = {}
    for ds in ds_ids:
        if ds not in ts_case.pcc_map:
            raise ValueError(f"ts case declares no PCC buses for DS {ds}")
        ts_buses = tuple(t for _, t in ts_case.pcc_map[ds])
        bundle = bundles[ds]
        if bundle.n_pcc != len(ts_buses):
            raise ValueError(
                f"DS {ds}: bundle has {bundle.n_pcc} PCCs, ts case assigns {len(ts_buses)}"
            )
        if bundle.fr.n_x != bundle.n_x:
            raise ValueError(f"DS {ds}: facet block width {bundle.fr.n_x} != n_x {bundle.n_x}")
        if len(bundle.costs) != bundle.n_dg:
            raise ValueError(f"DS {ds}: missing DG costs")
        if charts_enforced and bundle.charts and len(bundle.charts) != bundle.n_dg:
            raise ValueError(f"DS {ds}: chart count != n_dg")
        pcc_order[ds] = ts_buses
    covered = [b for ds in ds_ids for b in pcc_order[ds]]
    pcc_kind = [b.id for b in ts_case.buses if b.kind == "pcc"]
    if sorted(covered) != sorted(pcc_kind):
        raise ValueError(f"bundles cover PCC buses {sorted(covered)}, case has {sorted(pcc_kind)}")

    # variable layout
    i_th = slice(0, n)
    i_vm = slice(n, 2 * n)
    i_pg = slice(2 * n, 2 * n + ng)
    i_qg = slice(2 * n + ng, 2 * n + 2 * ng)
    npcc = len(covered)
    i_px = slice(2 * n + 2 * ng, 2 * n + 2 * ng + npcc)
    i_qx = slice(2 * n + 2 * ng + npcc, 2 * n + 2 * ng + 2 * npcc)
    x_slices: dict[int, slice] = {}
    pos = i_qx.stop
    for ds in ds_ids:
        x_slices[ds] = slice(pos, pos + bundles[ds].n_x)
        pos += bundles[ds].n_x
    nx = pos

    # pseudo-source incidence at PCC buses, ordered like (px, qx)
    kx = np.zeros((n, npcc))
    col = 0
    px_of: dict[tuple[int, int], int] = {}  # (ds, u) -> pseudo-source column
    for ds in ds_ids:
        for u, bus in enumerate(pcc_order[ds]):
            kx[ts_case.bus_index(bus), col] = 1.0
            px_of[(ds, u)] = col
            col += 1

    lb = np.full(nx, -np.inf)
    ub = np.full(nx, np.inf)
    for i, b in enumerate(ts_case.buses):
        lb[i_th.start + i], ub[i_th.start + i] = b.theta_min, b.theta_max
        lb[i_vm.start + i], ub[i_vm.start + i] = b.v_min, b.v_max
    slack = ts_case.slack_buses()
    ref = ts_case.bus_index(slack[0]) if slack else 0
    lb[ref], ub[ref] = 0.0, 0.0
    for g, gen in enumerate(ts_case.generators):
        lb[i_pg.start + g], ub[i_pg.start + g] = gen.p_min / base, gen.p_max / base
        lb[i_qg.start + g], ub[i_qg.start + g] = gen.q_min / base, gen.q_max / base
    for ds in ds_ids:
        bundle = bundles[ds]
        sl = x_slices[ds]
        lb[sl] = bundle.x_min
        ub[sl] = bundle.x_max
        # wide symmetric bounds so the couplings, not these boxes, bind
        for u in range(bundle.n_pcc):
            c = px_of[(ds, u)]
            bp = 1.5 * _quad_box_bound(bundle.pcc[u]["p"], bundle.x_min, bundle.x_max) + 0.1
            bq = 1.5 * _quad_box_bound(bundle.pcc[u]["q"], bundle.x_min, bundle.x_max) + 0.1
            lb[i_px.start + c], ub[i_px.start + c] = -bp, bp
            lb[i_qx.start + c], ub[i_qx.start + c] = -bq, bq

    x0 = np.zeros(nx)
    x0[i_vm] = np.clip(1.0, lb[i_vm], ub[i_vm])
    x0[i_pg] = (lb[i_pg] + ub[i_pg]) / 2
    x0[i_qg] = (lb[i_qg] + ub[i_qg]) / 2
    for ds in ds_ids:
        sl = x_slices[ds]
        x0[sl] = (lb[sl] + ub[sl]) / 2
        for u in range(bundles[ds].n_pcc):
            c = px_of[(ds, u)]
            x0[i_px.start + c] = -bundles[ds].pcc[u]["p"].predict(x0[sl])
            x0[i_qx.start + c] = -bundles[ds].pcc[u]["q"].predict(x0[sl])

    ca = np.array([g.cost.a for g in ts_case.generators]) * base**2
    cb = np.array([g.cost.b for g in ts_case.generators]) * base
    cc = np.array([g.cost.c for g in ts_case.generators])

    def objective(x):
        pg = x[i_pg]
        f = float(np.sum(ca * pg**2 + cb * pg + cc))
        grad = np.zeros(nx)
        grad[i_pg] = 2 * ca * pg + cb
        for ds in ds_ids:
            bundle = bundles[ds]
            sl = x_slices[ds]
            r = bundle.n_pcc
            for k, cost in enumerate(bundle.costs):
                p = x[sl.start + r + k]
                f += cost.a * p * p + cost.b * p + cost.c
                grad[sl.start + r + k] = 2 * cost.a * p + cost.b
        return f, grad

    def voltages(x):
        return x[i_vm] * np.exp(1j * x[i_th])

    # equality rows: 2n bus balance, then per DS its v-links and couplings
    link_rows = sum(bundles[ds].n_pcc for ds in ds_ids)
    coup_rows = 2 * link_rows
    m_eq = 2 * n + link_rows + coup_rows
    coup_slice = slice(2 * n + link_rows, m_eq)

    def equalities(x):
        v = voltages(x)
        s = v * np.conj(ybus @ v)
        mis = s + sd - kg @ (x[i_pg] + 1j * x[i_qg]) - kx @ (x[i_px] + 1j * x[i_qx])
        ds_dva, ds_dvm = dSbus_dV(ybus, v)
        g = np.zeros(m_eq)
        jac = np.zeros((m_eq, nx))
        g[:n], g[n : 2 * n] = mis.real, mis.imag
        jac[:n, i_th] = ds_dva.real
        jac[:n, i_vm] = ds_dvm.real
        jac[:n, i_pg] = -kg
        jac[:n, i_px] = -kx
        jac[n : 2 * n, i_th] = ds_dva.imag
        jac[n : 2 * n, i_vm] = ds_dvm.imag
        jac[n : 2 * n, i_qg] = -kg
        jac[n : 2 * n, i_qx] = -kx
        row = 2 * n
        for ds in ds_ids:
            sl = x_slices[ds]
            for u, bus in enumerate(pcc_order[ds]):
                g[row] = x[sl.start + u] - x[i_vm.start + ts_case.bus_index(bus)]
                jac[row, sl.start + u] = 1.0
                jac[row, i_vm.start + ts_case.bus_index(bus)] = -1.0
                row += 1
        for ds in ds_ids:
            bundle = bundles[ds]
            sl = x_slices[ds]
            xj = x[sl]
            for u in range(bundle.n_pcc):
                for key, isl in (("p", i_px), ("q", i_qx)):
                    qm = bundle.pcc[u][key]
                    g[row] = qm.predict(xj) + x[isl.start + px_of[(ds, u)]]
                    jac[row, sl] = 2 * qm.a_quad @ xj + qm.b_quad
                    jac[row, isl.start + px_of[(ds, u)]] = 1.0
                    row += 1
        return g, jac

    # inequality rows: TS line limits, then per DS facets (and chart rows)
    fr_blocks = []
    for ds in ds_ids:
        bundle = bundles[ds]
        a = np.zeros((bundle.fr.n_h, nx))
        a[:, x_slices[ds]] = bundle.fr.a_fr
        fr_blocks.append((a, bundle.fr.b_fr))
        if charts_enforced and bundle.charts:
            r = bundle.n_pcc
            rows, rhs = [], []
            for k, chart in enumerate(bundle.charts):
                for (ap, aq), bb in zip(chart.a_pq, chart.b_pq):
                    row = np.zeros(nx)
                    row[x_slices[ds].start + r + k] = ap
                    row[x_slices[ds].start + r + bundle.n_dg + k] = aq
                    rows.append(row)
                    rhs.append(bb)
            fr_blocks.append((np.array(rows), np.array(rhs)))
    a_lin = np.vstack([a for a, _ in fr_blocks]) if fr_blocks else np.zeros((0, nx))
    b_lin = np.concatenate([b for _, b in fr_blocks]) if fr_blocks else np.zeros(0)

    def inequalities(x):
        jac = np.zeros((branches.n_rows + len(b_lin), nx))
        h = np.zeros(branches.n_rows + len(b_lin))
        if branches.n_rows:
            hv, da, dm = branches.sq_constraints(voltages(x))
            h[: branches.n_rows] = hv
            jac[: branches.n_rows, i_th] = da
            jac[: branches.n_rows, i_vm] = dm
        if len(b_lin):
            h[branches.n_rows :] = a_lin @ x - b_lin
            jac[branches.n_rows :, :] = a_lin
        return h, jac

    def lag_hess(x, sigma, lam, mu):
        v = voltages(x)
        hess = np.zeros((nx, nx))
        hb = bus_injection_hessian(ybus, v, lam[:n], lam[n : 2 * n])
        if branches.n_rows:
            hb = hb + branches.sq_hessian(v, mu[: branches.n_rows])
        hess[: 2 * n, : 2 * n] = hb
        row = coup_slice.start
        for ds in ds_ids:
            bundle = bundles[ds]
            sl = x_slices[ds]
            for u in range(bundle.n_pcc):
                for key in ("p", "q"):
                    hess[sl, sl] += 2.0 * lam[row] * bundle.pcc[u][key].a_quad
                    row += 1
        diag = np.zeros(nx)
        diag[i_pg] = sigma * 2 * ca
        for ds in ds_ids:
            bundle = bundles[ds]
            r = bundle.n_pcc
            for k, cost in enumerate(bundle.costs):
                diag[x_slices[ds].start + r + k] = sigma * 2 * cost.a
        hess[np.diag_indices(nx)] += diag
        return hess

    problem = NlpProblem(
        x0=x0,
        lb=lb,
        ub=ub,
        objective=objective,
        equalities=equalities,
        inequalities=inequalities,
        lag_hess=lag_hess,
        var_slices={"theta": i_th, "vm": i_vm, "pg": i_pg, "qg": i_qg, "px": i_px, "qx": i_qx},
        meta={
            "case": ts_case.name,
            "n_bus": n,
            "n_gen": ng,
            "base_mva": base,
            "x_ds_slices": x_slices,
            "pcc_order": pcc_order,
            "coupling_rows": coup_slice,
            "charts_enforced": bool(charts_enforced),
        },
    )
    return PpProblem(ts_case=ts_case, bundles=bundles, problem=problem, pcc_order=pcc_order)


def solve_pp(pp: PpProblem, opts: NlpOptions | None = None) -> OpfSolution:
    """Solve the assembled problem; x_ds views give DG dispatch directly."""
    return solve_nlp(pp.problem, opts)


# ---------------------------------------------------------------------------
# Ground-truth verification
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    feasible_true: bool
    violations: dict  # "ts" and each ds_id -> LimitReport from the re-solve
    verified_cost: float
    raw_cost: float
    pcc_flow_error: float  # max |regression - re-solved flow|, MW/MVAr
    message: str = ""
    solve_time: float = 0.0


def _split_limit_report(case: NetworkCase, rep: LimitReport) -> dict:
    """Attribute limit violations to the TS or the owning DS."""
    owner_of_bus: dict[int, int] = {}
    for ds, own in case.meta.get("ds_buses", {}).items():
        for b in own:
            owner_of_bus[b] = ds
    branch_ds = case.meta.get("branch_ds", [None] * len(case.branches))
    domains: dict = {"ts": {"v": [], "flow": []}}
    for ds in case.meta.get("ds_buses", {}):
        domains[ds] = {"v": [], "flow": []}
    for row in rep.v_violations:
        domains.get(owner_of_bus.get(row[0], "ts"), domains["ts"])["v"].append(row)
    for row in rep.flow_violations:
        owner = branch_ds[row[0]] if row[0] < len(branch_ds) else None
        domains.get(owner if owner is not None else "ts", domains["ts"])["flow"].append(row)
    out = {}
    for dom, parts in domains.items():
        out[dom] = LimitReport(
            ok=not parts["v"] and not parts["flow"],
            v_violations=tuple(parts["v"]),
            flow_violations=tuple(parts["flow"]),
            max_v_err=max((max(lo - v, v - hi) for _, v, lo, hi in parts["v"]), default=0.0),
            max_flow_ratio=max((s / cap for _, s, cap in parts["flow"]), default=0.0),
        )
    return out


def verify_dispatch(
    integrated_case: NetworkCase,
    pp_solution: OpfSolution,
    bundles: dict[int, SurrogateBundle],
    opts: NlpOptions | None = None,
    tol: float = 1e-5,
) -> VerificationReport:
    """Check a PP dispatch against the full network it was meant for.

    Every DG is pinned to its PP setpoint (bounds collapsed to the point) and
    the standard formulation is re-solved over what remains, so transmission
    generators may re-balance the regression error.  Feasibility of the PP
    dispatch means that re-solve succeeds; its objective is the defensible
    cost of the dispatch.
    """
    if not pp_solution.optimal:
        raise ValueError("pp solution is not optimal")
    dg_map = integrated_case.meta.get("dg_map")
    if not dg_map:
        raise ValueError("integrated case lacks DG ownership metadata")

    gens = list(integrated_case.generators)
    for ds, gidx in dg_map.items():
        xj = pp_solution.x_ds[ds]
        r = bundles[ds].n_pcc
        n_dg = bundles[ds].n_dg
        if len(gidx) != n_dg:
            raise ValueError(f"DS {ds}: {len(gidx)} DGs in case, bundle has {n_dg}")
        for k, g in enumerate(gidx):
            p, q = float(xj[r + k]), float(xj[r + n_dg + k])
            gens[g] = replace(gens[g], p_min=p, p_max=p, q_min=q, q_max=q)
    pinned = replace(integrated_case, generators=gens, _ybus=None, _index=None)

    charts = None
    if integrated_case.dg_charts:
        charts = []
        for ds in sorted(dg_map):
            charts.extend(integrated_case.charts_for(ds, dg_map[ds]))

    problem = assemble_standard(pinned)
    if charts:
        problem = assemble_polygon_extension(problem, charts)
    t0 = time.perf_counter()
    sol = solve_nlp(problem, opts)
    dt = time.perf_counter() - t0

    raw = float(pp_solution.objective)
    if not sol.optimal:
        return VerificationReport(
            feasible_true=False,
            violations={},
            verified_cost=float("nan"),
            raw_cost=raw,
            pcc_flow_error=float("nan"),
            message=f"re-solve {sol.status}: {sol.message}",
            solve_time=dt,
        )

    v = sol.v * np.exp(1j * sol.theta)
    rep = check_limits(pinned, v, tol=tol)
    split = _split_limit_report(pinned, rep)

    # regression error at the verified operating point: re-evaluate each
    # bundle at (re-solved PCC voltages, pinned DG setpoints)
    sf, st = line_flows(pinned, v)
    branch_ds = pinned.meta["branch_ds"]
    base = pinned.base_mva
    err = 0.0
    for ds, gidx in dg_map.items():
        bundle = bundles[ds]
        r = bundle.n_pcc
        ts_buses = tuple(t for _, t in pinned.pcc_map[ds])
        xj = pp_solution.x_ds[ds].copy()
        for u, bus in enumerate(ts_buses):
            xj[u] = abs(v[pinned.bus_index(bus)])
        for u, bus in enumerate(ts_buses):
            into_ds = 0j
            for bi, br in enumerate(pinned.branches):
                if branch_ds[bi] != ds or br.status != 1:
                    continue
                if br.from_bus == bus:
                    into_ds += sf[bi]
                elif br.to_bus == bus:
                    into_ds += st[bi]
            # consumption seen from the TS, per unit
            t_actual_p = into_ds.real / base
            t_actual_q = into_ds.imag / base
            err = max(err, abs(bundle.pcc[u]["p"].predict(xj) - t_actual_p) * base)
            err = max(err, abs(bundle.pcc[u]["q"].predict(xj) - t_actual_q) * base)

    return VerificationReport(
        feasible_true=all(r.ok for r in split.values()),
        violations=split,
        verified_cost=float(sol.objective),
        raw_cost=raw,
        pcc_flow_error=float(err),
        solve_time=dt,
    )
