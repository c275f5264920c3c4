"""Newton-Raphson AC power flow and the distribution-side response map.

The solver is dense and polar, sized for networks of a few hundred buses.
Any number of buses may be declared fixed (voltage magnitude and angle held),
which is how a distribution case is driven from its coupling points: every
PCC bus becomes a voltage source at the sampled magnitude and zero angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import NetworkCase, branch_admittances


def dSbus_dV(ybus: np.ndarray, v: np.ndarray):
    """Partials of the bus injections S(V) = V conj(Ybus V) in polar coordinates.

    Returns (dS/dVa, dS/dVm) as dense complex matrices.
    """
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    a = v[:, None] * np.conj(ybus * v[None, :])
    ds_dva = 1j * (np.diag(v * np.conj(ibus)) - a)
    ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    return ds_dva, ds_dvm


@dataclass
class PfResult:
    converged: bool
    v: np.ndarray  # complex bus voltages, p.u.
    iterations: int
    max_mismatch: float
    reason: str = ""  # "singular_jacobian" or "diverged" when not converged
    s_inj: np.ndarray | None = None  # net complex power into the network per bus, MVA


def newton_pf(
    case: NetworkCase,
    fixed: dict[int, complex] | None = None,
    pv: dict[int, float] | None = None,
    p_inj: dict[int, float] | None = None,
    q_inj: dict[int, float] | None = None,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> PfResult:
    """Solve the power flow with Newton's method from a flat start.

    fixed: bus id -> complex voltage held at both magnitude and angle
           (defaults to 1+0j at every bus of kind slack or pcc).
    pv:    bus id -> magnitude held, angle free (defaults for kind pv).
    p_inj/q_inj: extra injections in MW/MVAr (generation positive), added on
           top of the negated bus demand.
    """
    n = case.n_bus
    ybus = case.ybus
    if fixed is None:
        fixed = {b.id: 1.0 + 0j for b in case.buses if b.kind in ("slack", "pcc")}
    if pv is None:
        pv = {b.id: 1.0 for b in case.buses if b.kind == "pv"}
    if not fixed:
        raise ValueError("power flow needs at least one fixed (slack) bus")

    s_spec = np.array(
        [complex(-b.p_d, -b.q_d) for b in case.buses], dtype=complex
    )
    for bid, p in (p_inj or {}).items():
        s_spec[case.bus_index(bid)] += p
    for bid, q in (q_inj or {}).items():
        s_spec[case.bus_index(bid)] += 1j * q
    s_spec /= case.base_mva

    vm = np.ones(n)
    va = np.zeros(n)
    ang_free = np.ones(n, dtype=bool)
    mag_free = np.ones(n, dtype=bool)
    for bid, vc in fixed.items():
        i = case.bus_index(bid)
        vm[i] = abs(vc)
        va[i] = np.angle(vc)
        ang_free[i] = mag_free[i] = False
    for bid, mag in pv.items():
        i = case.bus_index(bid)
        if not mag_free[i]:
            raise ValueError(f"bus {bid} is both fixed and pv")
        vm[i] = mag
        mag_free[i] = False

    def mismatch(v):
        ds = v * np.conj(ybus @ v) - s_spec
        return np.concatenate([ds.real[ang_free], ds.imag[mag_free]])

    v = vm * np.exp(1j * va)
    f = mismatch(v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while norm > tol and it < max_iter:
        ds_dva, ds_dvm = dSbus_dV(ybus, v)
        j11 = ds_dva[np.ix_(ang_free, ang_free)].real
        j12 = ds_dvm[np.ix_(ang_free, mag_free)].real
        j21 = ds_dva[np.ix_(mag_free, ang_free)].imag
        j22 = ds_dvm[np.ix_(mag_free, mag_free)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            return PfResult(False, v, it, norm, reason="singular_jacobian")
        na = int(ang_free.sum())
        va[ang_free] -= dx[:na]
        vm[mag_free] -= dx[na:]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        it += 1
        if not np.isfinite(norm):
            return PfResult(False, v, it, float("inf"), reason="diverged")

    s_inj = v * np.conj(ybus @ v) * case.base_mva
    return PfResult(norm <= tol, v, it, norm, s_inj=s_inj)


def line_flows(case: NetworkCase, v: np.ndarray):
    """Complex power entering each branch at its from and to ends, in MVA."""
    yf, yt, fidx, tidx = branch_admittances(case)
    sf = v[fidx] * np.conj(yf @ v) * case.base_mva
    st = v[tidx] * np.conj(yt @ v) * case.base_mva
    return sf, st


@dataclass
class LimitReport:
    ok: bool
    v_violations: list = field(default_factory=list)  # (bus_id, vm, lo, hi)
    flow_violations: list = field(default_factory=list)  # (branch_idx, s_end_max, s_max)
    max_v_err: float = 0.0
    max_flow_ratio: float = 0.0


def check_limits(
    case: NetworkCase,
    v: np.ndarray,
    v_band: tuple[float, float] | None = None,
    tol: float = 1e-9,
) -> LimitReport:
    """Check bus voltage bands and branch MVA ratings for a solved voltage profile.

    v_band overrides the per-bus magnitude limits with one uniform band.
    Ratings of 0 and open branches are ignored.
    """
    rep = LimitReport(ok=True)
    vm = np.abs(v)
    for i, b in enumerate(case.buses):
        lo, hi = v_band if v_band is not None else (b.v_min, b.v_max)
        err = max(lo - vm[i], vm[i] - hi)
        rep.max_v_err = max(rep.max_v_err, err)
        if err > tol:
            rep.ok = False
            rep.v_violations.append((b.id, float(vm[i]), lo, hi))
    sf, st = line_flows(case, v)
    for i, br in enumerate(case.branches):
        if not br.status or br.s_max <= 0:
            continue
        s_end = max(abs(sf[i]), abs(st[i]))
        ratio = s_end / br.s_max
        rep.max_flow_ratio = max(rep.max_flow_ratio, ratio)
        if s_end - br.s_max > tol * max(1.0, br.s_max):
            rep.ok = False
            rep.flow_violations.append((i, float(s_end), br.s_max))
    return rep


@dataclass
class DsResponse:
    feasible: bool
    label: int  # 0 feasible, 1 infeasible
    p_pcc: np.ndarray  # MW toward the transmission side (export positive)
    q_pcc: np.ndarray
    converged: bool
    v: np.ndarray | None = None
    report: LimitReport | None = None


def ds_response(
    case: NetworkCase,
    v_pcc: np.ndarray,
    p_dg: np.ndarray,
    q_dg: np.ndarray,
    tol: float = 1e-8,
) -> DsResponse:
    """Operating-point response of one distribution case.

    The case's PCC buses (in pcc_map order) are held at the given magnitudes
    with zero angle, DGs inject (p_dg, q_dg) MW/MVAr in generator order, and
    the point is feasible iff the flow converges and every voltage band and
    line rating holds.  PCC flows are reported in the export orientation, so
    a distribution system drawing power has negative p_pcc.
    """
    if len(case.pcc_map) != 1:
        raise ValueError("ds_response expects a single-DS case")
    couplings = next(iter(case.pcc_map.values()))
    if len(v_pcc) != len(couplings):
        raise ValueError(f"expected {len(couplings)} PCC voltages, got {len(v_pcc)}")
    if len(p_dg) != case.n_gen or len(q_dg) != case.n_gen:
        raise ValueError("p_dg/q_dg must match the number of generators")

    fixed = {ds_bus: complex(v_pcc[u]) for u, (ds_bus, _) in enumerate(couplings)}
    p_inj: dict[int, float] = {}
    q_inj: dict[int, float] = {}
    for g, gen in enumerate(case.generators):
        p_inj[gen.bus] = p_inj.get(gen.bus, 0.0) + float(p_dg[g])
        q_inj[gen.bus] = q_inj.get(gen.bus, 0.0) + float(q_dg[g])

    res = newton_pf(case, fixed=fixed, pv={}, p_inj=p_inj, q_inj=q_inj, tol=tol)
    nan = np.full(len(couplings), np.nan)
    if not res.converged:
        return DsResponse(False, 1, nan, nan.copy(), False)

    rep = check_limits(case, res.v)
    p_pcc = np.empty(len(couplings))
    q_pcc = np.empty(len(couplings))
    for u, (ds_bus, _) in enumerate(couplings):
        i = case.bus_index(ds_bus)
        b = case.buses[i]
        # s_inj at a fixed bus is the import supplied from outside the case
        p_pcc[u] = -(res.s_inj[i].real + b.p_d)
        q_pcc[u] = -(res.s_inj[i].imag + b.q_d)
    return DsResponse(rep.ok, 0 if rep.ok else 1, p_pcc, q_pcc, True, res.v, rep)
