"""AC optimal power flow as a smooth NLP, and the interior-point engine.

assemble_standard builds the full nonlinear program for a transmission or
integrated case over x = (theta, vm, p_g, q_g) in per unit: bus power balance
as equalities, squared apparent-power line limits as inequalities, operating
ranges as box bounds, quadratic generation cost as the objective.
solve_nlp is a dense primal-dual interior-point method in the MATPOWER/MIPS
mold, with exact analytic Hessians supplied by the assemblers (a damped BFGS
approximation is used for problems that do not provide one).

The same NlpProblem container and solver also host the reduced
privacy-preserving formulation (see the ppopf module).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .netmodel import CostPoly, NetworkCase, PQChart
from .powerflow import dSbus_dV


# ---------------------------------------------------------------------------
# Branch flow derivatives (polar voltage coordinates)
# ---------------------------------------------------------------------------


class BranchSet:
    """Admittance and incidence rows of the rated, closed branches of a case.

    Flow at one end is S = diag(C V) conj(Yb V) with C the end's incidence;
    both ends of every rated branch contribute one squared-magnitude
    constraint row.
    """

    def __init__(self, case: NetworkCase):
        rated = [
            (i, br) for i, br in enumerate(case.branches) if br.status and br.s_max > 0
        ]
        n = case.n_bus
        nl = len(rated)
        self.n_rows = 2 * nl
        self.limit_sq = np.empty(2 * nl)
        self.yb = np.zeros((2 * nl, n), dtype=complex)  # from-end rows, then to-end
        self.cidx = np.empty(2 * nl, dtype=int)  # metered bus per row
        self.branch_index = np.array([i for i, _ in rated], dtype=int)
        for k, (_, br) in enumerate(rated):
            f = case.bus_index(br.from_bus)
            t = case.bus_index(br.to_bus)
            ys = 1.0 / complex(br.r, br.x)
            bc = 1j * br.b_sh / 2.0
            tau = br.tap if br.tap not in (0.0, 0) else 1.0
            self.yb[k, f] = (ys + bc) / tau**2
            self.yb[k, t] = -ys / tau
            self.yb[nl + k, f] = -ys / tau
            self.yb[nl + k, t] = ys + bc
            self.cidx[k] = f
            self.cidx[nl + k] = t
            lim = (br.s_max / case.base_mva) ** 2
            self.limit_sq[k] = lim
            self.limit_sq[nl + k] = lim

    def flows(self, v: np.ndarray) -> np.ndarray:
        return v[self.cidx] * np.conj(self.yb @ v)

    def flow_jacobian(self, v: np.ndarray):
        """dS/dVa and dS/dVm for every constraint row (complex, rows x n_bus)."""
        vnorm = v / np.abs(v)
        ib = self.yb @ v
        vc = v[self.cidx]
        c_rows = np.zeros_like(self.yb)
        c_rows[np.arange(len(self.cidx)), self.cidx] = 1.0
        ds_dva = 1j * (
            np.conj(ib)[:, None] * c_rows * v[None, :]
            - vc[:, None] * np.conj(self.yb * v[None, :])
        )
        ds_dvm = vc[:, None] * np.conj(self.yb * vnorm[None, :]) + np.conj(ib)[
            :, None
        ] * c_rows * vnorm[None, :]
        return ds_dva, ds_dvm

    def sq_constraints(self, v: np.ndarray):
        """h = |S|^2 - limit^2 and its Jacobian wrt (theta, vm)."""
        s = self.flows(v)
        h = s.real**2 + s.imag**2 - self.limit_sq
        ds_dva, ds_dvm = self.flow_jacobian(v)
        da = 2 * (s.real[:, None] * ds_dva.real + s.imag[:, None] * ds_dva.imag)
        dm = 2 * (s.real[:, None] * ds_dvm.real + s.imag[:, None] * ds_dvm.imag)
        return h, da, dm

    def sq_hessian(self, v: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """Hessian of mu . |S|^2 wrt (theta, vm), real (2n x 2n)."""
        s = self.flows(v)
        ds_dva, ds_dvm = self.flow_jacobian(v)
        lam = np.conj(s) * mu
        # second derivative of lam . S, split into the four polar blocks
        c_rows = np.zeros_like(self.yb)
        c_rows[np.arange(len(self.cidx)), self.cidx] = 1.0
        a = self.yb.conj().T @ (lam[:, None] * c_rows)
        dv = np.conj(v)
        b = dv[:, None] * a * v[None, :]
        d = np.diag((a @ v) * dv)
        e = np.diag((a.T @ dv) * v)
        f_ = b + b.T
        g = np.diag(1.0 / np.abs(v))
        saa = f_ - d - e
        sva = 1j * g @ (b - b.T - d + e)
        sav = sva.T
        svv = g @ f_ @ g
        haa = 2 * np.real(saa + ds_dva.T @ (mu[:, None] * np.conj(ds_dva)))
        hva = 2 * np.real(sva + ds_dvm.T @ (mu[:, None] * np.conj(ds_dva)))
        hav = 2 * np.real(sav + ds_dva.T @ (mu[:, None] * np.conj(ds_dvm)))
        hvv = 2 * np.real(svv + ds_dvm.T @ (mu[:, None] * np.conj(ds_dvm)))
        return np.block([[haa, hav], [hva, hvv]])


def bus_injection_hessian(
    ybus: np.ndarray, v: np.ndarray, lam_p: np.ndarray, lam_q: np.ndarray
) -> np.ndarray:
    """Hessian of lam_p . Re(S(V)) + lam_q . Im(S(V)) wrt (theta, vm)."""
    lam = lam_p - 1j * lam_q  # Re(lam^T S) reproduces both contractions
    ibus = ybus @ v
    a = np.diag(lam * v)
    b = ybus @ np.diag(v)
    c = a @ np.conj(b)
    d = ybus.conj().T @ np.diag(v)
    e = np.conj(np.diag(v)) @ (d @ np.diag(lam) - np.diag(d @ lam))
    f_ = c - a @ np.diag(np.conj(ibus))
    g = np.diag(1.0 / np.abs(v))
    gaa = e + f_
    gva = 1j * g @ (e - f_)
    gav = gva.T
    gvv = g @ (c + c.T) @ g
    return np.real(np.block([[gaa, gav], [gva, gvv]]))


# ---------------------------------------------------------------------------
# NLP container
# ---------------------------------------------------------------------------


@dataclass
class NlpProblem:
    """min f(x) s.t. g(x)=0, h(x)<=0, lb<=x<=ub, all callbacks smooth.

    objective(x) -> (f, grad); equalities/inequalities(x) -> (values, dense
    Jacobian); lag_hess(x, sigma, lam, mu) -> sigma*d2f + d2g.lam + d2h.mu, or
    None to let the solver fall back to damped BFGS.  var_slices names the
    blocks of x for unpacking and reporting.
    """

    x0: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    objective: Callable
    equalities: Callable | None = None
    inequalities: Callable | None = None
    lag_hess: Callable | None = None
    var_slices: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.x0)

    def eq(self, x):
        if self.equalities is None:
            return np.zeros(0), np.zeros((0, self.n))
        return self.equalities(x)

    def ineq(self, x):
        if self.inequalities is None:
            return np.zeros(0), np.zeros((0, self.n))
        return self.inequalities(x)


def append_linear_inequalities(problem: NlpProblem, a_new: np.ndarray, b_new: np.ndarray):
    """Extend problem with rows a_new @ x <= b_new (in place, returns problem)."""
    old = problem.inequalities

    def inequalities(x):
        hv = a_new @ x - b_new
        jv = a_new
        if old is None:
            return hv, jv.copy()
        h0, j0 = old(x)
        return np.concatenate([h0, hv]), np.vstack([j0, jv])

    old_hess = problem.lag_hess
    if old_hess is not None:
        # linear rows contribute no curvature
        def lag_hess(x, sigma, lam, mu):
            return old_hess(x, sigma, lam, mu[: len(mu) - len(b_new)])

        problem.lag_hess = lag_hess
    problem.inequalities = inequalities
    return problem


# ---------------------------------------------------------------------------
# Standard AC-OPF assembly
# ---------------------------------------------------------------------------


def assemble_standard(case: NetworkCase) -> NlpProblem:
    """Full AC-OPF over x = (theta, vm, p_g, q_g), per unit.

    Equalities: active/reactive balance at every bus, plus the angle
    reference (slack theta pinned through an equal-bound box).  Inequalities:
    squared apparent-power limits at both ends of every rated branch.
    """
    n = case.n_bus
    ng = case.n_gen
    if ng == 0:
        raise ValueError("case has no generators to dispatch")
    base = case.base_mva
    ybus = case.ybus
    branches = BranchSet(case)
    kg = case.gen_incidence()
    sd = np.array([complex(b.p_d, b.q_d) for b in case.buses]) / base

    i_th = slice(0, n)
    i_vm = slice(n, 2 * n)
    i_pg = slice(2 * n, 2 * n + ng)
    i_qg = slice(2 * n + ng, 2 * n + 2 * ng)
    nx = 2 * n + 2 * ng

    lb = np.empty(nx)
    ub = np.empty(nx)
    for i, b in enumerate(case.buses):
        lb[i_th][i], ub[i_th][i] = b.theta_min, b.theta_max
        lb[i_vm][i], ub[i_vm][i] = b.v_min, b.v_max
    slack = case.slack_buses()
    ref = case.bus_index(slack[0]) if slack else 0
    lb[ref], ub[ref] = 0.0, 0.0
    for g, gen in enumerate(case.generators):
        lb[i_pg][g], ub[i_pg][g] = gen.p_min / base, gen.p_max / base
        lb[i_qg][g], ub[i_qg][g] = gen.q_min / base, gen.q_max / base

    x0 = np.zeros(nx)
    x0[i_vm] = np.clip(1.0, lb[i_vm], ub[i_vm])
    x0[i_pg] = (lb[i_pg] + ub[i_pg]) / 2
    x0[i_qg] = (lb[i_qg] + ub[i_qg]) / 2

    # cost in $/h with p in p.u.: a' = a b^2, b' = b_coef * b
    ca = np.array([g.cost.a for g in case.generators]) * base**2
    cb = np.array([g.cost.b for g in case.generators]) * base
    cc = np.array([g.cost.c for g in case.generators])

    def objective(x):
        pg = x[i_pg]
        f = float(np.sum(ca * pg**2 + cb * pg + cc))
        grad = np.zeros(nx)
        grad[i_pg] = 2 * ca * pg + cb
        return f, grad

    def voltages(x):
        return x[i_vm] * np.exp(1j * x[i_th])

    def equalities(x):
        v = voltages(x)
        s = v * np.conj(ybus @ v)
        mis = s + sd - kg @ (x[i_pg] + 1j * x[i_qg])
        ds_dva, ds_dvm = dSbus_dV(ybus, v)
        jac = np.zeros((2 * n, nx))
        jac[:n, i_th] = ds_dva.real
        jac[:n, i_vm] = ds_dvm.real
        jac[:n, i_pg] = -kg
        jac[n:, i_th] = ds_dva.imag
        jac[n:, i_vm] = ds_dvm.imag
        jac[n:, i_qg] = -kg
        return np.concatenate([mis.real, mis.imag]), jac

    def inequalities(x):
        if branches.n_rows == 0:
            return np.zeros(0), np.zeros((0, nx))
        h, da, dm = branches.sq_constraints(voltages(x))
        jac = np.zeros((branches.n_rows, nx))
        jac[:, i_th] = da
        jac[:, i_vm] = dm
        return h, jac

    def lag_hess(x, sigma, lam, mu):
        v = voltages(x)
        hess = np.zeros((nx, nx))
        hb = bus_injection_hessian(ybus, v, lam[:n], lam[n:])
        if branches.n_rows:
            hb = hb + branches.sq_hessian(v, mu[: branches.n_rows])
        hess[: 2 * n, : 2 * n] = hb
        dpg = np.zeros(nx)
        dpg[i_pg] = sigma * 2 * ca
        hess[np.diag_indices(nx)] += dpg
        return hess

    meta = {"case": case.name, "n_bus": n, "n_gen": ng, "base_mva": base}
    if "dg_map" in case.meta:
        meta["dg_gens"] = [g for ds in sorted(case.meta["dg_map"]) for g in case.meta["dg_map"][ds]]
    else:
        meta["dg_gens"] = list(range(ng))

    return NlpProblem(
        x0=x0,
        lb=lb,
        ub=ub,
        objective=objective,
        equalities=equalities,
        inequalities=inequalities,
        lag_hess=lag_hess,
        var_slices={"theta": i_th, "vm": i_vm, "pg": i_pg, "qg": i_qg},
        meta=meta,
    )


def assemble_polygon_extension(problem: NlpProblem, charts: list[PQChart]) -> NlpProblem:
    """Add per-DG capability-polygon facet rows to an assembled OPF.

    One linear row per facet: a_pq . (p_k, q_k) <= b_pq, with the chart in MW
    and the variables in per unit.
    """
    dg_gens = problem.meta.get("dg_gens", [])
    if len(charts) != len(dg_gens):
        raise ValueError(f"expected {len(dg_gens)} charts, got {len(charts)}")
    if not charts:
        return problem
    base = problem.meta["base_mva"]
    i_pg = problem.var_slices["pg"]
    i_qg = problem.var_slices["qg"]
    rows = []
    rhs = []
    for g, chart in zip(dg_gens, charts):
        for (ap, aq), b in zip(chart.a_pq, chart.b_pq):
            row = np.zeros(problem.n)
            row[i_pg.start + g] = ap * base
            row[i_qg.start + g] = aq * base
            rows.append(row)
            rhs.append(b)
    return append_linear_inequalities(problem, np.array(rows), np.array(rhs))


def evaluate_cost(p_mw, costs: list[CostPoly]) -> float:
    """Total $/h of the dispatch under quadratic cost curves."""
    if len(p_mw) != len(costs):
        raise ValueError("dispatch/cost length mismatch")
    return float(sum(c(p) for p, c in zip(p_mw, costs)))


# ---------------------------------------------------------------------------
# Primal-dual interior point solver
# ---------------------------------------------------------------------------


@dataclass
class NlpOptions:
    feastol: float = 1e-6
    gradtol: float = 1e-6
    comptol: float = 1e-6
    costtol: float = 1e-6
    max_iter: int = 200
    sigma: float = 0.2  # barrier reduction factor
    xi: float = 0.99995  # fraction-to-boundary


@dataclass
class OpfSolution:
    x: np.ndarray
    objective: float
    status: str  # optimal | iteration_limit | infeasible
    iterations: int
    solve_time: float
    constraint_violation: float
    lam: np.ndarray  # equality multipliers (user rows)
    mu: np.ndarray  # inequality multipliers (user rows)
    message: str = ""
    lam_all: np.ndarray | None = None  # multipliers including folded box rows
    mu_all: np.ndarray | None = None
    # populated when the problem carries OPF variable slices
    theta: np.ndarray | None = None
    v: np.ndarray | None = None
    p_g: np.ndarray | None = None
    q_g: np.ndarray | None = None
    x_ds: dict | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Folded:
    """User problem with box bounds folded into constraint rows.

    Equal lower/upper bounds become equality rows; finite bounds become
    inequality rows.  User rows come first in both blocks so multiplier
    slices stay stable.
    """

    def __init__(self, p: NlpProblem):
        self.p = p
        lb, ub = p.lb, p.ub
        if np.any(lb > ub):
            raise ValueError("empty box: lb > ub")
        self.pin_idx = np.flatnonzero(lb == ub)
        free = lb < ub
        self.lo_idx = np.flatnonzero(np.isfinite(lb) & free)
        self.hi_idx = np.flatnonzero(np.isfinite(ub) & free)
        self.n = p.n
        g0, _ = p.eq(p.x0)
        h0, _ = p.ineq(p.x0)
        self.m_eq_user = len(g0)
        self.m_ineq_user = len(h0)

    def eval(self, x):
        p = self.p
        g, jg = p.eq(x)
        h, jh = p.ineq(x)
        n = self.n
        pin = np.zeros((len(self.pin_idx), n))
        pin[np.arange(len(self.pin_idx)), self.pin_idx] = 1.0
        hi = np.zeros((len(self.hi_idx), n))
        hi[np.arange(len(self.hi_idx)), self.hi_idx] = 1.0
        lo = np.zeros((len(self.lo_idx), n))
        lo[np.arange(len(self.lo_idx)), self.lo_idx] = -1.0
        g_all = np.concatenate([g, x[self.pin_idx] - p.lb[self.pin_idx]])
        jg_all = np.vstack([jg, pin])
        h_all = np.concatenate(
            [h, x[self.hi_idx] - p.ub[self.hi_idx], p.lb[self.lo_idx] - x[self.lo_idx]]
        )
        jh_all = np.vstack([jh, hi, lo])
        return g_all, jg_all, h_all, jh_all

    def hess(self, x, sigma, lam_all, mu_all):
        if self.p.lag_hess is None:
            return None
        return self.p.lag_hess(
            x, sigma, lam_all[: self.m_eq_user], mu_all[: self.m_ineq_user]
        )


def _bfgs_update(b, s, y):
    sy = s @ y
    bs = b @ s
    sbs = s @ bs
    if sbs <= 0:
        return b
    # Powell damping keeps the approximation positive definite
    if sy < 0.2 * sbs:
        theta = 0.8 * sbs / (sbs - sy)
        y = theta * y + (1 - theta) * bs
        sy = s @ y
    if sy <= 1e-12 * max(1.0, sbs):
        return b
    return b - np.outer(bs, bs) / sbs + np.outer(y, y) / sy


# iterates may transiently overflow on diverging problems before the
# finiteness check below declares them infeasible; keep numpy quiet about it
@np.errstate(over="ignore", invalid="ignore", divide="ignore")
def solve_nlp(problem: NlpProblem, opts: NlpOptions | None = None) -> OpfSolution:
    """Primal-dual interior-point solve of an NlpProblem.

    Newton steps on the perturbed KKT system in reduced form, fraction-to-
    boundary step clipping, multiplicative barrier reduction.  Failure to
    reduce the residuals within the iteration cap yields iteration_limit, or
    infeasible when the final violation is far above tolerance.
    """
    opts = opts or NlpOptions()
    t0 = time.perf_counter()
    fold = _Folded(problem)
    x = problem.x0.astype(float).copy()
    n = len(x)

    f, df = problem.objective(x)
    g, jg, h, jh = fold.eval(x)
    neq, niq = len(g), len(h)
    lam = np.zeros(neq)
    z = np.ones(niq)
    mu = np.ones(niq)
    k = h < -1.0
    z[k] = -h[k]
    gamma = 1.0
    k = gamma / z > 1.0
    mu[k] = gamma / z[k]

    bfgs = None
    if problem.lag_hess is None:
        bfgs = np.eye(n)
    prev_x = None
    prev_grad_l = None

    def residuals(f, df, g, h, jg, jh, lam, mu, x, z):
        lx = df + jg.T @ lam + jh.T @ mu if neq or niq else df.copy()
        maxh = np.max(h) if niq else 0.0
        maxg = np.max(np.abs(g)) if neq else 0.0
        normx = max(np.max(np.abs(x)), 1.0)
        normz = np.max(np.abs(z)) if niq else 0.0
        feascond = max(maxg, maxh) / (1 + max(normx, normz))
        gradcond = np.max(np.abs(lx)) / (
            1 + max(np.max(np.abs(lam)) if neq else 0.0, np.max(np.abs(mu)) if niq else 0.0)
        )
        compcond = (z @ mu) / (1 + np.max(np.abs(x))) / max(niq, 1) if niq else 0.0
        return lx, feascond, gradcond, compcond

    lx, feascond, gradcond, compcond = residuals(f, df, g, h, jg, jh, lam, mu, x, z)
    f_prev = f
    costcond = np.inf
    converged = feascond < opts.feastol and gradcond < opts.gradtol and compcond < opts.comptol
    it = 0
    message = ""

    while not converged and it < opts.max_iter:
        it += 1
        hess = fold.hess(x, 1.0, lam, mu)
        if hess is None:
            hess = bfgs
        zinv = 1.0 / z
        if niq:
            m = hess + (jh.T * (mu * zinv)) @ jh
            nvec = lx + jh.T @ (zinv * (gamma + mu * h))
        else:
            m = hess.copy()
            nvec = lx.copy()

        dx = dlam = None
        reg = 0.0
        for attempt in range(7):
            kkt = np.zeros((n + neq, n + neq))
            kkt[:n, :n] = m + reg * np.eye(n)
            if neq:
                kkt[:n, n:] = jg.T
                kkt[n:, :n] = jg
                kkt[n:, n:] = -reg * np.eye(neq)
            rhs = np.concatenate([-nvec, -g])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                reg = max(10 * reg, 1e-10)
                continue
            if not np.all(np.isfinite(sol)):
                reg = max(10 * reg, 1e-10)
                continue
            dx, dlam = sol[:n], sol[n:]
            break
        if dx is None:
            message = "KKT system singular beyond regularization"
            break

        if niq:
            dz = -h - z - jh @ dx
            dmu = -mu + zinv * (gamma - mu * dz)
            kz = dz < 0
            alphap = min(1.0, opts.xi * np.min(z[kz] / -dz[kz])) if np.any(kz) else 1.0
            km = dmu < 0
            alphad = min(1.0, opts.xi * np.min(mu[km] / -dmu[km])) if np.any(km) else 1.0
        else:
            dz = dmu = None
            alphap = alphad = 1.0

        x = x + alphap * dx
        if niq:
            z = z + alphap * dz
            mu = mu + alphad * dmu
        lam = lam + alphad * dlam

        f, df = problem.objective(x)
        g, jg, h, jh = fold.eval(x)
        if bfgs is not None:
            grad_l = df + jg.T @ lam + jh.T @ mu if neq or niq else df.copy()
            if prev_x is not None:
                bfgs = _bfgs_update(bfgs, x - prev_x, grad_l - prev_grad_l)
            prev_x = x.copy()
            prev_grad_l = grad_l
        if niq:
            gamma = opts.sigma * (z @ mu) / niq
        lx, feascond, gradcond, compcond = residuals(f, df, g, h, jg, jh, lam, mu, x, z)
        costcond = abs(f - f_prev) / (1 + abs(f_prev))
        f_prev = f
        if not np.isfinite(feascond) or not np.isfinite(f):
            message = "iterates diverged"
            break
        converged = (
            feascond < opts.feastol
            and gradcond < opts.gradtol
            and compcond < opts.comptol
            and costcond < opts.costtol
        )

    elapsed = time.perf_counter() - t0
    violation = float(
        max(
            np.max(np.abs(g)) if neq else 0.0,
            np.max(h) if niq else 0.0,
            0.0,
        )
    )
    if converged:
        status = "optimal"
    elif violation > 100 * opts.feastol or message:
        status = "infeasible"
    else:
        status = "iteration_limit"

    sol = OpfSolution(
        x=x,
        objective=f,
        status=status,
        iterations=it,
        solve_time=elapsed,
        constraint_violation=violation,
        lam=lam[: fold.m_eq_user],
        mu=mu[: fold.m_ineq_user],
        message=message,
        lam_all=lam,
        mu_all=mu,
    )
    _attach_opf_views(problem, sol)
    return sol


def _attach_opf_views(problem: NlpProblem, sol: OpfSolution) -> None:
    vs = problem.var_slices
    base = problem.meta.get("base_mva")
    if "theta" in vs:
        sol.theta = sol.x[vs["theta"]].copy()
    if "vm" in vs:
        sol.v = sol.x[vs["vm"]].copy()
    if "pg" in vs and base:
        sol.p_g = sol.x[vs["pg"]] * base
        sol.q_g = sol.x[vs["qg"]] * base
    ds_slices = problem.meta.get("x_ds_slices")
    if ds_slices:
        sol.x_ds = {ds: sol.x[sl].copy() for ds, sl in ds_slices.items()}


def solve_standard(case: NetworkCase, opts: NlpOptions | None = None, charts=None) -> OpfSolution:
    """Assemble and solve the standard AC-OPF, optionally with polygon rows."""
    problem = assemble_standard(case)
    if charts:
        problem = assemble_polygon_extension(problem, charts)
    return solve_nlp(problem, opts)


@dataclass
class KktReport:
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float
    dual_sign: float  # most negative inequality multiplier (>= -tol at a KKT point)

    def ok(self, tol: float = 1e-6) -> bool:
        return (
            self.stationarity <= tol
            and self.primal_eq <= tol
            and self.primal_ineq <= tol
            and self.complementarity <= tol
            and self.dual_sign >= -tol
        )


def kkt_report(problem: NlpProblem, sol: OpfSolution) -> KktReport:
    """First-order optimality residuals of a solution, from analytic derivatives.

    Box-bound rows are folded in exactly as the solver saw them and evaluated
    with the solver's full multiplier vectors, so an optimal solve reports
    residuals at the solver's own tolerance.
    """
    fold = _Folded(problem)
    x = sol.x
    _, df = problem.objective(x)
    g, jg, h, jh = fold.eval(x)
    lam = sol.lam_all if sol.lam_all is not None else np.zeros(len(g))
    mu = sol.mu_all if sol.mu_all is not None else np.zeros(len(h))
    lx = df + jg.T @ lam + jh.T @ mu
    # scaled as in the solver's convergence test
    comp = np.max(np.abs(mu * h)) / (1 + np.max(np.abs(x))) if len(h) else 0.0
    return KktReport(
        stationarity=float(np.max(np.abs(lx))),
        primal_eq=float(np.max(np.abs(g))) if len(g) else 0.0,
        primal_ineq=float(max(np.max(h), 0.0)) if len(h) else 0.0,
        complementarity=float(comp),
        dual_sign=float(np.min(mu)) if len(mu) else 0.0,
    )
