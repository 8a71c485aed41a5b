"""Primal-dual interior-point solver for small dense NLPs.

Handles problems of the form

    min  obj . v
    s.t. a_eq v = b_eq
         g(v) >= 0

where g collects linear rows, bilinear "product at most eps" rows, and an
optional squared-norm ball row. Inequalities get slacks with a log barrier;
the barrier parameter follows a monotone decrease rule (multiply by 0.2
whenever the scaled KKT residual is within a factor 10 of the current
barrier). The product thresholds are relaxed along the way to
max(eps, 10 * barrier) so their multipliers stay O(1) on the central path,
landing exactly on the requested threshold once the barrier is small. Each
Newton step solves the condensed symmetric-indefinite KKT system by a dense
LDL^T factorization with inertia-correcting diagonal regularization,
refined against the unregularized system so degenerate vertices do not
poison the direction; step-scaled second-order correctors absorb the
curvature of the bilinear rows. Primal and dual blocks take separate
fraction-to-boundary step lengths.

Every solve owns its workspace; nothing here is shared or mutated across
calls, so concurrent solves are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import ldl, solve_triangular

__all__ = ["IpmProblem", "IpmOptions", "IpmStart", "IpmResult", "solve_ipm"]

SOLVED = "solved"
MAX_ITER = "max_iter"


@dataclass
class IpmProblem:
    n: int
    obj: np.ndarray
    obj_const: float = 0.0
    a_eq: np.ndarray | None = None            # (m_e, n)
    b_eq: np.ndarray | None = None
    g_lin: np.ndarray | None = None           # rows: g_lin v + g_off >= 0
    g_off: np.ndarray | None = None
    comp_pairs: np.ndarray | None = None      # (m_c, 2) indices: eps - v_i v_j >= 0
    comp_eps: float = 0.0
    ball: tuple | None = None                 # (indices, center, radius)

    def __post_init__(self):
        self.obj = np.asarray(self.obj, dtype=float)
        if self.a_eq is None:
            self.a_eq = np.zeros((0, self.n))
            self.b_eq = np.zeros(0)
        else:
            self.a_eq = np.asarray(self.a_eq, dtype=float).reshape(-1, self.n)
            self.b_eq = np.asarray(self.b_eq, dtype=float)
        if self.g_lin is None:
            self.g_lin = np.zeros((0, self.n))
            self.g_off = np.zeros(0)
        else:
            self.g_lin = np.asarray(self.g_lin, dtype=float).reshape(-1, self.n)
            self.g_off = np.asarray(self.g_off, dtype=float)
        if self.comp_pairs is None:
            self.comp_pairs = np.zeros((0, 2), dtype=int)
        else:
            self.comp_pairs = np.asarray(self.comp_pairs, dtype=int).reshape(-1, 2)

    @property
    def m_eq(self) -> int:
        return self.a_eq.shape[0]

    @property
    def m_ineq(self) -> int:
        return self.g_lin.shape[0] + self.comp_pairs.shape[0] + (1 if self.ball else 0)

    def eval_g(self, v: np.ndarray, comp_eps: float | None = None) -> np.ndarray:
        """Constraint values; comp_eps overrides the product-row threshold
        (the solver relaxes it along the barrier path)."""
        eps = self.comp_eps if comp_eps is None else comp_eps
        parts = [self.g_lin @ v + self.g_off]
        if self.comp_pairs.shape[0]:
            prod = v[self.comp_pairs[:, 0]] * v[self.comp_pairs[:, 1]]
            parts.append(eps - prod)
        if self.ball:
            idx, center, radius = self.ball
            diff = v[idx] - center
            parts.append(np.array([radius * radius - diff @ diff]))
        return np.concatenate(parts)

    def eval_jac(self, v: np.ndarray) -> np.ndarray:
        rows = [self.g_lin]
        mc = self.comp_pairs.shape[0]
        if mc:
            jc = np.zeros((mc, self.n))
            i, j = self.comp_pairs[:, 0], self.comp_pairs[:, 1]
            jc[np.arange(mc), i] = -v[j]
            jc[np.arange(mc), j] = -v[i]
            rows.append(jc)
        if self.ball:
            idx, center, _ = self.ball
            jb = np.zeros((1, self.n))
            jb[0, idx] = -2.0 * (v[idx] - center)
            rows.append(jb)
        return np.vstack(rows)

    def lagrangian_hessian(self, mu: np.ndarray) -> np.ndarray:
        """Hessian of obj - mu . g in v (the objective itself is linear)."""
        h = np.zeros((self.n, self.n))
        m_lin = self.g_lin.shape[0]
        mc = self.comp_pairs.shape[0]
        for k in range(mc):
            i, j = self.comp_pairs[k]
            h[i, j] += mu[m_lin + k]
            h[j, i] += mu[m_lin + k]
        if self.ball:
            idx, _, _ = self.ball
            h[idx, idx] += 2.0 * mu[-1]
        return h

    def objective(self, v: np.ndarray) -> float:
        return float(self.obj @ v + self.obj_const)

    def primal_infeasibility(self, v: np.ndarray) -> float:
        err = 0.0
        if self.m_eq:
            err = float(np.abs(self.a_eq @ v - self.b_eq).max())
        g = self.eval_g(v)
        if g.size:
            err = max(err, float(np.maximum(-g, 0.0).max()))
        return err

    def structural_infeasibility(self, v: np.ndarray) -> float:
        """Violation of everything except the product rows.

        A point that satisfies the affine network equations and the region
        rows yields a sound bound by exact re-evaluation even while its
        product residuals are still inside the solver's relaxed band.
        """
        err = 0.0
        if self.m_eq:
            err = float(np.abs(self.a_eq @ v - self.b_eq).max())
        if self.g_lin.shape[0]:
            lin = self.g_lin @ v + self.g_off
            err = max(err, float(np.maximum(-lin, 0.0).max()))
        if self.ball:
            idx, center, radius = self.ball
            diff = v[idx] - center
            err = max(err, max(0.0, float(diff @ diff - radius * radius)))
        return err


@dataclass
class IpmOptions:
    tol: float = 1e-7
    max_iter: int = 150
    tau_ftb: float = 0.995
    kappa_push: float = 1e-4       # warm-start slack/multiplier floor
    cold_push: float = 0.1         # cold-start slack floor
    mu_shrink: float = 0.2
    kappa_eps: float = 10.0
    reg_init: float = 1e-8
    stall_limit: int = 30
    comp_relax: float = 10.0   # product rows relaxed to max(eps, this * barrier)
    trace: bool = False        # per-iteration diagnostics on stdout


@dataclass
class IpmStart:
    v: np.ndarray
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    warm: bool = False


@dataclass
class IpmResult:
    v: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    objective: float
    # violation of the equality/linear/ball rows only; product-row slack is
    # judged by the caller through its own decode
    primal_infeasibility: float


def _block_structure(d: np.ndarray):
    """Yield (start, size) of the 1x1 / 2x2 blocks of an LDL^T block diagonal."""
    n = d.shape[0]
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            yield i, 2
            i += 2
        else:
            yield i, 1
            i += 1


def _inertia(d: np.ndarray):
    scale = max(float(np.abs(d).max()), 1.0)
    tiny = 1e-14 * scale
    pos = neg = zero = 0
    for i, size in _block_structure(d):
        if size == 2:
            det = d[i, i] * d[i + 1, i + 1] - d[i + 1, i] * d[i, i + 1]
            tr = d[i, i] + d[i + 1, i + 1]
            if det < -tiny * tiny:
                pos += 1
                neg += 1
            elif det > tiny * tiny:
                if tr > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 2
        else:
            if d[i, i] > tiny:
                pos += 1
            elif d[i, i] < -tiny:
                neg += 1
            else:
                zero += 1
    return pos, neg, zero


def _block_solve(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    w = np.empty_like(y)
    for i, size in _block_structure(d):
        if size == 2:
            a, bb = d[i, i], d[i, i + 1]
            c, dd = d[i + 1, i], d[i + 1, i + 1]
            det = a * dd - bb * c
            if det == 0.0:
                raise np.linalg.LinAlgError("singular 2x2 block")
            w[i] = (dd * y[i] - bb * y[i + 1]) / det
            w[i + 1] = (-c * y[i] + a * y[i + 1]) / det
        else:
            if d[i, i] == 0.0:
                raise np.linalg.LinAlgError("zero pivot")
            w[i] = y[i] / d[i, i]
    return w


class _KktFactors:
    """LDL^T factors of a regularized KKT matrix, solving the original one.

    Refinement iterates against `target` (the unregularized matrix when
    given), so small inertia-fixing shifts do not bias the Newton direction.
    """

    def __init__(self, kmat: np.ndarray, target: np.ndarray | None = None):
        self.kmat = kmat
        self.target = kmat if target is None else target
        self.lu, self.d, self.perm = ldl(kmat)
        self.lp = self.lu[self.perm, :]

    def inertia(self):
        return _inertia(self.d)

    def solve(self, rhs: np.ndarray, refine: int = 3) -> np.ndarray:
        x = self._solve_once(rhs)
        scale = max(1.0, float(np.abs(rhs).max()))
        for _ in range(refine):
            r = rhs - self.target @ x
            if float(np.abs(r).max()) < 1e-13 * scale:
                break
            x = x + self._solve_once(r)
        return x

    def _solve_once(self, rhs: np.ndarray) -> np.ndarray:
        y = solve_triangular(self.lp, rhs[self.perm], lower=True, unit_diagonal=True)
        w = _block_solve(self.d, y)
        u = solve_triangular(self.lp.T, w, lower=False, unit_diagonal=True)
        x = np.empty_like(u)
        x[self.perm] = u
        return x


def _fraction_to_boundary(x: np.ndarray, dx: np.ndarray, tau: float) -> float:
    if x.size == 0:
        return 1.0
    neg = dx < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-tau * x[neg] / dx[neg])))


def solve_ipm(problem: IpmProblem, start: IpmStart, options: IpmOptions | None = None) -> IpmResult:
    """Run the interior-point iteration from the given start point.

    Cold starts push slacks well off the boundary (infeasible but interior)
    with multipliers balancing the products; warm starts keep the handed-in
    multipliers and only clip slacks to a small floor. The best
    primal-feasible iterate seen is returned when the cap or a stall hits.
    """
    opt = options or IpmOptions()
    n, m_eq, m = problem.n, problem.m_eq, problem.m_ineq

    v = np.array(start.v, dtype=float)
    lam = (
        np.zeros(m_eq)
        if start.lam is None
        else np.array(start.lam, dtype=float).reshape(m_eq)
    )
    g0 = problem.eval_g(v)
    push = opt.kappa_push if start.warm else opt.cold_push
    s = np.maximum(g0, push)
    if start.mu is None:
        mu_vec = 0.1 / np.maximum(s, 1e-8)
        mu_vec = np.clip(mu_vec, 1e-8, 10.0)
    else:
        mu_vec = np.maximum(np.array(start.mu, dtype=float).reshape(m), opt.kappa_push)
    mu_vec = np.minimum(mu_vec, 1e8)

    has_comp = problem.comp_pairs.shape[0] > 0
    mu_min = opt.tol * 0.1
    if has_comp:
        # the barrier must fall far enough for the relaxed product threshold
        # to land on the real one
        mu_min = min(mu_min, problem.comp_eps / (2.0 * opt.comp_relax))
    barrier = float(np.clip(np.mean(s * mu_vec) if m else 0.0, mu_min, 1.0))

    def relaxed_eps(mu_t):
        if not has_comp:
            return problem.comp_eps
        return max(problem.comp_eps, opt.comp_relax * mu_t)

    best = None  # (rank, primal_inf, kkt, v, lam, mu, s)
    status = MAX_ITER
    it = 0
    stall = 0
    last_best_kkt = math.inf

    def residual_parts(v, s, lam, mu_vec, eps_t):
        g = problem.eval_g(v, comp_eps=eps_t)
        jac = problem.eval_jac(v)
        r_d = problem.obj - problem.a_eq.T @ lam - jac.T @ mu_vec
        r_pe = problem.a_eq @ v - problem.b_eq
        r_pi = g - s
        return g, jac, r_d, r_pe, r_pi

    def error(r_d, r_pe, r_pi, s, lam, mu_vec, mu_t):
        s_max = 100.0
        denom = max(1, m_eq + m)
        s_d = max(s_max, (np.abs(lam).sum() + np.abs(mu_vec).sum()) / denom) / s_max
        s_c = max(s_max, np.abs(mu_vec).sum() / max(1, m)) / s_max
        parts = [float(np.abs(r_d).max()) / s_d if r_d.size else 0.0]
        if r_pe.size:
            parts.append(float(np.abs(r_pe).max()))
        if r_pi.size:
            parts.append(float(np.abs(r_pi).max()))
            parts.append(float(np.abs(s * mu_vec - mu_t).max()) / s_c)
        return max(parts)

    for it in range(opt.max_iter + 1):
        eps_t = relaxed_eps(barrier)
        g, jac, r_d, r_pe, r_pi = residual_parts(v, s, lam, mu_vec, eps_t)
        if not (np.isfinite(r_d).all() and np.isfinite(r_pi).all()):
            break
        e_zero = error(r_d, r_pe, r_pi, s, lam, mu_vec, 0.0)
        prim_inf = problem.structural_infeasibility(v)
        # rank feasible-enough iterates by optimality, the rest by feasibility
        rank = (0, e_zero) if prim_inf <= 1e-6 else (1, prim_inf)
        if best is None or rank < best[0]:
            best = (rank, prim_inf, e_zero, v.copy(), lam.copy(), mu_vec.copy(), s.copy())
        if e_zero <= opt.tol and eps_t == problem.comp_eps:
            status = SOLVED
            best = (rank, prim_inf, e_zero, v.copy(), lam.copy(), mu_vec.copy(), s.copy())
            break
        if it == opt.max_iter:
            break
        if e_zero > 0.999 * last_best_kkt:
            stall += 1
            if stall > opt.stall_limit:
                break
        else:
            stall = 0
            last_best_kkt = e_zero

        if it == 0 and start.warm and e_zero <= 3e-3:
            # near-solution restart: skip the barrier descent entirely
            barrier = mu_min
        # monotone barrier decrease per the residual-versus-barrier rule
        while barrier > mu_min and error(r_d, r_pe, r_pi, s, lam, mu_vec, barrier) <= opt.kappa_eps * barrier:
            barrier = max(opt.mu_shrink * barrier, mu_min)
        if relaxed_eps(barrier) != eps_t:
            # re-anchor the product-row residuals to the tightened threshold
            eps_t = relaxed_eps(barrier)
            g, jac, r_d, r_pe, r_pi = residual_parts(v, s, lam, mu_vec, eps_t)
        r_c = s * mu_vec - barrier

        sigma = np.clip(mu_vec / np.maximum(s, 1e-12), 0.0, 1e10)
        h_lag = problem.lagrangian_hessian(mu_vec)
        w_mat = h_lag + jac.T @ (sigma[:, None] * jac) if m else h_lag

        rhs1 = -(r_d + (jac.T @ (r_c / s + sigma * r_pi) if m else 0.0))
        rhs = np.concatenate([rhs1, -r_pe])

        kmat = np.zeros((n + m_eq, n + m_eq))
        kmat[:n, :n] = w_mat
        kmat[:n, n:] = problem.a_eq.T
        kmat[n:, :n] = problem.a_eq

        delta_x = 0.0
        delta_c = 0.0
        factors = None
        for _ in range(40):
            kreg = kmat.copy()
            if delta_x:
                kreg[:n, :n] += delta_x * np.eye(n)
            if delta_c and m_eq:
                kreg[n:, n:] -= delta_c * np.eye(m_eq)
            try:
                cand = _KktFactors(kreg, target=kmat)
                pos, neg, zero = cand.inertia()
            except (np.linalg.LinAlgError, ValueError):
                pos, neg, zero = 0, 0, n + m_eq
            if pos == n and neg == m_eq and zero == 0:
                factors = cand
                break
            if zero > 0 and m_eq:
                delta_c = max(opt.reg_init, delta_c * 10 if delta_c else opt.reg_init)
            delta_x = max(opt.reg_init, delta_x * 10 if delta_x else opt.reg_init)
            if delta_x > 1e10:
                factors = cand
                break
        if factors is None:
            break

        try:
            refine = 3
            sol = factors.solve(rhs, refine=refine)
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(sol).all():
            break
        dv = sol[:n]
        dlam = -sol[n:]
        ds = jac @ dv + r_pi
        dmu = -(r_c + mu_vec * ds) / s if m else np.zeros(0)

        if m:
            # second-order correctors, remainder terms scaled by the step the
            # current direction could actually take (re-solves, same factors)
            mc = problem.comp_pairs.shape[0]
            m_lin = problem.g_lin.shape[0]
            for _ in range(2):
                ap_aff = _fraction_to_boundary(s, ds, opt.tau_ftb)
                ad_aff = _fraction_to_boundary(mu_vec, dmu, opt.tau_ftb)
                quad = np.zeros(m)
                if mc:
                    i_idx, j_idx = problem.comp_pairs[:, 0], problem.comp_pairs[:, 1]
                    quad[m_lin:m_lin + mc] = -dv[i_idx] * dv[j_idx] * ap_aff * ap_aff
                if problem.ball:
                    idx = problem.ball[0]
                    quad[-1] = -float(dv[idx] @ dv[idx]) * ap_aff * ap_aff
                r_pi_c = r_pi + quad
                r_c_c = r_c + ds * dmu * ap_aff * ad_aff
                rhs_c = np.concatenate(
                    [-(r_d + jac.T @ (r_c_c / s + sigma * r_pi_c)), -r_pe]
                )
                try:
                    sol_c = factors.solve(rhs_c, refine=refine)
                except np.linalg.LinAlgError:
                    break
                if not np.isfinite(sol_c).all():
                    break
                dv_c = sol_c[:n]
                dlam_c = -sol_c[n:]
                ds_c = jac @ dv_c + r_pi_c
                dmu_c = -(r_c_c + mu_vec * ds_c) / s
                # keep the corrected direction unless it collapses the step
                if (
                    _fraction_to_boundary(s, ds_c, opt.tau_ftb) < 0.25 * ap_aff
                    or _fraction_to_boundary(mu_vec, dmu_c, opt.tau_ftb) < 0.25 * ad_aff
                ):
                    break
                gain = max(
                    abs(np.max(np.abs(dv_c - dv), initial=0.0)),
                    abs(np.max(np.abs(dmu_c - dmu), initial=0.0)),
                )
                dv, dlam, ds, dmu = dv_c, dlam_c, ds_c, dmu_c
                if gain < 1e-12:
                    break

        ap = _fraction_to_boundary(s, ds, opt.tau_ftb)
        ad = _fraction_to_boundary(mu_vec, dmu, opt.tau_ftb)
        if stall >= 5:
            # break limit cycles of the full-step Newton map by damping into
            # a common step length
            ap = ad = 0.8 * min(ap, ad)

        if opt.trace:
            print(
                f"ipm it {it:3d} e0={e_zero:9.2e} mu={barrier:8.1e} eps_t={eps_t:8.1e} "
                f"obj={problem.objective(v):11.6f} ap={ap:7.4f} ad={ad:7.4f} "
                f"reg={delta_x:.0e} inf={prim_inf:.1e} mumax={mu_vec.max() if m else 0:.1e}"
            )

        # separate primal/dual steps; halve only on numerical blowup
        for _ in range(8):
            v_n = v + ap * dv
            s_n = np.maximum(s + ap * ds, 1e-12)
            lam_n = lam + ad * dlam
            mu_n = np.maximum(mu_vec + ad * dmu, 1e-12)
            if np.isfinite(v_n).all() and np.isfinite(lam_n).all():
                break
            ap *= 0.5
            ad *= 0.5
        v, s, lam, mu_vec = v_n, s_n, lam_n, mu_n

    _, prim_inf, e_zero, v_b, lam_b, mu_b, s_b = best
    return IpmResult(
        v=v_b,
        lam=lam_b,
        mu=mu_b,
        s=s_b,
        status=status,
        iterations=it,
        kkt_residual=e_zero,
        objective=problem.objective(v_b),
        primal_infeasibility=prim_inf,
    )
