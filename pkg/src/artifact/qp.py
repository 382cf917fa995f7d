"""Convex quadratic programming with box and equality constraints.

Minimizes 0.5 x'Hx + g'x subject to A x = b and l <= x <= u, where H is
sparse symmetric and positive definite on the nullspace of A. Bounds are
handled by a primal-dual interior-point method with Mehrotra's
predictor-corrector; the equality constraints stay inside the saddle-point
Newton system, which is factored sparsely (with a tiny dual regularization
retry when the factorization hits a singular pivot). A primal-dual
active-set pass then turns the interior iterate into an exact vertex
solution whenever the guessed active set verifies, which is what pushes the
optimality certificate down to round-off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConfigurationError, InfeasibleError

DEFAULT_TOL = 100.0 * float(np.finfo(float).eps)

_MAX_ITER = 200
_BOUNDARY_FRACTION = 0.995
_QR_ROWS_LIMIT = 600  # dense rank detection only below this many rows
_ACTIVE_SET_LIMIT = 200  # from-scratch active-set fallback size cap

__all__ = [
    "DEFAULT_TOL",
    "KKTReport",
    "PresolveMap",
    "QPProblem",
    "QPSolution",
    "check_kkt",
    "presolve",
    "solve_qp",
]


# ---------------------------------------------------------------------------
# Problem / solution containers
# ---------------------------------------------------------------------------


@dataclass
class QPProblem:
    """min 0.5 x'Hx + g'x  s.t.  A x = b,  lower <= x <= upper.

    ``nc`` marks how many leading dofs are concentration-like: only those
    may carry finite bounds (flux dofs are never bounded), and the KKT
    report splits its stationarity norm at that index.
    """

    h: sp.spmatrix
    g: np.ndarray
    a: Optional[sp.spmatrix] = None
    b: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    nc: Optional[int] = None
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        self.h = sp.csr_matrix(self.h)
        if self.h.shape != (n, n):
            raise ConfigurationError("Hessian shape does not match gradient")
        gap = abs(self.h - self.h.T)
        if gap.nnz and gap.max() > 1e-10 * (1.0 + abs(self.h).max()):
            raise ConfigurationError("Hessian must be symmetric")
        if self.a is not None:
            self.a = sp.csr_matrix(self.a)
            if self.a.shape[0] == 0:
                self.a = None
                self.b = None
        if self.a is not None:
            if self.b is None:
                raise ConfigurationError("equality matrix given without b")
            self.b = np.asarray(self.b, dtype=float).ravel()
            if self.a.shape != (self.b.size, n):
                raise ConfigurationError("equality block shapes inconsistent")
        elif self.b is not None and np.asarray(self.b).size:
            raise ConfigurationError("equality vector given without matrix")
        else:
            self.b = None
        self.lower = (
            np.full(n, -np.inf)
            if self.lower is None
            else np.array(self.lower, dtype=float).ravel()
        )
        self.upper = (
            np.full(n, np.inf)
            if self.upper is None
            else np.array(self.upper, dtype=float).ravel()
        )
        if self.lower.size != n or self.upper.size != n:
            raise ConfigurationError("bound vectors must have length n")
        if np.any(self.lower > self.upper):
            raise ConfigurationError("lower bound exceeds upper bound")
        if self.nc is None:
            self.nc = n
        if not 0 <= self.nc <= n:
            raise ConfigurationError("nc out of range")
        if np.any(np.isfinite(self.lower[self.nc :])) or np.any(
            np.isfinite(self.upper[self.nc :])
        ):
            raise ConfigurationError("bounds are restricted to the leading dofs")
        if self.tol <= 0.0:
            raise ConfigurationError("tolerance must be positive")

    @property
    def n(self):
        return self.g.size

    @property
    def m(self):
        return 0 if self.a is None else self.a.shape[0]

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.h @ x) + self.g @ x)

    @classmethod
    def from_system(
        cls, system, equalities=True, lower=None, upper=None, tol=DEFAULT_TOL
    ):
        """Wrap an assembled global system as a QP.

        ``lower``/``upper`` are concentration bounds (scalar or per-dof);
        if omitted the system's own bound vectors are used when present.
        Flux dofs stay unbounded; the equality rows are the per-element
        balance constraints.
        """
        nc = system.ncdofs
        n = nc + system.nqdofs
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        low_src = system.lower if lower is None else lower
        up_src = system.upper if upper is None else upper
        if low_src is not None:
            lo[:nc] = np.broadcast_to(np.asarray(low_src, dtype=float), (nc,))
        if up_src is not None:
            hi[:nc] = np.broadcast_to(np.asarray(up_src, dtype=float), (nc,))
        a = system.constraint_matrix() if equalities else None
        b = system.bf if equalities else None
        return cls(
            h=system.full_matrix(),
            g=-system.full_rhs(),
            a=a,
            b=b,
            lower=lo,
            upper=hi,
            nc=nc,
            tol=tol,
        )


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the first-order optimality conditions, by group.

    Stationarity norms are scaled by (1 + max|g|); the equality norm by
    (1 + max|b|). Sign and complementarity entries are absolute.
    """

    stationarity_c: float
    stationarity_q: float
    equality: float
    bounds: float
    dual_min: float
    dual_max: float
    comp_min: float
    comp_max: float
    tol: float

    @property
    def stationarity(self):
        return max(self.stationarity_c, self.stationarity_q)

    @property
    def primal(self):
        return max(self.equality, self.bounds)

    @property
    def dual(self):
        return max(self.dual_min, self.dual_max)

    @property
    def complementarity(self):
        return max(self.comp_min, self.comp_max)

    @property
    def passed(self):
        return (
            max(self.stationarity, self.primal, self.dual, self.complementarity)
            <= self.tol
        )

    def as_dict(self):
        return {
            "stationarity_c": self.stationarity_c,
            "stationarity_q": self.stationarity_q,
            "equality": self.equality,
            "bounds": self.bounds,
            "dual_min": self.dual_min,
            "dual_max": self.dual_max,
            "comp_min": self.comp_min,
            "comp_max": self.comp_max,
            "tol": self.tol,
            "passed": self.passed,
        }


@dataclass
class QPSolution:
    """Primal-dual solution with its optimality certificate."""

    x: np.ndarray
    eq_multipliers: np.ndarray
    mu_min: np.ndarray
    mu_max: np.ndarray
    residuals: dict
    iterations: int
    status: str
    objective: float
    objectives: list = field(default_factory=list)
    report: Optional[KKTReport] = None

    def active_counts(self):
        return {
            "lower": int(np.count_nonzero(self.mu_min > 0.0)),
            "upper": int(np.count_nonzero(self.mu_max > 0.0)),
            "equalities": int(self.eq_multipliers.size),
        }

    def certificate_json(self):
        payload = {
            "status": self.status,
            "iterations": self.iterations,
            "objective": self.objective,
            "residuals": self.residuals,
            "active_sets": self.active_counts(),
        }
        if self.report is not None:
            payload["kkt"] = self.report.as_dict()
        return json.dumps(payload, indent=2)


# ---------------------------------------------------------------------------
# KKT certificate
# ---------------------------------------------------------------------------


def _kkt_report(problem, x, y, mu_min, mu_max):
    g = problem.g
    lo, hi = problem.lower, problem.upper
    grad = problem.h @ x + g - mu_min + mu_max
    if problem.m:
        grad = grad + problem.a.T @ y
    gscale = 1.0 + (np.max(np.abs(g)) if g.size else 0.0)
    nc = problem.nc
    stat_c = float(np.max(np.abs(grad[:nc])) / gscale) if nc else 0.0
    stat_q = float(np.max(np.abs(grad[nc:])) / gscale) if nc < problem.n else 0.0

    if problem.m:
        bscale = 1.0 + np.max(np.abs(problem.b))
        equality = float(np.max(np.abs(problem.a @ x - problem.b)) / bscale)
    else:
        equality = 0.0

    fin_lo = np.isfinite(lo)
    fin_hi = np.isfinite(hi)
    viol = 0.0
    if fin_lo.any():
        viol = max(viol, float(np.max(lo[fin_lo] - x[fin_lo])))
    if fin_hi.any():
        viol = max(viol, float(np.max(x[fin_hi] - hi[fin_hi])))
    bounds = max(viol, 0.0)

    dual_min = max(0.0, float(-np.min(mu_min)) if mu_min.size else 0.0)
    dual_max = max(0.0, float(-np.min(mu_max)) if mu_max.size else 0.0)
    comp_min = (
        float(np.max(np.abs((x[fin_lo] - lo[fin_lo]) * mu_min[fin_lo])))
        if fin_lo.any()
        else 0.0
    )
    comp_max = (
        float(np.max(np.abs((hi[fin_hi] - x[fin_hi]) * mu_max[fin_hi])))
        if fin_hi.any()
        else 0.0
    )
    return KKTReport(
        stationarity_c=stat_c,
        stationarity_q=stat_q,
        equality=equality,
        bounds=bounds,
        dual_min=dual_min,
        dual_max=dual_max,
        comp_min=comp_min,
        comp_max=comp_max,
        tol=problem.tol,
    )


def check_kkt(problem, solution):
    """Recompute every optimality-condition residual for a solution."""
    return _kkt_report(
        problem,
        np.asarray(solution.x, dtype=float),
        np.asarray(solution.eq_multipliers, dtype=float),
        np.asarray(solution.mu_min, dtype=float),
        np.asarray(solution.mu_max, dtype=float),
    )


# ---------------------------------------------------------------------------
# Presolve: fixed variables and redundant equality rows
# ---------------------------------------------------------------------------


@dataclass
class PresolveMap:
    """Index bookkeeping to reinflate a reduced solution."""

    n: int
    m: int
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    keep_rows: np.ndarray


def _row_signature(a_csr, i):
    start, end = a_csr.indptr[i], a_csr.indptr[i + 1]
    return (
        a_csr.indices[start:end].tobytes(),
        a_csr.data[start:end].tobytes(),
    )


def presolve(problem):
    """Drop l=u variables and redundant equality rows.

    Exactly duplicated rows are removed by content; general linear
    dependence is detected by a pivoted dense QR when the row count is
    small enough for that to be cheap. Inconsistent redundant rows raise
    an infeasibility error carrying the offending residual.
    """
    n = problem.n
    lo, hi = problem.lower, problem.upper
    fixed_mask = np.isfinite(lo) & (lo == hi)
    fixed = np.flatnonzero(fixed_mask)
    free = np.flatnonzero(~fixed_mask)
    x_fix = lo[fixed]

    h = problem.h
    g_red = problem.g[free]
    if fixed.size:
        g_red = g_red + h[free][:, fixed] @ x_fix

    a_red = None
    b_red = None
    keep = np.arange(problem.m)
    if problem.m:
        b_adj = problem.b.copy()
        if fixed.size:
            b_adj = b_adj - problem.a[:, fixed] @ x_fix
        a_free = sp.csr_matrix(problem.a[:, free])
        a_free.sort_indices()
        b_scale = 1.0 + np.max(np.abs(problem.b))

        seen = {}
        keep_list = []
        for i in range(a_free.shape[0]):
            sig = _row_signature(a_free, i)
            if sig in seen:
                gap = abs(b_adj[i] - b_adj[seen[sig]])
                if gap > 1e-9 * b_scale:
                    raise InfeasibleError(
                        "duplicate equality rows with conflicting data",
                        residual=float(gap),
                    )
            else:
                seen[sig] = i
                keep_list.append(i)
        keep = np.array(keep_list, dtype=int)

        if 1 < keep.size <= _QR_ROWS_LIMIT:
            at = a_free[keep].toarray().T  # columns are rows of A
            _, r, piv = scipy.linalg.qr(at, mode="economic", pivoting=True)
            diag = np.abs(np.diag(r))
            top = diag[0] if diag.size else 0.0
            rank = int(np.sum(diag > max(at.shape) * np.finfo(float).eps * top))
            if 0 < rank < keep.size:
                basis = piv[:rank]
                extra = piv[rank:]
                coef = scipy.linalg.solve_triangular(
                    r[:rank, :rank], r[:rank, rank:]
                )
                resid = b_adj[keep][extra] - coef.T @ b_adj[keep][basis]
                worst = float(np.max(np.abs(resid))) if resid.size else 0.0
                if worst > 1e-8 * b_scale:
                    raise InfeasibleError(
                        "linearly dependent equality rows with conflicting data",
                        residual=worst,
                    )
                keep = keep[np.sort(basis)]

        a_red = sp.csr_matrix(a_free[keep])
        b_red = b_adj[keep]

    nc_red = int(np.sum(free < problem.nc))
    reduced = QPProblem(
        h=h[free][:, free],
        g=g_red,
        a=a_red,
        b=b_red,
        lower=lo[free],
        upper=hi[free],
        nc=nc_red,
        tol=problem.tol,
    )
    pmap = PresolveMap(
        n=n,
        m=problem.m,
        free=free,
        fixed=fixed,
        fixed_values=x_fix,
        keep_rows=keep,
    )
    return reduced, pmap


# ---------------------------------------------------------------------------
# Sparse saddle factorizations with a regularized retry
# ---------------------------------------------------------------------------


class _SaddleFactor:
    """LU of [[M, A'], [A, 0]]; retries with -delta I on the dual block.

    After a regularized factorization, solves run two steps of iterative
    refinement against the unregularized matrix, so consistent redundant
    rows do not poison the Newton directions.
    """

    def __init__(self, kkt, m):
        self.kkt = kkt.tocsc()
        self.m = m
        self.regularized = False
        try:
            self.lu = spla.splu(self.kkt)
        except RuntimeError:
            self.lu = None
        if self.lu is None or not self._is_usable():
            nt = self.kkt.shape[0]
            delta = 1e-12 * (1.0 + abs(self.kkt).max())
            shift = np.zeros(nt)
            if m:
                shift[nt - m :] = -delta
            else:
                shift[:] = delta
            try:
                self.lu = spla.splu((self.kkt + sp.diags(shift)).tocsc())
            except RuntimeError as exc:
                raise AssemblyError(
                    "saddle system is singular even after regularization"
                ) from exc
            self.regularized = True

    def _is_usable(self):
        probe = self.lu.solve(np.ones(self.kkt.shape[0]))
        return bool(np.all(np.isfinite(probe)))

    def solve(self, rhs):
        sol = self.lu.solve(rhs)
        if self.regularized:
            for _ in range(2):
                sol = sol + self.lu.solve(rhs - self.kkt @ sol)
            rel = np.max(np.abs(rhs - self.kkt @ sol)) / (
                1.0 + np.max(np.abs(rhs))
            )
            if not np.isfinite(rel) or rel > 1e-6:
                raise AssemblyError(
                    "saddle system residual is irreducible (singular operator)"
                )
        if not np.all(np.isfinite(sol)):
            raise AssemblyError("saddle solve produced non-finite values")
        return sol


def _equality_solve(problem):
    """Direct solve when no bounds are active: SPD or saddle system."""
    n = problem.n
    if problem.m == 0:
        factor = _SaddleFactor(problem.h.tocsc(), 0)
        return factor.solve(-problem.g), np.zeros(0)
    kkt = sp.bmat([[problem.h, problem.a.T], [problem.a, None]], format="csc")
    rhs = np.concatenate([-problem.g, problem.b])
    sol = _SaddleFactor(kkt, problem.m).solve(rhs)
    return sol[:n], sol[n:]


# ---------------------------------------------------------------------------
# Interior-point core
# ---------------------------------------------------------------------------


def _max_step(pairs):
    alpha = np.inf
    for val, dval in pairs:
        neg = dval < 0.0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-val[neg] / dval[neg])))
    return alpha


def _start_point(problem, x0):
    lo, hi = problem.lower, problem.upper
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    x = np.ones(problem.n)
    both = fin_lo & fin_hi
    x[both] = 0.5 * (lo[both] + hi[both])
    only_lo = fin_lo & ~fin_hi
    x[only_lo] = lo[only_lo] + 1.0
    only_hi = fin_hi & ~fin_lo
    x[only_hi] = hi[only_hi] - 1.0
    if x0 is not None:
        given = np.clip(np.asarray(x0, dtype=float), lo, hi)
        x = 0.999 * given + 0.001 * x
    return x


def _interior_point(problem, x0=None, max_iter=_MAX_ITER):
    n, m = problem.n, problem.m
    h, g, a, b = problem.h, problem.g, problem.a, problem.b
    lo, hi = problem.lower, problem.upper
    tol = problem.tol
    il = np.flatnonzero(np.isfinite(lo))
    iu = np.flatnonzero(np.isfinite(hi))
    nb = il.size + iu.size

    x = _start_point(problem, x0)
    y = np.zeros(m)
    zl = np.ones(il.size)
    zu = np.ones(iu.size)

    gscale = 1.0 + (np.max(np.abs(g)) if g.size else 0.0)
    bscale = 1.0 + (np.max(np.abs(b)) if m else 0.0)

    objectives = []
    status = "best-feasible"
    best_crit = np.inf
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        sl = x[il] - lo[il]
        su = hi[iu] - x[iu]
        grad = h @ x + g
        rd = grad.copy()
        if m:
            rd += a.T @ y
        rd[il] -= zl
        rd[iu] += zu
        rp = (a @ x - b) if m else np.zeros(0)
        mu = (sl @ zl + su @ zu) / nb

        objectives.append(problem.objective(x))
        stat = float(np.max(np.abs(rd))) / gscale
        prim = float(np.max(np.abs(rp))) / bscale if m else 0.0
        crit = max(stat, prim, mu)
        if crit <= tol:
            status = "optimal"
            break
        if crit >= 0.9 * best_crit:
            stall += 1
            if stall >= 12:
                break
        else:
            stall = 0
            best_crit = crit

        d = np.zeros(n)
        np.add.at(d, il, zl / sl)
        np.add.at(d, iu, zu / su)
        if m:
            kkt = sp.bmat(
                [[h + sp.diags(d), a.T], [a, None]], format="csc"
            )
        else:
            kkt = (h + sp.diags(d)).tocsc()
        factor = _SaddleFactor(kkt, m)

        def newton(rcl, rcu):
            rhs_x = -rd.copy()
            rhs_x[il] -= rcl / sl
            rhs_x[iu] += rcu / su
            rhs = np.concatenate([rhs_x, -rp]) if m else rhs_x
            sol = factor.solve(rhs)
            dx = sol[:n]
            dy = sol[n:] if m else np.zeros(0)
            dzl = -(rcl + zl * dx[il]) / sl
            dzu = -(rcu - zu * dx[iu]) / su
            return dx, dy, dzl, dzu

        # predictor (affine scaling direction)
        rcl = sl * zl
        rcu = su * zu
        dx, dy, dzl, dzu = newton(rcl, rcu)
        dsl, dsu = dx[il], -dx[iu]
        a_p = min(1.0, _max_step([(sl, dsl), (su, dsu)]))
        a_d = min(1.0, _max_step([(zl, dzl), (zu, dzu)]))
        mu_aff = (
            (sl + a_p * dsl) @ (zl + a_d * dzl)
            + (su + a_p * dsu) @ (zu + a_d * dzu)
        ) / nb
        sigma = 0.0 if mu <= 0.0 else min(1.0, max(0.0, (mu_aff / mu) ** 3))

        # corrector
        rcl = sl * zl + dsl * dzl - sigma * mu
        rcu = su * zu + dsu * dzu - sigma * mu
        dx, dy, dzl, dzu = newton(rcl, rcu)
        dsl, dsu = dx[il], -dx[iu]
        a_p = min(1.0, _BOUNDARY_FRACTION * _max_step([(sl, dsl), (su, dsu)]))
        a_d = min(1.0, _BOUNDARY_FRACTION * _max_step([(zl, dzl), (zu, dzu)]))

        x = x + a_p * dx
        y = y + a_d * dy
        zl = zl + a_d * dzl
        zu = zu + a_d * dzu

    mu_min = np.zeros(n)
    mu_max = np.zeros(n)
    mu_min[il] = zl
    mu_max[iu] = zu
    return x, y, mu_min, mu_max, it, status, objectives


# ---------------------------------------------------------------------------
# Primal-dual active-set refinement (polish / fallback)
# ---------------------------------------------------------------------------


def _active_set_refine(problem, x, y, mu_min, mu_max, max_cycles=3):
    """Iterate exact KKT solves on the predicted active set.

    Returns (x, y, mu_min, mu_max) once the active-set guess verifies
    (all multipliers non-negative, all inactive bounds satisfied), or
    None when no guess within the cycle budget does.
    """
    n, m = problem.n, problem.m
    h, g, a, b = problem.h, problem.g, problem.a, problem.b
    lo, hi = problem.lower, problem.upper
    gscale = 1.0 + (np.max(np.abs(g)) if g.size else 0.0)
    clip = 1e-13 * gscale
    x, mu_min, mu_max = x.copy(), mu_min.copy(), mu_max.copy()

    prev_sets = None
    for _ in range(max_cycles):
        score_lo = mu_min + (lo - x)
        score_hi = mu_max + (x - hi)
        act_lo = np.isfinite(lo) & (score_lo > 0.0)
        act_hi = np.isfinite(hi) & (score_hi > 0.0)
        overlap = act_lo & act_hi
        if np.any(overlap):
            prefer_lo = score_lo >= score_hi
            act_lo &= ~overlap | prefer_lo
            act_hi &= ~overlap | ~prefer_lo
        al = np.flatnonzero(act_lo)
        au = np.flatnonzero(act_hi)
        sets = (al.tobytes(), au.tobytes())
        if sets == prev_sets:
            return None
        prev_sets = sets

        nl, nu = al.size, au.size
        el = sp.csr_matrix(
            (np.ones(nl), (np.arange(nl), al)), shape=(nl, n)
        )
        eu = sp.csr_matrix(
            (np.ones(nu), (np.arange(nu), au)), shape=(nu, n)
        )
        # assemble [[H, A', El', Eu'], [A,0,0,0], [El,0,0,0], [Eu,0,0,0]]
        mats = []
        if m:
            mats.append((a, b))
        if nl:
            mats.append((el, lo[al]))
        if nu:
            mats.append((eu, hi[au]))
        if mats:
            grid = [[h] + [mat.T for mat, _ in mats]]
            for mat, _ in mats:
                grid.append([mat] + [None] * len(mats))
            kkt = sp.bmat(grid, format="csc")
            rhs = np.concatenate([-g] + [vec for _, vec in mats])
        else:
            kkt = h.tocsc()
            rhs = -g
        try:
            sol = _SaddleFactor(kkt, kkt.shape[0] - n).solve(rhs)
        except AssemblyError:
            return None

        xn = sol[:n]
        pos = n
        yn = sol[pos : pos + m] if m else np.zeros(0)
        pos += m
        ml = sol[pos : pos + nl]
        pos += nl
        mu_ = sol[pos : pos + nu]
        xn[al] = lo[al]
        xn[au] = hi[au]

        mn = np.zeros(n)
        mx = np.zeros(n)
        mn[al] = -ml
        mx[au] = mu_

        fin_lo = np.isfinite(lo)
        fin_hi = np.isfinite(hi)
        viol = 0.0
        if fin_lo.any():
            viol = max(viol, float(np.max(lo[fin_lo] - xn[fin_lo])))
        if fin_hi.any():
            viol = max(viol, float(np.max(xn[fin_hi] - hi[fin_hi])))
        negdual = 0.0
        if nl:
            negdual = max(negdual, float(-np.min(mn[al])))
        if nu:
            negdual = max(negdual, float(-np.min(mx[au])))

        if viol <= clip and negdual <= clip:
            np.clip(mn, 0.0, None, out=mn)
            np.clip(mx, 0.0, None, out=mx)
            return xn, yn, mn, mx

        x, mu_min, mu_max = xn, mn, mx
    return None


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def solve_qp(problem, x0=None):
    """Solve the QP and attach a recomputed KKT certificate.

    The path depends on the constraint set: no finite bounds means a
    single direct (saddle) solve; otherwise the interior-point iteration
    runs, followed by an active-set polish that verifies and sharpens the
    answer. A from-scratch active-set pass is the fallback for small
    problems when the interior method stalls.
    """
    red, pmap = presolve(problem)
    n_r = red.n

    # Small instances: verify convexity on the feasible subspace densely.
    if 0 < n_r <= _ACTIVE_SET_LIMIT:
        hd = red.h.toarray()
        z = scipy.linalg.null_space(red.a.toarray()) if red.m else np.eye(n_r)
        if z.shape[1]:
            hz = z.T @ hd @ z
            w = np.linalg.eigvalsh(0.5 * (hz + hz.T))
            if w[0] <= -1e-10 * max(1.0, abs(w[-1])):
                raise AssemblyError(
                    "Hessian is not positive definite on the feasible subspace"
                )

    objectives = []
    iterations = 0
    if n_r == 0:
        x_r = np.zeros(0)
        y_r = np.zeros(red.m)
        mn_r = np.zeros(0)
        mx_r = np.zeros(0)
    elif not (np.isfinite(red.lower).any() or np.isfinite(red.upper).any()):
        x_r, y_r = _equality_solve(red)
        mn_r = np.zeros(n_r)
        mx_r = np.zeros(n_r)
        objectives = [red.objective(x_r)]
    else:
        x0_r = None if x0 is None else np.asarray(x0, dtype=float)[pmap.free]
        x_r, y_r, mn_r, mx_r, iterations, status_ip, objectives = _interior_point(
            red, x0=x0_r
        )
        polished = _active_set_refine(red, x_r, y_r, mn_r, mx_r)
        if polished is None and status_ip != "optimal" and n_r <= _ACTIVE_SET_LIMIT:
            x_f, y_f = _equality_solve(
                QPProblem(h=red.h, g=red.g, a=red.a, b=red.b, nc=red.nc)
            )
            x_f = np.clip(x_f, red.lower, red.upper)
            polished = _active_set_refine(
                red, x_f, y_f, np.zeros(n_r), np.zeros(n_r), max_cycles=64
            )
        if polished is not None:
            x_r, y_r, mn_r, mx_r = polished

    x = np.empty(problem.n)
    x[pmap.free] = x_r
    x[pmap.fixed] = pmap.fixed_values
    y = np.zeros(problem.m)
    y[pmap.keep_rows] = y_r
    mu_min = np.zeros(problem.n)
    mu_max = np.zeros(problem.n)
    mu_min[pmap.free] = mn_r
    mu_max[pmap.free] = mx_r
    if pmap.fixed.size:
        grad = problem.h @ x + problem.g
        if problem.m:
            grad = grad + problem.a.T @ y
        res = grad[pmap.fixed]
        mu_min[pmap.fixed] = np.maximum(res, 0.0)
        mu_max[pmap.fixed] = np.maximum(-res, 0.0)

    if problem.m:
        eq_res = np.abs(problem.a @ x - problem.b)
        worst = float(np.max(eq_res))
        if worst > 1e-6 * (1.0 + np.max(np.abs(problem.b))):
            raise InfeasibleError(
                "equality constraints are not satisfied at the optimum",
                residual=worst,
            )

    report = _kkt_report(problem, x, y, mu_min, mu_max)
    status = "optimal" if report.passed else "best-feasible"
    residuals = {
        "stationarity": report.stationarity,
        "primal": report.primal,
        "dual": report.dual,
        "complementarity": report.complementarity,
    }
    return QPSolution(
        x=x,
        eq_multipliers=y,
        mu_min=mu_min,
        mu_max=mu_max,
        residuals=residuals,
        iterations=iterations,
        status=status,
        objective=problem.objective(x),
        objectives=objectives,
        report=report,
    )
