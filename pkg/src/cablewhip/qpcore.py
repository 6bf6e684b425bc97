"""Convex quadratic programming by operator splitting.

Problems are stated in the canonical form

    minimize    1/2 x' P x + q' x
    subject to  l <= A x <= u

and solved with the ADMM iteration popularised by OSQP: Ruiz equilibration,
a cached sparse factorization of the reduced KKT matrix, adaptive step size,
a primal infeasibility certificate and an active-set polish.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

INF = np.inf

# scaling clamps and step size limits
_MIN_SCALING = 1e-4
_MAX_SCALING = 1e4
_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_RHO_EQ_FACTOR = 1e3
_EQ_TOL = 1e-10

# problems up to this many variables iterate in compiled code on a dense
# Cholesky factor; larger ones use a sparse LU from Python
DENSE_MAX_N = 1500
DENSE_MAX_ENTRIES = 4_000_000
_INV_MAX_COND = 1e10

# return codes of the iteration kernel
_RUNNING, _CONVERGED, _INFEASIBLE, _BREAKDOWN = 0, 1, 2, 3


class Status(str, enum.Enum):
    SOLVED = "Solved"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    MAX_ITERATIONS = "MaxIterations"


class DimensionError(ValueError):
    """Raised when problem data or a warm start has inconsistent shape."""


@dataclass
class QpProblem:
    """QP data. ``P`` and ``A`` are stored as CSC matrices."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.A is None:
            self.A = sp.csc_matrix((0, n))
        self.A = sp.csc_matrix(self.A, dtype=float)
        m = self.A.shape[0]
        self.l = -INF * np.ones(m) if self.l is None else np.asarray(self.l, dtype=float).ravel()
        self.u = INF * np.ones(m) if self.u is None else np.asarray(self.u, dtype=float).ravel()
        if self.P.shape != (n, n):
            raise DimensionError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[1] != n:
            raise DimensionError(f"A has {self.A.shape[1]} columns, expected {n}")
        if self.l.size != m or self.u.size != m:
            raise DimensionError(f"bounds have sizes {self.l.size}/{self.u.size}, expected {m}")
        if np.any(self.l > self.u):
            bad = int(np.flatnonzero(self.l > self.u)[0])
            raise ValueError(f"l > u in row {bad}: {self.l[bad]} > {self.u[bad]}")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)

    def check_invariants(self, n_probes: int = 20, seed: int = 0, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` if P is not symmetric or fails random PSD probes."""
        asym = abs(self.P - self.P.T)
        scale = max(1.0, abs(self.P).max() if self.P.nnz else 0.0)
        if asym.nnz and asym.max() > tol * scale:
            raise ValueError("P is not symmetric")
        rng = np.random.default_rng(seed)
        for _ in range(n_probes):
            v = rng.standard_normal(self.n)
            if v @ (self.P @ v) < -tol * scale * (v @ v):
                raise ValueError("P is not positive semidefinite")


@dataclass
class SolverSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    infeasibility_tol: float = 1e-5
    scaling_iter: int = 10
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 50
    check_interval: int = 5
    polish: bool = True
    polish_delta: float = 1e-7
    polish_refine_iter: int = 5
    polish_rounds: int = 50
    # try the active-set polish every this many iterations (0 disables);
    # a polished point that passes the KKT test ends the iteration early
    early_polish_interval: int = 25

    def __post_init__(self):
        for name in ("eps_abs", "eps_rel", "rho", "sigma", "infeasibility_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.early_polish_interval < 0:
            raise ValueError("early_polish_interval must be non-negative")


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: Status
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float = np.nan
    polished: bool = False
    rho: float = np.nan
    # filled on breakdown or infeasibility: a short human readable note
    info: str = ""
    # primal infeasibility certificate (unscaled), when status is PrimalInfeasible
    certificate: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _col_inf_norms(M: sp.csc_matrix) -> np.ndarray:
    out = np.zeros(M.shape[1])
    if M.nnz:
        nz = np.flatnonzero(np.diff(M.indptr))
        out[nz] = np.maximum.reduceat(np.abs(M.data), M.indptr[nz])
    return out


def _row_inf_norms(M: sp.csc_matrix) -> np.ndarray:
    out = np.zeros(M.shape[0])
    if M.nnz:
        np.maximum.at(out, M.indices, np.abs(M.data))
    return out


def _limit_scaling(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[v < _MIN_SCALING] = 1.0
    return np.minimum(v, _MAX_SCALING)


def project_box(v: np.ndarray, l: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(v, l), u)


def check_kkt(problem: QpProblem, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Infinity-norm feasibility and stationarity residuals of ``(x, y)``.

    The primal residual is the distance of ``A x`` from the box ``[l, u]``;
    the dual residual is ``|| P x + q + A' y ||``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != problem.n or y.size != problem.m:
        raise DimensionError(f"x/y sizes {x.size}/{y.size} do not match n={problem.n}, m={problem.m}")
    Ax = problem.A @ x
    r_prim = _inf_norm(Ax - project_box(Ax, problem.l, problem.u))
    r_dual = _inf_norm(problem.P @ x + problem.q + problem.A.T @ y)
    return r_prim, r_dual


class _Workspace:
    """Scaled problem data and the ADMM iterates for one solve."""

    def __init__(self, problem: QpProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        n, m = problem.n, problem.m
        P = problem.P.copy()
        q = problem.q.copy()
        A = problem.A.copy()
        P.sort_indices()
        A.sort_indices()
        # scaling acts on the stored entries directly: M_ij *= r_i c_j
        p_cols = np.repeat(np.arange(n), np.diff(P.indptr))
        a_cols = np.repeat(np.arange(n), np.diff(A.indptr))
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0
        for _ in range(settings.scaling_iter):
            d = _limit_scaling(np.maximum(_col_inf_norms(P), _col_inf_norms(A)))
            d = 1.0 / np.sqrt(d)
            e = 1.0 / np.sqrt(_limit_scaling(_row_inf_norms(A))) if m else np.ones(0)
            P.data *= d[P.indices] * d[p_cols]
            A.data *= e[A.indices] * d[a_cols]
            q = d * q
            D *= d
            E *= e
            cost = max(float(np.mean(_col_inf_norms(P))) if n else 0.0, _inf_norm(q))
            cost = 1.0 / float(_limit_scaling(np.array([cost]))[0])
            P.data *= cost
            q = q * cost
            c *= cost
        self.P, self.q, self.A = P.tocsc(), q, A.tocsc()
        self.AT = self.A.T.tocsc()
        self.D, self.E, self.c = D, E, c
        self.Dinv, self.Einv = 1.0 / D, (1.0 / E if m else E)
        self.l = E * problem.l
        self.u = E * problem.u
        self.eq = (problem.u - problem.l) < _EQ_TOL
        self.free = np.isinf(problem.l) & np.isinf(problem.u)
        self.rho = settings.rho
        self.rho_vec = self._rho_vector(self.rho)
        self.factor = None
        self.chol = self.chol_t = None
        self._Ad = self._AdT = self._Pd = None
        self.kinv = None
        self.dense = n <= DENSE_MAX_N and n * m <= DENSE_MAX_ENTRIES
        self._factor()

    def _rho_vector(self, rho: float) -> np.ndarray:
        r = np.full(self.problem.m, rho)
        r[self.eq] = min(_RHO_EQ_FACTOR * rho, _RHO_MAX)
        r[self.free] = _RHO_MIN
        return r

    def _factor(self) -> None:
        n = self.problem.n
        if self.dense:
            if self._Ad is None:
                self._Ad = self.A.toarray()
                self._AdT = np.ascontiguousarray(self._Ad.T)
                self._Pd = self.P.toarray()
            K = self._Pd + (self._AdT * self.rho_vec) @ self._Ad
            K[np.diag_indices(n)] += self.settings.sigma
            self.chol = np.linalg.cholesky(K)
            self.chol_t = np.ascontiguousarray(self.chol.T)
            # the explicit inverse is much faster to apply and accurate
            # enough for the iteration when K is well conditioned
            kinv = sla.cho_solve((self.chol, True), np.eye(n), check_finite=False)
            cond = np.abs(K).sum(axis=0).max() * np.abs(kinv).sum(axis=0).max()
            self.kinv = np.ascontiguousarray(kinv) if cond < _INV_MAX_COND else self.chol
            return
        K = self.P + self.settings.sigma * sp.eye(n, format="csc")
        if self.problem.m:
            K = K + self.AT @ sp.diags(self.rho_vec) @ self.A
        self.factor = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")

    def solve_kkt(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            w = sla.solve_triangular(self.chol, rhs, lower=True, check_finite=False)
            return sla.solve_triangular(self.chol, w, lower=True, trans="T", check_finite=False)
        return self.factor.solve(rhs)

    def update_rho(self, rho: float) -> None:
        self.rho = float(np.clip(rho, _RHO_MIN, _RHO_MAX))
        self.rho_vec = self._rho_vector(self.rho)
        self._factor()

    # scaled <-> unscaled conversions
    def unscale_x(self, xs):
        return self.D * xs

    def unscale_y(self, ys):
        return self.E * ys / self.c

    def scale_x(self, x):
        return self.Dinv * x

    def scale_y(self, y):
        return self.Einv * y * self.c


def _residuals(ws: _Workspace, x, z, y):
    """Unscaled residuals and their tolerances for scaled iterates."""
    s = ws.settings
    Ax = ws.A @ x
    Px = ws.P @ x
    ATy = ws.AT @ y
    r_prim = _inf_norm(ws.Einv * (Ax - z))
    r_dual = _inf_norm(ws.Dinv * (Px + ws.q + ATy)) / ws.c
    eps_prim = s.eps_abs + s.eps_rel * max(_inf_norm(ws.Einv * Ax), _inf_norm(ws.Einv * z))
    eps_dual = s.eps_abs + s.eps_rel * max(
        _inf_norm(ws.Dinv * Px), _inf_norm(ws.Dinv * ATy), _inf_norm(ws.Dinv * ws.q)
    ) / ws.c
    return r_prim, r_dual, eps_prim, eps_dual, Ax, Px, ATy


def _primal_infeasible(ws: _Workspace, dy: np.ndarray) -> bool:
    dy = dy.copy()
    # project onto the polar of the recession cone of [l, u]
    dy[np.isinf(ws.u) & (dy > 0)] = 0.0
    dy[np.isinf(ws.l) & (dy < 0)] = 0.0
    norm_dy = _inf_norm(ws.E * dy)
    if norm_dy <= 1e-30:
        return False
    eps = ws.settings.infeasibility_tol * norm_dy
    if _inf_norm(ws.Dinv * (ws.AT @ dy)) > eps:
        return False
    pos = dy > 0
    neg = dy < 0
    support = float(ws.u[pos] @ dy[pos] + ws.l[neg] @ dy[neg])
    return support < -eps


def _refine_certificate(ws: _Workspace, dy: np.ndarray) -> Optional[np.ndarray]:
    """Look for an exact infeasibility certificate near ``dy``.

    The direction ``dy`` of the dual iterates identifies infeasibility long
    before it satisfies ``A' dy = 0`` to tolerance. Its significant entries
    ``S`` are projected onto ``{d : A_S' d = 0}``; the projection is returned
    if it passes the infeasibility test.
    """
    scale = _inf_norm(dy)
    if scale <= 1e-30:
        return None
    S = np.flatnonzero(np.abs(dy) > 1e-3 * scale)
    AS = ws.A[S].toarray()
    coef, *_ = np.linalg.lstsq(AS, dy[S], rcond=None)
    out = np.zeros_like(dy)
    out[S] = dy[S] - AS @ coef
    if _inf_norm(out) > 1e-6 * scale and _primal_infeasible(ws, out):
        return out
    return None


def _polish(ws: _Workspace, x, z, y):
    """Solve the equality-constrained QP on a guessed active set.

    The guess comes from the ADMM iterates and is corrected for a few rounds
    in primal-dual active-set fashion: violated rows are added and rows whose
    multiplier has the wrong sign are released. Returns scaled ``(x, y)`` or
    ``None`` when the KKT solve breaks down.
    """
    s = ws.settings
    n, m = ws.problem.n, ws.problem.m
    low = (z - ws.l) < -y
    upp = (ws.u - z) < y
    low |= ws.eq
    upp &= ~ws.eq
    xp = yp = None
    best_bad, stall = np.inf, 0
    seen = set()
    for _ in range(s.polish_rounds):
        key = (low.tobytes(), upp.tobytes())
        if key in seen:
            break  # cycling
        seen.add(key)
        act = np.flatnonzero(low | upp)
        b = np.where(low[act], ws.l[act], ws.u[act])
        k = act.size
        rhs = np.r_[-ws.q, b]
        reg = np.r_[np.full(n, s.polish_delta), np.full(k, -s.polish_delta)]
        if ws.dense:
            Ar = ws._Ad[act]
            K = np.block([[ws._Pd, Ar.T], [Ar, np.zeros((k, k))]])
            Kr = K.copy()
            Kr[np.diag_indices(n + k)] += reg
            try:
                lu = sla.lu_factor(Kr, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return None
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            for _ in range(s.polish_refine_iter):
                sol = sol + sla.lu_solve(lu, rhs - K @ sol, check_finite=False)
        else:
            Ar = ws.A[act]
            K = sp.bmat([[ws.P, Ar.T], [Ar, None]], format="csc")
            try:
                lu = spla.splu((K + sp.diags(reg)).tocsc(), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError:
                return None
            sol = lu.solve(rhs)
            for _ in range(s.polish_refine_iter):
                sol = sol + lu.solve(rhs - K @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        xp = sol[:n]
        yp = np.zeros(m)
        yp[act] = sol[n:]
        Ax = ws.A @ xp
        viol_low = (Ax < ws.l - 1e-12 * (1 + np.abs(ws.l))) & ~low
        viol_upp = (Ax > ws.u + 1e-12 * (1 + np.abs(ws.u))) & ~upp
        wrong = ((low & (yp > 0)) | (upp & (yp < 0))) & ~ws.eq
        bad = int(viol_low.sum() + viol_upp.sum() + wrong.sum())
        if bad == 0:
            break
        if bad < best_bad:
            best_bad, stall = bad, 0
        else:
            stall += 1
            if stall >= 5:
                break
        if viol_low.any() or viol_upp.any():
            low |= viol_low
            upp |= viol_upp
            continue
        low &= ~wrong
        upp &= ~wrong
    return xp, yp


def _polish_accepted(ws: _Workspace, xp: np.ndarray, yp: np.ndarray) -> bool:
    """KKT test of a polished pair in unscaled terms.

    Besides the primal and dual residuals this checks the multiplier signs:
    a row may pull towards its lower bound only if it sits there, and
    likewise for the upper bound.
    """
    s = ws.settings
    problem = ws.problem
    x, y = ws.unscale_x(xp), ws.unscale_y(yp)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        return False
    Ax = problem.A @ x
    Px = problem.P @ x
    ATy = problem.A.T @ y
    zc = project_box(Ax, problem.l, problem.u)
    eps_p = s.eps_abs + s.eps_rel * max(_inf_norm(Ax), _inf_norm(zc))
    eps_d = s.eps_abs + s.eps_rel * max(_inf_norm(Px), _inf_norm(ATy), _inf_norm(problem.q))
    if _inf_norm(Ax - zc) > eps_p or _inf_norm(Px + problem.q + ATy) > eps_d:
        return False
    at_low = Ax <= problem.l + eps_p
    at_upp = Ax >= problem.u - eps_p
    bad = ((y > eps_d) & ~at_upp) | ((y < -eps_d) & ~at_low)
    return not bad.any()


@numba.njit(cache=True)
def _csc_matvec(data, indices, indptr, v, out):
    out[:] = 0.0
    for j in range(indptr.size - 1):
        vj = v[j]
        if vj != 0.0:
            for k in range(indptr[j], indptr[j + 1]):
                out[indices[k]] += data[k] * vj


@numba.njit(cache=True)
def _csc_rmatvec(data, indices, indptr, w, out):
    # A' w for A stored column-wise
    for j in range(indptr.size - 1):
        s = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            s += data[k] * w[indices[k]]
        out[j] = s


@numba.njit(cache=True)
def _chol_solve(L, U, b, x):
    # L lower triangular, U = L' stored contiguously
    n = b.size
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= U[i, k] * x[k]
        x[i] = s / U[i, i]


@numba.njit(cache=True)
def _admm_dense(
    Ad, AdT, P_data, P_ind, P_ptr, q, l, u, rho, Kinv, L, U, use_inv, sigma, alpha,
    c, D_inv, E, E_inv, eps_abs, eps_rel, inf_tol, check_every, it, stop, last,
    x, z, y, y_prev,
):
    """ADMM iterations ``it+1 .. stop`` with dense ``A`` and a dense KKT solve.

    The x-update uses the explicit inverse ``Kinv`` when ``use_inv`` is set
    and the Cholesky factors ``L, U = L'`` otherwise. Updates
    ``x, z, y, y_prev`` in place and returns ``(code, iteration, r_prim,
    r_dual)``.
    """
    n, m = x.size, z.size
    r_prim = np.inf
    r_dual = np.inf
    w = np.empty(m)
    xt = np.empty(n)
    Px = np.empty(n)
    dy = np.empty(m)
    while it < stop:
        it += 1
        for i in range(m):
            y_prev[i] = y[i]
            w[i] = rho[i] * z[i] - y[i]
        rhs = np.dot(AdT, w)
        for j in range(n):
            rhs[j] += sigma * x[j] - q[j]
        if use_inv:
            xt[:] = np.dot(Kinv, rhs)
        else:
            _chol_solve(L, U, rhs, xt)
        zt = np.dot(Ad, xt)
        for j in range(n):
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j]
        for i in range(m):
            zh = alpha * zt[i] + (1.0 - alpha) * z[i]
            zi = min(max(zh + y[i] / rho[i], l[i]), u[i])
            y[i] = y[i] + rho[i] * (zh - zi)
            z[i] = zi
        if it % check_every == 0 or it == last:
            for j in range(n):
                if not np.isfinite(x[j]):
                    return _BREAKDOWN, it, r_prim, r_dual
            for i in range(m):
                if not np.isfinite(y[i]):
                    return _BREAKDOWN, it, r_prim, r_dual
            Ax = np.dot(Ad, x)
            _csc_matvec(P_data, P_ind, P_ptr, x, Px)
            ATy = np.dot(AdT, y)
            r_prim = 0.0
            n_ax = 0.0
            n_z = 0.0
            for i in range(m):
                r_prim = max(r_prim, abs(E_inv[i] * (Ax[i] - z[i])))
                n_ax = max(n_ax, abs(E_inv[i] * Ax[i]))
                n_z = max(n_z, abs(E_inv[i] * z[i]))
            r_dual = 0.0
            n_px = 0.0
            n_aty = 0.0
            n_q = 0.0
            for j in range(n):
                r_dual = max(r_dual, abs(D_inv[j] * (Px[j] + q[j] + ATy[j])))
                n_px = max(n_px, abs(D_inv[j] * Px[j]))
                n_aty = max(n_aty, abs(D_inv[j] * ATy[j]))
                n_q = max(n_q, abs(D_inv[j] * q[j]))
            r_dual /= c
            eps_p = eps_abs + eps_rel * max(n_ax, n_z)
            eps_d = eps_abs + eps_rel * max(n_px, n_aty, n_q) / c
            if r_prim <= eps_p and r_dual <= eps_d:
                return _CONVERGED, it, r_prim, r_dual
            # infeasibility test on dy projected onto the polar of the
            # recession cone of [l, u]
            norm_dy = 0.0
            support = 0.0
            for i in range(m):
                d = y[i] - y_prev[i]
                if (np.isinf(u[i]) and d > 0) or (np.isinf(l[i]) and d < 0):
                    d = 0.0
                dy[i] = d
                norm_dy = max(norm_dy, abs(E[i] * d))
                if d > 0:
                    support += u[i] * d
                elif d < 0:
                    support += l[i] * d
            if norm_dy > 1e-30 and support < -inf_tol * norm_dy:
                ATdy = np.dot(AdT, dy)
                ok = True
                for j in range(n):
                    if abs(D_inv[j] * ATdy[j]) > inf_tol * norm_dy:
                        ok = False
                        break
                if ok:
                    return _INFEASIBLE, it, r_prim, r_dual
    return _RUNNING, it, r_prim, r_dual


def _iterate(ws: _Workspace, x, z, y, y_prev, it: int, stop: int):
    """Run ADMM from iteration ``it`` up to ``stop`` or the first verdict.

    ``x, z, y, y_prev`` are updated in place. Returns
    ``(code, iteration, r_prim, r_dual)``.
    """
    s = ws.settings
    if ws.dense:
        return _admm_dense(
            ws._Ad, ws._AdT, ws.P.data, ws.P.indices, ws.P.indptr,
            ws.q, ws.l, ws.u, ws.rho_vec, ws.kinv, ws.chol, ws.chol_t, ws.kinv is not ws.chol, s.sigma, s.alpha,
            ws.c, ws.Dinv, ws.E, ws.Einv, s.eps_abs, s.eps_rel, s.infeasibility_tol,
            s.check_interval, it, stop, s.max_iter, x, z, y, y_prev,
        )
    r_prim = r_dual = np.inf
    alpha, sigma = s.alpha, s.sigma
    while it < stop:
        it += 1
        y_prev[:] = y
        rhs = sigma * x - ws.q + ws.AT @ (ws.rho_vec * z - y)
        xt = ws.solve_kkt(rhs)
        zt = ws.A @ xt
        x[:] = alpha * xt + (1.0 - alpha) * x
        zh = alpha * zt + (1.0 - alpha) * z
        z[:] = project_box(zh + y / ws.rho_vec, ws.l, ws.u)
        y += ws.rho_vec * (zh - z)
        if it % s.check_interval == 0 or it == s.max_iter:
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                return _BREAKDOWN, it, r_prim, r_dual
            r_prim, r_dual, eps_p, eps_d, *_ = _residuals(ws, x, z, y)
            if r_prim <= eps_p and r_dual <= eps_d:
                return _CONVERGED, it, r_prim, r_dual
            if _primal_infeasible(ws, y - y_prev):
                return _INFEASIBLE, it, r_prim, r_dual
    return _RUNNING, it, r_prim, r_dual


def solve(
    problem: QpProblem,
    settings: Optional[SolverSettings] = None,
    warm: Optional[Tuple[Optional[np.ndarray], Optional[np.ndarray]]] = None,
) -> QpSolution:
    """Solve ``problem`` with ADMM.

    Parameters
    ----------
    problem : QpProblem
    settings : SolverSettings, optional
    warm : (x, y), optional
        Primal and dual starting point in the unscaled space. Either entry
        may be ``None``.
    """
    settings = settings or SolverSettings()
    n, m = problem.n, problem.m

    wx, wy = warm if warm is not None else (None, None)
    if wx is not None:
        wx = np.asarray(wx, dtype=float).ravel()
        if wx.size != n:
            raise DimensionError(f"warm x has size {wx.size}, expected {n}")
    if wy is not None:
        wy = np.asarray(wy, dtype=float).ravel()
        if wy.size != m:
            raise DimensionError(f"warm y has size {wy.size}, expected {m}")

    if m == 0:
        return _solve_unconstrained(problem, settings)

    ws = _Workspace(problem, settings)
    x = np.zeros(n) if wx is None else ws.scale_x(wx)
    y = np.zeros(m) if wy is None else ws.scale_y(wy)
    z = project_box(ws.A @ x, ws.l, ws.u)
    x, y = np.array(x, dtype=float), np.array(y, dtype=float)

    status = Status.MAX_ITERATIONS
    info = ""
    it = 0
    r_prim = r_dual = np.inf
    polished = False
    last_active = None
    y_prev = y.copy()
    events = [k for k in (settings.early_polish_interval, settings.adaptive_rho_interval if settings.adaptive_rho else 0) if k]
    next_polish = next_refine = settings.early_polish_interval
    while it < settings.max_iter:
        stop = min([settings.max_iter] + [(it // k + 1) * k for k in events])
        code, it, r_prim, r_dual = _iterate(ws, x, z, y, y_prev, it, stop)
        if code == _BREAKDOWN:
            info = f"non-finite iterate at iteration {it}"
            log.warning("qp breakdown: %s", info)
            break
        if code == _CONVERGED:
            status = Status.SOLVED
            break
        if code == _INFEASIBLE:
            status = Status.PRIMAL_INFEASIBLE
            break
        # polish and certificate refinement cost as much as dozens of
        # iterations, so their attempts back off geometrically
        if settings.early_polish_interval and it >= next_refine:
            next_refine = 2 * it
            cert = _refine_certificate(ws, y - y_prev)
            if cert is not None:
                y_prev = y - cert
                status = Status.PRIMAL_INFEASIBLE
                break
        if settings.early_polish_interval and settings.polish and it >= next_polish:
            next_polish = 4 * it
            active = ((z - ws.l) < -y) | ((ws.u - z) < y)
            if last_active is None or not np.array_equal(active, last_active):
                last_active = active
                res = _polish(ws, x, z, y)
                if res is not None and _polish_accepted(ws, *res):
                    x, y = res
                    z = project_box(ws.A @ x, ws.l, ws.u)
                    status = Status.SOLVED
                    polished = True
                    break
        if settings.adaptive_rho and it % settings.adaptive_rho_interval == 0:
            Ax, Px, ATy = ws.A @ x, ws.P @ x, ws.AT @ y
            num = _inf_norm(Ax - z) / max(_inf_norm(Ax), _inf_norm(z), 1e-30)
            den = _inf_norm(Px + ws.q + ATy) / max(_inf_norm(Px), _inf_norm(ATy), _inf_norm(ws.q), 1e-30)
            new_rho = ws.rho * np.sqrt(num / max(den, 1e-30))
            if new_rho > 5.0 * ws.rho or new_rho < 0.2 * ws.rho:
                ws.update_rho(new_rho)

    if status is Status.PRIMAL_INFEASIBLE:
        cert = ws.unscale_y(y - y_prev)
        cert = cert / max(_inf_norm(cert), 1e-300)
        return QpSolution(
            x=ws.unscale_x(x),
            y=ws.unscale_y(y),
            status=status,
            iterations=it,
            primal_residual=r_prim,
            dual_residual=r_dual,
            rho=ws.rho,
            info="primal infeasibility certificate found",
            certificate=cert,
        )

    if status is Status.SOLVED and settings.polish and not polished:
        res = _polish(ws, x, z, y)
        if res is not None and _polish_accepted(ws, *res):
            xp, yp = ws.unscale_x(res[0]), ws.unscale_y(res[1])
            pp, pd = check_kkt(problem, xp, yp)
            up, ud = check_kkt(problem, ws.unscale_x(x), ws.unscale_y(y))
            if pp <= max(up, 1e-10) and pd <= max(ud, 1e-10):
                x, y = res
                polished = True

    xu, yu = ws.unscale_x(x), ws.unscale_y(y)
    if np.all(np.isfinite(xu)) and np.all(np.isfinite(yu)):
        r_prim, r_dual = check_kkt(problem, xu, yu)
        obj = problem.objective(xu)
    else:
        obj = np.nan
    return QpSolution(
        x=xu,
        y=yu,
        status=status,
        iterations=it,
        primal_residual=r_prim,
        dual_residual=r_dual,
        objective=obj,
        polished=polished,
        rho=ws.rho,
        info=info,
    )


def _solve_unconstrained(problem: QpProblem, settings: SolverSettings) -> QpSolution:
    n = problem.n
    K = (problem.P + settings.sigma * sp.eye(n, format="csc")).tocsc()
    lu = spla.splu(K)
    x = lu.solve(-problem.q)
    for _ in range(settings.polish_refine_iter):
        x = x + lu.solve(-problem.q - problem.P @ x)
    y = np.zeros(0)
    r_prim, r_dual = check_kkt(problem, x, y)
    tol = settings.eps_abs + settings.eps_rel * max(_inf_norm(problem.P @ x), _inf_norm(problem.q))
    status = Status.SOLVED if np.all(np.isfinite(x)) and r_dual <= tol else Status.MAX_ITERATIONS
    return QpSolution(x, y, status, 1, r_prim, r_dual, problem.objective(x), polished=True)


# --------------------------------------------------------------------- debug dump

def _write_coo(fh, name: str, M: sp.spmatrix) -> None:
    M = sp.coo_matrix(M)
    fh.write(f"%%section {name} coordinate real general\n")
    fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
    for i, j, v in zip(M.row, M.col, M.data):
        fh.write(f"{i + 1} {j + 1} {v!r}\n")


def _write_vec(fh, name: str, v: np.ndarray) -> None:
    fh.write(f"%%section {name} array real general\n")
    fh.write(f"{v.size} 1\n")
    for val in v:
        fh.write(f"{float(val)!r}\n")


def dump_problem(problem: QpProblem, path) -> Path:
    """Write ``problem`` as a sectioned Matrix Market style text file."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("%%MatrixMarket qp-bundle\n")
        fh.write(f"% n={problem.n} m={problem.m}\n")
        _write_coo(fh, "P", problem.P)
        _write_vec(fh, "q", problem.q)
        _write_coo(fh, "A", problem.A)
        _write_vec(fh, "l", problem.l)
        _write_vec(fh, "u", problem.u)
    return path


def load_problem(path) -> QpProblem:
    """Inverse of :func:`dump_problem`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("% ")]
    data = {}
    i = 1
    while i < len(lines):
        header = lines[i].split()
        name, kind = header[1], header[2]
        dims = [int(t) for t in lines[i + 1].split()]
        if kind == "coordinate":
            rows, cols, nnz = dims
            body = np.array([ln.split() for ln in lines[i + 2 : i + 2 + nnz]], dtype=float).reshape(-1, 3)
            data[name] = sp.csc_matrix(
                (body[:, 2], (body[:, 0].astype(int) - 1, body[:, 1].astype(int) - 1)), shape=(rows, cols)
            )
            i += 2 + nnz
        else:
            size = dims[0]
            data[name] = np.array([float(t) for t in lines[i + 2 : i + 2 + size]])
            i += 2 + size
    return QpProblem(data["P"], data["q"], data["A"], data["l"], data["u"])
