"""Dense convex quadratic programming.

Problem form::

    minimize    1/2 x'Px + q'x
    subject to  Aeq x = beq
                lower <= Aineq x <= upper

The solver is the Goldfarb-Idnani dual active-set method run in whitened
coordinates ``w = L'x`` (``P = LL'``), where the objective is a plain
distance to the unconstrained minimizer. Equalities are eliminated once via
an SVD, after which only Gram products of the inequality normals are needed.
All factorizations depend on ``(P, Aeq, Aineq)`` only, so a ``QpWorkspace``
can be reused across solves that change ``q``, ``beq`` and the bounds, which
is what a receding-horizon controller does.

Semidefinite ``P`` is handled by proximal-point iterations on
``P + rho*I``; their fixed points are exactly the optima of the original
problem, and the dual residual of the original problem is what stops them.

Residuals reported in ``QpSolution.kkt_residuals`` are scaled by the size of
the terms they compare (``max(1, ...)``), so a tolerance of 1e-6 means six
significant digits on the badly scaled programs slack penalties produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"


@dataclass
class QuadProgram:
    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Aineq: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        d = self.P.shape[0]
        if self.P.shape != (d, d):
            raise ValueError("P must be square")
        self.q = np.asarray(self.q, dtype=float).reshape(d)
        if self.Aeq is None:
            self.Aeq = np.zeros((0, d))
            self.beq = np.zeros(0)
        self.Aeq = np.asarray(self.Aeq, dtype=float).reshape(-1, d)
        self.beq = np.asarray(self.beq, dtype=float).reshape(self.Aeq.shape[0])
        if self.Aineq is None:
            self.Aineq = np.zeros((0, d))
        self.Aineq = np.asarray(self.Aineq, dtype=float).reshape(-1, d)
        r = self.Aineq.shape[0]
        self.lower = (np.full(r, -np.inf) if self.lower is None
                      else np.asarray(self.lower, dtype=float).reshape(r))
        self.upper = (np.full(r, np.inf) if self.upper is None
                      else np.asarray(self.upper, dtype=float).reshape(r))
        scale = max(1.0, np.max(np.abs(self.P), initial=0.0))
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("P must be symmetric")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def dims(self):
        return self.P.shape[0], self.Aeq.shape[0], self.Aineq.shape[0]

    def objective(self, x):
        return 0.5 * x @ self.P @ x + self.q @ x


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str
    kkt_residuals: tuple
    y_eq: np.ndarray = field(default=None, repr=False)
    y_ineq: np.ndarray = field(default=None, repr=False)
    iterations: int = 0


class QpWorkspace:
    """Factorizations of ``(P, Aeq, Aineq)`` reusable across right-hand sides.

    Args:
        P, Aeq, Aineq: problem matrices (see ``QuadProgram``).
        rho: proximal weight. ``None`` picks 0 for numerically definite P
            and ``1e-6 * max(diag P)`` otherwise.
    """

    def __init__(self, P, Aeq=None, Aineq=None, rho=None):
        P = np.asarray(P, dtype=float)
        d = P.shape[0]
        self.P = P
        self.Aeq = np.zeros((0, d)) if Aeq is None else np.asarray(Aeq, float)
        self.Aineq = (np.zeros((0, d)) if Aineq is None
                      else np.asarray(Aineq, float))
        self.d = d
        diag_max = max(np.max(np.abs(np.diag(P)), initial=0.0), 1e-300)
        if rho is None:
            rho = 0.0
            L = self._try_cholesky(P)
            if L is None or np.min(np.diag(L)) ** 2 < 1e-11 * diag_max:
                rho = 1e-6 * max(diag_max, 1.0)
        self.rho = float(rho)
        L = self._try_cholesky(P + self.rho * np.eye(d)) if d else np.eye(0)
        if L is None:
            raise ValueError("P is not positive semidefinite")
        self.L = L

        self.Geq = solve_triangular(L, self.Aeq.T, lower=True) \
            if self.Aeq.size else np.zeros((d, 0))
        self.Gin = solve_triangular(L, self.Aineq.T, lower=True) \
            if self.Aineq.size else np.zeros((d, 0))
        if self.Geq.shape[1]:
            U, sv, Vt = np.linalg.svd(self.Geq, full_matrices=False)
            k = int(np.sum(sv > 1e-12 * sv[0])) if sv.size and sv[0] > 0 else 0
            self.eqU, self.eqS, self.eqV = U[:, :k], sv[:k], Vt[:k].T
        else:
            self.eqU = np.zeros((d, 0))
            self.eqS = np.zeros(0)
            self.eqV = np.zeros((0, 0))
        # inequality normals restricted to the equality null space
        self.Ghat = self.Gin - self.eqU @ (self.eqU.T @ self.Gin)
        self.R = self.Ghat.T @ self.Ghat
        self.ghat_norm = np.sqrt(np.maximum(np.diag(self.R), 0.0))
        self.gin_norm = np.linalg.norm(self.Gin, axis=0)

    @staticmethod
    def _try_cholesky(M):
        try:
            return cholesky(M, lower=True, check_finite=False)
        except (LinAlgError, ValueError):
            return None

    def matches(self, prog: QuadProgram) -> bool:
        return (prog.P is self.P and prog.Aeq is self.Aeq
                and prog.Aineq is self.Aineq)

    # ------------------------------------------------------------------
    def solve(self, q, beq=None, lower=None, upper=None, tol=1e-6,
              max_iter=1000, x0=None) -> QpSolution:
        d = self.d
        q = np.asarray(q, dtype=float)
        beq = np.zeros(0) if beq is None else np.asarray(beq, dtype=float)
        r = self.Aineq.shape[0]
        lower = np.full(r, -np.inf) if lower is None else np.asarray(lower, float)
        upper = np.full(r, np.inf) if upper is None else np.asarray(upper, float)

        if self.rho == 0.0:
            w, y, z, status, its = self._solve_whitened(
                q, beq, lower, upper, tol, max_iter)
            x = solve_triangular(self.L, w, lower=True, trans="T")
            x, prim, dual = self._finish(x, q, beq, lower, upper, y, z, tol)
        else:
            x = np.zeros(d) if x0 is None else np.asarray(x0, float).copy()
            its = 0
            status = MAX_ITERATIONS
            y = np.zeros(self.Aeq.shape[0])
            z = np.zeros(r)
            for _ in range(max_iter):
                w, y, z, st, k = self._solve_whitened(
                    q - self.rho * x, beq, lower, upper, tol, max_iter)
                its += k
                x_new = solve_triangular(self.L, w, lower=True, trans="T")
                if st == INFEASIBLE:
                    x, status = x_new, INFEASIBLE
                    break
                step = np.max(np.abs(x_new - x), initial=0.0)
                x = x_new
                if st == OPTIMAL:
                    xp, prim, dual = self._finish(x, q, beq, lower, upper, y,
                                                  z, tol)
                    stalled = step <= 1e-15 * max(1.0, np.max(np.abs(x)))
                    if (prim <= tol and dual <= tol) or stalled:
                        x, status = xp, OPTIMAL
                        break
            else:
                prim, dual = self._residuals(x, q, beq, lower, upper, y, z)

        if status == INFEASIBLE:
            prim, dual = self._residuals(x, q, beq, lower, upper, y, z)
        if status == OPTIMAL and (prim > tol or dual > tol):
            status = MAX_ITERATIONS
        return QpSolution(x=x, objective=float(0.5 * x @ self.P @ x + q @ x),
                          status=status, kkt_residuals=(prim, dual),
                          y_eq=y, y_ineq=z, iterations=its)

    def _finish(self, x, q, beq, lower, upper, y, z, tol):
        prim, dual = self._residuals(x, q, beq, lower, upper, y, z)
        if prim > 0.1 * tol:
            xp = self._polish(x, beq, lower, upper, z)
            pp, dp = self._residuals(xp, q, beq, lower, upper, y, z)
            if pp < prim:
                return xp, pp, dp
        return x, prim, dual

    def _polish(self, x, beq, lower, upper, z):
        """Minimum-norm correction onto the equalities and active bounds.

        Undoes round-off picked up when mapping back from whitened
        coordinates with an ill-conditioned factor.
        """
        act = np.flatnonzero(z)
        A = np.vstack([self.Aeq, self.Aineq[act]])
        if A.shape[0] == 0:
            return x
        b = np.concatenate([beq, np.where(z[act] < 0, lower[act], upper[act])])
        dx, *_ = np.linalg.lstsq(A, b - A @ x, rcond=None)
        return x + dx

    def _residuals(self, x, q, beq, lower, upper, y, z):
        Ax_eq = self.Aeq @ x
        Ax_in = self.Aineq @ x
        viol = [np.abs(Ax_eq - beq),
                np.maximum(lower - Ax_in, 0.0),
                np.maximum(Ax_in - upper, 0.0)]
        fin = lambda a: a[np.isfinite(a)]
        pscale = max(1.0, np.max(np.abs(Ax_eq), initial=0.0),
                     np.max(np.abs(Ax_in), initial=0.0),
                     np.max(np.abs(beq), initial=0.0),
                     np.max(np.abs(fin(lower)), initial=0.0),
                     np.max(np.abs(fin(upper)), initial=0.0))
        prim = max(np.max(v, initial=0.0) for v in viol) / pscale
        Px = self.P @ x
        ATy = self.Aeq.T @ y
        ATz = self.Aineq.T @ z
        g = Px + q + ATy + ATz
        dscale = max(1.0, *(np.max(np.abs(v), initial=0.0)
                            for v in (Px, q, ATy, ATz)))
        return float(prim), float(np.max(np.abs(g), initial=0.0) / dscale)

    # ------------------------------------------------------------------
    def _solve_whitened(self, q, beq, lower, upper, tol, max_iter):
        """Goldfarb-Idnani on ``min 1/2||w - w0||^2`` over the polyhedron.

        Returns ``(w, y_eq, z_ineq, status, iterations)`` with multipliers
        in the original coordinates: ``P_rho x + q + Aeq'y + Aineq'z = 0``.
        """
        w0 = -solve_triangular(self.L, q, lower=True) if self.d else np.zeros(0)
        w = w0.copy()
        if self.eqU.shape[1]:
            res = beq - self.Geq.T @ w0
            w = w0 + self.eqU @ ((self.eqV.T @ res) / self.eqS)
        if self.Geq.shape[1]:
            gap = np.abs(self.Geq.T @ w - beq)
            if np.max(gap) > tol * max(1.0, np.max(np.abs(beq))):
                return w, *self._multipliers(w, w0, [], []), INFEASIBLE, 0

        active = []    # constraint indices
        sides = []     # +1 lower bound active, -1 upper bound active
        mult = []      # multipliers (>= 0) of the signed constraints
        ftol = 0.1 * tol
        status = OPTIMAL
        its = 0
        Gin, Ghat, R = self.Gin, self.Ghat, self.R
        while True:
            val = Gin.T @ w
            lo_gap = lower - val
            up_gap = val - upper
            lo_tol = ftol * np.maximum(1.0, np.abs(np.where(np.isfinite(lower), lower, 0)))
            up_tol = ftol * np.maximum(1.0, np.abs(np.where(np.isfinite(upper), upper, 0)))
            norm = np.maximum(self.gin_norm, 1e-300)
            score = np.maximum(np.where(lo_gap > lo_tol, lo_gap, 0.0),
                               np.where(up_gap > up_tol, up_gap, 0.0)) / norm
            if active:
                score[active] = 0.0
            p = int(np.argmax(score)) if score.size else -1
            if p < 0 or score[p] <= 0.0:
                break
            if its >= max_iter:
                status = MAX_ITERATIONS
                break
            sp = 1.0 if lo_gap[p] > up_gap[p] else -1.0
            slack_p = sp * val[p] - sp * (lower[p] if sp > 0 else upper[p])
            u_plus = np.array(mult + [0.0])
            while True:
                its += 1
                if its > max_iter:
                    status = MAX_ITERATIONS
                    break
                if active:
                    D = np.array(sides)
                    RA = R[np.ix_(active, active)] * np.outer(D, D)
                    cA = D * R[active, p] * sp
                    rvec = np.linalg.solve(RA, cA)
                    z = sp * Ghat[:, p] - Ghat[:, active] @ (D * rvec)
                    zn = R[p, p] - cA @ rvec
                else:
                    rvec = np.zeros(0)
                    z = sp * Ghat[:, p]
                    zn = R[p, p]
                t1, k_drop = np.inf, -1
                for j, rj in enumerate(rvec):
                    if rj > 0:
                        ratio = u_plus[j] / rj
                        if ratio < t1:
                            t1, k_drop = ratio, j
                if zn > 1e-12 * max(R[p, p], 1e-300):
                    t2 = -slack_p / zn
                else:
                    t2 = np.inf
                t = min(t1, t2)
                if not np.isfinite(t):
                    status = INFEASIBLE
                    break
                if np.isfinite(t2):
                    w = w + t * z
                    slack_p += t * zn
                u_plus = u_plus + t * np.append(-rvec, 1.0)
                if t == t2:
                    active.append(p)
                    sides.append(sp)
                    mult = list(u_plus)
                    break
                del active[k_drop]
                del sides[k_drop]
                u_plus = np.delete(u_plus, k_drop)
            if status != OPTIMAL:
                mult = list(u_plus[:-1]) if len(u_plus) > len(active) else list(u_plus)
                break
        y, zi = self._multipliers(w, w0, active, [s * u for s, u in zip(sides, mult)])
        return w, y, zi, status, its

    def _multipliers(self, w, w0, active, signed):
        r = self.Aineq.shape[0]
        z = np.zeros(r)
        # stationarity: w - w0 + Geq y + Gin z = 0, with z = -side * mult
        for i, sm in zip(active, signed):
            z[i] = -sm
        resid = w - w0 + self.Gin @ z
        y = np.zeros(self.Aeq.shape[0])
        if self.eqU.shape[1]:
            y = -self.eqV @ ((self.eqU.T @ resid) / self.eqS)
        return y, z


def solve(prog: QuadProgram, tol: float = 1e-6, max_iter: int = 1000,
          workspace: QpWorkspace = None, x0=None) -> QpSolution:
    """Solve ``prog``; pass a ``workspace`` built for the same matrices to
    skip refactorization."""
    if workspace is None or not workspace.matches(prog):
        workspace = QpWorkspace(prog.P, prog.Aeq, prog.Aineq)
    return workspace.solve(prog.q, prog.beq, prog.lower, prog.upper,
                           tol=tol, max_iter=max_iter, x0=x0)
