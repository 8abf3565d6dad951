"""Output-feedback MPC on the linearized model, the model-based baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deepc import FALLBACK_DECAY, PastBuffer
from .qp import INFEASIBLE, OPTIMAL, QpWorkspace
from .traffic import A_MAX, A_MIN, DiscreteModel, Equilibrium


@dataclass
class MpcConfig:
    model: DiscreteModel
    T_ini: int = 20
    N: int = 50
    w_v: float = 1.0
    w_s: float = 0.5
    w_u: float = 0.1
    s_min: float = 5.0
    s_max: float = 40.0
    a_min: float = A_MIN
    a_max: float = A_MAX
    solver_tol: float = 1e-6
    max_iter: int = 2000

    def __post_init__(self):
        if self.T_ini < 1 or self.N < 1:
            raise ValueError("T_ini and N must be positive")
        if min(self.w_v, self.w_s, self.w_u) < 0:
            raise ValueError("weights must be nonnegative")
        if not (self.s_min < self.s_max and self.a_min < self.a_max):
            raise ValueError("empty spacing or acceleration range")

    @property
    def n(self) -> int:
        return self.model.Ad.shape[0] // 2

    @property
    def m(self) -> int:
        return self.model.Bd.shape[1]

    def weights(self):
        n, m = self.n, self.m
        Q = np.diag(np.r_[np.full(n, self.w_v), np.full(m, self.w_s)])
        return Q, self.w_u * np.eye(m)


@dataclass
class MpcPlan:
    u_star: np.ndarray
    y_star: np.ndarray
    x_hat: np.ndarray
    objective: float
    status: str = OPTIMAL
    feasible: bool = True
    estimate_residual: float = 0.0
    sigma_y: np.ndarray = None


def _powers(A, k):
    out = [np.eye(A.shape[0])]
    for _ in range(k):
        out.append(A @ out[-1])
    return out


def estimate_initial_state(model: DiscreteModel, u_ini, eps_ini, y_ini):
    """Least-squares state at the start of the window, rolled to its end.

    Returns ``(x_hat, residual)`` where ``residual`` is the norm of the
    output misfit of the fitted window.

    Raises:
        ValueError: the stacked observability matrix is rank deficient.
    """
    A, B, H, C = model.Ad, model.Bd, model.Hd[:, 0], model.Cd
    u_ini = np.asarray(u_ini, float).reshape(-1, B.shape[1])
    eps_ini = np.asarray(eps_ini, float).ravel()
    y_ini = np.asarray(y_ini, float).reshape(-1, C.shape[0])
    L = u_ini.shape[0]
    nx = A.shape[0]
    Ap = _powers(A, L)
    O = np.vstack([C @ Ap[j] for j in range(L)])
    if np.linalg.matrix_rank(O) < nx:
        raise ValueError("observability stack is rank deficient")
    # free response removed: y_j - sum_{i<j} C A^{j-1-i} (B u_i + H eps_i)
    forced = np.zeros((L, nx))
    acc = np.zeros(nx)
    for j in range(L):
        forced[j] = acc
        acc = A @ acc + B @ u_ini[j] + H * eps_ini[j]
    rhs = (y_ini - forced @ C.T).ravel()
    x0, *_ = np.linalg.lstsq(O, rhs, rcond=None)
    residual = float(np.linalg.norm(O @ x0 - rhs))
    return Ap[L] @ x0 + acc, residual


def prediction_matrices(model: DiscreteModel, N: int):
    """``Y = Phi x0 + Gamma U`` for y_k = C x_k, k = 0..N-1, zero eps."""
    A, B, C = model.Ad, model.Bd, model.Cd
    p, m = C.shape[0], B.shape[1]
    Ap = _powers(A, N)
    Phi = np.vstack([C @ Ap[k] for k in range(N)])
    Gam = np.zeros((N * p, N * m))
    for k in range(1, N):
        for j in range(k):
            Gam[k * p:(k + 1) * p, j * m:(j + 1) * m] = C @ Ap[k - 1 - j] @ B
    return Phi, Gam


class MpcController:
    """Condensed MPC over the N future inputs with the DeeP-LCC cost."""

    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        n, m, N = cfg.n, cfg.m, cfg.N
        p = n + m
        Q, R = cfg.weights()
        self.Phi, self.Gam = prediction_matrices(cfg.model, N)
        Qb = np.kron(np.eye(N), Q)
        self.Qb = Qb
        P = 2.0 * (self.Gam.T @ Qb @ self.Gam + np.kron(np.eye(N), R))
        self.sel = np.array([k * p + n + j for k in range(N) for j in range(m)])
        Aineq = np.vstack([self.Gam[self.sel], np.eye(N * m)])
        self.workspace = QpWorkspace(0.5 * (P + P.T), None, Aineq)
        self.prev_u = np.zeros(m)
        self.infeasible_steps = 0

    def fallback(self):
        return FALLBACK_DECAY * np.clip(self.prev_u, self.cfg.a_min,
                                        self.cfg.a_max)

    def plan(self, x_hat, eq: Equilibrium) -> MpcPlan:
        cfg = self.cfg
        n, m, N = cfg.n, cfg.m, cfg.N
        free = self.Phi @ x_hat
        q = 2.0 * self.Gam.T @ (self.Qb @ free)
        s_star = np.asarray(eq.s_star, float)
        lower = np.concatenate([np.tile(cfg.s_min - s_star, N) - free[self.sel],
                                np.full(N * m, cfg.a_min)])
        upper = np.concatenate([np.tile(cfg.s_max - s_star, N) - free[self.sel],
                                np.full(N * m, cfg.a_max)])
        sol = self.workspace.solve(q, None, lower, upper, tol=cfg.solver_tol,
                                   max_iter=cfg.max_iter)
        U = sol.x
        Y = free + self.Gam @ U
        obj = sol.objective + free @ self.Qb @ free
        return MpcPlan(U.reshape(N, m), Y.reshape(N, n + m), x_hat, float(obj),
                       sol.status, sol.status == OPTIMAL)

    def step(self, past: PastBuffer, eq: Equilibrium):
        u_ini, eps_ini, y_ini = past.read(eq)
        x_hat, res = estimate_initial_state(self.cfg.model, u_ini, eps_ini,
                                            y_ini)
        plan = self.plan(x_hat, eq)
        plan.estimate_residual = res
        if plan.status == INFEASIBLE:
            u = self.fallback()
            self.infeasible_steps += 1
        else:
            u = np.clip(plan.u_star[0], self.cfg.a_min, self.cfg.a_max)
        self.prev_u = u
        return u, plan


def mpc_step(cfg: MpcConfig, past: PastBuffer, eq: Equilibrium):
    """Functional single step; returns ``(u, plan)``."""
    return MpcController(cfg).step(past, eq)


def riccati_first_input(model: DiscreteModel, Q, R, N: int, x0) -> np.ndarray:
    """First input of the unconstrained finite-horizon LQ problem.

    Cost ``sum_{k<N} y_k'Q y_k + u_k'R u_k`` with no terminal weight.
    """
    A, B, C = model.Ad, model.Bd, model.Cd
    Qx = C.T @ Q @ C
    S = np.zeros_like(A)
    K = None
    for _ in range(N):
        G = R + B.T @ S @ B
        K = np.linalg.solve(G, B.T @ S @ A)
        S = Qx + A.T @ S @ A - A.T @ S @ B @ K
    return -K @ np.asarray(x0, float)
