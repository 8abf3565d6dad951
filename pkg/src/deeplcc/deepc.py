"""DeeP-LCC: receding-horizon control from Hankel data."""

from __future__ import annotations

import csv
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .data import (HankelSet, TrajectoryDataset, build_hankel_set,
                   combined_input, is_persistently_exciting)
from .qp import INFEASIBLE, OPTIMAL, QpWorkspace, QuadProgram
from .traffic import (A_MAX, A_MIN, NOMINAL, Equilibrium, HdvParams,
                      solve_equilibrium_spacing)

FALLBACK_DECAY = 0.5


@dataclass
class DeepLccConfig:
    T_ini: int = 20
    N: int = 50
    w_v: float = 1.0
    w_s: float = 0.5
    w_u: float = 0.1
    lambda_g: float = 10.0
    lambda_y: float = 1e4
    s_min: float = 5.0
    s_max: float = 40.0
    a_min: float = A_MIN
    a_max: float = A_MAX
    eps_forecast: float = 0.0
    solver_tol: float = 1e-6
    max_iter: int = 2000

    def __post_init__(self):
        if self.T_ini < 1 or self.N < 1:
            raise ValueError("T_ini and N must be positive")
        if min(self.w_v, self.w_s, self.w_u, self.lambda_g) < 0:
            raise ValueError("weights must be nonnegative")
        if not self.lambda_y > 0:
            raise ValueError("lambda_y must be positive")
        if not self.s_min < self.s_max:
            raise ValueError("s_min must be below s_max")
        if not self.a_min < self.a_max:
            raise ValueError("a_min must be below a_max")

    def weights(self, n: int, m: int):
        """Per-step output and input weights (Q, R)."""
        Q = np.diag(np.r_[np.full(n, self.w_v), np.full(m, self.w_s)])
        return Q, self.w_u * np.eye(m)


# ----------------------------------------------------------------------------
# Past data
# ----------------------------------------------------------------------------

class PastBuffer:
    """The last ``T_ini`` samples of (u, v0, v, s_cav) in absolute units.

    Keeping raw measurements lets the deviations be recomputed against
    whatever equilibrium estimate is current when the buffer is read.
    """

    def __init__(self, T_ini: int, n: int, m: int):
        self.T_ini, self.n, self.m = T_ini, n, m
        self._u = deque(maxlen=T_ini)
        self._v0 = deque(maxlen=T_ini)
        self._v = deque(maxlen=T_ini)
        self._s = deque(maxlen=T_ini)

    def __len__(self):
        return len(self._u)

    @property
    def warmed(self) -> bool:
        return len(self) == self.T_ini

    def push(self, u, v0: float, v, s_cav) -> None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        v = np.asarray(v, dtype=float)
        s_cav = np.atleast_1d(np.asarray(s_cav, dtype=float))
        if u.shape != (self.m,) or v.shape != (self.n,) or s_cav.shape != (self.m,):
            raise ValueError("sample dimensions do not match the buffer")
        self._u.append(u.copy())
        self._v0.append(float(v0))
        self._v.append(v.copy())
        self._s.append(s_cav.copy())

    def head_velocities(self) -> np.ndarray:
        return np.array(self._v0)

    def read(self, eq: Equilibrium):
        """Chronological ``(u_ini, eps_ini, y_ini)`` as deviations from ``eq``.

        Shapes are ``(T_ini, m)``, ``(T_ini,)`` and ``(T_ini, n+m)``.
        """
        if not self.warmed:
            raise ValueError(f"past buffer holds {len(self)} of {self.T_ini} samples")
        v_star = eq.v_star
        s_star = np.asarray(eq.s_star)
        u = np.array(self._u)
        eps = np.array(self._v0) - v_star
        y = np.column_stack([np.array(self._v) - v_star,
                             np.array(self._s) - s_star])
        return u, eps, y


def update_past(past: PastBuffer, u_applied, eps_measured, y_measured,
                eq: Equilibrium) -> PastBuffer:
    """Append one deviation-form sample measured relative to ``eq``."""
    y = np.asarray(y_measured, dtype=float)
    n = past.n
    past.push(u_applied, eq.v_star + float(eps_measured), y[:n] + eq.v_star,
              y[n:] + np.asarray(eq.s_star))
    return past


def estimate_equilibrium(head_velocity_history, nominal: HdvParams = NOMINAL,
                         m: int = 1) -> Equilibrium:
    """Rolling equilibrium from the mean head velocity over the past window.

    Estimates outside ``(0, v_max)`` are clamped to
    ``[0.05 v_max, 0.95 v_max]`` with a warning.
    """
    hist = np.asarray(head_velocity_history, dtype=float)
    if hist.size == 0:
        raise ValueError("empty head-velocity history")
    v = float(hist.mean())
    lo, hi = 0.05 * nominal.v_max, 0.95 * nominal.v_max
    if not 0.0 < v < nominal.v_max:
        warnings.warn(f"equilibrium velocity {v:.3f} outside (0, v_max); "
                      "clamped", RuntimeWarning, stacklevel=2)
        v = min(max(v, lo), hi)
    s = solve_equilibrium_spacing(v, nominal)
    return Equilibrium(v, (s,) * m)


# ----------------------------------------------------------------------------
# QP assembly
# ----------------------------------------------------------------------------

@dataclass
class DeepcDecision:
    u_star: np.ndarray
    y_star: np.ndarray
    g_star: np.ndarray
    sigma_y: np.ndarray
    objective: float
    status: str = OPTIMAL
    feasible: bool = True


def _spacing_selector(h: HankelSet, n: int, m: int) -> np.ndarray:
    p = n + m
    rows = [k * p + n + j for k in range(h.N) for j in range(m)]
    return np.asarray(rows)


def qp_matrices(h: HankelSet, cfg: DeepLccConfig, n: int, m: int):
    """Equilibrium-independent QP matrices ``(P, Aeq, Aineq)``."""
    Q, R = cfg.weights(n, m)
    N = h.N
    ncol = h.columns
    ns = h.Yp.shape[0]
    Qb = np.kron(np.eye(N), Q)
    Rb = np.kron(np.eye(N), R)
    Pg = h.Uf.T @ Rb @ h.Uf + h.Yf.T @ Qb @ h.Yf + cfg.lambda_g * np.eye(ncol)
    P = np.zeros((ncol + ns, ncol + ns))
    P[:ncol, :ncol] = 2.0 * Pg
    P[ncol:, ncol:] = 2.0 * cfg.lambda_y * np.eye(ns)
    P = 0.5 * (P + P.T)
    Aeq = np.zeros((h.Up.shape[0] + h.Ep.shape[0] + ns + h.Ef.shape[0],
                    ncol + ns))
    r = 0
    for blk in (h.Up, h.Ep):
        Aeq[r:r + blk.shape[0], :ncol] = blk
        r += blk.shape[0]
    Aeq[r:r + ns, :ncol] = h.Yp
    Aeq[r:r + ns, ncol:] = -np.eye(ns)
    r += ns
    Aeq[r:, :ncol] = h.Ef
    sel = _spacing_selector(h, n, m)
    Aineq = np.zeros((len(sel) + h.Uf.shape[0], ncol + ns))
    Aineq[:len(sel), :ncol] = h.Yf[sel]
    Aineq[len(sel):, :ncol] = h.Uf
    return P, Aeq, Aineq


def qp_vectors(h: HankelSet, cfg: DeepLccConfig, u_ini, eps_ini, y_ini,
               eq: Equilibrium, n: int, m: int):
    """Right-hand sides ``(q, beq, lower, upper)`` for the current step."""
    ncol, ns = h.columns, h.Yp.shape[0]
    beq = np.concatenate([np.ravel(u_ini), np.ravel(eps_ini), np.ravel(y_ini),
                          np.full(h.N, cfg.eps_forecast)])
    s_star = np.asarray(eq.s_star, dtype=float)
    lo_s = np.tile(cfg.s_min - s_star, h.N)
    hi_s = np.tile(cfg.s_max - s_star, h.N)
    lower = np.concatenate([lo_s, np.full(h.N * m, cfg.a_min)])
    upper = np.concatenate([hi_s, np.full(h.N * m, cfg.a_max)])
    return np.zeros(ncol + ns), beq, lower, upper


def assemble_qp(h: HankelSet, past: PastBuffer, cfg: DeepLccConfig,
                eq: Equilibrium) -> QuadProgram:
    """Decision ``z = (g, sigma_y)``; u = Uf g and y = Yf g are eliminated."""
    n, m = past.n, past.m
    if h.Up.shape[0] != h.T_ini * m or h.Yp.shape[0] != h.T_ini * (n + m):
        raise ValueError("Hankel blocks do not match the buffer dimensions")
    if h.T_ini != past.T_ini:
        raise ValueError("T_ini of Hankel set and buffer differ")
    u_ini, eps_ini, y_ini = past.read(eq)
    P, Aeq, Aineq = qp_matrices(h, cfg, n, m)
    q, beq, lower, upper = qp_vectors(h, cfg, u_ini, eps_ini, y_ini, eq, n, m)
    return QuadProgram(P, q, Aeq, beq, Aineq, lower, upper)


def decision_from(h: HankelSet, z, n: int, m: int, objective: float,
                  status: str) -> DeepcDecision:
    ncol = h.columns
    g, sigma = z[:ncol], z[ncol:]
    return DeepcDecision(u_star=(h.Uf @ g).reshape(h.N, m),
                         y_star=(h.Yf @ g).reshape(h.N, n + m),
                         g_star=g, sigma_y=sigma, objective=objective,
                         status=status, feasible=status == OPTIMAL)


# ----------------------------------------------------------------------------
# Controller
# ----------------------------------------------------------------------------

class DeepLccController:
    """Stateful DeeP-LCC loop: cached QP factorization plus fallback memory.

    Args:
        h: Hankel blocks (built at the collection equilibrium).
        cfg: horizons, weights and bounds.
        n, m: platoon size and CAV count.
    """

    def __init__(self, h: HankelSet, cfg: DeepLccConfig, n: int, m: int):
        if h.T_ini != cfg.T_ini or h.N != cfg.N:
            raise ValueError("Hankel horizons differ from the configuration")
        if cfg.T_ini < 2 * n:
            warnings.warn(f"T_ini={cfg.T_ini} < 2n={2 * n}; the initial "
                          "condition may not be unique", RuntimeWarning,
                          stacklevel=2)
        self.h, self.cfg, self.n, self.m = h, cfg, n, m
        self.workspace = QpWorkspace(*qp_matrices(h, cfg, n, m))
        self.prev_u = np.zeros(m)
        self.infeasible_steps = 0
        self._z = None

    @classmethod
    def from_dataset(cls, ds: TrajectoryDataset, cfg: DeepLccConfig):
        """Build Hankel blocks after a mandatory persistent-excitation check."""
        order = cfg.T_ini + cfg.N + 2 * ds.n
        if not is_persistently_exciting(combined_input(ds), order):
            raise ValueError(f"dataset (T={ds.T}) is not persistently "
                             f"exciting of order {order}")
        return cls(build_hankel_set(ds, cfg.T_ini, cfg.N, check_pe=False),
                   cfg, ds.n, ds.m)

    def fallback(self) -> np.ndarray:
        return FALLBACK_DECAY * np.clip(self.prev_u, self.cfg.a_min,
                                        self.cfg.a_max)

    def step(self, past: PastBuffer, eq: Equilibrium):
        """Solve one receding-horizon problem; returns ``(u, decision)``."""
        u_ini, eps_ini, y_ini = past.read(eq)
        q, beq, lower, upper = qp_vectors(self.h, self.cfg, u_ini, eps_ini,
                                          y_ini, eq, self.n, self.m)
        sol = self.workspace.solve(q, beq, lower, upper, tol=self.cfg.solver_tol,
                                   max_iter=self.cfg.max_iter, x0=self._z)
        dec = decision_from(self.h, sol.x, self.n, self.m, sol.objective,
                            sol.status)
        if sol.status == INFEASIBLE:
            u = self.fallback()
            self.infeasible_steps += 1
        else:
            u = np.clip(dec.u_star[0], self.cfg.a_min, self.cfg.a_max)
            self._z = sol.x
        self.prev_u = u
        return u, dec


def control_step(h: HankelSet, past: PastBuffer, cfg: DeepLccConfig,
                 eq: Equilibrium, solver_tol: float = None,
                 prev_u=None):
    """Functional single step; builds a fresh QP each call."""
    ctrl = DeepLccController(h, cfg, past.n, past.m)
    if solver_tol is not None:
        ctrl.cfg = DeepLccConfig(**{**cfg.__dict__, "solver_tol": solver_tol})
    if prev_u is not None:
        ctrl.prev_u = np.asarray(prev_u, dtype=float)
    return ctrl.step(past, eq)


# ----------------------------------------------------------------------------
# Decision log
# ----------------------------------------------------------------------------

@dataclass
class DecisionLog:
    m: int
    rows: list = field(default_factory=list)

    def record(self, t: float, u, objective: float, sigma_y, feasible: bool):
        sig = float(np.linalg.norm(sigma_y)) if sigma_y is not None else 0.0
        obj = float(objective) if objective is not None else math.nan
        self.rows.append([t, *np.atleast_1d(u).tolist(), obj, sig,
                          int(bool(feasible))])

    def header(self):
        return (["t"] + [f"u_{k + 1}" for k in range(self.m)]
                + ["objective", "sigma_y_norm", "feasible"])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for r in self.rows:
                w.writerow([repr(float(x)) if isinstance(x, float) else x
                            for x in r])
