"""Mixed-traffic platoon dynamics.

Vehicle 0 is the head vehicle; vehicles 1..n follow it, m of them CAVs at the
1-based positions ``cav_indices``. HDVs follow the optimal velocity model
(OVM); a CAV's acceleration is its control input.

State ordering of the linear model is ``(s~_1, v~_1, ..., s~_n, v~_n)`` and
the output is ``(v~_1..v~_n, s~_{i_1}..s~_{i_m})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from . import kernels

DT = 0.05
A_MIN = -5.0
A_MAX = 2.0
NOISE_BOUND = 0.1


class CollisionError(RuntimeError):
    """A spacing became non-positive."""


@dataclass(frozen=True)
class HdvParams:
    alpha: float = 0.6
    beta: float = 0.9
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.v_max > 0):
            raise ValueError(f"OVM gains and v_max must be positive: {self}")
        if not (0 < self.s_st < self.s_go):
            raise ValueError(f"need 0 < s_st < s_go: {self}")

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "s_st": self.s_st,
                "s_go": self.s_go, "v_max": self.v_max}


NOMINAL = HdvParams()

# Heterogeneous drivers, front to back; other fields nominal.
TABLE_HETEROGENEOUS = (
    HdvParams(alpha=0.45, beta=0.60, s_go=38.0),
    HdvParams(alpha=0.75, beta=0.95, s_go=31.0),
    HdvParams(alpha=0.70, beta=0.95, s_go=33.0),
    HdvParams(alpha=0.50, beta=0.75, s_go=37.0),
    HdvParams(alpha=0.40, beta=0.80, s_go=39.0),
    HdvParams(alpha=0.80, beta=1.00, s_go=34.0),
)


@dataclass(frozen=True)
class MixedConfig:
    """Platoon layout. ``cav_indices`` are 1-based positions behind the head."""

    n: int
    cav_indices: tuple
    hdv_params: tuple = None
    cav_params: HdvParams = NOMINAL

    def __post_init__(self):
        idx = tuple(int(i) for i in self.cav_indices)
        object.__setattr__(self, "cav_indices", idx)
        m = len(idx)
        if not 1 <= m <= self.n:
            raise ValueError(f"need 1 <= m <= n, got m={m}, n={self.n}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("cav_indices must be strictly increasing")
        if idx[0] < 1 or idx[-1] > self.n:
            raise ValueError(f"cav_indices must lie in 1..{self.n}")
        params = self.hdv_params
        if params is None:
            params = (NOMINAL,) * (self.n - m)
        params = tuple(params)
        if len(params) != self.n - m:
            raise ValueError(
                f"expected {self.n - m} HDV parameter sets, got {len(params)}")
        object.__setattr__(self, "hdv_params", params)

    @property
    def m(self) -> int:
        return len(self.cav_indices)

    @property
    def is_cav(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[np.asarray(self.cav_indices) - 1] = True
        return mask

    @property
    def hdv_indices(self) -> tuple:
        cav = set(self.cav_indices)
        return tuple(i for i in range(1, self.n + 1) if i not in cav)

    def vehicle_params(self) -> list:
        """Per-vehicle parameters; CAV slots get ``cav_params``."""
        out = []
        hdv = iter(self.hdv_params)
        cav = set(self.cav_indices)
        for i in range(1, self.n + 1):
            out.append(self.cav_params if i in cav else next(hdv))
        return out

    def param_arrays(self) -> tuple:
        ps = self.vehicle_params()
        return tuple(np.array([getattr(p, f) for p in ps], dtype=float)
                     for f in ("alpha", "beta", "s_st", "s_go", "v_max"))


@dataclass
class TrafficState:
    spacing: np.ndarray
    velocity: np.ndarray
    head_velocity: float
    collision: bool = False

    def __post_init__(self):
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.spacing.shape != self.velocity.shape:
            raise ValueError("spacing and velocity must have the same length")
        self.collision = bool(self.collision or np.any(self.spacing <= 0.0))


@dataclass(frozen=True)
class Equilibrium:
    v_star: float
    s_star: tuple

    def __post_init__(self):
        object.__setattr__(self, "s_star",
                           tuple(float(s) for s in self.s_star))


@dataclass(frozen=True)
class LinearCoeffs:
    alpha1: float
    alpha2: float
    alpha3: float


@dataclass
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    C: np.ndarray


@dataclass
class DiscreteModel:
    Ad: np.ndarray
    Bd: np.ndarray
    Hd: np.ndarray
    Cd: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


# ----------------------------------------------------------------------------
# OVM
# ----------------------------------------------------------------------------

def ovm_desired_velocity(s, p: HdvParams = NOMINAL):
    """Spacing-dependent desired velocity; works on scalars and arrays."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise ValueError("spacing must be non-negative")
    out = kernels.desired_velocity_array(arr, p.s_st, p.s_go, p.v_max)
    return float(out) if out.ndim == 0 else out


def ovm_desired_velocity_slope(s: float, p: HdvParams = NOMINAL) -> float:
    if s <= p.s_st or s >= p.s_go:
        return 0.0
    w = math.pi / (p.s_go - p.s_st)
    return 0.5 * p.v_max * w * math.sin(w * (s - p.s_st))


def ovm_acceleration(s, s_dot, v, p: HdvParams = NOMINAL):
    return p.alpha * (ovm_desired_velocity(s, p) - v) + p.beta * s_dot


def solve_equilibrium_spacing(v_star: float, p: HdvParams = NOMINAL) -> float:
    """Spacing at which the OVM desired velocity equals ``v_star``."""
    if not 0.0 < v_star < p.v_max:
        raise ValueError(
            f"v_star={v_star} outside (0, {p.v_max}): equilibrium spacing is "
            "degenerate or unbounded")
    return (math.acos(1.0 - 2.0 * v_star / p.v_max) * (p.s_go - p.s_st)
            / math.pi + p.s_st)


def platoon_equilibrium(cfg: MixedConfig, v_star: float) -> Equilibrium:
    """Per-vehicle equilibrium spacing; CAVs use ``cfg.cav_params``."""
    return Equilibrium(v_star, [solve_equilibrium_spacing(v_star, p)
                                for p in cfg.vehicle_params()])


def linearize_hdv(p: HdvParams, eq) -> LinearCoeffs:
    """Linear HDV gains at an equilibrium.

    ``eq`` is an ``Equilibrium`` (its first spacing must belong to ``p``) or
    a bare ``v_star``.
    """
    if isinstance(eq, Equilibrium):
        v_star, s_star = eq.v_star, eq.s_star[0]
    else:
        v_star = float(eq)
        s_star = solve_equilibrium_spacing(v_star, p)
    return LinearCoeffs(p.alpha * ovm_desired_velocity_slope(s_star, p),
                        p.alpha + p.beta, p.beta)


def hdv_coefficients(cfg: MixedConfig, v_star: float) -> list:
    return [linearize_hdv(p, v_star) for p in cfg.hdv_params]


# ----------------------------------------------------------------------------
# Linear model
# ----------------------------------------------------------------------------

def build_continuous_model(cfg: MixedConfig, coeffs: Sequence[LinearCoeffs]
                           ) -> StateSpaceModel:
    coeffs = list(coeffs)
    n, m = cfg.n, cfg.m
    if len(coeffs) != n - m:
        raise ValueError(f"expected {n - m} HDV coefficient sets, "
                         f"got {len(coeffs)}")
    cav = set(cfg.cav_indices)
    A = np.zeros((2 * n, 2 * n))
    H = np.zeros((2 * n, 1))
    it = iter(coeffs)
    for i in range(1, n + 1):
        r = 2 * (i - 1)
        if i in cav:
            diag = np.array([[0.0, -1.0], [0.0, 0.0]])
            couple = np.array([[0.0, 1.0], [0.0, 0.0]])
        else:
            c = next(it)
            diag = np.array([[0.0, -1.0], [c.alpha1, -c.alpha2]])
            couple = np.array([[0.0, 1.0], [0.0, c.alpha3]])
        A[r:r + 2, r:r + 2] = diag
        if i == 1:
            H[0:2, 0] = couple[:, 1]
        else:
            A[r:r + 2, r - 2:r] = couple
    B = np.zeros((2 * n, m))
    for k, i in enumerate(cfg.cav_indices):
        B[2 * i - 1, k] = 1.0
    C = np.zeros((n + m, 2 * n))
    for i in range(n):
        C[i, 2 * i + 1] = 1.0
    for k, i in enumerate(cfg.cav_indices):
        C[n + k, 2 * i - 2] = 1.0
    return StateSpaceModel(A, B, H, C)


def discretize(model: StateSpaceModel, dt: float) -> DiscreteModel:
    """Zero-order-hold discretization via one augmented matrix exponential."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    nx = model.A.shape[0]
    nu = model.B.shape[1]
    M = np.zeros((nx + nu + 1, nx + nu + 1))
    M[:nx, :nx] = model.A
    M[:nx, nx:nx + nu] = model.B
    M[:nx, nx + nu:] = model.H
    E = expm(M * dt)
    return DiscreteModel(E[:nx, :nx], E[:nx, nx:nx + nu], E[:nx, nx + nu:],
                         model.C.copy(), float(dt))


def linear_model(cfg: MixedConfig, v_star: float, dt: float = DT,
                 hdv_params=None) -> DiscreteModel:
    """Discrete model linearized at ``v_star``; ``hdv_params`` overrides the
    drivers assumed by the model (e.g. nominal for a mismatched MPC)."""
    if hdv_params is not None:
        cfg = MixedConfig(cfg.n, cfg.cav_indices, tuple(hdv_params),
                          cfg.cav_params)
    return discretize(build_continuous_model(cfg, hdv_coefficients(cfg, v_star)),
                      dt)


# ----------------------------------------------------------------------------
# Nonlinear simulation
# ----------------------------------------------------------------------------

def equilibrium_state(cfg: MixedConfig, v_star: float) -> TrafficState:
    eq = platoon_equilibrium(cfg, v_star)
    return TrafficState(np.array(eq.s_star), np.full(cfg.n, float(v_star)),
                        float(v_star))


def step_nonlinear(state: TrafficState, u, v0_next: float, noise,
                   dt: float, cfg: MixedConfig, a_min: float = A_MIN,
                   a_max: float = A_MAX, hdv_mask=None,
                   return_accel: bool = False):
    """One explicit-Euler step of the nonlinear platoon.

    ``u`` holds the m CAV accelerations and ``noise`` the n - m HDV
    acceleration perturbations. All accelerations are saturated to
    ``[a_min, a_max]``. ``hdv_mask`` (length n, True = human driven) lets a
    caller run CAV slots on their nominal OVM instead, e.g. for an all-HDV
    baseline; the noise vector then has one entry per True slot.
    """
    n = cfg.n
    is_cav = cfg.is_cav if hdv_mask is None else ~np.asarray(hdv_mask, bool)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    noise = np.atleast_1d(np.asarray(noise, dtype=float))
    n_ctrl = int(is_cav.sum())
    if u.shape != (n_ctrl,):
        raise ValueError(f"u must have length {n_ctrl}")
    if noise.shape != (n - n_ctrl,):
        raise ValueError(f"noise must have length {n - n_ctrl}")
    cav_accel = np.zeros(n)
    cav_accel[is_cav] = u
    full_noise = np.zeros(n)
    full_noise[~is_cav] = noise
    s, v, acc = kernels.platoon_step(state.spacing, state.velocity,
                                     state.head_velocity, cav_accel,
                                     full_noise, is_cav, cfg.param_arrays(),
                                     a_min, a_max, dt)
    new = TrafficState(s, v, float(v0_next), collision=state.collision)
    return (new, acc) if return_accel else new


def measure_output(state: TrafficState, cfg: MixedConfig, v_star: float,
                   s_star_cav) -> np.ndarray:
    """Output deviation ``(v~_1..v~_n, s~_{i_1}..s~_{i_m})``."""
    idx = np.asarray(cfg.cav_indices) - 1
    return np.concatenate((state.velocity - v_star,
                           state.spacing[idx] - np.asarray(s_star_cav)))


class LinearPlant:
    """Discrete linear platoon ``x+ = Ad x + Bd u + Hd eps + Ed w``.

    ``w`` is the HDV acceleration noise, entering every human-driven velocity
    row through the same zero-order hold as the CAV inputs.
    """

    def __init__(self, cfg: MixedConfig, v_star: float, dt: float = DT,
                 hdv_params=None, x0=None):
        self.cfg = cfg
        if hdv_params is not None:
            cfg = MixedConfig(cfg.n, cfg.cav_indices, tuple(hdv_params),
                              cfg.cav_params)
        n = cfg.n
        cont = build_continuous_model(cfg, hdv_coefficients(cfg, v_star))
        self.model = discretize(cont, dt)
        E = np.zeros((2 * n, n - cfg.m))
        for k, i in enumerate(cfg.hdv_indices):
            E[2 * i - 1, k] = 1.0
        self.Ed = discretize(StateSpaceModel(cont.A, E, np.zeros((2 * n, 1)),
                                             cont.C), dt).Bd
        self.x = np.zeros(2 * n) if x0 is None else np.asarray(x0, float).copy()

    def output(self) -> np.ndarray:
        return self.model.Cd @ self.x

    def step(self, u, eps: float, noise=None) -> np.ndarray:
        m = self.model
        self.x = m.Ad @ self.x + m.Bd @ np.atleast_1d(u) + m.Hd[:, 0] * eps
        if noise is not None:
            self.x = self.x + self.Ed @ np.asarray(noise, float)
        return self.x
