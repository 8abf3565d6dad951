"""Offline trajectory data, Hankel matrices and persistent excitation."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._rng import stream
from .traffic import (A_MAX, A_MIN, DT, NOISE_BOUND, CollisionError,
                      LinearPlant, MixedConfig, linearize_hdv,
                      platoon_equilibrium)

FORMAT_VERSION = 1
PE_TOL = 1e-8


@dataclass(frozen=True)
class TrajectoryDataset:
    """Input/external-input/output deviations recorded around one equilibrium.

    Sample ``k`` pairs the output measured at step k with the CAV inputs and
    head-vehicle velocity error acting from step k to k+1.
    """

    u_seq: np.ndarray
    eps_seq: np.ndarray
    y_seq: np.ndarray
    dt: float
    v_star_collect: float
    s_star_collect: tuple
    cav_indices: tuple

    def __post_init__(self):
        u = np.asarray(self.u_seq, dtype=float)
        eps = np.asarray(self.eps_seq, dtype=float).reshape(-1)
        y = np.asarray(self.y_seq, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if not (u.shape[0] == eps.shape[0] == y.shape[0]):
            raise ValueError("u, eps and y must share length T")
        m = len(self.cav_indices)
        if u.shape[1] != m:
            raise ValueError(f"u must have {m} columns, got {u.shape[1]}")
        if y.ndim != 2 or y.shape[1] <= m:
            raise ValueError("y must be T x (n+m)")
        if len(self.s_star_collect) != m:
            raise ValueError("s_star_collect must have one entry per CAV")
        for name, arr in (("u_seq", u), ("eps_seq", eps), ("y_seq", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "cav_indices",
                           tuple(int(i) for i in self.cav_indices))
        object.__setattr__(self, "s_star_collect",
                           tuple(float(s) for s in self.s_star_collect))

    @property
    def T(self) -> int:
        return self.u_seq.shape[0]

    @property
    def m(self) -> int:
        return self.u_seq.shape[1]

    @property
    def n(self) -> int:
        return self.y_seq.shape[1] - self.m


@dataclass(frozen=True)
class HankelSet:
    Up: np.ndarray
    Uf: np.ndarray
    Ep: np.ndarray
    Ef: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray
    T_ini: int
    N: int

    @property
    def columns(self) -> int:
        return self.Up.shape[1]


def hankel(signal, depth: int) -> np.ndarray:
    """Block Hankel matrix; column j stacks samples j..j+depth-1."""
    signal = np.asarray(signal, dtype=float)
    T = signal.shape[0]
    if not 1 <= depth <= T:
        raise ValueError(f"depth must be in 1..{T}, got {depth}")
    return kernels.hankel_matrix(signal, depth)


def _row_rank(M, tol):
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def is_persistently_exciting(signal, order: int, tol: float = PE_TOL) -> bool:
    """True iff the depth-``order`` Hankel matrix has full row rank."""
    signal = np.asarray(signal, dtype=float)
    if signal.ndim == 1:
        signal = signal[:, None]
    T, d = signal.shape
    if order > T or order * d > T - order + 1:
        return False
    return _row_rank(hankel(signal, order), tol) == order * d


def min_data_length(m: int, T_ini: int, N: int, n: int) -> int:
    """Shortest data for the combined input to be PE of order T_ini+N+2n."""
    return (m + 1) * (T_ini + N + 2 * n) - 1


def combined_input(ds: TrajectoryDataset) -> np.ndarray:
    return np.column_stack([ds.eps_seq, ds.u_seq])


def build_hankel_set(ds: TrajectoryDataset, T_ini: int, N: int,
                     check_pe: bool = True) -> HankelSet:
    """Partition depth-(T_ini+N) Hankel matrices into past and future rows.

    A warning is issued when (eps, u) is not persistently exciting of order
    T_ini + N + 2n.
    """
    L = T_ini + N
    if ds.T < L:
        raise ValueError(f"dataset length {ds.T} < T_ini + N = {L}")
    if check_pe and not is_persistently_exciting(combined_input(ds),
                                                 L + 2 * ds.n):
        warnings.warn(f"combined input is not persistently exciting of order "
                      f"{L + 2 * ds.n}", RuntimeWarning, stacklevel=2)
    m, p = ds.m, ds.y_seq.shape[1]
    U = hankel(ds.u_seq, L)
    E = hankel(ds.eps_seq[:, None], L)
    Y = hankel(ds.y_seq, L)
    return HankelSet(U[:T_ini * m], U[T_ini * m:], E[:T_ini], E[T_ini:],
                     Y[:T_ini * p], Y[T_ini * p:], T_ini, N)


# ----------------------------------------------------------------------------
# Collection
# ----------------------------------------------------------------------------

def _held_noise(rng, T, bound, hold):
    draws = rng.uniform(-bound, bound, size=-(-T // hold)) if bound > 0 \
        else np.zeros(-(-T // hold))
    return np.repeat(draws, hold)[:T]


def collect_offline(cfg: MixedConfig, v_star: float, T: int, seed: int,
                    dt: float = DT, hold: int = 10, input_noise: float = 1.0,
                    head_noise: float = 1.0, hdv_noise: float = NOISE_BOUND,
                    plant: str = "nonlinear") -> TrajectoryDataset:
    """Excite the platoon around ``v_star`` and record deviations.

    CAVs apply their nominal OVM law plus ``U[-input_noise, input_noise]``
    redrawn each step. The head vehicle's velocity error is
    ``U[-head_noise, head_noise]`` held for ``hold`` steps. HDVs receive
    ``U[-hdv_noise, hdv_noise]`` acceleration noise. ``plant="linear"`` uses
    the discrete linear model with the linearized OVM law on the CAVs.

    Raises:
        CollisionError: a spacing became non-positive.
    """
    if T < 1:
        raise ValueError("T must be positive")
    rng = stream(seed, "collect")
    n, m = cfg.n, cfg.m
    is_cav = cfg.is_cav
    cav = np.asarray(cfg.cav_indices) - 1
    eq = platoon_equilibrium(cfg, v_star)
    s_star_cav = tuple(eq.s_star[i] for i in cav)

    eps = _held_noise(rng, T + 1, head_noise, hold)
    du = rng.uniform(-input_noise, input_noise, size=(T, m)) if input_noise > 0 \
        else np.zeros((T, m))
    w = rng.uniform(-hdv_noise, hdv_noise, size=(T, n)) if hdv_noise > 0 \
        else np.zeros((T, n))
    w[:, is_cav] = 0.0

    if plant == "nonlinear":
        offset = np.zeros((T, n))
        offset[:, cav] = du
        S, V, ACC, hit = kernels.rollout(
            np.array(eq.s_star), np.full(n, float(v_star)), v_star + eps, True,
            offset, w, is_cav, cfg.param_arrays(), A_MIN, A_MAX, dt)
        if hit >= 0 and hit <= T - 1:
            raise CollisionError(f"collision during collection at step {hit} "
                                 f"(spacing {S[hit].min():.3f} m)")
        u = ACC[:, cav]
        y = np.column_stack([V[:T] - v_star, S[:T, cav] - np.array(s_star_cav)])
    elif plant == "linear":
        lin = LinearPlant(cfg, v_star, dt)
        c = linearize_hdv(cfg.cav_params, v_star)
        hdv_w = w[:, ~is_cav]
        u = np.empty((T, m))
        y = np.empty((T, n + m))
        for k in range(T):
            x = lin.x
            y[k] = lin.output()
            for j, i in enumerate(cav):
                v_front = eps[k] if i == 0 else x[2 * i - 1]
                u[k, j] = (c.alpha1 * x[2 * i] - c.alpha2 * x[2 * i + 1]
                           + c.alpha3 * v_front + du[k, j])
            lin.step(u[k], eps[k], hdv_w[k])
    else:
        raise ValueError(f"unknown plant {plant!r}")

    ds = TrajectoryDataset(u, eps[:T], y, dt, float(v_star), s_star_cav,
                           cfg.cav_indices)
    return ds


def check_dataset(ds: TrajectoryDataset, T_ini: int, N: int) -> dict:
    """Length and persistent-excitation verdicts for a planned horizon."""
    order = T_ini + N + 2 * ds.n
    return {
        "T": ds.T,
        "min_data_length": min_data_length(ds.m, T_ini, N, ds.n),
        "length_ok": ds.T >= min_data_length(ds.m, T_ini, N, ds.n),
        "pe_order": order,
        "persistently_exciting": is_persistently_exciting(combined_input(ds),
                                                          order),
    }


# ----------------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------------

class DatasetFormatError(ValueError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _array_text(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        return "[" + ",".join(_fmt(v) for v in a) + "]"
    return "[" + ",".join(_array_text(r) for r in a) + "]"


def save_dataset(ds: TrajectoryDataset, path) -> None:
    """Write one JSON document; numbers carry 17 significant digits."""
    head = [
        ("version", str(FORMAT_VERSION)),
        ("n", str(ds.n)),
        ("m", str(ds.m)),
        ("cav_indices", json.dumps(list(ds.cav_indices))),
        ("dt", _fmt(ds.dt)),
        ("v_star", _fmt(ds.v_star_collect)),
        ("s_star", _array_text(ds.s_star_collect)),
        ("T", str(ds.T)),
        ("u", _array_text(ds.u_seq)),
        ("eps", _array_text(ds.eps_seq)),
        ("y", _array_text(ds.y_seq)),
    ]
    text = "{\n" + ",\n".join(f' "{k}": {v}' for k, v in head) + "\n}\n"
    with open(path, "w") as fh:
        fh.write(text)


def load_dataset(path) -> TrajectoryDataset:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: malformed dataset ({exc})") from exc
    if not isinstance(doc, dict):
        raise DatasetFormatError(f"{path}: expected a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported version {doc.get('version')!r}")
    missing = {"n", "m", "cav_indices", "dt", "v_star", "s_star", "T", "u",
               "eps", "y"} - doc.keys()
    if missing:
        raise DatasetFormatError(f"{path}: missing fields {sorted(missing)}")
    n, m, T = int(doc["n"]), int(doc["m"]), int(doc["T"])
    u = np.asarray(doc["u"], dtype=float)
    eps = np.asarray(doc["eps"], dtype=float)
    y = np.asarray(doc["y"], dtype=float)
    if len(doc["cav_indices"]) != m or len(doc["s_star"]) != m:
        raise DatasetFormatError(f"{path}: cav_indices/s_star do not match m={m}")
    if u.shape != (T, m) or eps.shape != (T,) or y.shape != (T, n + m):
        raise DatasetFormatError(
            f"{path}: dimension mismatch (header n={n}, m={m}, T={T}; "
            f"u {u.shape}, eps {eps.shape}, y {y.shape})")
    return TrajectoryDataset(u, eps, y, float(doc["dt"]), float(doc["v_star"]),
                             tuple(doc["s_star"]), tuple(doc["cav_indices"]))
