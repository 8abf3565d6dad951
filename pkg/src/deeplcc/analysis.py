"""Controllability, stabilizability and observability checks for the
linearized mixed-traffic model."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .traffic import (LinearCoeffs, MixedConfig, StateSpaceModel,
                      build_continuous_model, hdv_coefficients)

RANK_TOL = 1e-8
K_MAX = 100


@dataclass
class AnalysisReport:
    controllable: bool
    controllability_rank: int
    stabilizable: bool
    observable: bool
    hdv_condition_value: list
    uncontrollable_mode_count: int
    combined_input_controllable: bool = False
    assumption1_holds: bool = True

    def to_dict(self):
        return asdict(self)


def _krylov_blocks(A, B):
    """Blocks B, AB, ..., A^{n-1}B, each rescaled to unit Frobenius norm.

    Rescaling a block column does not change the rank but keeps high powers
    of A from swamping the singular-value threshold.
    """
    blocks = []
    X = np.asarray(B, dtype=float)
    for _ in range(A.shape[0]):
        nrm = np.linalg.norm(X)
        blocks.append(X / nrm if nrm > 0 else X)
        X = A @ (X / nrm if nrm > 0 else X)
    return blocks


def controllability_matrix(A, B):
    """Kalman matrix ``[B, AB, ..., A^{n-1}B]`` with unit-norm block columns."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return np.hstack(_krylov_blocks(A, B))


def controllable_subspace(A, B_like, tol=RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the reachable subspace (staircase reduction).

    Equivalent to the column space of the Kalman matrix, but each rank
    decision is an SVD of one well-scaled block, so long single-input chains
    do not lose rank to round-off. Singular values below
    ``tol * ||[A, B]||`` count as zero.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = np.asarray(B_like, dtype=float).reshape(n, -1)
    thresh = tol * max(np.linalg.norm(np.hstack([A, B]), 2), 1e-300)
    Z = np.eye(n)
    Ak, Bk = A, B
    done = 0
    while done < n:
        if Bk.size == 0:
            break
        U, sv, _ = np.linalg.svd(Bk)
        rho = int(np.sum(sv > thresh))
        if rho == 0:
            break
        # rotate the remaining coordinates so the reached directions come first
        Z[:, done:] = Z[:, done:] @ U
        At = U.T @ Ak @ U
        done += rho
        Bk = At[rho:, :rho]
        Ak = At[rho:, rho:]
    return Z[:, :done]


def controllability_rank(A, B_like, tol=RANK_TOL) -> int:
    return controllable_subspace(A, B_like, tol).shape[1]


def observability_matrix(A, C):
    return controllability_matrix(np.asarray(A).T, np.asarray(C).T).T


def is_observable(A, C, tol=RANK_TOL) -> bool:
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    return controllability_rank(A.T, C.T, tol) == A.shape[0]


def is_stabilizable(A, B_like, tol=RANK_TOL) -> bool:
    """PBH test on every eigenvalue in the closed right half-plane."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = np.asarray(B_like, dtype=float).reshape(n, -1)
    scale = max(1.0, np.linalg.norm(A, 2))
    for lam in np.linalg.eigvals(A):
        if lam.real < -1e-9 * scale:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        sv = np.linalg.svd(M, compute_uv=False)
        # absolute threshold: a zero B must not make the test vacuous
        if np.sum(sv > tol * max(scale, sv[0])) < n:
            return False
    return True


def check_hdv_condition(coeffs: LinearCoeffs) -> float:
    """``alpha1 - alpha2*alpha3 + alpha3**2``; nonzero for every HDV is the
    controllability/observability requirement on the car-following gains."""
    return coeffs.alpha1 - coeffs.alpha2 * coeffs.alpha3 + coeffs.alpha3 ** 2


def combined_input_controllable(model: StateSpaceModel, tol=RANK_TOL) -> bool:
    Bh = np.hstack([model.H, model.B])
    return controllability_rank(model.A, Bh, tol) == model.A.shape[0]


def feedback_gain(cfg: MixedConfig, coeffs) -> np.ndarray:
    """State feedback that turns every CAV but the first into a virtual HDV.

    ``coeffs`` is one ``LinearCoeffs`` or a per-HDV list (the first is used).
    """
    if not isinstance(coeffs, LinearCoeffs):
        coeffs = list(coeffs)[0]
    n, m = cfg.n, cfg.m
    Kbar = np.zeros((n, 2 * n))
    for i in range(2, n + 1):
        r = i - 1
        Kbar[r, 2 * (i - 1):2 * i] = [coeffs.alpha1, -coeffs.alpha2]
        Kbar[r, 2 * (i - 2):2 * (i - 1)] = [0.0, coeffs.alpha3]
    sel = np.zeros((m, n))
    for r, i in enumerate(cfg.cav_indices[1:], start=1):
        sel[r, i - 1] = 1.0
    return sel @ Kbar


def feedback_transform_check(model: StateSpaceModel, cfg: MixedConfig,
                             coeffs=None, K=None,
                             tol=RANK_TOL) -> bool:
    """Rank of (A, B) equals rank of (A + BK, B)."""
    if K is None:
        if cfg.m < 2:
            raise ValueError("the transform needs at least two CAVs")
        K = feedback_gain(cfg, coeffs)
    Abar = model.A + model.B @ np.asarray(K, dtype=float)
    return (controllability_rank(model.A, model.B, tol)
            == controllability_rank(Abar, model.B, tol))


def assumption1_check(A, dt, k_max=K_MAX, tol=1e-9) -> bool:
    """No pair of eigenvalues with equal real part is 2*pi*k/dt apart in the
    imaginary direction (discretization keeps controllability)."""
    lam = np.linalg.eigvals(np.asarray(A, dtype=float))
    scale = max(1.0, np.max(np.abs(lam)) if lam.size else 1.0)
    ks = 2.0 * np.pi * np.arange(1, k_max + 1) / dt
    for i in range(lam.size):
        for j in range(i + 1, lam.size):
            d = lam[i] - lam[j]
            if abs(d.real) > tol * scale:
                continue
            if np.any(np.abs(abs(d.imag) - ks) <= 1e-9 * ks):
                return False
    return True


def analyze(cfg: MixedConfig, v_star: float, dt: float = 0.05,
            tol=RANK_TOL) -> AnalysisReport:
    coeffs = hdv_coefficients(cfg, v_star)
    model = build_continuous_model(cfg, coeffs)
    n2 = 2 * cfg.n
    rank = controllability_rank(model.A, model.B, tol)
    return AnalysisReport(
        controllable=rank == n2,
        controllability_rank=rank,
        stabilizable=is_stabilizable(model.A, model.B, tol),
        observable=is_observable(model.A, model.C, tol),
        hdv_condition_value=[check_hdv_condition(c) for c in coeffs],
        uncontrollable_mode_count=n2 - rank,
        combined_input_controllable=combined_input_controllable(model, tol),
        assumption1_holds=assumption1_check(model.A, dt),
    )
