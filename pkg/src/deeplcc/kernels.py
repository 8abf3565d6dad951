"""Hot numeric loops, each with a numba and a pure-numpy implementation.

The public names (``platoon_step``, ``rollout``, ``hankel_matrix``,
``fuel_rate_array``) dispatch to the numba variant unless
``DEEPLCC_DISABLE_NUMBA`` is set. Both variants stay importable under the
``*_numba`` / ``*_numpy`` names so tests and the benchmark can compare them.

Vehicle parameters are passed as per-vehicle float arrays of length n
(``alpha, beta, s_st, s_go, v_max``); CAV slots carry the parameters of the
OVM used as their nominal law, which only matters when a kernel is asked to
drive the CAVs with it.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "platoon_step",
    "rollout",
    "hankel_matrix",
    "fuel_rate_array",
    "desired_velocity_array",
]


# ----------------------------------------------------------------------------
# OVM desired velocity
# ----------------------------------------------------------------------------

def desired_velocity_array(s, s_st, s_go, v_max):
    s = np.asarray(s, dtype=float)
    mid = 0.5 * v_max * (1.0 - np.cos(np.pi * (s - s_st) / (s_go - s_st)))
    return np.where(s <= s_st, 0.0, np.where(s >= s_go, v_max, mid))


@njit
def _vdes_scalar(s, s_st, s_go, v_max):
    if s <= s_st:
        return 0.0
    if s >= s_go:
        return v_max
    return 0.5 * v_max * (1.0 - math.cos(math.pi * (s - s_st) / (s_go - s_st)))


# ----------------------------------------------------------------------------
# One explicit-Euler step of the whole platoon
# ----------------------------------------------------------------------------

@njit
def platoon_step_numba(s, v, v0, cav_accel, noise, is_cav, alpha, beta,
                       s_st, s_go, v_max, a_min, a_max, dt):
    n = s.shape[0]
    s_new = np.empty(n)
    v_new = np.empty(n)
    acc = np.empty(n)
    for i in range(n):
        v_front = v0 if i == 0 else v[i - 1]
        if is_cav[i]:
            a = cav_accel[i]
        else:
            vd = _vdes_scalar(s[i], s_st[i], s_go[i], v_max[i])
            a = alpha[i] * (vd - v[i]) + beta[i] * (v_front - v[i]) + noise[i]
        if a < a_min:
            a = a_min
        elif a > a_max:
            a = a_max
        acc[i] = a
        s_new[i] = s[i] + dt * (v_front - v[i])
        v_new[i] = v[i] + dt * a
    return s_new, v_new, acc


def platoon_step_numpy(s, v, v0, cav_accel, noise, is_cav, alpha, beta,
                       s_st, s_go, v_max, a_min, a_max, dt):
    v_front = np.concatenate(([v0], v[:-1]))
    ovm = alpha * (desired_velocity_array(s, s_st, s_go, v_max) - v) \
        + beta * (v_front - v) + noise
    acc = np.clip(np.where(is_cav, cav_accel, ovm), a_min, a_max)
    return s + dt * (v_front - v), v + dt * acc, acc


# ----------------------------------------------------------------------------
# Open-loop / fixed-law rollout over many steps
# ----------------------------------------------------------------------------

@njit
def rollout_numba(s0, v0, head, cav_ovm, cav_offset, noise, is_cav, alpha,
                  beta, s_st, s_go, v_max, a_min, a_max, dt):
    steps = head.shape[0] - 1
    n = s0.shape[0]
    S = np.empty((steps + 1, n))
    V = np.empty((steps + 1, n))
    ACC = np.empty((steps, n))
    S[0] = s0
    V[0] = v0
    first_collision = -1
    for k in range(steps):
        for i in range(n):
            s = S[k, i]
            v = V[k, i]
            v_front = head[k] if i == 0 else V[k, i - 1]
            if is_cav[i]:
                a = cav_offset[k, i]
                if cav_ovm:
                    vd = _vdes_scalar(s, s_st[i], s_go[i], v_max[i])
                    a += alpha[i] * (vd - v) + beta[i] * (v_front - v)
            else:
                vd = _vdes_scalar(s, s_st[i], s_go[i], v_max[i])
                a = alpha[i] * (vd - v) + beta[i] * (v_front - v) + noise[k, i]
            if a < a_min:
                a = a_min
            elif a > a_max:
                a = a_max
            ACC[k, i] = a
            S[k + 1, i] = s + dt * (v_front - v)
            V[k + 1, i] = v + dt * a
            if first_collision < 0 and S[k + 1, i] <= 0.0:
                first_collision = k + 1
    return S, V, ACC, first_collision


def rollout_numpy(s0, v0, head, cav_ovm, cav_offset, noise, is_cav, alpha,
                  beta, s_st, s_go, v_max, a_min, a_max, dt):
    steps = head.shape[0] - 1
    n = s0.shape[0]
    S = np.empty((steps + 1, n))
    V = np.empty((steps + 1, n))
    ACC = np.empty((steps, n))
    S[0] = s0
    V[0] = v0
    first_collision = -1
    for k in range(steps):
        s, v = S[k], V[k]
        v_front = np.concatenate(([head[k]], v[:-1]))
        ovm = alpha * (desired_velocity_array(s, s_st, s_go, v_max) - v) \
            + beta * (v_front - v)
        cav = cav_offset[k] + (ovm if cav_ovm else 0.0)
        acc = np.clip(np.where(is_cav, cav, ovm + noise[k]), a_min, a_max)
        ACC[k] = acc
        S[k + 1] = s + dt * (v_front - v)
        V[k + 1] = v + dt * acc
        if first_collision < 0 and np.any(S[k + 1] <= 0.0):
            first_collision = k + 1
    return S, V, ACC, first_collision


# ----------------------------------------------------------------------------
# Block Hankel matrix
# ----------------------------------------------------------------------------

@njit
def hankel_matrix_numba(signal, depth):
    T, d = signal.shape
    cols = T - depth + 1
    H = np.empty((depth * d, cols))
    # row-major fill: the inner loop walks one contiguous row of H
    for r in range(depth):
        for c in range(d):
            row = r * d + c
            for j in range(cols):
                H[row, j] = signal[j + r, c]
    return H


def hankel_matrix_numpy(signal, depth):
    T, d = signal.shape
    windows = np.lib.stride_tricks.sliding_window_view(signal, depth, axis=0)
    # windows: (T - depth + 1, d, depth) -> rows ordered (time, channel)
    return np.ascontiguousarray(
        windows.transpose(2, 1, 0).reshape(depth * d, T - depth + 1))


# ----------------------------------------------------------------------------
# Fuel-consumption rate
# ----------------------------------------------------------------------------

@njit
def fuel_rate_numba(v, a):
    out = np.empty(v.shape[0])
    for k in range(v.shape[0]):
        R = 0.333 + 0.00108 * v[k] * v[k] + 1.2 * a[k]
        if R <= 0.0:
            out[k] = 0.444
        else:
            f = 0.444 + 0.090 * R * v[k]
            if a[k] > 0.0:
                f += 0.054 * a[k] * a[k] * v[k]
            out[k] = f
    return out


def fuel_rate_numpy(v, a):
    R = 0.333 + 0.00108 * v * v + 1.2 * a
    f = 0.444 + 0.090 * R * v + np.where(a > 0.0, 0.054 * a * a * v, 0.0)
    return np.where(R <= 0.0, 0.444, f)


# ----------------------------------------------------------------------------
# Dispatch
# ----------------------------------------------------------------------------

def _f(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def platoon_step(s, v, v0, cav_accel, noise, is_cav, params, a_min, a_max, dt):
    """Advance spacings and velocities one step; returns (s, v, accel)."""
    impl = platoon_step_numba if USE_NUMBA else platoon_step_numpy
    return impl(_f(s), _f(v), float(v0), _f(cav_accel), _f(noise),
                np.ascontiguousarray(is_cav, dtype=np.bool_), *params,
                float(a_min), float(a_max), float(dt))


def rollout(s0, v0, head, cav_ovm, cav_offset, noise, is_cav, params,
            a_min, a_max, dt):
    """Run ``len(head) - 1`` steps with CAVs on OVM (or zero) plus offsets.

    Returns ``(S, V, ACC, first_collision)``; ``first_collision`` is the first
    sample index with a non-positive spacing, or -1.
    """
    impl = rollout_numba if USE_NUMBA else rollout_numpy
    return impl(_f(s0), _f(v0), _f(head), bool(cav_ovm), _f(cav_offset),
                _f(noise), np.ascontiguousarray(is_cav, dtype=np.bool_),
                *params, float(a_min), float(a_max), float(dt))


def hankel_matrix(signal, depth):
    signal = _f(signal)
    if signal.ndim == 1:
        signal = signal[:, None]
    impl = hankel_matrix_numba if USE_NUMBA else hankel_matrix_numpy
    return impl(signal, int(depth))


def fuel_rate_array(v, a):
    # asarray keeps 0-d inputs 0-d; ascontiguousarray would promote them
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    shape = np.broadcast_shapes(v.shape, a.shape)
    v = np.ascontiguousarray(np.broadcast_to(v, shape)).ravel()
    a = np.ascontiguousarray(np.broadcast_to(a, shape)).ravel()
    impl = fuel_rate_numba if USE_NUMBA else fuel_rate_numpy
    return impl(v, a).reshape(shape)
