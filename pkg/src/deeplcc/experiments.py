"""Scenarios, closed-loop runs, metrics and seeded batches."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from ._rng import stream
from .data import TrajectoryDataset, collect_offline
from .deepc import (DecisionLog, DeepLccConfig, DeepLccController, PastBuffer,
                    estimate_equilibrium)
from .mpc import MpcConfig, MpcController
from .traffic import (A_MAX, A_MIN, DT, NOISE_BOUND, MixedConfig,
                      TrafficState, linear_model, platoon_equilibrium,
                      step_nonlinear)

CONTROLLERS = ("all-hdv", "deepc", "mpc")

# Driving-cycle phase lists (target m/s, cruise s). These are hand-made
# urban and extra-urban style profiles, not a copy of any published figure.
URBAN_PHASES = ((15.0, 5.0), (11.0, 5.0), (17.0, 5.0), (13.0, 5.0), (15.0, 5.0))
HIGHWAY_PHASES = ((20.0, 5.0), (25.0, 8.0), (20.0, 5.0), (27.0, 8.0),
                  (22.0, 5.0))


# ----------------------------------------------------------------------------
# Scenarios
# ----------------------------------------------------------------------------

@dataclass
class ScenarioSpec:
    """Head-vehicle velocity profile plus run settings.

    ``kind`` is ``"sinusoid"`` (params amplitude, period, v_star) or
    ``"piecewise"`` (params times, velocities; linear in between, held at
    the ends).
    """

    name: str
    kind: str
    params: dict
    duration: float
    v_star: float
    equilibrium: str = "fixed"
    noise_seed: int = None

    def __post_init__(self):
        if self.kind not in ("sinusoid", "piecewise"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.equilibrium not in ("fixed", "rolling"):
            raise ValueError("equilibrium must be 'fixed' or 'rolling'")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    def head_velocity(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "sinusoid":
            return p["v_star"] + p["amplitude"] * np.sin(2 * np.pi * t / p["period"])
        return np.interp(t, p["times"], p["velocities"])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def scenario_sinusoid(amplitude: float = 3.0, period: float = 10.0,
                      v_star: float = 15.0, duration: float = 40.0,
                      equilibrium: str = "fixed") -> ScenarioSpec:
    if not 0 <= amplitude < v_star:
        raise ValueError("amplitude must lie in [0, v_star)")
    if not period > 0:
        raise ValueError("period must be positive")
    return ScenarioSpec("sinusoid", "sinusoid",
                        {"amplitude": float(amplitude), "period": float(period),
                         "v_star": float(v_star)},
                        float(duration), float(v_star), equilibrium)


def scenario_brake(v_high: float = 15.0, v_low: float = 5.0,
                   a_brake: float = -5.0, hold: float = 5.0,
                   a_recover: float = 2.0, t_brake: float = 5.0,
                   duration: float = 30.0, a_min: float = A_MIN,
                   a_max: float = A_MAX) -> ScenarioSpec:
    """Cruise, brake hard to ``v_low``, hold, recover, cruise."""
    if not v_low < v_high:
        raise ValueError("v_low must be below v_high")
    if not a_min <= a_brake < 0:
        raise ValueError(f"a_brake must lie in [{a_min}, 0)")
    if not 0 < a_recover <= a_max:
        raise ValueError(f"a_recover must lie in (0, {a_max}]")
    t1 = t_brake + (v_high - v_low) / -a_brake
    t2 = t1 + hold
    t3 = t2 + (v_high - v_low) / a_recover
    return ScenarioSpec("brake", "piecewise",
                        {"times": [0.0, t_brake, t1, t2, t3],
                         "velocities": [v_high, v_high, v_low, v_low, v_high]},
                        float(max(duration, t3)), float(v_high), "rolling")


def scenario_cycle(phases, ramp_accel: float = 1.0, ramp_decel: float = -1.5,
                   a_min: float = A_MIN, a_max: float = A_MAX,
                   name: str = "cycle") -> ScenarioSpec:
    """Cruise segments joined by constant-acceleration ramps."""
    phases = [(float(v), float(d)) for v, d in phases]
    if not phases:
        raise ValueError("phases must be non-empty")
    if not 0 < ramp_accel <= a_max or not a_min <= ramp_decel < 0:
        raise ValueError("unreachable ramp: accelerations outside "
                         f"[{a_min}, {a_max}] or of the wrong sign")
    if any(d < 0 for _, d in phases):
        raise ValueError("cruise durations must be nonnegative")
    times, vels = [0.0], [phases[0][0]]
    t = 0.0
    for k, (v, d) in enumerate(phases):
        if k > 0:
            dv = v - vels[-1]
            if dv != 0.0:
                t += dv / (ramp_accel if dv > 0 else ramp_decel)
                times.append(t)
                vels.append(v)
        t += d
        times.append(t)
        vels.append(v)
    return ScenarioSpec(name, "piecewise", {"times": times, "velocities": vels},
                        t, phases[0][0], "rolling")


# ----------------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------------

def fuel_rate(v, a):
    """Instantaneous fuel rate in mL/s."""
    out = kernels.fuel_rate_array(v, a)
    return float(out) if out.ndim == 0 else out


def msve(velocities, head_velocity, dt: float = DT, t0: int = 0,
         tf: int = None) -> float:
    """Mean squared velocity error over samples ``t0..tf-1``."""
    V = np.asarray(velocities, dtype=float)
    v0 = np.asarray(head_velocity, dtype=float)
    tf = V.shape[0] if tf is None else tf
    if not 0 <= t0 < tf <= V.shape[0]:
        raise ValueError("need 0 <= t0 < tf <= number of samples")
    n = V.shape[1]
    err = V[t0:tf] - v0[t0:tf, None]
    return float(dt / (n * (tf - t0) * dt) * np.sum(err ** 2))


@dataclass
class RunMetrics:
    total_fuel: float
    fuel_per_vehicle: list
    msve: float
    realized_cost: float
    min_cav_spacing: float
    peak_velocity_error: list
    infeasible_steps: int = 0
    collision: bool = False
    steps: int = 0
    min_input: float = 0.0
    max_input: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass
class RunResult:
    metrics: RunMetrics
    t: np.ndarray
    v0: np.ndarray
    spacing: np.ndarray
    velocity: np.ndarray
    inputs: np.ndarray
    accel: np.ndarray
    decisions: DecisionLog
    solve_times: list = field(default_factory=list)

    def fuel_rates(self):
        return fuel_rate(self.velocity, self.accel)

    def write_trajectory(self, path) -> None:
        write_trajectory_csv(path, self.t, self.v0, self.spacing,
                             self.velocity, self.inputs, self.fuel_rates())


def compute_metrics(t, v0, S, V, U, ACC, cfg: MixedConfig, Q, R, y_dev,
                    v_ref: float, dt: float, infeasible=0, collision=False):
    rates = fuel_rate(V, ACC)
    per_vehicle = (rates.sum(axis=0) * dt).tolist() if rates.size else [0.0] * cfg.n
    cav = np.asarray(cfg.cav_indices) - 1
    cost = float(np.einsum("ki,ij,kj->", y_dev, Q, y_dev)
                 + np.einsum("ki,ij,kj->", U, R, U)) if len(t) else 0.0
    return RunMetrics(
        total_fuel=float(sum(per_vehicle[2:])),
        fuel_per_vehicle=per_vehicle,
        msve=msve(V, v0, dt) if len(t) else 0.0,
        realized_cost=cost,
        min_cav_spacing=float(S[:, cav].min()) if len(t) else math.inf,
        peak_velocity_error=(np.abs(V - v_ref).max(axis=0).tolist()
                             if len(t) else [0.0] * cfg.n),
        infeasible_steps=int(infeasible),
        collision=bool(collision),
        steps=len(t),
        min_input=float(U.min()) if U.size else 0.0,
        max_input=float(U.max()) if U.size else 0.0,
    )


# ----------------------------------------------------------------------------
# Closed loop
# ----------------------------------------------------------------------------

def _make_controller(kind, cfg, dataset, deepc_cfg, mpc_model_params, dt):
    if kind == "deepc":
        if dataset is None:
            raise ValueError("the deepc controller needs a dataset")
        return DeepLccController.from_dataset(dataset, deepc_cfg)
    if kind == "mpc":
        model = linear_model(cfg, mpc_model_params.get("v_star", 15.0), dt,
                             hdv_params=mpc_model_params.get("hdv_params"))
        c = deepc_cfg
        return MpcController(MpcConfig(
            model, T_ini=c.T_ini, N=c.N, w_v=c.w_v, w_s=c.w_s, w_u=c.w_u,
            s_min=c.s_min, s_max=c.s_max, a_min=c.a_min, a_max=c.a_max,
            solver_tol=c.solver_tol, max_iter=c.max_iter))
    if kind == "all-hdv":
        return None
    raise ValueError(f"unknown controller {kind!r}; choose from {CONTROLLERS}")


def run_experiment(scenario: ScenarioSpec, controller: str, cfg: MixedConfig,
                   dataset: TrajectoryDataset = None, seed: int = 0,
                   deepc_cfg: DeepLccConfig = None, dt: float = DT,
                   hdv_noise: float = NOISE_BOUND, mpc_hdv_params=None,
                   mpc_v_star: float = 15.0) -> RunResult:
    """Warm up at equilibrium for T_ini steps, then run the closed loop.

    HDV noise comes from the ``plant`` stream of ``seed`` and is drawn for
    every slot, so all controller arms of one seed see the same realization.
    With ``controller="all-hdv"`` the CAV slots follow the nominal OVM.
    A collision stops the run; metrics cover the samples before it.
    """
    c = deepc_cfg or DeepLccConfig()
    ctrl = _make_controller(controller, cfg, dataset, c,
                            {"v_star": mpc_v_star, "hdv_params": mpc_hdv_params}, dt)
    n, m = cfg.n, cfg.m
    cav = np.asarray(cfg.cav_indices) - 1
    is_cav = cfg.is_cav
    K = int(round(scenario.duration / dt))
    warm = c.T_ini
    rng = stream(seed if scenario.noise_seed is None else scenario.noise_seed,
                 "plant")
    noise = rng.uniform(-hdv_noise, hdv_noise, size=(warm + K, n)) \
        if hdv_noise > 0 else np.zeros((warm + K, n))

    v_init = float(scenario.head_velocity(0.0))
    eq_plant = platoon_equilibrium(cfg, v_init)
    state = TrafficState(np.array(eq_plant.s_star), np.full(n, v_init), v_init)
    s_cav_nominal = estimate_equilibrium([scenario.v_star], cfg.cav_params, m)
    fixed_eq = s_cav_nominal
    all_hdv = controller == "all-hdv"
    mask = np.ones(n, dtype=bool) if all_hdv else None

    def advance(state, u, k, v0_next):
        w = noise[k] if all_hdv else noise[k, ~is_cav]
        u_in = np.zeros(0) if all_hdv else u
        return step_nonlinear(state, u_in, v0_next, w, dt, cfg, c.a_min,
                              c.a_max, hdv_mask=mask, return_accel=True)

    past = PastBuffer(c.T_ini, n, m)
    for k in range(warm):
        past.push(np.zeros(m), state.head_velocity, state.velocity,
                  state.spacing[cav])
        state, _ = advance(state, np.zeros(m), k, v_init)

    Q, R = c.weights(n, m)
    t = np.arange(K) * dt
    head = scenario.head_velocity(t)
    head_next = scenario.head_velocity(np.arange(1, K + 1) * dt)
    S = np.empty((K, n))
    V = np.empty((K, n))
    U = np.empty((K, m))
    ACC = np.empty((K, n))
    Y = np.empty((K, n + m))
    log = DecisionLog(m)
    solve_times = []
    collision = False
    done = 0
    state = TrafficState(state.spacing, state.velocity, float(head[0]))
    for k in range(K):
        if scenario.equilibrium == "rolling":
            eq = estimate_equilibrium(past.head_velocities(), cfg.cav_params, m)
        else:
            eq = fixed_eq
        S[k], V[k] = state.spacing, state.velocity
        Y[k] = np.r_[state.velocity - eq.v_star,
                     state.spacing[cav] - np.asarray(eq.s_star)]
        if ctrl is None:
            u = None
        else:
            t0 = time.perf_counter()
            u, dec = ctrl.step(past, eq)
            solve_times.append(time.perf_counter() - t0)
            log.record(float(t[k]), u, dec.objective, dec.sigma_y, dec.feasible)
        state_new, acc = advance(state, u if u is not None else np.zeros(m),
                                 warm + k, head_next[k])
        ACC[k] = acc
        U[k] = acc[cav]
        past.push(U[k], state.head_velocity, state.velocity, state.spacing[cav])
        state = state_new
        done = k + 1
        if state.collision:
            collision = True
            break

    sl = slice(0, done)
    metrics = compute_metrics(t[sl], head[sl], S[sl], V[sl], U[sl], ACC[sl],
                              cfg, Q, R, Y[sl], scenario.v_star, dt,
                              getattr(ctrl, "infeasible_steps", 0), collision)
    return RunResult(metrics, t[sl], head[sl], S[sl], V[sl], U[sl], ACC[sl],
                     log, solve_times)


# ----------------------------------------------------------------------------
# Batches
# ----------------------------------------------------------------------------

def _seed_job(args):
    scenario, controllers, cfg, seed, deepc_cfg, opts = args
    ds = None
    if "deepc" in controllers:
        ds = collect_offline(cfg, opts["collect_v_star"], opts["T_data"], seed,
                             dt=opts["dt"], hold=opts["hold"])
    out = {}
    for name in controllers:
        res = run_experiment(scenario, name, cfg, ds, seed, deepc_cfg,
                             dt=opts["dt"],
                             mpc_hdv_params=opts["mpc_hdv_params"])
        out[name] = res.metrics.to_dict()
    return seed, out


SUMMARY_FIELDS = ("realized_cost", "total_fuel", "msve", "min_cav_spacing",
                  "infeasible_steps", "min_input", "max_input")


def batch(scenario: ScenarioSpec, controllers, n_seeds: int, cfg: MixedConfig,
          deepc_cfg: DeepLccConfig = None, T_data: int = 800,
          base_seed: int = 0, jobs: int = 1, collect_v_star: float = 15.0,
          mpc_hdv_params=None, dt: float = DT, hold: int = 10) -> dict:
    """Run every controller on seeds ``base_seed .. base_seed+n_seeds-1``.

    Each seed collects its own dataset and shares one plant-noise stream
    across controllers. Statistics use the n-1 denominator.
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be at least 2")
    controllers = tuple(controllers)
    for c in controllers:
        if c not in CONTROLLERS:
            raise ValueError(f"unknown controller {c!r}")
    opts = {"collect_v_star": collect_v_star, "T_data": T_data, "dt": dt,
            "hold": hold, "mpc_hdv_params": mpc_hdv_params}
    jobs_args = [(scenario, controllers, cfg, base_seed + i, deepc_cfg, opts)
                 for i in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_seed_job, jobs_args))
    else:
        results = [_seed_job(a) for a in jobs_args]
    results.sort(key=lambda r: r[0])
    per_seed = {seed: out for seed, out in results}
    summary = {}
    for name in controllers:
        stats = {}
        for f in SUMMARY_FIELDS + ("peak_v_last",):
            if f == "peak_v_last":
                vals = np.array([per_seed[s][name]["peak_velocity_error"][-1]
                                 for s in per_seed])
            else:
                vals = np.array([per_seed[s][name][f] for s in per_seed],
                                dtype=float)
            stats[f] = {"mean": float(vals.mean()),
                        "std": float(vals.std(ddof=1))}
        stats["collisions"] = int(sum(per_seed[s][name]["collision"]
                                      for s in per_seed))
        summary[name] = stats
    return {"scenario": scenario.to_dict(), "n_seeds": n_seeds,
            "seeds": sorted(per_seed), "summary": summary,
            "per_seed": {str(s): per_seed[s] for s in sorted(per_seed)}}


# ----------------------------------------------------------------------------
# Files
# ----------------------------------------------------------------------------

def _r(x):
    return repr(float(x))


def write_trajectory_csv(path, t, v0, S, V, U, rates) -> None:
    n = S.shape[1]
    m = U.shape[1]
    header = (["t", "v0"] + [f"s_{i + 1}" for i in range(n)]
              + [f"v_{i + 1}" for i in range(n)]
              + [f"u_{k + 1}" for k in range(m)]
              + [f"fuel_rate_{i + 1}" for i in range(2, n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(t)):
            w.writerow([_r(t[k]), _r(v0[k]), *map(_r, S[k]), *map(_r, V[k]),
                        *map(_r, U[k]), *map(_r, rates[k, 2:])])


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    cols = {h: body[:, j] for j, h in enumerate(header)}

    def group(prefix):
        keys = sorted((k for k in header if k.startswith(prefix)),
                      key=lambda k: int(k[len(prefix):]))
        return np.column_stack([cols[k] for k in keys]) if keys else np.zeros((len(body), 0))

    return {"t": cols["t"], "v0": cols["v0"], "s": group("s_"),
            "v": group("v_"), "u": group("u_"), "fuel": group("fuel_rate_")}


def metrics_from_csv(path, cav_indices, v_ref: float = None) -> dict:
    """Fuel, MSVE, spacing and peak errors recomputed from a trajectory log."""
    tr = read_trajectory_csv(path)
    t = tr["t"]
    dt = float(t[1] - t[0]) if len(t) > 1 else DT
    v_ref = float(tr["v0"][0]) if v_ref is None else v_ref
    cav = np.asarray(cav_indices) - 1
    return {
        "total_fuel": float(tr["fuel"].sum() * dt),
        "msve": msve(tr["v"], tr["v0"], dt),
        "min_cav_spacing": float(tr["s"][:, cav].min()),
        "peak_velocity_error": np.abs(tr["v"] - v_ref).max(axis=0).tolist(),
        "steps": int(len(t)),
    }


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
