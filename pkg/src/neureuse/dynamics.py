"""Autonomous and transient dynamics of the interneuron layer.

With the sensory inputs clamped, the interneurons form an autonomous system
``tau * ds/dt = -s + W^T sigma(s + theta) + drive``. This module finds its
attractors (fixed points and limit cycles) from grids of initial states,
collects them into per-behaviour attractor sets, compares sets, counts basins,
and matches time-shifted stretches of closed-loop activity.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import root

from .ctrnn import AgentParams, sensory_output, sigmoid, step_sensory
from .embodiment import Task, TrialResult

log = logging.getLogger(__name__)

FIXED_POINT = "fixed_point"
LIMIT_CYCLE = "limit_cycle"

BEHAVIOR_OF_TASK = {Task.CATCH: "CircleCatch", Task.AVOID: "LineAvoid", Task.POLE: "PoleBalance"}


@dataclass(frozen=True)
class AnalysisConfig:
    fp_tol: float = 1e-8
    eps_loc: float = 0.05
    cycle_tol: float = 1e-4
    max_time: float = 5000.0
    dt: float = 0.1
    # trajectories still moving after this long are checked for recurrence
    cycle_check_time: float = 200.0
    polish_tol: float = 1e-4
    grid_points: int = 5
    grid_span: float = 15.0
    sample_interval: float = 5.0


@dataclass
class InputCondition:
    """Clamped sensory input for one phase portrait."""

    behavior: str
    inputs: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(7)

    def sensor_outputs(self, params: AgentParams, relax: str = "analytic") -> np.ndarray:
        """Sensory outputs once the sensory states have reached the inputs.

        ``relax="integrate"`` runs the sensory ODE from rest instead of
        using its equilibrium directly.
        """
        if relax == "analytic":
            s = self.inputs
        elif relax == "integrate":
            s = np.zeros(7)
            for _ in range(100000):
                nxt = step_sensory(s, self.inputs, 0.1, params.sensory_tau)
                if np.max(np.abs(nxt - s)) < 1e-15:
                    break
                s = nxt
        else:
            raise ValueError(f"unknown relax mode {relax!r}")
        return sensory_output(s, params.sensory_gain, params.sensory_bias)

    def drive(self, params: AgentParams, relax: str = "analytic") -> np.ndarray:
        return params.w_sensor_to_inter.T @ self.sensor_outputs(params, relax)

    def to_dict(self) -> dict:
        return {"behavior": self.behavior, "inputs": self.inputs.tolist(),
                "provenance": self.provenance}


@dataclass
class Attractor:
    kind: str
    location: np.ndarray
    source: Optional[InputCondition] = None
    basin_count: int = 0
    residual: float = float("nan")
    orbit: Optional[np.ndarray] = None
    period: Optional[float] = None

    def distance(self, other: "Attractor") -> float:
        """Inf-norm distance between attractors; cycles compare by orbit."""
        if self.kind == FIXED_POINT and other.kind == FIXED_POINT:
            return float(np.max(np.abs(self.location - other.location)))
        if self.kind != other.kind:
            return float("inf")
        d1 = np.min(np.max(np.abs(other.orbit - self.location), axis=1))
        d2 = np.min(np.max(np.abs(self.orbit - other.location), axis=1))
        return float(max(d1, d2))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "location": self.location.tolist(),
            "basin_count": self.basin_count,
            "residual": self.residual,
            "source": self.source.to_dict() if self.source else None,
        }
        if self.kind == LIMIT_CYCLE:
            d["period"] = self.period
            d["orbit"] = self.orbit.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Attractor":
        src = d.get("source")
        return cls(
            kind=d["kind"], location=np.asarray(d["location"], float),
            source=InputCondition(**src) if src else None,
            basin_count=d.get("basin_count", 0), residual=d.get("residual", float("nan")),
            orbit=np.asarray(d["orbit"], float) if d.get("orbit") is not None else None,
            period=d.get("period"),
        )


@dataclass
class AttractorSet:
    behavior: str
    attractors: list = field(default_factory=list)
    n_nonconverged: int = 0

    def __len__(self):
        return len(self.attractors)

    def add(self, att: Attractor, eps: float) -> bool:
        """Insert unless an attractor within ``eps`` exists; return True if new."""
        for other in self.attractors:
            if other.distance(att) < eps:
                other.basin_count += att.basin_count
                return False
        self.attractors.append(att)
        return True

    def fixed_points(self) -> np.ndarray:
        pts = [a.location for a in self.attractors if a.kind == FIXED_POINT]
        return np.array(pts) if pts else np.zeros((0, 0))

    def kinds(self) -> set:
        return {a.kind for a in self.attractors}

    def to_dict(self) -> dict:
        return {"behavior": self.behavior, "n_nonconverged": self.n_nonconverged,
                "attractors": [a.to_dict() for a in self.attractors]}

    @classmethod
    def from_dict(cls, d: dict) -> "AttractorSet":
        return cls(d["behavior"], [Attractor.from_dict(a) for a in d["attractors"]],
                   d.get("n_nonconverged", 0))

    def write_json(self, path, **metadata) -> None:
        doc = self.to_dict()
        doc.update(metadata)
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --- vector field ---------------------------------------------------------

def interneuron_field(states: np.ndarray, drive: np.ndarray, params: AgentParams) -> np.ndarray:
    """``ds/dt`` for a batch of states ``(M, N)`` under a constant drive."""
    out = sigmoid(states + params.inter_bias)
    return (-states + out @ params.w_inter + drive) / params.inter_tau


def field_jacobian(state: np.ndarray, params: AgentParams) -> np.ndarray:
    o = sigmoid(state + params.inter_bias)
    slope = o * (1.0 - o)
    # J[i, j] = (-delta_ij + w[j, i] * slope_j) / tau_i
    return (-np.eye(params.n_inter) + params.w_inter.T * slope[None, :]) / params.inter_tau[:, None]


def residual(state, drive, params: AgentParams) -> float:
    f = interneuron_field(np.atleast_2d(state), drive, params)
    return float(np.max(np.abs(f)))


def _rk4(states, drive, params, dt):
    k1 = interneuron_field(states, drive, params)
    k2 = interneuron_field(states + 0.5 * dt * k1, drive, params)
    k3 = interneuron_field(states + 0.5 * dt * k2, drive, params)
    k4 = interneuron_field(states + dt * k3, drive, params)
    return states + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _polish(state, drive, params, cfg: AnalysisConfig) -> Optional[np.ndarray]:
    """Newton refinement to a nearby stable fixed point, or None."""
    sol = root(lambda s: interneuron_field(s[None, :], drive, params)[0], state,
               jac=lambda s: field_jacobian(s, params), method="hybr", tol=1e-14)
    fp = sol.x
    if not np.all(np.isfinite(fp)) or residual(fp, drive, params) >= cfg.fp_tol:
        return None
    if np.max(np.abs(fp - state)) > 100 * cfg.polish_tol + 1e-3:
        return None
    if np.max(np.linalg.eigvals(field_jacobian(fp, params)).real) >= 0:
        return None
    return fp


# --- settling -------------------------------------------------------------

@dataclass
class SettleOutcome:
    attractor: Optional[Attractor]
    converged: bool
    time: float


def _cycle_from(state, drive, params, cfg: AnalysisConfig, t0: float):
    """Poincare-section recurrence test for one still-moving trajectory.

    A section plane is placed through the current state, normal to the flow.
    Crossings are located by cubic Hermite interpolation of the RK4 samples;
    two consecutive crossings closer than ``cycle_tol`` mark a limit cycle.
    Returns ``(kind, location, orbit, period, t_end)``; kind is None when
    neither a cycle nor a fixed point was found before ``max_time``.
    """
    dt = cfg.dt
    s = np.asarray(state, float)[None, :]
    t = t0
    p0 = s[0].copy()
    f0 = interneuron_field(s, drive, params)[0]
    normal = f0 / (np.linalg.norm(f0) + 1e-300)
    prev_hit = None
    prev_hit_t = None
    orbit = [s[0].copy()]
    g_prev = 0.0
    f_prev = f0
    while t < cfg.max_time:
        s_new = _rk4(s, drive, params, dt)
        t += dt
        f_new = interneuron_field(s_new, drive, params)[0]
        if np.max(np.abs(f_new)) < cfg.polish_tol:
            fp = _polish(s_new[0], drive, params, cfg)
            if fp is not None:
                return FIXED_POINT, fp, None, None, t
        g_new = float(normal @ (s_new[0] - p0))
        orbit.append(s_new[0].copy())
        if g_prev < 0.0 <= g_new:
            # root of the Hermite cubic on [0, 1] by bisection
            a, b = s[0], s_new[0]
            fa, fb = f_prev * dt, f_new * dt

            def herm(u):
                h00 = 2 * u ** 3 - 3 * u ** 2 + 1
                h10 = u ** 3 - 2 * u ** 2 + u
                h01 = -2 * u ** 3 + 3 * u ** 2
                h11 = u ** 3 - u ** 2
                return h00 * a + h10 * fa + h01 * b + h11 * fb

            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if normal @ (herm(mid) - p0) < 0:
                    lo = mid
                else:
                    hi = mid
            hit = herm(0.5 * (lo + hi))
            hit_t = t - dt + 0.5 * (lo + hi) * dt
            if prev_hit is not None and np.max(np.abs(hit - prev_hit)) < cfg.cycle_tol \
                    and hit_t - prev_hit_t > 1.0:
                period = hit_t - prev_hit_t
                n = int(round(period / dt)) + 1
                return LIMIT_CYCLE, hit, np.array(orbit[-n:]), period, t
            prev_hit, prev_hit_t = hit, hit_t
            orbit = [s_new[0].copy()]
        g_prev = g_new
        s, f_prev = s_new, f_new
    return None, s[0], None, None, t


def settle_many(params: AgentParams, condition: InputCondition, states,
                cfg: AnalysisConfig = AnalysisConfig(),
                drive: Optional[np.ndarray] = None) -> list[SettleOutcome]:
    """Settle a batch of initial interneuron states under one clamped input.

    States are advanced together with RK4 until the flow speed drops below
    ``polish_tol``, then refined by Newton to a stable fixed point with
    residual under ``fp_tol``. States still moving after
    ``cycle_check_time`` are followed individually and tested for a limit
    cycle; anything unresolved at ``max_time`` is reported as not converged.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    if drive is None:
        drive = condition.drive(params)
    m = states.shape[0]
    out: list = [None] * m
    active = np.arange(m)
    t = 0.0
    next_polish = np.zeros(m)
    while active.size and t < min(cfg.cycle_check_time, cfg.max_time):
        states[active] = _rk4(states[active], drive, params, cfg.dt)
        t += cfg.dt
        speed = np.max(np.abs(interneuron_field(states[active], drive, params)), axis=1)
        done = []
        for k in np.nonzero((speed < cfg.polish_tol) & (next_polish[active] <= t))[0]:
            idx = active[k]
            fp = _polish(states[idx], drive, params, cfg)
            if fp is None:
                next_polish[idx] = t + 10.0
                continue
            att = Attractor(FIXED_POINT, fp, condition, 1, residual(fp, drive, params))
            out[idx] = SettleOutcome(att, True, t)
            done.append(k)
        if done:
            active = np.delete(active, done)
    for idx in active:
        kind, loc, orbit, period, t_end = _cycle_from(states[idx], drive, params, cfg, t)
        if kind is None:
            out[idx] = SettleOutcome(None, False, t_end)
            continue
        res = residual(loc, drive, params)
        out[idx] = SettleOutcome(Attractor(kind, loc, condition, 1, res, orbit, period),
                                 True, t_end)
    return out


def settle(params: AgentParams, condition: InputCondition, s0,
           cfg: AnalysisConfig = AnalysisConfig()) -> SettleOutcome:
    """Settle one initial state; see :func:`settle_many`."""
    return settle_many(params, condition, np.atleast_2d(s0), cfg)[0]


def state_grid(n_inter: int, points: int = 5, span: float = 15.0) -> np.ndarray:
    """Regular grid of ``points**n_inter`` states over ``[-span, span]^n``."""
    if points <= 0:
        return np.zeros((0, n_inter))
    axis = np.linspace(-span, span, points)
    mesh = np.meshgrid(*([axis] * n_inter), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def find_attractors(params: AgentParams, condition: InputCondition, initial_states=None,
                    cfg: AnalysisConfig = AnalysisConfig()) -> AttractorSet:
    """All attractors reached from the default grid (plus extra states)."""
    grid = state_grid(params.n_inter, cfg.grid_points, cfg.grid_span)
    if initial_states is not None and len(initial_states):
        grid = np.vstack([grid, np.atleast_2d(initial_states)])
    result = AttractorSet(condition.behavior)
    for outcome in settle_many(params, condition, grid, cfg):
        if outcome.attractor is None:
            result.n_nonconverged += 1
        else:
            result.add(outcome.attractor, cfg.eps_loc)
    return result


def conditions_from_trajectory(result: TrialResult, interval: float = 5.0,
                               behavior: Optional[str] = None) -> list[tuple[InputCondition, np.ndarray]]:
    """Input conditions sampled every ``interval`` time units along a trial.

    Each condition is paired with the interneuron state visited at that time.
    """
    behavior = behavior or BEHAVIOR_OF_TASK[result.spec.task]
    t = result.times
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    stride = max(1, int(round(interval / dt)))
    pose_names = result.columns()[3:5]
    out = []
    for k in range(0, len(t), stride):
        row = result.trajectory[k]
        prov = {"t": float(t[k]), "x_agent": float(row[1]),
                pose_names[0]: float(row[3]), pose_names[1]: float(row[4])}
        out.append((InputCondition(behavior, result.inputs[k], prov), result.inter_states[k]))
    return out


def build_attractor_set(params: AgentParams, behavior: str,
                        trajectories: Sequence[TrialResult],
                        cfg: AnalysisConfig = AnalysisConfig(),
                        static_conditions: Iterable[InputCondition] = ()) -> AttractorSet:
    """Union of the attractors of every phase portrait met during a behaviour.

    Input conditions are sampled along the recorded trajectories and taken
    from ``static_conditions``; identical input vectors are analysed once.
    """
    seen: dict = {}
    for traj in trajectories:
        for cond, visited in conditions_from_trajectory(traj, cfg.sample_interval, behavior):
            key = cond.inputs.tobytes()
            if key in seen:
                seen[key][1].append(visited)
            else:
                seen[key] = (cond, [visited])
    for cond in static_conditions:
        seen.setdefault(cond.inputs.tobytes(), (cond, []))
    result = AttractorSet(behavior)
    for cond, visited in seen.values():
        found = find_attractors(params, cond, np.array(visited) if visited else None, cfg)
        result.n_nonconverged += found.n_nonconverged
        for att in found.attractors:
            result.add(att, cfg.eps_loc)
    if result.n_nonconverged:
        log.warning("%s: %d initial states did not converge", behavior, result.n_nonconverged)
    return result


@dataclass
class Comparison:
    shared: list  # (index_a, index_b, distance)
    only_a: list
    only_b: list

    @property
    def counts(self) -> dict:
        return {"shared": len(self.shared), "only_a": len(self.only_a), "only_b": len(self.only_b)}


def compare_attractor_sets(a: AttractorSet, b: AttractorSet, eps: float = 0.05) -> Comparison:
    """Greedy mutual-nearest matching of attractors closer than ``eps``.

    The closest remaining pair is matched first, so the number of shared
    attractors does not depend on argument order.
    """
    na, nb = len(a.attractors), len(b.attractors)
    dist = np.full((na, nb), np.inf)
    for i, x in enumerate(a.attractors):
        for j, y in enumerate(b.attractors):
            dist[i, j] = x.distance(y)
    shared = []
    free_a, free_b = set(range(na)), set(range(nb))
    pairs = sorted((dist[i, j], i, j) for i in range(na) for j in range(nb) if dist[i, j] < eps)
    for d, i, j in pairs:
        if i in free_a and j in free_b:
            shared.append((i, j, float(d)))
            free_a.discard(i)
            free_b.discard(j)
    return Comparison(shared, sorted(free_a), sorted(free_b))


def write_overlap_csv(path, sets: Sequence[AttractorSet], eps: float = 0.05) -> None:
    """One row per attractor: behaviour, kind, coordinates and which other
    behaviours share it."""
    rows = []
    for i, s in enumerate(sets):
        for k, att in enumerate(s.attractors):
            sharers = []
            for j, other in enumerate(sets):
                if j != i and any(att.distance(o) < eps for o in other.attractors):
                    sharers.append(other.behavior)
            rows.append([s.behavior, k, att.kind, *att.location.tolist(), ";".join(sharers)])
    n = max((len(s.attractors[0].location) for s in sets if s.attractors), default=0)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["behavior", "index", "kind", *[f"s{i + 1}" for i in range(n)], "shared_with"])
        w.writerows(rows)


# --- basins ---------------------------------------------------------------

@dataclass
class BasinCensus:
    attractors: list
    counts: list
    n_nonconverged: int

    @property
    def fractions(self) -> list:
        total = sum(self.counts)
        return [c / total for c in self.counts] if total else []


def basin_census(params: AgentParams, condition: InputCondition, grid,
                 cfg: AnalysisConfig = AnalysisConfig(),
                 attractors: Sequence[Attractor] = ()) -> BasinCensus:
    """Fraction of grid states settling into each attractor.

    Known ``attractors`` are matched by location; newly met ones are appended.
    Fractions are over converged grid points only.
    """
    atts = list(attractors)
    counts = [0] * len(atts)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return BasinCensus([], [], 0)
    missed = 0
    for outcome in settle_many(params, condition, grid, cfg):
        if outcome.attractor is None:
            missed += 1
            continue
        for k, att in enumerate(atts):
            if att.distance(outcome.attractor) < cfg.eps_loc:
                counts[k] += 1
                break
        else:
            atts.append(outcome.attractor)
            counts.append(1)
    keep = [k for k, c in enumerate(counts) if c > 0]
    return BasinCensus([atts[k] for k in keep], [counts[k] for k in keep], missed)


# --- transients -----------------------------------------------------------

@dataclass(frozen=True)
class TransientMatch:
    t_a: float
    t_b: float
    length: float

    @property
    def shift(self) -> float:
        return self.t_a - self.t_b


def inter_outputs(result: TrialResult, params: AgentParams) -> np.ndarray:
    """Interneuron firing rates along a recorded trial."""
    return sigmoid(result.inter_states + params.inter_bias)


def match_transients(a, b, dt: float = 0.1, window: float = 50.0,
                     max_shift: Optional[float] = None, tol: float = 0.01,
                     shifts: Optional[Iterable[int]] = None) -> list[TransientMatch]:
    """Maximal stretches where series ``a`` shifted in time equals ``b``.

    For every shift ``d`` (in samples) the stretches where
    ``max_n |a[t + d, n] - b[t, n]| < tol`` holds for at least ``window``
    time units are reported as ``(t_a, t_b, length)``, longest first.
    ``length`` counts the matched samples times ``dt``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    na, nb = len(a), len(b)
    min_len = max(1, int(np.ceil(window / dt - 1e-9)))
    if shifts is None:
        lim = na - 1 if max_shift is None else int(round(max_shift / dt))
        lo = -min(nb - 1, lim)
        hi = min(na - 1, lim)
        shifts = range(lo, hi + 1)
    found = []
    for d in shifts:
        j0 = max(0, -d)
        j1 = min(nb, na - d)
        if j1 - j0 < min_len:
            continue
        ok = np.max(np.abs(a[j0 + d:j1 + d] - b[j0:j1]), axis=1) < tol
        edges = np.diff(np.concatenate([[0], ok.view(np.int8), [0]]))
        starts = np.nonzero(edges == 1)[0]
        ends = np.nonzero(edges == -1)[0]
        for s, e in zip(starts, ends):
            if e - s >= min_len:
                jb = j0 + s
                found.append(TransientMatch((jb + d) * dt, jb * dt, (e - s) * dt))
    found.sort(key=lambda m: (-m.length, abs(m.shift), m.t_b))
    return found


def write_aligned_csv(path, a, b, match: TransientMatch, dt: float = 0.1) -> None:
    """Both series over a matched stretch, on the time axis of ``b``."""
    a = np.atleast_2d(np.asarray(a, float).T).T
    b = np.atleast_2d(np.asarray(b, float).T).T
    ia, ib = int(round(match.t_a / dt)), int(round(match.t_b / dt))
    n = int(round(match.length / dt))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_b", "t_a", *[f"a{i + 1}" for i in range(a.shape[1])],
                    *[f"b{i + 1}" for i in range(b.shape[1])]])
        for k in range(n):
            w.writerow([(ib + k) * dt, (ia + k) * dt, *a[ia + k].tolist(), *b[ib + k].tolist()])


def sensory_context(result: TrialResult, interval: tuple, active_threshold: float = 0.0) -> dict:
    """Per-ray mean, peak and fraction of samples above ``active_threshold``
    during ``interval = (t_start, t_end)``."""
    t0, t1 = interval
    t = result.times
    mask = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
    if not mask.any():
        raise ValueError("interval contains no samples")
    inp = result.inputs[mask]
    return {
        "mean": inp.mean(axis=0),
        "peak": inp.max(axis=0),
        "active_fraction": (inp > active_threshold).mean(axis=0),
    }
