"""Agent body, ray sensing, object and pole physics, trials and task fitness.

Geometry: the agent sits at height 0 and moves only horizontally. Seven rays
leave its centre, spread symmetrically about the vertical over ``pi/6``;
ray 1 is the leftmost. Angles are measured from the vertical and are positive
to the right. Falling objects start ``start_height`` above the agent and fall
at constant speed; the pole is hinged at the agent's centre.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .ctrnn import DT, N_SENSORS, AgentParams

DEG = math.pi / 180.0


class Task(str, Enum):
    CATCH = "catch"  # circle
    AVOID = "avoid"  # line
    POLE = "pole"


class TaskFamily(str, Enum):
    CATEGORIZATION = "categorization"
    POLE = "pole"


_TASK_CODE = {Task.CATCH: K.TASK_CIRCLE, Task.AVOID: K.TASK_LINE, Task.POLE: K.TASK_POLE}
_MOTOR_MODES = {"acceleration": K.MOTOR_ACCELERATION, "velocity": K.MOTOR_VELOCITY}
_REASONS = {
    K.REASON_COMPLETED: "completed",
    K.REASON_POLE_FELL: "pole_fell",
    K.REASON_AGENT_DRIFTED: "agent_drifted",
}


@dataclass(frozen=True)
class BodySpec:
    diameter: float = 30.0
    n_rays: int = N_SENSORS
    ray_spread: float = math.pi / 6
    ray_range: float = 265.0

    def ray_angles(self) -> np.ndarray:
        """Ray directions (radians from vertical), left to right."""
        return np.linspace(-0.5 * self.ray_spread, 0.5 * self.ray_spread, self.n_rays)


@dataclass(frozen=True)
class PhysicsConfig:
    """Environment constants shared by all trials.

    ``pole_gravity`` and ``pole_length`` are in the agent's length units.
    """

    dt: float = DT
    i_max: float = 10.0
    object_size: float = 30.0
    fall_speed: float = 0.3
    start_height: float = 275.0
    clip_distance: float = 45.0
    pole_gravity: float = 9.8
    pole_length: float = 200.0
    pole_duration: float = 500.0
    drop_angle_deg: float = 15.0
    max_drift: float = 45.0
    pole_ray_halfwidth_deg: float = 1.0
    clamp_pole_score: bool = True
    motor_mode: str = "acceleration"
    body: BodySpec = field(default_factory=BodySpec)

    def __post_init__(self):
        if self.motor_mode not in _MOTOR_MODES:
            raise ValueError(f"unknown motor_mode {self.motor_mode!r}")
        if self.dt <= 0 or self.pole_length <= 0 or self.fall_speed <= 0:
            raise ValueError("dt, pole_length and fall_speed must be positive")

    def kernel_constants(self) -> np.ndarray:
        c = np.zeros(K.N_CONSTS)
        c[K.C_DT] = self.dt
        c[K.C_IMAX] = self.i_max
        c[K.C_RAY_RANGE] = self.body.ray_range
        c[K.C_RAY_SPREAD] = self.body.ray_spread
        c[K.C_OBJ_HALF] = 0.5 * self.object_size
        c[K.C_FALL_SPEED] = self.fall_speed
        c[K.C_START_HEIGHT] = self.start_height
        c[K.C_CLIP] = self.clip_distance
        c[K.C_GRAVITY] = self.pole_gravity
        c[K.C_POLE_LEN] = self.pole_length
        c[K.C_POLE_DURATION] = self.pole_duration
        c[K.C_DROP_ANGLE] = self.drop_angle_deg * DEG
        c[K.C_MAX_DRIFT] = self.max_drift
        c[K.C_POLE_HALFWIDTH] = self.pole_ray_halfwidth_deg * DEG
        c[K.C_MOTOR_MODE] = _MOTOR_MODES[self.motor_mode]
        return c

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsConfig":
        d = dict(d)
        body = d.pop("body", None)
        return cls(body=BodySpec(**body) if body else BodySpec(), **d)


@dataclass(frozen=True)
class TrialSpec:
    """Initial conditions of one trial.

    For CATCH/AVOID ``offset`` is the object's horizontal offset from the
    agent. For POLE ``angle`` and ``angvel`` are in radians and radians/s.
    """

    task: Task
    offset: float = 0.0
    angle: float = 0.0
    angvel: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))

    @classmethod
    def pole(cls, angle_deg: float, angvel: float) -> "TrialSpec":
        return cls(Task.POLE, angle=angle_deg * DEG, angvel=angvel)


@dataclass
class TrialResult:
    spec: TrialSpec
    score: float
    termination: str
    trajectory: Optional[np.ndarray] = None  # rows of TRAJECTORY columns
    final_distance: Optional[float] = None
    n_inter: int = 0

    def columns(self) -> list[str]:
        return trajectory_columns(self.spec.task, self.n_inter)

    def column(self, name: str) -> np.ndarray:
        return self.trajectory[:, self.columns().index(name)]

    @property
    def times(self) -> np.ndarray:
        return self.trajectory[:, 0]

    @property
    def inputs(self) -> np.ndarray:
        return self.trajectory[:, 5:12]

    @property
    def inter_states(self) -> np.ndarray:
        return self.trajectory[:, 19:19 + self.n_inter]


def trajectory_columns(task: Task, n_inter: int) -> list[str]:
    pose = ["pole_theta", "pole_omega"] if Task(task) is Task.POLE else ["obj_x", "obj_y"]
    return (
        ["t", "x_agent", "v_agent"] + pose
        + [f"I{k}" for k in range(1, 8)]
        + [f"s_sensor{k}" for k in range(1, 8)]
        + [f"s_inter{i}" for i in range(1, n_inter + 1)]
        + ["s_motor_l", "s_motor_r", "accel"]
    )


# --- sensing -------------------------------------------------------------

def cast_rays(agent_x: float, object_x: float, object_y: float, kind: Task,
              physics: PhysicsConfig = PhysicsConfig()) -> np.ndarray:
    """Ray inputs for a circle (CATCH) or horizontal line (AVOID) object.

    Each ray reports ``i_max * (1 - d / range)`` where ``d`` is the distance
    from the agent centre to the nearest hit, and 0 when nothing is hit
    within range.
    """
    kind = Task(kind)
    radius = 0.5 * physics.object_size
    rng = physics.body.ray_range
    cx, cy = object_x - agent_x, object_y
    out = np.zeros(physics.body.n_rays)
    for r, phi in enumerate(physics.body.ray_angles()):
        ux, uy = math.sin(phi), math.cos(phi)
        d = None
        if kind is Task.CATCH:
            if cx * cx + cy * cy <= radius * radius:
                d = 0.0
            else:
                b = ux * cx + uy * cy
                disc = b * b - (cx * cx + cy * cy - radius * radius)
                if disc >= 0 and b - math.sqrt(disc) >= 0:
                    d = b - math.sqrt(disc)
        elif kind is Task.AVOID:
            if cy >= 0 and uy > 0:
                t = cy / uy
                if abs(t * ux - cx) <= radius:
                    d = t
        else:
            raise ValueError("cast_rays handles falling objects only")
        if d is not None and d <= rng:
            out[r] = physics.i_max * (1.0 - d / rng)
    return out


def pole_ray_input(pole_angle: float, ray_angle: float, i_max: float = 10.0,
                   halfwidth: float = DEG) -> float:
    """Triangular response of one ray to the pole, peaking when aligned."""
    dev = abs(pole_angle - ray_angle)
    if dev >= halfwidth:
        return 0.0
    return i_max * (1.0 - dev / halfwidth)


def pole_inputs(pole_angle: float, physics: PhysicsConfig = PhysicsConfig()) -> np.ndarray:
    hw = physics.pole_ray_halfwidth_deg * DEG
    return np.array([pole_ray_input(pole_angle, phi, physics.i_max, hw)
                     for phi in physics.body.ray_angles()])


def step_pole(theta: float, omega: float, accel: float,
              physics: PhysicsConfig = PhysicsConfig()) -> tuple[float, float]:
    """Euler step of a rigid pole on an accelerating base.

    ``theta'' = (g/L) sin(theta) - (a/L) cos(theta)``; accelerating to the
    right pushes the pole to the left.
    """
    g, L, dt = physics.pole_gravity, physics.pole_length, physics.dt
    alpha = (g / L) * math.sin(theta) - (accel / L) * math.cos(theta)
    return theta + dt * omega, omega + dt * alpha


# --- scores ----------------------------------------------------------------

def categorization_score(distance: float, kind: Task, clip: float = 45.0) -> float:
    """Trial score from the final horizontal distance to the object."""
    d = min(abs(distance), clip) / clip
    return 1.0 - d if Task(kind) is Task.CATCH else d


def pole_step_reward(theta: float) -> float:
    return math.cos(6.0 * theta)


# --- trials --------------------------------------------------------------

def _run(params: AgentParams, spec: TrialSpec, physics: PhysicsConfig,
         record: bool) -> tuple[float, float, np.ndarray, str]:
    n = params.n_inter
    consts = physics.kernel_constants()
    if spec.task is Task.POLE:
        a, b = spec.angle, spec.angvel
        rows = int(round(physics.pole_duration / physics.dt)) + 1
    else:
        a, b = spec.offset, 0.0
        rows = int(math.ceil(physics.start_height / (physics.fall_speed * physics.dt) - 1e-9)) + 1
    buf = np.zeros((rows if record else 0, 22 + n))
    raw, dist, used, reason = K.simulate(
        params.to_vector(), n, _TASK_CODE[spec.task], float(a), float(b), consts, buf)
    return raw, dist, buf[:used], _REASONS[reason]


def run_categorization_trial(params: AgentParams, spec: TrialSpec,
                             physics: PhysicsConfig = PhysicsConfig(),
                             record: bool = True) -> TrialResult:
    """Drop a circle or a line and score where the agent ends up.

    The trial ends when the object reaches the agent's height. Circles score
    ``1 - d`` and lines ``d``, with ``d`` the clipped, normalized final
    horizontal distance.
    """
    if spec.task not in (Task.CATCH, Task.AVOID):
        raise ValueError(f"not a categorization trial: {spec.task}")
    _, dist, traj, reason = _run(params, spec, physics, record)
    score = categorization_score(dist, spec.task, physics.clip_distance)
    return TrialResult(spec, score, reason, traj if record else None, dist, params.n_inter)


def run_pole_trial(params: AgentParams, spec: TrialSpec,
                   physics: PhysicsConfig = PhysicsConfig(),
                   record: bool = True) -> TrialResult:
    """Balance the pole for ``pole_duration`` seconds.

    The per-step reward ``cos(6 theta)`` is summed while the pole stays within
    the drop angle and the agent within ``max_drift`` of its start, then
    divided by the full step count.
    """
    if spec.task is not Task.POLE:
        raise ValueError(f"not a pole trial: {spec.task}")
    if abs(spec.angle) > physics.drop_angle_deg * DEG:
        raise ValueError("initial pole angle beyond the drop angle")
    raw, _, traj, reason = _run(params, spec, physics, record)
    score = max(raw, 0.0) if physics.clamp_pole_score else raw
    return TrialResult(spec, score, reason, traj if record else None, None, params.n_inter)


def run_trial(params: AgentParams, spec: TrialSpec,
              physics: PhysicsConfig = PhysicsConfig(), record: bool = True) -> TrialResult:
    if spec.task is Task.POLE:
        return run_pole_trial(params, spec, physics, record)
    return run_categorization_trial(params, spec, physics, record)


def categorization_trials(n_per_kind: int = 8, span: float = 50.0,
                          rng: Optional[np.random.Generator] = None) -> list[TrialSpec]:
    """Circle then line trials, offsets evenly spaced over ``[-span, span]``.

    With ``rng`` the offsets are drawn uniformly instead.
    """
    specs = []
    for kind in (Task.CATCH, Task.AVOID):
        if rng is None:
            offsets = np.linspace(-span, span, n_per_kind)
        else:
            offsets = rng.uniform(-span, span, n_per_kind)
        specs += [TrialSpec(kind, offset=float(o)) for o in offsets]
    return specs


def pole_trials(max_angle_deg: float = 9.0, n_angles: int = 4,
                angvels: Sequence[float] = (-0.1, 0.1)) -> list[TrialSpec]:
    """Evenly spaced angle magnitudes, both sides, each angular velocity."""
    mags = max_angle_deg * np.arange(1, n_angles + 1) / n_angles
    return [TrialSpec.pole(sign * m, w) for m in mags for sign in (-1.0, 1.0) for w in angvels]


def default_trials(family: TaskFamily) -> list[TrialSpec]:
    return pole_trials() if TaskFamily(family) is TaskFamily.POLE else categorization_trials()


def _as_arrays(specs: Sequence[TrialSpec]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tasks = np.array([_TASK_CODE[s.task] for s in specs], dtype=np.int64)
    a = np.array([s.angle if s.task is Task.POLE else s.offset for s in specs], dtype=float)
    b = np.array([s.angvel if s.task is Task.POLE else 0.0 for s in specs], dtype=float)
    return tasks, a, b


def trial_scores(params: AgentParams, specs: Sequence[TrialSpec],
                 physics: PhysicsConfig = PhysicsConfig()) -> np.ndarray:
    """Per-trial scores without recording trajectories."""
    tasks, a, b = _as_arrays(specs)
    return K.trial_batch(params.to_vector(), params.n_inter, tasks, a, b,
                         physics.kernel_constants(), physics.clip_distance,
                         physics.clamp_pole_score)


def evaluate_task(params: AgentParams, family: TaskFamily,
                  physics: PhysicsConfig = PhysicsConfig(),
                  specs: Optional[Sequence[TrialSpec]] = None) -> float:
    """Task fitness in [0, 1]: mean score over the trial grid."""
    if specs is None:
        specs = default_trials(family)
    return float(np.mean(trial_scores(params, specs, physics)))


# --- export --------------------------------------------------------------

def write_trajectory_csv(result: TrialResult, path, metadata: Optional[dict] = None) -> None:
    """Write the trajectory as CSV plus a JSON sidecar with trial metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(result.columns())
        for row in result.trajectory:
            w.writerow([repr(float(v)) for v in row])
    meta = {
        "task": result.spec.task.value,
        "offset": result.spec.offset,
        "angle": result.spec.angle,
        "angvel": result.spec.angvel,
        "score": result.score,
        "termination": result.termination,
        "final_distance": result.final_distance,
        "n_inter": result.n_inter,
        "rows": int(result.trajectory.shape[0]),
    }
    meta.update(metadata or {})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_trajectory_csv(path) -> TrialResult:
    """Load a trajectory written by :func:`write_trajectory_csv`."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    spec = TrialSpec(Task(meta["task"]), meta["offset"], meta["angle"], meta["angvel"])
    return TrialResult(spec, meta["score"], meta["termination"], data,
                       meta["final_distance"], meta["n_inter"])
