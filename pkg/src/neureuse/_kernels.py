"""Compiled closed-loop trial simulation.

This is the hot path of evolution: one call runs a whole trial (agent body,
object or pole, and the neural circuit) without touching Python objects. The
readable numpy steppers in :mod:`neureuse.ctrnn` and the geometry helpers in
:mod:`neureuse.embodiment` describe the same model; tests hold the two in
agreement.
"""

import math

import numpy as np
from numba import njit

TASK_CIRCLE = 0
TASK_LINE = 1
TASK_POLE = 2

REASON_COMPLETED = 0
REASON_POLE_FELL = 1
REASON_AGENT_DRIFTED = 2

# layout of the constants vector handed to ``simulate``
C_DT = 0
C_IMAX = 1
C_RAY_RANGE = 2
C_RAY_SPREAD = 3
C_OBJ_HALF = 4
C_FALL_SPEED = 5
C_START_HEIGHT = 6
C_CLIP = 7
C_GRAVITY = 8
C_POLE_LEN = 9
C_POLE_DURATION = 10
C_DROP_ANGLE = 11
C_MAX_DRIFT = 12
C_POLE_HALFWIDTH = 13
C_MOTOR_MODE = 14
N_CONSTS = 15

MOTOR_ACCELERATION = 0
MOTOR_VELOCITY = 1

N_SENS = 7


@njit(cache=True, nogil=True, error_model="numpy")
def _sig(x):
    # exp overflow for x << 0 yields inf and a clean 0.0
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True, nogil=True)
def ray_angle(r, spread):
    return -0.5 * spread + r * spread / (N_SENS - 1)


@njit(cache=True, nogil=True)
def _circle_hit(ux, uy, cx, cy, radius):
    b = ux * cx + uy * cy
    c = cx * cx + cy * cy - radius * radius
    if c <= 0.0:
        return 0.0
    disc = b * b - c
    if disc < 0.0:
        return -1.0
    t = b - math.sqrt(disc)
    if t < 0.0:
        return -1.0
    return t


@njit(cache=True, nogil=True)
def _segment_hit(ux, uy, cx, cy, half_len):
    if cy < 0.0 or uy <= 0.0:
        return -1.0
    t = cy / uy
    if abs(t * ux - cx) > half_len:
        return -1.0
    return t


@njit(cache=True, nogil=True)
def ray_circle_distance(phi, cx, cy, radius):
    """Distance along a ray from the origin to a circle; -1 when missed."""
    return _circle_hit(math.sin(phi), math.cos(phi), cx, cy, radius)


@njit(cache=True, nogil=True)
def ray_segment_distance(phi, cx, cy, half_len):
    """Distance along a ray to a horizontal segment centred at (cx, cy)."""
    return _segment_hit(math.sin(phi), math.cos(phi), cx, cy, half_len)


@njit(cache=True, nogil=True)
def distance_input(d, i_max, ray_range):
    if d < 0.0 or d > ray_range:
        return 0.0
    return i_max * (1.0 - d / ray_range)


@njit(cache=True, nogil=True)
def pole_input(theta, phi, i_max, halfwidth):
    dev = abs(theta - phi)
    if dev >= halfwidth:
        return 0.0
    return i_max * (1.0 - dev / halfwidth)


@njit(cache=True, nogil=True)
def sense(task, x_agent, obj_a, obj_b, consts, sin_phi, cos_phi, out):
    i_max = consts[C_IMAX]
    if task == TASK_POLE:
        hw = consts[C_POLE_HALFWIDTH]
        spread = consts[C_RAY_SPREAD]
        for r in range(N_SENS):
            out[r] = pole_input(obj_a, ray_angle(r, spread), i_max, hw)
        return
    half = consts[C_OBJ_HALF]
    ray_range = consts[C_RAY_RANGE]
    cx = obj_a - x_agent
    # nothing can be hit when the object lies wholly beyond range
    if cx * cx + obj_b * obj_b > (ray_range + half) * (ray_range + half):
        for r in range(N_SENS):
            out[r] = 0.0
        return
    for r in range(N_SENS):
        if task == TASK_CIRCLE:
            d = _circle_hit(sin_phi[r], cos_phi[r], cx, obj_b, half)
        else:
            d = _segment_hit(sin_phi[r], cos_phi[r], cx, obj_b, half)
        out[r] = distance_input(d, i_max, ray_range)


@njit(cache=True, nogil=True)
def simulate(phen, n, task, init_a, init_b, consts, record):
    """Run one trial.

    Args:
        phen: decoded phenotype vector (gene layout order).
        n: number of interneurons.
        task: TASK_CIRCLE, TASK_LINE or TASK_POLE.
        init_a, init_b: horizontal object offset and unused (categorization),
            or initial pole angle and angular velocity in radians (pole).
        consts: physics constants, see the ``C_*`` indices.
        record: ``(rows, 22 + n)`` array filled with the trajectory, or an
            array with zero rows to skip recording.

    Returns:
        (raw_score, final_distance, rows_written, reason)
    """
    dt = consts[C_DT]
    tau_s = phen[0]
    g_s = phen[1]
    b_s = phen[2]
    o_wsi = 3
    o_wii = o_wsi + N_SENS * n
    o_bias = o_wii + n * n
    o_tau = o_bias + n
    o_wim = o_tau + n
    o_mot = o_wim + 2 * n
    g_m = phen[o_mot]
    b_m = phen[o_mot + 1]
    tau_m = phen[o_mot + 2]

    s_sens = np.zeros(N_SENS)
    s_int = np.zeros(n)
    s_mot = np.zeros(2)
    inputs = np.zeros(N_SENS)
    o_sens = np.zeros(N_SENS)
    o_int = np.zeros(n)
    ds = np.zeros(n)
    sin_phi = np.empty(N_SENS)
    cos_phi = np.empty(N_SENS)
    for r in range(N_SENS):
        phi = ray_angle(r, consts[C_RAY_SPREAD])
        sin_phi[r] = math.sin(phi)
        cos_phi[r] = math.cos(phi)

    x = 0.0
    v = 0.0
    velocity_mode = consts[C_MOTOR_MODE] == MOTOR_VELOCITY
    if task == TASK_POLE:
        obj_a = init_a
        obj_b = init_b
        n_steps = int(round(consts[C_POLE_DURATION] / dt))
    else:
        obj_a = init_a
        obj_b = consts[C_START_HEIGHT]
        n_steps = int(math.ceil(consts[C_START_HEIGHT] / (consts[C_FALL_SPEED] * dt) - 1e-9))

    do_record = record.shape[0] > 0
    rows = 0
    total = 0.0
    reason = REASON_COMPLETED
    pole_len = consts[C_POLE_LEN]
    grav = consts[C_GRAVITY]

    k = 0
    while True:
        sense(task, x, obj_a, obj_b, consts, sin_phi, cos_phi, inputs)
        drive = g_m * (_sig(s_mot[1] + b_m) - _sig(s_mot[0] + b_m))
        if velocity_mode:
            # motors set the velocity; the base acceleration is its rate of change
            accel = (drive - v) / dt
            v = drive
        else:
            accel = drive
        if do_record and rows < record.shape[0]:
            row = record[rows]
            row[0] = k * dt
            row[1] = x
            row[2] = v
            row[3] = obj_a
            row[4] = obj_b
            for r in range(N_SENS):
                row[5 + r] = inputs[r]
                row[12 + r] = s_sens[r]
            for i in range(n):
                row[19 + i] = s_int[i]
            row[19 + n] = s_mot[0]
            row[20 + n] = s_mot[1]
            row[21 + n] = accel
            rows += 1
        if k >= n_steps or reason != REASON_COMPLETED:
            break

        # neural update, all layers read the outputs of the same instant
        for r in range(N_SENS):
            o_sens[r] = _sig(-g_s * (s_sens[r] + b_s))
        for i in range(n):
            o_int[i] = _sig(s_int[i] + phen[o_bias + i])
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += phen[o_wii + j * n + i] * o_int[j]
            for r in range(N_SENS):
                acc += phen[o_wsi + r * n + i] * o_sens[r]
            ds[i] = (-s_int[i] + acc) / phen[o_tau + i]
        for m in range(2):
            acc = 0.0
            for j in range(n):
                acc += phen[o_wim + j * 2 + m] * o_int[j]
            s_mot[m] = s_mot[m] + (dt / tau_m) * (-s_mot[m] + acc)
        for i in range(n):
            s_int[i] = s_int[i] + dt * ds[i]
        for r in range(N_SENS):
            s_sens[r] = s_sens[r] + (dt / tau_s) * (-s_sens[r] + inputs[r])

        # body and environment
        x_new = x + dt * v
        if not velocity_mode:
            v = v + dt * accel
        x = x_new
        k += 1
        if task == TASK_POLE:
            theta = obj_a
            omega = obj_b
            alpha = (grav / pole_len) * math.sin(theta) - (accel / pole_len) * math.cos(theta)
            obj_a = theta + dt * omega
            obj_b = omega + dt * alpha
            if abs(obj_a) > consts[C_DROP_ANGLE]:
                reason = REASON_POLE_FELL
            elif abs(x) > consts[C_MAX_DRIFT]:
                reason = REASON_AGENT_DRIFTED
            else:
                total += math.cos(6.0 * obj_a)
        else:
            obj_b = consts[C_START_HEIGHT] - consts[C_FALL_SPEED] * dt * k

    if task == TASK_POLE:
        return total / n_steps, 0.0, rows, reason
    dist = abs(x - obj_a)
    return 0.0, dist, rows, reason


@njit(cache=True, nogil=True)
def trial_batch(phen, n, tasks, init_a, init_b, consts, clip, clamp):
    """Scores of several trials for one agent, each from a zero network state."""
    out = np.empty(tasks.shape[0])
    empty = np.zeros((0, 22 + n))
    for t in range(tasks.shape[0]):
        raw, dist, _, _ = simulate(phen, n, tasks[t], init_a[t], init_b[t], consts, empty)
        if tasks[t] == TASK_POLE:
            out[t] = max(raw, 0.0) if clamp else raw
        else:
            d = min(dist, clip) / clip
            out[t] = 1.0 - d if tasks[t] == TASK_CIRCLE else d
    return out
