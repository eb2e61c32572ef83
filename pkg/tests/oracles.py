"""Independent straight-line reference implementations used as test oracles."""

import math


def sig(x):
    if x < -700:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def reference_step(s_sens, s_int, s_mot, inputs, p, dt):
    """Loop-by-loop transcription of the three neuron equations."""
    n = p.n_inter
    o = [sig(-p.sensory_gain * (s_sens[k] + p.sensory_bias)) for k in range(7)]
    r = [sig(s_int[j] + p.inter_bias[j]) for j in range(n)]
    new_sens = [s_sens[k] + dt / p.sensory_tau * (-s_sens[k] + inputs[k]) for k in range(7)]
    new_int = []
    for i in range(n):
        total = -s_int[i]
        for j in range(n):
            total += p.w_inter[j, i] * r[j]
        for k in range(7):
            total += p.w_sensor_to_inter[k, i] * o[k]
        new_int.append(s_int[i] + dt / p.inter_tau[i] * total)
    new_mot = []
    for m in range(2):
        total = -s_mot[m]
        for j in range(n):
            total += p.w_inter_to_motor[j, m] * r[j]
        new_mot.append(s_mot[m] + dt / p.motor_tau * total)
    return new_sens, new_int, new_mot


def ray_angles():
    half = math.pi / 12
    return [-half + k * (2 * half) / 6 for k in range(7)]


def march_distance(agent_x, obj_x, obj_y, phi, r=15.0, limit=300.0):
    """Nearest circle hit along a ray by marching then bisection (slow)."""
    ux, uy = math.sin(phi), math.cos(phi)

    def inside(t):
        return (agent_x + t * ux - obj_x) ** 2 + (t * uy - obj_y) ** 2 <= r * r

    if inside(0.0):
        return 0.0
    t, step = 0.0, 0.05
    while t <= limit:
        if inside(t + step):
            lo, hi = t, t + step
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if inside(mid) else (mid, hi)
            return hi
        t += step
    return None


def chord_distance(agent_x, obj_x, obj_y, phi, r=15.0):
    """Nearest circle hit from the foot of the perpendicular and half-chord."""
    ux, uy = math.sin(phi), math.cos(phi)
    cx, cy = obj_x - agent_x, obj_y
    if math.hypot(cx, cy) <= r:
        return 0.0
    along = cx * ux + cy * uy
    perp = abs(cx * uy - cy * ux)
    if perp > r or along < 0:
        return None
    return along - math.sqrt(r * r - perp * perp)


def segment_distance(agent_x, obj_x, obj_y, phi, r=15.0):
    ux, uy = math.sin(phi), math.cos(phi)
    if obj_y < 0 or uy <= 0:
        return None
    t = obj_y / uy
    return t if abs(agent_x + t * ux - obj_x) <= r else None


def reference_object_inputs(agent_x, obj_x, obj_y, circle, i_max=10.0, rng=265.0):
    out = []
    for phi in ray_angles():
        f = chord_distance if circle else segment_distance
        d = f(agent_x, obj_x, obj_y, phi)
        out.append(0.0 if d is None or d > rng else i_max * (1 - d / rng))
    return out


def reference_pole_inputs(theta, i_max=10.0, halfwidth=math.pi / 180):
    return [max(0.0, i_max * (1 - abs(theta - phi) / halfwidth)) for phi in ray_angles()]


def reference_categorization(p, offset, circle, steps=None, start=275.0, speed=0.3, dt=0.1):
    """Straight-line categorization trial; returns (score, final distance)."""
    n = p.n_inter
    s_sens, s_int, s_mot = [0.0] * 7, [0.0] * n, [0.0] * 2
    x = v = 0.0
    total_steps = math.ceil(start / (speed * dt) - 1e-9)
    if steps is not None:
        total_steps = min(steps, total_steps)
    y = start
    for k in range(total_steps):
        inputs = reference_object_inputs(x, offset, y, circle)
        a = p.motor_gain * (sig(s_mot[1] + p.motor_bias) - sig(s_mot[0] + p.motor_bias))
        s_sens, s_int, s_mot = reference_step(s_sens, s_int, s_mot, inputs, p, dt)
        x, v = x + dt * v, v + dt * a
        y = start - speed * dt * (k + 1)
    dist = abs(x - offset)
    d = min(dist, 45.0) / 45.0
    return (1 - d if circle else d), dist


def reference_pole(p, theta0, omega0, g=9.8, L=200.0, duration=500.0, dt=0.1):
    n = p.n_inter
    s_sens, s_int, s_mot = [0.0] * 7, [0.0] * n, [0.0] * 2
    x = v = 0.0
    th, w = theta0, omega0
    steps = round(duration / dt)
    total = 0.0
    for _ in range(steps):
        inputs = reference_pole_inputs(th)
        a = p.motor_gain * (sig(s_mot[1] + p.motor_bias) - sig(s_mot[0] + p.motor_bias))
        s_sens, s_int, s_mot = reference_step(s_sens, s_int, s_mot, inputs, p, dt)
        x, v = x + dt * v, v + dt * a
        th, w = th + dt * w, w + dt * ((g / L) * math.sin(th) - (a / L) * math.cos(th))
        if abs(th) > 15 * math.pi / 180 or abs(x) > 45:
            break
        total += math.cos(6 * th)
    return max(0.0, total / steps)


def brute_force_attractors(w, bias, tau, drive, step, span=15.0, dt=0.05,
                           t_max=1000.0, speed_tol=1e-7, eps=0.05, merge=1e-3):
    """Dense-grid integration of tau ds/dt = -s + W^T sig(s+b) + I.

    Every grid state is integrated with RK4. Every 25 time units states that
    share a ``merge``-sized cell are collapsed to one representative.
    Returns ``(fixed, cycles)``: converged end points clustered within
    ``eps``, and one sampled orbit (about two periods long) per distinct
    cycle among the states still moving at ``t_max``.
    """
    import numpy as np

    w = np.asarray(w, float)
    n = w.shape[0]
    axis = np.arange(-span, span + step / 2, step)
    s = np.stack([g.ravel() for g in np.meshgrid(*([axis] * n), indexing="ij")], axis=1)

    def field(x):
        return (-x + (1.0 / (1.0 + np.exp(-(x + bias)))) @ w + drive) / tau

    def rk4(x):
        k1 = field(x)
        k2 = field(x + 0.5 * dt * k1)
        k3 = field(x + 0.5 * dt * k2)
        k4 = field(x + dt * k3)
        return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    ends = []
    k = 0
    merge_every = int(round(25.0 / dt))
    while len(s) and k * dt < t_max:
        s = rk4(s)
        k += 1
        if k % 20 == 0:
            still = np.max(np.abs(field(s)), axis=1) < speed_tol
            if still.any():
                ends.append(s[still])
                s = s[~still]
        if k % merge_every == 0 and len(s):
            _, first = np.unique(np.round(s / merge), axis=0, return_index=True)
            s = s[np.sort(first)]
    fixed = []
    for p in (np.vstack(ends) if ends else np.zeros((0, n))):
        if all(np.max(np.abs(p - q)) >= eps for q in fixed):
            fixed.append(p)

    # follow each moving representative and group those sharing an orbit
    cycles = []
    if len(s):
        path = [s]
        for _ in range(int(round(400.0 / dt))):
            path.append(rk4(path[-1]))
        path = np.stack(path, axis=1)  # (states, time, n)
        for i in range(len(s)):
            orbit = path[i]
            if any(np.min(np.max(np.abs(c - orbit[-1]), axis=1)) < eps for c in cycles):
                continue
            cycles.append(orbit)
    return fixed, cycles


def min_cart_drift(theta0_deg, omega0, a_max=20.0, horizon=60.0, theta_max_deg=15.0,
                   g=9.8, length=200.0, dt=0.1):
    """Least possible peak cart excursion that keeps the pole up for ``horizon``.

    Linear program over every bounded acceleration sequence, using the
    small-angle Euler model x' = v, v' = a, theta' = w, w' = (g theta - a)/L.
    Returns ``None`` if no sequence keeps |theta| under ``theta_max_deg``.
    """
    import numpy as np
    from scipy.optimize import linprog

    k_steps = int(round(horizon / dt))
    a = np.array([[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, g / length * dt, 1]])
    b = np.array([0, dt, 0, -dt / length])
    z0 = np.array([0.0, 0.0, np.radians(theta0_deg), omega0])
    # response of every state to each control, built one step at a time
    free = z0.copy()
    gain = np.zeros((4, k_steps))
    rows, rhs = [], []
    th_max = np.radians(theta_max_deg)
    for k in range(k_steps):
        gain = a @ gain
        gain[:, k] = b
        free = a @ free
        for sign in (1.0, -1.0):
            rows.append(np.append(sign * gain[0], -1.0))
            rhs.append(-sign * free[0])
            rows.append(np.append(sign * gain[2], 0.0))
            rhs.append(th_max - sign * free[2])
    cost = np.zeros(k_steps + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(-a_max, a_max)] * k_steps + [(0, None)], method="highs")
    return float(res.fun) if res.status == 0 else None


def max_hold_time(theta0_deg, omega0, max_drift=45.0, limit=60.0, resolution=0.1, **kw):
    """Longest horizon over which some control keeps the pole up and the cart
    within ``max_drift``, found by bisection on :func:`min_cart_drift`."""
    lo, hi = 0.0, limit
    while hi - lo > resolution:
        mid = round(0.5 * (lo + hi), 3)
        d = min_cart_drift(theta0_deg, omega0, horizon=mid, **kw)
        if d is not None and d <= max_drift:
            lo = mid
        else:
            hi = mid
    return lo
