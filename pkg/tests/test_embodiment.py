import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neureuse.ctrnn import decode_genotype, genome_dimension, random_genotype
from neureuse.embodiment import (
    DEG,
    BodySpec,
    PhysicsConfig,
    Task,
    TaskFamily,
    TrialSpec,
    cast_rays,
    categorization_score,
    categorization_trials,
    evaluate_task,
    pole_inputs,
    pole_ray_input,
    pole_step_reward,
    pole_trials,
    read_trajectory_csv,
    run_categorization_trial,
    run_pole_trial,
    run_trial,
    step_pole,
    trial_scores,
    write_trajectory_csv,
)

from oracles import (
    chord_distance,
    march_distance,
    ray_angles,
    reference_categorization,
    reference_object_inputs,
    reference_pole,
    reference_pole_inputs,
)


def random_params(seed, n=2):
    return decode_genotype(random_genotype(n, np.random.default_rng(seed)), n)


def still_params(n=2):
    """Agent whose motors never differ, so it never moves."""
    p = random_params(0, n)
    p.w_inter_to_motor[:] = 0.0
    return p


# --- geometry ------------------------------------------------------------

def test_ray_angles_symmetric():
    phi = BodySpec().ray_angles()
    assert len(phi) == 7
    np.testing.assert_allclose(phi, -phi[::-1], atol=1e-15)
    np.testing.assert_allclose(np.diff(phi), math.pi / 36, atol=1e-15)
    assert phi[-1] - phi[0] == pytest.approx(math.pi / 6)


def test_cast_rays_examples():
    assert np.all(cast_rays(0.0, 500.0, 100.0, Task.CATCH) == 0)
    assert np.all(cast_rays(0.0, 0.0, 400.0, Task.AVOID) == 0)
    # line surface exactly at range on the centre ray
    assert cast_rays(0.0, 0.0, 265.0, Task.AVOID)[3] == 0.0
    assert cast_rays(0.0, 0.0, 132.5, Task.AVOID)[3] == pytest.approx(5.0, abs=1e-12)
    # circle bottom at 132.5 on the centre ray
    assert cast_rays(0.0, 0.0, 147.5, Task.CATCH)[3] == pytest.approx(5.0, abs=1e-12)


def test_center_ray_is_maximal_above_agent():
    for y in (20.0, 60.0, 150.0, 260.0):
        for kind in (Task.CATCH, Task.AVOID):
            x = cast_rays(3.0, 3.0, y, kind)
            assert x[3] == x.max() > 0


def test_circle_overlapping_agent_gives_full_input():
    x = cast_rays(0.0, 5.0, 5.0, Task.CATCH)
    assert np.all(x == 10.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-60, 60), st.floats(0, 300), st.integers(0, 6))
def test_cast_rays_circle_matches_marching(dx, y, ray):
    phi = ray_angles()[ray]
    d = march_distance(0.0, dx, y, phi)
    want = 0.0 if d is None or d > 265 else 10.0 * (1 - d / 265)
    got = cast_rays(0.0, dx, y, Task.CATCH)[ray]
    # marching can miss grazing hits thinner than its step
    if d is None and got > 0:
        assert chord_distance(0.0, dx, y, phi) is not None
        return
    assert got == pytest.approx(want, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(-80, 80), st.floats(-80, 80), st.floats(-10, 320), st.booleans())
def test_cast_rays_matches_reference(ax, ox, oy, circle):
    kind = Task.CATCH if circle else Task.AVOID
    np.testing.assert_allclose(cast_rays(ax, ox, oy, kind),
                               reference_object_inputs(ax, ox, oy, circle), atol=1e-9)


def test_pole_ray_input_examples():
    phi = 5 * DEG
    assert pole_ray_input(phi, phi) == 10.0
    assert pole_ray_input(phi + DEG, phi) == pytest.approx(0.0, abs=1e-12)
    assert pole_ray_input(phi - DEG, phi) == pytest.approx(0.0, abs=1e-12)
    assert pole_ray_input(phi + 0.5 * DEG, phi) == pytest.approx(5.0, abs=1e-12)
    assert pole_ray_input(phi - 0.5 * DEG, phi) == pytest.approx(5.0, abs=1e-12)
    assert pole_ray_input(phi + 3 * DEG, phi) == 0.0


def test_pole_disappears_between_rays():
    assert np.all(pole_inputs(2.5 * DEG) == 0)
    x = pole_inputs(0.0)
    assert x[3] == 10.0 and np.count_nonzero(x) == 1


@given(st.floats(-0.4, 0.4))
def test_pole_inputs_match_reference(theta):
    np.testing.assert_allclose(pole_inputs(theta), reference_pole_inputs(theta), atol=1e-9)


# --- pole physics ----------------------------------------------------------

def test_step_pole_equilibrium():
    assert step_pole(0.0, 0.0, 0.0) == (0.0, 0.0)


def test_step_pole_hand_computed():
    th, w, a = 0.1, -0.05, 3.0
    want_w = w + 0.1 * ((9.8 / 200) * math.sin(th) - (a / 200) * math.cos(th))
    got = step_pole(th, w, a)
    assert abs(got[0] - (th + 0.1 * w)) <= 1e-12
    assert abs(got[1] - want_w) <= 1e-12


def test_pole_diverges_like_linearized_solution():
    th, w = 1e-4, 0.0
    rate = math.sqrt(9.8 / 200)
    for _ in range(200):
        th, w = step_pole(th, w, 0.0)
    want = 1e-4 * math.cosh(rate * 20.0)
    assert th > 1e-4
    assert th == pytest.approx(want, rel=0.05)


def test_rightward_acceleration_tilts_pole_left():
    _, w = step_pole(0.0, 0.0, 5.0)
    assert w < 0


# --- scores ------------------------------------------------------------------

def test_categorization_score_examples():
    assert categorization_score(0.0, Task.CATCH) == 1.0
    assert categorization_score(45.0, Task.AVOID) == 1.0
    assert categorization_score(80.0, Task.AVOID) == 1.0
    assert categorization_score(45.0, Task.CATCH) == 0.0
    assert categorization_score(-60.0, Task.CATCH) == 0.0
    assert categorization_score(22.5, Task.CATCH) == 0.5


def test_pole_reward_boundary():
    assert abs(pole_step_reward(15 * DEG)) < 1e-15
    assert pole_step_reward(0.0) == 1.0


# --- trials --------------------------------------------------------------------

def test_trial_grids():
    cat = categorization_trials()
    assert len(cat) == 16
    assert [s.task for s in cat].count(Task.CATCH) == 8
    np.testing.assert_allclose([s.offset for s in cat[:8]], np.linspace(-50, 50, 8))
    pole = pole_trials()
    assert len(pole) == 16
    mags = sorted({round(abs(s.angle) / DEG, 9) for s in pole})
    assert mags == [2.25, 4.5, 6.75, 9.0]
    assert {s.angvel for s in pole} == {-0.1, 0.1}


def test_random_offsets_in_range():
    specs = categorization_trials(rng=np.random.default_rng(4))
    assert all(-50 <= s.offset <= 50 for s in specs)


def test_categorization_trial_duration_and_timestamps():
    r = run_categorization_trial(random_params(1), TrialSpec(Task.CATCH, offset=10.0))
    t = r.times
    assert len(t) == math.ceil(275 / 0.03 - 1e-9) + 1
    np.testing.assert_allclose(np.diff(t), 0.1, atol=1e-9)
    assert r.column("obj_y")[-1] <= 1e-9
    assert 0.0 <= r.score <= 1.0


def test_still_agent_matches_reference():
    p = still_params()
    scores = trial_scores(p, categorization_trials())
    want = [reference_categorization(p, s.offset, s.task is Task.CATCH)[0]
            for s in categorization_trials()]
    np.testing.assert_allclose(scores, want, atol=1e-12)
    assert evaluate_task(p, TaskFamily.CATEGORIZATION) == pytest.approx(np.mean(want), abs=1e-12)


@pytest.mark.parametrize("seed,offset,circle", [(3, -20.0, True), (8, 35.0, False), (21, 0.0, True)])
def test_kernel_matches_reference_categorization(seed, offset, circle):
    p = random_params(seed)
    kind = Task.CATCH if circle else Task.AVOID
    r = run_categorization_trial(p, TrialSpec(kind, offset=offset), record=False)
    score, dist = reference_categorization(p, offset, circle)
    assert r.final_distance == pytest.approx(dist, rel=1e-8, abs=1e-8)
    assert r.score == pytest.approx(score, abs=1e-8)


@pytest.mark.parametrize("seed", [2, 5, 13, 34])
@pytest.mark.parametrize("angle,angvel", [(2.25, 0.1), (-9.0, -0.1), (4.5, -0.1)])
def test_kernel_matches_reference_pole(seed, angle, angvel):
    p = random_params(seed)
    r = run_pole_trial(p, TrialSpec.pole(angle, angvel), record=False)
    assert r.score == pytest.approx(reference_pole(p, angle * DEG, angvel), abs=1e-10)


def test_pole_termination_invariant():
    physics = PhysicsConfig()
    for seed in range(20):
        p = random_params(seed)
        for spec in pole_trials():
            r = run_pole_trial(p, spec, physics)
            theta = r.column("pole_theta")
            omega = r.column("pole_omega")
            # all rows but the terminal one were scored
            limit = 15 * DEG + 0.1 * np.abs(omega[:-1]).max()
            assert np.all(np.abs(theta[:-1]) <= limit)
            assert r.termination in ("completed", "pole_fell", "agent_drifted")
            assert 0.0 <= r.score <= 1.0


def test_balanced_pole_scores_one():
    # no gravity, no initial motion, no agent motion: pole stays upright
    physics = PhysicsConfig(pole_gravity=0.0)
    r = run_pole_trial(still_params(), TrialSpec.pole(0.0, 0.0), physics)
    assert r.termination == "completed"
    assert r.score == pytest.approx(1.0, abs=1e-12)


def test_immediate_drop_scores_near_zero():
    physics = PhysicsConfig(drop_angle_deg=9.01)
    r = run_pole_trial(still_params(), TrialSpec.pole(9.0, 0.1), physics)
    assert r.termination == "pole_fell"
    assert r.score < 1e-3


def test_pole_trial_rejects_large_angle():
    with pytest.raises(ValueError):
        run_pole_trial(still_params(), TrialSpec.pole(20.0, 0.0))


def test_wrong_runner_rejected():
    with pytest.raises(ValueError):
        run_categorization_trial(still_params(), TrialSpec.pole(1.0, 0.0))
    with pytest.raises(ValueError):
        run_pole_trial(still_params(), TrialSpec(Task.CATCH))


@pytest.mark.parametrize("seed", [0, 7, 19])
def test_mirror_symmetry(seed):
    p = random_params(seed)
    q = p.mirrored()
    for spec, mirror in [
        (TrialSpec(Task.CATCH, offset=17.0), TrialSpec(Task.CATCH, offset=-17.0)),
        (TrialSpec(Task.AVOID, offset=-33.0), TrialSpec(Task.AVOID, offset=33.0)),
        (TrialSpec.pole(4.5, 0.1), TrialSpec.pole(-4.5, -0.1)),
    ]:
        a = run_trial(p, spec)
        b = run_trial(q, mirror)
        assert a.score == pytest.approx(b.score, abs=1e-9)
        np.testing.assert_allclose(a.column("x_agent"), -b.column("x_agent"), atol=1e-7)
        np.testing.assert_allclose(a.inputs, b.inputs[:, ::-1], atol=1e-7)
        if spec.task is Task.POLE:
            np.testing.assert_allclose(a.column("pole_theta"), -b.column("pole_theta"), atol=1e-9)


def test_symmetric_agent_mirrors_itself():
    p = random_params(9)
    p.w_sensor_to_inter[:] = 0.5 * (p.w_sensor_to_inter + p.w_sensor_to_inter[::-1])
    p.w_inter_to_motor[:] = 0.0
    a = run_trial(p, TrialSpec(Task.CATCH, offset=12.0))
    b = run_trial(p, TrialSpec(Task.CATCH, offset=-12.0))
    np.testing.assert_allclose(a.column("x_agent"), -b.column("x_agent"), atol=1e-12)


def test_determinism():
    p = random_params(12)
    spec = TrialSpec(Task.AVOID, offset=5.0)
    a, b = run_trial(p, spec), run_trial(p, spec)
    assert a.score == b.score and np.array_equal(a.trajectory, b.trajectory)


def test_scores_in_unit_interval():
    for seed in range(10):
        p = random_params(seed)
        for fam in TaskFamily:
            f = evaluate_task(p, fam)
            assert 0.0 <= f <= 1.0


def test_random_genotype_categorization_band():
    dim = genome_dimension(2)
    fit = [evaluate_task(decode_genotype(np.random.default_rng([5, i]).uniform(-1, 1, dim), 2),
                         TaskFamily.CATEGORIZATION) for i in range(100)]
    # random agents catch and avoid about equally often by chance
    assert 0.4 <= np.mean(fit) <= 0.6


def test_velocity_motor_mode_moves_at_drive():
    p = random_params(4)
    physics = PhysicsConfig(motor_mode="velocity")
    r = run_trial(p, TrialSpec(Task.CATCH, offset=0.0), physics)
    x, v = r.column("x_agent"), r.column("v_agent")
    np.testing.assert_allclose(np.diff(x), 0.1 * v[:-1], atol=1e-9)


def test_physics_config_roundtrip():
    c = PhysicsConfig(pole_length=50.0, motor_mode="velocity")
    assert PhysicsConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        PhysicsConfig(motor_mode="teleport")


def test_trajectory_csv_roundtrip(tmp_path):
    r = run_trial(random_params(6), TrialSpec.pole(2.25, -0.1))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(r, path, {"seed": 6})
    header = path.read_text().splitlines()[0].split(",")
    assert header[:5] == ["t", "x_agent", "v_agent", "pole_theta", "pole_omega"]
    assert header[-3:] == ["s_motor_l", "s_motor_r", "accel"]
    back = read_trajectory_csv(path)
    assert back.spec == r.spec and back.termination == r.termination
    np.testing.assert_allclose(back.trajectory, r.trajectory, rtol=1e-15, atol=0)
