from __future__ import annotations

import math

import numpy as np
import pytest

from src.app.controller import (
    ControllerConfig,
    LocalCostView,
    carrot,
    dynamic_window,
    local_path,
    rollout,
    sample_commands,
    score,
    select_command,
)
from src.app.grid import Pose2D, Twist

from .conftest import make_world


def _world(wall_col=None, rows=slice(40, 60)):
    data = np.zeros((100, 100), dtype=np.int16)
    if wall_col is not None:
        data[rows, wall_col] = 100
    return make_world(data, resolution=0.1, origin=(-5.0, -5.0))


PATH = [(0.0, 0.0), (3.0, 0.0)]


def test_dynamic_window_is_bounded_by_acceleration_and_limits():
    cfg = ControllerConfig()
    (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(Twist(0.0, 0.0), cfg)
    assert (v_lo, v_hi) == pytest.approx((-0.025, 0.025))
    assert (w_lo, w_hi) == pytest.approx((-0.05, 0.05))
    (v_lo, v_hi), _ = dynamic_window(Twist(0.5, 0.0), cfg)
    assert v_hi == pytest.approx(0.5)
    (v_lo, v_hi), _ = dynamic_window(Twist(0.9, 0.0), cfg)
    assert v_lo == v_hi == pytest.approx(0.5)


def test_sampling_grid_spans_the_window():
    cfg = ControllerConfig()
    v, w = sample_commands(Twist(0.2, 0.0), cfg)
    assert v.size == cfg.samples_v * cfg.samples_omega
    assert v.min() == pytest.approx(0.175) and v.max() == pytest.approx(0.225)
    assert 0.0 in w


def test_rollout_integrates_unicycle_motion():
    cfg = ControllerConfig()
    straight = rollout(Twist(0.5, 0.0), Pose2D(1.0, 2.0, 0.0), cfg)
    assert straight.states.shape == (16, 3)
    assert (straight.end.x, straight.end.y) == pytest.approx((1.75, 2.0))
    spin = rollout(Twist(0.0, 1.0), Pose2D(), cfg)
    assert spin.end.theta == pytest.approx(1.5)
    assert (spin.end.x, spin.end.y) == pytest.approx((0.0, 0.0))


def test_clearance_mask_blocks_cells_near_lethal():
    cfg = ControllerConfig()
    view = LocalCostView(_world(wall_col=55), (0.0, 0.0), 2.0, cfg)
    cost, blocked = view.lookup(np.array([0.55, 0.45, 0.35, 0.25]), np.zeros(4))
    assert cost[0] == 100
    assert blocked.tolist() == [True, True, True, False]
    far_cost, far_blocked = view.lookup(np.array([40.0]), np.array([0.0]))
    assert far_cost[0] == 100 and far_blocked[0]


def test_unknown_cells_read_as_the_unknown_cost():
    data = np.full((20, 20), -1, dtype=np.int16)
    view = LocalCostView(make_world(data, resolution=0.1), (1.0, 1.0), 0.5, ControllerConfig())
    cost, blocked = view.lookup(np.array([1.0]), np.array([1.0]))
    assert cost[0] == 50 and not blocked[0]


def test_score_vetoes_trajectories_into_walls():
    cfg = ControllerConfig()
    view = LocalCostView.around(_world(wall_col=55), Pose2D(), cfg)
    into_wall = rollout(Twist(0.5, 0.0), Pose2D(), cfg)
    assert score(into_wall, PATH, (3.0, 0.0), view, cfg) is None
    clear = LocalCostView.around(_world(), Pose2D(), cfg)
    value = score(into_wall, PATH, (3.0, 0.0), clear, cfg)
    assert value == pytest.approx(0.75 + 2.25)
    with pytest.raises(ValueError):
        score(into_wall, [], (3.0, 0.0), clear, cfg)


def test_select_command_prefers_progress_along_the_path():
    cfg = ControllerConfig()
    view = LocalCostView.around(_world(), Pose2D(), cfg)
    dense = [(0.1 * k, 0.0) for k in range(31)]
    chosen = select_command(Twist(0.3, 0.0), Pose2D(), dense, (2.0, 0.0), view, cfg)
    assert chosen.v == pytest.approx(0.325)
    assert chosen.omega == 0.0


def test_select_command_returns_none_when_everything_is_vetoed():
    cfg = ControllerConfig()
    view = LocalCostView.around(_world(wall_col=55), Pose2D(), cfg)
    assert select_command(Twist(0.5, 0.0), Pose2D(), PATH, (3.0, 0.0), view, cfg) is None


def test_accepted_trajectories_never_touch_lethal_cells():
    cfg = ControllerConfig()
    world = _world(wall_col=53, rows=slice(45, 55))
    view = LocalCostView.around(world, Pose2D(), cfg)
    accepted = rejected = 0
    for current in [Twist(0.0, 0.0), Twist(-0.2, 0.3), Twist(0.2, 0.0), Twist(0.45, 0.2)]:
        v, w = sample_commands(current, cfg)
        for vi, wi in zip(v, w):
            traj = rollout(Twist(float(vi), float(wi)), Pose2D(), cfg)
            s = traj.states
            f = np.linspace(0.0, 1.0, 21)[None, :, None]
            dense = (s[:-1, None, :2] + f * (s[1:, None, :2] - s[:-1, None, :2])).reshape(-1, 2)
            hits = any(world.cost_at(x, y) == 100 for x, y in dense)
            if score(traj, PATH, (3.0, 0.0), view, cfg) is None:
                rejected += 1
            else:
                accepted += 1
                assert not hits
    assert accepted > 0 and rejected > 0


@pytest.mark.acceptance
def test_selected_commands_stay_inside_the_dynamic_window(rng):
    cfg = ControllerConfig()
    view = LocalCostView.around(_world(), Pose2D(), cfg)
    for _ in range(10_000):
        current = Twist(float(rng.uniform(-0.3, 0.5)), float(rng.uniform(-1.0, 1.0)))
        pose = Pose2D(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-math.pi, math.pi)))
        chosen = select_command(current, pose, PATH, (3.0, 0.0), view, cfg)
        (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(current, cfg)
        assert v_lo - 1e-12 <= chosen.v <= v_hi + 1e-12
        assert w_lo - 1e-12 <= chosen.omega <= w_hi + 1e-12


def test_local_path_keeps_the_lookahead_stretch():
    cfg = ControllerConfig()
    stretch = local_path(PATH, Pose2D(0.52, 0.1, 0.0), cfg, spacing=0.25)
    assert stretch[0] == pytest.approx((0.5, 0.0))
    assert carrot(stretch, (3.0, 0.0)) == pytest.approx((2.5, 0.0))
    assert local_path([], Pose2D(), cfg, 0.1) == []
    assert carrot([], (3.0, 0.0)) == (3.0, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(horizon=0.05, rollout_step=0.1)
    with pytest.raises(ValueError):
        ControllerConfig(v_min=1.0, v_max=0.5)
    assert ControllerConfig().steps == 15


def test_score_is_invariant_under_translation():
    cfg = ControllerConfig()
    data = np.zeros((100, 100), dtype=np.int16)
    data[45:55, 52:58] = 40
    here = make_world(data, resolution=0.1, origin=(-5.0, -5.0))
    there = make_world(data, resolution=0.1, origin=(-4.0, -3.0))
    pose = Pose2D(0.017, 0.033, 0.2)
    moved = Pose2D(pose.x + 1.0, pose.y + 2.0, pose.theta)
    path = [(0.0, 0.0), (1.5, 0.4), (3.0, 0.0)]
    shifted = [(x + 1.0, y + 2.0) for x, y in path]

    view = LocalCostView.around(here, pose, cfg)
    moved_view = LocalCostView.around(there, moved, cfg)
    for command in (Twist(0.3, 0.4), Twist(0.5, 0.0), Twist(0.1, -0.6)):
        a = score(rollout(command, pose, cfg), path, (3.0, 0.0), view, cfg)
        b = score(rollout(command, moved, cfg), shifted, (4.0, 2.0), moved_view, cfg)
        assert a == pytest.approx(b, rel=1e-9)

    chosen = select_command(Twist(0.3, 0.0), pose, path, (3.0, 0.0), view, cfg)
    assert select_command(Twist(0.3, 0.0), moved, shifted, (4.0, 2.0), moved_view, cfg) == chosen


def test_greedy_control_makes_progress_on_a_free_map():
    cfg = ControllerConfig()
    world = _world()
    goal = (3.0, 0.0)
    pose, current = Pose2D(), Twist(0.0, 0.0)
    distance = pose.distance_to(*goal)
    for _ in range(40):
        view = LocalCostView.around(world, pose, cfg)
        current = select_command(current, pose, PATH, goal, view, cfg)
        assert current is not None and current.v > 0
        dt = cfg.dt_control
        pose = Pose2D(
            pose.x + current.v * math.cos(pose.theta) * dt,
            pose.y + current.v * math.sin(pose.theta) * dt,
            pose.theta + current.omega * dt,
        )
        remaining = pose.distance_to(*goal)
        assert remaining < distance
        distance = remaining
    assert distance < 3.0 - 0.5
