"""Scene simulator: kinematics, scanning, ground truth, determinism."""

import dataclasses

import numpy as np
import pytest

from dogmap.errors import ConfigError
from dogmap.grid import GridSpec
from dogmap.scene import (
    AgentModel,
    EgoModel,
    GroundModel,
    SceneConfig,
    SensorModel,
    builtin_scene,
    ego_velocity_at,
    ground_truth,
    initial_state,
    scan,
    scene_from_dict,
    scene_to_dict,
    simulate_frames,
    step,
)


def _bare_scene(**kwargs):
    defaults = dict(
        frames=5,
        seed=1,
        ground=GroundModel(enabled=False),
        sensor=SensorModel(beam_count=1, span=0.1, max_range=20.0, range_noise_sigma=0.0),
    )
    defaults.update(kwargs)
    return SceneConfig(**defaults)


class TestKinematics:
    def test_single_step_displacement(self):
        cfg = _bare_scene(agents=(AgentModel(extent=(1, 1), pose=(0, 0, 0), velocity=(5, 0)),))
        state = step(initial_state(cfg), cfg)
        assert state.agent_poses[0, 0] == pytest.approx(0.5)
        assert state.agent_poses[0, 1] == 0.0

    def test_zero_velocity_fixed_point(self):
        cfg = _bare_scene(agents=(AgentModel(extent=(1, 1), pose=(2, 3, 0.5), velocity=(0, 0)),))
        state = initial_state(cfg)
        for _ in range(7):
            state = step(state, cfg)
        np.testing.assert_array_equal(state.agent_poses[0], [2, 3, 0.5])

    def test_ten_steps_exact_displacement(self):
        cfg = _bare_scene(frames=11, agents=(AgentModel(extent=(1, 1), pose=(0, 0, 0), velocity=(1, 1)),))
        state = initial_state(cfg)
        for _ in range(10):
            state = step(state, cfg)
        assert state.agent_poses[0, 0] == 1.0  # closed form, no accumulation drift
        assert state.agent_poses[0, 1] == 1.0

    def test_ego_constant_velocity(self):
        cfg = _bare_scene(ego=EgoModel(start=(0, 0, 0), velocity=(2, 0)))
        state = step(step(initial_state(cfg), cfg), cfg)
        assert state.ego_pose[0] == pytest.approx(0.4)
        np.testing.assert_array_equal(ego_velocity_at(cfg, 2), [2, 0])


class TestScan:
    def test_single_wall_single_beam(self):
        cfg = _bare_scene(
            static_shapes=((-2.0, 5.0, 2.0, 6.0),),
            ego=EgoModel(start=(0, 0, np.pi / 2), velocity=(0, 0)),
        )
        cloud, labels = scan(initial_state(cfg), cfg, np.random.default_rng(0))
        assert len(cloud) == 1
        assert labels.tolist() == [0]
        x, y, z, _ = cloud.points[0]
        assert np.hypot(x, y) == pytest.approx(5.0, abs=1e-6)
        assert z == 1.0

    def test_empty_scene_empty_cloud(self):
        cfg = _bare_scene()
        cloud, labels = scan(initial_state(cfg), cfg, np.random.default_rng(0))
        assert len(cloud) == 0
        assert labels.size == 0

    def test_range_noise_statistics(self):
        cfg = _bare_scene(
            static_shapes=((-2.0, 5.0, 2.0, 6.0),),
            ego=EgoModel(start=(0, 0, np.pi / 2), velocity=(0, 0)),
            sensor=SensorModel(beam_count=1, span=0.1, max_range=20.0, range_noise_sigma=0.05),
        )
        rng = np.random.default_rng(7)
        state = initial_state(cfg)
        ranges = np.array(
            [np.hypot(*scan(state, cfg, rng)[0].points[0][:2]) for _ in range(10_000)]
        )
        # standard error is sigma / sqrt(n) = 5e-4; allow 4 sigma
        assert abs(ranges.mean() - 5.0) < 0.002

    def test_points_lie_on_shape_boundaries(self):
        scene = builtin_scene("urban_mix")
        scene = dataclasses.replace(scene, ground=GroundModel(enabled=False))
        for state, cloud, _labels in simulate_frames(scene, frames=3):
            heading = state.ego_pose[2]
            cos_h, sin_h = np.cos(heading), np.sin(heading)
            x = state.ego_pose[0] + cos_h * cloud.points[:, 0] - sin_h * cloud.points[:, 1]
            y = state.ego_pose[1] + sin_h * cloud.points[:, 0] + cos_h * cloud.points[:, 1]
            ranges = np.hypot(
                x - state.ego_pose[0], y - state.ego_pose[1]
            )
            # every world point sits within 3 sigma of some rectangle boundary
            sigma = scene.sensor.range_noise_sigma
            ok = np.zeros(len(cloud), dtype=bool)
            shapes = [tuple(b) for b in scene.static_shapes]
            for agent, pose in zip(scene.agents, state.agent_poses):
                hx, hy = agent.extent[0] / 2, agent.extent[1] / 2
                # axis-aligned agents in this scene may have heading; transform
                ch, sh = np.cos(pose[2]), np.sin(pose[2])
                lx = ch * (x - pose[0]) + sh * (y - pose[1])
                ly = -sh * (x - pose[0]) + ch * (y - pose[1])
                dist = np.maximum(np.abs(lx) - hx, np.abs(ly) - hy)
                ok |= np.abs(dist) <= 3 * sigma + 1e-6
            for xmin, ymin, xmax, ymax in shapes:
                inside_x = np.clip(x, xmin, xmax)
                inside_y = np.clip(y, ymin, ymax)
                edge = np.minimum(
                    np.minimum(np.abs(x - xmin), np.abs(x - xmax)),
                    np.minimum(np.abs(y - ymin), np.abs(y - ymax)),
                )
                on_band = (x >= xmin - 3 * sigma) & (x <= xmax + 3 * sigma) & (y >= ymin - 3 * sigma) & (y <= ymax + 3 * sigma)
                ok |= on_band & (edge <= 3 * sigma + 1e-6)
            assert ok.all()
            assert ranges.max() <= scene.sensor.max_range + 3 * sigma

    def test_determinism_bit_identical(self):
        scene = builtin_scene("crossing_vehicle")
        a = [cloud.points.tobytes() for _, cloud, _ in simulate_frames(scene, frames=4)]
        b = [cloud.points.tobytes() for _, cloud, _ in simulate_frames(scene, frames=4)]
        assert a == b


class TestGroundTruth:
    def test_small_box_single_cell(self):
        spec = GridSpec()
        # box strictly inside cell (51, 76): x in [4.003, 4.337), y in (4.003, 4.337]
        cfg = _bare_scene(static_shapes=((4.05, 4.05, 4.15, 4.15),))
        occ, vel = ground_truth(initial_state(cfg), cfg, spec)
        rows, cols = np.where(occ)
        assert rows.tolist() == [51] and cols.tolist() == [76]
        assert vel[0][occ][0] == 0.0 and vel[1][occ][0] == 0.0

    def test_relative_velocity_of_static_world(self):
        spec = GridSpec()
        cfg = _bare_scene(
            static_shapes=((4.0, 4.0, 4.1, 4.1),),
            ego=EgoModel(start=(0, 0, 0), velocity=(0, 2)),
        )
        occ, vel = ground_truth(initial_state(cfg), cfg, spec)
        assert vel[0][occ][0] == 0.0
        assert vel[1][occ][0] == -2.0

    def test_matched_velocities_cancel(self):
        spec = GridSpec()
        cfg = _bare_scene(
            agents=(AgentModel(extent=(1, 1), pose=(5, 5, 0), velocity=(5, 0)),),
            ego=EgoModel(start=(0, 0, 0), velocity=(5, 0)),
        )
        occ, vel = ground_truth(initial_state(cfg), cfg, spec)
        assert occ.any()
        assert np.abs(vel[:, occ]).max() == 0.0

    def test_static_truth_frame_invariant_in_world(self):
        spec = GridSpec()
        cfg = _bare_scene(frames=10, static_shapes=((3.0, 3.0, 5.0, 4.0),))
        state = initial_state(cfg)
        occ0, _ = ground_truth(state, cfg, spec)
        for _ in range(5):
            state = step(state, cfg)
        occ5, _ = ground_truth(state, cfg, spec)
        np.testing.assert_array_equal(occ0, occ5)

    def test_outline_not_interior(self):
        spec = GridSpec()
        cfg = _bare_scene(static_shapes=((-3.0, -3.0, 3.0, 3.0),))
        occ, _ = ground_truth(initial_state(cfg), cfg, spec)
        # the center of a 6 m box is interior, not boundary material
        assert not occ[spec.world_to_cell(0.0, 0.0)]
        assert occ[spec.world_to_cell(3.0, 0.0)]


class TestConfig:
    def test_round_trip(self):
        scene = builtin_scene("urban_mix")
        again = scene_from_dict(scene_to_dict(scene))
        assert again == scene

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            scene_from_dict({"frames": 5, "bogus": 1})

    def test_bad_agent_rejected(self):
        with pytest.raises(ConfigError):
            scene_from_dict({"agents": [{"extent": [0.0, 1.0], "pose": [0, 0, 0], "velocity": [0, 0]}]})

    def test_waypoints_must_cover_frames(self):
        with pytest.raises(ConfigError, match="waypoints"):
            SceneConfig(frames=5, ego=EgoModel(mode="waypoints", waypoints=((0, 0, 0),)))

    def test_builtin_scenes_load(self):
        for name in ("static_corridor", "crossing_vehicle", "urban_mix"):
            scene = builtin_scene(name)
            assert scene.name == name
