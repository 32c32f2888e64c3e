"""Point-cloud parsing, RANSAC ground removal, and DDA ray tracing."""

import struct

import numpy as np
import pytest

from dogmap.errors import NonFinite, TrailingBytes
from dogmap.measurement import (
    LABEL_FREE,
    LABEL_OCCUPIED,
    LABEL_UNKNOWN,
    PointCloud,
    parse_velodyne_bin,
    raytrace,
    segment_ground,
    serialize_velodyne_bin,
    to_evidential,
)


def _pack_points(points):
    return b"".join(struct.pack("<ffff", *p) for p in points)


class TestParse:
    def test_single_point(self):
        pc = parse_velodyne_bin(_pack_points([(1.0, 2.0, 0.5, 0.1)]))
        assert len(pc) == 1
        np.testing.assert_allclose(pc.points[0], [1.0, 2.0, 0.5, 0.1], rtol=1e-6)
        assert tuple(pc.sensor_pose) == (0.0, 0.0, 0.0)

    def test_empty(self):
        assert len(parse_velodyne_bin(b"")) == 0

    def test_trailing_bytes(self):
        with pytest.raises(TrailingBytes):
            parse_velodyne_bin(b"\x00" * 17)

    def test_non_finite(self):
        with pytest.raises(NonFinite, match="point 1"):
            parse_velodyne_bin(_pack_points([(1, 2, 3, 4), (np.nan, 0, 0, 0)]))

    def test_round_trip_byte_identical(self, rng):
        data = rng.random(64, dtype=np.float32).tobytes()
        pc = parse_velodyne_bin(data)
        assert serialize_velodyne_bin(pc) == data
        assert serialize_velodyne_bin(parse_velodyne_bin(serialize_velodyne_bin(pc))) == data


def _flat_ground(n, rng, sigma=0.0, tilt=0.0):
    xy = rng.uniform(-10, 10, size=(n, 2))
    z = np.tan(tilt) * xy[:, 0] + rng.normal(0, sigma, n) if sigma or tilt else np.zeros(n)
    return np.column_stack([xy, z, np.full(n, 0.1)])


def _box_pillar(n, rng, z_lo=0.5, z_hi=2.0):
    xy = rng.uniform(3, 5, size=(n, 2))
    z = rng.uniform(z_lo, z_hi, size=n)
    return np.column_stack([xy, z, np.full(n, 0.5)])


class TestSegmentGround:
    def test_plane_plus_pillar(self, rng):
        ground = _flat_ground(1000, rng)
        pillar = _box_pillar(200, rng)
        pc = PointCloud(points=np.vstack([ground, pillar]).astype(np.float32))
        result = segment_ground(pc, iterations=200, inlier_threshold=0.15, rng=rng)
        assert result.ground_found
        # exactly the 200 pillar points survive
        assert len(result.cloud) == 200
        assert result.ground_mask[:1000].all()
        assert not result.ground_mask[1000:].any()

    def test_all_points_on_one_plane(self, rng):
        pc = PointCloud(points=_flat_ground(500, rng).astype(np.float32))
        result = segment_ground(pc, rng=rng)
        assert result.ground_found
        assert len(result.cloud) == 0

    def test_tilted_plane_within_limit(self, rng):
        tilt = np.deg2rad(5.0)
        ground = _flat_ground(1000, rng, sigma=0.01, tilt=tilt)
        # the tilted plane reaches z ~ 0.44 at x = 5, so keep the pillar clear of it
        pillar = _box_pillar(150, rng, z_lo=1.0, z_hi=2.5)
        pc = PointCloud(points=np.vstack([ground, pillar]).astype(np.float32))
        result = segment_ground(pc, max_tilt=np.deg2rad(10.0), rng=rng)
        assert result.ground_found
        assert result.ground_mask[:1000].sum() >= 990
        assert result.ground_mask[1000:].sum() <= 1

    def test_no_ground_found_flag(self, rng):
        # A vertical sheet: every 3-point plane is rejected by the tilt test.
        n = 300
        pts = np.column_stack(
            [np.full(n, 5.0), rng.uniform(-3, 3, n), rng.uniform(0, 2, n), np.full(n, 0.5)]
        )
        pc = PointCloud(points=pts.astype(np.float32))
        result = segment_ground(pc, rng=rng)
        assert not result.ground_found
        assert len(result.cloud) == len(pc)
        assert not result.ground_mask.any()

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            segment_ground(PointCloud(points=np.zeros((0, 4))))

    def test_statistical_quality_1000_runs(self):
        # Aggregate removal rates over 1000 scans of the standard labeled
        # ground scene, one seeded stream: >=99% ground and <=1% obstacle.
        from dogmap.scene import GroundModel, SceneConfig, SensorModel, initial_state, scan

        scene = SceneConfig(
            frames=1,
            seed=0,
            static_shapes=((4.9, -3.1, 5.1, 3.1),),
            sensor=SensorModel(beam_count=200, span=1.0, max_range=20.0, range_noise_sigma=0.02),
            ground=GroundModel(enabled=True, points_per_frame=1000, radius=15.0, z_noise_sigma=0.02, tilt=0.0),
        )
        state = initial_state(scene)
        rng = np.random.default_rng(97)
        ground_removed = ground_total = 0
        obstacle_removed = obstacle_total = 0
        for _ in range(1000):
            cloud, labels = scan(state, scene, rng)
            result = segment_ground(cloud, iterations=200, inlier_threshold=0.15, rng=rng)
            ground = labels == 1
            ground_removed += int(result.ground_mask[ground].sum())
            ground_total += int(ground.sum())
            obstacle_removed += int(result.ground_mask[~ground].sum())
            obstacle_total += int((~ground).sum())
        assert ground_removed >= 0.99 * ground_total
        assert obstacle_removed <= 0.01 * obstacle_total


class TestRaytrace:
    def test_hand_derived_due_north(self, spec):
        # 5 m due north: hit 15 rows above center, 14 free cells between.
        pc = PointCloud(points=np.array([[0.0, 5.0, 1.0, 0.5]], dtype=np.float32))
        mg = raytrace(pc, spec)
        occupied = np.argwhere(mg.labels == LABEL_OCCUPIED)
        np.testing.assert_array_equal(occupied, [[49, 64]])
        free = np.argwhere(mg.labels == LABEL_FREE)
        assert len(free) == 14
        assert set(free[:, 1]) == {64}
        assert sorted(free[:, 0]) == list(range(50, 64))

    def test_empty_cloud_all_unknown(self, spec):
        mg = raytrace(PointCloud(points=np.zeros((0, 4))), spec)
        assert (mg.labels == LABEL_UNKNOWN).all()

    def test_occupied_wins_over_free(self, spec):
        # First beam's hit cell lies on the second beam's path.
        near = [0.0, 2.0, 1.0, 0.5]
        far = [0.0, 8.0, 1.0, 0.5]
        both = raytrace(PointCloud(points=np.array([near, far], dtype=np.float32)), spec)
        hit_near = spec.world_to_cell(0.0, 2.0)
        assert both.labels[hit_near] == LABEL_OCCUPIED

    def test_beam_order_irrelevant(self, spec, rng):
        pts = np.column_stack(
            [
                rng.uniform(-15, 15, 64),
                rng.uniform(-15, 15, 64),
                np.ones(64),
                np.full(64, 0.5),
            ]
        ).astype(np.float32)
        a = raytrace(PointCloud(points=pts), spec)
        b = raytrace(PointCloud(points=pts[::-1].copy()), spec)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_out_of_grid_point_clips_ray(self, spec):
        # 60 m due east exceeds the 21.35 m half-extent; the ray marks free
        # cells up to the boundary and no cell is occupied.
        pc = PointCloud(points=np.array([[60.0, 0.0, 1.0, 0.5]], dtype=np.float32))
        mg = raytrace(pc, spec)
        assert (mg.labels != LABEL_OCCUPIED).all()
        free = np.argwhere(mg.labels == LABEL_FREE)
        assert set(free[:, 0]) == {64}
        assert free[:, 1].max() == 127
        assert free[:, 1].min() == 65

    def test_heading_rotates_beams(self, spec):
        # Sensor facing north: a forward return lands north of the ego.
        pc = PointCloud(
            points=np.array([[5.0, 0.0, 1.0, 0.5]], dtype=np.float32),
            sensor_pose=(0.0, 0.0, np.pi / 2),
        )
        mg = raytrace(pc, spec)
        occupied = np.argwhere(mg.labels == LABEL_OCCUPIED)
        np.testing.assert_array_equal(occupied, [[49, 64]])

    def test_never_free_beyond_first_hit_along_beam(self, spec, rng):
        # Trace single beams and confirm every free cell lies on the segment
        # between the ego and the hit, never past it.
        for _ in range(25):
            angle = rng.uniform(0, 2 * np.pi)
            r = rng.uniform(1.0, 18.0)
            point = np.array([[r * np.cos(angle), r * np.sin(angle), 1.0, 0.5]], dtype=np.float32)
            mg = raytrace(PointCloud(points=point), spec)
            free = np.argwhere(mg.labels == LABEL_FREE)
            direction = np.array([np.cos(angle), np.sin(angle)])
            for row, col in free:
                x, y = spec.cell_center(row, col)
                along = np.dot([x, y], direction)
                assert along < r
                assert mg.labels[row, col] != LABEL_OCCUPIED


class TestToEvidential:
    def test_unknown_stays_vacuous(self, spec):
        mg = raytrace(PointCloud(points=np.zeros((0, 4))), spec)
        grid = to_evidential(mg)
        assert (grid.m_unk == 1.0).all()

    def test_label_mapping(self, spec):
        pc = PointCloud(points=np.array([[0.0, 5.0, 1.0, 0.5]], dtype=np.float32))
        mg = raytrace(pc, spec)
        grid = to_evidential(mg, m_occ_meas=0.6, m_free_meas=0.7)
        assert grid.m_occ[49, 64] == 0.6
        assert grid.m_free[60, 64] == 0.7
        assert grid.m_unk[0, 0] == 1.0
        grid.validate()

    def test_free_cell_pignistic_after_fusion(self, spec):
        from dogmap.grid import MassCell, combine, pignistic

        fused = combine(MassCell(), MassCell(0.0, 0.6))
        assert pignistic(fused) == pytest.approx(0.2)

    def test_rejects_out_of_range_masses(self, spec):
        mg = raytrace(PointCloud(points=np.zeros((0, 4))), spec)
        with pytest.raises(ValueError):
            to_evidential(mg, m_occ_meas=0.0)
