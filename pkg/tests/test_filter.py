"""Grid particle filter: per-operation oracles and loop invariants."""

import numpy as np
import pytest

from dogmap.config import PipelineConfig
from dogmap.errors import DegenerateWeights, EmptySequence, SpecMismatch
from dogmap.filter import (
    CellStatsGrid,
    DogmaFilter,
    FilterConfig,
    ParticleSet,
    birth_particles,
    build_dogma,
    cell_stats,
    init_particles,
    mahalanobis_gate,
    mahalanobis_tau,
    normalize_weights,
    particle_cells,
    predict_particles,
    resample,
    run_filter,
    update_occupancy,
)
from dogmap.grid import GridSpec, vacuous_grid
from dogmap.pipeline import run_synthetic
from dogmap.scene import builtin_scene


def _single_particle_set(x, y, vx=0.0, vy=0.0, w=1.0):
    return ParticleSet(
        x=np.array([x], dtype=float),
        y=np.array([y], dtype=float),
        vx=np.array([vx], dtype=float),
        vy=np.array([vy], dtype=float),
        w=np.array([w], dtype=float),
    )


def _set_from(rows):
    arr = np.array(rows, dtype=float)
    return ParticleSet(x=arr[:, 0], y=arr[:, 1], vx=arr[:, 2], vy=arr[:, 3], w=arr[:, 4])


class TestInit:
    def test_count_and_bounds(self, spec, rng):
        ps = init_particles(spec, 10_000, sigma_v=4.0, rng=rng)
        assert len(ps) == 10_000
        half = spec.side_length / 2
        assert np.abs(ps.x).max() <= half and np.abs(ps.y).max() <= half
        assert (ps.w == 0.01).all()

    def test_velocity_clt_bound(self, spec, rng):
        ps = init_particles(spec, 10_000, sigma_v=4.0, rng=rng)
        bound = 3 * 4.0 / np.sqrt(10_000)
        assert abs(ps.vx.mean()) < bound
        assert abs(ps.vy.mean()) < bound

    def test_positions_cover_grid(self, spec, rng):
        ps = init_particles(spec, 20_000, sigma_v=1.0, rng=rng)
        ci = particle_cells(ps, spec)
        assert (ci >= 0).all()
        assert np.unique(ci).size > 10_000  # spread over most cells


class TestPredict:
    def test_noiseless_shift(self, spec, rng):
        ps = _single_particle_set(0.0, 0.0, vx=1.0)
        out = predict_particles(ps, 0.1, q_pos=0.0, q_vel=0.0, p_survive=1.0, rng=rng, spec=spec)
        assert out.x[0] == pytest.approx(0.1)
        assert out.y[0] == 0.0

    def test_zero_velocity_stationary(self, spec, rng):
        ps = _single_particle_set(1.0, 2.0)
        out = predict_particles(ps, 0.1, 0.0, 0.0, 1.0, rng, spec)
        assert (out.x[0], out.y[0]) == (1.0, 2.0)

    def test_survival_scales_total_weight(self, spec, rng):
        ps = init_particles(spec, 1000, sigma_v=0.1, rng=rng)
        out = predict_particles(ps, 0.1, 0.0, 0.0, 0.99, rng, spec)
        inside = particle_cells(out, spec) >= 0
        assert inside.all()
        assert out.w.sum() == pytest.approx(0.99 * ps.w.sum())

    def test_out_of_grid_weight_zeroed(self, spec, rng):
        ps = _single_particle_set(21.0, 0.0, vx=50.0, w=0.5)
        out = predict_particles(ps, 0.1, 0.0, 0.0, 1.0, rng, spec)
        assert out.w[0] == 0.0


class TestUpdate:
    def test_hand_derived_rescale(self, spec):
        # Sum of weights 0.5 in one cell, measurement {O:0.6}, alpha=1:
        # posterior m_occ = 0.8, weights scaled by 1.6.
        x, y = spec.cell_center(40, 40)
        ps = _set_from([[x, y, 0, 0, 0.3], [x, y, 0, 0, 0.2]])
        meas = vacuous_grid(spec)
        meas.m_occ[40, 40] = 0.6
        out, posterior = update_occupancy(ps, meas, vacuous_grid(spec), alpha=1.0)
        assert posterior.m_occ[40, 40] == pytest.approx(0.8)
        np.testing.assert_allclose(out.w, [0.48, 0.32])

    def test_vacuous_measurement_preserves_prediction(self, spec):
        x, y = spec.cell_center(10, 10)
        ps = _set_from([[x, y, 0, 0, 0.25], [x, y, 0, 0, 0.25]])
        out, posterior = update_occupancy(ps, vacuous_grid(spec), vacuous_grid(spec), alpha=1.0)
        assert posterior.m_occ[10, 10] == pytest.approx(0.5)
        np.testing.assert_array_equal(out.w, ps.w)

    def test_cell_without_particles_keeps_measurement(self, spec):
        ps = _single_particle_set(0.0, 0.0, w=0.0)
        meas = vacuous_grid(spec)
        meas.m_occ[5, 5] = 0.6
        _, posterior = update_occupancy(ps, meas, vacuous_grid(spec), alpha=1.0)
        assert posterior.m_occ[5, 5] == pytest.approx(0.6)

    def test_weight_cap_at_one(self, spec):
        x, y = spec.cell_center(40, 40)
        ps = _set_from([[x, y, 0, 0, 1.5]])
        meas = vacuous_grid(spec)
        out, posterior = update_occupancy(ps, meas, vacuous_grid(spec), alpha=1.0)
        assert posterior.m_occ[40, 40] == pytest.approx(1.0)  # min(1, 1.5)
        assert out.w[0] == pytest.approx(1.0)  # rescaled so the cell sum matches

    def test_spec_mismatch(self, spec):
        other = vacuous_grid(GridSpec(cells_per_side=64))
        ps = _single_particle_set(0, 0)
        with pytest.raises(SpecMismatch):
            update_occupancy(ps, vacuous_grid(spec), other, 0.9)


class TestNormalize:
    def test_continuation_of_update_example(self, spec):
        x, y = spec.cell_center(40, 40)
        ps = _set_from([[x, y, 0, 0, 0.3], [x, y, 0, 0, 0.2]])
        meas = vacuous_grid(spec)
        meas.m_occ[40, 40] = 0.6
        out, posterior = update_occupancy(ps, meas, vacuous_grid(spec), alpha=1.0)
        audited = normalize_weights(out, posterior)
        ci = particle_cells(audited, spec)
        total = audited.w[ci == 40 * 128 + 40].sum()
        assert total == pytest.approx(0.8, abs=1e-9)

    def test_exact_case_untouched(self, spec):
        x, y = spec.cell_center(12, 12)
        ps = _set_from([[x, y, 0, 0, 0.3]])
        posterior = vacuous_grid(spec)
        posterior.m_occ[12, 12] = 0.3
        out = normalize_weights(ps, posterior)
        assert out.w[0] == 0.3

    def test_all_zero_weights_degenerate(self, spec):
        ps = _single_particle_set(0, 0, w=0.0)
        with pytest.raises(DegenerateWeights):
            normalize_weights(ps, vacuous_grid(spec))


class TestBirth:
    def test_zero_births_noop(self, spec, rng):
        ps = _single_particle_set(0, 0, w=0.5)
        out = birth_particles(ps, vacuous_grid(spec), 0, 2.0, rng)
        assert len(out) == 1

    def test_births_land_in_single_occupied_cell(self, spec, rng):
        posterior = vacuous_grid(spec)
        posterior.m_occ[33, 77] = 0.9
        ps = _single_particle_set(0, 0, w=0.1)
        pool = birth_particles(ps, posterior, 64, 2.0, rng)
        assert len(pool) == 65
        ci = particle_cells(
            ParticleSet(pool.x[1:], pool.y[1:], pool.vx[1:], pool.vy[1:], pool.w[1:]), spec
        )
        assert (ci == 33 * 128 + 77).all()
        # birth weight: 0.1 * total mass / n_birth
        assert pool.w[1:] == pytest.approx(0.1 * 0.9 / 64)

    def test_uniform_posterior_chi_squared(self, small_spec, rng):
        from scipy.stats import chi2

        posterior = vacuous_grid(small_spec)
        posterior.m_occ[:] = 0.5
        ps = _single_particle_set(0, 0, w=0.1)
        n = 100_000
        pool = birth_particles(ps, posterior, n, 2.0, rng)
        ci = particle_cells(
            ParticleSet(pool.x[1:], pool.y[1:], pool.vx[1:], pool.vy[1:], pool.w[1:]), small_spec
        )
        counts = np.bincount(ci, minlength=256)
        expected = n / 256
        stat = ((counts - expected) ** 2 / expected).sum()
        assert stat < chi2.ppf(0.99, df=255)

    def test_birth_weight_factor_follows_mass(self, spec, rng):
        posterior = vacuous_grid(spec)
        posterior.m_occ[1, 1] = 0.25
        posterior.m_occ[2, 2] = 0.75
        ps = _single_particle_set(0, 0, w=0.1)
        pool = birth_particles(ps, posterior, 10, 2.0, rng, birth_weight_factor=0.1)
        assert pool.w[1:] == pytest.approx(0.1 * 1.0 / 10)


class TestResample:
    def test_hand_traced_counts(self):
        pool = _set_from([[0, 0, 0, 0, 0.75], [1, 1, 0, 0, 0.25]])
        out = resample(pool, 4, offset=0.5)
        assert (out.x == 0).sum() == 3
        assert (out.x == 1).sum() == 1
        assert out.w == pytest.approx(np.full(4, 0.25))

    def test_uniform_weights_fixed_point(self, rng):
        pool = _set_from([[i, 0, 0, 0, 0.1] for i in range(8)])
        out = resample(pool, 8, offset=0.25)
        np.testing.assert_array_equal(np.sort(out.x), np.arange(8))

    def test_zero_weight_never_selected(self):
        pool = _set_from([[0, 0, 0, 0, 0.0], [1, 0, 0, 0, 0.5], [2, 0, 0, 0, 0.0], [3, 0, 0, 0, 0.5]])
        out = resample(pool, 64, offset=0.0)
        assert set(out.x) <= {1.0, 3.0}

    def test_degenerate_pool(self):
        pool = _set_from([[0, 0, 0, 0, 0.0]])
        with pytest.raises(DegenerateWeights):
            resample(pool, 4, offset=0.5)

    def test_count_restored(self, rng):
        pool = _set_from([[i, 0, 0, 0, rng.random()] for i in range(100)])
        out = resample(pool, 37, rng=rng)
        assert len(out) == 37


class TestCellStats:
    def test_identical_velocities_zero_covariance(self, spec):
        x, y = spec.cell_center(8, 8)
        ps = _set_from([[x, y, 3, 0, 0.5], [x, y, 3, 0, 0.5]])
        stats = cell_stats(ps, spec)
        assert stats.valid[8, 8]
        assert stats.mean_vx[8, 8] == pytest.approx(3.0)
        assert stats.mean_vy[8, 8] == 0.0
        assert stats.cov_xx[8, 8] == pytest.approx(0.0, abs=1e-12)

    def test_hand_weighted_covariance(self, spec):
        x, y = spec.cell_center(8, 8)
        ps = _set_from([[x, y, 1, 0, 0.5], [x, y, -1, 0, 0.5]])
        stats = cell_stats(ps, spec)
        assert stats.mean_vx[8, 8] == pytest.approx(0.0)
        assert stats.cov_xx[8, 8] == pytest.approx(1.0)
        assert stats.cov_yy[8, 8] == pytest.approx(0.0, abs=1e-12)
        assert stats.cov_xy[8, 8] == pytest.approx(0.0, abs=1e-12)

    def test_single_particle_invalid(self, spec):
        ps = _single_particle_set(0.5, 0.5, vx=9.0, w=1.0)
        stats = cell_stats(ps, spec)
        assert not stats.valid.any()
        assert stats.mean_vx.max() == 0.0

    def test_ego_velocity_subtraction(self, spec):
        x, y = spec.cell_center(8, 8)
        ps = _set_from([[x, y, 3, 1, 0.5], [x, y, 3, 1, 0.5]])
        stats = cell_stats(ps, spec, ego_velocity=(3.0, 0.0))
        assert stats.mean_vx[8, 8] == pytest.approx(0.0)
        assert stats.mean_vy[8, 8] == pytest.approx(1.0)


def _stats_for(v, P, count=5):
    shape = (4, 4)
    stats = CellStatsGrid(
        mean_vx=np.zeros(shape),
        mean_vy=np.zeros(shape),
        cov_xx=np.zeros(shape),
        cov_xy=np.zeros(shape),
        cov_yy=np.zeros(shape),
        count=np.zeros(shape, dtype=np.int64),
        weight=np.zeros(shape),
        m_occ=np.zeros(shape),
        valid=np.zeros(shape, dtype=bool),
    )
    stats.mean_vx[1, 1], stats.mean_vy[1, 1] = v
    stats.cov_xx[1, 1], stats.cov_yy[1, 1] = P[0][0], P[1][1]
    stats.cov_xy[1, 1] = P[0][1]
    stats.count[1, 1] = count
    stats.valid[1, 1] = True
    return stats


class TestMahalanobisGate:
    def test_zero_velocity_static(self):
        stats = _stats_for((0.0, 0.0), [[1.0, 0.0], [0.0, 1.0]])
        assert not mahalanobis_gate(stats, 5.991, 0.0).any()

    def test_unit_covariance_fast_cell_dynamic(self):
        stats = _stats_for((3.0, 0.0), [[1.0, 0.0], [0.0, 1.0]])
        assert mahalanobis_tau(stats, 0.0)[1, 1] == pytest.approx(9.0)
        assert mahalanobis_gate(stats, 5.991, 0.0)[1, 1]

    def test_regularized_zero_covariance(self):
        stats = _stats_for((0.1, 0.0), [[0.0, 0.0], [0.0, 0.0]])
        assert mahalanobis_tau(stats, 0.01)[1, 1] == pytest.approx(1.0)
        assert not mahalanobis_gate(stats, 5.991, 0.01)[1, 1]

    def test_invalid_cells_never_dynamic(self):
        stats = _stats_for((9.0, 9.0), [[0.0, 0.0], [0.0, 0.0]])
        stats.valid[1, 1] = False
        assert not mahalanobis_gate(stats, 5.991, 0.01).any()


class TestBuildDogma:
    def test_channel_layout_and_gating(self, spec):
        posterior = vacuous_grid(spec)
        posterior.m_occ[2, 2] = 0.8
        posterior.m_occ[3, 3] = 0.8
        posterior.m_occ[4, 4] = 0.05  # below the occupancy gate
        stats = cell_stats(_single_particle_set(0, 0, w=0.0), spec)
        stats.mean_vx[2, 2] = 20.0
        stats.mean_vx[3, 3] = 30.0  # clamps to 1
        stats.mean_vx[4, 4] = 10.0
        mask = np.zeros(spec.shape, dtype=bool)
        mask[2, 2] = mask[3, 3] = mask[4, 4] = True
        frame = build_dogma(posterior, stats, mask, v_max=20.0, m_occ_min=0.1, mode="dst")
        assert frame.channels.shape == (4, 128, 128)
        assert frame.channels[2, 2, 2] == 1.0
        assert frame.channels[2, 3, 3] == 1.0  # clamped
        assert frame.channels[2, 4, 4] == 0.0  # failed the mass gate
        prob = build_dogma(posterior, stats, mask, 20.0, 0.1, "prob")
        assert prob.channels.shape == (3, 128, 128)
        np.testing.assert_allclose(prob.channels[0], posterior.pignistic())

    def test_masked_static_velocities_zero(self, spec):
        posterior = vacuous_grid(spec)
        posterior.m_occ[:] = 0.9
        stats = cell_stats(_single_particle_set(0, 0, w=0.0), spec)
        stats.mean_vx[:] = 7.0
        mask = np.zeros(spec.shape, dtype=bool)
        frame = build_dogma(posterior, stats, mask, 20.0, 0.1, "dst")
        assert np.abs(frame.velocity()).max() == 0.0

    def test_channel_ranges(self, spec):
        posterior = vacuous_grid(spec)
        stats = cell_stats(_single_particle_set(0, 0, w=0.0), spec)
        frame = build_dogma(posterior, stats, np.zeros(spec.shape, bool), 20.0, 0.1, "dst")
        assert frame.channels[0].min() >= 0 and frame.channels[0].max() <= 1
        assert frame.channels[2:].min() >= -1 and frame.channels[2:].max() <= 1


class TestRunFilter:
    def test_empty_sequence(self):
        with pytest.raises(EmptySequence):
            run_filter([], np.zeros((0, 3)), FilterConfig())

    def test_count_invariant_and_weight_sums(self, small_spec):
        cfg = FilterConfig(particle_count=2000, sigma_v=2.0)
        rng = np.random.default_rng(5)
        frames = []
        for k in range(6):
            meas = vacuous_grid(small_spec, frame_index=k)
            occupied = rng.integers(0, 16, size=(12, 2))
            meas.m_occ[occupied[:, 0], occupied[:, 1]] = 0.6
            frames.append(meas)
        steps = run_filter(frames, np.zeros((6, 3)), cfg, seed=9, dt=0.1)
        for st in steps:
            assert len(st.particles) == 2000
            ci = particle_cells(st.particles, small_spec)
            sums = np.bincount(ci[ci >= 0], weights=st.particles.w[ci >= 0], minlength=256)
            assert sums.max() <= 1.0 + 1e-9
            # post-resample weights are uniform shares of the pool mass
            assert np.unique(st.particles.w).size == 1

    def test_bit_reproducible(self, small_spec):
        cfg = FilterConfig(particle_count=500, sigma_v=2.0)
        meas = vacuous_grid(small_spec)
        meas.m_occ[4, 4] = 0.6
        runs = []
        for _ in range(2):
            steps = run_filter([meas, meas, meas], np.zeros((3, 3)), cfg, seed=3, dt=0.1)
            runs.append(
                b"".join(st.particles.x.tobytes() + st.particles.w.tobytes() + st.dogma.channels.tobytes() for st in steps)
            )
        assert runs[0] == runs[1]

    def test_per_cell_weight_normalization_invariant(self, small_spec):
        cfg = FilterConfig(particle_count=3000, sigma_v=2.0)
        rng = np.random.default_rng(11)
        frames = []
        for k in range(5):
            meas = vacuous_grid(small_spec, frame_index=k)
            cells = rng.integers(0, 16, size=(10, 2))
            meas.m_occ[cells[:, 0], cells[:, 1]] = 0.6
            frames.append(meas)
        flt = DogmaFilter(small_spec, cfg, seed=2, dt=0.1)
        for meas in frames:
            step = flt.step(meas)
            # audit invariant holds for the pre-resample population; re-derive
            # it here from the posterior: every cell's mass is at most 1
            assert step.posterior.m_occ.max() <= 1.0 + 1e-12
            step.posterior.validate()

    def test_covariances_psd_after_regularization(self, small_spec):
        cfg = FilterConfig(particle_count=3000, sigma_v=3.0)
        meas = vacuous_grid(small_spec)
        meas.m_occ[6:10, 6:10] = 0.6
        steps = run_filter([meas] * 4, np.zeros((4, 3)), cfg, seed=8, dt=0.1)
        for st in steps:
            eps = cfg.epsilon_reg
            a = st.stats.cov_xx + eps
            b = st.stats.cov_yy + eps
            c = st.stats.cov_xy
            assert (a > 0).all() and (b > 0).all()
            assert (a * b - c * c >= -1e-9).all()

    def test_mode_only_changes_packaging(self, small_spec):
        meas = vacuous_grid(small_spec)
        meas.m_occ[4, 4] = 0.6
        meas.m_free[10, 10] = 0.6
        frames = [meas] * 3
        poses = np.zeros((3, 3))
        cfg_d = FilterConfig(particle_count=800, mode="dst")
        cfg_p = FilterConfig(particle_count=800, mode="prob")
        steps_d = run_filter(frames, poses, cfg_d, seed=4)
        steps_p = run_filter(frames, poses, cfg_p, seed=4)
        for sd, sp in zip(steps_d, steps_p):
            pig = sd.dogma.channels[0] + 0.5 * (1.0 - sd.dogma.channels[0] - sd.dogma.channels[1])
            np.testing.assert_allclose(sp.dogma.channels[0], pig, atol=1e-12)
            np.testing.assert_array_equal(sp.dogma.channels[1:], sd.dogma.channels[2:])


@pytest.mark.xfail(
    strict=True,
    reason=(
        "After a single frame the per-cell populations are resampled copies of "
        "one or two prior particles, so their sample covariance collapses and "
        "the velocity gate fires on most observed cells.  The broad-prior "
        "expectation (<5% dynamic) would require per-cell statistics taken "
        "before resampling, which the filter loop order places afterwards."
    ),
)
def test_single_frame_mostly_gated_static():
    cfg = PipelineConfig()
    run = run_synthetic(builtin_scene("crossing_vehicle"), cfg, frames=1)
    step = run.steps[0]
    occupied = step.posterior.m_occ >= cfg.filter.m_occ_min
    dynamic = step.dynamic_mask & occupied
    assert dynamic.sum() < 0.05 * occupied.sum()
