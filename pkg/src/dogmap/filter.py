"""Grid particle filter for per-cell velocity estimation.

A fixed-size population of weighted particles lives in the world frame.
Each iteration: propagate with process noise and a survival factor, fuse
the particle-predicted occupancy with the measurement grid under
Dempster's rule, rescale per-cell weights to match the posterior occupied
mass, inject a fixed quota of birth particles into occupied space, and
resample back to the fixed population size with a systematic
(low-variance) resampler.  Per-cell weighted velocity statistics feed a
Mahalanobis gate that separates genuinely moving cells from velocity
noise, and the gated velocities plus posterior masses are packed into
dynamic occupancy (DOGMa) frames.

Velocity channels are ego-relative (the static world moves at
-ego_velocity in them); the gate operates on the same ego-relative means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import accumulate_weights, combine_masses, systematic_resample, velocity_moments
from .errors import DegenerateWeights, EmptySequence, SpecMismatch, TotalConflict
from .grid import CONFLICT_LIMIT, EvidentialGrid, GridSpec, vacuous_grid

_WEIGHT_MATCH_TOL = 1e-9

MODE_PROBABILISTIC = "prob"
MODE_DST = "dst"


@dataclass
class ParticleSet:
    """Flat arrays of particle state: world position, world velocity, weight."""

    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("y", "vx", "vy", "w"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"particle array {name} has mismatched length")

    def __len__(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.x.copy(), self.y.copy(), self.vx.copy(), self.vy.copy(), self.w.copy())


@dataclass
class CellStatsGrid:
    """Per-cell weighted velocity statistics (ego-relative means).

    ``m_occ`` is the cell's occupied mass (from the posterior grid when one
    is supplied, otherwise the raw per-cell weight sum); ``weight`` is
    always the weight sum of the particles the statistics were computed
    from.
    """

    mean_vx: np.ndarray
    mean_vy: np.ndarray
    cov_xx: np.ndarray
    cov_xy: np.ndarray
    cov_yy: np.ndarray
    count: np.ndarray
    weight: np.ndarray
    m_occ: np.ndarray
    valid: np.ndarray


@dataclass
class DogmaFrame:
    """Stacked occupancy + normalized-velocity channels.

    ``prob`` mode: [betP_occ, vx_norm, vy_norm]; ``dst`` mode:
    [m_occ, m_free, vx_norm, vy_norm].  Velocity channels are clamped to
    [-1, 1] and exactly zero in cells failing the dynamic or occupancy
    gates.
    """

    spec: GridSpec
    channels: np.ndarray
    mode: str
    frame_index: int = 0
    timestamp: float = 0.0

    def occupancy(self) -> np.ndarray:
        """Comparison channel: occupancy probability (pignistic in dst mode)."""
        if self.mode == MODE_PROBABILISTIC:
            return self.channels[0]
        return self.channels[0] + 0.5 * (1.0 - self.channels[0] - self.channels[1])

    def velocity(self) -> np.ndarray:
        return self.channels[-2:]


@dataclass(frozen=True)
class FilterConfig:
    """Constants of the filter loop; every invented value is adjustable here."""

    particle_count: int = 20_000
    sigma_v: float = 2.0
    initial_weight: float = 0.01
    p_survive: float = 0.99
    q_pos: float = 0.05
    q_vel: float = 0.1
    birth_count: int | None = None  # default: particle_count // 10
    birth_weight_factor: float = 0.01
    birth_placement: str = "occupancy"  # or "uniform"
    alpha: float = 0.9
    tau_threshold: float = 5.991  # chi-squared 95% quantile, 2 dof
    epsilon_reg: float = 0.01
    m_occ_min: float = 0.1
    v_max: float = 20.0
    mode: str = MODE_DST

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if not 0.0 <= self.p_survive <= 1.0:
            raise ValueError("p_survive must be in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.sigma_v <= 0:
            raise ValueError("sigma_v must be positive")
        if self.birth_placement not in ("occupancy", "uniform"):
            raise ValueError("birth_placement must be 'occupancy' or 'uniform'")
        if self.mode not in (MODE_PROBABILISTIC, MODE_DST):
            raise ValueError(f"mode must be '{MODE_PROBABILISTIC}' or '{MODE_DST}'")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")

    @property
    def n_birth(self) -> int:
        return self.particle_count // 10 if self.birth_count is None else self.birth_count


def particle_cells(ps: ParticleSet, spec: GridSpec, ego_pose=(0.0, 0.0)) -> np.ndarray:
    """Flat cell index of each particle; -1 for particles outside the grid."""
    row, col = spec.world_to_cell(ps.x, ps.y, ego_pose[0], ego_pose[1])
    n = spec.cells_per_side
    inside = (row >= 0) & (row < n) & (col >= 0) & (col < n)
    return np.where(inside, row * n + col, -1)


def init_particles(
    spec: GridSpec,
    count: int,
    sigma_v: float,
    rng: np.random.Generator,
    ego_pose=(0.0, 0.0),
    initial_weight: float = 0.01,
) -> ParticleSet:
    """Uniform positions over the grid extent, N(0, sigma_v^2) velocities."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if sigma_v <= 0:
        raise ValueError("sigma_v must be positive")
    half = spec.side_length / 2.0
    pos = rng.uniform(-half, half, size=(count, 2))
    vel = rng.normal(0.0, sigma_v, size=(count, 2))
    return ParticleSet(
        x=ego_pose[0] + pos[:, 0],
        y=ego_pose[1] + pos[:, 1],
        vx=vel[:, 0],
        vy=vel[:, 1],
        w=np.full(count, initial_weight, dtype=np.float64),
    )


def predict_particles(
    ps: ParticleSet,
    dt: float,
    q_pos: float,
    q_vel: float,
    p_survive: float,
    rng: np.random.Generator,
    spec: GridSpec,
    ego_pose=(0.0, 0.0),
) -> ParticleSet:
    """Constant-velocity propagation with additive noise and survival decay.

    Particles that leave the grid get weight zero; their slots are refilled
    through birth and resampling.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    pos_noise = rng.normal(0.0, q_pos, size=(len(ps), 2)) if q_pos > 0 else np.zeros((len(ps), 2))
    vel_noise = rng.normal(0.0, q_vel, size=(len(ps), 2)) if q_vel > 0 else np.zeros((len(ps), 2))
    x = ps.x + ps.vx * dt + pos_noise[:, 0]
    y = ps.y + ps.vy * dt + pos_noise[:, 1]
    vx = ps.vx + vel_noise[:, 0]
    vy = ps.vy + vel_noise[:, 1]
    w = ps.w * p_survive
    out = ParticleSet(x=x, y=y, vx=vx, vy=vy, w=w)
    ci = particle_cells(out, spec, ego_pose)
    out.w = np.where(ci >= 0, out.w, 0.0)
    return out


def update_occupancy(
    ps: ParticleSet,
    meas: EvidentialGrid,
    prior: EvidentialGrid,
    alpha: float,
    ego_pose=(0.0, 0.0),
):
    """Dempster update of the occupancy grid from particles and measurement.

    The particle-predicted cell mass is min(1, sum of weights in the cell);
    the predicted cell {O: m_pred, unk: 1 - m_pred} is discounted by
    ``alpha`` and combined with the measurement cell.  Weights in each cell
    are rescaled by a common factor so their sum equals the posterior
    occupied mass; cells with zero predicted mass are left untouched
    (birth handles fresh evidence there).
    """
    if meas.spec != prior.spec:
        raise SpecMismatch(f"measurement spec {meas.spec} != prior spec {prior.spec}")
    spec = meas.spec
    n_flat = spec.cells_per_side**2
    ci = particle_cells(ps, spec, ego_pose)
    sums = accumulate_weights(ci, ps.w, n_flat)
    m_pred = np.minimum(sums, 1.0)
    aged = alpha * m_pred
    post_occ, post_free, conflict = combine_masses(
        aged.reshape(spec.shape), np.zeros(spec.shape), meas.m_occ, meas.m_free
    )
    bad = conflict >= CONFLICT_LIMIT
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise TotalConflict(f"total conflict at cell ({row}, {col})")

    factor = np.ones(n_flat, dtype=np.float64)
    has_mass = sums > 0.0
    factor[has_mass] = post_occ.ravel()[has_mass] / sums[has_mass]
    out = ps.copy()
    inside = ci >= 0
    out.w[inside] = out.w[inside] * factor[ci[inside]]
    posterior = EvidentialGrid(
        spec=spec,
        m_occ=post_occ,
        m_free=post_free,
        frame_index=meas.frame_index,
        timestamp=meas.timestamp,
    )
    return out, posterior


def normalize_weights(ps: ParticleSet, posterior: EvidentialGrid, ego_pose=(0.0, 0.0)) -> ParticleSet:
    """Audit/enforce the per-cell weight normalization.

    After the occupancy update, the weights in every populated cell must
    sum to that cell's posterior occupied mass; this recomputes the sums,
    enforces the equality exactly, and rejects an all-zero population.
    """
    if not np.any(ps.w > 0):
        raise DegenerateWeights("all particle weights are zero")
    spec = posterior.spec
    n_flat = spec.cells_per_side**2
    ci = particle_cells(ps, spec, ego_pose)
    sums = accumulate_weights(ci, ps.w, n_flat)
    target = posterior.m_occ.ravel()
    has_mass = sums > 0.0
    drift = np.abs(sums[has_mass] - target[has_mass])
    if drift.size and drift.max() > _WEIGHT_MATCH_TOL:
        factor = np.ones(n_flat, dtype=np.float64)
        factor[has_mass] = target[has_mass] / sums[has_mass]
        out = ps.copy()
        inside = ci >= 0
        out.w[inside] = out.w[inside] * factor[ci[inside]]
        return out
    return ps


def birth_particles(
    ps: ParticleSet,
    posterior: EvidentialGrid,
    n_birth: int,
    sigma_v: float,
    rng: np.random.Generator,
    birth_weight_factor: float = 0.1,
    placement: str = "occupancy",
    ego_pose=(0.0, 0.0),
) -> ParticleSet:
    """Append newly initialized particles to the pool before resampling.

    Positions are drawn per cell proportional to the posterior occupied
    mass (or uniformly), then uniformly within the chosen cell; velocities
    are zero-mean normal.  Each birth particle carries weight
    ``birth_weight_factor * total_occupied_mass / n_birth``.
    """
    if n_birth < 0:
        raise ValueError("n_birth must be nonnegative")
    if n_birth == 0:
        return ps.copy()
    spec = posterior.spec
    n = spec.cells_per_side
    total_mass = float(posterior.m_occ.sum())
    if placement == "occupancy" and total_mass > 0.0:
        probs = posterior.m_occ.ravel() / total_mass
    else:
        probs = np.full(n * n, 1.0 / (n * n))
    cells = rng.choice(n * n, size=n_birth, p=probs)
    offsets = rng.random((n_birth, 2))
    vel = rng.normal(0.0, sigma_v, size=(n_birth, 2))
    rows = cells // n
    cols = cells % n
    half = n / 2.0
    s = spec.cell_size
    bx = ego_pose[0] + (cols - half + offsets[:, 0]) * s
    by = ego_pose[1] + (half - rows - offsets[:, 1]) * s
    bw = np.full(n_birth, birth_weight_factor * total_mass / n_birth, dtype=np.float64)
    return ParticleSet(
        x=np.concatenate([ps.x, bx]),
        y=np.concatenate([ps.y, by]),
        vx=np.concatenate([ps.vx, vel[:, 0]]),
        vy=np.concatenate([ps.vy, vel[:, 1]]),
        w=np.concatenate([ps.w, bw]),
    )


def resample(
    pool: ParticleSet,
    count: int,
    rng: np.random.Generator | None = None,
    offset: float | None = None,
) -> ParticleSet:
    """Systematic resampling of exactly ``count`` particles from the pool.

    Output weights are all equal to (total pool weight) / count, restoring
    the fixed population size.  ``offset`` in [0, 1) pins the sampler
    start; by default it is drawn from ``rng``.
    """
    total = float(np.sum(pool.w))
    if not total > 0.0:
        raise DegenerateWeights("pool weight is zero, nothing to resample")
    if offset is None:
        if rng is None:
            raise ValueError("either rng or offset must be given")
        offset = float(rng.random())
    if not 0.0 <= offset < 1.0:
        raise ValueError(f"offset must be in [0, 1), got {offset}")
    idx = systematic_resample(pool.w, count, offset)
    return ParticleSet(
        x=pool.x[idx],
        y=pool.y[idx],
        vx=pool.vx[idx],
        vy=pool.vy[idx],
        w=np.full(count, total / count, dtype=np.float64),
    )


def cell_stats(
    ps: ParticleSet,
    spec: GridSpec,
    ego_velocity=(0.0, 0.0),
    ego_pose=(0.0, 0.0),
    posterior: EvidentialGrid | None = None,
) -> CellStatsGrid:
    """Weighted per-cell mean velocity (ego-relative) and covariance.

    Cells with fewer than two particles (or zero weight) are stat-invalid
    and report zeros.  The covariance is the weighted population form,
    which is translation-invariant, so the ego subtraction only shifts the
    means.  When the posterior grid is given its occupied mass is carried
    through on the result.
    """
    if posterior is not None and posterior.spec != spec:
        raise SpecMismatch(f"posterior spec {posterior.spec} != {spec}")
    n = spec.cells_per_side
    n_flat = n * n
    ci = particle_cells(ps, spec, ego_pose)
    sw, swx, swy, sxx, syy, sxy, count = velocity_moments(ci, ps.w, ps.vx, ps.vy, n_flat)
    valid = (count >= 2) & (sw > 0.0)
    safe = np.where(valid, sw, 1.0)
    mx = np.where(valid, swx / safe, 0.0)
    my = np.where(valid, swy / safe, 0.0)
    cov_xx = np.where(valid, np.maximum(sxx / safe - mx * mx, 0.0), 0.0)
    cov_yy = np.where(valid, np.maximum(syy / safe - my * my, 0.0), 0.0)
    cov_xy = np.where(valid, sxy / safe - mx * my, 0.0)
    shape = spec.shape
    return CellStatsGrid(
        mean_vx=(np.where(valid, mx - ego_velocity[0], 0.0)).reshape(shape),
        mean_vy=(np.where(valid, my - ego_velocity[1], 0.0)).reshape(shape),
        cov_xx=cov_xx.reshape(shape),
        cov_xy=cov_xy.reshape(shape),
        cov_yy=cov_yy.reshape(shape),
        count=count.reshape(shape),
        weight=sw.reshape(shape),
        m_occ=posterior.m_occ.copy() if posterior is not None else sw.reshape(shape).copy(),
        valid=valid.reshape(shape),
    )


def mahalanobis_tau(stats: CellStatsGrid, epsilon_reg: float = 0.01) -> np.ndarray:
    """Squared Mahalanobis norm of the cell velocity: v^T (P + eps I)^-1 v."""
    a = stats.cov_xx + epsilon_reg
    b = stats.cov_yy + epsilon_reg
    c = stats.cov_xy
    det = a * b - c * c
    vx = stats.mean_vx
    vy = stats.mean_vy
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = (vx * vx * b - 2.0 * vx * vy * c + vy * vy * a) / det
    return np.where(stats.valid & (det > 0), tau, 0.0)


def mahalanobis_gate(
    stats: CellStatsGrid,
    tau_threshold: float = 5.991,
    epsilon_reg: float = 0.01,
) -> np.ndarray:
    """Dynamic-cell mask: stat-valid cells whose velocity exceeds the gate."""
    return stats.valid & (mahalanobis_tau(stats, epsilon_reg) > tau_threshold)


def build_dogma(
    posterior: EvidentialGrid,
    stats: CellStatsGrid,
    dynamic_mask: np.ndarray,
    v_max: float = 20.0,
    m_occ_min: float = 0.1,
    mode: str = MODE_DST,
) -> DogmaFrame:
    """Pack posterior occupancy and gated, normalized velocities into a frame."""
    if mode not in (MODE_PROBABILISTIC, MODE_DST):
        raise ValueError(f"mode must be '{MODE_PROBABILISTIC}' or '{MODE_DST}'")
    keep = dynamic_mask & (posterior.m_occ >= m_occ_min)
    vx = np.where(keep, np.clip(stats.mean_vx / v_max, -1.0, 1.0), 0.0)
    vy = np.where(keep, np.clip(stats.mean_vy / v_max, -1.0, 1.0), 0.0)
    if mode == MODE_PROBABILISTIC:
        channels = np.stack([posterior.pignistic(), vx, vy])
    else:
        channels = np.stack([posterior.m_occ, posterior.m_free, vx, vy])
    return DogmaFrame(
        spec=posterior.spec,
        channels=channels,
        mode=mode,
        frame_index=posterior.frame_index,
        timestamp=posterior.timestamp,
    )


@dataclass
class FilterStep:
    """Everything produced by one filter iteration."""

    frame_index: int
    dogma: DogmaFrame
    posterior: EvidentialGrid
    particles: ParticleSet
    stats: CellStatsGrid
    dynamic_mask: np.ndarray
    ego_pose: np.ndarray
    ego_velocity: np.ndarray


class DogmaFilter:
    """Stateful filter loop over a sequence of measurement grids."""

    def __init__(self, spec: GridSpec, cfg: FilterConfig, seed: int = 0, dt: float = 0.1):
        self.spec = spec
        self.cfg = cfg
        self.dt = dt
        self.rng = np.random.default_rng(seed)
        self.particles: ParticleSet | None = None
        self.posterior: EvidentialGrid | None = None

    def step(self, meas: EvidentialGrid, ego_pose=(0.0, 0.0, 0.0), ego_velocity=(0.0, 0.0)) -> FilterStep:
        if meas.spec != self.spec:
            raise SpecMismatch(f"measurement spec {meas.spec} != filter spec {self.spec}")
        cfg = self.cfg
        ego_xy = (float(ego_pose[0]), float(ego_pose[1]))
        if self.particles is None:
            self.particles = init_particles(
                self.spec, cfg.particle_count, cfg.sigma_v, self.rng, ego_xy, cfg.initial_weight
            )
        if self.posterior is None:
            prior = vacuous_grid(self.spec, frame_index=meas.frame_index, timestamp=meas.timestamp)
        else:
            prior = self.posterior

        predicted = predict_particles(
            self.particles, self.dt, cfg.q_pos, cfg.q_vel, cfg.p_survive, self.rng, self.spec, ego_xy
        )
        updated, posterior = update_occupancy(predicted, meas, prior, cfg.alpha, ego_xy)
        updated = normalize_weights(updated, posterior, ego_xy)
        pool = birth_particles(
            updated,
            posterior,
            cfg.n_birth,
            cfg.sigma_v,
            self.rng,
            cfg.birth_weight_factor,
            cfg.birth_placement,
            ego_xy,
        )
        particles = resample(pool, cfg.particle_count, rng=self.rng)
        stats = cell_stats(particles, self.spec, ego_velocity, ego_xy, posterior)
        mask = mahalanobis_gate(stats, cfg.tau_threshold, cfg.epsilon_reg)
        dogma = build_dogma(posterior, stats, mask, cfg.v_max, cfg.m_occ_min, cfg.mode)

        self.particles = particles
        self.posterior = posterior
        return FilterStep(
            frame_index=meas.frame_index,
            dogma=dogma,
            posterior=posterior,
            particles=particles,
            stats=stats,
            dynamic_mask=mask,
            ego_pose=np.asarray(ego_pose, dtype=np.float64),
            ego_velocity=np.asarray(ego_velocity, dtype=np.float64),
        )


def ego_velocities_from_poses(poses: np.ndarray, frame_rate: float) -> np.ndarray:
    """Backward-difference ego velocities; the first frame copies the second."""
    poses = np.asarray(poses, dtype=np.float64)
    vel = np.zeros((len(poses), 2))
    if len(poses) > 1:
        vel[1:] = (poses[1:, :2] - poses[:-1, :2]) * frame_rate
        vel[0] = vel[1]
    return vel


def run_filter(
    measurements,
    ego_poses,
    cfg: FilterConfig,
    seed: int = 0,
    dt: float = 0.1,
    ego_velocities=None,
) -> list[FilterStep]:
    """Run the full filter loop over a measurement-grid sequence.

    ``ego_poses`` is an (F, 3) array of (x, y, heading); ego velocities are
    finite-differenced from it unless given explicitly.  Deterministic
    under a fixed seed.
    """
    measurements = list(measurements)
    if not measurements:
        raise EmptySequence("run_filter needs at least one measurement frame")
    poses = np.asarray(ego_poses, dtype=np.float64).reshape(len(measurements), 3)
    if ego_velocities is None:
        velocities = ego_velocities_from_poses(poses, 1.0 / dt)
    else:
        velocities = np.asarray(ego_velocities, dtype=np.float64).reshape(len(measurements), 2)
    flt = DogmaFilter(measurements[0].spec, cfg, seed=seed, dt=dt)
    return [flt.step(meas, poses[k], velocities[k]) for k, meas in enumerate(measurements)]
