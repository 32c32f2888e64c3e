"""Deterministic 2-D scene simulator with a beam-casting range sensor.

The world holds axis-aligned static rectangles and constant-velocity
rectangular agents.  A scan casts evenly spaced beams from the ego pose and
returns the nearest rectangle intersection per beam, with seeded Gaussian
range noise; obstacle returns are emitted at z = 1 m.  An optional ground
plane emits labeled points on a disc around the ego so ground segmentation
can be exercised, and every point carries a ground/non-ground label in a
sidecar channel for oracle use.

Agent kinematics are evaluated in closed form (pose = start + k*dt*v), so
ground truth is exact and runs are bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError
from .grid import GridSpec
from .jsoncfg import as_bool, as_int, as_number, as_vector, check_keys, load_json_file
from .measurement import PointCloud

BUILTIN_SCENES = ("static_corridor", "crossing_vehicle", "urban_mix")


@dataclass(frozen=True)
class SensorModel:
    beam_count: int = 720
    span: float = 2.0 * math.pi
    max_range: float = 30.0
    range_noise_sigma: float = 0.02

    def __post_init__(self):
        if self.beam_count < 1:
            raise ConfigError(f"sensor.beam_count must be >= 1, got {self.beam_count}")
        if self.max_range <= 0:
            raise ConfigError(f"sensor.max_range must be positive, got {self.max_range}")
        if not 0 < self.span <= 2.0 * math.pi + 1e-9:
            raise ConfigError(f"sensor.span must be in (0, 2*pi], got {self.span}")
        if self.range_noise_sigma < 0:
            raise ConfigError("sensor.range_noise_sigma must be nonnegative")


@dataclass(frozen=True)
class GroundModel:
    enabled: bool = True
    points_per_frame: int = 1000
    radius: float = 15.0
    z_noise_sigma: float = 0.02
    tilt: float = 0.0

    def __post_init__(self):
        if self.enabled and self.points_per_frame < 1:
            raise ConfigError("ground.points_per_frame must be >= 1 when enabled")
        if self.radius <= 0:
            raise ConfigError("ground.radius must be positive")


@dataclass(frozen=True)
class AgentModel:
    """Rectangular agent: extent in its own frame, world pose, world velocity."""

    extent: tuple[float, float]
    pose: tuple[float, float, float]
    velocity: tuple[float, float]

    def __post_init__(self):
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ConfigError(f"agent extent must be positive, got {self.extent}")


@dataclass(frozen=True)
class EgoModel:
    """Ego trajectory: constant velocity from a start pose, or explicit waypoints."""

    mode: str = "constant"
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    waypoints: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if self.mode not in ("constant", "waypoints"):
            raise ConfigError(f"ego.mode must be 'constant' or 'waypoints', got {self.mode!r}")
        if self.mode == "waypoints" and len(self.waypoints) < 1:
            raise ConfigError("ego.waypoints must hold at least one pose")


@dataclass(frozen=True)
class SceneConfig:
    name: str = "scene"
    frames: int = 50
    frame_rate: float = 10.0
    seed: int = 0
    static_shapes: tuple[tuple[float, float, float, float], ...] = ()
    agents: tuple[AgentModel, ...] = ()
    ego: EgoModel = field(default_factory=EgoModel)
    sensor: SensorModel = field(default_factory=SensorModel)
    ground: GroundModel = field(default_factory=GroundModel)

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.frame_rate <= 0:
            raise ConfigError(f"frame_rate must be positive, got {self.frame_rate}")
        for i, box in enumerate(self.static_shapes):
            if box[2] <= box[0] or box[3] <= box[1]:
                raise ConfigError(f"static_shapes[{i}]: expected [xmin, ymin, xmax, ymax] with positive extent")
        if self.ego.mode == "waypoints" and len(self.ego.waypoints) < self.frames:
            raise ConfigError(
                f"ego.waypoints holds {len(self.ego.waypoints)} poses but the scene runs {self.frames} frames"
            )

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate


@dataclass
class SceneState:
    frame_index: int
    ego_pose: np.ndarray
    agent_poses: np.ndarray  # (A, 3)


def ego_pose_at(cfg: SceneConfig, frame_index: int) -> np.ndarray:
    if cfg.ego.mode == "waypoints":
        return np.asarray(cfg.ego.waypoints[frame_index], dtype=np.float64)
    x0, y0, h0 = cfg.ego.start
    vx, vy = cfg.ego.velocity
    t = frame_index * cfg.dt
    return np.array([x0 + t * vx, y0 + t * vy, h0], dtype=np.float64)


def ego_velocity_at(cfg: SceneConfig, frame_index: int) -> np.ndarray:
    if cfg.ego.mode == "constant":
        return np.asarray(cfg.ego.velocity, dtype=np.float64)
    poses = np.asarray(cfg.ego.waypoints, dtype=np.float64)
    if len(poses) < 2:
        return np.zeros(2)
    k = min(max(frame_index, 1), len(poses) - 1)
    return (poses[k, :2] - poses[k - 1, :2]) * cfg.frame_rate


def agent_poses_at(cfg: SceneConfig, frame_index: int) -> np.ndarray:
    t = frame_index * cfg.dt
    poses = np.zeros((len(cfg.agents), 3), dtype=np.float64)
    for i, agent in enumerate(cfg.agents):
        poses[i, 0] = agent.pose[0] + t * agent.velocity[0]
        poses[i, 1] = agent.pose[1] + t * agent.velocity[1]
        poses[i, 2] = agent.pose[2]
    return poses


def initial_state(cfg: SceneConfig) -> SceneState:
    return SceneState(frame_index=0, ego_pose=ego_pose_at(cfg, 0), agent_poses=agent_poses_at(cfg, 0))


def step(state: SceneState, cfg: SceneConfig) -> SceneState:
    """Advance one frame; kinematics are closed-form so repeated stepping is drift-free."""
    k = state.frame_index + 1
    return SceneState(frame_index=k, ego_pose=ego_pose_at(cfg, k), agent_poses=agent_poses_at(cfg, k))


def _slab_interval(origin, direction, lo, hi):
    """Per-beam [tmin, tmax] of an axis slab; handles rays parallel to it."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / direction
        t2 = (hi - origin) / direction
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = direction == 0.0
    if np.any(parallel):
        inside = (origin >= lo) & (origin <= hi)
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    return tmin, tmax


def _ray_rect_entry(ox, oy, dxs, dys, half_x, half_y):
    """Entry parameter of rays into the box [-half_x, half_x] x [-half_y, half_y].

    Rays starting inside the box (or touching at t ~ 0) report no hit.
    """
    txmin, txmax = _slab_interval(ox, dxs, -half_x, half_x)
    tymin, tymax = _slab_interval(oy, dys, -half_y, half_y)
    tmin = np.maximum(txmin, tymin)
    tmax = np.minimum(txmax, tymax)
    hit = (tmax >= tmin) & (tmin > 1e-9)
    return np.where(hit, tmin, np.inf)


def _shape_frames(state: SceneState, cfg: SceneConfig):
    """All obstacle rectangles as (center, heading, half_extents) at this frame."""
    shapes = []
    for box in cfg.static_shapes:
        xmin, ymin, xmax, ymax = box
        shapes.append(((0.5 * (xmin + xmax), 0.5 * (ymin + ymax)), 0.0, (0.5 * (xmax - xmin), 0.5 * (ymax - ymin))))
    for agent, pose in zip(cfg.agents, state.agent_poses):
        shapes.append(((pose[0], pose[1]), pose[2], (agent.extent[0] / 2.0, agent.extent[1] / 2.0)))
    return shapes


def scan(state: SceneState, cfg: SceneConfig, rng: np.random.Generator):
    """Cast one scan; returns (PointCloud, ground-label sidecar).

    Beams are evenly spaced over the angular span, centered on the ego
    heading (midpoint rule, so a full 2*pi span has no duplicate beam).
    Points are in the sensor frame (x along the heading), obstacle returns
    at z = 1 m.  Rays without a hit emit nothing, but the noise draw per
    beam is unconditional so the random stream depends only on the config.
    """
    sensor = cfg.sensor
    ego = state.ego_pose
    b = sensor.beam_count
    local_angles = -sensor.span / 2.0 + sensor.span * (np.arange(b) + 0.5) / b
    world_angles = ego[2] + local_angles
    dxs = np.cos(world_angles)
    dys = np.sin(world_angles)

    t_best = np.full(b, np.inf)
    for (center, heading, halves) in _shape_frames(state, cfg):
        cos_h = math.cos(heading)
        sin_h = math.sin(heading)
        # Ray into the rectangle's frame.
        rx = ego[0] - center[0]
        ry = ego[1] - center[1]
        ox = cos_h * rx + sin_h * ry
        oy = -sin_h * rx + cos_h * ry
        ldx = cos_h * dxs + sin_h * dys
        ldy = -sin_h * dxs + cos_h * dys
        t = _ray_rect_entry(ox, oy, ldx, ldy, halves[0], halves[1])
        t_best = np.minimum(t_best, t)

    noise = rng.normal(0.0, sensor.range_noise_sigma, size=b)
    hit = t_best <= sensor.max_range
    ranges = np.maximum(t_best[hit] + noise[hit], 1e-6)
    obstacle_pts = np.column_stack(
        [
            ranges * np.cos(local_angles[hit]),
            ranges * np.sin(local_angles[hit]),
            np.full(ranges.shape, 1.0),
            np.full(ranges.shape, 0.5),
        ]
    )

    if cfg.ground.enabled:
        g = cfg.ground
        radii = g.radius * np.sqrt(rng.random(g.points_per_frame))
        thetas = 2.0 * math.pi * rng.random(g.points_per_frame)
        z_noise = rng.normal(0.0, g.z_noise_sigma, size=g.points_per_frame)
        gx_world = radii * np.cos(thetas)
        gy_world = radii * np.sin(thetas)
        # The ground plane is fixed in the world: z = tan(tilt) * x_world.
        z = math.tan(g.tilt) * (ego[0] + gx_world) + z_noise
        cos_h = math.cos(ego[2])
        sin_h = math.sin(ego[2])
        gx = cos_h * gx_world + sin_h * gy_world
        gy = -sin_h * gx_world + cos_h * gy_world
        ground_pts = np.column_stack([gx, gy, z, np.full(gx.shape, 0.1)])
    else:
        ground_pts = np.zeros((0, 4))

    points = np.vstack([obstacle_pts, ground_pts]).astype(np.float32)
    labels = np.concatenate(
        [np.zeros(len(obstacle_pts), dtype=np.uint8), np.ones(len(ground_pts), dtype=np.uint8)]
    )
    cloud = PointCloud(points=points, sensor_pose=ego.copy(), frame_index=state.frame_index)
    return cloud, labels


def _rect_corners(center, heading, halves) -> np.ndarray:
    cos_h = math.cos(heading)
    sin_h = math.sin(heading)
    hx, hy = halves
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    rot = np.array([[cos_h, -sin_h], [sin_h, cos_h]])
    return local @ rot.T + np.asarray(center)


def _segment_cells(spec: GridSpec, ego_pose, p0, p1):
    """Grid cells containing points of a world segment.

    Cell membership follows the same floor convention as the ray tracer
    (cells are half-open), so a face lying exactly on a cell boundary
    claims one cell, not two.  The cells are enumerated exactly by
    splitting the segment at every integer-coordinate crossing.
    """
    n = spec.cells_per_side
    u0, v0 = spec.grid_coords(p0[0], p0[1], ego_pose[0], ego_pose[1])
    u1, v1 = spec.grid_coords(p1[0], p1[1], ego_pose[0], ego_pose[1])
    du = u1 - u0
    dv = v1 - v0
    ts = [0.0, 1.0]
    # Only crossings inside the grid band can bound an in-grid cell.
    if du != 0.0:
        lo, hi = (u0, u1) if u0 < u1 else (u1, u0)
        for k in range(max(int(np.floor(lo)) + 1, 0), min(int(np.floor(hi)), n) + 1):
            ts.append((k - u0) / du)
    if dv != 0.0:
        lo, hi = (v0, v1) if v0 < v1 else (v1, v0)
        for k in range(max(int(np.floor(lo)) + 1, 0), min(int(np.floor(hi)), n) + 1):
            ts.append((k - v0) / dv)
    ts = np.clip(np.unique(ts), 0.0, 1.0)
    # Segment endpoints plus midpoints of every crossing-bounded piece.
    samples = np.concatenate([ts, (ts[:-1] + ts[1:]) / 2.0])
    cols = np.floor(u0 + samples * du).astype(np.int64)
    rows = np.floor(v0 + samples * dv).astype(np.int64)
    keep = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
    flat = np.unique(rows[keep] * n + cols[keep])
    return flat // n, flat % n


def ground_truth(state: SceneState, cfg: SceneConfig, spec: GridSpec):
    """Exact occupancy mask and ego-relative velocity field for this frame.

    A cell is truth-occupied when it intersects the boundary of some
    rectangle: the material a beam can actually return from.  (Rectangle
    interiors are permanently occluded in a planar-beam world, so including
    them would mark space no sensor could ever observe.)  Occupied cells
    carry their owner's velocity relative to the ego, so the static world
    moves at -ego_velocity; agents listed later override earlier ones.
    """
    n = spec.cells_per_side
    occ = np.zeros((n, n), dtype=bool)
    vel = np.zeros((2, n, n), dtype=np.float64)
    ego_v = ego_velocity_at(cfg, state.frame_index)

    owners = []
    for box in cfg.static_shapes:
        xmin, ymin, xmax, ymax = box
        corners = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
        owners.append((corners, np.zeros(2)))
    for agent, pose in zip(cfg.agents, state.agent_poses):
        corners = _rect_corners((pose[0], pose[1]), pose[2], (agent.extent[0] / 2.0, agent.extent[1] / 2.0))
        owners.append((corners, np.asarray(agent.velocity, dtype=np.float64)))

    for corners, v_world in owners:
        rel = v_world - ego_v
        for i in range(4):
            rows, cols = _segment_cells(spec, state.ego_pose, corners[i], corners[(i + 1) % 4])
            occ[rows, cols] = True
            vel[0, rows, cols] = rel[0]
            vel[1, rows, cols] = rel[1]
    return occ, vel


def simulate_frames(cfg: SceneConfig, frames: int | None = None):
    """Yield (state, cloud, ground_labels) for each frame, deterministically."""
    rng = np.random.default_rng(cfg.seed)
    total = cfg.frames if frames is None else frames
    if cfg.ego.mode == "waypoints" and len(cfg.ego.waypoints) < total:
        raise ConfigError(f"scene provides {len(cfg.ego.waypoints)} waypoints for {total} frames")
    state = initial_state(cfg)
    for k in range(total):
        if k > 0:
            state = step(state, cfg)
        cloud, labels = scan(state, cfg, rng)
        yield state, cloud, labels


def scene_from_dict(raw: dict, context: str = "scene") -> SceneConfig:
    check_keys(
        raw,
        context,
        optional=(
            "name",
            "frames",
            "frame_rate",
            "seed",
            "static_shapes",
            "agents",
            "ego",
            "sensor",
            "ground",
        ),
    )
    kwargs = {}
    if "name" in raw:
        if not isinstance(raw["name"], str):
            raise ConfigError(f"{context}.name: expected a string")
        kwargs["name"] = raw["name"]
    if "frames" in raw:
        kwargs["frames"] = as_int(raw["frames"], f"{context}.frames")
    if "frame_rate" in raw:
        kwargs["frame_rate"] = as_number(raw["frame_rate"], f"{context}.frame_rate")
    if "seed" in raw:
        kwargs["seed"] = as_int(raw["seed"], f"{context}.seed")
    if "static_shapes" in raw:
        if not isinstance(raw["static_shapes"], list):
            raise ConfigError(f"{context}.static_shapes: expected a list")
        kwargs["static_shapes"] = tuple(
            as_vector(box, 4, f"{context}.static_shapes[{i}]") for i, box in enumerate(raw["static_shapes"])
        )
    if "agents" in raw:
        if not isinstance(raw["agents"], list):
            raise ConfigError(f"{context}.agents: expected a list")
        agents = []
        for i, a in enumerate(raw["agents"]):
            actx = f"{context}.agents[{i}]"
            check_keys(a, actx, required=("extent", "pose", "velocity"))
            agents.append(
                AgentModel(
                    extent=as_vector(a["extent"], 2, f"{actx}.extent"),
                    pose=as_vector(a["pose"], 3, f"{actx}.pose"),
                    velocity=as_vector(a["velocity"], 2, f"{actx}.velocity"),
                )
            )
        kwargs["agents"] = tuple(agents)
    if "ego" in raw:
        ectx = f"{context}.ego"
        check_keys(raw["ego"], ectx, optional=("mode", "start", "velocity", "waypoints"))
        mode = raw["ego"].get("mode", "constant")
        if mode == "waypoints":
            waypoints = raw["ego"].get("waypoints", [])
            if not isinstance(waypoints, list):
                raise ConfigError(f"{ectx}.waypoints: expected a list")
            kwargs["ego"] = EgoModel(
                mode="waypoints",
                waypoints=tuple(as_vector(p, 3, f"{ectx}.waypoints[{i}]") for i, p in enumerate(waypoints)),
            )
        else:
            kwargs["ego"] = EgoModel(
                mode=mode,
                start=as_vector(raw["ego"].get("start", (0.0, 0.0, 0.0)), 3, f"{ectx}.start"),
                velocity=as_vector(raw["ego"].get("velocity", (0.0, 0.0)), 2, f"{ectx}.velocity"),
            )
    if "sensor" in raw:
        sctx = f"{context}.sensor"
        check_keys(raw["sensor"], sctx, optional=("beam_count", "span", "max_range", "range_noise_sigma"))
        defaults = SensorModel()
        kwargs["sensor"] = SensorModel(
            beam_count=as_int(raw["sensor"].get("beam_count", defaults.beam_count), f"{sctx}.beam_count"),
            span=as_number(raw["sensor"].get("span", defaults.span), f"{sctx}.span"),
            max_range=as_number(raw["sensor"].get("max_range", defaults.max_range), f"{sctx}.max_range"),
            range_noise_sigma=as_number(
                raw["sensor"].get("range_noise_sigma", defaults.range_noise_sigma), f"{sctx}.range_noise_sigma"
            ),
        )
    if "ground" in raw:
        gctx = f"{context}.ground"
        check_keys(raw["ground"], gctx, optional=("enabled", "points_per_frame", "radius", "z_noise_sigma", "tilt"))
        defaults = GroundModel()
        kwargs["ground"] = GroundModel(
            enabled=as_bool(raw["ground"].get("enabled", defaults.enabled), f"{gctx}.enabled"),
            points_per_frame=as_int(
                raw["ground"].get("points_per_frame", defaults.points_per_frame), f"{gctx}.points_per_frame"
            ),
            radius=as_number(raw["ground"].get("radius", defaults.radius), f"{gctx}.radius"),
            z_noise_sigma=as_number(raw["ground"].get("z_noise_sigma", defaults.z_noise_sigma), f"{gctx}.z_noise_sigma"),
            tilt=as_number(raw["ground"].get("tilt", defaults.tilt), f"{gctx}.tilt"),
        )
    return SceneConfig(**kwargs)


def scene_to_dict(cfg: SceneConfig) -> dict:
    return {
        "name": cfg.name,
        "frames": cfg.frames,
        "frame_rate": cfg.frame_rate,
        "seed": cfg.seed,
        "static_shapes": [list(box) for box in cfg.static_shapes],
        "agents": [
            {"extent": list(a.extent), "pose": list(a.pose), "velocity": list(a.velocity)} for a in cfg.agents
        ],
        "ego": (
            {"mode": "waypoints", "waypoints": [list(p) for p in cfg.ego.waypoints]}
            if cfg.ego.mode == "waypoints"
            else {"mode": "constant", "start": list(cfg.ego.start), "velocity": list(cfg.ego.velocity)}
        ),
        "sensor": {
            "beam_count": cfg.sensor.beam_count,
            "span": cfg.sensor.span,
            "max_range": cfg.sensor.max_range,
            "range_noise_sigma": cfg.sensor.range_noise_sigma,
        },
        "ground": {
            "enabled": cfg.ground.enabled,
            "points_per_frame": cfg.ground.points_per_frame,
            "radius": cfg.ground.radius,
            "z_noise_sigma": cfg.ground.z_noise_sigma,
            "tilt": cfg.ground.tilt,
        },
    }


def load_scene(path) -> SceneConfig:
    return scene_from_dict(load_json_file(path), context=str(path))


def builtin_scene(name: str) -> SceneConfig:
    """Load one of the scene configs shipped with the package."""
    if name not in BUILTIN_SCENES:
        raise ConfigError(f"unknown builtin scene {name!r}; available: {BUILTIN_SCENES}")
    ref = resources.files("dogmap").joinpath(f"scenes/{name}.json")
    return scene_from_dict(json.loads(ref.read_text()), context=name)
