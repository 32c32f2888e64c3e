"""Pipeline configuration: one JSON file collecting every tunable constant.

Validation is strict (unknown keys are rejected) and the canonical form is
hashable, so a run manifest can pin the exact configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .filter import MODE_DST, MODE_PROBABILISTIC, FilterConfig
from .grid import GridSpec
from .jsoncfg import as_bool, as_int, as_number, check_keys, load_json_file


@dataclass(frozen=True)
class MeasurementConfig:
    m_occ: float = 0.6
    m_free: float = 0.6
    segment_ground: bool = True
    ransac_iterations: int = 200
    ransac_inlier_threshold: float = 0.15
    ransac_max_tilt: float = math.radians(15.0)

    def __post_init__(self):
        if not 0.0 < self.m_occ <= 1.0 or not 0.0 < self.m_free <= 1.0:
            raise ConfigError("measurement masses must be in (0, 1]")
        if self.ransac_iterations < 1:
            raise ConfigError("ransac_iterations must be >= 1")
        if self.ransac_inlier_threshold <= 0:
            raise ConfigError("ransac_inlier_threshold must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0
    frame_rate: float = 10.0
    frames_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate


def pipeline_from_dict(raw: dict, context: str = "config") -> PipelineConfig:
    check_keys(
        raw,
        context,
        optional=(
            "grid",
            "measurement",
            "alpha",
            "mode",
            "filter",
            "seed",
            "frame_rate",
            "frames_dir",
            "out_dir",
        ),
    )
    grid_raw = raw.get("grid", {})
    check_keys(grid_raw, f"{context}.grid", optional=("cells_per_side", "side_length"))
    try:
        grid = GridSpec(
            cells_per_side=as_int(grid_raw.get("cells_per_side", 128), f"{context}.grid.cells_per_side"),
            side_length=as_number(grid_raw.get("side_length", 42.7), f"{context}.grid.side_length"),
        )
    except ValueError as exc:
        raise ConfigError(f"{context}.grid: {exc}") from exc

    m_raw = raw.get("measurement", {})
    check_keys(
        m_raw,
        f"{context}.measurement",
        optional=(
            "m_occ",
            "m_free",
            "segment_ground",
            "ransac_iterations",
            "ransac_inlier_threshold",
            "ransac_max_tilt",
        ),
    )
    md = MeasurementConfig()
    measurement = MeasurementConfig(
        m_occ=as_number(m_raw.get("m_occ", md.m_occ), f"{context}.measurement.m_occ"),
        m_free=as_number(m_raw.get("m_free", md.m_free), f"{context}.measurement.m_free"),
        segment_ground=as_bool(m_raw.get("segment_ground", md.segment_ground), f"{context}.measurement.segment_ground"),
        ransac_iterations=as_int(
            m_raw.get("ransac_iterations", md.ransac_iterations), f"{context}.measurement.ransac_iterations"
        ),
        ransac_inlier_threshold=as_number(
            m_raw.get("ransac_inlier_threshold", md.ransac_inlier_threshold),
            f"{context}.measurement.ransac_inlier_threshold",
        ),
        ransac_max_tilt=as_number(
            m_raw.get("ransac_max_tilt", md.ransac_max_tilt), f"{context}.measurement.ransac_max_tilt"
        ),
    )

    f_raw = raw.get("filter", {})
    check_keys(
        f_raw,
        f"{context}.filter",
        optional=(
            "particle_count",
            "sigma_v",
            "initial_weight",
            "p_survive",
            "q_pos",
            "q_vel",
            "birth_count",
            "birth_weight_factor",
            "birth_placement",
            "tau_threshold",
            "epsilon_reg",
            "m_occ_min",
            "v_max",
        ),
    )
    fd = FilterConfig()
    mode = raw.get("mode", fd.mode)
    if mode not in (MODE_PROBABILISTIC, MODE_DST):
        raise ConfigError(f"{context}.mode: must be '{MODE_PROBABILISTIC}' or '{MODE_DST}', got {mode!r}")
    birth_count = f_raw.get("birth_count", None)
    if birth_count is not None:
        birth_count = as_int(birth_count, f"{context}.filter.birth_count")
    try:
        filter_cfg = FilterConfig(
            particle_count=as_int(f_raw.get("particle_count", fd.particle_count), f"{context}.filter.particle_count"),
            sigma_v=as_number(f_raw.get("sigma_v", fd.sigma_v), f"{context}.filter.sigma_v"),
            initial_weight=as_number(
                f_raw.get("initial_weight", fd.initial_weight), f"{context}.filter.initial_weight"
            ),
            p_survive=as_number(f_raw.get("p_survive", fd.p_survive), f"{context}.filter.p_survive"),
            q_pos=as_number(f_raw.get("q_pos", fd.q_pos), f"{context}.filter.q_pos"),
            q_vel=as_number(f_raw.get("q_vel", fd.q_vel), f"{context}.filter.q_vel"),
            birth_count=birth_count,
            birth_weight_factor=as_number(
                f_raw.get("birth_weight_factor", fd.birth_weight_factor), f"{context}.filter.birth_weight_factor"
            ),
            birth_placement=f_raw.get("birth_placement", fd.birth_placement),
            alpha=as_number(raw.get("alpha", fd.alpha), f"{context}.alpha"),
            tau_threshold=as_number(f_raw.get("tau_threshold", fd.tau_threshold), f"{context}.filter.tau_threshold"),
            epsilon_reg=as_number(f_raw.get("epsilon_reg", fd.epsilon_reg), f"{context}.filter.epsilon_reg"),
            m_occ_min=as_number(f_raw.get("m_occ_min", fd.m_occ_min), f"{context}.filter.m_occ_min"),
            v_max=as_number(f_raw.get("v_max", fd.v_max), f"{context}.filter.v_max"),
            mode=mode,
        )
    except ValueError as exc:
        raise ConfigError(f"{context}.filter: {exc}") from exc

    frames_dir = raw.get("frames_dir")
    out_dir = raw.get("out_dir")
    for name, value in (("frames_dir", frames_dir), ("out_dir", out_dir)):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{context}.{name}: expected a string path")
    return PipelineConfig(
        grid=grid,
        measurement=measurement,
        filter=filter_cfg,
        seed=as_int(raw.get("seed", 0), f"{context}.seed"),
        frame_rate=as_number(raw.get("frame_rate", 10.0), f"{context}.frame_rate"),
        frames_dir=frames_dir,
        out_dir=out_dir,
    )


def load_pipeline_config(path) -> PipelineConfig:
    return pipeline_from_dict(load_json_file(path), context=str(path))


def pipeline_to_dict(cfg: PipelineConfig) -> dict:
    """Canonical, JSON-serializable form (paths excluded: they do not affect results)."""
    return {
        "grid": {"cells_per_side": cfg.grid.cells_per_side, "side_length": cfg.grid.side_length},
        "measurement": {
            "m_occ": cfg.measurement.m_occ,
            "m_free": cfg.measurement.m_free,
            "segment_ground": cfg.measurement.segment_ground,
            "ransac_iterations": cfg.measurement.ransac_iterations,
            "ransac_inlier_threshold": cfg.measurement.ransac_inlier_threshold,
            "ransac_max_tilt": cfg.measurement.ransac_max_tilt,
        },
        "alpha": cfg.filter.alpha,
        "mode": cfg.filter.mode,
        "filter": {
            "particle_count": cfg.filter.particle_count,
            "sigma_v": cfg.filter.sigma_v,
            "initial_weight": cfg.filter.initial_weight,
            "p_survive": cfg.filter.p_survive,
            "q_pos": cfg.filter.q_pos,
            "q_vel": cfg.filter.q_vel,
            "birth_count": cfg.filter.n_birth,
            "birth_weight_factor": cfg.filter.birth_weight_factor,
            "birth_placement": cfg.filter.birth_placement,
            "tau_threshold": cfg.filter.tau_threshold,
            "epsilon_reg": cfg.filter.epsilon_reg,
            "m_occ_min": cfg.filter.m_occ_min,
            "v_max": cfg.filter.v_max,
        },
        "seed": cfg.seed,
        "frame_rate": cfg.frame_rate,
    }


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(pipeline_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()
