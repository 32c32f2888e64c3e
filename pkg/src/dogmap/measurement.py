"""Point-cloud ingestion and per-frame measurement grids.

Raw clouds (KITTI-style f32 quadruples) are parsed, ground returns are
removed with a RANSAC plane fit, and the remaining returns are projected
to the plane and ray-traced into FREE / OCCUPIED / UNKNOWN cell labels.
Beams carve free space only between the sensor and their return; beams
with no return carry no information.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import raytrace_labels
from .errors import NonFinite, TrailingBytes
from .grid import EvidentialGrid, GridSpec

LABEL_UNKNOWN = 0
LABEL_FREE = 1
LABEL_OCCUPIED = 2

DEFAULT_MEASUREMENT_MASS = 0.6

_POINT_RECORD_BYTES = 16

# Beyond this many cells from the ego the exact target cell no longer
# matters (the ray is clipped at the boundary anyway); pulling absurdly far
# points in along their ray bounds the DDA walk.
_FAR_CELL_FACTOR = 8


@dataclass
class PointCloud:
    """Sensor returns as an (N, 4) float32 array of x, y, z, reflectance.

    Coordinates are in the sensor frame (x along the heading); the sensor's
    2-D world pose is carried alongside.
    """

    points: np.ndarray
    sensor_pose: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame_index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 4)
        self.sensor_pose = np.asarray(self.sensor_pose, dtype=np.float64).reshape(3)

    def __len__(self) -> int:
        return self.points.shape[0]


def parse_velodyne_bin(data: bytes, sensor_pose=(0.0, 0.0, 0.0), frame_index: int = 0) -> PointCloud:
    """Decode a raw KITTI-style ``.bin`` payload.

    Points are consecutive little-endian 32-bit float quadruples
    (x, y, z, reflectance).
    """
    if len(data) % _POINT_RECORD_BYTES != 0:
        raise TrailingBytes(
            f"payload of {len(data)} bytes is not a multiple of {_POINT_RECORD_BYTES}"
        )
    points = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    if points.size and not np.isfinite(points).all():
        bad = int(np.flatnonzero(~np.isfinite(points).all(axis=1))[0])
        raise NonFinite(f"point {bad} contains NaN or infinity")
    return PointCloud(points=points.copy(), sensor_pose=np.asarray(sensor_pose, dtype=np.float64), frame_index=frame_index)


def serialize_velodyne_bin(pc: PointCloud) -> bytes:
    return np.ascontiguousarray(pc.points, dtype="<f4").tobytes()


@dataclass
class GroundSegmentation:
    """Result of the RANSAC ground removal.

    ``cloud`` holds the non-ground points (or the unmodified input when no
    plane was found, with ``ground_found`` cleared as the warning flag).
    """

    cloud: PointCloud
    ground_mask: np.ndarray
    plane: np.ndarray | None
    ground_found: bool


def segment_ground(
    pc: PointCloud,
    iterations: int = 200,
    inlier_threshold: float = 0.15,
    max_tilt: float = np.deg2rad(15.0),
    rng: np.random.Generator | None = None,
) -> GroundSegmentation:
    """Fit a ground plane by RANSAC and drop its inliers.

    Candidate planes come from random 3-point samples; planes tilted more
    than ``max_tilt`` from horizontal are rejected.  A plane must claim at
    least 10% of the cloud as inliers to count as ground.
    """
    if len(pc) == 0:
        raise ValueError("cannot segment an empty cloud")
    if inlier_threshold <= 0:
        raise ValueError(f"inlier_threshold must be positive, got {inlier_threshold}")
    if rng is None:
        rng = np.random.default_rng(0)

    pts = pc.points[:, :3].astype(np.float64)
    n = pts.shape[0]
    min_vertical = np.cos(max_tilt)

    best_count = 0
    best_mask = None
    best_plane = None
    if n >= 3:
        samples = rng.integers(0, n, size=(iterations, 3))
        for i0, i1, i2 in samples:
            if i0 == i1 or i0 == i2 or i1 == i2:
                continue
            p0, p1, p2 = pts[i0], pts[i1], pts[i2]
            normal = np.cross(p1 - p0, p2 - p0)
            norm = np.linalg.norm(normal)
            if norm < 1e-12:
                continue
            normal = normal / norm
            if abs(normal[2]) < min_vertical:
                continue
            dist = np.abs((pts - p0) @ normal)
            mask = dist <= inlier_threshold
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_mask = mask
                best_plane = np.concatenate([normal, [-normal @ p0]])

    if best_mask is None or best_count < 0.1 * n:
        return GroundSegmentation(
            cloud=pc,
            ground_mask=np.zeros(n, dtype=bool),
            plane=None,
            ground_found=False,
        )
    kept = PointCloud(
        points=pc.points[~best_mask],
        sensor_pose=pc.sensor_pose.copy(),
        frame_index=pc.frame_index,
    )
    return GroundSegmentation(cloud=kept, ground_mask=best_mask, plane=best_plane, ground_found=True)


@dataclass
class MeasurementGrid:
    """Per-scan cell labels: UNKNOWN (0), FREE (1) or OCCUPIED (2)."""

    spec: GridSpec
    labels: np.ndarray
    frame_index: int = 0

    def counts(self) -> dict[str, int]:
        return {
            "unknown": int((self.labels == LABEL_UNKNOWN).sum()),
            "free": int((self.labels == LABEL_FREE).sum()),
            "occupied": int((self.labels == LABEL_OCCUPIED).sum()),
        }


def raytrace(pc: PointCloud, spec: GridSpec) -> MeasurementGrid:
    """Project returns to the grid plane and carve free space toward them.

    Each return marks its cell OCCUPIED; cells strictly between the ego
    center cell and the hit cell along an integer DDA traversal become
    FREE.  OCCUPIED wins over FREE within a scan, which makes the result
    independent of beam order.  Returns outside the grid clip their ray at
    the boundary, marking all traversed cells FREE.
    """
    n = spec.cells_per_side
    if len(pc) == 0:
        return MeasurementGrid(spec=spec, labels=np.zeros((n, n), dtype=np.uint8), frame_index=pc.frame_index)

    x = pc.points[:, 0].astype(np.float64)
    y = pc.points[:, 1].astype(np.float64)
    heading = float(pc.sensor_pose[2])
    cos_h, sin_h = np.cos(heading), np.sin(heading)
    dx = cos_h * x - sin_h * y
    dy = sin_h * x + cos_h * y

    half = n / 2.0
    s = spec.cell_size
    u = half + dx / s
    v = half - dy / s

    # Pull pathologically distant targets in along their ray so the DDA
    # walk stays bounded; the in-grid traversal is unaffected for any
    # plausible sensor range.
    du = u - half
    dv = v - half
    reach = np.maximum(np.abs(du), np.abs(dv))
    limit = _FAR_CELL_FACTOR * n
    far = reach > limit
    if far.any():
        scale = limit / reach[far]
        u = u.copy()
        v = v.copy()
        u[far] = half + du[far] * scale
        v[far] = half + dv[far] * scale

    labels = raytrace_labels(u, v, n)
    return MeasurementGrid(spec=spec, labels=labels, frame_index=pc.frame_index)


def to_evidential(
    mg: MeasurementGrid,
    m_occ_meas: float = DEFAULT_MEASUREMENT_MASS,
    m_free_meas: float = DEFAULT_MEASUREMENT_MASS,
) -> EvidentialGrid:
    """Map cell labels to measurement masses; UNKNOWN cells stay vacuous."""
    if not 0.0 < m_occ_meas <= 1.0 or not 0.0 < m_free_meas <= 1.0:
        raise ValueError("measurement masses must be in (0, 1]")
    occupied = mg.labels == LABEL_OCCUPIED
    free = mg.labels == LABEL_FREE
    return EvidentialGrid(
        spec=mg.spec,
        m_occ=np.where(occupied, m_occ_meas, 0.0),
        m_free=np.where(free, m_free_meas, 0.0),
        frame_index=mg.frame_index,
    )
