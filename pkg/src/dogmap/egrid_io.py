"""Binary artifact formats.

EGRID v1 grid dump: magic ``EGRD``, little-endian u32 version=1, u32
height, u32 width, u32 channels, u64 frame_index, f64 timestamp, then
channels*height*width little-endian f32 values, row-major within each
channel, channel-major overall.  Channel order for evidential grids is
[m_occ, m_free]; for ground-truth grids [occupancy, vx_rel, vy_rel]
(velocities in world axes: x east, y north, relative to the ego).

Also here: 8-bit PGM previews of pignistic probability, the pose CSV
(``frame,x,y,heading``), per-point ground-label sidecars (one byte per
point), and raw particle snapshots (f32 quintuples x, y, vx, vy, w).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import SpecMismatch
from .grid import EvidentialGrid, GridSpec

EGRID_MAGIC = b"EGRD"
EGRID_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQd")


def write_egrid(path, channels: np.ndarray, frame_index: int = 0, timestamp: float = 0.0) -> None:
    """Write a (C, H, W) tensor as an EGRID v1 file."""
    channels = np.asarray(channels)
    if channels.ndim != 3:
        raise ValueError(f"expected a (channels, height, width) array, got shape {channels.shape}")
    c, h, w = channels.shape
    header = _HEADER.pack(EGRID_MAGIC, EGRID_VERSION, h, w, c, frame_index, timestamp)
    payload = np.ascontiguousarray(channels, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_egrid(path):
    """Read an EGRID v1 file; returns (channels (C,H,W) f32, frame_index, timestamp)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated EGRID header")
    magic, version, h, w, c, frame_index, timestamp = _HEADER.unpack_from(data)
    if magic != EGRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != EGRID_VERSION:
        raise ValueError(f"{path}: unsupported EGRID version {version}")
    expected = _HEADER.size + 4 * c * h * w
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
    channels = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(c, h, w)
    return channels, frame_index, timestamp


def write_evidential(path, grid: EvidentialGrid) -> None:
    write_egrid(
        path,
        np.stack([grid.m_occ, grid.m_free]),
        frame_index=grid.frame_index,
        timestamp=grid.timestamp,
    )


def read_evidential(path, spec: GridSpec | None = None) -> EvidentialGrid:
    channels, frame_index, timestamp = read_egrid(path)
    if channels.shape[0] != 2:
        raise ValueError(f"{path}: evidential grids carry 2 channels, got {channels.shape[0]}")
    h, w = channels.shape[1:]
    if spec is None:
        spec = GridSpec(cells_per_side=h)
    elif spec.shape != (h, w):
        raise SpecMismatch(f"{path}: file is {h}x{w}, expected {spec.shape}")
    return EvidentialGrid(
        spec=spec,
        m_occ=channels[0].astype(np.float64),
        m_free=channels[1].astype(np.float64),
        frame_index=frame_index,
        timestamp=timestamp,
    )


def write_pgm(path, probabilities: np.ndarray) -> None:
    """8-bit grayscale preview: 0 = free, 255 = occupied, 127 = unknown."""
    prob = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
    pixels = np.floor(prob * 255.0).astype(np.uint8)
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def write_pose_csv(path, poses: np.ndarray) -> None:
    """Pose file: one ``frame,x,y,heading`` row per frame (meters, radians)."""
    poses = np.asarray(poses, dtype=np.float64)
    lines = ["frame,x,y,heading"]
    for i, (x, y, heading) in enumerate(poses):
        lines.append(f"{i},{float(x)!r},{float(y)!r},{float(heading)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_csv(path) -> np.ndarray:
    """Read a pose CSV; returns an (F, 3) array ordered by frame index."""
    rows = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("frame"):
                continue
            frame, x, y, heading = line.split(",")
            rows[int(frame)] = (float(x), float(y), float(heading))
    if not rows:
        return np.zeros((0, 3), dtype=np.float64)
    n = max(rows) + 1
    if sorted(rows) != list(range(n)):
        raise ValueError(f"{path}: pose frames are not contiguous from 0")
    return np.array([rows[i] for i in range(n)], dtype=np.float64)


def write_labels(path, labels: np.ndarray) -> None:
    """Ground-label sidecar: one byte per point, 0 = non-ground, 1 = ground."""
    np.asarray(labels, dtype=np.uint8).tofile(path)


def read_labels(path) -> np.ndarray:
    return np.fromfile(path, dtype=np.uint8)


def write_particles(path, x, y, vx, vy, w) -> None:
    """Particle snapshot: little-endian f32 quintuples (x, y, vx, vy, w)."""
    data = np.stack([x, y, vx, vy, w], axis=1).astype("<f4")
    Path(path).write_bytes(data.tobytes())


def read_particles(path):
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if raw.size % 5 != 0:
        raise ValueError(f"{path}: particle payload is not a multiple of 5 floats")
    data = raw.reshape(-1, 5).astype(np.float64)
    return data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4]
