"""Evidential dynamic occupancy grid maps from LiDAR-style point clouds.

Core pieces: Dempster-Shafer mass algebra and grid fusion (``grid``),
point-cloud ingestion with RANSAC ground removal and DDA ray tracing
(``measurement``), a deterministic scene simulator with exact oracles
(``scene``), the grid particle filter producing DOGMa frames (``filter``),
prediction baselines and the MSE protocol (``prediction``), and the
``dogmap`` command-line pipeline (``cli``).
"""

from . import _kernels
from .errors import (
    BadSequenceLength,
    ConfigError,
    DegenerateWeights,
    DogmapError,
    EmptySequence,
    NonFinite,
    SpecMismatch,
    TotalConflict,
    TrailingBytes,
)
from .grid import (
    DEFAULT_ALPHA,
    VACUOUS,
    EvidentialGrid,
    GridSpec,
    MassCell,
    combine,
    discount,
    fuse_grid,
    pignistic,
    vacuous_grid,
)

__version__ = "0.1.0"

KERNEL_BACKEND = _kernels.BACKEND

__all__ = [
    "BadSequenceLength",
    "ConfigError",
    "DEFAULT_ALPHA",
    "DegenerateWeights",
    "DogmapError",
    "EmptySequence",
    "EvidentialGrid",
    "GridSpec",
    "KERNEL_BACKEND",
    "MassCell",
    "NonFinite",
    "SpecMismatch",
    "TotalConflict",
    "TrailingBytes",
    "VACUOUS",
    "combine",
    "discount",
    "fuse_grid",
    "pignistic",
    "vacuous_grid",
    "__version__",
]
