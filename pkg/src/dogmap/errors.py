"""Exception types shared across the package."""


class DogmapError(Exception):
    """Base class for all dogmap errors."""


class TotalConflict(DogmapError):
    """Dempster combination attempted on fully contradictory masses."""


class SpecMismatch(DogmapError):
    """Two grids with differing geometry were combined."""


class TrailingBytes(DogmapError):
    """Raw point-cloud payload length is not a multiple of the record size."""


class NonFinite(DogmapError):
    """Decoded point coordinates contain NaN or infinity."""


class DegenerateWeights(DogmapError):
    """Every particle weight is zero; the filter cannot continue."""


class EmptySequence(DogmapError):
    """A frame sequence that must be nonempty was empty."""


class BadSequenceLength(DogmapError):
    """An evaluation sequence does not have the required number of frames."""


class ConfigError(DogmapError):
    """A configuration file failed validation."""
