"""Hot-kernel backend selection.

The compiled extension (``_native``, Cython) is used when importable; the
numpy implementation (``_pure``) is the fallback.  Both expose the same
functions with bit-identical outputs.  ``DOGMAP_BACKEND=pure`` forces the
fallback, ``DOGMAP_BACKEND=native`` fails loudly if the extension is
missing.
"""

from __future__ import annotations

import importlib
import os

from . import _pure

_native = None
_requested = os.environ.get("DOGMAP_BACKEND", "auto")
if _requested not in ("auto", "native", "pure"):
    raise ValueError(f"DOGMAP_BACKEND must be auto, native or pure, got {_requested!r}")
if _requested in ("auto", "native"):
    try:
        _native = importlib.import_module("._native", __name__)
    except ImportError:
        if _requested == "native":
            raise ImportError(
                "DOGMAP_BACKEND=native but the compiled extension is not built; "
                "run `pip install -e . --no-build-isolation` or unset DOGMAP_BACKEND"
            ) from None
        _native = None

_impl = _native if _native is not None else _pure
BACKEND = "native" if _native is not None else "pure"

combine_masses = _impl.combine_masses
raytrace_labels = _impl.raytrace_labels
accumulate_weights = _impl.accumulate_weights
velocity_moments = _impl.velocity_moments
systematic_resample = _impl.systematic_resample


def available_backends() -> list[str]:
    return ["pure"] + (["native"] if _native is not None else [])


def get_backend(name: str):
    """Return a kernel module by name ('pure', 'native' or 'auto')."""
    if name == "pure":
        return _pure
    if name == "native":
        if _native is None:
            raise ImportError("compiled kernel extension is not built")
        return _native
    if name == "auto":
        return _impl
    raise ValueError(f"unknown backend {name!r}")
