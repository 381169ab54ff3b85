"""Hot loops of greedy selection, compiled when available.

The compiled extension ``_core`` is used when it imports; otherwise the numpy
fallback. Set ``SPATIAL_AL_BACKEND=python`` to force the fallback.
"""
import math
import os
from dataclasses import dataclass

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = {"python": _fallback}
if _core is not None:
    BACKENDS["cython"] = _core


def get_backend(name=None):
    name = name or os.environ.get("SPATIAL_AL_BACKEND", "auto")
    if name == "auto":
        return BACKENDS.get("cython", _fallback)
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


backend = get_backend()


@dataclass
class KernelParams:
    lambda_f: float
    feat_div: float
    lambda_s: float
    spat_div: float
    linear: int
    p_code: int
    a: float
    b: float
    c: float
    tau: float
    cross: float
    f_cap: float = 1.0  # feature term clamp; inf yields raw distances


def p_code(p_norm):
    if p_norm == math.inf:
        return 0
    return 1 if p_norm == 1 else 2
