"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled module is preferred when it was built; set ``SEMLINK_BACKEND``
to ``numpy`` or ``cython`` to force one, or call :func:`use_backend` at
runtime (used by the benchmark and the cross-backend tests). Both backends
are deterministic; they may differ from each other in the last few ulps.
"""

from __future__ import annotations

import os
import warnings

from . import _numpy as _numpy_impl

_BACKENDS = {"numpy": _numpy_impl}
try:
    from . import _fastcore as _fastcore_impl

    _BACKENDS["cython"] = _fastcore_impl
except ImportError:
    _fastcore_impl = None

_requested = os.environ.get("SEMLINK_BACKEND", "").strip().lower()
if _requested and _requested not in _BACKENDS:
    warnings.warn(f"SEMLINK_BACKEND={_requested!r} unavailable; using numpy")
    _requested = "numpy"
_impl = _BACKENDS[_requested] if _requested else _BACKENDS.get("cython", _numpy_impl)


def backend_name() -> str:
    return "cython" if _impl is _fastcore_impl else "numpy"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> None:
    """Switch kernel implementations at runtime."""
    global _impl
    try:
        _impl = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")


def conv2d_valid(x, k):
    return _impl.conv2d_valid(x, k)


def conv2d_valid_vjp(g, k):
    return _impl.conv2d_valid_vjp(g, k)


def avgpool2(x):
    return _impl.avgpool2(x)


def avgpool2_vjp(g, in_shape):
    return _impl.avgpool2_vjp(g, in_shape)


def dense2_forward(y, w1, b1, w2, b2):
    return _impl.dense2_forward(y, w1, b1, w2, b2)


def dense2_vjp(cot, hidden, w1, w2):
    return _impl.dense2_vjp(cot, hidden, w1, w2)
