"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``HDA_PURE_PYTHON=1`` to
force the fallback. :data:`BACKEND` names the active implementation.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("HDA_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels

__all__ = [
    "BACKEND",
    "backends",
    "sgd_momentum_update",
    "column_kurtosis",
    "probe_train",
    "probe_predict",
]


def backends() -> dict:
    """Every importable kernel implementation, keyed by name."""
    out = {"python": _pykernels}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out


def sgd_momentum_update(w, g, v, lr, momentum, weight_decay, impl=None):
    """In-place ``v = momentum*v + g + wd*w; w -= lr*v`` on same-shaped arrays."""
    impl = impl or _impl
    if w.shape != g.shape or w.shape != v.shape:
        raise ValueError(f"sgd update shapes differ: {w.shape}, {g.shape}, {v.shape}")
    if impl is _pykernels:
        impl.sgd_momentum_update(w, g, v, lr, momentum, weight_decay)
        return
    # reshape(-1) on contiguous arrays is a view, so the update lands in place
    impl.sgd_momentum_update(
        w.reshape(-1), np.ascontiguousarray(g).reshape(-1), v.reshape(-1),
        float(lr), float(momentum), float(weight_decay),
    )


def column_kurtosis(x, impl=None):
    impl = impl or _impl
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return impl.column_kurtosis(x)


def probe_train(x, y, w1, b1, w2, b2, epochs, lr, impl=None):
    impl = impl or _impl
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    impl.probe_train(x, y, w1, b1, w2, b2, int(epochs), float(lr))


def probe_predict(x, w1, b1, w2, b2, impl=None):
    impl = impl or _impl
    x = np.ascontiguousarray(x, dtype=np.float64)
    return np.asarray(impl.probe_predict(x, w1, b1, w2, b2))
