"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementations in ``_pykernels`` are used.  Setting the environment
variable ``BRIDGENET_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("BRIDGENET_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]


def get_backend(name=None):
    """Return the kernel module ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def min_conductance_bruteforce(adj, eps=1e-12, backend=None):
    return get_backend(backend).min_conductance_bruteforce(
        np.ascontiguousarray(adj, dtype=np.float64), eps
    )


def prefix_conductances(adj_sorted, backend=None):
    return get_backend(backend).prefix_conductances(np.ascontiguousarray(adj_sorted, dtype=np.float64))


def forward_scaled(trans, emis, init, backend=None):
    return get_backend(backend).forward_scaled(
        np.ascontiguousarray(trans, dtype=np.float64),
        np.ascontiguousarray(emis, dtype=np.float64),
        np.ascontiguousarray(init, dtype=np.float64),
    )


def backward_scaled(trans, emis, scales, backend=None):
    return get_backend(backend).backward_scaled(
        np.ascontiguousarray(trans, dtype=np.float64),
        np.ascontiguousarray(emis, dtype=np.float64),
        np.ascontiguousarray(scales, dtype=np.float64),
    )
