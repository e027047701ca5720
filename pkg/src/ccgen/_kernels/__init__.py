"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The compiled path is used when numba imports cleanly and the environment
variable ``CCGEN_DISABLE_NUMBA`` is unset (or ``0``). Both paths implement
the same contracts; ``BACKEND`` names the active one.
"""

import os

from . import _loops, _vectorized

GOLDEN_ITERS = 40


def _want_numba() -> bool:
    flag = os.environ.get("CCGEN_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


def _compile():
    import numba

    jit = numba.njit(cache=True)
    # helpers first so the callers resolve compiled dispatchers
    for name in ("pack_key", "_axis_rotation", "rotation_error", "_point_box_dist2",
                 "_segment_box_dist2", "_segment_point_dist2", "_obb_voxel_overlap",
                 "chain_frames", "chain_jacobian", "solve_ik", "capsule_keys", "obb_keys"):
        setattr(_loops, name, jit(getattr(_loops, name)))
    return _loops


BACKEND = "numpy"
_impl = _vectorized
if _want_numba():
    try:
        _impl = _compile()
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is optional at runtime
        _impl = _vectorized

chain_frames = _impl.chain_frames
chain_jacobian = _impl.chain_jacobian
solve_ik = _impl.solve_ik


def capsule_keys(p0, p1, radius, voxel):
    return _impl.capsule_keys(p0, p1, radius, voxel, GOLDEN_ITERS)


def obb_keys(centers, rots, halves, voxel):
    return _impl.obb_keys(centers, rots, halves, voxel)


def numpy_kernels():
    """The vectorised module, regardless of the active backend (for comparisons)."""
    return _vectorized
