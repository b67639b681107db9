"""Hot numerical kernels with a compiled core and a NumPy fallback.

The Cython extension ``_ckernels`` is used when it has been built; otherwise
the pure NumPy module ``_pykernels`` is selected. Setting the environment
variable ``MERGEMAP_PURE_PYTHON=1`` forces the fallback.

All wrappers coerce their inputs to contiguous float64 so both backends see
identical data.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
if os.environ.get("MERGEMAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND


def _f64(a, shape=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if shape is not None:
        a = a.reshape(shape)
    return a


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def sensor_covariances(points, sigma_range, sigma_bearing, impl=None):
    impl = impl or _impl
    return impl.sensor_covariances(_f64(points, (-1, 3)), float(sigma_range), float(sigma_bearing))


def world_covariances(points, covs, rot, trans, cov_rot, cov_trans, impl=None):
    impl = impl or _impl
    return impl.world_covariances(_f64(points, (-1, 3)), _f64(covs, (-1, 3, 3)), _f64(rot, (3, 3)),
                                  _f64(trans, (3,)), _f64(cov_rot, (3, 3)), _f64(cov_trans, (3, 3)))


def voxel_keys(points, size, impl=None):
    impl = impl or _impl
    return impl.voxel_keys(_f64(points, (-1, 3)), float(size))


def plane_cov(pts, covs, ainv, n, impl=None):
    impl = impl or _impl
    return impl.plane_cov(_f64(pts, (-1, 3)), _f64(covs, (-1, 3, 3)), _f64(ainv, (3, 3)), _f64(n, (3,)))


def point_plane_terms(points, covs, rot, trans, normals, axes, plane_covs, impl=None):
    impl = impl or _impl
    return impl.point_plane_terms(_f64(points, (-1, 3)), _f64(covs, (-1, 3, 3)), _f64(rot, (3, 3)),
                                  _f64(trans, (3,)), _f64(normals, (-1, 3)),
                                  np.ascontiguousarray(axes, dtype=np.int64),
                                  _f64(plane_covs, (-1, 3, 3)))
