"""NumPy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""
import numpy as np

BACKEND = "python"


def _perm(axis):
    return ((axis + 1) % 3, (axis + 2) % 3, axis)


def _skew_batch(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def sensor_covariances(points, sigma_range, sigma_bearing):
    """Per-point range/bearing covariance, ``(N, 3)`` -> ``(N, 3, 3)``.

    Uses ``σ_d² ωωᵀ + σ_ω² d² (I − ωωᵀ)``, which is what the tangent-basis
    product reduces to for an isotropic bearing covariance.
    """
    p = np.asarray(points, dtype=np.float64)
    d2 = np.einsum("ni,ni->n", p, p)
    oo = np.einsum("ni,nj->nij", p, p) / d2[:, None, None]
    return (sigma_range ** 2) * oo + (sigma_bearing ** 2) * d2[:, None, None] * (np.eye(3) - oo)


def world_covariances(points, covs, rot, trans, cov_rot, cov_trans):
    """Transform sensor-frame points and propagate covariance with pose noise."""
    p = np.asarray(points, dtype=np.float64)
    C = np.asarray(covs, dtype=np.float64)
    R = np.asarray(rot, dtype=np.float64)
    S = _skew_batch(p)
    inner = C + S @ cov_rot @ np.swapaxes(S, 1, 2)
    covs_w = R @ inner @ R.T + cov_trans
    return p @ R.T + trans, covs_w


def voxel_keys(points, size):
    return np.floor(np.asarray(points, dtype=np.float64) / size).astype(np.int64)


def plane_cov(pts, covs, ainv, n):
    """First-order plane covariance from points in permuted coordinates."""
    pts = np.asarray(pts, dtype=np.float64)
    C = np.asarray(covs, dtype=np.float64)
    a, b, d = n
    m = pts.shape[0]
    r = a * pts[:, 0] + b * pts[:, 1] + pts[:, 2] + d
    phi = np.column_stack([pts[:, 0], pts[:, 1], np.ones(m)])
    M = np.empty((m, 3, 3))
    M[:, :, 0] = a * phi
    M[:, :, 1] = b * phi
    M[:, :, 2] = phi
    M[:, 0, 0] += r
    M[:, 1, 1] += r
    S = np.einsum("nij,njk,nlk->il", M, C, M)
    return ainv @ S @ ainv.T


def point_plane_terms(points, covs, rot, trans, normals, axes, plane_covs):
    """Residual, residual variance and pose Jacobian for point/plane pairs.

    Returns ``h (N,)``, ``noise (N,)``, ``jac (N, 6)`` where ``jac`` is the
    derivative of ``h`` with respect to ``[δθ, δt]``.
    """
    p = np.asarray(points, dtype=np.float64)
    R = np.asarray(rot, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    axes = np.asarray(axes)
    m = p.shape[0]
    q = p @ R.T + trans
    idx = np.stack([(axes + 1) % 3, (axes + 2) % 3, axes], axis=1)
    qp = np.take_along_axis(q, idx, axis=1)
    a, b, d = normals[:, 0], normals[:, 1], normals[:, 2]
    norm = np.sqrt(a * a + b * b + 1.0)
    h = (a * qp[:, 0] + b * qp[:, 1] + qp[:, 2] + d) / norm

    jn = np.column_stack([(qp[:, 0] - a * h / norm) / norm,
                          (qp[:, 1] - b * h / norm) / norm,
                          1.0 / norm])
    g = np.zeros((m, 3))
    g_perm = np.column_stack([a, b, np.ones(m)]) / norm[:, None]
    np.put_along_axis(g, idx, g_perm, axis=1)
    gs = g @ R
    noise = (np.einsum("ni,nij,nj->n", jn, plane_covs, jn)
             + np.einsum("ni,nij,nj->n", gs, covs, gs))
    noise = np.maximum(noise, 1e-12)
    jac = np.empty((m, 6))
    jac[:, :3] = np.cross(p, gs)
    jac[:, 3:] = g
    return h, noise, jac
