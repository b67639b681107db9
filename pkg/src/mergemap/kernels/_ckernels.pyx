# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``_pykernels`` exactly."""
import numpy as np
from libc.math cimport sqrt, floor

BACKEND = "cython"


def sensor_covariances(const double[:, ::1] points, double sigma_range, double sigma_bearing):
    cdef Py_ssize_t n = points.shape[0], i, j, k
    out = np.empty((n, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double sr2 = sigma_range * sigma_range
    cdef double sb2 = sigma_bearing * sigma_bearing
    cdef double d2, w[3], eye
    for i in range(n):
        d2 = points[i, 0] * points[i, 0] + points[i, 1] * points[i, 1] + points[i, 2] * points[i, 2]
        for j in range(3):
            w[j] = points[i, j]
        for j in range(3):
            for k in range(3):
                eye = 1.0 if j == k else 0.0
                o[i, j, k] = sr2 * w[j] * w[k] / d2 + sb2 * (d2 * eye - w[j] * w[k])
    return out


def world_covariances(const double[:, ::1] points, const double[:, :, ::1] covs, const double[:, ::1] rot,
                      const double[::1] trans, const double[:, ::1] cov_rot, const double[:, ::1] cov_trans):
    cdef Py_ssize_t n = points.shape[0], i, j, k, l
    pts_out = np.empty((n, 3), dtype=np.float64)
    cov_out = np.empty((n, 3, 3), dtype=np.float64)
    cdef double[:, ::1] po = pts_out
    cdef double[:, :, ::1] co = cov_out
    cdef double S[3][3]
    cdef double T[3][3]
    cdef double U[3][3]
    cdef double acc
    for i in range(n):
        S[0][0] = 0.0; S[0][1] = -points[i, 2]; S[0][2] = points[i, 1]
        S[1][0] = points[i, 2]; S[1][1] = 0.0; S[1][2] = -points[i, 0]
        S[2][0] = -points[i, 1]; S[2][1] = points[i, 0]; S[2][2] = 0.0
        # T = S Σr
        for j in range(3):
            for k in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + S[j][l] * cov_rot[l, k]
                T[j][k] = acc
        # U = Σp + T Sᵀ
        for j in range(3):
            for k in range(3):
                acc = covs[i, j, k]
                for l in range(3):
                    acc = acc + T[j][l] * S[k][l]
                U[j][k] = acc
        # T = R U
        for j in range(3):
            for k in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + rot[j, l] * U[l][k]
                T[j][k] = acc
        for j in range(3):
            for k in range(3):
                acc = cov_trans[j, k]
                for l in range(3):
                    acc = acc + T[j][l] * rot[k, l]
                co[i, j, k] = acc
        for j in range(3):
            po[i, j] = rot[j, 0] * points[i, 0] + rot[j, 1] * points[i, 1] + rot[j, 2] * points[i, 2] + trans[j]
    return pts_out, cov_out


def voxel_keys(const double[:, ::1] points, double size):
    cdef Py_ssize_t n = points.shape[0], i, j
    out = np.empty((n, 3), dtype=np.int64)
    cdef long long[:, ::1] o = out
    for i in range(n):
        for j in range(3):
            o[i, j] = <long long>floor(points[i, j] / size)
    return out


def plane_cov(const double[:, ::1] pts, const double[:, :, ::1] covs, const double[:, ::1] ainv, const double[::1] n):
    cdef Py_ssize_t m = pts.shape[0], i, j, k, l
    cdef double a = n[0], b = n[1], d = n[2], r, acc
    cdef double M[3][3]
    cdef double MC[3][3]
    cdef double S[3][3]
    cdef double T[3][3]
    for j in range(3):
        for k in range(3):
            S[j][k] = 0.0
    for i in range(m):
        r = a * pts[i, 0] + b * pts[i, 1] + pts[i, 2] + d
        for j in range(3):
            M[j][0] = a * (pts[i, j] if j < 2 else 1.0)
            M[j][1] = b * (pts[i, j] if j < 2 else 1.0)
            M[j][2] = pts[i, j] if j < 2 else 1.0
        M[0][0] += r
        M[1][1] += r
        for j in range(3):
            for k in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + M[j][l] * covs[i, l, k]
                MC[j][k] = acc
        for j in range(3):
            for k in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + MC[j][l] * M[k][l]
                S[j][k] += acc
    for j in range(3):
        for k in range(3):
            acc = 0.0
            for l in range(3):
                acc = acc + ainv[j, l] * S[l][k]
            T[j][k] = acc
    out = np.empty((3, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    for j in range(3):
        for k in range(3):
            acc = 0.0
            for l in range(3):
                acc = acc + T[j][l] * ainv[k, l]
            o[j, k] = acc
    return out


def point_plane_terms(const double[:, ::1] points, const double[:, :, ::1] covs, const double[:, ::1] rot,
                      const double[::1] trans, const double[:, ::1] normals, const long long[::1] axes,
                      const double[:, :, ::1] plane_covs):
    cdef Py_ssize_t m = points.shape[0], i, j, k
    h_out = np.empty(m, dtype=np.float64)
    noise_out = np.empty(m, dtype=np.float64)
    jac_out = np.empty((m, 6), dtype=np.float64)
    cdef double[::1] ho = h_out
    cdef double[::1] no = noise_out
    cdef double[:, ::1] jo = jac_out
    cdef double q[3]
    cdef double qp[3]
    cdef double g[3]
    cdef double gs[3]
    cdef double jn[3]
    cdef int perm[3]
    cdef int ax
    cdef double a, b, d, norm, h, var_n, var_p
    for i in range(m):
        for j in range(3):
            q[j] = rot[j, 0] * points[i, 0] + rot[j, 1] * points[i, 1] + rot[j, 2] * points[i, 2] + trans[j]
        ax = <int>axes[i]
        perm[0] = (ax + 1) % 3
        perm[1] = (ax + 2) % 3
        perm[2] = ax
        for j in range(3):
            qp[j] = q[perm[j]]
        a = normals[i, 0]
        b = normals[i, 1]
        d = normals[i, 2]
        norm = sqrt(a * a + b * b + 1.0)
        h = (a * qp[0] + b * qp[1] + qp[2] + d) / norm
        jn[0] = (qp[0] - a * h / norm) / norm
        jn[1] = (qp[1] - b * h / norm) / norm
        jn[2] = 1.0 / norm
        g[perm[0]] = a / norm
        g[perm[1]] = b / norm
        g[perm[2]] = 1.0 / norm
        for j in range(3):
            gs[j] = g[0] * rot[0, j] + g[1] * rot[1, j] + g[2] * rot[2, j]
        var_n = 0.0
        var_p = 0.0
        for j in range(3):
            for k in range(3):
                var_n = var_n + jn[j] * plane_covs[i, j, k] * jn[k]
                var_p = var_p + gs[j] * covs[i, j, k] * gs[k]
        ho[i] = h
        no[i] = var_n + var_p if var_n + var_p > 1e-12 else 1e-12
        jo[i, 0] = points[i, 1] * gs[2] - points[i, 2] * gs[1]
        jo[i, 1] = points[i, 2] * gs[0] - points[i, 0] * gs[2]
        jo[i, 2] = points[i, 0] * gs[1] - points[i, 1] * gs[0]
        jo[i, 3] = g[0]
        jo[i, 4] = g[1]
        jo[i, 5] = g[2]
    return h_out, noise_out, jac_out
