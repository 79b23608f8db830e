"""Per-edge and per-node inner loops.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy version
with identical semantics. The module-level names dispatch to the numba
versions unless ``CERTPGO_DISABLE_NUMBA`` is set (see :mod:`certpgo._accel`).
``benchmarks/bench_kernels.py`` times both paths.

Array conventions: stacks of per-node blocks are ``(n, r, d)``; per-edge
measurement stacks are ``(m, d, d)`` and ``(m, d)``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


def _generators(d):
    if d == 2:
        return np.array([[[0.0, -1.0], [1.0, 0.0]]])
    g = np.zeros((3, 3, 3))
    g[0, 2, 1], g[0, 1, 2] = 1.0, -1.0
    g[1, 0, 2], g[1, 2, 0] = 1.0, -1.0
    g[2, 1, 0], g[2, 0, 1] = 1.0, -1.0
    return g


# ---------------------------------------------------------------------------
# numpy reference path


def edge_matrices_np(rot, trans, kappa, sigma):
    """Local quadratic form of each edge over ``[Y_i, p_i, Y_j, p_j]``."""
    m, d, _ = rot.shape
    k = d + 1
    a_rot = np.zeros((m, 2 * k, d))
    a_rot[:, :d, :] = -rot
    a_rot[:, k : k + d, :] = np.eye(d)
    a_t = np.zeros((m, 2 * k))
    a_t[:, :d] = -trans
    a_t[:, d] = -1.0
    a_t[:, k + d] = 1.0
    out = kappa[:, None, None] * np.einsum("mad,mbd->mab", a_rot, a_rot)
    out += sigma[:, None, None] * np.einsum("ma,mb->mab", a_t, a_t)
    return out


def tangent_project_np(y, z):
    """Project ambient blocks ``z`` onto the Stiefel tangent spaces at ``y``."""
    ytz = np.einsum("nrd,nre->nde", y, z)
    return z - np.einsum("nrd,nde->nre", y, 0.5 * (ytz + ytz.transpose(0, 2, 1)))


def qr_retract_np(y):
    q, r = np.linalg.qr(y)
    s = np.sign(np.diagonal(r, axis1=1, axis2=2)).copy()
    s[s == 0] = 1.0
    return q * s[:, None, :]


def se_jacobians_np(rot_i, rot_j, t_i, t_j, rot_meas, trans_meas, sqk, sqs):
    """Weighted residuals and Jacobians of the chordal SE(d) edge error.

    Residual per edge is ``[sqrt(kappa) vec(R_j - R_i Rm), sqrt(sigma)(t_j - t_i - R_i tm)]``
    (row-major vec). Rotations are perturbed on the right, ``R <- R Exp(delta)``.
    Returns ``(res (m, d*d+d), jac_i (m, d*d+d, s), jac_j (m, d*d+d, s))`` with
    ``s = q + d`` node parameters ordered ``[rotation, translation]``.
    """
    m, d, _ = rot_i.shape
    gens = _generators(d)
    q = gens.shape[0]
    nr = d * d + d
    s = q + d
    res = np.empty((m, nr))
    res[:, : d * d] = sqk[:, None] * (rot_j - rot_i @ rot_meas).reshape(m, d * d)
    res[:, d * d :] = sqs[:, None] * (t_j - t_i - np.einsum("mab,mb->ma", rot_i, trans_meas))
    jac_i = np.zeros((m, nr, s))
    jac_j = np.zeros((m, nr, s))
    for k in range(q):
        rig = rot_i @ gens[k]
        jac_i[:, : d * d, k] = -sqk[:, None] * (rig @ rot_meas).reshape(m, d * d)
        jac_j[:, : d * d, k] = sqk[:, None] * (rot_j @ gens[k]).reshape(m, d * d)
        jac_i[:, d * d :, k] = -sqs[:, None] * np.einsum("mab,mb->ma", rig, trans_meas)
    eye = np.eye(d)
    jac_i[:, d * d :, q:] = -sqs[:, None, None] * eye
    jac_j[:, d * d :, q:] = sqs[:, None, None] * eye
    return res, jac_i, jac_j


# ---------------------------------------------------------------------------
# numba path


@njit(cache=True)
def edge_matrices_nb(rot, trans, kappa, sigma):
    m, d, _ = rot.shape
    k = d + 1
    out = np.zeros((m, 2 * k, 2 * k))
    a = np.zeros((2 * k, d))
    v = np.zeros(2 * k)
    for e in range(m):
        a[:, :] = 0.0
        v[:] = 0.0
        for u in range(d):
            for w in range(d):
                a[u, w] = -rot[e, u, w]
            a[k + u, u] = 1.0
            v[u] = -trans[e, u]
        v[d] = -1.0
        v[k + d] = 1.0
        for p in range(2 * k):
            for q in range(2 * k):
                acc = 0.0
                for w in range(d):
                    acc += a[p, w] * a[q, w]
                out[e, p, q] = kappa[e] * acc + sigma[e] * v[p] * v[q]
    return out


@njit(cache=True)
def tangent_project_nb(y, z):
    n, r, d = y.shape
    out = np.empty_like(z)
    ytz = np.empty((d, d))
    for i in range(n):
        for a in range(d):
            for b in range(d):
                acc = 0.0
                for t in range(r):
                    acc += y[i, t, a] * z[i, t, b]
                ytz[a, b] = acc
        for t in range(r):
            for b in range(d):
                acc = 0.0
                for a in range(d):
                    acc += y[i, t, a] * 0.5 * (ytz[a, b] + ytz[b, a])
                out[i, t, b] = z[i, t, b] - acc
    return out


@njit(cache=True)
def qr_retract_nb(y):
    # modified Gram-Schmidt; columns come out with a positive R diagonal
    n, r, d = y.shape
    out = np.empty_like(y)
    for i in range(n):
        for b in range(d):
            for t in range(r):
                out[i, t, b] = y[i, t, b]
            for a in range(b):
                dot = 0.0
                for t in range(r):
                    dot += out[i, t, a] * out[i, t, b]
                for t in range(r):
                    out[i, t, b] -= dot * out[i, t, a]
            nrm = 0.0
            for t in range(r):
                nrm += out[i, t, b] * out[i, t, b]
            nrm = np.sqrt(nrm)
            for t in range(r):
                out[i, t, b] /= nrm
    return out


@njit(cache=True)
def _se_jacobians_nb(rot_i, rot_j, t_i, t_j, rot_meas, trans_meas, sqk, sqs, gens):
    m, d, _ = rot_i.shape
    q = gens.shape[0]
    nr = d * d + d
    s = q + d
    res = np.zeros((m, nr))
    jac_i = np.zeros((m, nr, s))
    jac_j = np.zeros((m, nr, s))
    rig = np.empty((d, d))
    for e in range(m):
        for a in range(d):
            for b in range(d):
                acc = 0.0
                for c in range(d):
                    acc += rot_i[e, a, c] * rot_meas[e, c, b]
                res[e, a * d + b] = sqk[e] * (rot_j[e, a, b] - acc)
            acc = 0.0
            for c in range(d):
                acc += rot_i[e, a, c] * trans_meas[e, c]
            res[e, d * d + a] = sqs[e] * (t_j[e, a] - t_i[e, a] - acc)
        for k in range(q):
            for a in range(d):
                for b in range(d):
                    acc = 0.0
                    for c in range(d):
                        acc += rot_i[e, a, c] * gens[k, c, b]
                    rig[a, b] = acc
            for a in range(d):
                for b in range(d):
                    acc = 0.0
                    acc2 = 0.0
                    for c in range(d):
                        acc += rig[a, c] * rot_meas[e, c, b]
                        acc2 += rot_j[e, a, c] * gens[k, c, b]
                    jac_i[e, a * d + b, k] = -sqk[e] * acc
                    jac_j[e, a * d + b, k] = sqk[e] * acc2
                acc = 0.0
                for c in range(d):
                    acc += rig[a, c] * trans_meas[e, c]
                jac_i[e, d * d + a, k] = -sqs[e] * acc
        for a in range(d):
            jac_i[e, d * d + a, q + a] = -sqs[e]
            jac_j[e, d * d + a, q + a] = sqs[e]
    return res, jac_i, jac_j


def se_jacobians_nb(rot_i, rot_j, t_i, t_j, rot_meas, trans_meas, sqk, sqs):
    gens = _generators(rot_i.shape[1])
    return _se_jacobians_nb(rot_i, rot_j, t_i, t_j, rot_meas, trans_meas, sqk, sqs, gens)


if USE_NUMBA:
    edge_matrices = edge_matrices_nb
    tangent_project = tangent_project_nb
    qr_retract = qr_retract_nb
    se_jacobians = se_jacobians_nb
else:
    edge_matrices = edge_matrices_np
    tangent_project = tangent_project_np
    qr_retract = qr_retract_np
    se_jacobians = se_jacobians_np

BACKEND = "numba" if USE_NUMBA else "numpy"
