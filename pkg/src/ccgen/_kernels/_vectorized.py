"""Pure-numpy kernels; same contracts as the loop kernels, vectorised per call."""

import math

import numpy as np

from ._loops import KEY_OFFSET, rotation_error


def pack_keys(idx):
    idx = np.asarray(idx, dtype=np.int64) + KEY_OFFSET
    return (idx[:, 0] << 42) | (idx[:, 1] << 21) | idx[:, 2]


def _axis_rotations(axes, q):
    x, y, z = axes[:, 0], axes[:, 1], axes[:, 2]
    c = np.cos(q)
    s = np.sin(q)
    t = 1.0 - c
    R = np.zeros((q.shape[0], 4, 4))
    R[:, 0, 0] = t * x * x + c
    R[:, 0, 1] = t * x * y - s * z
    R[:, 0, 2] = t * x * z + s * y
    R[:, 1, 0] = t * x * y + s * z
    R[:, 1, 1] = t * y * y + c
    R[:, 1, 2] = t * y * z - s * x
    R[:, 2, 0] = t * x * z - s * y
    R[:, 2, 1] = t * y * z + s * x
    R[:, 2, 2] = t * z * z + c
    R[:, 3, 3] = 1.0
    return R


def chain_frames(fixed, axes, q, base, flange):
    n = q.shape[0]
    local = fixed @ _axis_rotations(axes, q)
    frames = np.empty((n + 2, 4, 4))
    frames[0] = base
    T = base
    for i in range(n):
        T = T @ local[i]
        frames[i + 1] = T
    frames[n + 1] = T @ flange
    return frames


def chain_jacobian(frames, axes):
    n = axes.shape[0]
    z = np.einsum("nij,nj->ni", frames[1:n + 1, :3, :3], axes)
    d = frames[n + 1, :3, 3] - frames[1:n + 1, :3, 3]
    J = np.empty((6, n))
    J[:3] = np.cross(z, d).T
    J[3:] = z.T
    return J


def solve_ik(fixed, axes, base, flange, lo, hi, q0, target, damping, step_clamp,
             max_iter, pos_tol, ang_tol):
    n = q0.shape[0]
    q = np.clip(q0, lo, hi)
    eye = np.eye(6) * damping * damping
    it = 0
    while True:
        frames = chain_frames(fixed, axes, q, base, flange)
        ee = frames[n + 1]
        e = np.concatenate([target[:3, 3] - ee[:3, 3], rotation_error(target[:3, :3], ee[:3, :3])])
        pos_err = math.sqrt(float(e[:3] @ e[:3]))
        ang_err = math.sqrt(float(e[3:] @ e[3:]))
        if (pos_err <= pos_tol and ang_err <= ang_tol) or it >= max_iter:
            break
        J = chain_jacobian(frames, axes)
        dq = J.T @ np.linalg.solve(J @ J.T + eye, e)
        m = float(np.max(np.abs(dq)))
        if m > step_clamp:
            dq = dq * (step_clamp / m)
        q = np.clip(q + dq, lo, hi)
        it += 1
    return q, it, pos_err, ang_err


def _grid(lo, hi):
    axes = [np.arange(lo[a], hi[a] + 1, dtype=np.int64) for a in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def _point_box_dist2(P, B, h):
    return np.sum(np.maximum(np.abs(P - B) - h, 0.0) ** 2, axis=-1)


def capsule_keys(p0, p1, radius, voxel, iters):
    h = 0.5 * voxel
    r2 = radius * radius
    outer = (radius + math.sqrt(3.0) * h) ** 2
    chunks = []
    for a, b in zip(p0, p1):
        lo = np.floor((np.minimum(a, b) - radius) / voxel).astype(np.int64)
        hi = np.floor((np.maximum(a, b) + radius) / voxel).astype(np.int64)
        idx = _grid(lo, hi)
        C = (idx + 0.5) * voxel
        d = b - a
        dd = float(d @ d)
        if dd > 0.0:
            t = np.clip(((C - a) @ d) / dd, 0.0, 1.0)
        else:
            t = np.zeros(len(C))
        dc = np.sum((a + t[:, None] * d - C) ** 2, axis=1)
        keep = dc <= r2
        amb = (~keep) & (dc <= outer)
        if amb.any():
            Cb = C[amb]
            lo_t = np.zeros(len(Cb))
            hi_t = np.ones(len(Cb))
            g = 0.6180339887498949
            x1 = hi_t - g * (hi_t - lo_t)
            x2 = lo_t + g * (hi_t - lo_t)
            f1 = _point_box_dist2(a + x1[:, None] * d, Cb, h)
            f2 = _point_box_dist2(a + x2[:, None] * d, Cb, h)
            for _ in range(iters):
                left = f1 <= f2
                # left: shrink to [lo, x2]; right: shrink to [x1, hi]
                new_hi = np.where(left, x2, hi_t)
                new_lo = np.where(left, lo_t, x1)
                nx1 = np.where(left, new_hi - g * (new_hi - new_lo), x2)
                nx2 = np.where(left, x1, new_lo + g * (new_hi - new_lo))
                nf1 = np.where(left, 0.0, f2)
                nf2 = np.where(left, f1, 0.0)
                probe = np.where(left, nx1, nx2)
                fp = _point_box_dist2(a + probe[:, None] * d, Cb, h)
                f1 = np.where(left, fp, nf1)
                f2 = np.where(left, nf2, fp)
                lo_t, hi_t, x1, x2 = new_lo, new_hi, nx1, nx2
            best = np.minimum(f1, f2)
            best = np.minimum(best, _point_box_dist2(a[None, :], Cb, h))
            best = np.minimum(best, _point_box_dist2((a + d)[None, :], Cb, h))
            keep[np.flatnonzero(amb)[best <= r2 + 1e-12]] = True
        chunks.append(idx[keep])
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.unique(pack_keys(np.concatenate(chunks)))


def obb_keys(centers, rots, halves, voxel):
    h = 0.5 * voxel
    chunks = []
    for c, R, e in zip(centers, rots, halves):
        ext = np.abs(R) @ e
        lo = np.floor((c - ext) / voxel).astype(np.int64)
        hi = np.floor((c + ext) / voxel).astype(np.int64)
        idx = _grid(lo, hi)
        t = c - (idx + 0.5) * voxel
        AR = np.abs(R) + 1e-12
        ok = np.all(np.abs(t) <= h + AR @ e, axis=1)
        ok &= np.all(np.abs(t @ R) <= h * AR.sum(axis=0) + e, axis=1)
        for i in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            for j in range(3):
                j1, j2 = (j + 1) % 3, (j + 2) % 3
                ra = h * (AR[i1, j] + AR[i2, j])
                rb = e[j1] * AR[i, j2] + e[j2] * AR[i, j1]
                ok &= np.abs(t[:, i2] * R[i1, j] - t[:, i1] * R[i2, j]) <= ra + rb
        chunks.append(idx[ok])
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.unique(pack_keys(np.concatenate(chunks)))

