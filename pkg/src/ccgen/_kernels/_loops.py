"""Loop-form kernels, written in the numba-compatible subset.

The package ``__init__`` compiles these in place with ``numba.njit`` when the
numba backend is active.
"""

import math

import numpy as np

KEY_OFFSET = 1 << 20


def pack_key(i, j, k):
    return ((i + KEY_OFFSET) << 42) | ((j + KEY_OFFSET) << 21) | (k + KEY_OFFSET)


def _axis_rotation(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    R = np.eye(4)
    R[0, 0] = t * x * x + c
    R[0, 1] = t * x * y - s * z
    R[0, 2] = t * x * z + s * y
    R[1, 0] = t * x * y + s * z
    R[1, 1] = t * y * y + c
    R[1, 2] = t * y * z - s * x
    R[2, 0] = t * x * z - s * y
    R[2, 1] = t * y * z + s * x
    R[2, 2] = t * z * z + c
    return R


def chain_frames(fixed, axes, q, base, flange):
    n = q.shape[0]
    frames = np.empty((n + 2, 4, 4))
    frames[0] = base
    T = base.copy()
    for i in range(n):
        T = T @ fixed[i] @ _axis_rotation(axes[i], q[i])
        frames[i + 1] = T
    frames[n + 1] = T @ flange
    return frames


def chain_jacobian(frames, axes):
    n = axes.shape[0]
    J = np.zeros((6, n))
    pe = frames[n + 1, :3, 3]
    for i in range(n):
        z = np.empty(3)
        for r in range(3):
            z[r] = frames[i + 1, r, 0] * axes[i, 0] + frames[i + 1, r, 1] * axes[i, 1] \
                + frames[i + 1, r, 2] * axes[i, 2]
        p = frames[i + 1, :3, 3]
        d = pe - p
        J[0, i] = z[1] * d[2] - z[2] * d[1]
        J[1, i] = z[2] * d[0] - z[0] * d[2]
        J[2, i] = z[0] * d[1] - z[1] * d[0]
        J[3, i] = z[0]
        J[4, i] = z[1]
        J[5, i] = z[2]
    return J


def rotation_error(Rt, R):
    """World-frame rotation vector taking R onto Rt."""
    E = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            E[i, j] = Rt[i, 0] * R[j, 0] + Rt[i, 1] * R[j, 1] + Rt[i, 2] * R[j, 2]
    w = np.empty(3)
    w[0] = 0.5 * (E[2, 1] - E[1, 2])
    w[1] = 0.5 * (E[0, 2] - E[2, 0])
    w[2] = 0.5 * (E[1, 0] - E[0, 1])
    s = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    c = 0.5 * (E[0, 0] + E[1, 1] + E[2, 2] - 1.0)
    angle = math.atan2(s, c)
    if s > 1e-12:
        return w * (angle / s)
    if c > 0.0:
        return np.zeros(3)
    # half-turn: axis from the dominant column of (E + I)
    best = 0
    bestn = -1.0
    for j in range(3):
        nn = (E[0, j] + (1.0 if j == 0 else 0.0)) ** 2 + (E[1, j] + (1.0 if j == 1 else 0.0)) ** 2 \
            + (E[2, j] + (1.0 if j == 2 else 0.0)) ** 2
        if nn > bestn:
            bestn = nn
            best = j
    col = np.empty(3)
    for r in range(3):
        col[r] = E[r, best] + (1.0 if r == best else 0.0)
    return col / math.sqrt(bestn) * math.pi


def solve_ik(fixed, axes, base, flange, lo, hi, q0, target, damping, step_clamp,
             max_iter, pos_tol, ang_tol):
    n = q0.shape[0]
    q = q0.copy()
    for i in range(n):
        q[i] = min(max(q[i], lo[i]), hi[i])
    lam2 = damping * damping
    pos_err = 0.0
    ang_err = 0.0
    it = 0
    while True:
        frames = chain_frames(fixed, axes, q, base, flange)
        ee = frames[n + 1]
        e = np.empty(6)
        for r in range(3):
            e[r] = target[r, 3] - ee[r, 3]
        rv = rotation_error(target[:3, :3], ee[:3, :3])
        e[3] = rv[0]
        e[4] = rv[1]
        e[5] = rv[2]
        pos_err = math.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
        ang_err = math.sqrt(e[3] * e[3] + e[4] * e[4] + e[5] * e[5])
        if (pos_err <= pos_tol and ang_err <= ang_tol) or it >= max_iter:
            break
        J = chain_jacobian(frames, axes)
        A = J @ J.T
        for r in range(6):
            A[r, r] += lam2
        dq = J.T @ np.linalg.solve(A, e)
        m = 0.0
        for i in range(n):
            m = max(m, abs(dq[i]))
        if m > step_clamp:
            dq = dq * (step_clamp / m)
        for i in range(n):
            q[i] = min(max(q[i] + dq[i], lo[i]), hi[i])
        it += 1
    return q, it, pos_err, ang_err


def _point_box_dist2(px, py, pz, bx, by, bz, h):
    dx = max(abs(px - bx) - h, 0.0)
    dy = max(abs(py - by) - h, 0.0)
    dz = max(abs(pz - bz) - h, 0.0)
    return dx * dx + dy * dy + dz * dz


def _segment_box_dist2(a, d, bx, by, bz, h, iters):
    # convex in t: golden-section search on [0, 1]
    lo = 0.0
    hi = 1.0
    g = 0.6180339887498949
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1 = _point_box_dist2(a[0] + x1 * d[0], a[1] + x1 * d[1], a[2] + x1 * d[2], bx, by, bz, h)
    f2 = _point_box_dist2(a[0] + x2 * d[0], a[1] + x2 * d[1], a[2] + x2 * d[2], bx, by, bz, h)
    for _ in range(iters):
        if f1 <= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - g * (hi - lo)
            f1 = _point_box_dist2(a[0] + x1 * d[0], a[1] + x1 * d[1], a[2] + x1 * d[2], bx, by, bz, h)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + g * (hi - lo)
            f2 = _point_box_dist2(a[0] + x2 * d[0], a[1] + x2 * d[1], a[2] + x2 * d[2], bx, by, bz, h)
    best = min(f1, f2)
    best = min(best, _point_box_dist2(a[0], a[1], a[2], bx, by, bz, h))
    best = min(best, _point_box_dist2(a[0] + d[0], a[1] + d[1], a[2] + d[2], bx, by, bz, h))
    return best


def _segment_point_dist2(a, d, dd, px, py, pz):
    t = 0.0
    if dd > 0.0:
        t = ((px - a[0]) * d[0] + (py - a[1]) * d[1] + (pz - a[2]) * d[2]) / dd
        t = min(max(t, 0.0), 1.0)
    ex = a[0] + t * d[0] - px
    ey = a[1] + t * d[1] - py
    ez = a[2] + t * d[2] - pz
    return ex * ex + ey * ey + ez * ez


def capsule_keys(p0, p1, radius, voxel, iters):
    m = p0.shape[0]
    h = 0.5 * voxel
    half_diag = math.sqrt(3.0) * h
    r2 = radius * radius
    outer = (radius + half_diag) * (radius + half_diag)
    lo = np.empty((m, 3), dtype=np.int64)
    hi = np.empty((m, 3), dtype=np.int64)
    total = 0
    for c in range(m):
        cnt = 1
        for ax in range(3):
            a = min(p0[c, ax], p1[c, ax]) - radius
            b = max(p0[c, ax], p1[c, ax]) + radius
            lo[c, ax] = int(math.floor(a / voxel))
            hi[c, ax] = int(math.floor(b / voxel))
            cnt *= hi[c, ax] - lo[c, ax] + 1
        total += cnt
    out = np.empty(total, dtype=np.int64)
    k = 0
    for c in range(m):
        a = p0[c]
        d = p1[c] - p0[c]
        dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        for i in range(lo[c, 0], hi[c, 0] + 1):
            cx = (i + 0.5) * voxel
            for j in range(lo[c, 1], hi[c, 1] + 1):
                cy = (j + 0.5) * voxel
                for kk in range(lo[c, 2], hi[c, 2] + 1):
                    cz = (kk + 0.5) * voxel
                    dc = _segment_point_dist2(a, d, dd, cx, cy, cz)
                    if dc > outer:
                        continue
                    if dc <= r2 or _segment_box_dist2(a, d, cx, cy, cz, h, iters) <= r2 + 1e-12:
                        out[k] = pack_key(i, j, kk)
                        k += 1
    return np.unique(out[:k])


def _obb_voxel_overlap(t, R, AR, e, h):
    # separating-axis test: voxel (axis-aligned, half h) against OBB (rotation R, half e)
    for i in range(3):
        ra = h
        rb = e[0] * AR[i, 0] + e[1] * AR[i, 1] + e[2] * AR[i, 2]
        if abs(t[i]) > ra + rb:
            return False
    for j in range(3):
        ra = h * (AR[0, j] + AR[1, j] + AR[2, j])
        rb = e[j]
        if abs(t[0] * R[0, j] + t[1] * R[1, j] + t[2] * R[2, j]) > ra + rb:
            return False
    for i in range(3):
        i1 = (i + 1) % 3
        i2 = (i + 2) % 3
        for j in range(3):
            j1 = (j + 1) % 3
            j2 = (j + 2) % 3
            ra = h * (AR[i1, j] + AR[i2, j])
            rb = e[j1] * AR[i, j2] + e[j2] * AR[i, j1]
            if abs(t[i2] * R[i1, j] - t[i1] * R[i2, j]) > ra + rb:
                return False
    return True


def obb_keys(centers, rots, halves, voxel):
    m = centers.shape[0]
    h = 0.5 * voxel
    lo = np.empty((m, 3), dtype=np.int64)
    hi = np.empty((m, 3), dtype=np.int64)
    total = 0
    for c in range(m):
        cnt = 1
        for ax in range(3):
            ext = 0.0
            for j in range(3):
                ext += abs(rots[c, ax, j]) * halves[c, j]
            lo[c, ax] = int(math.floor((centers[c, ax] - ext) / voxel))
            hi[c, ax] = int(math.floor((centers[c, ax] + ext) / voxel))
            cnt *= hi[c, ax] - lo[c, ax] + 1
        total += cnt
    out = np.empty(total, dtype=np.int64)
    k = 0
    t = np.empty(3)
    for c in range(m):
        R = rots[c]
        AR = np.abs(R) + 1e-12
        for i in range(lo[c, 0], hi[c, 0] + 1):
            t[0] = centers[c, 0] - (i + 0.5) * voxel
            for j in range(lo[c, 1], hi[c, 1] + 1):
                t[1] = centers[c, 1] - (j + 0.5) * voxel
                for kk in range(lo[c, 2], hi[c, 2] + 1):
                    t[2] = centers[c, 2] - (kk + 0.5) * voxel
                    if _obb_voxel_overlap(t, R, AR, halves[c], h):
                        out[k] = pack_key(i, j, kk)
                        k += 1
    return np.unique(out[:k])
