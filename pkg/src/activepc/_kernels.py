"""Compiled loops for the geometric hot paths (fps and radius/k-nearest queries).

All distances are evaluated as sqrt(a*(dx*dx) + b*(dy*dy) + c*(dz*dz)) in
float64 without fast-math, so results match the numpy expressions in
:mod:`activepc.neighborhood` bit for bit.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def fps_rows(pts, valid, count, seed):
    """pts (R, M, 3) float64, valid (R, M) bool, seed (R,) -> (R, count) indices."""
    r, m, _ = pts.shape
    out = np.empty((r, count), np.int64)
    mind = np.empty(m)
    for row in range(r):
        for j in range(m):
            mind[j] = np.inf if valid[row, j] else -np.inf
        cur = seed[row]
        for i in range(count):
            out[row, i] = cur
            mind[cur] = -1.0
            cx, cy, cz = pts[row, cur, 0], pts[row, cur, 1], pts[row, cur, 2]
            best = -np.inf
            nxt = 0
            for j in range(m):
                v = mind[j]
                if v >= 0:
                    dx = pts[row, j, 0] - cx
                    dy = pts[row, j, 1] - cy
                    dz = pts[row, j, 2] - cz
                    d = np.sqrt(dx * dx + dy * dy + dz * dz)
                    if d < v:
                        v = d
                        mind[j] = d
                if v > best:
                    best = v
                    nxt = j
            cur = nxt
    return out


@numba.njit(cache=True)
def radius_knn(video, anchors, anchor_frames, radius, tau, k, scales):
    """Tube query for one clip.

    video (T, N, 3), anchors (T', A, 3), anchor_frames (T',).  For each anchor
    scans window frames f - tau .. f + tau (clipped) in order and keeps the k
    members with smallest (distance, window column).  Returns column indices
    ``w * N + point`` (w = window slot 0 .. 2*tau) and member counts.
    """
    t, n, _ = video.shape
    tq, a, _ = anchors.shape
    idx = np.zeros((tq, a, k), np.int64)
    cnt = np.zeros((tq, a), np.int64)
    bd = np.empty(k)
    bi = np.empty(k, np.int64)
    sa, sb, sc = scales[0], scales[1], scales[2]
    # squared bound safely above radius**2; points past it cannot pass the exact test
    cut = radius * radius * (1.0 + 1e-9) + 1e-300
    for ti in range(tq):
        f0 = anchor_frames[ti]
        for ai in range(a):
            qx, qy, qz = anchors[ti, ai, 0], anchors[ti, ai, 1], anchors[ti, ai, 2]
            c = 0
            for w in range(2 * tau + 1):
                f = f0 - tau + w
                if f < 0 or f >= t:
                    continue
                for p in range(n):
                    dx = video[f, p, 0] - qx
                    dy = video[f, p, 1] - qy
                    dz = video[f, p, 2] - qz
                    s2 = sa * (dx * dx) + sb * (dy * dy) + sc * (dz * dz)
                    if s2 > cut:
                        continue
                    d = np.sqrt(s2)
                    if d > radius:
                        continue
                    if c == k and d >= bd[k - 1]:
                        continue
                    pos = c if c < k else k - 1
                    while pos > 0 and bd[pos - 1] > d:
                        if pos < k:
                            bd[pos] = bd[pos - 1]
                            bi[pos] = bi[pos - 1]
                        pos -= 1
                    bd[pos] = d
                    bi[pos] = w * n + p
                    if c < k:
                        c += 1
            for j in range(c):
                idx[ti, ai, j] = bi[j]
            cnt[ti, ai] = c
    return idx, cnt


@numba.njit(cache=True)
def own_frame_nearest(video, anchors, anchor_frames, scales):
    """Index of the nearest point in each anchor's own frame."""
    tq, a, _ = anchors.shape
    n = video.shape[1]
    out = np.zeros((tq, a), np.int64)
    for ti in range(tq):
        f = anchor_frames[ti]
        for ai in range(a):
            best = np.inf
            for p in range(n):
                dx = video[f, p, 0] - anchors[ti, ai, 0]
                dy = video[f, p, 1] - anchors[ti, ai, 1]
                dz = video[f, p, 2] - anchors[ti, ai, 2]
                d = np.sqrt(scales[0] * (dx * dx) + scales[1] * (dy * dy) + scales[2] * (dz * dz))
                if d < best:
                    best = d
                    out[ti, ai] = p
    return out
