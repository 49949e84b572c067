"""Radius queries under the Euclidean and the axis-scaled (elliptic) metric, and
spatiotemporal tube grouping around anchors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

# paper's converged axis scales on its own data, kept for reference configs
REPORTED_OMEGA = (3.5632, 3.6789, 2.8038)


@dataclass(frozen=True)
class EllipseParams:
    """Positive axis scales of the elliptic metric, stored as logs."""

    log_alpha: float = 0.0
    log_beta: float = 0.0
    log_gamma: float = 0.0
    trainable: bool = True

    @classmethod
    def from_scales(cls, alpha: float, beta: float, gamma: float, trainable: bool = True) -> EllipseParams:
        if min(alpha, beta, gamma) <= 0:
            raise ValueError(f"axis scales must be positive, got {(alpha, beta, gamma)}")
        return cls(float(np.log(alpha)), float(np.log(beta)), float(np.log(gamma)), trainable)

    @classmethod
    def from_log(cls, logs, trainable: bool = True) -> EllipseParams:
        a, b, c = (float(v) for v in logs)
        return cls(a, b, c, trainable)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(np.array([self.log_alpha, self.log_beta, self.log_gamma], np.float64))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta))

    @property
    def gamma(self) -> float:
        return float(np.exp(self.log_gamma))


UNIT_OMEGA = EllipseParams()


def _scales(omega) -> np.ndarray:
    if isinstance(omega, EllipseParams):
        return omega.scales
    return np.asarray(omega, np.float64)


def euclidean(diff: np.ndarray) -> np.ndarray:
    dx, dy, dz = diff[..., 0], diff[..., 1], diff[..., 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def elliptic(diff: np.ndarray, scales: np.ndarray) -> np.ndarray:
    dx, dy, dz = diff[..., 0], diff[..., 1], diff[..., 2]
    return np.sqrt(scales[0] * (dx * dx) + scales[1] * (dy * dy) + scales[2] * (dz * dz))


def scaled_distance(p_n, p_q, omega=UNIT_OMEGA) -> float:
    """sqrt(alpha*dx^2 + beta*dy^2 + gamma*dz^2) between two points."""
    diff = np.asarray(p_n, np.float64) - np.asarray(p_q, np.float64)
    return float(elliptic(diff, _scales(omega)))


def select_nearest(dist: np.ndarray, member: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise: the up-to-``k`` members with smallest distance, ordered by
    (distance, column index).

    Returns ``(idx, valid)`` of shape (rows, k); slots past the member count
    have ``valid`` False and an unspecified index.
    """
    key = np.where(member, dist, np.inf)
    m = key.shape[1]
    if m <= k:
        order = np.argsort(key, axis=1, kind="stable")
        valid = np.take_along_axis(member, order, 1)
        if m < k:
            pad = k - m
            order = np.concatenate([order, np.zeros((len(order), pad), order.dtype)], 1)
            valid = np.concatenate([valid, np.zeros((len(valid), pad), bool)], 1)
        return order, valid
    kth = np.partition(key, k - 1, axis=1)[:, k - 1:k]
    less = key < kth
    tied = (key == kth) & member
    need = k - less.sum(axis=1, keepdims=True)
    chosen = less | (tied & (np.cumsum(tied, axis=1) <= need))
    pos = np.argsort(~chosen, axis=1, kind="stable")[:, :k]
    valid = np.take_along_axis(chosen, pos, 1)
    order = np.argsort(np.take_along_axis(key, pos, 1), axis=1, kind="stable")
    return np.take_along_axis(pos, order, 1), np.take_along_axis(valid, order, 1)


def _radius_query(dist: np.ndarray, r: float, k_max: int) -> list[int]:
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    idx, valid = select_nearest(dist[None], (dist <= r)[None], k_max)
    return idx[0][valid[0]].tolist()


def ball_query(query, cloud, r: float, k_max: int) -> list[int]:
    """Indices within Euclidean distance ``r`` (closed ball), nearest first, at most ``k_max``."""
    cloud = np.asarray(cloud, np.float64).reshape(-1, 3)
    return _radius_query(euclidean(cloud - np.asarray(query, np.float64)), r, k_max)


def ellipse_query(query, cloud, r: float, k_max: int, omega=UNIT_OMEGA) -> list[int]:
    """As :func:`ball_query` but membership and order use the elliptic metric."""
    cloud = np.asarray(cloud, np.float64).reshape(-1, 3)
    return _radius_query(elliptic(cloud - np.asarray(query, np.float64), _scales(omega)), r, k_max)


@dataclass
class TubeGroup:
    """Fixed-width neighbour slots for a batch of anchors.

    Leading shape ``S`` is whatever the anchors had (e.g. (B, T', N_l)).
    ``index`` addresses points of the clip flattened as ``frame * N + point``.
    Invalid slots repeat the first slot, which is always a real point.
    """

    anchor_xyzt: np.ndarray  # S + (4,)
    offsets: np.ndarray  # S + (K, 4), neighbour minus anchor
    index: np.ndarray  # S + (K,)
    valid: np.ndarray  # S + (K,)

    @property
    def k(self) -> int:
        return self.index.shape[-1]


def group_tube(anchors: np.ndarray, anchor_frames: np.ndarray, video: np.ndarray, r: float,
               temporal_radius: int = 1, k_max: int = 32, omega=UNIT_OMEGA) -> TubeGroup:
    """Query every anchor against the frames within ``temporal_radius`` of its own.

    ``anchors`` is (B, T', A, 3) with frame ids ``anchor_frames`` (T',) into
    ``video`` (B, T, N, 3); a single clip without the batch axis also works.
    Neighbours from all window frames are merged in (distance, frame, point)
    order and truncated to ``k_max``.
    """
    if video.ndim == 3:
        g = group_tube(anchors[None], anchor_frames, video[None], r, temporal_radius, k_max, omega)
        return TubeGroup(g.anchor_xyzt[0], g.offsets[0], g.index[0], g.valid[0])
    if video.shape[2] == 0:
        raise ValueError("group_tube: clip has empty frames")
    parts = [_group_clip(anchors[i], np.asarray(anchor_frames), video[i], r, temporal_radius, k_max, _scales(omega))
             for i in range(video.shape[0])]
    return TubeGroup(*(np.stack(arrs) for arrs in zip(*parts)))


def _group_clip(anchors, anchor_frames, video, r, temporal_radius, k_max, scales):
    t, n, _ = video.shape
    tq, a, _ = anchors.shape
    video = np.ascontiguousarray(video, np.float64)
    anchors = np.ascontiguousarray(anchors, np.float64)
    frames_in = np.ascontiguousarray(anchor_frames, np.int64)
    scales = np.ascontiguousarray(scales, np.float64)
    idx, count = _kernels.radius_knn(video, anchors, frames_in, float(r), int(temporal_radius), int(k_max), scales)
    rows = tq * a
    idx, count = idx.reshape(rows, k_max), count.reshape(rows)
    valid = np.arange(k_max)[None, :] < count[:, None]

    # anchors without any member fall back to their nearest point in their own frame
    empty = count == 0
    if empty.any():
        own = _kernels.own_frame_nearest(video, anchors, frames_in, scales).reshape(rows)
        idx[empty, 0] = temporal_radius * n + own[empty]
    idx = np.where(valid, idx, idx[:, :1])

    slot_win, point = np.divmod(idx, n)
    row_t = np.arange(rows) // a
    frame = frames_in[row_t][:, None] - temporal_radius + slot_win  # (rows, K)
    anc = anchors.reshape(rows, 3)
    dt = (frame - frames_in[row_t][:, None]).astype(np.float64)
    offsets = np.concatenate([video[frame, point] - anc[:, None, :], dt[..., None]], axis=-1)
    xyzt = np.concatenate([anc, frames_in[row_t][:, None].astype(np.float64)], axis=-1)
    return (xyzt.reshape(tq, a, 4), offsets.reshape(tq, a, k_max, 4),
            (frame * n + point).reshape(tq, a, k_max), valid.reshape(tq, a, k_max))
