"""Farthest point sampling and the multilevel neighbourhood sampling hierarchy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .neighborhood import euclidean


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    level: int
    n_points: int
    radius: float
    candidate_k: int = 32
    temporal_stride: int = 2

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"level {self.level}: radius must be > 0, got {self.radius}")
        if self.candidate_k < 1:
            raise ValueError(f"level {self.level}: candidate_k must be >= 1, got {self.candidate_k}")
        if self.n_points < 1:
            raise ValueError(f"level {self.level}: n_points must be >= 1, got {self.n_points}")


DEFAULT_RADII = (0.2, 0.4, 0.8)
DEFAULT_CANDIDATE_K = (32, 32, 32)
LEVEL_DIVISORS = (4, 16, 32)


def default_layer_specs(points_per_frame: int, radii=DEFAULT_RADII, candidate_k=DEFAULT_CANDIDATE_K,
                        temporal_stride: int = 2) -> tuple[LayerSpec, LayerSpec, LayerSpec]:
    """N/4, N/16, N/32 anchors per frame at the three levels."""
    return tuple(
        LayerSpec(level=i + 1, n_points=max(1, points_per_frame // d), radius=float(r), candidate_k=int(k),
                  temporal_stride=temporal_stride)
        for i, (d, r, k) in enumerate(zip(LEVEL_DIVISORS, radii, candidate_k))
    )


def fps(points, count: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    points = np.asarray(points, np.float64)
    m = len(points)
    if not 1 <= count <= m:
        raise SamplingError(f"fps: count must be in [1, {m}], got {count}")
    if not 0 <= seed_index < m:
        raise SamplingError(f"fps: seed_index {seed_index} outside [0, {m})")
    return fps_batch(points[None], count, np.array([seed_index]))[0]


def fps_batch(points: np.ndarray, count: int, seed: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Row-wise fps over (R, M, 3) with an optional (R, M) candidate mask.

    Every row must have at least ``count`` candidates and a candidate seed.
    """
    points = np.ascontiguousarray(points, np.float64)
    r, m, _ = points.shape
    if valid is None:
        valid = np.ones((r, m), bool)
    else:
        have = valid.sum(axis=1)
        if (have < count).any():
            raise SamplingError(f"fps: need {count} candidates, row has {int(have.min())}")
    seed = np.ascontiguousarray(np.broadcast_to(np.asarray(seed, np.int64), (r,)))
    return _kernels.fps_rows(points, np.ascontiguousarray(valid), int(count), seed)


def centroid_seed(points: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Index of the point nearest each row's centroid (lowest index on ties)."""
    points = np.asarray(points, np.float64)
    if valid is None:
        c = points.mean(axis=1, keepdims=True)
        return np.argmin(euclidean(points - c), axis=1)
    frame_c = points.mean(axis=1, keepdims=True)
    d = np.where(valid, euclidean(points - frame_c), np.inf)
    return np.argmin(d, axis=1)


@dataclass
class MnsOutput:
    """Anchors per level for the retained frames of one clip.

    ``index[l]`` holds point indices into the frame, ``parent[l]`` the
    position of the parent anchor within level l-1 (-1 at level 1).
    """

    frame_ids: np.ndarray
    anchors: list[np.ndarray] = field(default_factory=list)  # (T', N_l, 3)
    index: list[np.ndarray] = field(default_factory=list)  # (T', N_l)
    parent: list[np.ndarray] = field(default_factory=list)  # (T', N_l)
    candidates: list[np.ndarray] = field(default_factory=list)  # (T', N) bool, candidate set per level
    relaxed: list[bool] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.anchors)


def retained_frames(num_frames: int, stride: int) -> np.ndarray:
    return np.arange(0, num_frames, stride)


def _neighbourhood_union(frames: np.ndarray, prev_idx: np.ndarray, radius: float, k: int) -> np.ndarray:
    """Candidate mask (F, N) from radius-``radius``, at-most-``k`` balls around previous anchors."""
    f, n, _ = frames.shape
    rows = np.arange(f)[:, None]
    centres = np.ascontiguousarray(frames[rows, prev_idx])  # (F, P, 3)
    idx, cnt = _kernels.radius_knn(frames, centres, np.arange(f), float(radius), 0, int(k), np.ones(3))
    ok = np.arange(k) < cnt[..., None]
    mask = np.zeros((f, n), bool)
    fi = np.broadcast_to(rows[:, :, None], idx.shape)
    mask[fi[ok], idx[ok]] = True
    return mask


def mns_frames(frames: np.ndarray, specs, hierarchical: bool = True, seed_index=None) -> MnsOutput:
    """Run the level hierarchy independently on each frame of (F, N, 3).

    ``hierarchical=False`` replaces the neighbourhood-restricted candidate sets
    with independent global fps per level.
    """
    frames = np.ascontiguousarray(frames, np.float64)
    f, n, _ = frames.shape
    out = MnsOutput(frame_ids=np.arange(f))
    if n < specs[0].n_points:
        raise SamplingError(f"mns: frames have {n} points, level 1 needs {specs[0].n_points}")
    rows = np.arange(f)[:, None]
    seed = centroid_seed(frames) if seed_index is None else np.broadcast_to(np.asarray(seed_index), (f,))
    idx = fps_batch(frames, specs[0].n_points, seed)
    out.anchors.append(frames[rows, idx])
    out.index.append(idx)
    out.parent.append(np.full(idx.shape, -1, np.int64))
    out.candidates.append(np.ones((f, n), bool))
    out.relaxed.append(False)

    for spec in specs[1:]:
        prev = out.index[-1]
        if not hierarchical:
            if n < spec.n_points:
                raise SamplingError(f"mns level {spec.level}: {n} points < {spec.n_points}")
            idx = fps_batch(frames, spec.n_points, centroid_seed(frames))
            dist = euclidean(frames[rows, idx][:, :, None, :] - frames[rows, prev][:, None, :, :])
            out.anchors.append(frames[rows, idx])
            out.index.append(idx)
            out.parent.append(np.argmin(dist, axis=2))
            out.candidates.append(np.ones((f, n), bool))
            out.relaxed.append(False)
            continue

        radius = spec.radius
        cand = _neighbourhood_union(frames, prev, radius, spec.candidate_k)
        relaxed = False
        if (cand.sum(axis=1) < spec.n_points).any():
            radius = 2 * spec.radius
            cand = _neighbourhood_union(frames, prev, radius, spec.candidate_k)
            relaxed = True
            counts = cand.sum(axis=1)
            if (counts < spec.n_points).any():
                bad = int(np.argmin(counts))
                raise SamplingError(
                    f"mns level {spec.level}: frame {bad} has {int(counts[bad])} candidates within "
                    f"{radius:g} m (relaxed from {spec.radius:g}), needs {spec.n_points}")
        idx = fps_batch(frames, spec.n_points, centroid_seed(frames, cand), valid=cand)
        # parent: nearest previous anchor whose neighbourhood admitted the point
        d_to_prev = euclidean(frames[rows, idx][:, :, None, :] - frames[rows, prev][:, None, :, :])  # (F, N_l, P)
        d_to_prev = np.where(d_to_prev <= radius, d_to_prev, np.inf)
        out.anchors.append(frames[rows, idx])
        out.index.append(idx)
        out.parent.append(np.argmin(d_to_prev, axis=2))
        out.candidates.append(cand)
        out.relaxed.append(relaxed)
    return out


def mns(video, specs, hierarchical: bool = True, seed_index=None) -> MnsOutput:
    """Multilevel neighbourhood sampling of a (T, N, 3) clip on every ``stride``-th frame."""
    video = np.asarray(video)
    keep = retained_frames(len(video), specs[0].temporal_stride)
    out = mns_frames(video[keep], specs, hierarchical, seed_index)
    out.frame_ids = keep
    return out
