"""Loading dataset splits and cutting fixed-size clips out of videos."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synthdata import ClipFormatError, read_clip, read_manifest


@dataclass
class VideoSet:
    """Videos of one split held in memory."""

    videos: list[np.ndarray]  # each (L, M, 3) float32
    labels: np.ndarray
    subjects: np.ndarray
    paths: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.videos)

    def subset(self, idx) -> VideoSet:
        idx = list(idx)
        return VideoSet([self.videos[i] for i in idx], self.labels[idx], self.subjects[idx],
                        [self.paths[i] for i in idx] if self.paths else [])


def load_split(root, split: str, manifest: str = "manifest.tsv") -> VideoSet:
    root = Path(root)
    path = root / manifest
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    videos, labels, subjects, paths = [], [], [], []
    for e in read_manifest(path):
        if e.split != split:
            continue
        try:
            clip = read_clip(root / e.path)
        except (OSError, ClipFormatError) as exc:
            raise ClipFormatError(f"{root / e.path}: {exc}") from exc
        if clip.class_id != e.class_id:
            raise ClipFormatError(f"{root / e.path}: class {clip.class_id} disagrees with manifest {e.class_id}")
        videos.append(clip.frames)
        labels.append(e.class_id)
        subjects.append(e.subject_id)
        paths.append(e.path)
    if not videos:
        raise ValueError(f"split {split!r} is empty in {path}")
    return VideoSet(videos, np.array(labels, np.int64), np.array(subjects, np.int64), paths)


def subsample_points(frame: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points of a frame, kept in original order; duplicates only when the frame is short."""
    m = len(frame)
    if m >= n:
        return frame[np.sort(rng.choice(m, n, replace=False))]
    return frame[np.concatenate([np.arange(m), rng.integers(0, m, n - m)])]


def _frames(video: np.ndarray, start: int, t: int) -> np.ndarray:
    return video[(start + np.arange(t)) % len(video)]


def sample_clip(video: np.ndarray, t: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Training clip: random crop of ``t`` consecutive frames (wrapping when the
    video is short) and an independent random point subset per frame."""
    if len(video) < 1:
        raise ValueError("video has no frames")
    start = int(rng.integers(0, max(len(video) - t, 0) + 1))
    return np.stack([subsample_points(f, n, rng) for f in _frames(video, start, t)])


def eval_offsets(length: int, t: int) -> list[int]:
    """Non-overlapping clip starts 0, t, 2t, ... covering the whole video."""
    if length < 1:
        raise ValueError("video has no frames")
    return list(range(0, length, t))


def eval_clips(video: np.ndarray, t: int, n: int, seed=0) -> np.ndarray:
    """All evaluation clips of a video, (C, t, n, 3); the point subset is a fixed
    function of ``seed`` so repeated evaluation sees identical inputs."""
    rng = np.random.default_rng(seed)
    return np.stack([np.stack([subsample_points(f, n, rng) for f in _frames(video, s, t)])
                     for s in eval_offsets(len(video), t)])
