"""Procedural robot-view point-cloud action videos.

A 15-joint humanoid is animated from a (base motion, gesture) label, skinned
with capsules and scanned by a simulated rotating LiDAR on a 0.1 x 0.2 degree
angular grid from a jittering sensor.  Clips are written in a small binary
format together with a tab-separated manifest.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sampling import centroid_seed, fps_batch

log = logging.getLogger(__name__)

FRAME_RATE = 10.0
H_FOV_DEG = 120.0
H_RES_DEG = 0.1
V_FOV_DEG = 25.4
V_RES_DEG = 0.2
RANGE_NOISE = 0.02
MIN_DISTANCE, MAX_DISTANCE = 3.0, 50.0
IDLE_SWAY = 0.02  # m per frame, upper bound on joint motion when nothing happens

BASE_MOTIONS = ("stand", "walk-toward", "walk-lateral")
GESTURES = ("no-gesture", "wave")
DEFAULT_CLASSES = tuple(f"{b}+{g}" for b in BASE_MOTIONS for g in GESTURES)

JOINTS = ("head", "neck", "pelvis",
          "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
          "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle")
J = {name: i for i, name in enumerate(JOINTS)}
ARM_JOINTS = frozenset(J[n] for n in ("l_elbow", "l_wrist", "r_elbow", "r_wrist"))

# (joint a, joint b, radius in m at unit body scale)
CAPSULES = (
    ("head", "head", 0.11),
    ("neck", "pelvis", 0.15),
    ("l_shoulder", "l_elbow", 0.05), ("l_elbow", "l_wrist", 0.04),
    ("r_shoulder", "r_elbow", 0.05), ("r_elbow", "r_wrist", 0.04),
    ("l_hip", "l_knee", 0.07), ("l_knee", "l_ankle", 0.055),
    ("r_hip", "r_knee", 0.07), ("r_knee", "r_ankle", 0.055),
)


class GenerationError(RuntimeError):
    pass


def parse_class(name: str) -> tuple[str, str]:
    base, _, gesture = name.partition("+")
    if base not in BASE_MOTIONS or gesture not in GESTURES:
        raise ValueError(f"unknown class {name!r}; expected <{'|'.join(BASE_MOTIONS)}>+<{'|'.join(GESTURES)}>")
    return base, gesture


@dataclass(frozen=True)
class SceneSpec:
    class_name: str = "stand+no-gesture"
    distance: float = 10.0  # m, sensor to pelvis at the first frame
    azimuth: float = 0.0  # deg, bearing of the subject in the sensor frame
    duration: int = 24  # frames at 10 Hz
    speed: float = 1.2  # m/s when walking
    body_scale: float = 1.0
    heading_jitter: float = 0.0  # deg, deviation of the walking direction
    lateral_sign: int = 1
    wave_hz: float = 1.5
    gait_hz: float = 0.9
    sensor_height: float = 1.0
    height_jitter: float = 0.02  # m, per-frame std
    pitch_jitter: float = 0.5  # deg, per-frame std
    platform_velocity: float = 0.0  # m/s along the sensor's forward axis
    clutter: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        parse_class(self.class_name)
        if not MIN_DISTANCE <= self.distance <= MAX_DISTANCE:
            raise ValueError(f"distance {self.distance} outside [{MIN_DISTANCE}, {MAX_DISTANCE}] m")
        if self.duration < 1:
            raise ValueError("duration must be >= 1 frame")

    @property
    def base(self) -> str:
        return parse_class(self.class_name)[0]

    @property
    def gesture(self) -> str:
        return parse_class(self.class_name)[1]


# -- skeleton ---------------------------------------------------------------


def _rest_pose(scale: float) -> dict[str, np.ndarray]:
    """Local frame: x forward, y left, z up, pelvis above the origin."""
    s = scale
    return {
        "pelvis": np.array([0.0, 0.0, 0.95 * s]),
        "neck": np.array([0.0, 0.0, 1.50 * s]),
        "head": np.array([0.0, 0.0, 1.63 * s]),
        "l_shoulder": np.array([0.0, 0.19 * s, 1.45 * s]),
        "r_shoulder": np.array([0.0, -0.19 * s, 1.45 * s]),
        "l_hip": np.array([0.0, 0.10 * s, 0.95 * s]),
        "r_hip": np.array([0.0, -0.10 * s, 0.95 * s]),
    }


def _limb(root: np.ndarray, lengths: tuple[float, float], swing: float, bend: float, down=np.array([0.0, 0.0, -1.0]), fwd=np.array([1.0, 0.0, 0.0])):
    """Two-bone chain hanging along ``down`` rotated by ``swing`` towards ``fwd``;
    the second bone bends by ``bend`` further."""
    d1 = np.cos(swing) * down + np.sin(swing) * fwd
    d2 = np.cos(swing + bend) * down + np.sin(swing + bend) * fwd
    mid = root + lengths[0] * d1
    return mid, mid + lengths[1] * d2


def animate(spec: SceneSpec) -> np.ndarray:
    """World-space joint positions (frames, 15, 3); the sensor stands at the origin."""
    rng = np.random.default_rng([spec.rng_seed, 1])
    s = spec.body_scale
    upper, fore = 0.30 * s, 0.27 * s
    thigh, shin = 0.45 * s, 0.45 * s
    t = np.arange(spec.duration) / FRAME_RATE
    base, gesture = spec.base, spec.gesture

    bearing = np.deg2rad(spec.azimuth)
    to_sensor = -np.array([np.cos(bearing), np.sin(bearing), 0.0])
    start = spec.distance * -to_sensor
    jitter = np.deg2rad(spec.heading_jitter)
    if base == "walk-toward":
        direction = _rotz(to_sensor, jitter)
    elif base == "walk-lateral":
        direction = _rotz(to_sensor, spec.lateral_sign * np.pi / 2 + jitter)
    else:
        direction = _rotz(to_sensor, jitter)
    facing = direction
    speed = spec.speed if base != "stand" else 0.0
    sway_phase = rng.uniform(0, 2 * np.pi)
    gait_phase = rng.uniform(0, 2 * np.pi)
    wave_phase = rng.uniform(0, 2 * np.pi)

    left = _rotz(facing, np.pi / 2)
    frames = np.empty((len(t), len(JOINTS), 3))
    for i, ti in enumerate(t):
        sway = 0.01 * np.sin(2 * np.pi * 0.3 * ti + sway_phase)
        pose = _rest_pose(s)
        if base == "stand":
            hip_swing = arm_swing = 0.0
            knee = (0.0, 0.0)
        else:
            ph = 2 * np.pi * spec.gait_hz * ti + gait_phase
            hip_swing = np.deg2rad(25.0) * np.sin(ph)
            arm_swing = np.deg2rad(18.0) * np.sin(ph)
            # knees flex backwards during each leg's swing phase
            knee = tuple(-np.deg2rad(35.0) * max(0.0, np.sin(ph + sign * np.pi / 2)) for sign in (1, -1))
        local = dict(pose)
        local["l_knee"], local["l_ankle"] = _limb(pose["l_hip"], (thigh, shin), hip_swing, knee[0])
        local["r_knee"], local["r_ankle"] = _limb(pose["r_hip"], (thigh, shin), -hip_swing, knee[1])
        local["l_elbow"], local["l_wrist"] = _limb(pose["l_shoulder"], (upper, fore), -arm_swing, 0.15)
        if gesture == "wave":
            # raised arm pivoting in the frontal plane; wrist sweeps +-0.3 m sideways
            amp = np.arcsin(min(1.0, 0.3 / (upper + fore)))
            ang = np.deg2rad(20.0) + amp * np.sin(2 * np.pi * spec.wave_hz * ti + wave_phase)
            up = np.array([0.0, 0.0, 1.0])
            out = np.array([0.0, -1.0, 0.0])
            d = np.cos(ang) * up + np.sin(ang) * out
            local["r_elbow"] = pose["r_shoulder"] + upper * d
            local["r_wrist"] = local["r_elbow"] + fore * d
        else:
            local["r_elbow"], local["r_wrist"] = _limb(pose["r_shoulder"], (upper, fore), arm_swing, 0.15)

        root = start + direction * speed * ti + left * sway
        for name, p in local.items():
            world = root + p[0] * facing + p[1] * left + np.array([0.0, 0.0, p[2]])
            frames[i, J[name]] = world
    return frames


def _rotz(v: np.ndarray, ang: float) -> np.ndarray:
    c, s = np.cos(ang), np.sin(ang)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])


# -- lidar ------------------------------------------------------------------


def _ray_capsules(dirs: np.ndarray, caps_a: np.ndarray, caps_b: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """First-hit distance of unit rays from the origin against capsules; inf on miss."""
    best = np.full(len(dirs), np.inf)
    for a, b, rad in zip(caps_a, caps_b, radii):
        ba = b - a
        oa = -a
        baba = ba @ ba
        bard = dirs @ ba
        baoa = ba @ oa
        rdoa = dirs @ oa
        oaoa = oa @ oa
        hit = np.full(len(dirs), np.inf)
        if baba > 1e-12:
            k2 = baba - bard * bard
            k1 = baba * rdoa - baoa * bard
            k0 = baba * oaoa - baoa * baoa - rad * rad * baba
            h = k1 * k1 - k2 * k0
            ok = (h >= 0) & (k2 > 1e-12)
            tt = np.where(ok, (-k1 - np.sqrt(np.where(ok, h, 0))) / np.where(ok, k2, 1), np.inf)
            y = baoa + tt * bard
            body = ok & (y > 0) & (y < baba) & (tt > 0)
            hit = np.where(body, tt, hit)
        for c in (a, b):
            oc = -c
            bb = dirs @ oc
            cc = oc @ oc - rad * rad
            hh = bb * bb - cc
            ts = np.where(hh > 0, -bb - np.sqrt(np.where(hh > 0, hh, 0)), np.inf)
            hit = np.minimum(hit, np.where(ts > 0, ts, np.inf))
        best = np.minimum(best, hit)
    return best


def _grid_axes():
    h = np.deg2rad(np.arange(-H_FOV_DEG / 2, H_FOV_DEG / 2, H_RES_DEG))
    n_v = int(round(V_FOV_DEG / V_RES_DEG)) + 1
    v = np.deg2rad(-V_FOV_DEG / 2 + V_RES_DEG * np.arange(n_v))
    return h, v


H_ANGLES, V_ANGLES = _grid_axes()


def scan_frame(joints: np.ndarray, sensor_pos: np.ndarray, pitch: float, body_scale: float = 1.0,
               noise: np.random.Generator | None = None) -> np.ndarray:
    """Points (M, 3) in the sensor frame from one LiDAR sweep over a posed body."""
    c, s = np.cos(pitch), np.sin(pitch)
    # world -> sensor: translate, then undo the pitch about the sensor's y axis
    rot = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]).T
    local = (joints - sensor_pos) @ rot.T
    a = np.array([local[J[x]] for x, _, _ in CAPSULES])
    b = np.array([local[J[y]] for _, y, _ in CAPSULES])
    radii = np.array([r for _, _, r in CAPSULES]) * body_scale

    # angular window that can contain hits
    ends = np.concatenate([a, b])
    pad = radii.max()
    az = np.arctan2(ends[:, 1], ends[:, 0])
    rng_xy = np.hypot(ends[:, 0], ends[:, 1])
    el = np.arctan2(ends[:, 2], rng_xy)
    margin = np.arcsin(np.clip(pad / np.maximum(np.linalg.norm(ends, axis=1), pad + 1e-6), 0, 1))
    h_lo, h_hi = (az - margin).min(), (az + margin).max()
    v_lo, v_hi = (el - margin).min(), (el + margin).max()
    if h_lo < H_ANGLES[0] or h_hi > H_ANGLES[-1]:
        raise GenerationError("subject leaves the 120 degree horizontal field of view")
    hs = H_ANGLES[(H_ANGLES >= h_lo) & (H_ANGLES <= h_hi)]
    vs = V_ANGLES[(V_ANGLES >= v_lo) & (V_ANGLES <= v_hi)]
    if len(hs) == 0 or len(vs) == 0:
        return np.zeros((0, 3))
    hh, vv = np.meshgrid(hs, vs)
    dirs = np.stack([np.cos(vv) * np.cos(hh), np.cos(vv) * np.sin(hh), np.sin(vv)], axis=-1).reshape(-1, 3)
    dist = _ray_capsules(dirs, a, b, radii)
    hit = np.isfinite(dist)
    rng_ = dist[hit]
    if noise is not None:
        rng_ = rng_ + noise.normal(0.0, RANGE_NOISE, rng_.shape)
    return dirs[hit] * rng_[:, None]


def lidar_sample(poses: np.ndarray, spec: SceneSpec) -> list[np.ndarray]:
    """Scan each frame of a pose sequence; returns one (M_t, 3) float32 array per frame."""
    rng = np.random.default_rng([spec.rng_seed, 2])
    frames = []
    for i, joints in enumerate(poses):
        h = spec.sensor_height + rng.normal(0.0, spec.height_jitter) if spec.height_jitter else spec.sensor_height
        p = np.deg2rad(rng.normal(0.0, spec.pitch_jitter)) if spec.pitch_jitter else 0.0
        pos = np.array([spec.platform_velocity * i / FRAME_RATE, 0.0, h])
        try:
            pts = scan_frame(joints, pos, p, spec.body_scale, rng)
        except GenerationError as exc:
            raise GenerationError(f"frame {i}: {exc}") from None
        if spec.clutter:
            pts = np.concatenate([pts, _clutter(rng, pos, p, joints)])
        if len(pts) == 0:
            raise GenerationError(f"frame {i}: no LiDAR returns (target out of view)")
        frames.append(pts.astype(np.float32))
    return frames


def _clutter(rng, sensor_pos, pitch, joints):
    """Ground returns around the subject's feet plus sparse floating noise, sensor frame."""
    centre = joints[J["pelvis"]].copy()
    n = int(rng.integers(20, 60))
    ground = np.column_stack([centre[0] + rng.uniform(-2, 2, n), centre[1] + rng.uniform(-2, 2, n), np.zeros(n)])
    noise = centre + rng.normal(0, 1.5, (8, 3))
    pts = np.concatenate([ground, noise]) - sensor_pos
    c, s = np.cos(pitch), np.sin(pitch)
    rot = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]).T
    return pts @ rot.T


def resample_frame(points: np.ndarray, budget: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Bring a frame to exactly ``budget`` points.

    Sparse frames keep every point once and fill up with random duplicates;
    dense frames are reduced with farthest point sampling.  Returns the
    points and a mask marking duplicated slots.
    """
    m = len(points)
    if m == 0:
        raise GenerationError("cannot resample an empty frame")
    if m >= budget:
        idx = fps_batch(points[None], budget, centroid_seed(points[None]))[0] if m > budget else np.arange(m)
        return points[idx], np.zeros(budget, bool)
    extra = rng.integers(0, m, budget - m)
    idx = np.concatenate([np.arange(m), extra])
    dup = np.zeros(budget, bool)
    dup[m:] = True
    return points[idx], dup


# -- files ------------------------------------------------------------------

CLIP_MAGIC = b"PTVC"
CLIP_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class ClipFormatError(ValueError):
    pass


@dataclass
class Clip:
    class_id: int
    subject_id: int
    frames: np.ndarray  # (T, N, 3) float32

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def points_per_frame(self) -> int:
        return self.frames.shape[1]


def write_clip(path, clip: Clip) -> None:
    frames = np.ascontiguousarray(clip.frames, dtype="<f4")
    t, n, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, clip.class_id, clip.subject_id, t, n))
        fh.write(frames.tobytes())


def read_clip_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ClipFormatError(f"{path}: truncated header")
    magic, version, cls, subj, t, n = _HEADER.unpack(raw)
    if magic != CLIP_MAGIC:
        raise ClipFormatError(f"{path}: bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise ClipFormatError(f"{path}: unsupported version {version}")
    return {"class_id": cls, "subject_id": subj, "frame_count": t, "points_per_frame": n}


def read_clip(path) -> Clip:
    head = read_clip_header(path)
    t, n = head["frame_count"], head["points_per_frame"]
    raw = Path(path).read_bytes()[_HEADER.size:]
    if len(raw) != t * n * 12:
        raise ClipFormatError(f"{path}: payload has {len(raw)} bytes, header implies {t * n * 12}")
    frames = np.frombuffer(raw, "<f4").reshape(t, n, 3).astype(np.float32)
    return Clip(head["class_id"], head["subject_id"], frames)


@dataclass
class ManifestEntry:
    path: str
    class_id: int
    subject_id: int
    split: str


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.path}\t{e.class_id}\t{e.subject_id}\t{e.split}\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ClipFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        entries.append(ManifestEntry(parts[0], int(parts[1]), int(parts[2]), parts[3]))
    return entries


# -- dataset ----------------------------------------------------------------


@dataclass
class DatasetConfig:
    classes: tuple[str, ...] = DEFAULT_CLASSES
    samples_per_class: int = 100
    subjects_train: int = 20
    subjects_test: int = 10
    points_per_frame: int = 768
    duration: int = 24
    distance_range: tuple[float, float] = (MIN_DISTANCE, MAX_DISTANCE)
    height_jitter: float = 0.02
    pitch_jitter: float = 0.5
    platform_speed_max: float = 0.0
    clutter: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in self.classes:
            parse_class(name)
        if self.samples_per_class < 1:
            raise ValueError("every class needs at least one sample (samples_per_class >= 1)")
        lo, hi = self.distance_range
        if not MIN_DISTANCE <= lo <= hi <= MAX_DISTANCE:
            raise ValueError(f"distance_range {self.distance_range} outside [{MIN_DISTANCE}, {MAX_DISTANCE}]")


@dataclass
class Subject:
    subject_id: int
    body_scale: float
    speed: float
    gait_hz: float
    wave_hz: float


def make_subject(seed: int, subject_id: int) -> Subject:
    rng = np.random.default_rng([seed, 7, subject_id])
    return Subject(subject_id, float(rng.uniform(0.9, 1.1)), float(rng.uniform(1.0, 1.4)),
                   float(rng.uniform(0.8, 1.0)), float(rng.uniform(1.3, 1.7)))


def scene_specs(cfg: DatasetConfig) -> list[tuple[SceneSpec, int, str]]:
    """Deterministic (spec, subject id, split) triples for the whole dataset."""
    n_subjects = cfg.subjects_train + cfg.subjects_test
    total = len(cfg.classes) * cfg.samples_per_class
    out = []
    for i in range(total):
        class_id = i % len(cfg.classes)
        subject_id = i * n_subjects // total
        subj = make_subject(cfg.seed, subject_id)
        rng = np.random.default_rng([cfg.seed, 11, i])
        name = cfg.classes[class_id]
        base = parse_class(name)[0]
        lo, hi = cfg.distance_range
        travel = subj.speed * cfg.duration / FRAME_RATE if base == "walk-toward" else 0.0
        lo = min(max(lo, MIN_DISTANCE + travel), hi)
        for _attempt in range(100):
            spec = SceneSpec(
                class_name=name,
                distance=float(rng.uniform(lo, hi)),
                azimuth=float(rng.uniform(-35.0, 35.0)),
                duration=cfg.duration,
                speed=subj.speed,
                body_scale=subj.body_scale,
                heading_jitter=float(rng.uniform(-15.0, 15.0)),
                lateral_sign=int(rng.choice([-1, 1])),
                wave_hz=subj.wave_hz,
                gait_hz=subj.gait_hz,
                height_jitter=cfg.height_jitter,
                pitch_jitter=cfg.pitch_jitter,
                platform_velocity=float(rng.uniform(-cfg.platform_speed_max, cfg.platform_speed_max)),
                clutter=cfg.clutter,
                rng_seed=int(rng.integers(2**31)),
            )
            if in_view(animate(spec)):
                break
        else:
            raise GenerationError(f"clip {i}: no in-view scene found for {name}")
        split = "train" if subject_id < cfg.subjects_train else "test"
        out.append((spec, subject_id, split))
    return out


def in_view(poses: np.ndarray, margin_deg: float = 8.0) -> bool:
    """Whether every joint stays inside the horizontal field of view (with margin) and in range."""
    bearing = np.degrees(np.arctan2(poses[..., 1], poses[..., 0]))
    ground = np.hypot(poses[..., 0], poses[..., 1])
    return bool((np.abs(bearing) <= H_FOV_DEG / 2 - margin_deg).all() and (ground >= 1.0).all())


def render_clip(spec: SceneSpec, points_per_frame: int) -> np.ndarray:
    poses = animate(spec)
    raw = lidar_sample(poses, spec)
    rng = np.random.default_rng([spec.rng_seed, 3])
    return np.stack([resample_frame(f, points_per_frame, rng)[0] for f in raw]).astype(np.float32)


@dataclass
class DatasetSummary:
    root: Path
    counts: dict[str, int] = field(default_factory=dict)
    per_class: dict[int, int] = field(default_factory=dict)


def _render_job(args):
    spec, subject_id, split, cfg_ppf, class_id, path = args
    write_clip(path, Clip(class_id, subject_id, render_clip(spec, cfg_ppf)))
    return path


def make_dataset(cfg: DatasetConfig, root, workers: int = 1) -> DatasetSummary:
    """Render every clip under ``root/clips`` and write ``root/manifest.tsv``."""
    root = Path(root)
    try:
        (root / "clips").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    jobs, entries = [], []
    for i, (spec, subject_id, split) in enumerate(scene_specs(cfg)):
        rel = f"clips/{i:05d}.ptvc"
        class_id = cfg.classes.index(spec.class_name)
        jobs.append((spec, subject_id, split, cfg.points_per_frame, class_id, root / rel))
        entries.append(ManifestEntry(rel, class_id, subject_id, split))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_render_job, jobs, chunksize=8))
    else:
        for k, job in enumerate(jobs):
            _render_job(job)
            if (k + 1) % 100 == 0:
                log.info("rendered %d/%d clips", k + 1, len(jobs))
    write_manifest(root / "manifest.tsv", entries)
    summary = DatasetSummary(root)
    for e in entries:
        summary.counts[e.split] = summary.counts.get(e.split, 0) + 1
        summary.per_class[e.class_id] = summary.per_class.get(e.class_id, 0) + 1
    return summary
