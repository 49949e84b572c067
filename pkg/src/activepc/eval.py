"""Video-level evaluation, component ablations, the radius sweep and embedding export."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as tc
from .data import VideoSet, eval_clips
from .model import ActivePC, ModelConfig

log = logging.getLogger(__name__)


def aggregate_video(clip_probs) -> int:
    """Mean of clip probability vectors, then argmax (lowest class on ties)."""
    p = np.asarray(clip_probs, np.float64)
    if p.ndim == 1:
        p = p[None]
    if p.ndim != 2 or len(p) == 0:
        raise ValueError("aggregate_video needs at least one clip probability vector")
    sums = p.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        raise ValueError(f"clip probabilities must sum to 1, got sums {sums.tolist()}")
    return int(np.argmax(p.mean(axis=0)))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class EvalReport:
    predictions: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def confusion(self) -> np.ndarray:
        m = np.zeros((self.num_classes, self.num_classes), np.int64)
        np.add.at(m, (self.labels, self.predictions), 1)
        return m

    @property
    def accuracy(self) -> float:
        """Overall accuracy in percent."""
        c = self.confusion
        return 100.0 * np.trace(c) / c.sum()

    @property
    def per_class(self) -> np.ndarray:
        c = self.confusion
        with np.errstate(invalid="ignore"):
            return 100.0 * np.diag(c) / c.sum(axis=1)


def clip_probabilities(model: ActivePC, clips: np.ndarray, batch_size: int = 16) -> np.ndarray:
    out = []
    for i in range(0, len(clips), batch_size):
        out.append(softmax_np(model.logits(clips[i:i + batch_size])))
    return np.concatenate(out)


def evaluate(model: ActivePC, videos: VideoSet, clip_frames: int, points_per_frame: int, seed: int = 0,
             batch_size: int = 16) -> EvalReport:
    """Classify every video from the average of its clip probabilities."""
    clips, owner = [], []
    for v, video in enumerate(videos.videos):
        c = eval_clips(video, clip_frames, points_per_frame, seed=[seed, 53, v])
        clips.append(c)
        owner.extend([v] * len(c))
    probs = clip_probabilities(model, np.concatenate(clips), batch_size)
    owner = np.array(owner)
    preds = np.array([aggregate_video(probs[owner == v]) for v in range(len(videos))], np.int64)
    return EvalReport(preds, videos.labels.copy(), model.cfg.num_classes,
                      {"frames": clip_frames, "points": points_per_frame})


def pooled_features(model: ActivePC, videos: VideoSet, clip_frames: int, points_per_frame: int, seed: int = 0,
                    batch_size: int = 16) -> np.ndarray:
    """Pre-head pooled features per video, averaged over its evaluation clips."""
    rows = []
    for v, video in enumerate(videos.videos):
        clips = eval_clips(video, clip_frames, points_per_frame, seed=[seed, 53, v])
        feats = []
        with tc.no_grad():
            for i in range(0, len(clips), batch_size):
                feats.append(model(clips[i:i + batch_size]).embedding())
        rows.append(np.concatenate(feats).mean(axis=0))
    return np.stack(rows).astype(np.float32)


EMBED_MAGIC = b"PTVE"
EMBED_VERSION = 1
_EMBED_HEADER = struct.Struct("<4sIII")


def export_embeddings(model: ActivePC, videos: VideoSet, path, clip_frames: int, points_per_frame: int,
                      seed: int = 0) -> np.ndarray:
    """Write ``PTVE`` | version | rows | width (u32), then u32 labels, then f32 rows."""
    feats = pooled_features(model, videos, clip_frames, points_per_frame, seed)
    with open(path, "wb") as fh:
        fh.write(_EMBED_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, feats.shape[0], feats.shape[1]))
        fh.write(np.asarray(videos.labels, "<u4").tobytes())
        fh.write(np.ascontiguousarray(feats, "<f4").tobytes())
    return feats


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, version, rows, width = _EMBED_HEADER.unpack_from(raw)
    if magic != EMBED_MAGIC or version != EMBED_VERSION:
        raise ValueError(f"{path}: not a version {EMBED_VERSION} embedding file")
    off = _EMBED_HEADER.size
    labels = np.frombuffer(raw, "<u4", rows, off).astype(np.int64)
    feats = np.frombuffer(raw, "<f4", rows * width, off + 4 * rows).reshape(rows, width)
    return labels, feats


# -- reports ----------------------------------------------------------------


def write_report(report: EvalReport, out_dir, class_names=None, prefix: str = "eval") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(class_names) if class_names else [str(i) for i in range(report.num_classes)]
    lines = ["class\tcount\taccuracy"]
    counts = report.confusion.sum(axis=1)
    for i, name in enumerate(names):
        lines.append(f"{name}\t{counts[i]}\t{report.per_class[i]:.2f}")
    (out / f"{prefix}_per_class.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    conf = ["true\\pred\t" + "\t".join(names)]
    conf += [names[i] + "\t" + "\t".join(str(v) for v in row) for i, row in enumerate(report.confusion)]
    (out / f"{prefix}_confusion.tsv").write_text("\n".join(conf) + "\n", encoding="utf-8")
    summary = {"accuracy": f"{report.accuracy:.4f}", "videos": len(report.labels), **report.meta}
    write_summary(out / f"{prefix}_summary.txt", summary)


def write_summary(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")


# -- ablation and radius sweep ------------------------------------------------

# (layered recognizers, mns, eeq), in the order of the published component table
ABLATION_ROWS = ((False, False, False), (True, False, False), (True, True, False), (True, False, True),
                 (True, True, True))
# the full model and each single component switched off
SINGLE_OFF_ROWS = ((True, True, True), (False, True, True), (True, False, True), (True, True, False))

SWEEP_RADII = (0.1, 0.2, 0.5, 1.0, 1.5, 2.0)
BASE_RADIUS = 0.2


@dataclass
class CellResult:
    label: str
    flags: dict
    accuracy: float | None
    error: str | None = None


def _train_and_score(model_cfg: ModelConfig, train_cfg, train: VideoSet, test: VideoSet, label: str,
                     flags: dict) -> CellResult:
    from .trainer import TrainingError, fit

    model = ActivePC(model_cfg)
    try:
        fit(model, train, replace(train_cfg, eval_every=max(train_cfg.epochs, 1)))
    except TrainingError as exc:
        log.warning("%s failed: %s", label, exc)
        return CellResult(label, flags, None, str(exc))
    acc = evaluate(model, test, train_cfg.clip_frames, train_cfg.points_per_frame, seed=train_cfg.seed).accuracy
    log.info("%s: %.2f%%", label, acc)
    return CellResult(label, flags, acc)


_CELL_DATA: dict = {}


def _init_worker(train, test):
    _CELL_DATA["train"], _CELL_DATA["test"] = train, test


def _cell_job(job):
    model_cfg, train_cfg, label, flags = job
    return _train_and_score(model_cfg, train_cfg, _CELL_DATA["train"], _CELL_DATA["test"], label, flags)


def run_cells(jobs, train: VideoSet, test: VideoSet, workers: int = 1) -> list[CellResult]:
    """Train and score independent (model config, train config, label, flags) cells."""
    if workers <= 1 or len(jobs) <= 1:
        return [_train_and_score(m, t, train, test, label, flags) for m, t, label, flags in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(train, test)) as pool:
        return list(pool.map(_cell_job, jobs))


def run_ablation(model_cfg: ModelConfig, train_cfg, train: VideoSet, test: VideoSet, rows=ABLATION_ROWS,
                 workers: int = 1) -> list[CellResult]:
    """Train one model per toggle row under the same seed, data order and budget."""
    jobs = []
    for layered, mns, eeq in rows:
        flags = {"layered": layered, "mns": mns, "eeq": eeq}
        label = " ".join(f"{k}={'on' if v else 'off'}" for k, v in flags.items())
        jobs.append((replace(model_cfg, layered=layered, mns=mns, eeq=eeq), train_cfg, label, flags))
    return run_cells(jobs, train, test, workers)


def scaled_radii(model_cfg: ModelConfig, r: float) -> tuple[float, float, float]:
    factor = r / BASE_RADIUS  # exactly 1.0 at the base radius
    return tuple(float(x * factor) for x in model_cfg.radii)


@dataclass
class SweepResult:
    radii: tuple[float, ...]
    accuracy: dict  # eeq flag -> list of accuracies (None for failed cells)

    def variance(self, eeq: bool, ddof: int = 1) -> float | None:
        row = self.accuracy[eeq]
        if any(a is None for a in row) or len(row) <= ddof:
            return None
        return float(np.var(np.asarray(row, np.float64), ddof=ddof))

    @property
    def variance_ratio(self) -> float | None:
        on, off = self.variance(True), self.variance(False)
        if on is None or off is None or off == 0:
            return None
        return on / off


def radius_sweep(model_cfg: ModelConfig, train_cfg, train: VideoSet, test: VideoSet, radii=SWEEP_RADII,
                 eeq_values=(False, True), workers: int = 1) -> SweepResult:
    """Accuracy per (r, eeq) cell; every level's radius is scaled by r / 0.2."""
    jobs = [(replace(model_cfg, eeq=eeq, radii=scaled_radii(model_cfg, r)), train_cfg,
             f"r={r:g} eeq={'on' if eeq else 'off'}", {"r": r, "eeq": eeq})
            for eeq in eeq_values for r in radii]
    cells = run_cells(jobs, train, test, workers)
    acc = {eeq: [c.accuracy for c in cells if c.flags["eeq"] == eeq] for eeq in eeq_values}
    return SweepResult(tuple(radii), acc)


def write_ablation(results: list[CellResult], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["layered\tmns\teeq\taccuracy"]
    for c in results:
        acc = "failed" if c.accuracy is None else f"{c.accuracy:.2f}"
        lines.append("\t".join("on" if c.flags[k] else "off" for k in ("layered", "mns", "eeq")) + f"\t{acc}")
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_summary(out / "ablation_summary.txt", {c.label.replace(" ", ","): c.accuracy for c in results})


def write_sweep(result: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["eeq\t" + "\t".join(f"{r:g}" for r in result.radii) + "\tvariance"]
    for eeq, row in result.accuracy.items():
        cells = ["absent" if a is None else f"{a:.2f}" for a in row]
        var = result.variance(eeq)
        lines.append(("on" if eeq else "off") + "\t" + "\t".join(cells) + "\t" + ("-" if var is None else f"{var:.4f}"))
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_summary(out / "sweep_summary.txt", {
        "variance_eeq_off": result.variance(False) if False in result.accuracy else None,
        "variance_eeq_on": result.variance(True) if True in result.accuracy else None,
        "variance_ratio": result.variance_ratio if len(result.accuracy) == 2 else None,
    })
