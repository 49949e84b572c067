"""Mini-batch SGD with momentum on the fused logits, step learning-rate schedule,
checkpointing and the per-epoch metrics log."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tc
from .data import VideoSet, sample_clip
from .model import ActivePC
from .nn import Parameter

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    base_lr: float = 0.01
    milestones: tuple[int, ...] = (20, 30)
    gamma: float = 0.1
    momentum: float = 0.9
    batch_size: int = 8
    clip_frames: int = 8
    points_per_frame: int = 512
    seed: int = 0
    eval_every: int = 1  # test accuracy every k epochs (and always after the last)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.clip_frames < 1 or self.points_per_frame < 1:
            raise ValueError(f"invalid training config {self}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


def lr_at(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    """Base rate times gamma per milestone already reached."""
    passed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.base_lr * cfg.gamma ** passed


class SGD:
    """Heavy-ball momentum: v <- mu * v + g, p <- p - lr * v."""

    def __init__(self, named_params: list[tuple[str, Parameter]], momentum: float = 0.9):
        self.params = list(named_params)
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad.astype(v.dtype)
            p.data = p.data - np.asarray(lr, p.data.dtype) * v

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 101, epoch])


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_step(model: ActivePC, opt: SGD, clips: np.ndarray, labels: np.ndarray, lr: float,
               batch_ids=None) -> float:
    opt.zero_grad()
    out = model(clips)
    loss = tc.cross_entropy(out.logits, labels)
    value = float(loss.data)
    if not math.isfinite(value):
        ids = list(batch_ids) if batch_ids is not None else "unknown"
        raise TrainingError(f"non-finite loss {value} on batch {ids}")
    loss.backward()
    opt.step(lr)
    return value


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, model: ActivePC, opt: SGD | None = None, epoch: int = 0) -> None:
    arrays = {f"param/{k}": p.data for k, p in model.named_parameters()}
    if opt is not None:
        arrays.update({f"velocity/{k}": v for k, v in opt.velocity.items()})
    arrays["meta/epoch"] = np.array([epoch], np.float32)
    tc.save_tensors(path, arrays)


def load_checkpoint(path, model: ActivePC, opt: SGD | None = None) -> int:
    """Restore parameters (and velocities) in place; returns the stored epoch."""
    arrays = tc.load_tensors(path)
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    own = dict(model.named_parameters())
    missing = [k for k in own if k not in params]
    extra = [k for k in params if k not in own]
    if missing or extra:
        raise tc.CheckpointError(f"{path}: parameter names differ; missing={missing} extra={extra}")
    for k, p in own.items():
        if params[k].shape != p.shape:
            raise tc.CheckpointError(f"{path}: tensor {k} has shape {params[k].shape}, model expects {p.shape}")
    for k, p in own.items():
        p.data = params[k].astype(p.data.dtype)
    if opt is not None:
        for k in opt.velocity:
            v = arrays.get(f"velocity/{k}")
            if v is None:
                raise tc.CheckpointError(f"{path}: no optimizer state for {k}")
            opt.velocity[k] = v.astype(opt.velocity[k].dtype)
    return int(arrays["meta/epoch"][0]) if "meta/epoch" in arrays else 0


# -- loop -----------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_acc: float | None


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_accuracy(self) -> float | None:
        accs = [r.test_acc for r in self.history if r.test_acc is not None]
        return accs[-1] if accs else None


def format_record(r: EpochRecord) -> str:
    acc = "-" if r.test_acc is None else f"{r.test_acc:.4f}"
    return f"{r.epoch}\t{r.lr:.6g}\t{r.train_loss:.6f}\t{acc}"


def fit(model: ActivePC, train: VideoSet, cfg: TrainConfig, test: VideoSet | None = None, metrics_path=None,
        checkpoint_path=None, start_epoch: int = 0, opt: SGD | None = None) -> TrainResult:
    """Train from ``start_epoch`` to ``cfg.epochs``; appends one metrics line per epoch."""
    from .eval import evaluate

    if len(train) == 0:
        raise ValueError("empty training set")
    if opt is None:
        opt = SGD(model.trainable_named_parameters(), cfg.momentum)
    if metrics_path is not None and start_epoch == 0:
        Path(metrics_path).write_text("", encoding="utf-8")
    result = TrainResult()
    t0 = time.perf_counter()
    for epoch in range(start_epoch, cfg.epochs):
        rng = epoch_rng(cfg.seed, epoch)
        lr = lr_at(epoch, cfg)
        losses = []
        for ids in make_batches(len(train), cfg.batch_size, rng):
            clips = np.stack([sample_clip(train.videos[i], cfg.clip_frames, cfg.points_per_frame, rng) for i in ids])
            losses.append(train_step(model, opt, clips, train.labels[ids], lr, batch_ids=ids))
        acc = None
        if test is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            acc = evaluate(model, test, cfg.clip_frames, cfg.points_per_frame, seed=cfg.seed).accuracy
        rec = EpochRecord(epoch, lr, float(np.mean(losses)), acc)
        result.history.append(rec)
        log.info("epoch %d lr %.4g loss %.4f acc %s (%.0fs)", epoch, lr, rec.train_loss,
                 "-" if acc is None else f"{acc:.3f}", time.perf_counter() - t0)
        if metrics_path is not None:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(format_record(rec) + "\n")
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, opt, epoch + 1)
    result.seconds = time.perf_counter() - t0
    return result
