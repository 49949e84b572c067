"""Point-tube embedding, per-level transformer encoders and the two recognizer
branches whose logits are averaged into the final score."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .neighborhood import TubeGroup, group_tube
from .nn import MLP, Linear, Module, Parameter, TransformerEncoder
from .sampling import default_layer_specs, mns_frames, retained_frames
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 6
    points_per_frame: int = 512
    widths: tuple[int, int, int] = (64, 128, 256)
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    tube_hidden: int = 32
    k_max: int = 32
    temporal_radius: int = 1
    radii: tuple[float, float, float] = (0.2, 0.4, 0.8)
    candidate_k: tuple[int, int, int] = (32, 32, 32)
    temporal_stride: int = 2
    omega_init: tuple[float, float, float] = (1.0, 1.0, 1.0)
    layered: bool = True  # both recognizers; False keeps only the max-pooled F1 head
    mns: bool = True  # neighbourhood-restricted sampling; False = global fps per level
    eeq: bool = True  # trainable axis scales; False freezes them at omega_init
    seed: int = 0

    def __post_init__(self):
        w = self.widths
        if not (len(w) == 3 and w[0] <= w[1] <= w[2]):
            raise ValueError(f"widths must be three non-decreasing values, got {w}")
        if any(c % self.heads for c in w):
            raise ValueError(f"widths {w} must be divisible by heads={self.heads}")
        if min(self.omega_init) <= 0:
            raise ValueError(f"omega_init must be positive, got {self.omega_init}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def layer_specs(self):
        return default_layer_specs(self.points_per_frame, self.radii, self.candidate_k, self.temporal_stride)

    @property
    def levels(self) -> tuple[int, ...]:
        return (0, 1, 2) if self.layered else (0,)

    @property
    def embedding_width(self) -> int:
        return sum(self.widths[i] for i in self.levels)


@dataclass
class FeatureMap:
    level: int
    tokens: Tensor  # (B, T' * N_l, C_l)
    xyzt: np.ndarray  # (B, T' * N_l, 4)


@dataclass
class ForwardOutput:
    logits: Tensor
    y_human: Tensor
    y_kinematic: Tensor | None
    pooled: list[Tensor] = field(default_factory=list)
    groups: list[TubeGroup] = field(default_factory=list)

    def embedding(self) -> np.ndarray:
        return np.concatenate([p.data for p in self.pooled], axis=-1)


class TubeEmbedding(Module):
    """Shared pointwise MLP over tube slots, max-pooled, plus a learned
    linear position code of the anchor's (x, y, z, t)."""

    in_features = 5  # dx, dy, dz, dt, soft weight

    def __init__(self, hidden: int, width: int, rng: np.random.Generator):
        self.width = width
        self.mlp = MLP([self.in_features, hidden, width], rng)
        self.pos = Linear(4, width, rng)

    def __call__(self, group: TubeGroup, scales: Tensor | None, radius: float, temporal_radius: int,
                 clip_frames: int) -> Tensor:
        """Tokens (B, T' * A, C) for a batched group with leading shape (B, T', A)."""
        b, tq, a, k = group.index.shape
        off = group.offsets.astype(tc.default_dtype())
        sq = off[..., :3] * off[..., :3]
        if scales is None:
            d2 = Tensor(sq[..., 0] + sq[..., 1] + sq[..., 2])
        else:
            d2 = tc.mul(Tensor(sq), scales).sum(axis=-1)
        weight = tc.exp(d2 * (-1.0 / (radius * radius)))  # (B, T', A, K)
        geo = off / np.array([radius, radius, radius, max(temporal_radius, 1)], off.dtype)
        feats = tc.concat([Tensor(geo), weight.reshape(b, tq, a, k, 1)], axis=-1)
        if feats.shape[-1] != self.mlp.layers[0].in_features:
            raise tc.ShapeError(f"tube embedding expects {self.mlp.layers[0].in_features} inputs, got {feats.shape}")
        h = self.mlp(feats).max(axis=3)  # (B, T', A, C)
        if h.shape[-1] != self.width:
            raise tc.ShapeError(f"tube embedding width {h.shape[-1]} != configured {self.width}")
        pos = group.anchor_xyzt.astype(off.dtype).copy()
        pos[..., 3] /= max(clip_frames, 1)
        return (h + self.pos(Tensor(pos))).reshape(b, tq * a, self.width)


def gap(x: Tensor) -> Tensor:
    return x.mean(axis=1)


def gmp(x: Tensor) -> Tensor:
    return x.max(axis=1)


def fuse(y_human, y_kinematic):
    """Elementwise mean of two score vectors (tensors or arrays)."""
    if y_human.shape != y_kinematic.shape:
        raise ValueError(f"fuse: score shapes differ, {y_human.shape} vs {y_kinematic.shape}")
    if isinstance(y_human, Tensor) or isinstance(y_kinematic, Tensor):
        return (tc.as_tensor(y_human) + tc.as_tensor(y_kinematic)) * 0.5
    return (np.asarray(y_human) + np.asarray(y_kinematic)) / 2


class ActivePC(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.log_omega = Parameter(np.log(np.asarray(cfg.omega_init, np.float64)))
        self.embed = [TubeEmbedding(cfg.tube_hidden, cfg.widths[i], rng) for i in cfg.levels]
        self.encoders = [TransformerEncoder(cfg.widths[i], cfg.depth, cfg.heads, cfg.mlp_ratio, rng)
                         for i in cfg.levels]
        self.human_head = MLP([cfg.widths[0], cfg.widths[0], cfg.num_classes], rng)
        if cfg.layered:
            self.kin_heads = [MLP([cfg.widths[i], cfg.widths[i], cfg.num_classes], rng) for i in (1, 2)]
        else:
            self.kin_heads = []
        # metric used for neighbour membership: "ellipse" always, "ball" only for reduction checks
        self.query_metric = "ellipse"

    # -- parameters -------------------------------------------------------
    def trainable_named_parameters(self) -> list[tuple[str, Parameter]]:
        return [(name, p) for name, p in self.named_parameters() if self.cfg.eeq or name != "log_omega"]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for _, p in self.trainable_named_parameters()]

    @property
    def omega(self) -> np.ndarray:
        return np.exp(self.log_omega.data.astype(np.float64))

    # -- pipeline stages ---------------------------------------------------
    def sample(self, clips: np.ndarray):
        """Anchors per level for a (B, T, N, 3) batch; returns (frame ids, [(B, T', N_l, 3)])."""
        b, t, n, _ = clips.shape
        specs = self.cfg.layer_specs
        keep = retained_frames(t, specs[0].temporal_stride)
        out = mns_frames(clips[:, keep].reshape(b * len(keep), n, 3), specs, hierarchical=self.cfg.mns)
        return keep, [a.reshape(b, len(keep), -1, 3) for a in out.anchors]

    def group(self, clips, keep, anchors) -> list[TubeGroup]:
        omega = self.omega if self.query_metric == "ellipse" else None
        groups = []
        for slot, level in enumerate(self.cfg.levels):
            r = self.cfg.radii[level]
            if omega is None:
                groups.append(group_tube(anchors[level], keep, clips, r, self.cfg.temporal_radius, self.cfg.k_max))
            else:
                groups.append(group_tube(anchors[level], keep, clips, r, self.cfg.temporal_radius, self.cfg.k_max,
                                         omega))
            # membership depends on omega discretely
            tc.record_branch(groups[-1].index)
            tc.record_branch(groups[-1].valid)
        return groups

    def embed_tubes(self, groups: list[TubeGroup], clip_frames: int) -> list[FeatureMap]:
        scales = tc.exp(self.log_omega) if self.query_metric == "ellipse" else None
        maps = []
        for slot, level in enumerate(self.cfg.levels):
            g = groups[slot]
            tokens = self.embed[slot](g, scales, self.cfg.radii[level], self.cfg.temporal_radius, clip_frames)
            b = g.index.shape[0]
            maps.append(FeatureMap(level + 1, tokens, g.anchor_xyzt.reshape(b, -1, 4)))
        return maps

    def encode_level(self, fmap: FeatureMap) -> FeatureMap:
        if fmap.tokens.shape[1] == 0:
            raise ValueError(f"level {fmap.level}: no tokens to encode")
        slot = self.cfg.levels.index(fmap.level - 1)
        return FeatureMap(fmap.level, self.encoders[slot](fmap.tokens), fmap.xyzt)

    def human_recognizer(self, f1: FeatureMap) -> tuple[Tensor, Tensor]:
        pooled = gmp(f1.tokens)
        return self.human_head(pooled), pooled

    def kinematic_interpreter(self, f2: FeatureMap, f3: FeatureMap) -> tuple[Tensor, list[Tensor]]:
        p2, p3 = gap(f2.tokens), gap(f3.tokens)
        s2, s3 = self.kin_heads[0](p2), self.kin_heads[1](p3)
        if s2.shape != s3.shape:
            raise ValueError(f"kinematic heads disagree on class count: {s2.shape} vs {s3.shape}")
        return (s2 + s3) * 0.5, [p2, p3]

    # -- full pass ----------------------------------------------------------
    def center(self, clips: np.ndarray) -> np.ndarray:
        clips = np.asarray(clips, np.float64)
        return clips - clips.reshape(len(clips), -1, 3).mean(axis=1)[:, None, None, :]

    def __call__(self, clips: np.ndarray) -> ForwardOutput:
        clips = self.center(clips)
        if clips.ndim != 4 or clips.shape[-1] != 3:
            raise tc.ShapeError(f"expected clips of shape (B, T, N, 3), got {clips.shape}")
        keep, anchors = self.sample(clips)
        groups = self.group(clips, keep, anchors)
        maps = [self.encode_level(m) for m in self.embed_tubes(groups, clips.shape[1])]
        y_hum, p1 = self.human_recognizer(maps[0])
        if not self.cfg.layered:
            return ForwardOutput(y_hum, y_hum, None, [p1], groups)
        y_kin, (p2, p3) = self.kinematic_interpreter(maps[1], maps[2])
        return ForwardOutput(fuse(y_hum, y_kin), y_hum, y_kin, [p1, p2, p3], groups)

    def logits(self, clips: np.ndarray) -> np.ndarray:
        with tc.no_grad():
            return self(clips).logits.data
