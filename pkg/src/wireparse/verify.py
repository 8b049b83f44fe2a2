"""Proposal verification: line-of-interest pooling, labels, sampling and the reference scorer."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .container import read_grid, write_grid
from .geom import GridSpec
from .hafm_codec import AttractionFieldMap
from .junction_codec import JunctionMaps
from .scene_io import Wireframe


@dataclass(frozen=True)
class VerifyConfig:
    s: int = 32
    pool_window: int = 4
    eta: float = 1.5  # coarse px
    n: int = 300

    def __post_init__(self):
        if self.s < 2 or self.pool_window < 1 or self.s % self.pool_window:
            raise ValueError("need s >= 2 and pool_window dividing s")
        if not self.eta > 0 or self.n < 1:
            raise ValueError("eta must be positive and n >= 1")

    @property
    def feature_len_per_channel(self) -> int:
        return self.s // self.pool_window


@dataclass
class FeatureMap:
    spec: GridSpec
    channels: np.ndarray  # (C, H', W')

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float)
        if self.channels.ndim != 3 or self.channels.shape[1:] != self.spec.shape or len(self.channels) < 1:
            raise ValueError("feature map must be (C, H', W') with C >= 1")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("feature map contains non-finite values")


@dataclass
class LabeledProposal:
    segment: np.ndarray  # (4,) coarse frame
    label: bool
    origin: str  # matched | gt_augment | junction_pair_negative | file_negative


def oracle_features(afm: AttractionFieldMap, junctions: JunctionMaps) -> FeatureMap:
    """Stack of the field map channels and the junction maps (7 channels)."""
    return FeatureMap(afm.spec, np.concatenate([afm.channels, junctions.stack()]))


def segment_distance(a, b) -> float:
    """Max endpoint distance under the endpoint pairing with the smaller summed distance."""
    return float(segment_distances(np.asarray(a, float)[None], np.asarray(b, float)[None])[0, 0])


def segment_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise :func:`segment_distance` between (N, 4) and (M, 4) arrays."""
    a = np.asarray(a, float).reshape(-1, 4)[:, None, :]
    b = np.asarray(b, float).reshape(-1, 4)[None, :, :]

    def dist(p, q):
        return np.hypot(p[..., 0] - q[..., 0], p[..., 1] - q[..., 1])

    d11 = dist(a[..., :2], b[..., :2])
    d22 = dist(a[..., 2:], b[..., 2:])
    d12 = dist(a[..., :2], b[..., 2:])
    d21 = dist(a[..., 2:], b[..., :2])
    direct = d11 + d22 <= d12 + d21
    return np.where(direct, np.maximum(d11, d22), np.maximum(d12, d21))


def assign_labels(segments: np.ndarray, gt: Wireframe, spec: GridSpec, cfg: VerifyConfig | None = None) -> list[LabeledProposal]:
    cfg = cfg or VerifyConfig()
    segments = np.asarray(segments, float).reshape(-1, 4)
    gt_lines = gt.lines / spec.downsample
    if len(gt_lines) == 0:
        labels = np.zeros(len(segments), dtype=bool)
    else:
        labels = segment_distances(segments, gt_lines).min(axis=1) < cfg.eta
    return [LabeledProposal(s, bool(l), "matched") for s, l in zip(segments, labels)]


def junction_pair_negatives(gt: Wireframe, spec: GridSpec, eta: float) -> np.ndarray:
    """Segments between GT junction pairs that are not GT segments and stay >= eta from all of them."""
    gt_pairs = {tuple(sorted(map(int, p))) for p in gt.segments}
    cands = [p for p in itertools.combinations(range(len(gt.junctions)), 2) if p not in gt_pairs]
    if not cands:
        return np.zeros((0, 4))
    idx = np.array(cands)
    j = gt.junctions / spec.downsample
    segs = np.hstack([j[idx[:, 0]], j[idx[:, 1]]])
    gt_lines = gt.lines / spec.downsample
    if len(gt_lines):
        segs = segs[segment_distances(segs, gt_lines).min(axis=1) >= eta]
    return segs


def augment_samples(
    labeled: list[LabeledProposal],
    gt: Wireframe,
    spec: GridSpec,
    cfg: VerifyConfig | None = None,
    negatives_file: Wireframe | None = None,
    seed: int = 0,
) -> tuple[list[LabeledProposal], list[LabeledProposal]]:
    """Augment the matched proposals and draw ``n`` samples per class.

    Draws are without replacement when a class holds at least ``n`` entries
    and with replacement otherwise.
    """
    cfg = cfg or VerifyConfig()
    pos = [p for p in labeled if p.label]
    neg = [p for p in labeled if not p.label]
    pos += [LabeledProposal(s, True, "gt_augment") for s in gt.lines / spec.downsample]
    neg += [LabeledProposal(s, False, "junction_pair_negative") for s in junction_pair_negatives(gt, spec, cfg.eta)]
    if negatives_file is not None:
        neg += [LabeledProposal(s, False, "file_negative") for s in negatives_file.lines / spec.downsample]
    rng = np.random.default_rng(seed)

    def draw(items):
        if not items:
            return []
        idx = rng.choice(len(items), size=cfg.n, replace=len(items) < cfg.n)
        return [items[i] for i in idx]

    return draw(pos), draw(neg)


def bilinear_sample(channels: np.ndarray, x, y) -> np.ndarray:
    """Sample (C, H, W) at index coordinates (value of cell (r, c) sits at x=c, y=r).

    Coordinates are clamped to the grid; returns (C, *x.shape).
    """
    C, H, W = channels.shape
    x = np.clip(np.asarray(x, float), 0, W - 1)
    y = np.clip(np.asarray(y, float), 0, H - 1)
    x0 = np.minimum(np.floor(x).astype(int), W - 2) if W > 1 else np.zeros(x.shape, int)
    y0 = np.minimum(np.floor(y).astype(int), H - 2) if H > 1 else np.zeros(y.shape, int)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    v00 = channels[:, y0, x0]
    v01 = channels[:, y0, x1]
    v10 = channels[:, y1, x0]
    v11 = channels[:, y1, x1]
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy


def loi_points(segments: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray]:
    segments = np.asarray(segments, float).reshape(-1, 4)
    t = np.arange(s) / (s - 1)
    xs = segments[:, :1] + t * (segments[:, 2:3] - segments[:, :1])
    ys = segments[:, 1:2] + t * (segments[:, 3:4] - segments[:, 1:2])
    return xs, ys


def loi_pool_batch(segments: np.ndarray, f: FeatureMap, cfg: VerifyConfig | None = None) -> np.ndarray:
    """Features for (N, 4) coarse-frame segments; returns (N, C * s / pool_window)."""
    cfg = cfg or VerifyConfig()
    xs, ys = loi_points(segments, cfg.s)
    # coarse coordinates put bin centers at +0.5
    vals = bilinear_sample(f.channels, xs - 0.5, ys - 0.5)  # (C, N, s)
    C, N, _ = vals.shape
    pooled = vals.reshape(C, N, cfg.s // cfg.pool_window, cfg.pool_window).max(axis=-1)
    return pooled.transpose(1, 0, 2).reshape(N, -1)


def loi_pool(seg, f: FeatureMap, cfg: VerifyConfig | None = None) -> np.ndarray:
    seg = seg.as_array() if hasattr(seg, "as_array") else np.asarray(seg, float)
    return loi_pool_batch(seg[None], f, cfg)[0]


class Scorer(Protocol):
    input_dim: int

    def score(self, features: np.ndarray) -> np.ndarray: ...


def _sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * z))


@dataclass
class MLPScorer:
    """fc -> ReLU -> fc -> sigmoid on standardized inputs."""

    w1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float
    mean: np.ndarray  # (D,)
    std: np.ndarray  # (D,)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden: int = 32) -> "MLPScorer":
        return cls(np.zeros((input_dim, hidden)), np.zeros(hidden), np.zeros(hidden), 0.0,
                   np.zeros(input_dim), np.ones(input_dim))

    def _check(self, x):
        x = np.asarray(x, float)
        if x.ndim == 1:
            x = x[None]
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} features, got {x.shape[-1]}")
        return x

    def logits(self, x):
        xn = (self._check(x) - self.mean) / self.std
        return np.maximum(xn @ self.w1 + self.b1, 0) @ self.w2 + self.b2

    def score(self, features: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(features))

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, np.atleast_1d(np.asarray(self.b2, float))]

    def loss_and_grads(self, x, y) -> tuple[float, list[np.ndarray]]:
        """Mean binary cross-entropy and its gradient w.r.t. (w1, b1, w2, b2)."""
        xn = (self._check(x) - self.mean) / self.std
        y = np.asarray(y, float)
        z1 = xn @ self.w1 + self.b1
        h = np.maximum(z1, 0)
        z2 = h @ self.w2 + self.b2
        n = len(y)
        # softplus(z) - y*z, stable
        loss = float(np.mean(np.logaddexp(0, z2) - y * z2))
        dz2 = (_sigmoid(z2) - y) / n
        gw2 = h.T @ dz2
        gb2 = np.array([dz2.sum()])
        dz1 = np.outer(dz2, self.w2) * (z1 > 0)
        gw1 = xn.T @ dz1
        gb1 = dz1.sum(axis=0)
        return loss, [gw1, gb1, gw2, gb2]

    def save(self, path) -> None:
        D, H = self.w1.shape
        flat = np.concatenate([[D, H], self.mean, self.std, self.w1.ravel(), self.b1, self.w2, [self.b2]])
        write_grid(path, flat, None, dtype=np.float64)

    @classmethod
    def load(cls, path) -> "MLPScorer":
        flat, _ = read_grid(path)
        D, H = int(flat[0]), int(flat[1])
        parts = np.split(flat[2:], np.cumsum([D, D, D * H, H, H]))
        if len(parts[-1]) != 1:
            raise ValueError(f"{path}: scorer payload has wrong size")
        mean, std, w1, b1, w2, b2 = parts
        return cls(w1.reshape(D, H), b1, w2, float(b2[0]), mean, std)


def train_reference_scorer(
    features: np.ndarray,
    labels: np.ndarray,
    seed: int = 0,
    epochs: int = 800,
    hidden: int = 32,
    lr: float = 0.2,
    momentum: float = 0.9,
) -> MLPScorer:
    """Full-batch gradient descent (heavy-ball momentum) on binary cross-entropy."""
    x = np.asarray(features, float)
    y = np.asarray(labels, float)
    if len(x) == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(seed)
    D = x.shape[1]
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-6)
    model = MLPScorer(
        rng.normal(0, np.sqrt(2.0 / D), (D, hidden)),
        np.zeros(hidden),
        rng.normal(0, np.sqrt(1.0 / hidden), hidden),
        0.0,
        mean,
        std,
    )
    velocity = [np.zeros_like(p) for p in model.params()]
    for _ in range(epochs):
        _, grads = model.loss_and_grads(x, y)
        params = model.params()
        for p, v, g in zip(params, velocity, grads):
            v *= momentum
            v -= lr * g
            p += v
        model.b2 = float(params[3][0])
    return model
