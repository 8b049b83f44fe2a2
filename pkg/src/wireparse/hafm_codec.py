"""Holistic attraction field maps: wireframe <-> 4-D per-pixel field.

Every coarse pixel attracted by a segment stores ``(d, theta, theta1, theta2)``:
the perpendicular distance to the segment, the image angle of the attraction
vector, and the angles under which the two endpoints are seen in the
canonical frame (pixel at the origin, segment on ``x = 1``).  All geometry is
in coarse-grid units; stored maps are normalized into [0, 1) with the
background sentinel ``(-1, 0, 0, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import (
    GridSpec,
    LineSegment,
    Point,
    canonical_frame_arrays,
    frame_to_endpoints,
    point_segment_dist2,
)
from .proposals import ProposalSet
from .scene_io import Wireframe

BACKGROUND_VECTOR = (-1.0, 0.0, 0.0, 0.0)
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class CodecConfig:
    d_max: float = 5.0

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")


@dataclass
class AttractionFieldMap:
    spec: GridSpec
    channels: np.ndarray  # (4, H', W') normalized

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float)
        if self.channels.shape != (4, *self.spec.shape):
            raise ValueError(f"expected (4, {self.spec.height}, {self.spec.width}) channels")

    @property
    def foreground(self) -> np.ndarray:
        return self.channels[0] >= 0


@dataclass
class ResidualMap:
    spec: GridSpec
    values: np.ndarray  # (H', W') distance residual / d_max

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise ValueError("residual map shape does not match spec")

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ResidualMap":
        return cls(spec, np.zeros(spec.shape))


@dataclass
class SixDMap:
    """Three displacement vectors per pixel: to the foot, to endpoint 1, to endpoint 2."""

    spec: GridSpec
    vectors: np.ndarray  # (6, H', W'): v0x v0y v1x v1y v2x v2y, zero on background
    foreground: np.ndarray


def coarse_lines(wf: Wireframe, spec: GridSpec) -> np.ndarray:
    return wf.lines / spec.downsample


def assign_support(wf: Wireframe, spec: GridSpec, cfg: CodecConfig | None = None) -> np.ndarray:
    """Segment index attracting each coarse pixel, -1 for background.

    Pixels go to the segment with the smallest endpoint-clamped distance
    (lowest index on ties) and are then demoted to background unless that
    segment gives a valid canonical frame with ``d < d_max``.
    """
    cfg = cfg or CodecConfig()
    assign, *_ = _support_frames(wf, spec, cfg)
    return assign


def _support_frames(wf: Wireframe, spec: GridSpec, cfg: CodecConfig):
    px, py = spec.pixel_centers()
    assign = np.full(spec.shape, -1, dtype=int)
    lines = coarse_lines(wf, spec)
    empty = np.zeros(spec.shape)
    if len(lines) == 0:
        return assign, empty, empty, empty, empty, np.zeros(spec.shape, dtype=bool), lines
    x1, y1, x2, y2 = (lines[:, k] for k in range(4))
    best = np.full(spec.shape, np.inf)
    nearest = np.zeros(spec.shape, dtype=int)
    for k in range(len(lines)):
        dk = point_segment_dist2(px, py, x1[k], y1[k], x2[k], y2[k])
        closer = dk < best  # strict: ties keep the lower index
        best[closer] = dk[closer]
        nearest[closer] = k
    # clamped distance >= perpendicular distance, so farther pixels are background anyway
    near = best < cfg.d_max**2
    seg = lines[nearest[near]]
    valid, dn, thn, y1n, y2n, topn = canonical_frame_arrays(
        px[near], py[near], seg[:, 0], seg[:, 1], seg[:, 2], seg[:, 3]
    )
    d, theta, y1c, y2c = (np.zeros(spec.shape) for _ in range(4))
    top_first = np.zeros(spec.shape, dtype=bool)
    d[near], theta[near], y1c[near], y2c[near], top_first[near] = dn, thn, y1n, y2n, topn
    fg = np.zeros(spec.shape, dtype=bool)
    # d == d_max is dropped too so the normalized distance stays below 1
    fg[near] = valid & (dn < cfg.d_max)
    assign[fg] = nearest[fg]
    return assign, d, theta, y1c, y2c, top_first, lines


def encode_samples(wf: Wireframe, spec: GridSpec, cfg: CodecConfig | None = None):
    """Unnormalized field: returns ``(assign, samples)`` with samples (4, H', W').

    Background pixels hold the sentinel ``(-1, 0, 0, 0)``.
    """
    cfg = cfg or CodecConfig()
    assign, d, theta, y1c, y2c, _, _ = _support_frames(wf, spec, cfg)
    fg = assign >= 0
    samples = np.empty((4, *spec.shape))
    samples[:] = np.array(BACKGROUND_VECTOR)[:, None, None]
    samples[0][fg] = d[fg]
    samples[1][fg] = theta[fg]
    samples[2][fg] = np.arctan(y1c[fg])
    samples[3][fg] = np.arctan(y2c[fg])
    return assign, samples


def normalize_samples(samples: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    fg = samples[0] >= 0
    out = np.empty_like(samples)
    out[:] = np.array(BACKGROUND_VECTOR)[:, None, None]
    out[0][fg] = samples[0][fg] / cfg.d_max
    out[1][fg] = samples[1][fg] / (2 * math.pi) + 0.5
    out[2][fg] = 2 * samples[2][fg] / math.pi
    out[3][fg] = -2 * samples[3][fg] / math.pi
    out[:, fg] = np.clip(out[:, fg], 0.0, _BELOW_ONE)
    return out


def denormalize_channels(channels: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    """Map normalized channels back to ``(d, theta, theta1, theta2)``; background kept as is."""
    fg = channels[0] >= 0
    out = np.array(channels, dtype=float, copy=True)
    out[0][fg] = channels[0][fg] * cfg.d_max
    out[1][fg] = (channels[1][fg] - 0.5) * (2 * math.pi)
    out[2][fg] = channels[2][fg] * (math.pi / 2)
    out[3][fg] = -channels[3][fg] * (math.pi / 2)
    return out


def encode(wf: Wireframe, spec: GridSpec, cfg: CodecConfig | None = None) -> AttractionFieldMap:
    cfg = cfg or CodecConfig()
    _, samples = encode_samples(wf, spec, cfg)
    return AttractionFieldMap(spec, normalize_samples(samples, cfg))


def decode_pixels(px, py, d, theta, theta1, theta2) -> np.ndarray:
    """Vectorized closed-form inverse; returns (N, 4) endpoint rows."""
    e = frame_to_endpoints(px, py, d, theta, np.tan(theta1), np.tan(theta2))
    return np.stack(e, axis=-1)


def decode_pixel(px: Point, sample) -> LineSegment:
    d, theta, theta1, theta2 = sample
    return LineSegment.from_array(decode_pixels(px[0], px[1], d, theta, theta1, theta2))


def decode(
    afm: AttractionFieldMap,
    residual: ResidualMap | None = None,
    cfg: CodecConfig | None = None,
) -> ProposalSet:
    """Line segment proposals from every foreground pixel.

    With a residual map each pixel tries ``d + k * residual`` for k in
    (-1, 0, 1) and keeps those with ``0 < d' <= d_max``; a zero residual
    yields a single proposal.
    """
    cfg = cfg or CodecConfig()
    spec = afm.spec
    if residual is not None and residual.spec != spec:
        raise ValueError("residual map spec does not match the field map")
    ch = afm.channels
    rows, cols = np.nonzero(ch[0] >= 0)
    dn = ch[0, rows, cols]
    res = residual.values[rows, cols] if residual is not None else np.zeros_like(dn)

    cand_d, cand_idx = [], []
    for kappa in (-1, 0, 1):
        dk = (dn + kappa * res) * cfg.d_max
        keep = (dk > 0) & (dk <= cfg.d_max)
        if kappa != 0:
            keep &= res != 0
        idx = np.flatnonzero(keep)
        cand_d.append(dk[idx])
        cand_idx.append(idx)
    idx = np.concatenate(cand_idx)
    dk = np.concatenate(cand_d)
    # pixel-major order, then kappa
    order = np.argsort(idx, kind="stable")
    idx, dk = idx[order], dk[order]
    r, c = rows[idx], cols[idx]
    theta = (ch[1, r, c] - 0.5) * (2 * math.pi)
    theta1 = ch[2, r, c] * (math.pi / 2)
    theta2 = -ch[3, r, c] * (math.pi / 2)
    segs = decode_pixels(c + 0.5, r + 0.5, dk, theta, theta1, theta2)
    return ProposalSet(segments=segs, pixels=np.stack([r, c], axis=-1))


def decode_samples(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode an unnormalized field; returns ``(pixels, segments)`` for foreground pixels."""
    rows, cols = np.nonzero(samples[0] >= 0)
    s = samples[:, rows, cols]
    segs = decode_pixels(cols + 0.5, rows + 0.5, s[0], s[1], s[2], s[3])
    return np.stack([rows, cols], axis=-1), segs


def encode_6d(wf: Wireframe, spec: GridSpec, cfg: CodecConfig | None = None) -> SixDMap:
    cfg = cfg or CodecConfig()
    assign, *_, top_first, lines = _support_frames(wf, spec, cfg)
    fg = assign >= 0
    px, py = spec.pixel_centers()
    vectors = np.zeros((6, *spec.shape))
    if fg.any():
        seg = lines[assign[fg]]
        p = np.stack([px[fg], py[fg]], axis=-1)
        first, second = seg[:, :2], seg[:, 2:]
        top = np.where(top_first[fg][:, None], first, second)
        bottom = np.where(top_first[fg][:, None], second, first)
        ex, ey = second[:, 0] - first[:, 0], second[:, 1] - first[:, 1]
        t = ((p[:, 0] - first[:, 0]) * ex + (p[:, 1] - first[:, 1]) * ey) / (ex * ex + ey * ey)
        foot = first + t[:, None] * np.stack([ex, ey], axis=-1)
        for k, target in enumerate((foot, top, bottom)):
            v = target - p
            vectors[2 * k][fg] = v[:, 0]
            vectors[2 * k + 1][fg] = v[:, 1]
    return SixDMap(spec, vectors, fg)


def decode_6d(m: SixDMap) -> ProposalSet:
    rows, cols = np.nonzero(m.foreground)
    px, py = cols + 0.5, rows + 0.5
    v = m.vectors[:, rows, cols]
    segs = np.stack([px + v[2], py + v[3], px + v[4], py + v[5]], axis=-1)
    return ProposalSet(segments=segs, pixels=np.stack([rows, cols], axis=-1))


def residual_gt(gt: AttractionFieldMap, pred: AttractionFieldMap) -> ResidualMap:
    """Absolute normalized distance difference where both maps are foreground."""
    if gt.spec != pred.spec:
        raise ValueError("spec mismatch between ground truth and prediction")
    both = gt.foreground & pred.foreground
    values = np.zeros(gt.spec.shape)
    values[both] = np.abs(gt.channels[0][both] - pred.channels[0][both])
    return ResidualMap(gt.spec, values)
