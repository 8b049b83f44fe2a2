"""Junction mask/offset maps and their decoding with 3x3 NMS and top-K."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .geom import GridSpec
from .scene_io import Wireframe

DEFAULT_K = 300


@dataclass
class JunctionMaps:
    spec: GridSpec
    mask: np.ndarray  # (H', W') in [0, 1]
    offset: np.ndarray  # (2, H', W'), (dx, dy) in bin units, [-1/2, 1/2)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.mask.shape != self.spec.shape or self.offset.shape != (2, *self.spec.shape):
            raise ValueError("junction map shapes do not match spec")

    def stack(self) -> np.ndarray:
        return np.concatenate([self.mask[None], self.offset])

    @classmethod
    def from_stack(cls, spec: GridSpec, values: np.ndarray) -> "JunctionMaps":
        return cls(spec, values[0], values[1:3])


@dataclass
class JunctionProposal:
    position: tuple[float, float]  # image px
    score: float
    bin: tuple[int, int]  # (row, col)


def encode_junctions(wf: Wireframe, spec: GridSpec) -> JunctionMaps:
    """Binary mask plus offset ``(p - bin_center) / B`` of the junction in each bin.

    When several junctions fall in one bin the one closest to the center wins.
    """
    B = spec.downsample
    mask = np.zeros(spec.shape)
    offset = np.zeros((2, *spec.shape))
    best = np.full(spec.shape, np.inf)
    for x, y in wf.junctions:
        col = min(int(np.floor(x / B)), spec.width - 1)
        row = min(int(np.floor(y / B)), spec.height - 1)
        ox = (x - (col + 0.5) * B) / B
        oy = (y - (row + 0.5) * B) / B
        dist = ox * ox + oy * oy
        if dist < best[row, col]:
            best[row, col] = dist
            mask[row, col] = 1.0
            offset[:, row, col] = ox, oy
    return JunctionMaps(spec, mask, offset)


def nms3x3(mask: np.ndarray) -> np.ndarray:
    """Zero every value that is not the maximum of its 3x3 neighbourhood (plateaus kept)."""
    mask = np.asarray(mask, dtype=float)
    peak = maximum_filter(mask, size=3, mode="constant", cval=-np.inf)
    return np.where(mask == peak, mask, 0.0)


def decode_junctions(maps: JunctionMaps, k: int = DEFAULT_K, w: float | None = None) -> list[JunctionProposal]:
    if k < 1:
        raise ValueError("k must be >= 1")
    spec = maps.spec
    w = spec.downsample if w is None else w
    scores = nms3x3(maps.mask).reshape(-1)
    # stable sort on -score keeps row-major order among ties
    order = np.argsort(-scores, kind="stable")[:k]
    order = order[scores[order] > 0]
    out = []
    B = spec.downsample
    for flat in order:
        row, col = divmod(int(flat), spec.width)
        cx, cy = (col + 0.5) * B, (row + 0.5) * B
        pos = (cx + maps.offset[0, row, col] * w, cy + maps.offset[1, row, col] * w)
        out.append(JunctionProposal((float(pos[0]), float(pos[1])), float(scores[flat]), (row, col)))
    return out


def proposals_to_arrays(props: list[JunctionProposal]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([p.position for p in props], dtype=float).reshape(-1, 2)
    score = np.array([p.score for p in props], dtype=float)
    return pos, score
