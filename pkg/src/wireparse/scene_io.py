"""Wireframe data model, the JSON annotation format and a synthetic scene generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import GridSpec, point_segment_dist2, segment_segment_distances

DEDUP_TOL = 1e-6


class SceneError(ValueError):
    """Wireframe invariant violation."""


class AnnotationError(SceneError):
    """Unreadable or malformed annotation document."""


@dataclass
class Wireframe:
    """Vectorized scene: junction coordinates (image px) and index pairs."""

    width: int
    height: int
    junctions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __post_init__(self):
        self.junctions = np.asarray(self.junctions, dtype=float).reshape(-1, 2)
        self.segments = np.asarray(self.segments, dtype=int).reshape(-1, 2)

    @property
    def lines(self) -> np.ndarray:
        """Segments as an (N, 4) array of endpoint coordinates."""
        if len(self.segments) == 0:
            return np.zeros((0, 4))
        return np.hstack([self.junctions[self.segments[:, 0]], self.junctions[self.segments[:, 1]]])

    def validate(self, require_used_junctions: bool = True) -> "Wireframe":
        _validate(self, require_used_junctions)
        return self

    @classmethod
    def from_lines(cls, width: int, height: int, lines) -> "Wireframe":
        """Build a wireframe from endpoint coordinates, merging endpoints closer than 1e-6."""
        lines = np.asarray(lines, dtype=float).reshape(-1, 4)
        junctions: list[tuple[float, float]] = []
        segments = []
        for x1, y1, x2, y2 in lines:
            ids = []
            for x, y in ((x1, y1), (x2, y2)):
                for k, (jx, jy) in enumerate(junctions):
                    if math.hypot(jx - x, jy - y) <= DEDUP_TOL:
                        ids.append(k)
                        break
                else:
                    junctions.append((x, y))
                    ids.append(len(junctions) - 1)
            segments.append(ids)
        return cls(width, height, np.array(junctions).reshape(-1, 2), np.array(segments, dtype=int).reshape(-1, 2))


@dataclass
class ScoredWireframe(Wireframe):
    segment_scores: np.ndarray | None = None
    junction_scores: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.segment_scores is None:
            self.segment_scores = np.ones(len(self.segments))
        if self.junction_scores is None:
            self.junction_scores = np.ones(len(self.junctions))
        self.segment_scores = np.asarray(self.segment_scores, dtype=float).reshape(-1)
        self.junction_scores = np.asarray(self.junction_scores, dtype=float).reshape(-1)

    def validate(self, require_used_junctions: bool = False) -> "ScoredWireframe":
        _validate(self, require_used_junctions)
        for name in ("segment_scores", "junction_scores"):
            s = getattr(self, name)
            expected = len(self.segments) if name == "segment_scores" else len(self.junctions)
            if len(s) != expected:
                raise SceneError(f"{name}: expected {expected} entries, got {len(s)}")
            if not np.all(np.isfinite(s)) or np.any((s < 0) | (s > 1)):
                raise SceneError(f"{name}: scores must be finite and within [0, 1]")
        return self


def _validate(wf: Wireframe, require_used_junctions: bool):
    if wf.width <= 0 or wf.height <= 0:
        raise SceneError(f"width/height: must be positive, got {wf.width}x{wf.height}")
    j = wf.junctions
    if not np.all(np.isfinite(j)):
        raise SceneError("junctions: non-finite coordinate")
    outside = (j[:, 0] < 0) | (j[:, 0] >= wf.width) | (j[:, 1] < 0) | (j[:, 1] >= wf.height)
    if np.any(outside):
        k = int(np.flatnonzero(outside)[0])
        raise SceneError(f"junctions[{k}]: {j[k].tolist()} outside the image")
    if len(j) > 1:
        from scipy.spatial import cKDTree

        pairs = cKDTree(j).query_pairs(DEDUP_TOL)
        if pairs:
            a, b = min(pairs)
            raise SceneError(f"junctions[{b}]: duplicates junctions[{a}] within {DEDUP_TOL}")
    s = wf.segments
    if len(s):
        bad = (s < 0) | (s >= len(j))
        if np.any(bad):
            k = int(np.flatnonzero(bad.any(axis=1))[0])
            raise SceneError(f"segments[{k}]: index out of range {s[k].tolist()}")
        same = s[:, 0] == s[:, 1]
        if np.any(same):
            raise SceneError(f"segments[{int(np.flatnonzero(same)[0])}]: j_a == j_b")
    if require_used_junctions:
        used = np.zeros(len(j), dtype=bool)
        used[s.reshape(-1)] = True
        if not used.all():
            raise SceneError(f"junctions[{int(np.flatnonzero(~used)[0])}]: not used by any segment")


def wireframe_from_dict(doc: dict, require_used_junctions: bool = True) -> Wireframe:
    """Parse an annotation document.

    Either ``junctions`` + ``segments`` (index pairs) or ``lines``
    (``[x1, y1, x2, y2]`` rows, endpoints merged within 1e-6) must be present.
    ``segment_scores``/``junction_scores`` make it a :class:`ScoredWireframe`.
    """
    try:
        width, height = int(doc["width"]), int(doc["height"])
        if "lines" in doc and "segments" not in doc:
            wf = Wireframe.from_lines(width, height, doc["lines"])
            junctions, segments = wf.junctions, wf.segments
        else:
            junctions = np.array(doc.get("junctions", []), dtype=float).reshape(-1, 2)
            segments = np.array(doc.get("segments", []), dtype=int).reshape(-1, 2)
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"malformed annotation: {exc}") from exc
    if "segment_scores" in doc or "junction_scores" in doc:
        wf = ScoredWireframe(
            width,
            height,
            junctions,
            segments,
            np.array(doc.get("segment_scores", np.ones(len(segments))), dtype=float),
            np.array(doc.get("junction_scores", np.ones(len(junctions))), dtype=float),
        )
        return wf.validate()
    return Wireframe(width, height, junctions, segments).validate(require_used_junctions)


def wireframe_to_dict(wf: Wireframe) -> dict:
    # float repr round-trips exactly (shortest repr with 17 significant digits max)
    doc = {
        "width": int(wf.width),
        "height": int(wf.height),
        "junctions": [[float(x), float(y)] for x, y in wf.junctions],
        "segments": [[int(a), int(b)] for a, b in wf.segments],
    }
    if isinstance(wf, ScoredWireframe):
        doc["segment_scores"] = [float(s) for s in wf.segment_scores]
        doc["junction_scores"] = [float(s) for s in wf.junction_scores]
    return doc


def load_wireframe(path, require_used_junctions: bool = True) -> Wireframe:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise AnnotationError(f"{path}: expected a JSON object")
    return wireframe_from_dict(doc, require_used_junctions)


def save_wireframe(wf: Wireframe, path) -> None:
    Path(path).write_text(json.dumps(wireframe_to_dict(wf), indent=1) + "\n")


def synth_scene(
    seed: int,
    spec: GridSpec,
    n_segments: int,
    min_len: float = 32.0,
    min_separation: float = 12.0,
    max_len: float | None = None,
    p_shared: float = 0.5,
    quantum: float = 1.0,
    max_tries: int = 2000,
) -> Wireframe:
    """Random wireframe with well separated segments.

    Each new segment starts from an existing junction with probability
    ``p_shared``.  Endpoints lie on a lattice of step ``quantum`` image px.
    Every junction is at least ``min_separation`` from every segment it does
    not belong to, so segments not sharing a junction are at least that far
    apart as well.  No segment passes exactly through a coarse pixel center:
    such pixels have no attraction vector, and on the lattice they would be
    common where real-valued annotations almost never produce them.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    rng = np.random.default_rng(seed)
    W, H = spec.image_w, spec.image_h
    if max_len is None:
        max_len = 0.3 * min(W, H)
    if max_len < min_len:
        raise SceneError(f"max_len {max_len} is below min_len {min_len}")
    margin = quantum

    def sample_point():
        x = rng.uniform(margin, W - margin)
        y = rng.uniform(margin, H - margin)
        return _snap(x, quantum), _snap(y, quantum)

    junctions: list[tuple[float, float]] = []
    segments: list[tuple[int, int]] = []
    jarr = np.zeros((0, 2))
    sarr = np.zeros((0, 4))
    sep2 = min_separation**2

    def far_from_segments(pt):
        return not len(sarr) or point_segment_dist2(pt[0], pt[1], *sarr.T).min() >= sep2

    def far_from_junctions(pt):
        return not len(jarr) or np.hypot(jarr[:, 0] - pt[0], jarr[:, 1] - pt[1]).min() >= min_separation

    tries = 0
    while len(segments) < n_segments:
        tries += 1
        if tries > max_tries * n_segments:
            raise SceneError(
                f"could not place {n_segments} segments (placed {len(segments)}) for seed {seed}"
            )
        if junctions and rng.random() < p_shared:
            start_id = int(rng.integers(len(junctions)))
            start = junctions[start_id]
        else:
            start_id = None
            start = sample_point()
            if not far_from_junctions(start) or not far_from_segments(start):
                continue
        angle = rng.uniform(-math.pi, math.pi)
        length = rng.uniform(min_len, max_len)
        end = (
            _snap(start[0] + length * math.cos(angle), quantum),
            _snap(start[1] + length * math.sin(angle), quantum),
        )
        if not (margin <= end[0] <= W - margin and margin <= end[1] <= H - margin):
            continue
        if math.hypot(end[0] - start[0], end[1] - start[1]) < min_len:
            continue
        if not far_from_junctions(end) or not far_from_segments(end):
            continue
        new = (*start, *end)
        if _hits_pixel_center(new, spec.downsample):
            continue
        # junctions off the new segment must keep their distance; for segments sharing
        # the start junction this covers their far end, all others need full separation
        others = np.ones(len(jarr), dtype=bool)
        if start_id is not None:
            others[start_id] = False
        if others.any() and point_segment_dist2(jarr[others, 0], jarr[others, 1], *new).min() < sep2:
            continue
        if len(sarr):
            seg_ids = np.asarray(segments)
            adjacent = (seg_ids == start_id).any(axis=1) if start_id is not None else np.zeros(len(sarr), bool)
            if (~adjacent).any() and segment_segment_distances(new, sarr[~adjacent]).min() < min_separation:
                continue
        if start_id is None:
            junctions.append(start)
            start_id = len(junctions) - 1
        junctions.append(end)
        segments.append((start_id, len(junctions) - 1))
        jarr = np.asarray(junctions, dtype=float)
        sarr = np.vstack([sarr, new])
    return Wireframe(W, H, np.array(junctions), np.array(segments, dtype=int)).validate()


def _hits_pixel_center(seg, B: int) -> bool:
    """Whether a coarse bin center ``(B*(c+0.5), B*(r+0.5))`` lies exactly on the segment."""
    x1, y1, x2, y2 = seg
    ex, ey = x2 - x1, y2 - y1
    # march along the major axis; the only candidate on the minor axis is the nearest center
    if abs(ex) >= abs(ey):
        a1, a2, b1, ea, eb = x1, x2, y1, ex, ey
    else:
        a1, a2, b1, ea, eb = y1, y2, x1, ey, ex
    if ea == 0:
        return (x1 / B - 0.5) % 1 == 0 and (y1 / B - 0.5) % 1 == 0
    lo, hi = min(a1, a2), max(a1, a2)
    ca = B * (np.arange(math.ceil(lo / B - 0.5), math.floor(hi / B - 0.5) + 1) + 0.5)
    if not len(ca):
        return False
    cb = B * (np.round((b1 + (ca - a1) * eb / ea) / B - 0.5) + 0.5)
    return bool(np.any(ea * (cb - b1) - eb * (ca - a1) == 0))


def _snap(v: float, quantum: float) -> float:
    if quantum <= 0:
        return float(v)
    return float(round(v / quantum) * quantum)
