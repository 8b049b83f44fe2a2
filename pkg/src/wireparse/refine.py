"""Coupling line segment proposals with junction proposals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .proposals import ProposalSet

__all__ = ["MatchConfig", "ProposalSet", "match"]


@dataclass(frozen=True)
class MatchConfig:
    tau: float = 10.0  # coarse px

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def _nearest(points: np.ndarray, junctions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((points[:, None, :] - junctions[None, :, :]) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)  # first minimum -> lowest junction index on ties
    return idx, np.sqrt(d2[np.arange(len(points)), idx])


def match(proposals: ProposalSet, cfg: MatchConfig | None = None, downsample: int = 1) -> ProposalSet:
    """Keep segments whose endpoints both snap to distinct junctions within ``tau``.

    Segments live in the coarse frame; junction positions are image px and
    are divided by ``downsample`` for matching.  Kept endpoints are replaced by
    the junction positions, junction pairs are deduplicated (smallest total
    endpoint displacement wins) and junctions without a segment are dropped.
    """
    cfg = cfg or MatchConfig()
    segs = proposals.segments
    junc = proposals.junctions / downsample
    if len(segs) == 0 or len(junc) == 0:
        return ProposalSet(junctions=np.zeros((0, 2)), junction_scores=np.zeros(0), pairs=np.zeros((0, 2)))

    # chunked to bound the (N, M) distance matrix
    ia, da, ib, db = (np.empty(len(segs), dtype=t) for t in (int, float, int, float))
    step = max(1, 2_000_000 // max(len(junc), 1))
    for s in range(0, len(segs), step):
        sl = slice(s, s + step)
        ia[sl], da[sl] = _nearest(segs[sl, :2], junc)
        ib[sl], db[sl] = _nearest(segs[sl, 2:], junc)

    keep = (da <= cfg.tau) & (db <= cfg.tau) & (ia != ib)
    kept = np.flatnonzero(keep)
    lo, hi = np.minimum(ia[kept], ib[kept]), np.maximum(ia[kept], ib[kept])
    cost = da[kept] + db[kept]
    # per unordered pair, smallest displacement then first occurrence
    order = np.lexsort((kept, cost, hi, lo))
    lo, hi, kept = lo[order], hi[order], kept[order]
    first = np.ones(len(kept), dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    survivors = kept[first]
    survivors.sort()

    pa, pb = ia[survivors], ib[survivors]
    used = np.unique(np.concatenate([pa, pb]))
    remap = np.full(len(junc), -1, dtype=int)
    remap[used] = np.arange(len(used))
    pairs = np.stack([remap[pa], remap[pb]], axis=-1)
    new_junc = proposals.junctions[used]
    coarse = new_junc / downsample
    new_segs = np.hstack([coarse[pairs[:, 0]], coarse[pairs[:, 1]]]) if len(pairs) else np.zeros((0, 4))
    return ProposalSet(
        segments=new_segs,
        pixels=proposals.pixels[survivors],
        scores=proposals.scores[survivors],
        junctions=new_junc,
        junction_scores=proposals.junction_scores[used],
        pairs=pairs,
    )
