from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ProposalSet:
    """Line segment and junction proposals flowing through refinement and verification.

    ``segments`` are (N, 4) endpoint rows in the coarse frame, ``pixels`` the
    (row, col) of the field-map pixel each one was decoded from, ``scores`` a
    per-segment placeholder filled by verification.  ``junctions`` are image-px
    positions with their mask scores; ``pairs`` holds junction indices once
    segments have been matched.
    """

    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    scores: np.ndarray | None = None
    junctions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    junction_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pairs: np.ndarray | None = None

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        self.pixels = np.asarray(self.pixels, dtype=int).reshape(-1, 2)
        if self.scores is None:
            self.scores = np.zeros(len(self.segments))
        self.junctions = np.asarray(self.junctions, dtype=float).reshape(-1, 2)
        self.junction_scores = np.asarray(self.junction_scores, dtype=float).reshape(-1)
        if self.pairs is not None:
            self.pairs = np.asarray(self.pairs, dtype=int).reshape(-1, 2)
        if not (np.all(np.isfinite(self.segments)) and np.all(np.isfinite(self.junctions))):
            raise ValueError("proposal coordinates must be finite")

    def __len__(self):
        return len(self.segments)
