"""Attraction-field wireframe parsing at desk scale."""

from .geom import GridSpec, LineSegment, Point
from .scene_io import ScoredWireframe, Wireframe, load_wireframe, save_wireframe, synth_scene

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "LineSegment", "Point", "ScoredWireframe", "Wireframe",
    "load_wireframe", "save_wireframe", "synth_scene",
]
