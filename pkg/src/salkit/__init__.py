"""Segment-aware tooling for partial-spoof audio localisation.

Positional frame labels, cross-segment mixing, frame-level scoring and a
small multi-task reference model.
"""

__version__ = "0.1.0"
