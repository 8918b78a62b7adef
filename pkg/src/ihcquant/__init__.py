"""Whole-slide immunohistochemistry quantification toolkit.

Turns tiled slide images (or externally produced per-pixel probability
maps) into classified cell detections, tumor proportion scores, and
rater-agreement statistics, with a synthetic slide generator for
end-to-end verification.
"""

__version__ = "0.1.0"
