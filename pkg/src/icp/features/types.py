"""Shared feature types."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Keypoint:
    """Detected interest point, image frame, origin top-left.

    x is the column coordinate, y the row; scale is the detection sigma in
    pixels of the original image; orientation is radians in [0, 2*pi).
    """

    x: float
    y: float
    scale: float
    orientation: float
    response: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.scale, self.orientation, self.response)
