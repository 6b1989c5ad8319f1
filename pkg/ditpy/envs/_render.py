"""Pure-numpy disc rasterizer used by the synthetic cameras."""
import dataclasses
from typing import Sequence, Tuple

import numpy as np

__all__ = ["Disc", "View", "rasterize"]


@dataclasses.dataclass(frozen=True)
class Disc:
    center: Tuple[float, float]
    radius: float
    color: Tuple[float, float, float]
    inner_radius: float = 0.0  # > 0 draws a ring


@dataclasses.dataclass(frozen=True)
class View:
    """Square window of world coordinates centered at ``center`` with side ``span``."""

    center: Tuple[float, float]
    span: float


def rasterize(discs: Sequence[Disc], view: View, size: int = 32) -> np.ndarray:
    """Draw ``discs`` in order (later ones on top) into a ``(3, size, size)`` image.

    Row 0 is the top of the view (largest y).
    """
    cx, cy = view.center
    half = view.span / 2
    coords = (np.arange(size) + 0.5) / size * view.span
    xs = cx - half + coords
    ys = cy + half - coords
    gx, gy = np.meshgrid(xs, ys)

    image = np.zeros((3, size, size), dtype=np.float32)
    for disc in discs:
        d = np.hypot(gx - disc.center[0], gy - disc.center[1])
        inside = (d <= disc.radius) & (d >= disc.inner_radius)
        for c in range(3):
            image[c][inside] = disc.color[c]
    return image
