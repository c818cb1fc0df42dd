"""Randomly shifted nested grids over the input ball.

A tree covers [-radius, radius]^d with levels 0..log2(radius); the grid
length at level l is radius / 2^l, so the bottom level has unit cells. The
shift is one uniform draw in [0, radius) per dimension, shared by all
levels, which keeps the levels nested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import check_in_ball


def round_up_pow2(x: float) -> int:
    if x <= 1:
        return 1
    return 1 << math.ceil(math.log2(x))


@dataclass(frozen=True)
class Cell:
    tree: int
    level: int
    coords: tuple[int, ...]

    def key(self) -> tuple:
        return (self.tree, self.level) + self.coords

    def packed(self) -> int:
        """Bit-packed coordinate id, unique within (tree, level)."""
        bits = self.level + 2
        out = 0
        for c in self.coords:
            out = (out << bits) | c
        return out


class ShiftedQuadtree:
    """One randomly shifted grid hierarchy.

    radius must be a power of two (callers round up); levels() returns
    log2(radius) + 1 nested grids indexed 0 (coarsest) to log2(radius)
    (unit cells).
    """

    def __init__(self, radius: float, dim: int, rng: np.random.Generator, index: int = 0):
        r = round_up_pow2(radius)
        if r != radius:
            raise ValueError("radius must be a power of two; round up first")
        self.radius = float(r)
        self.dim = int(dim)
        self.index = int(index)
        self.num_levels = int(math.log2(r)) + 1
        self.shift = rng.uniform(0.0, self.radius, size=self.dim)
        # grid length per level, level 0 = radius, bottom = 1
        self.grid_lengths = self.radius / (2.0 ** np.arange(self.num_levels))

    def max_level(self) -> int:
        return self.num_levels - 1

    def cell_coords(self, x: np.ndarray) -> np.ndarray:
        """Integer cell coordinates of x for every level, shape (levels, dim)."""
        x = np.asarray(x, dtype=float)
        shifted = x + self.shift + self.radius
        return np.floor(shifted[None, :] / self.grid_lengths[:, None]).astype(np.int64)

    def cell_of(self, x: np.ndarray, level: int) -> Cell:
        if not 0 <= level <= self.max_level():
            raise ValueError(f"level {level} out of range")
        x = np.asarray(x, dtype=float)
        check_in_ball(x, self.radius)
        shifted = x + self.shift + self.radius
        coords = np.floor(shifted / self.grid_lengths[level]).astype(np.int64)
        return Cell(self.index, level, tuple(int(c) for c in coords))

    def centerpoint(self, cell: Cell) -> np.ndarray:
        """Geometric center of the cell box, clipped into the ball."""
        length = self.grid_lengths[cell.level]
        center = (np.asarray(cell.coords, dtype=float) + 0.5) * length
        center = center - self.shift - self.radius
        norm = float(np.linalg.norm(center))
        if norm > self.radius:
            center = center * (self.radius / norm)
        return center
