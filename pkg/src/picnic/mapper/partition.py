"""Split weight matrices into PE-sized tiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TileGrid:
    rows: int          # tiles along the matrix's first dimension
    cols: int          # tiles along the second dimension
    tile: int
    shape: tuple[int, int]

    @property
    def count(self) -> int:
        return self.rows * self.cols


def partition(rows: int, cols: int, tile: int = 256) -> TileGrid:
    if rows <= 0 or cols <= 0:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    return TileGrid(-(-rows // tile), -(-cols // tile), tile, (rows, cols))


def split(matrix: np.ndarray, tile: int) -> tuple[TileGrid, np.ndarray]:
    """Zero-pad ``matrix`` and return its tiles as ``tiles[i, j]`` blocks."""
    grid = partition(*matrix.shape, tile)
    padded = np.zeros((grid.rows * tile, grid.cols * tile), dtype=matrix.dtype)
    padded[:matrix.shape[0], :matrix.shape[1]] = matrix
    tiles = padded.reshape(grid.rows, tile, grid.cols, tile).swapaxes(1, 2)
    return grid, tiles


def tiled_matvec(matrix: np.ndarray, x: np.ndarray, tile: int) -> np.ndarray:
    """``matrix.T @ x`` computed tile by tile on the padded grid."""
    grid, tiles = split(matrix, tile)
    xp = np.zeros(grid.rows * tile, dtype=np.result_type(matrix, x))
    xp[:len(x)] = x
    out = np.zeros(grid.cols * tile, dtype=xp.dtype)
    for i in range(grid.rows):
        for j in range(grid.cols):
            out[j * tile:(j + 1) * tile] += tiles[i, j].T @ xp[i * tile:(i + 1) * tile]
    return out[:matrix.shape[1]]
