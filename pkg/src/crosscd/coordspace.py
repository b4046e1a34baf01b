"""Grid coordinates in the unit square [0, 1]^2.

Every raster (query grid, feature level, edge map) is laid over the same
continuous square; cell ``(h, w)`` of an ``H x W`` grid sits at its center
``(1/(2H) + h/H, 1/(2W) + w/W)``. All math is float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PE_BANDS = 6
PE_DIM = 2 * PE_BANDS * 2  # two axes, (sin, cos) per band


@dataclass(frozen=True)
class GridSpec:
    height_cells: int
    width_cells: int

    def __post_init__(self):
        if int(self.height_cells) < 1 or int(self.width_cells) < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.height_cells}x{self.width_cells}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_cells, self.width_cells)


@dataclass(frozen=True)
class CellIndex:
    row: int
    col: int


def _check_index(grid: GridSpec, index: CellIndex):
    if not (0 <= index.row < grid.height_cells and 0 <= index.col < grid.width_cells):
        raise ValueError(f"cell {index} outside grid {grid.shape}")


def axis_centers(n: int) -> np.ndarray:
    """Centers of the ``n`` cells along one axis."""
    idx = np.arange(n, dtype=np.float64)
    return (2.0 * idx + 1.0) / (2.0 * n)


def cell_center(grid: GridSpec, index: CellIndex) -> tuple[float, float]:
    _check_index(grid, index)
    u = (2 * index.row + 1) / (2 * grid.height_cells)
    v = (2 * index.col + 1) / (2 * grid.width_cells)
    return (u, v)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (``np.round`` rounds to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def match_axis(n_src: int, n_dst: int, idx) -> np.ndarray:
    """Nearest ``n_dst``-grid cell for cells ``idx`` of an ``n_src`` grid along one axis.

    Evaluates ``round(n_dst/n_src * (1/2 + idx) - 1/2)`` with an integer
    numerator so that exact half-way ties are represented exactly.
    """
    idx = np.asarray(idx, dtype=np.int64)
    num = n_dst * (2 * idx + 1) - n_src
    x = num / (2.0 * n_src)
    out = round_half_away(x).astype(np.int64)
    return np.clip(out, 0, n_dst - 1)


def match_index(hr_grid: GridSpec, target_grid: GridSpec, hr_index: CellIndex) -> CellIndex:
    _check_index(hr_grid, hr_index)
    h = match_axis(hr_grid.height_cells, target_grid.height_cells, hr_index.row)
    w = match_axis(hr_grid.width_cells, target_grid.width_cells, hr_index.col)
    return CellIndex(int(h), int(w))


def relative_offset(query, matched_center) -> tuple[float, float]:
    return (query[0] - matched_center[0], query[1] - matched_center[1])


def _pe_frequencies() -> np.ndarray:
    return (2.0 ** np.arange(PE_BANDS)) * math.pi


def encode_offsets(offsets) -> np.ndarray:
    """Sinusoidal encoding of ``(..., 2)`` offsets into ``(..., 24)`` vectors.

    Layout per axis (du first, then dv): ``[sin(f0 d), cos(f0 d), sin(f1 d), ...]``
    with ``f_k = 2^k * pi``.
    """
    d = np.asarray(offsets, dtype=np.float64)
    if d.shape[-1] != 2:
        raise ValueError(f"offsets must have a trailing axis of 2, got {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("offsets must be finite")
    ang = d[..., :, None] * _pe_frequencies()  # (..., 2, bands)
    pe = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., 2, bands, 2)
    return pe.reshape(*d.shape[:-1], PE_DIM)


def encode_position(offset) -> np.ndarray:
    return encode_offsets(np.asarray(offset, dtype=np.float64).reshape(2))


def sin_slots() -> np.ndarray:
    """Boolean mask of the sine entries in a positional encoding."""
    mask = np.zeros(PE_DIM, dtype=bool)
    mask[0::2] = True
    return mask


def cell_scale(grid: GridSpec) -> tuple[float, float]:
    return (1.0 / grid.height_cells, 1.0 / grid.width_cells)


def axis_match_table(n_query: int, n_level: int):
    """Per-axis matched indices and relative offsets for a query axis against a level axis."""
    idx = match_axis(n_query, n_level, np.arange(n_query))
    offs = axis_centers(n_query) - axis_centers(n_level)[idx]
    return idx, offs
