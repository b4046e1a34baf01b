"""Coordinate-query change decoder.

Each query cell of the (H/ds x W/ds) grid collects, per pyramid level, the
feature of its nearest level cell, a sinusoidal code of the offset to that
cell's center and the level's cell size; an MLP maps the concatenation to
two logits (index 0 = no change, 1 = change).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import coordspace as cs

# bump when the bundle layout changes; stored in checkpoint manifests
BUNDLE_LAYOUT_VERSION = 1


@dataclass(frozen=True)
class QueryGrid:
    grid: cs.GridSpec
    ds: int

    @property
    def shape(self):
        return self.grid.shape


def build_query_grid(hr: cs.GridSpec, ds: int) -> QueryGrid:
    if ds < 1 or hr.height_cells % ds or hr.width_cells % ds:
        raise ValueError(f"ds={ds} must be >= 1 and divide {hr.shape}")
    return QueryGrid(cs.GridSpec(hr.height_cells // ds, hr.width_cells // ds), ds)


def query_centers(q: QueryGrid) -> np.ndarray:
    """``(Hq, Wq, 2)`` array of query coordinates."""
    u = cs.axis_centers(q.grid.height_cells)
    v = cs.axis_centers(q.grid.width_cells)
    return np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1)


def bundle_width(feat_dim: int = 128, n_levels: int = 4, edge_channels: int = 3) -> int:
    return edge_channels + n_levels * (feat_dim + cs.PE_DIM + 2)


@dataclass
class LevelTable:
    rows: np.ndarray  # (Hq,) matched level row per query row
    cols: np.ndarray  # (Wq,)
    pe: np.ndarray  # (Hq, Wq, PE_DIM)
    scale: tuple[float, float]
    offsets: np.ndarray  # (Hq, Wq, 2)


@lru_cache(maxsize=64)
def level_table(query_shape: tuple[int, int], level_shape: tuple[int, int]) -> LevelTable:
    (hq, wq), (hl, wl) = query_shape, level_shape
    rows, du = cs.axis_match_table(hq, hl)
    cols, dv = cs.axis_match_table(wq, wl)
    offsets = np.stack(np.meshgrid(du, dv, indexing="ij"), axis=-1)
    pe = cs.encode_offsets(offsets)
    return LevelTable(rows, cols, pe, cs.cell_scale(cs.GridSpec(hl, wl)), offsets)


def gather(query_shape: tuple[int, int], levels: list[torch.Tensor], z0: torch.Tensor | None = None) -> torch.Tensor:
    """Assemble query bundles as a ``(B, D, Hq, Wq)`` tensor.

    Channel layout: ``z0`` (if given), then per level ``[z_j | pe_j | cs_j]``.
    ``z0`` is read at the full-resolution cell nearest each query center.
    """
    hq, wq = query_shape
    ref = levels[0]
    b = ref.shape[0]
    parts = []
    if z0 is not None:
        t = level_table(query_shape, tuple(z0.shape[-2:]))
        parts.append(_take(z0, t))
    for z in levels:
        t = level_table(query_shape, tuple(z.shape[-2:]))
        parts.append(_take(z, t))
        pe = torch.as_tensor(t.pe, dtype=ref.dtype, device=ref.device).permute(2, 0, 1)
        parts.append(pe.unsqueeze(0).expand(b, -1, -1, -1))
        scale = torch.tensor(t.scale, dtype=ref.dtype, device=ref.device).view(1, 2, 1, 1)
        parts.append(scale.expand(b, 2, hq, wq))
    return torch.cat(parts, 1)


def _take(z: torch.Tensor, t: LevelTable) -> torch.Tensor:
    rows = torch.as_tensor(t.rows, device=z.device)
    cols = torch.as_tensor(t.cols, device=z.device)
    return z.index_select(2, rows).index_select(3, cols)


class ImplicitMLP(nn.Module):
    """Pointwise MLP ``in -> 64 -> 64 -> 2`` with BatchNorm + ReLU between layers."""

    def __init__(self, in_dim: int, hidden=(64, 64), out_dim: int = 2, momentum: float = 0.1):
        super().__init__()
        dims = (in_dim, *hidden)
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.BatchNorm1d(b, momentum=momentum), nn.ReLU(inplace=True)]
        layers.append(nn.Linear(dims[-1], out_dim))
        self.net = nn.Sequential(*layers)
        self.in_dim = in_dim

    def forward(self, bundles: torch.Tensor) -> torch.Tensor:
        return self.net(bundles)


def decode(mlp: ImplicitMLP, bundles: torch.Tensor) -> torch.Tensor:
    """Logits for ``(B, D, Hq, Wq)`` bundles, returned as ``(B, 2, Hq, Wq)``."""
    b, d, hq, wq = bundles.shape
    flat = bundles.permute(0, 2, 3, 1).reshape(-1, d)
    out = mlp(flat)
    bad = ~torch.isfinite(out)
    if bad.any():
        n = int(bad.any(1).nonzero()[0])
        raise FloatingPointError(
            f"non-finite decoder output at batch {n // (hq * wq)}, query ({n % (hq * wq) // wq}, {n % wq})")
    return out.view(b, hq, wq, -1).permute(0, 3, 1, 2)


def normalize(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=1)


def upsample_scores(probs: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resize of a normalized score map, renormalized per pixel."""
    if tuple(probs.shape[-2:]) == tuple(size):
        return probs
    up = F.interpolate(probs, size=size, mode="bilinear", align_corners=False)
    up = up.clamp_min(0)
    return up / up.sum(1, keepdim=True)


def upsample_logits(logits: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if tuple(logits.shape[-2:]) == tuple(size):
        return logits
    return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


def predict_mask(scores) -> np.ndarray:
    """1 where the change score strictly exceeds the no-change score."""
    if isinstance(scores, torch.Tensor):
        return (scores[:, 1] > scores[:, 0]).to(torch.uint8).cpu().numpy()
    scores = np.asarray(scores)
    return (scores[..., 1] > scores[..., 0]).astype(np.uint8)
