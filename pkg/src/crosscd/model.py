"""End-to-end networks: the implicit-decoder model and the convolutional baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import decoder as dec
from .edges import CannyConfig, edge_clues
from .encoder import EdgeConv, ProjectFuse, SiameseEncoder, build_backbone


@dataclass
class ModelConfig:
    variant: str = "sili"  # "sili" or "base"
    backbone: str = "reference"  # "reference" (ResNet-18) or "tiny"
    backbone_weights: str | None = None
    levels: list = field(default_factory=lambda: [1, 2, 3])
    interaction: str = "local"  # "local", "non-local" or "none"
    window_size: int = 8
    n_layers: int = 1
    heads: int = 4
    dropout: float = 0.0
    proj_dim: int = 64
    ds: int = 2
    edge_clues: bool = True
    # "unswapped": Canny of the HR slot and of the upsampled LR image before the swap
    # "model_inputs": Canny of exactly the two images fed to the encoder
    edge_source: str = "unswapped"
    canny_mode: str = "percentile"
    canny_low: float = 70.0
    canny_high: float = 90.0
    canny_sigma: float = 1.0
    input_size: int | None = None  # needed only for non-local interaction
    # "logits": resize logits then softmax (what the loss sees); "probs": softmax, resize, renormalize
    score_upsampling: str = "logits"

    def __post_init__(self):
        if self.variant not in ("sili", "base"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.score_upsampling not in ("logits", "probs"):
            raise ValueError(f"unknown score_upsampling {self.score_upsampling!r}")
        if self.edge_source not in ("unswapped", "model_inputs"):
            raise ValueError(f"unknown edge_source {self.edge_source!r}")
        self.levels = [int(j) for j in self.levels]
        if any(j not in (1, 2, 3, 4) for j in self.levels):
            raise ValueError(f"interaction levels must be within 1..4, got {self.levels}")

    @property
    def canny(self) -> CannyConfig:
        return CannyConfig(sigma=self.canny_sigma, mode=self.canny_mode, low=self.canny_low, high=self.canny_high)

    @property
    def uses_edges(self) -> bool:
        return self.variant == "sili" and self.edge_clues


def _normalize_input(x):
    return (x - 0.5) / 0.5


class ChangeNet(nn.Module):
    """Shared surface: ``forward`` gives low-res logits, ``hr_logits`` / ``scores`` resize to input size."""

    cfg: ModelConfig

    def hr_logits(self, pre, post, x0=None):
        return dec.upsample_logits(self(pre, post, x0), tuple(pre.shape[-2:]))

    def scores(self, pre, post, x0=None):
        """Normalized ``(B, 2, H, W)`` change probabilities at input resolution."""
        logits = self(pre, post, x0)
        size = tuple(pre.shape[-2:])
        if self.cfg.score_upsampling == "logits":
            return dec.normalize(dec.upsample_logits(logits, size))
        return dec.upsample_scores(dec.normalize(logits), size)


class SILINet(ChangeNet):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        backbone = build_backbone(cfg.backbone, cfg.backbone_weights)
        levels = cfg.levels if cfg.interaction != "none" else []
        self.encoder = SiameseEncoder(backbone, levels, cfg.window_size, cfg.n_layers, cfg.heads,
                                      cfg.dropout, cfg.interaction if levels else "none", cfg.input_size)
        self.fuse = ProjectFuse(backbone.widths, cfg.proj_dim)
        self.edge_conv = EdgeConv(3) if cfg.edge_clues else None
        in_dim = dec.bundle_width(2 * cfg.proj_dim, 4, 3 if cfg.edge_clues else 0)
        self.mlp = dec.ImplicitMLP(in_dim)

    def forward(self, pre, post, x0=None):
        if pre.shape != post.shape:
            raise ValueError(f"temporal images differ in shape: {tuple(pre.shape)} vs {tuple(post.shape)}")
        h, w = pre.shape[-2:]
        pyr1, pyr2 = self.encoder(_normalize_input(pre), _normalize_input(post))
        fused = self.fuse(pyr1, pyr2)
        z0 = None
        if self.edge_conv is not None:
            if x0 is None:
                x0 = compute_edges(pre, post, self.cfg.canny)
            z0 = self.edge_conv(x0.to(pre.dtype))
        q = dec.build_query_grid(dec.cs.GridSpec(h, w), self.cfg.ds)
        bundles = dec.gather(q.shape, fused, z0)
        return dec.decode(self.mlp, bundles)


class BaseNet(ChangeNet):
    """Siamese backbone, per-level projections, concatenation at stride 4, three 3x3 convs."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        backbone = build_backbone(cfg.backbone, cfg.backbone_weights)
        self.encoder = SiameseEncoder(backbone, (), interaction="none")
        self.fuse = ProjectFuse(backbone.widths, cfg.proj_dim)
        c = 4 * 2 * cfg.proj_dim
        self.head = nn.Sequential(
            nn.Conv2d(c, 64, 3, padding=1, bias=False), nn.BatchNorm2d(64), nn.ReLU(inplace=True),
            nn.Conv2d(64, 64, 3, padding=1, bias=False), nn.BatchNorm2d(64), nn.ReLU(inplace=True),
            nn.Conv2d(64, 2, 3, padding=1),
        )

    def forward(self, pre, post, x0=None):
        if pre.shape != post.shape:
            raise ValueError(f"temporal images differ in shape: {tuple(pre.shape)} vs {tuple(post.shape)}")
        pyr1, pyr2 = self.encoder(_normalize_input(pre), _normalize_input(post))
        fused = self.fuse(pyr1, pyr2)
        size = fused[0].shape[-2:]
        aligned = [fused[0]] + [F.interpolate(z, size=size, mode="nearest") for z in fused[1:]]
        return self.head(torch.cat(aligned, 1))


def build_model(cfg: ModelConfig) -> ChangeNet:
    return SILINet(cfg) if cfg.variant == "sili" else BaseNet(cfg)


def compute_edges(pre: torch.Tensor, post: torch.Tensor, canny: CannyConfig | None = None) -> torch.Tensor:
    """Edge clues for a batch of NCHW images (no gradient flows through Canny)."""
    a = pre.detach().cpu().permute(0, 2, 3, 1).numpy()
    b = post.detach().cpu().permute(0, 2, 3, 1).numpy()
    x0 = np.stack([edge_clues(a[i], b[i], canny) for i in range(a.shape[0])])
    return torch.from_numpy(x0).permute(0, 3, 1, 2).to(device=pre.device, dtype=pre.dtype)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
