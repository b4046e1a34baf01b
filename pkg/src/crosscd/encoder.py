"""Siamese backbone, windowed bitemporal interaction, projection and fusion.

Tensors are NCHW throughout. Level ``j`` (1..4) has stride ``2**(j+1)``.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

REFERENCE_WIDTHS = (64, 128, 256, 512)
TINY_WIDTHS = (8, 16, 32, 64)


def _pair(ws) -> tuple[int, int]:
    return (ws, ws) if isinstance(ws, int) else tuple(ws)


def partition_windows(x: torch.Tensor, ws) -> torch.Tensor:
    """``(B, C, H, W)`` -> ``(B * N_w, wh * ww, C)``; windows in row-major order."""
    wh, ww = _pair(ws)
    b, c, h, w = x.shape
    if h % wh or w % ww:
        raise ValueError(f"feature size {h}x{w} is not divisible by window {wh}x{ww}")
    x = x.view(b, c, h // wh, wh, w // ww, ww)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(b * (h // wh) * (w // ww), wh * ww, c)


def merge_windows(windows: torch.Tensor, ws, height: int, width: int) -> torch.Tensor:
    """Inverse of :func:`partition_windows`."""
    wh, ww = _pair(ws)
    nh, nw = height // wh, width // ww
    c = windows.shape[-1]
    b = windows.shape[0] // (nh * nw)
    x = windows.view(b, nh, nw, wh, ww, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, height, width)


class InteractionLayer(nn.Module):
    """Pre-norm transformer layer; the positional embedding only enters the attention input.

    With both output projections zeroed the layer is the identity map.
    """

    def __init__(self, dim: int, heads: int, dropout: float = 0.0, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(mlp_ratio * dim, dim),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, tokens, pos):
        h = self.norm1(tokens + pos)
        a, _ = self.attn(h, h, h, need_weights=False)
        tokens = tokens + self.drop(a)
        return tokens + self.drop(self.ffn(self.norm2(tokens)))

    def zero_output_projections(self):
        nn.init.zeros_(self.attn.out_proj.weight)
        nn.init.zeros_(self.attn.out_proj.bias)
        nn.init.zeros_(self.ffn[-1].weight)
        nn.init.zeros_(self.ffn[-1].bias)


class BitemporalInteraction(nn.Module):
    """Joint self-attention over the 2 * wh * ww tokens of each bitemporal window pair."""

    def __init__(self, dim: int, window, n_layers: int = 1, heads: int = 4, dropout: float = 0.0):
        super().__init__()
        self.window = _pair(window)
        n_tok = 2 * self.window[0] * self.window[1]
        # one table shared by every window: rows 0..ws^2-1 are t1 positions, the rest t2
        self.pos = nn.Parameter(torch.zeros(1, n_tok, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(InteractionLayer(dim, heads, dropout) for _ in range(n_layers))

    def forward(self, f1, f2):
        if f1.shape != f2.shape:
            raise ValueError(f"bitemporal features differ in shape: {tuple(f1.shape)} vs {tuple(f2.shape)}")
        h, w = f1.shape[-2:]
        w1 = partition_windows(f1, self.window)
        w2 = partition_windows(f2, self.window)
        n = w1.shape[1]
        tokens = torch.cat([w1, w2], dim=1)
        for layer in self.layers:
            tokens = layer(tokens, self.pos)
        return (merge_windows(tokens[:, :n], self.window, h, w),
                merge_windows(tokens[:, n:], self.window, h, w))


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        idt = x if self.down is None else self.down(x)
        out = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(out)) + idt)


class TinyBackbone(nn.Module):
    """Four-stage residual network with widths 8/16/32/64, for tests and desk runs."""

    widths = TINY_WIDTHS

    def __init__(self, in_ch: int = 3):
        super().__init__()
        c = self.widths
        self.stem = nn.Sequential(
            nn.Conv2d(in_ch, c[0], 3, 2, 1, bias=False), nn.BatchNorm2d(c[0]), nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        self.stages = nn.ModuleList([
            BasicBlock(c[0], c[0]),
            BasicBlock(c[0], c[1], 2),
            BasicBlock(c[1], c[2], 2),
            BasicBlock(c[2], c[3], 2),
        ])


class ResNet18Backbone(nn.Module):
    """torchvision ResNet-18 trunk exposed as stem + four stages."""

    widths = REFERENCE_WIDTHS

    def __init__(self, weights_path: str | None = None):
        super().__init__()
        net = torchvision.models.resnet18(weights=None)
        if weights_path:
            net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])


def build_backbone(name: str, weights_path: str | None = None) -> nn.Module:
    if name == "tiny":
        return TinyBackbone()
    if name in ("reference", "resnet18"):
        return ResNet18Backbone(weights_path)
    raise ValueError(f"unknown backbone {name!r}")


class SiameseEncoder(nn.Module):
    """Runs both temporal images through one backbone, interacting at chosen levels."""

    def __init__(self, backbone: nn.Module, levels=(1, 2, 3), window_size: int = 8, n_layers: int = 1,
                 heads: int = 4, dropout: float = 0.0, interaction: str = "local", input_size=None):
        super().__init__()
        self.backbone = backbone
        self.levels = tuple(sorted(levels)) if interaction != "none" else ()
        self.interaction = interaction
        blocks = {}
        for j in self.levels:
            dim = backbone.widths[j - 1]
            if interaction == "local":
                window = window_size
            elif interaction == "non-local":
                if input_size is None:
                    raise ValueError("non-local interaction needs the input size")
                ih, iw = _pair(input_size)
                window = (ih // 2 ** (j + 1), iw // 2 ** (j + 1))
            else:
                raise ValueError(f"unknown interaction {interaction!r}")
            blocks[str(j)] = BitemporalInteraction(dim, window, n_layers, heads, dropout)
        self.interact = nn.ModuleDict(blocks)

    @property
    def widths(self):
        return self.backbone.widths

    def features(self, img):
        """Single-image pyramid without interaction."""
        _check_divisible(img)
        x = self.backbone.stem(img)
        out = []
        for stage in self.backbone.stages:
            x = stage(x)
            out.append(x)
        return out

    def forward(self, img1, img2):
        if img1.shape != img2.shape:
            raise ValueError(f"temporal images differ in shape: {tuple(img1.shape)} vs {tuple(img2.shape)}")
        _check_divisible(img1)
        b = img1.shape[0]
        x = self.backbone.stem(torch.cat([img1, img2], 0))
        pyr1, pyr2 = [], []
        for j, stage in enumerate(self.backbone.stages, start=1):
            x = stage(x)
            if str(j) in self.interact:
                x1, x2 = self.interact[str(j)](x[:b], x[b:])
                x = torch.cat([x1, x2], 0)
            pyr1.append(x[:b])
            pyr2.append(x[b:])
        return pyr1, pyr2


def _check_divisible(img):
    h, w = img.shape[-2:]
    if h % 32 or w % 32:
        raise ValueError(f"input size {h}x{w} must be divisible by 32")


class ProjectFuse(nn.Module):
    """Per-level, per-temporal 1x1 projection to ``dim`` channels, then concatenation."""

    def __init__(self, widths, dim: int = 64):
        super().__init__()
        self.proj1 = nn.ModuleList(nn.Conv2d(c, dim, 1) for c in widths)
        self.proj2 = nn.ModuleList(nn.Conv2d(c, dim, 1) for c in widths)

    def forward(self, pyr1, pyr2):
        return [torch.cat([p1(a), p2(b)], 1) for p1, p2, a, b in zip(self.proj1, self.proj2, pyr1, pyr2)]


class EdgeConv(nn.Module):
    """7x7 convolution turning summed Canny maps into learned edge features."""

    def __init__(self, channels: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 7, padding=3)

    def forward(self, x0):
        return self.conv(x0)

    def init_identity(self):
        with torch.no_grad():
            self.conv.weight.zero_()
            for c in range(self.conv.out_channels):
                self.conv.weight[c, c, 3, 3] = 1.0
            self.conv.bias.zero_()
