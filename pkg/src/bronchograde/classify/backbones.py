"""Backbone networks.

Every backbone exposes the same three pieces the rest of the package relies on:
``features(x)`` (the vector feeding the head), ``head`` (the final 6-way
linear layer), ``cam_layer`` (module whose output is the spatial map used for
Grad-CAM) and ``last_block`` (the module unfrozen by ``last_block_and_head``).
"""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F


def _conv_bn(cin, cout, k, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, k, stride, padding=k // 2, bias=False), nn.BatchNorm2d(cout), nn.ReLU(True))


class Inception(nn.Module):
    def __init__(self, cin, c1, c3r, c3, c5r, c5, pool_proj):
        super().__init__()
        self.b1 = _conv_bn(cin, c1, 1)
        self.b3 = nn.Sequential(_conv_bn(cin, c3r, 1), _conv_bn(c3r, c3, 3))
        # two stacked 3x3 in place of the 5x5, as in later inception variants
        self.b5 = nn.Sequential(_conv_bn(cin, c5r, 1), _conv_bn(c5r, c5, 3), _conv_bn(c5, c5, 3))
        self.bp = nn.Sequential(nn.MaxPool2d(3, 1, 1), _conv_bn(cin, pool_proj, 1))
        self.out_channels = c1 + c3 + c5 + pool_proj

    def forward(self, x):
        return torch.cat([self.b1(x), self.b3(x), self.b5(x), self.bp(x)], 1)


class DeskInception(nn.Module):
    """Small GoogLeNet-style CNN for 32x32 inputs (~0.9M parameters)."""

    input_size = 32

    def __init__(self, num_classes: int = 6, width: int = 1):
        super().__init__()
        w = width
        self.stem = nn.Sequential(_conv_bn(3, 48 * w, 3), _conv_bn(48 * w, 64 * w, 3), nn.MaxPool2d(2))
        self.inc3a = Inception(64 * w, 32 * w, 48 * w, 64 * w, 12 * w, 24 * w, 24 * w)  # 144
        self.inc3b = Inception(144 * w, 64 * w, 64 * w, 96 * w, 16 * w, 48 * w, 32 * w)  # 240
        self.pool = nn.MaxPool2d(2)
        self.inc4a = Inception(240 * w, 96 * w, 64 * w, 128 * w, 16 * w, 48 * w, 48 * w)  # 320
        self.last_conv = _conv_bn(320 * w, 256 * w, 3)
        self.dropout = nn.Dropout(0.2)
        self.feature_dim = 256 * w
        self.head = nn.Linear(self.feature_dim, num_classes)

    @property
    def cam_layer(self) -> nn.Module:
        return self.last_conv

    @property
    def last_block(self) -> nn.Module:
        return nn.ModuleList([self.inc4a, self.last_conv])

    def feature_maps(self, x):
        x = self.stem(x)
        x = self.inc3b(self.inc3a(x))
        x = self.inc4a(self.pool(x))
        return self.last_conv(x)

    def features(self, x):
        return F.adaptive_avg_pool2d(self.feature_maps(x), 1).flatten(1)

    def forward(self, x):
        return self.head(self.dropout(self.features(x)))


class _Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=2.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, int(dim * mlp_ratio)), nn.GELU(), nn.Linear(int(dim * mlp_ratio), dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class TokenGrid(nn.Module):
    """Identity marker whose output is the patch-token grid ``(B, D, g, g)``."""

    def forward(self, x):
        return x


class DeskViT(nn.Module):
    """Tiny ViT: 4x4 patches on 32x32 inputs, class token, pre-norm blocks."""

    input_size = 32

    def __init__(self, num_classes: int = 6, dim: int = 96, depth: int = 4, heads: int = 4, patch: int = 4):
        super().__init__()
        self.grid = self.input_size // patch
        self.patch_embed = nn.Conv2d(3, dim, patch, stride=patch)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.randn(1, self.grid**2 + 1, dim) * 0.02)
        self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.token_grid = TokenGrid()
        self.feature_dim = dim
        self.head = nn.Linear(dim, num_classes)

    @property
    def cam_layer(self) -> nn.Module:
        return self.token_grid

    @property
    def last_block(self) -> nn.Module:
        return nn.ModuleList([self.blocks[-1], self.norm])

    def _tokens(self, x):
        x = self.patch_embed(x).flatten(2).transpose(1, 2)
        x = torch.cat([self.cls_token.expand(len(x), -1, -1), x], 1) + self.pos_embed
        for blk in self.blocks:
            x = blk(x)
        return x

    def features(self, x):
        t = self._tokens(x)
        b, n, d = t.shape
        grid = self.token_grid(t[:, 1:].transpose(1, 2).reshape(b, d, self.grid, self.grid))
        t = torch.cat([t[:, :1], grid.flatten(2).transpose(1, 2)], 1)
        return self.norm(t)[:, 0]

    def forward(self, x):
        return self.head(self.features(x))


class TorchvisionGoogLeNet(nn.Module):
    """torchvision GoogLeNet with its fc replaced; 224x224 internal input."""

    input_size = 224

    def __init__(self, num_classes: int = 6, weights=None):
        super().__init__()
        from torchvision.models import googlenet

        net = googlenet(weights=weights, aux_logits=False, init_weights=weights is None)
        net.fc = nn.Identity()
        self.net = net
        self.feature_dim = 1024
        self.head = nn.Linear(1024, num_classes)

    @property
    def cam_layer(self) -> nn.Module:
        return self.net.inception5b

    @property
    def last_block(self) -> nn.Module:
        return nn.ModuleList([self.net.inception5a, self.net.inception5b])

    def features(self, x):
        return self.net(x)

    def forward(self, x):
        return self.head(self.features(x))


class TorchvisionViT(nn.Module):
    """torchvision ViT-B/16 with its head replaced; 224x224 internal input."""

    input_size = 224

    def __init__(self, num_classes: int = 6, weights=None):
        super().__init__()
        from torchvision.models import vit_b_16

        net = vit_b_16(weights=weights)
        net.heads = nn.Identity()
        self.net = net
        self.token_grid = TokenGrid()
        self.feature_dim = net.hidden_dim
        self.head = nn.Linear(net.hidden_dim, num_classes)
        self.grid = self.input_size // 16

    @property
    def cam_layer(self) -> nn.Module:
        return self.token_grid

    @property
    def last_block(self) -> nn.Module:
        return nn.ModuleList([self.net.encoder.layers[-1], self.net.encoder.ln])

    def features(self, x):
        net = self.net
        x = net._process_input(x)
        x = torch.cat([net.class_token.expand(x.shape[0], -1, -1), x], dim=1)
        enc = net.encoder
        x = enc.dropout(x + enc.pos_embedding)
        x = enc.layers(x)
        b, n, d = x.shape
        grid = self.token_grid(x[:, 1:].transpose(1, 2).reshape(b, d, self.grid, self.grid))
        x = torch.cat([x[:, :1], grid.flatten(2).transpose(1, 2)], 1)
        return enc.ln(x)[:, 0]

    def forward(self, x):
        return self.head(self.features(x))


def make_backbone(name: str, profile: str = "desk", weights=None) -> nn.Module:
    if name not in ("inception_cnn", "vit"):
        raise ValueError(f"unknown backbone {name!r}")
    if profile == "desk":
        return DeskInception() if name == "inception_cnn" else DeskViT()
    if profile == "paper":
        return TorchvisionGoogLeNet(weights=weights) if name == "inception_cnn" else TorchvisionViT(weights=weights)
    raise ValueError(f"unknown profile {profile!r}")
