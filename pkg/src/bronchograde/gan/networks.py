"""ResNet-style generators, PatchGAN discriminators and the CUT patch projector."""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F


class ResnetBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Encoder / residual bottleneck / decoder; maps [-1, 1] images to [-1, 1]."""

    def __init__(self, ngf: int = 64, n_down: int = 2, n_blocks: int = 9):
        super().__init__()
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, ngf, 7),
            nn.InstanceNorm2d(ngf),
            nn.ReLU(True),
        ]
        ch = ngf
        for _ in range(n_down):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1), nn.InstanceNorm2d(ch * 2), nn.ReLU(True)]
            ch *= 2
        layers += [ResnetBlock(ch) for _ in range(n_blocks)]
        self.n_encoder = len(layers)
        for _ in range(n_down):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(ch // 2),
                nn.ReLU(True),
            ]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, 3, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)

    def encode(self, x, layer_ids) -> list[torch.Tensor]:
        """Intermediate encoder activations; id 0 is the input itself."""
        feats, wanted = [], set(layer_ids)
        if 0 in wanted:
            feats.append(x)
        h = x
        for i, layer in enumerate(self.model[: self.n_encoder], start=1):
            h = layer(h)
            if i in wanted:
                feats.append(h)
            if i >= max(wanted):
                break
        return feats


class PatchDiscriminator(nn.Module):
    """PatchGAN; ``forward`` returns logits, ``score`` squashes them into (0, 1)."""

    def __init__(self, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(3, ndf, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        ch = ndf
        for i in range(1, n_layers):
            nxt = ndf * min(2**i, 8)
            layers += [nn.Conv2d(ch, nxt, 4, stride=2, padding=1), nn.InstanceNorm2d(nxt), nn.LeakyReLU(0.2, True)]
            ch = nxt
        nxt = ndf * min(2**n_layers, 8)
        layers += [
            nn.Conv2d(ch, nxt, 4, stride=1, padding=1),
            nn.InstanceNorm2d(nxt),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(nxt, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)

    def score(self, x):
        return torch.sigmoid(self.model(x))


class PatchSampleF(nn.Module):
    """Samples co-located patch features and projects them with a small MLP per layer."""

    def __init__(self, in_channels: list[int], nc: int = 256):
        super().__init__()
        self.mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(c, nc), nn.ReLU(True), nn.Linear(nc, nc)) for c in in_channels
        )

    def forward(self, feats, num_patches: int, patch_ids=None, generator: torch.Generator | None = None):
        out, ids_out = [], []
        for i, feat in enumerate(feats):
            b, c, h, w = feat.shape
            flat = feat.permute(0, 2, 3, 1).reshape(b, h * w, c)
            if patch_ids is None:
                n = min(num_patches, h * w)
                ids = torch.randperm(h * w, generator=generator)[:n]
            else:
                ids = patch_ids[i]
            x = self.mlps[i](flat[:, ids, :])
            out.append(F.normalize(x, dim=-1))
            ids_out.append(ids)
        return out, ids_out


def init_weights(net: nn.Module, gain: float = 0.02) -> nn.Module:
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, gain)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    return net
