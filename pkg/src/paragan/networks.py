"""Distance-conditioned generator, patch discriminator and the small CNN
classifier shared by the auxiliary and downstream classifiers.

All modules take ``N x C x H x W`` tensors. Images enter the package as
``H x W x C`` numpy arrays; :func:`to_tensor` / :func:`to_image` convert.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack one ``HxWxC`` array (or a list / ``NxHxWxC`` array) into NCHW."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_image(t: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`to_tensor` for a single-sample or batched tensor."""
    arr = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return arr[0] if arr.shape[0] == 1 else arr


def make_condition_plane(img: torch.Tensor, signed_distance) -> torch.Tensor:
    """Append one channel holding the signed target distance.

    ``signed_distance`` is a scalar or a length-N tensor (one value per
    sample). The original channels are passed through untouched.
    """
    d = torch.as_tensor(signed_distance, dtype=img.dtype, device=img.device)
    if not torch.isfinite(d).all():
        raise ValueError("non-finite conditioning distance")
    n, _, h, w = img.shape
    d = d.reshape(-1)
    if d.numel() == 1:
        d = d.expand(n)
    if d.numel() != n:
        raise ValueError(f"got {d.numel()} distances for a batch of {n}")
    plane = d.view(n, 1, 1, 1).expand(n, 1, h, w)
    return torch.cat([img, plane], dim=1)


def _norm(ch: int) -> nn.Module:
    return nn.InstanceNorm2d(ch, affine=False, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """ResNet encoder/decoder generator taking ``channels + 1`` inputs.

    The first 7x7 stage is left unnormalized: the conditioning plane is
    spatially constant, and an instance norm directly after it would subtract
    the distance out again before any nonlinearity could use it.
    """

    def __init__(self, channels: int = 1, base_width: int = 16, n_res_blocks: int = 3):
        super().__init__()
        self.channels = channels
        w = base_width
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3), nn.Conv2d(channels + 1, w, 7), nn.ReLU(True),
        ]
        for mult in (1, 2):
            layers += [nn.Conv2d(w * mult, w * mult * 2, 3, stride=2, padding=1),
                       _norm(w * mult * 2), nn.ReLU(True)]
        layers += [ResidualBlock(w * 4) for _ in range(n_res_blocks)]
        for mult in (4, 2):
            layers += [nn.ConvTranspose2d(w * mult, w * mult // 2, 3, stride=2,
                                          padding=1, output_padding=1),
                       _norm(w * mult // 2), nn.ReLU(True)]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, img: torch.Tensor, signed_distance) -> torch.Tensor:
        if img.dim() != 4 or img.shape[1] != self.channels:
            raise ValueError(f"expected N x {self.channels} x H x W input, got {tuple(img.shape)}")
        if img.shape[2] % 4 or img.shape[3] % 4:
            raise ValueError("generator input height and width must be divisible by 4")
        return self.model(make_condition_plane(img, signed_distance))


class PatchDiscriminator(nn.Module):
    """PatchGAN: ``d_layers`` stride-2 4x4 convs, then a stride-1 conv and a
    stride-1 one-channel head. With ``d_layers=3`` every logit sees a 70x70
    input patch."""

    def __init__(self, channels: int = 1, base_width: int = 16, d_layers: int = 3):
        super().__init__()
        self.channels = channels
        self.d_layers = d_layers
        w = base_width
        layers: list[nn.Module] = [nn.Conv2d(channels, w, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        ch = w
        for i in range(1, d_layers):
            nxt = w * min(2 ** i, 8)
            layers += [nn.Conv2d(ch, nxt, 4, 2, 1), _norm(nxt), nn.LeakyReLU(0.2, True)]
            ch = nxt
        nxt = w * min(2 ** d_layers, 8)
        layers += [nn.Conv2d(ch, nxt, 4, 1, 1), _norm(nxt), nn.LeakyReLU(0.2, True),
                   nn.Conv2d(nxt, 1, 4, 1, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.dim() != 4 or img.shape[1] != self.channels:
            raise ValueError(f"expected N x {self.channels} x H x W input, got {tuple(img.shape)}")
        return self.model(img)


def patch_output_size(size: int, d_layers: int = 3) -> int:
    """Spatial size of the discriminator's logit map: each 4x4 conv with
    padding 1 maps ``n -> floor((n + 2 - 4) / stride) + 1``."""
    for _ in range(d_layers):
        size = (size - 2) // 2 + 1
    for _ in range(2):
        size = size - 1
    return size


def patch_receptive_field(d_layers: int = 3) -> int:
    r = 1
    for stride in [1, 1] + [2] * d_layers:
        r = r * stride + (4 - stride)
    return r


class SmallCNN(nn.Module):
    """Three conv/norm/activation stages, global average pool, linear head.

    ``forward`` returns one raw score per image; the zero level set of the
    head is the decision hyperplane.
    """

    def __init__(self, channels: int = 1, width: int = 16, n_stages: int = 3):
        super().__init__()
        self.channels = channels
        stages = []
        ch = channels
        for i in range(n_stages):
            out = width * 2 ** i
            stages += [nn.Conv2d(ch, out, 3, stride=2, padding=1),
                       nn.GroupNorm(min(4, out), out), nn.ReLU(True)]
            ch = out
        self.features = nn.Sequential(*stages)
        self.feature_dim = ch
        self.head = nn.Linear(ch, 1)

    def feature_map(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected N x {self.channels} x H x W input, got {tuple(x.shape)}")
        return self.features(x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.feature_map(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x)).squeeze(1)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def generator_param_count(channels: int, w: int, k: int) -> int:
    """Closed-form parameter count of :class:`Generator` (weights + biases)."""
    conv = lambda cin, cout, ks: cin * cout * ks * ks + cout  # noqa: E731
    total = conv(channels + 1, w, 7)
    total += conv(w, 2 * w, 3) + conv(2 * w, 4 * w, 3)
    total += k * 2 * conv(4 * w, 4 * w, 3)
    total += conv(4 * w, 2 * w, 3) + conv(2 * w, w, 3)
    total += conv(w, channels, 7)
    return total


def discriminator_param_count(channels: int, w: int, d_layers: int) -> int:
    conv = lambda cin, cout: cin * cout * 16 + cout  # noqa: E731
    total = conv(channels, w)
    ch = w
    for i in range(1, d_layers):
        nxt = w * min(2 ** i, 8)
        total += conv(ch, nxt)
        ch = nxt
    nxt = w * min(2 ** d_layers, 8)
    return total + conv(ch, nxt) + conv(nxt, 1)


def init_weights(module: nn.Module, gain: float = 0.02) -> None:
    """Normal(0, 0.02) init for conv weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, gain)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def seeded(seed: int):
    """Context manager-free helper: a torch Generator for deterministic init."""
    g = torch.Generator()
    g.manual_seed(int(seed) % (2 ** 63))
    return g


def conv_arithmetic(size: int, kernel: int, stride: int, padding: int) -> int:
    return math.floor((size + 2 * padding - kernel) / stride) + 1
