"""Style-modulated, symmetry-aware inpainting network.

Three parts: a strided encoder applied to the main and the mirrored input,
a FiLM fusion of both feature maps, and style-modulated fast Fourier
convolution blocks followed by modulated upsampling convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import torch
from torch import Tensor, nn
import torch.nn.functional as F

DEMOD_EPS = 1e-8


@dataclass
class SVINetConfig:
    resolution: int = 64
    base_channels: int = 16
    n_down: int = 3
    n_blocks: int = 4
    n_up: int = 3
    demod_eps: float = DEMOD_EPS
    global_ratio: float = 0.25  # share of FFC channels on the spectral path
    n_levels: int = 8
    latent_dim: int = 64
    use_modulation: bool = True
    use_symmetry: bool = True

    def __post_init__(self) -> None:
        if self.n_down != self.n_up:
            raise ValueError(f"n_down ({self.n_down}) and n_up ({self.n_up}) must match")
        if self.demod_eps <= 0:
            raise ValueError(f"demodulation epsilon must be positive, got {self.demod_eps}")
        if self.resolution % (2 ** (self.n_down + 1)):
            raise ValueError(
                f"resolution {self.resolution} must be divisible by {2 ** (self.n_down + 1)}"
            )
        if not 0 < self.global_ratio < 1:
            raise ValueError(f"global_ratio must lie in (0, 1), got {self.global_ratio}")


def modulate_weights(weight: Tensor, styles: Tensor, eps: float = DEMOD_EPS, demodulate: bool = True) -> Tensor:
    """Scale conv weights ``[O, I, k, k]`` per input channel and renormalize per output channel.

    ``styles`` is ``[I]`` (returns ``[O, I, k, k]``) or ``[B, I]`` (returns ``[B, O, I, k, k]``).
    """
    if eps <= 0:
        raise ValueError(f"demodulation epsilon must be positive, got {eps}")
    in_ch = weight.shape[1]
    if styles.shape[-1] != in_ch:
        raise ValueError(f"style length {styles.shape[-1]} does not match {in_ch} input channels")
    if styles.dim() == 1:
        w = weight * styles.reshape(1, -1, 1, 1)
        if demodulate:
            w = w * (w.square().sum(dim=[1, 2, 3], keepdim=True) + eps).rsqrt()
        return w
    w = weight.unsqueeze(0) * styles.reshape(styles.shape[0], 1, -1, 1, 1)
    if demodulate:
        w = w * (w.square().sum(dim=[2, 3, 4], keepdim=True) + eps).rsqrt()
    return w


class ModulatedConv2d(nn.Module):
    """Per-sample modulated convolution executed as one grouped convolution."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        latent_dim: int,
        *,
        up: bool = False,
        demodulate: bool = True,
        activation: bool = True,
        bias: bool = True,
        eps: float = DEMOD_EPS,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.up = up
        self.demodulate = demodulate
        self.activation = activation
        self.eps = eps
        self.level = 0  # assigned by SVINet
        weight = torch.randn(out_channels, in_channels, kernel_size, kernel_size)
        if not demodulate:
            weight = weight / math.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = nn.Parameter(weight)
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.affine = nn.Linear(latent_dim, in_channels)
        nn.init.ones_(self.affine.bias)

    def styles(self, w_plus: Tensor, use_modulation: bool = True) -> Tensor:
        if not use_modulation:
            return w_plus.new_ones(w_plus.shape[0], self.in_channels)
        return self.affine(w_plus[:, self.level])

    def forward(self, x: Tensor, w_plus: Tensor, use_modulation: bool = True) -> Tensor:
        B = x.shape[0]
        if self.up:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        weight = modulate_weights(
            self.weight, self.styles(w_plus, use_modulation), self.eps, self.demodulate
        )
        H, W = x.shape[-2:]
        pad = self.kernel_size // 2
        if pad:
            x = F.pad(x, [pad] * 4, mode="reflect")
        k = self.kernel_size
        out = F.conv2d(
            x.reshape(1, B * self.in_channels, *x.shape[-2:]),
            weight.reshape(B * self.out_channels, self.in_channels, k, k),
            groups=B,
        ).reshape(B, self.out_channels, H, W)
        if self.bias is not None:
            out = out + self.bias.view(1, -1, 1, 1)
        if self.activation:
            out = F.leaky_relu(out, 0.2)
        return out


class SpectralTransform(nn.Module):
    """Real FFT -> modulated 1x1 conv on stacked real/imag channels -> inverse FFT."""

    def __init__(self, channels: int, latent_dim: int, eps: float = DEMOD_EPS) -> None:
        super().__init__()
        self.channels = channels
        self.conv = ModulatedConv2d(
            2 * channels, 2 * channels, 1, latent_dim, activation=False, bias=False, eps=eps
        )

    def forward(
        self,
        x: Tensor,
        w_plus: Tensor,
        use_modulation: bool = True,
        *,
        bypass_conv: bool = False,
        activation: bool = True,
    ) -> Tensor:
        H, W = x.shape[-2:]
        if H % 2 or W % 2:
            raise ValueError(f"spectral transform needs even spatial dims, got {H}x{W}")
        spec = torch.fft.rfft2(x, dim=(-2, -1), norm="ortho")
        if not bypass_conv:
            stacked = torch.cat([spec.real, spec.imag], dim=1)
            stacked = self.conv(stacked, w_plus, use_modulation)
            if activation:
                stacked = F.leaky_relu(stacked, 0.2)
            real, imag = stacked.chunk(2, dim=1)
            spec = torch.complex(real, imag)
        return torch.fft.irfft2(spec, s=(H, W), dim=(-2, -1), norm="ortho")


class ModulatedFFC(nn.Module):
    """Fast Fourier convolution with local/global paths; every conv is modulated."""

    def __init__(self, channels: int, latent_dim: int, global_ratio: float, eps: float = DEMOD_EPS) -> None:
        super().__init__()
        self.n_global = max(1, int(channels * global_ratio))
        self.n_local = channels - self.n_global
        conv = dict(activation=False, eps=eps)
        self.l2l = ModulatedConv2d(self.n_local, self.n_local, 3, latent_dim, **conv)
        self.g2l = ModulatedConv2d(self.n_global, self.n_local, 3, latent_dim, **conv)
        self.l2g = ModulatedConv2d(self.n_local, self.n_global, 3, latent_dim, **conv)
        self.g2g = SpectralTransform(self.n_global, latent_dim, eps)

    def forward(self, x: Tensor, w_plus: Tensor, use_modulation: bool = True) -> Tensor:
        x_l, x_g = x[:, : self.n_local], x[:, self.n_local :]
        out_l = self.l2l(x_l, w_plus, use_modulation) + self.g2l(x_g, w_plus, use_modulation)
        out_g = self.l2g(x_l, w_plus, use_modulation) + self.g2g(x_g, w_plus, use_modulation)
        return torch.cat([out_l, out_g], dim=1)


class FFCResBlock(nn.Module):
    def __init__(self, channels: int, latent_dim: int, global_ratio: float, eps: float = DEMOD_EPS) -> None:
        super().__init__()
        self.ffc1 = ModulatedFFC(channels, latent_dim, global_ratio, eps)
        self.ffc2 = ModulatedFFC(channels, latent_dim, global_ratio, eps)

    def forward(self, x: Tensor, w_plus: Tensor, use_modulation: bool = True) -> Tensor:
        h = F.leaky_relu(self.ffc1(x, w_plus, use_modulation), 0.2)
        return x + self.ffc2(h, w_plus, use_modulation)


class SymmetryFusion(nn.Module):
    """FiLM fusion: ``F_r = phi_s([F, F_mirror]) * F + phi_t([F, F_mirror])``."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.phi_s = self._head(channels, 1.0)
        self.phi_t = self._head(channels, 0.0)

    @staticmethod
    def _head(channels: int, bias: float) -> nn.Sequential:
        head = nn.Sequential(
            nn.Conv2d(2 * channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        # starts as the identity modulation
        nn.init.zeros_(head[2].weight)
        nn.init.constant_(head[2].bias, bias)
        return head

    def forward(self, f: Tensor, f_mirror: Tensor) -> Tensor:
        if f.shape != f_mirror.shape:
            raise ValueError(f"feature shapes differ: {tuple(f.shape)} vs {tuple(f_mirror.shape)}")
        joint = torch.cat([f, f_mirror], dim=1)
        return self.phi_s(joint) * f + self.phi_t(joint)


class SVINet(nn.Module):
    def __init__(self, cfg: SVINetConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg = cfg or SVINetConfig()
        c = cfg.base_channels
        enc_channels = [c * 2**i for i in range(cfg.n_down)]
        layers: list[nn.Module] = []
        in_ch = 3
        for ch in enc_channels:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = ch
        self.encoder = nn.Sequential(*layers)
        self.feature_channels = in_ch

        self.fusion = SymmetryFusion(in_ch)
        self.blocks = nn.ModuleList(
            FFCResBlock(in_ch, cfg.latent_dim, cfg.global_ratio, cfg.demod_eps) for _ in range(cfg.n_blocks)
        )
        dec_channels = list(reversed(enc_channels))[1:] + [c]
        ups = []
        for ch in dec_channels:
            ups.append(ModulatedConv2d(in_ch, ch, 3, cfg.latent_dim, up=True, eps=cfg.demod_eps))
            in_ch = ch
        self.decoder = nn.ModuleList(ups)
        self.to_rgb = ModulatedConv2d(
            in_ch, 3, 1, cfg.latent_dim, demodulate=False, activation=False, eps=cfg.demod_eps
        )

        # deeper modulated convs read higher latent levels
        mod_convs = [m for m in [*self.blocks.modules(), *self.decoder.modules(), self.to_rgb] if isinstance(m, ModulatedConv2d)]
        for k, conv in enumerate(mod_convs):
            conv.level = min(cfg.n_levels - 1, math.floor(k / len(mod_convs) * cfg.n_levels))
        self.n_modulated = len(mod_convs)

    def extract_features(self, image: Tensor) -> Tensor:
        R = self.cfg.resolution
        if image.dim() != 4 or tuple(image.shape[1:]) != (3, R, R):
            raise ValueError(f"SVINet expects [B, 3, {R}, {R}] images, got {tuple(image.shape)}")
        return self.encoder(image)

    def film_fuse(self, f: Tensor, f_mirror: Tensor) -> Tensor:
        return self.fusion(f, f_mirror)

    def inpaint(
        self,
        initial: Tensor,
        mirror_initial: Tensor,
        w_plus: Tensor,
        *,
        use_modulation: bool | None = None,
        use_symmetry: bool | None = None,
    ) -> Tensor:
        use_modulation = self.cfg.use_modulation if use_modulation is None else use_modulation
        use_symmetry = self.cfg.use_symmetry if use_symmetry is None else use_symmetry
        if not use_symmetry:
            mirror_initial = torch.zeros_like(mirror_initial)
        f = self.extract_features(initial)
        f_mirror = self.extract_features(mirror_initial)
        x = self.film_fuse(f, f_mirror)
        for block in self.blocks:
            x = block(x, w_plus, use_modulation)
        for up in self.decoder:
            x = up(x, w_plus, use_modulation)
        return torch.tanh(self.to_rgb(x, w_plus, use_modulation))

    def forward(self, initial: Tensor, mirror_initial: Tensor, w_plus: Tensor) -> Tensor:
        return self.inpaint(initial, mirror_initial, w_plus)


__all__ = [
    "DEMOD_EPS",
    "SVINetConfig",
    "modulate_weights",
    "ModulatedConv2d",
    "SpectralTransform",
    "ModulatedFFC",
    "FFCResBlock",
    "SymmetryFusion",
    "SVINet",
]
