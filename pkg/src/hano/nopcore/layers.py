"""Operator layers acting on (batch, length, channels) feature tensors."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

ACTIVATIONS = {
    "gelu": F.gelu,
    "relu": F.relu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


def get_activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class Pointwise(nn.Linear):
    """Channel-mixing linear map applied independently at every time index."""


class SpectralConv1d(nn.Module):
    """Truncated-spectrum channel mixing along the sequence axis.

    The forward transform is scaled by 1/L, so a filter learned at one
    sequence length acts on the same physical wavenumbers at another.
    Weights are stored as real (modes, in, out, 2) arrays.
    """

    def __init__(self, in_channels: int, out_channels: int, modes: int):
        super().__init__()
        if modes < 1:
            raise ValueError("need at least one retained mode")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.modes = modes
        self.weight = nn.Parameter(torch.empty(modes, in_channels, out_channels, 2))
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        scale = 1.0 / (self.in_channels * self.out_channels)
        with torch.no_grad():
            self.weight.copy_(scale * torch.rand(self.weight.shape, generator=generator, dtype=self.weight.dtype))

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        B, L, _ = v.shape
        n_freq = L // 2 + 1
        if self.modes > n_freq:
            raise ValueError(f"{self.modes} modes exceed {n_freq} available for length {L}")
        spec = torch.fft.rfft(v, dim=1, norm="forward")
        w = torch.view_as_complex(self.weight)
        mixed = torch.einsum("bmi,mio->bmo", spec[:, : self.modes], w)
        if self.modes < n_freq:
            pad = torch.zeros(B, n_freq - self.modes, self.out_channels, dtype=mixed.dtype, device=v.device)
            mixed = torch.cat([mixed, pad], dim=1)
        return torch.fft.irfft(mixed, n=L, dim=1, norm="forward")


class UNet1d(nn.Module):
    """Two-level 1D encoder/decoder with skip connections; length-preserving.

    Downsampling uses stride-2 convolutions (ceil halving); upsampling is
    nearest-neighbour x2 followed by a crop back to the skip length, so any
    length L >= 1 round-trips.
    """

    def __init__(self, width: int, activation: str = "gelu"):
        super().__init__()
        w = width
        self.act = get_activation(activation)
        self.enc1 = nn.Conv1d(w, w, 3, padding=1)
        self.down1 = nn.Conv1d(w, w, 3, stride=2, padding=1)
        self.enc2 = nn.Conv1d(w, w, 3, padding=1)
        self.down2 = nn.Conv1d(w, w, 3, stride=2, padding=1)
        self.bottleneck = nn.Conv1d(w, w, 3, padding=1)
        self.up2 = nn.Conv1d(w, w, 3, padding=1)
        self.fuse2 = nn.Conv1d(2 * w, w, 1)
        self.up1 = nn.Conv1d(w, w, 3, padding=1)
        self.fuse1 = nn.Conv1d(2 * w, w, 1)

    @staticmethod
    def _upsample(x, length):
        return F.interpolate(x, scale_factor=2, mode="nearest")[..., :length]

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        x = v.transpose(1, 2)
        s1 = self.act(self.enc1(x))
        s2 = self.act(self.enc2(self.down1(s1)))
        b = self.act(self.bottleneck(self.down2(s2)))
        u2 = self.act(self.up2(self._upsample(b, s2.shape[-1])))
        u2 = self.fuse2(torch.cat([u2, s2], dim=1))
        u1 = self.act(self.up1(self._upsample(u2, s1.shape[-1])))
        u1 = self.fuse1(torch.cat([u1, s1], dim=1))
        return u1.transpose(1, 2)


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention over the sequence axis.

    With ``passthrough=True`` the attention matrix is replaced by the
    identity, so the block reduces to out_proj(value_proj(v)).
    """

    def __init__(self, width: int, heads: int = 4):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = width // heads
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)
        self.passthrough = False
        self.last_weights = None

    def _split(self, x):
        B, L, _ = x.shape
        return x.view(B, L, self.heads, self.head_dim).transpose(1, 2)

    def attention_weights(self, v: torch.Tensor) -> torch.Tensor:
        q, k = self._split(self.query(v)), self._split(self.key(v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        return torch.softmax(scores, dim=-1)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        B, L, C = v.shape
        val = self._split(self.value(v))
        if self.passthrough:
            mixed = val
            self.last_weights = None
        else:
            weights = self.attention_weights(v)
            self.last_weights = weights.detach()
            mixed = weights @ val
        return self.out(mixed.transpose(1, 2).reshape(B, L, C))


class FourierLayer(nn.Module):
    """act(W v + K v)."""

    def __init__(self, width: int, modes: int, activation: str = "gelu"):
        super().__init__()
        self.spectral = SpectralConv1d(width, width, modes)
        self.linear = Pointwise(width, width)
        self.act = get_activation(activation)

    def forward(self, v):
        return self.act(self.linear(v) + self.spectral(v))


class UFourierLayer(nn.Module):
    """act(K v + U v + W v)."""

    def __init__(self, width: int, modes: int, activation: str = "gelu"):
        super().__init__()
        self.spectral = SpectralConv1d(width, width, modes)
        self.unet = UNet1d(width, activation)
        self.linear = Pointwise(width, width)
        self.act = get_activation(activation)

    def forward(self, v):
        return self.act(self.spectral(v) + self.unet(v) + self.linear(v))


class AEUFLayer(UFourierLayer):
    """U-Fourier layer whose three branches all read Attn(v)."""

    def __init__(self, width: int, modes: int, heads: int = 4, activation: str = "gelu"):
        super().__init__(width, modes, activation)
        self.attention = SelfAttention(width, heads)

    def forward(self, v):
        return super().forward(self.attention(v))


class AttentionFourierLayer(nn.Module):
    """Fourier layer with a parallel attention branch: act(K v + Attn(v) + W v)."""

    def __init__(self, width: int, modes: int, heads: int = 4, activation: str = "gelu"):
        super().__init__()
        self.spectral = SpectralConv1d(width, width, modes)
        self.attention = SelfAttention(width, heads)
        self.linear = Pointwise(width, width)
        self.act = get_activation(activation)

    def forward(self, v):
        return self.act(self.spectral(v) + self.attention(v) + self.linear(v))


class Projection(nn.Module):
    """Pointwise two-layer MLP followed by a read-off along the sequence axis."""

    def __init__(self, width: int, out_channels: int, hidden: int = 128, activation: str = "gelu",
                 readout: str = "last"):
        super().__init__()
        if readout not in ("last", "mean"):
            raise ValueError(f"unknown readout {readout!r}")
        self.fc1 = Pointwise(width, hidden)
        self.fc2 = Pointwise(hidden, out_channels)
        self.act = get_activation(activation)
        self.readout = readout

    def forward(self, v):
        y = self.fc2(self.act(self.fc1(v)))
        return y[:, -1] if self.readout == "last" else y.mean(dim=1)
