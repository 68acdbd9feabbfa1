"""Model specifications and the operator / recurrent assemblies built from them."""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from ..errors import GradientError, ModelDefinitionError
from .layers import (
    AEUFLayer,
    AttentionFourierLayer,
    FourierLayer,
    Projection,
    SelfAttention,
    SpectralConv1d,
    UFourierLayer,
    get_activation,
)

VARIANTS = ("fno", "ufno", "hano1", "hano2", "hano3", "rnn1", "rnn2")


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "hano3"
    fourier_layers: int = 3
    aeuf_layers: int = 3
    modes: int = 5
    width: int = 64
    heads: int = 4
    window: int = 10
    dim: int = 1
    activation: str = "gelu"
    projection_hidden: int = 128
    rnn_hidden: int = 128
    readout: str = "last"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelDefinitionError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if min(self.fourier_layers, self.aeuf_layers) < 0:
            raise ModelDefinitionError("layer counts must be >= 0")
        if min(self.width, self.window, self.dim, self.modes, self.heads) < 1:
            raise ModelDefinitionError("width, window, dim, modes and heads must be >= 1")
        if not self.is_recurrent:
            if self.width % self.heads:
                raise ModelDefinitionError(f"width {self.width} not divisible by heads {self.heads}")
            if self.modes > self.window // 2 + 1:
                raise ModelDefinitionError(
                    f"modes={self.modes} exceeds floor(k/2)+1={self.window // 2 + 1} for window {self.window}"
                )
        try:
            get_activation(self.activation)
        except ValueError as exc:
            raise ModelDefinitionError(str(exc)) from None
        if self.readout not in ("last", "mean"):
            raise ModelDefinitionError(f"unknown readout {self.readout!r}")

    @property
    def is_recurrent(self) -> bool:
        return self.variant.startswith("rnn")

    @property
    def in_channels(self) -> int:
        # strain, stress and the broadcast next increment per component
        if self.variant == "rnn1":
            return 2 * self.dim
        return 3 * self.dim

    @property
    def out_channels(self) -> int:
        return self.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def with_window(self, k: int) -> "ModelSpec":
        """Same architecture at window length k, capping modes at floor(k/2)+1."""
        return replace(self, window=k, modes=min(self.modes, k // 2 + 1))


def assemble_input(strain: torch.Tensor, stress: torch.Tensor, d_eps: torch.Tensor) -> torch.Tensor:
    """[strain, stress, next increment replicated k times] -> (B, k, 3d)."""
    k = strain.shape[1]
    return torch.cat([strain, stress, d_eps[:, None, :].expand(-1, k, -1)], dim=-1)


class NeuralOperator(nn.Module):
    """lift -> operator layers -> projection, evaluated on one history window."""

    recurrent = False

    def __init__(self, spec: ModelSpec):
        super().__init__()
        s = spec
        self.spec = s
        self.lift = nn.Linear(s.in_channels, s.width)
        self.pre_attention = SelfAttention(s.width, s.heads) if s.variant == "hano1" else None
        layers, names = [], []
        if s.variant == "fno":
            for i in range(s.fourier_layers + s.aeuf_layers):
                layers.append(FourierLayer(s.width, s.modes, s.activation))
                names.append(f"fourier.{i}")
        else:
            first = AttentionFourierLayer if s.variant == "hano2" else FourierLayer
            for i in range(s.fourier_layers):
                if first is FourierLayer:
                    layers.append(FourierLayer(s.width, s.modes, s.activation))
                    names.append(f"fourier.{i}")
                else:
                    layers.append(AttentionFourierLayer(s.width, s.modes, s.heads, s.activation))
                    names.append(f"attn_fourier.{i}")
            for i in range(s.aeuf_layers):
                if s.variant == "hano3":
                    layers.append(AEUFLayer(s.width, s.modes, s.heads, s.activation))
                    names.append(f"aeuf.{i}")
                else:
                    layers.append(UFourierLayer(s.width, s.modes, s.activation))
                    names.append(f"ufourier.{i}")
        self.layers = nn.ModuleList(layers)
        self.layer_names = names
        self.project = Projection(s.width, s.out_channels, s.projection_hidden, s.activation, s.readout)

    def named_blocks(self):
        yield "lift", self.lift
        if self.pre_attention is not None:
            yield "pre_attention", self.pre_attention
        yield from zip(self.layer_names, self.layers)
        yield "project", self.project

    def features(self, strain, stress, d_eps):
        v = self.lift(assemble_input(strain, stress, d_eps))
        if self.pre_attention is not None:
            v = self.pre_attention(v)
        for layer in self.layers:
            v = layer(v)
        return v

    def forward(self, strain, stress, d_eps):
        return self.project(self.features(strain, stress, d_eps))


class RecurrentBaseline(nn.Module):
    """Elman cell h_n = tanh(W_hh h_{n-1} + W_xh x_n + b_h), y_n = W_hy h_n + b_y.

    rnn2 reads x_n = [eps_n, sigma_n, d_eps_{n+1}]; rnn1 drops the stress.
    The output at step n is the prediction of sigma_{n+1}.
    """

    recurrent = True

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        h = spec.rnn_hidden
        self.W_xh = nn.Linear(spec.in_channels, h, bias=True)
        self.W_hh = nn.Linear(h, h, bias=False)
        self.W_hy = nn.Linear(h, spec.out_channels, bias=True)
        self.uses_stress = spec.variant == "rnn2"

    def named_blocks(self):
        yield "W_xh", self.W_xh
        yield "W_hh", self.W_hh
        yield "W_hy", self.W_hy

    def init_hidden(self, batch: int, like: torch.Tensor) -> torch.Tensor:
        return torch.zeros(batch, self.spec.rnn_hidden, dtype=like.dtype, device=like.device)

    def cell_input(self, strain, stress, d_eps):
        parts = [strain, stress, d_eps] if self.uses_stress else [strain, d_eps]
        return torch.cat(parts, dim=-1)

    def step(self, h, strain, stress, d_eps):
        h = torch.tanh(self.W_hh(h) + self.W_xh(self.cell_input(strain, stress, d_eps)))
        return h, self.W_hy(h)

    def run(self, strain, stress, d_eps, h=None):
        """Unroll over (B, T, d) inputs; returns (outputs (B, T, d), final h)."""
        if h is None:
            h = self.init_hidden(strain.shape[0], strain)
        x = self.W_xh(self.cell_input(strain, stress, d_eps))
        outs = []
        for t in range(strain.shape[1]):
            h = torch.tanh(self.W_hh(h) + x[:, t])
            outs.append(h)
        hs = torch.stack(outs, dim=1)
        return self.W_hy(hs), h

    def forward(self, strain, stress, d_eps):
        """Zero hidden state at the window start, read out after the last pair."""
        incs = torch.cat([strain[:, 1:] - strain[:, :-1], d_eps[:, None, :]], dim=1)
        y, _ = self.run(strain, stress, incs)
        return y[:, -1]


def _layer_seed(seed: int, name: str) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


def _init_block(block: nn.Module, gen: torch.Generator):
    for mod in block.modules():
        if isinstance(mod, SpectralConv1d):
            mod.reset_parameters(gen)
        elif isinstance(mod, (nn.Linear, nn.Conv1d)):
            fan_in = mod.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                mod.weight.uniform_(-bound, bound, generator=gen)
                if mod.bias is not None:
                    mod.bias.uniform_(-bound, bound, generator=gen)


def build_model(spec: ModelSpec, seed: int = 0) -> nn.Module:
    """Instantiate a model with layer-wise seeded initialisation.

    Each named block draws from its own generator keyed on (seed, name), so
    blocks sharing a name across variants start from identical weights.
    """
    if not isinstance(spec, ModelSpec):
        raise ModelDefinitionError("build_model expects a ModelSpec")
    model = RecurrentBaseline(spec) if spec.is_recurrent else NeuralOperator(spec)
    for name, block in model.named_blocks():
        gen = torch.Generator().manual_seed(_layer_seed(seed, name))
        _init_block(block, gen)
    return model


def forward(model: nn.Module, strain, stress, d_eps) -> torch.Tensor:
    """Evaluate on arrays shaped (B, k, d), (B, k, d), (B, d)."""
    dtype = next(model.parameters()).dtype
    as_t = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype)  # noqa: E731
    return model(as_t(strain), as_t(stress), as_t(d_eps))


def parameter_set(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def count_parameters(spec_or_model) -> int:
    model = build_model(spec_or_model) if isinstance(spec_or_model, ModelSpec) else spec_or_model
    return sum(p.numel() for p in model.parameters())


def gradients(model: nn.Module, loss: torch.Tensor) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss for every named parameter."""
    if not torch.isfinite(loss).all():
        raise GradientError(f"non-finite loss {loss.item()!r}")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out = {}
    for n, p, g in zip(names, params, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise GradientError(f"non-finite gradient for {n}")
        out[n] = g.detach().cpu().numpy()
    return out
