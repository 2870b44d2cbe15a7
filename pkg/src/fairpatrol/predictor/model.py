"""Dilated causal graph network, excitation layer and ZINB head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .hawkes import HISTORY, excitation_torch


@dataclass
class StgnnConfig:
    in_channels: int = 13
    hidden: int = 64
    embed: int = 32
    blocks: int = 4
    kernel: int = 2
    dilations: tuple = (1, 2, 4, 8)
    dropout: float = 0.20
    history: int = HISTORY
    alpha_init: float = 0.5
    beta_init: float = 1.0

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        if len(self.dilations) != self.blocks:
            raise ValueError(f"{self.blocks} blocks but {len(self.dilations)} dilations")
        for name in ("in_channels", "hidden", "embed", "blocks", "kernel", "history"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def receptive_field(self) -> int:
        return 1 + sum(d * (self.kernel - 1) for d in self.dilations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


def inverse_softplus(x: float) -> float:
    return x + math.log(-math.expm1(-x))


class Dense(nn.Module):
    """Linear map over the last axis with fan-in uniform init and zero bias."""

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_in, n_out))
        self.bias = nn.Parameter(torch.zeros(n_out))

    def reset(self, gen: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.weight.shape[0])
        with torch.no_grad():
            self.weight.copy_((torch.rand(self.weight.shape, generator=gen, dtype=self.weight.dtype) * 2 - 1) * bound)
            self.bias.zero_()

    def forward(self, x):
        return x @ self.weight + self.bias


class CausalConv(nn.Module):
    """Dilated temporal convolution along axis -2 of (..., W, C), left-padded."""

    def __init__(self, n_in: int, n_out: int, kernel: int, dilation: int):
        super().__init__()
        self.kernel = kernel
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(kernel, n_in, n_out))
        self.bias = nn.Parameter(torch.zeros(n_out))

    def reset(self, gen: torch.Generator) -> None:
        fan_in = self.weight.shape[0] * self.weight.shape[1]
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            self.weight.copy_((torch.rand(self.weight.shape, generator=gen, dtype=self.weight.dtype) * 2 - 1) * bound)
            self.bias.zero_()

    def forward(self, x):
        W = x.shape[-2]
        pad = (self.kernel - 1) * self.dilation
        xp = F.pad(x, (0, 0, pad, 0))
        out = self.bias
        for j in range(self.kernel):
            # tap j looks (kernel - 1 - j) * dilation steps back
            out = out + xp[..., j * self.dilation : j * self.dilation + W, :] @ self.weight[j]
        return out


class Block(nn.Module):
    def __init__(self, C: int, kernel: int, dilation: int, dropout: float):
        super().__init__()
        self.filter = CausalConv(C, C, kernel, dilation)
        self.gate = CausalConv(C, C, kernel, dilation)
        self.mix = Dense(C, C)
        self.skip = Dense(C, C)
        self.dropout = dropout

    def forward(self, x, adj, gen=None):
        # filter and gate share their shifted inputs: one matmul for both
        k, d, W = self.filter.kernel, self.filter.dilation, x.shape[-2]
        xp = F.pad(x, (0, 0, (k - 1) * d, 0))
        taps = torch.cat([xp[..., j * d : j * d + W, :] for j in range(k)], dim=-1)
        C = x.shape[-1]
        weight = torch.cat([self.filter.weight.reshape(k * C, -1), self.gate.weight.reshape(k * C, -1)], dim=-1)
        bias = torch.cat([self.filter.bias, self.gate.bias])
        fg = taps @ weight + bias
        f, g = fg.split(fg.shape[-1] // 2, dim=-1)
        h = torch.tanh(f) * torch.sigmoid(g)
        h = torch.einsum("uv,bvwc->buwc", adj, h)
        h = self.mix(h)
        skip = self.skip(h)
        if self.training and self.dropout > 0:
            keep = torch.rand(h.shape, generator=gen, dtype=h.dtype) >= self.dropout
            h = h * keep / (1.0 - self.dropout)
        return x + h, skip


class Stgnn(nn.Module):
    """Gated WaveNet-style stack with one graph-diffusion hop per block.

    Input (B, N, W, F), output embeddings (B, N, W, D). Causal in W.
    """

    def __init__(self, cfg: StgnnConfig):
        super().__init__()
        C = cfg.hidden
        self.input_proj = Dense(cfg.in_channels, C)
        self.blocks = nn.ModuleList(Block(C, cfg.kernel, d, cfg.dropout) for d in cfg.dilations)
        self.end1 = Dense(C, C)
        self.end2 = Dense(C, cfg.embed)

    def forward(self, x, adj, gen=None):
        h = self.input_proj(x)
        skip = 0
        for block in self.blocks:
            h, s = block(h, adj, gen)
            skip = skip + s
        return self.end2(torch.relu(self.end1(torch.relu(skip))))


class Excitation(nn.Module):
    def __init__(self, n_nodes: int, cfg: StgnnConfig):
        super().__init__()
        self.H = cfg.history
        self.alpha_raw = nn.Parameter(torch.full((n_nodes, n_nodes), inverse_softplus(cfg.alpha_init)))
        self.beta_raw = nn.Parameter(torch.tensor(inverse_softplus(cfg.beta_init)))

    @property
    def alpha(self):
        return F.softplus(self.alpha_raw)

    @property
    def beta(self):
        return F.softplus(self.beta_raw)

    def forward(self, y_seg, W: int):
        return excitation_torch(y_seg, self.alpha, self.beta, self.H, W)


class ZinbHead(nn.Module):
    def __init__(self, D: int):
        super().__init__()
        self.hidden = Dense(D, D)
        self.out = Dense(D, 3)

    def pre_link(self, h):
        return self.out(torch.relu(self.hidden(h)))

    def forward(self, h):
        pre = self.pre_link(h)
        return F.softplus(pre[..., 0]), F.softplus(pre[..., 1]), pre[..., 2]


class CrimeModel(nn.Module):
    """Graph network embeddings plus projected excitation, decoded to ZINB.

    ``forward`` returns ``(mu, theta, pi_logit)``, each (B, N, W).
    """

    def __init__(self, cfg: StgnnConfig, n_nodes: int, seed: int = 42):
        super().__init__()
        self.cfg = cfg
        self.n_nodes = n_nodes
        self.seed = seed
        self.stgnn = Stgnn(cfg)
        self.excitation = Excitation(n_nodes, cfg)
        self.excite_proj = Dense(1, cfg.embed)
        self.head = ZinbHead(cfg.embed)
        self.double()
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, (Dense, CausalConv)):
                m.reset(gen)

    def embed(self, x, y_seg, adj, gen=None):
        W = x.shape[2]
        emb = self.stgnn(x, adj, gen)
        excite = self.excitation(y_seg, W)
        return emb + self.excite_proj(excite.unsqueeze(-1))

    def forward(self, x, y_seg, adj, gen=None):
        return self.head(self.embed(x, y_seg, adj, gen))

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def parameter_count(cfg: StgnnConfig, n_nodes: int) -> int:
    """Closed-form count for the wiring above."""
    C, D, F_, k = cfg.hidden, cfg.embed, cfg.in_channels, cfg.kernel
    per_block = 2 * (k * C * C + C) + 2 * (C * C + C)
    return (
        (F_ * C + C)
        + cfg.blocks * per_block
        + (C * C + C)
        + (C * D + D)
        + n_nodes * n_nodes
        + 1
        + (D + D)
        + (D * D + D)
        + (D * 3 + 3)
    )


def state_arrays(model: nn.Module) -> dict:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_arrays(model: nn.Module, arrays: dict) -> None:
    model.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()})
