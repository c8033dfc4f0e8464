"""Encoder / Fourier-feature decoder network for boundary potentials.

The encoder maps the geometry parameter ``t`` to a latent code ``beta`` of
width ``p``; the decoder evaluates ``f(beta, x)`` at boundary points ``x``.
Outputs are the potential with the parameter-to-surface jacobian absorbed.
"""

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from . import rng as rngs
from .training import gelu, xavier_init

N_OUT = {"laplace2d": 1, "biharmonic2d": 2, "helmholtz3d": 2}


class MLP(nn.Module):
    """Fully-connected stack with GeLU on hidden layers and a linear output."""

    def __init__(self, n_in, n_out, depth, width):
        super().__init__()
        sizes = [n_in] + [width] * depth + [n_out]
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=torch.float64) for a, b in zip(sizes[:-1], sizes[1:])
        )

    def forward(self, h, first=None):
        """``first`` replaces the first layer's affine map when given."""
        h = self.layers[0](h) if first is None else first
        for layer in self.layers[1:]:
            h = layer(gelu(h))
        return h


class OperatorModel(nn.Module):
    def __init__(
        self,
        dim,
        n_out,
        encoder_depth=3,
        encoder_width=100,
        p=100,
        decoder_depth=3,
        decoder_width=100,
        fourier_features=64,
        fourier_scale=1.0,
        fourier_trainable=True,
        decoder_mode="fourier",
        fusion="concat",
        param_dim=1,
    ):
        super().__init__()
        if decoder_mode not in ("fourier", "plain"):
            raise ValueError(f"unknown decoder mode {decoder_mode!r}")
        if fusion not in ("concat", "inner"):
            raise ValueError(f"unknown fusion {fusion!r}")
        self.dim = dim
        self.n_out = n_out
        self.p = p
        self.decoder_mode = decoder_mode
        self.fusion = fusion
        self.fourier_scale = fourier_scale
        self.encoder = MLP(param_dim, p, encoder_depth, encoder_width)
        if decoder_mode == "fourier":
            self.fourier = nn.Parameter(
                torch.zeros(fourier_features, dim, dtype=torch.float64),
                requires_grad=fourier_trainable,
            )
            n_feat = 2 * fourier_features
        else:
            self.register_parameter("fourier", None)
            n_feat = dim
        if fusion == "concat":
            self.head = MLP(n_feat + p, n_out, decoder_depth, decoder_width)
        else:
            self.head = MLP(n_feat, p * n_out, decoder_depth, decoder_width)

    def initialize(self, seed):
        """Xavier-uniform weights, zero biases, standard-normal Fourier matrix."""
        g = rngs.stream(seed, rngs.INIT)
        with torch.no_grad():
            for layer in [*self.encoder.layers, *self.head.layers]:
                layer.weight.copy_(torch.from_numpy(xavier_init(tuple(layer.weight.shape), g)))
                layer.bias.zero_()
            if self.fourier is not None:
                self.fourier.copy_(
                    torch.from_numpy(self.fourier_scale * g.standard_normal(tuple(self.fourier.shape)))
                )
        return self

    def encode(self, t):
        t = torch.as_tensor(t, dtype=torch.float64)
        return self.encoder(t.reshape(-1, 1)).reshape(*t.shape, self.p)

    def features(self, x):
        if self.fourier is None:
            return x
        z = x @ self.fourier.T
        return torch.cat([torch.cos(z), torch.sin(z)], dim=-1)

    def decode(self, beta, x):
        """``beta`` (..., p) and ``x`` (..., M, dim) -> (..., M, n_out)."""
        x = torch.as_tensor(x, dtype=torch.float64)
        feat = self.features(x)
        if self.fusion == "concat":
            # W [feat; beta] + b split by columns: the latent part is shared by all points
            first = self.head.layers[0]
            n_feat = feat.shape[-1]
            h = F.linear(feat, first.weight[:, :n_feat])
            h = h + F.linear(beta, first.weight[:, n_feat:], first.bias).unsqueeze(-2)
            return self.head(None, first=h)
        basis = self.head(feat).reshape(*feat.shape[:-1], self.n_out, self.p)
        return (basis * beta[..., None, None, :]).sum(-1)

    def forward(self, t, x):
        """Potential for parameters ``t`` (N_t,) at points ``x`` (N_t, M, dim)."""
        return self.decode(self.encode(t), x)

    def potential(self, t, x):
        """Single-geometry convenience: scalar ``t``, points (M, dim)."""
        t = torch.as_tensor([float(t)], dtype=torch.float64)
        x = torch.as_tensor(x, dtype=torch.float64)
        return self.forward(t, x[None])[0]

    def density(self, ts, samples):
        pts = torch.from_numpy(np.stack([s.points for s in samples]))
        return self.forward(torch.as_tensor(np.asarray(ts, dtype=float)), pts)

    def n_params(self):
        return sum(p.numel() for p in self.parameters())


def mlp_param_count(n_in, n_out, depth, width):
    if depth == 0:
        return (n_in + 1) * n_out
    return (n_in + 1) * width + (depth - 1) * (width + 1) * width + (width + 1) * n_out


def param_count(dim, n_out, encoder_depth, encoder_width, p, decoder_depth, decoder_width,
                fourier_features, decoder_mode="fourier", fusion="concat", param_dim=1):
    """Closed-form parameter count of :class:`OperatorModel`."""
    total = mlp_param_count(param_dim, p, encoder_depth, encoder_width)
    n_feat = 2 * fourier_features if decoder_mode == "fourier" else dim
    if decoder_mode == "fourier":
        total += fourier_features * dim
    if fusion == "concat":
        total += mlp_param_count(n_feat + p, n_out, decoder_depth, decoder_width)
    else:
        total += mlp_param_count(n_feat, p * n_out, decoder_depth, decoder_width)
    return total


def build_model(cfg):
    """Instantiate and initialize the model described by a RunConfig."""
    dim = 3 if cfg.problem == "helmholtz3d" else 2
    model = OperatorModel(
        dim,
        N_OUT[cfg.problem],
        encoder_depth=cfg.encoder_depth,
        encoder_width=cfg.encoder_width,
        p=cfg.p,
        decoder_depth=cfg.decoder_depth,
        decoder_width=cfg.decoder_width,
        fourier_features=cfg.fourier_features,
        fourier_scale=cfg.fourier_scale,
        fourier_trainable=cfg.fourier_trainable,
        decoder_mode=cfg.decoder_mode,
        fusion=cfg.fusion,
    )
    return model.initialize(cfg.seed)
