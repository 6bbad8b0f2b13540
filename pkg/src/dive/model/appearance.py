"""Static and dynamic appearance, and the mixed appearance posterior.

Steps where an object is labelled missing are skipped by the glimpse-driven
recurrence: the glimpse is not read and the hidden state is carried through.
"""
from __future__ import annotations

import torch
from torch import nn

from ..config import ModelConfig
from ..noise import Noise
from ..spatial import extract


class GlimpseEncoder(nn.Module):
    def __init__(self, glimpse_size: int, out_dim: int, channels=(16, 32)):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(1, channels[0], 4, 2, 1), nn.ReLU(),
            nn.Conv2d(channels[0], channels[1], 4, 2, 1), nn.ReLU(),
        )
        side = glimpse_size // 4
        self.fc = nn.Sequential(nn.Linear(channels[1] * side * side, out_dim), nn.ReLU())

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        lead = g.shape[:-2]
        h = self.conv(g.reshape(-1, 1, *g.shape[-2:]))
        return self.fc(h.flatten(1)).reshape(*lead, -1)


class AppearanceModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.glimpse_enc = GlimpseEncoder(cfg.glimpse_size, cfg.glimpse_embed_dim, cfg.glimpse_channels)
        self.lstm1 = nn.LSTMCell(cfg.glimpse_embed_dim, cfg.hidden_a)
        self.lstm2 = nn.LSTMCell(1, cfg.hidden_a)
        self.fc_static = nn.Linear(cfg.hidden_a, cfg.a_static)
        self.fc_dyn0 = nn.Linear(cfg.a_static + cfg.glimpse_embed_dim, cfg.a_dynamic)
        self.fc_delta = nn.Linear(cfg.hidden_a + cfg.a_static, cfg.a_dynamic)
        self.fc_post = nn.Linear(cfg.a_static + cfg.a_dynamic, 2 * cfg.z_appearance)

    def glimpses(self, frames: torch.Tensor, poses: torch.Tensor) -> torch.Tensor:
        """Rectified crops: frames ``(B, K, H, W)``, poses ``(B, N, K, 3)`` -> ``(B, N, K, G, G)``."""
        N = poses.shape[1]
        f = frames.unsqueeze(1).expand(-1, N, -1, -1, -1)
        return extract(f, poses, self.cfg.glimpse_size,
                       scale_bounds=(self.cfg.scale_min, self.cfg.scale_max))

    def encode_appearance(self, glimpse_feats: torch.Tensor, z_m: torch.Tensor, n_total: int):
        """Hidden trace ``h_a`` for steps 1..T and the static code ``a_s``.

        glimpse_feats ``(M, K, E)``, z_m ``(M, K)`` hard labels.
        Returns ``h_a (M, T, hidden_a)``, ``a_s (M, a_static)``.
        """
        M, K = glimpse_feats.shape[:2]
        h = glimpse_feats.new_zeros(M, self.cfg.hidden_a)
        c = torch.zeros_like(h)
        trace = [h]
        for t in range(n_total - 1):
            if t < K - 1:
                h_new, c_new = self.lstm1(glimpse_feats[:, t], (h, c))
                keep = (z_m[:, t] > 0.5).unsqueeze(-1)
                h = torch.where(keep, h, h_new)
                c = torch.where(keep, c, c_new)
            else:
                h, c = self.lstm2(h.new_zeros(M, 1), (h, c))
            trace.append(h)
        h_a = torch.stack(trace, 1)
        a_s = self.fc_static(h_a[:, K - 1])
        return h_a, a_s

    def dynamic_appearance(self, a_s: torch.Tensor, first_feat: torch.Tensor, h_a: torch.Tensor) -> torch.Tensor:
        """Residual trace: a_d[1] from (a_s, first glimpse), a_d[t+1] = a_d[t] + delta[t]."""
        return self.accumulate(self.fc_dyn0(torch.cat([a_s, first_feat], -1)), self.deltas(a_s, h_a))

    def deltas(self, a_s: torch.Tensor, h_a: torch.Tensor) -> torch.Tensor:
        T = h_a.shape[1]
        return self.fc_delta(torch.cat([h_a, a_s.unsqueeze(1).expand(-1, T, -1)], -1))

    @staticmethod
    def accumulate(a_d0: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
        T = delta.shape[1]
        steps = [a_d0]
        for t in range(T - 1):
            steps.append(steps[-1] + delta[:, t])
        return torch.stack(steps, 1)

    def posterior(self, a_s: torch.Tensor, a_d: torch.Tensor, gamma: torch.Tensor):
        T = a_d.shape[1]
        inp = torch.cat([a_s.unsqueeze(1).expand(-1, T, -1), gamma.unsqueeze(-1) * a_d], -1)
        mu, log_var = self.fc_post(inp).chunk(2, -1)
        return mu, torch.exp(0.5 * log_var).clamp_min(self.cfg.sigma_floor)

    def sample_appearance(self, a_s, a_d, p_dynamic: float, noise: Noise | None, mode: str = "train",
                          static_only: bool = False):
        """Mix static and dynamic codes with ``gamma ~ Bernoulli(p)`` and draw ``z_a``.

        Eval mode uses ``p = 1`` and the posterior mean; ``static_only`` forces
        ``p = 0`` in both modes.
        """
        shape = a_d.shape[:2]
        if static_only:
            gamma = a_d.new_zeros(shape)
        elif mode == "train":
            gamma = noise.bernoulli(p_dynamic, shape, a_d.dtype)
        else:
            gamma = a_d.new_ones(shape)
        mu, sigma = self.posterior(a_s, a_d, gamma)
        z = mu + sigma * noise.normal(mu.shape, mu.dtype) if mode == "train" else mu
        return z, mu, sigma, gamma
