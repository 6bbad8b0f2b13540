"""State-space pose model.

The pose hidden state consumes the imputed encoder state during the input
regime and runs input-free afterwards. A stochastic transition variable
``beta ~ N(mu_p, sigma_p^2)`` drives a deterministic residual transition on
the raw (unsquashed) pose.
"""
from __future__ import annotations

import torch
from torch import nn

from ..config import ModelConfig
from ..noise import Noise
from ..spatial import squash_pose, unsquash_pose


class SigmaClampCounter:
    def __init__(self):
        self.count = 0


sigma_clamps = SigmaClampCounter()


def clamp_sigma(sigma: torch.Tensor, floor: float = 1e-4) -> torch.Tensor:
    n = int((sigma < floor).sum())
    if n:
        sigma_clamps.count += n
    return sigma.clamp_min(floor)


class Transition(nn.Module):
    """f_tran: raw_pose[t] = raw_pose[t-1] + MLP([raw_pose[t-1], beta[t]])."""

    def __init__(self, pose_dim: int = 3, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(2 * pose_dim, hidden), nn.Tanh(), nn.Linear(hidden, pose_dim))

    def forward(self, raw_prev: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        return raw_prev + self.net(torch.cat([raw_prev, beta], -1))


class PoseModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.lstm_in = nn.LSTMCell(cfg.hidden_y, cfg.hidden_p)
        self.lstm_pred = nn.LSTMCell(1, cfg.hidden_p)
        self.head = nn.Linear(cfg.hidden_p, 2 * cfg.pose_dim)
        self.tran = Transition(cfg.pose_dim, cfg.tran_hidden)
        # learned initial raw pose per object slot, spread out to break symmetry
        init = torch.zeros(cfg.num_objects, cfg.pose_dim)
        offsets = torch.linspace(-0.3, 0.3, cfg.num_objects) if cfg.num_objects > 1 else torch.zeros(1)
        init[:, 0] = offsets
        init[:, 1] = -offsets
        init_pose = torch.tensor([0.0, 0.0, cfg.init_scale])
        init[:, 2] = unsquash_pose(init_pose, cfg.scale_min, cfg.scale_max)[2]
        self.raw_pose0 = nn.Parameter(init)

    def step_pose_hidden(self, state, u):
        return self.lstm_in(u, state)

    def step_pose_hidden_predict(self, state):
        h = state[0]
        return self.lstm_pred(h.new_zeros(h.shape[0], 1), state)

    def transition_params(self, h_p: torch.Tensor):
        mu, log_var = self.head(h_p).chunk(2, -1)
        return mu, clamp_sigma(torch.exp(0.5 * log_var), self.cfg.sigma_floor)

    def sample_transition(self, h_p: torch.Tensor, noise: Noise | None, mode: str = "train"):
        """Reparameterized draw; eval mode returns the mean."""
        mu, sigma = self.transition_params(h_p)
        if mode == "train":
            beta = mu + sigma * noise.normal(mu.shape, mu.dtype)
        else:
            beta = mu
        return beta, mu, sigma

    def transition(self, raw_prev: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        return self.tran(raw_prev, beta)

    def squash(self, raw: torch.Tensor) -> torch.Tensor:
        return squash_pose(raw, self.cfg.scale_min, self.cfg.scale_max)
