"""Missingness inference and latent-space imputation.

The missingness label is a hard threshold of a Gaussian pre-activation
``x ~ N(mu_m - 0.5, sigma_m^2)`` read from the encoder state. The threshold is
not differentiated; training-time rendering uses the soft visibility gate
``1 - sigmoid(x)`` so the missingness head receives gradients from the decoder.

Imputation follows the substitution reading of the mixing probability: when
the object is present, ``p`` is the chance of replacing the observed state with
the autoregressive prediction during training; at evaluation ``p = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..noise import Noise


class NumericalError(FloatingPointError):
    """Non-finite values reached a model computation."""


def heaviside(x: torch.Tensor) -> torch.Tensor:
    """1 where x >= 0 else 0; constant w.r.t. autograd."""
    x = x.detach()
    return torch.where(x >= 0, torch.ones_like(x), torch.zeros_like(x))


def soft_gate(x: torch.Tensor) -> torch.Tensor:
    return 1.0 - torch.sigmoid(x)


@dataclass
class MissingnessSample:
    x: torch.Tensor
    mu: torch.Tensor  # mean of x, bias included
    sigma: torch.Tensor
    z_m: torch.Tensor
    gate: torch.Tensor


def sample_missingness(mu: torch.Tensor, sigma: torch.Tensor, noise: Noise | None,
                       mode: str = "train", soft_labels: bool = False) -> MissingnessSample:
    """Draw ``x``, threshold it, and return the label plus visibility gate.

    ``mu`` must already include the logit bias. Eval mode uses ``x = mu``.
    """
    if mode == "train":
        x = mu + sigma * noise.normal(mu.shape, mu.dtype)
    else:
        x = mu
    z = torch.sigmoid(x) if soft_labels else heaviside(x)
    return MissingnessSample(x=x, mu=mu, sigma=sigma, z_m=z, gate=soft_gate(x))


class MissingnessHead(nn.Module):
    def __init__(self, hidden_y: int, bias: float = -0.5, sigma_floor: float = 1e-4):
        super().__init__()
        self.fc = nn.Linear(hidden_y, 2)
        self.bias = bias
        self.sigma_floor = sigma_floor

    def params(self, h_y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if not torch.isfinite(h_y).all():
            raise NumericalError("non-finite encoder state fed to missingness head")
        mu, log_var = self.fc(h_y).unbind(-1)
        sigma = torch.exp(0.5 * log_var).clamp_min(self.sigma_floor)
        return mu + self.bias, sigma

    def forward(self, h_y, noise=None, mode="train", soft_labels=False) -> MissingnessSample:
        mu, sigma = self.params(h_y)
        return sample_missingness(mu, sigma, noise, mode, soft_labels)


def infer_missingness(head: MissingnessHead, h_y, noise, mode="train", soft_labels=False) -> MissingnessSample:
    return head(h_y, noise, mode, soft_labels)


class ImputationMap(nn.Module):
    """Affine map from the previous pose hidden state to an imputed encoder state."""

    def __init__(self, hidden_p: int, hidden_y: int):
        super().__init__()
        self.fc = nn.Linear(hidden_p, hidden_y)

    def forward(self, h_p_prev: torch.Tensor) -> torch.Tensor:
        return self.fc(h_p_prev)


def predict_imputed_hidden(imap: ImputationMap, h_p_prev: torch.Tensor) -> torch.Tensor:
    return imap(h_p_prev)


@dataclass
class ImputedState:
    u: torch.Tensor
    h_hat: torch.Tensor
    gamma_draws: torch.Tensor  # 1 where the imputed state replaced an observed one


def impute(h_y: torch.Tensor, h_hat: torch.Tensor, z_m: torch.Tensor, p_substitute: float,
           noise: Noise | None, mode: str = "train") -> ImputedState:
    """Select between observed and imputed encoder states.

    ``z_m`` has shape ``h_y.shape[:-1]``. Hard labels give a bit-exact
    selection; soft labels (values in (0, 1)) blend the two candidates.
    """
    if not 0.0 <= p_substitute <= 1.0:
        raise ValueError("p_substitute must be in [0, 1]")
    if mode == "train" and p_substitute > 0:
        gamma = noise.bernoulli(p_substitute, z_m.shape, h_y.dtype)
    else:
        gamma = torch.zeros_like(z_m, dtype=h_y.dtype)
    hard = bool(((z_m == 0) | (z_m == 1)).all())
    if hard:
        use_hat = (z_m > 0.5) | (gamma > 0.5)
        u = torch.where(use_hat.unsqueeze(-1), h_hat, h_y)
    else:
        observed = torch.where((gamma > 0.5).unsqueeze(-1), h_hat, h_y)
        w = z_m.unsqueeze(-1)
        u = w * h_hat + (1 - w) * observed
    return ImputedState(u=u, h_hat=h_hat, gamma_draws=gamma)


def gaussian_kl(mu: torch.Tensor, sigma: torch.Tensor, prior_mu=0.0, prior_sigma=1.0) -> torch.Tensor:
    """Elementwise KL(N(mu, sigma^2) || N(prior_mu, prior_sigma^2))."""
    var_ratio = (sigma / prior_sigma) ** 2
    return 0.5 * (var_ratio + ((mu - prior_mu) / prior_sigma) ** 2 - 1.0 - torch.log(var_ratio))

