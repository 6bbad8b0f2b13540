"""The full model: decomposition, missingness, imputation, pose, appearance, rendering.

Objects are folded into the batch dimension after encoding, so most tensors
below are ``(B*N, ...)`` internally and ``(B, N, ...)`` in :class:`DiveOutput`.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..config import ModelConfig
from ..noise import Noise
from .appearance import AppearanceModel
from .encoder import SequenceEncoder
from .generator import GlimpseDecoder, compose, render_objects
from .missingness import ImputationMap, MissingnessHead, impute, sample_missingness
from .pose import PoseModel


@dataclass
class DiveOutput:
    h_y: torch.Tensor  # (B, N, K, hy)
    miss_x: torch.Tensor  # (B, N, K) pre-threshold sample
    miss_mu: torch.Tensor  # (B, N, K) mean of x (bias included)
    miss_sigma: torch.Tensor
    z_m: torch.Tensor  # (B, N, K)
    gate: torch.Tensor  # (B, N, K) gate applied to rendering
    h_hat: torch.Tensor  # (B, N, K, hy)
    u: torch.Tensor  # (B, N, K, hy)
    gamma_sub: torch.Tensor  # (B, N, K)
    h_p: torch.Tensor  # (B, N, T, hp)
    beta: torch.Tensor  # (B, N, T, 3)
    beta_mu: torch.Tensor
    beta_sigma: torch.Tensor
    raw_pose: torch.Tensor  # (B, N, T, 3)
    pose: torch.Tensor  # (B, N, T, 3)
    input_glimpses: torch.Tensor  # (B, N, K, G, G)
    h_a: torch.Tensor  # (B, N, T, ha)
    a_s: torch.Tensor  # (B, N, as)
    a_d: torch.Tensor  # (B, N, T, ad)
    z_a: torch.Tensor  # (B, N, T, za)
    za_mu: torch.Tensor
    za_sigma: torch.Tensor
    gamma_app: torch.Tensor  # (B, N, T)
    glimpses: torch.Tensor  # (B, N, T, G, G) decoded
    placed: torch.Tensor  # (B, N, T, H, W) ungated
    contributions: torch.Tensor  # (B, N, T, H, W) gated for t < K
    frames: torch.Tensor  # (B, T, H, W)


class DIVE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = SequenceEncoder(cfg)
        self.missingness = MissingnessHead(cfg.hidden_y, cfg.missing_bias, cfg.sigma_floor)
        self.imputer = ImputationMap(cfg.hidden_p, cfg.hidden_y)
        self.pose = PoseModel(cfg)
        self.appearance = AppearanceModel(cfg)
        self.decoder = GlimpseDecoder(cfg.z_appearance, cfg.glimpse_size, cfg.decoder_channels)

    @property
    def scale_bounds(self):
        return self.cfg.scale_min, self.cfg.scale_max

    def forward(self, frames: torch.Tensor, noise: Noise | None = None, mode: str = "train",
                p_substitute: float = 0.25, p_dynamic: float = 0.7) -> DiveOutput:
        """Run inference and generation on input frames ``(B, K, H, W)``.

        ``mode="eval"`` is deterministic: posterior means, hard gates, no
        substitution, always-dynamic appearance (unless static-only).
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "train" and noise is None:
            raise ValueError("train mode needs an explicit noise source")
        cfg = self.cfg
        B, K = frames.shape[:2]
        if K != cfg.n_input:
            raise ValueError(f"expected {cfg.n_input} input frames, got {K}")
        N, T = cfg.num_objects, cfg.n_total
        M = B * N

        h_y = self.encoder(frames).reshape(M, K, cfg.hidden_y)

        # missingness for all input steps at once (depends only on h_y)
        if cfg.no_missingness:
            zeros = h_y.new_zeros(M, K)
            miss_mu, miss_sigma, miss_x = zeros, zeros + 1.0, zeros - 1e4
            z_m, gate = zeros, zeros + 1.0
        else:
            mu, sigma = self.missingness.params(h_y)
            ms = sample_missingness(mu, sigma, noise, mode, cfg.soft_labels)
            miss_mu, miss_sigma, miss_x, z_m = ms.mu, ms.sigma, ms.x, ms.z_m
            if mode == "eval" and not cfg.soft_labels:
                gate = 1.0 - z_m
            else:
                gate = ms.gate

        # pose recurrence
        h = h_y.new_zeros(M, cfg.hidden_p)
        state = (h, torch.zeros_like(h))
        raw = self.pose.raw_pose0.unsqueeze(0).expand(B, -1, -1).reshape(M, cfg.pose_dim)
        h_hats, us, gammas, hps, betas, bmus, bsigmas, raws = [], [], [], [], [], [], [], []
        for t in range(T):
            if t < K:
                h_hat = self.imputer(state[0])
                if cfg.no_missingness:
                    u, g = h_y[:, t], h_y.new_zeros(M)
                else:
                    imp = impute(h_y[:, t], h_hat, z_m[:, t], p_substitute, noise, mode)
                    u, g = imp.u, imp.gamma_draws
                h_hats.append(h_hat)
                us.append(u)
                gammas.append(g)
                state = self.pose.step_pose_hidden(state, u)
            else:
                state = self.pose.step_pose_hidden_predict(state)
            beta, bmu, bsig = self.pose.sample_transition(state[0], noise, mode)
            raw = self.pose.transition(raw, beta)
            hps.append(state[0])
            betas.append(beta)
            bmus.append(bmu)
            bsigmas.append(bsig)
            raws.append(raw)
        raw_pose = torch.stack(raws, 1)  # (M, T, 3)
        pose = self.pose.squash(raw_pose)

        # appearance
        pose_bn = pose.reshape(B, N, T, 3)
        in_glimpses = self.appearance.glimpses(frames, pose_bn[:, :, :K])  # (B, N, K, G, G)
        feats = self.appearance.glimpse_enc(in_glimpses).reshape(M, K, -1)
        skip = (z_m > 0.5).to(frames.dtype)
        h_a, a_s = self.appearance.encode_appearance(feats, skip, T)
        a_d = self.appearance.dynamic_appearance(a_s, feats[:, 0], h_a)
        z_a, za_mu, za_sigma, gamma_app = self.appearance.sample_appearance(
            a_s, a_d, p_dynamic, noise, mode, static_only=cfg.static_appearance)

        # generation
        glimpses = self.decoder(z_a)  # (M, T, G, G)
        placed = render_objects(glimpses, pose, cfg.frame_size, None, self.scale_bounds)
        full_gate = torch.cat([gate, gate.new_ones(M, T - K)], 1)
        contributions = placed * full_gate[..., None, None]
        frames_out = compose(contributions.reshape(B, N, T, cfg.frame_size, cfg.frame_size))

        def bn(x):
            return x.reshape(B, N, *x.shape[1:])

        st = lambda xs: torch.stack(xs, 1)
        return DiveOutput(
            h_y=bn(h_y), miss_x=bn(miss_x), miss_mu=bn(miss_mu), miss_sigma=bn(miss_sigma),
            z_m=bn(z_m), gate=bn(gate), h_hat=bn(st(h_hats)), u=bn(st(us)), gamma_sub=bn(st(gammas)),
            h_p=bn(st(hps)), beta=bn(st(betas)), beta_mu=bn(st(bmus)), beta_sigma=bn(st(bsigmas)),
            raw_pose=bn(raw_pose), pose=pose_bn, input_glimpses=in_glimpses,
            h_a=bn(h_a), a_s=bn(a_s), a_d=bn(a_d), z_a=bn(z_a), za_mu=bn(za_mu), za_sigma=bn(za_sigma),
            gamma_app=bn(gamma_app), glimpses=bn(glimpses), placed=bn(placed),
            contributions=bn(contributions), frames=frames_out,
        )
