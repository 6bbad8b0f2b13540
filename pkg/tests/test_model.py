import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dive import DIVE, ModelConfig, Noise
from dive.config import ConfigError
from dive.model.appearance import AppearanceModel
from dive.model.encoder import SequenceEncoder
from dive.model.generator import GlimpseDecoder, compose, render_prediction, render_reconstruction
from dive.model.missingness import (
    ImputationMap, MissingnessHead, NumericalError, gaussian_kl, heaviside, impute,
    predict_imputed_hidden, sample_missingness, soft_gate,
)
from dive.model.pose import PoseModel, Transition, sigma_clamps
from dive.spatial import place


def test_encoder_shapes_and_determinism():
    cfg = ModelConfig()
    enc = SequenceEncoder(cfg)
    frames = torch.rand(2, 10, 64, 64)
    h = enc(frames)
    assert h.shape == (2, 2, 10, 64)
    assert torch.equal(h, enc(frames))
    assert torch.isfinite(h).all()


def test_encoder_zero_input_and_object_conditioning(small_cfg):
    enc = SequenceEncoder(small_cfg).double()
    zeros = torch.zeros(1, small_cfg.n_input, 32, 32, dtype=torch.float64)
    h = enc(zeros)
    assert torch.equal(h, enc(zeros))
    # object 2 sees object 1's states, so its trace differs from object 1's
    assert not torch.allclose(h[0, 0], h[0, 1])


def test_encoder_is_time_sensitive(small_cfg):
    enc = SequenceEncoder(small_cfg)
    frames = torch.rand(1, small_cfg.n_input, 32, 32)
    swapped = frames[:, [1, 0, 2, 3]]
    assert (enc(frames) != enc(swapped)).any()


def test_encoder_object_bound(small_cfg):
    enc = SequenceEncoder(small_cfg)
    with pytest.raises(ConfigError):
        enc(torch.rand(1, 4, 32, 32), num_objects=3)


# ---------------------------------------------------------------- missingness

def test_heaviside_and_gate_examples():
    x = torch.tensor([-3.0, 0.0, 1e-9, -1e-9])
    assert heaviside(x).tolist() == [0.0, 1.0, 1.0, 0.0]
    assert math.isclose(float(soft_gate(torch.tensor(-3.0))), 1 - 1 / (1 + math.exp(3)), rel_tol=1e-6)
    assert abs(float(soft_gate(torch.tensor(-3.0))) - 0.953) < 1e-3


def test_degenerate_noise_bias():
    head = MissingnessHead(4, bias=-0.5, sigma_floor=1e-4)
    with torch.no_grad():
        head.fc.weight.zero_()
        head.fc.bias.copy_(torch.tensor([0.4, -80.0]))  # mu 0.4, sigma -> floor
    mu, sigma = head.params(torch.zeros(100, 4))
    assert torch.allclose(mu, torch.full((100,), -0.1))
    assert (sigma == 1e-4).all()
    s = sample_missingness(mu, sigma, Noise(0), "train")
    assert (s.z_m == 0).all()


def test_missingness_rejects_nonfinite():
    head = MissingnessHead(4)
    with pytest.raises(NumericalError):
        head.params(torch.tensor([[0.0, float("nan"), 0.0, 0.0]]))


def test_labels_binary_gate_in_unit_interval():
    mu = torch.randn(1000) * 3
    s = sample_missingness(mu, torch.ones(1000), Noise(1), "train")
    assert set(s.z_m.unique().tolist()) <= {0.0, 1.0}
    assert ((s.gate > 0) & (s.gate < 1)).all()
    assert not s.z_m.requires_grad


def test_hard_threshold_carries_no_gradient():
    head = MissingnessHead(4)
    h = torch.randn(16, 4)
    s = head(h, Noise(0), "train")
    assert s.z_m.grad_fn is None
    s.gate.sum().backward()
    assert head.fc.weight.grad.abs().sum() > 0


def test_imputation_map():
    imap = ImputationMap(64, 64)
    with torch.no_grad():
        imap.fc.bias.zero_()
    assert torch.equal(predict_imputed_hidden(imap, torch.zeros(3, 64)), torch.zeros(3, 64))
    assert imap(torch.randn(2, 64)).shape == (2, 64)
    imap = imap.double()
    x = torch.randn(2, 64, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(imap, (x,), eps=1e-6, atol=1e-8, rtol=1e-3)


def test_impute_selection_semantics():
    h = torch.randn(200, 8)
    hh = torch.randn(200, 8)
    z = (torch.rand(200) < 0.3).float()
    out = impute(h, hh, z, 0.25, Noise(3), "train")
    for i in range(200):
        assert torch.equal(out.u[i], h[i]) or torch.equal(out.u[i], hh[i])
        if z[i] == 1:
            assert torch.equal(out.u[i], hh[i])
        elif out.gamma_draws[i] == 0:
            assert torch.equal(out.u[i], h[i])
    ev = impute(h, hh, torch.zeros(200), 0.25, None, "eval")
    assert torch.equal(ev.u, h) and not ev.gamma_draws.any()
    ev1 = impute(h, hh, z, 0.25, None, "eval")
    assert torch.equal(ev1.u[z == 1], hh[z == 1])
    full = impute(h, hh, torch.zeros(200), 1.0, Noise(0), "train")
    assert torch.equal(full.u, hh)


def test_substitution_rate_monte_carlo():
    n = 20000
    out = impute(torch.zeros(n, 1), torch.ones(n, 1), torch.zeros(n), 0.25, Noise(11), "train")
    frac = float(out.u.mean())
    assert abs(frac - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)


def test_gradient_reaches_imputation_map_when_selected():
    imap = ImputationMap(4, 4)
    hh = imap(torch.randn(5, 4))
    out = impute(torch.randn(5, 4), hh, torch.ones(5), 0.0, None, "eval")
    out.u.sum().backward()
    assert imap.fc.weight.grad.abs().sum() > 0


def test_gaussian_kl_closed_form_and_monte_carlo():
    assert math.isclose(float(gaussian_kl(torch.tensor(1.0), torch.tensor(1.0))), 0.5, rel_tol=1e-7)
    assert float(gaussian_kl(torch.tensor(-0.5), torch.tensor(1.0), -0.5, 1.0)) == 0.0
    gen = torch.Generator().manual_seed(0)
    for mu, sigma, pm, ps in [(0.7, 0.4, 0.0, 1.0), (-1.2, 1.5, -0.5, 1.0), (0.3, 0.05, 0.1, 0.8)]:
        n = 10 ** 5
        x = mu + sigma * torch.randn(n, generator=gen, dtype=torch.float64)
        logq = -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma)
        logp = -0.5 * ((x - pm) / ps) ** 2 - math.log(ps)
        d = logq - logp
        est, se = float(d.mean()), float(d.std()) / math.sqrt(n)
        closed = float(gaussian_kl(torch.tensor(mu, dtype=torch.float64), torch.tensor(sigma, dtype=torch.float64), pm, ps))
        assert abs(est - closed) < 3 * se


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 5))
def test_gaussian_kl_nonnegative(mu, sigma):
    assert float(gaussian_kl(torch.tensor(mu, dtype=torch.float64), torch.tensor(sigma, dtype=torch.float64))) >= -1e-12


# ---------------------------------------------------------------- pose

def _zero_lstm(cell):
    with torch.no_grad():
        cell.bias_ih.zero_()
        cell.bias_hh.zero_()


def test_pose_hidden_zero_case():
    cfg = ModelConfig()
    pm = PoseModel(cfg)
    _zero_lstm(pm.lstm_in)
    _zero_lstm(pm.lstm_pred)
    state = (torch.zeros(3, 64), torch.zeros(3, 64))
    h, c = pm.step_pose_hidden(state, torch.zeros(3, 64))
    assert torch.equal(h, torch.zeros(3, 64)) and h.shape == (3, cfg.hidden_p)
    h2, _ = pm.step_pose_hidden_predict(state)
    assert torch.equal(h2, torch.zeros(3, 64))
    u = torch.randn(3, 64)
    assert torch.equal(pm.step_pose_hidden(state, u)[0], pm.step_pose_hidden(state, u)[0])


def test_sample_transition_reparameterized():
    cfg = ModelConfig()
    pm = PoseModel(cfg)
    h = torch.randn(4, 64)
    b1, mu, sigma = pm.sample_transition(h, Noise(5), "train")
    b2, _, _ = pm.sample_transition(h, Noise(5), "train")
    assert torch.equal(b1, b2)
    be, mue, _ = pm.sample_transition(h, None, "eval")
    assert torch.equal(be, mue)
    (b1.sum()).backward()
    assert pm.head.weight.grad.abs().sum() > 0


def test_sigma_floor_clamped_and_counted():
    cfg = ModelConfig()
    pm = PoseModel(cfg)
    with torch.no_grad():
        pm.head.weight.zero_()
        pm.head.bias.fill_(-100.0)
    before = sigma_clamps.count
    beta, mu, sigma = pm.sample_transition(torch.zeros(2, 64), Noise(0), "train")
    assert (sigma == 1e-4).all() and sigma_clamps.count > before
    assert torch.allclose(beta, mu, atol=1e-3)


def test_transition_mean_monte_carlo():
    mu, sigma = torch.tensor([0.3, -1.0, 2.0]), torch.tensor([0.5, 1.0, 2.0])
    n = 10 ** 5
    draws = mu + sigma * Noise(7).normal((n, 3))
    assert (torch.abs(draws.mean(0) - mu) < 4 * sigma / math.sqrt(n)).all()


def test_transition_deterministic_bounded_and_differentiable():
    cfg = ModelConfig()
    pm = PoseModel(cfg).double()
    raw = pm.raw_pose0.detach().clone()
    zero = torch.zeros_like(raw)
    assert torch.equal(pm.transition(raw, zero), pm.transition(raw, zero))
    g = torch.Generator().manual_seed(0)
    for _ in range(10):
        raw = pm.transition(raw, 3 * torch.randn(raw.shape, generator=g, dtype=torch.float64))
        p = pm.squash(raw)
        assert (p[:, :2].abs() <= 1).all() and (p[:, 2] >= cfg.scale_min).all() and (p[:, 2] <= cfg.scale_max).all()
    tran = Transition(3, 16).double()
    r0 = torch.randn(2, 3, dtype=torch.float64)
    beta = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda b: tran(r0, b), (beta,), eps=1e-6, atol=1e-8, rtol=1e-3)


def test_pose_factorization_graph_cut():
    """z_p at step t does not depend on pose hidden states after t."""
    cfg = ModelConfig()
    pm = PoseModel(cfg)
    state = (torch.zeros(2, 64), torch.zeros(2, 64))
    raw = pm.raw_pose0
    hs, raws = [], []
    for t in range(5):
        state = pm.step_pose_hidden(state, torch.randn(2, 64))
        h = state[0].detach().requires_grad_(True)
        state = (h, state[1])
        hs.append(h)
        beta, _, _ = pm.sample_transition(h, Noise(t), "train")
        raw = pm.transition(raw, beta)
        raws.append(raw)
    grads = torch.autograd.grad(raws[2].sum(), hs, allow_unused=True)
    assert grads[3] is None and grads[4] is None
    assert grads[2] is not None and grads[2].abs().sum() > 0


# ---------------------------------------------------------------- appearance

def test_appearance_dims_and_skipping():
    cfg = ModelConfig()
    app = AppearanceModel(cfg)
    feats = torch.randn(3, 10, cfg.glimpse_embed_dim, requires_grad=True)
    h_a, a_s = app.encode_appearance(feats, torch.ones(3, 10), 20)
    assert h_a.shape == (3, 20, 128) and a_s.shape == (3, 256)
    # every input step skipped: state at K is the initial (zero) state, glimpses unused
    assert torch.equal(h_a[:, 9], torch.zeros(3, 128))
    grad = torch.autograd.grad(a_s.sum(), feats, allow_unused=True)[0]
    assert grad is None or not grad.any()
    h2, a2 = app.encode_appearance(feats, torch.zeros(3, 10), 20)
    assert not torch.equal(h2[:, 9], h_a[:, 9])


def test_appearance_repeated_glimpse_deterministic():
    cfg = ModelConfig()
    app = AppearanceModel(cfg)
    f = torch.randn(1, 1, cfg.glimpse_embed_dim).expand(2, 10, -1)
    _, a1 = app.encode_appearance(f, torch.zeros(2, 10), 20)
    assert torch.equal(a1[0], a1[1])


def test_dynamic_appearance_telescoping():
    cfg = ModelConfig()
    a0 = torch.randn(2, 48, dtype=torch.float64)
    delta = torch.zeros(2, 20, 48, dtype=torch.float64)
    const = AppearanceModel.accumulate(a0, delta)
    assert torch.equal(const, a0[:, None].expand(-1, 20, -1))
    delta = torch.randn(2, 20, 48, dtype=torch.float64)
    a_d = AppearanceModel.accumulate(a0, delta)
    for t in range(20):
        assert torch.allclose(a_d[:, t], a0 + delta[:, :t].sum(1), atol=1e-12)
    d = delta.clone().requires_grad_(True)
    last = AppearanceModel.accumulate(a0, d)[:, -1]
    jac = torch.autograd.grad(last.sum(), d)[0]
    assert torch.equal(jac[:, 0], torch.ones(2, 48, dtype=torch.float64))
    # finite-difference check on the first residual
    eps = 1e-6
    bumped = delta.clone()
    bumped[0, 0, 5] += eps
    fd = (AppearanceModel.accumulate(a0, bumped)[0, -1, 5] - AppearanceModel.accumulate(a0, delta)[0, -1, 5]) / eps
    assert abs(float(fd) - 1.0) < 1e-6


def test_appearance_mixing():
    cfg = ModelConfig()
    app = AppearanceModel(cfg)
    a_s = torch.randn(2, 256)
    a_d = torch.randn(2, 20, 48)
    _, mu0, _, g0 = app.sample_appearance(a_s, a_d, 0.0, Noise(0), "train")
    _, mu_s, _, gs = app.sample_appearance(a_s, torch.randn(2, 20, 48), 0.9, Noise(0), "train", static_only=True)
    assert not g0.any() and not gs.any()
    assert torch.equal(mu0, mu_s)  # a_d is ignored when gamma = 0
    assert torch.equal(mu_s, mu_s[:, :1].expand_as(mu_s))  # time-constant
    _, _, _, ge = app.sample_appearance(a_s, a_d, 0.0, None, "eval")
    assert ge.all()
    z1 = app.sample_appearance(a_s, a_d, 0.7, Noise(4), "train")[0]
    z2 = app.sample_appearance(a_s, a_d, 0.7, Noise(4), "train")[0]
    assert torch.equal(z1, z2)


# ---------------------------------------------------------------- generator

def test_decoder_range_and_gradient():
    dec = GlimpseDecoder(128, 28)
    z = torch.randn(1000, 128, requires_grad=True) * 3
    g = dec(z)
    assert g.shape == (1000, 28, 28) and g.min() >= 0 and g.max() <= 1
    assert torch.equal(g, dec(z))
    zz = torch.randn(1, 128, dtype=torch.float64)
    dec = dec.double()
    eps = 1e-6
    bump = zz.clone()
    bump[0, 3] += eps
    assert (dec(bump) - dec(zz)).abs().sum() / eps > 1e-6


def test_hard_gate_zero_leakage_and_prediction_ungated():
    g = torch.rand(1, 2, 28, 28) * 0.9 + 0.1
    poses = torch.tensor([[[-0.4, -0.4, 0.44], [0.4, 0.4, 0.44]]])
    frame, contrib = render_reconstruction(g, poses, torch.tensor([[1.0, 0.0]]), 64)
    assert contrib[0, 1].max() == 0
    assert torch.equal(frame[0], contrib[0, 0].clamp(0, 1))
    pred, pc = render_prediction(g, poses, 64)
    assert pc[0, 1].max() > 0


def test_composition_union_and_permutation():
    g = torch.rand(1, 2, 28, 28)
    poses = torch.tensor([[[-0.5, -0.5, 0.3], [0.5, 0.5, 0.3]]])
    frame, contrib = render_reconstruction(g, poses, torch.ones(1, 2), 64)
    single = [place(g[0, i], poses[0, i], 64) for i in range(2)]
    assert ((single[0] > 0) & (single[1] > 0)).sum() == 0
    assert torch.equal(frame[0], (single[0] + single[1]).clamp(0, 1))
    swapped, _ = render_reconstruction(g[:, [1, 0]], poses[:, [1, 0]], torch.ones(1, 2), 64)
    assert torch.equal(frame, swapped)
    assert torch.equal(compose(torch.full((1, 3, 2, 2), 0.6)), torch.ones(1, 2, 2))


# ---------------------------------------------------------------- full model

def test_full_model_eval_deterministic_and_shapes(small_cfg):
    m = DIVE(small_cfg)
    y = torch.rand(2, small_cfg.n_input, 32, 32)
    a, b = m(y, None, "eval"), m(y, None, "eval")
    assert torch.equal(a.frames, b.frames)
    assert a.frames.shape == (2, small_cfg.n_total, 32, 32)
    assert a.z_m.shape == (2, 2, small_cfg.n_input)
    assert torch.equal(a.gate, 1 - a.z_m)
    assert torch.equal(a.u, a.h_y.where(a.z_m[..., None] == 0, a.h_hat))
    with pytest.raises(ValueError):
        m(y, None, "train")


def test_no_missingness_ablation(small_cfg):
    import dataclasses

    cfg = dataclasses.replace(small_cfg, no_missingness=True)
    m = DIVE(cfg)
    out = m(torch.rand(2, cfg.n_input, 32, 32), Noise(0), "train")
    assert not out.z_m.any()
    assert torch.equal(out.u, out.h_y)
    assert torch.equal(out.contributions, out.placed)


def test_eval_missing_objects_never_leak(small_cfg):
    m = DIVE(small_cfg)
    with torch.no_grad():
        m.missingness.fc.bias.copy_(torch.tensor([5.0, 0.0]))
        m.missingness.fc.weight.zero_()
    out = m(torch.rand(1, small_cfg.n_input, 32, 32), None, "eval")
    assert out.z_m.all()
    assert out.contributions[:, :, :small_cfg.n_input].max() == 0
    assert out.frames[:, :small_cfg.n_input].max() == 0
    assert out.frames[:, small_cfg.n_input:].max() > 0
