"""ELBO, schedules, training loop and checkpoints.

Every step's data and model noise are pure functions of ``(seed, iteration)``,
so resuming from a checkpoint replays the exact same next step.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import ConfigError, ModelConfig, TrainConfig, config_hash
from .data import scenarios
from .model import DIVE, NumericalError, gaussian_kl
from .noise import Noise, step_seed

log = logging.getLogger(__name__)

LOG_EPS = 1e-6
CURVE_FIELDS = ["iteration", "elbo", "recon_ll", "pred_ll", "kl_pose", "kl_appearance",
                "kl_missingness", "nelbo_per_pixel", "lr", "p_dynamic"]


# ---------------------------------------------------------------- schedules

def p_substitute_schedule(iteration: int, mode: str = "train", p: float = 0.25) -> float:
    return p if mode == "train" else 0.0


def p_dynamic_schedule(iteration: int, mode: str = "train", early: float = 0.7, late: float = 0.85,
                       switch: int = 3000) -> float:
    if mode != "train":
        return 1.0
    return early if iteration < switch else late


def lr_schedule(iteration: int, total: int, base: float = 1e-3, factor: float = 0.4,
                at: float = 1 / 3) -> float:
    return base * factor if iteration >= int(at * total) else base


# ---------------------------------------------------------------- ELBO

@dataclass
class ElboTerms:
    recon_ll: torch.Tensor
    pred_ll: torch.Tensor
    kl_pose: torch.Tensor
    kl_appearance: torch.Tensor
    kl_missingness: torch.Tensor

    @property
    def kl(self) -> torch.Tensor:
        return self.kl_pose + self.kl_appearance + self.kl_missingness

    @property
    def total(self) -> torch.Tensor:
        return self.recon_ll + self.pred_ll - self.kl

    def as_floats(self) -> dict[str, float]:
        return {
            "elbo": self.total.item(), "recon_ll": self.recon_ll.item(), "pred_ll": self.pred_ll.item(),
            "kl_pose": self.kl_pose.item(), "kl_appearance": self.kl_appearance.item(),
            "kl_missingness": self.kl_missingness.item(),
        }


def bernoulli_log_lik(target: torch.Tensor, prob: torch.Tensor) -> torch.Tensor:
    """Elementwise log p(target | prob); exactly 0 for a perfect binary match."""
    return (torch.xlogy(target, prob.clamp_min(LOG_EPS))
            + torch.xlogy(1 - target, (1 - prob).clamp_min(LOG_EPS)))


def gaussian_log_lik(target, mean, sigma: float):
    return -0.5 * ((target - mean) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def log_lik(target, prob, cfg: ModelConfig):
    if cfg.likelihood == "gaussian":
        return gaussian_log_lik(target, prob, cfg.gaussian_sigma)
    return bernoulli_log_lik(target, prob)


def elbo_from_output(out, corrupted: torch.Tensor, complete: torch.Tensor, cfg: ModelConfig,
                     visibility: torch.Tensor | None = None) -> ElboTerms:
    """Per-sequence (batch-mean) ELBO terms.

    ``corrupted``/``complete``: ``(B, T, H, W)``. Reconstruction targets are the
    corrupted input frames restricted to ``visibility``; prediction targets are
    the complete future frames.
    """
    K = cfg.n_input
    B = corrupted.shape[0]
    rec = log_lik(corrupted[:, :K], out.frames[:, :K], cfg)
    if visibility is not None:
        rec = rec * visibility
    pred = log_lik(complete[:, K:], out.frames[:, K:], cfg)
    kl_pose = gaussian_kl(out.beta_mu, out.beta_sigma).sum()
    kl_app = gaussian_kl(out.za_mu, out.za_sigma).sum()
    if cfg.no_missingness:
        kl_miss = rec.new_zeros(())
    else:
        # posterior over x is N(mu, sigma^2) with the bias folded into mu; prior N(bias, 1)
        kl_miss = gaussian_kl(out.miss_mu, out.miss_sigma, prior_mu=cfg.missing_bias).sum()
    terms = ElboTerms(rec.sum() / B, pred.sum() / B, kl_pose / B, kl_app / B, kl_miss / B)
    check_finite(terms)
    return terms


def compute_elbo(model: DIVE, batch: dict, noise: Noise | None, mode: str = "train",
                 p_substitute: float = 0.25, p_dynamic: float = 0.7, scenario: int | None = None):
    """Single-sample reparameterized ELBO estimate for a stacked batch."""
    cfg = model.cfg
    dtype = next(model.parameters()).dtype
    corrupted = torch.as_tensor(batch["corrupted"], dtype=dtype)
    complete = torch.as_tensor(batch["complete"], dtype=dtype)
    vis = None
    if scenario == 1:
        vis = torch.as_tensor(scenarios.visibility_mask(1, cfg.frame_size), dtype=dtype)
    out = model(corrupted[:, :cfg.n_input], noise, mode, p_substitute, p_dynamic)
    return elbo_from_output(out, corrupted, complete, cfg, vis), out


def check_finite(terms: ElboTerms):
    vals = terms.as_floats()
    if not all(math.isfinite(v) for v in vals.values()):
        dump = ", ".join(f"{k}={v:.4g}" for k, v in vals.items())
        raise NumericalError(f"non-finite ELBO term; magnitudes: {dump}")


def nelbo_per_pixel(terms: ElboTerms, cfg: ModelConfig) -> float:
    return -terms.total.item() / (cfg.n_total * cfg.frame_size ** 2)


# ---------------------------------------------------------------- data

def batch_indices(iteration: int, batch_size: int) -> range:
    return range(iteration * batch_size, (iteration + 1) * batch_size)


def training_batch(cfg: TrainConfig, iteration: int) -> dict:
    m = cfg.model
    samples = scenarios.make_batch(cfg.scenario, cfg.seed, batch_indices(iteration, cfg.batch_size),
                                   num_objects=m.num_objects, T=m.n_total, speed=cfg.digit_speed,
                                   split="train")
    return scenarios.stack(samples)


# ---------------------------------------------------------------- checkpoints

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(out_dir, model: DIVE, optimizer, cfg: TrainConfig, iteration: int) -> Path:
    """Write ``ckpt-<iteration>.pt`` and its JSON manifest atomically."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"ckpt-{iteration:07d}.pt"
    blob = {
        "format": "dive-checkpoint", "version": 1, "iteration": iteration,
        "config": cfg.to_dict(), "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    tmp = path.with_name(path.name + ".tmp")
    try:
        torch.save(blob, tmp)
        os.replace(tmp, path)
    except OSError as err:
        log.warning("checkpoint write failed at iteration %d (partial state not saved): %s", iteration, err)
        raise
    manifest = {
        "iteration": iteration,
        "config_hash": config_hash(cfg),
        "checkpoint_sha256": _sha256(path),
        "rng": {"data_seed": cfg.seed, "scheme": "SeedSequence([seed, iteration, stream])",
                "next_noise_seed": step_seed(cfg.seed, iteration, 1)},
    }
    mtmp = path.with_suffix(".json.tmp")
    mtmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(mtmp, path.with_suffix(".json"))
    return path


class CheckpointMismatch(ConfigError):
    pass


def load_checkpoint(path, dtype=torch.float32):
    """Return ``(model, cfg, iteration, blob)``; verifies the manifest config hash."""
    path = Path(path)
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = TrainConfig.from_dict(blob["config"])
    manifest_path = path.with_suffix(".json")
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest["config_hash"] != config_hash(cfg):
            raise CheckpointMismatch(
                f"config hash mismatch: manifest {manifest['config_hash']} vs checkpoint {config_hash(cfg)}")
    model = DIVE(cfg.model_config()).to(dtype)
    model.load_state_dict(blob["model"])
    return model, cfg, blob["iteration"], blob


def latest_checkpoint(out_dir) -> Path | None:
    found = sorted(Path(out_dir).glob("ckpt-*.pt"))
    return found[-1] if found else None


def checkpoint_hash(path) -> str:
    return _sha256(Path(path))[:16]


# ---------------------------------------------------------------- training

def set_deterministic(flag: bool = True):
    torch.use_deterministic_algorithms(flag)


def build(cfg: TrainConfig, dtype=torch.float32):
    torch.manual_seed(cfg.seed)
    model = DIVE(cfg.model_config()).to(dtype)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    return model, optimizer


def train_step(model: DIVE, optimizer, cfg: TrainConfig, iteration: int) -> dict:
    total = cfg.total_iterations
    lr = lr_schedule(iteration, total, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_at)
    for group in optimizer.param_groups:
        group["lr"] = lr
    p_dyn = p_dynamic_schedule(iteration, "train", cfg.p_dynamic, cfg.p_dynamic_late, cfg.p_dynamic_switch)
    p_sub = p_substitute_schedule(iteration, "train", cfg.p_substitute)
    batch = training_batch(cfg, iteration)
    model.train()
    noise = Noise(step_seed(cfg.seed, iteration, 1))
    terms, _ = compute_elbo(model, batch, noise, "train", p_sub, p_dyn, cfg.scenario)
    loss = -terms.total / (model.cfg.n_total * model.cfg.frame_size ** 2)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    row = {"iteration": iteration, **terms.as_floats(), "nelbo_per_pixel": loss.item(),
           "lr": lr, "p_dynamic": p_dyn}
    return row


def train(cfg: TrainConfig, out_dir, iterations: int | None = None, resume: bool = True,
          callback: Callable[[dict], None] | None = None, log_every: int = 25) -> list[dict]:
    """Train for ``iterations`` steps (default: the config's full schedule).

    Writes checkpoints every ``checkpoint_every`` steps plus at the end, and
    appends one CSV row per step to ``loss_curve.csv``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_deterministic(cfg.deterministic)
    (out_dir / "config.json").write_text(cfg.to_json())
    model, optimizer = build(cfg)
    start = 0
    ckpt = latest_checkpoint(out_dir) if resume else None
    if ckpt is not None:
        model, _, start, blob = load_checkpoint(ckpt)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        optimizer.load_state_dict(blob["optimizer"])
    end = cfg.total_iterations if iterations is None else iterations
    curve_path = out_dir / "loss_curve.csv"
    _truncate_curve(curve_path, start)
    rows = []
    t0 = time.time()
    with open(curve_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, CURVE_FIELDS)
        if fh.tell() == 0:
            writer.writeheader()
        for it in range(start, end):
            row = train_step(model, optimizer, cfg, it)
            writer.writerow(row)
            rows.append(row)
            if callback:
                callback(row)
            if log_every and it % log_every == 0:
                fh.flush()
                log.info("it %d  nelbo/px %.5f  (%.1fs)", it, row["nelbo_per_pixel"], time.time() - t0)
            done = it + 1
            if done % cfg.checkpoint_every == 0 or done == end:
                save_checkpoint(out_dir, model, optimizer, cfg, done)
    return rows


def _truncate_curve(path: Path, start: int):
    """Drop rows at or after ``start`` so a resumed run does not duplicate them."""
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if int(r["iteration"]) < start]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, CURVE_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def smooth(values, window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
