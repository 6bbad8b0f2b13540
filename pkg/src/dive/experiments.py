"""Desk-scale protocol: scenario 2, two digits, 1k sequences per epoch, 20 epochs.

Runs are cached on disk under :func:`runs_root` keyed by config hash, so the
acceptance checks and the demo scripts can share one set of trained models.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, config_hash
from .data import make_batch, read_dataset, write_dataset
from .evaluation import MetricsReport, evaluate
from .training import checkpoint_hash, latest_checkpoint, load_checkpoint, read_curve, smooth, train

log = logging.getLogger(__name__)

DESK_SEEDS = (0, 1, 2)
TEST_SCENARIO = 2
TEST_COUNT = 1024
TEST_SEED = 20_000
SMOOTH_WINDOW = 100


def runs_root() -> Path:
    return Path(os.environ.get("DIVE_RUNS_DIR", Path.home() / ".cache" / "dive" / "runs"))


def desk_config(seed: int = 0, no_missingness: bool = False) -> TrainConfig:
    return TrainConfig(model=ModelConfig(), scenario=2, epochs=20, sequences_per_epoch=1000,
                       batch_size=16, checkpoint_every=250, no_missingness=no_missingness, seed=seed)


def frozen_test_set(root: Path | None = None) -> Path:
    """The 1024-sequence scenario-2 test file (test-split glyphs), written once."""
    path = (root or runs_root()) / f"test-s{TEST_SCENARIO}-{TEST_COUNT}-{TEST_SEED}.dive"
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        samples = make_batch(TEST_SCENARIO, TEST_SEED, range(TEST_COUNT), split="test")
        write_dataset(path, samples, TEST_SCENARIO, TEST_SEED)
    return path


@dataclass
class RunResult:
    cfg: TrainConfig
    run_dir: Path
    curve: list
    report: MetricsReport

    @property
    def nelbo_curve(self) -> np.ndarray:
        return np.array([r["nelbo_per_pixel"] for r in self.curve])

    def smoothed_drop(self, at: int = 100, window: int = SMOOTH_WINDOW) -> float:
        """Relative decrease of the smoothed loss from step ``at`` to the end."""
        s = smooth(self.nelbo_curve, window)
        return float((s[at] - s[-1]) / abs(s[at]))


def run(cfg: TrainConfig, root: Path | None = None, test_path: Path | None = None) -> RunResult:
    """Train (or resume) one desk run and evaluate it on the frozen test set."""
    root = root or runs_root()
    run_dir = root / f"run-{config_hash(cfg)}"
    test_path = test_path or frozen_test_set(root)
    done = latest_checkpoint(run_dir)
    if done is None or int(done.stem.split("-")[1]) < cfg.total_iterations:
        log.info("training %s (%d steps)", run_dir.name, cfg.total_iterations)
        train(cfg, run_dir, log_every=100)
    ckpt = latest_checkpoint(run_dir)
    report_path = run_dir / f"metrics-{checkpoint_hash(ckpt)}.json"
    if report_path.exists():
        report = MetricsReport.from_json(report_path.read_text())
    else:
        header, samples = read_dataset(test_path)
        model, _, _, _ = load_checkpoint(ckpt)
        report = evaluate(model, samples, scenario=header["scenario"], config_hash=config_hash(cfg),
                          checkpoint_hash=checkpoint_hash(ckpt), data_id=test_path.name, seed=header["seed"])
        report.save(report_path)
    return RunResult(cfg, run_dir, read_curve(run_dir / "loss_curve.csv"), report)


def desk_suite(seeds=DESK_SEEDS, root: Path | None = None) -> dict[str, list[RunResult]]:
    """Paired with/without-missingness runs, one pair per seed."""
    out = {"full": [], "no_missingness": []}
    for seed in seeds:
        out["full"].append(run(desk_config(seed), root))
        out["no_missingness"].append(run(desk_config(seed, no_missingness=True), root))
    return out


def summary(results: dict[str, list[RunResult]]) -> dict:
    rows = {}
    for name, runs in results.items():
        rows[name] = [{
            "seed": r.cfg.seed,
            "smoothed_drop": r.smoothed_drop(),
            "rec_mse": r.report.rec["mse"],
            "pred_mse": r.report.pred["mse"],
            "balanced_accuracy": r.report.missingness_balanced_accuracy,
        } for r in runs]
    return rows


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    print(json.dumps(summary(desk_suite()), indent=2))
