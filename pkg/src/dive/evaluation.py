"""Evaluation harness: metrics report, missingness quality, ablation comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import metrics
from .data import scenarios
from .data.scenarios import VideoSample
from .model import DIVE
from .training import elbo_from_output

METRICS = ("bce", "mse", "psnr", "ssim")
LOWER_IS_BETTER = {"bce": True, "mse": True, "psnr": False, "ssim": False, "nelbo": True}
EMPTY_SLOT_MASS = 1.0
# column order of the standard results table: each metric for rec then pred, then NELBO
TABLE_COLUMNS = tuple(f"{m}_{split}" for m in METRICS for split in ("rec", "pred")) + ("nelbo",)


@dataclass
class MetricsReport:
    rec: dict
    pred: dict
    nelbo: float
    missingness_balanced_accuracy: float | None
    sample_count: int
    scenario: int | None = None
    config_hash: str = ""
    checkpoint_hash: str = ""
    data_id: str = ""
    seed: int | None = None
    excluded_slots: int = 0
    traces: dict = field(default_factory=dict)

    def metric_cells(self) -> dict[str, float]:
        """The nine table cells: four metrics x {rec, pred} plus NELBO."""
        cells = {f"{m}_{split}": getattr(self, split)[m] for m in METRICS for split in ("rec", "pred")}
        cells["nelbo"] = self.nelbo
        return cells

    def table_row(self, name: str = "dive") -> str:
        """One LaTeX-style results row: ``name & bce_rec & bce_pred & ... & nelbo``."""
        cells = self.metric_cells()
        return " & ".join([name] + [f"{cells[c]:.2f}" for c in TABLE_COLUMNS]) + r" \\"

    def to_json(self, traces: bool = True) -> str:
        d = asdict(self)
        if not traces:
            d.pop("traces")
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def match_objects(pred_layers: np.ndarray, gt_layers: np.ndarray, min_mass: float = EMPTY_SLOT_MASS):
    """Greedy one-to-one matching on rendered-mass overlap.

    ``pred_layers (Np, T, H, W)``, ``gt_layers (Ng, T, H, W)``. Predicted slots
    whose total mass is below ``min_mass`` are excluded. Returns
    ``(pairs, excluded)`` with pairs as ``(pred_index, gt_index)``.
    """
    mass = pred_layers.reshape(len(pred_layers), -1).sum(1)
    live = [i for i in range(len(pred_layers)) if mass[i] >= min_mass]
    excluded = len(pred_layers) - len(live)
    overlap = np.einsum("ithw,jthw->ij", pred_layers.astype(np.float64), gt_layers.astype(np.float64))
    pairs = []
    free_p, free_g = set(live), set(range(len(gt_layers)))
    while free_p and free_g:
        i, j = max(((i, j) for i in free_p for j in free_g), key=lambda ij: (overlap[ij], -ij[0], -ij[1]))
        pairs.append((i, j))
        free_p.discard(i)
        free_g.discard(j)
    return pairs, excluded


def missingness_quality(z_m: np.ndarray, pred_layers: np.ndarray, samples: Sequence[VideoSample],
                        n_input: int) -> tuple[float | None, int]:
    """Balanced accuracy of predicted labels vs. ground-truth removal masks (t <= K).

    ``z_m (B, N, K)``; ``pred_layers (B, N, K, H, W)`` ungated placed glimpses.
    Returns ``(balanced_accuracy or None, excluded_slot_count)``.
    """
    preds, truths, excluded = [], [], 0
    for b, s in enumerate(samples):
        gt = s.object_layers()[:, :n_input]
        pairs, ex = match_objects(pred_layers[b], gt)
        excluded += ex
        for i, j in pairs:
            preds.append(z_m[b, i] > 0.5)
            truths.append(s.object_missing_mask[j, :n_input])
    if not preds:
        return None, excluded
    return metrics.balanced_accuracy(np.concatenate(preds), np.concatenate(truths)), excluded


@torch.no_grad()
def predict(model: DIVE, corrupted: np.ndarray):
    dtype = next(model.parameters()).dtype
    model.eval()
    y = torch.as_tensor(corrupted[:, :model.cfg.n_input], dtype=dtype)
    return model(y, None, "eval")


@torch.no_grad()
def evaluate(model: DIVE, samples: Sequence[VideoSample], scenario: int | None = None,
             batch_size: int = 64, config_hash: str = "", checkpoint_hash: str = "",
             data_id: str = "", seed: int | None = None) -> MetricsReport:
    """Deterministic evaluation over a list of samples.

    Reconstruction metrics compare against the corrupted input on visible
    pixels; prediction metrics compare against the complete future frames.
    """
    cfg = model.cfg
    K, S = cfg.n_input, cfg.frame_size
    vis = scenarios.visibility_mask(scenario, S) if scenario == 1 else None
    vis_t = torch.as_tensor(vis) if vis is not None else None
    per_seq = {f"{m}_{split}": [] for m in METRICS for split in ("rec", "pred")}
    nelbo, z_traces, gamma_traces, z_all, layers_all = [], [], [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = scenarios.stack(chunk)
        out = predict(model, batch["corrupted"])
        dtype = out.frames.dtype
        corrupted = torch.as_tensor(batch["corrupted"], dtype=dtype)
        complete = torch.as_tensor(batch["complete"], dtype=dtype)
        for b in range(len(chunk)):
            terms = elbo_from_output(_index(out, b), corrupted[b:b + 1], complete[b:b + 1], cfg,
                                     None if vis_t is None else vis_t.to(dtype))
            nelbo.append(-float(terms.total) / (cfg.n_total * S * S))
        frames = out.frames.double().numpy()
        rec = metrics.frame_metrics(frames[:, :K], batch["corrupted"][:, :K], vis)
        pred = metrics.frame_metrics(frames[:, K:], batch["complete"][:, K:])
        for m in METRICS:
            per_seq[f"{m}_rec"].extend(rec[m].mean(1))
            per_seq[f"{m}_pred"].extend(pred[m].mean(1))
        z = out.z_m.numpy()
        z_traces.extend(z.astype(np.uint8).tolist() if not cfg.soft_labels else z.tolist())
        gamma_traces.extend(out.gamma_sub.numpy().astype(np.uint8).tolist())
        z_all.append(z)
        layers_all.append(out.placed[:, :, :K].float().numpy())

    ba, excluded = (None, 0)
    if not cfg.no_missingness:
        ba, excluded = missingness_quality(np.concatenate(z_all), np.concatenate(layers_all), samples, K)
    return MetricsReport(
        rec={m: _mean(per_seq[f"{m}_rec"]) for m in METRICS},
        pred={m: _mean(per_seq[f"{m}_pred"]) for m in METRICS},
        nelbo=_mean(nelbo),
        missingness_balanced_accuracy=ba,
        sample_count=len(samples), scenario=scenario, config_hash=config_hash,
        checkpoint_hash=checkpoint_hash, data_id=data_id, seed=seed, excluded_slots=excluded,
        traces={"z_m": z_traces, "gamma_substitute": gamma_traces},
    )


def _index(out, b):
    """Slice a DiveOutput to one batch element (keeping the batch axis)."""
    return replace(out, **{f.name: getattr(out, f.name)[b:b + 1] for f in fields(out)})


def missingness_from_report(report: MetricsReport) -> np.ndarray:
    return np.asarray(report.traces["z_m"])


# ---------------------------------------------------------------- ablations

class ReportMismatch(ValueError):
    pass


@dataclass
class ComparisonTable:
    names: list
    cells: list  # metric cell names
    values: list  # values[k][r] for cell k, report r
    winners: list  # index of best report per cell, or None for a tie

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", *self.names, "winner"])
        for cell, vals, win in zip(self.cells, self.values, self.winners):
            w.writerow([cell, *[f"{v:.6g}" for v in vals], "tie" if win is None else self.names[win]])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(12, *(len(n) for n in self.names))
        head = f"{'metric':<10}" + "".join(f"{n:>{width + 2}}" for n in self.names) + "  winner"
        lines = [head, "-" * len(head)]
        for cell, vals, win in zip(self.cells, self.values, self.winners):
            row = f"{cell:<10}" + "".join(f"{v:>{width + 2}.4f}" for v in vals)
            lines.append(row + "  " + ("tie" if win is None else self.names[win]))
        return "\n".join(lines)


def compare_ablations(reports: Sequence[MetricsReport], names: Sequence[str] | None = None) -> ComparisonTable:
    """Side-by-side metric table with per-cell winner flags."""
    if len(reports) < 2:
        raise ReportMismatch("need at least two reports")
    ref = reports[0]
    for r in reports[1:]:
        if (r.data_id, r.scenario, r.sample_count) != (ref.data_id, ref.scenario, ref.sample_count):
            raise ReportMismatch("reports were computed on different data")
    names = list(names) if names is not None else [f"run{i}" for i in range(len(reports))]
    cell_names = list(ref.metric_cells())
    values, winners = [], []
    for cell in cell_names:
        vals = [r.metric_cells()[cell] for r in reports]
        lower = LOWER_IS_BETTER[cell.split("_")[0]]
        best = min(vals) if lower else max(vals)
        idx = [i for i, v in enumerate(vals) if v == best]
        values.append(vals)
        winners.append(idx[0] if len(idx) == 1 else None)
    return ComparisonTable(names=names, cells=cell_names, values=values, winners=winners)
