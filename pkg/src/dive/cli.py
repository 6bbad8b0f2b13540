"""Command-line entry point: ``dive <command> [options]``.

Exit codes: 0 success, 1 usage, 2 data, 3 numerical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, TrainConfig, config_hash

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3
MANIFEST_NAME = "manifest.json"
ABLATION_FLAGS = ("no_missingness", "static_appearance", "soft_labels")

log = logging.getLogger("dive")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, argv, command: str, config: dict | None, seeds: dict, artifacts, started: float) -> Path:
    """Record how a run was produced; every artifact is listed with its sha256."""
    path = Path(path)
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "config_hash": config_hash(config) if config is not None else None,
        "seeds": seeds,
        "started": started,
        "finished": time.time(),
        "artifacts": [{"path": str(p), "sha256": file_sha256(p)} for p in map(Path, artifacts)],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
    tmp.replace(path)
    return path


def _load_config(path: str | None, seed: int | None) -> TrainConfig:
    cfg = TrainConfig() if path is None else TrainConfig.from_json(Path(path).read_text())
    return cfg if seed is None else cfg.replace(seed=seed)


# ---------------------------------------------------------------- commands

def cmd_generate_data(args, argv):
    from .data import make_batch, write_dataset

    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    started = time.time()
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = make_batch(args.scenario, args.seed, range(args.count), split=args.split)
    write_dataset(out, samples, args.scenario, args.seed)
    manifest = write_manifest(out.with_name(out.name + ".manifest.json"), argv, "generate-data",
                              {"scenario": args.scenario, "count": args.count, "split": args.split},
                              {"seed": args.seed}, [out], started)
    print(f"wrote {args.count} scenario-{args.scenario} samples to {out} ({manifest.name})")


def cmd_train(args, argv):
    from .training import latest_checkpoint, train

    cfg = _load_config(args.config, args.seed)
    out_dir = Path(args.out_dir)
    started = time.time()
    train(cfg, out_dir, iterations=args.iterations, resume=not args.no_resume)
    ckpt = latest_checkpoint(out_dir)
    artifacts = [out_dir / "config.json", out_dir / "loss_curve.csv", ckpt, ckpt.with_suffix(".json")]
    write_manifest(out_dir / MANIFEST_NAME, argv, "train", cfg.to_dict(), {"seed": cfg.seed}, artifacts, started)
    print(f"checkpoint: {ckpt}")


def _evaluate_checkpoint(ckpt_path, data_path):
    from .data import read_dataset
    from .evaluation import evaluate
    from .training import checkpoint_hash, load_checkpoint

    header, samples = read_dataset(data_path)
    model, cfg, _, _ = load_checkpoint(ckpt_path)
    m = model.cfg
    if (header["N"], header["T"], header["H"]) != (m.num_objects, m.n_total, m.frame_size):
        raise ConfigError(
            f"data (N={header['N']}, T={header['T']}, size={header['H']}) does not match model "
            f"(N={m.num_objects}, T={m.n_total}, size={m.frame_size})")
    return evaluate(model, samples, scenario=header["scenario"], config_hash=config_hash(cfg),
                    checkpoint_hash=checkpoint_hash(ckpt_path), data_id=file_sha256(data_path)[:16],
                    seed=header["seed"])


def cmd_evaluate(args, argv):
    started = time.time()
    report = _evaluate_checkpoint(args.checkpoint, args.data)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".metrics.json")
    report.save(out)
    write_manifest(out.with_name(out.name + ".manifest.json"), argv, "evaluate", None,
                   {"data_seed": report.seed}, [out, args.checkpoint, args.data], started)
    cells = report.metric_cells()
    print("  ".join(f"{k}={v:.4f}" for k, v in cells.items()))
    if report.missingness_balanced_accuracy is not None:
        print(f"missingness balanced accuracy: {report.missingness_balanced_accuracy:.4f}")


def cmd_ablate(args, argv):
    from .evaluation import compare_ablations
    from .training import latest_checkpoint, train

    bad = [f for f in args.flags if f not in ABLATION_FLAGS]
    if bad:
        raise UsageError(f"unknown ablation flags {bad}; choose from {list(ABLATION_FLAGS)}")
    base = _load_config(args.config, args.seed)
    ablated = base.replace(**{f: True for f in args.flags})
    out_dir = Path(args.out_dir)
    started = time.time()
    names = ["full", "+".join(args.flags)]
    reports, artifacts = [], []
    for name, cfg in zip(names, (base, ablated)):
        run_dir = out_dir / name
        train(cfg, run_dir, iterations=args.iterations)
        ckpt = latest_checkpoint(run_dir)
        report = _evaluate_checkpoint(ckpt, args.data)
        report.save(run_dir / "metrics.json")
        reports.append(report)
        artifacts += [ckpt, run_dir / "metrics.json"]
    table = compare_ablations(reports, names)
    (out_dir / "comparison.csv").write_text(table.to_csv())
    (out_dir / "comparison.txt").write_text(table.to_text() + "\n")
    artifacts += [out_dir / "comparison.csv", out_dir / "comparison.txt"]
    write_manifest(out_dir / MANIFEST_NAME, argv, "ablate",
                   {"base": base.to_dict(), "flags": list(args.flags)}, {"seed": base.seed}, artifacts, started)
    print(table.to_text())


def cmd_render(args, argv):
    from .data import read_dataset
    from .render import render_sample
    from .training import load_checkpoint

    header, samples = read_dataset(args.data)
    model, _, _, _ = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    paths = []
    for i in args.indices:
        if not 0 <= i < len(samples):
            raise UsageError(f"index {i} outside dataset of {len(samples)} samples")
        paths.append(render_sample(model, samples[i], out_dir / f"sample-{i:05d}.png"))
    write_manifest(out_dir / MANIFEST_NAME, argv, "render", None, {"data_seed": header["seed"]},
                   paths, started)
    for p in paths:
        print(p)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dive", description="Multi-object video prediction with missing data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="write a frozen dataset container")
    g.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", choices=("train", "test"), default="test")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int, help="stop early after this many steps")
    t.add_argument("--no-resume", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics report for a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train full and ablated models, compare on a dataset")
    a.add_argument("--config")
    a.add_argument("--flags", nargs="+", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--iterations", type=int)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("render", help="PNG grids of per-object generations")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--indices", type=int, nargs="+", required=True)
    r.add_argument("--out-dir", default=".")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    from .data import DataFormatError
    from .model import NumericalError

    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "count", 1) < 1:
        print("dive: --count must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args, argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, ConfigError) as err:
        print(f"dive: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"dive: numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
