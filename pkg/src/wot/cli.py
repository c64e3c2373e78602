"""Command-line entry point.

Subcommands: gen, train, eval, ablate, trace, analyze.  Exit codes: 0 on
success, 1 on usage errors, 2 on runtime failures (missing files, malformed
configs, checkpoint mismatches), each with a message naming the offending
input.  Artifacts are written atomically (temp file + rename); progress and
the resolved effective config go to stderr, machine-readable results to
stdout or --out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from wot.config import ABLATION_TAGS, FAMILIES, TrainConfig, apply_ablation


class CliError(RuntimeError):
    """Runtime failure with a user-facing message."""


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 (argparse's default of 2 is reserved for runtime)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _progress(msg: str) -> None:
    print(f"[wot] {msg}", file=sys.stderr)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save(path: Path, save_fn) -> None:
    """Run save_fn against a temp path, then rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        save_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        _atomic_write_text(Path(out), text + "\n")
    else:
        print(text)


def _load_config(path: str | None, overrides: dict) -> TrainConfig:
    base = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                base = json.load(fh)
        except OSError as exc:
            raise CliError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"malformed config file {path}: {exc}") from exc
        if not isinstance(base, dict):
            raise CliError(f"config file {path} must hold a JSON object")
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc
    return apply_ablation(cfg, cfg.ablation)


def _print_config(cfg: TrainConfig) -> None:
    print(f"[wot] effective config: {cfg.to_json()}", file=sys.stderr)


def _load_datasets(paths: list[str]):
    from wot.tasks import read_jsonl

    samples = []
    for path in paths:
        if not os.path.exists(path):
            raise CliError(f"dataset file not found: {path}")
        try:
            samples.extend(read_jsonl(path))
        except (ValueError, KeyError) as exc:
            raise CliError(f"malformed dataset {path}: {exc}") from exc
    return samples


def _splits_for(cfg: TrainConfig, data_paths: list[str]):
    from wot.tasks import generate, split

    if data_paths:
        samples = _load_datasets(data_paths)
    else:
        _progress(f"generating {cfg.samples_per_family} samples per family "
                  f"(seed {cfg.data_seed})")
        samples = []
        for fam in cfg.families:
            samples.extend(generate(fam, cfg.data_seed, cfg.samples_per_family))
    by_family = {}
    for s in samples:
        by_family.setdefault(s.family, []).append(s)
    missing = [f for f in cfg.families if f not in by_family]
    if missing:
        raise CliError(f"no samples for configured families: {missing}")
    return {fam: split(group, cfg.data_seed)
            for fam, group in sorted(by_family.items())
            if fam in cfg.families}


def _load_checkpoint(path: str):
    from wot.checkpoint import CheckpointError, load_checkpoint

    if not os.path.exists(path):
        raise CliError(f"checkpoint file not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    from wot.tasks import generate, sample_to_json

    print(f"[wot] effective config: "
          f"{json.dumps({'family': args.family, 'count': args.count, 'seed': args.seed})}",
          file=sys.stderr)
    samples = generate(args.family, args.seed, args.count)
    lines = "".join(sample_to_json(s) + "\n" for s in samples)
    _atomic_write_text(Path(args.out), lines)
    _emit({"family": args.family, "count": len(samples), "seed": args.seed,
           "path": args.out}, None)
    return 0


def _cmd_train(args) -> int:
    from wot.checkpoint import save_checkpoint
    from wot.training import train

    overrides = {
        "seed": args.seed, "epochs": args.epochs, "ablation": args.ablation,
        "samples_per_family": args.samples_per_family,
        "data_seed": args.data_seed,
        "families": args.families.split(",") if args.families else None,
    }
    cfg = _load_config(args.config, overrides)
    _print_config(cfg)
    data = _splits_for(cfg, args.data or [])
    snapshot_epochs = tuple(
        int(e) for e in args.snapshot_epochs.split(",")) \
        if args.snapshot_epochs else ()
    result = train(data, cfg, snapshot_epochs=snapshot_epochs,
                   progress=_progress)

    out = Path(args.out)
    _atomic_save(out, lambda p: save_checkpoint(result.final, p))
    best_out = Path(args.best_out) if args.best_out \
        else out.with_suffix(".best" + out.suffix)
    _atomic_save(best_out, lambda p: save_checkpoint(result.best, p))
    snapshot_paths = {}
    if snapshot_epochs:
        snap_dir = Path(args.snapshot_dir or out.parent)
        for epoch, ckpt in sorted(result.snapshots.items()):
            path = snap_dir / f"{out.stem}.epoch{epoch:03d}{out.suffix}"
            _atomic_save(path, lambda p, c=ckpt: save_checkpoint(c, p))
            snapshot_paths[str(epoch)] = str(path)
    if args.vocab_out:
        vocab_text = json.dumps(result.final.vocab, ensure_ascii=False)
        _atomic_write_text(Path(args.vocab_out), vocab_text + "\n")
    payload = {
        "checkpoint": str(out),
        "best_checkpoint": str(best_out),
        "epochs": cfg.epochs,
        "final_val_score": result.history[-1].get("val_score")
        if result.history else None,
        "snapshots": snapshot_paths,
    }
    _emit(payload, args.result_out)
    return 0


def _cmd_eval(args) -> int:
    from wot.evaluation import evaluate

    ckpt = _load_checkpoint(args.checkpoint)
    _print_config(ckpt.config)
    samples = _load_datasets(args.data)
    if not samples:
        raise CliError(f"no samples in: {', '.join(args.data)}")
    metrics = evaluate(ckpt, samples)
    _emit(metrics.to_dict(), args.out)
    return 0


def _cmd_ablate(args) -> int:
    from wot.evaluation import run_ablation_suite

    cfg = _load_config(args.config, {"seed": args.seed})
    _print_config(cfg)
    data = _splits_for(cfg, args.data or [])
    seeds = [int(s) for s in args.seeds.split(",")]
    table = run_ablation_suite(data, cfg, seeds, progress=_progress)
    _emit(table, args.out)
    return 0


def _cmd_trace(args) -> int:
    from wot.evaluation import trace

    ckpt = _load_checkpoint(args.checkpoint)
    _print_config(ckpt.config)
    try:
        result = trace(ckpt, args.text, family=args.family)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if args.json:
        _emit(result.to_dict(), args.out)
    elif args.out:
        _atomic_write_text(Path(args.out), result.summary() + "\n")
    else:
        print(result.summary())
    return 0


def _cmd_analyze(args) -> int:
    from wot.evaluation import export_analysis

    print(f"[wot] effective config: "
          f"{json.dumps({'checkpoints': args.checkpoints, 'probe': args.probe, 'out': args.out})}",
          file=sys.stderr)
    checkpoints = [_load_checkpoint(p) for p in args.checkpoints]
    samples = _load_datasets([args.probe])
    if not samples:
        raise CliError(f"no probe samples in: {args.probe}")
    manifest = export_analysis(checkpoints, samples, args.out)
    _emit(manifest, None)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="wot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="generate a task dataset")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON config file (TrainConfig fields)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablation", choices=ABLATION_TAGS)
    p.add_argument("--families", help="comma-separated family list")
    p.add_argument("--samples-per-family", type=int, dest="samples_per_family")
    p.add_argument("--data-seed", type=int, dest="data_seed")
    p.add_argument("--data", action="append",
                   help="JSONL dataset (repeatable); generated if omitted")
    p.add_argument("--out", default="model.wotc")
    p.add_argument("--best-out", dest="best_out")
    p.add_argument("--snapshot-epochs", dest="snapshot_epochs",
                   help="comma-separated epochs to snapshot, e.g. 1,20")
    p.add_argument("--snapshot-dir", dest="snapshot_dir")
    p.add_argument("--result-out", dest="result_out",
                   help="write the result summary JSON here instead of stdout")
    p.add_argument("--vocab-out", dest="vocab_out",
                   help="also write the vocabulary as a JSON token array")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on datasets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--data", action="append")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("trace", help="trace one question through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--json", action="store_true",
                   help="emit the full trace JSON instead of the summary")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_trace)

    p = sub.add_parser("analyze", help="export the analysis bundle")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoints in epoch order")
    p.add_argument("--probe", required=True, help="probe dataset JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"wot {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected runtime failure
        print(f"wot {args.command}: error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
