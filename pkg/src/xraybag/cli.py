"""Command line: build | instruct | validate | eval | stats.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration error,
3 I/O error. Progress goes to stderr; results go to the declared files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .captions import load_pools, validate_corpus
from .errors import EmptyAxis, IdMismatch, IoFailure, XrayBagError
from .pipeline import BuildConfig, build_dataset, read_jsonl, stats, write_instructions, write_jsonl

log = logging.getLogger("xraybag")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _load_config(args) -> BuildConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
    try:
        cfg = BuildConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    overrides = {}
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "caption_seed", None) is not None:
        overrides["caption_seed"] = args.caption_seed
    try:
        if getattr(args, "master_seed", None) is not None:
            overrides["protocol"] = replace(cfg.protocol, master_seed=args.master_seed)
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _check_output_dir(path: str) -> None:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"output path {p} exists and is not a directory")
    parent = p if p.exists() else next((q for q in p.parents if q.exists()), None)
    if parent is None or not parent.is_dir():
        raise UsageError(f"output directory {p} cannot be created")
    import os

    if not os.access(parent, os.W_OK):
        raise UsageError(f"output directory {p} is not writable")


def _manifest(path) -> list[dict]:
    if not Path(path).is_file():
        raise IoFailure(f"manifest not found: {path}")
    return read_jsonl(path)


def cmd_build(args) -> int:
    cfg = _load_config(args)
    _check_output_dir(cfg.output_dir)

    def progress(done, total):
        if done == total or done % 50 == 0:
            print(f"built {done}/{total}", file=sys.stderr)

    manifest = build_dataset(cfg, progress)
    print(f"wrote {manifest}", file=sys.stderr)
    return EXIT_OK


def cmd_instruct(args) -> int:
    cfg = _load_config(args)
    manifest = _manifest(args.manifest)
    tasks = args.tasks.split(",") if args.tasks else list(cfg.tasks)
    bad = set(tasks) - {"scene", "refer", "grounding", "vqa", "vqa_freeform"}
    if bad:
        raise UsageError(f"unknown tasks: {', '.join(sorted(bad))}")
    client = None
    if "vqa_freeform" in tasks:
        if not cfg.vqa_freeform:
            raise UsageError("vqa_freeform needs an endpoint section in the config")
        from .llm import ChatClient, EndpointConfig

        client = ChatClient(EndpointConfig.from_dict(cfg.vqa_freeform))
    out_dir = Path(args.out) if args.out else Path(args.manifest).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = load_pools(cfg.pools_path) if cfg.pools_path else None
    for task, path in write_instructions(manifest, tasks, out_dir, cfg.instruct_seed, pools, client).items():
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    manifest = _manifest(args.manifest)
    seed = cfg.validate_seed if args.seed is None else args.seed
    threshold = cfg.validate_threshold if args.threshold is None else args.threshold
    pools = load_pools(cfg.pools_path) if cfg.pools_path else None
    report = validate_corpus(manifest, pools, seed, threshold)
    out = Path(args.out) if args.out else Path(args.manifest).parent / "validation.json"
    try:
        out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {out}: {exc}") from exc
    print(f"mean ROUGE-L {report.mean}, min {report.min}, flagged {len(report.flagged)}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_eval(args) -> int:
    from .evaluate import emit_report, evaluate

    manifest = _manifest(args.manifest)
    preds = read_jsonl(args.predictions)
    tasks = ["scene", "refer", "grounding", "vqa"] if args.task == "all" else [args.task]
    keys = {}
    if "vqa" in tasks:
        inst_dir = Path(args.instructions) if args.instructions else Path(args.manifest).parent
        path = inst_dir / "instructions_vqa.jsonl"
        if not path.is_file():
            raise IoFailure(f"VQA answer keys not found: {path}")
        keys = {r["id"]: r["answer_key"] for r in read_jsonl(path) if r.get("answer_key")}
    report = evaluate(manifest, preds, tasks, keys)
    out_dir = Path(args.out) if args.out else Path(args.predictions).parent
    jp, mp = emit_report(report, out_dir)
    print(f"wrote {jp} and {mp}", file=sys.stderr)
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = _manifest(args.manifest)
    result = json.dumps(stats(manifest), indent=2, sort_keys=True)
    if args.out:
        try:
            Path(args.out).write_text(result + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {args.out}: {exc}") from exc
    else:
        print(result)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xraybag", description="Synthetic X-ray baggage datasets and scoring.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="enumerate, compose, render and caption the protocol grid")
    p.add_argument("--config")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--workers", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--caption-seed", type=int)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("instruct", help="emit instruction JSONL files from a manifest")
    p.add_argument("manifest")
    p.add_argument("--config")
    p.add_argument("--tasks", help="comma-separated subset of scene,refer,grounding,vqa,vqa_freeform")
    p.add_argument("--out", help="directory for instructions_{task}.jsonl")
    p.set_defaults(func=cmd_instruct)

    p = sub.add_parser("validate", help="ROUGE-L check of stored captions against canonical ones")
    p.add_argument("manifest")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("manifest")
    p.add_argument("predictions")
    p.add_argument("--task", default="all", choices=["scene", "refer", "grounding", "vqa", "all"])
    p.add_argument("--instructions", help="directory holding instructions_vqa.jsonl")
    p.add_argument("--out", help="directory for report.json and report.md")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="instance and image counts of a manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IdMismatch as exc:
        print(f"error: predictions reference {len(exc.ids)} unknown ids: {', '.join(exc.ids[:20])}",
              file=sys.stderr)
        return EXIT_INVALID
    except IoFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EmptyAxis as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except XrayBagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
