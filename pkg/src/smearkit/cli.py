"""Command-line interface: one subcommand per pipeline stage plus `run`.

Every command that takes --seed defaults it from the SMEARKIT_SEED environment
variable (falling back to 7), and every output is bit-reproducible for fixed
inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cells import DEFAULT_CONTEXT_FACTOR, DEFAULT_MIN_CONFIDENCE, cells_from_mask, differential, InstanceMask
from .errors import PipelineStageError, ValidationError
from .manifest import (
    DEFAULT_MIX_TEXT,
    RunConfig,
    cell_from_row,
    cell_row,
    qa_from_row,
    qa_row,
    read_jsonl,
    run_pipeline,
    summary_from_row,
    summary_row,
    tile_from_row,
    tile_row,
    validate_manifest,
    write_jsonl,
    write_report_csv,
)
from .metrics import DEFAULT_BOOTSTRAP_B, EvalRecord, evaluate
from .qa import DEFAULT_OPTION_COUNT, SlideSummary, TaskTypeMix, dedupe, generate_cell_qa, generate_slide_qa
from .slides import QC_THRESHOLD, SlideImage, TILE_SIZE, score_tiles, tile_grid
from .synth import parse_slide_spec, synthetic_slide
from .training import TOY_ALIGN_LR, retrieval_top1, train_alignment, write_trace_csv

ENV_SEED = "SMEARKIT_SEED"


def _default_seed() -> int:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return 7
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{ENV_SEED} must be an integer, got {raw!r}")


def _tile_key(slide_id: str, row: int, col: int) -> str:
    return f"{slide_id}_r{row}_c{col}"


def _load_slide(spec: str):
    """Returns (slide, bundle-or-None) for a path or synthetic:WxH:seed spec."""
    kind, args = parse_slide_spec(spec)
    if kind == "synthetic":
        bundle = synthetic_slide(*args)
        return bundle.slide, bundle
    return SlideImage.from_file(args[0]), None


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_tile(args) -> int:
    slide, bundle = _load_slide(args.slide)
    grid = tile_grid(slide, args.size)
    scored = score_tiles(slide, grid, threshold=args.threshold)
    n = write_jsonl(args.out, (tile_row(t) for t in scored))
    kept = [t for t in scored if t.kept]
    if args.dump_masks:
        if bundle is None:
            raise SystemExit("--dump-masks requires a synthetic slide spec (ground truth needed)")
        mask_dir = Path(args.dump_masks)
        mask_dir.mkdir(parents=True, exist_ok=True)
        labels = {}
        for t in kept:
            key = _tile_key(t.address.slide_id, t.address.row, t.address.col)
            np.save(mask_dir / f"{key}.npy", bundle.mask_for(t.address).labels)
            labels[key] = {
                str(cid): [subtype, conf, list(kw)]
                for cid, (subtype, conf, kw) in sorted(bundle.labels_for(t.address).items())
            }
        with open(mask_dir / "labels.json", "w", encoding="utf-8") as fh:
            json.dump(labels, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {len(kept)} masks -> {mask_dir}")
    print(f"wrote {n} tiles ({len(kept)} kept) -> {args.out}")
    return 0


def _cmd_extract_cells(args) -> int:
    tiles = [tile_from_row(d) for d in read_jsonl(args.tiles)]
    mask_dir = Path(args.masks)
    labels_path = mask_dir / "labels.json"
    all_labels = {}
    if labels_path.exists():
        with open(labels_path, "r", encoding="utf-8") as fh:
            all_labels = json.load(fh)
    cells = []
    skipped = 0
    for t in tiles:
        if not t.kept:
            continue
        key = _tile_key(t.address.slide_id, t.address.row, t.address.col)
        mask_file = mask_dir / f"{key}.npy"
        if not mask_file.exists():
            skipped += 1
            continue
        mask = InstanceMask(t.address, np.load(mask_file))
        tile_labels = {
            int(cid): (entry[0], float(entry[1]), tuple(entry[2]))
            for cid, entry in all_labels.get(key, {}).items()
        }
        cells.extend(cells_from_mask(mask, tile_labels, args.factor))
    n = write_jsonl(args.out, (cell_row(c) for c in cells))
    note = f" ({skipped} kept tiles without masks skipped)" if skipped else ""
    print(f"wrote {n} cells{note} -> {args.out}")
    return 0


def _cmd_differential(args) -> int:
    cells = [cell_from_row(d) for d in read_jsonl(args.cells)]
    by_slide = {}
    for c in cells:
        by_slide.setdefault(c.tile.slide_id, []).append(c)
    out = {}
    summaries = []
    for slide_id in sorted(by_slide):
        group = by_slide[slide_id]
        diff = differential(group, args.min_conf)
        out[slide_id] = {
            "n_cells": diff.n_cells,
            "others_count": diff.others_count,
            "percentages": {k: round(v, 6) for k, v in diff.percentages.items()},
        }
        if args.slides_out:
            findings = sorted({kw for c in group if c.confidence >= args.min_conf for kw in c.keywords})
            summaries.append(SlideSummary(slide_id, args.diagnosis, diff, tuple(findings)))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    if args.slides_out:
        write_jsonl(args.slides_out, (summary_row(s) for s in summaries))
        print(f"wrote {len(summaries)} slide summaries -> {args.slides_out}")
    print(f"wrote differentials for {len(out)} slides -> {args.out}")
    return 0


def _cmd_gen_qa(args) -> int:
    mix = TaskTypeMix.parse(Path(args.mix).read_text() if args.mix else DEFAULT_MIX_TEXT)
    items = []
    if args.cells:
        for d in read_jsonl(args.cells):
            items.extend(generate_cell_qa(cell_from_row(d), mix, args.seed, args.options))
    if args.slides:
        for d in read_jsonl(args.slides):
            items.extend(generate_slide_qa(summary_from_row(d), mix, args.seed, args.options))
    if args.dedupe_threshold is not None:
        before = len(items)
        items = dedupe(items, args.dedupe_threshold)
        print(f"dedupe kept {len(items)}/{before} items")
    n = write_jsonl(args.out, (qa_row(i) for i in items))
    print(f"wrote {n} qa items -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    items = {d["id"]: qa_from_row(d) for d in read_jsonl(args.qa)}
    preds = {}
    for d in read_jsonl(args.pred):
        if d["qa_id"] not in items:
            raise SystemExit(f"prediction references unknown qa_id {d['qa_id']!r}")
        preds[d["qa_id"]] = d["prediction"]
    missing = sorted(set(items) - set(preds))
    if missing:
        raise SystemExit(f"{len(missing)} qa items lack predictions (first: {missing[:3]})")
    records = [
        EvalRecord(
            qa_id=qid, prediction=preds[qid], gold=item.answer,
            qtype=item.qtype, task=item.task, level=item.level, options=item.options,
        )
        for qid, item in items.items()
    ]
    report = evaluate(records, B=args.boot, seed=args.seed)
    n = write_report_csv(report, args.out)
    print(f"wrote {n} report rows -> {args.out}")
    return 0


def _cmd_align_train(args) -> int:
    trace, data = train_alignment(
        n_pairs=args.pairs, n_tokens=args.tokens, dim=args.dim, steps=args.steps,
        seed=args.seed, noise=args.noise, align=not args.no_align,
        n_layers=args.layers, base_lr=args.base_lr, local_weight=args.local_weight,
    )
    write_trace_csv(trace, args.trace)
    if trace.ablation:
        print(f"ablation run complete: {len(trace.rows)} steps traced, no alignment losses -> {args.trace}")
    else:
        top1 = retrieval_top1(trace.model, data)
        print(
            f"loss {trace.initial_loss:.4f} -> {trace.final_loss:.4f} "
            f"({100 * (1 - trace.final_loss / trace.initial_loss):.1f}% reduction), "
            f"top-1 retrieval {100 * top1:.1f}% -> {args.trace}"
        )
    return 0


def _cmd_validate(args) -> int:
    stats, errors = validate_manifest(args.manifest)
    for (split, level, task, qtype), count in sorted(stats.counts.items()):
        print(f"{split}  {level}.{task}.{qtype}  {count}")
    print(f"total {stats.total} valid items")
    for err in errors:
        print(f"ERROR {err}", file=sys.stderr)
    return 1 if errors else 0


def _cmd_run(args) -> int:
    config = RunConfig(
        out_dir=args.out_dir,
        slide=args.slide,
        seed=args.seed,
        tile_size=args.size,
        qc_threshold=args.threshold,
        context_factor=args.factor,
        min_confidence=args.min_conf,
        option_count=args.options,
        bootstrap_b=args.boot,
        mix_text=Path(args.mix).read_text() if args.mix else DEFAULT_MIX_TEXT,
        self_eval=args.self_eval,
    )
    summary = run_pipeline(config)
    print(json.dumps(summary, indent=2))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="smearkit",
        description="Peripheral blood smear toolkit: tiling, cell crops, QA synthesis, "
                    "benchmark metrics, and token-alignment training.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _default_seed()

    p = sub.add_parser("tile", formatter_class=fmt, help="tile a slide and score quality")
    p.add_argument("--slide", required=True, help="image path or synthetic:WxH:seed")
    p.add_argument("--size", type=int, default=TILE_SIZE, help="tile edge in pixels")
    p.add_argument("--threshold", type=float, default=QC_THRESHOLD, help="QC keep threshold")
    p.add_argument("--out", required=True, help="output tiles.jsonl")
    p.add_argument("--dump-masks", default=None, metavar="DIR",
                   help="also write instance masks + labels for kept tiles (synthetic slides only)")
    p.set_defaults(fn=_cmd_tile)

    p = sub.add_parser("extract-cells", formatter_class=fmt, help="extract labeled cell crops from masks")
    p.add_argument("--tiles", required=True, help="tiles.jsonl from the tile command")
    p.add_argument("--masks", required=True, help="directory of <slide>_r<row>_c<col>.npy masks")
    p.add_argument("--factor", type=float, default=DEFAULT_CONTEXT_FACTOR, help="crop context factor")
    p.add_argument("--out", required=True, help="output cells.jsonl")
    p.set_defaults(fn=_cmd_extract_cells)

    p = sub.add_parser("differential", formatter_class=fmt, help="compute WBC differentials per slide")
    p.add_argument("--cells", required=True, help="cells.jsonl")
    p.add_argument("--min-conf", type=float, default=DEFAULT_MIN_CONFIDENCE, help="confidence cut")
    p.add_argument("--out", required=True, help="output diff.json")
    p.add_argument("--slides-out", default=None, metavar="JSONL",
                   help="also write slide summaries consumable by gen-qa --slides")
    p.add_argument("--diagnosis", default="control", choices=["anemia", "MDS", "control"],
                   help="cohort label recorded in --slides-out summaries")
    p.set_defaults(fn=_cmd_differential)

    p = sub.add_parser("gen-qa", formatter_class=fmt, help="synthesize QA items from cells and slides")
    p.add_argument("--cells", default=None, help="cells.jsonl (omit to skip cell-level items)")
    p.add_argument("--slides", default=None, help="slides.jsonl summaries (omit to skip slide-level items)")
    p.add_argument("--mix", default=None, help="mix config of level.task.qtype = count lines")
    p.add_argument("--seed", type=int, default=seed_default, help=f"generation seed (env {ENV_SEED})")
    p.add_argument("--options", type=int, default=DEFAULT_OPTION_COUNT, help="MCQ option count")
    p.add_argument("--dedupe-threshold", type=float, default=None,
                   help="drop near-duplicate questions at this Jaccard similarity (off by default: "
                        "templated stems repeat across records by design)")
    p.add_argument("--out", required=True, help="output qa.jsonl")
    p.set_defaults(fn=_cmd_gen_qa)

    p = sub.add_parser("evaluate", formatter_class=fmt, help="score predictions against a QA manifest")
    p.add_argument("--qa", required=True, help="qa.jsonl manifest")
    p.add_argument("--pred", required=True, help="preds.jsonl of {qa_id, prediction}")
    p.add_argument("--boot", type=int, default=DEFAULT_BOOTSTRAP_B, help="bootstrap resamples")
    p.add_argument("--seed", type=int, default=seed_default, help=f"bootstrap seed (env {ENV_SEED})")
    p.add_argument("--out", required=True, help="output report.csv")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("align-train", formatter_class=fmt, help="train the patch resampler on synthetic pairs")
    p.add_argument("--pairs", type=int, default=256, help="number of patch/cell pairs")
    p.add_argument("--tokens", type=int, default=32, help="tokens per side")
    p.add_argument("--dim", type=int, default=16, help="embedding dimension")
    p.add_argument("--steps", type=int, default=500, help="SGD steps")
    p.add_argument("--seed", type=int, default=seed_default, help=f"run seed (env {ENV_SEED})")
    p.add_argument("--noise", type=float, default=0.0, help="patch-side Gaussian noise scale")
    p.add_argument("--layers", type=int, default=2, help="resampler layers")
    p.add_argument("--base-lr", type=float, default=TOY_ALIGN_LR, help="peak learning rate")
    p.add_argument("--local-weight", type=float, default=1.0, help="weight of the local loss term")
    p.add_argument("--no-align", action="store_true", help="ablation: forward passes only, no losses")
    p.add_argument("--trace", required=True, help="output trace.csv")
    p.set_defaults(fn=_cmd_align_train)

    p = sub.add_parser("validate", formatter_class=fmt, help="validate a QA manifest and print counts")
    p.add_argument("--manifest", required=True, help="qa.jsonl to check")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("run", formatter_class=fmt, help="full pipeline on a synthetic slide")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--slide", default="synthetic:2048x2048:7", help="synthetic:WxH:seed spec")
    p.add_argument("--seed", type=int, default=seed_default, help=f"generation seed (env {ENV_SEED})")
    p.add_argument("--size", type=int, default=TILE_SIZE, help="tile edge in pixels")
    p.add_argument("--threshold", type=float, default=QC_THRESHOLD, help="QC keep threshold")
    p.add_argument("--factor", type=float, default=DEFAULT_CONTEXT_FACTOR, help="crop context factor")
    p.add_argument("--min-conf", type=float, default=DEFAULT_MIN_CONFIDENCE, help="differential confidence cut")
    p.add_argument("--options", type=int, default=DEFAULT_OPTION_COUNT, help="MCQ option count")
    p.add_argument("--boot", type=int, default=DEFAULT_BOOTSTRAP_B, help="bootstrap resamples")
    p.add_argument("--mix", default=None, help="mix config file (defaults to a small built-in mix)")
    p.add_argument("--self-eval", action="store_true", help="score gold-vs-gold and write report.csv")
    p.set_defaults(fn=_cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, ValueError, OSError, PipelineStageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
