"""Manifest I/O, validation, run configuration, and the end-to-end pipeline.

All manifests are line-delimited JSON with a fixed key order per record type,
and reports are CSV, so outputs diff cleanly and byte-level determinism is
testable.  The pipeline runs tile -> extract-cells -> differential -> gen-qa
(-> evaluate) on a seeded synthetic slide and writes a summary embedding the
config hash; no timestamps or environment-dependent values appear anywhere.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .cells import (
    CellRecord,
    DEFAULT_CONTEXT_FACTOR,
    DEFAULT_MIN_CONFIDENCE,
    WBC_SUBTYPES,
    Differential,
    cells_from_mask,
    differential,
)
from .errors import ConfigError, PipelineStageError, ValidationError
from .metrics import DEFAULT_BOOTSTRAP_B, EvalRecord, MetricReport, evaluate
from .qa import DEFAULT_OPTION_COUNT, QAItem, SlideSummary, TaskTypeMix, generate_cell_qa, generate_slide_qa, validate_item
from .slides import QC_THRESHOLD, ScoredTile, TILE_SIZE, TileAddress, score_tiles, tile_grid
from .synth import parse_slide_spec, synthetic_slide

DEFAULT_MIX_TEXT = """\
# default generation mix: one item per combination and record
cell.subtyping.mcq = 1
cell.morphology.true_false = 1
cell.abnormality.fill_blank = 1
cell.knowledge.open = 1
slide.morphology.mcq = 1
slide.differential.fill_blank = 1
slide.diagnosis.mcq = 1
slide.knowledge.open = 1
"""


# ---------------------------------------------------------------------------
# Row codecs (dict key order is the serialized field order)
# ---------------------------------------------------------------------------

def tile_row(tile: ScoredTile) -> dict:
    a = tile.address
    return {
        "slide_id": a.slide_id,
        "row": a.row,
        "col": a.col,
        "size": a.size,
        "quality": round(float(tile.quality), 6),
        "kept": bool(tile.kept),
    }


def tile_from_row(d: dict) -> ScoredTile:
    addr = TileAddress(d["slide_id"], int(d["row"]), int(d["col"]), int(d["size"]))
    return ScoredTile(addr, float(d["quality"]), bool(d["kept"]))


def cell_row(cell: CellRecord) -> dict:
    t = cell.tile
    return {
        "id": cell.id,
        "slide_id": t.slide_id,
        "row": t.row,
        "col": t.col,
        "tile_size": t.size,
        "crop_box": list(cell.crop_box),
        "subtype": cell.subtype,
        "confidence": round(float(cell.confidence), 6),
        "keywords": list(cell.keywords),
    }


def cell_from_row(d: dict) -> CellRecord:
    addr = TileAddress(d["slide_id"], int(d["row"]), int(d["col"]), int(d["tile_size"]))
    return CellRecord(
        id=d["id"],
        tile=addr,
        crop_box=tuple(int(v) for v in d["crop_box"]),
        subtype=d["subtype"],
        confidence=float(d["confidence"]),
        keywords=tuple(d["keywords"]),
    )


def summary_row(s: SlideSummary) -> dict:
    return {
        "slide_id": s.slide_id,
        "diagnosis": s.diagnosis,
        "n_cells": s.differential.n_cells,
        "others_count": s.differential.others_count,
        "percentages": {k: round(float(s.differential.percentages.get(k, 0.0)), 6) for k in WBC_SUBTYPES},
        "findings": list(s.findings),
    }


def summary_from_row(d: dict) -> SlideSummary:
    diff = Differential(
        percentages={k: float(v) for k, v in d["percentages"].items()},
        n_cells=int(d["n_cells"]),
        others_count=int(d["others_count"]),
    )
    return SlideSummary(
        slide_id=d["slide_id"],
        diagnosis=d["diagnosis"],
        differential=diff,
        findings=tuple(d["findings"]),
    )


def qa_row(item: QAItem) -> dict:
    return {
        "id": item.id,
        "level": item.level,
        "task": item.task,
        "qtype": item.qtype,
        "image_ref": item.image_ref,
        "question": item.question,
        "options": list(item.options),
        "answer": item.answer,
        "seed": item.seed,
    }


def qa_from_row(d: dict) -> QAItem:
    try:
        item = QAItem(
            id=d["id"],
            level=d["level"],
            task=d["task"],
            qtype=d["qtype"],
            image_ref=d["image_ref"],
            question=d["question"],
            options=tuple(d["options"]),
            answer=d["answer"],
            seed=int(d["seed"]),
        )
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}") from None
    return item


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Manifest validation
# ---------------------------------------------------------------------------

@dataclass
class ManifestStats:
    """QA item counts per (split, level, task, qtype); split is the file stem."""

    counts: dict[tuple[str, str, str, str], int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, split: str, level: str, task: str, qtype: str) -> None:
        key = (split, level, task, qtype)
        self.counts[key] = self.counts.get(key, 0) + 1


def validate_manifest(path) -> tuple[ManifestStats, list[str]]:
    """Parse every line of a QA manifest; invalid lines are reported by number
    and excluded from the stats."""
    path = Path(path)
    split = path.stem
    stats = ManifestStats()
    errors: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                item = qa_from_row(json.loads(line))
                validate_item(item)
            except (json.JSONDecodeError, ValidationError, TypeError) as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            stats.add(split, item.level, item.task, item.qtype)
    return stats, errors


# ---------------------------------------------------------------------------
# Run configuration and pipeline
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    out_dir: str
    slide: str = "synthetic:2048x2048:7"
    seed: int = 7
    tile_size: int = TILE_SIZE
    qc_threshold: float = QC_THRESHOLD
    context_factor: float = DEFAULT_CONTEXT_FACTOR
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    option_count: int = DEFAULT_OPTION_COUNT
    bootstrap_b: int = DEFAULT_BOOTSTRAP_B
    mix_text: str = DEFAULT_MIX_TEXT
    self_eval: bool = False

    def validate(self) -> None:
        if self.tile_size < 1:
            raise ConfigError(f"tile size must be >= 1, got {self.tile_size}")
        if not 0.0 <= self.qc_threshold <= 1.0:
            raise ConfigError(f"qc threshold must lie in [0, 1], got {self.qc_threshold}")
        if self.context_factor < 1.0:
            raise ConfigError(f"context factor must be >= 1, got {self.context_factor}")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ConfigError(f"min confidence must lie in [0, 1], got {self.min_confidence}")
        if self.option_count < 2:
            raise ConfigError(f"option count must be >= 2, got {self.option_count}")
        if self.bootstrap_b < 1:
            raise ConfigError(f"bootstrap resample count must be >= 1, got {self.bootstrap_b}")
        kind, _ = parse_slide_spec(self.slide)
        if kind != "synthetic":
            raise ConfigError("the run pipeline operates on synthetic:WxH:seed slides; "
                              "use the individual commands for file inputs")
        TaskTypeMix.parse(self.mix_text)

    def hash(self) -> str:
        fields = asdict(self)
        fields.pop("out_dir")  # where outputs land is not part of what they contain
        payload = json.dumps(fields, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def write_report_csv(report: MetricReport, path) -> int:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "task", "qtype", "metric", "mean", "std", "n"])
        rows = report.rows()
        for level, task, qtype, metric, mean, std, n in rows:
            writer.writerow([level, task, qtype, metric, repr(mean), repr(std), n])
    return len(rows)


def _self_eval_records(items: list[QAItem]) -> list[EvalRecord]:
    return [
        EvalRecord(
            qa_id=i.id, prediction=i.answer, gold=i.answer,
            qtype=i.qtype, task=i.task, level=i.level, options=i.options,
        )
        for i in items
    ]


def run_pipeline(config: RunConfig) -> dict:
    """Execute the full pipeline; returns the run summary (also written to
    summary.json).  A stage failure raises PipelineStageError naming the
    stage; outputs of completed stages remain on disk."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, (w, h, slide_seed) = parse_slide_spec(config.slide)

    stage = "tile"
    try:
        bundle = synthetic_slide(w, h, slide_seed)
        grid = tile_grid(bundle.slide, config.tile_size)
        scored = score_tiles(bundle.slide, grid, threshold=config.qc_threshold)
        write_jsonl(out / "tiles.jsonl", (tile_row(t) for t in scored))
        kept = [t.address for t in scored if t.kept]

        stage = "extract-cells"
        cells: list[CellRecord] = []
        for addr in kept:
            mask = bundle.mask_for(addr)
            labels = bundle.labels_for(addr)
            cells.extend(cells_from_mask(mask, labels, config.context_factor))
        write_jsonl(out / "cells.jsonl", (cell_row(c) for c in cells))

        stage = "differential"
        diff = differential(cells, config.min_confidence)
        findings = sorted({
            kw for c in cells if c.confidence >= config.min_confidence for kw in c.keywords
        })
        summary = SlideSummary(
            slide_id=bundle.slide.id,
            diagnosis=bundle.diagnosis,
            differential=diff,
            findings=tuple(findings),
        )
        write_jsonl(out / "slides.jsonl", [summary_row(summary)])

        stage = "gen-qa"
        mix = TaskTypeMix.parse(config.mix_text)
        items: list[QAItem] = []
        for cell in cells:
            items.extend(generate_cell_qa(cell, mix, config.seed, config.option_count))
        items.extend(generate_slide_qa(summary, mix, config.seed, config.option_count))
        write_jsonl(out / "qa.jsonl", (qa_row(i) for i in items))

        eval_rows = None
        if config.self_eval:
            stage = "evaluate"
            report = evaluate(_self_eval_records(items), B=config.bootstrap_b, seed=config.seed)
            eval_rows = write_report_csv(report, out / "report.csv")
    except Exception as exc:
        if isinstance(exc, PipelineStageError):
            raise
        raise PipelineStageError(stage, exc) from exc

    from . import __version__

    run_summary = {
        "version": __version__,
        "seed": config.seed,
        "config_hash": config.hash(),
        "slide_id": bundle.slide.id,
        "stages": {
            "tile": {"tiles": len(scored), "kept": len(kept)},
            "extract_cells": {"cells": len(cells)},
            "differential": {"n_cells": diff.n_cells, "others": diff.others_count},
            "gen_qa": {"items": len(items)},
            "evaluate": {"report_rows": eval_rows},
        },
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(run_summary, fh, indent=2)
        fh.write("\n")
    return run_summary
