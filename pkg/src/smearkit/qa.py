"""Deterministic QA synthesis over cell records and slide summaries.

A fixed, versioned template bank stands in for prompt-driven generation: every
supported (level, task, question-type) combination owns a small set of slot
templates filled from the record.  Items are a pure function of (subject, mix,
seed); MCQ option order comes from a per-item derived seed so the correct
answer lands uniformly across positions.  Generated items pass the quality
filter or are retried a bounded number of times and then dropped.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cells import CellRecord, Differential, WBC_SUBTYPES
from .errors import ConfigError, ValidationError
from .lexicon import (
    ABNORMALITY_KEYWORDS,
    COHORT_DIAGNOSES,
    CYTOPLASM_DESCRIPTIONS,
    DIAGNOSIS_DISPLAY,
    ELEVATION_CONDITIONS,
    EXTRA_CONDITIONS,
    NORMAL_RANGES,
    NUCLEUS_DESCRIPTIONS,
    PRIMARY_ROLES,
)
from .metrics import normalize

LEVELS = ("cell", "slide")
TASKS = ("morphology", "abnormality", "subtyping", "knowledge", "differential", "diagnosis")
QTYPES = ("true_false", "mcq", "fill_blank", "open")

CELL_TASKS = ("morphology", "abnormality", "subtyping", "knowledge")
SLIDE_TASKS = ("morphology", "abnormality", "differential", "knowledge", "diagnosis")

# Combinations that ship templates.  Slide-level differential/open and
# knowledge true-false / fill-blank have none and are rejected at config time.
SUPPORTED_COMBOS = frozenset(
    [("cell", t, q) for t in CELL_TASKS for q in QTYPES]
    + [("slide", "morphology", q) for q in QTYPES]
    + [("slide", "abnormality", q) for q in QTYPES]
    + [("slide", "differential", q) for q in ("true_false", "mcq", "fill_blank")]
    + [("slide", "knowledge", q) for q in ("mcq", "open")]
    + [("slide", "diagnosis", q) for q in QTYPES]
)

DEFAULT_OPTION_COUNT = 4
DEFAULT_DEDUPE_THRESHOLD = 0.9
_MAX_ATTEMPTS = 6


@dataclass(frozen=True)
class QAItem:
    id: str
    level: str
    task: str
    qtype: str
    image_ref: str
    question: str
    options: tuple[str, ...]
    answer: str
    seed: int


@dataclass(frozen=True)
class SlideSummary:
    slide_id: str
    diagnosis: str
    differential: Differential
    findings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.diagnosis not in COHORT_DIAGNOSES:
            raise ValidationError(f"diagnosis {self.diagnosis!r} not in cohort {COHORT_DIAGNOSES}")


def validate_item(item: QAItem) -> None:
    """Enforce the structural invariants of a QA item; raises ValidationError."""
    if item.level not in LEVELS:
        raise ValidationError(f"{item.id}: unknown level {item.level!r}")
    if item.qtype not in QTYPES:
        raise ValidationError(f"{item.id}: unknown question type {item.qtype!r}")
    if item.level == "cell" and item.task not in CELL_TASKS:
        raise ValidationError(f"{item.id}: task {item.task!r} is not a cell-level task")
    if item.level == "slide" and item.task not in SLIDE_TASKS:
        raise ValidationError(f"{item.id}: task {item.task!r} is not a slide-level task")
    if not item.id or not item.question or not item.answer:
        raise ValidationError(f"{item.id!r}: empty id, question, or answer")
    if item.qtype == "mcq":
        if len(item.options) < 2:
            raise ValidationError(f"{item.id}: MCQ needs >= 2 options")
        if sum(1 for o in item.options if o == item.answer) != 1:
            raise ValidationError(f"{item.id}: answer must appear exactly once among options")
    else:
        if item.options:
            raise ValidationError(f"{item.id}: options only allowed for MCQs")
    if item.qtype == "true_false" and item.answer not in ("True", "False"):
        raise ValidationError(f"{item.id}: true/false answer must be 'True' or 'False'")
    if item.qtype == "fill_blank" and len(item.answer.split()) >= 10:
        raise ValidationError(f"{item.id}: fill-in-the-blank answer must be under 10 words")


@dataclass
class TaskTypeMix:
    """Requested item counts per (level, task, qtype)."""

    counts: dict[tuple[str, str, str], int] = field(default_factory=dict)

    def validate(self) -> None:
        for combo, count in self.counts.items():
            if combo not in SUPPORTED_COMBOS:
                raise ConfigError(f"no templates for combination {'.'.join(combo)}")
            if count < 0:
                raise ConfigError(f"negative count for {'.'.join(combo)}")

    @classmethod
    def parse(cls, text: str) -> "TaskTypeMix":
        """Parse ``level.task.qtype = count`` lines; '#' starts a comment."""
        counts: dict[tuple[str, str, str], int] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                key, value = line.split("=")
                level, task, qtype = key.strip().split(".")
                counts[(level, task, qtype)] = int(value.strip())
            except ValueError:
                raise ConfigError(f"bad mix line {lineno}: {raw.rstrip()!r}") from None
        mix = cls(counts)
        mix.validate()
        return mix


def _derive_seed(*parts) -> int:
    key = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def shuffle_options(options: Sequence[str], seed: int) -> list[str]:
    """Seed-determined permutation of the option list."""
    if len(options) < 2:
        raise ValidationError("need at least 2 options to shuffle")
    perm = np.random.default_rng(seed).permutation(len(options))
    return [options[i] for i in perm]


def qa_quality_filter(item: QAItem) -> str | None:
    """Reason the item must be rejected, or None when it is acceptable.

    Rejections: the normalized answer leaking into the question (skipped for
    true/false, whose True/False alphabet is part of the format), over-long
    fill-in-the-blank answers, duplicate normalized MCQ options, and empty
    answers.
    """
    answer = normalize(item.answer)
    if item.qtype != "true_false" and answer and answer in normalize(item.question):
        return "answer-leaking"
    if item.qtype == "fill_blank" and len(item.answer.split()) >= 10:
        return "answer-length"
    if item.qtype == "mcq":
        normalized = [normalize(o) for o in item.options]
        if len(set(normalized)) != len(normalized):
            return "duplicate-options"
    if not item.answer.strip():
        return "empty-answer"
    return None


def dedupe(items: Sequence[QAItem], sim_threshold: float = DEFAULT_DEDUPE_THRESHOLD) -> list[QAItem]:
    """Greedy near-duplicate removal by question-token Jaccard similarity.

    Scans in input order and drops an item whose similarity to any retained
    question reaches the threshold, so a threshold of 1.0 removes exact
    token-set duplicates only.
    """
    if not 0.0 < sim_threshold <= 1.0:
        raise ValidationError(f"similarity threshold must be in (0, 1], got {sim_threshold}")
    kept: list[QAItem] = []
    kept_tokens: list[set[str]] = []
    for item in items:
        toks = set(normalize(item.question).split())
        duplicate = False
        for other in kept_tokens:
            union = toks | other
            sim = len(toks & other) / len(union) if union else 1.0
            if sim >= sim_threshold:
                duplicate = True
                break
        if not duplicate:
            kept.append(item)
            kept_tokens.append(toks)
    return kept


# ---------------------------------------------------------------------------
# Template bank.  Each template maps (subject, rng, option_count, option_seed)
# to a (question, options, answer) draft, or None when the subject cannot
# support the task (no keywords, Others subtype, empty differential ...).
# ---------------------------------------------------------------------------

def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(0, len(seq)))]


def _sample(rng: np.random.Generator, seq, k: int) -> list:
    idx = rng.choice(len(seq), size=min(k, len(seq)), replace=False)
    return [seq[int(i)] for i in idx]


def _mcq(question, correct, foils, rng, option_count, option_seed):
    distractors = _sample(rng, [f for f in foils if f != correct], option_count - 1)
    options = shuffle_options([correct] + distractors, option_seed)
    return question, tuple(options), correct


def _plural(subtype: str) -> str:
    return subtype.lower() + "s"


def _other_subtypes(subtype: str) -> list[str]:
    return [s for s in WBC_SUBTYPES if s != subtype]


def _dominant(diff: Differential) -> str | None:
    if diff.n_cells == 0:
        return None
    return max(WBC_SUBTYPES, key=lambda s: (diff.percentages.get(s, 0.0), s))


def _pct(diff: Differential, subtype: str) -> int:
    return int(round(diff.percentages.get(subtype, 0.0)))


# --- cell-level templates ---

def _cell_subtyping(cell, rng, qtype, option_count, option_seed):
    if cell.subtype == "Others":
        return None
    if qtype == "mcq":
        stem = _pick(rng, (
            "Which white blood cell subtype is shown in this crop?",
            "What is the subtype of the white blood cell at the center of this image?",
        ))
        return _mcq(stem, cell.subtype, _other_subtypes(cell.subtype), rng, option_count, option_seed)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        claimed = cell.subtype if truth else _pick(rng, _other_subtypes(cell.subtype))
        return (f"True or False: the central cell in this crop is a {claimed.lower()}.",
                (), "True" if truth else "False")
    if qtype == "fill_blank":
        stem = _pick(rng, (
            "The white blood cell at the center of this crop is a ______.",
            "Name the subtype of the white blood cell shown: ______.",
        ))
        return stem, (), cell.subtype
    stem, answer = _pick(rng, (
        ("What type of white blood cell is shown in this image?",
         f"This crop shows a {cell.subtype.lower()}."),
        ("Identify the cell at the center of this crop.",
         f"The cell is a {cell.subtype.lower()}."),
    ))
    return stem, (), answer


def _cell_morphology(cell, rng, qtype, option_count, option_seed):
    if cell.subtype == "Others":
        return None
    nucleus = NUCLEUS_DESCRIPTIONS[cell.subtype]
    cytoplasm = CYTOPLASM_DESCRIPTIONS[cell.subtype]
    use_nucleus = bool(rng.integers(0, 2))
    if qtype == "mcq":
        if use_nucleus:
            stem = "Which description best matches the nucleus of the cell in this crop?"
            foils = [NUCLEUS_DESCRIPTIONS[s] for s in _other_subtypes(cell.subtype)]
            return _mcq(stem, nucleus, foils, rng, option_count, option_seed)
        stem = "Which description best matches the cytoplasm of the cell in this crop?"
        foils = [CYTOPLASM_DESCRIPTIONS[s] for s in _other_subtypes(cell.subtype)]
        return _mcq(stem, cytoplasm, foils, rng, option_count, option_seed)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        src = cell.subtype if truth else _pick(rng, _other_subtypes(cell.subtype))
        desc = NUCLEUS_DESCRIPTIONS[src] if use_nucleus else CYTOPLASM_DESCRIPTIONS[src]
        return (f"True or False: the cell in this crop shows {desc}.",
                (), "True" if truth else "False")
    if qtype == "fill_blank":
        if use_nucleus:
            return "Fill in the blank: the nucleus of this cell appears as ______.", (), nucleus
        return "Fill in the blank: the cytoplasm of this cell contains ______.", (), cytoplasm
    if use_nucleus:
        return ("Describe the nuclear morphology of the cell in this crop.",
                (), f"It shows {nucleus}, typical of a {cell.subtype.lower()}.")
    return ("Describe the cytoplasm of the cell in this crop.",
            (), f"The cytoplasm shows {cytoplasm}.")


def _cell_abnormality(cell, rng, qtype, option_count, option_seed):
    if not cell.keywords:
        return None
    kw = _pick(rng, cell.keywords)
    foils = [k for k in ABNORMALITY_KEYWORDS if k not in cell.keywords]
    if qtype == "mcq":
        return _mcq("Which abnormality is visible in this cell crop?", kw, foils, rng, option_count, option_seed)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        claimed = kw if truth else _pick(rng, foils)
        return (f"True or False: this cell shows {claimed}.", (), "True" if truth else "False")
    if qtype == "fill_blank":
        stem = _pick(rng, (
            "Which morphological abnormality is visible in this cell?",
            "The abnormal feature of this cell is best described as ______.",
        ))
        return stem, (), kw
    return ("Note any abnormal morphology visible in this cell.",
            (), f"The cell shows {kw}.")


def _cell_knowledge(cell, rng, qtype, option_count, option_seed):
    if cell.subtype == "Others":
        return None
    subtype = cell.subtype
    condition = ELEVATION_CONDITIONS[subtype]
    role = PRIMARY_ROLES[subtype]
    if qtype == "mcq":
        if rng.integers(0, 2):
            stem = (f"An elevated {subtype.lower()} count is most classically "
                    "associated with which condition?")
            foils = [ELEVATION_CONDITIONS[s] for s in _other_subtypes(subtype)]
            return _mcq(stem, condition, foils, rng, option_count, option_seed)
        stem = f"Which of these is the primary role of the {subtype.lower()} in peripheral blood?"
        foils = [PRIMARY_ROLES[s] for s in _other_subtypes(subtype)]
        return _mcq(stem, role, foils, rng, option_count, option_seed)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        rng_src = subtype if truth else _pick(rng, _other_subtypes(subtype))
        return (f"True or False: {_plural(subtype)} normally account for "
                f"{NORMAL_RANGES[rng_src]} of circulating white blood cells.",
                (), "True" if truth else "False")
    if qtype == "fill_blank":
        return (f"An increased proportion of {_plural(subtype)} is classically seen in ______.",
                (), condition)
    return (f"What is the primary role of a {subtype.lower()} in peripheral blood?",
            (), f"Its main role is {role}.")


# --- slide-level templates ---

def _slide_morphology(summary, rng, qtype, option_count, option_seed):
    dominant = _dominant(summary.differential)
    if dominant is None:
        return None
    if qtype == "mcq":
        return _mcq("Which white blood cell subtype is most frequent across this slide?",
                    dominant, _other_subtypes(dominant), rng, option_count, option_seed)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        claimed = dominant if truth else _pick(rng, _other_subtypes(dominant))
        return (f"True or False: the most frequent white blood cell subtype on this "
                f"slide is the {claimed.lower()}.", (), "True" if truth else "False")
    if qtype == "fill_blank":
        return ("The most frequent white blood cell subtype on this slide is the ______.",
                (), dominant)
    pct = _pct(summary.differential, dominant)
    return ("Summarize the white cell composition of this slide.",
            (), f"The slide is dominated by {_plural(dominant)} at about {pct} percent of white cells.")


def _slide_abnormality(summary, rng, qtype, option_count, option_seed):
    if not summary.findings:
        return None
    kw = _pick(rng, summary.findings)
    foils = [k for k in ABNORMALITY_KEYWORDS if k not in summary.findings]
    if qtype == "mcq":
        return _mcq("Which abnormal finding is present on this slide?", kw, foils, rng, option_count, option_seed)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        claimed = kw if truth else _pick(rng, foils)
        return (f"True or False: {claimed} are seen on this slide."
                if claimed.endswith("s") else f"True or False: {claimed} is seen on this slide.",
                (), "True" if truth else "False")
    if qtype == "fill_blank":
        return "The abnormal finding reported across this slide is ______.", (), kw
    return ("Describe any abnormal morphology seen across this slide.",
            (), f"The slide shows scattered cells with {kw}.")


def _slide_differential(summary, rng, qtype, option_count, option_seed):
    diff = summary.differential
    dominant = _dominant(diff)
    if dominant is None:
        return None
    subtype = _pick(rng, WBC_SUBTYPES)
    pct = _pct(diff, subtype)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        if truth:
            claimed = pct
        else:
            shift = int(rng.integers(15, 41))
            claimed = pct + shift if pct + shift <= 100 else pct - shift
            claimed = max(0, min(100, claimed))
        return (f"True or False: {_plural(subtype)} account for approximately "
                f"{claimed} percent of white cells on this slide.",
                (), "True" if truth else "False")
    if qtype == "mcq":
        stem = (f"Approximately what percentage of white cells on this slide "
                f"are {_plural(subtype)}?")
        foil_values = []
        for shift in (10, 20, 30, 45):
            for cand in (pct + shift, pct - shift):
                if 0 <= cand <= 100 and cand != pct and cand not in foil_values:
                    foil_values.append(cand)
        foils = [f"{v} percent" for v in foil_values]
        return _mcq(stem, f"{pct} percent", foils, rng, option_count, option_seed)
    stem = _pick(rng, (
        "The most frequent white blood cell subtype in this slide's differential is the ______.",
        "Fill in the blank: the leading subtype of this slide's differential is the ______.",
    ))
    return stem, (), dominant


def _slide_knowledge(summary, rng, qtype, option_count, option_seed):
    subtype = _pick(rng, WBC_SUBTYPES)
    condition = ELEVATION_CONDITIONS[subtype]
    if qtype == "mcq":
        stem = (f"A markedly raised {subtype.lower()} percentage in a differential "
                "most classically suggests which condition?")
        foils = [ELEVATION_CONDITIONS[s] for s in _other_subtypes(subtype)]
        return _mcq(stem, condition, foils, rng, option_count, option_seed)
    stem, answer = _pick(rng, (
        ("Why is the white blood cell differential clinically useful?",
         "It quantifies subtype proportions and flags shifts seen in infection and marrow disease."),
        (f"What does an elevated {subtype.lower()} percentage in a differential suggest?",
         f"It suggests {condition}."),
    ))
    return stem, (), answer


def _slide_diagnosis(summary, rng, qtype, option_count, option_seed):
    display = DIAGNOSIS_DISPLAY[summary.diagnosis]
    cohort = [DIAGNOSIS_DISPLAY[d] for d in COHORT_DIAGNOSES]
    if qtype == "mcq":
        base = [c for c in cohort if c != display]
        extras = _sample(rng, EXTRA_CONDITIONS, max(0, option_count - len(cohort)))
        options = shuffle_options([display] + base + extras, option_seed)
        return ("Which recorded condition best matches this slide?",
                tuple(options), display)
    if qtype == "true_false":
        truth = bool(rng.integers(0, 2))
        claimed = display if truth else _pick(rng, [c for c in cohort if c != display])
        return (f"True or False: this slide was recorded from a patient in the {claimed} group.",
                (), "True" if truth else "False")
    if qtype == "fill_blank":
        return "The recorded diagnosis for this slide is ______.", (), display
    return ("State the most likely underlying condition for this slide.",
            (), f"The findings are most consistent with {display}.")


_CELL_TEMPLATES: dict[str, Callable] = {
    "subtyping": _cell_subtyping,
    "morphology": _cell_morphology,
    "abnormality": _cell_abnormality,
    "knowledge": _cell_knowledge,
}

_SLIDE_TEMPLATES: dict[str, Callable] = {
    "morphology": _slide_morphology,
    "abnormality": _slide_abnormality,
    "differential": _slide_differential,
    "knowledge": _slide_knowledge,
    "diagnosis": _slide_diagnosis,
}


def _generate(level, subject, subject_id, image_ref, templates, mix, seed, option_count):
    mix.validate()
    if option_count < 2:
        raise ConfigError(f"MCQ option count must be >= 2, got {option_count}")
    items: list[QAItem] = []
    for (lv, task, qtype), count in sorted(mix.counts.items()):
        if lv != level:
            continue
        template = templates[task]
        for k in range(count):
            for attempt in range(_MAX_ATTEMPTS):
                item_seed = _derive_seed(seed, subject_id, task, qtype, k, attempt)
                rng = np.random.default_rng(item_seed)
                option_seed = _derive_seed(item_seed, "options")
                draft = template(subject, rng, qtype, option_count, option_seed)
                if draft is None:
                    break  # the record cannot support this task at all
                question, options, answer = draft
                item = QAItem(
                    id=f"{subject_id}:{task}:{qtype}:{k}",
                    level=level,
                    task=task,
                    qtype=qtype,
                    image_ref=image_ref,
                    question=question,
                    options=options,
                    answer=answer,
                    seed=item_seed,
                )
                if qa_quality_filter(item) is None:
                    validate_item(item)
                    items.append(item)
                    break
    return items


def generate_cell_qa(
    cell: CellRecord,
    mix: TaskTypeMix,
    seed: int,
    option_count: int = DEFAULT_OPTION_COUNT,
) -> list[QAItem]:
    """Cell-level QA items for one record; deterministic in (cell, mix, seed)."""
    return _generate("cell", cell, cell.id, cell.id, _CELL_TEMPLATES, mix, seed, option_count)


def generate_slide_qa(
    summary: SlideSummary,
    mix: TaskTypeMix,
    seed: int,
    option_count: int = DEFAULT_OPTION_COUNT,
) -> list[QAItem]:
    """Slide-level QA items for one summary; deterministic in (summary, mix, seed)."""
    return _generate(
        "slide", summary, summary.slide_id, summary.slide_id, _SLIDE_TEMPLATES, mix, seed, option_count
    )
