"""Toy-scale training orchestration for the alignment core.

Mirrors a four-phase curriculum at desk scale: phase 1 fits the cell-side map
with a contrastive loss over pooled embeddings, phase 2 trains the patch
resampler against frozen cell features with the combined global/local
alignment loss, and phases 3-4 are hook points that accept an external loss
callback.  Full-batch plain SGD under a warmup-plus-cosine schedule keeps
every update auditable; traces are deterministic for a fixed plan and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .align import (
    ResamplerGrads,
    ResamplerParams,
    loss_itc,
    resampler_backward,
    run_resampler,
)
from .errors import TrainingDiverged, ValidationError

PHASES = ("repr_learning", "cell_patch_align", "instruction_tuning", "downstream")
PARAM_GROUPS = ("resampler", "cell_map")

DEFAULT_BASE_LR = 5e-5
DEFAULT_WARMUP_FRAC = 0.10
DEFAULT_FINAL_LR = 0.0
# The reference schedule's 5e-5 is sized for full-scale backbones; the toy
# alignment problem needs a hotter rate to converge in a few hundred steps.
TOY_ALIGN_LR = 0.5
DEFAULT_LOCAL_WEIGHT = 1.0


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    base_lr: float = DEFAULT_BASE_LR
    warmup_frac: float = DEFAULT_WARMUP_FRAC
    final_lr: float = DEFAULT_FINAL_LR

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValidationError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValidationError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.base_lr <= 0.0:
            raise ValidationError(f"base_lr must be positive, got {self.base_lr}")
        if self.final_lr < 0.0 or self.final_lr > self.base_lr:
            raise ValidationError(
                f"final_lr must be in [0, base_lr], got {self.final_lr}")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_frac * self.total_steps)


def lr_at(schedule: Schedule, step: int) -> float:
    """Learning rate at an integer step: linear ramp 0 -> base_lr over the
    warmup interval, then cosine decay base_lr -> final_lr."""
    if step < 0 or step > schedule.total_steps:
        raise ValidationError(
            f"step {step} outside [0, {schedule.total_steps}]")
    w = schedule.warmup_steps
    if w > 0 and step < w:
        return schedule.base_lr * step / w
    span = schedule.total_steps - w
    if span == 0:
        return schedule.base_lr if step == w else schedule.final_lr
    t = (step - w) / span
    return schedule.final_lr + (schedule.base_lr - schedule.final_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


# ---------------------------------------------------------------------------
# Synthetic paired-token data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenPairs:
    """Matched patch/cell token sets: patch[i] is an identity mixture of
    cell[i]'s dictionary atoms plus optional Gaussian noise."""

    patch: np.ndarray   # (n_pairs, n_tokens, dim)
    cell: np.ndarray    # (n_pairs, n_tokens, dim)
    noise: float
    seed: int

    @property
    def n_pairs(self) -> int:
        return self.patch.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.patch.shape[1]

    @property
    def dim(self) -> int:
        return self.patch.shape[2]


def synth_paired_tokens(
    n_pairs: int,
    n_tokens: int,
    dim: int,
    noise: float = 0.0,
    seed: int = 0,
) -> TokenPairs:
    """Deterministic paired token sets over a fixed random dictionary.

    Cell tokens are the dictionary atoms with per-pair uniform scale jitter in
    [0.75, 1.25]; patch tokens are the same atoms (identity mixture) plus
    ``noise``-scaled Gaussian perturbation.  When n_tokens <= dim the atoms
    are orthonormalized, so at noise 0 perfect alignment is attainable.
    """
    if n_pairs < 1 or n_tokens < 1 or dim < 1:
        raise ValidationError("n_pairs, n_tokens, and dim must all be >= 1")
    if noise < 0:
        raise ValidationError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    atoms = rng.normal(size=(n_tokens, dim))
    if n_tokens <= dim:
        q, _ = np.linalg.qr(atoms.T)
        atoms = q.T[:n_tokens]
    else:
        atoms = atoms / np.linalg.norm(atoms, axis=1, keepdims=True)
    scales = rng.uniform(0.75, 1.25, size=(n_pairs, n_tokens))
    cell = scales[:, :, None] * atoms[None, :, :]
    patch = cell.copy()
    if noise > 0:
        patch = patch + noise * rng.normal(size=patch.shape)
    return TokenPairs(patch=patch, cell=cell, noise=noise, seed=seed)


# ---------------------------------------------------------------------------
# Model state and phase plans
# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    resampler: ResamplerParams
    cell_map: np.ndarray    # (dim, dim) shared-space map applied to cell tokens

    @classmethod
    def fresh(cls, n_latents: int, dim: int, n_layers: int = 2, seed: int = 0) -> "ModelState":
        return cls(
            resampler=ResamplerParams.random(n_latents, dim, n_layers, seed),
            cell_map=np.eye(dim),
        )

    def copy(self) -> "ModelState":
        return ModelState(resampler=self.resampler.copy(), cell_map=self.cell_map.copy())

    def validate(self) -> None:
        self.resampler.validate()
        d = self.resampler.dim
        if self.cell_map.shape != (d, d):
            raise ValidationError(
                f"cell_map must have shape ({d}, {d}), got {self.cell_map.shape}")


@dataclass
class PhasePlan:
    phase: str
    model: ModelState
    data: Optional[TokenPairs] = None
    frozen: frozenset = frozenset()
    trainable: frozenset = frozenset({"resampler"})
    align_enabled: bool = True
    local_weight: float = DEFAULT_LOCAL_WEIGHT
    loss_callback: Optional[Callable] = None

    def validate(self) -> None:
        if self.phase not in PHASES:
            raise ValidationError(f"unknown phase {self.phase!r}; expected one of {PHASES}")
        for group in self.frozen | self.trainable:
            if group not in PARAM_GROUPS:
                raise ValidationError(f"unknown parameter group {group!r}")
        if self.frozen & self.trainable:
            raise ValidationError(
                f"groups cannot be both frozen and trainable: {sorted(self.frozen & self.trainable)}")
        if self.phase in ("repr_learning", "cell_patch_align") and self.data is None:
            raise ValidationError(f"phase {self.phase!r} requires a data source")
        if self.phase in ("instruction_tuning", "downstream") and self.loss_callback is None:
            raise ValidationError(f"hook phase {self.phase!r} requires a loss callback")
        if self.local_weight < 0:
            raise ValidationError(f"local_weight must be >= 0, got {self.local_weight}")
        self.model.validate()


@dataclass(frozen=True)
class TraceRow:
    step: int
    lr: float
    loss_global: Optional[float]
    loss_local: Optional[float]
    loss_total: Optional[float]


@dataclass
class TrainingTrace:
    phase: str
    rows: list[TraceRow] = field(default_factory=list)
    ablation: bool = False
    model: Optional[ModelState] = None

    @property
    def initial_loss(self) -> Optional[float]:
        return self.rows[0].loss_total if self.rows else None

    @property
    def final_loss(self) -> Optional[float]:
        return self.rows[-1].loss_total if self.rows else None


# ---------------------------------------------------------------------------
# Losses over full batches
# ---------------------------------------------------------------------------

def _softmax_last(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _batched_global(out: np.ndarray, mapped: np.ndarray):
    """Mean over pairs of the per-pair mean-difference norm, with gradients."""
    p, n, _ = out.shape
    mean_diff = (out - mapped).mean(axis=1)            # (P, d)
    norms = np.linalg.norm(mean_diff, axis=1)          # (P,)
    value = float(norms.mean())
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms[:, None] > 0, mean_diff / safe[:, None], 0.0)
    d_pair = unit / (n * p)                            # (P, d)
    d_out = np.repeat(d_pair[:, None, :], n, axis=1)
    return value, d_out, -d_out


def _batched_local(out: np.ndarray, mapped: np.ndarray):
    """Mean over pairs of the within-pair token InfoNCE, with gradients."""
    p, n, _ = out.shape
    logits = np.einsum("pnd,pmd->pnm", out, mapped)
    shifted = logits - logits.max(axis=2, keepdims=True)
    log_sm = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
    diag = np.einsum("pnn->pn", log_sm)
    value = float(-diag.mean())
    d_logits = (_softmax_last(logits) - np.eye(n)[None]) / (n * p)
    d_out = np.einsum("pnm,pmd->pnd", d_logits, mapped)
    d_mapped = np.einsum("pnm,pnd->pmd", d_logits, out)
    return value, d_out, d_mapped


def retrieval_top1(model: ModelState, data: TokenPairs) -> float:
    """Fraction of resampled patch slots whose nearest mapped cell token
    (within the pair, by dot product) is the matching one."""
    out, _ = run_resampler(model.resampler, data.patch)
    mapped = data.cell @ model.cell_map
    sims = np.einsum("pnd,pmd->pnm", out, mapped)
    hits = sims.argmax(axis=2) == np.arange(data.n_tokens)[None, :]
    return float(hits.mean())


# ---------------------------------------------------------------------------
# Phase runner
# ---------------------------------------------------------------------------

def _apply_sgd(model: ModelState, grads: dict, trainable: frozenset, lr: float) -> None:
    if "resampler" in trainable and "resampler" in grads:
        g: ResamplerGrads = grads["resampler"]
        r = model.resampler
        r.latents -= lr * g.latents
        r.wq -= lr * g.wq
        r.wk -= lr * g.wk
        r.wv -= lr * g.wv
        r.wo -= lr * g.wo
    if "cell_map" in trainable and "cell_map" in grads:
        model.cell_map -= lr * grads["cell_map"]


def _snapshot(model: ModelState, groups: frozenset) -> dict:
    snap = {}
    if "resampler" in groups:
        r = model.resampler
        snap["resampler"] = tuple(a.tobytes() for a in (r.latents, r.wq, r.wk, r.wv, r.wo))
    if "cell_map" in groups:
        snap["cell_map"] = model.cell_map.tobytes()
    return snap


def _phase2_step(model: ModelState, data: TokenPairs, local_weight: float):
    out, cache = run_resampler(model.resampler, data.patch)
    mapped = data.cell @ model.cell_map
    g_val, g_dout, g_dmap = _batched_global(out, mapped)
    l_val, l_dout, l_dmap = _batched_local(out, mapped)
    total = g_val + local_weight * l_val
    d_out = g_dout + local_weight * l_dout
    d_mapped = g_dmap + local_weight * l_dmap
    grads_res, _ = resampler_backward(model.resampler, cache, d_out)
    d_cell_map = np.einsum("pnd,pne->de", data.cell, d_mapped)
    return g_val, l_val, total, {"resampler": grads_res, "cell_map": d_cell_map}


def _phase1_step(model: ModelState, data: TokenPairs):
    pooled_cell = data.cell.mean(axis=1)     # (P, d)
    pooled_patch = data.patch.mean(axis=1)
    zp = pooled_cell @ model.cell_map
    value, (d_zp, _) = loss_itc(zp, pooled_patch)
    d_cell_map = pooled_cell.T @ d_zp
    return value, {"cell_map": d_cell_map}


def run_phase(plan: PhasePlan, schedule: Schedule, seed: int = 0) -> TrainingTrace:
    """Run one training phase; returns the trace with the trained model.

    The trace holds one row per step with pre-update losses plus a final row
    after the last update.  Frozen parameter groups are verified byte-identical
    at the end; a non-finite loss aborts with the partial trace attached.
    """
    plan.validate()
    model = plan.model.copy()
    trace = TrainingTrace(phase=plan.phase, ablation=not plan.align_enabled, model=model)
    frozen_before = _snapshot(model, plan.frozen)
    rng = np.random.default_rng(seed)   # reserved for callback phases

    for step in range(schedule.total_steps + 1):
        lr = lr_at(schedule, step)
        if plan.phase == "cell_patch_align" and not plan.align_enabled:
            # Ablation: pass tokens through the resampler, record no losses,
            # update nothing.
            run_resampler(model.resampler, plan.data.patch)
            trace.rows.append(TraceRow(step, lr, None, None, None))
            continue
        if plan.phase == "cell_patch_align":
            g_val, l_val, total, grads = _phase2_step(model, plan.data, plan.local_weight)
            row = TraceRow(step, lr, g_val, l_val, total)
        elif plan.phase == "repr_learning":
            total, grads = _phase1_step(model, plan.data)
            row = TraceRow(step, lr, None, None, total)
        else:
            total, grads = plan.loss_callback(model, rng)
            row = TraceRow(step, lr, None, None, float(total))
        if not math.isfinite(row.loss_total):
            raise TrainingDiverged(step=step, trace=trace)
        trace.rows.append(row)
        if step < schedule.total_steps:
            _apply_sgd(model, grads, plan.trainable, lr)

    if _snapshot(model, plan.frozen) != frozen_before:
        raise RuntimeError(f"frozen parameter group changed during phase {plan.phase!r}")
    return trace


def phase2_plan(
    model: ModelState,
    data: TokenPairs,
    align_enabled: bool = True,
    local_weight: float = DEFAULT_LOCAL_WEIGHT,
) -> PhasePlan:
    """Standard phase-2 wiring: train the patch resampler against a frozen
    cell-side map."""
    return PhasePlan(
        phase="cell_patch_align",
        model=model,
        data=data,
        frozen=frozenset({"cell_map"}),
        trainable=frozenset({"resampler"}),
        align_enabled=align_enabled,
        local_weight=local_weight,
    )


def phase1_plan(model: ModelState, data: TokenPairs) -> PhasePlan:
    """Phase-1 wiring: fit the cell-side map with the contrastive loss over
    pooled token means; the resampler stays frozen."""
    return PhasePlan(
        phase="repr_learning",
        model=model,
        data=data,
        frozen=frozenset({"resampler"}),
        trainable=frozenset({"cell_map"}),
    )


def train_alignment(
    n_pairs: int = 256,
    n_tokens: int = 32,
    dim: int = 16,
    steps: int = 500,
    seed: int = 7,
    noise: float = 0.0,
    align: bool = True,
    n_layers: int = 2,
    base_lr: float = TOY_ALIGN_LR,
    local_weight: float = DEFAULT_LOCAL_WEIGHT,
) -> tuple[TrainingTrace, TokenPairs]:
    """End-to-end phase-2 run on freshly synthesized pairs (the align-train
    command body).  Returns (trace, data)."""
    data = synth_paired_tokens(n_pairs, n_tokens, dim, noise=noise, seed=seed)
    model = ModelState.fresh(n_latents=n_tokens, dim=dim, n_layers=n_layers, seed=seed)
    plan = phase2_plan(model, data, align_enabled=align, local_weight=local_weight)
    schedule = Schedule(total_steps=steps, base_lr=base_lr)
    trace = run_phase(plan, schedule, seed=seed)
    return trace, data


def write_trace_csv(trace: TrainingTrace, path) -> None:
    """trace.csv with columns step, lr, loss_global, loss_local, loss_total;
    loss columns are empty for ablation rows."""
    import csv

    def fmt(x):
        return "" if x is None else repr(x)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss_global", "loss_local", "loss_total"])
        for row in trace.rows:
            writer.writerow([row.step, repr(row.lr), fmt(row.loss_global),
                             fmt(row.loss_local), fmt(row.loss_total)])
