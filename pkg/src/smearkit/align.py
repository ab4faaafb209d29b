"""Token-alignment core: latent resampler, alignment losses, gradient checking.

Everything here is float64 numpy with hand-written backward passes, sized for
correctness work rather than throughput: the resampler compresses a variable
token set to a fixed number of latent slots through weight-tied cross-attention
layers, and the losses compare resampled slot sets (mean-vector distance,
per-slot InfoNCE) or pooled embeddings (symmetric contrastive loss).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_TEMPERATURE = 0.07
DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


def _as_f64(x, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Resampler
# ---------------------------------------------------------------------------

@dataclass
class ResamplerParams:
    """Weight-tied cross-attention resampler: the same four projection
    matrices and learned latent slots are reused by every layer."""

    latents: np.ndarray   # (n_latents, dim)
    wq: np.ndarray        # (dim, dim)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    n_layers: int = 2

    def validate(self) -> None:
        lat = np.asarray(self.latents)
        if lat.ndim != 2:
            raise ValidationError(f"latents must be 2-D, got shape {lat.shape}")
        d = lat.shape[1]
        for name in ("wq", "wk", "wv", "wo"):
            w = np.asarray(getattr(self, name))
            if w.shape != (d, d):
                raise ValidationError(f"{name} must have shape ({d}, {d}), got {w.shape}")
        if self.n_layers < 1:
            raise ValidationError(f"n_layers must be >= 1, got {self.n_layers}")
        for name in ("latents", "wq", "wk", "wv", "wo"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite values")

    @classmethod
    def random(cls, n_latents: int, dim: int, n_layers: int = 2, seed: int = 0,
               scale: float = 0.2) -> "ResamplerParams":
        rng = np.random.default_rng(seed)
        def w():
            return rng.normal(0.0, scale, size=(dim, dim))
        params = cls(
            latents=rng.normal(0.0, 1.0, size=(n_latents, dim)),
            wq=w(), wk=w(), wv=w(), wo=w(),
            n_layers=n_layers,
        )
        params.validate()
        return params

    def copy(self) -> "ResamplerParams":
        return ResamplerParams(
            latents=self.latents.copy(), wq=self.wq.copy(), wk=self.wk.copy(),
            wv=self.wv.copy(), wo=self.wo.copy(), n_layers=self.n_layers,
        )

    @property
    def dim(self) -> int:
        return self.latents.shape[1]

    @property
    def n_latents(self) -> int:
        return self.latents.shape[0]


@dataclass
class ResamplerGrads:
    latents: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @classmethod
    def zeros_like(cls, params: ResamplerParams) -> "ResamplerGrads":
        return cls(
            latents=np.zeros_like(params.latents),
            wq=np.zeros_like(params.wq), wk=np.zeros_like(params.wk),
            wv=np.zeros_like(params.wv), wo=np.zeros_like(params.wo),
        )


@dataclass
class _Cache:
    tokens: np.ndarray      # (P, M, d)
    keys: np.ndarray        # (P, M, d)
    values: np.ndarray      # (P, M, d)
    layer_in: list          # latent state entering each layer, (P, N, d)
    queries: list           # (P, N, d)
    attn: list              # post-softmax weights, (P, N, M)
    out: np.ndarray         # (P, N, d)


def run_resampler(params: ResamplerParams, tokens: np.ndarray):
    """Forward pass over a batch: (P, M, d) tokens -> (P, N, d) slot outputs.

    Returns (out, cache); the cache feeds resampler_backward.
    """
    params.validate()
    x = _as_f64(tokens, "tokens", 3)
    p, m, d = x.shape
    if d != params.dim:
        raise ValidationError(f"token dim {d} != resampler dim {params.dim}")
    if m < 1:
        raise ValidationError("need at least one input token")
    inv_sqrt = 1.0 / np.sqrt(d)

    keys = x @ params.wk
    values = x @ params.wv
    state = np.broadcast_to(params.latents, (p, params.n_latents, d)).copy()

    layer_in, queries, attn = [], [], []
    for _ in range(params.n_layers):
        layer_in.append(state)
        q = state @ params.wq
        scores = (q @ keys.transpose(0, 2, 1)) * inv_sqrt
        s = _softmax_rows(scores)
        queries.append(q)
        attn.append(s)
        state = state + (s @ values) @ params.wo

    cache = _Cache(tokens=x, keys=keys, values=values, layer_in=layer_in,
                   queries=queries, attn=attn, out=state)
    return state, cache


def resample(params: ResamplerParams, tokens: np.ndarray) -> np.ndarray:
    """Single-set convenience wrapper: (M, d) tokens -> (N, d) slots."""
    x = _as_f64(tokens, "tokens", 2)
    out, _ = run_resampler(params, x[None])
    return out[0]


def resampler_backward(params: ResamplerParams, cache: _Cache, d_out: np.ndarray):
    """Vector-Jacobian product of run_resampler.

    d_out has the output's shape (P, N, d).  Returns (grads, d_tokens) with
    parameter gradients summed over the batch.
    """
    d_state = _as_f64(d_out, "d_out", 3).copy()
    if d_state.shape != cache.out.shape:
        raise ValidationError(f"d_out shape {d_state.shape} != output shape {cache.out.shape}")
    d = params.dim
    inv_sqrt = 1.0 / np.sqrt(d)
    grads = ResamplerGrads.zeros_like(params)
    d_keys = np.zeros_like(cache.keys)
    d_values = np.zeros_like(cache.values)

    for layer in reversed(range(params.n_layers)):
        state_in = cache.layer_in[layer]
        q = cache.queries[layer]
        s = cache.attn[layer]
        z = s @ cache.values
        # state_out = state_in + z @ wo
        d_z = d_state @ params.wo.T
        grads.wo += np.einsum("pnd,pne->de", z, d_state)
        d_s = d_z @ cache.values.transpose(0, 2, 1)
        d_values += s.transpose(0, 2, 1) @ d_z
        # softmax rows, then the 1/sqrt(d) score scale
        d_scores = s * (d_s - (d_s * s).sum(axis=-1, keepdims=True))
        d_scores *= inv_sqrt
        d_q = d_scores @ cache.keys
        d_keys += d_scores.transpose(0, 2, 1) @ q
        grads.wq += np.einsum("pnd,pne->de", state_in, d_q)
        d_state = d_state + d_q @ params.wq.T

    grads.latents += d_state.sum(axis=0)
    grads.wk += np.einsum("pmd,pme->de", cache.tokens, d_keys)
    grads.wv += np.einsum("pmd,pme->de", cache.tokens, d_values)
    d_tokens = d_keys @ params.wk.T + d_values @ params.wv.T
    return grads, d_tokens


# ---------------------------------------------------------------------------
# Losses.  Each returns (value, (grad_first_input, grad_second_input)).
# ---------------------------------------------------------------------------

def loss_global(vp: np.ndarray, vc: np.ndarray):
    """Euclidean norm of the mean slot-wise difference between two slot sets.

    vp, vc: (N, d).  Zero at exact mean agreement; the gradient there is the
    zero subgradient.
    """
    a = _as_f64(vp, "vp", 2)
    b = _as_f64(vc, "vc", 2)
    if a.shape != b.shape:
        raise ValidationError(f"slot sets must share a shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    mean_diff = (a - b).mean(axis=0)
    value = float(np.linalg.norm(mean_diff))
    if value == 0.0:
        g = np.zeros_like(a)
        return 0.0, (g, -g.copy())
    unit = mean_diff / value
    d_vp = np.tile(unit / n, (n, 1))
    return value, (d_vp, -d_vp.copy())


def loss_local(vp: np.ndarray, vc: np.ndarray):
    """Per-slot InfoNCE within one pair: slot i of vp must match slot i of vc
    against the other slots of vc.  vp, vc: (N, d)."""
    a = _as_f64(vp, "vp", 2)
    b = _as_f64(vc, "vc", 2)
    if a.shape != b.shape:
        raise ValidationError(f"slot sets must share a shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    logits = a @ b.T
    s = _softmax_rows(logits)
    log_s = logits - logits.max(axis=1, keepdims=True)
    log_s = log_s - np.log(np.exp(log_s).sum(axis=1, keepdims=True))
    value = float(-np.trace(log_s) / n)
    d_logits = (s - np.eye(n)) / n
    return value, (d_logits @ b, d_logits.T @ a)


def loss_itc(zp: np.ndarray, zc: np.ndarray, temperature: float = DEFAULT_TEMPERATURE):
    """Symmetric InfoNCE over cosine similarity of pooled embeddings.

    zp, zc: (B, d) with matching rows as positives.  Averages the
    row-direction and column-direction cross-entropies.
    """
    a = _as_f64(zp, "zp", 2)
    b = _as_f64(zc, "zc", 2)
    if a.shape != b.shape:
        raise ValidationError(f"embedding batches must share a shape: {a.shape} vs {b.shape}")
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    batch = a.shape[0]
    norm_a = np.linalg.norm(a, axis=1, keepdims=True)
    norm_b = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(norm_a == 0) or np.any(norm_b == 0):
        raise ValidationError("zero-norm embedding row; cosine similarity undefined")
    p = a / norm_a
    c = b / norm_b
    sim = (p @ c.T) / temperature

    def ce(mat):
        shifted = mat - mat.max(axis=1, keepdims=True)
        log_sm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -np.trace(log_sm) / batch

    value = float((ce(sim) + ce(sim.T)) / 2.0)
    s_row = _softmax_rows(sim)
    s_col = _softmax_rows(sim.T)
    eye = np.eye(batch)
    d_sim = ((s_row - eye) + (s_col - eye).T) / (2.0 * batch * temperature)
    d_p = d_sim @ c
    d_c = d_sim.T @ p
    # back through row normalization: d_x = (d_u - u * <u, d_u>) / ||x||
    d_a = (d_p - p * (p * d_p).sum(axis=1, keepdims=True)) / norm_a
    d_b = (d_c - c * (c * d_c).sum(axis=1, keepdims=True)) / norm_b
    return value, (d_a, d_b)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: tuple[float, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(
    f: Callable,
    inputs: Sequence[np.ndarray],
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
) -> GradCheckReport:
    """Compare analytic gradients of f against central differences.

    f(*inputs) must return (value, grads) with one gradient array per input.
    The error metric per element is |analytic - numeric| scaled by
    max(1, |analytic|, |numeric|), so absolute error rules near zero and
    relative error rules for large entries.
    """
    arrays = [np.asarray(x, dtype=np.float64).copy() for x in inputs]
    _, analytic = f(*arrays)
    if len(analytic) != len(arrays):
        raise ValidationError(f"f returned {len(analytic)} gradients for {len(arrays)} inputs")
    worst_per_input = []
    for which, x in enumerate(arrays):
        a_grad = np.asarray(analytic[which], dtype=np.float64)
        if a_grad.shape != x.shape:
            raise ValidationError(
                f"gradient {which} shape {a_grad.shape} != input shape {x.shape}")
        worst = 0.0
        flat = x.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up, _ = f(*arrays)
            flat[idx] = orig - eps
            down, _ = f(*arrays)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            a_val = float(a_grad.reshape(-1)[idx])
            err = abs(a_val - numeric) / max(1.0, abs(a_val), abs(numeric))
            worst = max(worst, err)
        worst_per_input.append(worst)
    return GradCheckReport(
        max_rel_err=max(worst_per_input) if worst_per_input else 0.0,
        per_input=tuple(worst_per_input),
        tol=tol,
    )
