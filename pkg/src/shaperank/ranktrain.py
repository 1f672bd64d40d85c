"""Ranking loss, two-copy backpropagation, and batch gradient descent.

The objective over ordered pairs (A preferred to B) is

    L(W, b) = 1/2 ||W||^2 + (C_p / n_pairs) * sum max(0, 1 - (y_A - y_B))^2

with the regularizer over weights only.  Each pair is evaluated by two
weight-sharing copies of the network; the delta values carry dy/dz per
copy (output delta 1 - y^2, inner deltas folded back through the weights
with the tanh derivative), and the loss derivative -2*max(0, 1-t) scales
the difference of the two copies' score gradients.

Training accumulates the per-pair gradients over the whole training set
(full batch), adds the regularizer gradient once, and steps with a fixed
learning rate.  The trainer computes the same sum in a factored form:
shapes are deduplicated, each unique shape's score gradient is taken once,
and the per-pair loss coefficients are folded into per-shape seeds.  The
equivalence with the per-pair sum is covered by tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .net import (ArchitectureSpec, ForwardTrace, NetworkParams, conv_patch_indices,
                  forward, forward_batch, init_params)
from .voxel import VoxelGrid, grid_to_input

PairLike = tuple  # (preferred, other); VoxelGrid or flat input arrays

ALPHA_GRID_DEFAULT = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


class TrainDivergence(RuntimeError):
    """Total loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    c_p: float = 100.0
    alpha: float = 1e-4
    iterations: int = 10
    seed: int = 0
    filter_fraction: float = 0.10

    def __post_init__(self):
        if self.c_p < 0:
            raise ValueError("c_p must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.filter_fraction < 1.0:
            raise ValueError("filter_fraction must be in [0, 1)")


@dataclass
class Gradient:
    """dL/dW and dL/db, shape-congruent with NetworkParams."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    @staticmethod
    def zeros_like(params: NetworkParams) -> "Gradient":
        return Gradient([np.zeros_like(w) for w in params.weights],
                        [np.zeros_like(b) for b in params.biases])

    def add_scaled(self, other: "Gradient", scale: float = 1.0) -> None:
        for d, s in zip(self.d_weights, other.d_weights):
            d += scale * s
        for d, s in zip(self.d_biases, other.d_biases):
            d += scale * s


@dataclass
class TrainHistory:
    iterations: list[int] = field(default_factory=list)
    total_loss: list[float] = field(default_factory=list)
    data_loss: list[float] = field(default_factory=list)
    reg_loss: list[float] = field(default_factory=list)
    val_acc_full: list[float | None] = field(default_factory=list)
    val_acc_filtered: list[float | None] = field(default_factory=list)

    def csv_rows(self) -> list[str]:
        rows = ["iteration,total_loss,data_loss,reg_loss,val_acc_full,val_acc_filtered"]
        for i in range(len(self.iterations)):
            vf = "" if self.val_acc_full[i] is None else f"{self.val_acc_full[i]:.6f}"
            vp = "" if self.val_acc_filtered[i] is None else f"{self.val_acc_filtered[i]:.6f}"
            rows.append(f"{self.iterations[i]},{self.total_loss[i]:.17g},"
                        f"{self.data_loss[i]:.17g},{self.reg_loss[i]:.17g},{vf},{vp}")
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.csv_rows()) + "\n")


class ValidationResult(NamedTuple):
    full_acc: float
    filtered_acc: float | None
    n_kept: int


def hinge_sq(t):
    """max(0, 1 - t)^2; works elementwise on arrays."""
    h = np.maximum(0.0, 1.0 - np.asarray(t, dtype=np.float64))
    out = h * h
    return float(out) if out.ndim == 0 else out


def _as_input(x) -> np.ndarray:
    if isinstance(x, VoxelGrid):
        return grid_to_input(x)
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _key_of(x) -> bytes:
    return x.key() if isinstance(x, VoxelGrid) else _as_input(x).tobytes()


class _PairBatch:
    """Deduplicated inputs plus (preferred, other) index arrays."""

    def __init__(self, pairs: Sequence[PairLike], input_size: int):
        if len(pairs) == 0:
            raise ValueError("empty pair set")
        index: dict[bytes, int] = {}
        xs: list[np.ndarray] = []
        ia = np.empty(len(pairs), dtype=np.int64)
        ib = np.empty(len(pairs), dtype=np.int64)
        for p, (a, b) in enumerate(pairs):
            for side, item in ((ia, a), (ib, b)):
                k = _key_of(item)
                i = index.get(k)
                if i is None:
                    v = _as_input(item)
                    if v.shape[0] != input_size:
                        raise ValueError(f"pair input length {v.shape[0]} does not match "
                                         f"architecture input size {input_size}")
                    i = len(xs)
                    index[k] = i
                    xs.append(v)
                side[p] = i
        self.xs = np.stack(xs)
        self.ia = ia
        self.ib = ib

    def scores(self, params: NetworkParams) -> np.ndarray:
        _, ys = forward_batch(params, self.xs)
        return ys


def _loss_terms(params: NetworkParams, batch: _PairBatch,
                c_p: float) -> tuple[float, float, float, np.ndarray]:
    ys = batch.scores(params)
    t = ys[batch.ia] - ys[batch.ib]
    # c_p * (sum / n), not (c_p / n) * sum: keeps the all-zero-network loss
    # exactly equal to c_p
    data = float(c_p * (hinge_sq(t).sum() / len(batch.ia)))
    reg = 0.5 * params.weight_sq_norm()
    return reg + data, data, reg, ys


def total_loss(params: NetworkParams, pairs: Sequence[PairLike],
               c_p: float) -> tuple[float, float, float]:
    """(total, data term, regularizer) of the ranking objective."""
    batch = _PairBatch(pairs, params.arch.input_size)
    total, data, reg, _ = _loss_terms(params, batch, c_p)
    return total, data, reg


def backward_deltas(trace: ForwardTrace, params: NetworkParams) -> list[np.ndarray]:
    """Per-layer delta values dy/dz, from layer 1 to the output layer.

    Shapes mirror the trace activations of each weighted layer; the conv
    layer's deltas are per (channel, position).
    """
    arch = params.arch
    acts = trace.activations
    out = acts[-1]
    deltas: list[np.ndarray] = [1.0 - out * out]  # output layer, Eq. (2) shape (1,)

    if arch.kind == "full":
        for l in range(arch.n_layers - 1, 0, -1):
            w_next = params.weights[l]
            a = acts[l]
            deltas.append((w_next.T @ deltas[-1]) * (1.0 - a * a))
        deltas.reverse()
        return deltas

    n_pc = len(arch.per_channel) - 1
    n_merge = len(arch.merge) - 1
    # merge stages (excluding the output just seeded)
    for j in range(n_merge - 1, 0, -1):
        w_next = params.weights[1 + n_pc + j]
        a = acts[1 + n_pc + j]
        deltas.append((w_next.T @ deltas[-1]) * (1.0 - a * a))
    # crossing into the concatenated per-channel outputs
    w_m1 = params.weights[1 + n_pc]
    a_last = acts[1 + n_pc]  # (C, 1)
    d_concat = (w_m1.T @ deltas[-1])  # (C,)
    deltas.append((d_concat[:, None]) * (1.0 - a_last * a_last))
    # per-channel stages
    for j in range(n_pc - 1, 0, -1):
        w_next = params.weights[1 + j]
        a = acts[1 + j]
        deltas.append(np.einsum("coi,co->ci", w_next, deltas[-1]) * (1.0 - a * a))
    # conv layer
    w_pc1 = params.weights[1]
    a1 = acts[1]  # (C, d^3)
    deltas.append(np.einsum("coi,co->ci", w_pc1, deltas[-1]) * (1.0 - a1 * a1))
    deltas.reverse()
    return deltas


def score_gradient(params: NetworkParams, trace: ForwardTrace) -> Gradient:
    """dy/dW and dy/db for one network copy, assembled from the deltas.

    Shared conv weights accumulate their per-position contributions.
    """
    arch = params.arch
    deltas = backward_deltas(trace, params)
    acts = trace.activations
    d_w: list[np.ndarray] = []
    d_b: list[np.ndarray] = []

    if arch.kind == "full":
        for l in range(arch.n_layers):
            d_w.append(np.outer(deltas[l], acts[l]))
            d_b.append(deltas[l].copy())
        return Gradient(d_w, d_b)

    patches = acts[0][conv_patch_indices(arch.resolution, arch.mask, arch.stride)]
    d1 = deltas[0]  # (C, d^3)
    d_w.append(d1 @ patches)  # (C, m^3), summed over positions
    d_b.append(d1.sum(axis=1))

    n_pc = len(arch.per_channel) - 1
    for j in range(n_pc):
        a_prev = acts[1 + j]  # (C, in)
        d_w.append(np.einsum("co,ci->coi", deltas[1 + j], a_prev))
        d_b.append(deltas[1 + j].copy())

    a_prev = acts[1 + n_pc][:, 0]  # concatenated (C,)
    for j in range(len(arch.merge) - 1):
        d = deltas[1 + n_pc + j]
        d_w.append(np.outer(d, a_prev))
        d_b.append(d.copy())
        a_prev = acts[1 + n_pc + j + 1]
    return Gradient(d_w, d_b)


def pair_gradient(params: NetworkParams, x_a, x_b, c_p: float,
                  n_pairs: int) -> Gradient:
    """Data-term gradient of one pair: (C_p/n) * l'(y_A - y_B) * (grad_A - grad_B).

    The regularizer gradient is added once per batch step by the trainer,
    not here.  Returns zeros when the margin is already met.
    """
    xa = _as_input(x_a)
    xb = _as_input(x_b)
    trace_a = forward(params, xa)
    trace_b = forward(params, xb)
    t = trace_a.y - trace_b.y
    if t >= 1.0:
        return Gradient.zeros_like(params)
    g = (c_p / n_pairs) * (-2.0 * (1.0 - t))  # l'(t) = -2 max(0, 1-t)
    grad = Gradient.zeros_like(params)
    grad.add_scaled(score_gradient(params, trace_a), g)
    grad.add_scaled(score_gradient(params, trace_b), -g)
    return grad


def _batch_weighted_gradient(params: NetworkParams, acts: list[np.ndarray],
                             coeff: np.ndarray) -> Gradient:
    """sum_s coeff[s] * dy_s/dtheta over a batched forward's activations."""
    arch = params.arch
    d_w: list[np.ndarray] = []
    d_b: list[np.ndarray] = []

    if arch.kind == "full":
        a_out = acts[-1]
        delta = coeff[:, None] * (1.0 - a_out * a_out)  # (n, 1)
        for l in range(arch.n_layers - 1, -1, -1):
            d_w.append(delta.T @ acts[l])
            d_b.append(delta.sum(axis=0))
            if l > 0:
                a_prev = acts[l]
                delta = (delta @ params.weights[l]) * (1.0 - a_prev * a_prev)
        d_w.reverse()
        d_b.reverse()
        return Gradient(d_w, d_b)

    n_pc = len(arch.per_channel) - 1
    n_merge = len(arch.merge) - 1
    a_out = acts[-1]
    delta = coeff[:, None] * (1.0 - a_out * a_out)  # (n, 1)

    merge_dw: list[np.ndarray] = []
    merge_db: list[np.ndarray] = []
    for j in range(n_merge - 1, -1, -1):
        a_prev = acts[1 + n_pc + j][:, :, 0] if j == 0 else acts[1 + n_pc + j]
        merge_dw.append(delta.T @ a_prev)
        merge_db.append(delta.sum(axis=0))
        if j > 0:
            delta = (delta @ params.weights[1 + n_pc + j]) * (1.0 - a_prev * a_prev)
        else:
            d_concat = delta @ params.weights[1 + n_pc]  # (n, C)
            a_last = acts[1 + n_pc]  # (n, C, 1)
            delta3 = d_concat[:, :, None] * (1.0 - a_last * a_last)

    pc_dw: list[np.ndarray] = []
    pc_db: list[np.ndarray] = []
    for j in range(n_pc - 1, -1, -1):
        a_prev = acts[1 + j]  # (n, C, in)
        pc_dw.append(np.einsum("nco,nci->coi", delta3, a_prev))
        pc_db.append(delta3.sum(axis=0))
        w = params.weights[1 + j]
        delta3 = np.einsum("coi,nco->nci", w, delta3) * (1.0 - a_prev * a_prev)

    # delta3 is now the conv layer's (n, C, d^3) deltas
    patches = acts[0][:, conv_patch_indices(arch.resolution, arch.mask, arch.stride)]
    conv_dw = np.einsum("ncp,npm->cm", delta3, patches)
    conv_db = delta3.sum(axis=(0, 2))

    d_w = [conv_dw] + pc_dw[::-1] + merge_dw[::-1]
    d_b = [conv_db] + pc_db[::-1] + merge_db[::-1]
    return Gradient(d_w, d_b)


def _full_batch_gradient(params: NetworkParams, batch: _PairBatch,
                         c_p: float) -> tuple[Gradient, float, float, float]:
    n = len(batch.ia)
    acts, ys = forward_batch(params, batch.xs)
    t = ys[batch.ia] - ys[batch.ib]
    h = np.maximum(0.0, 1.0 - t)
    data = float(c_p * ((h * h).sum() / n))
    reg = 0.5 * params.weight_sq_norm()

    gp = -2.0 * h * (c_p / n)  # d(data)/d(y_A) per pair; opposite sign for y_B
    coeff = np.zeros(batch.xs.shape[0])
    np.add.at(coeff, batch.ia, gp)
    np.add.at(coeff, batch.ib, -gp)

    grad = _batch_weighted_gradient(params, acts, coeff)
    for k, w in enumerate(params.weights):
        grad.d_weights[k] += w  # d(1/2 ||W||^2)/dW, once per batch step
    return grad, reg + data, data, reg


def train(params: NetworkParams, train_pairs: Sequence[PairLike], config: TrainConfig,
          val_pairs: Sequence[PairLike] | None = None) -> tuple[NetworkParams, TrainHistory]:
    """Full-batch gradient descent for config.iterations passes.

    Returns updated parameters (the input object is not mutated) and the
    per-iteration history: losses are evaluated at the parameters entering
    the iteration, validation accuracy at the parameters after its update.
    """
    params = params.copy()
    batch = _PairBatch(train_pairs, params.arch.input_size)
    vbatch = (_PairBatch(val_pairs, params.arch.input_size)
              if val_pairs else None)
    history = TrainHistory()

    for it in range(1, config.iterations + 1):
        grad, total, data, reg = _full_batch_gradient(params, batch, config.c_p)
        if not math.isfinite(total):
            raise TrainDivergence(f"total loss became non-finite at iteration {it}")
        for w, dw in zip(params.weights, grad.d_weights):
            w -= config.alpha * dw
        for b, db in zip(params.biases, grad.d_biases):
            b -= config.alpha * db

        vf = vp = None
        if vbatch is not None:
            res = _validation_from_batch(params, vbatch, config.filter_fraction)
            vf, vp = res.full_acc, res.filtered_acc
        history.iterations.append(it)
        history.total_loss.append(total)
        history.data_loss.append(data)
        history.reg_loss.append(reg)
        history.val_acc_full.append(vf)
        history.val_acc_filtered.append(vp)

    return params, history


def _validation_from_batch(params: NetworkParams, batch: _PairBatch,
                           filter_fraction: float) -> ValidationResult:
    ys = batch.scores(params)
    ya = ys[batch.ia]
    yb = ys[batch.ib]
    correct = ya > yb  # a tie counts as incorrect
    full = float(correct.mean())

    score_range = float(ys.max() - ys.min())
    if filter_fraction > 0.0 and score_range == 0.0:
        # all scores identical: every pair is a near-tie, nothing survives
        return ValidationResult(full, None, 0)
    keep = np.abs(ya - yb) >= filter_fraction * score_range
    n_kept = int(keep.sum())
    filtered = float(correct[keep].mean()) if n_kept else None
    return ValidationResult(full, filtered, n_kept)


def validation_accuracy(params: NetworkParams, pairs: Sequence[PairLike],
                        filter_fraction: float) -> ValidationResult:
    """Pairwise accuracy, plus the accuracy after dropping near-tie pairs.

    A pair counts as correct iff the preferred shape's score is strictly
    greater.  The filter drops pairs whose score gap is below
    filter_fraction times the range of scores over the validation shapes.
    """
    if not 0.0 <= filter_fraction < 1.0:
        raise ValueError("filter_fraction must be in [0, 1)")
    batch = _PairBatch(pairs, params.arch.input_size)
    return _validation_from_batch(params, batch, filter_fraction)


def gradient_check(arch: ArchitectureSpec, seed: int = 0, n_pairs: int = 4,
                   epsilon: float = 1e-5, c_p: float = 100.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Random parameters and random binary inputs; the analytic side sums
    pair_gradient over the pairs plus the regularizer, the numeric side
    differentiates total_loss.  Relative error uses |ga| + |gn| with a 1e-8
    floor.
    """
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed)
    size = arch.input_size
    pairs = [(rng.integers(0, 2, size).astype(np.float64),
              rng.integers(0, 2, size).astype(np.float64))
             for _ in range(n_pairs)]
    batch = _PairBatch(pairs, size)

    analytic = Gradient.zeros_like(params)
    for a, b in pairs:
        analytic.add_scaled(pair_gradient(params, a, b, c_p, n_pairs))
    for k, w in enumerate(params.weights):
        analytic.d_weights[k] += w

    worst = 0.0
    tensors = params.weights + params.biases
    grads = analytic.d_weights + analytic.d_biases
    for tensor, grad in zip(tensors, grads):
        flat_t = tensor.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_t.shape[0]):
            orig = flat_t[i]
            flat_t[i] = orig + epsilon
            lp, _, _, _ = _loss_terms(params, batch, c_p)
            flat_t[i] = orig - epsilon
            lm, _, _, _ = _loss_terms(params, batch, c_p)
            flat_t[i] = orig
            numeric = (lp - lm) / (2.0 * epsilon)
            err = abs(flat_g[i] - numeric) / max(1e-8, abs(flat_g[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


def select_learning_rate(arch: ArchitectureSpec, train_pairs: Sequence[PairLike],
                         val_pairs: Sequence[PairLike],
                         alphas: Sequence[float] = ALPHA_GRID_DEFAULT,
                         config: TrainConfig = TrainConfig()) -> float:
    """Train one model per candidate alpha (same seed) and pick the one with
    the best full validation accuracy; ties go to the smaller alpha.
    Divergent candidates are skipped."""
    if len(alphas) == 0:
        raise ValueError("empty alpha grid")
    best_alpha = None
    best_acc = -1.0
    for alpha in alphas:
        cfg = replace(config, alpha=alpha)
        params0 = init_params(arch, config.seed)
        try:
            trained, _ = train(params0, train_pairs, cfg)
        except TrainDivergence:
            continue
        acc = validation_accuracy(trained, val_pairs, 0.0).full_acc
        if acc > best_acc or (acc == best_acc and best_alpha is not None
                              and alpha < best_alpha):
            best_acc = acc
            best_alpha = alpha
    if best_alpha is None:
        raise TrainDivergence("every learning-rate candidate diverged")
    return best_alpha
