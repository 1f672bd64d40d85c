"""Aesthetics-based visualization: exact t-SNE embeddings and score-scaled
icon atlases rendered to SVG.

The t-SNE here is the exact O(n^2) variant of the reference
implementation: per-point Gaussian bandwidths found by bisection against
the target perplexity, symmetrized affinities, Student-t low-dimensional
kernel, gradient descent with early exaggeration, momentum and adaptive
per-component gains.  Datasets in this problem are at most a thousand
shapes, so the quadratic cost is fine and the result is deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .net import NetworkParams, forward
from .voxel import VoxelGrid, grid_to_input

MACHINE_EPS = np.finfo(np.float64).eps


@dataclass
class Embedding2D:
    coords: np.ndarray  # (n, 2)
    kl_divergence: float
    iterations: int
    shape_ids: list[str]
    kl_history: np.ndarray  # per-iteration KL against the true affinities

    def csv_rows(self) -> list[str]:
        rows = ["shape_id,x,y"]
        for sid, (x, y) in zip(self.shape_ids, self.coords):
            rows.append(f"{sid},{x:.17g},{y:.17g}")
        return rows


@dataclass
class AtlasLayout:
    entries: list[tuple[str, float, float, float, float]]  # id, x, y, icon, score
    width: float
    height: float


def inner_activations(params: NetworkParams, grid: VoxelGrid, layer_index: int) -> np.ndarray:
    """Post-tanh activation vector of an inner layer (flattened for conv)."""
    n_l = params.arch.n_layers
    if not 1 <= layer_index < n_l:
        raise ValueError(f"layer_index must be in [1, {n_l - 1}]; "
                         f"layer {n_l} is the output, use score()")
    if grid.resolution != params.arch.resolution:
        raise ValueError(f"grid resolution {grid.resolution} does not match "
                         f"architecture resolution {params.arch.resolution}")
    trace = forward(params, grid_to_input(grid))
    return trace.activations[layer_index].ravel().copy()


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _pairwise_sq_dists_stable(x: np.ndarray) -> np.ndarray:
    """Row-by-row differences: slower than the dot trick but immune to the
    cancellation that breaks translation invariance for off-origin data."""
    n = x.shape[0]
    d2 = np.empty((n, n))
    for i in range(n):
        diff = x - x[i]
        d2[i] = (diff * diff).sum(axis=1)
    np.fill_diagonal(d2, 0.0)
    return d2


def _conditional_probs(d2: np.ndarray, perplexity: float) -> np.ndarray:
    """Per-row Gaussian affinities with bandwidth bisected to the target
    perplexity (entropy matched in nats, 50 steps, tolerance 1e-5)."""
    n = d2.shape[0]
    target = math.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        di = np.delete(d2[i], i)
        for _ in range(50):
            row = np.exp(-di * beta)
            s = row.sum()
            if s <= 0.0:
                h, row_n = 0.0, row
            else:
                row_n = row / s
                h = math.log(s) + beta * float((di * row_n).sum())
            diff = h - target
            if abs(diff) < 1e-5:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        p[i, np.arange(n) != i] = row_n if s > 0.0 else 1.0 / (n - 1)
    return p


def tsne(points: Sequence[np.ndarray] | np.ndarray, perplexity: float = 30.0,
         iterations: int = 1000, seed: int = 0, learning_rate: float = 200.0,
         shape_ids: Sequence[str] | None = None) -> Embedding2D:
    """Exact t-SNE to 2D.  Early exaggeration (factor 12) runs for the first
    quarter of the iterations with momentum 0.5, then momentum 0.8."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a 2D array (n, dim)")
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points")
    if perplexity <= 0 or perplexity >= (n - 1) / 3.0:
        raise ValueError(f"perplexity must be in (0, {(n - 1) / 3.0:g}) for {n} points")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    ids = list(shape_ids) if shape_ids is not None else [str(i) for i in range(n)]
    if len(ids) != n:
        raise ValueError("shape_ids length does not match points")

    cond = _conditional_probs(_pairwise_sq_dists_stable(x), perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    exag_end = max(1, iterations // 4)
    kl_history = np.empty(iterations)

    for it in range(iterations):
        exaggerating = it < exag_end
        p_eff = p * 12.0 if exaggerating else p
        momentum = 0.5 if exaggerating else 0.8

        d2 = _pairwise_sq_dists(y)
        num = 1.0 / (1.0 + d2)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)

        pq = (p_eff - q) * num
        grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ y

        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)

        kl_history[it] = float((p * np.log(p / q)).sum())

    return Embedding2D(coords=y, kl_divergence=float(kl_history[-1]),
                       iterations=iterations, shape_ids=ids, kl_history=kl_history)


def atlas(embedding: Embedding2D, scores: Sequence[float], s_min: float, s_max: float,
          canvas: tuple[float, float] = (800.0, 800.0)) -> AtlasLayout:
    """Place shape icons: t-SNE coordinates mapped into the canvas, icon size
    affine in the score (all sizes (s_min+s_max)/2 when scores are flat)."""
    coords = embedding.coords
    if coords.shape[0] == 0:
        raise ValueError("empty embedding")
    if len(scores) != coords.shape[0]:
        raise ValueError("scores length does not match embedding")
    if not 0.0 < s_min < s_max:
        raise ValueError("need 0 < s_min < s_max")
    width, height = canvas
    margin = s_max  # icon centers stay at least one max icon inside the edge
    if 2.0 * margin >= min(width, height):
        raise ValueError("canvas too small for the requested icon sizes")

    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    spread = hi - lo
    inner = np.array([width, height]) - 2.0 * margin
    entries = []
    s_arr = np.asarray(scores, dtype=np.float64)
    s_lo, s_hi = float(s_arr.min()), float(s_arr.max())
    for sid, (cx, cy), sc in zip(embedding.shape_ids, coords, s_arr):
        fx = 0.5 if spread[0] == 0 else (cx - lo[0]) / spread[0]
        fy = 0.5 if spread[1] == 0 else (cy - lo[1]) / spread[1]
        if s_hi == s_lo:
            size = (s_min + s_max) / 2.0
        else:
            size = s_min + (float(sc) - s_lo) / (s_hi - s_lo) * (s_max - s_min)
        entries.append((sid, margin + fx * inner[0], margin + fy * inner[1],
                        size, float(sc)))
    return AtlasLayout(entries=entries, width=width, height=height)


def silhouette_renderer(grids: Mapping[str, VoxelGrid],
                        fill: str = "#333333") -> Callable[[str, float], str]:
    """Default icon renderer: front-view orthographic voxel silhouette.

    Occupancy is projected along the y axis; horizontal runs are merged
    into single rects to keep the SVG small.
    """
    def render(shape_id: str, size: float) -> str:
        grid = grids[shape_id]
        r = grid.resolution
        sil = grid.occupancy.astype(bool).any(axis=1)  # (ix, iz)
        cell = size / r
        half = size / 2.0
        rects = []
        for iz in range(r):
            ix = 0
            row_y = half - (iz + 1) * cell  # z up in shape space, y down in SVG
            while ix < r:
                if sil[ix, iz]:
                    run = ix
                    while run < r and sil[run, iz]:
                        run += 1
                    rects.append(f'<rect x="{ix * cell - half:.2f}" y="{row_y:.2f}" '
                                 f'width="{(run - ix) * cell:.2f}" height="{cell:.2f}"/>')
                    ix = run
                else:
                    ix += 1
        return f'<g fill="{fill}">' + "".join(rects) + "</g>"

    return render


def emit_svg(layout: AtlasLayout, icon_renderer: Callable[[str, float], str] | None = None) -> str:
    """Deterministic SVG 1.1 document: one translated group per shape, in
    shape_id order.  Without a renderer each icon is a plain circle."""
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{layout.width:.0f}" height="{layout.height:.0f}" '
        f'viewBox="0 0 {layout.width:.0f} {layout.height:.0f}">',
        f'<rect width="{layout.width:.0f}" height="{layout.height:.0f}" fill="white"/>',
    ]
    for sid, x, y, size, score in sorted(layout.entries, key=lambda e: e[0]):
        if icon_renderer is None:
            icon = f'<circle r="{size / 2.0:.2f}" fill="#333333"/>'
        else:
            icon = icon_renderer(sid, size)
        parts.append(f'<g transform="translate({x:.2f} {y:.2f})" '
                     f'data-shape="{sid}" data-score="{score:.6g}">{icon}</g>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
