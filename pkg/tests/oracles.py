"""Independent reference implementations the test suite checks against.

Deliberately naive: pure-Python lists, full sorts, scalar loops, central
finite differences. No code is shared with the package under test beyond
builtins, so agreement is evidence, not tautology.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def sort_topk_mean(values: Sequence[float], k: int) -> float:
    """Mean of the k largest values; ties broken by ascending position.

    Sums in ascending-position order with plain float additions, the order
    the package contract pins down, so comparisons can demand bit equality.
    """
    ranked = sorted(range(len(values)), key=lambda i: (-values[i], i))[:k]
    total = 0.0
    for i in sorted(ranked):
        total += values[i]
    return total / k


def sort_object_energy(
    attention: Sequence[float],
    mask: Sequence[float],
    beta: float,
    k_in: int,
    k_out: int,
) -> float:
    """Reference energy over flat lists. ``k_out=0`` drops the outside term."""
    prod_in = [a * m for a, m in zip(attention, mask)]
    t_in = sort_topk_mean(prod_in, k_in)
    if k_out == 0:
        return -beta * t_in
    prod_out = [a * (1.0 - m) for a, m in zip(attention, mask)]
    t_out = sort_topk_mean(prod_out, k_out)
    return -beta * t_in + t_out


def central_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.ravel()
    for i in range(x.size):
        up = x.copy()
        down = x.copy()
        up.flat[i] += h
        down.flat[i] -= h
        flat[i] = (f(up) - f(down)) / (2.0 * h)
    return grad


def enumerate_mask(box_xywh: Sequence[int], canvas_wh: Sequence[int], resolution: int):
    """Brute-force cell-center rasterization: loop every cell, test its center."""
    x, y, w, h = box_xywh
    cw, ch = canvas_wh
    rows = []
    for i in range(resolution):
        row = []
        for j in range(resolution):
            cx = (j + 0.5) * cw / resolution
            cy = (i + 0.5) * ch / resolution
            row.append(1.0 if (x <= cx < x + w and y <= cy < y + h) else 0.0)
        rows.append(row)
    return rows


def tie_free_attention(rng: np.random.Generator, resolution: int) -> np.ndarray:
    """Attention grid of distinct values with gaps far above the FD step.

    A random permutation of 1/n, 2/n, ..., 1 gives pairwise gaps of exactly
    1/n, so an h=1e-5 perturbation can never reorder a top-k selection.
    """
    n = resolution * resolution
    values = rng.permutation(np.arange(1, n + 1, dtype=np.float64)) / n
    return values.reshape(resolution, resolution)


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """Worst-case elementwise relative error with an absolute floor."""
    scale = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), 1e-8)
    return float(np.max(np.abs(approx - exact) / scale))
