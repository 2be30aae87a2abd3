"""Layout-guidance energy, its gradient, and a toy descent sandbox.

For each object the energy rewards attention mass inside the designated box
and penalizes mass outside it::

    L_obj = -beta * topk_mean(A * M) + topk_mean(A * (1 - M))
    L     = sum over objects of L_obj

where ``A`` is an R x R attention map, ``M`` the binary box mask at the same
resolution, ``beta`` the per-object guidance scale, and ``topk_mean`` the
average of the k largest entries.  Latents are nudged down the energy
gradient over a window of timesteps::

    z' = z - alpha * grad_z L

Numerical contract: ``topk_mean`` breaks ties by ascending flat index and
sums the selected values in ascending-flat-index order with sequential
float64 additions, so results are bit-for-bit reproducible and match a
plain sort-based reimplementation exactly.

No real denoiser is involved: :class:`ToyAttentionModel` maps a small latent
vector to per-object attention maps through a softmax of affine scores, which
keeps ``grad_z L`` analytic and lets descent behaviour be tested end to end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layout import BoundingBox, Canvas, StructuredDesign, interpolate_layout

__all__ = [
    "BETA_INIT",
    "BETA_STEP",
    "GuidanceError",
    "GuidanceProblem",
    "GuidanceSchedule",
    "GuidanceTrajectory",
    "KExceedsSize",
    "NonFinite",
    "ObjectGuidance",
    "ToyAttentionModel",
    "ZeroResolution",
    "build_mask",
    "bump_scale",
    "energy_grad_attention",
    "latent_step",
    "masks_for_frame",
    "object_energy",
    "run_guidance_window",
    "topk_mean",
    "topk_select",
    "total_energy",
    "trajectory_csv",
]

BETA_INIT = 1.0
BETA_STEP = 0.05


class GuidanceError(ValueError):
    """Base class for guidance-math failures."""


class ZeroResolution(GuidanceError):
    """Mask resolution must be a positive integer."""


class KExceedsSize(GuidanceError):
    """Top-k count exceeds the available cells; signals an empty region."""


class NonFinite(GuidanceError):
    """An energy or gradient evaluation produced inf or NaN."""


def bump_scale(beta: float, steps: int = 1, step: float = BETA_STEP) -> float:
    """Raise a guidance scale by ``steps`` emphasis increments.

    Rounded to 9 decimals so the canonical ladder 1.0, 1.05, 1.10, ... stays
    exact in float64 regardless of how many increments accumulate.
    """
    return round(beta + steps * step, 9)


# --- masks -------------------------------------------------------------------

def build_mask(box: BoundingBox, canvas: Canvas, resolution: int) -> np.ndarray:
    """Rasterize a box to an R x R binary mask by cell-center inclusion.

    Cell (i, j) covers a canvas patch; its center lies inside the half-open
    box ``[x, x+w) x [y, y+h)`` or it does not. No fractional coverage.
    """
    if resolution <= 0:
        raise ZeroResolution(f"mask resolution must be positive, got {resolution}")
    if not box.within(canvas):
        raise GuidanceError(f"box {box.as_list()} exceeds canvas {canvas.width}x{canvas.height}")
    r = resolution
    cx = (np.arange(r, dtype=np.float64) + 0.5) * (canvas.width / r)
    cy = (np.arange(r, dtype=np.float64) + 0.5) * (canvas.height / r)
    in_x = (cx >= box.x) & (cx < box.x + box.w)
    in_y = (cy >= box.y) & (cy < box.y + box.h)
    return (in_y[:, None] & in_x[None, :]).astype(np.float64)


def masks_for_frame(design: StructuredDesign, frame: int, resolution: int) -> dict[int, np.ndarray]:
    """Per-object masks at one frame, boxes taken from layout interpolation."""
    return {
        obj.id: build_mask(obj.box, design.canvas, resolution)
        for obj in interpolate_layout(design, frame)
    }


# --- top-k and energy ---------------------------------------------------------

def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains non-finite entries")


def topk_select(values: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the k largest entries, ties broken by ascending index.

    Returned in ascending flat-index order, the order downstream sums must
    visit them in.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if k < 1:
        raise GuidanceError(f"top-k count must be >= 1, got {k}")
    if k > flat.size:
        raise KExceedsSize(f"k={k} exceeds grid size {flat.size}")
    _require_finite("top-k input", flat)
    order = np.argsort(-flat, kind="stable")
    return np.sort(order[:k])


def topk_mean(values: np.ndarray, k: int) -> float:
    """Mean of the k largest entries under the deterministic tie-break.

    Selected values are accumulated one by one in ascending flat-index order
    (plain float64 additions, no pairwise tricks) so the result is
    bit-identical to a naive sort-based evaluation.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    selected = topk_select(flat, k)
    total = 0.0
    for idx in selected:
        total += float(flat[idx])
    return total / k


def _region_sizes(mask: np.ndarray) -> tuple[int, int]:
    inside = int(np.count_nonzero(mask))
    return inside, mask.size - inside


def default_k(mask: np.ndarray) -> int:
    """Default top-k count: half the in-box cells, at least one."""
    inside, _ = _region_sizes(np.asarray(mask))
    return max(1, math.ceil(0.5 * inside))


def _resolve_ks(mask: np.ndarray, k: int | None) -> tuple[int, int]:
    """Effective (k_in, k_out) after the clamping policy.

    Either k clamps down to its region's cell count. An empty in-box region
    cannot be clamped and raises; an empty out-box region yields ``k_out=0``,
    meaning the outside term is dropped.
    """
    inside, outside = _region_sizes(mask)
    if k is None:
        k = default_k(mask)
    if k < 1:
        raise GuidanceError(f"top-k count must be >= 1, got {k}")
    if inside == 0:
        raise KExceedsSize("mask has no in-box cells at this resolution")
    return min(k, inside), min(k, outside)


def _check_pair(attention: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(attention, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if a.shape != m.shape:
        raise GuidanceError(f"attention shape {a.shape} != mask shape {m.shape}")
    if not np.isin(m, (0.0, 1.0)).all():
        raise GuidanceError("mask entries must be 0 or 1")
    _require_finite("attention", a)
    if np.any(a < 0):
        raise GuidanceError("attention entries must be non-negative")
    return a, m


def object_energy(
    attention: np.ndarray, mask: np.ndarray, beta: float, k: int | None = None
) -> float:
    """Single-object energy ``-beta * topk_mean(A*M) + topk_mean(A*(1-M))``.

    ``k`` defaults to half the in-box cell count and clamps to each region's
    size; with a full-canvas box the outside term vanishes.
    """
    a, m = _check_pair(attention, mask)
    if beta < 0:
        raise GuidanceError(f"beta must be >= 0, got {beta}")
    k_in, k_out = _resolve_ks(m, k)
    t_in = topk_mean(a * m, k_in)
    if k_out == 0:
        return -beta * t_in
    t_out = topk_mean(a * (1.0 - m), k_out)
    return -beta * t_in + t_out


def energy_grad_attention(
    attention: np.ndarray, mask: np.ndarray, beta: float, k: int | None = None
) -> np.ndarray:
    """Gradient of :func:`object_energy` with respect to the attention map.

    Piecewise linear in A: cells selected by the inside top-k receive
    ``-beta * M / k_in``, cells selected by the outside top-k receive
    ``(1 - M) / k_out``, everything else is zero. Selection uses the same
    tie-break as :func:`topk_mean`, so away from selection-boundary ties this
    matches finite differences.
    """
    a, m = _check_pair(attention, mask)
    k_in, k_out = _resolve_ks(m, k)
    grad = np.zeros_like(a)
    flat_m = m.ravel()
    g = grad.ravel()
    sel_in = topk_select(a * m, k_in)
    g[sel_in] += -beta * flat_m[sel_in] / k_in
    if k_out > 0:
        sel_out = topk_select(a * (1.0 - m), k_out)
        g[sel_out] += (1.0 - flat_m[sel_out]) / k_out
    return grad


@dataclass(frozen=True)
class ObjectGuidance:
    """One object's slice of a guidance problem."""

    attention: np.ndarray
    mask: np.ndarray
    beta: float = BETA_INIT

    def energy(self, k: int | None = None) -> float:
        return object_energy(self.attention, self.mask, self.beta, k)


@dataclass(frozen=True)
class GuidanceProblem:
    """All objects of one timestep plus the shared top-k count."""

    objects: tuple[ObjectGuidance, ...]
    k: int | None = None


def total_energy(problem: GuidanceProblem) -> float:
    """Sum of per-object energies."""
    total = 0.0
    for obj in problem.objects:
        total += object_energy(obj.attention, obj.mask, obj.beta, problem.k)
    return total


# --- toy model and descent ----------------------------------------------------

@dataclass(frozen=True)
class ToyAttentionModel:
    """Differentiable stand-in for a denoiser's cross-attention.

    Object ``o`` gets scores ``W[o] @ z + b[o]`` over the R*R grid cells and
    an attention map ``softmax(scores)`` reshaped to R x R, so each map is
    positive and sums to one. The softmax Jacobian makes ``grad_z L``
    analytic: for per-map upstream gradient ``g``,
    ``grad_z = W.T @ (A * g - (g . A) * A)`` summed over objects.
    """

    weights: np.ndarray  # (n_objects, R*R, latent_dim)
    biases: np.ndarray  # (n_objects, R*R)
    resolution: int

    def __post_init__(self) -> None:
        n, cells, _ = self.weights.shape
        if self.biases.shape != (n, cells) or cells != self.resolution**2:
            raise GuidanceError("toy model weight/bias shapes are inconsistent")

    @property
    def n_objects(self) -> int:
        return self.weights.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def seeded(
        cls, n_objects: int, resolution: int, latent_dim: int = 8, seed: int = 0
    ) -> "ToyAttentionModel":
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(latent_dim)
        weights = rng.normal(0.0, scale, size=(n_objects, resolution**2, latent_dim))
        biases = rng.normal(0.0, 0.1, size=(n_objects, resolution**2))
        return cls(weights=weights, biases=biases, resolution=resolution)

    def attention_maps(self, z: np.ndarray) -> np.ndarray:
        """Per-object maps, shape (n_objects, R, R)."""
        scores = self.weights @ np.asarray(z, dtype=np.float64) + self.biases
        scores -= scores.max(axis=1, keepdims=True)
        exp = np.exp(scores)
        maps = exp / exp.sum(axis=1, keepdims=True)
        return maps.reshape(self.n_objects, self.resolution, self.resolution)

    def energy_and_grad(
        self,
        z: np.ndarray,
        masks: Sequence[np.ndarray],
        betas: Sequence[float],
        k: int | None = None,
    ) -> tuple[float, np.ndarray]:
        """Total energy at ``z`` and its analytic latent gradient."""
        if len(masks) != self.n_objects or len(betas) != self.n_objects:
            raise GuidanceError("need one mask and one beta per object")
        maps = self.attention_maps(z)
        energy = 0.0
        grad_z = np.zeros(self.latent_dim, dtype=np.float64)
        for o in range(self.n_objects):
            a = maps[o]
            energy += object_energy(a, masks[o], betas[o], k)
            g = energy_grad_attention(a, masks[o], betas[o], k).ravel()
            a_flat = a.ravel()
            # softmax backward: ds = A*g - (g.A)*A, then pull through W
            ds = a_flat * g - float(g @ a_flat) * a_flat
            grad_z += self.weights[o].T @ ds
        if not (math.isfinite(energy) and np.all(np.isfinite(grad_z))):
            raise NonFinite("toy-model energy or gradient is non-finite")
        return energy, grad_z


@dataclass(frozen=True)
class GuidanceSchedule:
    """Step size and timestep window for guided descent.

    Timesteps run ``t_start, t_start-1, ..., t_end`` (denoising order), so
    the minimal window ``t_end == t_start`` applies exactly one step.
    """

    alpha: float = 1e-2
    t_start: int = 50
    t_end: int = 26
    beta_init: float = BETA_INIT
    beta_step: float = BETA_STEP

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise GuidanceError(f"alpha must be > 0, got {self.alpha}")
        if self.beta_step <= 0:
            raise GuidanceError(f"beta_step must be > 0, got {self.beta_step}")
        if self.t_end > self.t_start:
            raise GuidanceError(f"empty window: t_end {self.t_end} > t_start {self.t_start}")

    @property
    def timesteps(self) -> range:
        return range(self.t_start, self.t_end - 1, -1)

    @classmethod
    def first_half(cls, total_timesteps: int, alpha: float = 1e-2) -> "GuidanceSchedule":
        """Window covering the first (earliest, noisiest) half of denoising."""
        if total_timesteps < 1:
            raise GuidanceError("need at least one timestep")
        return cls(alpha=alpha, t_start=total_timesteps, t_end=total_timesteps // 2 + 1)


@dataclass(frozen=True)
class GuidanceTrajectory:
    """Latents and energies recorded over one guidance window."""

    latents: tuple[np.ndarray, ...]
    energies: tuple[float, ...]
    timesteps: tuple[int, ...]

    @property
    def final_latent(self) -> np.ndarray:
        return self.latents[-1]


def latent_step(
    z: np.ndarray,
    model: ToyAttentionModel,
    masks: Sequence[np.ndarray],
    betas: Sequence[float],
    alpha: float,
    k: int | None = None,
) -> np.ndarray:
    """One gradient step ``z - alpha * grad_z L``. ``alpha=0`` is a no-op."""
    if alpha < 0:
        raise GuidanceError(f"alpha must be >= 0, got {alpha}")
    _, grad = model.energy_and_grad(z, masks, betas, k)
    z_next = np.asarray(z, dtype=np.float64) - alpha * grad
    if not np.all(np.isfinite(z_next)):
        raise NonFinite("latent update produced non-finite entries")
    return z_next


def run_guidance_window(
    z_start: np.ndarray,
    model: ToyAttentionModel,
    masks_per_step: Sequence[Sequence[np.ndarray]] | Sequence[np.ndarray],
    betas: Sequence[float],
    schedule: GuidanceSchedule,
    k: int | None = None,
) -> GuidanceTrajectory:
    """Apply :func:`latent_step` across the schedule's window.

    ``masks_per_step`` is either one mask set reused at every timestep or a
    sequence with one mask set per timestep (e.g. built from per-frame layout
    interpolation). Energy is recorded at every visited latent, including the
    final one, so ``energies`` has one more entry than the window has steps.
    """
    steps = list(schedule.timesteps)
    mask_sets: list[Sequence[np.ndarray]]
    if masks_per_step and isinstance(masks_per_step[0], np.ndarray):
        mask_sets = [masks_per_step] * len(steps)  # type: ignore[list-item]
    else:
        mask_sets = list(masks_per_step)  # type: ignore[arg-type]
        if len(mask_sets) != len(steps):
            raise GuidanceError(
                f"need one mask set per timestep: got {len(mask_sets)} for {len(steps)} steps"
            )

    z = np.asarray(z_start, dtype=np.float64)
    latents = [z]
    energies: list[float] = []
    for masks in mask_sets:
        energy, grad = model.energy_and_grad(z, masks, betas, k)
        energies.append(energy)
        z = z - schedule.alpha * grad
        if not np.all(np.isfinite(z)):
            raise NonFinite("latent update produced non-finite entries")
        latents.append(z)
    final_energy, _ = model.energy_and_grad(z, mask_sets[-1], betas, k)
    energies.append(final_energy)
    return GuidanceTrajectory(
        latents=tuple(latents),
        energies=tuple(energies),
        timesteps=tuple(steps),
    )


def trajectory_csv(trajectory: GuidanceTrajectory) -> str:
    """Render a trajectory as ``step,timestep,energy`` CSV for plotting."""
    lines = ["step,timestep,energy"]
    for i, energy in enumerate(trajectory.energies):
        t = trajectory.timesteps[i] if i < len(trajectory.timesteps) else trajectory.timesteps[-1] - 1
        lines.append(f"{i},{t},{energy!r}")
    return "\n".join(lines) + "\n"
