"""Monotone 1D optimal-transport alignment between frames and labels.

Frame weights alpha come from a softmax over per-frame scores, label
weights beta default to uniform, and the coupling gamma is the
north-west-corner construction on prefix sums:

    gamma[i, j] = max(0, min(A_i, B_j) - max(A_{i-1}, B_{j-1}))

which attains the optimal monotone transport for any cost that is
convex in the index difference. The alignment loss is the expected
cross-entropy cost under gamma, differentiable through both the
posterior grid and (unless detached) the coupling itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from ._kernels import nw_coupling
from .autodiff import Tensor

__all__ = [
    "FrameWeights",
    "LabelWeights",
    "TransportPlan",
    "PosteriorGrid",
    "frame_weights",
    "uniform_label_weights",
    "posterior_grid",
    "solve_coupling",
    "coupling_tensor",
    "ottc_loss",
    "sotd",
]

_MARGINAL_TOL = 1e-8


@dataclass
class FrameWeights:
    """Per-frame probability mass; alpha is a length-n simplex vector."""

    alpha: Tensor

    def __post_init__(self):
        if self.alpha.ndim != 1 or self.alpha.size == 0:
            raise ValueError(f"alpha must be a nonempty vector, got shape {self.alpha.shape}")

    @property
    def n(self) -> int:
        return self.alpha.shape[0]


@dataclass
class LabelWeights:
    """Per-label probability mass; beta is a length-m simplex vector."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 1 or self.beta.size == 0:
            raise ValueError(f"beta must be a nonempty vector, got shape {self.beta.shape}")

    @property
    def m(self) -> int:
        return self.beta.shape[0]


@dataclass
class TransportPlan:
    """Coupling gamma with its positive-mass cells.

    Support cells form a monotone staircase: sorted by frame index, the
    label indices never decrease, and there are at most n + m - 1 cells.
    """

    gamma: np.ndarray
    support: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def from_gamma(cls, gamma: np.ndarray) -> "TransportPlan":
        ii, jj = np.nonzero(gamma > 0.0)
        return cls(gamma=gamma, support=list(zip(ii.tolist(), jj.tolist())))


@dataclass
class PosteriorGrid:
    """Per-frame categorical distributions over the vocabulary."""

    probs: Tensor
    log_probs: Tensor

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[1]


def frame_weights(frame_scores) -> FrameWeights:
    """Softmax over the time axis; differentiable when scores are a Tensor."""
    t = frame_scores if isinstance(frame_scores, Tensor) else Tensor(frame_scores)
    if t.ndim != 1 or t.size == 0:
        raise ValueError(f"frame scores must be a nonempty vector, got shape {t.shape}")
    if not np.all(np.isfinite(t.data)):
        raise ValueError("frame scores must be finite")
    return FrameWeights(alpha=ad.softmax(t, axis=0))


def uniform_label_weights(m: int) -> LabelWeights:
    if m < 1:
        raise ValueError("label weights need at least one token")
    return LabelWeights(beta=np.full(m, 1.0 / m))


def posterior_grid(logits: Tensor) -> PosteriorGrid:
    """Row-stochastic posteriors from per-frame logits."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be (frames, vocab), got shape {logits.shape}")
    return PosteriorGrid(
        probs=ad.softmax(logits, axis=1),
        log_probs=ad.log_softmax(logits, axis=1),
    )


def _check_simplex(v: np.ndarray, name: str) -> None:
    if np.any(v < 0):
        raise ValueError(f"{name} has negative entries")
    s = float(np.sum(v))
    if abs(s - 1.0) > _MARGINAL_TOL:
        raise ValueError(f"{name} mass {s!r} deviates from 1 by more than {_MARGINAL_TOL}")


def solve_coupling(alpha: FrameWeights, beta: LabelWeights) -> TransportPlan:
    """The monotone coupling of the two marginals, as plain arrays."""
    a = alpha.alpha.data if isinstance(alpha.alpha, Tensor) else np.asarray(alpha.alpha)
    b = beta.beta
    _check_simplex(a, "alpha")
    _check_simplex(b, "beta")
    return TransportPlan.from_gamma(nw_coupling(a, b))


def coupling_tensor(alpha: Tensor, beta: np.ndarray, detach_plan: bool = False) -> Tensor:
    """gamma(alpha, beta) as an autodiff node.

    The coupling is piecewise-linear in alpha. At prefix-sum ties the
    subgradient takes the left branch of each min/max, and cells clamped
    at exactly zero pass no gradient, so gradients are deterministic.
    """
    a = alpha.data
    b = np.asarray(beta, dtype=np.float64)
    gamma = nw_coupling(a, b)
    if detach_plan or not alpha.requires_grad:
        return Tensor(gamma)

    n, m = gamma.shape
    A = np.concatenate(([0.0], np.cumsum(a)))
    B = np.concatenate(([0.0], np.cumsum(b)))
    ii, jj = np.nonzero(gamma > 0.0)

    def grad_fn(g, send):
        # d gamma[i,j] / dA: +1 on A_{i+1} when the min takes the A branch,
        # -1 on A_i when the max takes the A branch (ties go left, i.e. to
        # the A operand of min and of max)
        gA = np.zeros(n + 1)
        take_min = A[ii + 1] <= B[jj + 1]
        take_max = A[ii] >= B[jj]
        np.add.at(gA, ii + 1, g[ii, jj] * take_min)
        np.add.at(gA, ii, -g[ii, jj] * take_max)
        # dA_k / d a_i = 1 for i <= k, so d/da_i = sum of gA over k >= i
        send(alpha, np.cumsum(gA[::-1])[::-1][1:].copy())

    return ad._from_op(gamma, (alpha,), grad_fn)


def ottc_loss(
    grid: PosteriorGrid,
    targets,
    alpha: FrameWeights,
    beta: LabelWeights | None = None,
    detach_plan: bool = False,
) -> Tensor:
    """Expected transport cost -sum_ij gamma_ij log p(y_j | x_i).

    Gradient reaches both the logits behind the grid and the frame
    scores behind alpha unless detach_plan treats gamma as a constant.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.size == 0:
        raise ValueError("targets must be a nonempty id sequence")
    K = grid.vocab_size
    if targets.min() < 0 or targets.max() >= K:
        raise ValueError(f"target ids must lie in [0, {K}), got range "
                         f"[{targets.min()}, {targets.max()}]")
    if beta is None:
        beta = uniform_label_weights(targets.shape[0])
    if beta.m != targets.shape[0]:
        raise ValueError(f"beta length {beta.m} does not match {targets.shape[0]} targets")
    _check_simplex(alpha.alpha.data, "alpha")
    _check_simplex(beta.beta, "beta")
    if alpha.n != grid.n:
        raise ValueError(f"alpha has {alpha.n} frames but grid has {grid.n}")

    gamma = coupling_tensor(alpha.alpha, beta.beta, detach_plan=detach_plan)
    # log p(y_j | x_i) as an (n, m) matrix
    sel = grid.log_probs[:, targets]
    return ad.tsum(ad.mul(gamma, sel)) * Tensor(-1.0)


def sotd(alpha: FrameWeights, beta: LabelWeights, cost_grid: np.ndarray) -> float:
    """Sequence transport distance sum_ij gamma_ij c_ij for arbitrary costs."""
    cost = np.asarray(cost_grid, dtype=np.float64)
    plan = solve_coupling(alpha, beta)
    if cost.shape != plan.gamma.shape:
        raise ValueError(f"cost grid shape {cost.shape} does not match plan {plan.gamma.shape}")
    return float(np.sum(plan.gamma * cost))
