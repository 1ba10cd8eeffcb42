"""Stochastic view generation for consistency regularization.

Each view of a feature-frame matrix is an independently drawn
perturbation: a piecewise-linear time warp of an interior anchor, then
contiguous time-block and frequency-band masking. Mask budgets are
chosen so the zeroed-cell fraction of each view lands inside the
configured ratio interval exactly, not just in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FrameMatrix", "AugmentPolicy", "ViewPair", "make_views"]


@dataclass
class FrameMatrix:
    """n x d feature frames; frame_rate is informational only."""

    frames: np.ndarray
    frame_rate: float = 100.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.size == 0:
            raise ValueError(f"frames must be a nonempty matrix, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames must be finite")


@dataclass
class AugmentPolicy:
    """Knobs of the warp + mask recipe.

    warp_window is capped at n // 4 per utterance so short inputs keep a
    valid anchor range; mask_ratio_range is a half-open (low, high]
    interval on the zeroed-cell fraction.
    """

    warp_window: int = 80
    max_mask_blocks: int = 3
    mask_ratio_range: tuple[float, float] = (0.1, 0.3)
    min_time_mask_len: int = 4
    seed: int = 0

    def __post_init__(self):
        low, high = self.mask_ratio_range
        if not 0.0 <= low < high < 1.0:
            raise ValueError(f"bad mask ratio range {self.mask_ratio_range}")
        if self.warp_window < 0 or self.max_mask_blocks < 0 or self.min_time_mask_len < 1:
            raise ValueError("augment policy fields out of range")


@dataclass
class ViewPair:
    a: np.ndarray
    b: np.ndarray
    warning: bool = False


def _composition(rng: np.random.Generator, total: int, parts: int) -> list[int]:
    """Uniform composition of `total` into `parts` nonnegative integers."""
    if parts == 1:
        return [total]
    if total == 0:
        return [0] * parts
    bars = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    out = [int(bars[0])]
    for i in range(1, parts - 1):
        out.append(int(bars[i] - bars[i - 1] - 1))
    out.append(int(total + parts - 2 - bars[-1]))
    return out


def _place_blocks(rng: np.random.Generator, length: int, sizes: list[int]) -> list[tuple[int, int]]:
    """Non-overlapping [start, end) spans of the given sizes, uniform gaps."""
    free = length - sum(sizes)
    gaps = _composition(rng, free, len(sizes) + 1)
    spans = []
    cursor = 0
    for size, gap in zip(sizes, gaps[:-1]):
        cursor += gap
        spans.append((cursor, cursor + size))
        cursor += size
    return spans


def _warp(x: np.ndarray, window: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    w = min(window, n // 4)
    if w <= 0 or n < 3:
        return x.copy()
    anchor = int(rng.integers(w, n - w))
    delta = int(rng.integers(-w, w + 1))
    # the shifted anchor must stay strictly inside (0, n-1) or a segment
    # collapses and its slope divides by zero
    shifted = int(np.clip(anchor + delta, 1, n - 2))
    if shifted == anchor:
        return x.copy()
    # output position t reads from a source coordinate along two linear
    # segments meeting at the shifted anchor
    t = np.arange(n, dtype=np.float64)
    src = np.where(
        t <= shifted,
        t * anchor / shifted,
        anchor + (t - shifted) * (n - 1 - anchor) / (n - 1 - shifted),
    )
    lo = np.floor(src).astype(np.int64)
    lo = np.clip(lo, 0, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = (src - lo)[:, None]
    return x[lo] * (1.0 - frac) + x[hi] * frac


_FEASIBLE_CACHE: dict = {}


def _feasible_budgets(n: int, d: int, policy: AugmentPolicy):
    """All (time-frames b, feature-dims c) whose union fraction is in range.

    union(b, c) = (b d + c n - b c) / (n d). Cached per shape and policy,
    sorted by (b, c) so ties resolve deterministically.
    """
    low, high = policy.mask_ratio_range
    key = (n, d, low, high, policy.min_time_mask_len)
    hit = _FEASIBLE_CACHE.get(key)
    if hit is not None:
        return hit
    bs, cs, unions = [], [], []
    b_candidates = [0] + list(range(policy.min_time_mask_len, int(high * n) + 1))
    for b in b_candidates:
        for c in range(0, int(high * d) + 1):
            if b == 0 and c == 0:
                continue
            union = (b * d + c * n - b * c) / (n * d)
            if low < union <= high:
                bs.append(b)
                cs.append(c)
                unions.append(union)
    out = (np.array(bs, dtype=np.int64), np.array(cs, dtype=np.int64),
           np.array(unions, dtype=np.float64))
    _FEASIBLE_CACHE[key] = out
    return out


def _pick_budgets(n: int, d: int, rho: float, policy: AugmentPolicy):
    """The feasible budget pair closest to the drawn target rho."""
    bs, cs, unions = _feasible_budgets(n, d, policy)
    if bs.size == 0:
        return None
    i = int(np.argmin(np.abs(unions - rho)))
    return int(bs[i]), int(cs[i])


def _mask(x: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    n, d = x.shape
    low, high = policy.mask_ratio_range
    rho = high - rng.uniform() * (high - low)  # in (low, high]
    budgets = _pick_budgets(n, d, rho, policy)
    if budgets is None:
        return x, True
    b, c = budgets
    out = x.copy()
    if b > 0:
        k = int(rng.integers(1, min(policy.max_mask_blocks, b // policy.min_time_mask_len) + 1))
        extra = _composition(rng, b - k * policy.min_time_mask_len, k)
        sizes = [policy.min_time_mask_len + e for e in extra]
        for s, e in _place_blocks(rng, n, sizes):
            out[s:e, :] = 0.0
    if c > 0:
        k = int(rng.integers(1, min(policy.max_mask_blocks, c) + 1))
        extra = _composition(rng, c - k, k)
        sizes = [1 + e for e in extra]
        for s, e in _place_blocks(rng, d, sizes):
            out[:, s:e] = 0.0
    return out, False


def _one_view(x: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    v = _warp(x, policy.warp_window, rng)
    if policy.max_mask_blocks == 0:
        return v, False
    n = x.shape[0]
    if n <= 2 * policy.min_time_mask_len:
        return v, True
    return _mask(v, policy, rng)


def make_views(x, policy: AugmentPolicy, rng: np.random.Generator) -> ViewPair:
    """Two independently perturbed, shape-preserving copies of x.

    When the utterance is too short to satisfy the masking constraints
    the copies come back unmasked and the pair carries a warning flag.
    """
    frames = x.frames if isinstance(x, FrameMatrix) else np.asarray(x, dtype=np.float64)
    if frames.ndim != 2 or frames.size == 0:
        raise ValueError("input must be a nonempty (n, d) matrix")
    a, warn_a = _one_view(frames, policy, rng)
    b, warn_b = _one_view(frames, policy, rng)
    return ViewPair(a=a, b=b, warning=warn_a or warn_b)
