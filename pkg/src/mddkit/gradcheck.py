"""Finite-difference verification of every analytic loss gradient.

Each case builds a small random instance, computes the analytic
gradient through the tape, and compares against central differences
coordinate by coordinate. The relative error of a case is
max|analytic - numeric| / max(|numeric|), aggregated over instances.
A sign_flip option negates one analytic gradient on purpose so the
harness can prove it catches wrong gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import (ErrorTags, cr_loss, ctc_loss, error_head_losses,
                     guided_attention_loss)
from .ot_align import frame_weights, posterior_grid, ottc_loss

__all__ = ["CheckRow", "central_difference", "relative_error",
           "gradcheck_suite", "DEFAULT_TOL"]

DEFAULT_TOL = 1e-4
FD_STEP = 1e-5


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """d f / d x by symmetric differences, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-10)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _phoneme_targets(rng: np.random.Generator, m: int, K: int) -> np.ndarray:
    return rng.integers(1, K, size=m)


# every case returns (analytic gradient, finite-difference gradient)

def _case_ottc(rng: np.random.Generator):
    n, K, m = 5, 7, 3
    logits = rng.normal(size=(n, K))
    scores = rng.normal(size=(n,))
    targets = _phoneme_targets(rng, m, K)

    def build(lo, sc):
        lt = Tensor(lo, requires_grad=True)
        st = Tensor(sc, requires_grad=True)
        loss = ottc_loss(posterior_grid(lt), targets, frame_weights(st))
        return loss, lt, st

    loss, lt, st = build(logits, scores)
    ad.backward(loss)
    fd_logits = central_difference(lambda x: build(x, scores)[0].item(), logits.copy())
    fd_scores = central_difference(lambda x: build(logits, x)[0].item(), scores.copy())
    return [("ottc-logits", lt.grad, fd_logits),
            ("ottc-scores", st.grad, fd_scores)]


def _case_ctc(rng: np.random.Generator):
    n, K, m = 6, 5, 3
    logits = rng.normal(size=(n, K))
    targets = _phoneme_targets(rng, m, K)

    def build(lo):
        lt = Tensor(lo, requires_grad=True)
        return ctc_loss(posterior_grid(lt), targets, blank=0), lt

    loss, lt = build(logits)
    ad.backward(loss)
    fd = central_difference(lambda x: build(x)[0].item(), logits.copy())
    return [("ctc-logits", lt.grad, fd)]


def _case_cr(rng: np.random.Generator):
    n, K = 5, 6
    la = rng.normal(size=(n, K))
    lb = rng.normal(size=(n, K))

    def build(a):
        at = Tensor(a, requires_grad=True)
        return cr_loss(posterior_grid(at), posterior_grid(Tensor(lb))), at

    loss, at = build(la)
    ad.backward(loss)
    fd = central_difference(lambda x: build(x)[0].item(), la.copy())
    return [("cr-logits", at.grad, fd)]


def _random_tags(rng: np.random.Generator, m: int) -> ErrorTags:
    positions = rng.integers(0, 2, size=m)
    kinds = ("substitution", "deletion", "insertion")
    types = ["correct" if p == 0 else kinds[int(rng.integers(3))]
             for p in positions]
    return ErrorTags(positions=positions, types=types)


def _case_heads(rng: np.random.Generator):
    m = 4
    raw_pos = rng.normal(size=(m,))
    raw_type = rng.normal(size=(m, 4))
    tags = _random_tags(rng, m)

    def build_pos(x):
        t = Tensor(x, requires_grad=True)
        l_pos, _ = error_head_losses(ad.sigmoid(t),
                                     ad.softmax(Tensor(raw_type), axis=1), tags)
        return l_pos, t

    def build_type(x):
        t = Tensor(x, requires_grad=True)
        _, l_type = error_head_losses(ad.sigmoid(Tensor(raw_pos)),
                                      ad.softmax(t, axis=1), tags)
        return l_type, t

    l_pos, tp = build_pos(raw_pos)
    ad.backward(l_pos)
    fd_pos = central_difference(lambda x: build_pos(x)[0].item(), raw_pos.copy())
    l_type, tt = build_type(raw_type)
    ad.backward(l_type)
    fd_type = central_difference(lambda x: build_type(x)[0].item(), raw_type.copy())
    return [("pos-head", tp.grad, fd_pos), ("type-head", tt.grad, fd_type)]


def _case_ga(rng: np.random.Generator):
    T, N = 6, 4
    raw = rng.normal(size=(T, N))

    def build(x):
        t = Tensor(x, requires_grad=True)
        return guided_attention_loss(ad.softmax(t, axis=1)), t

    loss, t = build(raw)
    ad.backward(loss)
    fd = central_difference(lambda x: build(x)[0].item(), raw.copy())
    return [("ga-attn", t.grad, fd)]


_CASES = (_case_ottc, _case_ctc, _case_cr, _case_heads, _case_ga)


def gradcheck_suite(seed: int = 0, instances: int = 10,
                    tol: float = DEFAULT_TOL,
                    sign_flip: bool = False) -> list[CheckRow]:
    """Max relative FD error per loss over `instances` random draws."""
    worst: dict[str, float] = {}
    order: list[str] = []
    for k in range(instances):
        for case in _CASES:
            rng = np.random.default_rng([seed, 0x67, k, _CASES.index(case)])
            for name, analytic, numeric in case(rng):
                if sign_flip and name == "ottc-logits":
                    analytic = -analytic
                err = relative_error(analytic, numeric)
                if name not in worst:
                    worst[name] = err
                    order.append(name)
                else:
                    worst[name] = max(worst[name], err)
    return [CheckRow(name=n, max_rel_err=worst[n], tol=tol) for n in order]
