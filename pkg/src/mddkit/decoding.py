"""Inference-side decoding.

Greedy collapses for the CTC and dense-alignment acoustic models, the
monotone-segmentation AM hypothesis score, and label-synchronous joint
AM/LM beam search that mixes the two log-probabilities with weight
lambda. The AM score of a hypothesis is the best log-probability over
all monotone segmentations of the frames into the hypothesis tokens
(every token covering at least one frame), normalized per frame; the LM
score is the decoder log-probability normalized per scored token.

The beam prunes partials by a different AM statistic than the one it
reports: the best per-frame rate over any frame prefix the partial can
cover, max_t dp[j][t] / t. Forcing a partial to explain all n frames
punishes correct prefixes that have not reached the later segments yet,
and on sharply peaked grids that prunes the true sequence almost every
time (measured as deletion-heavy search errors). Reported scores always
use the full-coverage form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import seg_dp_extend
from .corpus import BLANK_ID, BOS_ID, EOS_ID, ERROR_ID, SIL_ID
from .models import Decoder
from .ot_align import PosteriorGrid

__all__ = [
    "BeamConfig",
    "Hypothesis",
    "ctc_greedy",
    "ottc_greedy",
    "am_prefix_score",
    "joint_beam_search",
    "default_proposals",
]

NEG_INF = float("-inf")


@dataclass
class BeamConfig:
    beam_size: int = 10
    temperature: float = 1.1
    lam: float = 0.9
    max_len: int = 32

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class Hypothesis:
    """A decoded sequence with separated, per-unit-normalized scores."""

    tokens: list[int]
    am_logprob: float
    lm_logprob: float
    combined: float
    terminated: bool = True


def _collapse(path: np.ndarray, drop: set[int], merge_first: bool = True) -> list[int]:
    out = []
    prev = None
    for t in path.tolist():
        if merge_first and t == prev:
            continue
        prev = t
        if t not in drop:
            out.append(t)
    return out


def ctc_greedy(grid: PosteriorGrid, blank: int = BLANK_ID, sil: int = SIL_ID) -> list[int]:
    """Argmax path, merge consecutive repeats, delete blanks, drop <sil>."""
    path = np.argmax(grid.probs.data, axis=1)
    return _collapse(path, drop={blank, sil})


def ottc_greedy(grid: PosteriorGrid, sil: int = SIL_ID) -> list[int]:
    """Argmax path with run-length merging; every frame carries a label."""
    path = np.argmax(grid.probs.data, axis=1)
    return _collapse(path, drop={sil})


def _init_row(n: int) -> np.ndarray:
    row = np.full(n + 1, NEG_INF)
    row[0] = 0.0
    return row


def am_prefix_score(grid: PosteriorGrid, prefix) -> float:
    """Best monotone-segmentation log-probability of the prefix, per frame.

    dp[j][t] = max(dp[j][t-1], dp[j-1][t-1]) + log p(y_j | x_t); the
    score is dp[m][n] / n. A prefix longer than the frames scores -inf.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    n = grid.n
    logp = grid.log_probs.data
    row = _init_row(n)
    for tok in prefix:
        row = seg_dp_extend(row, logp[:, tok])
    return float(row[n]) / n


def default_proposals(vocab_size: int) -> list[int]:
    """Tokens the LM may propose: everything except the non-lexical ids,
    with <eos> allowed so hypotheses can finalize."""
    banned = {BLANK_ID, BOS_ID, SIL_ID, ERROR_ID}
    return [k for k in range(vocab_size) if k not in banned]


@dataclass
class _Beam:
    tokens: list[int]
    lm_sum: float
    dp_row: np.ndarray
    priority: float = NEG_INF
    am: float = NEG_INF
    lm: float = NEG_INF

    sort_key: tuple = field(init=False, default=())


def _prefix_rate(row: np.ndarray) -> float:
    """Best per-frame rate over any covered frame prefix, max_t row[t]/t."""
    n = row.size - 1
    return float(np.max(row[1:] / np.arange(1, n + 1)))


def _lm_step(decoder: Decoder, h_enc, prefix: list[int], temperature: float) -> np.ndarray:
    logits = decoder.forward_full(h_enc, prefix).data[-1] / temperature
    z = logits - logits.max()
    return z - np.log(np.sum(np.exp(z)))


def _combine(lam: float, am: float, lm: float) -> float:
    # a zero-weight side contributes exactly zero, so lam = 0 tolerates the
    # -inf AM score of an empty hypothesis instead of producing nan
    left = lam * am if lam != 0.0 else 0.0
    right = (1.0 - lam) * lm if lam != 1.0 else 0.0
    return left + right


def joint_beam_search(grid: PosteriorGrid, h_enc, decoder: Decoder,
                      cfg: BeamConfig, proposals: list[int] | None = None) -> list[Hypothesis]:
    """Label-synchronous beam search over lambda-mixed AM/LM scores.

    Each step extends every live hypothesis with every proposable token
    and keeps the top beam_size partials by lam * prefix-rate +
    (1 - lam) * lm, where prefix-rate is the partial's best per-frame
    coverage rate (see module docstring). <eos> finalizes a hypothesis,
    scored as lam * am_prefix_score + (1 - lam) * per-token lm. Equal
    combined scores order longest hypothesis first: an AM tie means the
    acoustics cannot tell a segment split from a single run, so only the
    LM side can break it, and at lam = 1 the degeneracy stays visible as
    redundant insertions instead of being hidden by the sort. If nothing
    reaches <eos> within max_len steps the best partials come back
    flagged unterminated, with the same reported score form.
    """
    if proposals is None:
        proposals = default_proposals(grid.vocab_size)
    lam = cfg.lam
    n = grid.n
    logp = grid.log_probs.data
    eos = decoder.cfg.eos_id
    bos = decoder.cfg.bos_id

    live = [_Beam(tokens=[], lm_sum=0.0, dp_row=_init_row(n))]
    finalized: list[Hypothesis] = []
    for _ in range(cfg.max_len):
        candidates: list[_Beam] = []
        for hyp in live:
            lm_next = _lm_step(decoder, h_enc, [bos] + hyp.tokens, cfg.temperature)
            for tok in proposals:
                lm_sum = hyp.lm_sum + float(lm_next[tok])
                count = len(hyp.tokens) + 1
                if tok == eos:
                    am = float(hyp.dp_row[n]) / n
                    lm = lm_sum / count
                    finalized.append(Hypothesis(
                        tokens=list(hyp.tokens),
                        am_logprob=am,
                        lm_logprob=lm,
                        combined=_combine(lam, am, lm),
                    ))
                    continue
                row = seg_dp_extend(hyp.dp_row, logp[:, tok])
                cand = _Beam(tokens=hyp.tokens + [tok], lm_sum=lm_sum, dp_row=row)
                cand.am = float(row[n]) / n
                cand.lm = lm_sum / count
                cand.priority = _combine(lam, _prefix_rate(row), cand.lm)
                candidates.append(cand)
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c.priority, tuple(c.tokens)))
        live = candidates[:cfg.beam_size]

    if finalized:
        finalized.sort(key=lambda h: (-h.combined, -len(h.tokens), tuple(h.tokens)))
        return finalized[:cfg.beam_size]
    out = [Hypothesis(tokens=h.tokens, am_logprob=h.am, lm_logprob=h.lm,
                      combined=_combine(lam, h.am, h.lm), terminated=False)
           for h in live]
    out.sort(key=lambda h: (-h.combined, -len(h.tokens), tuple(h.tokens)))
    return out[:cfg.beam_size]
