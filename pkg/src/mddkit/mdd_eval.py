"""Hierarchical mispronunciation detection and diagnosis metrics.

Detection and diagnosis counts (TA/TR/FA/FR, TR split into CD/ED) live
on canonical positions via the canonical-vs-predicted alignment;
recognition counts (S/D/I/N) come from the independent
perceived-vs-predicted alignment. Insertions are tagged on the canonical
position that follows them; a sentence-final insertion occupies a
virtual terminal site. Predicted insertions at sites that are not
insertion-tagged are excluded from the positional categorization and
show up in PER only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields as dc_fields

from .losses import ErrorTags

__all__ = [
    "GAP",
    "TranscriptTriple",
    "MetricCounts",
    "MetricReport",
    "CorpusResult",
    "align",
    "infer_tags",
    "categorize",
    "report",
    "corpus_score",
]

log = logging.getLogger(__name__)


class _Gap:
    def __repr__(self):
        return "<gap>"


# sentinel for "no token on this side of the alignment"
GAP = _Gap()


@dataclass
class TranscriptTriple:
    canonical: list
    perceived: list
    tags: ErrorTags
    predicted: list
    id: str = ""


@dataclass
class MetricCounts:
    TA: int = 0
    TR: int = 0
    FA: int = 0
    FR: int = 0
    CD: int = 0
    ED: int = 0
    S: int = 0
    D: int = 0
    I: int = 0
    N: int = 0

    def __add__(self, other: "MetricCounts") -> "MetricCounts":
        return MetricCounts(**{
            f.name: getattr(self, f.name) + getattr(other, f.name)
            for f in dc_fields(self)
        })

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


@dataclass
class MetricReport:
    """All percentages; None marks an undefined (zero-denominator) ratio."""

    precision: float | None
    recall: float | None
    f1: float | None
    frr: float | None
    far: float | None
    edr: float | None
    per: float | None
    cor: float | None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


def align(ref: list, hyp: list) -> list[tuple[str, int | None, int | None]]:
    """Minimal unit-cost edit alignment as (op, ref_idx, hyp_idx) tuples.

    Ops are match/sub (consume both sides), del (ref only), ins (hyp
    only). Ties resolve by preferring match > sub > del > ins while
    walking left to right, so the alignment is deterministic.
    """
    R, H = len(ref), len(hyp)
    # dp[i][j] = edit distance of ref[i:] vs hyp[j:]
    dp = [[0] * (H + 1) for _ in range(R + 1)]
    for j in range(H + 1):
        dp[R][j] = H - j
    for i in range(R - 1, -1, -1):
        dp[i][H] = R - i
        for j in range(H - 1, -1, -1):
            both = dp[i + 1][j + 1] + (0 if ref[i] == hyp[j] else 1)
            dp[i][j] = min(both, 1 + dp[i + 1][j], 1 + dp[i][j + 1])

    ops: list[tuple[str, int | None, int | None]] = []
    i = j = 0
    while i < R or j < H:
        here = dp[i][j]
        if i < R and j < H and ref[i] == hyp[j] and here == dp[i + 1][j + 1]:
            ops.append(("match", i, j))
            i, j = i + 1, j + 1
        elif i < R and j < H and ref[i] != hyp[j] and here == 1 + dp[i + 1][j + 1]:
            ops.append(("sub", i, j))
            i, j = i + 1, j + 1
        elif i < R and here == 1 + dp[i + 1][j]:
            ops.append(("del", i, None))
            i += 1
        else:
            ops.append(("ins", None, j))
            j += 1
    return ops


def infer_tags(canonical: list, perceived: list) -> ErrorTags:
    """Derive canonical-indexed tags from the two transcripts.

    A site can carry at most one event, so alignments that stack several
    insertions on one point are not representable and rejected.
    """
    ops = align(canonical, perceived)
    m = len(canonical)
    positions = [0] * m
    types = ["correct"] * m
    realized: list = [None] * m
    final_insertion = None
    pending: list = []

    def attach(site: int) -> None:
        if not pending:
            return
        if len(pending) > 1:
            raise ValueError(
                f"cannot tag {len(pending)} stacked insertions before canonical position {site}"
            )
        if site == m:
            nonlocal final_insertion
            final_insertion = pending[0]
        else:
            positions[site] = 1
            types[site] = "insertion"
            realized[site] = pending[0]
        pending.clear()

    for op, i, j in ops:
        if op == "ins":
            pending.append(perceived[j])
            continue
        attach(i)
        if op == "sub":
            positions[i] = 1
            types[i] = "substitution"
            realized[i] = perceived[j]
        elif op == "del":
            positions[i] = 1
            types[i] = "deletion"
    attach(m)
    return ErrorTags(positions=positions, types=types, realized=realized,
                     final_insertion=final_insertion)


def _aligned_view(canonical: list, predicted: list):
    """Aligned predicted token per canonical site plus pre-insertions.

    Returns (aligned, pre_ins) where aligned[j] is the predicted token
    standing at canonical position j (GAP when predicted drops it) and
    pre_ins[j] lists predicted insertions immediately before site j;
    index m collects trailing insertions for the virtual terminal site.
    """
    m = len(canonical)
    aligned = [GAP] * m
    pre_ins: list[list] = [[] for _ in range(m + 1)]
    pending: list = []
    for op, i, j in align(canonical, predicted):
        if op == "ins":
            pending.append(predicted[j])
            continue
        pre_ins[i] = pending
        pending = []
        if op in ("match", "sub"):
            aligned[i] = predicted[j]
    pre_ins[m] = pending
    return aligned, pre_ins


def categorize(triple: TranscriptTriple) -> MetricCounts:
    """Site-level detection/diagnosis counts plus recognition counts."""
    tags = triple.tags
    if len(tags) != len(triple.canonical):
        raise ValueError(
            f"{triple.id or 'utterance'}: {len(tags)} tags for "
            f"{len(triple.canonical)} canonical tokens"
        )
    rebuilt = tags.apply(triple.canonical)
    if rebuilt != list(triple.perceived):
        bad = [k for k, (x, y) in enumerate(zip(rebuilt, triple.perceived)) if x != y]
        raise ValueError(
            f"{triple.id or 'utterance'}: tags do not reconstruct perceived "
            f"(first mismatches at perceived indices {bad[:5]}, "
            f"lengths {len(rebuilt)} vs {len(triple.perceived)})"
        )

    aligned, pre_ins = _aligned_view(triple.canonical, triple.predicted)
    c = MetricCounts()
    for j, canon_tok in enumerate(triple.canonical):
        typ = tags.types[j]
        if typ == "correct":
            if aligned[j] == canon_tok:
                c.TA += 1
            else:
                c.FR += 1
        elif typ == "substitution":
            if aligned[j] == canon_tok:
                c.FA += 1
            else:
                c.TR += 1
                if aligned[j] == tags.realized[j]:
                    c.CD += 1
                else:
                    c.ED += 1
        elif typ == "deletion":
            if aligned[j] == canon_tok:
                c.FA += 1
            else:
                c.TR += 1
                if aligned[j] is GAP:
                    c.CD += 1
                else:
                    c.ED += 1
        else:  # insertion tagged on the following canonical site
            run = pre_ins[j]
            if run:
                c.TR += 1
                if run == [tags.realized[j]]:
                    c.CD += 1
                else:
                    c.ED += 1
            else:
                c.FA += 1
    if tags.final_insertion is not None:
        run = pre_ins[len(triple.canonical)]
        if run:
            c.TR += 1
            if run == [tags.final_insertion]:
                c.CD += 1
            else:
                c.ED += 1
        else:
            c.FA += 1

    for op, _, _ in align(triple.perceived, triple.predicted):
        if op == "sub":
            c.S += 1
        elif op == "del":
            c.D += 1
        elif op == "ins":
            c.I += 1
    c.N = len(triple.perceived)
    return c


def _ratio(num: float, den: float) -> float | None:
    if den == 0:
        return None
    return 100.0 * num / den


def report(counts: MetricCounts) -> MetricReport:
    """The eight ratios of the protocol, in percent; None when undefined."""
    p = _ratio(counts.TR, counts.TR + counts.FR)
    r = _ratio(counts.TR, counts.TR + counts.FA)
    if p is None or r is None or (p + r) == 0:
        f1 = None
    else:
        f1 = 2.0 * p * r / (p + r)
    per = _ratio(counts.S + counts.D + counts.I, counts.N)
    cor = None if counts.N == 0 else 100.0 - _ratio(counts.S + counts.D, counts.N)
    return MetricReport(
        precision=p,
        recall=r,
        f1=f1,
        frr=_ratio(counts.FR, counts.FR + counts.TA),
        far=_ratio(counts.FA, counts.FA + counts.TR),
        edr=_ratio(counts.ED, counts.TR),
        per=per,
        cor=cor,
    )


@dataclass
class CorpusResult:
    report: MetricReport
    counts: MetricCounts
    per_utterance: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.skipped


def corpus_score(triples) -> CorpusResult:
    """Micro-averaged report over a stream of triples.

    Malformed records are skipped with a logged diagnostic and recorded
    on the result so callers can signal a nonzero exit.
    """
    total = MetricCounts()
    per_utt = []
    skipped = []
    for triple in triples:
        try:
            counts = categorize(triple)
        except ValueError as exc:
            log.error("skipping %s: %s", triple.id or "utterance", exc)
            skipped.append((triple.id, str(exc)))
            continue
        total = total + counts
        per_utt.append({"id": triple.id, **counts.as_dict()})
    return CorpusResult(report=report(total), counts=total,
                        per_utterance=per_utt, skipped=skipped)
