"""Synthetic mispronunciation corpus.

Each phoneme is a Gaussian cluster in feature space; an utterance is a
bigram-grammar canonical sequence, a perceived sequence derived by
seeded error injection (substitutions, deletions, insertions), and
feature frames synthesized from the perceived sequence, because the
acoustics must realize what was actually said. Ground-truth tags are
canonical-indexed and reconstruct perceived exactly.

Error injection never creates adjacent duplicate perceived tokens, so
run-length structure in the frames stays decodable.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .losses import ErrorTags

__all__ = [
    "SPECIALS",
    "BLANK_ID",
    "BOS_ID",
    "EOS_ID",
    "SIL_ID",
    "ERROR_ID",
    "DEFAULT_PHONEMES",
    "SynthVocab",
    "CorpusSpec",
    "Utterance",
    "Corpus",
    "make_vocab",
    "generate",
    "split",
    "tags_to_codes",
    "codes_to_tags",
    "write_features",
    "read_features",
    "write_corpus",
    "load_manifest",
    "load_vocab",
]

log = logging.getLogger(__name__)

SPECIALS = ("<blank>", "<bos>", "<eos>", "<sil>", "<error>")
BLANK_ID, BOS_ID, EOS_ID, SIL_ID, ERROR_ID = range(5)

DEFAULT_PHONEMES = ("aa", "ae", "ah", "b", "d", "eh", "iy", "k", "p", "s", "t", "uw")

# sub-stream tags so every sampling concern draws from its own rng
_TAG_CENTERS = 0x11
_TAG_GRAMMAR = 0x12
_TAG_TEXT = 0x13
_TAG_FRAMES = 0x14
_TAG_SPLIT = 0x15


@dataclass
class SynthVocab:
    """Phoneme inventory with Gaussian feature centers.

    The full model vocabulary is SPECIALS followed by the phonemes;
    centers exist for phonemes only. Construction scales the centers so
    the minimum pairwise distance equals min_separation * noise_sigma.
    """

    phonemes: tuple
    centers: np.ndarray
    noise_sigma: float
    min_separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        self.phonemes = tuple(self.phonemes)
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if len(self.phonemes) < 4:
            raise ValueError("need at least 4 phonemes")
        if self.centers.shape[0] != len(self.phonemes):
            raise ValueError("one center per phoneme required")

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def symbols(self) -> tuple:
        return SPECIALS + self.phonemes

    @property
    def size(self) -> int:
        return len(SPECIALS) + len(self.phonemes)

    def sym_to_id(self, sym: str) -> int:
        try:
            return self.symbols.index(sym)
        except ValueError:
            raise KeyError(f"unknown symbol {sym!r}") from None

    def to_ids(self, syms) -> list[int]:
        table = {s: i for i, s in enumerate(self.symbols)}
        return [table[s] for s in syms]

    def to_syms(self, ids) -> list[str]:
        return [self.symbols[i] for i in ids]

    def phoneme_ids(self) -> list[int]:
        return list(range(len(SPECIALS), self.size))

    def min_center_distance(self) -> float:
        diff = self.centers[:, None, :] - self.centers[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())


def make_vocab(num_phonemes: int = 12, dim: int = 16, noise_sigma: float = 1.0,
               min_separation: float = 4.0, seed: int = 0,
               phonemes: tuple | None = None) -> SynthVocab:
    if phonemes is None:
        if num_phonemes <= len(DEFAULT_PHONEMES):
            phonemes = DEFAULT_PHONEMES[:num_phonemes]
        else:
            extra = tuple(f"ph{i}" for i in range(num_phonemes - len(DEFAULT_PHONEMES)))
            phonemes = DEFAULT_PHONEMES + extra
    rng = np.random.default_rng([seed, _TAG_CENTERS])
    raw = rng.normal(size=(len(phonemes), dim))
    diff = raw[:, None, :] - raw[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    scale = (min_separation * noise_sigma) / dist.min()
    return SynthVocab(phonemes=phonemes, centers=raw * scale,
                      noise_sigma=noise_sigma, min_separation=min_separation,
                      seed=seed)


@dataclass
class CorpusSpec:
    num_utts: int = 200
    utt_len_range: tuple[int, int] = (4, 10)
    seg_len_range: tuple[int, int] = (3, 8)
    sub_rate: float = 0.15
    del_rate: float = 0.03
    ins_rate: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.num_utts < 1:
            raise ValueError("num_utts must be positive")
        lo, hi = self.utt_len_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad utterance length range {self.utt_len_range}")
        lo, hi = self.seg_len_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad segment length range {self.seg_len_range}")
        rates = (self.sub_rate, self.del_rate, self.ins_rate)
        if any(r < 0 or r >= 1 for r in rates) or sum(rates) >= 1:
            raise ValueError("error rates must lie in [0, 1) and sum below 1")


@dataclass
class Utterance:
    id: str
    canonical: list[str]
    perceived: list[str]
    tags: ErrorTags
    frames: np.ndarray


@dataclass
class Corpus:
    vocab: SynthVocab
    spec: CorpusSpec
    utterances: list[Utterance] = field(default_factory=list)

    def by_id(self, utt_id: str) -> Utterance:
        for u in self.utterances:
            if u.id == utt_id:
                return u
        raise KeyError(f"unknown utterance id {utt_id!r}")


def _bigram_grammar(vocab: SynthVocab) -> np.ndarray:
    """Row-stochastic successor matrix without self-loops.

    Rows are peaked (a few preferred successors per phoneme) so the
    decoder has real sequence structure to learn.
    """
    K = len(vocab.phonemes)
    rng = np.random.default_rng([vocab.seed, _TAG_GRAMMAR])
    logits = rng.normal(size=(K, K)) * 2.0
    np.fill_diagonal(logits, -np.inf)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sample_canonical(vocab: SynthVocab, spec: CorpusSpec, grammar: np.ndarray,
                      rng: np.random.Generator) -> list[str]:
    K = len(vocab.phonemes)
    length = int(rng.integers(spec.utt_len_range[0], spec.utt_len_range[1] + 1))
    seq = [int(rng.integers(K))]
    for _ in range(length - 1):
        seq.append(int(rng.choice(K, p=grammar[seq[-1]])))
    return [vocab.phonemes[i] for i in seq]


def _pick_other(rng: np.random.Generator, vocab: SynthVocab, forbidden: set) -> str:
    pool = [p for p in vocab.phonemes if p not in forbidden]
    return pool[int(rng.integers(len(pool)))]


def _inject_errors(canonical: list[str], vocab: SynthVocab, spec: CorpusSpec,
                   rng: np.random.Generator):
    """Perceived sequence plus canonical-indexed tags.

    Guards keep perceived free of adjacent duplicates: substitution and
    insertion tokens avoid their realized neighbors, and a deletion that
    would join two equal tokens is skipped (the position stays correct).
    """
    m = len(canonical)
    out: list[str] = []
    positions = [0] * m
    types = ["correct"] * m
    realized: list = [None] * m
    for j, tok in enumerate(canonical):
        nxt = canonical[j + 1] if j + 1 < m else None
        prev = out[-1] if out else None
        u = float(rng.uniform())
        if u < spec.sub_rate:
            forbidden = {tok}
            if prev is not None:
                forbidden.add(prev)
            if nxt is not None:
                forbidden.add(nxt)
            s = _pick_other(rng, vocab, forbidden)
            out.append(s)
            positions[j], types[j], realized[j] = 1, "substitution", s
        elif u < spec.sub_rate + spec.del_rate:
            if prev is not None and nxt is not None and prev == nxt:
                out.append(tok)  # deletion would merge equal neighbors
            else:
                positions[j], types[j] = 1, "deletion"
        elif u < spec.sub_rate + spec.del_rate + spec.ins_rate:
            forbidden = {tok}
            if prev is not None:
                forbidden.add(prev)
            ins = _pick_other(rng, vocab, forbidden)
            out.append(ins)
            out.append(tok)
            positions[j], types[j], realized[j] = 1, "insertion", ins
        else:
            out.append(tok)
    if not out:
        # a draw deleted every position; keep the first token so the
        # utterance still has frames to synthesize
        positions[0], types[0], realized[0] = 0, "correct", None
        out.append(canonical[0])
    final_insertion = None
    if float(rng.uniform()) < spec.ins_rate and out:
        final_insertion = _pick_other(rng, vocab, {out[-1]})
        out.append(final_insertion)
    tags = ErrorTags(positions=positions, types=types, realized=realized,
                     final_insertion=final_insertion)
    return out, tags


def _synth_frames(perceived: list[str], vocab: SynthVocab, spec: CorpusSpec,
                  rng: np.random.Generator) -> np.ndarray:
    sym_to_row = {p: i for i, p in enumerate(vocab.phonemes)}
    chunks = []
    for tok in perceived:
        n = int(rng.integers(spec.seg_len_range[0], spec.seg_len_range[1] + 1))
        noise = rng.normal(size=(n, vocab.dim)) * vocab.noise_sigma
        chunks.append(vocab.centers[sym_to_row[tok]] + noise)
    return np.concatenate(chunks, axis=0)


def generate(vocab: SynthVocab, spec: CorpusSpec) -> Corpus:
    """Seed-deterministic corpus of error-injected utterances."""
    if vocab.min_center_distance() < 4.0 * vocab.noise_sigma:
        log.warning(
            "phoneme centers are only %.3f apart but noise sigma is %.3f; "
            "clusters overlap and frame decoding will be noisy",
            vocab.min_center_distance(), vocab.noise_sigma,
        )
    grammar = _bigram_grammar(vocab)
    utterances = []
    for idx in range(spec.num_utts):
        text_rng = np.random.default_rng([spec.seed, _TAG_TEXT, idx])
        canonical = _sample_canonical(vocab, spec, grammar, text_rng)
        perceived, tags = _inject_errors(canonical, vocab, spec, text_rng)
        frame_rng = np.random.default_rng([spec.seed, _TAG_FRAMES, idx])
        frames = _synth_frames(perceived, vocab, spec, frame_rng)
        utterances.append(Utterance(
            id=f"utt{idx:05d}",
            canonical=canonical,
            perceived=perceived,
            tags=tags,
            frames=frames,
        ))
    return Corpus(vocab=vocab, spec=spec, utterances=utterances)


def split(corpus: Corpus, ratios: tuple[float, float, float],
          seed: int | None = None) -> dict[str, list[str]]:
    """Disjoint, seed-deterministic train/val/test id partition."""
    if not corpus.utterances:
        raise ValueError("cannot split an empty corpus")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    seed = corpus.spec.seed if seed is None else seed
    ids = [u.id for u in corpus.utterances]
    rng = np.random.default_rng([seed, _TAG_SPLIT])
    order = rng.permutation(len(ids))
    n = len(ids)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }


# ---------------------------------------------------------------------------
# serialization

def tags_to_codes(tags: ErrorTags) -> list[str]:
    """Compact per-position codes: C, S:<tok>, D, I:<tok>.

    A sentence-final insertion appends one extra trailing I:<tok> entry,
    so the list has len(tags) or len(tags) + 1 elements.
    """
    codes = []
    for j in range(len(tags)):
        t = tags.types[j]
        if t == "correct":
            codes.append("C")
        elif t == "substitution":
            codes.append(f"S:{tags.realized[j]}")
        elif t == "deletion":
            codes.append("D")
        else:
            codes.append(f"I:{tags.realized[j]}")
    if tags.final_insertion is not None:
        codes.append(f"I:{tags.final_insertion}")
    return codes


def codes_to_tags(codes: list[str], num_positions: int) -> ErrorTags:
    if len(codes) not in (num_positions, num_positions + 1):
        raise ValueError(
            f"{len(codes)} tag codes for {num_positions} canonical positions"
        )
    final_insertion = None
    if len(codes) == num_positions + 1:
        last = codes[-1]
        if not last.startswith("I:"):
            raise ValueError(f"trailing extra tag must be an insertion, got {last!r}")
        final_insertion = last[2:]
        codes = codes[:-1]
    positions, types, realized = [], [], []
    for j, code in enumerate(codes):
        if code == "C":
            positions.append(0)
            types.append("correct")
            realized.append(None)
        elif code == "D":
            positions.append(1)
            types.append("deletion")
            realized.append(None)
        elif code.startswith("S:"):
            positions.append(1)
            types.append("substitution")
            realized.append(code[2:])
        elif code.startswith("I:"):
            positions.append(1)
            types.append("insertion")
            realized.append(code[2:])
        else:
            raise ValueError(f"bad tag code {code!r} at position {j}")
    return ErrorTags(positions=positions, types=types, realized=realized,
                     final_insertion=final_insertion)


def write_features(path: Path, frames: np.ndarray) -> None:
    """Raw little-endian float32 rows behind an (n, d) uint32 header."""
    frames = np.asarray(frames)
    n, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", n, d))
        fh.write(frames.astype("<f4").tobytes(order="C"))


def read_features(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated feature header")
        n, d = struct.unpack("<II", header)
        payload = fh.read()
    expect = n * d * 4
    if len(payload) != expect:
        raise ValueError(f"{path}: expected {expect} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def write_corpus(corpus: Corpus, outdir: Path,
                 split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)) -> None:
    """Manifest + feature files + vocab + splits under one directory."""
    outdir = Path(outdir)
    feat_dir = outdir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "manifest.jsonl", "w") as fh:
        for u in corpus.utterances:
            rel = f"features/{u.id}.bin"
            write_features(outdir / rel, u.frames)
            fh.write(json.dumps({
                "id": u.id,
                "canonical": " ".join(u.canonical),
                "perceived": " ".join(u.perceived),
                "tags": tags_to_codes(u.tags),
                "feature_file": rel,
                "num_frames": int(u.frames.shape[0]),
                "dim": int(u.frames.shape[1]),
            }) + "\n")
    v = corpus.vocab
    with open(outdir / "vocab.json", "w") as fh:
        json.dump({
            "phonemes": list(v.phonemes),
            "specials": list(SPECIALS),
            "centers": v.centers.tolist(),
            "noise_sigma": v.noise_sigma,
            "min_separation": v.min_separation,
            "seed": v.seed,
        }, fh, indent=2)
        fh.write("\n")
    with open(outdir / "splits.json", "w") as fh:
        json.dump(split(corpus, split_ratios), fh, indent=2)
        fh.write("\n")


def load_vocab(path: Path) -> SynthVocab:
    with open(path) as fh:
        payload = json.load(fh)
    if tuple(payload["specials"]) != SPECIALS:
        raise ValueError(f"{path}: unexpected special-token inventory")
    return SynthVocab(
        phonemes=tuple(payload["phonemes"]),
        centers=np.array(payload["centers"], dtype=np.float64),
        noise_sigma=float(payload["noise_sigma"]),
        min_separation=float(payload["min_separation"]),
        seed=int(payload["seed"]),
    )


def load_manifest(corpus_dir: Path) -> list[dict]:
    """Manifest records with tags decoded and features loaded."""
    corpus_dir = Path(corpus_dir)
    records = []
    with open(corpus_dir / "manifest.jsonl") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            canonical = rec["canonical"].split()
            rec["canonical"] = canonical
            rec["perceived"] = rec["perceived"].split()
            rec["tags"] = codes_to_tags(rec["tags"], len(canonical))
            rec["frames"] = read_features(corpus_dir / rec["feature_file"])
            if rec["frames"].shape != (rec["num_frames"], rec["dim"]):
                raise ValueError(f"manifest line {line_no}: feature shape mismatch")
            records.append(rec)
    return records
