import json

import numpy as np
import pytest

from mddkit.corpus import (
    BLANK_ID,
    BOS_ID,
    EOS_ID,
    SIL_ID,
    ERROR_ID,
    SPECIALS,
    Corpus,
    CorpusSpec,
    codes_to_tags,
    generate,
    load_manifest,
    load_vocab,
    make_vocab,
    read_features,
    split,
    tags_to_codes,
    write_corpus,
    write_features,
)


def _small(num_utts=30, seed=0):
    vocab = make_vocab(num_phonemes=8, dim=6, seed=seed)
    spec = CorpusSpec(num_utts=num_utts, utt_len_range=(3, 6),
                      seg_len_range=(2, 4), seed=seed)
    return vocab, spec, generate(vocab, spec)


def test_special_token_layout():
    vocab = make_vocab(num_phonemes=8, dim=6)
    assert (BLANK_ID, BOS_ID, EOS_ID, SIL_ID, ERROR_ID) == (0, 1, 2, 3, 4)
    assert vocab.size == len(SPECIALS) + 8
    assert vocab.sym_to_id(vocab.phonemes[0]) == len(SPECIALS)


def test_vocab_center_separation():
    for sigma in (0.5, 1.0, 2.0):
        vocab = make_vocab(num_phonemes=10, dim=8, noise_sigma=sigma,
                           min_separation=4.0)
        assert vocab.min_center_distance() >= 4.0 * sigma - 1e-9


def test_generate_is_deterministic():
    _, _, a = _small()
    _, _, b = _small()
    assert len(a.utterances) == len(b.utterances)
    for ua, ub in zip(a.utterances, b.utterances):
        assert ua.id == ub.id
        assert ua.canonical == ub.canonical
        assert ua.perceived == ub.perceived
        assert ua.frames.tobytes() == ub.frames.tobytes()


def test_generate_seed_changes_content():
    _, _, a = _small(seed=0)
    _, _, b = _small(seed=1)
    assert any(ua.canonical != ub.canonical
               for ua, ub in zip(a.utterances, b.utterances))


def test_tags_reconstruct_perceived():
    _, _, corpus = _small(num_utts=100)
    for u in corpus.utterances:
        assert u.tags.apply(u.canonical) == u.perceived


def test_error_rates_on_canonical_positions():
    vocab = make_vocab(num_phonemes=8, dim=6)
    spec = CorpusSpec(num_utts=400, utt_len_range=(6, 10), sub_rate=0.15,
                      del_rate=0.03, ins_rate=0.02, seed=0)
    corpus = generate(vocab, spec)
    total = subs = dels = 0
    for u in corpus.utterances:
        total += len(u.canonical)
        subs += sum(t == "substitution" for t in u.tags.types)
        dels += sum(t == "deletion" for t in u.tags.types)
    assert subs / total == pytest.approx(0.15, abs=0.02)
    assert dels / total == pytest.approx(0.03, abs=0.01)


def test_frames_follow_perceived_sequence():
    # frames carry the perceived (produced) phonemes, not the canonical
    vocab, _, corpus = _small(num_utts=50)
    mismatched = [u for u in corpus.utterances if u.canonical != u.perceived]
    assert mismatched
    for u in mismatched[:10]:
        # nearest-center classification of each frame, ignoring sil frames
        d = u.frames[:, None, :] - vocab.centers[None, :, :]
        nearest = np.sqrt((d * d).sum(-1)).argmin(axis=1)
        seq = []
        for t, c in enumerate(nearest):
            sym = vocab.phonemes[c]
            if not seq or seq[-1] != sym:
                seq.append(sym)
        # majority of perceived tokens must appear in frame order
        hits = sum(1 for s in u.perceived if s in seq)
        assert hits >= 0.6 * len(u.perceived)


def test_split_partition():
    _, _, corpus = _small(num_utts=40)
    parts = split(corpus, (0.7, 0.15, 0.15))
    ids = [u.id for u in corpus.utterances]
    joined = parts["train"] + parts["val"] + parts["test"]
    assert sorted(joined) == sorted(ids)
    assert len(set(joined)) == len(ids)
    assert len(parts["train"]) == 28
    assert split(corpus, (0.7, 0.15, 0.15)) == parts


def test_split_rejects_bad_ratios():
    _, _, corpus = _small(num_utts=5)
    with pytest.raises(ValueError):
        split(corpus, (0.5, 0.2, 0.2))


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(num_utts=0)
    with pytest.raises(ValueError):
        CorpusSpec(utt_len_range=(5, 3))
    with pytest.raises(ValueError):
        CorpusSpec(sub_rate=0.6, del_rate=0.3, ins_rate=0.2)


def test_tag_codes_round_trip():
    _, _, corpus = _small(num_utts=60)
    for u in corpus.utterances:
        codes = tags_to_codes(u.tags)
        back = codes_to_tags(codes, len(u.canonical))
        assert back.positions.tolist() == u.tags.positions.tolist()
        assert back.types == u.tags.types
        assert back.realized == u.tags.realized
        assert back.final_insertion == u.tags.final_insertion


def test_feature_file_round_trip(tmp_path):
    # storage narrows to little-endian float32; the read side widens back
    rng = np.random.default_rng(0)
    x = rng.standard_normal((17, 6))
    path = tmp_path / "feat.bin"
    write_features(path, x)
    back = read_features(path)
    assert back.dtype == np.float64
    assert back.tobytes() == x.astype("<f4").astype(np.float64).tobytes()


def test_truncated_feature_file_rejected(tmp_path):
    path = tmp_path / "feat.bin"
    write_features(path, np.zeros((4, 3)))
    data = path.read_bytes()
    path.write_bytes(data[:-2])
    with pytest.raises(ValueError):
        read_features(path)


def test_corpus_round_trip(tmp_path):
    vocab, spec, corpus = _small(num_utts=12)
    write_corpus(corpus, tmp_path, (0.5, 0.25, 0.25))

    manifest = load_manifest(tmp_path)
    assert len(manifest) == 12
    vocab2 = load_vocab(tmp_path / "vocab.json")
    assert vocab2.phonemes == vocab.phonemes
    assert vocab2.centers.tobytes() == vocab.centers.tobytes()

    splits = json.loads((tmp_path / "splits.json").read_text())
    assert sorted(splits) == ["test", "train", "val"]
    assert splits == split(corpus, (0.5, 0.25, 0.25))

    for rec, u in zip(manifest, corpus.utterances):
        assert rec["id"] == u.id
        assert rec["canonical"] == u.canonical
        assert rec["perceived"] == u.perceived
        assert (rec["num_frames"], rec["dim"]) == u.frames.shape
        assert rec["tags"].apply(u.canonical) == u.perceived
        want = u.frames.astype("<f4").astype(np.float64)
        assert rec["frames"].tobytes() == want.tobytes()


def test_by_id_lookup():
    _, _, corpus = _small(num_utts=3)
    assert corpus.by_id("utt00001").id == "utt00001"
    with pytest.raises(KeyError):
        corpus.by_id("nope")
