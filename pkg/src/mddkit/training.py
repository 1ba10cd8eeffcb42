"""Three-stage training driver.

Stage ctc-joint trains encoder + decoder with CTC plus teacher-forced
LM cross-entropy. Stage crottc-am trains the encoder alone on the
consistency + transport objective over two augmented views. Stage
if-finetune loads the transport-trained encoder, freezes it, and trains
decoder + teacher under the full weighted objective; the decoder warm
starts from the ctc-joint checkpoint when one exists.

Shuffling and augmentation draw from stateless rngs keyed by
(seed, stage, epoch, utterance), so a resumed run walks the identical
batch sequence and reproduces the uninterrupted loss curve. Each epoch
appends one CSV row (epoch, mean train loss, validation F1, and for
if-finetune the mean attention diagonal distance); an undefined F1 is
recorded as -1. Model selection keeps the checkpoint with the best
validation F1; the "last" checkpoint additionally carries optimizer
state for resuming.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import make_views
from .autodiff import Tensor
from .checkpoint import load_checkpoint, load_model, save_model
from .config import RunConfig
from .corpus import BLANK_ID, EOS_ID, SIL_ID, load_manifest, load_vocab
from .decoding import ctc_greedy, joint_beam_search, ottc_greedy
from .losses import (am_loss, ctc_loss, error_head_losses,
                     guided_attention_loss, lm_loss, total_loss)
from .mdd_eval import TranscriptTriple, corpus_score
from .models import Model
from .optim import Adam
from .ot_align import frame_weights, posterior_grid

__all__ = ["STAGES", "DataError", "StageResult", "run_stage",
           "load_training_data", "decode_corpus", "score_triples"]

log = logging.getLogger(__name__)

STAGES = ("ctc-joint", "crottc-am", "if-finetune")
_STAGE_TAG = {"ctc-joint": 0x31, "crottc-am": 0x32, "if-finetune": 0x33}
_TAG_ORDER = 0x41
_TAG_VIEWS = 0x42

# validation utterances probed for the attention-diagonal metric
_GA_PROBE = 8


class DataError(RuntimeError):
    """Missing or inconsistent on-disk artifacts (corpus, checkpoints)."""


@dataclasses.dataclass
class TrainData:
    vocab: object
    by_id: dict
    splits: dict

    def records(self, split: str) -> list[dict]:
        try:
            ids = self.splits[split]
        except KeyError:
            raise DataError(f"split {split!r} not present in splits.json") from None
        missing = [i for i in ids if i not in self.by_id]
        if missing:
            raise DataError(f"split {split!r} references unknown ids {missing[:4]}")
        return [self.by_id[i] for i in ids]


def load_training_data(cfg: RunConfig) -> TrainData:
    corpus_dir = cfg.paths.resolved_corpus_dir()
    manifest = corpus_dir / "manifest.jsonl"
    if not manifest.exists():
        raise DataError(f"no corpus at {corpus_dir}; run `mddkit synth` first")
    try:
        vocab = load_vocab(corpus_dir / "vocab.json")
        records = load_manifest(corpus_dir)
        with open(corpus_dir / "splits.json") as fh:
            splits = json.load(fh)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"corrupt corpus at {corpus_dir}: {exc}") from exc
    by_id = {}
    for rec in records:
        rec["canonical_ids"] = vocab.to_ids(rec["canonical"])
        rec["perceived_ids"] = vocab.to_ids(rec["perceived"])
        by_id[rec["id"]] = rec
    return TrainData(vocab=vocab, by_id=by_id, splits=splits)


# ---------------------------------------------------------------------------
# per-utterance losses

def _loss_ctc_joint(model: Model, rec: dict, lm_weight: float) -> Tensor:
    h_enc, logits, _ = model.encoder(rec["frames"])
    grid = posterior_grid(logits)
    loss = ctc_loss(grid, rec["perceived_ids"], blank=BLANK_ID)
    prefix = [model.dec_cfg.bos_id] + rec["perceived_ids"]
    dec_logits = model.decoder.forward_full(h_enc, prefix)
    return loss + Tensor(lm_weight) * lm_loss(dec_logits, rec["perceived_ids"],
                                              eos_id=EOS_ID)


def _am_views_loss(model: Model, rec: dict, cfg: RunConfig,
                   rng: np.random.Generator) -> Tensor:
    pair = make_views(rec["frames"], cfg.augment_policy(), rng)
    _, logits_a, scores_a = model.encoder(pair.a)
    _, logits_b, scores_b = model.encoder(pair.b)
    return am_loss(posterior_grid(logits_a), posterior_grid(logits_b),
                   rec["perceived_ids"],
                   frame_weights(scores_a), frame_weights(scores_b),
                   cfg.loss_weights(), detach_plan=cfg.loss.detach_plan)


def _loss_if_finetune(model: Model, rec: dict, cfg: RunConfig,
                      rng: np.random.Generator) -> Tensor:
    w = cfg.loss_weights()
    l_am = _am_views_loss(model, rec, cfg, rng)
    h_enc, _, _ = model.encoder(rec["frames"])
    prefix = [model.dec_cfg.bos_id] + rec["perceived_ids"]
    h_dec, dec_logits = model.decoder.forward_hidden(h_enc, prefix)
    l_lm = lm_loss(dec_logits, rec["perceived_ids"], eos_id=EOS_ID)
    pos_probs, type_probs, maps = model.teacher(h_enc, h_dec, rec["canonical_ids"])
    l_pos, l_type = error_head_losses(pos_probs, type_probs, rec["tags"])
    g = cfg.loss.ga_bandwidth
    l_ga = (guided_attention_loss(maps["enc"], g)
            + guided_attention_loss(maps["dec"], g)) * Tensor(0.5)
    return total_loss(l_am, l_lm, l_pos, l_type, l_ga, w)


# ---------------------------------------------------------------------------
# evaluation helpers

def decode_corpus(model: Model, recs: list[dict], vocab, mode: str,
                  beam_cfg=None) -> list[dict]:
    """Predicted token ids per utterance under the given decode mode."""
    out = []
    for rec in recs:
        h_enc, logits, _ = model.encoder(rec["frames"])
        grid = posterior_grid(logits)
        entry = {"id": rec["id"], "lam": None, "am": None, "lm": None}
        if mode == "ctc-greedy":
            entry["pred_ids"] = ctc_greedy(grid)
        elif mode == "ottc-greedy":
            entry["pred_ids"] = ottc_greedy(grid)
        elif mode == "joint-beam":
            hyps = joint_beam_search(grid, h_enc, model.decoder, beam_cfg)
            best = hyps[0]
            pred = [t for t in best.tokens if t != SIL_ID]
            entry.update({"pred_ids": pred, "lam": beam_cfg.lam,
                          "am": best.am_logprob, "lm": best.lm_logprob,
                          "combined": best.combined,
                          "terminated": best.terminated})
        else:
            raise ValueError(f"unknown decode mode {mode!r}")
        entry["pred_syms"] = vocab.to_syms(entry["pred_ids"])
        out.append(entry)
    return out


def score_triples(recs: list[dict], preds: list[dict]):
    by_id = {p["id"]: p for p in preds}
    triples = []
    for rec in recs:
        p = by_id.get(rec["id"])
        if p is None:
            continue
        triples.append(TranscriptTriple(
            canonical=rec["canonical"], perceived=rec["perceived"],
            tags=rec["tags"], predicted=p["pred_syms"], id=rec["id"]))
    return corpus_score(triples)


def _val_f1(model: Model, recs: list[dict], vocab, stage: str,
            cfg: RunConfig) -> float:
    if stage == "ctc-joint":
        preds = decode_corpus(model, recs, vocab, "ctc-greedy")
    elif stage == "crottc-am":
        preds = decode_corpus(model, recs, vocab, "ottc-greedy")
    else:
        beam = dataclasses.replace(cfg.beam_cfg(),
                                   beam_size=cfg.train.val_beam_size)
        preds = decode_corpus(model, recs, vocab, "joint-beam", beam)
    f1 = score_triples(recs, preds).report.f1
    return -1.0 if f1 is None else float(f1)


def _diag_distance(attn: np.ndarray) -> float:
    """Mean attention-weighted |q/M - k/N|; rows are distributions."""
    M, N = attn.shape
    q = np.arange(M)[:, None] / M
    k = np.arange(N)[None, :] / N
    return float(np.mean(np.sum(attn * np.abs(q - k), axis=1)))


def _ga_probe(model: Model, recs: list[dict]) -> float:
    vals = []
    for rec in recs[:_GA_PROBE]:
        h_enc, _, _ = model.encoder(rec["frames"])
        prefix = [model.dec_cfg.bos_id] + rec["perceived_ids"]
        h_dec, _ = model.decoder.forward_hidden(h_enc, prefix)
        _, _, maps = model.teacher(h_enc, h_dec, rec["canonical_ids"])
        vals.append(_diag_distance(maps["enc"].data))
        vals.append(_diag_distance(maps["dec"].data))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# stage driver

@dataclasses.dataclass
class StageResult:
    stage: str
    epochs_run: int
    best_f1: float
    best_path: Path
    last_path: Path
    csv_path: Path


def _stage_epochs(cfg: RunConfig, stage: str) -> int:
    return {"ctc-joint": cfg.train.ctc_joint_epochs,
            "crottc-am": cfg.train.crottc_am_epochs,
            "if-finetune": cfg.train.if_finetune_epochs}[stage]


def _trainable_prefixes(stage: str) -> tuple[str, ...]:
    return {"ctc-joint": ("enc.", "dec."),
            "crottc-am": ("enc.",),
            "if-finetune": ("dec.", "teach.")}[stage]


def _load_params_from(path: Path, model: Model, prefix: str) -> int:
    """Copy every `prefix`-named parameter of a checkpoint into model."""
    payload = load_checkpoint(path)
    params = model.params()
    copied = 0
    for name, arr in payload["tensors"].items():
        if not name.startswith("param/"):
            continue
        key = name[len("param/"):]
        if not key.startswith(prefix):
            continue
        if key not in params or params[key].data.shape != arr.shape:
            raise DataError(f"{path}: parameter {key!r} does not fit the "
                            f"current model config")
        params[key].data[...] = arr
        copied += 1
    if copied == 0:
        raise DataError(f"{path}: no {prefix}* parameters found")
    return copied


def _fresh_model(cfg: RunConfig, stage: str, vocab, ckpt_dir: Path) -> Model:
    enc_cfg = cfg.encoder_cfg(input_dim=vocab.dim, vocab_size=vocab.size)
    dec_cfg = cfg.decoder_cfg(vocab_size=vocab.size)
    teach_cfg = cfg.teacher_cfg() if stage == "if-finetune" else None
    model = Model(enc_cfg, dec_cfg, teach_cfg, seed=cfg.seed)
    if stage == "if-finetune":
        crottc = ckpt_dir / "crottc-am-best.ckpt"
        if not crottc.exists():
            raise DataError(
                f"if-finetune needs the transport-trained encoder, but "
                f"{crottc} does not exist; run `mddkit train --stage "
                f"crottc-am` first")
        _load_params_from(crottc, model, "enc.")
        warm = ckpt_dir / "ctc-joint-best.ckpt"
        if warm.exists():
            _load_params_from(warm, model, "dec.")
            log.info("decoder warm-started from %s", warm)
        else:
            log.info("no ctc-joint checkpoint found; decoder starts fresh")
    return model


def run_stage(cfg: RunConfig, stage: str, resume: bool = False) -> StageResult:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    data = load_training_data(cfg)
    vocab = data.vocab
    train_recs = data.records("train")
    val_recs = data.records("val")
    if not train_recs:
        raise DataError("train split is empty")

    ckpt_dir = cfg.paths.checkpoints_dir()
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    logs_dir = cfg.paths.logs_dir()
    logs_dir.mkdir(parents=True, exist_ok=True)
    last_path = ckpt_dir / f"{stage}-last.ckpt"
    best_path = ckpt_dir / f"{stage}-best.ckpt"
    csv_path = logs_dir / f"{stage}.csv"
    with_ga = stage == "if-finetune"

    start_epoch = 0
    best_f1 = -1.0
    if resume:
        if not last_path.exists():
            raise DataError(f"cannot resume: {last_path} does not exist")
        model, extra, opt_state = load_model(last_path)
        if extra.get("stage") != stage:
            raise DataError(f"{last_path} holds stage {extra.get('stage')!r}, "
                            f"not {stage!r}")
        start_epoch = int(extra["epoch"])
        best_f1 = float(extra["best_f1"])
        if stage == "if-finetune" and model.teacher is None:
            raise DataError(f"{last_path} has no teacher parameters")
    else:
        model = _fresh_model(cfg, stage, vocab, ckpt_dir)
        opt_state = None

    if stage == "if-finetune":
        for p in model.named_subset("enc.").values():
            p.requires_grad = False

    opt = Adam(model.named_subset(*_trainable_prefixes(stage)), lr=cfg.train.lr)
    if opt_state is not None:
        opt.load_state_dict(opt_state)

    header = "epoch,loss,val_f1" + (",ga_diag" if with_ga else "")
    if resume and csv_path.exists():
        # keep exactly the rows of completed epochs
        lines = csv_path.read_text().splitlines()
        kept = [line for line in lines[:1 + start_epoch]]
        csv_path.write_text("\n".join(kept) + "\n" if kept else "")
        if not kept or kept[0] != header:
            csv_path.write_text(header + "\n")
    else:
        csv_path.write_text(header + "\n")

    tag = _STAGE_TAG[stage]
    epochs = _stage_epochs(cfg, stage)
    lm_weight = cfg.train.stage1_lm_weight
    for epoch in range(start_epoch, epochs):
        order = np.random.default_rng(
            [cfg.seed, tag, _TAG_ORDER, epoch]).permutation(len(train_recs))
        total = 0.0
        counted = 0
        for idx in order:
            rec = train_recs[int(idx)]
            if stage == "ctc-joint":
                loss = _loss_ctc_joint(model, rec, lm_weight)
            else:
                rng = np.random.default_rng(
                    [cfg.seed, tag, _TAG_VIEWS, epoch, int(idx)])
                if stage == "crottc-am":
                    loss = _am_views_loss(model, rec, cfg, rng)
                else:
                    loss = _loss_if_finetune(model, rec, cfg, rng)
            if not np.isfinite(loss.data):
                log.warning("skipping %s: non-finite loss at epoch %d",
                            rec["id"], epoch)
                continue
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += loss.item()
            counted += 1
        mean_loss = total / max(counted, 1)
        val_f1 = _val_f1(model, val_recs, vocab, stage, cfg)
        row = f"{epoch},{mean_loss:.12g},{val_f1:.12g}"
        if with_ga:
            row += f",{_ga_probe(model, val_recs):.12g}"
        with open(csv_path, "a") as fh:
            fh.write(row + "\n")
        if val_f1 > best_f1:
            best_f1 = val_f1
            save_model(best_path, model, kind=stage,
                       extra={"stage": stage, "epoch": epoch + 1,
                              "best_f1": best_f1})
        save_model(last_path, model, kind=stage,
                   extra={"stage": stage, "epoch": epoch + 1,
                          "best_f1": best_f1},
                   optimizer_state=opt.state_dict())
        log.info("%s epoch %d: loss %.6f val F1 %.2f", stage, epoch,
                 mean_loss, val_f1)
    if not best_path.exists():
        # no epoch produced a defined F1; keep the last state as best
        save_model(best_path, model, kind=stage,
                   extra={"stage": stage, "epoch": epochs, "best_f1": best_f1})
    return StageResult(stage=stage, epochs_run=epochs - start_epoch,
                       best_f1=best_f1, best_path=best_path,
                       last_path=last_path, csv_path=csv_path)
