"""Command-line interface.

    mddkit <command> --config <path> [--set key=value ...]

Commands: synth, train, decode, score, sweep-lambda, dump-alignment,
gradcheck. Every command is deterministic under a fixed config seed;
the MDDKIT_SEED environment variable overrides the config seed. Exit
codes: 0 success, 2 config errors, 3 data errors, 4 check failures.
All diagnostics go to stderr; files and stdout carry no timestamps so
reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_model
from .config import ConfigError, RunConfig, load_config
from .corpus import BLANK_ID, generate, write_corpus
from .decoding import ctc_greedy, ottc_greedy
from .gradcheck import gradcheck_suite
from .mdd_eval import TranscriptTriple, corpus_score
from .ot_align import posterior_grid, frame_weights, solve_coupling, uniform_label_weights
from .training import (STAGES, DataError, decode_corpus, load_training_data,
                       run_stage, score_triples)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

DECODE_MODES = ("ctc-greedy", "ottc-greedy", "joint-beam")

_DEFAULT_CKPT = {
    "ctc-greedy": "ctc-joint-best.ckpt",
    "ottc-greedy": "crottc-am-best.ckpt",
    "joint-beam": "if-finetune-best.ckpt",
}


class CheckFailure(RuntimeError):
    """A verification command found a failing check."""


def _load_ckpt(cfg: RunConfig, arg: str | None, mode: str):
    path = Path(arg) if arg else cfg.paths.checkpoints_dir() / _DEFAULT_CKPT[mode]
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist; train the "
                        f"matching stage first or pass --checkpoint")
    try:
        model, extra, _ = load_model(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot load {path}: {exc}") from exc
    if mode == "joint-beam" and extra.get("stage") == "crottc-am":
        raise DataError(f"{path} holds an encoder-only training stage; its "
                        f"decoder was never trained, so joint-beam decoding "
                        f"is rejected")
    return model, extra


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg: RunConfig, args) -> int:
    vocab = cfg.make_vocab()
    corpus = generate(vocab, cfg.corpus_spec())
    outdir = cfg.paths.resolved_corpus_dir()
    write_corpus(corpus, outdir, tuple(cfg.corpus.split_ratios))
    print(f"wrote {len(corpus.utterances)} utterances to {outdir}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    res = run_stage(cfg, args.stage, resume=args.resume)
    print(f"stage {res.stage}: {res.epochs_run} epochs, best validation F1 "
          f"{res.best_f1:.4g}")
    print(f"best checkpoint: {res.best_path}")
    print(f"epoch log: {res.csv_path}")
    return EXIT_OK


def _beam_cfg_or_config_error(cfg: RunConfig, lam):
    try:
        return cfg.beam_cfg(lam=lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_decode(cfg: RunConfig, args) -> int:
    data = load_training_data(cfg)
    recs = data.records(args.split)
    model, _ = _load_ckpt(cfg, args.checkpoint, args.mode)
    beam = _beam_cfg_or_config_error(cfg, args.lam)
    preds = decode_corpus(model, recs, data.vocab, args.mode, beam)
    out = Path(args.out) if args.out else \
        cfg.paths.decodes_dir() / f"{args.mode}-{args.split}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for p in preds:
            fh.write(json.dumps({
                "id": p["id"],
                "mode": args.mode,
                "tokens": p["pred_syms"],
                "token_ids": p["pred_ids"],
                "lam": p.get("lam"),
                "am_logprob": p.get("am"),
                "lm_logprob": p.get("lm"),
                "combined": p.get("combined"),
                "terminated": p.get("terminated"),
            }, sort_keys=True) + "\n")
    print(f"wrote {len(preds)} predictions to {out}")
    return EXIT_OK


def _read_predictions(path: Path) -> dict[str, list[str]]:
    preds = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                preds[rec["id"]] = list(rec["tokens"])
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{line_no}: bad prediction record: "
                                f"{exc}") from exc
    return preds


def cmd_score(cfg: RunConfig, args) -> int:
    data = load_training_data(cfg)
    recs = data.records(args.split)
    preds = _read_predictions(Path(args.predictions))
    known = {r["id"] for r in recs}
    unknown = sorted(set(preds) - known)
    for utt_id in unknown:
        log.error("prediction id %s is not in split %s; skipped",
                  utt_id, args.split)
    missing = sorted(known - set(preds))
    for utt_id in missing:
        log.warning("no prediction for %s; scored as all-accepted "
                    "(predicted := canonical)", utt_id)
    triples = []
    for rec in recs:
        predicted = preds.get(rec["id"], list(rec["canonical"]))
        triples.append(TranscriptTriple(
            canonical=rec["canonical"], perceived=rec["perceived"],
            tags=rec["tags"], predicted=predicted, id=rec["id"]))
    result = corpus_score(triples)
    payload = {
        "metrics": result.report.as_dict(),
        "counts": result.counts.as_dict(),
        "num_utterances": len(triples) - len(result.skipped),
        "missing_predictions": missing,
        "unknown_prediction_ids": unknown,
        "skipped_utterances": result.skipped,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    return EXIT_DATA if (unknown or missing) else EXIT_OK


def _parse_lambdas(raw: str | None, cfg: RunConfig) -> list[float]:
    if raw is None:
        values = [float(x) for x in cfg.beam.sweep_lambdas]
    else:
        try:
            values = [float(x) for x in raw.split(",") if x.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"bad --lambdas value {raw!r}: {exc}") from exc
    if not values:
        raise ConfigError("lambda grid is empty")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"lambda {v} outside [0, 1]")
    out, seen = [], set()
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def cmd_sweep_lambda(cfg: RunConfig, args) -> int:
    data = load_training_data(cfg)
    recs = data.records(args.split)
    model, _ = _load_ckpt(cfg, args.checkpoint, "joint-beam")
    lambdas = _parse_lambdas(args.lambdas, cfg)
    lines = ["lambda,f1,per"]
    for lam in lambdas:
        beam = _beam_cfg_or_config_error(cfg, lam)
        preds = decode_corpus(model, recs, data.vocab, "joint-beam", beam)
        rep = score_triples(recs, preds).report
        f1 = float("nan") if rep.f1 is None else rep.f1
        per = float("nan") if rep.per is None else rep.per
        lines.append(f"{lam:.12g},{f1:.12g},{per:.12g}")
        log.info("lambda %.3f: F1 %.2f PER %.2f", lam, f1, per)
    out = Path(args.out) if args.out else Path(cfg.paths.workdir) / "sweep-lambda.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lambdas)} sweep rows to {out}")
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            f"{v:.12g}" if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_dump_alignment(cfg: RunConfig, args) -> int:
    data = load_training_data(cfg)
    rec = data.by_id.get(args.utt)
    if rec is None:
        raise DataError(f"utterance {args.utt!r} is not in the manifest")
    ckpt = args.checkpoint or str(cfg.paths.checkpoints_dir() / "if-finetune-best.ckpt")
    model, _ = _load_ckpt(cfg, ckpt, "ctc-greedy")
    vocab = data.vocab

    h_enc, logits, scores = model.encoder(rec["frames"])
    grid = posterior_grid(logits)
    n = grid.n
    argmax = np.argmax(grid.probs.data, axis=1)

    outdir = Path(args.out) if args.out else \
        Path(cfg.paths.workdir) / "dumps" / rec["id"]
    outdir.mkdir(parents=True, exist_ok=True)

    symbols = list(vocab.symbols)
    rows = []
    for i in range(n):
        rows.append([i] + [float(v) for v in grid.probs.data[i]]
                    + [symbols[int(argmax[i])]])
    _write_csv(outdir / "posteriors.csv", ["frame"] + symbols + ["argmax"], rows)

    alpha = frame_weights(scores)
    m = len(rec["perceived_ids"])
    plan = solve_coupling(alpha, uniform_label_weights(m))
    gamma = plan.gamma
    header = ["frame", "alpha"] + [f"{j}:{tok}" for j, tok in enumerate(rec["perceived"])]
    rows = [[i, float(alpha.alpha.data[i])] + [float(v) for v in gamma[i]]
            for i in range(n)]
    _write_csv(outdir / "gamma.csv", header, rows)

    if model.teacher is not None:
        prefix = [model.dec_cfg.bos_id] + rec["perceived_ids"]
        h_dec, _ = model.decoder.forward_hidden(h_enc, prefix)
        _, _, maps = model.teacher(h_enc, h_dec, rec["canonical_ids"])
        for branch in ("enc", "dec"):
            attn = maps[branch].data
            header = ["canonical"] + [str(k) for k in range(attn.shape[1])]
            rows = [[rec["canonical"][q]] + [float(v) for v in attn[q]]
                    for q in range(attn.shape[0])]
            _write_csv(outdir / f"attention-{branch}.csv", header, rows)

    summary = {
        "id": rec["id"],
        "num_frames": n,
        "blank_argmax_share": float(np.mean(argmax == BLANK_ID)),
        "ctc_collapse": vocab.to_syms(ctc_greedy(grid)),
        "ottc_collapse": vocab.to_syms(ottc_greedy(grid)),
    }
    (outdir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote alignment dump to {outdir}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    rows = gradcheck_suite(seed=cfg.seed, instances=args.instances,
                           sign_flip=args.inject_bug)
    width = max(len(r.name) for r in rows)
    print(f"{'loss'.ljust(width)}  max_rel_err  status")
    failed = []
    for r in rows:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {r.max_rel_err:.3e}    {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        raise CheckFailure(f"gradient checks failed: {', '.join(failed)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mddkit",
        description="Desk-scale mispronunciation detection training and "
                    "evaluation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults apply "
                                        "when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set beam.lam=0.5")
        p.add_argument("--verbose", action="store_true",
                       help="log progress details to stderr")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", required=True, choices=STAGES)
    p.add_argument("--resume", action="store_true",
                   help="continue from the stage's last checkpoint")

    p = sub.add_parser("decode", help="decode a corpus split")
    common(p)
    p.add_argument("--mode", required=True, choices=DECODE_MODES)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--checkpoint", help="model checkpoint (defaults to the "
                                        "matching stage's best)")
    p.add_argument("--lam", type=float, default=None,
                   help="AM/LM interpolation weight for joint-beam")
    p.add_argument("--out", help="output JSONL path")

    p = sub.add_parser("score", help="score predictions against the manifest")
    common(p)
    p.add_argument("--predictions", required=True, help="predictions JSONL")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="also write the JSON report here")

    p = sub.add_parser("sweep-lambda", help="decode+score across lambda values")
    common(p)
    p.add_argument("--lambdas", help="comma-separated grid, e.g. 0,0.5,0.9 "
                                     "(default from beam.sweep_lambdas)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--checkpoint", help="joint model checkpoint")
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("dump-alignment",
                       help="dump posterior grid, coupling, and attention")
    common(p)
    p.add_argument("--utt", required=True, help="utterance id")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)
    p.add_argument("--instances", type=int, default=10,
                   help="random instances per loss")
    p.add_argument("--inject-bug", action="store_true",
                   help="negate one analytic gradient to prove the harness "
                        "catches it")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "decode": cmd_decode,
    "score": cmd_score,
    "sweep-lambda": cmd_sweep_lambda,
    "dump-alignment": cmd_dump_alignment,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr)
    try:
        cfg = load_config(args.config, overrides=args.set)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
