import logging

import pytest

from mddkit.config import ConfigError, RunConfig, load_config, parse_overrides


def test_defaults_are_valid():
    cfg = load_config(use_env=False)
    assert cfg.seed == 0
    assert cfg.loss.omega1 == 0.3
    assert cfg.beam.lam == 0.9
    assert cfg.corpus.split_ratios == (0.7, 0.15, 0.15)


def test_file_values_merge_over_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "seed: 11\n"
        "corpus:\n"
        "  num_utts: 50\n"
        "beam:\n"
        "  lam: 0.5\n"
    )
    cfg = load_config(path, use_env=False)
    assert cfg.seed == 11
    assert cfg.corpus.num_utts == 50
    assert cfg.beam.lam == 0.5
    # untouched sections keep their defaults
    assert cfg.model.hidden_dim == RunConfig().model.hidden_dim


def test_empty_file_is_a_valid_run(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_config(path, use_env=False)
    assert cfg.to_dict() == RunConfig().to_dict()


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml", use_env=False)


def test_invalid_yaml_raises(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("corpus: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(path, use_env=False)


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("corps:\n  num_utts: 5\n")
    with pytest.raises(ConfigError, match="unknown config section"):
        load_config(path, use_env=False)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("corpus:\n  num_uttz: 5\n")
    with pytest.raises(ConfigError, match="corpus.num_uttz"):
        load_config(path, use_env=False)


def test_type_mismatches_rejected(tmp_path):
    for body, msg in [
        ("corpus:\n  num_utts: many\n", "integer"),
        ("loss:\n  eta: [1, 2]\n", "number"),
        ("loss:\n  detach_plan: 3\n", "boolean"),
        ("paths:\n  workdir: 7\n", "string"),
        ("corpus:\n  split_ratios: 0.7\n", "list"),
        ("seed: maybe\n", "integer"),
    ]:
        path = tmp_path / "bad.yaml"
        path.write_text(body)
        with pytest.raises(ConfigError, match=msg):
            load_config(path, use_env=False)


def test_parse_overrides_yaml_values():
    payload = parse_overrides(
        ["seed=3", "beam.lam=0.25", "loss.detach_plan=true",
         "corpus.split_ratios=[0.5, 0.25, 0.25]", "paths.workdir=runs/x"]
    )
    assert payload["seed"] == 3
    assert payload["beam"]["lam"] == 0.25
    assert payload["loss"]["detach_plan"] is True
    assert payload["corpus"]["split_ratios"] == [0.5, 0.25, 0.25]
    assert payload["paths"]["workdir"] == "runs/x"


def test_parse_overrides_rejects_malformed():
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["beam.lam"])
    with pytest.raises(ConfigError, match="too many levels"):
        parse_overrides(["a.b.c=1"])


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("beam:\n  lam: 0.5\n")
    cfg = load_config(path, overrides=["beam.lam=0.75"], use_env=False)
    assert cfg.beam.lam == 0.75


def test_seed_env_beats_everything(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 4\n")
    monkeypatch.setenv("MDDKIT_SEED", "99")
    cfg = load_config(path, overrides=["seed=8"])
    assert cfg.seed == 99
    monkeypatch.setenv("MDDKIT_SEED", "4.5")
    with pytest.raises(ConfigError, match="MDDKIT_SEED"):
        load_config(path)


def test_validation_errors_become_config_errors(tmp_path):
    cases = [
        "corpus:\n  split_ratios: [0.5, 0.5, 0.5]\n",
        "train:\n  ctc_joint_epochs: 0\n",
        "train:\n  lr: -1.0\n",
        "model:\n  hidden_dim: 7\n",  # not divisible by num_heads
        "beam:\n  lam: 1.5\n",
        "loss:\n  eta: -0.5\n",
    ]
    for body in cases:
        path = tmp_path / "bad.yaml"
        path.write_text(body)
        with pytest.raises(ConfigError):
            load_config(path, use_env=False)


def test_untouched_omega1_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="mddkit.config"):
        load_config(use_env=False)
    assert any("omega1" in r.message for r in caplog.records)

    caplog.clear()
    path = tmp_path / "run.yaml"
    path.write_text("loss:\n  omega1: 0.5\n")
    with caplog.at_level(logging.WARNING, logger="mddkit.config"):
        cfg = load_config(path, use_env=False)
    assert cfg.loss.omega1 == 0.5
    assert not any("omega1" in r.message for r in caplog.records)


def test_factories_mirror_sections():
    cfg = load_config(overrides=["seed=3", "vocab.num_phonemes=8"], use_env=False)
    vocab = cfg.make_vocab()
    assert vocab.size == len(vocab.phonemes) + 5
    assert len(vocab.phonemes) == 8
    spec = cfg.corpus_spec()
    assert spec.seed == 3
    enc = cfg.encoder_cfg(input_dim=vocab.dim, vocab_size=vocab.size)
    assert enc.vocab_size == vocab.size
    bc = cfg.beam_cfg(lam=0.2)
    assert bc.lam == 0.2
    assert cfg.beam_cfg().lam == cfg.beam.lam
    lw = cfg.loss_weights()
    assert (lw.omega1, lw.omega2, lw.omega3) == (0.3, 1.0, 10.0)


def test_paths_helpers():
    cfg = RunConfig()
    assert cfg.paths.resolved_corpus_dir().name == "corpus"
    cfg.paths.corpus_dir = "elsewhere/data"
    assert str(cfg.paths.resolved_corpus_dir()) == "elsewhere/data"
    assert cfg.paths.checkpoints_dir().parent.name == "default"
