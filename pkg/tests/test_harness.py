import json

import numpy as np
import pytest

from ftilm.errors import InvalidInputError, TrainingDivergedError
from ftilm.factorization import FusionWeights
from ftilm.harness import cli
from ftilm.harness import train as train_mod
from ftilm.harness.config import RunConfig, load_config, stream
from ftilm.harness.data import ToyCorpus, gen_data, nearest_prototype_accuracy, rare_frequency
from ftilm.harness.metrics import count_errors, evaluate, score_transcripts, sweep
from ftilm.harness.model import ToyFTModel
from ftilm.harness.train import check_batch_bounds, init_model, mwer_finetune, pretrain_ilm, train_ft
from ftilm.mwer import word_edit_distance

SMALL = dict(n_train=40, rare_threshold=0.1, n_dev=12, n_adapt=8, n_text=300, lm_steps=30, ft_epochs=2, mwer_epochs=1,
             alpha_grid=(1.0, 0.6), beta_grid=(0.0, 0.6))


@pytest.fixture(scope="module")
def small():
    cfg = RunConfig(**SMALL)
    corpus = gen_data(cfg)
    ilm, _ = pretrain_ilm(corpus, cfg)
    trained = train_ft(init_model(ilm, cfg), corpus, cfg)
    return cfg, corpus, trained.model


# config

def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 7\nnoise=0.25  # trailing\ntrain_band = yes\nbeta_grid = 0.1, 0.2\n\n")
    cfg = load_config(path, beam_size="3")
    assert (cfg.seed, cfg.noise, cfg.train_band, cfg.beta_grid, cfg.beam_size) == (7, 0.25, True, (0.1, 0.2), 3)


def test_config_text_round_trip(tmp_path):
    cfg = RunConfig(seed=3, alpha_grid=(0.5,), train_band=True)
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", ["nonsense = 1\n", "seed\n", "seed = x\n", "train_band = maybe\n", "beta_grid =\n"])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(InvalidInputError):
        load_config(path)


def test_streams_are_independent_and_reproducible():
    a = stream(0, "data").standard_normal(4)
    assert np.array_equal(a, stream(0, "data").standard_normal(4))
    assert not np.array_equal(a, stream(0, "init").standard_normal(4))
    assert not np.array_equal(a, stream(1, "data").standard_normal(4))


# data

def test_gen_data_byte_identical(tmp_path):
    cfg = RunConfig(**SMALL)
    gen_data(cfg).save(tmp_path / "a")
    gen_data(cfg).save(tmp_path / "b")
    for name in ("corpus.jsonl", "text.txt", "vocab.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corpus_invariants():
    corpus = gen_data(RunConfig(**SMALL))
    assert rare_frequency(corpus, "train") < SMALL["rare_threshold"]
    assert rare_frequency(corpus, "dev") > rare_frequency(corpus, "train")
    for u in corpus.utterances:
        assert list(u.alignment) == sorted(u.alignment)
        assert all(0 <= a < u.num_frames for a in u.alignment)
        corpus.vocab.encode(u.words)
    assert corpus.vocab.blank_id not in range(corpus.vocab.size)


def test_corpus_round_trip(tmp_path):
    corpus = gen_data(RunConfig(**SMALL))
    corpus.save(tmp_path)
    back = ToyCorpus.load(tmp_path)
    assert back.vocab == corpus.vocab and back.text == corpus.text
    for name, utts in corpus.splits.items():
        for u, v in zip(utts, back.split(name)):
            assert np.array_equal(u.features, v.features)
            assert (u.words, u.alignment) == (v.words, v.alignment)


def test_noise_free_frames_are_separable():
    corpus = gen_data(RunConfig(**{**SMALL, "noise": 0.0}))
    assert nearest_prototype_accuracy(corpus, "train") == 1.0


def test_vocabulary_too_small():
    with pytest.raises(InvalidInputError):
        gen_data(RunConfig(n_common=5, n_rare=3))


def test_rare_threshold_enforced():
    with pytest.raises(InvalidInputError):
        gen_data(RunConfig(**{**SMALL, "rare_prob_paired": 0.9}))


# model

def test_branch_independence(small):
    cfg, corpus, model = small
    u, v = corpus.split("dev")[:2]
    f1, f2 = model.forward(u.features), model.forward(v.features)
    t1, t2 = corpus.vocab.encode(u.words), corpus.vocab.encode(v.words)
    # acoustic logits do not see the label history; ILM logits do not see the audio
    assert np.array_equal(model.ft_scores(f1, t1).am_logits, model.ft_scores(f1, t2).am_logits)
    assert np.array_equal(model.ft_scores(f1, t1).ilm_logits, model.ft_scores(f2, t1).ilm_logits)


def test_checkpoint_round_trip(small, tmp_path):
    _, _, model = small
    model.save(tmp_path / "m.npz")
    back = ToyFTModel.load(tmp_path / "m.npz")
    assert back.param_hash() == model.param_hash()
    assert back.ilm.param_hash() == model.ilm.param_hash()
    for k in model.param_names:
        assert np.array_equal(back.params[k], model.params[k])


def test_checkpoint_rejects_other_files(tmp_path):
    np.savez(tmp_path / "x.npz", format=np.array("something"), version=np.array(1))
    with pytest.raises(InvalidInputError):
        ToyFTModel.load(tmp_path / "x.npz")


# training

def test_zero_epochs_is_identity(small):
    cfg, corpus, model = small
    assert train_ft(model, corpus, cfg, epochs=0).model.param_hash() == model.param_hash()


def test_training_keeps_ilm_frozen_and_reduces_loss():
    cfg = RunConfig(**{**SMALL, "ft_epochs": 6})
    corpus = gen_data(cfg)
    ilm, _ = pretrain_ilm(corpus, cfg)
    before = ilm.param_hash()
    res = train_ft(init_model(ilm, cfg), corpus, cfg)
    assert res.model.ilm.param_hash() == before
    k = len(res.losses) // 4
    assert np.mean(res.losses[-k:]) < np.mean(res.losses[:k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts(small):
    cfg, corpus, model = small
    broken = model.copy()
    broken.params["w_am"] = broken.params["w_am"].copy()
    broken.params["w_am"][0, 0] = np.nan
    with pytest.raises((TrainingDivergedError, InvalidInputError)):
        train_ft(broken, corpus, cfg, epochs=1)


def test_banded_training_runs(small):
    cfg, corpus, model = small
    res = train_ft(model, corpus, cfg.replace(train_band=True, left_context=2, right_context=2), epochs=1)
    assert all(np.isfinite(res.losses))


# metrics

def test_wer_examples():
    assert score_transcripts([("u", ["a", "b"], ["a", "b"])], set()).wer == 0.0
    res = score_transcripts([("u", "a x c".split(), "a b c".split())], set())
    assert res.wer == pytest.approx(1 / 3)


def test_rare_wer_hand_counted():
    R = {"R", "Q"}
    data = [
        ("a R b", "a R b"),      # 0 rare errors, 1 rare word
        ("a b", "a R b"),        # deletion of R
        ("a X b", "a R b"),      # substitution of R
        ("a R R b", "a R b"),    # insertion only: not a rare error
        ("Q", "Q"),              # correct
        ("", "Q R"),             # two deletions
        ("a b c", "a b c"),      # no rare words
        ("R a", "a R"),          # R inserted then R deleted
        ("Q b", "R b"),          # rare substituted by rare
        ("a", "a Q a"),          # deletions: one rare, one common
    ]
    pairs = [(str(i), h.split(), r.split()) for i, (h, r) in enumerate(data)]
    res = score_transcripts(pairs, R)
    assert res.counts.rare_words == 10
    assert res.counts.rare_errors == 7
    assert res.rare_wer == pytest.approx(7 / 10)
    total = sum(word_edit_distance(h, r) for _, h, r in pairs) / sum(len(r) for _, _, r in pairs)
    assert res.wer == total


def test_count_errors_insertions_not_rare():
    c = count_errors(["R", "a"], ["a"], {"R"})
    assert (c.edits, c.rare_errors, c.rare_words) == (1, 0, 0)


def test_evaluate_matches_independent_recount(small):
    cfg, corpus, model = small
    res = evaluate(model, corpus.split("dev"), corpus.vocab, cfg.decode_config())
    edits = sum(word_edit_distance(r["hyp"], r["ref"]) for r in res.records)
    assert res.wer == edits / sum(len(r["ref"]) for r in res.records)


def test_evaluate_empty_split(small):
    cfg, corpus, model = small
    with pytest.raises(InvalidInputError):
        evaluate(model, [], corpus.vocab, cfg.decode_config())


def test_sweep_single_point_is_standard_decode(small):
    cfg, corpus, model = small
    table = sweep(model, corpus, cfg.replace(alpha_grid=(1.0,), beta_grid=(0.0,)))
    std = evaluate(model, corpus.split("dev"), corpus.vocab, cfg.decode_config(FusionWeights(1.0, 0.0)))
    assert table.rows[0]["wer"] == std.wer and table.rows[0]["argmin"]


def test_sweep_table(small):
    cfg, corpus, model = small
    table = sweep(model, corpus, cfg.replace(alpha_grid=(1.0, 0.6), beta_grid=(0.0, 0.6)))
    assert {(r["alpha"], r["beta"]) for r in table.rows} >= {(1.0, 0.0), (0.6, 0.6)}
    assert sum(r["argmin"] for r in table.rows) == 1
    assert table.argmin["wer"] <= table.row(1.0, 0.0)["wer"]


# MWER finetuning

def test_mwer_zero_lr_is_identity(small):
    cfg, corpus, model = small
    res = mwer_finetune(model, corpus, cfg.replace(mwer_lr=0.0, ft_momentum=0.0), FusionWeights(0.6, 0.6))
    assert res.model.param_hash() == model.param_hash()
    assert res.before == res.after


def test_mwer_batch_losses_bounded(small):
    cfg, corpus, model = small
    bounds = check_batch_bounds(model, corpus, cfg, FusionWeights(0.6, 0.6))
    assert bounds
    for loss, lo, hi in bounds:
        assert np.isfinite(loss) and lo - 1e-12 <= loss <= hi + 1e-12


def test_mwer_keeps_ilm_frozen(small):
    cfg, corpus, model = small
    res = mwer_finetune(model, corpus, cfg, FusionWeights(0.6, 0.6))
    assert res.model.ilm.param_hash() == model.ilm.param_hash()
    assert all(np.isfinite(res.batch_losses))


def test_mwer_skips_empty_nbest(small, monkeypatch):
    cfg, corpus, model = small
    monkeypatch.setattr(train_mod, "nbest_items", lambda *a, **k: ([], []))
    res = mwer_finetune(model, corpus, cfg, FusionWeights(0.6, 0.6))
    assert res.skipped == len(corpus.split(cfg.mwer_split)) * cfg.mwer_epochs
    assert res.model.param_hash() == model.param_hash()


# CLI

def test_cli_end_to_end(tmp_path, capsys):
    conf = tmp_path / "small.cfg"
    conf.write_text("".join(f"{k} = {','.join(map(str, v)) if isinstance(v, tuple) else v}\n" for k, v in SMALL.items()))
    base = ["--config", str(conf)]
    assert cli.main(["gen-data", *base, "--out", str(tmp_path / "d")]) == 0
    assert cli.main(["pretrain-ilm", *base, "--data", str(tmp_path / "d"), "--out", str(tmp_path / "ilm.npz")]) == 0
    assert cli.main(["train", *base, "--data", str(tmp_path / "d"), "--ilm", str(tmp_path / "ilm.npz"),
                     "--out", str(tmp_path / "m.npz")]) == 0
    common = [*base, "--data", str(tmp_path / "d"), "--model", str(tmp_path / "m.npz")]
    capsys.readouterr()
    assert cli.main(["evaluate", *common, "--seed", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) >= {"wer", "rare_wer"}
    assert cli.main(["sweep", *common, "--out", str(tmp_path / "sweep.json")]) == 0
    assert json.loads((tmp_path / "sweep.json").read_text())["argmin"]["argmin"] is True
    assert cli.main(["decode", *common, "--out", str(tmp_path / "nbest.jsonl")]) == 0
    lines = (tmp_path / "nbest.jsonl").read_text().splitlines()
    assert len(lines) == SMALL["n_dev"] and "nbest" in json.loads(lines[0])
    assert cli.main(["mwer-finetune", *common, "--out", str(tmp_path / "m2.npz")]) in (0, 1)
    assert (tmp_path / "m2.npz").exists()


def test_cli_bad_input(tmp_path, capsys):
    assert cli.main(["gen-data", "--n-common", "3", "--out", str(tmp_path / "d")]) == 2
    assert cli.main(["evaluate", "--data", str(tmp_path / "missing"), "--model", "x.npz"]) == 2


def test_cli_flags_cover_config():
    parser = cli.build_parser()
    args = parser.parse_args(["oracle-check", "--seed", "4", "--beta-grid", "0.1,0.2"])
    cfg = cli._cfg(args)
    assert cfg.seed == 4 and cfg.beta_grid == (0.1, 0.2)


@pytest.mark.slow
def test_banded_vs_dense_training_greedy_wer():
    cfg = RunConfig()
    corpus = gen_data(cfg)
    ilm, _ = pretrain_ilm(corpus, cfg)
    model = init_model(ilm, cfg)
    dcfg = cfg.decode_config(FusionWeights(1.0, 0.0), beam_size=1)
    wers = []
    for banded in (False, True):
        trained = train_ft(model, corpus, cfg.replace(train_band=banded)).model
        wers.append(evaluate(trained, corpus.split("dev"), corpus.vocab, dcfg).wer)
    assert abs(wers[0] - wers[1]) <= 0.02
