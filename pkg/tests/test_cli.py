"""End-to-end command-line behavior: builders, training, generation,
evaluation, gradient checking, config precedence, and exit codes."""

import json

import numpy as np
import pytest

from catvrnn.cli import main
from catvrnn.data import load_corpus, make_synthetic_corpus, save_corpus
from catvrnn.data import LabeledCorpus, LabeledSentence


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synthetic.tsv"
    code = run_cli(
        "build-data", "--synthetic", "--categories", "2", "--per-category", "30",
        "--vocab-per-category", "10", "--len-range", "3:6", "--seed", "5",
        "--output", str(path),
    )
    assert code == 0
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, synth_corpus_file):
    out = tmp_path_factory.mktemp("run")
    code = run_cli(
        "train", "--corpus", str(synth_corpus_file), "--out", str(out),
        "--epochs", "3", "--batch-size", "16", "--init", "static",
        "--embed-dim", "10", "--hidden-dim", "8", "--latent-dim", "4",
        "--max-len", "7", "--seed", "3",
    )
    assert code == 0
    return out


# --- build-data -----------------------------------------------------------------


def test_build_data_synthetic_manifest(synth_corpus_file):
    manifest = json.loads(
        (synth_corpus_file.parent / "synthetic.tsv.manifest.json").read_text())
    assert manifest["num_sentences"] == 60
    assert manifest["category_counts"] == [30, 30]
    assert manifest["seed"] == 5
    corpus = load_corpus(synth_corpus_file)
    assert len(corpus) == 60


def test_build_data_missing_input_exits_nonzero(tmp_path):
    code = run_cli("build-data", "--input", str(tmp_path / "nope.tsv"),
                   "--output", str(tmp_path / "out.tsv"))
    assert code == 2


def test_build_data_filter_len_matches_scan(tmp_path):
    src = tmp_path / "src.tsv"
    lengths = [3, 15, 22, 30, 31, 9, 16]
    rows = [f"0\t{' '.join(['w'] * n)}" for n in lengths]
    src.write_text("\n".join(rows) + "\n", encoding="utf-8")
    out = tmp_path / "filtered.tsv"
    code = run_cli("build-data", "--input", str(src), "--output", str(out),
                   "--filter-len", "15:30")
    assert code == 0
    manifest = json.loads((tmp_path / "filtered.tsv.manifest.json").read_text())
    assert manifest["num_sentences"] == sum(1 for n in lengths if 15 <= n <= 30)


def test_build_data_icq_variant(tmp_path):
    base = tmp_path / "icq_base.tsv"
    sentences = []
    for cell in range(10):
        for i in range(1000):
            sentences.append(LabeledSentence((f"cell{cell}", f"w{i % 5}"), cell))
    save_corpus(base, LabeledCorpus(sentences=sentences, num_categories=10))
    out = tmp_path / "icq10.tsv"
    code = run_cli("build-data", "--input", str(base), "--variant", "icq-10c",
                   "--output", str(out))
    assert code == 0
    manifest = json.loads((tmp_path / "icq10.tsv.manifest.json").read_text())
    assert manifest["num_categories"] == 10
    assert manifest["category_counts"] == [1000] * 10

    out2 = tmp_path / "icq2.tsv"
    assert run_cli("build-data", "--input", str(base), "--variant", "icq-2c",
                   "--output", str(out2)) == 0
    manifest2 = json.loads((tmp_path / "icq2.tsv.manifest.json").read_text())
    assert manifest2["category_counts"] == [5000, 5000]


def test_build_data_usage_error_exit_code(tmp_path):
    assert run_cli("build-data", "--output", str(tmp_path / "x.tsv")) == 1


# --- train ------------------------------------------------------------------------


def test_train_writes_artifacts(trained_run):
    assert (trained_run / "vocab.txt").exists()
    assert (trained_run / "epoch_0003.ckpt").exists()
    metrics = (trained_run / "metrics.jsonl").read_text().splitlines()
    assert len(metrics) == 3
    config = json.loads((trained_run / "run_config.json").read_text())
    assert config["seed"] == 3
    assert config["model"]["init_mode"] == "static"
    assert config["model"]["static_omega"] == 8.5


def test_train_rejects_overlong_corpus(tmp_path, synth_corpus_file):
    code = run_cli(
        "train", "--corpus", str(synth_corpus_file), "--out", str(tmp_path),
        "--epochs", "1", "--max-len", "3",
        "--embed-dim", "6", "--hidden-dim", "5", "--latent-dim", "3",
    )
    assert code == 2


def test_train_init_none_runs(tmp_path, synth_corpus_file):
    code = run_cli(
        "train", "--corpus", str(synth_corpus_file), "--out", str(tmp_path),
        "--epochs", "1", "--batch-size", "16", "--init", "none",
        "--embed-dim", "8", "--hidden-dim", "6", "--latent-dim", "3",
        "--max-len", "7", "--seed", "0",
    )
    assert code == 0
    config = json.loads((tmp_path / "run_config.json").read_text())
    assert config["model"]["init_mode"] == "none"


# --- generate -----------------------------------------------------------------------


def test_generate_deterministic_and_counted(tmp_path, trained_run, synth_corpus_file):
    ckpt = trained_run / "epoch_0003.ckpt"
    out1 = tmp_path / "gen1.tsv"
    out2 = tmp_path / "gen2.tsv"
    for out in (out1, out2):
        code = run_cli(
            "generate", "--checkpoint", str(ckpt), "--vocab",
            str(trained_run / "vocab.txt"), "--out", str(out),
            "-n", "20", "-c", "0,1", "--seed", "9",
        )
        assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = [l for l in out1.read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 40
    cats = {int(l.split("\t")[0]) for l in lines if "\t" in l}
    assert cats <= {0, 1}


def test_generate_rejects_out_of_range_category(tmp_path, trained_run):
    code = run_cli(
        "generate", "--checkpoint", str(trained_run / "epoch_0003.ckpt"),
        "--vocab", str(trained_run / "vocab.txt"),
        "--out", str(tmp_path / "g.tsv"), "-n", "2", "-c", "5",
    )
    assert code == 1


def test_generate_detects_vocab_mismatch(tmp_path, trained_run):
    other = make_synthetic_corpus(2, 5, 4, (2, 3), seed=99)
    other_path = tmp_path / "other.tsv"
    save_corpus(other_path, other)
    code = run_cli(
        "generate", "--checkpoint", str(trained_run / "epoch_0003.ckpt"),
        "--corpus", str(other_path), "--out", str(tmp_path / "g.tsv"), "-n", "2",
    )
    assert code == 2


def test_generate_missing_checkpoint(tmp_path):
    code = run_cli("generate", "--checkpoint", str(tmp_path / "none.ckpt"),
                   "--vocab", str(tmp_path / "v.txt"),
                   "--out", str(tmp_path / "g.tsv"))
    assert code == 2


# --- evaluate ------------------------------------------------------------------------


def test_evaluate_self_copied_training_set_bleu_f_is_one(tmp_path, synth_corpus_file):
    report_path = tmp_path / "report.json"
    code = run_cli(
        "evaluate", "--corpus", str(synth_corpus_file), "--generated",
        str(synth_corpus_file), "--out", str(report_path),
        "--classifier-epochs", "3", "--seed", "1",
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    for n in ("2", "3", "4", "5"):
        assert report["bleu_f"][n] == pytest.approx(1.0, abs=1e-12)
    assert report["config"]["command_options"]["seed"] == 1
    assert report["perplexity"] is None


def test_evaluate_model_checkpoint_full_report(tmp_path, trained_run, synth_corpus_file):
    report_path = tmp_path / "report.json"
    code = run_cli(
        "evaluate", "--checkpoint", str(trained_run / "epoch_0003.ckpt"),
        "--corpus", str(synth_corpus_file), "--out", str(report_path),
        "--samples", "10", "--classifier-epochs", "3", "--seed", "2",
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["perplexity"] >= 1.0
    assert 0.0 <= report["category_accuracy"] <= 1.0
    assert report["config"]["hidden_dim"] == 8
    assert report["n_samples_per_category"] == 10


def test_evaluate_requires_model_or_generated(tmp_path, synth_corpus_file):
    assert run_cli("evaluate", "--corpus", str(synth_corpus_file)) == 1


# --- grad-check -----------------------------------------------------------------------


def test_grad_check_passes_and_corrupt_fails(capsys):
    assert run_cli("grad-check", "--max-checks", "60") == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "static" in out and "adaptive+kl" in out
    assert run_cli("grad-check", "--max-checks", "40", "--corrupt-backward") == 3


# --- config file precedence ----------------------------------------------------------


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("per-category = 7\nseed = 11\n", encoding="utf-8")
    out = tmp_path / "c.tsv"
    code = run_cli("build-data", "--synthetic", "--config", str(cfg_file),
                   "--seed", "3", "--vocab-per-category", "4",
                   "--len-range", "2:3", "--output", str(out))
    assert code == 0
    printed = capsys.readouterr().out
    assert "seed = 3 (flag)" in printed
    assert "per_category = 7 (file)" in printed
    assert "categories = 2 (default)" in printed
    manifest = json.loads((tmp_path / "c.tsv.manifest.json").read_text())
    assert manifest["category_counts"] == [7, 7]
    assert manifest["seed"] == 3


def test_config_file_unknown_key_is_usage_error(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("not_a_real_option = 1\n", encoding="utf-8")
    code = run_cli("build-data", "--synthetic", "--config", str(cfg_file),
                   "--output", str(tmp_path / "c.tsv"))
    assert code == 1


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == 1


def test_train_numeric_failure_exit_code(tmp_path, synth_corpus_file):
    # an absurd learning rate overflows the parameters into non-finite loss
    old = np.seterr(all="ignore")
    try:
        code = run_cli(
            "train", "--corpus", str(synth_corpus_file), "--out", str(tmp_path),
            "--epochs", "30", "--batch-size", "16", "--lr", "1e200",
            "--embed-dim", "8", "--hidden-dim", "6", "--latent-dim", "3",
            "--max-len", "7", "--seed", "0",
        )
    finally:
        np.seterr(**old)
    assert code == 3


def test_evaluate_memorized_toy_model_perplexity(tmp_path, capsys):
    corpus = tmp_path / "mem.tsv"
    corpus.write_text(
        "0\talpha beta gamma delta\n"
        "0\talpha beta gamma delta\n"
        "1\tred green blue white\n"
        "1\tred green blue white\n", encoding="utf-8")
    run = tmp_path / "run"
    assert run_cli("train", "--corpus", str(corpus), "--out", str(run),
                   "--epochs", "500", "--batch-size", "4", "--lr", "5e-3",
                   "--embed-dim", "12", "--hidden-dim", "12", "--latent-dim",
                   "4", "--max-len", "6", "--seed", "2") == 0
    report_path = tmp_path / "report.json"
    assert run_cli("evaluate", "--checkpoint", str(run / "epoch_0500.ckpt"),
                   "--corpus", str(corpus), "--out", str(report_path),
                   "--samples", "20", "--classifier-epochs", "5",
                   "--seed", "3") == 0
    report = json.loads(report_path.read_text())
    assert report["perplexity"] <= 1.1
    assert report["config"]["command_options"]["samples"] == 20
