import subprocess
import sys

import numpy as np
import pytest

from sdtwsv import cli
from sdtwsv.embedseq import EmbeddingSequence, read_directory, write_sequence
from sdtwsv.evaluation import condition_report
from sdtwsv.metric import load_plda
from sdtwsv.synth import SPEC_DEFAULTS, write_generator_spec
from sdtwsv.verify import read_scores, read_trials

SMALL = dict(SPEC_DEFAULTS, n_speakers=30, dim=8, seq_length=30, trials_per_class=20,
             n_train_speakers=40, seed=17)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_generator_spec(SMALL, d / "gen.txt")
    assert cli.main(["synth-gen", "--spec", str(d / "gen.txt"), "--out", str(d / "data")]) == 0
    assert cli.main(["plda-train", "--sequences", str(d / "data/sequences"),
                     "--labels", str(d / "data/labels.tsv"), "--out", str(d / "m.plda"), "--no-lda"]) == 0
    return d


def _score(d, out, *extra):
    return cli.main(["score", "--trials", str(d / "data/trials.tsv"), "--sequences", str(d / "data/sequences"),
                     "--out", str(out), *extra])


def test_synth_gen_outputs(run_dir):
    data = run_dir / "data"
    trials = read_trials(data / "trials.tsv")
    assert len(trials) == 40
    seqs = read_directory(data / "sequences")
    assert len(seqs) == 80 + 40 * 2
    assert (data / "generator.txt").read_text().startswith("# rng: ")


def test_synth_gen_byte_identical(run_dir, tmp_path):
    assert cli.main(["synth-gen", "--spec", str(run_dir / "gen.txt"), "--out", str(tmp_path)]) == 0
    for name in ("trials.tsv", "labels.tsv", "sequences/t00003t.eseq", "sequences/train00001u001.eseq"):
        assert (tmp_path / name).read_bytes() == (run_dir / "data" / name).read_bytes()


def test_plda_model_file(run_dir):
    model = load_plda(run_dir / "m.plda")
    assert model.dim == 8 and model.chain.lda_projection is None


def test_score_paper_configuration(run_dir):
    out = run_dir / "sdtw_plda.tsv"
    assert _score(run_dir, out, "--method", "sdtw", "--metric", "plda", "--model", str(run_dir / "m.plda"),
                  "-R", "1", "-L", "30") == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 40 and len(rows[0].split("\t")) == 4


def test_threads_do_not_change_bytes(run_dir, tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert _score(run_dir, a, "-R", "1", "-L", "10", "--threads", "1") == 0
    assert _score(run_dir, b, "-R", "1", "-L", "10", "--threads", "3") == 0
    assert a.read_bytes() == b.read_bytes()


def test_fuse_fixed_point(run_dir, tmp_path):
    src = tmp_path / "s.tsv"
    assert _score(run_dir, src, "--method", "mean") == 0
    out = tmp_path / "f.tsv"
    assert cli.main(["fuse", "--a", str(src), "--b", str(src), "--weight", "0.5", "--out", str(out)]) == 0
    assert out.read_bytes() == src.read_bytes()


def test_eval_matches_library(run_dir, tmp_path):
    src = tmp_path / "s.tsv"
    assert _score(run_dir, src, "-R", "2", "-L", "5", "--agg", "lowest_k", "-K", "3") == 0
    rep = tmp_path / "rep.tsv"
    assert cli.main(["eval", "--scores", str(src), "--trials", str(run_dir / "data/trials.tsv"),
                     "--out", str(rep)]) == 0
    trials = read_trials(run_dir / "data/trials.tsv")
    direct = condition_report(read_scores(src, trials))
    assert rep.read_text() == direct.to_tsv()


def test_sweep_and_align(run_dir, tmp_path, capsys):
    out = tmp_path / "sweep.tsv"
    assert cli.main(["sweep", "--trials", str(run_dir / "data/trials.tsv"),
                     "--sequences", str(run_dir / "data/sequences"), "--model", str(run_dir / "m.plda"),
                     "-R", "1,2", "-L", "5,10", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 2 * 2 * 2
    seqdir = run_dir / "data/sequences"
    assert cli.main(["align", "--enrol", str(seqdir / "t00000e.eseq"), "--test", str(seqdir / "t00000t.eseq"),
                     "-R", "1", "-L", "10"]) == 0
    dump = capsys.readouterr().out.splitlines()
    assert len(dump) == 1 + 1 + 29 // 3 + 29 // 3


@pytest.mark.parametrize("argv, code", [
    (["score", "--trials", "missing.tsv", "--sequences", ".", "--out", "x"], cli.EXIT_MISSING),
    (["align", "--enrol", "nope.eseq", "--test", "nope.eseq"], cli.EXIT_MISSING),
])
def test_missing_files(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == code


def test_flag_errors(run_dir, tmp_path):
    assert _score(run_dir, tmp_path / "x", "--metric", "plda") == cli.EXIT_FLAGS
    assert _score(run_dir, tmp_path / "x", "--agg", "lowest_k") == cli.EXIT_FLAGS
    assert _score(run_dir, tmp_path / "x", "--method", "mean", "-L", "3") == cli.EXIT_FLAGS
    assert _score(run_dir, tmp_path / "x", "--model", str(run_dir / "m.plda")) == cli.EXIT_FLAGS
    with pytest.raises(SystemExit) as exc:
        cli.main(["score", "--bogus"])
    assert exc.value.code == cli.EXIT_USAGE


def test_malformed_inputs(tmp_path):
    bad = tmp_path / "bad.eseq"
    bad.write_bytes(b"ESEQ\x01")
    good = tmp_path / "good.eseq"
    write_sequence(EmbeddingSequence("g", np.ones((3, 2))), good)
    assert cli.main(["align", "--enrol", str(bad), "--test", str(good)]) == cli.EXIT_FORMAT
    (tmp_path / "s.tsv").write_text("a\tb\tnot-a-number\t0\n")
    assert cli.main(["fuse", "--a", str(tmp_path / "s.tsv"), "--b", str(tmp_path / "s.tsv"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_FORMAT


def test_threads_env_default(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    args = cli.build_parser().parse_args(["score", "--trials", "t", "--sequences", "s", "--out", "o"])
    assert args.threads == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sdtwsv.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth-gen" in proc.stdout
