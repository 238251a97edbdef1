import shutil

import numpy as np
import pytest

from octens import BIOMARKERS
from octens import imagepipe as ip
from octens.cli import build_parser, run
from octens.data import LabelMatrix, ScoreMatrix, read_labels, read_scores, write_labels, write_scores
from octens.ensemble import read_weights
from octens.fixture import default_dir

HEADER = "sample_id," + ",".join(BIOMARKERS)


@pytest.fixture
def truth_pair(tmp_path):
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 2, size=(30, 6))
    truth[0], truth[1] = 1, 0
    ids = tuple(f"s{i}" for i in range(30))
    write_scores(tmp_path / "good.csv", ScoreMatrix(ids, truth.astype(float)))
    write_scores(tmp_path / "bad.csv", ScoreMatrix(ids, 1.0 - truth))
    write_labels(tmp_path / "truth.csv", LabelMatrix(ids, truth))
    return tmp_path


class TestEval:
    def test_perfect(self, truth_pair, capsys):
        code = run(["eval", "--pred", str(truth_pair / "good.csv"), "--labels", str(truth_pair / "truth.csv")])
        out = capsys.readouterr().out.splitlines()
        assert code == 0
        assert out[-1] == "macro,1.000000" and len(out) == 7

    def test_malformed_reports_line(self, tmp_path, capsys):
        (tmp_path / "p.csv").write_text(HEADER + "\na,0,0,0,0,0,0\nb,0,0,zero,0,0,0\n")
        (tmp_path / "t.csv").write_text(HEADER + "\na,0,0,0,0,0,0\n")
        assert run(["eval", "--pred", str(tmp_path / "p.csv"), "--labels", str(tmp_path / "t.csv")]) == 1
        assert "p.csv:3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert run(["eval", "--pred", str(tmp_path / "none.csv"), "--labels", str(tmp_path / "x.csv")]) == 2
        assert "none.csv" in capsys.readouterr().err

    def test_dropped_ids_reported(self, truth_pair, tmp_path, capsys):
        (tmp_path / "few.csv").write_text(HEADER + "\ns0,1,1,1,1,1,1\nextra,0,0,0,0,0,0\n")
        assert run(["eval", "--pred", str(tmp_path / "few.csv"), "--labels", str(truth_pair / "truth.csv")]) == 0
        assert "dropped 30" in capsys.readouterr().err


class TestOptimizeCombine:
    def test_truth_and_complement(self, truth_pair, capsys):
        out = truth_pair / "w.csv"
        scores = f"{truth_pair / 'good.csv'},{truth_pair / 'bad.csv'}"
        code = run(["optimize", "--scores", scores, "--labels", str(truth_pair / "truth.csv"), "--out", str(out)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "objective,1.000000"
        assert read_weights(out) == {"good": 0.55, "bad": 0.45}

    def test_coordinate_method_and_two_sets(self, truth_pair, capsys):
        scores = f"{truth_pair / 'good.csv'},{truth_pair / 'bad.csv'}"
        labels = str(truth_pair / "truth.csv")
        code = run(["optimize", "--scores", scores, "--labels", labels, "--scores", scores,
                    "--labels", labels, "--method", "coord", "--out", str(truth_pair / "w.csv")])
        assert code == 0
        assert capsys.readouterr().out.strip() == "objective,1.000000"

    def test_unpaired_lists(self, truth_pair, capsys):
        scores = str(truth_pair / "good.csv")
        code = run(["optimize", "--scores", scores, "--scores", scores,
                    "--labels", str(truth_pair / "truth.csv"), "--out", str(truth_pair / "w.csv")])
        assert code == 1

    def test_combine(self, truth_pair):
        (truth_pair / "w.csv").write_text("branch_id,weight\ngood,3\nbad,1\n")
        code = run(["combine", "--scores", f"{truth_pair / 'good.csv'},{truth_pair / 'bad.csv'}",
                    "--weights", str(truth_pair / "w.csv"), "--out", str(truth_pair / "c.csv"),
                    "--labels-out", str(truth_pair / "l.csv")])
        assert code == 0
        combined = read_scores(truth_pair / "c.csv")
        truth = read_labels(truth_pair / "truth.csv").take(combined.sample_ids)
        np.testing.assert_allclose(combined.values, 0.25 + 0.5 * truth.values, atol=1e-6)
        labels = read_labels(truth_pair / "l.csv")
        assert labels.sample_ids == combined.sample_ids
        np.testing.assert_array_equal(labels.values, truth.values)

    def test_combine_branch_mismatch(self, truth_pair, capsys):
        (truth_pair / "w.csv").write_text("branch_id,weight\ngood,1\nother,1\n")
        code = run(["combine", "--scores", f"{truth_pair / 'good.csv'},{truth_pair / 'bad.csv'}",
                    "--weights", str(truth_pair / "w.csv"), "--out", str(truth_pair / "c.csv")])
        assert code == 1
        assert "do not match" in capsys.readouterr().err


def test_split(tmp_path, capsys):
    rows = [f"s{i},e{i // 3}" for i in range(12)]
    (tmp_path / "m.csv").write_text("sample_id,eye_id\n" + "\n".join(rows) + "\n")
    code = run(["split", "--manifest", str(tmp_path / "m.csv"), "--val-frac", "0.25",
                "--seed", "5", "--out", str(tmp_path / "s.csv")])
    assert code == 0
    assert capsys.readouterr().out.split() == ["train,9", "val,3"]
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "sample_id,split" and len(lines) == 13
    val_eyes = {int(line.split(",")[0][1:]) // 3 for line in lines[1:] if line.endswith(",val")}
    assert len(val_eyes) == 1


def test_split_bad_fraction(tmp_path):
    (tmp_path / "m.csv").write_text("sample_id,eye_id\na,e1\nb,e2\n")
    assert run(["split", "--manifest", str(tmp_path / "m.csv"), "--val-frac", "1.5",
                "--seed", "0", "--out", str(tmp_path / "s.csv")]) == 1


@pytest.fixture
def png_dir(tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    rng = np.random.default_rng(1)
    for name in ("a.png", "b.png"):
        img = rng.integers(0, 200, size=(12, 10), dtype=np.uint8)
        img[0, :] = 255
        ip.write_png(src / name, img)
    return src


def test_preprocess(png_dir, tmp_path):
    out = tmp_path / "out"
    assert run(["preprocess", "--in", str(png_dir), "--out", str(out), "--alpha", "1", "--beta", "0"]) == 0
    for name in ("a.png", "b.png"):
        src = ip.read_png(png_dir / name)
        np.testing.assert_array_equal(ip.read_png(out / name), ip.blacken_background(src, 240))


def test_preprocess_bad_alpha(png_dir, tmp_path):
    assert run(["preprocess", "--in", str(png_dir), "--out", str(tmp_path / "o"), "--alpha", "0"]) == 1


def test_augment_reproducible(png_dir, tmp_path):
    (tmp_path / "spec.txt").write_text(
        "crop_fraction = 0.8\nhflip_probability = 0.5\nblur_sigma_range = 0, 1\nseed = 3\n"
    )
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert run(["augment", "--in", str(png_dir), "--out", str(out), "--spec", str(tmp_path / "spec.txt")]) == 0
        outs.append([(out / n).read_bytes() for n in ("a.png", "b.png")])
    assert outs[0] == outs[1]
    assert ip.read_png(tmp_path / "out0" / "a.png").shape == (10, 8)


def test_augment_bad_spec(png_dir, tmp_path, capsys):
    (tmp_path / "spec.txt").write_text("crop_fraction = 2\n")
    code = run(["augment", "--in", str(png_dir), "--out", str(tmp_path / "o"), "--spec", str(tmp_path / "spec.txt")])
    assert code == 1
    assert "crop_fraction" in capsys.readouterr().err
    (tmp_path / "spec.txt").write_text("# comment\nblur_sigma_range = 1\n")
    code = run(["augment", "--in", str(png_dir), "--out", str(tmp_path / "o"), "--spec", str(tmp_path / "spec.txt")])
    assert code == 1
    assert "spec.txt: line 2" in capsys.readouterr().err


def test_blocks_selfcheck(capsys):
    assert run(["blocks", "selfcheck", "--seed", "1", "--size", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


class TestFixtureCommand:
    def test_bundled(self, capsys):
        assert run(["fixture"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") == 4

    def test_weights_not_summing_to_one(self, tmp_path, capsys):
        d = tmp_path / "fx"
        shutil.copytree(default_dir(), d)
        text = (d / "weights.csv").read_text().replace("maxvit_trex_prime,0.45", "maxvit_trex_prime,0.5")
        (d / "weights.csv").write_text(text)
        assert run(["fixture", "--dir", str(d)]) == 1
        out = capsys.readouterr().out
        assert "FAIL weights_sum_to_one" in out and "FLAG" in out

    def test_missing_branch_file(self, tmp_path, capsys):
        d = tmp_path / "fx"
        shutil.copytree(default_dir(), d)
        (d / "branch_maxvit_trex.csv").unlink()
        assert run(["fixture", "--dir", str(d)]) == 2
        assert "branch_maxvit_trex.csv" in capsys.readouterr().err


SUBCOMMAND_FLAGS = {
    ("preprocess",): ["--in", "--out", "--alpha", "--beta", "--bg-threshold"],
    ("augment",): ["--in", "--out", "--spec", "--seed"],
    ("split",): ["--manifest", "--val-frac", "--seed", "--out"],
    ("combine",): ["--scores", "--weights", "--out", "--labels-out", "--threshold"],
    ("optimize",): ["--scores", "--labels", "--step", "--method", "--threshold", "--max-rounds", "--out"],
    ("eval",): ["--pred", "--labels", "--threshold"],
    ("blocks", "selfcheck"): ["--seed", "--size", "--weights"],
    ("fixture",): ["--dir"],
}


@pytest.mark.parametrize("words, flags", SUBCOMMAND_FLAGS.items())
def test_help_lists_flags(words, flags, capsys):
    assert run([*words, "--help"]) == 0
    text = capsys.readouterr().out
    for flag in flags:
        assert flag in text


def test_unknown_flag_and_command(capsys):
    assert run(["eval", "--bogus"]) == 1
    assert run(["frobnicate"]) == 1
    assert run([]) == 1
    assert "usage error" in capsys.readouterr().err


def test_parser_builds():
    assert build_parser().prog == "octens"
