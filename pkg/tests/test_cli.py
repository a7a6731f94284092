import json

import numpy as np
import pytest

from uosrkit.cli import main
from uosrkit.metrics import evaluate
from uosrkit.outcomes import classify_outcomes
from uosrkit.scorers import msp_score, score_logits
from uosrkit.tensorio import load_labels, load_matrix, write_labels, write_matrix


def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return str(path)


@pytest.fixture
def tiny(tmp_path):
    """Two classes; test preds are 0, 1, 0 against labels 0, 1, 1 (InC, InC, InW); one OoD row."""
    files = {
        "test-feats": [[1.0, 0.0], [0.0, 1.0], [1.0, 0.1]],
        "test-logits": [[2.0, 0.0], [0.0, 2.0], [2.0, 0.0]],
        "ood-feats": [[0.5, 0.5]],
        "ood-logits": [[1.0, 1.0]],
    }
    args = []
    for name, data in files.items():
        p = tmp_path / f"{name}.bin"
        write_matrix(np.array(data), p)
        args += [f"--{name}", str(p)]
    p = tmp_path / "test-labels.bin"
    write_labels(np.array([0, 1, 1]), p)
    return args + ["--test-labels", str(p)]


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    cfg = d / "demo.json"
    cfg.write_text(json.dumps({"kind": "fewshot-demo", "params": {"dim": 8, "n_train": 40, "n_test": 40, "n_ood": 20}}))
    assert main(["synth", "--config", str(cfg), "--out", str(d / "b"), "--seed", "2"]) == 0
    files = json.loads((d / "b_manifest.json").read_text())["files"]
    flags = {"train_features": "--train-feats", "train_labels": "--train-labels", "test_features": "--test-feats",
             "test_logits": "--test-logits", "test_labels": "--test-labels", "ood_features": "--ood-feats",
             "ood_logits": "--ood-logits", "ood_class_ids": "--ood-class-ids"}
    args = []
    for field, path in files.items():
        args += [flags[field], path]
    return d, files, args


# MSP uncertainty is 1 - sigmoid(2) for every test row and 0.5 for the OoD row.
# UOSR: InC pair vs {InW tie, OoD win} -> 3/4. AURC risks 0, 0, 1/3, 2/4 -> 208.33.
# AUPR: OoD alone at recall 1/2 (P=1), then the 3-way tie at recall 1 (P=2/4) -> 0.75.
# ECE: one bin, |2/3 - sigmoid(2)| = 0.2141.
GOLDEN = """\
scorer: msp
counts: InC=2 InW=1 OoD=1
Acc.: 66.67
AURC (x1e3): 208.33
AUROC UOSR: 75.00
AUROC OSR: 100.00
AUROC InC/InW: 50.00
AUROC InC/OoD: 100.00
AUROC InW/OoD: 100.00
AUPR UOSR: 75.00
ECE: 0.2141
"""


class TestIngest:
    def test_roundtrip(self, tmp_path, capsys):
        src = write_csv(tmp_path / "m.csv", [[1.5, 2], [3, -4.25]])
        lab = write_csv(tmp_path / "l.csv", [[0], [3]])
        assert main(["ingest", src, str(tmp_path / "m.bin")]) == 0
        assert main(["ingest", lab, str(tmp_path / "l.bin"), "--kind", "labels"]) == 0
        np.testing.assert_array_equal(load_matrix(tmp_path / "m.bin"), np.loadtxt(src, delimiter=","))
        np.testing.assert_array_equal(load_labels(tmp_path / "l.bin"), [0, 3])
        before = (tmp_path / "m.bin").read_bytes()
        main(["ingest", src, str(tmp_path / "m.bin")])
        assert (tmp_path / "m.bin").read_bytes() == before

    def test_missing_file(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.csv")
        assert main(["ingest", missing, str(tmp_path / "o.bin")]) == 1
        assert missing in capsys.readouterr().err

    def test_ragged(self, tmp_path, capsys):
        src = tmp_path / "r.csv"
        src.write_text("1,2\n3,4\n5\n")
        assert main(["ingest", str(src), str(tmp_path / "o.bin")]) == 2
        assert "line 3" in capsys.readouterr().err
        assert not (tmp_path / "o.bin").exists()

    def test_odd_paths(self, tmp_path):
        assert main(["ingest", "a.csv"]) == 2


class TestEval:
    def test_golden_summary(self, tiny, capsys):
        assert main(["eval", *tiny]) == 0
        assert capsys.readouterr().out == GOLDEN

    def test_matches_in_process(self, demo, tmp_path, capsys):
        _, files, args = demo
        out = tmp_path / "r.json"
        assert main(["eval", *args, "--scorer", "energy", "--temperature", "2", "--out", str(out)]) == 0
        logits = np.vstack([load_matrix(files["test_logits"]), load_matrix(files["ood_logits"])])
        n_test = len(load_labels(files["test_labels"]))
        o = classify_outcomes(np.argmax(logits[:n_test], axis=1), load_labels(files["test_labels"]), len(logits) - n_test)
        expected = evaluate(score_logits("energy", logits, 2.0), o, 1 - msp_score(logits, 2.0).scores)
        assert json.loads(out.read_text()) == json.loads(expected.to_json())

    def test_knn_without_train(self, tiny, capsys):
        assert main(["eval", *tiny, "--scorer", "knn"]) == 2
        assert "missing train features" in capsys.readouterr().err

    def test_markdown_row(self, tiny, tmp_path, capsys):
        out = tmp_path / "r.md"
        assert main(["eval", *tiny, "--format", "markdown", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "| Method | Acc. | AURC | UOSR | OSR | InC/InW | InC/OoD | InW/OoD |"
        assert len(lines) == 3
        assert lines[2] == "| msp | 66.67 | 208.33 | 75.00 | 100.00 | 50.00 | 100.00 | 100.00 |"

    def test_config_then_flags(self, tiny, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"scorer": "energy", "bins": 10}))
        main(["eval", *tiny, "--config", str(cfg)])
        assert capsys.readouterr().out.startswith("scorer: energy")
        main(["eval", *tiny, "--config", str(cfg), "--scorer", "msp"])
        assert capsys.readouterr().out.startswith("scorer: msp")

    def test_label_out_of_range(self, tiny, capsys):
        assert main(["eval", *tiny, "--n-classes", "1"]) == 2

    def test_missing_component(self, tiny, capsys):
        i = tiny.index("--ood-feats")
        assert main(["eval", *tiny[:i], *tiny[i + 2:]]) == 2
        assert "missing ood features" in capsys.readouterr().err

    def test_no_partial_output(self, tiny, tmp_path, capsys):
        out = tmp_path / "r.json"
        out.write_text("old")
        assert main(["eval", *tiny, "--scorer", "knn", "--out", str(out)]) == 2
        assert out.read_text() == "old"


class TestFewShot:
    def test_byte_identical(self, demo, tmp_path, capsys):
        _, _, args = demo
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["fewshot", *args, "--shots", "4", "--out", str(a)]) == 0
        assert main(["fewshot", *args, "--shots", "4", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        doc = json.loads(a.read_text())
        assert set(doc["mean"]) == {"msp", "knn", "fsknn", "fsknn+s", "fsknn*s", "fsknns"}
        assert len(doc["per_repeat"]["fsknns"]) == doc["n_repeats"] == 5

    def test_shots_too_large(self, demo, capsys):
        _, _, args = demo
        assert main(["fewshot", *args, "--shots", "21"]) == 2
        assert "shots=21" in capsys.readouterr().err

    def test_single_row(self, demo, tmp_path, capsys):
        _, _, args = demo
        out = tmp_path / "t.md"
        assert main(["fewshot", *args, "--rows", "fsknns", "--format", "markdown", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 3 and lines[2].startswith("| fsknns |")

    def test_unknown_row(self, demo, capsys):
        _, _, args = demo
        assert main(["fewshot", *args, "--rows", "bogus"]) == 2


class TestSweep:
    def test_grid_csv(self, demo, tmp_path, capsys):
        _, _, args = demo
        out = tmp_path / "g.csv"
        assert main(["sweep", *args, "--shots", "4", "--ks", "1,3", "--betas", "0,1", "--format", "csv", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "k,alpha,beta,uosr_auroc,osr_auroc,inc_inw,inc_ood,aurc"
        assert [l.split(",")[:3] for l in lines[1:]] == [["1", "50.0", "0.0"], ["1", "50.0", "1.0"],
                                                         ["3", "50.0", "0.0"], ["3", "50.0", "1.0"]]

    def test_bad_list(self, demo, capsys):
        _, _, args = demo
        assert main(["sweep", *args, "--ks", "a,b"]) == 2


class TestHist:
    def _files(self, tmp_path, scores, codes):
        s, o = tmp_path / "s.bin", tmp_path / "o.bin"
        write_matrix(np.asarray(scores, dtype=float)[:, None], s)
        write_labels(np.asarray(codes), o)
        return ["hist", "--scores", str(s), "--outcomes", str(o)]

    def read(self, path):
        rows = [l.split(",") for l in path.read_text().splitlines()]
        assert rows[0] == ["bin_lo", "bin_hi", "inc", "inw", "ood"]
        return [(float(a), float(b), int(c), int(d), int(e)) for a, b, c, d, e in rows[1:]]

    def test_point_masses(self, tmp_path):
        out = tmp_path / "h.csv"
        args = self._files(tmp_path, [0.0] * 3 + [1.0] * 2 + [2.0] * 4, [0] * 3 + [1] * 2 + [2] * 4)
        assert main([*args, "--bins", "4", "--out", str(out)]) == 0
        rows = self.read(out)
        assert [r[2:] for r in rows] == [(3, 0, 0), (0, 0, 0), (0, 2, 0), (0, 0, 4)]
        assert rows[0][0] == 0.0 and rows[-1][1] == 2.0

    def test_single_bin(self, tmp_path):
        out = tmp_path / "h.csv"
        args = self._files(tmp_path, [0.3, 0.1, 0.7, 0.2], [0, 2, 1, 0])
        assert main([*args, "--bins", "1", "--out", str(out)]) == 0
        assert self.read(out) == [(float(np.float32(0.1)), float(np.float32(0.7)), 2, 1, 1)]

    def test_edges_cover_range(self, tmp_path, rng):
        out = tmp_path / "h.csv"
        s = rng.normal(size=50)
        args = self._files(tmp_path, s, rng.integers(0, 3, size=50))
        main([*args, "--bins", "7", "--out", str(out)])
        rows = self.read(out)
        assert rows[0][0] == float(np.float32(s).min()) and rows[-1][1] == float(np.float32(s).max())
        assert sum(sum(r[2:]) for r in rows) == 50

    def test_bad_codes(self, tmp_path, capsys):
        assert main([*self._files(tmp_path, [0.1], [3])]) == 2


class TestSynth:
    def test_calibration(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"kind": "calibration"}')
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "cal")]) == 0
        manifest = json.loads((tmp_path / "cal_manifest.json").read_text())
        assert len(manifest["files"]) == 5
        for entry in manifest["files"].values():
            assert load_matrix(entry["scores"]).shape == (100, 1)
            assert set(load_labels(entry["outcomes"]).tolist()) == {0, 1}

    def test_bundle_and_determinism(self, tmp_path, capsys):
        cfg = tmp_path / "b.json"
        cfg.write_text(json.dumps({
            "kind": "bundle", "seed": 3,
            "train": [{"n": 4, "center": [1, 0], "spread": 0.1, "class_id": 0},
                      {"n": 4, "center": [0, 1], "spread": 0.1, "class_id": 1}],
            "test_ind": [{"n": 3, "center": [1, 0], "spread": 0.1, "class_id": 0}],
            "ood": [{"n": 2, "center": [-1, -1], "spread": 0.1}],
        }))
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x" / "one")])
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x" / "two")])
        one = json.loads((tmp_path / "x" / "one_manifest.json").read_text())["files"]
        two = json.loads((tmp_path / "x" / "two_manifest.json").read_text())["files"]
        assert {"train_features", "test_features", "test_logits", "test_labels", "ood_features"} <= set(one)
        for k in one:
            assert open(one[k], "rb").read() == open(two[k], "rb").read()

    def test_scores(self, tmp_path, capsys):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"kind": "scores", "inc": {"n": 3, "dist": "point", "params": [0.1]},
                                   "inw": {"n": 2, "params": [0.5, 0.1]}, "ood": {"n": 1, "dist": "beta", "params": [2, 2]}}))
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
        np.testing.assert_array_equal(load_labels(tmp_path / "s_outcomes.bin"), [0, 0, 0, 1, 1, 2])

    @pytest.mark.parametrize("doc", ['{"kind": "mystery"}', '{"kind": "scores"}', '{"kind": "bundle", "train": 3}'])
    def test_bad_spec(self, tmp_path, doc, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(doc)
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 2
