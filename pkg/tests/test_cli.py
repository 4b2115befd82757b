import json
import os

import pytest

from desgsim.cli import (DATA_DIR_ENV, EXIT_DATA, EXIT_OK, EXIT_USAGE, main)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def corpus(tmp_path, capsys):
    path = tmp_path / "corpus.jsonl"
    code, _, _ = run(capsys, "fixtures", "--groups", "6", "--seed", "1",
                     "--variants", "sub,bcf", "--max-blocks", "5",
                     "--out", str(path))
    assert code == EXIT_OK
    return path


class TestFixtures:
    def test_writes_expected_count(self, tmp_path, capsys):
        path = tmp_path / "c.jsonl"
        code, out, _ = run(capsys, "fixtures", "--groups", "3",
                           "--variants", "sub", "--out", str(path))
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["functions"] == 6  # base + one variant per group
        assert "run_config" in report
        assert len(path.read_text().splitlines()) == 6

    def test_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(capsys, "fixtures", "--groups", "2", "--seed", "5", "--out", str(a))
        run(capsys, "fixtures", "--groups", "2", "--seed", "5", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_bad_variant_is_data_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "fixtures", "--groups", "2",
                           "--variants", "upx", "--out", str(tmp_path / "c"))
        assert code == EXIT_DATA
        assert "upx" in err


class TestIngest:
    def test_valid_corpus(self, corpus, capsys):
        code, out, _ = run(capsys, "ingest", str(corpus))
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["functions"] == 18
        assert report["errors"] == []

    def test_schema_error_reported_with_location(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"name": "f"}\n')
        code, out, _ = run(capsys, "ingest", str(path))
        assert code == EXIT_DATA
        report = json.loads(out)
        assert len(report["errors"]) == 1
        assert "bad.jsonl:1" in report["errors"][0]

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "ingest", str(tmp_path / "nope.jsonl"))
        assert code == EXIT_DATA
        assert "nope" in err

    def test_data_dir_env_resolves_relative_paths(self, corpus, capsys,
                                                  monkeypatch):
        monkeypatch.setenv(DATA_DIR_ENV, str(corpus.parent))
        monkeypatch.chdir(corpus.parent.parent)
        code, _, _ = run(capsys, "ingest", corpus.name)
        assert code == EXIT_OK


class TestBuild:
    def test_graphs_and_manifest(self, corpus, tmp_path, capsys):
        out_dir = tmp_path / "graphs"
        code, out, _ = run(capsys, "build", str(corpus), "--out", str(out_dir),
                           "--jobs", "1")
        assert code == EXIT_OK
        assert json.loads(out)["graphs"] == 18
        lines = (out_dir / "manifest.jsonl").read_text().splitlines()
        assert "run_config" in json.loads(lines[0])
        entries = [json.loads(l) for l in lines[1:]]
        assert len(entries) == 18
        for e in entries:
            assert (out_dir / e["path"]).exists()

    def test_rerun_is_byte_identical(self, corpus, tmp_path, capsys):
        d1, d2 = tmp_path / "g1", tmp_path / "g2"
        run(capsys, "build", str(corpus), "--out", str(d1), "--jobs", "1")
        run(capsys, "build", str(corpus), "--out", str(d2), "--jobs", "2")
        for name in sorted(os.listdir(d1)):
            if name.endswith(".desg.json"):
                assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_bad_corpus_is_data_error(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n")
        code, _, _ = run(capsys, "build", str(path), "--out",
                         str(tmp_path / "g"), "--jobs", "1")
        assert code == EXIT_DATA


class TestGed:
    def test_stability_table(self, corpus, tmp_path, capsys):
        out = tmp_path / "ged.jsonl"
        code, text, _ = run(capsys, "ged", str(corpus), "--modes", "bcf",
                            "--out", str(out))
        assert code == EXIT_OK
        lines = text.splitlines()
        assert lines[0].startswith("rep\t(0,50]")
        assert lines[1].startswith("CFG")
        assert lines[2].startswith("D-Tree")
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert "run_config" in rows[0]
        assert all("cfg_ged" in r and "dtree_ged" in r for r in rows[1:])

    def test_no_pairs_is_data_error(self, tmp_path, corpus, capsys):
        code, _, err = run(capsys, "ged", str(corpus), "--modes", "fla")
        assert code == EXIT_DATA
        assert "pairs" in err


class TestPipeline:
    def test_train_embed_search_eval(self, tmp_path, capsys):
        corpus = tmp_path / "c.jsonl"
        run(capsys, "fixtures", "--groups", "12", "--seed", "2",
            "--variants", "sub,bcf", "--max-blocks", "5", "--out", str(corpus))
        ckpt = tmp_path / "model.ckpt"
        code, out, _ = run(capsys, "train", str(corpus), "--out", str(ckpt),
                           "--dim", "8", "--layers", "1", "--heads", "2",
                           "--epochs", "1", "--batch-size", "4",
                           "--log", str(tmp_path / "log.jsonl"))
        assert code == EXIT_OK
        assert json.loads(out)["epochs"] == 1
        assert ckpt.exists()

        emb_out = tmp_path / "emb.jsonl"
        code, out, _ = run(capsys, "embed", str(corpus), "--model", str(ckpt),
                           "--out", str(emb_out))
        assert code == EXIT_OK
        lines = emb_out.read_text().splitlines()
        assert "run_config" in json.loads(lines[0])
        recs = [json.loads(l) for l in lines[1:]]
        assert len(recs) == 36
        assert all(len(r["vec"]) == 8 for r in recs)

        code, out, _ = run(capsys, "search", str(corpus), "--model", str(ckpt),
                           "--pool-sizes", "5,10", "--split", "all")
        assert code == EXIT_OK
        assert out.splitlines()[0] == "pool_size\trecall@1\tmrr"
        assert len(out.splitlines()) == 3

        code, out, _ = run(capsys, "eval", str(corpus), "--model", str(ckpt),
                           "--ratio", "5", "--split", "all")
        assert code == EXIT_OK
        rec = json.loads(out)
        assert rec["task"] == "match"
        assert 0.0 <= rec["pr_auc"] <= 1.0

    def test_missing_model_is_data_error(self, corpus, tmp_path, capsys):
        code, _, _ = run(capsys, "embed", str(corpus), "--model",
                         str(tmp_path / "none.ckpt"), "--out",
                         str(tmp_path / "e.jsonl"))
        assert code == EXIT_DATA


class TestUsage:
    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == EXIT_USAGE

    def test_missing_required_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["fixtures", "--groups", "3"])
        assert e.value.code == EXIT_USAGE

    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == EXIT_USAGE
