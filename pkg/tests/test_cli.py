import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from punchgen.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def run_cli(*argv):
    """Run in-process, capturing exit code."""
    return main(list(argv))


def run_proc(*argv, cwd=None):
    return subprocess.run([sys.executable, "-m", "punchgen.cli", *argv],
                          capture_output=True, text=True, cwd=cwd)


class TestDispatch:
    def test_help_exits_zero(self):
        proc = run_proc("--help")
        assert proc.returncode == 0
        assert "corpus" in proc.stdout and "selftest" in proc.stdout

    def test_unknown_subcommand_exits_one(self):
        proc = run_proc("frobnicate")
        assert proc.returncode == 1
        assert "error" in proc.stderr.lower()

    def test_missing_required_flag_exits_one(self):
        proc = run_proc("corpus", "build", "--output-dir", "x")
        assert proc.returncode == 1

    def test_runtime_error_exits_two(self, tmp_path):
        code = run_cli("kgraph", "dump", "--input", str(tmp_path / "nope.jsonl"),
                       "--record", "0")
        assert code == 2


class TestCorpusBuild:
    def test_builds_splits_and_sidecars(self, tmp_path, capsys):
        out = tmp_path / "data"
        code = run_cli("corpus", "build", "--input", str(FIXTURES / "raw_jokes.txt"),
                       "--output-dir", str(out), "--seed", "1")
        assert code == 0
        for name in ("train", "valid", "test"):
            assert (out / f"{name}.jsonl").exists()
            meta = json.loads((out / f"{name}.jsonl.meta.json").read_text())
            assert meta["seed"] == 1 and meta["command"] == "corpus build"
        n = sum(1 for name in ("train", "valid", "test")
                for _ in (out / f"{name}.jsonl").read_text().strip().split("\n"))
        assert n == 40

    def test_does_not_mutate_input(self, tmp_path):
        src = tmp_path / "raw.txt"
        shutil.copy(FIXTURES / "raw_jokes.txt", src)
        before = hashlib.sha256(src.read_bytes()).hexdigest()
        run_cli("corpus", "build", "--input", str(src),
                "--output-dir", str(tmp_path / "out"), "--seed", "0")
        assert hashlib.sha256(src.read_bytes()).hexdigest() == before

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("corpus", "build", "--input", str(FIXTURES / "raw_jokes.txt"),
                    "--output-dir", str(out), "--seed", "7")
        assert (a / "train.jsonl").read_bytes() == (b / "train.jsonl").read_bytes()
        assert (a / "test.jsonl").read_bytes() == (b / "test.jsonl").read_bytes()


class TestAnnotateAndDump:
    @pytest.fixture()
    def data_dir(self, tmp_path):
        out = tmp_path / "data"
        run_cli("corpus", "build", "--input", str(FIXTURES / "raw_jokes.txt"),
                "--output-dir", str(out), "--seed", "1")
        return out

    def test_annotate_fixture_mode(self, data_dir):
        out = data_dir / "train.ann.jsonl"
        code = run_cli("knowledge", "annotate", "--input", str(data_dir / "train.jsonl"),
                       "--fixtures", str(FIXTURES / "knowledge.json"),
                       "--output", str(out))
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().strip().split("\n")]
        assert len(lines) == 28
        assert any(rec["triples"] for rec in lines)

    def test_annotate_requires_provider_choice(self, data_dir):
        code = run_cli("knowledge", "annotate", "--input", str(data_dir / "train.jsonl"))
        assert code == 1

    def test_kgraph_dump(self, data_dir, tmp_path, capsys):
        ann = data_dir / "train.ann.jsonl"
        run_cli("knowledge", "annotate", "--input", str(data_dir / "train.jsonl"),
                "--fixtures", str(FIXTURES / "knowledge.json"), "--output", str(ann))
        lines = [json.loads(l) for l in ann.read_text().strip().split("\n")]
        idx = next(i for i, rec in enumerate(lines) if rec["triples"])
        dot = tmp_path / "g.dot"
        code = run_cli("kgraph", "dump", "--input", str(ann), "--record", str(idx),
                       "--output", str(dot))
        assert code == 0
        text = dot.read_text()
        assert text.startswith("digraph") and "color=green" in text

    def test_kgraph_dump_empty_record_is_runtime_error(self, data_dir):
        ann = data_dir / "train.ann.jsonl"
        run_cli("knowledge", "annotate", "--input", str(data_dir / "train.jsonl"),
                "--fixtures", str(FIXTURES / "knowledge.json"), "--output", str(ann))
        lines = [json.loads(l) for l in ann.read_text().strip().split("\n")]
        idx = next(i for i, rec in enumerate(lines) if not rec["triples"])
        assert run_cli("kgraph", "dump", "--input", str(ann), "--record", str(idx)) == 2

    def test_kgraph_dump_bad_index_is_usage_error(self, data_dir):
        assert run_cli("kgraph", "dump", "--input", str(data_dir / "train.jsonl"),
                       "--record", "9999") == 1


class TestEvaluateCli:
    def test_table_and_json_modes(self, tmp_path, capsys):
        hyps = tmp_path / "h.txt"
        refs = tmp_path / "r.txt"
        hyps.write_text("the cat sat\n")
        refs.write_text("the cat sat\n")
        assert run_cli("evaluate", "--hyps", str(hyps), "--refs", str(refs)) == 0
        out = capsys.readouterr().out
        assert "ROUGE-1" in out and "100.00" in out
        report = tmp_path / "report.json"
        assert run_cli("evaluate", "--hyps", str(hyps), "--refs", str(refs),
                       "--json", "--output", str(report)) == 0
        data = json.loads(report.read_text())
        assert data["rouge1"]["f1"] == 100.0

    def test_line_mismatch_is_runtime_error(self, tmp_path):
        hyps = tmp_path / "h.txt"
        refs = tmp_path / "r.txt"
        hyps.write_text("one\n")
        refs.write_text("one\ntwo\n")
        assert run_cli("evaluate", "--hyps", str(hyps), "--refs", str(refs)) == 2


class TestConfigPlumbing:
    def test_config_file_round_trip(self, tmp_path):
        from punchgen.config import RunConfig, preset

        cfg = preset("desk")
        cfg.train.max_steps = 11
        path = tmp_path / "run.yaml"
        cfg.save(path)
        back = RunConfig.load(path)
        assert back.model.d_model == 64 and back.train.max_steps == 11

    def test_paper_preset_values(self):
        from punchgen.config import preset

        cfg = preset("paper")
        assert (cfg.model.d_model, cfg.model.n_blocks, cfg.model.n_heads,
                cfg.model.d_ff) == (512, 4, 8, 2048)
        assert cfg.model.vocab_size == 25000
        assert cfg.train.batch_size == 16 and cfg.train.learning_rate == 0.001
        assert cfg.beam == 5

    def test_unknown_preset(self):
        from punchgen.config import preset

        with pytest.raises(ValueError):
            preset("napkin")
