import json

import pytest
import yaml

from sflab import config
from sflab.dataset import load, validate
from sflab.gradient_flow import CSV_HEADER
from sflab.main import EXIT_CLAIM_FAILED, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, RunManifest, canonical_json, main


@pytest.fixture(autouse=True)
def restore_threads(monkeypatch):
    monkeypatch.setattr(config, "THREADS", config.THREADS)


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "ds.txt"
    assert main(["generate", "--n", "4", "--d", "6", "--k", "1", "--target", "quadratic",
                 "--seed", "1", "--out", str(path)]) == EXIT_OK
    return path


def _train(dataset, out, *extra):
    return main(["train", "--dataset", str(dataset), "--m", "32", "--eta", "0.01", "--steps", "20",
                 "--kernel-log-every", "5", "--mc-samples", "0", "--out", str(out), *extra])


class TestGenerate:
    def test_happy_path(self, tmp_path):
        path, summary = tmp_path / "ds.txt", tmp_path / "ds.json"
        code = main(["generate", "--n", "8", "--d", "16", "--k", "2", "--target", "quadratic",
                     "--seed", "1", "--out", str(path), "--summary", str(summary)])
        assert code == EXIT_OK
        assert validate(load(path)).satisfies_assumption1
        document = json.loads(summary.read_text())
        assert document["records_path"] == str(path)
        assert len(document["manifest"]["digest"]) == 64

    def test_same_argv_same_bytes(self, tmp_path):
        argv = ["generate", "--n", "3", "--d", "5", "--k", "1", "--target", "teacher_mlp", "--seed", "4"]
        path = tmp_path / "ds.txt"
        main(argv + ["--out", str(path)])
        first = path.read_bytes()
        main(argv + ["--out", str(path)])
        assert path.read_bytes() == first

    def test_invalid_arguments_are_runtime_errors(self, tmp_path):
        code = main(["generate", "--n", "3", "--d", "3", "--k", "3", "--target", "quadratic",
                     "--seed", "1", "--out", str(tmp_path / "ds.txt")])
        assert code == EXIT_RUNTIME


class TestUsage:
    def test_unknown_flag(self, capsys):
        assert main(["generate", "--bogus"]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_help(self):
        assert main(["--help"]) == EXIT_OK

    def test_bad_thread_count(self, dataset, tmp_path):
        assert main(["--threads", "0", "kernel", "--dataset", str(dataset), "--out", str(tmp_path / "k.json")]) == EXIT_USAGE


class TestTrain:
    def test_step_above_cap(self, dataset, tmp_path, capsys):
        code = main(["train", "--dataset", str(dataset), "--m", "32", "--eta", "10", "--steps", "5",
                     "--mc-samples", "0", "--out", str(tmp_path / "t.csv")])
        assert code == EXIT_USAGE
        assert "step" in capsys.readouterr().err.lower()

    def test_trajectory_csv(self, dataset, tmp_path):
        out = tmp_path / "t.csv"
        assert _train(dataset, out) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert len(lines) == 1 + 21
        assert "nan" not in out.read_text().lower()

    def test_byte_identical_reruns(self, dataset, tmp_path):
        _train(dataset, tmp_path / "a.csv")
        _train(dataset, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_thread_count_does_not_change_output(self, dataset, tmp_path):
        extra = ["--mc-samples", "20000"]
        main(["--threads", "1", "train", "--dataset", str(dataset), "--m", "32", "--eta", "0.01",
              "--steps", "10", "--out", str(tmp_path / "a.csv"), *extra])
        main(["--threads", "4", "train", "--dataset", str(dataset), "--m", "32", "--eta", "0.01",
              "--steps", "10", "--out", str(tmp_path / "b.csv"), *extra])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_summary_and_checkpoint_resume(self, dataset, tmp_path):
        first, second = tmp_path / "first.json", tmp_path / "second.json"
        checkpoint = tmp_path / "net.txt"
        assert _train(dataset, tmp_path / "a.csv", "--summary", str(first), "--checkpoint", str(checkpoint)) == EXIT_OK
        assert _train(dataset, tmp_path / "b.csv", "--summary", str(second),
                      "--init-checkpoint", str(checkpoint)) == EXIT_OK
        a, b = json.loads(first.read_text()), json.loads(second.read_text())
        assert a["decay_certificate"]["passed"] in (True, False)
        assert b["initial_loss"] == a["final_loss"]
        assert b["monotone"] and b["flip_jumps"] >= 0
        assert b["final_loss"] <= b["initial_loss"] + 0.5 * b["jump_r_sq"] + 1e-12

    def test_missing_dataset(self, tmp_path):
        assert _train(tmp_path / "absent.txt", tmp_path / "t.csv") == EXIT_RUNTIME


class TestKernel:
    def test_report(self, dataset, tmp_path):
        out = tmp_path / "kernel.json"
        assert main(["kernel", "--dataset", str(dataset), "--mc-samples", "20000", "--out", str(out)]) == EXIT_OK
        document = json.loads(out.read_text())
        assert set(document) == {"manifest", "config", "report"}
        report = document["report"]
        assert report["mc_samples"] == 20_000
        assert report["bound_satisfied"] is True
        assert report["lambda_min_estimate"] >= report["prop1_bound"]


class TestVerify:
    @pytest.fixture
    def experiment_file(self, tmp_path):
        path = tmp_path / "prop1.yaml"
        path.write_text(yaml.safe_dump({
            "d": 8, "datasets": 2, "sweep_n": [2], "sweep_k": [1], "sweep_tilt": [0.0], "mc_samples": 1_000_000,
        }))
        return path

    def test_prop1(self, experiment_file, tmp_path):
        out = tmp_path / "verdict.json"
        code = main(["verify", "--experiment", "prop1", "--config", str(experiment_file),
                     "--mc-samples", "20000", "--out", str(out)])
        assert code in (EXIT_OK, EXIT_CLAIM_FAILED)
        document = json.loads(out.read_text())
        assert document["config"]["mc_samples"] == 20_000
        verdict = document["verdicts"][0]
        assert verdict["experiment"] == "prop1"
        assert (code == EXIT_OK) == verdict["passed"]

    def test_reproducible_verdict(self, experiment_file, tmp_path):
        documents = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            main(["verify", "--experiment", "prop1", "--config", str(experiment_file),
                  "--mc-samples", "20000", "--out", str(out)])
            documents.append(json.loads(out.read_text()))
        a, b = documents
        assert a["config"] == b["config"]
        assert a["manifest"]["config_digest"] == b["manifest"]["config_digest"]
        assert a["verdicts"][0]["claims"] == b["verdicts"][0]["claims"]

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("widht: 3\n")
        code = main(["verify", "--experiment", "prop1", "--config", str(path), "--out", str(tmp_path / "v.json")])
        assert code == EXIT_RUNTIME

    def test_failed_claims_exit_code(self, tmp_path):
        out = tmp_path / "verdict.json"
        code = main(["verify", "--experiment", "theorem1", "--n", "4", "--d", "8", "--k", "1", "--m", "8",
                     "--steps", "20", "--mc-samples", "20000", "--seeds", "1", "--out", str(out)])
        assert code == EXIT_CLAIM_FAILED
        assert json.loads(out.read_text())["verdicts"][0]["passed"] is False


def test_config_subcommand(isolated_config, monkeypatch):
    monkeypatch.setattr(config, "MC_DEFAULT_SAMPLES", config.MC_DEFAULT_SAMPLES)
    assert main(["config", "--threads", "2", "--mc-samples", "30000"]) == EXIT_OK
    assert yaml.safe_load(isolated_config.read_text()) == {"threads": 2, "mc_samples": 30_000}
    assert config.MC_DEFAULT_SAMPLES == 30_000


def test_manifest_digest_ignores_runtime():
    a = RunManifest(command_line=["sflab", "kernel"], config_digest="x", seeds=[1], runtime_seconds=1.0)
    b = RunManifest(command_line=["sflab", "kernel"], config_digest="x", seeds=[1], runtime_seconds=9.0)
    assert a.digest == b.digest
    assert canonical_json({"v": float("inf")}) == '{"v":"inf"}'
