import json
import subprocess
import sys

import numpy as np
import pytest

from cads.cli import main


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pool_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pool")
    code = run_cli(
        "synth", "--preset", "standard", "--samples", 2000, "--seed", 1, "--out", out
    )
    assert code == 0
    return out


class TestValidate:
    def test_ok_pool(self, pool_dir, capsys):
        assert run_cli("validate", pool_dir / "manifest.json") == 0
        assert "OK" in capsys.readouterr().out

    def test_broken_manifest_exits_one(self, pool_dir, capsys):
        doc = json.loads((pool_dir / "manifest.json").read_text())
        doc["experts"][1]["predictions"] = "missing.pred"
        bad = pool_dir / "broken-manifest.json"
        bad.write_text(json.dumps(doc))
        assert run_cli("validate", bad) == 1
        err = capsys.readouterr().err
        assert doc["experts"][1]["name"] in err

    def test_usage_error_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("optimize")  # missing manifest and --budget
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 2


class TestPipeline:
    def test_profile_calibrate_optimize_evaluate(self, pool_dir, tmp_path):
        manifest = pool_dir / "manifest.json"
        out = tmp_path / "run"
        assert run_cli("profile", manifest, "--out", out, "--seed", 1) == 0
        bundle = json.loads((out / "profiles.json").read_text())
        assert len(bundle["profiles"]) == 6
        assert len(bundle["difficulty"]) == 10

        assert run_cli("calibrate", manifest, "--zeta", 0.1, "--out", out, "--seed", 1) == 0
        cals = json.loads((out / "calibrations.json").read_text())
        assert {c["expert"] for c in cals} == set(range(6))
        assert all(0.0 <= c["q_hat"] <= 1.0 for c in cals)

        assert (
            run_cli(
                "optimize", manifest, "--budget", 0.5, "--trials", 20,
                "--seed", 1, "--out", out,
            )
            == 0
        )
        study = json.loads((out / "study.json").read_text())
        assert study["n_trials"] == 20
        assert study["best"]["objective"] >= max(
            t["objective"] for t in study["trials"]
        ) - 1e-12

        config_path = tmp_path / "policy.json"
        config_path.write_text(json.dumps(study["best"]["config"]))
        assert (
            run_cli(
                "evaluate", manifest, "--method", "cads", "--config", config_path,
                "--out", out, "--seed", 1,
            )
            == 0
        )
        report = json.loads((out / "report_cads.json").read_text())[0]
        assert 0.0 <= report["accuracy"] <= 1.0
        assert (out / "run.json").exists()

    def test_evaluate_all_methods(self, pool_dir, tmp_path):
        manifest = pool_dir / "manifest.json"
        for method, extra in (
            ("confidence", ["--threshold", 0.85]),
            ("cumulative", []),
            ("full", ["--weighting", "uniform"]),
            ("solo", ["--expert", 2]),
        ):
            out = tmp_path / method
            assert run_cli(
                "evaluate", manifest, "--method", method, "--out", out, "--seed", 1, *extra
            ) == 0
            payload = json.loads((out / f"report_{method}.json").read_text())
            assert isinstance(payload, list) and payload

    def test_traces_jsonl(self, pool_dir, tmp_path):
        manifest = pool_dir / "manifest.json"
        out = tmp_path / "tr"
        traces = tmp_path / "traces.jsonl"
        assert run_cli(
            "evaluate", manifest, "--method", "cads", "--out", out,
            "--seed", 1, "--traces", traces,
        ) == 0
        lines = traces.read_text().strip().splitlines()
        assert len(lines) == 1400  # 70% of 2000
        first = json.loads(lines[0])
        assert set(first) >= {
            "sample_id", "consulted", "exit_reason", "final_distribution",
            "predicted_class", "cost_gflops",
        }

    def test_sweep_and_ablate(self, pool_dir, tmp_path):
        manifest = pool_dir / "manifest.json"
        out = tmp_path / "sweep"
        assert run_cli(
            "sweep", manifest, "--budgets", "0.1,0.5", "--trials", 10,
            "--seed", 1, "--out", out, "--threads", 2,
        ) == 0
        csv_lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "budget,method,accuracy,mean_gflops,scout_share,specialist_share,oracle_share"
        assert len(csv_lines) > 3

        out2 = tmp_path / "ablate"
        assert run_cli(
            "ablate", manifest, "--axis", "weighting", "--out", out2, "--seed", 1
        ) == 0
        payload = json.loads((out2 / "ablation_weighting.json").read_text())
        assert set(payload) == {"uniform", "hybrid"}


class TestDeterminism:
    def test_optimize_reruns_byte_identical(self, pool_dir, tmp_path):
        manifest = pool_dir / "manifest.json"
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli(
                "optimize", manifest, "--budget", 0.4, "--trials", 15,
                "--seed", 7, "--out", out,
            ) == 0
            outs.append(out)
        a, b = outs
        assert (a / "study.json").read_bytes() == (b / "study.json").read_bytes()
        assert (a / "verification.json").read_bytes() == (b / "verification.json").read_bytes()
        # provenance differs only in its timing fields
        ra = json.loads((a / "run.json").read_text())
        rb = json.loads((b / "run.json").read_text())
        for doc in (ra, rb):
            doc.pop("started_at")
            doc.pop("duration_seconds")
        ra["arguments"].pop("out")
        rb["arguments"].pop("out")
        assert ra == rb


class TestConsoleEntryPoint:
    def test_module_invocation(self, pool_dir):
        proc = subprocess.run(
            [sys.executable, "-m", "cads.cli", "validate", str(pool_dir / "manifest.json")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "OK" in proc.stdout
