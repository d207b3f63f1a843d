import csv
import json

from canvasmux.cli import main


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestScenarioGenerate:
    def test_deterministic_files(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        args = ["scenario", "generate", "--preset", "ufpr-like", "--seed", "3", "--duration", "2"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_out_fails(self, capsys):
        assert main(["scenario", "generate", "--preset", "ufpr-like"]) == 2
        assert "error" in capsys.readouterr().err


class TestRun:
    def test_csv_schema_and_manifest(self, tmp_path):
        out = tmp_path / "r.csv"
        rc = main(
            [
                "run",
                "--mode",
                "uniform",
                "--preset",
                "okutama-like",
                "--cameras",
                "2",
                "--duration",
                "2",
                "--frame-dims",
                "480x270",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        rows = read_rows(out)
        assert len(rows) == 1
        assert list(rows[0].keys()) == [
            "mode",
            "M",
            "b",
            "C",
            "map50",
            "per_camera_fps",
            "cfps",
            "cer",
            "utilization",
            "relaxations",
        ]
        assert rows[0]["mode"] == "uniform"
        assert rows[0]["M"] == "2"
        manifest = json.loads((tmp_path / "r.csv.manifest.json").read_text())
        assert manifest["args"]["seed"] == 5
        assert manifest["version"]

    def test_rerun_from_manifest_byte_identical(self, tmp_path):
        out1 = tmp_path / "r1.csv"
        out2 = tmp_path / "r2.csv"
        rc = main(
            [
                "run",
                "--mode",
                "mosaic",
                "--preset",
                "okutama-like",
                "--cameras",
                "2",
                "--duration",
                "3",
                "--frame-dims",
                "480x270",
                "--seed",
                "9",
                "--out",
                str(out1),
            ]
        )
        assert rc == 0
        rc = main(["run", "--manifest", str(out1) + ".manifest.json", "--out", str(out2)])
        assert rc == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_scenario_file_input(self, tmp_path):
        scen = tmp_path / "s.jsonl"
        main(
            [
                "scenario",
                "generate",
                "--preset",
                "ufpr-like",
                "--seed",
                "4",
                "--duration",
                "2",
                "--cameras",
                "2",
                "--out",
                str(scen),
            ]
        )
        out = tmp_path / "r.csv"
        rc = main(
            ["run", "--mode", "fcfs", "--scenario", str(scen), "--seed", "4", "--out", str(out)]
        )
        assert rc == 0
        rows = read_rows(out)
        assert rows[0]["mode"] == "fcfs"
        assert rows[0]["cer"] != ""

    def test_invalid_preset_fails(self, tmp_path, capsys):
        rc = main(["run", "--mode", "fcfs", "--seed", "1", "--out", str(tmp_path / "x.csv")])
        assert rc == 2

    def test_config_file_overrides(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"batch": 1, "detector": {"deterministic": True}}))
        out = tmp_path / "r.csv"
        rc = main(
            [
                "run",
                "--mode",
                "uniform",
                "--preset",
                "okutama-like",
                "--cameras",
                "2",
                "--duration",
                "2",
                "--frame-dims",
                "480x270",
                "--seed",
                "5",
                "--config",
                str(cfg_path),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        assert read_rows(out)[0]["b"] == "1"


class TestSweep:
    def test_cameras_axis_row_count(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = main(
            [
                "sweep",
                "--axis",
                "cameras",
                "--preset",
                "okutama-like",
                "--cameras",
                "2",
                "--duration",
                "2",
                "--frame-dims",
                "480x270",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        rows = read_rows(out)
        assert len(rows) == 6  # 2 camera counts x 3 modes
        modes = {(r["mode"], r["M"]) for r in rows}
        assert ("mosaic", "1") in modes and ("uniform", "2") in modes
        assert all("tput_acc" in r for r in rows)
