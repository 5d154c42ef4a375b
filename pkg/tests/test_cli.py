"""Command-line interface: exit codes, error records, stage chaining."""

import json
import shutil
import subprocess
import sys

import pytest

from sceneloom import load_json, toy_suite
from sceneloom.cli import main

_FLAGS = ["--tau", "0.7", "--max-rounds", "4", "--seed", "3"]


@pytest.fixture(scope="module")
def prompt(world):
    return toy_suite(world, n_prompts=2, seed=3)[0]


@pytest.fixture()
def script_file(prompt, tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(prompt.script), encoding="utf-8")
    return str(path)


def _err_record(capsys):
    err = capsys.readouterr().err.strip()
    record = json.loads(err)
    assert record["schema_version"] == 1
    return record["error"]


class TestRunCommand:
    def test_end_to_end_exit_zero(self, prompt, script_file, tmp_path,
                                  capsys):
        out = tmp_path / "full"
        rc = main(["run", "--caption", prompt.caption,
                   "--mock-script", script_file, "--out", str(out), *_FLAGS])
        assert rc == 0
        for fname in ("blueprint.json", "layout.svg", "initial.png",
                      "refined.png", "report.json", "config-echo.json"):
            assert (out / fname).is_file()
        stdout = capsys.readouterr().out
        assert "par_initial=" in stdout and "par_refined=" in stdout

    def test_chained_stages_match_run_byte_for_byte(self, prompt,
                                                    script_file, tmp_path):
        full = tmp_path / "full"
        assert main(["run", "--caption", prompt.caption,
                     "--mock-script", script_file, "--out", str(full),
                     *_FLAGS]) == 0

        staged = tmp_path / "staged"
        assert main(["blueprint", "--caption", prompt.caption,
                     "--mock-script", script_file, "--out", str(staged),
                     *_FLAGS]) == 0
        bp = str(staged / "blueprint.json")
        assert main(["generate", "--blueprint", bp, "--out", str(staged),
                     *_FLAGS]) == 0
        assert main(["refine", "--blueprint", bp,
                     "--image", str(staged / "initial.png"),
                     "--out", str(staged), *_FLAGS]) == 0

        for fname in ("blueprint.json", "layout.svg", "initial.png",
                      "refined.png", "report.json"):
            assert (full / fname).read_bytes() == \
                (staged / fname).read_bytes(), fname
        # the echo records the run's own output_dir; everything else matches
        ea = load_json(full / "config-echo.json")
        eb = load_json(staged / "config-echo.json")
        assert ea.pop("output_dir") != eb.pop("output_dir")
        assert ea == eb

    def test_eval_recall_agrees_with_run_report(self, prompt, script_file,
                                                tmp_path, capsys):
        out = tmp_path / "full"
        assert main(["run", "--caption", prompt.caption,
                     "--mock-script", script_file, "--out", str(out),
                     *_FLAGS]) == 0
        rc = main(["eval", "--blueprint", str(out / "blueprint.json"),
                   "--image", f"initial={out / 'initial.png'}",
                   "--image", f"refined={out / 'refined.png'}",
                   "--out", str(out), *_FLAGS])
        assert rc == 0
        report = load_json(out / "report.json")
        ev = load_json(out / "eval.json")
        recalls = {p["id"]: p["recall"] for p in ev["per_prompt"]}
        assert recalls["initial"] == report["par_initial"]
        assert recalls["refined"] == report["par_refined"]
        csv_lines = (out / "eval.csv").read_text().splitlines()
        assert csv_lines[0] == "id,object,present"
        assert len(csv_lines) == 1 + 2 * len(prompt.names)
        assert "overall_par=" in capsys.readouterr().out


class TestConfigFailures:
    def test_eta_out_of_range_exits_two(self, script_file, tmp_path, capsys):
        rc = main(["run", "--caption", "A scene", "--eta", "1.5",
                   "--mock-script", script_file,
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        err = _err_record(capsys)
        assert err["stage"] == "config"
        assert "eta" in err["message"]

    def test_missing_caption_exits_two(self, script_file, tmp_path, capsys):
        rc = main(["run", "--mock-script", script_file,
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert _err_record(capsys)["stage"] == "config"

    def test_conflicting_caption_sources_exit_two(self, script_file,
                                                  tmp_path, capsys):
        cap_file = tmp_path / "caption.txt"
        cap_file.write_text("A scene")
        rc = main(["run", "--caption", "A scene",
                   "--prompt-file", str(cap_file),
                   "--mock-script", script_file,
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert _err_record(capsys)["stage"] == "config"

    def test_unreadable_mock_script_exits_two(self, tmp_path, capsys):
        bad = tmp_path / "broken.json"
        bad.write_text("not json {{", encoding="utf-8")
        rc = main(["run", "--caption", "A scene", "--mock-script", str(bad),
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert _err_record(capsys)["stage"] == "config"

    def test_non_list_mock_script_exits_two(self, tmp_path, capsys):
        bad = tmp_path / "dict.json"
        bad.write_text('{"reply": "x"}', encoding="utf-8")
        rc = main(["run", "--caption", "A scene", "--mock-script", str(bad),
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert _err_record(capsys)["stage"] == "config"


class TestStageFailures:
    def test_unparsable_reply_exits_one_in_blueprint_stage(self, tmp_path,
                                                           capsys):
        bad = tmp_path / "garbage.json"
        bad.write_text(json.dumps(["there is no layout here"]))
        rc = main(["run", "--caption", "A scene", "--mock-script", str(bad),
                   "--out", str(tmp_path / "x")])
        assert rc == 1
        assert _err_record(capsys)["stage"] == "blueprint"

    def test_missing_blueprint_file_exits_one(self, tmp_path, capsys):
        rc = main(["generate", "--blueprint",
                   str(tmp_path / "nowhere.json"),
                   "--out", str(tmp_path / "x")])
        assert rc == 1
        err = _err_record(capsys)
        assert err["stage"] == "generate"
        assert err["type"] == "BlueprintError"

    def test_corrupt_blueprint_json_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bp.json"
        bad.write_text('{"schema_version": 1}', encoding="utf-8")
        rc = main(["render", "--blueprint", str(bad),
                   "--out", str(tmp_path / "x")])
        assert rc == 1
        assert _err_record(capsys)["type"] == "BlueprintError"


class TestRenderCommand:
    def test_writes_svg_from_blueprint(self, prompt, script_file, tmp_path,
                                       capsys):
        out = tmp_path / "bp-only"
        assert main(["blueprint", "--caption", prompt.caption,
                     "--mock-script", script_file, "--out", str(out),
                     *_FLAGS]) == 0
        target = tmp_path / "rendered"
        rc = main(["render", "--blueprint", str(out / "blueprint.json"),
                   "--out", str(target)])
        assert rc == 0
        svg = (target / "layout.svg").read_text(encoding="utf-8")
        assert svg.startswith("<svg ")
        assert (out / "layout.svg").read_text(encoding="utf-8") == svg


class TestInstalledEntryPoint:
    def test_console_script_blueprint_smoke(self, prompt, script_file,
                                            tmp_path):
        exe = shutil.which("sceneloom")
        assert exe, "console script not installed"
        out = tmp_path / "cli-smoke"
        proc = subprocess.run(
            [exe, "blueprint", "--caption", prompt.caption,
             "--mock-script", script_file, "--out", str(out)],
            capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stderr
        assert (out / "blueprint.json").is_file()

    def test_module_invocation_smoke(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "sceneloom.cli", "--help"],
            capture_output=True, text=True, timeout=60)
        assert proc.returncode == 0
        assert "blueprint" in proc.stdout and "run" in proc.stdout
