import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from graspsynth import cli
from graspsynth import pipeline as P
from conftest import toy_config

SNAPSHOTS = Path(__file__).parent / "snapshots"
SUBCOMMANDS = ("generate", "viewpoints", "preview", "validate", "eval", "export-gt", "stats",
               "grasp-check", "init-demo")


def run(*argv):
    out = io.StringIO()
    code = cli.run(list(argv), out)
    return code, out.getvalue()


def help_text(sub, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    parser = cli.build_parser()
    if sub is None:
        return parser.format_help()
    action = next(a for a in parser._actions if a.dest == "command")
    return action.choices[sub].format_help()


@pytest.mark.parametrize("sub", (None,) + SUBCOMMANDS)
def test_help_snapshot(sub, monkeypatch):
    text = help_text(sub, monkeypatch)
    path = SNAPSHOTS / f"help_{sub or 'main'}.txt"
    if os.environ.get("GRASPSYNTH_UPDATE_SNAPSHOTS"):
        path.parent.mkdir(exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_lists_every_flag(sub, monkeypatch, capsys):
    text = help_text(sub, monkeypatch)
    parser = cli.build_parser()
    action = next(a for a in parser._actions if a.dest == "command")
    for a in action.choices[sub]._actions:
        for flag in a.option_strings:
            assert flag in text
    assert cli.run([sub, "--help"]) == 0
    capsys.readouterr()


def test_unknown_flag_is_usage_error(capsys):
    assert run("viewpoints", "--bogus")[0] == 2
    assert run("nonsense")[0] == 2
    assert run()[0] == 2
    capsys.readouterr()


def test_viewpoints_table():
    code, out = run("viewpoints", "--r-sph", "0.8", "--r-circ", "0.15")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 85
    assert lines[0].split() == list(cli.VIEWPOINT_COLUMNS)


def test_viewpoints_json_lines():
    code, out = run("viewpoints", "--format", "json-lines", "--exclude", "0", "83")
    rows = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and len(rows) == 82 and rows[0]["index"] == 1


def test_viewpoints_bad_radii(capsys):
    assert run("viewpoints", "--r-sph", "0.1", "--r-circ", "0.5")[0] == 2
    capsys.readouterr()


def test_generate_missing_config(capsys):
    code, _ = run("generate", "--config", "missing.cfg")
    assert code == 3
    assert "missing.cfg" in capsys.readouterr().err


@pytest.fixture
def config_file(tmp_path):
    cfg = toy_config(tmp_path, grasps=("grasp_01", "grasp_10"), viewpoints=(20,), distances=(0.5,))
    path = tmp_path / "config.json"
    P.save_config(cfg, path)
    return path


def test_generate_validate_eval_loop(config_file, tmp_path):
    out = tmp_path / "ds"
    assert run("generate", "--config", str(config_file), "--out", str(out), "--jobs", "2")[0] == 0
    code, text = run("validate", str(out))
    assert code == 0 and text.strip().endswith("4 frames checked, 0 problem(s)")
    pred = tmp_path / "pred.json"
    assert run("export-gt", "--dataset", str(out), "--out", str(pred))[0] == 0
    code, text = run("eval", "--pred", str(pred), "--dataset", str(out), "--split", "test", "--format", "json-lines")
    rep = json.loads(text)
    assert code == 0 and rep["frame_count"] == 2
    assert (rep["mpjpe_hand_mm"], rep["mpjpe_object_mm"], rep["mpjpe_total_mm"]) == (0.0, 0.0, 0.0)
    code, text = run("stats", str(out), "--format", "json-lines")
    assert code == 0 and json.loads(text)["splits"] == {"train": 2, "val": 0, "test": 2}
    (out / "frames/frame_000001/rgb.png").unlink()
    code, text = run("validate", str(out))
    assert code == 1 and "FAIL frame 1 [files] missing rgb" in text


def test_generate_dry_run_and_seed(config_file):
    code, text = run("generate", "--config", str(config_file), "--dry-run", "--seed", "5", "--format", "json-lines")
    d = json.loads(text)
    assert code == 0 and d["frame_count"] == 4 and d["splits"]["test"] == 2


def test_generate_single_frame(config_file, tmp_path):
    code, text = run("generate", "--config", str(config_file), "--out", str(tmp_path / "one"), "--frame", "2")
    assert code == 0 and (tmp_path / "one/frames/frame_000002/rgb.png").is_file()
    assert not (tmp_path / "one/manifest.json").exists()
    assert run("generate", "--config", str(config_file), "--out", str(tmp_path), "--frame", "9")[0] == 2


def test_eval_missing_frame(config_file, tmp_path, capsys):
    out = tmp_path / "ds"
    run("generate", "--config", str(config_file), "--out", str(out))
    pred = tmp_path / "p.json"
    run("export-gt", "--dataset", str(out), "--out", str(pred), "--split", "train")
    code, _ = run("eval", "--pred", str(pred), "--dataset", str(out), "--split", "test")
    assert code == 3 and "missing prediction for frame 2" in capsys.readouterr().err


def test_grasp_check():
    code, text = run("grasp-check", "--format", "json-lines")
    rows = [json.loads(line) for line in text.splitlines()]
    assert code == 0 and len(rows) == 11
    assert all(r["penetration"] is False for r in rows)


def test_preview(tmp_path):
    from graspsynth.assets import data_path
    out = tmp_path / "p.png"
    code, _ = run("preview", "--grasp", str(data_path("grasps", "grasp_02.json")), "--viewpoint", "30",
                  "--size", "48", "40", "--out", str(out))
    assert code == 0 and out.is_file()


def test_preview_bad_viewpoint(capsys):
    from graspsynth.assets import data_path
    assert run("preview", "--grasp", str(data_path("grasps", "grasp_02.json")), "--viewpoint", "500")[0] == 2
    capsys.readouterr()


def test_init_demo(tmp_path):
    code, text = run("init-demo", str(tmp_path / "demo"), "--size", "32", "32", "--viewpoints", "1", "2",
                     "--grasps", "3", "--backgrounds", "2")
    assert code == 0 and "(48 frames)" in text
    cfg = P.load_config(tmp_path / "demo/config.json")
    assert len(P.enumerate_frames(cfg)) == 48


def test_identical_invocations_identical_output():
    assert run("viewpoints", "--format", "json-lines") == run("viewpoints", "--format", "json-lines")


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "graspsynth.cli", "viewpoints", "--r-circ", "0.8"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and len(res.stdout.strip().splitlines()) == 6
