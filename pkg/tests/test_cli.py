from __future__ import annotations

import hashlib
import json
import subprocess
import sys

import pytest

from tabletop_datagen.cli import run_cli


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run(capsys, *argv):
    code = run_cli(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        code, out, _ = _run(capsys, "gen", "--episodes", "15", "--seed", "4", "--task", "wake_up_routine", "--out", str(p))
        assert code == 0
    assert _sha(a) == _sha(b)
    stats = json.loads(out)
    assert stats["accepted_count"] == 15


def test_gen_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tasks": ["turn_switch"], "failure": {"toggle_miss_prob": 0.3}, "n_target": 5}))
    out_path = tmp_path / "d.jsonl"
    code, out, _ = _run(capsys, "gen", "--config", str(cfg), "--out", str(out_path), "--mode", "vanilla")
    assert code == 0
    assert json.loads(out_path.read_text().splitlines()[0])["config"]["mode"] == "vanilla"


def test_stats_and_replay(tmp_path, capsys):
    p = tmp_path / "d.jsonl"
    _run(capsys, "gen", "--episodes", "10", "--out", str(p))
    code, out, _ = _run(capsys, "stats", "--in", str(p))
    assert code == 0 and json.loads(out)["purity"] == 1.0
    episode = json.loads(p.read_text().splitlines()[1])["episode"]
    pgm = tmp_path / "final.pgm"
    code, out, _ = _run(capsys, "replay", "--in", str(p), "--episode", str(episode), "--render", str(pgm))
    assert code == 0 and json.loads(out)["match"] is True
    assert pgm.read_bytes().startswith(b"P5")
    code, _, err = _run(capsys, "replay", "--in", str(p), "--episode", "99999")
    assert code == 2 and json.loads(err)["error"] == "DatagenError"


def test_stats_expect_config_mismatch(tmp_path, capsys):
    p = tmp_path / "d.jsonl"
    _run(capsys, "gen", "--episodes", "3", "--out", str(p))
    code, _, err = _run(capsys, "stats", "--in", str(p), "--expect-config", "0" * 64)
    assert code == 2 and json.loads(err)["error"] == "SchemaError"


def test_gate(capsys):
    code, out, _ = _run(capsys, "gate", "--template", "place_mouse_pad", "--trials", "10", "--seed", "1")
    report = json.loads(out)
    assert code == 0 and report == {"template": "place_mouse_pad", "trials": 10, "successes": 10, "sr": 1.0,
                                    "status": "Accept"}


def test_compare(capsys):
    code, out, _ = _run(capsys, "compare", "--episodes", "20")
    assert code == 0 and json.loads(out)["vcage_subset_of_vanilla"] is True


@pytest.mark.parametrize(
    "argv",
    [[], ["fly"], ["gen"], ["gate", "--template", "x", "--trials", "many"], ["gen", "--out", "x", "--mode", "both"]],
)
def test_usage_errors_exit_1(capsys, argv):
    code, _, err = _run(capsys, *argv)
    assert code == 1 and json.loads(err)["error"] == "UsageError"


def test_runtime_errors_exit_2(tmp_path, capsys):
    code, _, err = _run(capsys, "stats", "--in", str(tmp_path / "missing.jsonl"))
    assert code == 2 and json.loads(err)["error"] == "IoError"
    code, _, err = _run(capsys, "gate", "--template", "juggle")
    assert code == 2 and json.loads(err)["error"] == "GroundingError"
    code, _, err = _run(capsys, "gen", "--episodes", "0", "--out", str(tmp_path / "x"))
    assert code == 2


def test_cap_exceeded_writes_partial_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tasks": ["turn_switch"], "failure": {"toggle_miss_prob": 1.0}, "episode_cap": 10}))
    out_path = tmp_path / "d.jsonl"
    code, _, err = _run(capsys, "gen", "--config", str(cfg), "--episodes", "3", "--out", str(out_path))
    assert code == 2 and json.loads(err)["error"] == "CapExceeded"
    assert len(out_path.read_text().splitlines()) == 1


def test_console_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tabletop_datagen", "gate", "--template", "click_bell"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and json.loads(proc.stdout)["status"] == "Accept"
