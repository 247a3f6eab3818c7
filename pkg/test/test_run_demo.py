import os
from pathlib import Path

SCRIPT = Path(__file__).resolve().parents[1] / "run_demo.sh"


def test_run_demo_last_line():
    lines = SCRIPT.read_text().splitlines()
    assert lines[-1].startswith("uv run lobe-dmr analyze ")
    assert lines[-1] == lines[-1].strip()
    assert SCRIPT.read_text().endswith("\n")


def test_run_demo_runs_every_stage_in_order():
    commands = [line.split()[3] for line in SCRIPT.read_text().splitlines() if line.startswith("uv run lobe-dmr")]
    assert commands == ["phantom", "register", "analyze"]


def test_run_demo_executable():
    assert os.access(SCRIPT, os.X_OK)
