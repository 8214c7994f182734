import json
from pathlib import Path

import pytest

from apkam.cli import main
from apkam.errors import SchemaMismatch
from apkam.runner import compare_golden

GOLDEN = Path(__file__).parent / "data" / "golden_kam_run.json"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def tables(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.tsv"))}


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write(tmp_path, "alpah: 1.0\n")
    assert main(["kam-run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "invalid config" in capsys.readouterr().err


def test_scenario_mismatch_rejected(tmp_path):
    cfg = write(tmp_path, "scenario: dioph-scan\n")
    assert main(["kam-run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_zero_kick_certified(tmp_path):
    cfg = write(tmp_path, "kick:\n  - {k: [1, 0], sin: 0.0}\n")
    out = tmp_path / "zero"
    assert main(["kam-run", "--config", str(cfg), "--out", str(out), "--no-figures"]) == 0
    tr = json.loads((out / "trace.json").read_text())
    assert tr["verdict"] == "certified"
    assert tr["metrics"]["conjugacy_defect"] == 0.0


def test_resonant_frequencies_fail(tmp_path, capsys):
    cfg = write(tmp_path, "basis: {omega: [1.0, 0.5]}\n")
    out = tmp_path / "dioph"
    assert main(["dioph-scan", "--config", str(cfg), "--out", str(out), "--no-figures"]) == 1
    tr = json.loads((out / "trace.json").read_text())
    assert tr["verdict"] == "failed"
    assert "verdict\tfailed" in capsys.readouterr().out


def test_tables_deterministic_and_figures(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["oscillator", "expansion", "--out", str(a)]) == 0
    assert main(["oscillator", "expansion", "--out", str(b), "--no-figures"]) == 0
    assert tables(a) == tables(b) and tables(a)
    assert list(a.glob("*.png")) and not list(b.glob("*.png"))
    first = next(iter(tables(a).values())).decode().splitlines()
    assert first[0].startswith("# apkam")


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    rc = main(["golden", "check", "--golden", str(GOLDEN), "--out", str(out), "--no-figures"])
    return rc, json.loads((out / "trace.json").read_text())


def test_golden_self_check(golden_run):
    rc, _ = golden_run
    assert rc == 0


def test_golden_perturbed_fails(golden_run):
    _, trace = golden_run
    g = json.loads(GOLDEN.read_text())
    g["steps"][0]["eps_out"] *= 1.5
    v = compare_golden(trace, g)
    assert not v.passed and any("steps[0].eps_out" in f for f in v.failures)


def test_golden_schema(golden_run):
    _, trace = golden_run
    g = json.loads(GOLDEN.read_text())
    del g["metrics"]
    with pytest.raises(SchemaMismatch):
        compare_golden(trace, g)


def test_all_scenarios_parse(tmp_path):
    from apkam.config import SCENARIOS, load_config
    for s in SCENARIOS:
        assert load_config(None, s).scenario == s
