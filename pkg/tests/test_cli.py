from __future__ import annotations

import csv
import json
import subprocess
import sys

from igtsim.cli import build_parser, main, resolve
from igtsim.scenario import bundled

ARTIFACTS = ["events.log", "progress.csv", "progress.json", "efficiency.csv", "replicas.txt", "summary.json"]


def test_check_valid_file(capsys):
    assert main(["run", str(bundled("fall2002")), "--check"]) == 0
    assert capsys.readouterr().out.strip() == "0 errors"


def test_check_reports_errors(tmp_path, capsys):
    doc = json.loads(bundled("clean").read_text())
    doc["channel_defaults"]["bandwidth"] = -1
    del doc["seed"]
    bad = tmp_path / "bad.scenario"
    bad.write_text(json.dumps(doc, indent=2))
    assert main(["run", str(bad), "--check"]) == 1
    captured = capsys.readouterr()
    assert captured.out.strip() == "2 errors"
    assert "channel_defaults.bandwidth" in captured.err and "seed" in captured.err


def test_invalid_scenario_refuses_to_run(tmp_path, capsys):
    doc = json.loads(bundled("clean").read_text())
    doc["requests"][0]["sites"] = {"atlantis": 1}
    bad = tmp_path / "bad.scenario"
    bad.write_text(json.dumps(doc))
    assert main(["run", str(bad), "--out", str(tmp_path / "out")]) == 2
    assert "unknown site" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_out_and_bad_flags(capsys):
    assert main(["run", "clean"]) == 2
    assert main(["run", "clean", "--check", "--windows", "0"]) == 1
    assert main(["run", "no-such-file.scenario", "--check"]) == 1
    capsys.readouterr()


def test_parser_flags():
    args = build_parser().parse_args(["run", "x.scenario", "--out", "o", "--seed", "9", "--windows", "4"])
    assert (args.scenario, str(args.out), args.seed, args.windows, args.check) == ("x.scenario", "o", 9, 4, False)
    assert resolve("fall2002") == bundled("fall2002")


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "igtsim", "run", "clean", "--check"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0 and proc.stdout.strip() == "0 errors"


def test_fall2002_run_outputs(campaigns):
    out = campaigns("fall2002")
    for name in ARTIFACTS:
        assert (out / name).is_file()
    summary = campaigns.summary("fall2002")
    assert summary["events_requested"] == 1_500_000
    assert summary["jobs"] == 6000
    assert summary["seed"] == 2002
    assert "wall_seconds" not in summary
    assert summary["events_completed"] == sum(summary["per_site_events"].values())
    replicas = (out / "replicas.txt").read_text().splitlines()
    assert len(replicas) == summary["jobs_completed"]
    assert sum(int(line.split("events=")[1].split()[0]) for line in replicas) == summary["events_completed"]
    with open(out / "efficiency.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    log = (out / "events.log").read_text().splitlines()
    assert log[:2] == ["# scenario fall2002 (fall2002.scenario)", "# seed 2002"]


def test_seed_flag_overrides_file(campaigns):
    assert campaigns.summary("fall2002", seed=7)["seed"] == 7


def test_all_artifacts_byte_identical(campaigns):
    a = campaigns("fall2002")
    b = campaigns("fall2002", copy=1)
    for name in ARTIFACTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
