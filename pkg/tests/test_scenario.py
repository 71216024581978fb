from __future__ import annotations

import copy
import json

import pytest

from igtsim.scenario import (
    ScenarioError,
    build_campaign,
    bundled,
    interleave,
    load_scenario,
    parse_scenario,
    scenario_from_dict,
    weighted_round_robin,
)


def tiny() -> dict:
    return {
        "schema_version": 1,
        "name": "tiny",
        "seed": 5,
        "horizon_days": 2,
        "sites": [
            {"name": "a", "worker_cpus": 4, "cpu_speed": 2.4},
            {"name": "b", "worker_cpus": 2, "cpu_speed": 1.0, "join_day": 0.5},
        ],
        "masters": [{"id": "m1", "max_tracked_processes": 400}],
        "pipelines": {"sim": ["CMKIN", "CMSIM"]},
        "ceiling_pipeline": "sim",
        "requests": [{"id": "r", "events": 2000, "pipeline": "sim", "master": "m1", "sites": "capacity"}],
        "channel_defaults": {"bandwidth": 10.0, "latency": 1.0, "hang_probability": 0.0},
    }


def parse(doc: dict):
    return parse_scenario(json.dumps(doc, indent=2))


def test_bundled_scenarios_validate():
    for name in ("clean", "fall2002"):
        sc = load_scenario(bundled(name))
        assert sc.name == name


def test_fall2002_encodes_hardware_and_calendar():
    sc = load_scenario(bundled("fall2002"))
    table = {s.name: (s.worker_cpus, s.cpu_speed) for s in sc.sites}
    assert table == {
        "caltech-rh6": (40, 0.8),
        "caltech-rh7": (40, 2.4),
        "fnal": (80, 0.75),
        "ufl": (80, 1.0),
        "ucsd-rh6": (40, 0.8),
        "ucsd-rh7": (40, 2.4),
        "cern": (72, 2.4),
    }
    assert sum(n for n, _ in table.values()) == 392
    assert next(s for s in sc.sites if s.name == "cern").join_day == 15
    assert [(o.start_day, o.end_day) for o in sc.outages] == [(15, 22), (50, 61)]
    assert sc.total_events() == 1_500_000
    assert sc.declared_ceiling == 45_000


def test_tiny_scenario_parses():
    sc, errors = parse(tiny())
    assert errors == [] and sc.seed == 5


def test_negative_bandwidth_names_field():
    doc = tiny()
    doc["channel_defaults"]["bandwidth"] = -3
    sc, errors = parse(doc)
    assert sc is None and len(errors) == 1
    assert "channel_defaults.bandwidth" in errors[0]
    assert errors[0].startswith("line ")


def test_missing_seed_is_an_error():
    doc = tiny()
    del doc["seed"]
    sc, errors = parse(doc)
    assert sc is None and any("seed" in e for e in errors)


def test_unknown_site_in_assignment():
    doc = tiny()
    doc["requests"][0]["sites"] = {"a": 1, "nowhere": 1}
    _, errors = parse(doc)
    assert any("unknown site" in e and "nowhere" in e for e in errors)


def test_errors_are_collected_not_raised():
    doc = tiny()
    doc["sites"][0]["cpu_speed"] = 0
    doc["masters"][0]["max_tracked_processes"] = 0
    doc["requests"][0]["pipeline"] = "nope"
    _, errors = parse(doc)
    assert len(errors) >= 3
    _, errors = parse_scenario("{not json")
    assert errors and "invalid JSON" in errors[0]
    _, errors = scenario_from_dict({"name": "x"})
    assert len(errors) == 1 and "schema_version" in errors[0]


def test_load_scenario_raises_with_all_errors(tmp_path):
    doc = tiny()
    del doc["seed"]
    p = tmp_path / "bad.scenario"
    p.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_round_trip_is_semantically_identical():
    for name in ("clean", "fall2002"):
        sc = load_scenario(bundled(name))
        again, errors = scenario_from_dict(json.loads(sc.to_json()))
        assert errors == []
        assert again == sc
        assert again.to_json() == sc.to_json()


def test_round_trip_of_defaults_filled_in():
    sc, _ = parse(tiny())
    doc = sc.to_dict()
    assert doc["sites"][1]["join_day"] == 0.5
    again, errors = scenario_from_dict(copy.deepcopy(doc))
    assert errors == [] and again == sc


def test_weighted_round_robin_and_interleave():
    seq = weighted_round_robin({"a": 2.0, "b": 1.0}, 6)
    assert seq == ["a", "b", "a", "a", "b", "a"]
    assert seq.count("a") == 4
    with pytest.raises(ValueError):
        weighted_round_robin({}, 3)
    merged = interleave([[1, 2, 3, 4], ["x", "y"]])
    assert [m for m in merged if isinstance(m, int)] == [1, 2, 3, 4]
    assert merged.index("x") < merged.index(3) and len(merged) == 6


def test_capacity_assignment_and_campaign_run():
    sc, _ = parse(tiny())
    camp = build_campaign(sc)
    assert len(camp.jobs) == 8
    per_site = {s: sum(1 for _, site, _ in camp.jobs if site == s) for s in ("a", "b")}
    # 9.6 GHz vs 2 GHz of capacity
    assert per_site == {"a": 7, "b": 1}
    camp.run()
    assert camp.executor.events_completed == 2000
    assert camp.ceiling == pytest.approx(camp.ceiling_formula)
