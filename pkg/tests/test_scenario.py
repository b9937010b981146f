"""Scenario harness: file validation, comparison helpers, and full runs
through boot, replay, assertion polling and teardown."""

import json

import pytest

from giots.scenario import (
    ScenarioError,
    ScenarioReport,
    AssertionOutcome,
    ScenarioRunner,
    _normalize_entities,
    _parse_timestamp,
    _strip_timestamps,
    load_scenario,
    run_scenario,
)

from conftest import SCENARIOS_DIR


def _write_scenario(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def _minimal(**overrides):
    doc = {"services": {}, "sensors": [], "assertions": [], "quiescenceMillis": 200}
    doc.update(overrides)
    return doc


# --- loading ----------------------------------------------------------------------


def test_load_packaged_scenario():
    scenario = load_scenario(SCENARIOS_DIR / "room123.json")
    assert [s.name for s in scenario.sensors] == ["tempSensor"]
    sensor = scenario.sensors[0]
    assert sensor.container_path == "/cse/tempApp/room123"
    assert sensor.descriptor is not None and "describesEntity" in sensor.descriptor
    assert sensor.value_sequence == [25]
    assert scenario.smg["mode"] == "push"
    assert len(scenario.assertions) == 3
    assert scenario.ontology_file is not None


def test_load_rejects_missing_and_invalid_files(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ScenarioError, match="not valid JSON"):
        load_scenario(bad)
    array = tmp_path / "array.json"
    array.write_text("[]", encoding="utf-8")
    with pytest.raises(ScenarioError, match="JSON object"):
        load_scenario(array)


@pytest.mark.parametrize(
    ("doc", "fragment"),
    [
        (_minimal(ontologyFile="missing.nt"), "ontology file not found"),
        (_minimal(services={"cse": "yes"}), "component names to ports"),
        (_minimal(services={"cse": 7000, "broker": 7000}), "distinct"),
        (_minimal(sensors=["x"]), "must be a JSON object"),
        (_minimal(sensors=[{"containerPath": "/cse/a/b"}]), "needs a 'name'"),
        (_minimal(sensors=[{"name": "s", "containerPath": "relative"}]), "absolute"),
        (
            _minimal(sensors=[{"name": "s", "containerPath": "/cse/a/b",
                               "descriptorFile": "gone.nt"}]),
            "descriptor file not found",
        ),
        (
            _minimal(sensors=[{"name": "s", "containerPath": "/cse/a/b",
                               "valueSequence": 5}]),
            "must be a list",
        ),
        (
            _minimal(sensors=[{"name": "s", "containerPath": "/cse/a/b",
                               "periodMillis": -1}]),
            "periodMillis",
        ),
        (_minimal(agents=["gone.json"]), "agent config not found"),
        (_minimal(assertions="all good"), "must be a list"),
        (_minimal(quiescenceMillis=-5), "quiescenceMillis"),
        (_minimal(smg="push"), "'smg' must be a JSON object"),
    ],
)
def test_load_rejects_malformed_scenarios(tmp_path, doc, fragment):
    path = _write_scenario(tmp_path, doc)
    with pytest.raises(ScenarioError, match=fragment):
        load_scenario(path)


def test_configured_ports_are_honored(tmp_path):
    path = _write_scenario(tmp_path, _minimal(services={"cse": 7654}))
    runner = ScenarioRunner(load_scenario(path))
    assert runner._port("cse") == 7654
    ephemeral = runner._port("broker")
    assert isinstance(ephemeral, int) and ephemeral > 0


# --- comparison helpers --------------------------------------------------------------


def _entity_with_metadata():
    return [
        {
            "id": "room123",
            "type": "t",
            "attributes": [
                {
                    "name": "temperature",
                    "value": 1,
                    "metadata": [
                        {"name": "timestamp", "type": "string", "value": "2026-01-01T00:00:00Z"},
                        {"name": "unit", "type": "string", "value": "kelvin"},
                    ],
                }
            ],
        }
    ]


def test_strip_timestamps_removes_and_collects():
    cleaned, stamps = _strip_timestamps(_entity_with_metadata())
    assert stamps == ["2026-01-01T00:00:00Z"]
    metadata = cleaned[0]["attributes"][0]["metadata"]
    assert [m["name"] for m in metadata] == ["unit"]
    # non-list input passes through untouched
    assert _strip_timestamps("oops") == ("oops", [])


def test_normalize_entities_is_order_insensitive():
    one = [
        {"id": "b", "attributes": [{"name": "y", "value": 1, "metadata": []},
                                   {"name": "x", "value": 2, "metadata": []}]},
        {"id": "a", "attributes": []},
    ]
    two = [
        {"id": "a", "attributes": []},
        {"id": "b", "attributes": [{"name": "x", "value": 2, "metadata": []},
                                   {"name": "y", "value": 1, "metadata": []}]},
    ]
    assert _normalize_entities(one) == _normalize_entities(two)
    assert _normalize_entities(one) != _normalize_entities([{"id": "c", "attributes": []}])


def test_parse_timestamp_handles_zulu_suffix():
    parsed = _parse_timestamp("2026-08-25T10:00:00Z")
    assert parsed is not None and parsed.tzinfo is not None
    assert _parse_timestamp("not a time") is None
    assert _parse_timestamp(12345) is None


def test_report_lines_show_failures_with_both_sides():
    report = ScenarioReport(
        exit_code=1,
        outcomes=[
            AssertionOutcome(0, "queryContextEquals", True),
            AssertionOutcome(
                1, "queryContextEquals", False, detail="entity state differs",
                actual=[], expected=[{"id": "x"}],
            ),
        ],
    )
    lines = report.lines()
    assert lines[0] == "assertion 0: queryContextEquals: PASS"
    assert lines[1].startswith("assertion 1: queryContextEquals: FAIL")
    assert any(line.strip().startswith("expected:") for line in lines)
    assert any(line.strip().startswith("actual:") for line in lines)
    setup = ScenarioReport(exit_code=2, error="boom")
    assert setup.lines() == ["SETUP FAILED: boom"]


# --- full runs ------------------------------------------------------------------------


def test_packaged_scenario_runs_clean(capsys):
    report = run_scenario(SCENARIOS_DIR / "room123.json")
    assert report.exit_code == 0
    assert all(o.passed for o in report.outcomes)
    printed = capsys.readouterr().out
    assert printed.count("PASS") == 3


def test_failing_assertion_exits_one(tmp_path):
    doc = _minimal(
        assertions=[
            {
                "kind": "queryContextEquals",
                "request": {"entities": [{"id": "ghost"}]},
                "expected": {"entities": [{"id": "ghost", "type": "", "attributes": []}]},
            }
        ]
    )
    report = run_scenario(_write_scenario(tmp_path, doc), print_report=False)
    assert report.exit_code == 1
    (outcome,) = report.outcomes
    assert not outcome.passed
    assert outcome.detail == "entity state differs"


def test_unknown_assertion_kind_fails_the_run(tmp_path):
    doc = _minimal(assertions=[{"kind": "vibeCheck"}])
    report = run_scenario(_write_scenario(tmp_path, doc), print_report=False)
    assert report.exit_code == 1
    assert "unknown assertion kind" in report.outcomes[0].detail


def test_unusable_scenario_exits_two(tmp_path):
    report = run_scenario(tmp_path / "absent.json", print_report=False)
    assert report.exit_code == 2 and report.error
    # a sensor outside the resource tree fails during setup, also exit 2
    doc = _minimal(
        sensors=[{"name": "s", "containerPath": "/elsewhere/room", "valueSequence": []}]
    )
    report = run_scenario(_write_scenario(tmp_path, doc), print_report=False)
    assert report.exit_code == 2
    assert "must lie under /cse" in (report.error or "")


def test_container_bootstrap_and_replay(tmp_path):
    doc = _minimal(
        sensors=[
            {
                "name": "s1",
                "containerPath": "/cse/gw/floor1/room1",
                "valueSequence": [1, 2],
            }
        ],
        assertions=[
            {
                "kind": "discoverContains",
                "request": {"root": "/cse", "resourceType": "AE"},
                "expected": ["/cse/gw"],
            },
            {
                "kind": "discoverContains",
                "request": {"root": "/cse", "resourceType": "Container"},
                "expected": ["/cse/gw/floor1", "/cse/gw/floor1/room1"],
            },
            {
                "kind": "discoverContains",
                "request": {"root": "/cse/gw/floor1/room1", "resourceType": "ContentInstance"},
                "expected": [
                    "/cse/gw/floor1/room1/s1-0000",
                    "/cse/gw/floor1/room1/s1-0001",
                ],
            },
        ],
        quiescenceMillis=500,
    )
    report = run_scenario(_write_scenario(tmp_path, doc), print_report=False)
    assert report.exit_code == 0, [o.detail for o in report.outcomes]


def test_validation_assertion_boots_validator(tmp_path):
    (tmp_path / "query.rq").write_text("ASK { ?s ?p ?o }", encoding="utf-8")
    (tmp_path / "broken.rq").write_text("ASK { ?s ?p", encoding="utf-8")
    doc = _minimal(
        assertions=[
            {
                "kind": "validationPasses",
                "request": {"kind": "sparql", "file": "query.rq"},
                "expected": True,
            },
            {
                "kind": "validationPasses",
                "request": {"kind": "sparql", "file": "broken.rq"},
                "expected": False,
            },
        ]
    )
    report = run_scenario(_write_scenario(tmp_path, doc), print_report=False)
    assert report.exit_code == 0, [o.detail for o in report.outcomes]
