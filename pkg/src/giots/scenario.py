"""Scenario runner: boots the knowledge server, CSE and broker, starts
the gateway and agents, replays sensor values as content instances and
evaluates machine-checkable assertions against the wire APIs.

Everything communicates over HTTP even though the services share one
process; in-process shortcuts would bypass the behavior under test.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .agent import Agent, AgentService, load_agent_config
from .broker import BrokerService
from .cse import CseClient, CseService
from .httpkit import (
    ServerHandle,
    TransportError,
    find_free_port,
    get_json,
    post_json,
    run_service,
    wait_healthy,
)
from .knowledge import KnowledgeClient, KnowledgeService
from .smg import GatewayConfig, MediationGateway, SmgService
from .validator import ValidatorService

log = logging.getLogger(__name__)

DEFAULT_QUIESCENCE_MILLIS = 2000
ASSERTION_POLL_SECONDS = 0.1
SMG_READY_TIMEOUT = 10.0


class ScenarioError(Exception):
    """The scenario file is unusable or the environment failed to boot."""


@dataclass
class Sensor:
    name: str
    container_path: str
    descriptor: str | None
    value_sequence: list
    period_millis: int


@dataclass
class Scenario:
    base_dir: Path
    ontology_file: Path | None
    services: dict[str, int]
    sensors: list[Sensor]
    smg: dict | None
    agent_paths: list[Path]
    assertions: list[dict]
    quiescence_millis: int


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    base_dir = path.parent

    ontology_file = None
    if raw.get("ontologyFile") is not None:
        ontology_file = base_dir / raw["ontologyFile"]
        if not ontology_file.is_file():
            raise ScenarioError(f"ontology file not found: {ontology_file}")

    services = raw.get("services", {})
    if not isinstance(services, dict) or not all(
        isinstance(v, int) for v in services.values()
    ):
        raise ScenarioError("'services' must map component names to ports")
    ports = [p for p in services.values() if p]
    if len(ports) != len(set(ports)):
        raise ScenarioError("service ports must be distinct")

    sensors = []
    for index, raw_sensor in enumerate(raw.get("sensors", [])):
        if not isinstance(raw_sensor, dict):
            raise ScenarioError(f"sensor #{index} must be a JSON object")
        name = raw_sensor.get("name")
        container = raw_sensor.get("containerPath")
        if not isinstance(name, str) or not name:
            raise ScenarioError(f"sensor #{index} needs a 'name'")
        if not isinstance(container, str) or not container.startswith("/"):
            raise ScenarioError(f"sensor '{name}' needs an absolute 'containerPath'")
        descriptor = raw_sensor.get("descriptor")
        if descriptor is None and raw_sensor.get("descriptorFile") is not None:
            descriptor_path = base_dir / raw_sensor["descriptorFile"]
            if not descriptor_path.is_file():
                raise ScenarioError(f"descriptor file not found: {descriptor_path}")
            descriptor = descriptor_path.read_text(encoding="utf-8")
        values = raw_sensor.get("valueSequence", [])
        if not isinstance(values, list):
            raise ScenarioError(f"sensor '{name}': 'valueSequence' must be a list")
        period = raw_sensor.get("periodMillis", 0)
        if not isinstance(period, int) or period < 0:
            raise ScenarioError(f"sensor '{name}': 'periodMillis' must be >= 0")
        sensors.append(Sensor(name, container, descriptor, values, period))

    agent_paths = []
    for entry in raw.get("agents", []):
        agent_path = base_dir / entry
        if not agent_path.is_file():
            raise ScenarioError(f"agent config not found: {agent_path}")
        agent_paths.append(agent_path)

    assertions = raw.get("assertions", [])
    if not isinstance(assertions, list):
        raise ScenarioError("'assertions' must be a list")

    quiescence = raw.get("quiescenceMillis", DEFAULT_QUIESCENCE_MILLIS)
    if not isinstance(quiescence, int) or quiescence < 0:
        raise ScenarioError("'quiescenceMillis' must be >= 0")

    smg = raw.get("smg")
    if smg is not None and not isinstance(smg, dict):
        raise ScenarioError("'smg' must be a JSON object")

    return Scenario(
        base_dir=base_dir,
        ontology_file=ontology_file,
        services=services,
        sensors=sensors,
        smg=smg,
        agent_paths=agent_paths,
        assertions=assertions,
        quiescence_millis=quiescence,
    )


@dataclass
class AssertionOutcome:
    index: int
    kind: str
    passed: bool
    detail: str = ""
    actual: Any = None
    expected: Any = None


@dataclass
class ScenarioReport:
    exit_code: int
    outcomes: list[AssertionOutcome] = field(default_factory=list)
    error: str | None = None

    def lines(self) -> list[str]:
        out = []
        if self.error:
            out.append(f"SETUP FAILED: {self.error}")
        for outcome in self.outcomes:
            status = "PASS" if outcome.passed else "FAIL"
            line = f"assertion {outcome.index}: {outcome.kind}: {status}"
            if not outcome.passed and outcome.detail:
                line += f" ({outcome.detail})"
            out.append(line)
            if not outcome.passed and outcome.expected is not None:
                out.append(f"  expected: {json.dumps(outcome.expected, sort_keys=True)}")
                out.append(f"  actual:   {json.dumps(outcome.actual, sort_keys=True)}")
        return out


def _strip_timestamps(entities: Any) -> tuple[Any, list[str]]:
    """Remove 'timestamp' metadata for comparison; collect removed values."""
    stamps: list[str] = []
    if not isinstance(entities, list):
        return entities, stamps
    cleaned = []
    for entity in entities:
        if not isinstance(entity, dict):
            cleaned.append(entity)
            continue
        entity = dict(entity)
        attrs = []
        for attr in entity.get("attributes", []):
            if isinstance(attr, dict):
                attr = dict(attr)
                kept = []
                for meta in attr.get("metadata", []):
                    if isinstance(meta, dict) and meta.get("name") == "timestamp":
                        stamps.append(meta.get("value"))
                    else:
                        kept.append(meta)
                attr["metadata"] = kept
            attrs.append(attr)
        entity["attributes"] = attrs
        cleaned.append(entity)
    return cleaned, stamps


def _normalize_entities(entities: Any) -> Any:
    if not isinstance(entities, list):
        return entities
    out = []
    for entity in entities:
        if not isinstance(entity, dict):
            out.append(entity)
            continue
        entity = dict(entity)
        attrs = []
        for attr in entity.get("attributes", []):
            if isinstance(attr, dict):
                attr = dict(attr)
                attr["metadata"] = sorted(
                    attr.get("metadata", []), key=lambda m: json.dumps(m, sort_keys=True)
                )
            attrs.append(attr)
        entity["attributes"] = sorted(attrs, key=lambda a: json.dumps(a, sort_keys=True))
        out.append(entity)
    return sorted(out, key=lambda e: json.dumps(e, sort_keys=True))


def _parse_timestamp(value: Any) -> datetime | None:
    if not isinstance(value, str):
        return None
    try:
        return datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        return None


class ScenarioRunner:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.handles: dict[str, ServerHandle] = {}
        self.urls: dict[str, str] = {}
        self.started_at = datetime.now(timezone.utc)

    def _port(self, component: str) -> int:
        configured = self.scenario.services.get(component, 0)
        return configured if configured else find_free_port()

    def _boot(self, component: str, service) -> str:
        handle = run_service(service, self._port(component))
        self.handles[component] = handle
        self.urls[component] = handle.url
        wait_healthy(handle.url)
        return handle.url

    def setup(self) -> None:
        knowledge_url = self._boot("knowledge", KnowledgeService())
        if self.scenario.ontology_file is not None:
            KnowledgeClient(knowledge_url).upload(
                self.scenario.ontology_file.read_text(encoding="utf-8")
            )
        cse_url = self._boot("cse", CseService())
        broker_url = self._boot("broker", BrokerService(knowledge_url=knowledge_url))
        if self._needs_validator():
            self._boot("validator", ValidatorService())
        cse = CseClient(cse_url)
        for sensor in self.scenario.sensors:
            self._ensure_container(cse, sensor)
        if self.scenario.smg is not None:
            self._boot_smg(cse_url, broker_url, knowledge_url)
        for index, agent_path in enumerate(self.scenario.agent_paths):
            self._boot_agent(index, agent_path, broker_url)

    def _needs_validator(self) -> bool:
        return any(a.get("kind") == "validationPasses" for a in self.scenario.assertions)

    def _ensure_container(self, cse: CseClient, sensor: Sensor) -> None:
        segments = [s for s in sensor.container_path.strip("/").split("/") if s]
        if len(segments) < 2 or segments[0] != "cse":
            raise ScenarioError(
                f"sensor '{sensor.name}': containerPath must lie under /cse"
            )
        path = "/cse"
        for depth, segment in enumerate(segments[1:], start=1):
            child = f"{path}/{segment}"
            status, _ = get_json(self.urls["cse"] + child)
            if status != 200:
                is_last = depth == len(segments) - 1
                ty = "Container" if (is_last or depth > 1) else "AE"
                cse.create(path, ty, {"rn": segment})
            path = child
        if sensor.descriptor is not None:
            listing = cse.discover(path, resource_type="SemanticDescriptor")
            direct = [p for p in listing if p.rpartition("/")[0] == path]
            if not direct:
                cse.create(
                    path, "SemanticDescriptor",
                    {"rn": "descriptor", "dsp": sensor.descriptor},
                )

    def _boot_smg(self, cse_url: str, broker_url: str, knowledge_url: str) -> None:
        raw = dict(self.scenario.smg or {})
        raw.setdefault("cseUrl", cse_url)
        raw.setdefault("brokerUrl", broker_url)
        raw.setdefault("knowledgeUrl", knowledge_url)
        port = self._port("smg")
        raw.setdefault("gatewayUrl", f"http://127.0.0.1:{port}")
        try:
            config = GatewayConfig.from_json(raw)
        except ValueError as exc:
            raise ScenarioError(f"invalid smg config: {exc}") from exc
        gateway = MediationGateway(config)
        handle = run_service(SmgService(gateway), port)
        self.handles["smg"] = handle
        self.urls["smg"] = handle.url
        wait_healthy(handle.url)
        gateway.start()
        self._await_instances(handle.url)

    def _await_instances(self, smg_url: str) -> None:
        """Hold the replay until every annotated sensor container has a
        transformation instance, so no content instance goes unnoticed."""
        wanted = {
            s.container_path for s in self.scenario.sensors if s.descriptor is not None
        }
        if not wanted:
            return
        deadline = time.monotonic() + SMG_READY_TIMEOUT
        while time.monotonic() < deadline:
            status, payload = get_json(smg_url + "/instances")
            if status == 200 and isinstance(payload, dict):
                covered = {
                    i.get("sourceContainerPath") for i in payload.get("instances", [])
                }
                if wanted <= covered:
                    return
            time.sleep(0.1)
        log.warning(
            "some annotated containers never produced a transformation instance: %s",
            sorted(wanted),
        )

    def _boot_agent(self, index: int, path: Path, broker_url: str) -> None:
        try:
            config = load_agent_config(str(path))
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"invalid agent config {path.name}: {exc}") from exc
        config.broker_url = broker_url  # the harness owns service placement
        key = f"agent-{index}"
        port = self._port(key)
        agent = Agent(config, f"http://127.0.0.1:{port}")
        handle = run_service(AgentService(agent), port)
        self.handles[key] = handle
        self.urls[key] = handle.url
        wait_healthy(handle.url)
        agent.start()

    # -- replay --------------------------------------------------------------

    def replay(self) -> None:
        threads = []
        for sensor in self.scenario.sensors:
            thread = threading.Thread(target=self._replay_sensor, args=(sensor,))
            thread.start()
            threads.append(thread)
        for thread in threads:
            thread.join()

    def _replay_sensor(self, sensor: Sensor) -> None:
        cse = CseClient(self.urls["cse"])
        for index, value in enumerate(sensor.value_sequence):
            try:
                cse.create(
                    sensor.container_path, "ContentInstance",
                    {"rn": f"{sensor.name}-{index:04d}", "con": {"value": value}},
                )
            except (TransportError, ValueError) as exc:
                log.error("sensor '%s' item %d failed: %s", sensor.name, index, exc)
            if sensor.period_millis:
                time.sleep(sensor.period_millis / 1000.0)

    # -- assertions -------------------------------------------------------------

    def evaluate_assertions(self) -> list[AssertionOutcome]:
        deadline = time.monotonic() + self.scenario.quiescence_millis / 1000.0
        while True:
            outcomes = [
                self._evaluate(i, a) for i, a in enumerate(self.scenario.assertions)
            ]
            if all(o.passed for o in outcomes) or time.monotonic() >= deadline:
                return outcomes
            time.sleep(ASSERTION_POLL_SECONDS)

    def _evaluate(self, index: int, assertion: dict) -> AssertionOutcome:
        kind = assertion.get("kind")
        try:
            if kind == "queryContextEquals":
                return self._assert_query(index, assertion)
            if kind == "discoverContains":
                return self._assert_discover(index, assertion)
            if kind == "validationPasses":
                return self._assert_validation(index, assertion)
        except (TransportError, OSError) as exc:
            return AssertionOutcome(index, str(kind), False, detail=str(exc))
        return AssertionOutcome(
            index, str(kind), False, detail=f"unknown assertion kind {kind!r}"
        )

    def _assert_query(self, index: int, assertion: dict) -> AssertionOutcome:
        request = assertion.get("request") or {}
        expected = (assertion.get("expected") or {}).get("entities", [])
        tolerance = assertion.get("toleranceMillis")
        status, payload = post_json(self.urls["broker"] + "/ngsi10/queryContext", request)
        if status != 200 or not isinstance(payload, dict):
            return AssertionOutcome(
                index, "queryContextEquals", False,
                detail=f"queryContext returned {status}", actual=payload,
                expected=expected,
            )
        actual_clean, stamps = _strip_timestamps(payload.get("entities", []))
        expected_clean, _ = _strip_timestamps(expected)
        if _normalize_entities(actual_clean) != _normalize_entities(expected_clean):
            return AssertionOutcome(
                index, "queryContextEquals", False, detail="entity state differs",
                actual=actual_clean, expected=expected_clean,
            )
        if tolerance is not None:
            low = self.started_at.timestamp() - tolerance / 1000.0
            high = datetime.now(timezone.utc).timestamp() + tolerance / 1000.0
            for stamp in stamps:
                parsed = _parse_timestamp(stamp)
                if parsed is None or not (low <= parsed.timestamp() <= high):
                    return AssertionOutcome(
                        index, "queryContextEquals", False,
                        detail=f"timestamp {stamp!r} outside the run window",
                        actual=stamp, expected=f"within +/-{tolerance}ms of the run",
                    )
        return AssertionOutcome(index, "queryContextEquals", True)

    def _assert_discover(self, index: int, assertion: dict) -> AssertionOutcome:
        request = assertion.get("request") or {}
        expected = assertion.get("expected") or []
        root = request.get("root", "/cse")
        cse = CseClient(self.urls["cse"])
        try:
            found = cse.discover(
                root,
                resource_type=request.get("resourceType"),
                labels=request.get("labels"),
                semantic_filter=request.get("semanticFilter"),
            )
        except ValueError as exc:
            return AssertionOutcome(index, "discoverContains", False, detail=str(exc))
        missing = [p for p in expected if p not in found]
        if missing:
            return AssertionOutcome(
                index, "discoverContains", False,
                detail=f"missing {missing}", actual=found, expected=expected,
            )
        return AssertionOutcome(index, "discoverContains", True)

    def _assert_validation(self, index: int, assertion: dict) -> AssertionOutcome:
        request = assertion.get("request") or {}
        expected = assertion.get("expected", True)
        kind = request.get("kind")
        file_name = request.get("file")
        if kind not in {"ontology", "annotation", "rule", "sparql"} or not file_name:
            return AssertionOutcome(
                index, "validationPasses", False,
                detail="request needs 'kind' and 'file'",
            )
        payload_path = self.scenario.base_dir / file_name
        body = payload_path.read_text(encoding="utf-8")
        status, payload = post_json(self.urls["validator"] + f"/validate/{kind}", body)
        if status != 200 or not isinstance(payload, dict):
            return AssertionOutcome(
                index, "validationPasses", False,
                detail=f"validator returned {status}", actual=payload,
            )
        if payload.get("passed") is not bool(expected):
            return AssertionOutcome(
                index, "validationPasses", False, detail="verdict differs",
                actual=payload, expected={"passed": bool(expected)},
            )
        return AssertionOutcome(index, "validationPasses", True)

    # -- lifecycle ----------------------------------------------------------------

    def teardown(self) -> None:
        for component in reversed(list(self.handles)):
            try:
                self.handles[component].stop()
            except Exception:  # pragma: no cover - teardown must not mask results
                log.exception("stopping %s failed", component)


def run_scenario(path: str | Path, print_report: bool = True) -> ScenarioReport:
    try:
        scenario = load_scenario(path)
    except ScenarioError as exc:
        report = ScenarioReport(exit_code=2, error=str(exc))
        if print_report:
            print("\n".join(report.lines()))
        return report
    runner = ScenarioRunner(scenario)
    try:
        try:
            runner.setup()
            runner.replay()
        except (ScenarioError, TransportError, ValueError, OSError) as exc:
            report = ScenarioReport(exit_code=2, error=str(exc))
            if print_report:
                print("\n".join(report.lines()))
            return report
        outcomes = runner.evaluate_assertions()
    finally:
        runner.teardown()
    exit_code = 0 if all(o.passed for o in outcomes) else 1
    report = ScenarioReport(exit_code=exit_code, outcomes=outcomes)
    if print_report:
        print("\n".join(report.lines()))
    return report
