"""Semantic mediation gateway: discovers annotated containers on a CSE,
selects a transformation process per source, instantiates one pipeline
per mapping subject, converts incoming content instances and publishes
them as context updates.

Push mode writes updateContext(APPEND) to the broker; pull mode keeps a
local cache, registers the gateway as a context provider and answers
the broker's queryContext pulls.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation, localcontext
from typing import Any, Callable

from .cse import CseClient
from .httpkit import (
    HttpRequest,
    HttpResponse,
    JsonHttpService,
    TransportError,
    bad_request,
    request_json,
)
from .knowledge import KnowledgeClient
from .ngsi import (
    ContextAttribute,
    ContextEntity,
    ContextMetadata,
    parse_attribute_names,
    parse_patterns,
)
from .rdf import IRI, MED_NS, Graph, Literal, parse_ntriples, term_text
from .sparql import evaluate, parse_sparql

log = logging.getLogger(__name__)

MED_DESCRIBES_ENTITY = IRI(MED_NS + "describesEntity")
MED_ENTITY_TYPE = IRI(MED_NS + "entityType")
MED_ATTRIBUTE_NAME = IRI(MED_NS + "attributeName")
MED_UNIT_OF_MEASURE = IRI(MED_NS + "unitOfMeasure")
MED_VALUE_PATH = IRI(MED_NS + "valuePath")
MED_CONVERSION = IRI(MED_NS + "conversion")
MED_LOCATION = IRI(MED_NS + "location")

ENTITY_URN_PREFIX = "urn:entity:"
DEFAULT_VALUE_PATH = "/value"
DEFAULT_RESCAN_MILLIS = 5000
PUSH_ATTEMPTS = 3
PUSH_RETRY_DELAY = 0.1

SOURCE_FILTER = (
    f"PREFIX med: <{MED_NS}> ASK {{ ?s med:attributeName ?n }}"
)


class MediationError(Exception):
    """Base for per-source and per-item pipeline failures."""


class NoProcessFound(MediationError):
    pass


class ReasoningFailed(MediationError):
    pass


class SubscriptionFailed(MediationError):
    pass


class ExtractionError(MediationError):
    pass


class ConversionError(MediationError):
    pass


# --- conversion routines -------------------------------------------------------


def _to_decimal(value: Any) -> Decimal:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConversionError(f"expected a number, got {value!r}")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConversionError(f"non-finite number {value!r}")
        return Decimal(str(value))
    return Decimal(value)


def _from_decimal(dec: Decimal) -> int | float:
    if dec == dec.to_integral_value() and abs(dec) < Decimal(10) ** 15:
        return int(dec)
    return float(dec)


@dataclass(frozen=True)
class ConversionRoutine:
    id: str
    output_unit: str | None = None
    numeric_fn: Callable[[Decimal], Decimal] | None = None
    raw_fn: Callable[[Any], Any] | None = None

    def convert(self, value: Any) -> Any:
        if self.numeric_fn is not None:
            return _from_decimal(self.convert_exact(_to_decimal(value)))
        assert self.raw_fn is not None
        return self.raw_fn(value)

    def convert_exact(self, value: Decimal) -> Decimal:
        """Decimal-in, Decimal-out form of a numeric routine; additive
        offsets stay span-exact (no floating point on the way)."""
        if self.numeric_fn is None:
            raise ConversionError(f"routine '{self.id}' is not numeric")
        return self.numeric_fn(value)


def _identity(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)):
        return value
    raise ConversionError(f"value {value!r} is not a JSON scalar")


def _string_to_number(value: Any) -> int | float:
    if not isinstance(value, str):
        raise ConversionError(f"expected a string, got {value!r}")
    text = value.strip()
    try:
        dec = Decimal(text)
    except InvalidOperation as exc:
        raise ConversionError(f"'{text}' is not a number") from exc
    if not dec.is_finite():
        raise ConversionError(f"'{text}' is not a finite number")
    return _from_decimal(dec)


def _fahrenheit_to_celsius(value: Decimal) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 28
        return (value - 32) * 5 / 9


_FIXED_ROUTINES = {
    "identity": ConversionRoutine("identity", raw_fn=_identity),
    "celsius_to_kelvin": ConversionRoutine(
        "celsius_to_kelvin", output_unit="kelvin",
        numeric_fn=lambda v: v + Decimal("273.15"),
    ),
    "fahrenheit_to_celsius": ConversionRoutine(
        "fahrenheit_to_celsius", output_unit="celsius",
        numeric_fn=_fahrenheit_to_celsius,
    ),
    "string_to_number": ConversionRoutine("string_to_number", raw_fn=_string_to_number),
}


def resolve_routine(conversion_id: str) -> ConversionRoutine | None:
    if conversion_id in _FIXED_ROUTINES:
        return _FIXED_ROUTINES[conversion_id]
    if conversion_id.startswith("scale:"):
        try:
            factor = Decimal(conversion_id[len("scale:"):])
        except InvalidOperation:
            return None
        if not factor.is_finite():
            return None
        return ConversionRoutine(conversion_id, numeric_fn=lambda v: v * factor)
    return None


# --- transformation processes ----------------------------------------------------


@dataclass(frozen=True)
class TransformationProcess:
    process_id: str
    match_query: str
    conversion_id: str
    priority: int

    @staticmethod
    def from_json(obj: Any) -> "TransformationProcess":
        if not isinstance(obj, dict):
            raise ValueError("process must be a JSON object")
        pid = obj.get("processId")
        match_query = obj.get("matchQuery")
        conversion_id = obj.get("conversionId")
        priority = obj.get("priority", 0)
        if not isinstance(pid, str) or not pid:
            raise ValueError("process needs a non-empty 'processId'")
        if not isinstance(match_query, str):
            raise ValueError(f"process '{pid}' needs a 'matchQuery' string")
        query = parse_sparql(match_query)  # SparqlSyntaxError propagates
        if query.form != "ASK":
            raise ValueError(f"process '{pid}': matchQuery must be an ASK query")
        if not isinstance(conversion_id, str) or resolve_routine(conversion_id) is None:
            raise ValueError(f"process '{pid}': unknown conversion '{conversion_id}'")
        if not isinstance(priority, int) or isinstance(priority, bool):
            raise ValueError(f"process '{pid}': 'priority' must be an integer")
        return TransformationProcess(pid, match_query, conversion_id, priority)

    def matches(self, descriptor: Graph) -> bool:
        return evaluate(parse_sparql(self.match_query), descriptor) is True


def select_process(
    descriptor: Graph, library: list[TransformationProcess]
) -> TransformationProcess:
    """Highest priority among matching processes; ties go to the
    lexicographically smallest processId."""
    matching = [p for p in library if p.matches(descriptor)]
    if not matching:
        raise NoProcessFound("no transformation process matches the descriptor")
    return min(matching, key=lambda p: (-p.priority, p.process_id))


# --- target resolution ------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedTarget:
    subject: str  # descriptor subject term, the mapping's identity
    entity_iri: str
    entity_id: str  # context-broker identifier (URN prefix stripped)
    entity_type: str
    type_declared: bool
    attribute_name: str
    unit: str | None
    location: tuple[float, float] | None
    value_path: str
    conversion_hint: str | None
    source_path: str

    def to_json(self) -> dict:
        return {
            "entityId": self.entity_iri,
            "ngsiId": self.entity_id,
            "entityType": self.entity_type,
            "attributeName": self.attribute_name,
            "staticMetadata": {
                k: v
                for k, v in {
                    "unit": self.unit,
                    "location": list(self.location) if self.location else None,
                    "source": self.source_path,
                }.items()
                if v is not None
            },
        }


def _values(graph: Graph, subject, predicate: IRI) -> list:
    return [t.object for t in graph if t.subject == subject and t.predicate == predicate]


def _single_iri(values: list, what: str) -> str:
    if not values:
        raise ReasoningFailed(f"missing {what}")
    if len(values) > 1:
        raise ReasoningFailed(f"ambiguous {what} (found {len(values)})")
    if not isinstance(values[0], IRI):
        raise ReasoningFailed(f"{what} must be an IRI")
    return values[0].value


def _single_literal(values: list, what: str) -> str:
    if not values:
        raise ReasoningFailed(f"missing {what}")
    if len(values) > 1:
        raise ReasoningFailed(f"ambiguous {what} (found {len(values)})")
    if not isinstance(values[0], Literal):
        raise ReasoningFailed(f"{what} must be a literal")
    return values[0].lexical


def _optional_literal(values: list, what: str) -> str | None:
    if not values:
        return None
    if len(values) > 1:
        raise ReasoningFailed(f"ambiguous {what} (found {len(values)})")
    if not isinstance(values[0], Literal):
        raise ReasoningFailed(f"{what} must be a literal")
    return values[0].lexical


def ngsi_entity_id(entity_iri: str) -> str:
    """Context-broker identifier for an entity IRI: the conventional
    urn:entity: prefix is transport encoding, not part of the name."""
    if entity_iri.startswith(ENTITY_URN_PREFIX):
        return entity_iri[len(ENTITY_URN_PREFIX):]
    return entity_iri


def resolve_targets(
    descriptor: Graph,
    source_path: str,
    knowledge: KnowledgeClient | None = None,
) -> list[ResolvedTarget]:
    """One target per descriptor subject carrying mapping facts; every
    such subject must state entity, type and attribute unambiguously."""
    mapping_predicates = {MED_DESCRIBES_ENTITY, MED_ENTITY_TYPE, MED_ATTRIBUTE_NAME}
    subjects = sorted(
        {t.subject for t in descriptor if t.predicate in mapping_predicates},
        key=term_text,
    )
    targets = []
    for subject in subjects:
        where = term_text(subject)
        entity_iri = _single_iri(
            _values(descriptor, subject, MED_DESCRIBES_ENTITY),
            f"{where}: describesEntity",
        )
        entity_type = _single_iri(
            _values(descriptor, subject, MED_ENTITY_TYPE),
            f"{where}: entityType",
        )
        attribute_name = _single_literal(
            _values(descriptor, subject, MED_ATTRIBUTE_NAME), f"{where}: attributeName"
        )
        unit = _optional_literal(
            _values(descriptor, subject, MED_UNIT_OF_MEASURE), f"{where}: unitOfMeasure"
        )
        raw_location = _optional_literal(
            _values(descriptor, subject, MED_LOCATION), f"{where}: location"
        )
        location = None
        if raw_location is not None:
            try:
                lon_text, lat_text = raw_location.split(",")
                location = (float(lon_text), float(lat_text))
            except ValueError:
                log.warning("%s: ignoring malformed location %r", where, raw_location)
        value_path = (
            _optional_literal(_values(descriptor, subject, MED_VALUE_PATH), f"{where}: valuePath")
            or DEFAULT_VALUE_PATH
        )
        conversion_hint = _optional_literal(
            _values(descriptor, subject, MED_CONVERSION), f"{where}: conversion"
        )
        type_declared = knowledge.declared_class(entity_type) if knowledge else True
        if not type_declared:
            log.warning("%s: entity type %s is not a declared class", where, entity_type)
        targets.append(
            ResolvedTarget(
                subject=where,
                entity_iri=entity_iri,
                entity_id=ngsi_entity_id(entity_iri),
                entity_type=entity_type,
                type_declared=type_declared,
                attribute_name=attribute_name,
                unit=unit,
                location=location,
                value_path=value_path,
                conversion_hint=conversion_hint,
                source_path=source_path,
            )
        )
    if not targets:
        raise ReasoningFailed("descriptor carries no mapping facts")
    return targets


def resolve_pointer(doc: Any, pointer: str) -> Any:
    if pointer == "":
        return doc
    if not pointer.startswith("/"):
        raise ExtractionError(f"value path '{pointer}' must start with '/'")
    node = doc
    for token in pointer[1:].split("/"):
        token = token.replace("~1", "/").replace("~0", "~")
        if isinstance(node, dict):
            if token not in node:
                raise ExtractionError(f"no member '{token}' at '{pointer}'")
            node = node[token]
        elif isinstance(node, list):
            try:
                index = int(token)
            except ValueError:
                raise ExtractionError(f"'{token}' is not an array index") from None
            if not 0 <= index < len(node):
                raise ExtractionError(f"index {index} out of range at '{pointer}'")
            node = node[index]
        else:
            raise ExtractionError(f"cannot descend into {type(node).__name__} at '{token}'")
    return node


# --- gateway -----------------------------------------------------------------------


@dataclass
class TransformationInstance:
    instance_id: str
    source_container: str
    process: TransformationProcess
    target: ResolvedTarget
    routine: ConversionRoutine
    subscription_ri: str
    items_converted: int = 0
    items_dropped: int = 0

    def to_json(self) -> dict:
        return {
            "instanceId": self.instance_id,
            "sourceContainerPath": self.source_container,
            "processId": self.process.process_id,
            "conversionId": self.routine.id,
            "resolvedTarget": self.target.to_json(),
            "itemsConverted": self.items_converted,
            "itemsDropped": self.items_dropped,
        }


@dataclass
class GatewayConfig:
    cse_url: str
    broker_url: str
    knowledge_url: str | None
    mode: str  # "push" | "pull"
    gateway_url: str  # advertised base URL for callbacks and pulls
    processes: list[TransformationProcess]
    rescan_millis: int = DEFAULT_RESCAN_MILLIS
    root_path: str = "/cse"

    @staticmethod
    def from_json(obj: Any, gateway_url: str | None = None) -> "GatewayConfig":
        if not isinstance(obj, dict):
            raise ValueError("gateway config must be a JSON object")
        for key in ("cseUrl", "brokerUrl", "mode"):
            if not isinstance(obj.get(key), str) or not obj[key]:
                raise ValueError(f"gateway config needs a '{key}' string")
        if obj["mode"] not in {"push", "pull"}:
            raise ValueError("gateway 'mode' must be 'push' or 'pull'")
        raw_processes = obj.get("processes")
        if not isinstance(raw_processes, list) or not raw_processes:
            raise ValueError("gateway config needs a non-empty 'processes' list")
        processes = [TransformationProcess.from_json(p) for p in raw_processes]
        ids = [p.process_id for p in processes]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate processId in gateway config")
        rescan = obj.get("rescanPeriodMillis", DEFAULT_RESCAN_MILLIS)
        if not isinstance(rescan, int) or isinstance(rescan, bool) or rescan <= 0:
            raise ValueError("'rescanPeriodMillis' must be a positive integer")
        url = gateway_url or obj.get("gatewayUrl")
        if not isinstance(url, str) or not url:
            raise ValueError("gateway config needs a 'gatewayUrl'")
        return GatewayConfig(
            cse_url=obj["cseUrl"],
            broker_url=obj["brokerUrl"],
            knowledge_url=obj.get("knowledgeUrl"),
            mode=obj["mode"],
            gateway_url=url.rstrip("/"),
            processes=processes,
            rescan_millis=rescan,
            root_path=obj.get("rootPath", "/cse"),
        )


class MediationGateway:
    """Runs the discover/select/instantiate/convert/publish pipeline.

    One worker per instance preserves per-source ordering; the re-scan
    loop picks up annotations added after startup.
    """

    def __init__(self, config: GatewayConfig):
        self.config = config
        self.cse = CseClient(config.cse_url)
        self.knowledge = (
            KnowledgeClient(config.knowledge_url) if config.knowledge_url else None
        )
        self._lock = threading.Lock()
        self._instances: dict[str, TransformationInstance] = {}
        self._by_subscription: dict[str, TransformationInstance] = {}
        self._claimed: set[tuple[str, str]] = set()  # (container, subject)
        self._skipped: set[str] = set()  # containers with no matching process
        self._queues: dict[str, queue.Queue] = {}
        self._workers: dict[str, threading.Thread] = {}
        self._counter = 0
        self._cache: dict[str, ContextEntity] = {}  # pull-mode context state
        self._stop = threading.Event()
        self._rescan_thread: threading.Thread | None = None
        self.scans = 0

    # -- pipeline steps ----------------------------------------------------

    def discover_sources(self) -> list[tuple[str, Graph]]:
        paths = self.cse.discover(
            self.config.root_path,
            resource_type="Container",
            semantic_filter=SOURCE_FILTER,
        )
        sources = []
        for path in paths:
            descriptor_paths = self.cse.discover(path, resource_type="SemanticDescriptor")
            direct = [p for p in descriptor_paths if p.rpartition("/")[0] == path]
            if not direct:
                continue
            resource = self.cse.retrieve(direct[0])
            sources.append((path, parse_ntriples(resource["dsp"])))
        return sources

    def scan_once(self) -> int:
        """One discovery pass; returns the number of new instances."""
        try:
            sources = self.discover_sources()
        except (TransportError, ValueError) as exc:
            log.warning("source discovery failed, will retry: %s", exc)
            return 0
        self.scans += 1
        created = 0
        for container_path, descriptor in sources:
            created += self._adopt_source(container_path, descriptor)
        return created

    def _adopt_source(self, container_path: str, descriptor: Graph) -> int:
        try:
            process = select_process(descriptor, self.config.processes)
        except NoProcessFound:
            if container_path not in self._skipped:
                self._skipped.add(container_path)
                log.warning("no process matches %s; source skipped", container_path)
            return 0
        try:
            targets = resolve_targets(descriptor, container_path, self.knowledge)
        except ReasoningFailed as exc:
            log.warning("cannot resolve targets for %s: %s", container_path, exc)
            return 0
        created = 0
        for target in targets:
            key = (container_path, target.subject)
            with self._lock:
                if key in self._claimed:
                    continue
            try:
                self._instantiate(container_path, process, target)
                created += 1
            except (SubscriptionFailed, ValueError) as exc:
                log.warning("cannot instantiate %s for %s: %s", key, container_path, exc)
        return created

    def _instantiate(
        self, container_path: str, process: TransformationProcess, target: ResolvedTarget
    ) -> TransformationInstance:
        routine = resolve_routine(process.conversion_id)
        assert routine is not None  # processes validate at load time
        if target.conversion_hint:
            hinted = resolve_routine(target.conversion_hint)
            if hinted is None:
                log.warning(
                    "descriptor names unknown conversion '%s'; using process routine",
                    target.conversion_hint,
                )
            else:
                routine = hinted
        with self._lock:
            self._counter += 1
            instance_id = f"ti-{self._counter:05d}"
        try:
            sub = self.cse.create(
                container_path, "Subscription",
                {"rn": f"smg-{instance_id}", "nu": self.config.gateway_url + "/notify"},
            )
        except (TransportError, ValueError) as exc:
            raise SubscriptionFailed(str(exc)) from exc
        instance = TransformationInstance(
            instance_id=instance_id,
            source_container=container_path,
            process=process,
            target=target,
            routine=routine,
            subscription_ri=sub["ri"],
        )
        if self.config.mode == "pull":
            self._register_provider(instance)
        with self._lock:
            self._claimed.add((container_path, target.subject))
            self._instances[instance_id] = instance
            self._by_subscription[sub["ri"]] = instance
            q: queue.Queue = queue.Queue()
            self._queues[instance_id] = q
            worker = threading.Thread(
                target=self._worker, args=(instance, q), daemon=True
            )
            self._workers[instance_id] = worker
            worker.start()
        log.info(
            "instantiated %s: %s -> %s.%s via %s",
            instance_id, container_path, instance.target.entity_id,
            instance.target.attribute_name, routine.id,
        )
        return instance

    def _register_provider(self, instance: TransformationInstance) -> None:
        body = {
            "entities": [
                {"id": instance.target.entity_id, "type": instance.target.entity_type}
            ],
            "attributes": [instance.target.attribute_name],
            "providingApplication": self.config.gateway_url,
        }
        status, payload = request_json(
            "POST", self.config.broker_url.rstrip("/") + "/ngsi9/registerContext", body=body
        )
        if status != 200:
            raise SubscriptionFailed(f"registerContext failed ({status}): {payload}")

    # -- per-item processing -------------------------------------------------

    def on_notification(self, body: Any) -> None:
        if not isinstance(body, dict) or body.get("event") != "childCreated":
            raise bad_request("expected a childCreated notification")
        sub_ri = body.get("subscriptionRef")
        with self._lock:
            instance = self._by_subscription.get(sub_ri or "")
        if instance is None:
            log.warning("notification for unknown subscription %r dropped", sub_ri)
            return
        resource = body.get("resource")
        if not isinstance(resource, dict):
            raise bad_request("notification lacks a 'resource'")
        self._queues[instance.instance_id].put(resource)

    def _worker(self, instance: TransformationInstance, q: queue.Queue) -> None:
        while True:
            resource = q.get()
            if resource is None:
                return
            try:
                update = self.build_update(instance, resource)
            except (ExtractionError, ConversionError) as exc:
                instance.items_dropped += 1
                log.warning("%s: item dropped: %s", instance.instance_id, exc)
                continue
            self.publish(update)
            instance.items_converted += 1

    def build_update(
        self, instance: TransformationInstance, resource: dict
    ) -> ContextEntity:
        target = instance.target
        raw = resolve_pointer(resource.get("con"), target.value_path)
        converted = instance.routine.convert(raw)
        unit = instance.routine.output_unit or target.unit
        metadata = [ContextMetadata("source", "string", target.source_path)]
        created_at = resource.get("ct")
        if isinstance(created_at, str):
            metadata.append(ContextMetadata("timestamp", "string", created_at))
        if unit:
            metadata.append(ContextMetadata("unit", "string", unit))
        if target.location:
            metadata.append(ContextMetadata("location", "geo:point", list(target.location)))
        attribute = ContextAttribute(target.attribute_name, converted, tuple(metadata))
        return ContextEntity(target.entity_id, target.entity_type, (attribute,))

    def publish(self, update: ContextEntity) -> None:
        if self.config.mode == "pull":
            with self._lock:
                current = self._cache.get(update.id)
                if current is None:
                    self._cache[update.id] = update
                else:
                    merged = current.with_attributes({a.name: a for a in update.attributes})
                    self._cache[update.id] = ContextEntity(
                        update.id, update.type or current.type, merged.attributes
                    )
            return
        body = {"action": "APPEND", "entities": [update.to_json()]}
        url = self.config.broker_url.rstrip("/") + "/ngsi10/updateContext"
        for attempt in range(1, PUSH_ATTEMPTS + 1):
            try:
                status, payload = request_json("POST", url, body=body)
                if status == 200:
                    return
                log.warning("updateContext returned %s: %s", status, payload)
            except TransportError as exc:
                log.warning("updateContext attempt %d failed: %s", attempt, exc)
            if attempt < PUSH_ATTEMPTS:
                time.sleep(PUSH_RETRY_DELAY)
        log.error("update for entity %s dropped after %d attempts", update.id, PUSH_ATTEMPTS)

    # -- pull-mode provider endpoint ------------------------------------------

    def answer_query(self, body: Any) -> list[ContextEntity]:
        if not isinstance(body, dict):
            raise bad_request("queryContext body must be a JSON object")
        try:
            patterns = parse_patterns(body.get("entities"), "queryContext")
            attributes = parse_attribute_names(body.get("attributes"), "queryContext")
        except ValueError as exc:
            raise bad_request(str(exc)) from exc
        is_subclass = (
            self.knowledge.is_subclass if self.knowledge else (lambda sub, sup: sub == sup)
        )
        with self._lock:
            snapshot = list(self._cache.values())
        out = []
        for entity in sorted(snapshot, key=lambda e: e.id):
            if not any(p.matches(entity.id, entity.type, is_subclass) for p in patterns):
                continue
            projected = entity.project(attributes)
            if attributes is not None and not projected.attributes:
                continue
            out.append(projected)
        return out

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        self.scan_once()
        self._rescan_thread = threading.Thread(target=self._rescan_loop, daemon=True)
        self._rescan_thread.start()

    def _rescan_loop(self) -> None:
        period = self.config.rescan_millis / 1000.0
        while not self._stop.wait(period):
            self.scan_once()

    def stop(self) -> None:
        self._stop.set()
        if self._rescan_thread is not None:
            self._rescan_thread.join(timeout=2)
        with self._lock:
            workers = list(self._workers.items())
        for instance_id, worker in workers:
            self._queues[instance_id].put(None)
        for _, worker in workers:
            worker.join(timeout=2)

    def instances(self) -> list[TransformationInstance]:
        with self._lock:
            return sorted(self._instances.values(), key=lambda i: i.instance_id)

    def stats(self) -> dict:
        with self._lock:
            return {
                "mode": self.config.mode,
                "scans": self.scans,
                "instances": len(self._instances),
                "itemsConverted": sum(i.items_converted for i in self._instances.values()),
                "itemsDropped": sum(i.items_dropped for i in self._instances.values()),
                "cachedEntities": len(self._cache),
            }


class SmgService(JsonHttpService):
    name = "smg"

    def __init__(self, gateway: MediationGateway):
        super().__init__()
        self.gateway = gateway
        self.router.add("POST", "/notify", self._notify)
        self.router.add("POST", "/ngsi10/queryContext", self._query)
        self.router.add("GET", "/instances", self._instances)
        self.router.add("GET", "/stats", self._stats)

    def close(self) -> None:
        self.gateway.stop()

    def _notify(self, request: HttpRequest) -> HttpResponse:
        self.gateway.on_notification(request.json())
        return HttpResponse(200, {"status": "accepted"})

    def _query(self, request: HttpRequest) -> HttpResponse:
        entities = self.gateway.answer_query(request.json())
        return HttpResponse(200, {"entities": [e.to_json() for e in entities]})

    def _instances(self, request: HttpRequest) -> HttpResponse:
        return HttpResponse(
            200, {"instances": [i.to_json() for i in self.gateway.instances()]}
        )

    def _stats(self, request: HttpRequest) -> HttpResponse:
        return HttpResponse(200, self.gateway.stats())


def load_gateway_config(path: str, gateway_url: str | None = None) -> GatewayConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return GatewayConfig.from_json(json.load(fh), gateway_url=gateway_url)
