"""Knowledge-based processing agent: subscribes to broker context,
mirrors notified values as a triple view, forward-chains its rules and
feeds derived attributes back into the broker.

Loop safety: attributes the agent itself derived are ignored when they
come back as notifications, and each distinct derived fact is sent at
most once.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass
from typing import Any

from .broker import BrokerClient
from .httpkit import (
    HttpRequest,
    HttpResponse,
    JsonHttpService,
    TransportError,
    bad_request,
    not_found,
    request_json,
)
from .ngsi import ContextEntity, EntityPattern, parse_patterns
from .rdf import CTX_NS, IRI, RDF_TYPE, Graph, Literal, Triple
from .rules import ClosureLimitExceeded, Rule, RuleBase, forward_chain, parse_rule_json
from .sparql import (
    SparqlSyntaxError,
    binding_to_json,
    evaluate,
    parse_sparql,
    query_variables,
)

log = logging.getLogger(__name__)

ENTITY_PREFIX = "urn:"
FEEDBACK_ATTEMPTS = 3
FEEDBACK_RETRY_DELAY = 0.1


def _lexical(value: Any) -> str:
    """Context values become plain string literals; consumers parse."""
    if isinstance(value, str):
        return value
    return json.dumps(value)


@dataclass
class AgentConfig:
    agent_id: str
    broker_url: str
    patterns: list[EntityPattern]
    attributes: list[str]  # empty = all attributes
    rules: RuleBase
    output_entity_suffix: str = ""
    sparql_enabled: bool = True
    throttling_millis: int = 0

    @staticmethod
    def from_json(obj: Any) -> "AgentConfig":
        if not isinstance(obj, dict):
            raise ValueError("agent config must be a JSON object")
        agent_id = obj.get("agentId")
        if not isinstance(agent_id, str) or not agent_id:
            raise ValueError("agent config needs a non-empty 'agentId'")
        broker_url = obj.get("brokerUrl")
        if not isinstance(broker_url, str) or not broker_url:
            raise ValueError("agent config needs a 'brokerUrl'")
        subscription = obj.get("subscription")
        if not isinstance(subscription, dict):
            raise ValueError("agent config needs a 'subscription' object")
        patterns = parse_patterns(subscription.get("entities"), "subscription")
        raw_attrs = subscription.get("attributes", [])
        if not isinstance(raw_attrs, list) or not all(
            isinstance(a, str) and a for a in raw_attrs
        ):
            raise ValueError("subscription 'attributes' must be a list of names")
        prefixes = obj.get("prefixes")
        raw_rules = obj.get("rules", [])
        if not isinstance(raw_rules, list):
            raise ValueError("'rules' must be a list")
        rules = [parse_rule_json(r, prefixes) for r in raw_rules]
        for rule in rules:
            unsafe = rule.unsafe_head_variables()
            if unsafe:
                raise ValueError(
                    f"rule {rule.rule_id!r} is unsafe: head variables "
                    + ", ".join(sorted(unsafe)) + " missing from body"
                )
        suffix = obj.get("outputEntitySuffix", "")
        if not isinstance(suffix, str):
            raise ValueError("'outputEntitySuffix' must be a string")
        enabled = obj.get("sparqlEndpointEnabled", True)
        if not isinstance(enabled, bool):
            raise ValueError("'sparqlEndpointEnabled' must be a boolean")
        throttling = obj.get("throttlingMillis", 0)
        if not isinstance(throttling, int) or isinstance(throttling, bool) or throttling < 0:
            raise ValueError("'throttlingMillis' must be a non-negative integer")
        return AgentConfig(
            agent_id=agent_id,
            broker_url=broker_url,
            patterns=patterns,
            attributes=list(raw_attrs),
            rules=RuleBase(rules),
            output_entity_suffix=suffix,
            sparql_enabled=enabled,
            throttling_millis=throttling,
        )


class Agent:
    """Single event loop: notifications are queued, each batch updates
    the view and triggers one rule pass."""

    def __init__(self, config: AgentConfig, agent_url: str):
        self.config = config
        self.agent_url = agent_url.rstrip("/")
        self.broker = BrokerClient(config.broker_url)
        self._lock = threading.Lock()
        self._values: dict[tuple[str, str], str] = {}  # (entity, attribute) -> lexical
        self._types: dict[str, str] = {}
        self._derived = Graph()
        self._self_derived: set[str] = set()  # attribute names we wrote back
        self._sent: set[tuple[str, str, str]] = set()  # (entity, attribute, value)
        self._queue: queue.Queue = queue.Queue()
        self._worker: threading.Thread | None = None
        self._subscription_id: str | None = None
        self.notifications = 0
        self.rule_passes = 0

    # -- view ------------------------------------------------------------

    def view_graph(self) -> Graph:
        with self._lock:
            triples = []
            for entity_id, type_iri in sorted(self._types.items()):
                if not type_iri:
                    continue
                try:
                    triples.append(
                        Triple(IRI(ENTITY_PREFIX + entity_id), IRI(RDF_TYPE), IRI(type_iri))
                    )
                except ValueError:
                    log.warning("entity %s has a non-IRI type %r", entity_id, type_iri)
            for (entity_id, attribute), lexical in sorted(self._values.items()):
                triples.append(
                    Triple(
                        IRI(ENTITY_PREFIX + entity_id),
                        IRI(CTX_NS + attribute),
                        Literal(lexical),
                    )
                )
            return Graph(triples)

    def _apply_notification(self, body: Any) -> bool:
        if not isinstance(body, dict) or not isinstance(body.get("entities"), list):
            log.warning("malformed notification skipped: %r", body)
            return False
        changed = False
        for raw in body["entities"]:
            try:
                entity = ContextEntity.from_json(raw)
            except ValueError as exc:
                log.warning("malformed notified entity skipped: %s", exc)
                continue
            with self._lock:
                if entity.type:
                    self._types[entity.id] = entity.type
                else:
                    self._types.setdefault(entity.id, "")
                for attribute in entity.attributes:
                    if attribute.name in self._self_derived:
                        continue  # loop guard: do not re-ingest our own output
                    key = (entity.id, attribute.name)
                    lexical = _lexical(attribute.value)
                    if self._values.get(key) != lexical:
                        self._values[key] = lexical
                        changed = True
        return changed

    # -- reasoning ---------------------------------------------------------

    def run_rule_pass(self) -> list[Triple]:
        view = self.view_graph()
        try:
            derived = forward_chain(view, self.config.rules)
        except ClosureLimitExceeded as exc:
            log.error("rule pass aborted: %s", exc)
            return []
        self.rule_passes += 1
        with self._lock:
            self._derived = derived
        new_facts = [t for t in derived if t not in view]
        self.feed_back(new_facts)
        return new_facts

    def feed_back(self, facts: list[Triple]) -> None:
        for triple in sorted(facts, key=lambda t: t.text()):
            if not isinstance(triple.subject, IRI):
                continue
            subject = triple.subject.value
            predicate = triple.predicate.value
            if not subject.startswith(ENTITY_PREFIX) or not predicate.startswith(CTX_NS):
                continue
            if not isinstance(triple.object, Literal):
                continue
            entity_id = subject[len(ENTITY_PREFIX):] + self.config.output_entity_suffix
            attribute = predicate[len(CTX_NS):]
            value = triple.object.lexical
            key = (entity_id, attribute, value)
            with self._lock:
                if key in self._sent:
                    continue
                self._sent.add(key)
                self._self_derived.add(attribute)
                entity_type = self._types.get(entity_id, "")
            self._send_update(entity_id, entity_type, attribute, value)

    def _send_update(self, entity_id: str, entity_type: str, attribute: str, value: str) -> None:
        body = {
            "action": "APPEND",
            "entities": [
                {
                    "id": entity_id,
                    "type": entity_type,
                    "attributes": [
                        {
                            "name": attribute,
                            "value": value,
                            "metadata": [
                                {"name": "source", "type": "string",
                                 "value": self.config.agent_id}
                            ],
                        }
                    ],
                }
            ],
        }
        url = self.config.broker_url.rstrip("/") + "/ngsi10/updateContext"
        for attempt in range(1, FEEDBACK_ATTEMPTS + 1):
            try:
                status, payload = request_json("POST", url, body=body)
                if status == 200:
                    return
                log.warning("feed-back returned %s: %s", status, payload)
            except TransportError as exc:
                log.warning("feed-back attempt %d failed: %s", attempt, exc)
            if attempt < FEEDBACK_ATTEMPTS:
                time.sleep(FEEDBACK_RETRY_DELAY)
        log.error("derived fact %s.%s dropped after %d attempts",
                  entity_id, attribute, FEEDBACK_ATTEMPTS)

    # -- event loop -----------------------------------------------------------

    def on_notification(self, body: Any) -> None:
        self.notifications += 1
        self._queue.put(body)

    def _loop(self) -> None:
        while True:
            body = self._queue.get()
            if body is None:
                return
            batch = [body]
            while True:
                try:
                    extra = self._queue.get_nowait()
                except queue.Empty:
                    break
                if extra is None:
                    return
                batch.append(extra)
            for item in batch:
                self._apply_notification(item)
            self.run_rule_pass()

    def start(self) -> None:
        self._worker = threading.Thread(target=self._loop, daemon=True)
        self._worker.start()
        self._subscription_id = self.broker.subscribe(
            [p.to_json() for p in self.config.patterns],
            self.config.attributes or None,
            self.agent_url + "/notify",
            self.config.throttling_millis,
        )

    def stop(self) -> None:
        if self._subscription_id is not None:
            try:
                self.broker.unsubscribe(self._subscription_id)
            except (TransportError, ValueError) as exc:
                log.warning("unsubscribe failed: %s", exc)
            self._subscription_id = None
        if self._worker is not None:
            self._queue.put(None)
            self._worker.join(timeout=2)
            self._worker = None

    # -- query endpoint -----------------------------------------------------------

    def answer_sparql(self, text: str) -> dict:
        query = parse_sparql(text)  # SparqlSyntaxError propagates
        with self._lock:
            derived = self._derived
        graph = self.view_graph().union(derived)
        result = evaluate(query, graph)
        if isinstance(result, bool):
            return {"result": result}
        return {
            "variables": query_variables(query),
            "solutions": [binding_to_json(b) for b in result],
        }

    def stats(self) -> dict:
        with self._lock:
            return {
                "agentId": self.config.agent_id,
                "entities": len(self._types),
                "viewTriples": len(self._values),
                "derivedFactsSent": len(self._sent),
                "rulePasses": self.rule_passes,
                "notifications": self.notifications,
            }


class AgentService(JsonHttpService):
    name = "agent"

    def __init__(self, agent: Agent):
        super().__init__()
        self.agent = agent
        self.router.add("POST", "/notify", self._notify)
        self.router.add("POST", "/sparql", self._sparql)
        self.router.add("GET", "/stats", self._stats)

    def close(self) -> None:
        self.agent.stop()

    def _notify(self, request: HttpRequest) -> HttpResponse:
        self.agent.on_notification(request.json())
        return HttpResponse(200, {"status": "accepted"})

    def _sparql(self, request: HttpRequest) -> HttpResponse:
        if not self.agent.config.sparql_enabled:
            raise not_found("the query endpoint is disabled for this agent")
        body = request.json()
        if not isinstance(body, dict) or not isinstance(body.get("query"), str):
            raise bad_request("expected a JSON body with a 'query' string")
        try:
            return HttpResponse(200, self.agent.answer_sparql(body["query"]))
        except SparqlSyntaxError as exc:
            raise bad_request(f"query does not parse: {exc}") from exc

    def _stats(self, request: HttpRequest) -> HttpResponse:
        return HttpResponse(200, self.agent.stats())


def load_agent_config(path: str) -> AgentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return AgentConfig.from_json(json.load(fh))
