"""Context broker: stores entity/attribute/metadata context, answers
queries with ontology-driven subtype matching and bounding-box scopes,
registers context providers, federates unmatched queries to providers
(pull mode), and notifies subscribers with per-subscription throttling.

Subtype checks go through the knowledge server via a caching client;
without a configured knowledge URL only exact type matches succeed.
"""

from __future__ import annotations

import logging
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from typing import Any, Callable

from .httpkit import (
    HttpRequest,
    HttpResponse,
    JsonHttpService,
    TransportError,
    bad_request,
    not_found,
    request_json,
)
from .knowledge import KnowledgeClient
from .ngsi import (
    BoundingBox,
    ContextEntity,
    EntityPattern,
    parse_attribute_names,
    parse_entities,
    parse_patterns,
)

log = logging.getLogger(__name__)

HOP_HEADER = "X-GIOTS-Hop"
PULL_TIMEOUT = 5.0


def _valid_url(url: Any) -> bool:
    if not isinstance(url, str):
        return False
    parsed = urllib.parse.urlparse(url)
    return parsed.scheme in {"http", "https"} and bool(parsed.netloc)


@dataclass(frozen=True)
class Registration:
    registration_id: str
    patterns: tuple[EntityPattern, ...]
    attributes: tuple[str, ...]  # empty = provides all attributes
    providing_application: str

    def to_json(self) -> dict:
        return {
            "registrationId": self.registration_id,
            "entities": [p.to_json() for p in self.patterns],
            "attributes": list(self.attributes),
            "providingApplication": self.providing_application,
        }


@dataclass
class Subscription:
    subscription_id: str
    patterns: tuple[EntityPattern, ...]
    attributes: tuple[str, ...]  # empty = any attribute
    reference: str
    throttling_millis: int
    pending: set[str] = field(default_factory=set)
    timer: threading.Timer | None = None
    last_sent: float = 0.0


class ContextBroker:
    """In-memory context store plus registrations and subscriptions.

    All store mutations run under one lock; queries read a snapshot.
    Notifications and provider pulls happen off the caller's critical
    section.
    """

    def __init__(self, is_subclass: Callable[[str, str], bool] | None = None):
        self._lock = threading.Lock()
        self._entities: dict[str, ContextEntity] = {}
        self._registrations: dict[str, Registration] = {}
        self._subscriptions: dict[str, Subscription] = {}
        self._reg_counter = 0
        self._sub_counter = 0
        self.is_subclass = is_subclass or (lambda sub, sup: sub == sup)
        self._closed = False

    # -- registrations ---------------------------------------------------

    def register(self, patterns, attributes, providing_application) -> str:
        with self._lock:
            self._reg_counter += 1
            reg_id = f"reg-{self._reg_counter:05d}"
            self._registrations[reg_id] = Registration(
                reg_id, tuple(patterns), tuple(attributes or ()), providing_application
            )
            return reg_id

    def discover(self, patterns, attributes) -> list[Registration]:
        with self._lock:
            candidates = list(self._registrations.values())
        hits = []
        for reg in candidates:
            if not self._registration_matches(reg, patterns, attributes):
                continue
            hits.append(reg)
        return sorted(hits, key=lambda r: r.registration_id)

    def _registration_matches(self, reg: Registration, patterns, attributes) -> bool:
        if attributes and reg.attributes and not (set(attributes) & set(reg.attributes)):
            return False
        for wanted in patterns:
            for advertised in reg.patterns:
                if advertised.intersects(wanted, self.is_subclass):
                    return True
        return False

    # -- updates ---------------------------------------------------------

    def update(self, action: str, entities: list[ContextEntity]) -> list[dict]:
        responses = []
        touched: list[tuple[ContextEntity, set[str]]] = []
        with self._lock:
            for update in entities:
                try:
                    stored = self._apply(action, update)
                except LookupError as exc:
                    responses.append(
                        {"id": update.id, "status": "error",
                         "error": "NotFound", "message": str(exc)}
                    )
                    continue
                responses.append({"id": update.id, "status": "ok"})
                touched.append((stored, {a.name for a in update.attributes}))
        for stored, names in touched:
            self._trigger_subscriptions(stored, names)
        return responses

    def _apply(self, action: str, update: ContextEntity) -> ContextEntity:
        current = self._entities.get(update.id)
        if action == "UPDATE":
            if current is None:
                raise LookupError(f"entity '{update.id}' does not exist")
            missing = [a.name for a in update.attributes if current.attribute(a.name) is None]
            if missing:
                raise LookupError(
                    f"entity '{update.id}' has no attribute {missing[0]}"
                )
        if current is None:
            stored = ContextEntity(
                update.id, update.type,
                tuple(sorted(update.attributes, key=lambda a: a.name)),
            )
        else:
            merged = current.with_attributes({a.name: a for a in update.attributes})
            new_type = update.type or current.type
            stored = ContextEntity(update.id, new_type, merged.attributes)
        self._entities[update.id] = stored
        return stored

    # -- queries ---------------------------------------------------------

    def query(
        self,
        patterns: list[EntityPattern],
        attributes: list[str] | None,
        restriction: BoundingBox | None,
        allow_pull: bool = True,
    ) -> list[ContextEntity]:
        with self._lock:
            snapshot = list(self._entities.values())
        results: dict[str, ContextEntity] = {}
        unmatched: list[EntityPattern] = []
        for pattern in patterns:
            found = False
            for entity in snapshot:
                if pattern.matches(entity.id, entity.type, self.is_subclass):
                    results.setdefault(entity.id, entity)
                    found = True
            if not found:
                unmatched.append(pattern)
        if allow_pull and unmatched:
            for entity in self._pull(unmatched, attributes):
                results.setdefault(entity.id, entity)
        out = []
        for entity_id in sorted(results):
            entity = results[entity_id]
            if restriction is not None and not restriction.admits(entity):
                continue
            projected = entity.project(attributes)
            if attributes is not None and not projected.attributes:
                continue
            out.append(projected)
        return out

    def _pull(self, patterns: list[EntityPattern], attributes) -> list[ContextEntity]:
        """Federated lookup: ask providers registered for still-unmatched
        patterns; recursion stops at depth 1 via a hop header."""
        pulled: list[ContextEntity] = []
        seen: set[tuple[str, str]] = set()
        for pattern in patterns:
            for reg in self.discover([pattern], attributes):
                key = (reg.providing_application, str(sorted(pattern.to_json().items())))
                if key in seen:
                    continue
                seen.add(key)
                body = {"entities": [pattern.to_json()]}
                if attributes:
                    body["attributes"] = list(attributes)
                try:
                    status, payload = request_json(
                        "POST",
                        reg.providing_application.rstrip("/") + "/ngsi10/queryContext",
                        body=body,
                        headers={HOP_HEADER: "1"},
                        timeout=PULL_TIMEOUT,
                    )
                except TransportError as exc:
                    log.warning("provider pull failed for %s: %s", reg.registration_id, exc)
                    continue
                if status != 200 or not isinstance(payload, dict):
                    log.warning(
                        "provider pull for %s returned %s", reg.registration_id, status
                    )
                    continue
                for raw in payload.get("entities") or []:
                    try:
                        entity = ContextEntity.from_json(raw)
                    except ValueError as exc:
                        log.warning("discarding malformed pulled entity: %s", exc)
                        continue
                    if pattern.matches(entity.id, entity.type, self.is_subclass):
                        pulled.append(entity)
        return pulled

    # -- subscriptions ---------------------------------------------------

    def subscribe(self, patterns, attributes, reference, throttling_millis) -> str:
        with self._lock:
            self._sub_counter += 1
            sub_id = f"sub-{self._sub_counter:05d}"
            self._subscriptions[sub_id] = Subscription(
                sub_id, tuple(patterns), tuple(attributes or ()), reference,
                throttling_millis,
            )
            return sub_id

    def unsubscribe(self, sub_id: str) -> None:
        with self._lock:
            sub = self._subscriptions.pop(sub_id, None)
        if sub is None:
            raise LookupError(f"no subscription '{sub_id}'")
        if sub.timer is not None:
            sub.timer.cancel()

    def _trigger_subscriptions(self, entity: ContextEntity, updated_names: set[str]) -> None:
        with self._lock:
            subs = list(self._subscriptions.values())
        for sub in subs:
            if sub.attributes and not (updated_names & set(sub.attributes)):
                continue
            if not any(
                p.matches(entity.id, entity.type, self.is_subclass) for p in sub.patterns
            ):
                continue
            self._schedule(sub, entity.id)

    def _schedule(self, sub: Subscription, entity_id: str) -> None:
        with self._lock:
            if self._closed or sub.subscription_id not in self._subscriptions:
                return
            sub.pending.add(entity_id)
            if sub.timer is not None:
                return
            delay = max(0.0, sub.throttling_millis / 1000.0 - (time.monotonic() - sub.last_sent))
            sub.timer = threading.Timer(delay, self._flush, args=(sub.subscription_id,))
            sub.timer.daemon = True
            sub.timer.start()

    def _flush(self, sub_id: str) -> None:
        with self._lock:
            sub = self._subscriptions.get(sub_id)
            if sub is None:
                return
            entity_ids = sorted(sub.pending)
            sub.pending.clear()
            sub.timer = None
            sub.last_sent = time.monotonic()
            names = list(sub.attributes) or None
            entities = [
                self._entities[eid].project(names)
                for eid in entity_ids
                if eid in self._entities
            ]
            reference = sub.reference
        if not entities:
            return
        body = {
            "subscriptionId": sub_id,
            "entities": [e.to_json() for e in entities],
        }
        try:
            status, _ = request_json("POST", reference, body=body, timeout=5.0)
            if status >= 400:
                log.warning("notifyContext to %s returned %s", reference, status)
        except TransportError as exc:
            log.warning("notifyContext to %s failed: %s", reference, exc)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            subs = list(self._subscriptions.values())
        for sub in subs:
            if sub.timer is not None:
                sub.timer.cancel()


class BrokerService(JsonHttpService):
    name = "broker"

    def __init__(self, knowledge_url: str | None = None):
        super().__init__()
        self.knowledge = KnowledgeClient(knowledge_url) if knowledge_url else None
        is_subclass = self.knowledge.is_subclass if self.knowledge else None
        self.broker = ContextBroker(is_subclass)
        self._metrics_lock = threading.Lock()
        self.metrics: dict[str, int] = {}
        self.router.add("POST", "/ngsi9/registerContext", self._register)
        self.router.add("POST", "/ngsi9/discoverContextAvailability", self._discover)
        self.router.add("POST", "/ngsi10/updateContext", self._update)
        self.router.add("POST", "/ngsi10/queryContext", self._query)
        self.router.add("POST", "/ngsi10/subscribeContext", self._subscribe)
        self.router.add("POST", "/ngsi10/unsubscribeContext", self._unsubscribe)
        self.router.add("GET", "/metrics", self._metrics)

    def close(self) -> None:
        self.broker.close()

    def _count(self, op: str) -> None:
        with self._metrics_lock:
            self.metrics[op] = self.metrics.get(op, 0) + 1

    def _body(self, request: HttpRequest) -> dict:
        body = request.json()
        if not isinstance(body, dict):
            raise bad_request("request body must be a JSON object")
        return body

    def _register(self, request: HttpRequest) -> HttpResponse:
        self._count("registerContext")
        body = self._body(request)
        try:
            patterns = parse_patterns(
                body.get("entities"), "registerContext", allow_empty_pattern=False
            )
            attributes = parse_attribute_names(body.get("attributes"), "registerContext")
        except ValueError as exc:
            raise bad_request(str(exc)) from exc
        providing = body.get("providingApplication")
        if not _valid_url(providing):
            raise bad_request("registerContext needs an absolute 'providingApplication' URL")
        reg_id = self.broker.register(patterns, attributes, providing)
        return HttpResponse(200, {"registrationId": reg_id})

    def _discover(self, request: HttpRequest) -> HttpResponse:
        self._count("discoverContextAvailability")
        body = self._body(request)
        try:
            patterns = parse_patterns(body.get("entities"), "discoverContextAvailability")
            attributes = parse_attribute_names(
                body.get("attributes"), "discoverContextAvailability"
            )
        except ValueError as exc:
            raise bad_request(str(exc)) from exc
        registrations = self.broker.discover(patterns, attributes)
        return HttpResponse(200, {"registrations": [r.to_json() for r in registrations]})

    def _update(self, request: HttpRequest) -> HttpResponse:
        self._count("updateContext")
        body = self._body(request)
        action = body.get("action")
        if action not in {"APPEND", "UPDATE"}:
            raise bad_request("updateContext 'action' must be APPEND or UPDATE")
        try:
            entities = parse_entities(body.get("entities"), "updateContext")
        except ValueError as exc:
            raise bad_request(str(exc)) from exc
        responses = self.broker.update(action, entities)
        return HttpResponse(200, {"responses": responses})

    def _query(self, request: HttpRequest) -> HttpResponse:
        self._count("queryContext")
        body = self._body(request)
        try:
            patterns = parse_patterns(body.get("entities"), "queryContext")
            attributes = parse_attribute_names(body.get("attributes"), "queryContext")
            restriction = (
                BoundingBox.from_json(body["restriction"])
                if body.get("restriction") is not None
                else None
            )
        except ValueError as exc:
            raise bad_request(str(exc)) from exc
        allow_pull = request.header(HOP_HEADER) is None
        entities = self.broker.query(patterns, attributes, restriction, allow_pull)
        return HttpResponse(200, {"entities": [e.to_json() for e in entities]})

    def _subscribe(self, request: HttpRequest) -> HttpResponse:
        self._count("subscribeContext")
        body = self._body(request)
        try:
            patterns = parse_patterns(body.get("entities"), "subscribeContext")
            attributes = parse_attribute_names(body.get("attributes"), "subscribeContext")
        except ValueError as exc:
            raise bad_request(str(exc)) from exc
        reference = body.get("reference")
        if not _valid_url(reference):
            raise bad_request("subscribeContext needs an absolute 'reference' URL")
        throttling = body.get("throttlingMillis", 0)
        if not isinstance(throttling, int) or isinstance(throttling, bool) or throttling < 0:
            raise bad_request("'throttlingMillis' must be a non-negative integer")
        sub_id = self.broker.subscribe(patterns, attributes, reference, throttling)
        return HttpResponse(200, {"subscriptionId": sub_id})

    def _unsubscribe(self, request: HttpRequest) -> HttpResponse:
        self._count("unsubscribeContext")
        body = self._body(request)
        sub_id = body.get("subscriptionId")
        if not isinstance(sub_id, str) or not sub_id:
            raise bad_request("unsubscribeContext needs a 'subscriptionId'")
        try:
            self.broker.unsubscribe(sub_id)
        except LookupError as exc:
            raise not_found(str(exc)) from exc
        return HttpResponse(200, {"subscriptionId": sub_id})

    def _metrics(self, request: HttpRequest) -> HttpResponse:
        with self._metrics_lock:
            return HttpResponse(200, dict(self.metrics))


# --- client helper -------------------------------------------------------------


class BrokerClient:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def _post(self, path: str, body: dict) -> dict:
        status, payload = request_json("POST", self.base_url + path, body=body)
        if status != 200:
            raise ValueError(f"{path} failed ({status}): {payload}")
        return payload

    def register(self, entities: list[dict], attributes: list[str], providing: str) -> str:
        payload = self._post(
            "/ngsi9/registerContext",
            {"entities": entities, "attributes": attributes, "providingApplication": providing},
        )
        return payload["registrationId"]

    def discover(self, entities: list[dict], attributes: list[str] | None = None) -> list[dict]:
        body: dict[str, Any] = {"entities": entities}
        if attributes is not None:
            body["attributes"] = attributes
        return self._post("/ngsi9/discoverContextAvailability", body)["registrations"]

    def update(self, action: str, entities: list[dict]) -> list[dict]:
        return self._post(
            "/ngsi10/updateContext", {"action": action, "entities": entities}
        )["responses"]

    def query(
        self,
        entities: list[dict],
        attributes: list[str] | None = None,
        restriction: dict | None = None,
    ) -> list[dict]:
        body: dict[str, Any] = {"entities": entities}
        if attributes is not None:
            body["attributes"] = attributes
        if restriction is not None:
            body["restriction"] = restriction
        return self._post("/ngsi10/queryContext", body)["entities"]

    def subscribe(
        self,
        entities: list[dict],
        attributes: list[str] | None,
        reference: str,
        throttling_millis: int = 0,
    ) -> str:
        body: dict[str, Any] = {"entities": entities, "reference": reference,
                                "throttlingMillis": throttling_millis}
        if attributes is not None:
            body["attributes"] = attributes
        return self._post("/ngsi10/subscribeContext", body)["subscriptionId"]

    def unsubscribe(self, subscription_id: str) -> None:
        self._post("/ngsi10/unsubscribeContext", {"subscriptionId": subscription_id})
