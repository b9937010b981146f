"""Knowledge-based processing agent: configuration, context view,
rule-driven feedback with loop protection, and the query endpoint."""

import time

import pytest

from giots.agent import Agent, AgentConfig, AgentService, _lexical
from giots.broker import BrokerClient
from giots.httpkit import find_free_port, get_json, post_json, run_service, wait_healthy
from giots.rdf import CTX_NS, IRI, Literal, RDF_TYPE, Triple

ONT = "http://wise-iot.example/onto#"

OCCUPANCY_RULE = {
    "ruleId": "occupied-when-people-present",
    "body": [f"?room <{CTX_NS}occupancy> ?n", f"FILTER(?n > 0)"],
    "head": [f'?room <{CTX_NS}occupied> "true"'],
}


def _config_doc(**overrides):
    doc = {
        "agentId": "occupancy-agent",
        "brokerUrl": "http://127.0.0.1:9/broker",
        "subscription": {"entities": [{"idPattern": "room.*"}], "attributes": ["occupancy"]},
        "rules": [OCCUPANCY_RULE],
    }
    doc.update(overrides)
    return doc


def _notification(entity_id, attribute, value, entity_type=ONT + "Room"):
    return {
        "subscriptionId": "sub-00001",
        "entities": [
            {
                "id": entity_id,
                "type": entity_type,
                "attributes": [{"name": attribute, "value": value, "metadata": []}],
            }
        ],
    }


# --- configuration -----------------------------------------------------------------


def test_config_parsing_defaults():
    config = AgentConfig.from_json(_config_doc())
    assert config.agent_id == "occupancy-agent"
    assert config.attributes == ["occupancy"]
    assert config.rules.ids() == {"occupied-when-people-present"}
    assert config.sparql_enabled is True
    assert config.output_entity_suffix == ""
    assert config.throttling_millis == 0


def test_config_expands_prefixes_in_rules():
    doc = _config_doc(
        prefixes={"ctx": CTX_NS},
        rules=[
            {
                "ruleId": "r",
                "body": ["?room ctx:occupancy ?n"],
                "head": ['?room ctx:occupied "true"'],
            }
        ],
    )
    config = AgentConfig.from_json(doc)
    (rule,) = config.rules.rules
    assert rule.body[0].predicate == IRI(CTX_NS + "occupancy")


@pytest.mark.parametrize(
    "doc",
    [
        "not an object",
        _config_doc(agentId=""),
        _config_doc(brokerUrl=None),
        _config_doc(subscription="everything"),
        _config_doc(subscription={"entities": []}),
        _config_doc(subscription={"entities": [{"id": "x"}], "attributes": [""]}),
        _config_doc(rules="none"),
        _config_doc(rules=[OCCUPANCY_RULE, OCCUPANCY_RULE]),
        _config_doc(
            rules=[{"ruleId": "bad", "body": ["?a <urn:p> ?a"], "head": ["?b <urn:p> ?a"]}]
        ),
        _config_doc(outputEntitySuffix=7),
        _config_doc(sparqlEndpointEnabled="yes"),
        _config_doc(throttlingMillis=-1),
    ],
)
def test_config_rejects_malformed_documents(doc):
    with pytest.raises(ValueError):
        AgentConfig.from_json(doc)


def test_lexical_forms_of_context_values():
    assert _lexical("warm") == "warm"
    assert _lexical(4) == "4"
    assert _lexical(21.5) == "21.5"
    assert _lexical(True) == "true"
    assert _lexical([1, 2]) == "[1, 2]"


# --- view and reasoning without a broker ----------------------------------------------


def _offline_agent(**overrides):
    config = AgentConfig.from_json(_config_doc(**overrides))
    return Agent(config, "http://127.0.0.1:9")


def test_view_graph_mirrors_notifications():
    agent = _offline_agent()
    agent._apply_notification(_notification("room1", "occupancy", 4))
    view = agent.view_graph()
    assert Triple(IRI("urn:room1"), IRI(RDF_TYPE), IRI(ONT + "Room")) in view
    assert Triple(IRI("urn:room1"), IRI(CTX_NS + "occupancy"), Literal("4")) in view
    # a repeated identical value changes nothing
    assert agent._apply_notification(_notification("room1", "occupancy", 4)) is False
    assert agent._apply_notification(_notification("room1", "occupancy", 5)) is True


def test_view_tolerates_untyped_and_badly_typed_entities():
    agent = _offline_agent()
    agent._apply_notification(
        {"entities": [{"id": "room1", "type": "", "attributes": [
            {"name": "occupancy", "value": 1, "metadata": []}]}]}
    )
    agent._apply_notification(_notification("room2", "occupancy", 2, entity_type="no spaces al lowed"))
    view = agent.view_graph()
    # both values are present; neither entity contributes a type triple
    assert len([t for t in view if t.predicate == IRI(RDF_TYPE)]) == 0
    assert len([t for t in view if t.predicate == IRI(CTX_NS + "occupancy")]) == 2
    assert agent._apply_notification("garbage") is False


def test_sparql_answers_over_view_and_derived_facts(monkeypatch):
    agent = _offline_agent()
    sent = []
    monkeypatch.setattr(agent, "_send_update", lambda *a: sent.append(a))
    agent._apply_notification(_notification("room1", "occupancy", 4))
    new_facts = agent.run_rule_pass()
    assert [t.object.lexical for t in new_facts] == ["true"]
    answer = agent.answer_sparql(
        f'PREFIX ctx: <{CTX_NS}> SELECT ?room WHERE {{ ?room ctx:occupied "true" }}'
    )
    assert answer["variables"] == ["room"]
    assert answer["solutions"] == [{"room": {"kind": "iri", "value": "urn:room1"}}]
    ask = agent.answer_sparql(f'ASK {{ ?r <{CTX_NS}occupied> "true" }}')
    assert ask == {"result": True}
    # feedback went through the patched sender exactly once
    assert sent == [("room1", ONT + "Room", "occupied", "true")]


def test_feedback_dedup_and_suffix(monkeypatch):
    agent = _offline_agent(outputEntitySuffix=":status")
    sent = []
    monkeypatch.setattr(agent, "_send_update", lambda *a: sent.append(a))
    agent._apply_notification(_notification("room1", "occupancy", 4))
    agent.run_rule_pass()
    agent.run_rule_pass()  # same facts, nothing new to send
    assert len(sent) == 1
    assert sent[0][0] == "room1:status"
    # non-context or non-literal facts are never fed back
    agent.feed_back([Triple(IRI("urn:room1"), IRI(ONT + "other"), Literal("x"))])
    agent.feed_back([Triple(IRI("urn:room1"), IRI(CTX_NS + "peer"), IRI("urn:room2"))])
    assert len(sent) == 1


def test_self_derived_attributes_are_not_reingested(monkeypatch):
    agent = _offline_agent()
    monkeypatch.setattr(agent, "_send_update", lambda *a: None)
    agent._apply_notification(_notification("room1", "occupancy", 4))
    agent.run_rule_pass()
    # the derived attribute comes back from the broker; the guard drops it
    changed = agent._apply_notification(_notification("room1", "occupied", "true"))
    assert changed is False
    assert (("room1", "occupied")) not in agent._values


# --- end-to-end against a live broker ---------------------------------------------------


def _boot_agent(broker_url, **overrides):
    config = AgentConfig.from_json(_config_doc(brokerUrl=broker_url, **overrides))
    port = find_free_port()
    agent = Agent(config, f"http://127.0.0.1:{port}")
    handle = run_service(AgentService(agent), port)
    wait_healthy(handle.url)
    agent.start()
    return agent, handle


def _poll(condition, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        result = condition()
        if result:
            return result
        time.sleep(0.05)
    return condition()


def test_agent_derives_and_feeds_back_through_broker(broker_server):
    agent, handle = _boot_agent(broker_server.url)
    try:
        broker = BrokerClient(broker_server.url)
        broker.update(
            "APPEND",
            [{"id": "room1", "type": ONT + "Room",
              "attributes": [{"name": "occupancy", "value": 4, "metadata": []}]}],
        )
        entities = _poll(lambda: broker.query([{"id": "room1"}], attributes=["occupied"]))
        (entity,) = entities
        (attribute,) = entity["attributes"]
        assert attribute["value"] == "true"
        metadata = {m["name"]: m["value"] for m in attribute["metadata"]}
        assert metadata["source"] == "occupancy-agent"
        # the loop settles: one derived fact, no repeated feedback
        time.sleep(0.4)
        status, stats = get_json(handle.url + "/stats")
        assert status == 200
        assert stats["derivedFactsSent"] == 1
        assert stats["agentId"] == "occupancy-agent"
        # zero occupancy derives nothing new
        broker.update(
            "APPEND",
            [{"id": "room2", "type": ONT + "Room",
              "attributes": [{"name": "occupancy", "value": 0, "metadata": []}]}],
        )
        time.sleep(0.4)
        _, stats = get_json(handle.url + "/stats")
        assert stats["derivedFactsSent"] == 1
        assert stats["entities"] == 2
    finally:
        handle.stop()


def test_sparql_endpoint_wire_shapes(broker_server):
    agent, handle = _boot_agent(broker_server.url)
    try:
        BrokerClient(broker_server.url).update(
            "APPEND",
            [{"id": "room1", "type": ONT + "Room",
              "attributes": [{"name": "occupancy", "value": 2, "metadata": []}]}],
        )
        _poll(lambda: get_json(handle.url + "/stats")[1]["viewTriples"] >= 1)
        status, answer = post_json(
            handle.url + "/sparql",
            {"query": f"SELECT ?n WHERE {{ ?r <{CTX_NS}occupancy> ?n }}"},
        )
        assert status == 200
        assert answer["variables"] == ["n"]
        assert answer["solutions"] == [{"n": {"kind": "literal", "value": "2"}}]
        status, answer = post_json(handle.url + "/sparql", {"query": "ASK { ?s ?p ?o }"})
        assert status == 200 and answer == {"result": True}
        status, _ = post_json(handle.url + "/sparql", {"query": "SELECT WHERE"})
        assert status == 400
        status, _ = post_json(handle.url + "/sparql", {"q": "ASK { ?s ?p ?o }"})
        assert status == 400
    finally:
        handle.stop()


def test_sparql_endpoint_can_be_disabled(broker_server):
    agent, handle = _boot_agent(broker_server.url, sparqlEndpointEnabled=False)
    try:
        status, payload = post_json(handle.url + "/sparql", {"query": "ASK { ?s ?p ?o }"})
        assert status == 404
        assert payload["error"] == "NotFound"
    finally:
        handle.stop()


def test_stop_unsubscribes_from_broker(broker_server):
    agent, handle = _boot_agent(broker_server.url)
    sub_id = agent._subscription_id
    assert sub_id is not None
    handle.stop()  # closes the service, which stops the agent
    status, _ = post_json(
        broker_server.url + "/ngsi10/unsubscribeContext", {"subscriptionId": sub_id}
    )
    assert status == 404  # already gone
