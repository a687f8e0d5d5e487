"""Graph construction, validation, ordering, and plan-document parsing."""

from __future__ import annotations

import itertools
import json
import random

import pytest

from stageflow import (
    EndCondition,
    EndConditionKind,
    GraphCycleError,
    OperatorInstance,
    OperatorTemplate,
    PlanParseError,
    StageSubgraph,
    ViolationCode,
    parse_plan,
    serialize_plan,
    topological_order,
    validate_subgraph,
)
from stageflow.graph import memory_key


def node(node_id, template=OperatorTemplate.GENERATE_ANSWER, instruction="", input_keys=()):
    return OperatorInstance(node_id, template, instruction, tuple(input_keys))


def graph(nodes, edges=(), start=None, conditions=(), stage=0, subgoal=""):
    return StageSubgraph(
        stage_index=stage,
        nodes=tuple(nodes),
        edges=tuple(edges),
        start_node=start if start is not None else nodes[0].node_id,
        end_conditions=tuple(conditions),
        subgoal=subgoal,
    )


def all_topological_orders(g: StageSubgraph) -> list[list[str]]:
    """Brute-force oracle: every permutation that respects the edge set."""
    ids = [n.node_id for n in g.nodes]
    orders = []
    for perm in itertools.permutations(ids):
        position = {nid: i for i, nid in enumerate(perm)}
        if all(position[u] < position[v] for u, v in g.edges):
            orders.append(list(perm))
    return orders


def random_dag(rng: random.Random, max_nodes: int = 6) -> StageSubgraph:
    """Connected random DAG rooted at the lexicographically smallest node."""
    n = rng.randint(1, max_nodes)
    ids = [f"n{i}" for i in range(n)]
    edges = set()
    for i in range(1, n):
        parent = ids[rng.randrange(i)]
        edges.add((parent, ids[i]))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.3:
                edges.add((ids[i], ids[j]))
    templates = [t for t in OperatorTemplate if t is not OperatorTemplate.TERMINATE]
    nodes = [node(nid, rng.choice(templates)) for nid in ids]
    return graph(nodes, sorted(edges), start=ids[0])


class TestValidation:
    def test_minimal_legal_graph(self):
        g = graph([node("solo")])
        assert validate_subgraph(g).valid

    def test_cycle_detected(self):
        g = graph([node("A"), node("B")], [("A", "B"), ("B", "A")], start="A")
        assert ViolationCode.CYCLE in validate_subgraph(g).codes()

    def test_empty_graph(self):
        g = StageSubgraph(0, (), (), "missing")
        assert validate_subgraph(g).codes() == {ViolationCode.EMPTY_GRAPH}

    def test_dangling_edge(self):
        g = graph([node("A")], [("A", "ghost")])
        assert ViolationCode.DANGLING_EDGE in validate_subgraph(g).codes()

    def test_no_start_missing(self):
        g = graph([node("A")], start="nowhere")
        assert ViolationCode.NO_START in validate_subgraph(g).codes()

    def test_start_with_incoming_edge(self):
        g = graph([node("A"), node("B")], [("A", "B")], start="B")
        assert ViolationCode.NO_START in validate_subgraph(g).codes()

    def test_unreachable_component(self):
        g = graph([node("A"), node("B")], start="A")
        report = validate_subgraph(g)
        assert ViolationCode.UNREACHABLE in report.codes()

    def test_dangling_input_key(self):
        # B names A's would-be output key, but A is not a predecessor of B.
        b = node("B", input_keys=[memory_key(0, "A", OperatorTemplate.GENERATE_PLAN)])
        a = node("A", OperatorTemplate.GENERATE_PLAN)
        g = graph([a, b], [("A", "B")], start="A")
        assert validate_subgraph(g).valid
        sibling = graph(
            [node("root", OperatorTemplate.GENERATE_PLAN), a, b],
            [("root", "A"), ("root", "B")],
            start="root",
        )
        assert ViolationCode.DANGLING_INPUT in validate_subgraph(sibling).codes()

    def test_input_key_from_prior_stage_memory(self):
        b = node("B", input_keys=["s0.old.GENERATE_ANSWER"])
        g = graph([b], stage=1)
        assert not validate_subgraph(g).valid
        assert validate_subgraph(g, {"s0.old.GENERATE_ANSWER"}).valid

    def test_terminate_produces_no_usable_key(self):
        term = node("T", OperatorTemplate.TERMINATE)
        consumer = node("C", input_keys=[memory_key(0, "T", OperatorTemplate.TERMINATE)])
        g = graph([term, consumer], [("T", "C")], start="T")
        assert ViolationCode.DANGLING_INPUT in validate_subgraph(g).codes()

    def test_unknown_template_reported(self):
        bogus = OperatorInstance("X", "NOT_A_TEMPLATE", "", ())  # type: ignore[arg-type]
        g = StageSubgraph(0, (bogus,), (), "X")
        assert ViolationCode.UNKNOWN_TEMPLATE in validate_subgraph(g).codes()

    def test_duplicate_node_ids_rejected_at_construction(self):
        with pytest.raises(ValueError, match="duplicate"):
            graph([node("A"), node("A")])

    def test_dangling_input_matches_topological_replay_oracle(self):
        # A key is reliably available iff its producer precedes the consumer in
        # *every* topological order; validation must agree with that replay.
        rng = random.Random(7)
        for _ in range(100):
            g = random_dag(rng, max_nodes=5)
            ids = [n.node_id for n in g.nodes]
            producer, consumer = rng.choice(ids), rng.choice(ids)
            if producer == consumer or not g.node_map[producer].template.produces_output:
                continue
            key = memory_key(0, producer, g.node_map[producer].template)
            patched_nodes = [
                node(n.node_id, n.template, n.instruction, (key,)) if n.node_id == consumer else n
                for n in g.nodes
            ]
            patched = graph(patched_nodes, g.edges, start=g.start_node)
            report = validate_subgraph(patched)
            orders = all_topological_orders(patched)
            always_before = all(order.index(producer) < order.index(consumer) for order in orders)
            assert (ViolationCode.DANGLING_INPUT not in report.codes()) == always_before

    def test_reachability_matches_independent_bfs(self):
        rng = random.Random(11)
        for _ in range(50):
            g = random_dag(rng)
            if not validate_subgraph(g).valid:
                continue
            succ = {n.node_id: [] for n in g.nodes}
            for u, v in g.edges:
                succ[u].append(v)
            seen = {g.start_node}
            queue = [g.start_node]
            while queue:
                for nxt in succ[queue.pop(0)]:
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)
            assert seen == {n.node_id for n in g.nodes}


class TestTopologicalOrder:
    def test_single_node(self):
        assert topological_order(graph([node("N")])) == ["N"]

    def test_diamond_is_lexicographic_minimum(self):
        g = graph(
            [node(i) for i in "ABCD"],
            [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")],
            start="A",
        )
        orders = all_topological_orders(g)
        assert topological_order(g) == min(orders)
        assert topological_order(g) == ["A", "B", "C", "D"]

    def test_cycle_raises(self):
        g = graph([node("A"), node("B")], [("A", "B"), ("B", "A")], start="A")
        with pytest.raises(GraphCycleError):
            topological_order(g)

    def test_matches_bruteforce_on_random_dags(self):
        rng = random.Random(3)
        for _ in range(100):
            g = random_dag(rng)
            orders = all_topological_orders(g)
            result = topological_order(g)
            assert result in orders
            assert result == min(orders)


class TestParsePlan:
    def test_two_node_document(self):
        raw = json.dumps(
            {
                "subgoal": "s",
                "nodes": [
                    {"id": "a", "template": "GENERATE_PLAN", "instruction": "plan it", "input_keys": []},
                    {"id": "b", "template": "GENERATE_ANSWER", "instruction": "answer", "input_keys": []},
                ],
                "edges": [["a", "b"]],
                "start": "a",
                "end_conditions": [],
            }
        )
        g = parse_plan(raw)
        assert len(g.nodes) == 2
        assert g.edges == (("a", "b"),)
        assert serialize_plan(parse_plan(serialize_plan(g))) == serialize_plan(g)

    def test_fenced_document_with_prose(self):
        raw = json.dumps({"subgoal": "", "nodes": [{"id": "x", "template": "DEFAULT"}], "edges": [], "start": "x"})
        wrapped = f"Here is my plan:\n```json\n{raw}\n```\nHope that works!"
        assert parse_plan(wrapped) == parse_plan(raw)

    def test_missing_nodes_field(self):
        with pytest.raises(PlanParseError) as excinfo:
            parse_plan(json.dumps({"start": "x"}))
        assert excinfo.value.kind.value == "SCHEMA"

    def test_not_parseable(self):
        with pytest.raises(PlanParseError) as excinfo:
            parse_plan("no json here at all")
        assert excinfo.value.kind.value == "MALFORMED"

    def test_unknown_template(self):
        raw = json.dumps({"nodes": [{"id": "x", "template": "FLY_TO_MOON"}], "start": "x"})
        with pytest.raises(PlanParseError) as excinfo:
            parse_plan(raw)
        assert excinfo.value.kind.value == "UNKNOWN_TEMPLATE"

    def test_bad_node_id_characters(self):
        raw = json.dumps({"nodes": [{"id": "a.b", "template": "DEFAULT"}], "start": "a.b"})
        with pytest.raises(PlanParseError) as excinfo:
            parse_plan(raw)
        assert excinfo.value.kind.value == "SCHEMA"

    def test_verdict_accept_must_name_review_node(self):
        raw = json.dumps(
            {
                "nodes": [{"id": "g", "template": "GENERATE_ANSWER"}],
                "start": "g",
                "end_conditions": [{"kind": "verdict_accept", "params": {"node": "g"}}],
            }
        )
        with pytest.raises(PlanParseError) as excinfo:
            parse_plan(raw)
        assert excinfo.value.kind.value == "SCHEMA"

    def test_stage_index_from_caller(self):
        raw = json.dumps({"nodes": [{"id": "x", "template": "DEFAULT"}], "start": "x"})
        assert parse_plan(raw, stage_index=3).stage_index == 3

    def test_round_trip_on_generated_documents(self):
        rng = random.Random(5)
        for _ in range(50):
            g = random_dag(rng)
            doc = serialize_plan(g)
            assert parse_plan(doc) == g
            assert serialize_plan(parse_plan(doc)) == doc

    def test_end_conditions_round_trip(self):
        review = node("rev", OperatorTemplate.REVIEW_SOLUTION)
        g = graph(
            [review],
            conditions=[
                EndCondition.make(EndConditionKind.VERDICT_ACCEPT, {"node": "rev"}),
                EndCondition.make(EndConditionKind.ANSWER_PRESENT, {"key": "s0.rev.REVIEW_SOLUTION"}),
            ],
        )
        assert parse_plan(serialize_plan(g)) == g
