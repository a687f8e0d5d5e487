"""Stage subgraphs: operator templates, plan-document parsing, validation, ordering.

A stage subgraph is one planning step's worth of work: a DAG of operator
instances with a designated entry node and a set of end conditions. Subgraphs
arrive as plan documents (JSON emitted by the designer), get validated against
the memory keys available at stage start, and execute in a deterministic
topological order.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

NODE_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class OperatorTemplate(str, Enum):
    """The closed set of reusable operator kinds a plan may instantiate."""

    GENERATE_PLAN = "GENERATE_PLAN"
    DECOMPOSE_PROBLEM = "DECOMPOSE_PROBLEM"
    GENERATE_ANSWER = "GENERATE_ANSWER"
    REVIEW_SOLUTION = "REVIEW_SOLUTION"
    REFINE_ANSWER = "REFINE_ANSWER"
    GENERATE_CODE = "GENERATE_CODE"
    REFINE_CODE = "REFINE_CODE"
    ORGANIZE_SOLUTION = "ORGANIZE_SOLUTION"
    ENSEMBLE = "ENSEMBLE"
    DEFAULT = "DEFAULT"
    TERMINATE = "TERMINATE"

    @property
    def produces_output(self) -> bool:
        """TERMINATE is a control signal; every other template stores a record."""
        return self is not OperatorTemplate.TERMINATE


TEMPLATE_DESCRIPTIONS: dict[OperatorTemplate, str] = {
    OperatorTemplate.GENERATE_PLAN: "Propose a high-level plan for solving the current subgoal.",
    OperatorTemplate.DECOMPOSE_PROBLEM: "Break a complex goal into subgoals.",
    OperatorTemplate.GENERATE_ANSWER: "Produce an answer candidate for the current task.",
    OperatorTemplate.REVIEW_SOLUTION: "Evaluate correctness or completeness of a prior answer.",
    OperatorTemplate.REFINE_ANSWER: "Modify or improve a previously generated answer.",
    OperatorTemplate.GENERATE_CODE: "Write code to solve the current subgoal.",
    OperatorTemplate.REFINE_CODE: "Improve or debug previously generated code.",
    OperatorTemplate.ORGANIZE_SOLUTION: "Summarize or structure the final answer for output.",
    OperatorTemplate.ENSEMBLE: "Aggregate multiple reasoning paths using voting.",
    OperatorTemplate.DEFAULT: "General-purpose fallback operator.",
    OperatorTemplate.TERMINATE: "End the workflow once the solution is complete.",
}


def memory_key(stage_index: int, node_id: str, template: OperatorTemplate | str) -> str:
    """Canonical memory key a node's output is stored under: ``s<t>.<id>.<TEMPLATE>``."""
    name = template.value if isinstance(template, OperatorTemplate) else str(template)
    return f"s{stage_index}.{node_id}.{name}"


class EndConditionKind(str, Enum):
    DESIGNER_TERMINATE = "designer_terminate"
    VERDICT_ACCEPT = "verdict_accept"
    ANSWER_PRESENT = "answer_present"


@dataclass(frozen=True)
class EndCondition:
    """A stage-level stop condition.

    ``verdict_accept`` expects ``params["node"]`` naming a REVIEW_SOLUTION node in
    the same subgraph; ``answer_present`` expects ``params["key"]`` naming a
    memory key. ``designer_terminate`` takes no parameters.
    """

    kind: EndConditionKind
    params: tuple[tuple[str, str], ...] = ()

    @classmethod
    def make(cls, kind: EndConditionKind | str, params: Mapping[str, str] | None = None) -> "EndCondition":
        return cls(EndConditionKind(kind), tuple(sorted((params or {}).items())))

    def param(self, name: str) -> str | None:
        for key, value in self.params:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class OperatorInstance:
    """One planned action: a template bound to an instruction and its input keys."""

    node_id: str
    template: OperatorTemplate
    instruction: str = ""
    input_keys: tuple[str, ...] = ()


@dataclass(frozen=True)
class StageSubgraph:
    """The DAG planned for one stage.

    Nodes and edges are normalized to sorted order at construction so equality
    is structural and serialization is canonical; execution order is decided by
    :func:`topological_order`, never by listing order.
    """

    stage_index: int
    nodes: tuple[OperatorInstance, ...]
    edges: tuple[tuple[str, str], ...]
    start_node: str
    end_conditions: tuple[EndCondition, ...] = ()
    subgoal: str = ""

    def __post_init__(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate node ids: {dupes}")
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.node_id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    @property
    def node_map(self) -> dict[str, OperatorInstance]:
        return {n.node_id: n for n in self.nodes}

    def output_key(self, node_id: str) -> str:
        node = self.node_map[node_id]
        return memory_key(self.stage_index, node.node_id, node.template)


class ViolationCode(str, Enum):
    CYCLE = "CYCLE"
    DANGLING_EDGE = "DANGLING_EDGE"
    DANGLING_INPUT = "DANGLING_INPUT"
    NO_START = "NO_START"
    UNREACHABLE = "UNREACHABLE"
    UNKNOWN_TEMPLATE = "UNKNOWN_TEMPLATE"
    EMPTY_GRAPH = "EMPTY_GRAPH"


@dataclass
class ValidationReport:
    violations: list[tuple[ViolationCode, str]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def codes(self) -> set[ViolationCode]:
        return {code for code, _ in self.violations}

    def messages(self) -> list[str]:
        return [f"{code.value}: {msg}" for code, msg in self.violations]


class GraphCycleError(Exception):
    """Raised by topological_order on a cyclic graph (unreachable after validation)."""


def _adjacency(graph: StageSubgraph) -> tuple[dict[str, set[str]], dict[str, set[str]]]:
    succ: dict[str, set[str]] = {n.node_id: set() for n in graph.nodes}
    pred: dict[str, set[str]] = {n.node_id: set() for n in graph.nodes}
    for u, v in graph.edges:
        if u in succ and v in succ:
            succ[u].add(v)
            pred[v].add(u)
    return succ, pred


def _ancestors(graph: StageSubgraph) -> dict[str, set[str]]:
    """Strict ancestors of every node (empty sets on cyclic graphs are fine:
    DANGLING_INPUT reporting is secondary to the CYCLE violation there)."""
    succ, pred = _adjacency(graph)
    result: dict[str, set[str]] = {}
    for node_id in succ:
        seen: set[str] = set()
        frontier = list(pred[node_id])
        while frontier:
            current = frontier.pop()
            if current in seen or current == node_id:
                continue
            seen.add(current)
            frontier.extend(pred[current])
        result[node_id] = seen
    return result


def validate_subgraph(graph: StageSubgraph, memory_keys: Iterable[str] = ()) -> ValidationReport:
    """Check every structural invariant of a stage subgraph.

    Violations are data, not failures: the report lists all of them so the
    designer repair loop can react to the complete picture.
    """
    report = ValidationReport()
    available = set(memory_keys)

    if not graph.nodes:
        report.violations.append((ViolationCode.EMPTY_GRAPH, "graph has no nodes"))
        return report

    node_ids = {n.node_id for n in graph.nodes}

    for node in graph.nodes:
        if not isinstance(node.template, OperatorTemplate):
            report.violations.append(
                (ViolationCode.UNKNOWN_TEMPLATE, f"node {node.node_id!r} has unknown template {node.template!r}")
            )

    for u, v in graph.edges:
        for endpoint in (u, v):
            if endpoint not in node_ids:
                report.violations.append(
                    (ViolationCode.DANGLING_EDGE, f"edge ({u!r}, {v!r}) references missing node {endpoint!r}")
                )

    succ, pred = _adjacency(graph)

    if graph.start_node not in node_ids:
        report.violations.append((ViolationCode.NO_START, f"start node {graph.start_node!r} is not in the graph"))
    elif pred[graph.start_node]:
        report.violations.append(
            (ViolationCode.NO_START, f"start node {graph.start_node!r} has incoming edges from {sorted(pred[graph.start_node])}")
        )

    # Kahn's algorithm both detects cycles and leaves the cyclic remainder.
    indegree = {n: len(pred[n]) for n in node_ids}
    queue = [n for n, d in indegree.items() if d == 0]
    visited = 0
    while queue:
        current = queue.pop()
        visited += 1
        for nxt in succ[current]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                queue.append(nxt)
    if visited != len(node_ids):
        cyclic = sorted(n for n, d in indegree.items() if d > 0)
        report.violations.append((ViolationCode.CYCLE, f"cycle detected among nodes {cyclic}"))

    if graph.start_node in node_ids:
        reachable = {graph.start_node}
        frontier = [graph.start_node]
        while frontier:
            current = frontier.pop()
            for nxt in succ[current]:
                if nxt not in reachable:
                    reachable.add(nxt)
                    frontier.append(nxt)
        for node_id in sorted(node_ids - reachable):
            report.violations.append(
                (ViolationCode.UNREACHABLE, f"node {node_id!r} is not reachable from start node {graph.start_node!r}")
            )

    ancestors = _ancestors(graph)
    for node in graph.nodes:
        producible = {
            memory_key(graph.stage_index, anc, graph.node_map[anc].template)
            for anc in ancestors[node.node_id]
            if isinstance(graph.node_map[anc].template, OperatorTemplate)
            and graph.node_map[anc].template.produces_output
        }
        for key in node.input_keys:
            if key not in available and key not in producible:
                report.violations.append(
                    (
                        ViolationCode.DANGLING_INPUT,
                        f"node {node.node_id!r} input key {key!r} is neither in memory nor produced by a predecessor",
                    )
                )
    return report


def topological_order(graph: StageSubgraph) -> list[str]:
    """Deterministic execution order: Kahn's algorithm with lexicographic tie-break.

    Among all valid topological orders this returns the lexicographically
    smallest one, so runs with scripted providers are bit-reproducible.
    """
    succ, pred = _adjacency(graph)
    indegree = {n: len(pred[n]) for n in succ}
    ready = [n for n, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        current = heapq.heappop(ready)
        order.append(current)
        for nxt in sorted(succ[current]):
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(succ):
        raise GraphCycleError(f"cycle prevents ordering; placed {len(order)} of {len(succ)} nodes")
    return order


class ParseErrorKind(str, Enum):
    MALFORMED = "MALFORMED"
    SCHEMA = "SCHEMA"
    UNKNOWN_TEMPLATE = "UNKNOWN_TEMPLATE"


class PlanParseError(Exception):
    def __init__(self, kind: ParseErrorKind, message: str) -> None:
        super().__init__(f"{kind.value}: {message}")
        self.kind = kind
        self.message = message


def _first_balanced_object(text: str) -> str:
    """Extract the first balanced top-level JSON object, ignoring fences and prose."""
    depth = 0
    start = -1
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    raise PlanParseError(ParseErrorKind.MALFORMED, "no balanced plan document found")


def _require(doc: dict, field_name: str):
    if field_name not in doc:
        raise PlanParseError(ParseErrorKind.SCHEMA, f"missing required field {field_name!r}")
    return doc[field_name]


def parse_plan(raw_text: str, stage_index: int = 0) -> StageSubgraph:
    """Parse designer output into a StageSubgraph.

    Tolerates surrounding code fences and prose: the first balanced top-level
    JSON object wins. Raises PlanParseError with kind MALFORMED, SCHEMA, or
    UNKNOWN_TEMPLATE.
    """
    candidate = _first_balanced_object(raw_text)
    try:
        doc = json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise PlanParseError(ParseErrorKind.MALFORMED, f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PlanParseError(ParseErrorKind.MALFORMED, "plan document is not an object")

    raw_nodes = _require(doc, "nodes")
    if not isinstance(raw_nodes, list):
        raise PlanParseError(ParseErrorKind.SCHEMA, "'nodes' must be a list")
    start = _require(doc, "start")
    if not isinstance(start, str):
        raise PlanParseError(ParseErrorKind.SCHEMA, "'start' must be a node id string")

    nodes: list[OperatorInstance] = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(raw_nodes):
        if not isinstance(entry, dict):
            raise PlanParseError(ParseErrorKind.SCHEMA, f"node #{i} is not an object")
        node_id = entry.get("id")
        if not isinstance(node_id, str) or not node_id:
            raise PlanParseError(ParseErrorKind.SCHEMA, f"node #{i} is missing a nonempty 'id'")
        if not NODE_ID_RE.match(node_id):
            raise PlanParseError(
                ParseErrorKind.SCHEMA, f"node id {node_id!r} may only contain [A-Za-z0-9_-]"
            )
        if node_id in seen_ids:
            raise PlanParseError(ParseErrorKind.SCHEMA, f"duplicate node id {node_id!r}")
        seen_ids.add(node_id)
        template_name = entry.get("template")
        if not isinstance(template_name, str):
            raise PlanParseError(ParseErrorKind.SCHEMA, f"node {node_id!r} is missing 'template'")
        try:
            template = OperatorTemplate(template_name)
        except ValueError as exc:
            raise PlanParseError(
                ParseErrorKind.UNKNOWN_TEMPLATE, f"node {node_id!r} uses unknown template {template_name!r}"
            ) from exc
        instruction = entry.get("instruction", "")
        if not isinstance(instruction, str):
            raise PlanParseError(ParseErrorKind.SCHEMA, f"node {node_id!r} 'instruction' must be text")
        raw_keys = entry.get("input_keys", [])
        if not isinstance(raw_keys, list) or not all(isinstance(k, str) for k in raw_keys):
            raise PlanParseError(ParseErrorKind.SCHEMA, f"node {node_id!r} 'input_keys' must be a list of strings")
        nodes.append(OperatorInstance(node_id, template, instruction, tuple(raw_keys)))

    raw_edges = doc.get("edges", [])
    if not isinstance(raw_edges, list):
        raise PlanParseError(ParseErrorKind.SCHEMA, "'edges' must be a list")
    edges: list[tuple[str, str]] = []
    for i, pair in enumerate(raw_edges):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2 or not all(isinstance(x, str) for x in pair):
            raise PlanParseError(ParseErrorKind.SCHEMA, f"edge #{i} must be a [from_id, to_id] pair")
        edges.append((pair[0], pair[1]))

    raw_conds = doc.get("end_conditions", [])
    if not isinstance(raw_conds, list):
        raise PlanParseError(ParseErrorKind.SCHEMA, "'end_conditions' must be a list")
    conditions: list[EndCondition] = []
    node_by_id = {n.node_id: n for n in nodes}
    for i, entry in enumerate(raw_conds):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise PlanParseError(ParseErrorKind.SCHEMA, f"end condition #{i} must be an object with 'kind'")
        try:
            kind = EndConditionKind(entry["kind"])
        except ValueError as exc:
            raise PlanParseError(ParseErrorKind.SCHEMA, f"end condition #{i} has unknown kind {entry['kind']!r}") from exc
        params = entry.get("params", {})
        if not isinstance(params, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in params.items()
        ):
            raise PlanParseError(ParseErrorKind.SCHEMA, f"end condition #{i} 'params' must be a text map")
        if kind is EndConditionKind.VERDICT_ACCEPT:
            target = params.get("node")
            if target is None:
                raise PlanParseError(ParseErrorKind.SCHEMA, f"end condition #{i} (verdict_accept) needs params.node")
            node = node_by_id.get(target)
            if node is None or node.template is not OperatorTemplate.REVIEW_SOLUTION:
                raise PlanParseError(
                    ParseErrorKind.SCHEMA,
                    f"end condition #{i} (verdict_accept) must name a REVIEW_SOLUTION node, got {target!r}",
                )
        if kind is EndConditionKind.ANSWER_PRESENT and "key" not in params:
            raise PlanParseError(ParseErrorKind.SCHEMA, f"end condition #{i} (answer_present) needs params.key")
        conditions.append(EndCondition.make(kind, params))

    subgoal = doc.get("subgoal", "")
    if not isinstance(subgoal, str):
        raise PlanParseError(ParseErrorKind.SCHEMA, "'subgoal' must be text")

    return StageSubgraph(
        stage_index=stage_index,
        nodes=tuple(nodes),
        edges=tuple(edges),
        start_node=start,
        end_conditions=tuple(conditions),
        subgoal=subgoal,
    )


def serialize_plan(graph: StageSubgraph) -> str:
    """Canonical single-line plan document; inverse of parse_plan on its own output."""
    doc = {
        "subgoal": graph.subgoal,
        "nodes": [
            {
                "id": n.node_id,
                "template": n.template.value if isinstance(n.template, OperatorTemplate) else str(n.template),
                "instruction": n.instruction,
                "input_keys": list(n.input_keys),
            }
            for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges],
        "start": graph.start_node,
        "end_conditions": [{"kind": c.kind.value, "params": dict(c.params)} for c in graph.end_conditions],
    }
    return json.dumps(doc, ensure_ascii=False)
