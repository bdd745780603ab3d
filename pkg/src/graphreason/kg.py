"""In-memory directed knowledge graph with typed nodes and per-relation adjacency.

The graph is loaded once from a line-delimited node file (or generated
synthetically) and is immutable afterwards: there is no mutation API, and any
number of readers may share one instance. Four primitive lookups are exposed
for the reasoning drivers: node retrieval by text query, feature lookup,
neighbor listing, and degree counting.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .textops import tokenize

NAME_FEATURE = "name"

_NODE_FILE_FIELDS = frozenset({"id", "type", "features", "neighbors"})


class GraphError(Exception):
    """Base class for graph-store failures."""


class GraphLoadError(GraphError):
    """A node file could not be ingested; message carries the line number."""


class UnknownNodeError(GraphError):
    """A lookup referenced a node id that does not exist."""


class FeatureAbsentError(GraphError):
    """A node exists but does not carry the requested feature key.

    Distinct from an empty-string feature value: callers must be able to tell
    "no such attribute" apart from "attribute present but blank".
    """


class EmptyGraphError(GraphError):
    """Retrieval was attempted on a graph with no nodes."""


class NoMatchError(GraphError):
    """No node scored above zero for a retrieval query."""


@dataclass(frozen=True)
class NodeRecord:
    """One graph node: unique id, a type label, string features, out-edges.

    ``out_edges`` maps a relation name to the list of target node ids in load
    order; a relation never lists the same target twice.
    """

    id: str
    node_type: str
    features: dict[str, str]
    out_edges: dict[str, list[str]]


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    relation_types: frozenset[str]


@dataclass(frozen=True)
class KnowledgeGraph:
    """All nodes keyed by id (in load order) plus derived summary stats."""

    nodes: dict[str, NodeRecord]
    stats: GraphStats


@dataclass(frozen=True)
class Triple:
    """One directed fact: (head, relation, tail) with both ids and names."""

    head_name: str
    relation: str
    tail_name: str
    head_id: str
    tail_id: str


def render_triple(triple: Triple) -> str:
    """Frozen display form used in prompts and traces."""
    return f'"{triple.head_name}" --> {triple.relation} --> {triple.tail_name}'


def _build_graph(records: list[NodeRecord]) -> KnowledgeGraph:
    """Assemble and validate a graph from node records.

    Raises:
        GraphLoadError: on duplicate node ids or dangling edge references.
    """
    nodes: dict[str, NodeRecord] = {}
    for record in records:
        if record.id in nodes:
            raise GraphLoadError(f"duplicate node id: {record.id!r}")
        nodes[record.id] = record

    edge_count = 0
    relation_types: set[str] = set()
    for record in records:
        for relation, targets in record.out_edges.items():
            relation_types.add(relation)
            edge_count += len(targets)
            seen: set[str] = set()
            for target in targets:
                if target in seen:
                    raise GraphLoadError(
                        f"node {record.id!r} lists duplicate neighbor {target!r} "
                        f"under relation {relation!r}"
                    )
                seen.add(target)
                if target not in nodes:
                    raise GraphLoadError(
                        f"node {record.id!r} references missing node {target!r} "
                        f"under relation {relation!r}"
                    )

    stats = GraphStats(
        node_count=len(nodes),
        edge_count=edge_count,
        relation_types=frozenset(relation_types),
    )
    return KnowledgeGraph(nodes=nodes, stats=stats)


def _parse_node_line(line: str, line_number: int) -> NodeRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise GraphLoadError(f"line {line_number}: not valid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise GraphLoadError(f"line {line_number}: expected an object, got {type(raw).__name__}")

    unknown = set(raw) - _NODE_FILE_FIELDS
    if unknown:
        raise GraphLoadError(f"line {line_number}: unknown fields {sorted(unknown)}")
    missing = _NODE_FILE_FIELDS - set(raw)
    if missing:
        raise GraphLoadError(f"line {line_number}: missing fields {sorted(missing)}")

    node_id = raw["id"]
    node_type = raw["type"]
    features = raw["features"]
    neighbors = raw["neighbors"]
    if not isinstance(node_id, str) or not node_id:
        raise GraphLoadError(f"line {line_number}: 'id' must be a non-empty string")
    if not isinstance(node_type, str):
        raise GraphLoadError(f"line {line_number}: 'type' must be a string")
    if not isinstance(features, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in features.items()
    ):
        raise GraphLoadError(f"line {line_number}: 'features' must map strings to strings")
    if not isinstance(neighbors, dict):
        raise GraphLoadError(f"line {line_number}: 'neighbors' must be an object")
    for relation, targets in neighbors.items():
        if not isinstance(relation, str) or not isinstance(targets, list) or not all(
            isinstance(t, str) for t in targets
        ):
            raise GraphLoadError(
                f"line {line_number}: 'neighbors' must map relation names to lists of node ids"
            )

    return NodeRecord(
        id=node_id,
        node_type=node_type,
        features=dict(features),
        out_edges={rel: list(targets) for rel, targets in neighbors.items()},
    )


def load_graph(
    path: str | Path,
    *,
    materialize_inverse: bool = False,
    inverse_prefix: str = "inverse:",
) -> KnowledgeGraph:
    """Load a graph from a UTF-8 line-delimited node file.

    Each non-blank line is one JSON object with exactly the fields ``id``,
    ``type``, ``features`` (string-to-string map) and ``neighbors`` (relation
    name to list of target node ids). Unknown fields are rejected. Every
    referenced target must itself be a node in the file.

    Args:
        path: the node file.
        materialize_inverse: when true, every edge ``h -r-> t`` additionally
            yields ``t -(inverse_prefix + r)-> h`` so relations can be walked
            from either end.
        inverse_prefix: prefix for the materialized reverse relations.

    Raises:
        GraphLoadError: malformed line (reported with its line number),
            duplicate node id, duplicate neighbor, or dangling reference.
    """
    records: list[NodeRecord] = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            records.append(_parse_node_line(line, line_number))

    if materialize_inverse:
        reverse: dict[str, dict[str, list[str]]] = {r.id: {} for r in records}
        for record in records:
            for relation, targets in record.out_edges.items():
                inverse_relation = inverse_prefix + relation
                for target in targets:
                    if target in reverse:
                        bucket = reverse[target].setdefault(inverse_relation, [])
                        if record.id not in bucket:
                            bucket.append(record.id)
        records = [
            NodeRecord(
                id=r.id,
                node_type=r.node_type,
                features=r.features,
                out_edges={**r.out_edges, **reverse[r.id]},
            )
            for r in records
        ]

    return _build_graph(records)


def save_graph(graph: KnowledgeGraph, path: str | Path) -> None:
    """Write a graph back out in the node-file format ``load_graph`` reads.

    Round-tripping through save/load preserves nodes, features, and adjacency
    order exactly.
    """
    with open(path, "w", encoding="utf-8") as handle:
        for record in graph.nodes.values():
            handle.write(
                json.dumps(
                    {
                        "id": record.id,
                        "type": record.node_type,
                        "features": record.features,
                        "neighbors": record.out_edges,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


class RetrieverPolicy(Protocol):
    """Scores how well a node answers a text query; higher wins."""

    def score(self, query: str, node: NodeRecord) -> float: ...


#: Score returned on an exact (case-folded) name match. Anything at or above
#: this value short-circuits the scan, so the first exact match in load order
#: wins immediately.
EXACT_MATCH_SCORE = 2.0


class LexicalOverlapRetriever:
    """Default retrieval policy: token-overlap F1 against the name feature.

    The query and the node's ``name`` feature are tokenized with the frozen
    tokenizer; the score is the F1 of the shared-token overlap. An exact
    case-folded name match returns ``EXACT_MATCH_SCORE`` instead, which
    dominates every F1 value.
    """

    def score(self, query: str, node: NodeRecord) -> float:
        name = node.features.get(NAME_FEATURE)
        if name is None:
            return 0.0
        if name.casefold() == query.casefold():
            return EXACT_MATCH_SCORE
        query_tokens = set(tokenize(query))
        name_tokens = set(tokenize(name))
        if not query_tokens or not name_tokens:
            return 0.0
        overlap = len(query_tokens & name_tokens)
        if overlap == 0:
            return 0.0
        precision = overlap / len(query_tokens)
        recall = overlap / len(name_tokens)
        return 2.0 * precision * recall / (precision + recall)


_DEFAULT_RETRIEVER = LexicalOverlapRetriever()


def retrieve_node(
    graph: KnowledgeGraph,
    query: str,
    retriever: RetrieverPolicy | None = None,
) -> str:
    """Return the id of the highest-scoring node for ``query``.

    Deterministic for a fixed graph and query: ties break toward the node
    that was loaded earlier.

    Raises:
        EmptyGraphError: the graph has no nodes.
        NoMatchError: no node scored above zero.
    """
    if not graph.nodes:
        raise EmptyGraphError("cannot retrieve from an empty graph")
    policy = retriever if retriever is not None else _DEFAULT_RETRIEVER

    best_id: str | None = None
    best_score = 0.0
    for node in graph.nodes.values():
        score = policy.score(query, node)
        if score >= EXACT_MATCH_SCORE:
            return node.id
        if score > best_score:
            best_id = node.id
            best_score = score
    if best_id is None:
        raise NoMatchError(f"no node matches query {query!r}")
    return best_id


def _require_node(graph: KnowledgeGraph, node_id: str) -> NodeRecord:
    node = graph.nodes.get(node_id)
    if node is None:
        raise UnknownNodeError(f"no such node: {node_id!r}")
    return node


def node_feature(graph: KnowledgeGraph, node_id: str, key: str) -> str:
    """Return the node's feature value verbatim.

    Raises:
        UnknownNodeError: the id does not exist.
        FeatureAbsentError: the node has no feature under ``key`` (an empty
            string value is NOT absent and is returned as-is).
    """
    node = _require_node(graph, node_id)
    if key not in node.features:
        raise FeatureAbsentError(f"node {node_id!r} has no feature {key!r}")
    return node.features[key]


def neighbor_check(graph: KnowledgeGraph, node_id: str, relation: str) -> list[str]:
    """Return the node's out-neighbors under ``relation`` in stored order.

    A node with no edges of that relation yields an empty list.
    """
    node = _require_node(graph, node_id)
    return list(node.out_edges.get(relation, ()))


def node_degree(graph: KnowledgeGraph, node_id: str, relation: str) -> int:
    """Return the number of out-neighbors under ``relation`` (0 when absent)."""
    node = _require_node(graph, node_id)
    return len(node.out_edges.get(relation, ()))


def node_name(graph: KnowledgeGraph, node_id: str) -> str:
    """The node's display name: its name feature, falling back to the id."""
    node = _require_node(graph, node_id)
    return node.features.get(NAME_FEATURE, node_id)


def graph_definition(graph: KnowledgeGraph) -> str:
    """Frozen one-line textual description of the graph for prompt headers."""
    node_types = sorted({node.node_type for node in graph.nodes.values()})
    relations = sorted(graph.stats.relation_types)
    return (
        f"A directed knowledge graph with {graph.stats.node_count} nodes and "
        f"{graph.stats.edge_count} edges. Node types: {', '.join(node_types) or 'none'}. "
        f"Relation types: {', '.join(relations) or 'none'}."
    )


@dataclass(frozen=True)
class SyntheticGraphSpec:
    """Shape of a generated desk-scale graph.

    ``edges_per_node`` out-edges are drawn per node (relation and target both
    seeded-random), never duplicating a (relation, target) pair on one node.
    """

    node_types: tuple[str, ...] = ("alpha", "beta")
    relations: tuple[str, ...] = ("linked-to", "derived-from")
    node_count: int = 10
    edges_per_node: int = 2

    def __post_init__(self) -> None:
        if self.node_count <= 0:
            raise ValueError("node_count must be positive")
        if self.edges_per_node < 0:
            raise ValueError("edges_per_node must be non-negative")
        if not self.node_types:
            raise ValueError("at least one node type is required")
        if self.edges_per_node > 0 and not self.relations:
            raise ValueError("edges need at least one relation type")
        if self.edges_per_node > self.node_count * max(len(self.relations), 1):
            raise ValueError("edges_per_node exceeds the distinct (relation, target) pairs")


def generate_synthetic_graph(
    seed: int, spec: SyntheticGraphSpec | None = None
) -> KnowledgeGraph:
    """Deterministically generate a small graph for tests and demos.

    The same seed and spec always produce an identical graph, including
    adjacency order, so saved copies are byte-identical.
    """
    if spec is None:
        spec = SyntheticGraphSpec()
    rng = random.Random(seed)
    ids = [f"n{i:04d}" for i in range(spec.node_count)]
    records: list[NodeRecord] = []
    for index, node_id in enumerate(ids):
        node_type = spec.node_types[index % len(spec.node_types)]
        features = {
            NAME_FEATURE: f"{node_type} {index}",
            "blurb": f"synthetic {node_type} entry number {index}",
        }
        out_edges: dict[str, list[str]] = {}
        chosen: set[tuple[str, str]] = set()
        while len(chosen) < spec.edges_per_node:
            relation = spec.relations[rng.randrange(len(spec.relations))]
            target = ids[rng.randrange(len(ids))]
            if (relation, target) in chosen:
                continue
            chosen.add((relation, target))
            out_edges.setdefault(relation, []).append(target)
        records.append(
            NodeRecord(id=node_id, node_type=node_type, features=features, out_edges=out_edges)
        )
    return _build_graph(records)


def all_triples(graph: KnowledgeGraph) -> Iterable[Triple]:
    """Enumerate every edge of the graph as a resolved triple."""
    for record in graph.nodes.values():
        head_name = record.features.get(NAME_FEATURE, record.id)
        for relation, targets in record.out_edges.items():
            for target in targets:
                tail = graph.nodes[target]
                yield Triple(
                    head_name=head_name,
                    relation=relation,
                    tail_name=tail.features.get(NAME_FEATURE, target),
                    head_id=record.id,
                    tail_id=target,
                )
