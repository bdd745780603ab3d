"""Automatic breadth-first graph exploration steered by model pruning.

Starting from anchor nodes, each round expands every not-yet-visited
entity: the model selects which relations to follow and which tail
entities to keep, the kept edges are harvested as triples, and newly seen
tails join the queue one hop deeper. After each round a stop check asks
whether the collected evidence already answers the question.

Every model-driven selection has a deterministic fallback (a first-N
prefix, or "keep nothing") so a run never dies on a malformed reply; with
permissive replies and the caps effectively disabled, exploration reduces
to the plain d-hop closure of the anchors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import kg
from .costs import CostCounters
from .evaluation import Question
from .llm import (
    Backend,
    MalformedOutputError,
    complete_with_reask,
    parse_bracketed_answer,
    request_for,
)
from .prompts import load_examples

logger = logging.getLogger(__name__)


@dataclass
class SeenEntity:
    visited: bool
    depth_discovered: int


@dataclass(frozen=True)
class AttributeHit:
    entity_id: str
    entity_name: str
    key: str
    value: str


@dataclass(frozen=True)
class ExploreConfig:
    search_depth: int = 3
    max_relations_per_entity: int = 3
    max_neighbors_per_relation: int = 5
    select_attributes: bool = False

    def __post_init__(self) -> None:
        for name in ("search_depth", "max_relations_per_entity", "max_neighbors_per_relation"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class ExplorationState:
    """Everything a search has seen: entities, harvested triples, attributes."""

    seen_entities: dict[str, SeenEntity] = field(default_factory=dict)
    found_triples: list[kg.Triple] = field(default_factory=list)
    relevant_attributes: list[AttributeHit] = field(default_factory=list)
    sufficient: bool = False

    def add_anchors(self, node_ids: list[str]) -> None:
        for node_id in node_ids:
            if node_id not in self.seen_entities:
                self.seen_entities[node_id] = SeenEntity(visited=False, depth_discovered=0)

    def clone(self) -> "ExplorationState":
        return ExplorationState(
            seen_entities={
                eid: SeenEntity(visited=meta.visited, depth_discovered=meta.depth_discovered)
                for eid, meta in self.seen_entities.items()
            },
            found_triples=list(self.found_triples),
            relevant_attributes=list(self.relevant_attributes),
            sufficient=self.sufficient,
        )

    @classmethod
    def merge(cls, a: "ExplorationState", b: "ExplorationState") -> "ExplorationState":
        """Deduplicated union of two states, a's discoveries first."""
        merged = a.clone()
        for eid, meta in b.seen_entities.items():
            mine = merged.seen_entities.get(eid)
            if mine is None:
                merged.seen_entities[eid] = SeenEntity(meta.visited, meta.depth_discovered)
            else:
                mine.visited = mine.visited or meta.visited
                mine.depth_discovered = min(mine.depth_discovered, meta.depth_discovered)
        keys = {(t.head_id, t.relation, t.tail_id) for t in merged.found_triples}
        for triple in b.found_triples:
            key = (triple.head_id, triple.relation, triple.tail_id)
            if key not in keys:
                merged.found_triples.append(triple)
                keys.add(key)
        attr_keys = {(hit.entity_id, hit.key) for hit in merged.relevant_attributes}
        for hit in b.relevant_attributes:
            if (hit.entity_id, hit.key) not in attr_keys:
                merged.relevant_attributes.append(hit)
                attr_keys.add((hit.entity_id, hit.key))
        merged.sufficient = a.sufficient or b.sufficient
        return merged

    def rendered_triples(self) -> str:
        return "\n".join(kg.render_triple(t) for t in self.found_triples)

    def rendered_attributes(self) -> str:
        return "\n".join(
            f"{hit.entity_name}.{hit.key}: {hit.value}" for hit in self.relevant_attributes
        )

    def as_dict(self) -> dict:
        return {
            "seen_entities": {
                eid: {"visited": meta.visited, "depth_discovered": meta.depth_discovered}
                for eid, meta in self.seen_entities.items()
            },
            "found_triples": [
                {
                    "head_id": t.head_id,
                    "head_name": t.head_name,
                    "relation": t.relation,
                    "tail_id": t.tail_id,
                    "tail_name": t.tail_name,
                }
                for t in self.found_triples
            ],
            "relevant_attributes": [
                {
                    "entity_id": h.entity_id,
                    "entity_name": h.entity_name,
                    "key": h.key,
                    "value": h.value,
                }
                for h in self.relevant_attributes
            ],
            "sufficient": self.sufficient,
        }


def extract_entities(
    text: str,
    backend: Backend,
    counters: CostCounters,
    domain: str,
) -> list[str]:
    """Pull entity surface forms out of free text; malformed replies yield []."""
    request = request_for(
        "entity_extraction",
        {"examples": load_examples("entity_extraction", domain), "text": text},
        tag="extract",
    )

    def parse(reply: str) -> list[str]:
        span = parse_bracketed_answer(reply)
        return [part.strip() for part in span.split(",") if part.strip()]

    try:
        return complete_with_reask(backend, request, counters, parse)
    except MalformedOutputError:
        return []


def resolve_anchors(
    graph: kg.KnowledgeGraph,
    surface_forms: list[str],
    counters: CostCounters,
) -> list[str]:
    """Resolve surface forms to node ids; misses are skipped, order kept."""
    anchors: list[str] = []
    for form in surface_forms:
        counters.record_kg_op("retrieve_node")
        try:
            node_id = kg.retrieve_node(graph, form)
        except (kg.EmptyGraphError, kg.NoMatchError):
            logger.debug("anchor %r did not resolve", form)
            continue
        if node_id not in anchors:
            anchors.append(node_id)
    return anchors


def prune_relations(
    question: Question,
    entity_id: str,
    relations: list[str],
    graph: kg.KnowledgeGraph,
    backend: Backend,
    counters: CostCounters,
    config: ExploreConfig,
) -> list[str]:
    """Model-select relations worth following, order-preserving and capped.

    Malformed replies — or replies naming nothing we recognize — fall back
    to the first ``max_relations_per_entity`` relations.
    """
    if not relations:
        raise ValueError(f"prune_relations needs a nonempty relation list for {entity_id}")
    fallback = relations[: config.max_relations_per_entity]
    request = request_for(
        "prune_relations",
        {
            "examples": load_examples("prune_relations", question.domain),
            "question": question.text,
            "entity": kg.node_name(graph, entity_id),
            "relations": ", ".join(relations),
        },
        tag="prune_relations",
    )

    def parse(reply: str) -> set[str]:
        span = parse_bracketed_answer(reply)
        return {part.strip().casefold() for part in span.split(",") if part.strip()}

    try:
        answered = complete_with_reask(backend, request, counters, parse)
    except MalformedOutputError:
        return fallback
    selected = [rel for rel in relations if rel.casefold() in answered]
    if not selected:
        return fallback
    return selected[: config.max_relations_per_entity]


def prune_entities(
    question: Question,
    head_id: str,
    relation: str,
    tail_ids: list[str],
    graph: kg.KnowledgeGraph,
    backend: Backend,
    counters: CostCounters,
    config: ExploreConfig,
) -> list[str]:
    """Model-select tail entities; answered names resolve only within the
    candidate set (exact name match), so the model cannot steer the search
    to arbitrary nodes. Malformed replies keep the first
    ``max_neighbors_per_relation`` tails.
    """
    if not tail_ids:
        raise ValueError(f"prune_entities needs a nonempty tail list for {head_id}")
    request = request_for(
        "prune_entities",
        {
            "examples": load_examples("prune_entities", question.domain),
            "question": question.text,
            "head_entity": kg.node_name(graph, head_id),
            "relation": relation,
            "tail_entities": ", ".join(kg.node_name(graph, tid) for tid in tail_ids),
        },
        tag="prune_entities",
    )

    def parse(reply: str) -> set[str]:
        span = parse_bracketed_answer(reply)
        return {part.strip() for part in span.split(",") if part.strip()}

    try:
        answered = complete_with_reask(backend, request, counters, parse)
    except MalformedOutputError:
        return tail_ids[: config.max_neighbors_per_relation]
    selected = [tid for tid in tail_ids if kg.node_name(graph, tid) in answered]
    return selected[: config.max_neighbors_per_relation]


def search_attributes(
    question: Question,
    entity_id: str,
    backend: Backend,
    counters: CostCounters,
    graph: kg.KnowledgeGraph,
) -> list[AttributeHit]:
    """Ask which of an entity's features matter for the question.

    A ``{{None}}`` reply, an unrecognized key list, or a malformed reply all
    yield no hits.
    """
    node = graph.nodes[entity_id]
    name = node.features.get(kg.NAME_FEATURE, entity_id)
    rendered = "; ".join(f"{key}: {value}" for key, value in node.features.items())
    request = request_for(
        "search_attributes",
        {
            "examples": load_examples("search_attributes", question.domain),
            "question": question.text,
            "entity": name,
            "attributes": rendered,
        },
        tag="attributes",
    )

    def parse(reply: str) -> list[str]:
        span = parse_bracketed_answer(reply)
        if span.casefold() == "none":
            return []
        return [part.strip() for part in span.split(",") if part.strip()]

    try:
        keys = complete_with_reask(backend, request, counters, parse)
    except MalformedOutputError:
        return []
    answered = set(keys)
    return [
        AttributeHit(entity_id=entity_id, entity_name=name, key=key, value=value)
        for key, value in node.features.items()
        if key in answered
    ]


def end_check(
    question: Question,
    state: ExplorationState,
    backend: Backend,
    counters: CostCounters,
    *,
    thoughts: str = "",
) -> bool:
    """Is the collected evidence sufficient? Malformed replies mean "keep going"."""
    request = request_for(
        "search_end",
        {
            "examples": load_examples("search_end", question.domain),
            "question": question.text,
            "thoughts": thoughts,
            "triples": state.rendered_triples(),
            "attributes": state.rendered_attributes(),
        },
        tag="end_check",
    )

    def parse(reply: str) -> bool:
        return parse_bracketed_answer(reply).casefold() == "yes"

    try:
        return complete_with_reask(backend, request, counters, parse)
    except MalformedOutputError:
        return False


def explore(
    question: Question,
    anchors: list[str],
    state: ExplorationState,
    config: ExploreConfig,
    graph: kg.KnowledgeGraph,
    backend: Backend,
    counters: CostCounters,
    *,
    thoughts: str = "",
) -> ExplorationState:
    """Run up to ``search_depth`` pruned expansion rounds from the anchors.

    Mutates and returns ``state``. Each round expands every unvisited seen
    entity (one node fetch plus one neighbor scan per selected relation),
    harvests the kept edges as deduplicated triples, then runs the stop
    check once; a Yes marks the state sufficient and ends the search. With
    no unvisited entities the round does nothing and no model call is made.
    """
    state.add_anchors(anchors)
    triple_keys = {(t.head_id, t.relation, t.tail_id) for t in state.found_triples}
    attr_keys = {(h.entity_id, h.key) for h in state.relevant_attributes}
    for _ in range(config.search_depth):
        frontier = [eid for eid, meta in state.seen_entities.items() if not meta.visited]
        if not frontier:
            break
        for entity_id in frontier:
            meta = state.seen_entities[entity_id]
            meta.visited = True
            counters.record_kg_op("node_fetch")
            node = graph.nodes[entity_id]
            head_name = node.features.get(kg.NAME_FEATURE, entity_id)
            if config.select_attributes and node.features:
                for hit in search_attributes(question, entity_id, backend, counters, graph):
                    if (hit.entity_id, hit.key) not in attr_keys:
                        state.relevant_attributes.append(hit)
                        attr_keys.add((hit.entity_id, hit.key))
            relations = [rel for rel, tails in node.out_edges.items() if tails]
            if not relations:
                continue
            selected_relations = prune_relations(
                question, entity_id, relations, graph, backend, counters, config
            )
            for relation in selected_relations:
                counters.record_kg_op("neighbor_check")
                tails = node.out_edges[relation]
                selected_tails = prune_entities(
                    question, entity_id, relation, tails, graph, backend, counters, config
                )
                for tail_id in selected_tails:
                    key = (entity_id, relation, tail_id)
                    if key not in triple_keys:
                        tail_node = graph.nodes[tail_id]
                        state.found_triples.append(
                            kg.Triple(
                                head_name=head_name,
                                relation=relation,
                                tail_name=tail_node.features.get(kg.NAME_FEATURE, tail_id),
                                head_id=entity_id,
                                tail_id=tail_id,
                            )
                        )
                        triple_keys.add(key)
                    if tail_id not in state.seen_entities:
                        state.seen_entities[tail_id] = SeenEntity(
                            visited=False,
                            depth_discovered=meta.depth_discovered + 1,
                        )
        state.sufficient = end_check(question, state, backend, counters, thoughts=thoughts)
        if state.sufficient:
            break
    return state
