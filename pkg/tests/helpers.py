"""Shared fixtures, replay-script builders, and independent oracles.

The oracles here are deliberately written from scratch against the
definitions (full-matrix LCS, breadth-first closure) rather than calling
into the package, so they can catch implementation drift.
"""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path

from graphreason.evaluation import Question
from graphreason.kg import GraphStats, KnowledgeGraph, NodeRecord
from graphreason.llm import ReplayBackend, ReplayEntry

# One phrase per template, lifted from each template's instruction text.
# Every rendered prompt contains exactly its own template's phrase, so a
# non-strict script keyed on these serves each call site unambiguously.
TEMPLATE_MATCHERS = {
    "agent_step": "Generate the next step",
    "search_thought": "next thought to answer the provided question",
    "search_end": "sufficient for you to answer",
    "entity_extraction": "extract the relevant entities",
    "prune_relations": "select only the relevant relations",
    "prune_entities": "Select the tail entity or entities",
    "search_attributes": "Is any of the attributes relevant",
    "selection_vote": "The best choice is",
    "score_vote": "Generate a score",
    "got_merge": "merged chain of thoughts",
    "judge_correctness": "convey the same information",
    "judge_error_class": "Decide which failure mode applies",
}


def krt39_graph() -> KnowledgeGraph:
    records = [
        NodeRecord(
            id="390792",
            node_type="gene",
            features={"name": "KRT39"},
            out_edges={"Anatomy-expresses-Gene": ["UBERON:0000033", "UBERON:0002097"]},
        ),
        NodeRecord(
            id="UBERON:0000033", node_type="anatomy", features={"name": "head"}, out_edges={}
        ),
        NodeRecord(
            id="UBERON:0002097",
            node_type="anatomy",
            features={"name": "skin of body"},
            out_edges={},
        ),
    ]
    return KnowledgeGraph(
        nodes={r.id: r for r in records},
        stats=GraphStats(
            node_count=3, edge_count=2, relation_types=frozenset({"Anatomy-expresses-Gene"})
        ),
    )


def krt39_question(qid: str = "g1") -> Question:
    return Question(
        qid=qid,
        text="What anatomy can be expressed by gene KRT39?",
        gold_answer="head, skin of body",
        difficulty="easy",
        domain="biomedical",
    )


def golden_agent_entries() -> list[ReplayEntry]:
    """The four agent-step replies of the gene/anatomy worked example."""
    return [
        ReplayEntry(
            "Generate the next step",
            "Thought 1: The question is related to a gene node (KRT39). "
            "We need to find this node in the graph.\nAction 1: RetrieveNode[KRT39]",
        ),
        ReplayEntry(
            "The ID of the node is 390792.",
            "Thought 2: We need to check the 'Anatomy-expresses-Gene' neighbors of this "
            "gene node.\nAction 2: NeighbourCheck[390792, Anatomy-expresses-Gene]",
        ),
        ReplayEntry(
            "The neighbors are ['UBERON:0000033', 'UBERON:0002097'].",
            "Thought 3: Retrieve names of the anatomy nodes.\n"
            "Action 3: NodeFeature[UBERON:0000033, name], NodeFeature[UBERON:0002097, name]",
        ),
        ReplayEntry(
            "skin of body",
            "Thought 4: These are the anatomy terms expressed by the gene.\n"
            "Action 4: Finish[head, skin of body]",
        ),
    ]


def golden_explore_entries() -> list[ReplayEntry]:
    """The exploration-driver replies of the gene/anatomy worked example."""
    return [
        ReplayEntry(
            TEMPLATE_MATCHERS["search_thought"],
            "KRT39 is a gene that is known to be expressed in two anatomical regions.",
        ),
        ReplayEntry(TEMPLATE_MATCHERS["entity_extraction"], "{{KRT39}}"),
        ReplayEntry(TEMPLATE_MATCHERS["prune_relations"], "{{Anatomy-expresses-Gene}}"),
        ReplayEntry(TEMPLATE_MATCHERS["prune_entities"], "{{head, skin of body}}"),
        ReplayEntry(
            TEMPLATE_MATCHERS["search_end"], "[Yes] The triples name both anatomy terms."
        ),
        ReplayEntry(
            TEMPLATE_MATCHERS["search_thought"],
            "The triples give both anatomy terms. Action: Finish[head, skin of body]",
        ),
    ]


def permissive_entries(
    *,
    agent_finish: bool = False,
    explore_finish: bool = False,
    extraction: str = "{{alpha 0}}",
) -> list[ReplayEntry]:
    """A stateless script that keeps any strategy/interaction combo running.

    Agent steps either probe a degree or immediately finish; exploration
    pruning falls back to its first-N prefixes via a deliberately
    bracket-free reply. Evaluator and merge calls always parse. With
    ``explore_finish`` the stop check says yes and the thought carries a
    Finish span for answer extraction.
    """
    if agent_finish:
        agent_reply = "Thought: The answer is clear.\nAction 1: Finish[alpha 2]"
    else:
        agent_reply = "Thought: Poke the graph again.\nAction 1: NodeDegree[n0000, linked-to]"
    if explore_finish:
        explore_end = "[Yes] The evidence suffices."
        thought_reply = "Consider the entries near the anchor. Finish[alpha 2]"
    else:
        explore_end = "[No] Keep exploring."
        thought_reply = "Consider the entries near the anchor."
    return [
        ReplayEntry(TEMPLATE_MATCHERS["agent_step"], agent_reply),
        ReplayEntry(TEMPLATE_MATCHERS["search_thought"], thought_reply),
        ReplayEntry(TEMPLATE_MATCHERS["entity_extraction"], extraction),
        ReplayEntry(TEMPLATE_MATCHERS["prune_relations"], "keep everything please"),
        ReplayEntry(TEMPLATE_MATCHERS["prune_entities"], "keep everything please"),
        ReplayEntry(TEMPLATE_MATCHERS["search_end"], explore_end),
        ReplayEntry(TEMPLATE_MATCHERS["selection_vote"], "The best choice is {{1, 2, 3}}"),
        ReplayEntry(TEMPLATE_MATCHERS["score_vote"], "Score: 0.5"),
        ReplayEntry(TEMPLATE_MATCHERS["got_merge"], "Merging the two candidate chains."),
        ReplayEntry(TEMPLATE_MATCHERS["judge_correctness"], "[Yes] Matches."),
        ReplayEntry(TEMPLATE_MATCHERS["judge_error_class"], "[wrong_step] Off track."),
    ]


def permissive_backend(**kwargs) -> ReplayBackend:
    return ReplayBackend(permissive_entries(**kwargs))


def synthetic_question(qid: str = "q1") -> Question:
    return Question(
        qid=qid,
        text="Which entries are linked to beta 1?",
        gold_answer="alpha 2",
        difficulty="easy",
        domain="synthetic",
    )


def write_replay_script(path: Path, entries: list[ReplayEntry]) -> Path:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in entries:
            handle.write(json.dumps({"match": entry.match, "response": entry.response}) + "\n")
    return path


def write_question_file(path: Path, questions: list[Question]) -> Path:
    with open(path, "w", encoding="utf-8") as handle:
        for q in questions:
            handle.write(
                json.dumps(
                    {
                        "qid": q.qid,
                        "question": q.text,
                        "answer": q.gold_answer,
                        "difficulty": q.difficulty,
                        "domain": q.domain,
                    }
                )
                + "\n"
            )
    return path


def lcs_f1_oracle(candidate_tokens: list[str], reference_tokens: list[str]) -> float:
    """Independent full-matrix LCS F1 over pre-tokenized inputs."""
    n, m = len(candidate_tokens), len(reference_tokens)
    if n == 0 or m == 0:
        return 0.0
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if candidate_tokens[i - 1] == reference_tokens[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = table[i - 1][j] if table[i - 1][j] >= table[i][j - 1] else table[i][j - 1]
    lcs = table[n][m]
    if lcs == 0:
        return 0.0
    precision = lcs / n
    recall = lcs / m
    return 2 * precision * recall / (precision + recall)


def closure_oracle(
    graph: KnowledgeGraph, anchors: list[str], depth: int
) -> tuple[set[tuple[str, str, str]], set[str]]:
    """Breadth-first d-hop closure: edges whose head lies within depth-1 of
    an anchor, and every entity within depth hops."""
    dist: dict[str, int] = {}
    queue: deque[str] = deque()
    for anchor in anchors:
        if anchor not in dist:
            dist[anchor] = 0
            queue.append(anchor)
    triples: set[tuple[str, str, str]] = set()
    while queue:
        node_id = queue.popleft()
        if dist[node_id] >= depth:
            continue
        record = graph.nodes[node_id]
        for relation, tails in record.out_edges.items():
            for tail in tails:
                triples.add((node_id, relation, tail))
                if tail not in dist:
                    dist[tail] = dist[node_id] + 1
                    queue.append(tail)
    entities = {node_id for node_id, d in dist.items() if d <= depth}
    return triples, entities
