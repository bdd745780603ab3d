"""Run artifacts: trace records, their serialization, and validation.

A trace is the full account of one question's run — every thought state
with its evidence, the final frontier, the answer, the cost meters, and
the evaluation block — written as canonical JSON (sorted keys) so replay
runs are byte-identical. The validator re-checks the structural invariants
on the raw dict, so hand-edited or truncated artifacts are caught.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import Scratchpad
from .evaluation import ERROR_CLASSES, ERROR_CORRECT, ERROR_REACHED_LIMIT, Question
from .strategies import (
    STATUS_ACTIVE,
    STATUS_FINISHED,
    TERMINATION_FINISHED,
    TERMINATION_STEP_LIMIT,
    SearchResult,
    ThoughtState,
    VALID_STATUSES,
)

TRACE_SCHEMA = "trace/v1"
RESULTS_SCHEMA = "results/v1"
REPORT_SCHEMA = "report/v1"
SWEEP_SCHEMA = "sweep/v1"


def _serialize_scratchpad(pad: Scratchpad | None) -> list[dict] | None:
    if pad is None:
        return None
    return [
        {
            "index": step.index,
            "thought": step.thought,
            "raw_action": step.raw_action,
            "actions": [{"kind": a.kind, "args": list(a.args)} for a in step.actions],
            "observations": list(step.observations),
            "malformed": step.malformed,
        }
        for step in pad.steps
    ]


def _serialize_state(state: ThoughtState) -> dict:
    evidence = state.evidence
    return {
        "id": state.id,
        "depth": state.depth,
        "thought": state.thought,
        "parents": list(state.parents),
        "status": state.status,
        "score": state.score,
        "evidence": {
            "triples": [
                {
                    "head_id": t.head_id,
                    "head_name": t.head_name,
                    "relation": t.relation,
                    "tail_id": t.tail_id,
                    "tail_name": t.tail_name,
                }
                for t in evidence.triples
            ],
            "attributes": [
                {
                    "entity_id": h.entity_id,
                    "entity_name": h.entity_name,
                    "key": h.key,
                    "value": h.value,
                }
                for h in evidence.attributes
            ],
            "thought_log": list(evidence.thought_log),
            "answer": evidence.answer,
            "scratchpad": _serialize_scratchpad(evidence.scratchpad),
            "exploration": evidence.exploration.as_dict() if evidence.exploration else None,
        },
    }


@dataclass
class TraceRecord:
    """One run's artifact, held in its serialized (dict) shape."""

    qid: str
    question: dict
    config: dict
    states: list[dict]
    frontier: list[int]
    answer: str | None
    termination: str
    counters: dict
    eval: dict = field(default_factory=dict)
    timestamps: dict = field(default_factory=lambda: {"started": None, "finished": None})
    schema: str = TRACE_SCHEMA

    @property
    def judge_correct(self) -> bool | None:
        return self.eval.get("judge_correct")

    def evidence_strings(self) -> list[str]:
        """All observation and triple strings, deduplicated in order."""
        strings: list[str] = []
        seen: set[str] = set()

        def push(text: str) -> None:
            if text and text not in seen:
                seen.add(text)
                strings.append(text)

        for state in self.states:
            evidence = state.get("evidence", {})
            pad = evidence.get("scratchpad") or []
            for step in pad:
                for obs in step.get("observations", []):
                    push(obs)
            for triple in evidence.get("triples", []):
                push(
                    f"\"{triple['head_name']}\" --> {triple['relation']} "
                    f"--> {triple['tail_name']}"
                )
            for hit in evidence.get("attributes", []):
                push(f"{hit['entity_name']}.{hit['key']}: {hit['value']}")
        return strings

    def as_dict(self) -> dict:
        return {
            "schema": self.schema,
            "qid": self.qid,
            "question": self.question,
            "config": self.config,
            "states": self.states,
            "frontier": self.frontier,
            "answer": self.answer,
            "termination": self.termination,
            "counters": self.counters,
            "eval": self.eval,
            "timestamps": self.timestamps,
        }


def build_trace(
    question: Question,
    config: dict,
    result: SearchResult,
    eval_block: dict | None = None,
) -> TraceRecord:
    states = [
        _serialize_state(result.graph.states[sid]) for sid in sorted(result.graph.states)
    ]
    return TraceRecord(
        qid=question.qid,
        question={
            "text": question.text,
            "gold_answer": question.gold_answer,
            "difficulty": question.difficulty,
            "domain": question.domain,
        },
        config=dict(config),
        states=states,
        frontier=list(result.graph.frontier),
        answer=result.answer,
        termination=result.termination,
        counters=result.counters.as_dict(),
        eval=dict(eval_block) if eval_block else {},
    )


def serialize_trace(trace: TraceRecord) -> str:
    return json.dumps(trace.as_dict(), sort_keys=True, indent=2) + "\n"


def write_trace(trace: TraceRecord, path: str | Path) -> None:
    Path(path).write_text(serialize_trace(trace), encoding="utf-8")


def load_trace(path: str | Path) -> TraceRecord:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return trace_from_dict(data)


def trace_from_dict(data: dict) -> TraceRecord:
    return TraceRecord(
        qid=data["qid"],
        question=data["question"],
        config=data["config"],
        states=data["states"],
        frontier=data["frontier"],
        answer=data["answer"],
        termination=data["termination"],
        counters=data["counters"],
        eval=data.get("eval", {}),
        timestamps=data.get("timestamps", {"started": None, "finished": None}),
        schema=data.get("schema", ""),
    )


def validate_trace(data: dict) -> list[str]:
    """Check a raw trace dict against the structural invariants.

    Returns human-readable violation strings; an empty list means the trace
    is well-formed.
    """
    violations: list[str] = []

    def bad(message: str) -> None:
        violations.append(message)

    if data.get("schema") != TRACE_SCHEMA:
        bad(f"schema is {data.get('schema')!r}, expected {TRACE_SCHEMA!r}")
    states = data.get("states")
    if not isinstance(states, list) or not states:
        bad("states must be a nonempty list")
        return violations

    strategy = data.get("config", {}).get("strategy")
    by_id: dict[int, dict] = {}
    previous_id = -1
    for state in states:
        sid = state.get("id")
        if not isinstance(sid, int) or sid <= previous_id:
            bad(f"state ids must be strictly increasing, got {sid!r} after {previous_id}")
            return violations
        previous_id = sid
        by_id[sid] = state

    root = states[0]
    if root.get("id") != 0 or root.get("depth") != 0 or root.get("parents"):
        bad("first state must be the root: id 0, depth 0, no parents")

    max_parents = 2 if strategy == "got" else 1
    for state in states[1:]:
        sid = state["id"]
        parents = state.get("parents", [])
        status = state.get("status")
        if status not in VALID_STATUSES:
            bad(f"state {sid}: unknown status {status!r}")
        if not parents:
            bad(f"state {sid}: non-root state has no parents")
            continue
        if len(parents) > max_parents:
            bad(f"state {sid}: {len(parents)} parents exceeds {max_parents} for {strategy}")
        if len(set(parents)) != len(parents):
            bad(f"state {sid}: duplicate parents {parents}")
        for pid in parents:
            if pid not in by_id:
                bad(f"state {sid}: unknown parent {pid}")
            elif pid >= sid:
                bad(f"state {sid}: parent {pid} does not precede it (cycle)")
        known = [by_id[p] for p in parents if p in by_id]
        if len(parents) == 1 and known:
            if state.get("depth") != known[0].get("depth", -2) + 1:
                bad(f"state {sid}: depth {state.get('depth')} is not parent depth + 1")
        elif len(parents) == 2 and len(known) == 2:
            depths = {k.get("depth") for k in known}
            if len(depths) != 1 or state.get("depth") not in depths:
                bad(f"state {sid}: merged state must share its parents' depth")
        triples = state.get("evidence", {}).get("triples", [])
        keys = [(t.get("head_id"), t.get("relation"), t.get("tail_id")) for t in triples]
        if len(keys) != len(set(keys)):
            bad(f"state {sid}: duplicate triples in evidence")
        pad = state.get("evidence", {}).get("scratchpad")
        if pad:
            indices = [step.get("index") for step in pad]
            if indices != list(range(1, len(pad) + 1)):
                bad(f"state {sid}: scratchpad indices {indices} are not contiguous from 1")

    frontier = data.get("frontier", [])
    frontier_depths = set()
    for sid in frontier:
        state = by_id.get(sid)
        if state is None:
            bad(f"frontier references unknown state {sid}")
            continue
        if state.get("status") not in (STATUS_ACTIVE, STATUS_FINISHED):
            bad(f"frontier state {sid} has status {state.get('status')!r}")
        frontier_depths.add(state.get("depth"))
    if len(frontier_depths) > 1:
        bad(f"frontier spans multiple depths {sorted(frontier_depths)}")
    if list(frontier) != sorted(frontier):
        bad("frontier ids are not in ascending order")

    answer = data.get("answer")
    termination = data.get("termination")
    if termination not in (TERMINATION_FINISHED, TERMINATION_STEP_LIMIT):
        bad(f"unknown termination {termination!r}")
    if (answer is not None) != (termination == TERMINATION_FINISHED):
        bad("answer must be present exactly when termination is 'finished'")

    eval_block = data.get("eval", {})
    rouge = eval_block.get("rouge_l")
    if (rouge is not None) != (answer is not None):
        bad("eval.rouge_l must be present exactly when an answer is")
    error_class = eval_block.get("error_class")
    if error_class is not None:
        if error_class not in ERROR_CLASSES:
            bad(f"unknown error class {error_class!r}")
        if error_class == ERROR_CORRECT and eval_block.get("judge_correct") is not True:
            bad("error class 'correct' requires a true judge verdict")
        if termination == TERMINATION_STEP_LIMIT and error_class != ERROR_REACHED_LIMIT:
            bad("step-limit runs must classify as 'reached_limit'")

    counters = data.get("counters", {})
    for group in ("llm_calls_by_tag", "kg_ops_by_kind"):
        for key, value in counters.get(group, {}).items():
            if not isinstance(value, int) or value < 0:
                bad(f"counters.{group}[{key!r}] must be a nonnegative integer")

    return violations


__all__ = [
    "TRACE_SCHEMA",
    "RESULTS_SCHEMA",
    "REPORT_SCHEMA",
    "SWEEP_SCHEMA",
    "TraceRecord",
    "build_trace",
    "serialize_trace",
    "write_trace",
    "load_trace",
    "trace_from_dict",
    "validate_trace",
]
