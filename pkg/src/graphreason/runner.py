"""Experiment orchestration: full runs, sweeps, re-scoring, artifact layout.

A run takes a graph, a question file, and a backend, executes the search
per question, evaluates answers, and writes a fixed artifact layout under
the output directory:

    out/traces/<qid>.trace   one JSON trace per question
    out/results.lines        one JSON result row per question, run order
    out/report.table         human-readable table plus aggregates

Under the replay backend the whole pipeline is deterministic: running the
same configuration twice produces byte-identical artifacts, and ``score``
rebuilds the two tables exactly from the traces alone.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import kg
from .costs import CostCounters
from .evaluation import (
    AggregateReport,
    EvalResult,
    Question,
    aggregate,
    classify_error,
    judge_correct,
    load_questions,
    rouge_l,
)
from .llm import Backend, ReplayBackend, WireBackend
from .strategies import SearchConfig, run_search
from .traces import (
    REPORT_SCHEMA,
    RESULTS_SCHEMA,
    SWEEP_SCHEMA,
    TraceRecord,
    build_trace,
    load_trace,
    write_trace,
)

logger = logging.getLogger(__name__)

VALID_BACKENDS = frozenset({"replay", "wire"})
VALID_JUDGES = frozenset({"none", "llm"})
SWEEP_AXES = frozenset({"steps", "depth", "width", "evaluator"})


class ConfigError(ValueError):
    """The run configuration cannot work; nothing has been written."""


@dataclass(frozen=True)
class RunConfig:
    kg_path: str
    questions_path: str
    out_dir: str
    strategy: str = "cot"
    interaction: str = "agent"
    evaluator: str = "select"
    steps: int = 10
    branching: int = 3
    retain: int = 3
    max_depth: int = 3
    search_depth: int = 3
    backend: str = "replay"
    endpoint: str | None = None
    model: str | None = None
    replay_path: str | None = None
    judge: str = "none"
    seed: int = 0
    concurrency: int = 1
    max_actions_per_step: int = 4
    score_votes: int = 1
    strict_replay: bool = False

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            strategy=self.strategy,
            interaction=self.interaction,
            evaluator=self.evaluator,
            k=self.branching,
            t=self.retain,
            d_max=self.max_depth,
            n=self.steps,
            search_depth=self.search_depth,
            max_actions_per_step=self.max_actions_per_step,
            score_votes=self.score_votes,
        )

    def echo(self) -> dict:
        """The configuration block echoed into every artifact."""
        return {
            "strategy": self.strategy,
            "interaction": self.interaction,
            "evaluator": self.evaluator,
            "k": self.branching,
            "t": self.retain,
            "d_max": self.max_depth,
            "n": self.steps,
            "search_depth": self.search_depth,
            "backend": self.backend,
            "model": self.model if self.backend == "wire" else None,
            "judge": self.judge,
            "seed": self.seed,
        }


def preflight(config: RunConfig) -> None:
    """Validate a configuration without touching the output directory."""
    if not Path(config.kg_path).is_file():
        raise ConfigError(f"knowledge graph file not found: {config.kg_path}")
    if not Path(config.questions_path).is_file():
        raise ConfigError(f"question file not found: {config.questions_path}")
    if config.backend not in VALID_BACKENDS:
        raise ConfigError(f"backend {config.backend!r} not in {sorted(VALID_BACKENDS)}")
    if config.judge not in VALID_JUDGES:
        raise ConfigError(f"judge {config.judge!r} not in {sorted(VALID_JUDGES)}")
    if config.backend == "replay":
        if not config.replay_path:
            raise ConfigError("replay backend requires a replay script path")
        if not Path(config.replay_path).is_file():
            raise ConfigError(f"replay script not found: {config.replay_path}")
    else:
        if not config.endpoint or not config.model:
            raise ConfigError("wire backend requires both an endpoint and a model")
    if config.concurrency < 1:
        raise ConfigError(f"concurrency must be >= 1, got {config.concurrency}")
    try:
        config.search_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_backend(config: RunConfig) -> Backend:
    if config.backend == "replay":
        assert config.replay_path is not None
        return ReplayBackend.from_file(config.replay_path, strict=config.strict_replay)
    assert config.endpoint is not None and config.model is not None
    return WireBackend(endpoint=config.endpoint, model=config.model)


def _run_single(
    question: Question,
    config: RunConfig,
    graph: kg.KnowledgeGraph,
    backend: Backend,
) -> tuple[TraceRecord, EvalResult]:
    counters = CostCounters()
    started = time.perf_counter()
    result = run_search(question, config.search_config(), graph, backend, counters)
    counters.add_wall_time(time.perf_counter() - started)

    rouge = rouge_l(result.answer, question.gold_answer) if result.answer is not None else None
    judged: bool | None = None
    if config.judge == "llm" and result.answer is not None:
        judged = judge_correct(question, result.answer, backend, counters)
    trace = build_trace(
        question,
        config.echo(),
        result,
        {"rouge_l": rouge, "judge_correct": judged, "error_class": None},
    )
    error = classify_error(
        trace, question, backend if config.judge == "llm" else None, counters
    )
    trace.eval["error_class"] = error
    trace.counters = counters.as_dict()  # judge calls landed after the first snapshot
    if config.backend == "wire":
        trace.timestamps = {
            "started": round(started, 3),
            "finished": round(time.perf_counter(), 3),
        }
    return trace, EvalResult(
        qid=question.qid,
        answer=result.answer,
        rouge_l=rouge,
        judge_correct=judged,
        error_class=error,
    )


def _totals(counters: dict) -> tuple[int, int]:
    llm = sum(counters.get("llm_calls_by_tag", {}).values())
    ops = sum(counters.get("kg_ops_by_kind", {}).values())
    return llm, ops


def _results_row(trace: TraceRecord, result: EvalResult) -> dict:
    llm, ops = _totals(trace.counters)
    return {
        "schema": RESULTS_SCHEMA,
        "qid": result.qid,
        "answer": result.answer,
        "termination": trace.termination,
        "rouge_l": result.rouge_l,
        "judge_correct": result.judge_correct,
        "error_class": result.error_class,
        "llm_calls": llm,
        "kg_ops": ops,
    }


def _fmt(value, pattern: str = "{:.4f}") -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return pattern.format(value)
    return str(value)


def _format_report(
    questions: list[Question],
    traces: list[TraceRecord],
    results: list[EvalResult],
    config_echo: dict,
    report: AggregateReport,
) -> str:
    lines = [f"# schema: {REPORT_SCHEMA}"]
    echo = " ".join(f"{key}={config_echo[key]}" for key in sorted(config_echo))
    lines.append(f"# config: {echo}")
    lines.append("qid\tanswer\trouge_l\tjudge\terror_class\tllm_calls\tkg_ops")
    for trace, result in zip(traces, results):
        llm, ops = _totals(trace.counters)
        lines.append(
            "\t".join(
                [
                    result.qid,
                    result.answer if result.answer is not None else "-",
                    _fmt(result.rouge_l),
                    _fmt(result.judge_correct),
                    result.error_class if result.error_class is not None else "-",
                    str(llm),
                    str(ops),
                ]
            )
        )

    def stats_line(label: str, stats) -> str:
        return (
            f"# {label}: count={stats.count} rouge_mean={_fmt(stats.rouge_mean)} "
            f"judge_rate={_fmt(stats.judge_rate, '{:.1f}')} "
            f"judge_evaluated={stats.judge_evaluated} judge_absent={stats.judge_absent}"
        )

    lines.append(stats_line("overall", report.overall))
    for domain in sorted(report.by_domain):
        lines.append(stats_line(f"domain {domain}", report.by_domain[domain]))
    for difficulty in sorted(report.by_difficulty):
        lines.append(stats_line(f"difficulty {difficulty}", report.by_difficulty[difficulty]))
    if report.error_counts:
        shares = " ".join(
            f"{cls}={report.error_counts[cls]}({report.error_shares[cls]:.1f}%)"
            for cls in sorted(report.error_counts)
        )
        lines.append(f"# errors: {shares}")
    lines.append(
        f"# costs: mean_llm_calls={report.mean_llm_calls:.2f} "
        f"mean_kg_ops={report.mean_kg_ops:.2f}"
    )
    return "\n".join(lines) + "\n"


def _write_tables(
    out_dir: Path,
    questions: list[Question],
    traces: list[TraceRecord],
    results: list[EvalResult],
    config_echo: dict,
) -> AggregateReport:
    report = aggregate(questions, results, [t.counters for t in traces])
    rows = [_results_row(trace, result) for trace, result in zip(traces, results)]
    results_text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    (out_dir / "results.lines").write_text(results_text, encoding="utf-8")
    (out_dir / "report.table").write_text(
        _format_report(questions, traces, results, config_echo, report), encoding="utf-8"
    )
    return report


def run_experiment(config: RunConfig) -> AggregateReport:
    """Run every question and write the artifact tree; returns the aggregate."""
    preflight(config)
    graph = kg.load_graph(config.kg_path)
    questions = load_questions(config.questions_path)
    backend = build_backend(config)

    out_dir = Path(config.out_dir)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)

    if config.concurrency == 1:
        outcomes = [_run_single(q, config, graph, backend) for q in questions]
    else:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            outcomes = list(
                pool.map(lambda q: _run_single(q, config, graph, backend), questions)
            )

    traces = [t for t, _ in outcomes]
    results = [r for _, r in outcomes]
    for trace in traces:
        write_trace(trace, traces_dir / f"{trace.qid}.trace")
    report = _write_tables(out_dir, questions, traces, results, config.echo())
    logger.info("wrote %d traces to %s", len(traces), out_dir)
    return report


def score_run(traces_dir: str | Path, questions_path: str | Path, out_dir: str | Path) -> AggregateReport:
    """Rebuild results.lines and report.table from stored traces alone.

    Deterministic scores are recomputed; judge verdicts and error classes
    are echoed from the traces (re-judging would need a backend).
    """
    questions = load_questions(questions_path)
    traces_dir = Path(traces_dir)
    traces: list[TraceRecord] = []
    results: list[EvalResult] = []
    for question in questions:
        path = traces_dir / f"{question.qid}.trace"
        if not path.is_file():
            raise ConfigError(f"no trace for question {question.qid!r} at {path}")
        trace = load_trace(path)
        rouge = rouge_l(trace.answer, question.gold_answer) if trace.answer is not None else None
        traces.append(trace)
        results.append(
            EvalResult(
                qid=question.qid,
                answer=trace.answer,
                rouge_l=rouge,
                judge_correct=trace.eval.get("judge_correct"),
                error_class=trace.eval.get("error_class"),
            )
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_echo = traces[0].config if traces else {}
    return _write_tables(out, questions, traces, results, config_echo)


def _sweep_override(config: RunConfig, axis: str, value: str) -> RunConfig:
    if axis == "steps":
        return dataclasses.replace(config, steps=int(value))
    if axis == "depth":
        return dataclasses.replace(config, search_depth=int(value))
    if axis == "width":
        width = int(value)
        return dataclasses.replace(config, branching=width, retain=width)
    if axis == "evaluator":
        return dataclasses.replace(config, evaluator=value)
    raise ConfigError(f"sweep axis {axis!r} not in {sorted(SWEEP_AXES)}")


def run_sweep(base: RunConfig, axis: str, values: list[str]) -> None:
    """Run one experiment per axis value under out_dir/<axis>_<value>.

    Writes a long-format summary table at out_dir/sweep.table.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis {axis!r} not in {sorted(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = []
    for value in values:
        try:
            sub = _sweep_override(base, axis, value)
        except ValueError as exc:
            raise ConfigError(f"bad sweep value {value!r} for axis {axis}: {exc}") from exc
        sub = dataclasses.replace(sub, out_dir=str(Path(base.out_dir) / f"{axis}_{value}"))
        preflight(sub)
        configs.append((value, sub))

    rows: list[tuple[str, str, str, str]] = []
    for value, sub in configs:
        report = run_experiment(sub)
        rows.extend(
            [
                (axis, value, "rouge_mean", _fmt(report.overall.rouge_mean)),
                (axis, value, "judge_rate", _fmt(report.overall.judge_rate, "{:.1f}")),
                (axis, value, "mean_llm_calls", f"{report.mean_llm_calls:.2f}"),
                (axis, value, "mean_kg_ops", f"{report.mean_kg_ops:.2f}"),
            ]
        )
    lines = [f"# schema: {SWEEP_SCHEMA}", "axis\tvalue\tmetric\tresult"]
    lines.extend("\t".join(row) for row in rows)
    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.table").write_text("\n".join(lines) + "\n", encoding="utf-8")
