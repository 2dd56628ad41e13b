"""
Retrieval quality metrics (LLM-judged) and the full-vs-basic sentiment comparison.

Judges answer with a single YES or NO per item. Generated questions and
claims come back one per line.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import LengthMismatch, NoClaims, OutOfRange, PreconditionError, UnparseableJudgment
from .prompts import DEFAULT_LIBRARY, PromptLibrary
from .retrieval import METHODS, RetrievalRequest, Retriever, parse_lines

RELEVANCY_QUESTIONS = 3
TOP_N_GRID = (3, 5, 7)
# row order of the published grid within each top-n block
METHOD_ORDER = ("hyde", "optimized", "simple")
METHOD_LABELS = {"hyde": "HyDE", "optimized": "Optimized", "simple": "Simple"}


@dataclass
class RetrievalEvalCase:
    question: str
    ground_truth_statements: list[str]
    retrieved_chunks: list[str] = field(default_factory=list)
    generated_answer: str = ""
    as_of_date: dt.date | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalEvalCase":
        day = d.get("as_of_date")
        return cls(
            d["question"],
            list(d.get("ground_truth_statements", [])),
            list(d.get("retrieved_chunks", [])),
            d.get("generated_answer", ""),
            dt.date.fromisoformat(day) if day else None,
        )


def load_cases(path: str | Path) -> list[RetrievalEvalCase]:
    return [RetrievalEvalCase.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


@dataclass(frozen=True)
class RetrievalEvalResult:
    recall: float
    precision: float
    relevancy: float
    faithfulness: float

    def __post_init__(self):
        for name in ("recall", "precision", "relevancy", "faithfulness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(f"{name}={v} outside [0, 1]")

    @property
    def overall(self) -> float:
        return (self.recall + self.precision + self.relevancy + self.faithfulness) / 4.0

    def as_row(self) -> list[float]:
        return [self.recall, self.precision, self.relevancy, self.faithfulness, self.overall]


def parse_verdict(reply: str) -> bool:
    word = re.sub(r"[^A-Za-z]", "", reply).upper()
    if word == "YES":
        return True
    if word == "NO":
        return False
    raise UnparseableJudgment(f"expected YES or NO, got {reply!r}")


def _judge(gateway, prompts: PromptLibrary, template: str, tag: str, **values) -> bool:
    system, user = prompts.render(template, **values)
    return parse_verdict(gateway.chat(user, system=system, tag=tag, max_output_tokens=8))


def rank_weighted_precision(labels: Sequence[bool]) -> float:
    """Mean of precision@k over the positions k that hold a relevant item."""
    hits, total = 0, 0.0
    for k, rel in enumerate(labels, 1):
        if rel:
            hits += 1
            total += hits / k
    return total / hits if hits else 0.0


def context_precision(case: RetrievalEvalCase, judge, prompts: PromptLibrary = DEFAULT_LIBRARY) -> float:
    if not case.retrieved_chunks:
        raise PreconditionError("context precision needs retrieved chunks")
    labels = [
        _judge(judge, prompts, "judge_context_relevance", "judge-precision", question=case.question, passage=c)
        for c in case.retrieved_chunks
    ]
    return rank_weighted_precision(labels)


def _context(chunks: Sequence[str]) -> str:
    return "\n\n".join(f"[{i}] {c}" for i, c in enumerate(chunks, 1))


def context_recall(case: RetrievalEvalCase, judge, prompts: PromptLibrary = DEFAULT_LIBRARY) -> float:
    if not case.ground_truth_statements:
        raise PreconditionError("context recall needs ground-truth statements")
    if not case.retrieved_chunks:
        return 0.0
    ctx = _context(case.retrieved_chunks)
    hits = sum(
        _judge(judge, prompts, "judge_attribution", "judge-recall", context=ctx, statement=s)
        for s in case.ground_truth_statements
    )
    return hits / len(case.ground_truth_statements)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=-1, keepdims=True)
    return np.divide(m, n, out=np.zeros_like(m), where=n > 0)


def answer_relevancy(case: RetrievalEvalCase, gateway, m: int = RELEVANCY_QUESTIONS, prompts: PromptLibrary = DEFAULT_LIBRARY) -> float:
    """Mean clamped cosine between the question and m questions generated from the answer."""
    if not case.generated_answer.strip():
        raise PreconditionError("answer relevancy needs a non-empty answer")
    system, user = prompts.render("answer_questions", m=m, answer=case.generated_answer)
    questions = parse_lines(gateway.chat(user, system=system, tag="relevancy-questions"))[:m]
    if not questions:
        return 0.0
    vecs = _unit_rows(np.asarray(gateway.embed([case.question] + questions), dtype=np.float64))
    sims = np.clip(vecs[1:] @ vecs[0], 0.0, 1.0)
    return float(np.mean(sims))


def faithfulness(case: RetrievalEvalCase, judge, prompts: PromptLibrary = DEFAULT_LIBRARY) -> float:
    if not case.generated_answer.strip():
        raise PreconditionError("faithfulness needs a non-empty answer")
    system, user = prompts.render("claims", question=case.question, answer=case.generated_answer)
    claims = parse_lines(judge.chat(user, system=system, tag="claims"))
    if not claims:
        raise NoClaims("the answer decomposed into zero claims")
    ctx = _context(case.retrieved_chunks)
    supported = sum(_judge(judge, prompts, "judge_claim", "judge-claim", context=ctx, claim=c) for c in claims)
    return supported / len(claims)


def evaluate_case(case: RetrievalEvalCase, gateway, judge=None, prompts: PromptLibrary = DEFAULT_LIBRARY) -> RetrievalEvalResult:
    judge = judge or gateway
    return RetrievalEvalResult(
        context_recall(case, judge, prompts),
        context_precision(case, judge, prompts),
        answer_relevancy(case, gateway, prompts=prompts),
        faithfulness(case, judge, prompts),
    )


def mean_result(results: Sequence[RetrievalEvalResult]) -> RetrievalEvalResult:
    if not results:
        raise PreconditionError("no results to average")
    a = np.array([[r.recall, r.precision, r.relevancy, r.faithfulness] for r in results])
    return RetrievalEvalResult(*(float(np.clip(v, 0.0, 1.0)) for v in a.mean(axis=0)))


@dataclass
class EvalGrid:
    cells: dict[tuple[int, str], RetrievalEvalResult]

    def rows(self) -> list[tuple[int, str, RetrievalEvalResult]]:
        keyed = sorted(self.cells, key=lambda k: (k[0], METHOD_ORDER.index(k[1])))
        return [(n, m, self.cells[(n, m)]) for n, m in keyed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Top-n", "Method", "Recall", "Precision", "Relevancy", "Faithfulness", "Overall"])
        for n, m, r in self.rows():
            w.writerow([n, METHOD_LABELS[m]] + [f"{v:.2f}" for v in r.as_row()])
        return buf.getvalue()


def evaluate_methods(
    cases: Sequence[RetrievalEvalCase],
    retriever: Retriever,
    judge=None,
    methods: Iterable[str] = METHODS,
    top_n_grid: Iterable[int] = TOP_N_GRID,
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> EvalGrid:
    """Retrieve, synthesize and score every case for each (top_n, method) cell."""
    if not cases:
        raise PreconditionError("no evaluation cases")
    judge = judge or retriever.gateway
    cells = {}
    for n in top_n_grid:
        for method in methods:
            results = []
            for case in cases:
                if case.as_of_date is None:
                    raise PreconditionError(f"case {case.question!r} has no as_of_date")
                ans = retriever.answer(RetrievalRequest(case.question, case.as_of_date, method, n))
                run = RetrievalEvalCase(
                    case.question,
                    case.ground_truth_statements,
                    [s.chunk.text for s in ans.supporting_chunks],
                    ans.answer_text,
                    case.as_of_date,
                )
                results.append(evaluate_case(run, retriever.gateway, judge, prompts))
            cells[(n, method)] = mean_result(results)
    return EvalGrid(cells)


def format_retrieval_table(grid: EvalGrid) -> str:
    rows = [["Top-n", "Method", "Recall", "Precision", "Relevancy", "Faithfulness", "Overall"]]
    last = None
    for n, m, r in grid.rows():
        rows.append([str(n) if n != last else "", METHOD_LABELS[m]] + [f"{v:.2f}" for v in r.as_row()])
        last = n
    return _table(rows, left=2)


# ---------------------------------------------------------------------------
# sentiment

STAT_NAMES = ("mean", "sd", "min", "p25", "median", "p75", "max")
STAT_LABELS = {
    "mean": "Mean",
    "sd": "Std. Dev.",
    "min": "Minimum",
    "p25": "25th Percentile",
    "median": "Median",
    "p75": "75th Percentile",
    "max": "Maximum",
}


def describe(x: Sequence[float]) -> dict[str, float]:
    """Mean (correctly rounded sum), sample sd and linear-interpolation quantiles."""
    a = np.asarray(x, dtype=np.float64)
    p25, med, p75 = np.percentile(a, [25, 50, 75])
    return {
        "mean": math.fsum(a.tolist()) / len(a),
        "sd": float(a.std(ddof=1)),
        "min": float(a.min()),
        "p25": float(p25),
        "median": float(med),
        "p75": float(p75),
        "max": float(a.max()),
    }


@dataclass(frozen=True)
class SentimentComparison:
    full: dict[str, float]
    basic: dict[str, float]
    difference: dict[str, float]
    n: int

    def to_dict(self) -> dict:
        return {"n": self.n, "full": self.full, "basic": self.basic, "difference": self.difference}


def sentiment_comparison(full_scores: Sequence[float], basic_scores: Sequence[float]) -> SentimentComparison:
    f = np.asarray(full_scores, dtype=np.float64)
    b = np.asarray(basic_scores, dtype=np.float64)
    if f.shape != b.shape or f.ndim != 1:
        raise LengthMismatch(f"paired score vectors differ in shape: {f.shape} vs {b.shape}")
    if len(f) < 2:
        raise PreconditionError("need at least 2 paired scores")
    for a in (f, b):
        if not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0):
            raise OutOfRange("sentiment scores must lie in [-1, 1]")
    return SentimentComparison(describe(f), describe(b), describe(np.abs(f - b)), len(f))


def score_texts(texts: Sequence[str], scorer: Callable[[str], float]) -> np.ndarray:
    """Apply a caller-supplied sentiment scorer; results must lie in [-1, 1]."""
    out = np.array([float(scorer(t)) for t in texts])
    if np.any(~np.isfinite(out)) or np.any(np.abs(out) > 1.0):
        raise OutOfRange("scorer produced a value outside [-1, 1]")
    return out


def load_paired_scores(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``full,basic`` CSV of paired scores."""
    full, basic = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            full.append(float(row["full"]))
            basic.append(float(row["basic"]))
    return np.array(full), np.array(basic)


def format_sentiment_table(cmp: SentimentComparison) -> str:
    rows = [["Statistic", "Sentiment (Full)", "Sentiment (Basic)", "Difference"]]
    for k in STAT_NAMES:
        rows.append([STAT_LABELS[k], f"{cmp.full[k]:.2f}", f"{cmp.basic[k]:.2f}", f"{cmp.difference[k]:.2f}"])
    body = _table(rows)
    return (
        body
        + "\nFull: fundamentals analysis with SEC filings and earnings call transcripts."
        + "\nBasic: fundamentals analysis from quarterly statement figures only.\n"
    )


def _table(rows: list[list[str]], left: int = 1) -> str:
    """Fixed-width table; the first ``left`` columns are left-aligned, the rest right-aligned."""
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i < left else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
