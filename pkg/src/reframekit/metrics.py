"""ROUGE-L scoring and experiment aggregation.

Scores are computed at full float precision; the text table renders
integer cells (half-away-from-zero) to match the usual reporting style.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

CATEGORIES = ("QG", "AG", "CF", "IAG", "MM", "VF")


class MissingBaseline(Exception):
    """A gain was requested against a condition absent from the report."""


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence, O(|a|*|b|) time,
    O(min(|a|,|b|)) space."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def tokenize_for_rouge(text: str) -> list[str]:
    """Lowercase and split on maximal runs of non-alphanumeric characters."""
    tokens: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _score_pair(pred: Sequence[str], ref: Sequence[str]) -> RougeScore:
    lcs = lcs_length(pred, ref)
    p = lcs / len(pred) if pred else 0.0
    r = lcs / len(ref) if ref else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f1)


def rouge_l(prediction: str, references: Sequence[str]) -> RougeScore:
    """Best-per-reference ROUGE-L: the reference maximizing F1 wins,
    earliest reference on ties."""
    if not references:
        raise ValueError("references must be non-empty")
    pred_tokens = tokenize_for_rouge(prediction)
    best: Optional[RougeScore] = None
    for ref in references:
        score = _score_pair(pred_tokens, tokenize_for_rouge(ref))
        if best is None or score.f1 > best.f1:
            best = score
    assert best is not None
    return best


@dataclass
class EvalRecord:
    """One scored prediction."""

    task_id: str
    category: str
    condition: str
    instance_id: str
    prediction: str
    references: list[str]
    score: RougeScore
    prompt_token_count: int = 0
    instruction_token_count: int = 0
    techniques: list[str] = field(default_factory=list)
    error: str = ""


def round_half_away(x: float) -> int:
    """Round half away from zero (42.5 -> 43, -42.5 -> -43)."""
    if x >= 0:
        return math.floor(x + 0.5)
    return math.ceil(x - 0.5)


@dataclass
class Report:
    """Aggregated per-task / per-category comparison between conditions."""

    conditions: list[str]
    # condition -> task_id -> mean F1 * 100 (2 decimals)
    task_scores: dict[str, dict[str, float]]
    # condition -> category -> mean of task scores
    category_scores: dict[str, dict[str, float]]
    # condition -> unweighted mean over category scores
    averages: dict[str, float]
    baseline: Optional[str] = None
    # condition -> task_id -> (instruction token delta vs baseline, gain)
    length_vs_gain: dict[str, dict[str, tuple[int, float]]] = field(default_factory=dict)
    # (technique, category) -> gain vs baseline
    technique_gains: dict[tuple[str, str], float] = field(default_factory=dict)
    footer: str = ""

    @classmethod
    def from_category_scores(
        cls,
        scores: Mapping[str, Mapping[str, float]],
        baseline: Optional[str] = None,
    ) -> "Report":
        """Build a report directly from per-category scores (no task level)."""
        conditions = list(scores)
        category_scores = {cond: dict(cat) for cond, cat in scores.items()}
        averages = {
            cond: sum(cats.values()) / len(cats) for cond, cats in category_scores.items()
        }
        return cls(
            conditions=conditions,
            task_scores={cond: {} for cond in conditions},
            category_scores=category_scores,
            averages=averages,
            baseline=baseline,
        )

    def gains(self, baseline: str, target: str) -> dict[str, float]:
        """Per-category and Avg gains of target over baseline."""
        if baseline not in self.category_scores:
            raise MissingBaseline(baseline)
        if target not in self.category_scores:
            raise MissingBaseline(target)
        base = self.category_scores[baseline]
        tgt = self.category_scores[target]
        out = {cat: tgt[cat] - base[cat] for cat in tgt if cat in base}
        out["Avg"] = self.averages[target] - self.averages[baseline]
        return out

    def render_table(self) -> str:
        """Aligned text table: one row per condition, category columns plus Avg.

        When a baseline is configured, non-baseline cells carry an up/down
        arrow against it.
        """
        cats = [c for c in CATEGORIES if any(c in s for s in self.category_scores.values())]
        header = ["condition"] + list(cats) + ["Avg"]
        rows = [header]
        base = self.category_scores.get(self.baseline or "", {})
        base_avg = self.averages.get(self.baseline or "")
        for cond in self.conditions:
            row = [cond]
            for cat in cats:
                val = self.category_scores[cond].get(cat)
                row.append(self._cell(val, base.get(cat), cond))
            row.append(self._cell(self.averages.get(cond), base_avg, cond))
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for r in rows:
            cells = [r[0].ljust(widths[0])]
            cells += [r[i].rjust(widths[i]) for i in range(1, len(header))]
            lines.append("  ".join(cells).rstrip())
        if self.footer:
            lines.append("")
            lines.append(self.footer)
        return "\n".join(lines) + "\n"

    def _cell(self, value: Optional[float], base: Optional[float], cond: str) -> str:
        if value is None:
            return "-"
        text = str(round_half_away(value))
        if self.baseline and cond != self.baseline and base is not None:
            if value > base:
                text += "↑"
            elif value < base:
                text += "↓"
        return text


def aggregate(
    records: Sequence[EvalRecord],
    baseline: Optional[str] = None,
) -> Report:
    """Aggregate records into per-task, per-category, and average scores.

    Task score = mean F1 over instances * 100, kept at 2 decimals; category
    score = mean over its tasks; Avg = unweighted mean over category scores.
    Error-tagged records count with their (zero) scores. Permutation
    invariant: records are grouped on sorted keys before averaging.
    """
    if not records:
        raise ValueError("records must be non-empty")
    by_cond_task: dict[str, dict[str, list[EvalRecord]]] = {}
    task_category: dict[str, str] = {}
    condition_order: list[str] = []
    for rec in records:
        if rec.condition not in by_cond_task:
            condition_order.append(rec.condition)
        by_cond_task.setdefault(rec.condition, {}).setdefault(rec.task_id, []).append(rec)
        task_category[rec.task_id] = rec.category

    task_scores: dict[str, dict[str, float]] = {}
    category_scores: dict[str, dict[str, float]] = {}
    averages: dict[str, float] = {}
    for cond in condition_order:
        tasks = by_cond_task[cond]
        task_scores[cond] = {}
        per_cat: dict[str, list[float]] = {}
        for task_id in sorted(tasks):
            recs = sorted(tasks[task_id], key=lambda r: r.instance_id)
            mean_f1 = sum(r.score.f1 for r in recs) / len(recs)
            score = round(mean_f1 * 100, 2)
            task_scores[cond][task_id] = score
            per_cat.setdefault(task_category[task_id], []).append(score)
        category_scores[cond] = {
            cat: sum(vals) / len(vals) for cat, vals in sorted(per_cat.items())
        }
        cats = category_scores[cond]
        averages[cond] = sum(cats.values()) / len(cats)

    report = Report(
        conditions=condition_order,
        task_scores=task_scores,
        category_scores=category_scores,
        averages=averages,
        baseline=baseline,
        footer=(
            "Avg = unweighted mean of category scores; error-tagged records "
            "count as zero-score predictions."
        ),
    )
    if baseline is not None:
        if baseline not in task_scores:
            raise MissingBaseline(baseline)
        _fill_comparisons(report, records, baseline)
    return report


def _fill_comparisons(report: Report, records: Sequence[EvalRecord], baseline: str) -> None:
    # Mean instruction token count per (condition, task), for the length delta.
    instr: dict[str, dict[str, list[int]]] = {}
    techniques: dict[str, dict[str, list[str]]] = {}
    category: dict[str, str] = {}
    for rec in records:
        instr.setdefault(rec.condition, {}).setdefault(rec.task_id, []).append(
            rec.instruction_token_count
        )
        techniques.setdefault(rec.condition, {})[rec.task_id] = rec.techniques
        category[rec.task_id] = rec.category

    base_tasks = report.task_scores[baseline]
    tech_gains: dict[tuple[str, str], list[float]] = {}
    for cond in report.conditions:
        if cond == baseline:
            continue
        report.length_vs_gain[cond] = {}
        for task_id, score in report.task_scores[cond].items():
            if task_id not in base_tasks:
                continue
            base_len = instr[baseline][task_id]
            cond_len = instr[cond][task_id]
            delta = round(sum(base_len) / len(base_len) - sum(cond_len) / len(cond_len))
            gain = score - base_tasks[task_id]
            report.length_vs_gain[cond][task_id] = (delta, gain)
            for tech in techniques[cond].get(task_id, []):
                tech_gains.setdefault((tech, category[task_id]), []).append(gain)
    report.technique_gains = {
        key: sum(vals) / len(vals) for key, vals in tech_gains.items()
    }


RECORD_COLUMNS = [
    "task_id",
    "category",
    "condition",
    "instance_id",
    "prediction",
    "references",
    "precision",
    "recall",
    "f1",
    "prompt_token_count",
    "instruction_token_count",
    "techniques",
    "error",
]


def write_records_csv(records: Iterable[EvalRecord], path: str) -> None:
    """records.csv, one EvalRecord per row. Floats use repr so re-reading
    round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.task_id,
                    rec.category,
                    rec.condition,
                    rec.instance_id,
                    rec.prediction,
                    "\x1f".join(rec.references),
                    repr(rec.score.precision),
                    repr(rec.score.recall),
                    repr(rec.score.f1),
                    rec.prompt_token_count,
                    rec.instruction_token_count,
                    "|".join(rec.techniques),
                    rec.error,
                ]
            )


def read_records_csv(path: str) -> list[EvalRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(
                EvalRecord(
                    task_id=row["task_id"],
                    category=row["category"],
                    condition=row["condition"],
                    instance_id=row["instance_id"],
                    prediction=row["prediction"],
                    references=row["references"].split("\x1f"),
                    score=RougeScore(
                        float(row["precision"]), float(row["recall"]), float(row["f1"])
                    ),
                    prompt_token_count=int(row["prompt_token_count"]),
                    instruction_token_count=int(row["instruction_token_count"]),
                    techniques=[t for t in row["techniques"].split("|") if t],
                    error=row["error"],
                )
            )
    return records


def write_technique_gains_csv(report: Report, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["technique", "category", "gain"])
        for (tech, cat), gain in sorted(report.technique_gains.items()):
            writer.writerow([tech, cat, repr(gain)])


def write_length_vs_gain_csv(report: Report, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["condition", "task_id", "token_delta", "gain"])
        for cond in sorted(report.length_vs_gain):
            for task_id, (delta, gain) in sorted(report.length_vs_gain[cond].items()):
                writer.writerow([cond, task_id, delta, repr(gain)])
