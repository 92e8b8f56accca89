"""Aggregation over graded results: per-model averages, cumulative
distributions, tag tables, and the ranklist.

All internal arithmetic is exact (fractions built from decimal text);
rounding happens once, at display time, half away from zero. Float
rounding would misplace values like 20.55 at 0.1 precision.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

ALL_TASKS_TAG = "all-tasks"

TAG_VOCABULARY = frozenset({
    "temporal", "softbody", "precise3d", "bimanual", "multiview",
    "repeated", "classification", "manipulation", "simple-pick",
})


@dataclass(frozen=True)
class ResultRow:
    model: str
    task_id: str
    sr: Fraction
    score: Fraction


class RaggedTable(ValueError):
    pass


class UnknownModel(KeyError):
    pass


class UntaggedTask(ValueError):
    pass


def _fraction(text: str) -> Fraction:
    return Fraction(Decimal(text))


def round_display(value: Fraction, digits: int = 1) -> str:
    """Exact half-away-from-zero rounding, rendered as fixed-point text."""
    sign = "-" if value < 0 else ""
    scaled = abs(value) * Fraction(10 ** digits)
    whole = scaled.numerator // scaled.denominator
    remainder = scaled - whole
    if remainder * 2 >= 1:
        whole += 1
    if digits == 0:
        return f"{sign}{whole}"
    text = str(whole).rjust(digits + 1, "0")
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def load_results(path) -> list[ResultRow]:
    """Read the comma-separated results table.

    Columns: model,task_id,sr,score. Lines starting with # are comments.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["model", "task_id", "sr", "score"]:
            raise ValueError(f"{path}: expected header model,task_id,sr,score")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(rec)}")
            model, task_id, sr, score = (c.strip() for c in rec)
            rows.append(ResultRow(model, task_id, _fraction(sr), _fraction(score)))
    return rows


def load_tags(path) -> dict[str, frozenset[str]]:
    """task_id -> tags. Columns: task_id,tags (tags separated by |)."""
    tags: dict[str, frozenset[str]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["task_id", "tags"]:
            raise ValueError(f"{path}: expected header task_id,tags")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            task_id, joined = rec[0].strip(), rec[1].strip()
            labels = frozenset(t.strip() for t in joined.split("|") if t.strip())
            unknown = labels - TAG_VOCABULARY
            if unknown:
                raise ValueError(f"{path}:{lineno}: unknown tag(s) {sorted(unknown)}")
            tags[task_id] = labels
    return tags


def bundled_results_path() -> Path:
    return Path(str(resources.files("robofleet").joinpath("data/reference_results.csv")))


def bundled_tags_path() -> Path:
    return Path(str(resources.files("robofleet").joinpath("data/task_tags.csv")))


def _by_model(rows: Iterable[ResultRow],
              strict: bool = True) -> dict[str, dict[str, ResultRow]]:
    table: dict[str, dict[str, ResultRow]] = {}
    for row in rows:
        per = table.setdefault(row.model, {})
        if row.task_id in per:
            raise RaggedTable(f"duplicate cell ({row.model}, {row.task_id})")
        per[row.task_id] = row
    task_sets = {frozenset(per) for per in table.values()}
    if strict and len(task_sets) > 1:
        raise RaggedTable("models cover different task sets")
    return table


def _mean(values: list[Fraction]) -> Fraction:
    return sum(values, Fraction(0)) / len(values)


def model_averages(rows: Iterable[ResultRow],
                   strict: bool = True) -> dict[str, tuple[Fraction, Fraction]]:
    """Per-model exact mean (sr, score) over its tasks.

    strict demands every model cover the same tasks; live leaderboards
    pass strict=False and average each model over what it has run.
    """
    table = _by_model(rows, strict=strict)
    return {
        model: (_mean([r.sr for r in per.values()]),
                _mean([r.score for r in per.values()]))
        for model, per in table.items()
    }


def cumulative_distribution(rows: Iterable[ResultRow], model: str,
                            metric: str) -> list[tuple[str, Fraction]]:
    """(task, value) pairs sorted by value descending; rank k = k-th best."""
    if metric not in ("sr", "score"):
        raise ValueError(f"metric must be sr or score, got {metric!r}")
    table = _by_model(rows)
    if model not in table:
        raise UnknownModel(model)
    per = table[model]
    pairs = [(task, getattr(row, metric)) for task, row in per.items()]
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def dominates(rows: Iterable[ResultRow], model: str, metric: str) -> bool:
    """True when the model's sorted curve is pointwise >= every other's."""
    rows = list(rows)
    ours = [v for _, v in cumulative_distribution(rows, model, metric)]
    for other in {r.model for r in rows} - {model}:
        theirs = [v for _, v in cumulative_distribution(rows, other, metric)]
        if any(a < b for a, b in zip(ours, theirs)):
            return False
    return True


def tag_aggregate(rows: Iterable[ResultRow],
                  tags: dict[str, frozenset[str]]) -> dict[str, tuple[int, Fraction, Fraction]]:
    """Per tag: (task count, mean sr, mean score) over all (model, task) cells.

    An all-tasks pseudo-tag row is always included.
    """
    rows = list(rows)
    _by_model(rows)
    tasks = {r.task_id for r in rows}
    missing = tasks - set(tags)
    if missing:
        raise UntaggedTask(f"untagged task(s): {sorted(missing)}")
    out: dict[str, tuple[int, Fraction, Fraction]] = {}
    every_tag = sorted({t for labels in tags.values() for t in labels})
    for tag in every_tag + [ALL_TASKS_TAG]:
        if tag == ALL_TASKS_TAG:
            tagged = tasks
        else:
            tagged = {t for t in tasks if tag in tags[t]}
        cells = [r for r in rows if r.task_id in tagged]
        if not cells:
            continue
        out[tag] = (len(tagged),
                    _mean([r.sr for r in cells]),
                    _mean([r.score for r in cells]))
    return out


def ranklist(rows: Iterable[ResultRow],
             strict: bool = True) -> list[tuple[int, list[str], Fraction, Fraction]]:
    """Models grouped by display name, ordered by mean sr then mean score.

    Equal (sr, score) share one entry; rank numbers count entries above
    plus one, so a two-way tie at the top is (1, [a, b], ...).
    """
    averages = model_averages(rows, strict=strict)
    grouped: dict[tuple[Fraction, Fraction], list[str]] = {}
    for model, pair in averages.items():
        grouped.setdefault(pair, []).append(model)
    ordered = sorted(grouped.items(), key=lambda kv: (-kv[0][0], -kv[0][1]))
    result = []
    position = 1
    for (sr, score), models in ordered:
        result.append((position, sorted(models), sr, score))
        position += len(models)
    return result


# -- CLI ---------------------------------------------------------------


def _print_table(headers: list[str], rows: list[list[str]], machine: bool):
    if machine:
        for row in rows:
            print(",".join(row))
        return
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="analytics", description="Aggregate graded benchmark results.")
    parser.add_argument("command", choices=["avg", "cdf", "tags", "rank"])
    parser.add_argument("--input", default=None,
                        help="results csv (default: bundled reference table)")
    parser.add_argument("--tags", default=None,
                        help="tag csv for the tags command (default: bundled)")
    parser.add_argument("--model", default=None, help="model for cdf")
    parser.add_argument("--metric", default="score", choices=["sr", "score"])
    parser.add_argument("--csv", action="store_true",
                        help="machine-readable rows instead of aligned text")
    args = parser.parse_args(argv)

    rows = load_results(args.input or bundled_results_path())
    if args.command == "avg":
        table = [[m, round_display(sr), round_display(score)]
                 for m, (sr, score) in sorted(model_averages(rows).items())]
        _print_table(["model", "mean_sr", "mean_score"], table, args.csv)
    elif args.command == "cdf":
        if args.model is None:
            parser.error("cdf needs --model")
        series = cumulative_distribution(rows, args.model, args.metric)
        table = [[str(i + 1), task, round_display(v)]
                 for i, (task, v) in enumerate(series)]
        _print_table(["rank", "task_id", args.metric], table, args.csv)
    elif args.command == "tags":
        tags = load_tags(args.tags or bundled_tags_path())
        table = [[tag, str(count), round_display(sr, 0), round_display(score, 0)]
                 for tag, (count, sr, score) in tag_aggregate(rows, tags).items()]
        _print_table(["tag", "tasks", "mean_sr", "mean_score"], table, args.csv)
    else:
        table = [[str(rank), "+".join(models), round_display(sr), round_display(score)]
                 for rank, models, sr, score in ranklist(rows)]
        _print_table(["rank", "model", "mean_sr", "mean_score"], table, args.csv)
    return 0


if __name__ == "__main__":
    sys.exit(main())
