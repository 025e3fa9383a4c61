"""Report rendering and the record-level metric recount.

The recount here deliberately re-derives every number from raw JSONL
records with plain loops; it never calls the evaluation harness, so the two
code paths can be checked against each other.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Optional

MINUS = "−"  # sign used for negative deltas in tables
PLUS_MINUS = "±"


def format_ar_cell(csc: int, esc: int) -> str:
    return f"{csc}/{esc}"


def format_fraction(value: Optional[Fraction], decimals: int = 2) -> str:
    if value is None:
        return "-"
    if value.denominator == 1:
        return str(value.numerator)
    return f"{float(value):.{decimals}f}"


def format_signed(delta: Optional[Fraction]) -> str:
    if delta is None:
        return "-"
    if delta == 0:
        return f"{PLUS_MINUS}0"
    magnitude = format_fraction(abs(delta))
    return (MINUS if delta < 0 else "+") + magnitude


def format_sr_cell(evolution_sr: Optional[Fraction], delta: Optional[Fraction]) -> str:
    if evolution_sr is None:
        return "-"
    return f"{format_fraction(evolution_sr)} ({format_signed(delta)})"


def recount_metrics(
    evolution_raw: list[dict],
    certifications_raw: list[dict],
    eval_raw: list[dict],
    solved_threshold: float = 0.5,
) -> dict:
    """Single-pass recount over raw records; exact rational SR/AR."""
    esc = 0
    solvability_failures = 0
    difficulty_failures = 0
    for record in evolution_raw:
        if record["succeeded"]:
            esc += 1
        for rollout in record["rollouts"]:
            failure = rollout.get("failure")
            if failure is None:
                continue
            if failure["kind"] == "DIFFICULTY":
                difficulty_failures += 1
            else:  # SOLVABILITY and PROTOCOL fold together in the report view
                solvability_failures += 1

    certified = {c["seed_id"] for c in certifications_raw if c.get("certified")}
    csc = sum(
        1 for record in evolution_raw
        if record["succeeded"] and record["seed_id"] in certified
    )
    ar = Fraction(csc, esc) if esc > 0 else None

    sr: dict[str, Optional[Fraction]] = {"origin": None, "evolution": None}
    atc: dict[str, Optional[float]] = {"origin": None, "evolution": None}
    for dataset in ("origin", "evolution"):
        records = [r for r in eval_raw if r["dataset"] == dataset]
        if not records:
            continue
        solved = sum(1 for r in records if r["score"] >= solved_threshold)
        sr[dataset] = Fraction(solved, len(records)) * 100
        atc[dataset] = sum(r["result"]["completion_tokens"] for r in records) / len(records)

    n = len(evolution_raw)
    failure_stats = {}
    if n:
        avg_s = Fraction(solvability_failures, n)
        avg_d = Fraction(difficulty_failures, n)
        failure_stats = {
            "avg_total": avg_s + avg_d,
            "avg_solvability": avg_s,
            "avg_difficulty": avg_d,
        }
    sr_delta = (
        sr["evolution"] - sr["origin"]
        if sr["origin"] is not None and sr["evolution"] is not None
        else None
    )
    return {
        "esc": esc,
        "csc": csc,
        "ar": ar,
        "origin_sr": sr["origin"],
        "evolution_sr": sr["evolution"],
        "sr_delta": sr_delta,
        "atc_origin": atc["origin"],
        "atc_evolution": atc["evolution"],
        "failure_stats": failure_stats,
    }


def render_report(metrics: dict, fmt: str = "table") -> str:
    if fmt == "csv":
        return _render_csv(metrics)
    if fmt == "table":
        return _render_table(metrics)
    raise ValueError(f"unknown report format {fmt!r}")


def _fmt_float(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def _render_table(m: dict) -> str:
    ar_cell = format_ar_cell(m["csc"], m["esc"])
    ar_value = "-" if m["ar"] is None else f"{float(m['ar']):.4f}"
    stats = m["failure_stats"]
    lines = [
        "== Evolution quality ==",
        f"ESC: {m['esc']}",
        f"CSC: {m['csc']}",
        f"AR:  {ar_cell} ({ar_value})",
        "",
        "== Solve rates (%) ==",
        f"Origin-SR:    {format_fraction(m['origin_sr'])}",
        f"Evolution-SR: {format_sr_cell(m['evolution_sr'], m['sr_delta'])}",
        "",
        "== Token consumption ==",
        f"ATC origin:    {_fmt_float(m['atc_origin'])}",
        f"ATC evolution: {_fmt_float(m['atc_evolution'])}",
        "",
        "== Failures per seed ==",
        f"total:       {format_fraction(stats.get('avg_total'), 2) if stats else '-'}",
        f"solvability: {format_fraction(stats.get('avg_solvability'), 2) if stats else '-'}",
        f"difficulty:  {format_fraction(stats.get('avg_difficulty'), 2) if stats else '-'}",
    ]
    return "\n".join(lines) + "\n"


def _render_csv(m: dict) -> str:
    stats = m["failure_stats"]
    rows = [
        ("esc", str(m["esc"])),
        ("csc", str(m["csc"])),
        ("ar", format_ar_cell(m["csc"], m["esc"])),
        ("ar_value", "-" if m["ar"] is None else f"{float(m['ar']):.4f}"),
        ("origin_sr", format_fraction(m["origin_sr"])),
        ("evolution_sr", format_fraction(m["evolution_sr"])),
        ("sr_delta", format_signed(m["sr_delta"])),
        ("atc_origin", _fmt_float(m["atc_origin"])),
        ("atc_evolution", _fmt_float(m["atc_evolution"])),
        ("avg_total", format_fraction(stats.get("avg_total")) if stats else "-"),
        ("avg_solvability", format_fraction(stats.get("avg_solvability")) if stats else "-"),
        ("avg_difficulty", format_fraction(stats.get("avg_difficulty")) if stats else "-"),
    ]
    return "metric,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"


def histogram_csv(eval_raw: list[dict], bin_width: float) -> str:
    """Token-distribution histogram: per-problem mean tokens across solvers, binned."""
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    lines = ["dataset,bin_start,count"]
    for dataset in ("origin", "evolution"):
        records = [r for r in eval_raw if r["dataset"] == dataset]
        sums: dict[str, int] = {}
        counts: dict[str, int] = {}
        for r in records:
            pid = r["problem_id"]
            sums[pid] = sums.get(pid, 0) + r["result"]["completion_tokens"]
            counts[pid] = counts.get(pid, 0) + 1
        bins: dict[int, int] = {}
        for pid in sums:
            index = int(math.floor((sums[pid] / counts[pid]) / bin_width))
            bins[index] = bins.get(index, 0) + 1
        for index in sorted(bins):
            lines.append(f"{dataset},{index * bin_width:g},{bins[index]}")
    return "\n".join(lines) + "\n"
