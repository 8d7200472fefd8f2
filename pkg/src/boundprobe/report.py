"""Report emission: markdown tables, a JSON block, CSV cross-tabs and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .errors import EmptyAfterFilter
from .metrics import MetricReport
from .verification import (
    VERDICT_ORDER,
    CategoryTally,
    EvaluationPair,
    Provenance,
    crosstab_markdown,
    tally,
)

CELL_NOTE = "Cell values are percentages of the answers in each table; rows are the ground-truth verdict."


def build_summary(
    pairs: Sequence[EvaluationPair],
    metrics: MetricReport | None,
    per_question: dict[str, MetricReport],
    failures: Sequence[str],
    settings: dict,
    admissions: dict[str, bool] | None = None,
) -> dict:
    def maybe(prov):
        try:
            return tally(pairs, prov).to_dict()
        except EmptyAfterFilter:
            return None

    admissions = admissions or {}
    return {
        "settings": settings,
        "n_pairs": len(pairs),
        "target": maybe(Provenance.TARGET),
        "auxiliary": maybe(Provenance.AUXILIARY),
        "metrics": metrics.to_dict() if metrics else None,
        "per_question": {k: v.to_dict() for k, v in sorted(per_question.items())},
        "boundary_admission": {
            "questions": len(admissions),
            "admitting": sum(admissions.values()),
            "pct": round(100.0 * sum(admissions.values()) / len(admissions), 6) if admissions else 0.0,
        },
        "failures": list(failures),
        "partial": bool(failures),
    }


def _tally_from_dict(d: dict) -> CategoryTally:
    return CategoryTally(
        total=d["total"],
        crosstab=d["crosstab_pct"],
        counts=d["counts"],
        unqualified_pct=d["unqualified_pct"],
        inaccurate_pct=d["inaccurate_pct"],
        hidden_correct_pct=d["hidden_correct_pct"],
        unexpected_wrong_pct=d["unexpected_wrong_pct"],
        admission_aligned_pct=d["admission_aligned_pct"],
        provenance=d["provenance"],
    )


def render_markdown(summary: dict) -> str:
    out = ["# Knowledge-boundary report", ""]
    s = summary["settings"]
    out.append(f"Mode `{s.get('mode')}`, lambda {s.get('lam')}, top-p {s.get('top_p')}, "
               f"temperature {s.get('temperature')}, repetition penalty {s.get('repetition_penalty')}.")
    out.append("")
    out.append("## Discovery metrics")
    out.append("")
    m = summary["metrics"]
    if m is None:
        out.append("_No discovered answers; metrics section empty._")
    else:
        out.append("| EM | F1 | AOR | Bleu1 | Bleu2 | Bleu3 | Bleu4 |")
        out.append("|---:|---:|---:|---:|---:|---:|---:|")
        out.append("| " + " | ".join(f"{x:.3f}" for x in [m["em"], m["f1"], m["aor"], *m["bleu"]]) + " |")
    out.append("")

    t = summary["target"]
    out.append("## Target-model answers")
    out.append("")
    if t is None:
        out.append("_No target answers evaluated._")
    else:
        out.append(crosstab_markdown(_tally_from_dict(t)))
        out.append("")
        out.append(f"- Unqualified answers: {t['unqualified_pct']:.2f}%")
        out.append(f"- Inaccurate evaluations: {t['inaccurate_pct']:.2f}%")
    out.append("")

    a = summary["auxiliary"]
    out.append("## Auxiliary-model answers")
    out.append("")
    if a is None:
        out.append("_No discovered answers evaluated._")
    else:
        out.append(crosstab_markdown(_tally_from_dict(a), self_label="Target self-evaluation"))
        out.append("")
        out.append(f"- Hidden correct answers: {a['hidden_correct_pct']:.2f}%")
        out.append(f"- Unexpected wrong evaluations: {a['unexpected_wrong_pct']:.2f}%")
        out.append(f"- Aligned admissions (self-evaluation unverifiable): {a['admission_aligned_pct']:.2f}%")
    out.append("")
    b = summary["boundary_admission"]
    out.append(f"Boundary admissions in target responses: {b['admitting']} of {b['questions']} questions ({b['pct']:.2f}%).")
    out.append("")
    out.append(CELL_NOTE)
    if summary["failures"]:
        out.append("")
        out.append("## Gaps")
        out.append("")
        out.extend(f"- {f}" for f in summary["failures"])
    out.append("")
    out.append("```json")
    out.append(json.dumps({k: summary[k] for k in ("target", "auxiliary", "metrics")}, indent=2, sort_keys=True))
    out.append("```")
    return "\n".join(out) + "\n"


def write_crosstab_csv(path: Path, t: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["truth\\self", *[v.value for v in VERDICT_ORDER]])
        for v, row in zip(VERDICT_ORDER, t["crosstab_pct"]):
            w.writerow([v.value, *[f"{x:.4f}" for x in row]])


def write_metrics_csv(path: Path, rows: dict[str, dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "em", "f1", "aor", "bleu1", "bleu2", "bleu3", "bleu4"])
        for name, m in rows.items():
            w.writerow([name, *[f"{x:.6f}" for x in [m["em"], m["f1"], m["aor"], *m["bleu"]]]])


def render_figures(summary: dict, out_dir: Path, comparison: dict[str, dict] | None = None) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    written: list[Path] = []
    labels = [v.value.capitalize() for v in VERDICT_ORDER]
    for key, title in (("target", "Target answers"), ("auxiliary", "Discovered answers")):
        t = summary.get(key)
        if t is None:
            continue
        grid = np.array(t["crosstab_pct"])
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(grid, cmap="Blues", vmin=0, vmax=max(grid.max(), 1e-9))
        ax.set_xticks(range(3), labels)
        ax.set_yticks(range(3), labels)
        ax.set_xlabel("self-evaluation")
        ax.set_ylabel("ground truth")
        ax.set_title(title)
        for i in range(3):
            for j in range(3):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                        color="white" if grid[i, j] > grid.max() / 2 else "black", fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="% of answers")
        fig.tight_layout()
        path = out_dir / f"crosstab_{key}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    runs = dict(comparison or {})
    if summary.get("metrics") and not runs:
        runs[str(summary["settings"].get("mode", "run"))] = summary["metrics"]
    if runs:
        names = list(runs)
        cols = ["em", "f1", "aor", "bleu1", "bleu2", "bleu3", "bleu4"]
        vals = np.array([[runs[n]["em"], runs[n]["f1"], runs[n]["aor"], *runs[n]["bleu"]] for n in names])
        fig, ax = plt.subplots(figsize=(7, 3.4))
        width = 0.8 / len(names)
        x = np.arange(len(cols))
        for i, n in enumerate(names):
            ax.bar(x + i * width - 0.4 + width / 2, vals[i], width, label=n)
        ax.set_xticks(x, cols)
        ax.set_ylim(0, 1)
        ax.set_ylabel("score")
        ax.legend(frameon=False)
        fig.tight_layout()
        path = out_dir / "metrics.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def write_report(summary: dict, out_dir: str | Path, figures: bool = True, comparison: dict[str, dict] | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.md").write_text(render_markdown(summary), encoding="utf-8")
    written += [out / "report.json", out / "report.md"]
    for key in ("target", "auxiliary"):
        if summary.get(key):
            write_crosstab_csv(out / f"crosstab_{key}.csv", summary[key])
            written.append(out / f"crosstab_{key}.csv")
    rows = dict(comparison or {})
    if summary.get("metrics") and not rows:
        rows[str(summary["settings"].get("mode", "run"))] = summary["metrics"]
    if rows:
        write_metrics_csv(out / "metrics.csv", rows)
        written.append(out / "metrics.csv")
    if figures:
        written += render_figures(summary, out, comparison)
    return written
