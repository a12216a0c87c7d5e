"""Markdown report assembled from workspace artifacts.

Everything except the single ``generated_at`` line is a pure function of the
workspace contents, so regenerating from an unchanged workspace reproduces the
file byte for byte apart from that line.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import re
import shutil
from pathlib import Path

from .. import __version__
from ..interpret.gradcam import TABLE3_HEADERS, format_intensity_table, read_intensity_csv
from ..metrics import BACKBONE_LABELS, METHOD_LABELS, METRIC_COLUMNS, read_metrics_csv
from .config import PipelineConfig
from .workspace import Workspace

REQUIRED = (
    "data/records.csv",
    "data/split.csv",
    "augmented/counts.csv",
    "eval/metrics.csv",
    "interpret/mean_intensity.csv",
)
STAGE_ORDER = ("ingest", "split", "augment", "train-gan", "generate", "train-classifier", "evaluate", "interpret")
TIMESTAMP_PREFIX = "generated_at: "
_LINK = re.compile(r"!?\[[^\]]*\]\(([^)\s]+)\)")


def broken_links(report: Path) -> list[str]:
    """Relative link targets in a markdown file that do not exist on disk."""
    report = Path(report)
    missing = []
    for target in _LINK.findall(report.read_text()):
        if "://" in target or target.startswith("#"):
            continue
        if not (report.parent / target).exists():
            missing.append(target)
    return missing


def strip_timestamp(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not line.startswith(TIMESTAMP_PREFIX))


def _md_table(header, rows) -> list[str]:
    out = ["| " + " | ".join(str(h) for h in header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return out


def table1_counts(ws: Workspace, variants=("cyclegan", "cut")) -> list[dict]:
    """Per-grade counts: train-split originals, after graphic transforms, and generated per GAN variant."""
    with ws.path("augmented", "counts.csv").open(newline="") as fh:
        base = list(csv.DictReader(fh))
    gen_counts = {}
    for v in variants:
        t = ws.path("generated", v, "records.csv")
        counts: dict[str, int] = {}
        if t.is_file():
            with t.open(newline="") as fh:
                for r in csv.DictReader(fh):
                    counts[f"grade {r['grade']}"] = counts.get(f"grade {r['grade']}", 0) + 1
        gen_counts[v] = counts
    rows = []
    for r in base:
        row = {"grade": r["grade"], "Original": int(r["original"]), "Transformations": int(r["transform"])}
        for v in variants:
            c = gen_counts[v]
            row[TABLE3_HEADERS[v]] = sum(c.values()) if r["grade"] == "total" else c.get(r["grade"], 0)
        rows.append(row)
    return rows


def _copy_asset(ws: Workspace, rel: str, assets: Path) -> str:
    dst = assets / rel.replace("/", "__")
    dst.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(ws.path(rel), dst)
    return f"assets/{dst.name}"


def make_report(cfg: PipelineConfig, ws: Workspace, now: dt.datetime | None = None) -> Path:
    ws.require("report", *REQUIRED)
    out = ws.path("report")
    assets = out / "assets"
    if assets.exists():
        shutil.rmtree(assets)
    assets.mkdir(parents=True)
    lines = [f"# {cfg.report.title}", ""]

    # image counts
    t1 = table1_counts(ws)
    with (out / "table1_counts.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(t1[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(t1)
    lines += ["## Image counts per grade before and after augmentation", ""]
    lines += _md_table(list(t1[0]), [list(r.values()) for r in t1])
    lines += ["", "Original counts are the training split; the test split is never augmented.", ""]

    # metrics
    metrics = read_metrics_csv(ws.path("eval", "metrics.csv"))
    lines += ["## Classification metrics on the held-out test split (macro averages)", ""]
    lines += _md_table(
        ["Model", "Augmentation method", *METRIC_COLUMNS],
        [
            [BACKBONE_LABELS.get(r["backbone"], r["backbone"]), METHOD_LABELS.get(r["method"], r["method"]),
             *(f"{r[c]:.4f}" for c in METRIC_COLUMNS)]
            for r in metrics
        ],
    )
    iso = json.loads(ws.path("eval", "isolation.json").read_text()) if ws.path("eval", "isolation.json").is_file() else {}
    lines += ["", f"Test/train isolation check: {'passed' if iso.get('disjoint') else 'not recorded'} "
              f"({iso.get('test_images', '?')} test images).", ""]

    # Grad-CAM intensity
    intensity = read_intensity_csv(ws.path("interpret", "mean_intensity.csv"))
    lines += ["## Mean Grad-CAM heatmap intensity per grade", ""]
    cols = [k for k in intensity[0] if k != "grade"]
    lines += _md_table(["Grade", *cols], [[r["grade"], *("" if r[c] is None else f"{r[c]:.2f}" for c in cols)] for r in intensity])
    lines += ["", "```", format_intensity_table(intensity).rstrip(), "```", ""]

    # figures
    figure_sets = [
        ("Colour histograms", sorted(ws.path("interpret", "histograms").glob("*.png"))),
        ("Frequency spectra", sorted(ws.path("interpret", "spectra").glob("*.png"))),
        ("PCA of penultimate features", sorted(ws.path("interpret", "pca").glob("*.png"))),
        ("Grad-CAM overlays", sorted(ws.path("interpret", "gradcam").rglob("*.png"))),
    ]
    for title, files in figure_sets:
        lines += [f"## {title}", ""]
        if not files:
            lines += ["(no figures produced)", ""]
        for f in files:
            rel = ws.rel(f)
            lines += [f"![{rel}]({_copy_asset(ws, rel, assets)})", ""]
    pca = ws.path("interpret", "pca.csv")
    if pca.is_file():
        with pca.open(newline="") as fh:
            prow = list(csv.DictReader(fh))
        if prow:
            lines += _md_table(list(prow[0]), [list(r.values()) for r in prow]) + [""]

    # provenance
    lines += ["## Provenance", "", f"- tool version: {__version__}", f"- profile: {cfg.profile}",
              f"- seed: {cfg.seed}", f"- config hash: {cfg.hash()}", ""]
    for stage in STAGE_ORDER:
        m = ws.read_manifest(stage)
        if m is None:
            lines += [f"### {stage}: not run", ""]
            continue
        lines += [f"### {stage}", "", f"- config hash: {m['config_hash']}", f"- seed: {m['seed']}",
                  f"- tool version: {m['tool_version']}", f"- manifest: `manifests/{stage}.json`", ""]
        if m.get("inputs"):
            lines += ["Inputs:", ""] + [f"- `{p}` {h}" for p, h in m["inputs"].items()] + [""]
        lines += ["Outputs:", ""] + [f"- `{p}` {h}" for p, h in m["outputs"].items()] + [""]
    stamp = (now or dt.datetime.now(dt.timezone.utc)).isoformat(timespec="seconds")
    lines += [f"{TIMESTAMP_PREFIX}{stamp}", ""]
    path = out / "report.md"
    path.write_text("\n".join(lines))
    missing = broken_links(path)
    if missing:
        raise RuntimeError(f"report has broken links: {missing}")
    return path


def report_stage(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    make_report(cfg, ws)
    ws.write_manifest("report", list(REQUIRED), ["report/table1_counts.csv", "report/assets"], cfg.hash(), cfg.seed)
