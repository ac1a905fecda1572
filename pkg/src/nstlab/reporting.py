"""Report, loss-curve and figure emission for the batch CLI.

Everything written here is deterministic for identical inputs: reports use
sorted-key JSON (wall-clock timings go to a separate sidecar file), CSV cells
use shortest-roundtrip float formatting, and SVG output pins matplotlib's
hash salt and strips the date metadata.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import tempfile

from .errors import ConfigError
from .pipelines import RunReport

CSV_HEADER = ("iter", "total", "content", "style")


def _write_atomic_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    return "" if value is None else repr(float(value))


def loss_rows(report: RunReport) -> list[tuple]:
    """Trace entries at their iteration index, then the final evaluation."""
    rows = []
    for i, parts in enumerate(report.trace):
        rows.append((i, parts.get("total"), parts.get("content"), parts.get("style")))
    f = report.final
    rows.append((len(report.trace), f.get("total"), f.get("content"), f.get("style")))
    return rows


def write_loss_csv(rows, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for it, total, content, style in rows:
        writer.writerow([str(int(it)), _cell(total), _cell(content), _cell(style)])
    _write_atomic_text(path, buf.getvalue())


def read_loss_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(lines[0].split(",")) != CSV_HEADER:
        raise ConfigError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 4:
            raise ConfigError(f"{path}: line {lineno}: expected 4 cells, got {len(cells)}")
        try:
            row = {
                "iter": int(cells[0]),
                "total": float(cells[1]) if cells[1] else None,
                "content": float(cells[2]) if cells[2] else None,
                "style": float(cells[3]) if cells[3] else None,
            }
        except ValueError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
        rows.append(row)
    return rows


def write_report(report: RunReport, out_dir: str, stem: str = "report") -> dict[str, str]:
    """Emit report.json (deterministic), timings.json, and the loss CSV."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, f"{stem}.json"),
        "timings": os.path.join(out_dir, f"{stem}_timings.json"),
        "csv": os.path.join(out_dir, f"{stem}_loss.csv"),
    }
    write_loss_csv(loss_rows(report), paths["csv"])
    with open(paths["csv"], "rb") as fh:
        report.checksums["loss_csv"] = hashlib.sha256(fh.read()).hexdigest()
    _write_atomic_text(paths["report"], report.to_json(include_timings=False))
    import json

    _write_atomic_text(paths["timings"], json.dumps(report.timings, sort_keys=True, indent=2) + "\n")
    return paths


def _configure_matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "nstlab"
    return matplotlib


def emit_plot(csv_path, out_path) -> str:
    """Render the three loss series from a loss CSV to a vector SVG file."""
    rows = read_loss_csv(csv_path)
    if not rows:
        raise ConfigError(f"{csv_path}: no data rows")
    _configure_matplotlib()
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = [r["iter"] for r in rows]
    plotted = []
    for key, color in (("total", "#1f77b4"), ("content", "#2ca02c"), ("style", "#d62728")):
        ys = [r[key] for r in rows]
        pairs = [(x, y) for x, y in zip(xs, ys) if y is not None]
        if pairs:
            ax.plot([p[0] for p in pairs], [p[1] for p in pairs],
                    label=key, color=color, marker="o" if len(pairs) < 25 else None,
                    markersize=3, linewidth=1.2)
            plotted.extend(p[1] for p in pairs)
    if plotted and min(plotted) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(out_path)


def emit_compare_figure(report, out_path) -> str:
    """Bar charts for the smoothing A/B harness: style metric and entropy."""
    _configure_matplotlib()
    import matplotlib.pyplot as plt

    entries = [e for e in report.entries if e.error is None]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    labels = [e.kind for e in entries]
    metrics = [e.raw_style_metric for e in entries]
    ax1.bar(range(len(entries)), metrics, color="#1f77b4")
    ax1.set_xticks(range(len(entries)), labels, rotation=20)
    ax1.set_ylabel("raw style loss of output")
    if metrics and min(m for m in metrics if m is not None) > 0:
        ax1.set_yscale("log")
    ax1.grid(True, axis="y", alpha=0.3)

    taps = sorted(report.raw_entropy)
    width = 0.8 / max(len(entries), 1)
    for j, entry in enumerate(entries):
        vals = [entry.entropy[t]["smoothed"] for t in taps]
        ax2.bar([i + j * width for i in range(len(taps))], vals, width=width,
                label=entry.kind)
    ax2.plot(range(len(taps)), [report.raw_entropy[t] for t in taps], "k--x",
             label="raw")
    ax2.set_xticks([i + 0.4 for i in range(len(taps))], taps)
    ax2.set_ylabel("mean channel entropy")
    ax2.legend(fontsize=8)
    ax2.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(out_path)
