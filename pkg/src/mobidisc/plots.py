"""Figure data emission: per-cluster dynamic fractions as CSV + SVG."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ConfigError

NON_MOBILE_COLOR = "#4878cf"
MOBILE_COLOR = "#ee854a"


def emit_fraction_plot(stats_path, out_dir) -> tuple[Path, Path]:
    """Bar chart of per-cluster dynamic fractions, sorted ascending, with
    the mobile threshold drawn and bars colored by the mobile verdict.

    Returns ``(csv_path, svg_path)``.
    """
    stats_path = Path(stats_path)
    if not stats_path.is_file():
        raise ConfigError(f"stats file {stats_path} does not exist")
    stats = json.loads(stats_path.read_text())
    if "clusters" not in stats:
        raise ConfigError(f"{stats_path} has no cluster statistics (run the full pipeline stage)")
    threshold = stats.get("mobile_fraction_threshold", 0.05)
    clusters = sorted(stats["clusters"], key=lambda c: (c["dynamic_fraction"], c["cluster_id"]))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "dynamic_fractions.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "cluster_id", "size", "dynamic_fraction", "is_mobile"])
        for rank, c in enumerate(clusters):
            writer.writerow([rank, c["cluster_id"], c["size"], c["dynamic_fraction"], c["is_mobile"]])

    svg_path = out_dir / "dynamic_fractions.svg"
    fig, ax = plt.subplots(figsize=(7, 4))
    fractions = [c["dynamic_fraction"] for c in clusters]
    colors = [MOBILE_COLOR if c["is_mobile"] else NON_MOBILE_COLOR for c in clusters]
    ax.bar(range(len(clusters)), fractions, color=colors)
    ax.axhline(threshold, color="black", linestyle="--", linewidth=1, label=f"threshold {threshold:g}")
    ax.set_xlabel("appearance cluster (sorted by dynamic fraction)")
    ax.set_ylabel("dynamic proposal fraction")
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    return csv_path, svg_path
