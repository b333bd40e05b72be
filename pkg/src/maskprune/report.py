"""Record files and figures written by the CLI."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RECORD_VERSION = 1
# PNG metadata pinned so figures are byte-identical across runs
_PNG_META = {"Software": None}


def _clean(value):
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return None
        return value
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_records(path: str | os.PathLike, kind: str, records: Iterable[dict], **header) -> None:
    """JSON lines: a versioned header line, then one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        head = {"format": f"maskprune.{kind}", "version": RECORD_VERSION, **header}
        fh.write(json.dumps(_clean(head), sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(_clean(rec), sort_keys=True) + "\n")


def read_records(path: str | os.PathLike) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "format" not in lines[0]:
        raise ValueError(f"{path}: missing record header")
    return lines[0], lines[1:]


def write_csv(path: str | os.PathLike, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _clean(row.get(k)) for k in columns})


def metric_table(rows: Sequence[tuple[str, dict]]) -> str:
    """Fixed-column text table: Method | 2D IoU | CD | F-Score | METRO."""
    head = f"{'Method':<16}|{'2D IoU':>9} |{'CD':>9} |{'F-Score':>9} |{'METRO':>9} "
    lines = [head, "-" * len(head)]

    def fmt(v, spec):
        return f"{v:{spec}}" if v is not None else f"{'-':>9}"

    for name, m in rows:
        lines.append(
            f"{name:<16}|{fmt(m.get('iou2d'), '9.3f')} |{fmt(m.get('chamfer'), '9.3f')} "
            f"|{fmt(m.get('fscore'), '9.2f')} |{fmt(m.get('metro'), '9.4f')} "
        )
    return "\n".join(lines)


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_viewpoint_sweep(records: Sequence[dict], out_dir: str | os.PathLike) -> list[Path]:
    """IoU and Chamfer against azimuth, one curve per tau, with the unpruned baseline."""
    out = Path(out_dir)
    taus = sorted({r["tau"] for r in records})
    written = []
    panels = [("iou", "iou_before", "iou_after", "2D IoU")]
    if any(r.get("chamfer_after") is not None for r in records):
        panels.append(("chamfer", "chamfer_before", "chamfer_after", "Chamfer distance (x1e3)"))
    for name, before_key, after_key, label in panels:
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        first = [r for r in records if r["tau"] == taus[0]]
        first.sort(key=lambda r: r["azimuth"])
        ax.plot([r["azimuth"] for r in first], [r[before_key] for r in first],
                "k--", lw=1.5, label="baseline")
        for tau in taus:
            rows = sorted((r for r in records if r["tau"] == tau), key=lambda r: r["azimuth"])
            ax.plot([r["azimuth"] for r in rows], [r[after_key] for r in rows],
                    marker="o", ms=3, lw=1, label=f"tau={tau:g}")
        ax.set_xlabel("azimuth (deg)")
        ax.set_ylabel(label)
        ax.set_xticks(range(0, 361, 45))
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        path = out / f"{name}_vs_azimuth.png"
        _save(fig, path)
        written.append(path)
    return written


def plot_tau_trend(records: Sequence[dict], out_dir: str | os.PathLike) -> Path:
    """Mean pruned-face count and mean refined IoU against tau."""
    taus = sorted({r["tau"] for r in records})
    pruned = [sum(r["n_pruned"] for r in records if r["tau"] == t) /
              max(1, sum(1 for r in records if r["tau"] == t)) for t in taus]
    iou = [sum(r["iou_after"] for r in records if r["tau"] == t) /
           max(1, sum(1 for r in records if r["tau"] == t)) for t in taus]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(taus, iou, "o-", color="tab:blue")
    ax.set_xlabel("tau")
    ax.set_ylabel("mean 2D IoU after pruning", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(taus, pruned, "s--", color="tab:red")
    ax2.set_ylabel("mean pruned faces", color="tab:red")
    fig.tight_layout()
    path = Path(out_dir) / "tau_trend.png"
    _save(fig, path)
    return path


def plot_masks(gt, alpha, alpha_r, path: str | os.PathLike, title: str = "") -> Path:
    """Ground truth, unpruned and pruned silhouettes side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.8))
    for ax, img, name in zip(axes, (gt, alpha, alpha_r), ("ground truth", "before", "after")):
        ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    _save(fig, Path(path))
    return Path(path)
