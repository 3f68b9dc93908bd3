"""Standalone SVG emission for reports; numeric CSV always written alongside.

No plotting dependency: charts are hand-assembled SVG primitives. Supported
report types: ``syncability_report`` (ROC curve, coverage-vs-accuracy curve)
and ``attribution_report`` (one heat strip per modality). ``eval_report``
carries scalars and a confusion CSV and has no plot form.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ReportError

_MARGIN = 46
_SIZE = 360


def _svg(width: int, height: int, body: list[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n")


def _axes(title: str, xlabel: str, ylabel: str) -> list[str]:
    x0, y0 = _MARGIN, _SIZE - _MARGIN
    x1, y1 = _SIZE - 12, 24
    body = [
        f'<rect x="0" y="0" width="{_SIZE}" height="{_SIZE}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{_SIZE // 2}" y="16" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{_SIZE // 2}" y="{_SIZE - 8}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="12" y="{_SIZE // 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 12 {_SIZE // 2})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        px = x0 + frac * (x1 - x0)
        py = y0 - frac * (y0 - y1)
        body.append(f'<text x="{px:.0f}" y="{y0 + 14}" text-anchor="middle" font-size="9">{frac:g}</text>')
        body.append(f'<text x="{x0 - 6}" y="{py + 3:.0f}" text-anchor="end" font-size="9">{frac:g}</text>')
    return body


def line_chart_svg(points: list[tuple[float, float]], title: str,
                   xlabel: str, ylabel: str) -> str:
    """Unit-square polyline chart; both axes span [0, 1]."""
    if not points:
        raise ReportError("cannot plot an empty curve")
    x0, y0 = _MARGIN, _SIZE - _MARGIN
    x1, y1 = _SIZE - 12, 24
    body = _axes(title, xlabel, ylabel)
    coords = " ".join(f"{x0 + px * (x1 - x0):.1f},{y0 - py * (y0 - y1):.1f}" for px, py in points)
    body.append(f'<polyline points="{coords}" fill="none" stroke="#2563eb" stroke-width="1.6"/>')
    for px, py in points:
        body.append(f'<circle cx="{x0 + px * (x1 - x0):.1f}" cy="{y0 - py * (y0 - y1):.1f}" '
                    f'r="2.2" fill="#2563eb"/>')
    return _svg(_SIZE, _SIZE, body)


def heat_strip_svg(values: list[float], title: str, chunk_sec: float) -> str:
    """One row of cells, dark = high score; values expected in [0, 1]."""
    if not values:
        raise ReportError("cannot plot an empty heat strip")
    cell = max(6, min(18, 720 // len(values)))
    width = cell * len(values) + 2 * _MARGIN
    height = 96
    body = [f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width // 2}" y="18" text-anchor="middle" font-size="13">{title}</text>']
    for i, v in enumerate(values):
        level = int(round(255 * (1.0 - max(0.0, min(1.0, v)))))
        body.append(f'<rect x="{_MARGIN + i * cell}" y="34" width="{cell}" height="28" '
                    f'fill="rgb({level},{level},{level})" stroke="#ddd" stroke-width="0.4"/>')
    span = len(values) * chunk_sec
    body.append(f'<text x="{_MARGIN}" y="78" font-size="10">0 s</text>')
    body.append(f'<text x="{_MARGIN + len(values) * cell}" y="78" text-anchor="end" '
                f'font-size="10">{span:.1f} s</text>')
    return _svg(width, height, body)


def _curve_csv(points, header: str) -> str:
    return header + "\n" + "\n".join(f"{a:.6f},{b:.6f}" for a, b in points) + "\n"


def _require(report: dict, field: str, path) -> object:
    if field not in report:
        raise ReportError(f"{path}: report is missing field {field!r}")
    return report[field]


def emit_plots(report_paths: list[Path], out_dir: Path) -> list[str]:
    """Render every supported report to SVG + CSV; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    for path in report_paths:
        path = Path(path)
        try:
            report = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ReportError(f"{path}: cannot read report: {e}")
        kind = report.get("type")
        if kind == "eval_report":
            continue  # scalar metrics; confusion matrix is already CSV
        if kind == "syncability_report":
            roc = _require(report, "roc_points", path)
            if not roc:
                raise ReportError(f"{path}: roc_points is empty")
            pts = [(float(a), float(b)) for a, b in roc]
            stem = path.stem
            (out_dir / f"{stem}_roc.svg").write_text(
                line_chart_svg(pts, f"ROC (AUC={report.get('auc', float('nan')):.3f})",
                               "false positive rate", "true positive rate"), encoding="utf-8")
            (out_dir / f"{stem}_roc.csv").write_text(_curve_csv(pts, "fpr,tpr"), encoding="utf-8")
            written += [str(out_dir / f"{stem}_roc.svg"), str(out_dir / f"{stem}_roc.csv")]
            ranked = _require(report, "ranked_accuracy", path)
            if ranked:
                pts = [(float(a), float(b)) for a, b in ranked]
                (out_dir / f"{stem}_ranked.svg").write_text(
                    line_chart_svg(pts, "accuracy by confidence coverage",
                                   "coverage", "tol-1 accuracy"), encoding="utf-8")
                (out_dir / f"{stem}_ranked.csv").write_text(
                    _curve_csv(pts, "coverage,tol1_accuracy"), encoding="utf-8")
                written += [str(out_dir / f"{stem}_ranked.svg"), str(out_dir / f"{stem}_ranked.csv")]
        elif kind == "attribution_report":
            scaled = _require(report, "scaled", path)
            chunk_sec = float(report.get("chunk_sec", 0.1))
            stem = path.stem
            for modality in ("audio", "visual"):
                values = scaled.get(modality)
                if values is None:
                    raise ReportError(f"{path}: scaled scores missing modality {modality!r}")
                if not values:
                    raise ReportError(f"{path}: scaled.{modality} is empty")
                svg_path = out_dir / f"{stem}_{modality}.svg"
                svg_path.write_text(
                    heat_strip_svg([float(v) for v in values],
                                   f"{report.get('clip_id', stem)} {modality} attribution",
                                   chunk_sec), encoding="utf-8")
                csv_path = out_dir / f"{stem}_{modality}_strip.csv"
                csv_path.write_text(
                    "chunk,start_sec,scaled\n" + "\n".join(
                        f"{i},{i * chunk_sec:.1f},{float(v):.6f}" for i, v in enumerate(values)) + "\n",
                    encoding="utf-8")
                written += [str(svg_path), str(csv_path)]
        else:
            raise ReportError(f"{path}: unknown report type {kind!r}")
    return written
