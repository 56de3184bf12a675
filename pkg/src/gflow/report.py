"""
Artifact writers: series CSV, JSON report and SVG line plots.

All writes are atomic (temporary file in the target directory, then rename).
Data files carry no timestamps, so identical runs give identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

SCHEMA = "gflow-report/1"


def atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_value(v: float) -> str:
    return "%.17g" % v


def series_csv(series) -> str:
    cols = list(series.columns)
    out = [",".join(cols)]
    for row in series.rows:
        out.append(",".join(format_value(row[c]) for c in cols))
    return "\n".join(out) + "\n"


def read_series_csv(path: str | Path) -> tuple[list[str], list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    cols = lines[0].split(",")
    rows = [dict(zip(cols, (float(x) for x in ln.split(",")))) for ln in lines[1:] if ln]
    return cols, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def report_json(doc: dict) -> str:
    body = {"schema": SCHEMA, **doc}
    return json.dumps(_jsonable(body), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (k - 1) for i in range(k)]


def svg_plot(t, v, title: str, width: int = 640, height: int = 400) -> str:
    """Fixed-size polyline plot with labelled axis ticks."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    ok = np.isfinite(t) & np.isfinite(v)
    t, v = t[ok], v[ok]
    ml, mr, mt, mb = 80, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="monospace" font-size="13">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    if t.size:
        t0, t1 = float(t.min()), float(t.max())
        v0, v1 = float(v.min()), float(v.max())
        if t1 == t0:
            t1 = t0 + 1.0
        if v1 == v0:
            pad = abs(v0) * 0.05 or 1.0
            v0, v1 = v0 - pad, v1 + pad
        X = lambda x: ml + (x - t0) / (t1 - t0) * pw
        Y = lambda y: mt + ph - (y - v0) / (v1 - v0) * ph
        for tk in _ticks(t0, t1):
            x = X(tk)
            parts.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 5}" stroke="black"/>')
            parts.append(f'<text x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle" font-family="monospace" font-size="10">{tk:.4g}</text>')
        for vk in _ticks(v0, v1):
            y = Y(vk)
            parts.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
            parts.append(f'<text x="{ml - 8}" y="{y + 3:.2f}" text-anchor="end" font-family="monospace" font-size="10">{vk:.4g}</text>')
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(t, v))
        parts.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{pts}"/>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-family="monospace" font-size="11">t</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_artifacts(out_dir: str | Path, doc: dict, series=None, emit_csv=True, emit_json=True,
                    emit_svg=False, plot_columns=None, wall_time: float | None = None) -> list[Path]:
    out = Path(out_dir)
    written = []
    if series is not None and emit_csv:
        written.append(atomic_write(out / "series.csv", series_csv(series)))
    if series is not None and emit_svg and len(series):
        cols = plot_columns or [c for c in series.columns if c != "t"]
        for c in cols:
            if c in series.columns:
                written.append(atomic_write(out / f"plot_{c}.svg", svg_plot(series.t, series.column(c), c)))
    if emit_json:
        written.append(atomic_write(out / "report.json", report_json(doc)))
    if wall_time is not None:
        meta = json.dumps({"schema": "gflow-run-meta/1", "wall_time_s": wall_time}, sort_keys=True, indent=2) + "\n"
        written.append(atomic_write(out / "run_meta.json", meta))
    return written
