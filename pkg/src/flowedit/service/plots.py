"""Hand-rolled SVG line charts for run metrics.

No plotting library: output must be byte-deterministic and test-greppable
(each series lives in a <g id="..."> group).
"""

from __future__ import annotations

import json
from pathlib import Path

_W, _H = 640, 360
_MARGIN = 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _polyline(xs, ys, x_range, y_range) -> str:
    x0, x1 = x_range
    y0, y1 = y_range
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    pts = []
    for x, y in zip(xs, ys):
        px = _MARGIN + (x - x0) / span_x * (_W - 2 * _MARGIN)
        py = _H - _MARGIN - (y - y0) / span_y * (_H - 2 * _MARGIN)
        pts.append(f"{px:.2f},{py:.2f}")
    return " ".join(pts)


def write_svg(path: str | Path, title: str, series: dict, x_label: str, y_range=None) -> Path:
    """series: name -> (xs, ys); each series becomes <g id=name>."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    x_range = (min(xs_all, default=0.0), max(xs_all, default=1.0))
    if y_range is None:
        y_range = (min(ys_all, default=0.0), max(ys_all, default=1.0))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{_W / 2:.0f}" y="{_H - 10}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" y2="{_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" y2="{_H - _MARGIN}" stroke="black"/>',
    ]
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = _polyline(xs, ys, x_range, y_range)
        lines.append(f'<g id="{name}">')
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        lines.append(f'<text x="{_W - _MARGIN + 4}" y="{_MARGIN + 16 * i}" font-size="10" fill="{color}">{name}</text>')
        lines.append("</g>")
    lines.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_metrics(path: str | Path) -> tuple[list[dict], list[dict], list[dict]]:
    """Split a metrics.jsonl into (train records, episode records, eval records)."""
    train, episodes, evals = [], [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if "critic_loss" in row and "episode" not in row:
            train.append(row)
        elif "episode" in row:
            episodes.append(row)
        elif "eval_successes" in row:
            evals.append(row)
    return train, episodes, evals


def rolling_mean(values, window: int) -> list[float]:
    out = []
    acc = []
    for v in values:
        acc.append(v)
        if len(acc) > window:
            acc.pop(0)
        out.append(sum(acc) / len(acc))
    return out


def emit_plots(metrics_path: str | Path, out_dir: str | Path, window: int = 20) -> list[Path]:
    """Training success/intervention-rate curves plus episode-time curve."""
    _, episodes, _ = load_metrics(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xs = [float(e["env_step"]) for e in episodes]
    success = rolling_mean([float(e["success"]) for e in episodes], window)
    intervention = rolling_mean([float(e["intervention_rate"]) for e in episodes], window)
    times = rolling_mean([float(e["time_s"]) for e in episodes], window)
    paths = [
        write_svg(
            out_dir / "training_rates.svg",
            "success and intervention rates",
            {"success_rate": (xs, success), "intervention_rate": (xs, intervention)},
            "environment steps",
            y_range=(0.0, 1.0),
        ),
        write_svg(
            out_dir / "episode_time.svg",
            "episode time",
            {"episode_time_s": (xs, times)},
            "environment steps",
        ),
    ]
    return paths
