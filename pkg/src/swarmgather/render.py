"""Trajectory files and static SVG snapshots.

Trajectory files are JSON lines.  The first record is a meta header:

    {"type": "meta", "n": 6, "x_w": 20.0, "y_w": 20.0, "r_bot": 1.0,
     "r_scan": 6.0, "mode": "predefined_point"}

Every following record is one step:

    {"type": "step", "episode": 0, "step": 3, "phase": "base",
     "positions": [[x, y], ...], "action": [[vx, vy], ...] | null,
     "reward": float | null}

Phase "init" records carry the initial placement (no action, no reward).
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .discovery import StepRecord
from .env import RewardMode, SwarmConfig
from .geometry import Disk, Vec2, shadow_of


class ParseFailure(Exception):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def write_trajectories(path: str, records: list[StepRecord], cfg: SwarmConfig,
                       mode: RewardMode) -> None:
    meta = {
        "type": "meta",
        "n": cfg.n,
        "x_w": cfg.x_w,
        "y_w": cfg.y_w,
        "r_bot": cfg.r_bot,
        "r_scan": None if math.isinf(cfg.r_scan) else cfg.r_scan,
        "mode": mode.value,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for rec in records:
            row = {
                "type": "step",
                "episode": rec.episode,
                "step": rec.step,
                "phase": rec.phase,
                "positions": np.asarray(rec.positions, dtype=float).tolist(),
                "action": None if rec.action is None
                          else np.asarray(rec.action, dtype=float).tolist(),
                "reward": rec.reward,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_trajectories(path: str) -> tuple[dict, list[dict]]:
    """Returns (meta, step records); raises ParseFailure with a line number
    on malformed input."""
    meta = None
    steps = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseFailure(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(row, dict) or "type" not in row:
                raise ParseFailure("record must be an object with a 'type'", lineno)
            if row["type"] == "meta":
                meta = row
            elif row["type"] == "step":
                if "positions" not in row or "episode" not in row:
                    raise ParseFailure("step record missing fields", lineno)
                steps.append(row)
            else:
                raise ParseFailure(f"unknown record type {row['type']!r}", lineno)
    if meta is None:
        raise ParseFailure("missing meta header record")
    if not steps:
        raise ParseFailure("no step records")
    return meta, steps


def _svg_header(x_w: float, y_w: float, px: int = 640) -> list[str]:
    height = int(round(px * y_w / x_w))
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{height}" '
        f'viewBox="{-x_w:.3f} {-y_w:.3f} {2 * x_w:.3f} {2 * y_w:.3f}">',
        f'<rect x="{-x_w:.3f}" y="{-y_w:.3f}" width="{2 * x_w:.3f}" '
        f'height="{2 * y_w:.3f}" fill="white" stroke="black" stroke-width="0.15"/>',
    ]


def _shadow_polygon(viewer: np.ndarray, center: np.ndarray, r_bot: float,
                    reach: float) -> str:
    """Shadow wedge between the two tangent rays, extended to `reach`."""
    region = shadow_of(Vec2(*viewer), Disk(Vec2(*center), r_bot))
    t1, t2 = region.tangent_points()
    pts = [(t1.x, t1.y), (t2.x, t2.y)]
    for t in (t2, t1):
        d = np.array([t.x - viewer[0], t.y - viewer[1]])
        d = d / np.linalg.norm(d)
        pts.append((viewer[0] + d[0] * reach, viewer[1] + d[1] * reach))
    coords = " ".join(f"{x:.4f},{-y:.4f}" for x, y in pts)
    return f'<polygon points="{coords}" fill="gray" fill-opacity="0.25"/>'


def _frame_svg(positions: np.ndarray, meta: dict, scan_rings: bool = False,
               shade_viewer: int | None = None, title: str = "") -> str:
    x_w, y_w, r_bot = meta["x_w"], meta["y_w"], meta["r_bot"]
    parts = _svg_header(x_w, y_w)
    if title:
        parts.append(f'<text x="{-x_w + 0.6:.3f}" y="{-y_w + 1.6:.3f}" '
                     f'font-size="1.2">{title}</text>')
    reach = 3.0 * math.hypot(x_w, y_w)
    if shade_viewer is not None and 0 <= shade_viewer < len(positions):
        viewer = positions[shade_viewer]
        for k, center in enumerate(positions):
            if k == shade_viewer:
                continue
            parts.append(_shadow_polygon(viewer, center, r_bot, reach))
    if scan_rings and meta.get("r_scan"):
        for x, y in positions:
            parts.append(f'<circle cx="{x:.4f}" cy="{-y:.4f}" r="{meta["r_scan"]:.4f}" '
                         f'fill="none" stroke="steelblue" stroke-width="0.06" '
                         f'stroke-dasharray="0.5,0.5"/>')
    for i, (x, y) in enumerate(positions):
        parts.append(f'<circle cx="{x:.4f}" cy="{-y:.4f}" r="{r_bot:.4f}" '
                     f'fill="#d98032" fill-opacity="0.85" stroke="black" '
                     f'stroke-width="0.08"/>')
        parts.append(f'<text x="{x:.4f}" y="{-y + 0.35:.4f}" font-size="0.9" '
                     f'text-anchor="middle">{i}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_snapshots(path: str, out_dir: str, episode: int = 0,
                     scan_rings: bool = False, shade_viewer: int | None = None,
                     stride: int | None = None) -> list[str]:
    """Write SVG snapshots for one recorded episode: the initial placement,
    the base phase's final pattern, and the last auxiliary phase's final
    pattern when present.  A positive stride additionally dumps every
    stride-th frame.  Returns the written file names."""
    meta, steps = read_trajectories(path)
    rows = [r for r in steps if r["episode"] == episode]
    if not rows:
        raise ParseFailure(f"no records for episode {episode}")
    rows.sort(key=lambda r: r["step"])
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def dump(name: str, row: dict, title: str) -> None:
        svg = _frame_svg(np.asarray(row["positions"], dtype=float), meta,
                         scan_rings, shade_viewer, title)
        full = os.path.join(out_dir, name)
        with open(full, "w", encoding="utf-8") as fh:
            fh.write(svg)
        written.append(name)

    dump("initial.svg", rows[0], f"episode {episode}: initial")
    base_rows = [r for r in rows if r["phase"] == "base"]
    aux_rows = [r for r in rows if r["phase"].startswith("aux")]
    if base_rows:
        dump("base_final.svg", base_rows[-1], f"episode {episode}: base final")
    if aux_rows:
        dump("aux_final.svg", aux_rows[-1], f"episode {episode}: auxiliary final")
    if not base_rows and not aux_rows and len(rows) > 1:
        dump("final.svg", rows[-1], f"episode {episode}: final")
    if stride and stride > 0:
        for k in range(0, len(rows), stride):
            dump(f"frame_{rows[k]['step']:05d}.svg", rows[k],
                 f"episode {episode}: step {rows[k]['step']}")
    return written
