"""Render analysis results as machine-readable tables and self-contained SVG.

All outputs are deterministic: identical inputs produce byte-identical files.
CSV carries full double precision (shortest round-trip repr); the heatmap uses
a symmetric diverging scale, blue below average, white at zero, red above.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .analysis import AgeCurve, BaselineDistribution, DeviationMatrix, GroupMeans
from .errors import ValidationError

__all__ = [
    "HeatmapSpec",
    "emit_csv",
    "emit_heatmap_svg",
    "emit_group_table",
    "emit_age_plot_svg",
    "diverging_color",
    "top_k_labels",
]

Matrix = DeviationMatrix | GroupMeans | BaselineDistribution

_PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)


@dataclass(frozen=True)
class HeatmapSpec:
    """Row/column ordering and scale for the deviation heatmap.

    Rows are labels (typically the top-k most common in the test set, k=24 by
    default); columns are groups in spec order. The color scale is symmetric
    around zero and stretched to the largest absolute cell value.
    """

    top_k: int = 24
    label_order: tuple[str, ...] | None = None
    cell_width: int = 46
    cell_height: int = 18

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")


def _cells_of(matrix: Matrix) -> dict[tuple[str, str], float]:
    if isinstance(matrix, DeviationMatrix):
        return matrix.cells
    if isinstance(matrix, GroupMeans):
        return matrix.means
    if isinstance(matrix, BaselineDistribution):
        return matrix.prevalence
    raise ValidationError(f"cannot render a {type(matrix).__name__}")


def top_k_labels(
    labels: Sequence[str], frequencies: dict[str, int] | None, k: int
) -> tuple[str, ...]:
    """The k most frequent labels, by descending count then name; matrix order
    when no frequencies are available."""
    if frequencies is None:
        return tuple(labels[:k])
    ranked = sorted(labels, key=lambda l: (-frequencies.get(l, 0), l))
    return tuple(ranked[:k])


def emit_csv(matrix: Matrix, path: str | Path) -> None:
    """Matrix as CSV: header row of groups, one row per label, repr precision."""
    cells = _cells_of(matrix)
    path = Path(path)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["label", *matrix.groups])
    for label in matrix.labels:
        writer.writerow([label, *(repr(cells[(g, label)]) for g in matrix.groups)])
    path.write_text(buffer.getvalue(), encoding="utf-8", newline="\n")


def diverging_color(value: float, scale: float) -> str:
    """Symmetric blue-white-red hex color; zero maps exactly to white."""
    if scale <= 0 or value == 0:
        return "#ffffff"
    t = max(-1.0, min(1.0, value / scale))
    if t < 0:
        # white -> blue
        level = round(255 * (1 + t))
        return f"#{level:02x}{level:02x}ff"
    level = round(255 * (1 - t))
    return f"#ff{level:02x}{level:02x}"


def _svg_header(width: float, height: float) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" font-family="Helvetica, Arial, sans-serif">'
    )


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_heatmap_svg(matrix: DeviationMatrix, spec: HeatmapSpec, path: str | Path) -> None:
    """Deviation heatmap: one rect per cell, value in the cell tooltip."""
    if not matrix.labels or not matrix.groups:
        raise ValidationError("cannot render an empty deviation matrix")
    labels = spec.label_order if spec.label_order is not None else matrix.labels
    labels = tuple(l for l in labels if l in set(matrix.labels))[: spec.top_k]
    if not labels:
        raise ValidationError("no labels left to render after ordering/filtering")

    scale = max(abs(matrix.cells[(g, l)]) for g in matrix.groups for l in labels)
    left, top = 260, 70
    width = left + spec.cell_width * len(matrix.groups) + 20
    height = top + spec.cell_height * len(labels) + 20

    parts = [_svg_header(width, height)]
    parts.append(
        f'<text x="{left}" y="22" font-size="14" font-weight="bold">'
        f"Deviation from other-group average: {_esc(matrix.characteristic)}</text>"
    )
    for col, group in enumerate(matrix.groups):
        x = left + col * spec.cell_width + spec.cell_width / 2
        parts.append(
            f'<text x="{x:.1f}" y="{top - 8}" font-size="10" text-anchor="middle" '
            f'transform="rotate(-35 {x:.1f} {top - 8})">{_esc(group)}</text>'
        )
    for row, label in enumerate(labels):
        y = top + row * spec.cell_height
        parts.append(
            f'<text x="{left - 6}" y="{y + spec.cell_height - 5}" font-size="10" '
            f'text-anchor="end">{_esc(label)}</text>'
        )
        for col, group in enumerate(matrix.groups):
            value = matrix.cells[(group, label)]
            x = left + col * spec.cell_width
            parts.append(
                f'<rect x="{x}" y="{y}" width="{spec.cell_width}" '
                f'height="{spec.cell_height}" fill="{diverging_color(value, scale)}" '
                f'stroke="#cccccc" stroke-width="0.5">'
                f"<title>{_esc(label)} / {_esc(group)}: {value!r}</title></rect>"
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8", newline="\n")


def emit_group_table(
    means: GroupMeans, label: str, path: str | Path, format: str = "markdown"
) -> None:
    """Per-group mean table for one label, max and min groups marked.

    Ties are marked on every tied group.
    """
    if label not in means.labels:
        raise ValidationError(
            f"label {label!r} not in this analysis (labels: {list(means.labels)[:8]})"
        )
    if format not in ("markdown", "csv"):
        raise ValidationError(f"unknown table format {format!r}")
    values = {group: means.means[(group, label)] for group in means.groups}
    high = max(values.values())
    low = min(values.values())

    def marker(group: str) -> str:
        marks = []
        if values[group] == high:
            marks.append("max")
        if values[group] == low:
            marks.append("min")
        return "+".join(marks)

    rows = [(group, f"{values[group]:.5f}", marker(group)) for group in means.groups]
    path = Path(path)
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["group", f"mean_{label}", "marker"])
        writer.writerows(rows)
        path.write_text(buffer.getvalue(), encoding="utf-8", newline="\n")
        return
    lines = [
        f"| group | mean p({label}) | |",
        "| --- | --- | --- |",
    ]
    for group, value, mark in rows:
        shown = f"**{value}**" if "max" in mark else value
        lines.append(f"| {group} | {shown} | {mark} |")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def emit_age_plot_svg(curves: Sequence[AgeCurve], path: str | Path) -> None:
    """Line chart of group means over the simulated ages, over90 as the final
    categorical tick; training-prevalence overlays are dotted."""
    if not curves:
        raise ValidationError("no age curves to render")
    axis = curves[0].ages()
    for curve in curves:
        if curve.ages() != axis:
            raise ValidationError(
                f"curve {curve.label!r} has a different age axis than {curves[0].label!r}"
            )

    left, top, plot_w, plot_h = 60, 40, 760, 300
    width, height = left + plot_w + 210, top + plot_h + 50
    peak = max(
        [value for curve in curves for _, value in curve.points]
        + [v for curve in curves for _, v in (curve.overlay or ()) if v is not None]
        + [1e-9]
    )
    y_max = peak * 1.05

    def x_at(index: int) -> float:
        return left + plot_w * index / max(1, len(axis) - 1)

    def y_at(value: float) -> float:
        return top + plot_h * (1 - value / y_max)

    parts = [_svg_header(width, height)]
    parts.append(
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1 - frac)
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" font-size="10" text-anchor="end">'
            f"{frac * y_max:.3f}</text>"
        )
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" '
            f'stroke="#eeeeee" stroke-width="1"/>'
        )
    for index, age in enumerate(axis):
        if age == "over90" or (age.isdigit() and int(age) % 10 == 0):
            x = x_at(index)
            parts.append(
                f'<text x="{x:.1f}" y="{top + plot_h + 16}" font-size="10" '
                f'text-anchor="middle">{_esc(age)}</text>'
            )
    for ci, curve in enumerate(curves):
        color = _PALETTE[ci % len(_PALETTE)]
        points = " ".join(
            f"{x_at(i):.2f},{y_at(v):.2f}" for i, (_, v) in enumerate(curve.points)
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        if curve.overlay is not None:
            segments: list[list[str]] = [[]]
            for i, (_, value) in enumerate(curve.overlay):
                if value is None:
                    if segments[-1]:
                        segments.append([])
                    continue
                segments[-1].append(f"{x_at(i):.2f},{y_at(value):.2f}")
            for segment in segments:
                if len(segment) >= 2:
                    parts.append(
                        f'<polyline points="{" ".join(segment)}" fill="none" '
                        f'stroke="{color}" stroke-width="1" stroke-dasharray="4,3"/>'
                    )
        ly = top + 14 + 14 * ci
        parts.append(
            f'<line x1="{left + plot_w + 12}" y1="{ly - 4}" x2="{left + plot_w + 34}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="1.8"/>'
        )
        parts.append(
            f'<text x="{left + plot_w + 40}" y="{ly}" font-size="10">{_esc(curve.label)}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8", newline="\n")
