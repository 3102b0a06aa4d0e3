from __future__ import annotations

import csv
import re

import pytest

from noteprobe.analysis import AgeCurve, DeviationMatrix, GroupMeans, deviation
from noteprobe.errors import ValidationError
from noteprobe.report import (
    HeatmapSpec,
    diverging_color,
    emit_age_plot_svg,
    emit_csv,
    emit_group_table,
    emit_heatmap_svg,
    top_k_labels,
)


def _means(values: dict[str, dict[str, float]], characteristic: str = "x") -> GroupMeans:
    groups = tuple(values)
    labels = tuple(next(iter(values.values())))
    return GroupMeans(
        characteristic=characteristic,
        groups=groups,
        labels=labels,
        means={(g, l): values[g][l] for g in groups for l in labels},
        cohort_size=1,
    )


def _gender_table3_matrix() -> DeviationMatrix:
    return deviation(
        _means(
            {
                "female": {"mortality": 0.335},
                "male": {"mortality": 0.333},
                "transgender": {"mortality": 0.326},
            },
            characteristic="gender",
        )
    )


# --- csv -----------------------------------------------------------------------


def test_csv_one_label_two_groups(tmp_path) -> None:
    path = tmp_path / "m.csv"
    emit_csv(_means({"a": {"m": 0.25}, "b": {"m": 0.75}}), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ["label,a,b", "m,0.25,0.75"]


def test_csv_row_sums_of_deviations_are_zero(tmp_path) -> None:
    path = tmp_path / "dev.csv"
    emit_csv(_gender_table3_matrix(), path)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    values = [float(v) for v in rows[1][1:]]
    assert abs(sum(values)) < 1e-9


def test_csv_parse_back_full_precision(tmp_path) -> None:
    matrix = deviation(
        _means({"a": {"m": 1 / 3, "n": 0.1}, "b": {"m": 2 / 7, "n": 0.9}})
    )
    path = tmp_path / "dev.csv"
    emit_csv(matrix, path)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    assert header == ["label", "a", "b"]
    for row in rows[1:]:
        label = row[0]
        for group, text in zip(header[1:], row[1:]):
            assert float(text) == matrix.cells[(group, label)]


def test_csv_deterministic_bytes(tmp_path) -> None:
    matrix = _gender_table3_matrix()
    emit_csv(matrix, tmp_path / "a.csv")
    emit_csv(matrix, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# --- color scale ------------------------------------------------------------------


def test_zero_maps_to_white() -> None:
    assert diverging_color(0.0, 1.0) == "#ffffff"
    assert diverging_color(0.0, 0.0) == "#ffffff"


def test_color_scale_symmetry() -> None:
    for value in (0.1, 0.33, 0.5, 1.0):
        positive = diverging_color(value, 1.0)
        negative = diverging_color(-value, 1.0)
        # red channel of the positive equals blue channel of the negative, etc.
        assert positive[1:3] == "ff" and negative[5:7] == "ff"
        assert positive[3:5] == negative[3:5]
        assert positive[5:7] == negative[1:3]


def test_color_extremes() -> None:
    assert diverging_color(1.0, 1.0) == "#ff0000"
    assert diverging_color(-1.0, 1.0) == "#0000ff"


# --- heatmap ------------------------------------------------------------------------


def test_heatmap_all_zero_is_all_white(tmp_path) -> None:
    # 0.5 is exact in binary, so every deviation is exactly zero
    matrix = deviation(_means({g: {"m": 0.5, "n": 0.5} for g in "abc"}))
    path = tmp_path / "h.svg"
    emit_heatmap_svg(matrix, HeatmapSpec(), path)
    svg = path.read_text(encoding="utf-8")
    fills = re.findall(r'fill="(#[0-9a-f]{6})"', svg)
    assert fills and set(fills) == {"#ffffff"}


def test_heatmap_single_positive_cell_is_reddest(tmp_path) -> None:
    means = _means({"a": {"m": 0.6, "n": 0.4}, "b": {"m": 0.4, "n": 0.4}})
    matrix = deviation(means)
    path = tmp_path / "h.svg"
    emit_heatmap_svg(matrix, HeatmapSpec(), path)
    svg = path.read_text(encoding="utf-8")
    assert "#ff0000" in svg  # cell (a, m) carries the max deviation
    assert svg.count("#ff0000") == 1


def test_heatmap_gender_example_columns_and_bluest(tmp_path) -> None:
    matrix = _gender_table3_matrix()
    path = tmp_path / "h.svg"
    emit_heatmap_svg(matrix, HeatmapSpec(), path)
    svg = path.read_text(encoding="utf-8")
    assert svg.index(">female<") < svg.index(">male<") < svg.index(">transgender<")
    fills = re.findall(r'fill="(#[0-9a-f]{6})"', svg)
    cells = [f for f in fills if f != "#ffffff"]
    assert len(cells) == 3
    # transgender has the largest |c| and is negative, so it is pure blue
    assert cells[2] == "#0000ff"
    assert cells[0].startswith("#ff") and cells[1].startswith("#ff")


def test_heatmap_rejects_empty_and_unknown_order(tmp_path) -> None:
    matrix = _gender_table3_matrix()
    with pytest.raises(ValidationError):
        emit_heatmap_svg(matrix, HeatmapSpec(label_order=("nope",)), tmp_path / "x.svg")


def test_heatmap_deterministic(tmp_path) -> None:
    matrix = _gender_table3_matrix()
    emit_heatmap_svg(matrix, HeatmapSpec(), tmp_path / "a.svg")
    emit_heatmap_svg(matrix, HeatmapSpec(), tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_top_k_labels_by_frequency() -> None:
    labels = ("a", "b", "c", "d")
    assert top_k_labels(labels, {"a": 1, "b": 9, "c": 9, "d": 2}, 3) == ("b", "c", "d")
    assert top_k_labels(labels, None, 2) == ("a", "b")


# --- group table -----------------------------------------------------------------


def test_group_table_marks_no_mention_max(tmp_path) -> None:
    means = _means(
        {
            "no_mention": {"mortality": 0.333},
            "white": {"mortality": 0.329},
            "african_american": {"mortality": 0.329},
            "hispanic": {"mortality": 0.331},
            "asian": {"mortality": 0.330},
        },
        characteristic="ethnicity",
    )
    path = tmp_path / "table.md"
    emit_group_table(means, "mortality", path)
    lines = path.read_text(encoding="utf-8").splitlines()
    row = {line.split("|")[1].strip(): line for line in lines[2:]}
    assert "max" in row["no_mention"] and "**0.33300**" in row["no_mention"]
    assert "min" in row["white"] and "min" in row["african_american"]
    assert "max" not in row["hispanic"] and "min" not in row["hispanic"]


def test_group_table_single_group_is_max_and_min(tmp_path) -> None:
    means = GroupMeans(
        characteristic="x",
        groups=("only",),
        labels=("m",),
        means={("only", "m"): 0.5},
        cohort_size=1,
    )
    path = tmp_path / "t.csv"
    emit_group_table(means, "m", path, format="csv")
    body = path.read_text(encoding="utf-8").splitlines()
    assert body[1] == "only,0.50000,max+min"


def test_group_table_ties_mark_all(tmp_path) -> None:
    means = _means({"a": {"m": 0.2}, "b": {"m": 0.2}, "c": {"m": 0.8}})
    path = tmp_path / "t.csv"
    emit_group_table(means, "m", path, format="csv")
    rows = path.read_text(encoding="utf-8").splitlines()
    assert rows[1].endswith("min") and rows[2].endswith("min")
    assert rows[3].endswith("max")


def test_group_table_unknown_label_or_format(tmp_path) -> None:
    means = _means({"a": {"m": 0.2}, "b": {"m": 0.3}})
    with pytest.raises(ValidationError, match="label"):
        emit_group_table(means, "nope", tmp_path / "t.md")
    with pytest.raises(ValidationError, match="format"):
        emit_group_table(means, "m", tmp_path / "t.md", format="html")


# --- age plot -----------------------------------------------------------------------


def _flat_curve(value: float = 0.5, label: str = "m") -> AgeCurve:
    ages = tuple(str(a) for a in range(18, 90)) + ("over90",)
    return AgeCurve(label=label, points=tuple((a, value) for a in ages))


def test_age_plot_flat_curve_is_horizontal(tmp_path) -> None:
    path = tmp_path / "age.svg"
    emit_age_plot_svg([_flat_curve(0.5)], path)
    svg = path.read_text(encoding="utf-8")
    polyline = re.search(r'<polyline points="([^"]+)"', svg).group(1)
    ys = {point.split(",")[1] for point in polyline.split()}
    assert len(ys) == 1


def test_age_plot_overlay_uses_dashes(tmp_path) -> None:
    ages = tuple(str(a) for a in range(18, 90)) + ("over90",)
    curve = AgeCurve(
        label="m",
        points=tuple((a, 0.4) for a in ages),
        overlay=tuple((a, 0.2 if a != "44" else None) for a in ages),
    )
    path = tmp_path / "age.svg"
    emit_age_plot_svg([curve], path)
    svg = path.read_text(encoding="utf-8")
    assert "stroke-dasharray" in svg
    assert svg.count("<polyline") >= 3  # solid line + overlay split around the gap


def test_age_plot_spike_is_visible_maximum(tmp_path) -> None:
    ages = tuple(str(a) for a in range(18, 90)) + ("over90",)
    points = tuple((a, 0.8 if a == "74" else 0.5) for a in ages)
    path = tmp_path / "age.svg"
    emit_age_plot_svg([AgeCurve(label="m", points=points)], path)
    svg = path.read_text(encoding="utf-8")
    polyline = re.search(r'<polyline points="([^"]+)"', svg).group(1)
    coords = [tuple(map(float, point.split(","))) for point in polyline.split()]
    spike_index = ages.index("74")
    lowest_y = min(y for _, y in coords)  # svg y grows downward
    assert coords[spike_index][1] == lowest_y
    assert sum(1 for _, y in coords if y == lowest_y) == 1


def test_age_plot_ragged_axes_rejected(tmp_path) -> None:
    good = _flat_curve()
    bad = AgeCurve(label="n", points=good.points[:-1])
    with pytest.raises(ValidationError, match="axis"):
        emit_age_plot_svg([good, bad], tmp_path / "x.svg")


def test_age_plot_deterministic(tmp_path) -> None:
    curves = [_flat_curve(0.5, "m"), _flat_curve(0.2, "n")]
    emit_age_plot_svg(curves, tmp_path / "a.svg")
    emit_age_plot_svg(curves, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
