import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellwise.errors import ConfigError
from cellwise.render import SATURATION, CellmapSpec, aggregate, cell_color, cellmap_svg, render_cellmap

SVG = "{http://www.w3.org/2000/svg}"


def cell_fills(svg):
    root = ET.fromstring(svg)
    return [r.get("fill") for r in root.iter(SVG + "rect")
            if r.get("width") == "16" and r.get("stroke") == "#dddddd"]


def test_color_endpoints():
    assert cell_color(0.0) == (255, 255, 255)
    assert cell_color(-6.0) == (0, 0, 255)
    assert cell_color(6.0) == (255, 0, 0)
    assert cell_color(100.0) == (255, 0, 0)
    assert cell_color(float("nan")) == (255, 255, 255)
    assert cell_color(-np.inf) == (0, 0, 255)


def test_color_at_cutoff_is_white():
    assert cell_color(2.5, cutoff=2.5) == (255, 255, 255)
    assert cell_color(-2.5, cutoff=2.5) == (255, 255, 255)


@settings(max_examples=100)
@given(st.floats(0, 20), st.floats(0, 20))
def test_color_monotone_in_magnitude(a, b):
    lo, hi = sorted((a, b))
    assert cell_color(hi)[1] <= cell_color(lo)[1]
    assert cell_color(-hi)[0] <= cell_color(-lo)[0]
    r, g, bl = cell_color(hi)
    assert r == 255 and g == bl


def test_aggregation_averages_blocks():
    res = np.array([[6.0, 0.0, 1.0]])
    agg, rb, cb = aggregate(res, np.zeros_like(res, bool), 2)
    # two columns per block: (6 + 0) / 2 = 3, then the lone 1
    assert agg.tolist() == [[3.0, 1.0]]
    assert cb == [(0, 2), (2, 3)]
    svg = cellmap_svg(CellmapSpec(res, max_cells_per_axis=2))
    expected = cell_color(3.0)
    assert cell_fills(svg)[0] == "rgb({},{},{})".format(*expected)


def test_aggregation_skips_missing():
    res = np.array([[np.nan, 4.0], [np.nan, np.nan]])
    agg, _, _ = aggregate(res, np.isnan(res), 1)
    assert agg.tolist() == [[4.0]]


def test_missing_cells_are_hatched():
    res = np.array([[0.0, np.nan], [5.0, -5.0]])
    svg = cellmap_svg(CellmapSpec(res))
    assert svg.count('fill="url(#hatch)"') == 1
    assert 'id="hatch"' in svg
    fills = cell_fills(svg)
    assert fills[1] == "rgb(255,255,255)"


def test_explicit_missing_mask():
    res = np.zeros((2, 2))
    mask = np.array([[True, False], [False, True]])
    assert cellmap_svg(CellmapSpec(res, missing_mask=mask)).count("url(#hatch)") == 2


def test_golden_two_by_two():
    res = np.array([[0.0, 6.0], [-6.0, np.nan]])
    svg = cellmap_svg(CellmapSpec(res, cutoff=2.0, row_labels=["a", "b"], column_labels=["x", "y"],
                                  case_shades=[0.0, 1.0]))
    expected = """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="112" height="112" viewBox="0 0 112 112">
<defs><pattern id="hatch" patternUnits="userSpaceOnUse" width="4" height="4"><path d="M0,4 L4,0" stroke="#888888" stroke-width="0.6"/></pattern></defs>
<rect x="0" y="0" width="112" height="112" fill="#ffffff"/>
<rect x="80" y="80" width="16" height="16" fill="rgb(255,255,255)" stroke="#dddddd" stroke-width="0.5"/>
<rect x="96" y="80" width="16" height="16" fill="rgb(255,0,0)" stroke="#dddddd" stroke-width="0.5"/>
<rect x="80" y="96" width="16" height="16" fill="rgb(0,0,255)" stroke="#dddddd" stroke-width="0.5"/>
<rect x="96" y="96" width="16" height="16" fill="rgb(255,255,255)" stroke="#dddddd" stroke-width="0.5"/>
<rect x="96" y="96" width="16" height="16" fill="url(#hatch)"/>
<rect x="80" y="96" width="32" height="16" fill="#000000" fill-opacity="0.6"/>
<text x="76" y="92" font-size="10" text-anchor="end">a</text>
<text x="76" y="108" font-size="10" text-anchor="end">b</text>
<text x="88" y="76" font-size="10" transform="rotate(-90 88 76)">x</text>
<text x="104" y="76" font-size="10" transform="rotate(-90 104 76)">y</text>
</svg>
"""
    assert svg == expected


def test_svg_is_deterministic_and_well_formed():
    res = np.random.default_rng(0).standard_normal((30, 7)) * 3
    spec = CellmapSpec(res, row_labels=[f"r<{i}>" for i in range(30)],
                       column_labels=[f"c&{j}" for j in range(7)], case_shades=np.linspace(0, 1, 30))
    a, b = cellmap_svg(spec), cellmap_svg(spec)
    assert a == b
    root = ET.fromstring(a)
    assert root.tag == SVG + "svg"
    assert len(cell_fills(a)) == 30 * 7


def test_large_map_is_capped():
    res = np.random.default_rng(1).standard_normal((1000, 250))
    svg = cellmap_svg(CellmapSpec(res, max_cells_per_axis=100))
    assert len(cell_fills(svg)) == 100 * 84


def test_case_shading_only_for_shaded_rows():
    res = np.zeros((3, 2))
    svg = cellmap_svg(CellmapSpec(res, case_shades=[0.0, 0.5, 0.0]))
    opac = re.findall(r'fill-opacity="([^"]+)"', svg)
    assert opac == ["0.3"]


@pytest.mark.parametrize("kwargs", [
    dict(std_residuals=np.zeros(3)),
    dict(std_residuals=np.zeros((2, 2)), missing_mask=np.zeros((3, 2), bool)),
    dict(std_residuals=np.zeros((2, 2)), case_shades=[0.5, 1.5]),
    dict(std_residuals=np.zeros((2, 2)), row_labels=["a"]),
    dict(std_residuals=np.zeros((2, 2)), column_labels=["a", "b", "c"]),
    dict(std_residuals=np.zeros((2, 2)), cutoff=SATURATION),
    dict(std_residuals=np.zeros((2, 2)), cutoff=0.0),
    dict(std_residuals=np.zeros((2, 2)), max_cells_per_axis=0),
])
def test_validation_errors(kwargs):
    with pytest.raises(ConfigError):
        CellmapSpec(**kwargs).validate()


def test_render_writes_file(tmp_path):
    p = tmp_path / "map.svg"
    svg = render_cellmap(CellmapSpec(np.eye(3) * 4), p)
    assert p.read_text() == svg


def test_unwritable_path(tmp_path):
    with pytest.raises(ConfigError):
        render_cellmap(CellmapSpec(np.zeros((2, 2))), tmp_path / "no" / "such" / "dir" / "m.svg")
