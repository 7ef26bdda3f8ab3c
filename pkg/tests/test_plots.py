import csv
import math
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hda import plots
from hda.diagnostics import MetricsRecord
from hda.runner import config_from_dict, run_experiment

SVG = "{http://www.w3.org/2000/svg}"


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _row(epoch, **over):
    base = dict(zip(MetricsRecord.columns(2), [epoch] + [0.5] * (len(MetricsRecord.columns(2)) - 1)))
    base.update(over)
    return [base[c] for c in MetricsRecord.columns(2)]


def test_single_row_gives_valid_svgs(tmp_path):
    csv_path = _write(tmp_path / "m.csv", MetricsRecord.columns(2), [_row(0, cos_gh=-1.0)])
    paths = plots.plot_metrics(csv_path, tmp_path / "out")
    assert sorted(p.stem for p in paths) == ["cos_gh", "h_ranges", "kurtosis", "losses", "probes"]
    for p in paths:
        root = ET.parse(p).getroot()
        assert root.tag == SVG + "svg" and root.get("version") == "1.1"
        # one point per series: drawn as a marker, never a one-vertex polyline
        assert not root.findall(SVG + "polyline")
        assert root.findall(SVG + "circle")


def test_missing_column_is_named(tmp_path):
    header = [c for c in MetricsRecord.columns(2) if c != "kurt_g"]
    csv_path = _write(tmp_path / "m.csv", header, [[0] * len(header)])
    with pytest.raises(plots.MetricsParseError, match="missing column 'kurt_g'"):
        plots.read_metrics(csv_path)


def test_missing_head_range_columns(tmp_path):
    header = [c for c in MetricsRecord.columns(2) if not c.startswith("h_range")]
    csv_path = _write(tmp_path / "m.csv", header, [[0] * len(header)])
    with pytest.raises(plots.MetricsParseError, match="h_range_1"):
        plots.read_metrics(csv_path)


def test_short_row_reports_line_number(tmp_path):
    cols = MetricsRecord.columns(2)
    csv_path = _write(tmp_path / "m.csv", cols, [_row(0), _row(1), _row(2)[:-3]])
    with pytest.raises(plots.MetricsParseError, match="line 4: expected"):
        plots.read_metrics(csv_path)


def test_non_numeric_cell_reports_line_and_column(tmp_path):
    csv_path = _write(tmp_path / "m.csv", MetricsRecord.columns(2), [_row(0), _row(1, l_h="abc")])
    with pytest.raises(plots.MetricsParseError, match=r"line 3: column 'l_h'"):
        plots.read_metrics(csv_path)


@pytest.mark.parametrize("content", ["", "\n", ",".join(MetricsRecord.columns(1)) + "\n"])
def test_empty_files_rejected(tmp_path, content):
    p = tmp_path / "m.csv"
    p.write_text(content)
    with pytest.raises(plots.MetricsParseError):
        plots.read_metrics(p)


def test_unreadable_path(tmp_path):
    with pytest.raises(plots.MetricsParseError, match="cannot open"):
        plots.read_metrics(tmp_path / "absent.csv")


def test_non_finite_points_are_dropped():
    svg = plots.line_chart_svg("t", [0, 1, 2], [("a", [1.0, math.nan, 3.0])])
    root = ET.fromstring(svg)
    (line,) = root.findall(SVG + "polyline")
    assert len(line.get("points").split()) == 2


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
def test_chart_is_always_wellformed(ys):
    svg = plots.line_chart_svg("a < b & c", list(range(len(ys))), [("s", ys)])
    root = ET.fromstring(svg)
    assert root.find(SVG + "title").text == "a < b & c"
    for el in root.iter():
        for attr in ("x", "y", "x1", "y1", "cx", "cy"):
            if el.get(attr) is not None:
                assert math.isfinite(float(el.get(attr)))


def test_fifty_epoch_run_cosine_chart(tmp_path):
    cfg = config_from_dict({"task": {"n_per_domain": 60}, "optim": {"epochs": 50, "batch_size": 32},
                            "model": {"hidden": 8}})
    s = run_experiment(cfg, output_dir=tmp_path / "run")
    assert s.status == "ok"
    cols = plots.read_metrics(tmp_path / "run" / "metrics.csv")
    assert cols["epoch"] == [float(e) for e in range(51)]
    assert cols["cos_gh"][0] <= -0.99
    paths = {p.stem: p for p in plots.plot_metrics(tmp_path / "run" / "metrics.csv", tmp_path / "svg")}
    root = ET.parse(paths["cos_gh"]).getroot()
    (line,) = root.findall(SVG + "polyline")
    assert len(line.get("points").split()) == 51
    h_root = ET.parse(paths["h_ranges"]).getroot()
    assert len(h_root.findall(SVG + "polyline")) == 3
