import pytest

from lipode.errors import FormatError
from lipode.experiments import write_csv
from lipode.plotting import render_plot
from lipode.results_analyzer import FIG1_FIELDS, FIG2_FIELDS


def _fig1_rows():
    return [
        {
            "run": run,
            "epoch": epoch,
            "weight_lipschitz": 0.01 * epoch + run,
            "gap": 0.02 * epoch,
            "projections_trained": run % 2,
        }
        for run in range(2)
        for epoch in range(1, 4)
    ]


def test_fig1_svg(tmp_path):
    csv_path = write_csv(tmp_path / "fig1.csv", FIG1_FIELDS, _fig1_rows())
    svg = render_plot(csv_path)
    assert svg == tmp_path / "fig1.svg"
    assert "<svg" in svg.read_text(encoding="utf-8")


def test_fig2_svg_with_infinite_lambda(tmp_path):
    rows = [
        {"lambda": lam, "repeat": r, "gap": 0.1 * r + (0.05 if lam else 0.2)}
        for lam in (0.0, 0.1, float("inf"))
        for r in range(2)
    ]
    csv_path = write_csv(tmp_path / "fig2.csv", FIG2_FIELDS, rows)
    svg = render_plot(csv_path, tmp_path / "plots" / "gap.svg")
    text = svg.read_text(encoding="utf-8")
    assert "<svg" in text
    assert [p.name for p in (tmp_path / "plots").iterdir()] == ["gap.svg"]


def test_unknown_table_is_rejected(tmp_path):
    path = write_csv(tmp_path / "other.csv", ["a", "b"], [{"a": 1, "b": 2}])
    with pytest.raises(FormatError) as exc:
        render_plot(path)
    assert exc.value.found == ["a", "b"]
    assert not (tmp_path / "other.svg").exists()
