"""Smoke test for the regio extension module.

Build and run from the repository root:

    cargo build -p regio-python --features extension-module
    cp target/debug/libregio.so python/regio.so
    python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import regio  # noqa: E402

TOY = HERE.parent / "data" / "toy-project"


def close(a, b, tol=1e-9):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


def main():
    h = regio.RegionHierarchy.load(str(TOY / "hierarchy.csv"))
    assert len(h.regions_at("LAU")) == 12
    assert h.ancestor("DE111001", "NUTS0") == "DE"

    pop = regio.VariableSeries.load(str(TOY / "series" / "population.csv"), "population", "LAU", h)
    assert pop.missing_regions() == ["ES111003"]
    assert pop.missing_pct() == "8.33"

    assert regio.parse_formula("2*a + b*c") == regio.parse_formula("2 * a + b * c")
    assert regio.formula_variables("population * heating_degree_days") == ["heating_degree_days", "population"]

    shares, fallback = regio.allocate(100.0, [("a", 1.0), ("b", 3.0)])
    assert dict(shares) == {"a": 25.0, "b": 75.0} and not fallback
    _, fallback = regio.allocate(10.0, [("a", 0.0), ("b", 0.0)])
    assert fallback

    diff, pct = regio.deviation(143.38, 147.27)
    assert round(pct, 2) == -2.71 and close(diff, 143.38 - 147.27)
    assert regio.rate_confidence(0.81) == "HIGH"
    weights = {row["tier"]: row["total"] for row in regio.euro_weights()}
    assert weights["euro_1"] == 3.83

    area = regio.VariableSeries.load(str(TOY / "series" / "industrial_area.csv"), "industrial_area", "LAU", h)
    filled, report = regio.impute_series(pop, [area], seed=7)
    assert not filled.missing_regions()
    assert report["method"] in ("ENSEMBLE", "MEAN_FALLBACK")

    total = regio.VariableSeries("total", "NUTS0", {"DE": 1000.0, "ES": 500.0})
    out = regio.disaggregate(total, "population", h, {"population": filled}, "MEDIUM")
    back = out.aggregate(h, "NUTS0").values()
    assert close(back["DE"], 1000.0) and close(back["ES"], 500.0)
    assert set(out.confidences().values()) <= {"MEDIUM", "LOW", "VERY_LOW"}

    with tempfile.TemporaryDirectory() as tmp:
        project = pathlib.Path(tmp) / "toy"
        shutil.copytree(TOY, project, ignore=shutil.ignore_patterns("out"))
        summary = regio.run_project(str(project / "project.json"))
        assert sorted(summary["targets"]) == [
            "employment_manufacturing",
            "fec_industry",
            "ghg_residential",
            "heating_degree_days",
        ]
        assert summary["run_report"]["max_residual"] < 1e-9

    try:
        regio.parse_formula("a * (")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed formula accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
