mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use serde_json::json;

#[test]
fn check_accepts_toy_project() {
    let dir = toy_copy();
    let out = regio(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 errors"));
}

#[test]
fn unknown_formula_variable_is_named() {
    let dir = toy_copy();
    edit_json(&dir.path().join("proxy_assignment.json"), |v| {
        v[3]["formula"] = json!("population * snowfall");
    });
    let out = regio(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("snowfall"), "{}", stderr(&out));
}

#[test]
fn missing_hierarchy_is_config_error() {
    let dir = toy_copy();
    fs::remove_file(dir.path().join("hierarchy.csv")).unwrap();
    let out = regio(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("hierarchy.csv"));
}

#[test]
fn malformed_formula_fails_check() {
    let dir = toy_copy();
    edit_json(&dir.path().join("proxy_assignment.json"), |v| {
        v[1]["formula"] = json!("industrial_area * (");
    });
    let out = regio(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("proxy_assignment.json: invalid task `employment_manufacturing`"));
}

#[test]
fn complete_proxies_need_no_imputation() {
    let dir = toy_copy();
    let pop = dir.path().join("series/population.csv");
    let mut text = fs::read_to_string(&pop).unwrap();
    text.push_str("ES111003,4100\n");
    fs::write(&pop, text).unwrap();
    let out = regio(&["impute"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 imputations"));
}

#[test]
fn impute_reports_method_and_confidence() {
    let dir = toy_copy();
    let out = regio(&["impute"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("imputed population__LAU:"), "{}", stdout(&out));
    let imputed = read_output(&dir.path().join("out/imputed/population__LAU.csv"));
    assert_eq!(imputed.len(), 12);
    let gap = imputed.iter().find(|r| r.0 == "ES111003").unwrap();
    assert!(gap.1 >= 0.0);
    assert_ne!(gap.2, "VERY_HIGH");
    assert!(dir.path().join("out/imputed/population__LAU.report.json").exists());
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = toy_copy();
    edit_json(&dir.path().join("project.json"), |v| {
        v["output_dir"] = json!("project.json/out");
    });
    let out = regio(&["impute"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn disaggregate_conserves_national_totals() {
    let dir = toy_copy();
    assert_eq!(regio(&["impute"], dir.path()).status.code(), Some(0));
    let out = regio(&["disaggregate"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("4 targets written"));

    let hierarchy = fs::read_to_string(dir.path().join("hierarchy.csv")).unwrap();
    let country: BTreeMap<&str, &str> = hierarchy
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0], f[3])
        })
        .collect();
    for target in ["fec_industry", "ghg_residential"] {
        let path = dir.path().join(format!("series/{target}.csv"));
        let given: Vec<f64> = fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let rows = read_output(&dir.path().join(format!("out/lau/{target}.csv")));
        for (c, expect) in ["DE", "ES"].iter().zip(&given) {
            let sum: f64 = rows.iter().filter(|r| country[r.0.as_str()] == *c).map(|r| r.1).sum();
            assert!((sum - expect).abs() <= 1e-9 * expect, "{target} {c}: {sum} vs {expect}");
        }
    }
}

#[test]
fn empty_pipeline_writes_nothing() {
    let dir = toy_copy();
    write_json(&dir.path().join("pipeline.json"), &json!({ "stages": [] }));
    assert_eq!(regio(&["impute"], dir.path()).status.code(), Some(0));
    let out = regio(&["disaggregate"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 targets written"));
}

#[test]
fn missing_national_value_is_skipped() {
    let dir = toy_copy();
    fs::write(dir.path().join("series/fec_industry.csv"), "region,value\nDE,2318000\nES,\n").unwrap();
    assert_eq!(regio(&["impute"], dir.path()).status.code(), Some(0));
    let out = regio(&["disaggregate"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("skipped fec_industry from ES"), "{}", stdout(&out));
    let report = read_json(&dir.path().join("out/run_report.json"));
    assert_eq!(report["skipped"].as_array().unwrap().len(), 1);
}

#[test]
fn table_comparison_reports_all_rows() {
    let dir = toy_copy();
    fs::copy(fixture("city_fec.csv"), dir.path().join("reference/city_fec.csv")).unwrap();
    edit_json(&dir.path().join("project.json"), |v| {
        v["comparisons"] = json!([{ "name": "city_fec", "kind": "table", "reference": "city_fec.csv" }]);
    });
    let out = regio(&["validate"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("city_fec: 7 rows"));
    let md = fs::read_to_string(dir.path().join("out/validation/city_fec.md")).unwrap();
    for pct in ["9.99", "-1.14", "-4.39", "-15.69", "12.50", "36.36", "-100.93"] {
        assert!(md.contains(pct), "{pct} missing from\n{md}");
    }
}

#[test]
fn no_comparisons_is_not_an_error() {
    let dir = toy_copy();
    edit_json(&dir.path().join("project.json"), |v| {
        v["comparisons"] = json!([]);
    });
    let out = regio(&["validate"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("no comparisons"));
}

#[test]
fn zero_reported_value_is_flagged() {
    let dir = toy_copy();
    fs::write(
        dir.path().join("reference/pairs.csv"),
        "label,reported,disaggregated\nA,10,9\nB,0,4\n",
    )
    .unwrap();
    edit_json(&dir.path().join("project.json"), |v| {
        v["comparisons"] = json!([{ "name": "pairs", "kind": "table", "reference": "pairs.csv" }]);
    });
    let out = regio(&["validate"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("UndefinedDeviation for B"), "{}", stdout(&out));
    let csv = fs::read_to_string(dir.path().join("out/validation/pairs.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("B,") && l.ends_with(",UndefinedDeviation")));
    assert!(csv.contains("A,10,9,1,10\n"), "{csv}");
}

#[test]
fn validate_needs_disaggregated_outputs() {
    let dir = toy_copy();
    let out = regio(&["validate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("disaggregate"));
}

#[test]
fn seed_from_environment_overrides_config() {
    let reference = toy_copy();
    assert_eq!(regio(&["impute"], reference.path()).status.code(), Some(0));

    let other = toy_copy();
    edit_json(&other.path().join("project.json"), |v| {
        v["seed"] = json!(99);
    });
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_regio"))
        .args(["impute", "--config"])
        .arg(other.path().join("project.json"))
        .env("REGIO_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let file = "out/imputed/population__LAU.report.json";
    assert_eq!(
        fs::read(reference.path().join(file)).unwrap(),
        fs::read(other.path().join(file)).unwrap()
    );
}

#[test]
fn run_performs_every_step() {
    let dir = toy_copy();
    let out = regio(&["run", "--jobs", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("0 errors"));
    assert!(text.contains("4 targets written"));
    assert!(text.contains("ghg_residential_nuts2: 3 rows"));
    assert!(text.contains("ghg_residential_towns: 2 rows"));
}
