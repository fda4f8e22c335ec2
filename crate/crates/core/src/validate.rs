//! Deviation reports against reference inventories.
//!
//! The percentage deviation is anchored on the reported value:
//! `pct = 100 · (reported − disaggregated) / reported`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_2dp, fmt_f64};
use crate::region::{RegionHierarchy, SpatialLevel};
use crate::store::{aggregate, VariableSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub label: String,
    pub reported: f64,
    pub disaggregated: f64,
    pub difference: f64,
    pub pct_deviation: f64,
}

impl DeviationRow {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Deviation of `disaggregated` from `reported`, unlabelled.
pub fn deviation(reported: f64, disaggregated: f64) -> Result<DeviationRow> {
    labelled(String::new(), reported, disaggregated)
}

fn labelled(label: String, reported: f64, disaggregated: f64) -> Result<DeviationRow> {
    if reported == 0.0 {
        return Err(Error::UndefinedDeviation(label));
    }
    let difference = reported - disaggregated;
    Ok(DeviationRow {
        label,
        reported,
        disaggregated,
        difference,
        pct_deviation: 100.0 * difference / reported,
    })
}

/// One report line; rows with a zero reported value are flagged, not fatal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReportRow {
    Computed(DeviationRow),
    Undefined {
        label: String,
        reported: f64,
        disaggregated: f64,
    },
}

impl ReportRow {
    fn new(label: String, reported: f64, disaggregated: f64) -> Self {
        match labelled(label.clone(), reported, disaggregated) {
            Ok(row) => ReportRow::Computed(row),
            Err(_) => ReportRow::Undefined {
                label,
                reported,
                disaggregated,
            },
        }
    }

    pub fn label(&self) -> &str {
        match self {
            ReportRow::Computed(r) => &r.label,
            ReportRow::Undefined { label, .. } => label,
        }
    }

    pub fn computed(&self) -> Option<&DeviationRow> {
        match self {
            ReportRow::Computed(r) => Some(r),
            ReportRow::Undefined { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub rows: Vec<ReportRow>,
    /// Reference entries with no counterpart in the result.
    pub unmatched: Vec<String>,
}

impl DeviationReport {
    pub fn computed(&self) -> impl Iterator<Item = &DeviationRow> {
        self.rows.iter().filter_map(ReportRow::computed)
    }

    pub fn undefined(&self) -> impl Iterator<Item = &str> {
        self.rows
            .iter()
            .filter(|r| r.computed().is_none())
            .map(ReportRow::label)
    }
}

/// A reference value, identified by region code, by label, or both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub region: Option<String>,
    pub label: Option<String>,
    pub value: Option<f64>,
}

impl ReferenceRow {
    pub fn display(&self) -> &str {
        self.label.as_deref().or(self.region.as_deref()).unwrap_or("")
    }
}

type NumberedRecords = Vec<(u64, csv::StringRecord)>;

fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<(Vec<String>, NumberedRecords)> {
    let wrap = |source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers().map_err(wrap)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn number(cell: &str, line: u64) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::NonNumericValue(cell.to_string()).at_line(line))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(cell.to_string()).at_line(line));
    }
    Ok(Some(v))
}

fn opt(cell: &str) -> Option<String> {
    (!cell.is_empty()).then(|| cell.to_string())
}

/// Reads `region,value` rows with an optional `label` column (any order).
pub fn read_reference(reader: impl Read, origin: &Path) -> Result<Vec<ReferenceRow>> {
    let (header, rows) = read_csv(reader, origin)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ri), Some(vi)) = (col("region"), col("value")) else {
        return Err(Error::BadHeader {
            expected: "region,value[,label]".into(),
            found: header.join(","),
        });
    };
    let li = col("label");
    rows.into_iter()
        .map(|(line, rec)| {
            Ok(ReferenceRow {
                region: opt(&rec[ri]),
                label: li.and_then(|i| opt(&rec[i])),
                value: number(&rec[vi], line)?,
            })
        })
        .collect()
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<Vec<ReferenceRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_reference(file, path)
}

/// Reads a `label,reported,disaggregated` table.
pub fn read_pair_table(reader: impl Read, origin: &Path) -> Result<Vec<(String, f64, f64)>> {
    let (header, rows) = read_csv(reader, origin)?;
    if header != ["label", "reported", "disaggregated"] {
        return Err(Error::BadHeader {
            expected: "label,reported,disaggregated".into(),
            found: header.join(","),
        });
    }
    rows.into_iter()
        .map(|(line, rec)| {
            let value = |i: usize| {
                number(&rec[i], line)?.ok_or_else(|| Error::NonNumericValue(String::new()).at_line(line))
            };
            Ok((rec[0].to_string(), value(1)?, value(2)?))
        })
        .collect()
}

pub fn load_pair_table(path: impl AsRef<Path>) -> Result<Vec<(String, f64, f64)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_pair_table(file, path)
}

/// Report over explicit `(label, reported, disaggregated)` triples.
pub fn deviation_table(pairs: &[(String, f64, f64)]) -> DeviationReport {
    DeviationReport {
        rows: pairs
            .iter()
            .map(|(l, r, d)| ReportRow::new(l.clone(), *r, *d))
            .collect(),
        unmatched: Vec::new(),
    }
}

/// Per-sector deviation of `value_b` from `value_a`.
pub fn sector_comparison_report(pairs: &[(&str, f64, f64)]) -> Result<Vec<DeviationRow>> {
    pairs
        .iter()
        .map(|(sector, a, b)| labelled(sector.to_string(), *a, *b))
        .collect()
}

/// Compares `result` against reference rows after aggregating it to
/// `level`. Rows without a region code are joined through `label_map`
/// (label → region); anything that cannot be joined is listed as unmatched.
pub fn compare_reference(
    result: &VariableSeries,
    reference: &[ReferenceRow],
    label_map: &BTreeMap<String, String>,
    h: &RegionHierarchy,
    level: SpatialLevel,
) -> Result<DeviationReport> {
    let aggregated;
    let at_level = if result.level == level {
        result.ensure_complete()?;
        result
    } else {
        aggregated = aggregate(result, h, level, false)?;
        &aggregated
    };
    let mut report = DeviationReport::default();
    for row in reference {
        let region = row
            .region
            .as_ref()
            .or_else(|| row.label.as_ref().and_then(|l| label_map.get(l)));
        match (region.and_then(|r| at_level.value(r)), row.value) {
            (Some(d), Some(r)) => report.rows.push(ReportRow::new(row.display().to_string(), r, d)),
            _ => report.unmatched.push(row.display().to_string()),
        }
    }
    if report.rows.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(report)
}

/// Compares `result` with a reference series at `level`, labelling rows by
/// region code.
pub fn compare_at_level(
    result: &VariableSeries,
    reference: &VariableSeries,
    h: &RegionHierarchy,
    level: SpatialLevel,
) -> Result<DeviationReport> {
    let rows: Vec<ReferenceRow> = reference
        .observations
        .values()
        .map(|o| ReferenceRow {
            region: Some(o.region.clone()),
            label: None,
            value: o.value,
        })
        .collect();
    compare_reference(result, &rows, &BTreeMap::new(), h, level)
}

pub const UNDEFINED_FLAG: &str = "UndefinedDeviation";

/// `label,reported,disaggregated,difference,pct_deviation` at full
/// precision; flagged rows carry `UndefinedDeviation` as their percentage.
pub fn write_report_csv(report: &DeviationReport, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |source| Error::Csv {
        path: "<deviation report>".into(),
        source,
    };
    w.write_record(["label", "reported", "disaggregated", "difference", "pct_deviation"])
        .map_err(wrap)?;
    for row in &report.rows {
        let record = match row {
            ReportRow::Computed(r) => [
                r.label.clone(),
                fmt_f64(r.reported),
                fmt_f64(r.disaggregated),
                fmt_f64(r.difference),
                fmt_f64(r.pct_deviation),
            ],
            ReportRow::Undefined {
                label,
                reported,
                disaggregated,
            } => [
                label.clone(),
                fmt_f64(*reported),
                fmt_f64(*disaggregated),
                fmt_f64(reported - disaggregated),
                UNDEFINED_FLAG.to_string(),
            ],
        };
        w.write_record(&record).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<deviation report>".into(),
        source,
    })
}

/// Markdown table with values rounded to two decimals for display.
pub fn render_markdown(title: &str, report: &DeviationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}\n");
    out.push_str("| Label | Reported | Disaggregated | Difference | Percentage deviation (%) |\n");
    out.push_str("|---|---:|---:|---:|---:|\n");
    for row in &report.rows {
        let _ = match row {
            ReportRow::Computed(r) => writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.label,
                fmt_2dp(r.reported),
                fmt_2dp(r.disaggregated),
                fmt_2dp(r.difference),
                fmt_2dp(r.pct_deviation)
            ),
            ReportRow::Undefined {
                label,
                reported,
                disaggregated,
            } => writeln!(
                out,
                "| {label} | {} | {} | {} | undefined |",
                fmt_2dp(*reported),
                fmt_2dp(*disaggregated),
                fmt_2dp(reported - disaggregated)
            ),
        };
    }
    if !report.unmatched.is_empty() {
        let _ = writeln!(out, "\nUnmatched: {}", report.unmatched.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::round_half_up;

    #[test]
    fn deviation_examples() {
        let r = deviation(9_822_750.0, 8_841_562.0).unwrap();
        assert_eq!(r.difference, 981_188.0);
        assert_eq!(fmt_2dp(r.pct_deviation), "9.99");
        let r = deviation(1_078_192.20, 2_166_460.60).unwrap();
        assert_eq!(fmt_2dp(r.pct_deviation), "-100.93");
        let r = deviation(5.5, 5.5).unwrap();
        assert_eq!(r.difference, 0.0);
        assert_eq!(fmt_2dp(r.pct_deviation), "0.00");
        assert!(matches!(deviation(0.0, 1.0), Err(Error::UndefinedDeviation(_))));
    }

    #[test]
    fn sector_rows() {
        let rows = sector_comparison_report(&[("Transport DE", 143.38, 147.27), ("Transport ES", 83.51, 90.21)]).unwrap();
        assert_eq!(round_half_up(rows[0].pct_deviation, 2), -2.71);
        assert_eq!(round_half_up(rows[1].pct_deviation, 2), -8.02);
        assert!(sector_comparison_report(&[("x", 0.0, 1.0)]).is_err());
    }

    fn hierarchy() -> RegionHierarchy {
        RegionHierarchy::from_reader(
            "code,level,parent,country
ES,NUTS0,,ES
ES1,NUTS1,ES,ES
ES11,NUTS2,ES1,ES
ES12,NUTS2,ES1,ES
ES111,NUTS3,ES11,ES
ES121,NUTS3,ES12,ES
a1,LAU,ES111,ES
a2,LAU,ES111,ES
b1,LAU,ES121,ES
"
            .as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn aggregated_comparison() {
        let h = hierarchy();
        let result = VariableSeries::from_values("x", SpatialLevel::Lau, [("a1", 1.0), ("a2", 2.0)]);
        let reference = VariableSeries::from_values("x", SpatialLevel::Nuts3, [("ES111", 4.0), ("ES121", 1.0)]);
        let report = compare_at_level(&result, &reference, &h, SpatialLevel::Nuts3).unwrap();
        let rows: Vec<_> = report.computed().collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].pct_deviation, 25.0);
        assert_eq!(report.unmatched, ["ES121"]);

        let same = compare_at_level(&result, &aggregate(&result, &h, SpatialLevel::Nuts2, false).unwrap(), &h, SpatialLevel::Nuts2)
            .unwrap();
        assert!(same.computed().all(|r| r.pct_deviation == 0.0));

        let other = VariableSeries::from_values("x", SpatialLevel::Nuts3, [("ES121", 1.0)]);
        assert!(matches!(compare_at_level(&result, &other, &h, SpatialLevel::Nuts3), Err(Error::NoOverlap)));
    }

    #[test]
    fn label_join_is_explicit() {
        let h = hierarchy();
        let result = VariableSeries::from_values("x", SpatialLevel::Lau, [("a1", 1.0), ("a2", 2.0), ("b1", 3.0)]);
        let reference = read_reference(
            "label,region,value\nTown A,,2\nTown B,,6\nDistrict,ES121,3\n".as_bytes(),
            Path::new("ref.csv"),
        )
        .unwrap();
        let map = [("Town A".to_string(), "a1".to_string())].into();
        let report = compare_reference(&result, &reference, &map, &h, SpatialLevel::Lau).unwrap();
        let labels: Vec<_> = report.computed().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["Town A"]);
        assert_eq!(report.unmatched, ["Town B", "District"]);
        let report = compare_reference(&result, &reference, &map, &h, SpatialLevel::Nuts3).unwrap();
        assert_eq!(report.computed().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["District"]);
    }

    #[test]
    fn zero_reported_is_flagged() {
        let report = deviation_table(&[("a".into(), 10.0, 9.0), ("b".into(), 0.0, 1.0)]);
        assert_eq!(report.undefined().collect::<Vec<_>>(), ["b"]);
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "label,reported,disaggregated,difference,pct_deviation\na,10,9,1,10\nb,0,1,-1,UndefinedDeviation\n"
        );
        let md = render_markdown("t", &report);
        assert!(md.contains("| a | 10.00 | 9.00 | 1.00 | 10.00 |"));
        assert!(md.contains("| b | 0.00 | 1.00 | -1.00 | undefined |"));
    }

    #[test]
    fn pair_table_header_checked() {
        let rows = read_pair_table("label,reported,disaggregated\nX,2,1\n".as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(rows, [("X".to_string(), 2.0, 1.0)]);
        assert!(matches!(
            read_pair_table("a,b\n1,2\n".as_bytes(), Path::new("t.csv")),
            Err(Error::BadHeader { .. })
        ));
    }
}
