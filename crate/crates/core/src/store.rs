//! Per-region variable series: ingest, missingness, aggregation and the
//! correlation statistic used for predictor screening.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_2dp, fmt_f64};
use crate::region::{RegionHierarchy, SpatialLevel};

/// Five-level quality grade. Source-observed values are `VeryHigh`; imputed
/// and disaggregated values carry lower grades.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConfidenceLevel {
    VeryLow,
    Low,
    Medium,
    High,
    VeryHigh,
}

impl ConfidenceLevel {
    pub const ALL: [ConfidenceLevel; 5] = [
        ConfidenceLevel::VeryLow,
        ConfidenceLevel::Low,
        ConfidenceLevel::Medium,
        ConfidenceLevel::High,
        ConfidenceLevel::VeryHigh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceLevel::VeryLow => "VERY_LOW",
            ConfidenceLevel::Low => "LOW",
            ConfidenceLevel::Medium => "MEDIUM",
            ConfidenceLevel::High => "HIGH",
            ConfidenceLevel::VeryHigh => "VERY_HIGH",
        }
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfidenceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConfidenceLevel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownConfidence(s.to_string()))
    }
}

/// Country restriction of a series: `ALL` or a single NUTS0 code.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum CountryScope {
    #[default]
    All,
    Country(String),
}

impl CountryScope {
    pub fn as_country(&self) -> Option<&str> {
        match self {
            CountryScope::All => None,
            CountryScope::Country(c) => Some(c),
        }
    }

    pub fn admits(&self, country: &str) -> bool {
        self.as_country().is_none_or(|c| c == country)
    }
}

impl fmt::Display for CountryScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_country().unwrap_or("ALL"))
    }
}

impl From<&str> for CountryScope {
    fn from(s: &str) -> Self {
        match s {
            "" | "ALL" => CountryScope::All,
            c => CountryScope::Country(c.to_string()),
        }
    }
}

impl Serialize for CountryScope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CountryScope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(CountryScope::from(s.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub region: String,
    /// `None` marks a missing value.
    pub value: Option<f64>,
    pub confidence: ConfidenceLevel,
}

impl Observation {
    pub fn observed(region: impl Into<String>, value: f64) -> Self {
        Observation {
            region: region.into(),
            value: Some(value),
            confidence: ConfidenceLevel::VeryHigh,
        }
    }

    pub fn missing(region: impl Into<String>) -> Self {
        Observation {
            region: region.into(),
            value: None,
            // meaningless until imputed
            confidence: ConfidenceLevel::VeryLow,
        }
    }

    pub fn is_missing(&self) -> bool {
        self.value.is_none()
    }
}

/// Descriptive metadata for a series, as listed in the variable registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub variable_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub unit: String,
    pub level: SpatialLevel,
    #[serde(default)]
    pub country_scope: CountryScope,
}

impl SeriesMeta {
    pub fn new(variable_id: impl Into<String>, level: SpatialLevel) -> Self {
        SeriesMeta {
            variable_id: variable_id.into(),
            description: String::new(),
            unit: String::new(),
            level,
            country_scope: CountryScope::All,
        }
    }
}

/// One variable's observations at a single spatial level, keyed by region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSeries {
    pub variable_id: String,
    pub description: String,
    pub unit: String,
    pub level: SpatialLevel,
    pub country_scope: CountryScope,
    pub observations: BTreeMap<String, Observation>,
}

impl VariableSeries {
    pub fn new(meta: SeriesMeta) -> Self {
        VariableSeries {
            variable_id: meta.variable_id,
            description: meta.description,
            unit: meta.unit,
            level: meta.level,
            country_scope: meta.country_scope,
            observations: BTreeMap::new(),
        }
    }

    /// Convenience constructor for fully observed in-memory series.
    pub fn from_values<'a>(
        variable_id: &str,
        level: SpatialLevel,
        values: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Self {
        let mut s = VariableSeries::new(SeriesMeta::new(variable_id, level));
        for (region, v) in values {
            s.insert(Observation::observed(region, v));
        }
        s
    }

    pub fn meta(&self) -> SeriesMeta {
        SeriesMeta {
            variable_id: self.variable_id.clone(),
            description: self.description.clone(),
            unit: self.unit.clone(),
            level: self.level,
            country_scope: self.country_scope.clone(),
        }
    }

    /// Inserts or replaces the observation for its region.
    pub fn insert(&mut self, obs: Observation) {
        self.observations.insert(obs.region.clone(), obs);
    }

    pub fn get(&self, region: &str) -> Option<&Observation> {
        self.observations.get(region)
    }

    pub fn value(&self, region: &str) -> Option<f64> {
        self.observations.get(region).and_then(|o| o.value)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.observations.keys().map(String::as_str)
    }

    pub fn missing_regions(&self) -> impl Iterator<Item = &str> {
        self.observations
            .values()
            .filter(|o| o.is_missing())
            .map(|o| o.region.as_str())
    }

    pub fn missing_count(&self) -> usize {
        self.missing_regions().count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Errors with `MissingValues` unless every observation is present.
    pub fn ensure_complete(&self) -> Result<()> {
        let mut missing = self.missing_regions();
        match missing.next() {
            None => Ok(()),
            Some(first) => Err(Error::MissingValues {
                variable: self.variable_id.clone(),
                count: 1 + missing.count(),
                first: first.to_string(),
            }),
        }
    }

    /// Adds explicit missing observations for every region of the declared
    /// level and country scope that has no row.
    pub fn fill_scope(&mut self, h: &RegionHierarchy) {
        for region in h.regions_at(self.level, self.country_scope.as_country()) {
            self.observations
                .entry(region.clone())
                .or_insert_with(|| Observation::missing(region));
        }
    }

    /// Regions whose hierarchy country is `country`.
    pub fn restricted_to_country(&self, h: &RegionHierarchy, country: &str) -> VariableSeries {
        let mut out = VariableSeries::new(self.meta());
        out.country_scope = CountryScope::Country(country.to_string());
        for obs in self.observations.values() {
            if h.get(&obs.region).is_some_and(|n| n.country == country) {
                out.insert(obs.clone());
            }
        }
        out
    }

    /// Writes `region,value,confidence`; missing values are left empty.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |source| Error::Csv {
            path: format!("<{}>", self.variable_id).into(),
            source,
        };
        w.write_record(["region", "value", "confidence"]).map_err(wrap)?;
        for obs in self.observations.values() {
            let value = obs.value.map(fmt_f64).unwrap_or_default();
            let conf = if obs.is_missing() { "" } else { obs.confidence.as_str() };
            w.write_record([obs.region.as_str(), &value, conf]).map_err(wrap)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: format!("<{}>", self.variable_id).into(),
            source,
        })
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn parse_value(cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::NonNumericValue(cell.to_string()))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(cell.to_string()));
    }
    Ok(Some(v))
}

/// Reads a `region,value[,confidence]` series and validates its regions
/// against the hierarchy. Present values without a confidence column are
/// source observations (`VERY_HIGH`); regions of the declared scope with no
/// row become missing observations.
pub fn ingest_series(path: impl AsRef<Path>, meta: SeriesMeta, h: &RegionHierarchy) -> Result<VariableSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(file, meta, h).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn ingest_reader(reader: impl Read, meta: SeriesMeta, h: &RegionHierarchy) -> Result<VariableSeries> {
    let mut series = read_series(reader, meta, h)?;
    series.fill_scope(h);
    Ok(series)
}

/// Like [`ingest_reader`] but keeps exactly the rows present in the file.
pub fn read_series(reader: impl Read, meta: SeriesMeta, h: &RegionHierarchy) -> Result<VariableSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let csv_err = |source| Error::Csv {
        path: "<series>".into(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let header: Vec<&str> = headers.iter().collect();
    let with_conf = match header.as_slice() {
        ["region", "value"] => false,
        ["region", "value", "confidence"] => true,
        _ => {
            return Err(Error::BadHeader {
                expected: "region,value[,confidence]".into(),
                found: header.join(","),
            })
        }
    };
    let mut series = VariableSeries::new(meta);
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let obs = parse_row(&record, with_conf, &series, h).map_err(|e| e.at_line(line))?;
        if series.observations.contains_key(&obs.region) {
            return Err(Error::DuplicateRegion(obs.region).at_line(line));
        }
        series.insert(obs);
    }
    Ok(series)
}

fn parse_row(
    record: &csv::StringRecord,
    with_conf: bool,
    series: &VariableSeries,
    h: &RegionHierarchy,
) -> Result<Observation> {
    let region = &record[0];
    let node = h.node(region)?;
    if node.level != series.level {
        return Err(Error::RegionLevelMismatch {
            variable: series.variable_id.clone(),
            region: region.to_string(),
            expected: series.level,
            found: node.level,
        });
    }
    if !series.country_scope.admits(&node.country) {
        return Err(Error::RegionOutOfScope {
            variable: series.variable_id.clone(),
            region: region.to_string(),
            scope: series.country_scope.to_string(),
        });
    }
    let value = parse_value(&record[1])?;
    let confidence = match (value, with_conf) {
        (Some(_), true) if !record[2].is_empty() => record[2].parse()?,
        _ => ConfidenceLevel::VeryHigh,
    };
    Ok(match value {
        Some(v) => Observation {
            region: region.to_string(),
            value: Some(v),
            confidence,
        },
        None => Observation::missing(region),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingReport {
    pub variable_id: String,
    pub total: usize,
    pub missing: usize,
    /// Exact percentage; see [`MissingReport::pct_display`].
    pub pct: f64,
}

impl MissingReport {
    pub fn new(variable_id: impl Into<String>, total: usize, missing: usize) -> Self {
        let pct = if total == 0 {
            0.0
        } else {
            100.0 * missing as f64 / total as f64
        };
        MissingReport {
            variable_id: variable_id.into(),
            total,
            missing,
            pct,
        }
    }

    pub fn pct_display(&self) -> String {
        fmt_2dp(self.pct)
    }
}

/// Counts missing observations. Series produced by [`ingest_series`] already
/// carry explicit entries for regions that had no row.
pub fn missing_report(s: &VariableSeries) -> MissingReport {
    MissingReport::new(&s.variable_id, s.len(), s.missing_count())
}

/// Like [`missing_report`], but also counts regions of the declared level and
/// scope that are absent from the series altogether.
pub fn missing_report_in(s: &VariableSeries, h: &RegionHierarchy) -> MissingReport {
    let scope = h.regions_at(s.level, s.country_scope.as_country());
    let missing = scope
        .iter()
        .filter(|r| s.value(r).is_none())
        .count();
    let extra = s
        .observations
        .keys()
        .filter(|r| !scope.contains(r))
        .count();
    MissingReport::new(&s.variable_id, scope.len() + extra, missing)
}

/// Sums a series up to a coarser level. The aggregate confidence is the
/// minimum over contributing observations. With `allow_partial`, missing
/// observations are skipped; a target region with no present contributor
/// becomes missing.
pub fn aggregate(
    s: &VariableSeries,
    h: &RegionHierarchy,
    target: SpatialLevel,
    allow_partial: bool,
) -> Result<VariableSeries> {
    if target >= s.level {
        return Err(Error::AggregateNotCoarser {
            from: s.level,
            to: target,
        });
    }
    if !allow_partial {
        s.ensure_complete()?;
    }
    let mut sums: BTreeMap<&str, (Option<f64>, ConfidenceLevel)> = BTreeMap::new();
    for obs in s.observations.values() {
        let parent = h.ancestor(&obs.region, target)?;
        let entry = sums.entry(parent).or_insert((None, ConfidenceLevel::VeryHigh));
        if let Some(v) = obs.value {
            entry.0 = Some(entry.0.unwrap_or(0.0) + v);
            entry.1 = entry.1.min(obs.confidence);
        }
    }
    let mut meta = s.meta();
    meta.level = target;
    let mut out = VariableSeries::new(meta);
    for (region, (value, confidence)) in sums {
        out.insert(match value {
            Some(v) => Observation {
                region: region.to_string(),
                value: Some(v),
                confidence,
            },
            None => Observation::missing(region),
        });
    }
    Ok(out)
}

/// Sample Pearson correlation. `Ok(None)` when either vector is constant,
/// which callers read as "no linear information".
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}
