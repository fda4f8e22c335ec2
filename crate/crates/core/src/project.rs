//! On-disk project layout and the batch steps run over it.
//!
//! A project is a JSON file whose paths are resolved relative to the file's
//! own directory. Outputs go to `output_dir`:
//!
//! ```text
//! imputed/<id>__<LEVEL>.csv          completed series
//! imputed/<id>__<LEVEL>.report.json  imputation report
//! imputed/summary.json
//! lau/<target>.csv                   disaggregated series
//! run_report.json
//! validation/<name>.csv, <name>.md
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disagg::{
    check_pipeline, run_pipeline, DisaggOptions, NormalizeScope, PipelineConfig, PipelineRun, SeriesStore, TaskMode,
};
use crate::error::{Error, Result};
use crate::impute::{impute_series, HyperGrid, ImputationConfig, ImputationReport};
use crate::proxy::{parse, EvalOptions};
use crate::region::{RegionHierarchy, SpatialLevel};
use crate::store::{ingest_series, read_series, ConfidenceLevel, CountryScope, SeriesMeta, VariableSeries};
use crate::validate::{
    compare_reference, deviation_table, load_pair_table, load_reference, render_markdown, write_report_csv,
    DeviationReport,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Proxy data; gaps are imputed.
    #[default]
    Proxy,
    /// A total to disaggregate; gaps are left for the pipeline to skip.
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub level: SpatialLevel,
    #[serde(default)]
    pub country: CountryScope,
    /// Path relative to the series directory.
    pub file: String,
    #[serde(default)]
    pub role: Role,
}

impl RegistryEntry {
    pub fn meta(&self) -> SeriesMeta {
        SeriesMeta {
            variable_id: self.id.clone(),
            description: self.name.clone(),
            unit: self.unit.clone(),
            level: self.level,
            country_scope: self.country.clone(),
        }
    }
}

/// One row of the proxy assignment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyAssignment {
    pub target_id: String,
    pub source_level: SpatialLevel,
    #[serde(default)]
    pub formula: Option<String>,
    #[serde(default)]
    pub mode: TaskMode,
    pub assignment_confidence: ConfidenceLevel,
    #[serde(default)]
    pub country: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonKind {
    /// Aggregate a disaggregated target and join it with reference values.
    #[default]
    Aggregate,
    /// A ready-made `label,reported,disaggregated` table.
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub name: String,
    #[serde(default)]
    pub kind: ComparisonKind,
    /// Reference file, relative to the reference directory.
    pub reference: String,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub level: Option<SpatialLevel>,
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationSettings {
    pub thresholds: Vec<f64>,
    pub grid: HyperGrid,
    pub folds: usize,
    pub holdout_fraction: f64,
}

impl Default for ImputationSettings {
    fn default() -> Self {
        let d = ImputationConfig::default();
        ImputationSettings {
            thresholds: d.thresholds,
            grid: d.grid,
            folds: d.folds,
            holdout_fraction: d.holdout_fraction,
        }
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub hierarchy: PathBuf,
    pub series_dir: PathBuf,
    pub registry: PathBuf,
    #[serde(default)]
    pub proxy_assignment: Option<PathBuf>,
    pub pipeline: PathBuf,
    #[serde(default)]
    pub reference_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub weights_on_raw: bool,
    #[serde(default)]
    pub normalize_scope: NormalizeScope,
    #[serde(default)]
    pub imputation: ImputationSettings,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

/// A problem found by [`Project::check`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub file: PathBuf,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.file.display(), self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputeSummary {
    pub imputed: Vec<String>,
    pub reports: Vec<ImputationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub name: String,
    pub report: Option<DeviationReport>,
    /// Set when the comparison could not be computed at all.
    pub error: Option<String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_series(path: &Path, s: &VariableSeries) -> Result<()> {
    let mut buf = Vec::new();
    s.write_csv(&mut buf)?;
    write_file(path, &buf)
}

fn in_file(path: &Path, e: Error) -> Finding {
    let message = match e {
        // these already name their file
        Error::Io { source, .. } => source.to_string(),
        Error::Csv { source, .. } => source.to_string(),
        Error::Json { source, .. } => source.to_string(),
        other => other.to_string(),
    };
    Finding {
        file: path.to_path_buf(),
        message,
    }
}

#[derive(Clone, Debug)]
pub struct Project {
    pub root: PathBuf,
    pub config: ProjectConfig,
}

impl Project {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config = read_json(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Project { root, config })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn imputed_path(&self, id: &str, level: SpatialLevel) -> PathBuf {
        self.output_dir().join("imputed").join(format!("{id}__{level}.csv"))
    }

    pub fn lau_path(&self, target: &str) -> PathBuf {
        self.output_dir().join("lau").join(format!("{target}.csv"))
    }

    pub fn run_report_path(&self) -> PathBuf {
        self.output_dir().join("run_report.json")
    }

    pub fn validation_dir(&self) -> PathBuf {
        self.output_dir().join("validation")
    }

    pub fn hierarchy(&self) -> Result<RegionHierarchy> {
        let path = self.resolve(&self.config.hierarchy);
        RegionHierarchy::load(&path).map_err(|e| annotate(&path, e))
    }

    pub fn registry(&self) -> Result<Vec<RegistryEntry>> {
        let entries: Vec<RegistryEntry> = read_json(&self.resolve(&self.config.registry))?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert((e.id.as_str(), e.level)) {
                return Err(Error::Config(format!("variable `{}` at {} registered twice", e.id, e.level)));
            }
        }
        Ok(entries)
    }

    pub fn series_path(&self, entry: &RegistryEntry) -> PathBuf {
        self.resolve(&self.config.series_dir).join(&entry.file)
    }

    /// Raw input series as listed in the registry.
    pub fn load_inputs(&self, h: &RegionHierarchy) -> Result<Vec<(RegistryEntry, VariableSeries)>> {
        self.registry()?
            .into_iter()
            .map(|e| {
                let path = self.series_path(&e);
                let s = ingest_series(&path, e.meta(), h).map_err(|err| annotate(&path, err))?;
                Ok((e, s))
            })
            .collect()
    }

    pub fn assignments(&self) -> Result<Vec<ProxyAssignment>> {
        match &self.config.proxy_assignment {
            Some(p) => read_json(&self.resolve(p)),
            None => Ok(Vec::new()),
        }
    }

    /// The pipeline with formulas and confidences that tasks leave out
    /// filled in from the proxy assignment table.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::load(self.resolve(&self.config.pipeline))?;
        let assignments = self.assignments()?;
        for stage in &mut config.stages {
            for t in &mut stage.tasks {
                let needs = t.assignment_confidence.is_none() || (t.formula.is_none() && t.mode == TaskMode::Allocate);
                if !needs {
                    continue;
                }
                let found = assignments
                    .iter()
                    .filter(|a| a.target_id == t.target_id && a.source_level == t.source_level)
                    .find(|a| a.country == t.country)
                    .or_else(|| {
                        assignments
                            .iter()
                            .find(|a| a.target_id == t.target_id && a.source_level == t.source_level && a.country.is_none())
                    });
                if let Some(a) = found {
                    if t.formula.is_none() && t.mode == TaskMode::Allocate {
                        t.formula = a.formula.clone();
                        t.mode = a.mode;
                    }
                    t.assignment_confidence.get_or_insert(a.assignment_confidence);
                }
            }
        }
        Ok(config)
    }

    fn imputation_config(&self) -> ImputationConfig {
        let s = &self.config.imputation;
        ImputationConfig {
            thresholds: s.thresholds.clone(),
            grid: s.grid.clone(),
            folds: s.folds,
            holdout_fraction: s.holdout_fraction,
            seed: self.config.seed,
        }
    }

    pub fn disagg_options(&self) -> DisaggOptions {
        DisaggOptions {
            eval: EvalOptions {
                weights_on_raw: self.config.weights_on_raw,
            },
            normalize_scope: self.config.normalize_scope,
        }
    }

    /// Validates every input without writing anything.
    pub fn check(&self) -> Vec<Finding> {
        let mut findings = Vec::new();
        let hpath = self.resolve(&self.config.hierarchy);
        let h = match RegionHierarchy::load(&hpath) {
            Ok(h) => h,
            Err(e) => {
                findings.push(in_file(&hpath, e));
                return findings;
            }
        };
        let rpath = self.resolve(&self.config.registry);
        let registry = match self.registry() {
            Ok(r) => r,
            Err(e) => {
                findings.push(in_file(&rpath, e));
                return findings;
            }
        };
        let mut store = SeriesStore::new();
        for e in &registry {
            let path = self.series_path(e);
            match ingest_series(&path, e.meta(), &h) {
                Ok(s) => store.insert(s),
                Err(err) => findings.push(in_file(&path, err)),
            }
        }
        if let Some(p) = &self.config.proxy_assignment {
            let path = self.resolve(p);
            match self.assignments() {
                Ok(list) => {
                    for a in list {
                        if let Some(f) = &a.formula {
                            if let Err(err) = parse(f) {
                                findings.push(in_file(&path, Error::InvalidTask {
                                    target: a.target_id.clone(),
                                    message: format!("formula `{f}`: {err}"),
                                }));
                            }
                        }
                    }
                }
                Err(err) => findings.push(in_file(&path, err)),
            }
        }
        let ppath = self.resolve(&self.config.pipeline);
        match self.pipeline() {
            Ok(p) => {
                if let Err(err) = check_pipeline(&p, &store) {
                    findings.push(in_file(&ppath, err));
                }
            }
            Err(err) => findings.push(in_file(&ppath, err)),
        }
        for c in &self.config.comparisons {
            let path = self.reference_path(c);
            if !path.is_file() {
                findings.push(Finding {
                    file: path,
                    message: format!("reference file for comparison `{}` not found", c.name),
                });
            }
            if c.kind == ComparisonKind::Aggregate && (c.target.is_none() || c.level.is_none()) {
                findings.push(Finding {
                    file: self.root.clone(),
                    message: format!("comparison `{}` needs `target` and `level`", c.name),
                });
            }
        }
        findings
    }

    fn reference_path(&self, c: &Comparison) -> PathBuf {
        let dir = self.config.reference_dir.clone().unwrap_or_default();
        self.resolve(&dir).join(&c.reference)
    }

    /// Imputes every proxy series with gaps and writes the completed series
    /// and reports. Candidates are the complete proxy series at the same
    /// level.
    pub fn impute(&self) -> Result<ImputeSummary> {
        let h = self.hierarchy()?;
        let inputs = self.load_inputs(&h)?;
        let config = self.imputation_config();
        let mut summary = ImputeSummary::default();
        for (entry, target) in &inputs {
            if entry.role != Role::Proxy || target.is_complete() {
                continue;
            }
            let regions: Vec<&str> = target.regions().collect();
            let candidates: Vec<&VariableSeries> = inputs
                .iter()
                .filter(|(e, s)| {
                    e.role == Role::Proxy
                        && s.level == target.level
                        && s.variable_id != target.variable_id
                        && regions.iter().all(|r| s.value(r).is_some())
                })
                .map(|(_, s)| s)
                .collect();
            let outcome = impute_series(target, &candidates, &config)?;
            let csv = self.imputed_path(&entry.id, entry.level);
            write_series(&csv, &outcome.series)?;
            write_json(&csv.with_extension("report.json"), &outcome.report)?;
            summary.imputed.push(format!("{}__{}", entry.id, entry.level));
            summary.reports.push(outcome.report);
        }
        write_json(&self.output_dir().join("imputed").join("summary.json"), &summary)?;
        Ok(summary)
    }

    /// Inputs with imputed versions substituted. Fails when a proxy has
    /// gaps but no imputed file exists yet.
    pub fn completed_inputs(&self, h: &RegionHierarchy) -> Result<SeriesStore> {
        let mut store = SeriesStore::new();
        for (entry, series) in self.load_inputs(h)? {
            if entry.role == Role::Proxy && !series.is_complete() {
                let path = self.imputed_path(&entry.id, entry.level);
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "`{}` has missing values and {} does not exist; run `impute` first",
                        entry.id,
                        path.display()
                    )));
                }
                let imputed = load_output(&path, entry.meta(), h)?;
                store.insert(imputed);
            } else {
                store.insert(series);
            }
        }
        Ok(store)
    }

    /// Runs the disaggregation pipeline and writes one CSV per target plus
    /// the run report.
    pub fn disaggregate(&self) -> Result<PipelineRun> {
        let h = self.hierarchy()?;
        let store = self.completed_inputs(&h)?;
        let pipeline = self.pipeline()?;
        let run = run_pipeline(&pipeline, &h, &store, self.disagg_options())?;
        for (target, out) in &run.outputs {
            write_series(&self.lau_path(target), &out.result.series)?;
        }
        write_json(&self.run_report_path(), &run.report)?;
        Ok(run)
    }

    /// Computes and writes every configured comparison. Comparisons that
    /// cannot be computed are reported, not fatal; missing disaggregation
    /// outputs are.
    pub fn validate(&self) -> Result<Vec<ComparisonOutcome>> {
        let h = self.hierarchy()?;
        let mut outcomes = Vec::new();
        for c in &self.config.comparisons {
            let reference = self.reference_path(c);
            let computed = match c.kind {
                ComparisonKind::Table => load_pair_table(&reference).map(|pairs| deviation_table(&pairs)),
                ComparisonKind::Aggregate => {
                    let (Some(target), Some(level)) = (&c.target, c.level) else {
                        return Err(Error::Config(format!("comparison `{}` needs `target` and `level`", c.name)));
                    };
                    let path = self.lau_path(target);
                    if !path.is_file() {
                        return Err(Error::Config(format!(
                            "{} does not exist; run `disaggregate` first",
                            path.display()
                        )));
                    }
                    let result = load_output(&path, SeriesMeta::new(target.clone(), SpatialLevel::Lau), &h)?;
                    load_reference(&reference)
                        .and_then(|rows| compare_reference(&result, &rows, &c.label_map, &h, level))
                }
            };
            let outcome = match computed {
                Ok(report) => {
                    let dir = self.validation_dir();
                    let mut buf = Vec::new();
                    write_report_csv(&report, &mut buf)?;
                    write_file(&dir.join(format!("{}.csv", c.name)), &buf)?;
                    write_file(&dir.join(format!("{}.md", c.name)), render_markdown(&c.name, &report).as_bytes())?;
                    ComparisonOutcome {
                        name: c.name.clone(),
                        report: Some(report),
                        error: None,
                    }
                }
                Err(e) if e.is_io() => return Err(e),
                Err(e) => ComparisonOutcome {
                    name: c.name.clone(),
                    report: None,
                    error: Some(e.to_string()),
                },
            };
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}

fn annotate(path: &Path, e: Error) -> Error {
    match e {
        e @ (Error::Io { .. } | Error::Csv { .. } | Error::Json { .. }) => e,
        other => Error::Config(format!("{}: {other}", path.display())),
    }
}

/// Reads a `region,value,confidence` file written by this module.
pub fn load_output(path: &Path, meta: SeriesMeta, h: &RegionHierarchy) -> Result<VariableSeries> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_series(file, meta, h).map_err(|e| annotate(path, e))
}
