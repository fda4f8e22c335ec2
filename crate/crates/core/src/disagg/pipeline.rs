//! Staged execution of disaggregation tasks.
//!
//! Stages run in ascending order and every output is registered in the
//! store before the next stage starts, so later formulas may reference
//! earlier results. Within a stage, tasks are grouped by target and the
//! groups ordered by their formula dependencies; independent groups run in
//! parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{disaggregate, AllocationResult, DisaggOptions, DisaggregationTask, TaskFormula};
use crate::error::{Error, Result};
use crate::proxy::{parse, ProxyEnv, ProxyExpr};
use crate::region::{RegionHierarchy, SpatialLevel};
use crate::store::{ConfidenceLevel, VariableSeries};

/// Series keyed by variable id and level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesStore {
    series: BTreeMap<(String, SpatialLevel), VariableSeries>,
}

impl SeriesStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a series.
    pub fn insert(&mut self, s: VariableSeries) {
        self.series.insert((s.variable_id.clone(), s.level), s);
    }

    pub fn get(&self, id: &str, level: SpatialLevel) -> Option<&VariableSeries> {
        self.series.get(&(id.to_string(), level))
    }

    pub fn contains(&self, id: &str, level: SpatialLevel) -> bool {
        self.get(id, level).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VariableSeries> {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// The series at one level, as a formula environment.
    pub fn at_level(&self, level: SpatialLevel) -> LevelView<'_> {
        LevelView { store: self, level }
    }
}

impl FromIterator<VariableSeries> for SeriesStore {
    fn from_iter<T: IntoIterator<Item = VariableSeries>>(iter: T) -> Self {
        let mut store = SeriesStore::new();
        for s in iter {
            store.insert(s);
        }
        store
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LevelView<'a> {
    store: &'a SeriesStore,
    level: SpatialLevel,
}

impl ProxyEnv for LevelView<'_> {
    fn series(&self, variable_id: &str) -> Option<&VariableSeries> {
        self.store.get(variable_id, self.level)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    #[default]
    Allocate,
    Replicate,
}

fn lau() -> SpatialLevel {
    SpatialLevel::Lau
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub target_id: String,
    pub source_level: SpatialLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    /// May be left out when a proxy assignment supplies it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment_confidence: Option<ConfidenceLevel>,
    #[serde(default)]
    pub mode: TaskMode,
    /// Restricts the task to one country's source regions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    /// Source series id when it differs from `target_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default = "lau")]
    pub output_level: SpatialLevel,
}

impl TaskConfig {
    pub fn source_id(&self) -> &str {
        self.source_id.as_deref().unwrap_or(&self.target_id)
    }

    pub fn confidence(&self) -> Result<ConfidenceLevel> {
        self.assignment_confidence.ok_or_else(|| Error::InvalidTask {
            target: self.target_id.clone(),
            message: "no assignment confidence".into(),
        })
    }

    /// Parsed formula, `None` for replication.
    pub fn expr(&self) -> Result<Option<ProxyExpr>> {
        let invalid = |message: String| Error::InvalidTask {
            target: self.target_id.clone(),
            message,
        };
        match (self.mode, &self.formula) {
            (TaskMode::Replicate, None) => Ok(None),
            (TaskMode::Replicate, Some(_)) => Err(invalid("replicate tasks take no formula".into())),
            (TaskMode::Allocate, None) => Err(invalid("allocate tasks need a formula".into())),
            (TaskMode::Allocate, Some(f)) => parse(f)
                .map(Some)
                .map_err(|e| invalid(format!("formula `{f}`: {e}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: u8,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub stages: Vec<StageConfig>,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub target_id: String,
    pub stage: u8,
    pub mode: TaskMode,
    pub country: Option<String>,
    pub source_id: String,
    pub source_level: SpatialLevel,
    pub formula: Option<String>,
    pub assignment_confidence: ConfidenceLevel,
    pub output_regions: usize,
    pub max_residual: Option<f64>,
    pub fallback_sources: Vec<String>,
    pub skipped_sources: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSource {
    pub target_id: String,
    pub source_region: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tasks: Vec<TaskReport>,
    pub skipped: Vec<SkippedSource>,
    pub max_residual: Option<f64>,
    pub fallback_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutput {
    pub stage: u8,
    pub result: AllocationResult,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineRun {
    /// Results by target id.
    pub outputs: BTreeMap<String, StageOutput>,
    pub report: RunReport,
}

/// Tasks of one stage sharing a target.
struct Group<'a> {
    target: &'a str,
    tasks: Vec<(&'a TaskConfig, Option<ProxyExpr>)>,
}

/// Execution order per stage: layers of groups whose dependencies are
/// satisfied by earlier layers or stages.
fn plan<'a>(config: &'a PipelineConfig, store: &SeriesStore) -> Result<Vec<(u8, Vec<Vec<Group<'a>>>)>> {
    let mut stages: Vec<&StageConfig> = config.stages.iter().collect();
    stages.sort_by_key(|s| s.stage);
    if let Some(w) = stages.windows(2).find(|w| w[0].stage == w[1].stage) {
        return Err(Error::Config(format!("stage {} listed twice", w[0].stage)));
    }

    // Where each (target, output level) is produced.
    let mut producer: BTreeMap<(&str, SpatialLevel), u8> = BTreeMap::new();
    for stage in &stages {
        for t in &stage.tasks {
            let key = (t.target_id.as_str(), t.output_level);
            match producer.get(&key) {
                Some(&s) if s != stage.stage => {
                    return Err(Error::InvalidTask {
                        target: t.target_id.clone(),
                        message: format!("produced in both stage {s} and stage {}", stage.stage),
                    })
                }
                _ => {
                    producer.insert(key, stage.stage);
                }
            }
        }
    }

    let mut planned = Vec::new();
    for stage in stages {
        let mut groups: BTreeMap<&str, Group> = BTreeMap::new();
        for t in &stage.tasks {
            if t.output_level <= t.source_level {
                return Err(Error::InvalidTask {
                    target: t.target_id.clone(),
                    message: format!(
                        "output level {} is not finer than source level {}",
                        t.output_level, t.source_level
                    ),
                });
            }
            if !store.contains(t.source_id(), t.source_level) {
                return Err(Error::Config(format!(
                    "task `{}`: no series `{}` at {}",
                    t.target_id,
                    t.source_id(),
                    t.source_level
                )));
            }
            let expr = t.expr()?;
            t.confidence()?;
            groups
                .entry(&t.target_id)
                .or_insert_with(|| Group {
                    target: &t.target_id,
                    tasks: Vec::new(),
                })
                .tasks
                .push((t, expr));
        }

        // Dependencies on other groups of this stage.
        let mut deps: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (&target, g) in &groups {
            let entry = deps.entry(target).or_default();
            for (t, expr) in &g.tasks {
                let Some(expr) = expr else { continue };
                for var in expr.variables() {
                    match producer.get(&(var, t.output_level)) {
                        Some(&s) if s == stage.stage => {
                            entry.insert(*groups.get_key_value(var).expect("same-stage producer").0);
                        }
                        Some(&s) if s > stage.stage => {
                            return Err(Error::UnresolvedDependency {
                                target: t.target_id.clone(),
                                variable: var.to_string(),
                                stage: stage.stage,
                            })
                        }
                        Some(_) => {}
                        None if store.contains(var, t.output_level) => {}
                        None => return Err(Error::UnresolvedVariable(var.to_string())),
                    }
                }
            }
        }

        let mut layers = Vec::new();
        let mut done: BTreeSet<&str> = BTreeSet::new();
        while done.len() < groups.len() {
            let ready: Vec<&str> = deps
                .iter()
                .filter(|(t, d)| !done.contains(*t) && d.iter().all(|x| done.contains(x)))
                .map(|(t, _)| *t)
                .collect();
            if ready.is_empty() {
                let stuck: Vec<&str> = deps.keys().copied().filter(|t| !done.contains(t)).collect();
                return Err(Error::DependencyCycle(stuck.join(", ")));
            }
            done.extend(&ready);
            layers.push(ready);
        }
        let mut layered = Vec::new();
        for layer in layers {
            layered.push(layer.iter().map(|t| groups.remove(t).expect("planned")).collect());
        }
        planned.push((stage.stage, layered));
    }
    Ok(planned)
}

/// Checks stage ordering, sources, formulas and dependencies without
/// evaluating anything.
pub fn check_pipeline(config: &PipelineConfig, store: &SeriesStore) -> Result<()> {
    plan(config, store).map(|_| ())
}

fn run_group(
    stage: u8,
    group: &Group,
    h: &RegionHierarchy,
    store: &SeriesStore,
    opts: DisaggOptions,
) -> Result<(AllocationResult, Vec<TaskReport>)> {
    let mut merged: Option<AllocationResult> = None;
    let mut reports = Vec::new();
    for (t, expr) in &group.tasks {
        let full = store.get(t.source_id(), t.source_level).expect("planned");
        let source = match &t.country {
            Some(c) => full.restricted_to_country(h, c),
            None => full.clone(),
        };
        let task = DisaggregationTask {
            target_id: t.target_id.clone(),
            source,
            formula: match expr {
                Some(e) => TaskFormula::Allocate(e.clone()),
                None => TaskFormula::Replicate,
            },
            assignment_confidence: t.confidence()?,
            output_level: t.output_level,
        };
        let result = disaggregate(&task, h, &store.at_level(t.output_level), opts)?;
        reports.push(TaskReport {
            target_id: t.target_id.clone(),
            stage,
            mode: t.mode,
            country: t.country.clone(),
            source_id: t.source_id().to_string(),
            source_level: t.source_level,
            formula: t.formula.clone(),
            assignment_confidence: task.assignment_confidence,
            output_regions: result.series.len(),
            max_residual: result.max_residual(),
            fallback_sources: result.fallback_sources.clone(),
            skipped_sources: result.skipped_sources.clone(),
        });
        match &mut merged {
            Some(m) => m.merge(result),
            None => merged = Some(result),
        }
    }
    Ok((merged.expect("group has a task"), reports))
}

/// Runs all stages over `store`, which holds the (imputed) input series.
pub fn run_pipeline(
    config: &PipelineConfig,
    h: &RegionHierarchy,
    store: &SeriesStore,
    opts: DisaggOptions,
) -> Result<PipelineRun> {
    let planned = plan(config, store)?;
    let mut store = store.clone();
    let mut run = PipelineRun::default();
    for (stage, layers) in planned {
        for layer in layers {
            let results = layer
                .par_iter()
                .map(|g| run_group(stage, g, h, &store, opts))
                .collect::<Result<Vec<_>>>()?;
            for (g, (result, reports)) in layer.iter().zip(results) {
                store.insert(result.series.clone());
                run.report.tasks.extend(reports);
                run.outputs.insert(g.target.to_string(), StageOutput { stage, result });
            }
        }
    }
    for t in &run.report.tasks {
        run.report.fallback_count += t.fallback_sources.len();
        run.report.skipped.extend(t.skipped_sources.iter().map(|r| SkippedSource {
            target_id: t.target_id.clone(),
            source_region: r.clone(),
            reason: "missing source value".into(),
        }));
        if let Some(r) = t.max_residual {
            run.report.max_residual = Some(run.report.max_residual.map_or(r, |m: f64| m.max(r)));
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Observation;

    fn hierarchy() -> RegionHierarchy {
        RegionHierarchy::from_reader(
            "code,level,parent,country
ES,NUTS0,,ES
ES1,NUTS1,ES,ES
ES11,NUTS2,ES1,ES
ES111,NUTS3,ES11,ES
ES112,NUTS3,ES11,ES
A,LAU,ES111,ES
B,LAU,ES111,ES
C,LAU,ES112,ES
"
            .as_bytes(),
        )
        .unwrap()
    }

    fn store() -> SeriesStore {
        [
            VariableSeries::from_values("pop", SpatialLevel::Lau, [("A", 1.0), ("B", 3.0), ("C", 4.0)]),
            VariableSeries::from_values("emp", SpatialLevel::Nuts3, [("ES111", 10.0), ("ES112", 30.0)]),
            VariableSeries::from_values("fec", SpatialLevel::Nuts0, [("ES", 100.0)]),
        ]
        .into_iter()
        .collect()
    }

    fn config(json: &str) -> PipelineConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn empty_config_is_empty_run() {
        let run = run_pipeline(&config("{\"stages\": []}"), &hierarchy(), &store(), DisaggOptions::default()).unwrap();
        assert!(run.outputs.is_empty());
        assert!(run.report.tasks.is_empty());
    }

    #[test]
    fn later_stage_uses_earlier_output() {
        let c = config(
            r#"{"stages": [
                {"stage": 3, "tasks": [{"target_id": "fec", "source_level": "NUTS0", "formula": "emp", "assignment_confidence": "MEDIUM"}]},
                {"stage": 1, "tasks": [{"target_id": "emp", "source_level": "NUTS3", "formula": "pop", "assignment_confidence": "HIGH"}]}
            ]}"#,
        );
        let run = run_pipeline(&c, &hierarchy(), &store(), DisaggOptions::default()).unwrap();
        let emp = &run.outputs["emp"].result.series;
        assert_eq!(emp.value("A"), Some(2.5));
        assert_eq!(emp.value("B"), Some(7.5));
        assert_eq!(emp.value("C"), Some(30.0));
        let fec = &run.outputs["fec"].result.series;
        assert_eq!(fec.value("C"), Some(75.0));
        let total: f64 = fec.observations.values().filter_map(|o| o.value).sum();
        assert!((total - 100.0).abs() <= 1e-12);
        assert_eq!(fec.get("A").unwrap().confidence, ConfidenceLevel::Medium);
        assert_eq!(run.report.tasks.len(), 2);
        assert_eq!(run.report.tasks[0].target_id, "emp");
    }

    #[test]
    fn reference_to_later_stage_is_unresolved() {
        let c = config(
            r#"{"stages": [
                {"stage": 2, "tasks": [{"target_id": "x", "source_level": "NUTS3", "source_id": "emp", "formula": "fec", "assignment_confidence": "HIGH"}]},
                {"stage": 3, "tasks": [{"target_id": "fec", "source_level": "NUTS0", "formula": "pop", "assignment_confidence": "HIGH"}]}
            ]}"#,
        );
        let err = run_pipeline(&c, &hierarchy(), &store(), DisaggOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::UnresolvedDependency { target, variable, stage: 2 } if target == "x" && variable == "fec"
        ));
    }

    #[test]
    fn same_stage_dependencies_are_ordered_and_cycles_rejected() {
        let c = config(
            r#"{"stages": [{"stage": 1, "tasks": [
                {"target_id": "b", "source_level": "NUTS3", "source_id": "emp", "formula": "a", "assignment_confidence": "HIGH"},
                {"target_id": "a", "source_level": "NUTS3", "source_id": "emp", "formula": "pop", "assignment_confidence": "HIGH"}
            ]}]}"#,
        );
        let run = run_pipeline(&c, &hierarchy(), &store(), DisaggOptions::default()).unwrap();
        assert_eq!(run.outputs["b"].result.series, {
            let mut s = run.outputs["a"].result.series.clone();
            s.variable_id = "b".into();
            s
        });

        let c = config(
            r#"{"stages": [{"stage": 1, "tasks": [
                {"target_id": "b", "source_level": "NUTS3", "source_id": "emp", "formula": "a", "assignment_confidence": "HIGH"},
                {"target_id": "a", "source_level": "NUTS3", "source_id": "emp", "formula": "b", "assignment_confidence": "HIGH"}
            ]}]}"#,
        );
        let err = run_pipeline(&c, &hierarchy(), &store(), DisaggOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DependencyCycle(s) if s == "a, b"));
    }

    #[test]
    fn unknown_variable_is_named() {
        let c = config(
            r#"{"stages": [{"stage": 3, "tasks": [{"target_id": "fec", "source_level": "NUTS0", "formula": "pop + cars", "assignment_confidence": "LOW"}]}]}"#,
        );
        let err = check_pipeline(&c, &store()).unwrap_err();
        assert!(matches!(err, Error::UnresolvedVariable(v) if v == "cars"));
    }

    #[test]
    fn missing_national_value_is_skipped() {
        let mut s = store();
        let mut fec = VariableSeries::from_values("fec", SpatialLevel::Nuts0, []);
        fec.insert(Observation::missing("ES"));
        s.insert(fec);
        let c = config(
            r#"{"stages": [{"stage": 3, "tasks": [{"target_id": "fec", "source_level": "NUTS0", "formula": "pop", "assignment_confidence": "LOW"}]}]}"#,
        );
        let run = run_pipeline(&c, &hierarchy(), &s, DisaggOptions::default()).unwrap();
        assert_eq!(run.report.skipped.len(), 1);
        assert_eq!(run.report.skipped[0].source_region, "ES");
        assert_eq!(run.report.max_residual, None);
    }

    #[test]
    fn replicate_mode_and_formula_rules() {
        let c = config(
            r#"{"stages": [{"stage": 1, "tasks": [{"target_id": "emp", "source_level": "NUTS3", "mode": "replicate", "assignment_confidence": "HIGH"}]}]}"#,
        );
        let run = run_pipeline(&c, &hierarchy(), &store(), DisaggOptions::default()).unwrap();
        assert_eq!(run.outputs["emp"].result.series.value("B"), Some(10.0));

        let c = config(
            r#"{"stages": [{"stage": 1, "tasks": [{"target_id": "emp", "source_level": "NUTS3", "assignment_confidence": "HIGH"}]}]}"#,
        );
        assert!(matches!(check_pipeline(&c, &store()), Err(Error::InvalidTask { .. })));
    }
}
