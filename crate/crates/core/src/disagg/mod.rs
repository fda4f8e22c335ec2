//! Proportional allocation of coarse series to finer regions.

mod pipeline;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxy::{evaluate, EvalOptions, ProxyEnv, ProxyExpr};
use crate::region::{RegionHierarchy, SpatialLevel};
use crate::store::{ConfidenceLevel, CountryScope, Observation, SeriesMeta, VariableSeries};

pub use pipeline::{
    check_pipeline, run_pipeline, LevelView, PipelineConfig, PipelineRun, RunReport, SeriesStore, SkippedSource, StageConfig, StageOutput,
    TaskConfig, TaskMode, TaskReport,
};

/// Splits `parent_value` over children in proportion to `weights`.
///
/// Returns the child values in input order and whether the uniform
/// fallback was used (all weights zero).
pub fn allocate(parent_value: f64, weights: &[(String, f64)]) -> Result<(Vec<(String, f64)>, bool)> {
    if weights.is_empty() {
        return Err(Error::EmptyChildren);
    }
    if let Some((c, _)) = weights.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeight(c.clone()));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        let out = weights
            .iter()
            .map(|(c, w)| (c.clone(), parent_value * (w / total)))
            .collect();
        Ok((out, false))
    } else {
        let share = parent_value / weights.len() as f64;
        Ok((weights.iter().map(|(c, _)| (c.clone(), share)).collect(), true))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskFormula {
    Allocate(ProxyExpr),
    /// Every child takes the parent value unchanged.
    Replicate,
}

/// Region set over which formula variables are max-normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeScope {
    /// All output-level regions of the source region's country.
    #[default]
    Country,
    /// Only the children of each source region.
    Parent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DisaggOptions {
    pub eval: EvalOptions,
    pub normalize_scope: NormalizeScope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisaggregationTask {
    pub target_id: String,
    pub source: VariableSeries,
    pub formula: TaskFormula,
    pub assignment_confidence: ConfidenceLevel,
    pub output_level: SpatialLevel,
}

impl DisaggregationTask {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidTask {
            target: self.target_id.clone(),
            message,
        };
        if self.output_level <= self.source.level {
            return Err(invalid(format!(
                "output level {} is not finer than source level {}",
                self.output_level, self.source.level
            )));
        }
        if self.assignment_confidence == ConfidenceLevel::VeryHigh {
            return Err(invalid("assignment confidence cannot be VERY_HIGH".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_region: String,
    /// Fraction of the source value assigned to this region; 1 for replication.
    pub share: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub series: VariableSeries,
    pub provenance: BTreeMap<String, Provenance>,
    /// Relative conservation residual per source region (absolute when the
    /// source value is zero). Empty for replication.
    pub residuals: BTreeMap<String, f64>,
    /// Source regions split uniformly because their proxy sum was zero.
    pub fallback_sources: Vec<String>,
    /// Source regions left unallocated because their value is missing.
    pub skipped_sources: Vec<String>,
}

impl AllocationResult {
    pub fn max_residual(&self) -> Option<f64> {
        self.residuals.values().copied().reduce(f64::max)
    }

    /// Folds `other` into `self`; used when one target is produced by
    /// several tasks, e.g. one per country.
    pub fn merge(&mut self, other: AllocationResult) {
        if self.series.country_scope != other.series.country_scope {
            self.series.country_scope = CountryScope::All;
        }
        self.series.observations.extend(other.series.observations);
        self.provenance.extend(other.provenance);
        self.residuals.extend(other.residuals);
        self.fallback_sources.extend(other.fallback_sources);
        self.skipped_sources.extend(other.skipped_sources);
    }
}

/// Disaggregates `task.source` to `task.output_level`.
///
/// Child confidence is the minimum of the assignment confidence, the proxy
/// confidence at the child and the source value's confidence. Children of a
/// zero-proxy parent get an equal share at `VERY_LOW`. Source regions with
/// missing values are skipped and their children stay missing.
pub fn disaggregate<E: ProxyEnv + ?Sized>(
    task: &DisaggregationTask,
    h: &RegionHierarchy,
    env: &E,
    opts: DisaggOptions,
) -> Result<AllocationResult> {
    task.validate()?;
    let mut series = VariableSeries::new(SeriesMeta {
        variable_id: task.target_id.clone(),
        description: task.source.description.clone(),
        unit: task.source.unit.clone(),
        level: task.output_level,
        country_scope: task.source.country_scope.clone(),
    });
    let mut result = AllocationResult {
        series: VariableSeries::new(series.meta()),
        provenance: BTreeMap::new(),
        residuals: BTreeMap::new(),
        fallback_sources: Vec::new(),
        skipped_sources: Vec::new(),
    };
    // Country-wide evaluations, computed on first use.
    let mut by_country: HashMap<String, VariableSeries> = HashMap::new();

    for obs in task.source.observations.values() {
        let children = h.descendants(&obs.region, task.output_level)?;
        let Some(parent_value) = obs.value else {
            for c in &children {
                series.insert(Observation::missing(c.clone()));
            }
            result.skipped_sources.push(obs.region.clone());
            continue;
        };
        let base = task.assignment_confidence.min(obs.confidence);
        let expr = match &task.formula {
            TaskFormula::Replicate => {
                for c in &children {
                    series.insert(Observation {
                        region: c.clone(),
                        value: Some(parent_value),
                        confidence: base,
                    });
                    result.provenance.insert(
                        c.clone(),
                        Provenance {
                            source_region: obs.region.clone(),
                            share: 1.0,
                            fallback: false,
                        },
                    );
                }
                continue;
            }
            TaskFormula::Allocate(expr) => expr,
        };
        if children.is_empty() {
            return Err(Error::EmptyChildren);
        }

        let proxy = match opts.normalize_scope {
            NormalizeScope::Parent => evaluate(expr, env, &children, opts.eval)?,
            NormalizeScope::Country => {
                let country = &h.node(&obs.region)?.country;
                if !by_country.contains_key(country) {
                    let scope = h.regions_at(task.output_level, Some(country));
                    by_country.insert(country.clone(), evaluate(expr, env, &scope, opts.eval)?);
                }
                by_country[country].clone()
            }
        };
        if proxy.level != task.output_level {
            return Err(Error::LevelMismatch(task.output_level, proxy.level));
        }
        let weights: Vec<(String, f64)> = children
            .iter()
            .map(|c| (c.clone(), proxy.value(c).unwrap_or_default()))
            .collect();
        let (values, fallback) = allocate(parent_value, &weights)?;
        if fallback {
            result.fallback_sources.push(obs.region.clone());
        }
        let mut total = 0.0;
        for (c, v) in values {
            total += v;
            let confidence = if fallback {
                ConfidenceLevel::VeryLow
            } else {
                let proxy_conf = proxy.get(&c).map_or(ConfidenceLevel::VeryLow, |o| o.confidence);
                base.min(proxy_conf)
            };
            let share = if parent_value != 0.0 {
                v / parent_value
            } else {
                1.0 / children.len() as f64
            };
            series.insert(Observation {
                region: c.clone(),
                value: Some(v),
                confidence,
            });
            result.provenance.insert(
                c,
                Provenance {
                    source_region: obs.region.clone(),
                    share,
                    fallback,
                },
            );
        }
        let residual = (total - parent_value).abs();
        let scale = parent_value.abs();
        result
            .residuals
            .insert(obs.region.clone(), if scale > 0.0 { residual / scale } else { residual });
    }
    result.series = series;
    Ok(result)
}
