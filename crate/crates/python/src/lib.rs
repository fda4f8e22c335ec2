use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use regio_core::disagg::{self, DisaggOptions, DisaggregationTask, NormalizeScope, TaskFormula};
use regio_core::impute::{self, ImputationConfig};
use regio_core::project::Project;
use regio_core::proxy::{self, EvalOptions, ProxyExpr};
use regio_core::store::{self, SeriesMeta};
use regio_core::{validate, ConfidenceLevel, Observation, RegionNode, SpatialLevel};

fn py_err(e: regio_core::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn level(s: &str) -> PyResult<SpatialLevel> {
    s.parse().map_err(py_err)
}

fn confidence(s: &str) -> PyResult<ConfidenceLevel> {
    s.parse().map_err(py_err)
}

fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// NUTS0 to LAU region tree.
#[pyclass(module = "regio", frozen)]
struct RegionHierarchy {
    inner: regio_core::RegionHierarchy,
}

#[pymethods]
impl RegionHierarchy {
    /// Builds a hierarchy from `(code, level, parent, country)` tuples.
    #[new]
    fn py_new(rows: Vec<(String, String, Option<String>, String)>) -> PyResult<Self> {
        let nodes = rows
            .into_iter()
            .map(|(code, lvl, parent, country)| {
                Ok(RegionNode {
                    code,
                    level: level(&lvl)?,
                    parent,
                    country,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = regio_core::RegionHierarchy::from_nodes(nodes).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = regio_core::RegionHierarchy::load(path).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, code: &str) -> bool {
        self.inner.contains(code)
    }

    fn level_of(&self, code: &str) -> PyResult<String> {
        Ok(self.inner.node(code).map_err(py_err)?.level.to_string())
    }

    fn children(&self, code: &str) -> Vec<String> {
        self.inner.children(code).to_vec()
    }

    fn descendants(&self, code: &str, level: &str) -> PyResult<Vec<String>> {
        self.inner.descendants(code, self::level(level)?).map_err(py_err)
    }

    fn ancestor(&self, code: &str, level: &str) -> PyResult<String> {
        self.inner.ancestor(code, self::level(level)?).map(str::to_string).map_err(py_err)
    }

    #[pyo3(signature = (level, country=None))]
    fn regions_at(&self, level: &str, country: Option<&str>) -> PyResult<Vec<String>> {
        Ok(self.inner.regions_at(self::level(level)?, country))
    }

    fn countries(&self) -> Vec<String> {
        self.inner.countries().into_iter().map(str::to_string).collect()
    }
}

/// Values of one variable at one spatial level. Missing values are `None`.
#[pyclass(module = "regio", frozen, from_py_object)]
#[derive(Clone)]
struct VariableSeries {
    inner: regio_core::VariableSeries,
}

#[pymethods]
impl VariableSeries {
    #[new]
    #[pyo3(signature = (variable_id, level, values, confidence=None))]
    fn py_new(
        variable_id: &str,
        level: &str,
        values: BTreeMap<String, Option<f64>>,
        confidence: Option<BTreeMap<String, String>>,
    ) -> PyResult<Self> {
        let mut inner = regio_core::VariableSeries::new(SeriesMeta::new(variable_id, self::level(level)?));
        let confidence = confidence.unwrap_or_default();
        for (region, value) in values {
            let obs = match value {
                Some(v) => Observation {
                    confidence: confidence.get(&region).map_or(Ok(ConfidenceLevel::VeryHigh), |c| self::confidence(c))?,
                    region,
                    value: Some(v),
                },
                None => Observation::missing(region),
            };
            inner.insert(obs);
        }
        Ok(Self { inner })
    }

    /// Reads a `region,value[,confidence]` file, adding missing entries for
    /// regions of the level that the file does not list.
    #[staticmethod]
    fn load(path: PathBuf, variable_id: &str, level: &str, hierarchy: &RegionHierarchy) -> PyResult<Self> {
        let meta = SeriesMeta::new(variable_id, self::level(level)?);
        let inner = store::ingest_series(path, meta, &hierarchy.inner).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn variable_id(&self) -> &str {
        &self.inner.variable_id
    }

    #[getter]
    fn level(&self) -> String {
        self.inner.level.to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "VariableSeries({:?}, {}, {} regions, {} missing)",
            self.inner.variable_id,
            self.inner.level,
            self.inner.len(),
            self.inner.missing_count()
        )
    }

    fn values(&self) -> BTreeMap<String, Option<f64>> {
        self.inner.observations.iter().map(|(r, o)| (r.clone(), o.value)).collect()
    }

    fn confidences(&self) -> BTreeMap<String, String> {
        self.inner
            .observations
            .iter()
            .map(|(r, o)| (r.clone(), o.confidence.to_string()))
            .collect()
    }

    fn missing_regions(&self) -> Vec<String> {
        self.inner.missing_regions().map(str::to_string).collect()
    }

    /// Percentage of missing values, rounded to two decimals.
    fn missing_pct(&self) -> String {
        store::missing_report(&self.inner).pct_display()
    }

    #[pyo3(signature = (hierarchy, level, allow_partial=false))]
    fn aggregate(&self, hierarchy: &RegionHierarchy, level: &str, allow_partial: bool) -> PyResult<Self> {
        let inner = store::aggregate(&self.inner, &hierarchy.inner, self::level(level)?, allow_partial).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv_file(path).map_err(py_err)
    }
}

fn env_map(env: BTreeMap<String, VariableSeries>) -> BTreeMap<String, regio_core::VariableSeries> {
    env.into_iter().map(|(k, v)| (k, v.inner)).collect()
}

/// Parses a proxy formula and returns its canonical text.
#[pyfunction]
fn parse_formula(text: &str) -> PyResult<String> {
    Ok(proxy::parse(text).map_err(py_err)?.to_string())
}

/// Variables referenced by a proxy formula.
#[pyfunction]
fn formula_variables(text: &str) -> PyResult<Vec<String>> {
    let e: ProxyExpr = proxy::parse(text).map_err(py_err)?;
    Ok(e.variables().into_iter().map(str::to_string).collect())
}

/// Evaluates `formula` over `scope` with max-normalised variables.
#[pyfunction]
#[pyo3(signature = (formula, env, scope, weights_on_raw=false))]
fn evaluate(
    formula: &str,
    env: BTreeMap<String, VariableSeries>,
    scope: Vec<String>,
    weights_on_raw: bool,
) -> PyResult<VariableSeries> {
    let e = proxy::parse(formula).map_err(py_err)?;
    let opts = EvalOptions { weights_on_raw };
    let inner = proxy::evaluate(&e, &env_map(env), &scope, opts).map_err(py_err)?;
    Ok(VariableSeries { inner })
}

/// Splits `parent` proportionally to `weights`. Returns the shares and
/// whether the equal-split fallback was used.
#[pyfunction]
fn allocate(parent: f64, weights: Vec<(String, f64)>) -> PyResult<(Vec<(String, f64)>, bool)> {
    disagg::allocate(parent, &weights).map_err(py_err)
}

/// Allocates every value of `source` to `output_level` using `formula`, or
/// replicates the parent value when `formula` is `None`.
#[pyfunction]
#[pyo3(signature = (source, formula, hierarchy, env, assignment_confidence, output_level="LAU", normalize_scope="country"))]
#[allow(clippy::too_many_arguments)]
fn disaggregate(
    source: &VariableSeries,
    formula: Option<&str>,
    hierarchy: &RegionHierarchy,
    env: BTreeMap<String, VariableSeries>,
    assignment_confidence: &str,
    output_level: &str,
    normalize_scope: &str,
) -> PyResult<VariableSeries> {
    let formula = match formula {
        Some(f) => TaskFormula::Allocate(proxy::parse(f).map_err(py_err)?),
        None => TaskFormula::Replicate,
    };
    let normalize_scope = match normalize_scope {
        "country" => NormalizeScope::Country,
        "parent" => NormalizeScope::Parent,
        other => return Err(PyValueError::new_err(format!("unknown normalize_scope `{other}`"))),
    };
    let task = DisaggregationTask {
        target_id: source.inner.variable_id.clone(),
        source: source.inner.clone(),
        formula,
        assignment_confidence: confidence(assignment_confidence)?,
        output_level: level(output_level)?,
    };
    let opts = DisaggOptions {
        normalize_scope,
        ..Default::default()
    };
    let result = disagg::disaggregate(&task, &hierarchy.inner, &env_map(env), opts).map_err(py_err)?;
    Ok(VariableSeries { inner: result.series })
}

/// `(difference, pct_deviation)` of `disaggregated` against `reported`.
#[pyfunction]
fn deviation(reported: f64, disaggregated: f64) -> PyResult<(f64, f64)> {
    let row = validate::deviation(reported, disaggregated).map_err(py_err)?;
    Ok((row.difference, row.pct_deviation))
}

/// Summed emission caps per Euro tier for diesel passenger cars.
#[pyfunction]
fn euro_weights(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    let table = proxy::euro_weight_table(&proxy::diesel_car_caps()).map_err(py_err)?;
    to_py_json(py, &table)
}

#[pyfunction]
fn rate_confidence(r2: f64) -> String {
    impute::rate_confidence(r2).to_string()
}

/// Fills the gaps of `target` from `candidates`. Returns the completed series
/// and the imputation report as a dict.
#[pyfunction]
#[pyo3(signature = (target, candidates, seed=42))]
fn impute_series<'py>(
    py: Python<'py>,
    target: &VariableSeries,
    candidates: Vec<VariableSeries>,
    seed: u64,
) -> PyResult<(VariableSeries, Bound<'py, PyAny>)> {
    let config = ImputationConfig {
        seed,
        ..Default::default()
    };
    let refs: Vec<&regio_core::VariableSeries> = candidates.iter().map(|c| &c.inner).collect();
    let outcome = py
        .detach(|| impute::impute_series(&target.inner, &refs, &config))
        .map_err(py_err)?;
    let report = to_py_json(py, &outcome.report)?;
    Ok((VariableSeries { inner: outcome.series }, report))
}

/// Runs check, impute, disaggregate and validate on a project directory.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn run_project(py: Python<'_>, config: PathBuf, seed: Option<u64>) -> PyResult<Bound<'_, PyDict>> {
    let mut project = Project::load(config).map_err(py_err)?;
    if let Some(seed) = seed {
        project.config.seed = seed;
    }
    let findings = project.check();
    if !findings.is_empty() {
        let msgs: Vec<String> = findings.iter().map(ToString::to_string).collect();
        return Err(PyValueError::new_err(msgs.join("\n")));
    }
    let (imputed, run, outcomes) = py
        .detach(|| -> regio_core::Result<_> {
            let imputed = project.impute()?;
            let run = project.disaggregate()?;
            let outcomes = project.validate()?;
            Ok((imputed, run, outcomes))
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("imputed", imputed.imputed)?;
    out.set_item("targets", run.outputs.keys().cloned().collect::<Vec<_>>())?;
    out.set_item("run_report", to_py_json(py, &run.report)?)?;
    out.set_item("comparisons", outcomes.iter().map(|o| o.name.clone()).collect::<Vec<_>>())?;
    out.set_item("output_dir", project.output_dir())?;
    Ok(out)
}

#[pymodule]
fn regio(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RegionHierarchy>()?;
    m.add_class::<VariableSeries>()?;
    m.add_function(wrap_pyfunction!(parse_formula, m)?)?;
    m.add_function(wrap_pyfunction!(formula_variables, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(disaggregate, m)?)?;
    m.add_function(wrap_pyfunction!(deviation, m)?)?;
    m.add_function(wrap_pyfunction!(euro_weights, m)?)?;
    m.add_function(wrap_pyfunction!(rate_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(impute_series, m)?)?;
    m.add_function(wrap_pyfunction!(run_project, m)?)?;
    Ok(())
}
