use std::collections::{BTreeMap, HashMap};

use super::ProxyExpr;
use crate::error::{Error, Result};
use crate::region::SpatialLevel;
use crate::store::{ConfidenceLevel, Observation, SeriesMeta, VariableSeries};

/// Variable lookup for formula evaluation.
pub trait ProxyEnv {
    fn series(&self, variable_id: &str) -> Option<&VariableSeries>;
}

impl ProxyEnv for BTreeMap<String, VariableSeries> {
    fn series(&self, variable_id: &str) -> Option<&VariableSeries> {
        self.get(variable_id)
    }
}

impl ProxyEnv for HashMap<String, VariableSeries> {
    fn series(&self, variable_id: &str) -> Option<&VariableSeries> {
        self.get(variable_id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Apply scalar weights to raw values before normalising (sensitivity
    /// variant). Only affects sums whose operands are all single weighted
    /// variables such as `3.83 * euro_1 + 1.78 * euro_2`.
    pub weights_on_raw: bool,
}

/// Max-normalises a series over all its observations.
pub fn normalize_series(s: &VariableSeries) -> Result<VariableSeries> {
    let scope: Vec<String> = s.regions().map(str::to_string).collect();
    normalize_over(s, &scope)
}

/// Divides each value in `scope` by the maximum over `scope`. Zeros stay
/// exactly zero and an all-zero scope maps to all zeros. The result holds
/// only the scope's regions, with confidences unchanged.
pub fn normalize_over(s: &VariableSeries, scope: &[String]) -> Result<VariableSeries> {
    let raw = raw_values(s, scope)?;
    let max = raw.iter().fold(0.0f64, |m, &(v, _)| m.max(v));
    let mut out = VariableSeries::new(s.meta());
    for (region, &(v, confidence)) in scope.iter().zip(&raw) {
        let value = if max > 0.0 { v / max } else { 0.0 };
        out.insert(Observation {
            region: region.clone(),
            value: Some(value),
            confidence,
        });
    }
    Ok(out)
}

fn raw_values(s: &VariableSeries, scope: &[String]) -> Result<Vec<(f64, ConfidenceLevel)>> {
    scope
        .iter()
        .map(|region| {
            let obs = s.get(region).filter(|o| !o.is_missing()).ok_or_else(|| {
                Error::MissingProxyValue {
                    variable: s.variable_id.clone(),
                    region: region.clone(),
                }
            })?;
            let v = obs.value.unwrap_or_default();
            if v < 0.0 {
                return Err(Error::NegativeProxyValue {
                    variable: s.variable_id.clone(),
                    region: region.clone(),
                    value: v,
                });
            }
            Ok((v, obs.confidence))
        })
        .collect()
}

struct Column {
    values: Vec<f64>,
    confidence: Vec<ConfidenceLevel>,
}

struct Evaluator<'e, E: ?Sized> {
    env: &'e E,
    scope: &'e [String],
    opts: EvalOptions,
    level: Option<SpatialLevel>,
    raw: HashMap<String, Vec<(f64, ConfidenceLevel)>>,
}

impl<E: ProxyEnv + ?Sized> Evaluator<'_, E> {
    fn raw(&mut self, id: &str) -> Result<&[(f64, ConfidenceLevel)]> {
        if !self.raw.contains_key(id) {
            let s = self
                .env
                .series(id)
                .ok_or_else(|| Error::UnresolvedVariable(id.to_string()))?;
            match self.level {
                Some(l) if l != s.level => return Err(Error::LevelMismatch(l, s.level)),
                _ => self.level = Some(s.level),
            }
            let values = raw_values(s, self.scope)?;
            self.raw.insert(id.to_string(), values);
        }
        Ok(&self.raw[id])
    }

    fn normalized(&mut self, id: &str) -> Result<Column> {
        let raw = self.raw(id)?;
        let max = raw.iter().fold(0.0f64, |m, &(v, _)| m.max(v));
        Ok(Column {
            values: raw
                .iter()
                .map(|&(v, _)| if max > 0.0 { v / max } else { 0.0 })
                .collect(),
            confidence: raw.iter().map(|&(_, c)| c).collect(),
        })
    }

    fn eval(&mut self, e: &ProxyExpr) -> Result<Column> {
        let n = self.scope.len();
        match e {
            ProxyExpr::Var(id) => self.normalized(id),
            ProxyExpr::Const(c) => Ok(Column {
                values: vec![*c; n],
                confidence: vec![ConfidenceLevel::VeryHigh; n],
            }),
            ProxyExpr::Sum(xs) => {
                if self.opts.weights_on_raw {
                    if let Some(terms) = weighted_terms(xs) {
                        return self.raw_weighted_sum(&terms);
                    }
                }
                self.fold(xs, 0.0, |a, b| a + b)
            }
            ProxyExpr::Prod(xs) => self.fold(xs, 1.0, |a, b| a * b),
        }
    }

    fn fold(&mut self, xs: &[ProxyExpr], init: f64, op: fn(f64, f64) -> f64) -> Result<Column> {
        let n = self.scope.len();
        let mut acc = Column {
            values: vec![init; n],
            confidence: vec![ConfidenceLevel::VeryHigh; n],
        };
        for x in xs {
            let col = self.eval(x)?;
            for i in 0..n {
                acc.values[i] = op(acc.values[i], col.values[i]);
                acc.confidence[i] = acc.confidence[i].min(col.confidence[i]);
            }
        }
        Ok(acc)
    }

    /// Σ w·raw, then max-normalised as one unit.
    fn raw_weighted_sum(&mut self, terms: &[(f64, &str)]) -> Result<Column> {
        let n = self.scope.len();
        let mut values = vec![0.0; n];
        let mut confidence = vec![ConfidenceLevel::VeryHigh; n];
        for &(w, id) in terms {
            let raw = self.raw(id)?;
            for (i, &(v, c)) in raw.iter().enumerate() {
                values[i] += w * v;
                confidence[i] = confidence[i].min(c);
            }
        }
        let max = values.iter().fold(0.0f64, |m, &v| m.max(v));
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Ok(Column { values, confidence })
    }
}

/// `Some` when every operand is `w₁ * … * x` (one variable, any number of
/// weights) or a bare variable.
fn weighted_terms(xs: &[ProxyExpr]) -> Option<Vec<(f64, &str)>> {
    xs.iter()
        .map(|x| match x {
            ProxyExpr::Var(v) => Some((1.0, v.as_str())),
            ProxyExpr::Prod(fs) => {
                let mut weight = 1.0;
                let mut var = None;
                for f in fs {
                    match f {
                        ProxyExpr::Const(c) => weight *= c,
                        ProxyExpr::Var(v) if var.is_none() => var = Some(v.as_str()),
                        _ => return None,
                    }
                }
                var.map(|v| (weight, v))
            }
            _ => None,
        })
        .collect()
}

/// Evaluates `e` over `scope`. Each variable is max-normalised over the scope
/// first; per-region confidence is the minimum over all referenced variables.
pub fn evaluate<E: ProxyEnv + ?Sized>(
    e: &ProxyExpr,
    env: &E,
    scope: &[String],
    opts: EvalOptions,
) -> Result<VariableSeries> {
    let mut ev = Evaluator {
        env,
        scope,
        opts,
        level: None,
        raw: HashMap::new(),
    };
    // Resolve every variable up front so errors do not depend on operand order.
    for id in e.variables() {
        ev.raw(id)?;
    }
    let col = ev.eval(e)?;
    let level = ev.level.unwrap_or(SpatialLevel::Lau);
    let mut out = VariableSeries::new(SeriesMeta::new(e.to_string(), level));
    for (i, region) in scope.iter().enumerate() {
        out.insert(Observation {
            region: region.clone(),
            value: Some(col.values[i]),
            confidence: col.confidence[i],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::parse;

    fn series(id: &str, values: &[(&str, f64)]) -> VariableSeries {
        VariableSeries::from_values(id, SpatialLevel::Lau, values.iter().copied())
    }

    fn scope(rs: &[&str]) -> Vec<String> {
        rs.iter().map(|s| s.to_string()).collect()
    }

    fn values(s: &VariableSeries) -> Vec<f64> {
        s.observations.values().map(|o| o.value.unwrap()).collect()
    }

    fn env(list: Vec<VariableSeries>) -> BTreeMap<String, VariableSeries> {
        list.into_iter().map(|s| (s.variable_id.clone(), s)).collect()
    }

    #[test]
    fn normalize_examples() {
        let s = series("x", &[("A", 2.0), ("B", 4.0), ("C", 0.0)]);
        assert_eq!(values(&normalize_series(&s).unwrap()), [0.5, 1.0, 0.0]);
        let z = series("x", &[("A", 0.0), ("B", 0.0)]);
        assert_eq!(values(&normalize_series(&z).unwrap()), [0.0, 0.0]);
        let one = series("x", &[("A", 7.0)]);
        assert_eq!(values(&normalize_series(&one).unwrap()), [1.0]);
    }

    #[test]
    fn normalize_rejects_negative_and_missing() {
        let s = series("x", &[("A", -1.0), ("B", 4.0)]);
        assert!(matches!(normalize_series(&s), Err(Error::NegativeProxyValue { .. })));
        let mut m = series("x", &[("A", 1.0)]);
        m.insert(Observation::missing("B"));
        assert!(matches!(normalize_series(&m), Err(Error::MissingProxyValue { .. })));
    }

    #[test]
    fn weighted_variable() {
        let env = env(vec![series("x", &[("A", 1.0), ("B", 2.0)])]);
        let out = evaluate(&parse("2 * x").unwrap(), &env, &scope(&["A", "B"]), EvalOptions::default()).unwrap();
        assert_eq!(values(&out), [1.0, 2.0]);
    }

    #[test]
    fn sum_of_identical_is_twice_normalized() {
        let s = series("x", &[("A", 3.0), ("B", 4.0), ("C", 1.0)]);
        let mut y = s.clone();
        y.variable_id = "y".into();
        let norm = values(&normalize_series(&s).unwrap());
        let env = env(vec![s, y]);
        let out = evaluate(&parse("x + y").unwrap(), &env, &scope(&["A", "B", "C"]), EvalOptions::default()).unwrap();
        let expected: Vec<f64> = norm.iter().map(|v| 2.0 * v).collect();
        assert_eq!(values(&out), expected);
    }

    #[test]
    fn confidence_is_minimum() {
        let mut x = series("x", &[("A", 1.0), ("B", 2.0)]);
        let mut y = series("y", &[("A", 1.0), ("B", 2.0)]);
        x.observations.values_mut().for_each(|o| o.confidence = ConfidenceLevel::High);
        y.observations.values_mut().for_each(|o| o.confidence = ConfidenceLevel::Medium);
        let env = env(vec![x, y]);
        let out = evaluate(&parse("x + y").unwrap(), &env, &scope(&["A", "B"]), EvalOptions::default()).unwrap();
        assert!(out.observations.values().all(|o| o.confidence == ConfidenceLevel::Medium));
    }

    #[test]
    fn var_equals_normalize() {
        let s = series("x", &[("A", 3.0), ("B", 9.0), ("C", 0.5)]);
        let env = env(vec![s.clone()]);
        let sc = scope(&["A", "B", "C"]);
        let out = evaluate(&parse("x").unwrap(), &env, &sc, EvalOptions::default()).unwrap();
        assert_eq!(values(&out), values(&normalize_over(&s, &sc).unwrap()));
    }

    #[test]
    fn evaluation_errors() {
        let mut nuts3 = series("z", &[("A", 1.0)]);
        nuts3.level = SpatialLevel::Nuts3;
        let env = env(vec![series("x", &[("A", 1.0)]), nuts3]);
        let sc = scope(&["A"]);
        let opts = EvalOptions::default();
        assert!(matches!(
            evaluate(&parse("x + q").unwrap(), &env, &sc, opts),
            Err(Error::UnresolvedVariable(v)) if v == "q"
        ));
        assert!(matches!(
            evaluate(&parse("x * z").unwrap(), &env, &sc, opts),
            Err(Error::LevelMismatch(..))
        ));
        assert!(matches!(
            evaluate(&parse("x").unwrap(), &env, &scope(&["A", "B"]), opts),
            Err(Error::MissingProxyValue { .. })
        ));
    }

    #[test]
    fn raw_weights_variant() {
        let env = env(vec![
            series("a", &[("A", 10.0), ("B", 0.0)]),
            series("b", &[("A", 0.0), ("B", 1.0)]),
        ]);
        let sc = scope(&["A", "B"]);
        let e = parse("3 * a + 1 * b").unwrap();
        let post = evaluate(&e, &env, &sc, EvalOptions::default()).unwrap();
        assert_eq!(values(&post), [3.0, 1.0]);
        let raw = evaluate(&e, &env, &sc, EvalOptions { weights_on_raw: true }).unwrap();
        assert_eq!(values(&raw), [1.0, 1.0 / 30.0]);
    }
}
