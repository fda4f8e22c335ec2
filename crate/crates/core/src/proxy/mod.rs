//! Composite proxy formulas.
//!
//! A formula is a weighted sum or product of variables, e.g.
//! `3.83 * euro_1 + 1.78 * euro_2` or `residential_living_area * heating_degree_days`.
//! Every variable is max-normalised over the evaluation scope before the
//! operators apply, so operands with different units can be combined.

mod euro;
mod eval;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use euro::{
    diesel_car_caps, euro_weight_table, fleet_formula, fleet_group_weights, EmissionCap,
    EmissionStandardWeights, FLEET_GROUPS,
};
pub use eval::{evaluate, normalize_over, normalize_series, EvalOptions, ProxyEnv};
pub use parse::parse;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProxyExpr {
    Var(String),
    /// Nonnegative scalar weight; only valid as a product operand.
    Const(f64),
    Sum(Vec<ProxyExpr>),
    Prod(Vec<ProxyExpr>),
}

impl ProxyExpr {
    /// Referenced variable ids, sorted and deduplicated.
    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            ProxyExpr::Var(v) => {
                out.insert(v);
            }
            ProxyExpr::Const(_) => {}
            ProxyExpr::Sum(xs) | ProxyExpr::Prod(xs) => xs.iter().for_each(|x| x.collect_vars(out)),
        }
    }
}

impl fmt::Display for ProxyExpr {
    /// Prints with every compound operand parenthesised; re-parsing the
    /// output yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(e: &ProxyExpr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                ProxyExpr::Sum(_) | ProxyExpr::Prod(_) => write!(f, "({e})"),
                _ => write!(f, "{e}"),
            }
        }
        let (xs, sep) = match self {
            ProxyExpr::Var(v) => return f.write_str(v),
            ProxyExpr::Const(c) => return write!(f, "{c}"),
            ProxyExpr::Sum(xs) => (xs, " + "),
            ProxyExpr::Prod(xs) => (xs, " * "),
        };
        for (i, x) in xs.iter().enumerate() {
            if i > 0 {
                f.write_str(sep)?;
            }
            operand(x, f)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ProxyExpr {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        parse(s)
    }
}
