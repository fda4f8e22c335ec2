//! Euro emission-standard weighting of the passenger car fleet.
//!
//! Each tier's weight is the sum of its CO, HC+NOx and PM caps (g/km) for
//! diesel passenger cars. Sums are taken in integer micrograms per km so the
//! totals come out as the exact decimal values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionCap {
    pub tier: String,
    pub co: f64,
    pub hc_nox: f64,
    pub pm: f64,
}

impl EmissionCap {
    pub fn new(tier: &str, co: f64, hc_nox: f64, pm: f64) -> Self {
        EmissionCap {
            tier: tier.to_string(),
            co,
            hc_nox,
            pm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionStandardWeights {
    pub tier: String,
    pub co_cap: f64,
    pub hc_nox_cap: f64,
    pub pm_cap: f64,
    pub total: f64,
}

fn micrograms(g_per_km: f64) -> i64 {
    (g_per_km * 1e6).round() as i64
}

/// Totals per tier, in input order.
pub fn euro_weight_table(caps: &[EmissionCap]) -> Result<Vec<EmissionStandardWeights>> {
    caps.iter()
        .map(|c| {
            if [c.co, c.hc_nox, c.pm].iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NegativeCap(c.tier.clone()));
            }
            let total_ug = micrograms(c.co) + micrograms(c.hc_nox) + micrograms(c.pm);
            Ok(EmissionStandardWeights {
                tier: c.tier.clone(),
                co_cap: c.co,
                hc_nox_cap: c.hc_nox,
                pm_cap: c.pm,
                total: total_ug as f64 / 1e6,
            })
        })
        .collect()
}

/// Diesel passenger car caps (g/km) per Euro tier.
pub fn diesel_car_caps() -> Vec<EmissionCap> {
    vec![
        EmissionCap::new("euro_1", 2.72, 0.97, 0.14),
        EmissionCap::new("euro_2", 1.0, 0.7, 0.08),
        // sums to 1.27, not the 1.25 often quoted for this tier
        EmissionCap::new("euro_3", 0.66, 0.56, 0.05),
        EmissionCap::new("euro_4", 0.50, 0.30, 0.025),
        EmissionCap::new("euro_5a", 0.50, 0.230, 0.005),
        EmissionCap::new("euro_5b", 0.50, 0.230, 0.0045),
        EmissionCap::new("euro_6b", 0.50, 0.170, 0.0045),
        EmissionCap::new("euro_6c", 0.50, 0.170, 0.0045),
        EmissionCap::new("euro_6d_temp", 0.50, 0.170, 0.0045),
        EmissionCap::new("euro_6d", 0.50, 0.170, 0.0045),
        EmissionCap::new("euro_6e", 0.50, 0.170, 0.0045),
    ]
}

/// Fleet statistics groups and the cap tier whose weight each one takes.
/// Group 5 is not split into 5a/5b, so the more lenient 5a applies; the
/// unlabelled "other" group is treated like Euro 1.
pub const FLEET_GROUPS: [(&str, &str); 9] = [
    ("euro_1", "euro_1"),
    ("euro_2", "euro_2"),
    ("euro_3", "euro_3"),
    ("euro_4", "euro_4"),
    ("euro_5", "euro_5a"),
    ("euro_6r", "euro_6b"),
    ("euro_6dt", "euro_6d_temp"),
    ("euro_6d", "euro_6d"),
    ("euro_other", "euro_1"),
];

/// Weight per fleet group, looked up in `table` via [`FLEET_GROUPS`].
pub fn fleet_group_weights(table: &[EmissionStandardWeights]) -> Result<Vec<(String, f64)>> {
    FLEET_GROUPS
        .iter()
        .map(|(group, tier)| {
            table
                .iter()
                .find(|w| w.tier == *tier)
                .map(|w| (group.to_string(), w.total))
                .ok_or_else(|| Error::Config(format!("no emission caps for tier `{tier}`")))
        })
        .collect()
}

/// Builds the weighted fleet formula, e.g. `3.83 * cars_euro_1 + ...`, with
/// variable ids `<prefix><group>`.
pub fn fleet_formula(prefix: &str, weights: &[(String, f64)]) -> String {
    weights
        .iter()
        .map(|(group, w)| format!("{w} * {prefix}{group}"))
        .collect::<Vec<_>>()
        .join(" + ")
}
