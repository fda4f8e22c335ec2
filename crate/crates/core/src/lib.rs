//! Proxy-based spatial disaggregation of national final energy consumption
//! and greenhouse-gas totals down the NUTS0 → LAU region hierarchy.
//!
//! The crate is organised along the processing chain:
//!
//! * [`region`] – the NUTS/LAU hierarchy and ancestor/descendant queries.
//! * [`store`] – per-region variable series, confidence levels, missingness
//!   accounting and aggregation.
//! * [`proxy`] – the composite-proxy formula language, max-normalisation and
//!   Euro emission-standard weights.
//! * [`impute`] – gradient-boosted regression trees, cross-validated grid
//!   search and the missing-value imputation pipeline.
//! * [`disagg`] – proportional allocation and the three-stage pipeline.
//! * [`validate`] – deviation reports against reference inventories.
//! * [`project`] – on-disk project layout shared by the CLI and bindings.

pub mod disagg;
pub mod error;
pub mod format;
pub mod impute;
pub mod project;
pub mod proxy;
pub mod region;
pub mod store;
pub mod validate;

pub use error::{Error, Result};
pub use region::{RegionHierarchy, RegionNode, SpatialLevel};
pub use store::{ConfidenceLevel, CountryScope, Observation, VariableSeries};
