use std::path::PathBuf;

use crate::region::SpatialLevel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },

    // hierarchy
    #[error("duplicate region code `{0}`")]
    DuplicateCode(String),
    #[error("unknown spatial level `{0}`")]
    UnknownLevel(String),
    #[error("region `{code}` references unknown parent `{parent}`")]
    DanglingParent { code: String, parent: String },
    #[error("region `{code}` at {level} has parent `{parent}` at {parent_level}")]
    ParentLevelMismatch {
        code: String,
        level: SpatialLevel,
        parent: String,
        parent_level: SpatialLevel,
    },
    #[error("region `{0}` is not NUTS0 but has no parent")]
    MissingParent(String),
    #[error("NUTS0 region `{0}` must have no parent and code equal to its country")]
    MalformedRoot(String),
    #[error("region `{code}` is in country `{country}` but its parent `{parent}` is not")]
    CountryMismatch {
        code: String,
        country: String,
        parent: String,
    },
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
    #[error("target level {target} is coarser than {level} of region `{code}`")]
    TargetCoarserThanSource {
        code: String,
        level: SpatialLevel,
        target: SpatialLevel,
    },
    #[error("target level {target} is finer than {level} of region `{code}`")]
    TargetFinerThanSource {
        code: String,
        level: SpatialLevel,
        target: SpatialLevel,
    },
    #[error("region `{code}` has no ancestor at {target}")]
    NoAncestor { code: String, target: SpatialLevel },

    // series
    #[error("region `{region}` is at {found}, series `{variable}` is declared at {expected}")]
    RegionLevelMismatch {
        variable: String,
        region: String,
        expected: SpatialLevel,
        found: SpatialLevel,
    },
    #[error("region `{region}` lies outside country scope `{scope}` of series `{variable}`")]
    RegionOutOfScope {
        variable: String,
        region: String,
        scope: String,
    },
    #[error("duplicate row for region `{0}`")]
    DuplicateRegion(String),
    #[error("value `{0}` is not a number")]
    NonNumericValue(String),
    #[error("value `{0}` is not finite")]
    NonFiniteValue(String),
    #[error("series `{variable}` has {count} missing value(s), first at `{first}`")]
    MissingValues {
        variable: String,
        count: usize,
        first: String,
    },
    #[error("unknown confidence level `{0}`")]
    UnknownConfidence(String),
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("cannot aggregate {from} series to finer or equal level {to}")]
    AggregateNotCoarser { from: SpatialLevel, to: SpatialLevel },

    // formulas
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("a bare number is not a proxy (weight with no variable)")]
    BareNumber,
    #[error("constant {0} may only appear as a weight in a product")]
    UnattachedConstant(f64),
    #[error("negative proxy value {value} for region `{region}` in `{variable}`")]
    NegativeProxyValue {
        variable: String,
        region: String,
        value: f64,
    },
    #[error("unknown variable `{0}`")]
    UnresolvedVariable(String),
    #[error("variables in one formula are at different levels ({0} and {1})")]
    LevelMismatch(SpatialLevel, SpatialLevel),
    #[error("variable `{variable}` has no value for region `{region}`")]
    MissingProxyValue { variable: String, region: String },
    #[error("negative emission cap in tier `{0}`")]
    NegativeCap(String),

    // imputation
    #[error("no candidate predictor survived selection")]
    NoPredictors,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("R² is undefined for a constant target")]
    UndefinedR2,
    #[error("model feature `{0}` missing from input")]
    MissingFeature(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    // disaggregation
    #[error("cannot allocate to an empty set of child regions")]
    EmptyChildren,
    #[error("negative or non-finite allocation weight for `{0}`")]
    InvalidWeight(String),
    #[error("`{target}` needs `{variable}`, which is not available before stage {stage}")]
    UnresolvedDependency {
        target: String,
        variable: String,
        stage: u8,
    },
    #[error("dependency cycle among targets: {0}")]
    DependencyCycle(String),
    #[error("invalid task `{target}`: {message}")]
    InvalidTask { target: String, message: String },

    // validation
    #[error("percentage deviation undefined for zero reported value ({0})")]
    UndefinedDeviation(String),
    #[error("no overlapping regions between result and reference")]
    NoOverlap,

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn at_line(self, line: u64) -> Self {
        Error::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// Strips positional wrappers to reach the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the filesystem rather than of the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io { .. })
    }
}
