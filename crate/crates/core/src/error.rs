use thiserror::Error;

/// Failures raised while loading or validating the variable catalogue.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema document does not parse: {0}")]
    Parse(String),
    #[error("duplicate variable name '{0}'")]
    DuplicateName(String),
    #[error("variable '{name}' has cardinality {cardinality}; at least 2 categories are required")]
    Cardinality { name: String, cardinality: usize },
    #[error("no household-level variable is designated as household size")]
    MissingSizeVariable,
    #[error("more than one variable is designated as household size ('{0}', '{1}')")]
    DuplicateSizeVariable(String, String),
    #[error("household size variable must be household-level")]
    SizeVariableLevel,
    #[error("household size variable has {codes} categories but {sizes} sizes are allowed")]
    SizeCoverage { codes: usize, sizes: usize },
    #[error("allowed sizes must be distinct and at least {min}; got {sizes:?}")]
    InvalidSizes { sizes: Vec<usize>, min: usize },
    #[error("schema needs at least one {0}-level variable")]
    EmptyLevel(&'static str),
    #[error("variable '{name}' declares {labels} labels for {cardinality} categories")]
    LabelCount {
        name: String,
        labels: usize,
        cardinality: usize,
    },
    #[error("head variable '{name}' refers to '{target}', which is not a compatible individual-level variable")]
    HeadTarget { name: String, target: String },
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("variable '{0}' is individual-level and needs a member index")]
    MemberRequired(String),
    #[error("variable '{0}' is household-level and takes no member index")]
    MemberNotAllowed(String),
    #[error("member index {index} out of range 1..={members}")]
    MemberOutOfRange { index: usize, members: usize },
    #[error("household size {0} is not an allowed size")]
    SizeNotAllowed(usize),
}

/// Failures raised by the rule language.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown variable '{name}' at {line}:{column}")]
    UnknownVariable {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("type mismatch at {line}:{column}: {message}")]
    Type {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate rule id '{0}'")]
    DuplicateId(String),
    #[error("no household of size {size} satisfies every rule ({draws} random draws tried)")]
    EmptySupport { size: usize, draws: u64 },
    #[error("household '{0}' has missing cells; impute or mask them before checking rules")]
    MissingCells(String),
    #[error("household '{id}' has size {size}, which is not an allowed size")]
    SizeNotAllowed { id: String, size: usize },
}

/// Numerical or rejection-sampling failures inside model and sampler steps.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("stick fraction {value} at position {index} is outside [0, 1]")]
    StickFraction { index: usize, value: f64 },
    #[error("final stick fraction must be exactly 1, got {0}")]
    StickNotClosed(f64),
    #[error("rejection cap of {attempts} draws exceeded for size {size}; rule hits: {hits}")]
    TruncatedCap {
        size: usize,
        attempts: u64,
        hits: String,
    },
    #[error("rejection cap of {attempts} draws exceeded imputing household '{household}'; rule hits: {hits}")]
    ImputeCap {
        household: String,
        attempts: u64,
        hits: String,
    },
    #[error("augmentation cap of {attempts} draws exceeded at household size {size}")]
    AugmentCap { size: usize, attempts: u64 },
    #[error("all class weights vanished for household '{0}'")]
    ZeroWeights(String),
    #[error("household '{0}' cannot be made rule-consistent by changing its error-prone or missing cells")]
    Unrepairable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Failures while contaminating or evaluating datasets.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{0}")]
    Invalid(String),
    #[error("could not make flagged household '{household}' violate the rules within {attempts} attempts")]
    Undetectable { household: String, attempts: u64 },
    #[error("query references unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("category {code} is out of range for variable '{variable}'")]
    UnknownCategory { variable: String, code: usize },
    #[error("dataset has missing cells; queries need complete data")]
    Incomplete,
    #[error("schemas differ: {0}")]
    SchemaMismatch(String),
    #[error("combining needs at least 2 imputations, got {0}")]
    TooFewImputations(usize),
}

/// File-format failures for microdata, checkpoints, configuration and traces.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
}

/// Umbrella error for pipeline-level entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
