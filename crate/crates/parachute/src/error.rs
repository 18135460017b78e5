use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to name the offending
/// table, column, row, or key without keeping a backtrace around.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("csv ingest error in table '{table}', row {row}, column '{column}': {message}")]
    Ingest {
        table: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv read error in table '{table}': {message}")]
    CsvRead { table: String, message: String },

    #[error("unknown table '{0}'")]
    UnknownTable(String),

    #[error("unknown column '{column}' in table '{table}'")]
    UnknownColumn { table: String, column: String },

    #[error("duplicate key {key} in column '{column}' of table '{table}'")]
    DuplicateKey {
        table: String,
        column: String,
        key: String,
    },

    #[error("dangling foreign key: row {row} of '{fk_table}' has {fk_column}={key} with no partner in '{pk_table}'")]
    DanglingKey {
        fk_table: String,
        fk_column: String,
        pk_table: String,
        row: usize,
        key: String,
    },

    #[error("row {row} of '{fk_table}' matches several '{pk_table}' rows in different bins; cannot attach in relaxed numeric mode")]
    NotAttachable {
        fk_table: String,
        pk_table: String,
        row: usize,
    },

    #[error("histogram error: {0}")]
    Histogram(String),

    #[error("NULL value fed to a histogram without a NULL bin")]
    NullWithoutNullBin,

    #[error("foreign-key graph contains a cycle: {}", .0.join(" -> "))]
    SchemaCycle(Vec<String>),

    #[error("query join graph is cyclic ({0})")]
    CyclicQuery(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("execution error: {0}")]
    Exec(String),

    #[error("oracle sets were computed for query {expected:#x}, got metrics for query {got:#x}")]
    QueryIdMismatch { expected: u64, got: u64 },

    #[error("unsupported regex construct in '{pattern}': {reason}")]
    UnsupportedRegex { pattern: String, reason: String },

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
