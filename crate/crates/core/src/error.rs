use thiserror::Error;

use crate::linalg::Point;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("point ({}, {}) lies outside the coefficient domain", .0[0], .0[1])]
    OutsideDomain(Point),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("ellipticity violated at ({}, {}): smallest eigenvalue {lambda_min:e}", .point[0], .point[1])]
    Ellipticity { point: Point, lambda_min: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("linear solver failed: {message} (condition estimate {condition:e})")]
    Solver { message: String, condition: f64 },
    #[error("assembly produced non-finite entries: {0}")]
    Assembly(String),
    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("config syntax error at line {line}, column {column}: {message}")]
    ConfigSyntax { line: usize, column: usize, message: String },
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("negative density encountered: {0}")]
    NegativeDensity(String),
    #[error("signed unbounded trace unsupported")]
    SignedUnbounded,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
