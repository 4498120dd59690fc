use std::path::PathBuf;

/// All failure modes surfaced by this crate.
///
/// The variants are grouped by how a caller should react:
/// input/data problems ([`Structural`](Error::Structural),
/// [`Parameter`](Error::Parameter), [`Lookup`](Error::Lookup),
/// [`Parse`](Error::Parse), [`Io`](Error::Io)) versus numerical problems
/// ([`Degenerate`](Error::Degenerate),
/// [`NotPositiveDefinite`](Error::NotPositiveDefinite),
/// [`UnderConstrained`](Error::UnderConstrained),
/// [`InsideTest`](Error::InsideTest)).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Structurally invalid geometry: out-of-range face index, repeated
    /// vertex inside a face, non-finite coordinate, mismatched array
    /// lengths and the like.
    #[error("structural input error: {0}")]
    Structural(String),

    /// A parameter value outside its documented domain (non-positive sigma,
    /// negative weight, zero iteration budget, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Geometry that leaves the problem underdetermined, e.g. collinear
    /// landmarks for a similarity fit or a zero-spread endplate.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A landmark name or vertebra label that is not present.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A symmetric solve hit a non-positive pivot. `pivot` is the row/column
    /// index in the caller's original numbering.
    #[error("solver error: matrix is not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    /// A solve was requested with nothing pinning the solution (for example
    /// a deformation with no handles).
    #[error("under-constrained system: {0}")]
    UnderConstrained(String),

    /// Inside/outside classification was asked of a surface that cannot
    /// support it (not watertight) or a query that could not be resolved.
    #[error("inside test failed: {0}")]
    InsideTest(String),

    /// Malformed input file. `offset` is the byte offset of the offending
    /// location in the file.
    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Underlying I/O failure, tagged with the path involved.
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
