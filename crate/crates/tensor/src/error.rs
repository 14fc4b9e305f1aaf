use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("loss does not depend on any tensor that requires grad")]
    DetachedLoss,
    #[error("concat_rows needs at least one input")]
    EmptyConcat,
}
