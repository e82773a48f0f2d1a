use alloc::string::String;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("negative sample {value} at index {index}")]
    NegativeSample { index: usize, value: f64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("degenerate subband: {0}")]
    DegenerateSubband(String),
    #[error("subband mismatch: {0}")]
    SubbandMismatch(String),
    #[error("no valid tile: {0}")]
    NoValidTile(String),
    #[error("training diverged at epoch {epoch}: loss {loss:e} against first-epoch loss {initial:e}; lower mu")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
