//! Navigation and captioning metrics.

pub mod cap;
pub mod nav;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("good viewpoint set is empty")]
    EmptyGoodSet,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("ground-truth length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("no embedding for frame {0:?}")]
    MissingEmbedding(String),
    #[error("embedding dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding file: {0}")]
    EmbeddingFile(String),
    #[error("references are empty")]
    EmptyReferences,
    #[error("CIDEr-D needs a corpus of at least two items, got {0}")]
    DegenerateCorpus(usize),
}

/// Length penalty `L_gt / max(L_gt, L_pred)`.
pub fn length_ratio(l_gt: f64, l_pred: f64) -> Result<f64, MetricError> {
    if !(l_gt > 0.0) {
        return Err(MetricError::NonPositiveLength(l_gt));
    }
    Ok(l_gt / l_gt.max(l_pred))
}
