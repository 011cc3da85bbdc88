//! Scores that look only at the predicted class probabilities.

use crate::error::{OodError, Result};
use crate::io::{ProbabilityMatrix, ScoreVector};

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Negated maximum softmax probability of one row.
pub fn msp_row(p: &[f32]) -> f64 {
    -p.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max)
}

/// Shannon entropy (nats) of one row, with `0 * ln 0` taken as 0 via the clamp.
pub fn entropy_row(p: &[f32]) -> f64 {
    -p.iter()
        .map(|&v| {
            let v = v as f64;
            v * v.max(LOG_CLAMP).ln()
        })
        .sum::<f64>()
}

pub fn msp_score(p: &ProbabilityMatrix) -> Result<ScoreVector> {
    ScoreVector::new(p.rows().map(msp_row).collect())
}

pub fn entropy_score(p: &ProbabilityMatrix) -> Result<ScoreVector> {
    ScoreVector::new(p.rows().map(entropy_row).collect())
}

/// MSP and Entropy carry no fitted state beyond the class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictiveModel {
    n_classes: usize,
}

impl PredictiveModel {
    pub fn new(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(OodError::InvalidParameter(format!(
                "n_classes must be >= 2, got {n_classes}"
            )));
        }
        Ok(PredictiveModel { n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn check(&self, p: &ProbabilityMatrix) -> Result<()> {
        if p.n_classes() != self.n_classes {
            return Err(OodError::DimensionMismatch {
                what: "class",
                expected: self.n_classes,
                found: p.n_classes(),
            });
        }
        Ok(())
    }

    pub fn msp(&self, p: &ProbabilityMatrix) -> Result<ScoreVector> {
        self.check(p)?;
        msp_score(p)
    }

    pub fn entropy(&self, p: &ProbabilityMatrix) -> Result<ScoreVector> {
        self.check(p)?;
        entropy_score(p)
    }
}
