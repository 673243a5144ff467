//! Normalized temperature-scaled cross-entropy over a batch similarity
//! matrix.
//!
//! The minimized form is implemented: the mean over anchors of the negative
//! log-softmax of the matched pair. Softmax rows are shifted by their
//! maximum, so adding a constant to a whole row leaves the row loss exactly
//! unchanged.

use serde::{Deserialize, Serialize};

use crate::encoders::{similarity, EmbeddingVector};
use crate::error::{Error, Result};

/// N x N similarities; entry (i, j) relates audio `i` to text `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a square matrix from row-major values in [-1, 1].
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("similarity matrix must be non-empty".into()));
        }
        if values.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "{} values do not form a {n}x{n} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-6) {
            return Err(Error::InvalidInput(
                "similarity entries must be finite cosines in [-1, 1]".into(),
            ));
        }
        Ok(Self { n, values })
    }

    pub fn from_embeddings(audio: &[EmbeddingVector], text: &[EmbeddingVector]) -> Result<Self> {
        if audio.len() != text.len() {
            return Err(Error::InvalidInput(format!(
                "{} audio vs {} text embeddings",
                audio.len(),
                text.len()
            )));
        }
        let n = audio.len();
        let mut values = Vec::with_capacity(n * n);
        for a in audio {
            for t in text {
                values.push(similarity(a, t));
            }
        }
        Self::new(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Which anchors contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossDirection {
    /// Rows are anchors: each audio is contrasted against all texts.
    AudioToText,
    /// Average of the row-anchored and column-anchored losses.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub direction: LossDirection,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            direction: LossDirection::AudioToText,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Mean over rows `i` of `-log(exp(s[i][i]/t) / sum_j exp(s[i][j]/t))`;
/// in symmetric mode, averaged with the same quantity over columns.
pub fn nt_xent_loss(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let rows = anchored_loss(s, cfg.temperature, false);
    Ok(match cfg.direction {
        LossDirection::AudioToText => rows,
        LossDirection::Symmetric => (rows + anchored_loss(s, cfg.temperature, true)) / 2.0,
    })
}

/// Loss plus its gradient with respect to every similarity entry
/// (row-major N x N).
pub fn nt_xent_loss_grad(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let n = s.n();
    let mut grad = vec![0.0; n * n];
    let rows = anchored_loss_grad(s, cfg.temperature, false, &mut grad, 1.0);
    let loss = match cfg.direction {
        LossDirection::AudioToText => rows,
        LossDirection::Symmetric => {
            // halve the row contribution already in `grad`
            for g in grad.iter_mut() {
                *g *= 0.5;
            }
            let cols = anchored_loss_grad(s, cfg.temperature, true, &mut grad, 0.5);
            (rows + cols) / 2.0
        }
    };
    Ok((loss, grad))
}

fn anchored_loss(s: &SimilarityMatrix, temperature: f64, columns: bool) -> f64 {
    let n = s.n();
    let mut total = 0.0;
    for anchor in 0..n {
        let entry = |k: usize| {
            if columns {
                s.get(k, anchor)
            } else {
                s.get(anchor, k)
            }
        };
        let max = (0..n).map(|k| entry(k) / temperature).fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = (0..n)
            .map(|k| (entry(k) / temperature - max).exp())
            .sum::<f64>()
            .ln();
        total += log_sum - (entry(anchor) / temperature - max);
    }
    total / n as f64
}

/// Accumulates `weight * d(anchored loss)/d(s)` into `grad`, returning the
/// anchored loss itself.
fn anchored_loss_grad(
    s: &SimilarityMatrix,
    temperature: f64,
    columns: bool,
    grad: &mut [f64],
    weight: f64,
) -> f64 {
    let n = s.n();
    let mut total = 0.0;
    for anchor in 0..n {
        let entry = |k: usize| {
            if columns {
                s.get(k, anchor)
            } else {
                s.get(anchor, k)
            }
        };
        let max = (0..n).map(|k| entry(k) / temperature).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = (0..n).map(|k| (entry(k) / temperature - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() - (entry(anchor) / temperature - max);
        for k in 0..n {
            let softmax = exps[k] / sum;
            let delta = if k == anchor { 1.0 } else { 0.0 };
            let g = weight * (softmax - delta) / (n as f64 * temperature);
            if columns {
                grad[k * n + anchor] += g;
            } else {
                grad[anchor * n + k] += g;
            }
        }
    }
    total / n as f64
}
