//! Trainable per-token span tagger.
//!
//! A small sequence labeler: hashed token embeddings, a window-3 contextual
//! layer with a tanh nonlinearity, and a per-token sigmoid emitting the
//! probability that the token lies inside a span. Stands in for the large
//! pretrained token classifiers used at production scale; the interface is
//! the contract, the architecture behind it is swappable.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_vec, sigmoid, Adam, Linear, LinearGrad};
use crate::textminer::tokenizer::{token_bucket, TokenSequence};
use crate::textminer::{spans_to_labels, AnnotatedText, SpanKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    /// Vocabulary buckets for the hashed embedding table.
    pub hash_buckets: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of the data held out for epoch selection; 0 selects the best
    /// epoch on the training data itself.
    pub validation_fraction: f64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            hash_buckets: 1024,
            embed_dim: 32,
            hidden_dim: 64,
            epochs: 200,
            learning_rate: 1e-2,
            validation_fraction: 0.0,
        }
    }
}

/// A trained sequence labeler for one span kind. Immutable after training;
/// inference is thread-safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    pub kind: SpanKind,
    pub config: TaggerConfig,
    /// `hash_buckets` x `embed_dim`, row-major.
    embedding: Vec<f64>,
    /// window of 3 embeddings -> hidden, tanh.
    hidden: Linear,
    /// hidden -> 1 logit.
    output: Linear,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TaggerCheckpoint {
    format_version: u32,
    model: TaggerModel,
}

struct TaggerGrads {
    embedding: Vec<f64>,
    hidden: LinearGrad,
    output: LinearGrad,
}

impl TaggerModel {
    fn init(kind: SpanKind, config: TaggerConfig, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (config.embed_dim as f64).sqrt();
        let embedding = init_vec(rng, config.hash_buckets * config.embed_dim, scale);
        let hidden = Linear::init(3 * config.embed_dim, config.hidden_dim, rng);
        let output = Linear::init(config.hidden_dim, 1, rng);
        Self {
            kind,
            config,
            embedding,
            hidden,
            output,
        }
    }

    fn embed_row(&self, bucket: usize) -> &[f64] {
        let d = self.config.embed_dim;
        &self.embedding[bucket * d..(bucket + 1) * d]
    }

    fn buckets_for(&self, tokens: &TokenSequence) -> Vec<usize> {
        tokens
            .tokens()
            .iter()
            .map(|t| token_bucket(&t.surface, self.config.hash_buckets))
            .collect()
    }

    /// Window input for position `i`: previous, current, next embedding
    /// (zeros past the ends).
    fn window_input(&self, buckets: &[usize], i: usize) -> Vec<f64> {
        let d = self.config.embed_dim;
        let mut x = vec![0.0; 3 * d];
        if i > 0 {
            x[..d].copy_from_slice(self.embed_row(buckets[i - 1]));
        }
        x[d..2 * d].copy_from_slice(self.embed_row(buckets[i]));
        if i + 1 < buckets.len() {
            x[2 * d..].copy_from_slice(self.embed_row(buckets[i + 1]));
        }
        x
    }

    /// Per-token probability of "inside span". Output length equals the
    /// token count; values lie in [0, 1].
    pub fn predict(&self, tokens: &TokenSequence) -> Vec<f64> {
        let buckets = self.buckets_for(tokens);
        (0..buckets.len())
            .map(|i| {
                let x = self.window_input(&buckets, i);
                let h: Vec<f64> = self.hidden.forward(&x).iter().map(|v| v.tanh()).collect();
                sigmoid(self.output.forward(&h)[0])
            })
            .collect()
    }

    /// One training pass over an item; returns the mean BCE loss and
    /// accumulates gradients.
    fn item_loss_grad(&self, buckets: &[usize], labels: &[bool], grads: &mut TaggerGrads) -> f64 {
        let n = buckets.len() as f64;
        let d = self.config.embed_dim;
        let mut loss = 0.0;
        for i in 0..buckets.len() {
            let x = self.window_input(buckets, i);
            let pre: Vec<f64> = self.hidden.forward(&x);
            let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
            let z = self.output.forward(&h)[0];
            let p = sigmoid(z);
            let y = if labels[i] { 1.0 } else { 0.0 };
            // numerically stable BCE via logits
            loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();

            let dz = (p - y) / n;
            let dh = self.output.backward(&h, &[dz], &mut grads.output);
            let dpre: Vec<f64> = dh.iter().zip(&h).map(|(&g, &hv)| g * (1.0 - hv * hv)).collect();
            let dx = self.hidden.backward(&x, &dpre, &mut grads.hidden);
            if i > 0 {
                scatter_add(&mut grads.embedding, buckets[i - 1], d, &dx[..d]);
            }
            scatter_add(&mut grads.embedding, buckets[i], d, &dx[d..2 * d]);
            if i + 1 < buckets.len() {
                scatter_add(&mut grads.embedding, buckets[i + 1], d, &dx[2 * d..]);
            }
        }
        loss / n
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = TaggerCheckpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::InvalidInput(format!("serializing tagger: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: TaggerCheckpoint = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported tagger checkpoint version {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }
}

fn scatter_add(table: &mut [f64], bucket: usize, dim: usize, grad: &[f64]) {
    let row = &mut table[bucket * dim..(bucket + 1) * dim];
    for (r, g) in row.iter_mut().zip(grad) {
        *r += g;
    }
}

/// Token-level F1 of thresholded predictions against gold labels.
pub fn token_f1(predicted: &[bool], gold: &[bool]) -> f64 {
    debug_assert_eq!(predicted.len(), gold.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if 2 * tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Trains a tagger for `kind`, returning the epoch snapshot with the best
/// validation token-F1. Deterministic given the seed.
pub fn train_tagger(
    data: &[AnnotatedText],
    kind: SpanKind,
    config: TaggerConfig,
    seed: u64,
) -> Result<TaggerModel> {
    if data.is_empty() {
        return Err(Error::DegenerateTraining("no annotated items".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::InvalidInput(
            "validation_fraction must lie in [0, 1)".into(),
        ));
    }

    // Pre-tokenize and label every item once.
    let mut items = Vec::with_capacity(data.len());
    for ann in data {
        let tokens = super::tokenize(&ann.text);
        let labels = spans_to_labels(ann, kind, &tokens)?;
        items.push((tokens, labels));
    }

    let n_valid = if config.validation_fraction > 0.0 {
        ((data.len() as f64 * config.validation_fraction).floor() as usize)
            .max(1)
            .min(data.len() - 1)
    } else {
        0
    };
    let n_train = data.len() - n_valid;
    let (train_items, valid_items) = items.split_at(n_train);
    let eval_items: &[(TokenSequence, Vec<bool>)] = if n_valid == 0 { train_items } else { valid_items };

    if !train_items.iter().any(|(_, labels)| labels.iter().any(|&l| l)) {
        return Err(Error::DegenerateTraining(format!(
            "all {kind:?} training labels are negative"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = TaggerModel::init(kind, config.clone(), &mut rng);
    let mut opt = Adam::new(
        config.learning_rate,
        &[model.embedding.len(), model.hidden.w.len(), model.hidden.b.len(), model.output.w.len(), model.output.b.len()],
    );

    let mut best: Option<(f64, TaggerModel)> = None;
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let (tokens, labels) = &train_items[idx];
            if tokens.is_empty() {
                continue;
            }
            let buckets = model.buckets_for(tokens);
            let mut grads = TaggerGrads {
                embedding: vec![0.0; model.embedding.len()],
                hidden: LinearGrad::zeros_like(&model.hidden),
                output: LinearGrad::zeros_like(&model.output),
            };
            model.item_loss_grad(&buckets, labels, &mut grads);
            opt.step(
                &mut [
                    &mut model.embedding,
                    &mut model.hidden.w,
                    &mut model.hidden.b,
                    &mut model.output.w,
                    &mut model.output.b,
                ],
                &[
                    &grads.embedding,
                    &grads.hidden.w,
                    &grads.hidden.b,
                    &grads.output.w,
                    &grads.output.b,
                ],
            );
        }

        let mut f1_sum = 0.0;
        let mut f1_count = 0usize;
        for (tokens, labels) in eval_items {
            if tokens.is_empty() {
                continue;
            }
            let probs = model.predict(tokens);
            let pred: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
            f1_sum += token_f1(&pred, labels);
            f1_count += 1;
        }
        let f1 = if f1_count == 0 { 0.0 } else { f1_sum / f1_count as f64 };
        if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
            best = Some((f1, model.clone()));
        }
    }

    Ok(best.expect("at least one epoch ran").1)
}
