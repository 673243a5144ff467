//! Audio and text towers mapping raw inputs into a shared embedding space.
//!
//! Each tower is an encoder followed by a two-layer adapter (rectifier after
//! the first layer) whose output is L2-normalized, so the dot product of two
//! embeddings is exactly their cosine similarity. The audio encoder
//! summarizes a spectral feature sequence through a learned summary token
//! mixed with the sequence mean; the text encoder pools hashed token
//! embeddings, optionally through a contextual mixing layer. Both are
//! desk-scale stand-ins behind the same interface a large pretrained
//! encoder would implement.

mod features;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::nn::{
    dot, init_vec, l2_normalize, l2_normalize_backward, Linear, LinearGrad, Mlp2, Mlp2Cache,
    Mlp2Grad,
};
use crate::textminer::{token_bucket, tokenize};

pub use features::{featurize_audio, FeatureConfig, FeatureSequence};

/// Text encoder variants. `BagOfEmbeddings` pools token embeddings directly
/// and is order-insensitive; `MeanContext` mixes each token with the
/// sequence mean through a tanh layer before pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    BagOfEmbeddings,
    MeanContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub feature: FeatureConfig,
    /// Audio input length expected by the audio tower, in seconds.
    pub input_len_s: f64,
    /// Dimension of the joint embedding space.
    pub embed_dim: usize,
    pub audio_hidden_dim: usize,
    pub text_hash_buckets: usize,
    pub text_embed_dim: usize,
    pub text_encoder: TextEncoderKind,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            feature: FeatureConfig::default(),
            input_len_s: 10.0,
            embed_dim: 128,
            audio_hidden_dim: 64,
            text_hash_buckets: 4096,
            text_embed_dim: 64,
            text_encoder: TextEncoderKind::BagOfEmbeddings,
        }
    }
}

/// A unit-norm vector in the joint embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Builds an embedding, checking unit norm within 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding values must be finite".into()));
        }
        let norm = dot(&values, &values).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "embedding norm {norm} is not 1 within 1e-6"
            )));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity of two unit-norm embeddings: their dot product.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "embedding dimensions differ");
    dot(a.values(), b.values())
}

/// Renormalized mean of embeddings, used when a clip is embedded block-wise.
pub fn mean_embedding(embeddings: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    if embeddings.is_empty() {
        return Err(Error::InvalidInput("no embeddings to average".into()));
    }
    let dim = embeddings[0].dim();
    let mut acc = vec![0.0; dim];
    for e in embeddings {
        for (a, v) in acc.iter_mut().zip(e.values()) {
            *a += v;
        }
    }
    let n = embeddings.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    let norm = dot(&acc, &acc).sqrt();
    if norm < 1e-9 {
        return Err(Error::InvalidInput(
            "block embeddings cancel out; mean is degenerate".into(),
        ));
    }
    Ok(EmbeddingVector::from_unit(
        acc.into_iter().map(|v| v / norm).collect(),
    ))
}

/// Anything that can embed fixed-length audio blocks and text into the
/// shared space. Implemented by [`TowerModel`]; tests substitute stubs.
pub trait Embedder {
    fn embed_audio_block(&self, clip: &AudioClip) -> Result<EmbeddingVector>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;
    /// Audio block length the embedder expects, in seconds.
    fn block_len_s(&self) -> f64;
}

/// The two-tower model: audio and text encoders plus their adapters.
/// Immutable during inference; training owns a single mutable instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerModel {
    pub config: TowerConfig,
    frame_proj: Linear,
    summary_token: Vec<f64>,
    audio_ctx: Linear,
    audio_adapter: Mlp2,
    token_embedding: Vec<f64>,
    text_ctx: Option<Linear>,
    text_adapter: Mlp2,
}

impl TowerModel {
    pub fn init(config: TowerConfig, seed: u64) -> Result<Self> {
        if config.embed_dim == 0
            || config.audio_hidden_dim == 0
            || config.text_embed_dim == 0
            || config.text_hash_buckets == 0
            || config.feature.n_mels == 0
        {
            return Err(Error::InvalidInput("tower dimensions must be positive".into()));
        }
        if config.input_len_s <= 0.0 {
            return Err(Error::InvalidInput("input length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.audio_hidden_dim;
        let dt = config.text_embed_dim;
        let frame_proj = Linear::init(config.feature.n_mels, d, &mut rng);
        let summary_token = init_vec(&mut rng, d, 1.0 / (d as f64).sqrt());
        let audio_ctx = Linear::init(2 * d, d, &mut rng);
        let audio_adapter = Mlp2::init(d, config.embed_dim, config.embed_dim, &mut rng);
        let token_embedding = init_vec(
            &mut rng,
            config.text_hash_buckets * dt,
            1.0 / (dt as f64).sqrt(),
        );
        let text_ctx = match config.text_encoder {
            TextEncoderKind::BagOfEmbeddings => None,
            TextEncoderKind::MeanContext => Some(Linear::init(2 * dt, dt, &mut rng)),
        };
        let text_adapter = Mlp2::init(dt, config.embed_dim, config.embed_dim, &mut rng);
        Ok(Self {
            config,
            frame_proj,
            summary_token,
            audio_ctx,
            audio_adapter,
            token_embedding,
            text_ctx,
            text_adapter,
        })
    }

    /// Number of samples the audio tower expects.
    pub fn expected_samples(&self) -> usize {
        (self.config.input_len_s * self.config.feature.sample_rate as f64).round() as usize
    }

    /// Embeds a clip of exactly the configured input length. The caller
    /// crops or pads beforehand.
    pub fn encode_audio(&self, clip: &AudioClip) -> Result<EmbeddingVector> {
        if clip.sample_rate() != self.config.feature.sample_rate {
            return Err(Error::Audio(format!(
                "clip sample rate {} does not match model rate {}",
                clip.sample_rate(),
                self.config.feature.sample_rate
            )));
        }
        if clip.len() != self.expected_samples() {
            return Err(Error::Audio(format!(
                "clip length {} samples does not match expected {} ({} s)",
                clip.len(),
                self.expected_samples(),
                self.config.input_len_s
            )));
        }
        let feats = featurize_audio(clip, &self.config.feature)?;
        self.encode_features(&feats)
    }

    /// Embeds an already-featurized input; useful where features are reused
    /// across epochs. Callers are responsible for the duration contract.
    pub fn encode_features(&self, feats: &FeatureSequence) -> Result<EmbeddingVector> {
        Ok(self.forward_audio(feats)?.0)
    }

    /// Embeds text: tokens through the encoder, mean pooling, adapter,
    /// L2 normalization. Errors on text with zero tokens.
    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.forward_text(text)?.0)
    }

    pub(crate) fn forward_audio(
        &self,
        feats: &FeatureSequence,
    ) -> Result<(EmbeddingVector, AudioCache)> {
        let d = self.config.audio_hidden_dim;
        let frames = feats.frames();
        let mut h = Vec::with_capacity(frames);
        let mut mean = vec![0.0; d];
        for t in 0..frames {
            let ht: Vec<f64> = self
                .frame_proj
                .forward(feats.frame(t))
                .iter()
                .map(|v| v.tanh())
                .collect();
            for (m, v) in mean.iter_mut().zip(&ht) {
                *m += v;
            }
            h.push(ht);
        }
        for m in mean.iter_mut() {
            *m /= frames as f64;
        }

        let mut summary_in = Vec::with_capacity(2 * d);
        summary_in.extend_from_slice(&self.summary_token);
        summary_in.extend_from_slice(&mean);
        let summary: Vec<f64> = self
            .audio_ctx
            .forward(&summary_in)
            .iter()
            .map(|v| v.tanh())
            .collect();

        let (pre_norm, adapter) = self.audio_adapter.forward(&summary);
        let (unit, norm) = normalized(pre_norm)?;
        Ok((
            EmbeddingVector::from_unit(unit.clone()),
            AudioCache {
                h,
                summary_in,
                summary,
                adapter,
                unit,
                norm,
            },
        ))
    }

    pub(crate) fn backward_audio(
        &self,
        feats: &FeatureSequence,
        cache: &AudioCache,
        d_embedding: &[f64],
        grads: &mut TowerGrads,
    ) {
        let d = self.config.audio_hidden_dim;
        let d_pre = l2_normalize_backward(&cache.unit, cache.norm, d_embedding);
        let d_summary = self
            .audio_adapter
            .backward(&cache.adapter, &d_pre, &mut grads.audio_adapter);
        let d_summary_pre: Vec<f64> = d_summary
            .iter()
            .zip(&cache.summary)
            .map(|(&g, &s)| g * (1.0 - s * s))
            .collect();
        let d_summary_in =
            self.audio_ctx
                .backward(&cache.summary_in, &d_summary_pre, &mut grads.audio_ctx);
        for (g, v) in grads.summary_token.iter_mut().zip(&d_summary_in[..d]) {
            *g += v;
        }
        let frames = cache.h.len() as f64;
        let d_mean = &d_summary_in[d..];
        for (t, ht) in cache.h.iter().enumerate() {
            let d_pre_h: Vec<f64> = d_mean
                .iter()
                .zip(ht)
                .map(|(&g, &hv)| g / frames * (1.0 - hv * hv))
                .collect();
            self.frame_proj
                .backward(feats.frame(t), &d_pre_h, &mut grads.frame_proj);
        }
    }

    pub(crate) fn forward_text(&self, text: &str) -> Result<(EmbeddingVector, TextCache)> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::InvalidInput(
                "text has zero tokens after tokenization".into(),
            ));
        }
        let dt = self.config.text_embed_dim;
        let ids: Vec<usize> = tokens
            .tokens()
            .iter()
            .map(|t| token_bucket(&t.surface, self.config.text_hash_buckets))
            .collect();
        let n = ids.len() as f64;

        let embed_row = |id: usize| &self.token_embedding[id * dt..(id + 1) * dt];
        let mut mean = vec![0.0; dt];
        for &id in &ids {
            for (m, v) in mean.iter_mut().zip(embed_row(id)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }

        let (pooled, ctx) = match (&self.text_ctx, self.config.text_encoder) {
            (Some(layer), TextEncoderKind::MeanContext) => {
                let mut ctx_in = Vec::with_capacity(ids.len());
                let mut mixed = Vec::with_capacity(ids.len());
                let mut pooled = vec![0.0; dt];
                for &id in &ids {
                    let mut input = Vec::with_capacity(2 * dt);
                    input.extend_from_slice(embed_row(id));
                    input.extend_from_slice(&mean);
                    let u: Vec<f64> = layer.forward(&input).iter().map(|v| v.tanh()).collect();
                    for (p, v) in pooled.iter_mut().zip(&u) {
                        *p += v;
                    }
                    ctx_in.push(input);
                    mixed.push(u);
                }
                for p in pooled.iter_mut() {
                    *p /= n;
                }
                (pooled, Some(TextCtxCache { ctx_in, mixed }))
            }
            _ => (mean, None),
        };

        let (pre_norm, adapter) = self.text_adapter.forward(&pooled);
        let (unit, norm) = normalized(pre_norm)?;
        Ok((
            EmbeddingVector::from_unit(unit.clone()),
            TextCache {
                ids,
                ctx,
                adapter,
                unit,
                norm,
            },
        ))
    }

    pub(crate) fn backward_text(
        &self,
        cache: &TextCache,
        d_embedding: &[f64],
        grads: &mut TowerGrads,
    ) {
        let dt = self.config.text_embed_dim;
        let n = cache.ids.len() as f64;
        let d_pre = l2_normalize_backward(&cache.unit, cache.norm, d_embedding);
        let d_pooled = self
            .text_adapter
            .backward(&cache.adapter, &d_pre, &mut grads.text_adapter);

        let scatter = |table: &mut [f64], id: usize, g: &[f64]| {
            let row = &mut table[id * dt..(id + 1) * dt];
            for (r, v) in row.iter_mut().zip(g) {
                *r += v;
            }
        };

        match (&self.text_ctx, &cache.ctx) {
            (Some(layer), Some(ctx)) => {
                let text_ctx_grad = grads.text_ctx.as_mut().expect("grads match model shape");
                let mut d_mean = vec![0.0; dt];
                let mut d_embed_direct: Vec<Vec<f64>> = Vec::with_capacity(cache.ids.len());
                for (input, u) in ctx.ctx_in.iter().zip(&ctx.mixed) {
                    let d_u: Vec<f64> = d_pooled.iter().map(|&g| g / n).collect();
                    let d_u_pre: Vec<f64> = d_u
                        .iter()
                        .zip(u)
                        .map(|(&g, &uv)| g * (1.0 - uv * uv))
                        .collect();
                    let d_input = layer.backward(input, &d_u_pre, text_ctx_grad);
                    d_embed_direct.push(d_input[..dt].to_vec());
                    for (m, v) in d_mean.iter_mut().zip(&d_input[dt..]) {
                        *m += v;
                    }
                }
                for (i, &id) in cache.ids.iter().enumerate() {
                    let mut g = d_embed_direct[i].clone();
                    for (gv, mv) in g.iter_mut().zip(&d_mean) {
                        *gv += mv / n;
                    }
                    scatter(&mut grads.token_embedding, id, &g);
                }
            }
            _ => {
                let d_each: Vec<f64> = d_pooled.iter().map(|&g| g / n).collect();
                for &id in &cache.ids {
                    scatter(&mut grads.token_embedding, id, &d_each);
                }
            }
        }
    }

    /// Parameter blocks in canonical order; mirrors [`TowerGrads::blocks`].
    pub(crate) fn param_blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut blocks = vec![
            &mut self.frame_proj.w,
            &mut self.frame_proj.b,
            &mut self.summary_token,
            &mut self.audio_ctx.w,
            &mut self.audio_ctx.b,
            &mut self.audio_adapter.l1.w,
            &mut self.audio_adapter.l1.b,
            &mut self.audio_adapter.l2.w,
            &mut self.audio_adapter.l2.b,
            &mut self.token_embedding,
        ];
        if let Some(ctx) = &mut self.text_ctx {
            blocks.push(&mut ctx.w);
            blocks.push(&mut ctx.b);
        }
        blocks.push(&mut self.text_adapter.l1.w);
        blocks.push(&mut self.text_adapter.l1.b);
        blocks.push(&mut self.text_adapter.l2.w);
        blocks.push(&mut self.text_adapter.l2.b);
        blocks
    }

    pub(crate) fn param_blocks(&self) -> Vec<&Vec<f64>> {
        let mut blocks = vec![
            &self.frame_proj.w,
            &self.frame_proj.b,
            &self.summary_token,
            &self.audio_ctx.w,
            &self.audio_ctx.b,
            &self.audio_adapter.l1.w,
            &self.audio_adapter.l1.b,
            &self.audio_adapter.l2.w,
            &self.audio_adapter.l2.b,
            &self.token_embedding,
        ];
        if let Some(ctx) = &self.text_ctx {
            blocks.push(&ctx.w);
            blocks.push(&ctx.b);
        }
        blocks.push(&self.text_adapter.l1.w);
        blocks.push(&self.text_adapter.l1.b);
        blocks.push(&self.text_adapter.l2.w);
        blocks.push(&self.text_adapter.l2.b);
        blocks
    }

    /// Clones all parameters, in canonical block order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.param_blocks().into_iter().cloned().collect()
    }

    /// Restores a snapshot taken from a model of identical shape.
    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        let mut blocks = self.param_blocks_mut();
        assert_eq!(blocks.len(), snapshot.len(), "snapshot shape mismatch");
        for (block, saved) in blocks.iter_mut().zip(snapshot) {
            assert_eq!(block.len(), saved.len(), "snapshot block size mismatch");
            block.copy_from_slice(saved);
        }
    }

    /// Bitwise parameter equality.
    pub fn params_equal(&self, other: &TowerModel) -> bool {
        let a = self.param_blocks();
        let b = other.param_blocks();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.len() == y.len()
                    && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

impl Embedder for TowerModel {
    fn embed_audio_block(&self, clip: &AudioClip) -> Result<EmbeddingVector> {
        self.encode_audio(clip)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.encode_text(text)
    }

    fn block_len_s(&self) -> f64 {
        self.config.input_len_s
    }
}

fn normalized(pre_norm: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let raw_norm = dot(&pre_norm, &pre_norm).sqrt();
    if raw_norm < 1e-9 {
        return Err(Error::InvalidInput(
            "adapter output is numerically zero; cannot normalize".into(),
        ));
    }
    let (unit, norm) = l2_normalize(&pre_norm);
    Ok((unit, norm))
}

pub(crate) struct AudioCache {
    h: Vec<Vec<f64>>,
    summary_in: Vec<f64>,
    summary: Vec<f64>,
    adapter: Mlp2Cache,
    unit: Vec<f64>,
    norm: f64,
}

pub(crate) struct TextCtxCache {
    ctx_in: Vec<Vec<f64>>,
    mixed: Vec<Vec<f64>>,
}

pub(crate) struct TextCache {
    ids: Vec<usize>,
    ctx: Option<TextCtxCache>,
    adapter: Mlp2Cache,
    unit: Vec<f64>,
    norm: f64,
}

/// Gradients for every tower parameter, in canonical block order.
pub(crate) struct TowerGrads {
    pub frame_proj: LinearGrad,
    pub summary_token: Vec<f64>,
    pub audio_ctx: LinearGrad,
    pub audio_adapter: Mlp2Grad,
    pub token_embedding: Vec<f64>,
    pub text_ctx: Option<LinearGrad>,
    pub text_adapter: Mlp2Grad,
}

impl TowerGrads {
    pub(crate) fn zeros_like(model: &TowerModel) -> Self {
        Self {
            frame_proj: LinearGrad::zeros_like(&model.frame_proj),
            summary_token: vec![0.0; model.summary_token.len()],
            audio_ctx: LinearGrad::zeros_like(&model.audio_ctx),
            audio_adapter: Mlp2Grad::zeros_like(&model.audio_adapter),
            token_embedding: vec![0.0; model.token_embedding.len()],
            text_ctx: model.text_ctx.as_ref().map(LinearGrad::zeros_like),
            text_adapter: Mlp2Grad::zeros_like(&model.text_adapter),
        }
    }

    pub(crate) fn blocks(&self) -> Vec<&Vec<f64>> {
        let mut blocks = vec![
            &self.frame_proj.w,
            &self.frame_proj.b,
            &self.summary_token,
            &self.audio_ctx.w,
            &self.audio_ctx.b,
            &self.audio_adapter.l1.w,
            &self.audio_adapter.l1.b,
            &self.audio_adapter.l2.w,
            &self.audio_adapter.l2.b,
            &self.token_embedding,
        ];
        if let Some(ctx) = &self.text_ctx {
            blocks.push(&ctx.w);
            blocks.push(&ctx.b);
        }
        blocks.push(&self.text_adapter.l1.w);
        blocks.push(&self.text_adapter.l1.b);
        blocks.push(&self.text_adapter.l2.w);
        blocks.push(&self.text_adapter.l2.b);
        blocks
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: TowerModel,
}

/// Writes the model as a single-file checkpoint with a format version.
pub fn save_checkpoint(model: &TowerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.clone(),
    })
    .map_err(|e| Error::InvalidInput(format!("serializing checkpoint: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TowerModel> {
    let path = path.as_ref();
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: Checkpoint = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint version {}",
            file.format_version
        )));
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dot;

    fn small_config() -> TowerConfig {
        TowerConfig {
            feature: FeatureConfig {
                sample_rate: 1000,
                n_mels: 8,
                ..FeatureConfig::default()
            },
            input_len_s: 0.5,
            embed_dim: 16,
            audio_hidden_dim: 6,
            text_hash_buckets: 64,
            text_embed_dim: 5,
            text_encoder: TextEncoderKind::BagOfEmbeddings,
        }
    }

    fn test_clip(config: &TowerConfig, phase: f64) -> AudioClip {
        let sr = config.feature.sample_rate;
        let n = (config.input_len_s * sr as f64).round() as usize;
        let samples = (0..n)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * (120.0 * i as f64 / sr as f64 + phase)).sin())
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn default_config_embeds_to_unit_128_dim() {
        let model = TowerModel::init(TowerConfig::default(), 1).unwrap();
        let n = model.expected_samples();
        let samples = (0..n).map(|i| 0.3 * ((i as f64) * 0.01).sin()).collect();
        let clip = AudioClip::new(samples, 16_000).unwrap();
        let emb = model.encode_audio(&clip).unwrap();
        assert_eq!(emb.dim(), 128);
        assert!((dot(emb.values(), emb.values()).sqrt() - 1.0).abs() < 1e-6);
        let text_emb = model.encode_text("slow piano ballad").unwrap();
        assert_eq!(text_emb.dim(), 128);
        assert!((dot(text_emb.values(), text_emb.values()).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn encoding_is_deterministic() {
        let config = small_config();
        let model = TowerModel::init(config.clone(), 3).unwrap();
        let clip = test_clip(&config, 0.0);
        let a = model.encode_audio(&clip).unwrap();
        let b = model.encode_audio(&clip).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            model.encode_text("jazz").unwrap(),
            model.encode_text("jazz").unwrap()
        );
    }

    #[test]
    fn different_clips_are_not_identical() {
        let config = small_config();
        let model = TowerModel::init(config.clone(), 3).unwrap();
        let a = model.encode_audio(&test_clip(&config, 0.0)).unwrap();
        let silence = AudioClip::new(vec![0.0; model.expected_samples()], 1000).unwrap();
        let b = model.encode_audio(&silence).unwrap();
        assert!(similarity(&a, &b) < 1.0 - 1e-9);
    }

    #[test]
    fn wrong_duration_or_rate_is_rejected() {
        let config = small_config();
        let model = TowerModel::init(config, 3).unwrap();
        let short = AudioClip::new(vec![0.1; 100], 1000).unwrap();
        assert!(model.encode_audio(&short).is_err());
        let wrong_rate = AudioClip::new(vec![0.1; 250], 500).unwrap();
        assert!(model.encode_audio(&wrong_rate).is_err());
    }

    #[test]
    fn bag_encoder_is_order_insensitive() {
        let model = TowerModel::init(small_config(), 5).unwrap();
        let a = model.encode_text("guitar soft slow").unwrap();
        let b = model.encode_text("slow guitar soft").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_text_is_rejected() {
        let model = TowerModel::init(small_config(), 5).unwrap();
        assert!(model.encode_text("").is_err());
        assert!(model.encode_text("   ").is_err());
    }

    #[test]
    fn similarity_of_basis_vectors() {
        let mut e1 = vec![0.0; 4];
        e1[0] = 1.0;
        let mut e2 = vec![0.0; 4];
        e2[1] = 1.0;
        let v1 = EmbeddingVector::new(e1.clone()).unwrap();
        let v2 = EmbeddingVector::new(e2).unwrap();
        let neg = EmbeddingVector::new(e1.iter().map(|v| -v).collect()).unwrap();
        assert!((similarity(&v1, &v1) - 1.0).abs() < 1e-12);
        assert!((similarity(&v1, &neg) + 1.0).abs() < 1e-12);
        assert!(similarity(&v1, &v2).abs() < 1e-12);
    }

    #[test]
    fn embedding_vector_rejects_non_unit() {
        assert!(EmbeddingVector::new(vec![0.5, 0.5]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn mean_embedding_of_stub_blocks() {
        let v1 = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let v2 = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        let mean = mean_embedding(&[v1, v2]).unwrap();
        let inv = 1.0 / 2f64.sqrt();
        assert!((mean.values()[0] - inv).abs() < 1e-12);
        assert!((mean.values()[1] - inv).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = TowerModel::init(small_config(), 17).unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(model.params_equal(&loaded));
        assert_eq!(loaded.config, model.config);
    }

    fn grad_check_towers(kind: TextEncoderKind) {
        let mut config = small_config();
        config.text_encoder = kind;
        let model = TowerModel::init(config.clone(), 23).unwrap();
        let clip = test_clip(&config, 0.1);
        let feats = featurize_audio(&clip, &config.feature).unwrap();
        let text = "bright horn fanfare";

        // objective: dot(target, audio_emb) + dot(target2, text_emb)
        let target: Vec<f64> = (0..config.embed_dim).map(|i| ((i as f64) * 0.7).sin()).collect();
        let target2: Vec<f64> = (0..config.embed_dim).map(|i| ((i as f64) * 1.3).cos()).collect();
        let objective = |m: &TowerModel| {
            let a = m.encode_features(&feats).unwrap();
            let t = m.encode_text(text).unwrap();
            dot(&target, a.values()) + dot(&target2, t.values())
        };

        let mut grads = TowerGrads::zeros_like(&model);
        let (_, acache) = model.forward_audio(&feats).unwrap();
        let (_, tcache) = model.forward_text(text).unwrap();
        model.backward_audio(&feats, &acache, &target, &mut grads);
        model.backward_text(&tcache, &target2, &mut grads);

        let h = 1e-6;
        let base = model.snapshot();
        let grad_blocks: Vec<Vec<f64>> = grads.blocks().into_iter().cloned().collect();
        for (bi, block) in base.iter().enumerate() {
            // sample a handful of indices per block to keep this quick
            let step = (block.len() / 7).max(1);
            for i in (0..block.len()).step_by(step) {
                let mut mp = model.clone();
                let mut snap = base.clone();
                snap[bi][i] += h;
                mp.restore(&snap);
                let fp = objective(&mp);
                snap[bi][i] -= 2.0 * h;
                mp.restore(&snap);
                let fm = objective(&mp);
                let num = (fp - fm) / (2.0 * h);
                let ana = grad_blocks[bi][i];
                let rel = (num - ana).abs() / f64::max(1e-6, num.abs() + ana.abs());
                assert!(rel < 1e-4, "block {bi} idx {i}: numeric {num} vs analytic {ana}");
            }
        }
    }

    #[test]
    fn tower_gradients_match_finite_differences_bag() {
        grad_check_towers(TextEncoderKind::BagOfEmbeddings);
    }

    #[test]
    fn tower_gradients_match_finite_differences_mean_context() {
        grad_check_towers(TextEncoderKind::MeanContext);
    }
}
