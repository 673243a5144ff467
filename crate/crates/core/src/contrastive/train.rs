//! Contrastive training loop with validation-driven early stopping,
//! learning-rate decay, and reversion to the best checkpoint.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav_mono, AudioClip};
use crate::contrastive::loss::{nt_xent_loss_grad, LossConfig, SimilarityMatrix};
use crate::contrastive::sampling::{crop_audio, sample_text, BatchSpec, SentenceSampleRule};
use crate::contrastive::schedule::{ScheduleTracker, TrainSchedule};
use crate::corpus::{resolve_audio_path, Corpus, Split};
use crate::encoders::{featurize_audio, mean_embedding, TowerGrads, TowerModel};
use crate::error::{Error, Result};
use crate::evalharness::{retrieval_values, EmbeddedCollection, QueryRelevanceIndex};
use crate::nn::Adam;
use crate::textminer::MinedDescription;

/// One track ready for training: its audio and its mined description.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub track_id: String,
    pub clip: AudioClip,
    pub desc: MinedDescription,
}

/// One track of the validation collection for the monitored retrieval
/// metric.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub track_id: String,
    pub clip: AudioClip,
    pub aspects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch: BatchSpec,
    pub loss: LossConfig,
    pub schedule: TrainSchedule,
    pub sentence_rule: SentenceSampleRule,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch: BatchSpec::default(),
            loss: LossConfig::default(),
            schedule: TrainSchedule::default(),
            sentence_rule: SentenceSampleRule::RandomSubset,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_map10: f64,
    pub lr: f64,
}

/// Per-epoch log of the training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    /// Writes one JSON record per epoch.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        for record in &self.epochs {
            let line = serde_json::to_string(record)
                .map_err(|e| Error::InvalidInput(format!("serializing history: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = std::io::BufReader::new(file);
        let mut epochs = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let record: EpochRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            epochs.push(record);
        }
        Ok(Self { epochs })
    }
}

/// Precomputed validation state: block features are extracted once, only the
/// embeddings change across epochs.
pub struct RetrievalValidator {
    track_ids: Vec<String>,
    block_features: Vec<Vec<crate::encoders::FeatureSequence>>,
    index: QueryRelevanceIndex,
}

impl RetrievalValidator {
    pub fn new(valid_set: &[EvalItem], model: &TowerModel) -> Result<Self> {
        if valid_set.is_empty() {
            return Err(Error::InvalidInput("validation set is empty".into()));
        }
        let index = QueryRelevanceIndex::from_labels(
            valid_set
                .iter()
                .map(|item| (item.track_id.as_str(), item.aspects.as_slice())),
        );
        if index.is_empty() {
            return Err(Error::InvalidInput(
                "validation set has no usable queries (no aspects)".into(),
            ));
        }
        let mut track_ids = Vec::with_capacity(valid_set.len());
        let mut block_features = Vec::with_capacity(valid_set.len());
        for item in valid_set {
            let blocks =
                crate::relevance::segment_audio(&item.clip, model.config.input_len_s);
            if blocks.is_empty() {
                return Err(Error::Audio(format!(
                    "validation track {} has no audio",
                    item.track_id
                )));
            }
            let feats = blocks
                .iter()
                .map(|b| featurize_audio(b, &model.config.feature))
                .collect::<Result<Vec<_>>>()?;
            track_ids.push(item.track_id.clone());
            block_features.push(feats);
        }
        Ok(Self {
            track_ids,
            block_features,
            index,
        })
    }

    /// Validation mAP@10 of the current model state.
    pub fn evaluate(&self, model: &TowerModel) -> Result<f64> {
        let mut embeddings = Vec::with_capacity(self.track_ids.len());
        for feats in &self.block_features {
            let blocks = feats
                .iter()
                .map(|f| model.encode_features(f))
                .collect::<Result<Vec<_>>>()?;
            embeddings.push(mean_embedding(&blocks)?);
        }
        let coll = EmbeddedCollection {
            track_ids: self.track_ids.clone(),
            embeddings,
        };
        let values = retrieval_values(&coll, &self.index, |q| model.encode_text(q), &[10])?;
        Ok(values["map@10"])
    }
}

/// Trains against the standard monitor: validation mAP@10 over tag-based
/// retrieval on `valid_set`.
pub fn train(
    model: TowerModel,
    train_set: &[TrainItem],
    valid_set: &[EvalItem],
    opts: &TrainOptions,
) -> Result<(TowerModel, TrainingHistory)> {
    let validator = RetrievalValidator::new(valid_set, &model)?;
    train_with_evaluator(model, train_set, opts, |m, _| validator.evaluate(m))
}

/// Training loop with an injectable validation evaluator; the public
/// [`train`] wires in tag-based retrieval mAP@10.
///
/// Each epoch passes over all training tracks in random order, re-sampling
/// text and audio crop; the returned model is bitwise-equal to the
/// checkpoint of the epoch with the highest validation score.
pub fn train_with_evaluator(
    mut model: TowerModel,
    train_set: &[TrainItem],
    opts: &TrainOptions,
    mut evaluator: impl FnMut(&TowerModel, usize) -> Result<f64>,
) -> Result<(TowerModel, TrainingHistory)> {
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if opts.batch.batch_size < 2 {
        return Err(Error::InvalidInput(
            "batch size must be at least 2; the loss is degenerate at 1".into(),
        ));
    }
    if train_set.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 training tracks to form a batch".into(),
        ));
    }
    for item in train_set {
        if item.desc.is_empty() {
            return Err(Error::InvalidInput(format!(
                "track {} has no texts to sample",
                item.track_id
            )));
        }
    }
    opts.schedule.validate()?;
    let mut tracker = ScheduleTracker::new(opts.schedule.clone())?;

    let block_sizes: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let mut optimizer = Adam::new(opts.schedule.initial_lr, &block_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history = TrainingHistory::default();
    let mut best_snapshot: Option<Vec<Vec<f64>>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=opts.schedule.max_epochs {
        let lr_this_epoch = optimizer.lr;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;

        for chunk in order.chunks(opts.batch.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut feats = Vec::with_capacity(chunk.len());
            let mut texts = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let item = &train_set[idx];
                texts.push(sample_text(&item.desc, opts.sentence_rule, &opts.batch, &mut rng)?);
                let crop = crop_audio(&item.clip, model.config.input_len_s, &mut rng);
                feats.push(featurize_audio(&crop, &model.config.feature)?);
            }

            let (batch_loss, grads) = batch_backward(&model, &feats, &texts, &opts.loss)?;
            loss_sum += batch_loss;
            batches += 1;

            let grad_blocks = grads.blocks();
            optimizer.step(&mut model.param_blocks_mut(), &grad_blocks);
        }

        let epoch_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        let val = match evaluator(&model, epoch) {
            Ok(v) => v,
            Err(e) => {
                return Err(Error::ValidationAborted {
                    epoch,
                    message: e.to_string(),
                    history: Box::new(history),
                })
            }
        };

        let decision = tracker.observe(val);
        if decision.improved {
            best_snapshot = Some(model.snapshot());
        }
        optimizer.lr = tracker.lr();
        history.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_map10: val,
            lr: lr_this_epoch,
        });
        if decision.stop {
            break;
        }
    }

    let best = best_snapshot.expect("at least one epoch ran");
    model.restore(&best);
    Ok((model, history))
}

/// Forward and backward pass of one batch: embeds every (features, text)
/// pair, applies the loss on the similarity matrix, and pushes the gradient
/// back through both towers.
pub(crate) fn batch_backward(
    model: &TowerModel,
    feats: &[crate::encoders::FeatureSequence],
    texts: &[String],
    loss_cfg: &LossConfig,
) -> Result<(f64, TowerGrads)> {
    if feats.len() != texts.len() || feats.len() < 2 {
        return Err(Error::InvalidInput(
            "batch needs matching audio/text lists of length at least 2".into(),
        ));
    }
    let n = feats.len();
    let mut audio_embs = Vec::with_capacity(n);
    let mut audio_caches = Vec::with_capacity(n);
    let mut text_embs = Vec::with_capacity(n);
    let mut text_caches = Vec::with_capacity(n);
    for (f, text) in feats.iter().zip(texts) {
        let (a_emb, a_cache) = model.forward_audio(f)?;
        let (t_emb, t_cache) = model.forward_text(text)?;
        audio_embs.push(a_emb);
        audio_caches.push(a_cache);
        text_embs.push(t_emb);
        text_caches.push(t_cache);
    }

    let s = SimilarityMatrix::from_embeddings(&audio_embs, &text_embs)?;
    let (loss, grad_s) = nt_xent_loss_grad(&s, loss_cfg)?;

    let dim = model.config.embed_dim;
    let mut grads = TowerGrads::zeros_like(model);
    for i in 0..n {
        let mut d_audio = vec![0.0; dim];
        for j in 0..n {
            let g = grad_s[i * n + j];
            if g != 0.0 {
                for (d, v) in d_audio.iter_mut().zip(text_embs[j].values()) {
                    *d += g * v;
                }
            }
        }
        model.backward_audio(&feats[i], &audio_caches[i], &d_audio, &mut grads);
    }
    for j in 0..n {
        let mut d_text = vec![0.0; dim];
        for i in 0..n {
            let g = grad_s[i * n + j];
            if g != 0.0 {
                for (d, v) in d_text.iter_mut().zip(audio_embs[i].values()) {
                    *d += g * v;
                }
            }
        }
        model.backward_text(&text_caches[j], &d_text, &mut grads);
    }
    Ok((loss, grads))
}

/// Loss and parameter gradients of one batch, gradients in the model's
/// canonical snapshot order.
pub fn batch_loss_and_grad_blocks(
    model: &TowerModel,
    feats: &[crate::encoders::FeatureSequence],
    texts: &[String],
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (loss, grads) = batch_backward(model, feats, texts, loss_cfg)?;
    Ok((loss, grads.blocks().into_iter().cloned().collect()))
}

/// Builds training items for a split: reads each track's audio and pairs it
/// with its mined description. Tracks with no mined texts are skipped and
/// logged; unreadable audio is an error.
pub fn assemble_train_items(
    corpus: &Corpus,
    mined: &BTreeMap<String, MinedDescription>,
    audio_base: &Path,
    split: Split,
) -> Result<Vec<TrainItem>> {
    let mut items = Vec::new();
    for record in corpus.split_records(split) {
        let Some(desc) = mined.get(&record.track_id) else {
            log::warn!("{}: no mined description, skipping", record.track_id);
            continue;
        };
        if desc.is_empty() {
            log::warn!("{}: empty mined description, skipping", record.track_id);
            continue;
        }
        let clip = read_wav_mono(resolve_audio_path(audio_base, &record.audio_ref))?;
        items.push(TrainItem {
            track_id: record.track_id.clone(),
            clip,
            desc: desc.clone(),
        });
    }
    Ok(items)
}

/// Builds the validation collection for a split; aspects come from the
/// mined descriptions.
pub fn assemble_eval_items(
    corpus: &Corpus,
    mined: &BTreeMap<String, MinedDescription>,
    audio_base: &Path,
    split: Split,
) -> Result<Vec<EvalItem>> {
    let mut items = Vec::new();
    for record in corpus.split_records(split) {
        let aspects: Vec<String> = mined
            .get(&record.track_id)
            .map(|d| d.aspect_texts().map(String::from).collect())
            .unwrap_or_default();
        let clip = read_wav_mono(resolve_audio_path(audio_base, &record.audio_ref))?;
        items.push(EvalItem {
            track_id: record.track_id.clone(),
            clip,
            aspects,
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{FeatureConfig, TextEncoderKind, TowerConfig};
    use crate::textminer::{MinedItem, Provenance};

    fn tiny_config() -> TowerConfig {
        TowerConfig {
            feature: FeatureConfig {
                sample_rate: 1000,
                n_mels: 8,
                ..FeatureConfig::default()
            },
            input_len_s: 0.5,
            embed_dim: 12,
            audio_hidden_dim: 6,
            text_hash_buckets: 64,
            text_embed_dim: 5,
            text_encoder: TextEncoderKind::BagOfEmbeddings,
        }
    }

    fn tiny_item(i: usize) -> TrainItem {
        let sr = 1000u32;
        let freq = 80.0 + 60.0 * i as f64;
        let samples: Vec<f64> = (0..700)
            .map(|n| 0.4 * (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin())
            .collect();
        TrainItem {
            track_id: format!("t{i}"),
            clip: AudioClip::new(samples, sr).unwrap(),
            desc: MinedDescription {
                track_id: format!("t{i}"),
                aspects: vec![MinedItem {
                    text: format!("tone{i}"),
                    source: Provenance::Metadata,
                    score: None,
                }],
                sentences: vec![],
            },
        }
    }

    fn tiny_opts(max_epochs: usize) -> TrainOptions {
        TrainOptions {
            batch: BatchSpec {
                batch_size: 4,
                ..BatchSpec::default()
            },
            loss: LossConfig::default(),
            schedule: TrainSchedule {
                initial_lr: 1e-3,
                max_epochs,
                ..TrainSchedule::default()
            },
            sentence_rule: SentenceSampleRule::RandomSubset,
            seed: 11,
        }
    }

    #[test]
    fn scripted_scores_stop_at_twelve_and_restore_epoch_two() {
        let model = TowerModel::init(tiny_config(), 1).unwrap();
        let items: Vec<TrainItem> = (0..4).map(tiny_item).collect();
        // .1, .2, then flat: ten epochs without improvement
        let scores = [0.1, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2];
        let snapshots = std::cell::RefCell::new(Vec::new());
        let (trained, history) = train_with_evaluator(
            model,
            &items,
            &tiny_opts(50),
            |m, epoch| {
                snapshots.borrow_mut().push(m.clone());
                Ok(scores[epoch - 1])
            },
        )
        .unwrap();
        assert_eq!(history.epochs.len(), 12);
        let snaps = snapshots.borrow();
        assert!(trained.params_equal(&snaps[1]), "returned weights are epoch 2's");
        assert!(!trained.params_equal(&snaps[11]));
    }

    #[test]
    fn lr_decays_after_five_flat_epochs() {
        let model = TowerModel::init(tiny_config(), 2).unwrap();
        let items: Vec<TrainItem> = (0..4).map(tiny_item).collect();
        let scores = [0.1, 0.2, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3];
        let (_, history) = train_with_evaluator(model, &items, &tiny_opts(10), |_, epoch| {
            Ok(scores[epoch - 1])
        })
        .unwrap();
        // epochs 4..8 are flat; decay fires after epoch 8 (5 flat), so epoch 9
        // runs at the reduced rate
        assert!((history.epochs[7].lr - 1e-3).abs() < 1e-15);
        assert!((history.epochs[8].lr - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn fixed_seed_reproduces_history_and_weights() {
        let items: Vec<TrainItem> = (0..4).map(tiny_item).collect();
        let run = || {
            let model = TowerModel::init(tiny_config(), 3).unwrap();
            train_with_evaluator(model, &items, &tiny_opts(5), |_, epoch| {
                Ok(epoch as f64 * 0.1)
            })
            .unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert!(m1.params_equal(&m2));
    }

    #[test]
    fn validation_failure_aborts_with_partial_history() {
        let model = TowerModel::init(tiny_config(), 4).unwrap();
        let items: Vec<TrainItem> = (0..4).map(tiny_item).collect();
        let result = train_with_evaluator(model, &items, &tiny_opts(10), |_, epoch| {
            if epoch == 3 {
                Err(Error::InvalidInput("synthetic failure".into()))
            } else {
                Ok(0.1)
            }
        });
        match result {
            Err(Error::ValidationAborted { epoch, history, .. }) => {
                assert_eq!(epoch, 3);
                assert_eq!(history.epochs.len(), 2);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let model = TowerModel::init(tiny_config(), 5).unwrap();
        assert!(train_with_evaluator(model.clone(), &[], &tiny_opts(2), |_, _| Ok(0.0)).is_err());
        let mut item = tiny_item(0);
        item.desc.aspects.clear();
        assert!(train_with_evaluator(
            model,
            &[item, tiny_item(1)],
            &tiny_opts(2),
            |_, _| Ok(0.0)
        )
        .is_err());
    }

    #[test]
    fn real_validator_round_trip_runs() {
        let model = TowerModel::init(tiny_config(), 6).unwrap();
        let items: Vec<TrainItem> = (0..4).map(tiny_item).collect();
        let valid: Vec<EvalItem> = items
            .iter()
            .map(|it| EvalItem {
                track_id: it.track_id.clone(),
                clip: it.clip.clone(),
                aspects: it.desc.aspect_texts().map(String::from).collect(),
            })
            .collect();
        let (trained, history) = train(model, &items, &valid, &tiny_opts(3)).unwrap();
        assert_eq!(history.epochs.len(), 3);
        for rec in &history.epochs {
            assert!((0.0..=1.0).contains(&rec.val_map10));
            assert!(rec.loss.is_finite());
        }
        assert_eq!(trained.config, tiny_config());
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let history = TrainingHistory {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    loss: 2.5,
                    val_map10: 0.25,
                    lr: 1e-4,
                },
                EpochRecord {
                    epoch: 2,
                    loss: 2.0,
                    val_map10: 0.5,
                    lr: 1e-4,
                },
            ],
        };
        let path = dir.path().join("history.jsonl");
        history.save(&path).unwrap();
        assert_eq!(TrainingHistory::load(&path).unwrap(), history);
    }
}
