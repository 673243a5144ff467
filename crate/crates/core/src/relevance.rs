//! Cross-modal relevance scoring and filtering of mined texts.
//!
//! Each text is paired with its track's audio; the audio is cut into
//! non-overlapping blocks of the scorer's input length, each block is scored
//! by cosine similarity against the text embedding, and the block scores are
//! averaged. Items scoring below the threshold (strictly) are removed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::encoders::{similarity, Embedder};
use crate::error::{Error, Result};
use crate::textminer::{MinedDescription, MinedItem, SpanKind};

/// Cuts consecutive non-overlapping blocks of `block_s` seconds from offset
/// zero. A trailing remainder of at least half a block is zero-padded into a
/// final block; shorter remainders are dropped. Clips no longer than one
/// block yield exactly one padded block.
pub fn segment_audio(clip: &AudioClip, block_s: f64) -> Vec<AudioClip> {
    if clip.is_empty() {
        return Vec::new();
    }
    let block = (block_s * clip.sample_rate() as f64).round() as usize;
    if block == 0 {
        return Vec::new();
    }
    if clip.len() <= block {
        return vec![clip.padded_to(block)];
    }
    let full = clip.len() / block;
    let remainder = clip.len() - full * block;
    let mut blocks: Vec<AudioClip> = (0..full).map(|k| clip.slice(k * block, block)).collect();
    if remainder * 2 >= block {
        blocks.push(clip.slice(full * block, remainder).padded_to(block));
    }
    blocks
}

/// A text's averaged block-cosine relevance to its track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub track_id: String,
    pub text: String,
    pub score: f64,
    pub block_count: usize,
}

/// Scores one (text, audio) pair: the mean over blocks of the cosine between
/// the block embedding and the text embedding.
pub fn score_pair(
    model: &impl Embedder,
    track_id: &str,
    text: &str,
    clip: &AudioClip,
) -> Result<RelevanceScore> {
    if text.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty text".into()));
    }
    let blocks = segment_audio(clip, model.block_len_s());
    if blocks.is_empty() {
        return Err(Error::Audio(format!("track {track_id} has no audio to score")));
    }
    let text_emb = model.embed_text(text)?;
    let mut sum = 0.0;
    for block in &blocks {
        sum += similarity(&model.embed_audio_block(block)?, &text_emb);
    }
    Ok(RelevanceScore {
        track_id: track_id.to_string(),
        text: text.to_string(),
        score: sum / blocks.len() as f64,
        block_count: blocks.len(),
    })
}

/// One scored item in a filter report; `kind` distinguishes aspects from
/// sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub track_id: String,
    pub kind: SpanKind,
    pub text: String,
    pub score: f64,
    pub kept: bool,
}

/// A track that could not be scored and was passed through unfiltered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFilterError {
    pub track_id: String,
    pub message: String,
}

/// Kept/removed partition of every scored item plus per-track errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<ScoredItem>,
    pub removed: Vec<ScoredItem>,
    pub errors: Vec<TrackFilterError>,
    pub threshold: f64,
}

impl FilterReport {
    /// Writes the report as JSON Lines, one scored item per line, ordered by
    /// track then original item order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut items: Vec<&ScoredItem> = self.kept.iter().chain(self.removed.iter()).collect();
        items.sort_by(|a, b| {
            a.track_id
                .cmp(&b.track_id)
                .then(a.kind.cmp(&b.kind))
                .then(a.text.cmp(&b.text))
        });
        for item in items {
            let line = serde_json::to_string(item)
                .map_err(|e| Error::InvalidInput(format!("serializing report: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Writes per-track scoring failures, one `track_id<TAB>message` line
    /// each.
    pub fn save_errors(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.errors {
            out.push_str(&e.track_id);
            out.push('\t');
            out.push_str(&e.message);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Scores every aspect and sentence independently and removes items with
/// `score < threshold`. Tracks whose audio cannot be resolved pass through
/// unfiltered and are flagged in the report. Tracks left with zero texts
/// stay in the map with empty lists.
pub fn filter_dataset(
    model: &impl Embedder,
    mined: &BTreeMap<String, MinedDescription>,
    resolve_audio: impl Fn(&str) -> Result<AudioClip>,
    threshold: f64,
) -> (BTreeMap<String, MinedDescription>, FilterReport) {
    let mut filtered = BTreeMap::new();
    let mut report = FilterReport {
        threshold,
        ..FilterReport::default()
    };

    for (track_id, desc) in mined {
        let clip = match resolve_audio(track_id) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("{track_id}: audio unavailable, passing through unfiltered: {e}");
                report.errors.push(TrackFilterError {
                    track_id: track_id.clone(),
                    message: e.to_string(),
                });
                filtered.insert(track_id.clone(), desc.clone());
                continue;
            }
        };

        match filter_description(model, desc, &clip, threshold, &mut report) {
            Ok(new_desc) => {
                filtered.insert(track_id.clone(), new_desc);
            }
            Err(e) => {
                log::warn!("{track_id}: scoring failed, passing through unfiltered: {e}");
                report.errors.push(TrackFilterError {
                    track_id: track_id.clone(),
                    message: e.to_string(),
                });
                filtered.insert(track_id.clone(), desc.clone());
            }
        }
    }
    (filtered, report)
}

fn filter_description(
    model: &impl Embedder,
    desc: &MinedDescription,
    clip: &AudioClip,
    threshold: f64,
    report: &mut FilterReport,
) -> Result<MinedDescription> {
    let mut out = MinedDescription::empty(&desc.track_id);
    let mut partition = |items: &[MinedItem], kind: SpanKind| -> Result<Vec<MinedItem>> {
        let mut kept_items = Vec::new();
        for item in items {
            let scored = score_pair(model, &desc.track_id, &item.text, clip)?;
            let kept = scored.score >= threshold;
            let entry = ScoredItem {
                track_id: desc.track_id.clone(),
                kind,
                text: item.text.clone(),
                score: scored.score,
                kept,
            };
            if kept {
                kept_items.push(MinedItem {
                    text: item.text.clone(),
                    source: item.source,
                    score: Some(scored.score),
                });
                report.kept.push(entry);
            } else {
                report.removed.push(entry);
            }
        }
        Ok(kept_items)
    };
    out.aspects = partition(&desc.aspects, SpanKind::Aspect)?;
    out.sentences = partition(&desc.sentences, SpanKind::Sentence)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EmbeddingVector;
    use crate::textminer::Provenance;

    fn clip_seconds(seconds: f64, sr: u32) -> AudioClip {
        let n = (seconds * sr as f64).round() as usize;
        AudioClip::new((0..n).map(|i| ((i % 7) as f64 - 3.0) / 10.0).collect(), sr).unwrap()
    }

    #[test]
    fn ten_second_clip_yields_one_block() {
        let clip = clip_seconds(10.0, 100);
        let blocks = segment_audio(&clip, 10.0);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0], clip);
    }

    #[test]
    fn twenty_nine_second_clip_yields_three_blocks() {
        let sr = 100;
        let blocks = segment_audio(&clip_seconds(29.0, sr), 10.0);
        assert_eq!(blocks.len(), 3);
        assert!(blocks.iter().all(|b| b.len() == 1000));
        // last block is the 9 s remainder plus 1 s of padding
        assert!(blocks[2].samples()[900..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn short_remainders_are_dropped() {
        let blocks = segment_audio(&clip_seconds(23.0, 100), 10.0);
        assert_eq!(blocks.len(), 2);
        // exactly half a block is padded, not dropped
        let boundary = segment_audio(&clip_seconds(25.0, 100), 10.0);
        assert_eq!(boundary.len(), 3);
    }

    #[test]
    fn short_clip_is_padded_to_one_block() {
        let blocks = segment_audio(&clip_seconds(3.0, 100), 10.0);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].len(), 1000);
    }

    /// Stub whose audio embedding is keyed by the block's first sample and
    /// whose text embedding is fixed.
    struct StubScorer {
        block_len_s: f64,
        /// embedding per block index, keyed by first-sample bucket
        audio: std::collections::BTreeMap<i64, EmbeddingVector>,
        text: EmbeddingVector,
    }

    impl Embedder for StubScorer {
        fn embed_audio_block(&self, clip: &AudioClip) -> crate::error::Result<EmbeddingVector> {
            let key = (clip.samples()[0] * 1000.0).round() as i64;
            Ok(self.audio.get(&key).cloned().unwrap_or_else(|| self.text.clone()))
        }

        fn embed_text(&self, _text: &str) -> crate::error::Result<EmbeddingVector> {
            Ok(self.text.clone())
        }

        fn block_len_s(&self) -> f64 {
            self.block_len_s
        }
    }

    fn unit(dims: usize, hot: usize, sign: f64) -> EmbeddingVector {
        let mut v = vec![0.0; dims];
        v[hot] = sign;
        EmbeddingVector::new(v).unwrap()
    }

    #[test]
    fn single_block_score_equals_plain_cosine() {
        let text = unit(4, 0, 1.0);
        let stub = StubScorer {
            block_len_s: 10.0,
            audio: BTreeMap::new(),
            text: text.clone(),
        };
        let clip = clip_seconds(8.0, 100);
        let scored = score_pair(&stub, "t", "jazz", &clip).unwrap();
        assert_eq!(scored.block_count, 1);
        assert!((scored.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_block_score_is_the_mean_of_cosines() {
        // block 0 starts with sample 0.5 -> key 500; block 1 starts with -0.5 -> key -500
        let sr = 10u32;
        let mut samples = vec![0.0; 200];
        samples[0] = 0.5;
        samples[100] = -0.5;
        let clip = AudioClip::new(samples, sr).unwrap();

        let text = unit(2, 0, 1.0);
        let mut audio = BTreeMap::new();
        audio.insert(500, unit(2, 0, 1.0)); // cosine 1
        audio.insert(-500, unit(2, 1, 1.0)); // cosine 0
        let stub = StubScorer {
            block_len_s: 10.0,
            audio,
            text,
        };
        let scored = score_pair(&stub, "t", "jazz", &clip).unwrap();
        assert_eq!(scored.block_count, 2);
        assert!((scored.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_rejected() {
        let stub = StubScorer {
            block_len_s: 10.0,
            audio: BTreeMap::new(),
            text: unit(2, 0, 1.0),
        };
        assert!(score_pair(&stub, "t", "", &clip_seconds(1.0, 10)).is_err());
    }

    /// Stub that scores every pair with a fixed cosine.
    struct ConstScorer {
        cosine: f64,
    }

    impl Embedder for ConstScorer {
        fn embed_audio_block(&self, _clip: &AudioClip) -> crate::error::Result<EmbeddingVector> {
            // text embedding is e0; pick audio = cos * e0 + sin * e1
            let s = (1.0 - self.cosine * self.cosine).sqrt();
            Ok(EmbeddingVector::new(vec![self.cosine, s]).unwrap())
        }

        fn embed_text(&self, _text: &str) -> crate::error::Result<EmbeddingVector> {
            Ok(EmbeddingVector::new(vec![1.0, 0.0]).unwrap())
        }

        fn block_len_s(&self) -> f64 {
            10.0
        }
    }

    fn mined_fixture() -> BTreeMap<String, MinedDescription> {
        let mut m = BTreeMap::new();
        m.insert(
            "t1".to_string(),
            MinedDescription {
                track_id: "t1".into(),
                aspects: vec![
                    MinedItem {
                        text: "jazz".into(),
                        source: Provenance::Caption,
                        score: None,
                    },
                    MinedItem {
                        text: "piano".into(),
                        source: Provenance::Metadata,
                        score: None,
                    },
                ],
                sentences: vec![MinedItem {
                    text: "a smooth jazz piece".into(),
                    source: Provenance::Caption,
                    score: None,
                }],
            },
        );
        m
    }

    #[test]
    fn all_negative_scores_remove_everything_but_keep_the_track() {
        let mined = mined_fixture();
        let (filtered, report) = filter_dataset(
            &ConstScorer { cosine: -0.5 },
            &mined,
            |_| Ok(clip_seconds(5.0, 10)),
            0.0,
        );
        assert_eq!(filtered.len(), 1);
        assert!(filtered["t1"].is_empty());
        assert_eq!(report.removed.len(), 3);
        assert!(report.kept.is_empty());
        assert!(report.errors.is_empty());
    }

    #[test]
    fn zero_scores_are_kept_under_strict_negative_rule() {
        let mined = mined_fixture();
        let (filtered, report) = filter_dataset(
            &ConstScorer { cosine: 0.0 },
            &mined,
            |_| Ok(clip_seconds(5.0, 10)),
            0.0,
        );
        assert_eq!(filtered["t1"].aspects.len(), 2);
        assert_eq!(filtered["t1"].sentences.len(), 1);
        assert_eq!(report.kept.len(), 3);
        assert!(report.removed.is_empty());
        // surviving items carry their scores
        assert_eq!(filtered["t1"].aspects[0].score, Some(0.0));
    }

    #[test]
    fn kept_and_removed_reconstruct_the_input() {
        let mined = mined_fixture();
        let (_, report) = filter_dataset(
            &ConstScorer { cosine: 0.2 },
            &mined,
            |_| Ok(clip_seconds(5.0, 10)),
            0.5,
        );
        let mut all: Vec<(String, String)> = report
            .kept
            .iter()
            .chain(report.removed.iter())
            .map(|s| (s.track_id.clone(), s.text.clone()))
            .collect();
        all.sort();
        let mut expected: Vec<(String, String)> = mined
            .values()
            .flat_map(|d| {
                d.aspects
                    .iter()
                    .chain(d.sentences.iter())
                    .map(|i| (d.track_id.clone(), i.text.clone()))
            })
            .collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn filtering_is_idempotent() {
        let mined = mined_fixture();
        let scorer = ConstScorer { cosine: 0.3 };
        let resolve = |_: &str| Ok(clip_seconds(5.0, 10));
        let (once, _) = filter_dataset(&scorer, &mined, resolve, 0.0);
        let (twice, _) = filter_dataset(&scorer, &once, resolve, 0.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn unresolvable_audio_passes_track_through_flagged() {
        let mined = mined_fixture();
        let (filtered, report) = filter_dataset(
            &ConstScorer { cosine: -1.0 },
            &mined,
            |id| Err(Error::Audio(format!("{id} missing"))),
            0.0,
        );
        assert_eq!(filtered["t1"], mined["t1"], "unfiltered pass-through");
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].track_id, "t1");
    }

    #[test]
    fn raising_the_threshold_never_grows_the_kept_set() {
        let mined = mined_fixture();
        let scorer = ConstScorer { cosine: 0.3 };
        let resolve = |_: &str| Ok(clip_seconds(5.0, 10));
        let (_, low) = filter_dataset(&scorer, &mined, resolve, 0.0);
        let (_, high) = filter_dataset(&scorer, &mined, resolve, 0.4);
        assert!(high.kept.len() <= low.kept.len());
        for item in &high.kept {
            assert!(low.kept.iter().any(|k| k.text == item.text));
        }
    }

    #[test]
    fn report_round_trip_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mined = mined_fixture();
        let (_, report) = filter_dataset(
            &ConstScorer { cosine: 0.1 },
            &mined,
            |_| Ok(clip_seconds(5.0, 10)),
            0.0,
        );
        let p1 = dir.path().join("r1.jsonl");
        let p2 = dir.path().join("r2.jsonl");
        report.save(&p1).unwrap();
        report.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\"kind\":\"aspect\""));
    }
}
