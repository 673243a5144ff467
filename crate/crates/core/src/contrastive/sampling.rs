//! Batch construction: pairing a track's audio crop with a text sampled
//! from its mined description.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::textminer::MinedDescription;

/// Separator when several sampled sentences are concatenated.
const SENTENCE_JOIN: &str = " ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    /// Cap on items drawn per text sample; applies to the aspect path and,
    /// mirroring it, to random-subset sentence sampling.
    pub max_aspects_per_text: usize,
    pub aspect_join_delimiter: String,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_aspects_per_text: 5,
            aspect_join_delimiter: ", ".into(),
        }
    }
}

/// How sentences are drawn for a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceSampleRule {
    /// Uniform sample without replacement, mirroring the aspects procedure.
    RandomSubset,
    /// `n` consecutive sentences starting with the first, `n` uniform in
    /// `[1..=S]`.
    ConsecutivePrefix,
}

/// Samples one pairing text from a description: a fair coin picks aspects or
/// sentences when both are available.
pub fn sample_text(
    desc: &MinedDescription,
    rule: SentenceSampleRule,
    spec: &BatchSpec,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let aspects: Vec<&str> = desc.aspect_texts().collect();
    let sentences: Vec<&str> = desc.sentence_texts().collect();
    if aspects.is_empty() && sentences.is_empty() {
        return Err(Error::InvalidInput(format!(
            "track {} has no aspects or sentences to sample",
            desc.track_id
        )));
    }

    let use_aspects = if sentences.is_empty() {
        true
    } else if aspects.is_empty() {
        false
    } else {
        rng.gen_bool(0.5)
    };

    if use_aspects {
        let k = spec.max_aspects_per_text.min(aspects.len()).max(1);
        let chosen = sample_without_replacement(&aspects, k, rng);
        Ok(chosen.join(&spec.aspect_join_delimiter))
    } else {
        match rule {
            SentenceSampleRule::RandomSubset => {
                let k = spec.max_aspects_per_text.min(sentences.len()).max(1);
                let chosen = sample_without_replacement(&sentences, k, rng);
                Ok(chosen.join(SENTENCE_JOIN))
            }
            SentenceSampleRule::ConsecutivePrefix => {
                let n = rng.gen_range(1..=sentences.len());
                Ok(sentences[..n].join(SENTENCE_JOIN))
            }
        }
    }
}

fn sample_without_replacement<'a>(
    pool: &[&'a str],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a str> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.shuffle(rng);
    indices.truncate(k);
    indices.into_iter().map(|i| pool[i]).collect()
}

/// Crops to exactly `length_s` seconds: a uniformly random window of longer
/// clips, zero padding for shorter ones.
pub fn crop_audio(clip: &AudioClip, length_s: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let target = (length_s * clip.sample_rate() as f64).round() as usize;
    if clip.len() > target {
        let start = rng.gen_range(0..=clip.len() - target);
        clip.slice(start, target)
    } else {
        clip.padded_to(target)
    }
}
