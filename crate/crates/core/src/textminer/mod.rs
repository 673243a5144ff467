//! Span annotation model, label conversion, span decoding, and the mining
//! pipeline that turns tagger outputs into per-track descriptions.

mod tagger;
mod tokenizer;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_metadata_aspects, Corpus};
use crate::error::{Error, Result};

pub use tagger::{token_f1, train_tagger, TaggerConfig, TaggerModel};
pub use tokenizer::{tokenize, Token, TokenSequence};
pub(crate) use tokenizer::token_bucket;

/// The two annotation kinds: short-form aspects and long-form sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Aspect,
    Sentence,
}

/// A gold span in character offsets, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

/// Text with gold spans. Spans of the same kind never overlap; aspect and
/// sentence spans may overlap each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedText {
    pub text: String,
    pub spans: Vec<Span>,
}

impl AnnotatedText {
    pub fn new(text: String, spans: Vec<Span>) -> Result<Self> {
        let char_len = text.chars().count();
        for s in &spans {
            if s.start >= s.end || s.end > char_len {
                return Err(Error::InvalidInput(format!(
                    "span {}..{} out of range for text of {char_len} chars",
                    s.start, s.end
                )));
            }
        }
        for kind in [SpanKind::Aspect, SpanKind::Sentence] {
            let mut of_kind: Vec<&Span> = spans.iter().filter(|s| s.kind == kind).collect();
            of_kind.sort_by_key(|s| s.start);
            for pair in of_kind.windows(2) {
                if pair[1].start < pair[0].end {
                    return Err(Error::InvalidInput(format!(
                        "overlapping {kind:?} spans {}..{} and {}..{}",
                        pair[0].start, pair[0].end, pair[1].start, pair[1].end
                    )));
                }
            }
        }
        Ok(Self { text, spans })
    }
}

/// Binary token labels: 1 iff the token's character range overlaps any gold
/// span of the given kind.
pub fn spans_to_labels(
    ann: &AnnotatedText,
    kind: SpanKind,
    tokens: &TokenSequence,
) -> Result<Vec<bool>> {
    let char_len = ann.text.chars().count();
    if tokens.tokens().last().is_some_and(|t| t.end > char_len) {
        return Err(Error::InvalidInput(
            "token offsets lie outside the annotated text".into(),
        ));
    }
    Ok(tokens
        .tokens()
        .iter()
        .map(|t| {
            ann.spans
                .iter()
                .any(|s| s.kind == kind && t.start < s.end && s.start < t.end)
        })
        .collect())
}

/// Maximal runs of consecutive token indices with probability >= threshold,
/// as (start, end-exclusive) index ranges.
fn decode_runs(probabilities: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &p) in probabilities.iter().enumerate() {
        if p >= threshold {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            runs.push((s, i));
        }
    }
    if let Some(s) = start {
        runs.push((s, probabilities.len()));
    }
    runs
}

/// Decodes per-token probabilities into character spans: maximal runs of
/// tokens at or above the threshold, spanning from the first token's start
/// to the last token's end.
pub fn decode_spans(
    probabilities: &[f64],
    tokens: &TokenSequence,
    threshold: f64,
) -> Result<Vec<(usize, usize)>> {
    if probabilities.len() != tokens.len() {
        return Err(Error::InvalidInput(format!(
            "{} probabilities for {} tokens",
            probabilities.len(),
            tokens.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(decode_runs(probabilities, threshold)
        .into_iter()
        .map(|(s, e)| (tokens.tokens()[s].start, tokens.tokens()[e - 1].end))
        .collect())
}

/// Source field a mined item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Caption,
    FileDescription,
    Article,
    Metadata,
}

/// One mined text with its provenance and, once scored, its relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedItem {
    pub text: String,
    pub source: Provenance,
    #[serde(default)]
    pub score: Option<f64>,
}

/// Mined aspects and sentences for one track. Non-metadata items are
/// contiguous substrings of their provenance text; exact duplicates are
/// removed within each list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedDescription {
    pub track_id: String,
    #[serde(default)]
    pub aspects: Vec<MinedItem>,
    #[serde(default)]
    pub sentences: Vec<MinedItem>,
}

impl MinedDescription {
    pub fn empty(track_id: impl Into<String>) -> Self {
        Self {
            track_id: track_id.into(),
            aspects: Vec::new(),
            sentences: Vec::new(),
        }
    }

    pub fn aspect_texts(&self) -> impl Iterator<Item = &str> {
        self.aspects.iter().map(|i| i.text.as_str())
    }

    pub fn sentence_texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|i| i.text.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.aspects.is_empty() && self.sentences.is_empty()
    }
}

/// Mining parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Decode threshold for both taggers.
    pub threshold: f64,
    /// Sentence spans shorter than this many tokens are discarded; aspects
    /// of a single token are allowed.
    pub min_sentence_tokens: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_sentence_tokens: 3,
        }
    }
}

fn substring_by_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}

fn mine_source(
    tagger: &TaggerModel,
    text: &str,
    source: Provenance,
    threshold: f64,
    min_tokens: usize,
    seen: &mut BTreeSet<String>,
    out: &mut Vec<MinedItem>,
) {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return;
    }
    let probs = tagger.predict(&tokens);
    for (ts, te) in decode_runs(&probs, threshold) {
        if te - ts < min_tokens {
            continue;
        }
        let span_text = substring_by_chars(text, tokens.tokens()[ts].start, tokens.tokens()[te - 1].end);
        if seen.insert(span_text.clone()) {
            out.push(MinedItem {
                text: span_text,
                source,
                score: None,
            });
        }
    }
}

/// Runs both taggers over caption, file description, and article sections of
/// every record, merges metadata aspects, deduplicates, and records
/// provenance. Empty text fields are skipped.
pub fn mine_descriptions(
    corpus: &Corpus,
    aspect_tagger: &TaggerModel,
    sentence_tagger: &TaggerModel,
    config: &MiningConfig,
) -> Result<BTreeMap<String, MinedDescription>> {
    if aspect_tagger.kind != SpanKind::Aspect {
        return Err(Error::InvalidInput("aspect tagger has wrong kind".into()));
    }
    if sentence_tagger.kind != SpanKind::Sentence {
        return Err(Error::InvalidInput("sentence tagger has wrong kind".into()));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {} outside (0, 1)",
            config.threshold
        )));
    }

    let mut result = BTreeMap::new();
    for record in corpus.records() {
        let mut desc = MinedDescription::empty(&record.track_id);
        let mut seen_aspects = BTreeSet::new();
        let mut seen_sentences = BTreeSet::new();

        let mut sources: Vec<(Provenance, &str)> = vec![
            (Provenance::Caption, record.caption.as_str()),
            (Provenance::FileDescription, record.file_description.as_str()),
        ];
        for section in &record.sections {
            sources.push((Provenance::Article, section.text.as_str()));
        }

        for (source, text) in sources {
            if text.is_empty() {
                continue;
            }
            mine_source(
                aspect_tagger,
                text,
                source,
                config.threshold,
                1,
                &mut seen_aspects,
                &mut desc.aspects,
            );
            mine_source(
                sentence_tagger,
                text,
                source,
                config.threshold,
                config.min_sentence_tokens,
                &mut seen_sentences,
                &mut desc.sentences,
            );
        }

        for aspect in extract_metadata_aspects(record) {
            if seen_aspects.insert(aspect.clone()) {
                desc.aspects.push(MinedItem {
                    text: aspect,
                    source: Provenance::Metadata,
                    score: None,
                });
            }
        }

        result.insert(record.track_id.clone(), desc);
    }
    Ok(result)
}

/// Saves mined descriptions as JSON Lines ordered by track id.
pub fn save_mined(
    mined: &BTreeMap<String, MinedDescription>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for desc in mined.values() {
        let line = serde_json::to_string(desc)
            .map_err(|e| Error::InvalidInput(format!("serializing {}: {e}", desc.track_id)))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_mined(path: impl AsRef<Path>) -> Result<BTreeMap<String, MinedDescription>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let desc: MinedDescription = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.insert(desc.track_id.clone(), desc);
    }
    Ok(out)
}

/// Loads annotation data: JSON Lines of [`AnnotatedText`].
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotatedText>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let ann: AnnotatedText = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        // revalidate offsets and overlap rules
        let ann = AnnotatedText::new(ann.text, ann.spans).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(ann);
    }
    Ok(out)
}

pub fn save_annotations(data: &[AnnotatedText], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for ann in data {
        let line = serde_json::to_string(ann)
            .map_err(|e| Error::InvalidInput(format!("serializing annotation: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
