//! Data model, ingestion heuristics, persistence, splits, and descriptive
//! statistics for text-music corpora.
//!
//! A corpus is persisted as UTF-8 JSON Lines, one [`CorpusRecord`] per line.
//! Corpus-level metadata (`name`, `created_at`) is runtime-only: the record
//! stream is the wire format, which keeps saved files byte-reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::wav_duration_s;
use crate::error::{Error, Result};
use crate::textminer::MinedDescription;

/// Dataset partition a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One titled section of article text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    pub text: String,
}

/// Categorical metadata attached to a track.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackMetadata {
    #[serde(default)]
    pub genres: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
}

/// One curated track: audio reference, texts, metadata, split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub track_id: String,
    /// Path to a PCM WAV file, resolved against the corpus file's directory
    /// when relative.
    pub audio_ref: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub file_description: String,
    #[serde(default)]
    pub sections: Vec<Section>,
    #[serde(default)]
    pub metadata: TrackMetadata,
    pub split: Split,
}

/// An uncurated record as produced by an upstream source.
///
/// `music_category` is supplied by the producer; category-graph membership
/// is not re-derived here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub track_id: String,
    #[serde(default)]
    pub audio_ref: Option<String>,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub file_description: String,
    #[serde(default)]
    pub sections: Vec<Section>,
    #[serde(default)]
    pub metadata: TrackMetadata,
    pub split: Split,
    #[serde(default = "default_true")]
    pub music_category: bool,
}

fn default_true() -> bool {
    true
}

impl From<&CorpusRecord> for RawRecord {
    fn from(r: &CorpusRecord) -> Self {
        RawRecord {
            track_id: r.track_id.clone(),
            audio_ref: Some(r.audio_ref.clone()),
            caption: r.caption.clone(),
            file_description: r.file_description.clone(),
            sections: r.sections.clone(),
            metadata: r.metadata.clone(),
            split: r.split,
            music_category: true,
        }
    }
}

/// Section titles excluded from article text, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionExclusionList {
    titles: BTreeSet<String>,
}

impl Default for SectionExclusionList {
    fn default() -> Self {
        Self::new(["Music video", "Chart performance", "Covers", "Remixes"])
    }
}

impl SectionExclusionList {
    pub fn new<I, S>(titles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            titles: titles
                .into_iter()
                .map(|t| t.as_ref().to_lowercase())
                .collect(),
        }
    }

    pub fn contains(&self, title: &str) -> bool {
        self.titles.contains(&title.to_lowercase())
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }
}

/// An immutable collection of curated records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub name: String,
    /// Runtime-only metadata; not part of the persisted record stream.
    pub created_at: Option<String>,
    records: Vec<CorpusRecord>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate track ids.
    pub fn new(name: impl Into<String>, records: Vec<CorpusRecord>) -> Result<Self> {
        let dups = duplicate_ids(records.iter().map(|r| r.track_id.as_str()));
        if !dups.is_empty() {
            return Err(Error::DuplicateTrackIds { ids: dups });
        }
        Ok(Self {
            name: name.into(),
            created_at: None,
            records,
        })
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, track_id: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.track_id == track_id)
    }

    pub fn split_records(&self, split: Split) -> Vec<&CorpusRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Checks that every audio reference opens as a WAV file. Returns one
    /// entry per failing track.
    pub fn validate_audio(&self, base: &Path) -> Vec<DropEntry> {
        self.records
            .iter()
            .filter_map(|r| {
                wav_duration_s(resolve_audio_path(base, &r.audio_ref))
                    .err()
                    .map(|e| DropEntry {
                        track_id: r.track_id.clone(),
                        reason: e.to_string(),
                    })
            })
            .collect()
    }
}

fn duplicate_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dups.iter().any(|d| d == id) {
            dups.push(id.to_string());
        }
    }
    dups
}

/// Resolves an audio reference against a base directory unless absolute.
pub fn resolve_audio_path(base: &Path, audio_ref: &str) -> PathBuf {
    let p = Path::new(audio_ref);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A record dropped during ingestion, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEntry {
    pub track_id: String,
    pub reason: String,
}

/// Result of [`ingest_records`]: the curated corpus plus the drop log.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    pub drops: Vec<DropEntry>,
}

/// Curates raw records: drops records outside the music category or lacking
/// audio, and removes excluded sections. Surviving section text is never
/// altered.
pub fn ingest_records(
    raw_records: &[RawRecord],
    exclusions: &SectionExclusionList,
    name: impl Into<String>,
) -> Result<IngestOutcome> {
    let dups = duplicate_ids(raw_records.iter().map(|r| r.track_id.as_str()));
    if !dups.is_empty() {
        return Err(Error::DuplicateTrackIds { ids: dups });
    }

    let mut records = Vec::new();
    let mut drops = Vec::new();
    for raw in raw_records {
        if raw.track_id.is_empty() {
            drops.push(DropEntry {
                track_id: String::from("<unnamed>"),
                reason: "missing track id".into(),
            });
            continue;
        }
        if !raw.music_category {
            drops.push(DropEntry {
                track_id: raw.track_id.clone(),
                reason: "not in music category".into(),
            });
            continue;
        }
        let audio_ref = match raw.audio_ref.as_deref() {
            Some(r) if !r.is_empty() => r.to_string(),
            _ => {
                drops.push(DropEntry {
                    track_id: raw.track_id.clone(),
                    reason: "missing audio reference".into(),
                });
                log::warn!("dropping {}: missing audio reference", raw.track_id);
                continue;
            }
        };
        let sections = raw
            .sections
            .iter()
            .filter(|s| !exclusions.contains(&s.title))
            .cloned()
            .collect();
        records.push(CorpusRecord {
            track_id: raw.track_id.clone(),
            audio_ref,
            caption: raw.caption.clone(),
            file_description: raw.file_description.clone(),
            sections,
            metadata: raw.metadata.clone(),
            split: raw.split,
        });
    }
    Ok(IngestOutcome {
        corpus: Corpus::new(name, records)?,
        drops,
    })
}

/// Returns `genres` followed by `instruments`, deduplicated on exact string
/// match, original casing preserved.
pub fn extract_metadata_aspects(record: &CorpusRecord) -> Vec<String> {
    let mut seen = BTreeSet::new();
    record
        .metadata
        .genres
        .iter()
        .chain(record.metadata.instruments.iter())
        .filter(|a| seen.insert(a.as_str().to_string()))
        .cloned()
        .collect()
}

/// Writes the drop log: one `track_id<TAB>reason` per line.
pub fn write_drop_log(path: impl AsRef<Path>, drops: &[DropEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for d in drops {
        out.push_str(&d.track_id);
        out.push('\t');
        out.push_str(&d.reason);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Saves a corpus as JSON Lines, one record per line, in record order.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for record in corpus.records() {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::InvalidInput(format!("serializing {}: {e}", record.track_id)))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a JSON Lines corpus. The corpus name is the file stem; a malformed
/// file yields a parse error naming the first bad line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, records)
}

/// How many entries [`CorpusStats::top_aspects`] keeps.
pub const TOP_ASPECT_COUNT: usize = 10;

/// Descriptive statistics over a corpus and its mined descriptions.
///
/// Means and medians are absent for an empty corpus. Medians are order
/// statistics: the ceil(n/2)-th smallest element (lower median).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub track_count: usize,
    pub duration_mean_s: Option<f64>,
    pub duration_median_s: Option<f64>,
    pub aspects_per_track_mean: Option<f64>,
    pub aspects_per_track_median: Option<f64>,
    pub sentences_per_track_mean: Option<f64>,
    pub sentences_per_track_median: Option<f64>,
    /// Distinct lowercase whitespace-delimited tokens across all mined
    /// texts, with punctuation stripped at token edges.
    pub vocabulary_size: usize,
    /// Most frequent aspects, by descending track count, ties broken
    /// lexicographically.
    pub top_aspects: Vec<(String, usize)>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Lower median: the ceil(n/2)-th smallest element.
fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Some(sorted[(sorted.len() - 1) / 2])
}

fn vocabulary_token(raw: &str) -> Option<String> {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Computes corpus statistics. Tracks without a mined entry count zero
/// aspects and sentences. Durations are read from the WAV headers under
/// `audio_base`.
pub fn compute_stats(
    corpus: &Corpus,
    mined: &BTreeMap<String, MinedDescription>,
    audio_base: &Path,
) -> Result<CorpusStats> {
    for track_id in mined.keys() {
        if corpus.record(track_id).is_none() {
            return Err(Error::InvalidInput(format!(
                "mined track {track_id} not present in corpus"
            )));
        }
    }

    let mut durations = Vec::with_capacity(corpus.len());
    let mut aspect_counts = Vec::with_capacity(corpus.len());
    let mut sentence_counts = Vec::with_capacity(corpus.len());
    let mut vocabulary = BTreeSet::new();
    let mut aspect_freq: BTreeMap<String, usize> = BTreeMap::new();

    for record in corpus.records() {
        durations.push(wav_duration_s(resolve_audio_path(
            audio_base,
            &record.audio_ref,
        ))?);
        let (n_aspects, n_sentences) = match mined.get(&record.track_id) {
            Some(desc) => {
                for item in desc.aspects.iter().chain(desc.sentences.iter()) {
                    for raw in item.text.split_whitespace() {
                        if let Some(tok) = vocabulary_token(raw) {
                            vocabulary.insert(tok);
                        }
                    }
                }
                for item in &desc.aspects {
                    *aspect_freq.entry(item.text.clone()).or_insert(0) += 1;
                }
                (desc.aspects.len(), desc.sentences.len())
            }
            None => (0, 0),
        };
        aspect_counts.push(n_aspects as f64);
        sentence_counts.push(n_sentences as f64);
    }

    let mut top_aspects: Vec<(String, usize)> = aspect_freq.into_iter().collect();
    top_aspects.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top_aspects.truncate(TOP_ASPECT_COUNT);

    Ok(CorpusStats {
        track_count: corpus.len(),
        duration_mean_s: mean(&durations),
        duration_median_s: median(&durations),
        aspects_per_track_mean: mean(&aspect_counts),
        aspects_per_track_median: median(&aspect_counts),
        sentences_per_track_mean: mean(&sentence_counts),
        sentences_per_track_median: median(&sentence_counts),
        vocabulary_size: vocabulary.len(),
        top_aspects,
    })
}
