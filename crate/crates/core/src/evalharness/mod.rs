//! Tag-based retrieval evaluation and zero-shot classification/tagging.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav_mono, AudioClip};
use crate::corpus::resolve_audio_path;
use crate::encoders::{mean_embedding, similarity, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::relevance::segment_audio;

pub use metrics::{accuracy, argmax, average_precision_at_k, pr_auc, recall_at_k, roc_auc};

/// One line of an evaluation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub track_id: String,
    pub audio_ref: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub single_label: Option<String>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::InvalidInput(format!("serializing manifest: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// A manifest entry with its audio loaded.
#[derive(Debug, Clone)]
pub struct EvalTrack {
    pub track_id: String,
    pub clip: AudioClip,
    pub labels: Vec<String>,
    pub single_label: Option<String>,
}

/// Reads every manifest entry's WAV, resolving relative paths against
/// `audio_base`.
pub fn load_manifest_tracks(
    manifest_path: impl AsRef<Path>,
    audio_base: &Path,
) -> Result<Vec<EvalTrack>> {
    let entries = load_manifest(manifest_path)?;
    entries
        .into_iter()
        .map(|e| {
            let clip = read_wav_mono(resolve_audio_path(audio_base, &e.audio_ref))?;
            Ok(EvalTrack {
                track_id: e.track_id,
                clip,
                labels: e.labels,
                single_label: e.single_label,
            })
        })
        .collect()
}

/// Maps each query string to the set of relevant tracks: those whose label
/// list contains the query verbatim (case-sensitive, no normalization).
/// Queries with empty relevance sets are excluded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryRelevanceIndex {
    queries: BTreeMap<String, BTreeSet<String>>,
}

impl QueryRelevanceIndex {
    pub fn new(queries: BTreeMap<String, BTreeSet<String>>) -> Self {
        Self {
            queries: queries.into_iter().filter(|(_, v)| !v.is_empty()).collect(),
        }
    }

    /// Builds the index from per-track label lists, using every distinct
    /// label as a query.
    pub fn from_labels<'a, I, L>(items: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, L)>,
        L: IntoIterator<Item = &'a String>,
    {
        let mut queries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (track_id, labels) in items {
            for label in labels {
                queries
                    .entry(label.clone())
                    .or_default()
                    .insert(track_id.to_string());
            }
        }
        Self { queries }
    }

    pub fn queries(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Embeds each clip: blocks from [`segment_audio`] are embedded separately,
/// averaged, and renormalized. A clip of at most one block length is padded
/// and embedded once.
pub fn embed_collection(
    model: &impl Embedder,
    clips: &[AudioClip],
) -> Result<Vec<EmbeddingVector>> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("empty collection".into()));
    }
    clips
        .iter()
        .map(|clip| {
            let blocks = segment_audio(clip, model.block_len_s());
            if blocks.is_empty() {
                return Err(Error::Audio("cannot embed an empty clip".into()));
            }
            let embs = blocks
                .iter()
                .map(|b| model.embed_audio_block(b))
                .collect::<Result<Vec<_>>>()?;
            mean_embedding(&embs)
        })
        .collect()
}

/// Track ids with their embeddings, aligned by index.
#[derive(Debug, Clone)]
pub struct EmbeddedCollection {
    pub track_ids: Vec<String>,
    pub embeddings: Vec<EmbeddingVector>,
}

/// Ranks the collection for a query embedding: descending similarity, ties
/// broken by ascending track id.
pub fn rank_tracks(query: &EmbeddingVector, coll: &EmbeddedCollection) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = coll
        .embeddings
        .iter()
        .zip(&coll.track_ids)
        .map(|(e, id)| (similarity(query, e), id))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite similarities")
            .then_with(|| a.1.cmp(b.1))
    });
    scored.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Macro-averaged retrieval metrics (`map@k`, `r@k` for each `k`) over all
/// index queries against a pre-embedded collection.
pub fn retrieval_values(
    coll: &EmbeddedCollection,
    index: &QueryRelevanceIndex,
    embed_query: impl Fn(&str) -> Result<EmbeddingVector>,
    ks: &[usize],
) -> Result<BTreeMap<String, f64>> {
    if index.is_empty() {
        return Err(Error::InvalidInput("no usable queries".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("cutoffs must be positive".into()));
    }
    let known: BTreeSet<&String> = coll.track_ids.iter().collect();
    for (query, relevant) in index.queries() {
        for id in relevant {
            if !known.contains(id) {
                return Err(Error::InvalidInput(format!(
                    "query {query:?} marks unknown track {id} relevant"
                )));
            }
        }
    }

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for (query, relevant) in index.queries() {
        let ranking = rank_tracks(&embed_query(query)?, coll);
        for &k in ks {
            *sums.entry(format!("map@{k}")).or_insert(0.0) +=
                average_precision_at_k(&ranking, relevant, k);
            *sums.entry(format!("r@{k}")).or_insert(0.0) += recall_at_k(&ranking, relevant, k);
        }
    }
    let n = index.len() as f64;
    Ok(sums.into_iter().map(|(k, v)| (k, v / n)).collect())
}

/// Run configuration carried inside a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunInfo {
    pub model_id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub ks: Vec<usize>,
}

/// Named metric values in [0, 1] plus the run configuration. `percent`
/// renders each value at one decimal place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub values: BTreeMap<String, f64>,
    pub percent: BTreeMap<String, String>,
    pub skipped_labels: Vec<String>,
    pub config: RunInfo,
}

impl MetricsReport {
    pub fn new(values: BTreeMap<String, f64>, skipped_labels: Vec<String>, config: RunInfo) -> Self {
        debug_assert!(values.values().all(|v| (0.0..=1.0).contains(v)));
        let percent = values
            .iter()
            .map(|(k, v)| (k.clone(), format!("{:.1}", v * 100.0)))
            .collect();
        Self {
            values,
            percent,
            skipped_labels,
            config,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("serializing report: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })
    }
}

/// Tag-based retrieval over a collection: each index query retrieves the
/// whole collection; metrics are macro-averaged over queries.
pub fn evaluate_retrieval(
    model: &impl Embedder,
    collection: &[(String, AudioClip)],
    index: &QueryRelevanceIndex,
    ks: &[usize],
    mut info: RunInfo,
) -> Result<MetricsReport> {
    let clips: Vec<AudioClip> = collection.iter().map(|(_, c)| c.clone()).collect();
    let embeddings = embed_collection(model, &clips)?;
    let coll = EmbeddedCollection {
        track_ids: collection.iter().map(|(id, _)| id.clone()).collect(),
        embeddings,
    };
    let values = retrieval_values(&coll, index, |q| model.embed_text(q), ks)?;
    info.ks = ks.to_vec();
    Ok(MetricsReport::new(values, Vec::new(), info))
}

/// Similarity scores of every clip against the text embedding of every
/// label, plus a same-shape binary truth matrix (zeros until supplied).
#[derive(Debug, Clone, PartialEq)]
pub struct TagPredictionMatrix {
    pub scores: Vec<Vec<f64>>,
    pub truth: Vec<Vec<bool>>,
}

impl TagPredictionMatrix {
    /// Attaches ground truth, checking the shape matches the scores.
    pub fn with_truth(mut self, truth: Vec<Vec<bool>>) -> Result<Self> {
        if truth.len() != self.scores.len()
            || truth
                .iter()
                .zip(&self.scores)
                .any(|(t, s)| t.len() != s.len())
        {
            return Err(Error::InvalidInput(
                "truth shape does not match score matrix".into(),
            ));
        }
        self.truth = truth;
        Ok(self)
    }
}

/// `scores[i][j] = similarity(audio_i, encode_text(label_j))`; labels are
/// passed verbatim, with no prompt template.
pub fn zero_shot_scores(
    model: &impl Embedder,
    clips: &[AudioClip],
    labels: &[String],
) -> Result<TagPredictionMatrix> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels".into()));
    }
    if let Some(empty) = labels.iter().find(|l| l.is_empty()) {
        let _ = empty;
        return Err(Error::InvalidInput("empty label string".into()));
    }
    let label_embs = labels
        .iter()
        .map(|l| model.embed_text(l))
        .collect::<Result<Vec<_>>>()?;
    let audio_embs = embed_collection(model, clips)?;
    let scores = audio_embs
        .iter()
        .map(|a| label_embs.iter().map(|t| similarity(a, t)).collect())
        .collect::<Vec<Vec<f64>>>();
    let truth = vec![vec![false; labels.len()]; clips.len()];
    Ok(TagPredictionMatrix { scores, truth })
}

/// Zero-shot auto-tagging: macro ROC-AUC and PR-AUC over the union of track
/// labels. Labels with a single truth class are skipped and reported.
pub fn evaluate_tagging(
    model: &impl Embedder,
    tracks: &[EvalTrack],
    mut info: RunInfo,
) -> Result<MetricsReport> {
    let labels: Vec<String> = tracks
        .iter()
        .flat_map(|t| t.labels.iter().cloned())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels in manifest".into()));
    }
    let clips: Vec<AudioClip> = tracks.iter().map(|t| t.clip.clone()).collect();
    let matrix = zero_shot_scores(model, &clips, &labels)?;
    let truth: Vec<Vec<bool>> = tracks
        .iter()
        .map(|t| labels.iter().map(|l| t.labels.contains(l)).collect())
        .collect();
    let matrix = matrix.with_truth(truth)?;

    let mut roc_sum = 0.0;
    let mut pr_sum = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let col_scores: Vec<f64> = matrix.scores.iter().map(|row| row[j]).collect();
        let col_truth: Vec<bool> = matrix.truth.iter().map(|row| row[j]).collect();
        match (roc_auc(&col_scores, &col_truth), pr_auc(&col_scores, &col_truth)) {
            (Some(r), Some(p)) => {
                roc_sum += r;
                pr_sum += p;
                used += 1;
            }
            _ => {
                log::warn!("label {label:?} has a single truth class; skipped");
                skipped.push(label.clone());
            }
        }
    }
    if used == 0 {
        return Err(Error::InvalidInput(
            "every label column is single-class; nothing to evaluate".into(),
        ));
    }
    let mut values = BTreeMap::new();
    values.insert("roc_auc".to_string(), roc_sum / used as f64);
    values.insert("pr_auc".to_string(), pr_sum / used as f64);
    info.ks = Vec::new();
    Ok(MetricsReport::new(values, skipped, info))
}

/// Zero-shot classification: accuracy of label argmax against
/// `single_label` truth.
pub fn evaluate_classification(
    model: &impl Embedder,
    tracks: &[EvalTrack],
    mut info: RunInfo,
) -> Result<MetricsReport> {
    let labels: Vec<String> = tracks
        .iter()
        .filter_map(|t| t.single_label.clone())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::InvalidInput("no single_label truth in manifest".into()));
    }
    let with_truth: Vec<&EvalTrack> = tracks.iter().filter(|t| t.single_label.is_some()).collect();
    let clips: Vec<AudioClip> = with_truth.iter().map(|t| t.clip.clone()).collect();
    let matrix = zero_shot_scores(model, &clips, &labels)?;
    let predicted: Vec<usize> = matrix.scores.iter().map(|row| argmax(row)).collect();
    let truth: Vec<usize> = with_truth
        .iter()
        .map(|t| {
            let lbl = t.single_label.as_ref().expect("filtered to Some");
            labels.iter().position(|l| l == lbl).expect("label from union")
        })
        .collect();
    let mut values = BTreeMap::new();
    values.insert("accuracy".to_string(), accuracy(&predicted, &truth));
    info.ks = Vec::new();
    Ok(MetricsReport::new(values, Vec::new(), info))
}
