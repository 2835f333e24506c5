//! Max-similarity ensemble over per-pattern models.
//!
//! Each model embeds query and target independently; the pair's similarity
//! under that model is `1 / (1 + d)`. The final similarity is the maximum
//! over models and the pair is positive when it reaches the threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acfg::{AttributedCfg, OpcodeVocabulary};
use crate::error::{Error, Result};
use crate::gnn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::gnn::{embed_prepared, euclidean_distance, Embedding, GraphPair, ModelConfig, ModelParams, PreparedGraph};
use crate::labeling::Pattern;

pub const DEFAULT_THRESHOLD: f64 = 0.55;

/// `1 / (1 + d)`, mapping `[0, inf)` onto `(0, 1]`.
pub fn similarity(distance: f64) -> Result<f64> {
    if distance < 0.0 || distance.is_nan() {
        return Err(Error::NegativeDistance(distance));
    }
    Ok(1.0 / (1.0 + distance))
}

/// Which pairs a model was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Leaf,
    Root,
    Internal,
    /// All three patterns together.
    Mixed,
}

impl ModelKind {
    pub const PATTERNS: [ModelKind; 3] = [ModelKind::Leaf, ModelKind::Root, ModelKind::Internal];

    pub fn patterns(self) -> Vec<Pattern> {
        match self {
            ModelKind::Leaf => vec![Pattern::Leaf],
            ModelKind::Root => vec![Pattern::Root],
            ModelKind::Internal => vec![Pattern::Internal],
            ModelKind::Mixed => Pattern::CROSS_INLINING.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Leaf => "leaf",
            ModelKind::Root => "root",
            ModelKind::Internal => "internal",
            ModelKind::Mixed => "mixed",
        }
    }

    fn seed_offset(self) -> u64 {
        match self {
            ModelKind::Leaf => 1,
            ModelKind::Root => 2,
            ModelKind::Internal => 3,
            ModelKind::Mixed => 4,
        }
    }

    /// Seed of this kind's model given the run seed.
    pub fn model_seed(self, seed: u64) -> u64 {
        seed.wrapping_mul(31).wrapping_add(self.seed_offset())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leaf" => Ok(ModelKind::Leaf),
            "root" => Ok(ModelKind::Root),
            "internal" => Ok(ModelKind::Internal),
            "mixed" => Ok(ModelKind::Mixed),
            other => Err(Error::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// One or more models sharing a vocabulary, plus the decision threshold.
///
/// The usual configuration holds the leaf, root and internal models; a
/// single mixed or single-pattern model gives the ablation variants.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleDetector {
    vocab: OpcodeVocabulary,
    models: Vec<DetectorModel>,
    threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSimilarity {
    pub model: ModelKind,
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub similarities: Vec<ModelSimilarity>,
    #[serde(rename = "final")]
    pub final_similarity: f64,
    pub threshold: f64,
    pub label: VerdictLabel,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("threshold {threshold} is outside (0, 1]")))
    }
}

/// Max-aggregates per-model similarities and applies `threshold` (inclusive).
pub fn combine(similarities: Vec<ModelSimilarity>, threshold: f64) -> Verdict {
    let final_similarity = similarities
        .iter()
        .map(|s| s.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        label: if final_similarity >= threshold {
            VerdictLabel::Positive
        } else {
            VerdictLabel::Negative
        },
        similarities,
        final_similarity,
        threshold,
    }
}

impl EnsembleDetector {
    pub fn new(vocab: OpcodeVocabulary, models: Vec<DetectorModel>, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        if models.is_empty() {
            return Err(Error::InvalidConfig("a detector needs at least one model".into()));
        }
        for m in &models {
            if m.config.input_dim != vocab.feature_dim() {
                return Err(Error::ShapeMismatch {
                    expected: vocab.feature_dim(),
                    actual: m.config.input_dim,
                });
            }
        }
        let mut kinds: Vec<_> = models.iter().map(|m| m.kind).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != models.len() {
            return Err(Error::InvalidConfig("duplicate model kinds".into()));
        }
        Ok(EnsembleDetector {
            vocab,
            models,
            threshold,
        })
    }

    pub fn vocab(&self) -> &OpcodeVocabulary {
        &self.vocab
    }

    pub fn models(&self) -> &[DetectorModel] {
        &self.models
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(self)
    }

    pub fn prepare(&self, cfg: &AttributedCfg) -> PreparedGraph {
        PreparedGraph::new(cfg, &self.vocab)
    }

    pub fn detect(&self, query: &AttributedCfg, target: &AttributedCfg) -> Result<Verdict> {
        self.detect_prepared(&self.prepare(query), &self.prepare(target))
    }

    pub fn detect_prepared(&self, query: &PreparedGraph, target: &PreparedGraph) -> Result<Verdict> {
        let similarities = self
            .models
            .par_iter()
            .map(|m| {
                let q = embed_prepared(query, &m.params, &m.config)?;
                let t = embed_prepared(target, &m.params, &m.config)?;
                Ok(ModelSimilarity {
                    model: m.kind,
                    similarity: similarity(euclidean_distance(&q, &t))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(combine(similarities, self.threshold))
    }

    /// Final similarity of every pair, embedding each distinct graph once per model.
    pub fn score(&self, pairs: &[GraphPair], graphs: &[PreparedGraph]) -> Result<Vec<f64>> {
        let mut needed: Vec<usize> = pairs.iter().flat_map(|p| [p.query, p.target]).collect();
        needed.sort_unstable();
        needed.dedup();
        let mut finals = vec![f64::NEG_INFINITY; pairs.len()];
        for m in &self.models {
            let table: BTreeMap<usize, Embedding> = needed
                .par_iter()
                .map(|&i| Ok((i, embed_prepared(&graphs[i], &m.params, &m.config)?)))
                .collect::<Result<_>>()?;
            for (f, p) in finals.iter_mut().zip(pairs) {
                let s = similarity(euclidean_distance(&table[&p.query], &table[&p.target]))?;
                *f = f.max(s);
            }
        }
        Ok(finals)
    }

    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.models {
            h.update(m.kind.as_str().as_bytes());
            h.update(serde_json::to_vec(&m.config).expect("config serializes"));
        }
        h.update(serde_json::to_vec(&self.vocab).expect("vocabulary serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `<kind>.ckpt` (+ manifest) per model, `vocab.json` and `manifest.json`.
    pub fn save(&self, dir: &Path, provenance: &BTreeMap<String, String>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in &self.models {
            save_checkpoint(&dir.join(format!("{}.ckpt", m.kind)), &m.config, &m.params)?;
        }
        self.vocab.save(&dir.join("vocab.json"))?;
        let manifest = BundleManifest {
            format_version: 1,
            threshold: self.threshold,
            models: self.models.iter().map(|m| m.kind).collect(),
            config_hash: self.config_hash(),
            provenance: provenance.clone(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let vocab = OpcodeVocabulary::load(&dir.join("vocab.json"))?;
        let models = manifest
            .models
            .iter()
            .map(|&kind| {
                let (config, params) = load_checkpoint(&dir.join(format!("{kind}.ckpt")))?;
                Ok(DetectorModel { kind, config, params })
            })
            .collect::<Result<Vec<_>>>()?;
        let det = EnsembleDetector::new(vocab, models, manifest.threshold)?;
        if det.config_hash() != manifest.config_hash {
            return Err(Error::Checkpoint(format!(
                "{}: config hash does not match the stored models",
                path.display()
            )));
        }
        Ok(det)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub threshold: f64,
    pub models: Vec<ModelKind>,
    pub config_hash: String,
    pub provenance: BTreeMap<String, String>,
}

/// Grid value with the best F1 on `scores`; the smallest such value on ties.
pub fn select_threshold(scores: &[(f64, i8)], grid: &[f64]) -> Result<f64> {
    let pos = scores.iter().filter(|s| s.1 > 0).count();
    if pos == 0 || pos == scores.len() {
        return Err(Error::DegenerateLabels);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for t in sorted {
        let f1 = crate::eval::confusion(scores, t).f1();
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((t, f1));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::InvalidConfig("empty threshold grid".into()))
}
