//! Corpus directories and the train/evaluate pipeline built on top of them.
//!
//! A corpus directory holds `noinline/<binary>.jsonl` and
//! `inline/<binary>.jsonl` graph files next to the labeling tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acfg::{build_vocabulary, read_jsonl, AttributedCfg, OpcodeVocabulary};
use crate::detector::{select_threshold, DetectorModel, EnsembleDetector, ModelKind};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::gnn::{train_model, EpochRecord, GraphPair, ModelConfig, PreparedGraph};
use crate::labeling::{BinFuncRef, BridgeIndex, Pattern, DATASET_INLINE, DATASET_NOINLINE};
use crate::pairgen::{generate_balanced_pairs, FunctionPair, SplitSpec};
use crate::synth::SynthCorpus;

/// Every binary function of a corpus, addressable by reference or position.
#[derive(Clone, Debug, Default)]
pub struct GraphTable {
    refs: Vec<BinFuncRef>,
    graphs: Vec<AttributedCfg>,
    index: BTreeMap<BinFuncRef, usize>,
}

impl GraphTable {
    pub fn new(entries: impl IntoIterator<Item = (BinFuncRef, AttributedCfg)>) -> Result<Self> {
        let mut table = GraphTable::default();
        for (r, g) in entries {
            if table.index.insert(r.clone(), table.refs.len()).is_some() {
                return Err(Error::InconsistentTables(format!("duplicate binary function {r:?}")));
            }
            table.refs.push(r);
            table.graphs.push(g);
        }
        Ok(table)
    }

    pub fn from_corpus(corpus: &SynthCorpus) -> Self {
        GraphTable::new(
            corpus
                .no_inline
                .iter()
                .chain(&corpus.inline)
                .map(|g| (g.reference.clone(), g.cfg.clone())),
        )
        .expect("generated references are unique")
    }

    /// Reads every `<dataset>/<binary>.jsonl` under `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for dataset in [DATASET_NOINLINE, DATASET_INLINE] {
            let sub = dir.join(dataset);
            let listing = std::fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))?;
            let mut files: Vec<_> = listing
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            for path in files {
                let binary = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::InvalidConfig(format!("bad graph file name {}", path.display())))?
                    .to_string();
                for g in read_jsonl(&path)? {
                    entries.push((BinFuncRef::new(dataset, &binary, g.function_name()), g));
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        GraphTable::new(entries)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn refs(&self) -> &[BinFuncRef] {
        &self.refs
    }

    pub fn graphs(&self) -> &[AttributedCfg] {
        &self.graphs
    }

    pub fn lookup(&self, r: &BinFuncRef) -> Option<usize> {
        self.index.get(r).copied()
    }

    pub fn get(&self, r: &BinFuncRef) -> Option<&AttributedCfg> {
        self.lookup(r).map(|i| &self.graphs[i])
    }

    /// Project ids appearing in the table, sorted.
    pub fn projects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.refs.iter().map(|r| r.project()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn prepare(&self, vocab: &OpcodeVocabulary) -> Vec<PreparedGraph> {
        use rayon::prelude::*;
        self.graphs.par_iter().map(|g| PreparedGraph::new(g, vocab)).collect()
    }

    pub fn resolve(&self, pairs: &[FunctionPair]) -> Result<Vec<GraphPair>> {
        pairs
            .iter()
            .map(|p| {
                let find = |r: &BinFuncRef| {
                    self.lookup(r).ok_or_else(|| {
                        Error::InconsistentTables(format!(
                            "pair references {}/{}/{} which has no graph",
                            r.dataset, r.binary, r.function
                        ))
                    })
                };
                Ok(GraphPair {
                    query: find(&p.query)?,
                    target: find(&p.target)?,
                    label: p.label,
                })
            })
            .collect()
    }

    /// Vocabulary over the graphs of `projects` only.
    pub fn vocabulary(&self, projects: &BTreeSet<String>, max_size: usize) -> Result<OpcodeVocabulary> {
        build_vocabulary(
            self.refs
                .iter()
                .zip(&self.graphs)
                .filter(|(r, _)| projects.contains(r.project()))
                .map(|(_, g)| g),
            max_size,
        )
    }
}

/// Which models a detector holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Leaf, root and internal models combined by maximum similarity.
    Ensemble,
    /// One model trained on all patterns.
    Mixed,
    /// One model for a single pattern.
    Single(Pattern),
}

impl Variant {
    pub fn kinds(self) -> Vec<ModelKind> {
        match self {
            Variant::Ensemble => ModelKind::PATTERNS.to_vec(),
            Variant::Mixed => vec![ModelKind::Mixed],
            Variant::Single(Pattern::Leaf) => vec![ModelKind::Leaf],
            Variant::Single(Pattern::Root) => vec![ModelKind::Root],
            Variant::Single(Pattern::Internal) => vec![ModelKind::Internal],
            Variant::Single(Pattern::Equal) => vec![],
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "ensemble" => Ok(Variant::Ensemble),
            "mixed" => Ok(Variant::Mixed),
            other => match other.parse::<Pattern>()? {
                Pattern::Equal => Err(Error::InvalidConfig("no model is trained on equal pairs".into())),
                p => Ok(Variant::Single(p)),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Positives (and as many negatives) per epoch.
    pub epoch_size: usize,
    pub validation_per_label: usize,
    /// Training-project pairs per label used to pick the threshold.
    pub threshold_per_label: usize,
    pub grid: Vec<f64>,
    pub vocab_max: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            model: ModelConfig::default(),
            epochs: 30,
            epoch_size: 2000,
            validation_per_label: 200,
            threshold_per_label: 500,
            grid: crate::eval::GridPreset::Extended.values(),
            vocab_max: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDetector {
    pub detector: EnsembleDetector,
    pub histories: BTreeMap<ModelKind, Vec<EpochRecord>>,
    pub best_epochs: BTreeMap<ModelKind, Option<usize>>,
}

/// Trains every model of `variant` on the training projects of `split`,
/// validating on its validation projects, then picks the threshold on
/// training pairs of all three patterns.
pub fn train_detector(
    table: &GraphTable,
    index: &BridgeIndex,
    split: &SplitSpec,
    variant: Variant,
    options: &TrainOptions,
) -> Result<TrainedDetector> {
    let kinds = variant.kinds();
    if kinds.is_empty() {
        return Err(Error::InvalidConfig("variant selects no model".into()));
    }
    let train_index = index.restrict_to_projects(&split.train);
    let val_index = index.restrict_to_projects(&split.validation);
    let vocab = table.vocabulary(&split.train, options.vocab_max)?;
    let prepared = table.prepare(&vocab);

    let mut models = Vec::with_capacity(kinds.len());
    let mut histories = BTreeMap::new();
    let mut best_epochs = BTreeMap::new();
    for kind in kinds {
        let patterns = kind.patterns();
        let seed = kind.model_seed(options.seed);
        let config = ModelConfig {
            seed,
            ..options.model.clone().with_vocabulary(&vocab)
        };
        let source = |epoch: usize, per_label: usize| {
            let pairs = generate_balanced_pairs(&train_index, &patterns, per_label, seed.wrapping_add(epoch as u64))?;
            table.resolve(&pairs)
        };
        let validation = table.resolve(&generate_balanced_pairs(
            &val_index,
            &patterns,
            options.validation_per_label,
            seed ^ 0x7a11_da7e,
        )?)?;
        log::info!("training {kind} model");
        let outcome = train_model(&prepared, &source, &validation, &config, options.epochs, options.epoch_size)?;
        histories.insert(kind, outcome.history);
        best_epochs.insert(kind, outcome.best_epoch);
        models.push(DetectorModel {
            kind,
            config,
            params: outcome.params,
        });
    }

    let provisional = EnsembleDetector::new(vocab, models, 1.0)?;
    let pairs = generate_balanced_pairs(
        &train_index,
        &Pattern::CROSS_INLINING,
        options.threshold_per_label,
        options.seed ^ 0x7e5e_0001,
    )?;
    let resolved = table.resolve(&pairs)?;
    let finals = provisional.score(&resolved, &prepared)?;
    let scored: Vec<(f64, i8)> = finals.into_iter().zip(resolved.iter().map(|p| p.label)).collect();
    let threshold = select_threshold(&scored, &options.grid)?;
    Ok(TrainedDetector {
        detector: provisional.with_threshold(threshold)?,
        histories,
        best_epochs,
    })
}

/// Final similarity and label of every pair.
pub fn score_function_pairs(
    detector: &EnsembleDetector,
    table: &GraphTable,
    pairs: &[FunctionPair],
) -> Result<Vec<(f64, i8)>> {
    let resolved = table.resolve(pairs)?;
    // Only the graphs the pairs touch are featurized.
    let mut used: Vec<usize> = resolved.iter().flat_map(|p| [p.query, p.target]).collect();
    used.sort_unstable();
    used.dedup();
    let position: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let prepared: Vec<PreparedGraph> = used.iter().map(|&g| detector.prepare(&table.graphs()[g])).collect();
    let local: Vec<GraphPair> = resolved
        .iter()
        .map(|p| GraphPair {
            query: position[&p.query],
            target: position[&p.target],
            label: p.label,
        })
        .collect();
    let finals = detector.score(&local, &prepared)?;
    Ok(finals.into_iter().zip(local.iter().map(|p| p.label)).collect())
}

/// One report per pattern present in `pairs` (in leaf, root, internal,
/// equal order) followed by an `overall` report, all at the detector's
/// threshold.
pub fn evaluate_pairs(
    detector: &EnsembleDetector,
    table: &GraphTable,
    pairs: &[FunctionPair],
) -> Result<Vec<EvalReport>> {
    let scores = score_function_pairs(detector, table, pairs)?;
    evaluate_scores(pairs, &scores, detector.threshold())
}

/// Per-pattern reports from precomputed `(score, label)` values aligned with `pairs`.
pub fn evaluate_scores(pairs: &[FunctionPair], scores: &[(f64, i8)], threshold: f64) -> Result<Vec<EvalReport>> {
    if pairs.len() != scores.len() {
        return Err(Error::ShapeMismatch {
            expected: pairs.len(),
            actual: scores.len(),
        });
    }
    let mut reports = Vec::new();
    for pattern in [Pattern::Leaf, Pattern::Root, Pattern::Internal, Pattern::Equal] {
        let subset: Vec<(f64, i8)> = pairs
            .iter()
            .zip(scores)
            .filter(|(p, _)| p.pattern == pattern)
            .map(|(_, s)| *s)
            .collect();
        if !subset.is_empty() {
            reports.push(EvalReport::compute(pattern.as_str(), &subset, threshold)?);
        }
    }
    if reports.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    reports.push(EvalReport::compute("overall", scores, threshold)?);
    Ok(reports)
}

/// Balanced test pairs for each cross-inlining pattern over `projects`.
pub fn test_pairs(
    index: &BridgeIndex,
    projects: &BTreeSet<String>,
    per_label: usize,
    seed: u64,
) -> Result<Vec<FunctionPair>> {
    let restricted = index.restrict_to_projects(projects);
    let mut out = Vec::new();
    for (i, p) in Pattern::CROSS_INLINING.into_iter().enumerate() {
        out.extend(generate_balanced_pairs(&restricted, &[p], per_label, seed.wrapping_add(i as u64 * 1000))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairgen::split_projects;
    use crate::synth::{generate, SynthConfig};

    fn small_corpus() -> SynthCorpus {
        generate(&SynthConfig {
            n_projects: 4,
            functions_per_project: 20,
            call_density: 0.2,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn table_round_trips_through_a_directory() {
        let corpus = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        corpus.write_dir(dir.path()).unwrap();
        let loaded = GraphTable::load(dir.path()).unwrap();
        let direct = GraphTable::from_corpus(&corpus);
        assert_eq!(loaded.len(), direct.len());
        for (r, g) in direct.refs().iter().zip(direct.graphs()) {
            assert_eq!(loaded.get(r), Some(g));
        }
    }

    #[test]
    fn unknown_reference_is_rejected() {
        let table = GraphTable::from_corpus(&small_corpus());
        let ghost = BinFuncRef::new(DATASET_INLINE, "nowhere", "f");
        let pair = FunctionPair {
            query: ghost.clone(),
            target: ghost,
            label: 1,
            pattern: Pattern::Leaf,
            bridge: None,
        };
        assert!(matches!(table.resolve(&[pair]), Err(Error::InconsistentTables(_))));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("all".parse::<Variant>().unwrap(), Variant::Ensemble);
        assert_eq!("mixed".parse::<Variant>().unwrap(), Variant::Mixed);
        assert_eq!("root".parse::<Variant>().unwrap(), Variant::Single(Pattern::Root));
        assert!("equal".parse::<Variant>().is_err());
    }

    #[test]
    fn tiny_training_run_produces_a_detector() {
        let corpus = small_corpus();
        let table = GraphTable::from_corpus(&corpus);
        let split = split_projects(&corpus.projects, (0.5, 0.25, 0.25), 1).unwrap();
        let options = TrainOptions {
            model: ModelConfig {
                node_state_dim: 4,
                graph_embedding_dim: 4,
                propagation_layers: 1,
                update_hidden: vec![],
                ..ModelConfig::default()
            },
            epochs: 1,
            epoch_size: 8,
            validation_per_label: 4,
            threshold_per_label: 8,
            ..TrainOptions::default()
        };
        let trained = train_detector(&table, &corpus.ground_truth, &split, Variant::Ensemble, &options).unwrap();
        assert_eq!(trained.detector.models().len(), 3);
        assert!(options.grid.contains(&trained.detector.threshold()));
        let pairs = test_pairs(&corpus.ground_truth, &split.test, 5, 9).unwrap();
        let reports = evaluate_pairs(&trained.detector, &table, &pairs).unwrap();
        assert_eq!(reports.len(), 4);
        assert_eq!(reports[3].pattern, "overall");
    }
}
