//! Subcommands of the `cidetect` binary, callable as plain functions.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use cidetect::acfg::{read_jsonl, AttributedCfg};
use cidetect::dataset::{evaluate_scores, score_function_pairs, train_detector, GraphTable, TrainOptions, Variant};
use cidetect::detector::{EnsembleDetector, Verdict};
use cidetect::eval::{format_table, roc_data_file, roc_points, threshold_sweep, EvalReport, GridPreset};
use cidetect::labeling::{pattern_distribution, BridgeIndex, LabelingTables, Pattern, PatternCounts};
use cidetect::pairgen::{generate_balanced_pairs, read_pairs, split_projects, write_pairs, SplitSpec, DEFAULT_FRACTIONS};
use cidetect::synth::{generate, SynthConfig};

pub use config::RunConfig;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Generates a synthetic corpus into `out`.
pub fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<cidetect::synth::SynthCorpus> {
    create_dir(out)?;
    let corpus = generate(config)?;
    corpus.write_dir(out)?;
    Ok(corpus)
}

/// Text table of pattern counts.
pub fn format_counts(counts: &PatternCounts) -> String {
    let mut out = format!("{:<10} {:>8}\n", "Pattern", "Pairs");
    for p in [Pattern::Equal, Pattern::Leaf, Pattern::Root, Pattern::Internal] {
        out += &format!("{:<10} {:>8}\n", p.as_str(), counts.get(p));
    }
    out
}

#[derive(Debug)]
pub struct LabelResult {
    pub index: BridgeIndex,
    pub counts: PatternCounts,
    pub issues: usize,
}

/// Labels the debug tables under `tables`; writes `bridge_index.json` and
/// `patterns.txt` into `out` when given.
pub fn cmd_label(tables: &Path, out: Option<&Path>) -> Result<LabelResult> {
    let tables = LabelingTables::read_dir(tables)?;
    if tables.srcfuncs.is_empty() {
        return Err(cidetect::Error::EmptyCorpus.into());
    }
    let outcome = tables.label();
    for issue in &outcome.issues {
        log::warn!("{issue}");
    }
    let counts = pattern_distribution(&outcome.index);
    if let Some(out) = out {
        create_dir(out)?;
        outcome.index.save(&out.join("bridge_index.json"))?;
        fs::write(out.join("patterns.txt"), format_counts(&counts))?;
    }
    Ok(LabelResult {
        index: outcome.index,
        counts,
        issues: outcome.issues.len(),
    })
}

/// The bridge index of a corpus: `bridge_index.json` if present, otherwise
/// labeled from the corpus's tables.
pub fn load_index(corpus: &Path) -> Result<BridgeIndex> {
    let stored = corpus.join("bridge_index.json");
    if stored.exists() {
        return Ok(BridgeIndex::load(&stored)?);
    }
    Ok(LabelingTables::read_dir(corpus)?.label().index)
}

pub fn corpus_split(index: &BridgeIndex, seed: u64) -> Result<SplitSpec> {
    let projects: Vec<String> = index.projects().into_iter().collect();
    Ok(split_projects(&projects, DEFAULT_FRACTIONS, seed)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => SplitPart::Train,
            "validation" => SplitPart::Validation,
            "test" => SplitPart::Test,
            other => bail!("unknown split `{other}`"),
        })
    }
}

fn split_part(split: &SplitSpec, part: SplitPart) -> &BTreeSet<String> {
    match part {
        SplitPart::Train => &split.train,
        SplitPart::Validation => &split.validation,
        SplitPart::Test => &split.test,
    }
}

fn variant_patterns(variant: Variant) -> Vec<Pattern> {
    match variant {
        Variant::Single(p) => vec![p],
        Variant::Ensemble | Variant::Mixed => Pattern::CROSS_INLINING.to_vec(),
    }
}

/// Balanced pairs from one part of the corpus split. For `all` and `mixed`
/// every pattern contributes `per_label` positives and as many negatives.
pub fn cmd_pairs(
    corpus: &Path,
    variant: Variant,
    part: SplitPart,
    per_label: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<cidetect::pairgen::FunctionPair>> {
    let index = load_index(corpus)?;
    let split = corpus_split(&index, seed)?;
    let restricted = index.restrict_to_projects(split_part(&split, part));
    let mut pairs = Vec::new();
    for (i, p) in variant_patterns(variant).into_iter().enumerate() {
        pairs.extend(generate_balanced_pairs(&restricted, &[p], per_label, seed.wrapping_add(1000 * i as u64))?);
    }
    if let Some(out) = out {
        write_pairs(out, &pairs)?;
    }
    Ok(pairs)
}

/// Trains a detector bundle into `out`, with `history.json` and `split.json`.
pub fn cmd_train(corpus: &Path, variant: Variant, options: &TrainOptions, out: &Path) -> Result<EnsembleDetector> {
    let table = GraphTable::load(corpus)?;
    let index = load_index(corpus)?;
    let split = corpus_split(&index, options.seed)?;
    let trained = train_detector(&table, &index, &split, variant, options)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("seed".to_string(), options.seed.to_string());
    provenance.insert("variant".to_string(), format!("{variant:?}").to_lowercase());
    provenance.insert("epochs".to_string(), options.epochs.to_string());
    provenance.insert("epoch_size".to_string(), options.epoch_size.to_string());
    provenance.insert("train_projects".to_string(), split.train.iter().cloned().collect::<Vec<_>>().join(","));
    trained.detector.save(out, &provenance)?;
    let history: BTreeMap<String, _> = trained
        .histories
        .iter()
        .map(|(k, h)| {
            (
                k.to_string(),
                serde_json::json!({ "best_epoch": trained.best_epochs[k], "epochs": h }),
            )
        })
        .collect();
    write_json(&out.join("history.json"), &history)?;
    write_json(&out.join("split.json"), &split)?;
    Ok(trained.detector)
}

/// Picks the function named `name` from a JSONL file, or its only graph.
pub fn pick_graph(path: &Path, name: Option<&str>) -> Result<AttributedCfg> {
    let graphs = read_jsonl(path)?;
    match name {
        Some(n) => graphs
            .into_iter()
            .find(|g| g.function_name() == n)
            .with_context(|| format!("no function `{n}` in {}", path.display())),
        None if graphs.len() == 1 => Ok(graphs.into_iter().next().expect("one graph")),
        None => bail!(
            "{} holds {} functions; choose one by name",
            path.display(),
            graphs.len()
        ),
    }
}

pub fn cmd_detect(
    bundle: &Path,
    query: &Path,
    query_name: Option<&str>,
    target: &Path,
    target_name: Option<&str>,
) -> Result<Verdict> {
    let detector = EnsembleDetector::load(bundle)?;
    let q = pick_graph(query, query_name)?;
    let t = pick_graph(target, target_name)?;
    Ok(detector.detect(&q, &t)?)
}

#[derive(Debug)]
pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub table: String,
}

fn scored_pairs(bundle: &Path, corpus: &Path, pairs: &Path) -> Result<(EnsembleDetector, Vec<cidetect::pairgen::FunctionPair>, Vec<(f64, i8)>)> {
    let detector = EnsembleDetector::load(bundle)?;
    let table = GraphTable::load(corpus)?;
    let pairs = read_pairs(pairs)?;
    if pairs.is_empty() {
        bail!("pair file is empty");
    }
    let scores = score_function_pairs(&detector, &table, &pairs)?;
    Ok((detector, pairs, scores))
}

/// Per-pattern reports at the bundle's threshold. Writes `reports.json`,
/// `report.txt`, `sweep.csv` (over `grid`, all pairs) and `roc.dat` into
/// `out` when given.
pub fn cmd_eval(bundle: &Path, corpus: &Path, pairs: &Path, grid: GridPreset, out: Option<&Path>) -> Result<EvalOutput> {
    let (detector, pairs, scores) = scored_pairs(bundle, corpus, pairs)?;
    let reports = evaluate_scores(&pairs, &scores, detector.threshold())?;
    let table = format_table(&reports);
    if let Some(out) = out {
        create_dir(out)?;
        write_json(&out.join("reports.json"), &reports)?;
        fs::write(out.join("report.txt"), &table)?;
        fs::write(out.join("sweep.csv"), threshold_sweep("overall", &scores, &grid.values())?.to_csv())?;
        fs::write(out.join("roc.dat"), roc_data_file(&roc_points(&scores)?))?;
    }
    Ok(EvalOutput { reports, table })
}

/// Threshold sweep CSV with one block per pattern followed by `overall`.
pub fn cmd_sweep(bundle: &Path, corpus: &Path, pairs: &Path, grid: GridPreset, out: Option<&Path>) -> Result<String> {
    let (_, pairs, scores) = scored_pairs(bundle, corpus, pairs)?;
    let grid = grid.values();
    let mut csv = String::new();
    let mut groups: Vec<(String, Vec<(f64, i8)>)> = Vec::new();
    for p in Pattern::CROSS_INLINING {
        let subset: Vec<_> = pairs.iter().zip(&scores).filter(|(q, _)| q.pattern == p).map(|(_, s)| *s).collect();
        if !subset.is_empty() {
            groups.push((p.as_str().to_string(), subset));
        }
    }
    groups.push(("overall".to_string(), scores));
    for (i, (name, s)) in groups.iter().enumerate() {
        let block = threshold_sweep(name, s, &grid)?.to_csv();
        // keep a single header line
        csv += if i == 0 { &block } else { block.split_once('\n').map_or("", |x| x.1) };
    }
    if let Some(out) = out {
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(csv)
}

/// Exit code for an error: 2 for invalid input or configuration, 3 for
/// runtime and numeric failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<cidetect::Error>() {
        Some(e) if !e.is_validation() => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 2,
    }
}
