//! Labeled pair sampling from a [`BridgeIndex`] and project-level splits.
//!
//! A positive pair joins an equal function of bridge `b` (query) with a
//! cross-inlining function of the same bridge (target). A negative pair joins
//! an equal function of `b` with an inlined function that does not appear
//! among `b`'s cross-inlining values.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{BinFuncRef, BridgeEntry, BridgeIndex, Pattern, SourceFnId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionPair {
    #[serde(rename = "query_ref")]
    pub query: BinFuncRef,
    #[serde(rename = "target_ref")]
    pub target: BinFuncRef,
    pub label: i8,
    pub pattern: Pattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<SourceFnId>,
}

impl FunctionPair {
    pub fn is_positive(&self) -> bool {
        self.label > 0
    }
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_patterns(patterns: &[Pattern]) -> Result<()> {
    if patterns.is_empty() || patterns.contains(&Pattern::Equal) {
        return Err(Error::InvalidConfig(
            "pairs are drawn for leaf, root or internal patterns only".into(),
        ));
    }
    Ok(())
}

/// Every `(bridge, cross entry)` whose pattern is in `patterns`.
fn cross_universe<'a>(
    index: &'a BridgeIndex,
    patterns: &[Pattern],
) -> Vec<(&'a SourceFnId, &'a BridgeEntry, usize)> {
    index
        .bridges
        .iter()
        .flat_map(|(id, entry)| {
            entry
                .cross_inlining
                .iter()
                .enumerate()
                .filter(|(_, c)| patterns.contains(&c.pattern))
                .map(move |(i, _)| (id, entry, i))
        })
        .collect()
}

/// `n` positive pairs whose pattern is one of `patterns`.
///
/// Draws without replacement while the pair universe allows it, and cycles
/// through reshuffled copies of the universe otherwise.
pub fn generate_positive_pairs(
    index: &BridgeIndex,
    patterns: &[Pattern],
    n: usize,
    seed: u64,
) -> Result<Vec<FunctionPair>> {
    check_patterns(patterns)?;
    let mut universe = Vec::new();
    for (id, entry, i) in cross_universe(index, patterns) {
        for q in &entry.equal {
            universe.push((id, q, &entry.cross_inlining[i]));
        }
    }
    if universe.is_empty() {
        return Err(Error::Exhausted(patterns[0]));
    }
    let mut rng = rng(seed);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    while order.len() < n {
        let want = n - order.len();
        if want >= universe.len() {
            let mut all: Vec<usize> = (0..universe.len()).collect();
            all.shuffle(&mut rng);
            order.extend(all);
        } else {
            order.extend(rand::seq::index::sample(&mut rng, universe.len(), want));
        }
    }
    Ok(order
        .into_iter()
        .map(|i| {
            let (bridge, query, cross) = universe[i];
            FunctionPair {
                query: query.clone(),
                target: cross.target.clone(),
                label: 1,
                pattern: cross.pattern,
                bridge: Some(bridge.clone()),
            }
        })
        .collect())
}

/// `n` negative pairs, each tagged with the pattern whose target pool supplied it.
///
/// The query side is drawn like a positive one (a bridge of the requested
/// patterns); the target is any inlined function seen with the same pattern
/// anywhere in the index and not listed under the query's bridge.
pub fn generate_negative_pairs(
    index: &BridgeIndex,
    patterns: &[Pattern],
    n: usize,
    seed: u64,
) -> Result<Vec<FunctionPair>> {
    check_patterns(patterns)?;
    let exhausted = || Error::Exhausted(patterns[0]);
    if index.bridges.len() < 2 {
        return Err(exhausted());
    }
    let mut pools: BTreeMap<Pattern, Vec<&BinFuncRef>> = BTreeMap::new();
    for entry in index.bridges.values() {
        for c in &entry.cross_inlining {
            pools.entry(c.pattern).or_default().push(&c.target);
        }
    }
    for pool in pools.values_mut() {
        pool.sort();
        pool.dedup();
    }
    let own: BTreeMap<&SourceFnId, BTreeSet<&BinFuncRef>> = index
        .bridges
        .iter()
        .map(|(id, e)| (id, e.cross_inlining.iter().map(|c| &c.target).collect()))
        .collect();

    let universe: Vec<_> = cross_universe(index, patterns)
        .into_iter()
        .filter(|(id, entry, i)| {
            let pool = &pools[&entry.cross_inlining[*i].pattern];
            pool.iter().any(|t| !own[id].contains(t))
        })
        .collect();
    if universe.is_empty() {
        return Err(exhausted());
    }

    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (id, entry, i) = universe[rng.gen_range(0..universe.len())];
        let pattern = entry.cross_inlining[i].pattern;
        let query = entry.equal[rng.gen_range(0..entry.equal.len())].clone();
        let pool = &pools[&pattern];
        let target = loop {
            let t = pool[rng.gen_range(0..pool.len())];
            if !own[id].contains(t) {
                break t.clone();
            }
        };
        out.push(FunctionPair {
            query,
            target,
            label: -1,
            pattern,
            bridge: None,
        });
    }
    Ok(out)
}

/// Equal numbers of positives and negatives, interleaved in a seeded shuffle.
pub fn generate_balanced_pairs(
    index: &BridgeIndex,
    patterns: &[Pattern],
    per_label: usize,
    seed: u64,
) -> Result<Vec<FunctionPair>> {
    let mut pairs = generate_positive_pairs(index, patterns, per_label, seed)?;
    pairs.extend(generate_negative_pairs(
        index,
        patterns,
        per_label,
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )?);
    pairs.shuffle(&mut rng(seed.wrapping_add(1)));
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded project-level split.
///
/// Validation and test sizes are `floor(n * fraction)`, raised to one when
/// their fraction is positive; the remainder goes to training.
pub fn split_projects(
    project_ids: &[String],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let (f_train, f_val, f_test) = fractions;
    if [f_train, f_val, f_test].iter().any(|f| !(0.0..=1.0).contains(f))
        || (f_train + f_val + f_test - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidFractions(f_train, f_val, f_test));
    }
    let mut ids: Vec<String> = project_ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n < 3 {
        return Err(Error::TooFewProjects(n));
    }
    ids.shuffle(&mut rng(seed));
    let alloc = |f: f64| {
        let k = (n as f64 * f + 1e-9).floor() as usize;
        if f > 0.0 {
            k.max(1)
        } else {
            k
        }
    };
    let n_val = alloc(f_val);
    let n_test = alloc(f_test);
    let n_train = n - n_val - n_test;
    let mut it = ids.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let validation = it.by_ref().take(n_val).collect();
    let test = it.collect();
    Ok(SplitSpec {
        train,
        validation,
        test,
    })
}

pub fn write_pairs(path: &Path, pairs: &[FunctionPair]) -> Result<()> {
    let mut buf = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut buf, p).expect("pairs serialize");
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<FunctionPair>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: FunctionPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if pair.label != 1 && pair.label != -1 {
            return Err(Error::InvalidLabel(pair.label));
        }
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::CrossEntry;

    fn r(ds: &str, f: &str) -> BinFuncRef {
        BinFuncRef::new(ds, "p", f)
    }

    fn figure3_index() -> BridgeIndex {
        let mut index = BridgeIndex::default();
        index.bridges.insert(
            "do_free_upto".into(),
            BridgeEntry {
                equal: vec![r("noinline", "do_free_upto")],
                cross_inlining: vec![CrossEntry { target: r("inline", "CMS_decrypt"), pattern: Pattern::Leaf }],
            },
        );
        index
    }

    #[test]
    fn figure3_positive() {
        let pairs = generate_positive_pairs(&figure3_index(), &[Pattern::Leaf], 1, 0).unwrap();
        assert_eq!(
            pairs,
            vec![FunctionPair {
                query: r("noinline", "do_free_upto"),
                target: r("inline", "CMS_decrypt"),
                label: 1,
                pattern: Pattern::Leaf,
                bridge: Some("do_free_upto".into()),
            }]
        );
    }

    #[test]
    fn missing_pattern_is_exhausted() {
        let err = generate_positive_pairs(&figure3_index(), &[Pattern::Root], 3, 0).unwrap_err();
        assert!(matches!(err, Error::Exhausted(Pattern::Root)));
        assert!(generate_positive_pairs(&figure3_index(), &[Pattern::Equal], 1, 0).is_err());
    }

    #[test]
    fn small_universe_is_resampled() {
        let pairs = generate_positive_pairs(&figure3_index(), &[Pattern::Leaf], 5, 3).unwrap();
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p == &pairs[0]));
    }

    #[test]
    fn disjoint_bridges_give_negatives() {
        let mut index = BridgeIndex::default();
        for (b, t) in [("b1", "t1"), ("b2", "t2")] {
            index.bridges.insert(
                b.into(),
                BridgeEntry {
                    equal: vec![r("noinline", b)],
                    cross_inlining: vec![CrossEntry { target: r("inline", t), pattern: Pattern::Leaf }],
                },
            );
        }
        let pairs = generate_negative_pairs(&index, &[Pattern::Leaf], 20, 1).unwrap();
        for p in &pairs {
            assert_eq!(p.label, -1);
            let expected = if p.query.function == "b1" { "t2" } else { "t1" };
            assert_eq!(p.target.function, expected);
        }
    }

    #[test]
    fn single_bridge_negatives_are_exhausted() {
        let err = generate_negative_pairs(&figure3_index(), &[Pattern::Leaf], 1, 0).unwrap_err();
        assert!(matches!(err, Error::Exhausted(_)));
    }

    #[test]
    fn split_sizes() {
        let ids = |n: usize| (0..n).map(|i| format!("p{i}")).collect::<Vec<_>>();
        let sizes = |s: &SplitSpec| (s.train.len(), s.validation.len(), s.test.len());
        assert_eq!(sizes(&split_projects(&ids(10), DEFAULT_FRACTIONS, 0).unwrap()), (8, 1, 1));
        assert_eq!(sizes(&split_projects(&ids(3), DEFAULT_FRACTIONS, 0).unwrap()), (1, 1, 1));
        assert_eq!(sizes(&split_projects(&ids(51), DEFAULT_FRACTIONS, 0).unwrap()), (41, 5, 5));
        assert!(matches!(split_projects(&ids(2), DEFAULT_FRACTIONS, 0), Err(Error::TooFewProjects(2))));
        assert!(split_projects(&ids(10), (0.5, 0.1, 0.1), 0).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let ids: Vec<String> = (0..20).map(|i| format!("p{i}")).collect();
        let a = split_projects(&ids, DEFAULT_FRACTIONS, 5).unwrap();
        assert_eq!(a, split_projects(&ids, DEFAULT_FRACTIONS, 5).unwrap());
        let mut all: BTreeSet<String> = a.train.clone();
        all.extend(a.validation.iter().cloned());
        all.extend(a.test.iter().cloned());
        assert_eq!(all.len(), 20);
        assert!(a.train.is_disjoint(&a.test) && a.train.is_disjoint(&a.validation));
    }

    #[test]
    fn pairs_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = generate_positive_pairs(&figure3_index(), &[Pattern::Leaf], 2, 0).unwrap();
        write_pairs(&path, &pairs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"query_ref":["noinline","p","do_free_upto"],"target_ref":["inline","p","CMS_decrypt"],"label":1,"pattern":"leaf","bridge":"do_free_upto"}"#));
        assert_eq!(read_pairs(&path).unwrap(), pairs);
    }
}
