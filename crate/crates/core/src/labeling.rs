//! Ground-truth labeling from debug-line tables.
//!
//! Every binary function is mapped to the set of source functions whose lines
//! its instructions come from. A binary function mapping to more than one
//! source function contains inlined code. A source function that is mapped
//! alone by some function of the no-inlining build, and together with others
//! by some function of the inlining build, is a *bridge*: it links the two
//! into a cross-inlining pair. The pair's pattern is the bridge's position in
//! the call graph restricted to the target's mapped set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SourceFnId = String;

pub const DATASET_NOINLINE: &str = "noinline";
pub const DATASET_INLINE: &str = "inline";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceFunction {
    pub file: String,
    pub name: String,
    pub line_start: u32,
    pub line_end: u32,
}

impl SourceFunction {
    pub fn id(&self) -> SourceFnId {
        source_id(&self.file, &self.name)
    }
}

pub fn source_id(file: &str, name: &str) -> SourceFnId {
    format!("{file}:{name}")
}

/// `(dataset_id, binary_id, func_id)`; serialized as a three-element array.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct BinFuncRef {
    pub dataset: String,
    pub binary: String,
    pub function: String,
}

impl BinFuncRef {
    pub fn new(dataset: &str, binary: &str, function: &str) -> Self {
        BinFuncRef {
            dataset: dataset.into(),
            binary: binary.into(),
            function: function.into(),
        }
    }

    /// Project a binary belongs to: the `binary_id` up to its first `/`.
    pub fn project(&self) -> &str {
        self.binary.split('/').next().unwrap_or(&self.binary)
    }
}

impl From<(String, String, String)> for BinFuncRef {
    fn from((dataset, binary, function): (String, String, String)) -> Self {
        BinFuncRef {
            dataset,
            binary,
            function,
        }
    }
}

impl From<BinFuncRef> for (String, String, String) {
    fn from(r: BinFuncRef) -> Self {
        (r.dataset, r.binary, r.function)
    }
}

impl fmt::Display for BinFuncRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.dataset, self.binary, self.function)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinaryFunction {
    pub binary_id: String,
    pub name: String,
    /// Inclusive.
    pub addr_start: u64,
    /// Exclusive.
    pub addr_end: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binary2SourceMapping {
    pub function: BinaryFunction,
    pub source_functions: BTreeSet<SourceFnId>,
}

impl Binary2SourceMapping {
    pub fn to_ref(&self, dataset: &str) -> BinFuncRef {
        BinFuncRef::new(dataset, &self.function.binary_id, &self.function.name)
    }
}

pub fn has_inlining(mapping: &Binary2SourceMapping) -> bool {
    mapping.source_functions.len() > 1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddrLine {
    pub binary_id: String,
    pub address: u64,
    pub file: String,
    pub line: u32,
}

/// Problem with one table row; the row is skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TableIssue {
    AddressOutsideFunctions { binary_id: String, address: u64 },
    LineOutsideFunctions { file: String, line: u32 },
    FunctionWithoutLines { binary_id: String, name: String },
}

impl fmt::Display for TableIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableIssue::AddressOutsideFunctions { binary_id, address } => {
                write!(f, "{binary_id}: address {address:#x} is outside every binary function")
            }
            TableIssue::LineOutsideFunctions { file, line } => {
                write!(f, "{file}:{line} is outside every source function")
            }
            TableIssue::FunctionWithoutLines { binary_id, name } => {
                write!(f, "{binary_id}: function {name} has no line information")
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MappingOutcome {
    pub mappings: Vec<Binary2SourceMapping>,
    pub issues: Vec<TableIssue>,
}

/// Joins the address-to-line, address-to-function and line-to-function tables.
///
/// Rows that cannot be resolved are reported in `issues` and skipped.
/// Mappings come out sorted by `(binary_id, addr_start)`.
pub fn construct_mapping(
    addr_to_line: &[AddrLine],
    addr_to_binfunc: &[BinaryFunction],
    line_to_srcfunc: &[SourceFunction],
) -> MappingOutcome {
    let mut funcs: BTreeMap<&str, Vec<&BinaryFunction>> = BTreeMap::new();
    for bf in addr_to_binfunc {
        funcs.entry(bf.binary_id.as_str()).or_default().push(bf);
    }
    for list in funcs.values_mut() {
        list.sort_by_key(|f| (f.addr_start, f.addr_end));
    }
    let mut sources: BTreeMap<&str, Vec<&SourceFunction>> = BTreeMap::new();
    for sf in line_to_srcfunc {
        sources.entry(sf.file.as_str()).or_default().push(sf);
    }
    for list in sources.values_mut() {
        list.sort_by_key(|s| (s.line_start, s.line_end));
    }

    let mut sets: BTreeMap<(&str, u64), BTreeSet<SourceFnId>> = BTreeMap::new();
    let mut issues = Vec::new();
    for row in addr_to_line {
        let Some(bf) = funcs.get(row.binary_id.as_str()).and_then(|list| {
            let i = list.partition_point(|f| f.addr_start <= row.address);
            (i > 0 && row.address < list[i - 1].addr_end).then(|| list[i - 1])
        }) else {
            issues.push(TableIssue::AddressOutsideFunctions {
                binary_id: row.binary_id.clone(),
                address: row.address,
            });
            continue;
        };
        let Some(sf) = sources.get(row.file.as_str()).and_then(|list| {
            let i = list.partition_point(|s| s.line_start <= row.line);
            (i > 0 && row.line <= list[i - 1].line_end).then(|| list[i - 1])
        }) else {
            issues.push(TableIssue::LineOutsideFunctions {
                file: row.file.clone(),
                line: row.line,
            });
            continue;
        };
        sets.entry((bf.binary_id.as_str(), bf.addr_start))
            .or_default()
            .insert(sf.id());
    }

    let mut mappings = Vec::new();
    for (binary, list) in &funcs {
        for bf in list {
            match sets.remove(&(*binary, bf.addr_start)) {
                Some(source_functions) => mappings.push(Binary2SourceMapping {
                    function: (*bf).clone(),
                    source_functions,
                }),
                None => issues.push(TableIssue::FunctionWithoutLines {
                    binary_id: bf.binary_id.clone(),
                    name: bf.name.clone(),
                }),
            }
        }
    }
    MappingOutcome { mappings, issues }
}

/// Caller-to-callee graph over source functions, without self loops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceFcg {
    succ: BTreeMap<SourceFnId, BTreeSet<SourceFnId>>,
    pred: BTreeMap<SourceFnId, BTreeSet<SourceFnId>>,
    nodes: BTreeSet<SourceFnId>,
    dropped_self_loops: usize,
}

impl SourceFcg {
    pub fn new<I, S>(edges: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<SourceFnId>,
    {
        let mut fcg = SourceFcg::default();
        for (caller, callee) in edges {
            fcg.add_edge(caller.into(), callee.into());
        }
        fcg
    }

    pub fn add_node(&mut self, id: SourceFnId) {
        self.nodes.insert(id);
    }

    pub fn add_edge(&mut self, caller: SourceFnId, callee: SourceFnId) {
        self.nodes.insert(caller.clone());
        self.nodes.insert(callee.clone());
        if caller == callee {
            self.dropped_self_loops += 1;
            return;
        }
        self.pred
            .entry(callee.clone())
            .or_default()
            .insert(caller.clone());
        self.succ.entry(caller).or_default().insert(callee);
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SourceFnId> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&SourceFnId, &SourceFnId)> {
        self.succ
            .iter()
            .flat_map(|(c, callees)| callees.iter().map(move |d| (c, d)))
    }

    pub fn callees(&self, id: &str) -> impl Iterator<Item = &SourceFnId> {
        self.succ.get(id).into_iter().flatten()
    }

    pub fn callers(&self, id: &str) -> impl Iterator<Item = &SourceFnId> {
        self.pred.get(id).into_iter().flatten()
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Equal,
    Leaf,
    Root,
    Internal,
}

impl Pattern {
    pub const CROSS_INLINING: [Pattern; 3] = [Pattern::Leaf, Pattern::Root, Pattern::Internal];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Equal => "equal",
            Pattern::Leaf => "leaf",
            Pattern::Root => "root",
            Pattern::Internal => "internal",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "equal" => Ok(Pattern::Equal),
            "leaf" => Ok(Pattern::Leaf),
            "root" => Ok(Pattern::Root),
            "internal" => Ok(Pattern::Internal),
            other => Err(Error::InvalidConfig(format!("unknown pattern `{other}`"))),
        }
    }
}

/// Pattern plus whether the bridge had no call edges inside the mapped set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    pub pattern: Pattern,
    pub isolated: bool,
}

/// Position of `bridge` in the call graph induced on `mapped_set`.
///
/// A bridge with neither callers nor callees inside the set is classified
/// [`Pattern::Leaf`] and flagged `isolated`.
pub fn classify(bridge: &str, mapped_set: &BTreeSet<SourceFnId>, fcg: &SourceFcg) -> Classification {
    debug_assert!(mapped_set.contains(bridge));
    if mapped_set.len() <= 1 {
        return Classification {
            pattern: Pattern::Equal,
            isolated: false,
        };
    }
    let calls_in_set = fcg.callees(bridge).any(|c| mapped_set.contains(c));
    let called_in_set = fcg.callers(bridge).any(|c| mapped_set.contains(c));
    let pattern = match (calls_in_set, called_in_set) {
        (false, _) => Pattern::Leaf,
        (true, false) => Pattern::Root,
        (true, true) => Pattern::Internal,
    };
    Classification {
        pattern,
        isolated: !calls_in_set && !called_in_set,
    }
}

pub fn classify_pattern(bridge: &str, mapped_set: &BTreeSet<SourceFnId>, fcg: &SourceFcg) -> Pattern {
    classify(bridge, mapped_set, fcg).pattern
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrossEntry {
    pub target: BinFuncRef,
    pub pattern: Pattern,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeEntry {
    pub equal: Vec<BinFuncRef>,
    #[serde(rename = "cross-inlining")]
    pub cross_inlining: Vec<CrossEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexDiagnostics {
    /// No-inlining functions that mapped to several source functions.
    pub excluded_noinline: usize,
    /// Cross-inlining entries whose bridge had no edges inside the target set.
    pub isolated_bridges: usize,
}

/// Bridge source function -> its equal and cross-inlining binary functions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeIndex {
    pub bridges: BTreeMap<SourceFnId, BridgeEntry>,
    #[serde(default)]
    pub diagnostics: IndexDiagnostics,
}

impl BridgeIndex {
    /// Keeps only functions whose project is in `projects`, dropping bridges
    /// left without equal entries.
    pub fn restrict_to_projects(&self, projects: &BTreeSet<String>) -> BridgeIndex {
        let bridges = self
            .bridges
            .iter()
            .filter_map(|(id, entry)| {
                let equal: Vec<_> = entry
                    .equal
                    .iter()
                    .filter(|r| projects.contains(r.project()))
                    .cloned()
                    .collect();
                if equal.is_empty() {
                    return None;
                }
                let cross_inlining = entry
                    .cross_inlining
                    .iter()
                    .filter(|c| projects.contains(c.target.project()))
                    .cloned()
                    .collect();
                Some((
                    id.clone(),
                    BridgeEntry {
                        equal,
                        cross_inlining,
                    },
                ))
            })
            .collect();
        BridgeIndex {
            bridges,
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn projects(&self) -> BTreeSet<String> {
        self.bridges
            .values()
            .flat_map(|e| {
                e.equal
                    .iter()
                    .chain(e.cross_inlining.iter().map(|c| &c.target))
            })
            .map(|r| r.project().to_string())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

/// Builds the bridge index from both datasets' mappings.
///
/// No-inlining functions that nonetheless contain inlined code are excluded.
/// Only source functions with at least one equal entry become bridges.
pub fn build_bridge_index(
    no_inline: &[Binary2SourceMapping],
    inline: &[Binary2SourceMapping],
    fcg: &SourceFcg,
) -> BridgeIndex {
    let mut index = BridgeIndex::default();
    for m in no_inline {
        if has_inlining(m) {
            index.diagnostics.excluded_noinline += 1;
            continue;
        }
        let src = m.source_functions.iter().next().expect("mappings are non-empty");
        index
            .bridges
            .entry(src.clone())
            .or_default()
            .equal
            .push(m.to_ref(DATASET_NOINLINE));
    }
    for m in inline.iter().filter(|m| has_inlining(m)) {
        let target = m.to_ref(DATASET_INLINE);
        for src in &m.source_functions {
            let Some(entry) = index.bridges.get_mut(src) else {
                continue;
            };
            let c = classify(src, &m.source_functions, fcg);
            if c.isolated {
                index.diagnostics.isolated_bridges += 1;
            }
            entry.cross_inlining.push(CrossEntry {
                target: target.clone(),
                pattern: c.pattern,
            });
        }
    }
    for entry in index.bridges.values_mut() {
        entry.equal.sort();
        entry.equal.dedup();
        entry.cross_inlining.sort();
        entry.cross_inlining.dedup();
    }
    index
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub equal: usize,
    pub leaf: usize,
    pub root: usize,
    pub internal: usize,
}

impl PatternCounts {
    pub fn get(&self, p: Pattern) -> usize {
        match p {
            Pattern::Equal => self.equal,
            Pattern::Leaf => self.leaf,
            Pattern::Root => self.root,
            Pattern::Internal => self.internal,
        }
    }

    fn bump(&mut self, p: Pattern) {
        match p {
            Pattern::Equal => self.equal += 1,
            Pattern::Leaf => self.leaf += 1,
            Pattern::Root => self.root += 1,
            Pattern::Internal => self.internal += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.equal + self.leaf + self.root + self.internal
    }
}

pub fn pattern_distribution(index: &BridgeIndex) -> PatternCounts {
    let mut counts = PatternCounts::default();
    for entry in index.bridges.values() {
        counts.equal += entry.equal.len();
        for c in &entry.cross_inlining {
            counts.bump(c.pattern);
        }
    }
    counts
}

/// The debug tables of one build (one dataset).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetTables {
    pub addr2line: Vec<AddrLine>,
    pub binfuncs: Vec<BinaryFunction>,
}

/// Everything needed to label a corpus: both builds, source functions and
/// the source call graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelingTables {
    pub no_inline: DatasetTables,
    pub inline: DatasetTables,
    pub srcfuncs: Vec<SourceFunction>,
    pub fcg_edges: Vec<(SourceFnId, SourceFnId)>,
}

#[derive(Clone, Debug)]
pub struct LabelOutcome {
    pub index: BridgeIndex,
    pub no_inline: Vec<Binary2SourceMapping>,
    pub inline: Vec<Binary2SourceMapping>,
    pub issues: Vec<TableIssue>,
}

impl LabelingTables {
    pub fn fcg(&self) -> SourceFcg {
        let mut fcg = SourceFcg::new(self.fcg_edges.iter().cloned());
        for sf in &self.srcfuncs {
            fcg.add_node(sf.id());
        }
        fcg
    }

    pub fn label(&self) -> LabelOutcome {
        let no_inline = construct_mapping(
            &self.no_inline.addr2line,
            &self.no_inline.binfuncs,
            &self.srcfuncs,
        );
        let inline = construct_mapping(&self.inline.addr2line, &self.inline.binfuncs, &self.srcfuncs);
        let index = build_bridge_index(&no_inline.mappings, &inline.mappings, &self.fcg());
        let mut issues = no_inline.issues;
        issues.extend(inline.issues);
        LabelOutcome {
            index,
            no_inline: no_inline.mappings,
            inline: inline.mappings,
            issues,
        }
    }

    /// Reads `srcfuncs.tsv`, `fcg.tsv` and `{noinline,inline}/{addr2line,binfuncs}.tsv`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let dataset = |name: &str| -> Result<DatasetTables> {
            Ok(DatasetTables {
                addr2line: tsv::read_addr2line(&dir.join(name).join("addr2line.tsv"))?,
                binfuncs: tsv::read_binfuncs(&dir.join(name).join("binfuncs.tsv"))?,
            })
        };
        Ok(LabelingTables {
            no_inline: dataset(DATASET_NOINLINE)?,
            inline: dataset(DATASET_INLINE)?,
            srcfuncs: tsv::read_srcfuncs(&dir.join("srcfuncs.tsv"))?,
            fcg_edges: tsv::read_fcg(&dir.join("fcg.tsv"))?,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for (name, tables) in [(DATASET_NOINLINE, &self.no_inline), (DATASET_INLINE, &self.inline)] {
            let sub = dir.join(name);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            tsv::write_addr2line(&sub.join("addr2line.tsv"), &tables.addr2line)?;
            tsv::write_binfuncs(&sub.join("binfuncs.tsv"), &tables.binfuncs)?;
        }
        tsv::write_srcfuncs(&dir.join("srcfuncs.tsv"), &self.srcfuncs)?;
        tsv::write_fcg(&dir.join("fcg.tsv"), &self.fcg_edges)
    }
}

/// Tab-separated table files. Lines starting with `#` are comments; addresses
/// are hex with a `0x` prefix.
pub mod tsv {
    use std::fmt::Write as _;
    use std::path::Path;

    use super::{AddrLine, BinaryFunction, SourceFnId, SourceFunction};
    use crate::error::{Error, Result};

    fn rows(path: &Path, width: usize) -> Result<Vec<(usize, Vec<String>)>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            if fields.len() != width {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected {width} columns, found {}", fields.len()),
                });
            }
            out.push((i + 1, fields));
        }
        Ok(out)
    }

    fn parse_err(path: &Path, line: usize, reason: String) -> Error {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        }
    }

    fn hex(path: &Path, line: usize, s: &str) -> Result<u64> {
        let digits = s
            .strip_prefix("0x")
            .ok_or_else(|| parse_err(path, line, format!("address `{s}` lacks 0x prefix")))?;
        u64::from_str_radix(digits, 16)
            .map_err(|e| parse_err(path, line, format!("bad address `{s}`: {e}")))
    }

    fn num(path: &Path, line: usize, s: &str) -> Result<u32> {
        s.parse()
            .map_err(|e| parse_err(path, line, format!("bad line number `{s}`: {e}")))
    }

    fn write(path: &Path, header: &str, body: String) -> Result<()> {
        std::fs::write(path, format!("# {header}\n{body}")).map_err(|e| Error::io(path, e))
    }

    pub fn read_addr2line(path: &Path) -> Result<Vec<AddrLine>> {
        rows(path, 4)?
            .into_iter()
            .map(|(n, f)| {
                Ok(AddrLine {
                    address: hex(path, n, &f[1])?,
                    line: num(path, n, &f[3])?,
                    binary_id: f[0].clone(),
                    file: f[2].clone(),
                })
            })
            .collect()
    }

    pub fn write_addr2line(path: &Path, rows: &[AddrLine]) -> Result<()> {
        let mut body = String::new();
        for r in rows {
            let _ = writeln!(body, "{}\t{:#x}\t{}\t{}", r.binary_id, r.address, r.file, r.line);
        }
        write(path, "binary_id\taddress\tfile\tline", body)
    }

    pub fn read_binfuncs(path: &Path) -> Result<Vec<BinaryFunction>> {
        rows(path, 4)?
            .into_iter()
            .map(|(n, f)| {
                Ok(BinaryFunction {
                    addr_start: hex(path, n, &f[2])?,
                    addr_end: hex(path, n, &f[3])?,
                    binary_id: f[0].clone(),
                    name: f[1].clone(),
                })
            })
            .collect()
    }

    pub fn write_binfuncs(path: &Path, rows: &[BinaryFunction]) -> Result<()> {
        let mut body = String::new();
        for r in rows {
            let _ = writeln!(
                body,
                "{}\t{}\t{:#x}\t{:#x}",
                r.binary_id, r.name, r.addr_start, r.addr_end
            );
        }
        write(path, "binary_id\tfunc_name\taddr_start\taddr_end", body)
    }

    pub fn read_srcfuncs(path: &Path) -> Result<Vec<SourceFunction>> {
        rows(path, 4)?
            .into_iter()
            .map(|(n, f)| {
                let sf = SourceFunction {
                    line_start: num(path, n, &f[2])?,
                    line_end: num(path, n, &f[3])?,
                    file: f[0].clone(),
                    name: f[1].clone(),
                };
                if sf.line_start > sf.line_end {
                    return Err(parse_err(path, n, "line_start exceeds line_end".into()));
                }
                Ok(sf)
            })
            .collect()
    }

    pub fn write_srcfuncs(path: &Path, rows: &[SourceFunction]) -> Result<()> {
        let mut body = String::new();
        for r in rows {
            let _ = writeln!(body, "{}\t{}\t{}\t{}", r.file, r.name, r.line_start, r.line_end);
        }
        write(path, "file\tfunc_name\tline_start\tline_end", body)
    }

    pub fn read_fcg(path: &Path) -> Result<Vec<(SourceFnId, SourceFnId)>> {
        Ok(rows(path, 2)?
            .into_iter()
            .map(|(_, f)| (f[0].clone(), f[1].clone()))
            .collect())
    }

    pub fn write_fcg(path: &Path, edges: &[(SourceFnId, SourceFnId)]) -> Result<()> {
        let mut body = String::new();
        for (c, d) in edges {
            let _ = writeln!(body, "{c}\t{d}");
        }
        write(path, "caller_id\tcallee_id", body)
    }
}
