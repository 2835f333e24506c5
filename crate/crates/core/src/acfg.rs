//! Attributed control-flow graphs.
//!
//! A function arrives as a [`FunctionRecord`] (one line of the JSONL exchange
//! format), is validated into an [`AttributedCfg`], and each basic block is
//! reduced to a bag-of-opcodes count vector over an [`OpcodeVocabulary`].
//! Operands are carried through for fidelity but never reach the features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub address: u64,
    pub opcode: String,
    pub operands: Vec<String>,
}

impl Instruction {
    pub fn new(address: u64, opcode: &str, operands: &[&str]) -> Self {
        Instruction {
            address,
            opcode: opcode.to_string(),
            operands: operands.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: NodeId,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn opcodes(&self) -> impl Iterator<Item = &str> {
        self.instructions.iter().map(|i| i.opcode.as_str())
    }
}

/// A function's control-flow graph whose nodes carry their instructions.
///
/// Nodes are sorted by id and edges lexicographically; every node is
/// reachable from `entry`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributedCfg {
    function_name: String,
    nodes: Vec<BasicBlock>,
    edges: Vec<(NodeId, NodeId)>,
    entry: NodeId,
}

/// Result of validating a raw graph: the graph plus how many unreachable
/// nodes were discarded.
#[derive(Clone, Debug)]
pub struct AcfgBuild {
    pub cfg: AttributedCfg,
    pub dropped_nodes: usize,
}

impl AttributedCfg {
    /// Validates the parts and drops nodes unreachable from `entry`.
    ///
    /// Opcodes are lowercased. Duplicate edges collapse into one.
    pub fn from_parts(
        function_name: impl Into<String>,
        nodes: Vec<BasicBlock>,
        edges: Vec<(NodeId, NodeId)>,
        entry: NodeId,
    ) -> Result<AcfgBuild> {
        let function_name = function_name.into();
        if nodes.is_empty() {
            return Err(Error::malformed(&function_name, "no basic blocks"));
        }
        let mut by_id: BTreeMap<NodeId, BasicBlock> = BTreeMap::new();
        let mut seen_addr = HashSet::new();
        for mut block in nodes {
            if block.instructions.is_empty() {
                return Err(Error::malformed(
                    &function_name,
                    format!("block {} is empty", block.id),
                ));
            }
            let mut prev: Option<u64> = None;
            for insn in &mut block.instructions {
                if insn.opcode.trim().is_empty() {
                    return Err(Error::malformed(
                        &function_name,
                        format!("empty opcode at {:#x}", insn.address),
                    ));
                }
                if prev.is_some_and(|p| insn.address <= p) {
                    return Err(Error::malformed(
                        &function_name,
                        format!("addresses not increasing in block {}", block.id),
                    ));
                }
                if !seen_addr.insert(insn.address) {
                    return Err(Error::malformed(
                        &function_name,
                        format!("duplicate address {:#x}", insn.address),
                    ));
                }
                prev = Some(insn.address);
                insn.opcode = insn.opcode.trim().to_lowercase();
            }
            let id = block.id;
            if by_id.insert(id, block).is_some() {
                return Err(Error::malformed(
                    &function_name,
                    format!("duplicate block id {id}"),
                ));
            }
        }
        if !by_id.contains_key(&entry) {
            return Err(Error::malformed(
                &function_name,
                format!("entry {entry} is not a block"),
            ));
        }
        for &(src, dst) in &edges {
            if !by_id.contains_key(&src) || !by_id.contains_key(&dst) {
                return Err(Error::malformed(
                    &function_name,
                    format!("dangling edge {src} -> {dst}"),
                ));
            }
        }

        let mut succ: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(src, dst) in &edges {
            succ.entry(src).or_default().push(dst);
        }
        let mut reachable = BTreeSet::from([entry]);
        let mut queue = VecDeque::from([entry]);
        while let Some(node) = queue.pop_front() {
            for &next in succ.get(&node).into_iter().flatten() {
                if reachable.insert(next) {
                    queue.push_back(next);
                }
            }
        }

        let total = by_id.len();
        let nodes: Vec<BasicBlock> = by_id
            .into_values()
            .filter(|b| reachable.contains(&b.id))
            .collect();
        let dropped_nodes = total - nodes.len();
        if dropped_nodes > 0 {
            log::warn!("{function_name}: dropped {dropped_nodes} unreachable node(s)");
        }
        let edges: BTreeSet<(NodeId, NodeId)> = edges
            .into_iter()
            .filter(|(s, _)| reachable.contains(s))
            .collect();

        Ok(AcfgBuild {
            cfg: AttributedCfg {
                function_name,
                nodes,
                edges: edges.into_iter().collect(),
                entry,
            },
            dropped_nodes,
        })
    }

    pub fn function_name(&self) -> &str {
        &self.function_name
    }

    pub fn nodes(&self) -> &[BasicBlock] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn entry(&self) -> NodeId {
        self.entry
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn instruction_count(&self) -> usize {
        self.nodes.iter().map(|b| b.instructions.len()).sum()
    }

    pub fn node(&self, id: NodeId) -> Option<&BasicBlock> {
        self.nodes
            .binary_search_by_key(&id, |b| b.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// Position of `id` in [`nodes`](Self::nodes).
    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn successors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges
            .iter()
            .filter(move |(s, _)| *s == id)
            .map(|&(_, d)| d)
    }

    /// Edges as pairs of node positions rather than ids.
    pub fn edge_positions(&self) -> Vec<(usize, usize)> {
        let pos: HashMap<NodeId, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect();
        self.edges.iter().map(|(s, d)| (pos[s], pos[d])).collect()
    }

    /// Same graph with the name removed, as seen by the model.
    pub fn stripped(&self) -> AttributedCfg {
        AttributedCfg {
            function_name: String::new(),
            ..self.clone()
        }
    }

    pub fn to_record(&self) -> FunctionRecord {
        FunctionRecord {
            name: self.function_name.clone(),
            entry: self.entry,
            blocks: self
                .nodes
                .iter()
                .map(|b| RawBlock {
                    id: b.id,
                    insns: b
                        .instructions
                        .iter()
                        .map(|i| RawInsn {
                            addr: i.address,
                            op: i.opcode.clone(),
                            args: i.operands.clone(),
                        })
                        .collect(),
                })
                .collect(),
            edges: self.edges.iter().map(|&(s, d)| [s, d]).collect(),
        }
    }
}

/// One line of the function-graph exchange format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub name: String,
    pub entry: NodeId,
    pub blocks: Vec<RawBlock>,
    pub edges: Vec<[NodeId; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBlock {
    pub id: NodeId,
    pub insns: Vec<RawInsn>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInsn {
    pub addr: u64,
    pub op: String,
    #[serde(default)]
    pub args: Vec<String>,
}

pub fn build_acfg(record: &FunctionRecord) -> Result<AcfgBuild> {
    let nodes = record
        .blocks
        .iter()
        .map(|b| BasicBlock {
            id: b.id,
            instructions: b
                .insns
                .iter()
                .map(|i| Instruction {
                    address: i.addr,
                    opcode: i.op.clone(),
                    operands: i.args.clone(),
                })
                .collect(),
        })
        .collect();
    let edges = record.edges.iter().map(|e| (e[0], e[1])).collect();
    AttributedCfg::from_parts(record.name.clone(), nodes, edges, record.entry)
}

/// Reads a JSONL graph file, building every record. Blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<AttributedCfg>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FunctionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        out.push(build_acfg(&record)?.cfg);
    }
    Ok(out)
}

pub fn write_jsonl<'a>(
    path: &Path,
    graphs: impl IntoIterator<Item = &'a AttributedCfg>,
) -> Result<()> {
    let mut buf = Vec::new();
    for g in graphs {
        serde_json::to_writer(&mut buf, &g.to_record()).expect("records always serialize");
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Fixed key sequence of opcodes; anything else lands in the trailing UNK slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct OpcodeVocabulary {
    key_sequence: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    key_sequence: Vec<String>,
}

impl TryFrom<VocabularyFile> for OpcodeVocabulary {
    type Error = String;

    fn try_from(file: VocabularyFile) -> std::result::Result<Self, String> {
        OpcodeVocabulary::from_keys(file.key_sequence).map_err(|e| e.to_string())
    }
}

impl From<OpcodeVocabulary> for VocabularyFile {
    fn from(v: OpcodeVocabulary) -> Self {
        VocabularyFile {
            key_sequence: v.key_sequence,
        }
    }
}

pub type NodeFeatureVector = Vec<u32>;

impl OpcodeVocabulary {
    pub fn from_keys(key_sequence: Vec<String>) -> Result<Self> {
        if key_sequence.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut index = HashMap::with_capacity(key_sequence.len());
        for (i, key) in key_sequence.iter().enumerate() {
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate vocabulary token `{key}`"
                )));
            }
        }
        Ok(OpcodeVocabulary {
            key_sequence,
            index,
        })
    }

    pub fn key_sequence(&self) -> &[String] {
        &self.key_sequence
    }

    pub fn unk_index(&self) -> usize {
        self.key_sequence.len()
    }

    /// Length of a feature vector, including the UNK slot.
    pub fn feature_dim(&self) -> usize {
        self.key_sequence.len() + 1
    }

    pub fn slot(&self, opcode: &str) -> usize {
        self.index
            .get(opcode)
            .copied()
            .unwrap_or(self.key_sequence.len())
    }

    pub fn featurize_node(&self, block: &BasicBlock) -> NodeFeatureVector {
        let mut counts = vec![0u32; self.feature_dim()];
        for op in block.opcodes() {
            counts[self.slot(op)] += 1;
        }
        counts
    }

    /// Row-major `nodes x feature_dim` matrix of counts for a whole graph.
    pub fn featurize_graph(&self, cfg: &AttributedCfg) -> Vec<f64> {
        let dim = self.feature_dim();
        let mut out = vec![0.0; cfg.node_count() * dim];
        for (row, block) in cfg.nodes().iter().enumerate() {
            for op in block.opcodes() {
                out[row * dim + self.slot(op)] += 1.0;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
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

/// Top `max_size` opcodes by corpus frequency, ties broken lexicographically.
pub fn build_vocabulary<'a>(
    corpus: impl IntoIterator<Item = &'a AttributedCfg>,
    max_size: usize,
) -> Result<OpcodeVocabulary> {
    if max_size == 0 {
        return Err(Error::InvalidConfig("vocabulary max_size must be positive".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut any = false;
    for cfg in corpus {
        any = true;
        for block in cfg.nodes() {
            for op in block.opcodes() {
                *counts.entry(op).or_default() += 1;
            }
        }
    }
    if !any || counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    OpcodeVocabulary::from_keys(ranked.into_iter().map(|(k, _)| k.to_string()).collect())
}
