//! Synthetic cross-inlining corpora.
//!
//! A seeded world of source functions with an acyclic call graph is compiled
//! twice: once without inlining (one binary function per source function) and
//! once with a budgeted inlining policy that splices callee bodies into their
//! call sites. Every instruction remembers the source function and line it
//! came from, which yields the debug tables and the ground-truth bridge index.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acfg::{write_jsonl, AttributedCfg, BasicBlock, Instruction, NodeId};
use crate::error::{Error, Result};
use crate::labeling::{
    AddrLine, BinFuncRef, BinaryFunction, BridgeEntry, BridgeIndex, CrossEntry,
    LabelingTables, Pattern, SourceFnId, SourceFunction, DATASET_INLINE, DATASET_NOINLINE,
};
use crate::pairgen::rng;

const BODY_OPCODES: &[&str] = &[
    "mov", "push", "pop", "lea", "add", "sub", "cmp", "test", "and", "or", "xor", "shl", "shr",
    "sar", "imul", "idiv", "inc", "dec", "neg", "not", "movzx", "movsx", "cmove", "cmovne",
    "sete", "setne", "nop", "xchg", "cdq", "cqo", "movss", "movsd", "addsd", "mulsd", "subsd",
    "divsd", "cvtsi2sd", "pxor", "movaps", "movdqa", "bt", "rol", "ror", "adc", "sbb", "leave",
    "stosb", "bswap",
];
const BRANCHES: &[&str] = &["je", "jne", "jg", "jl", "ja", "jb", "jge", "jle"];
const REGISTERS: &[&str] = &["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r12", "r13"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_projects: usize,
    pub functions_per_project: usize,
    /// Distinct body opcodes to draw from.
    pub alphabet_size: usize,
    pub blocks_min: usize,
    pub blocks_max: usize,
    /// Body instructions per block, before any call or branch.
    pub insns_min: usize,
    pub insns_max: usize,
    /// Probability that a function calls a given function below it in the
    /// topological order.
    pub call_density: f64,
    pub max_callees: usize,
    /// Largest callee (in instructions, after its own inlining) that may be inlined.
    pub inline_budget: usize,
    pub inline_probability: f64,
    /// Fraction of inlined-build body opcodes replaced at random.
    pub mutation_rate: f64,
    /// Favoured opcodes per function, drawn with probability `style_weight`.
    pub style_size: usize,
    pub style_weight: f64,
    pub functions_per_file: usize,
    /// Fail with `PatternStarvation` unless leaf, root and internal pairs all occur.
    pub require_all_patterns: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_projects: 10,
            functions_per_project: 30,
            alphabet_size: 40,
            blocks_min: 1,
            blocks_max: 6,
            insns_min: 2,
            insns_max: 6,
            call_density: 0.15,
            max_callees: 3,
            inline_budget: 60,
            inline_probability: 0.8,
            mutation_rate: 0.0,
            style_size: 4,
            style_weight: 0.6,
            functions_per_file: 4,
            require_all_patterns: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("n_projects", self.n_projects),
            ("functions_per_project", self.functions_per_project),
            ("alphabet_size", self.alphabet_size),
            ("blocks_min", self.blocks_min),
            ("insns_min", self.insns_min),
            ("functions_per_file", self.functions_per_file),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.blocks_max < self.blocks_min || self.insns_max < self.insns_min {
            return bad("ranges must have max >= min".into());
        }
        for (name, p) in [
            ("call_density", self.call_density),
            ("inline_probability", self.inline_probability),
            ("mutation_rate", self.mutation_rate),
            ("style_weight", self.style_weight),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn alphabet(&self) -> Vec<String> {
        (0..self.alphabet_size)
            .map(|i| match BODY_OPCODES.get(i) {
                Some(op) => op.to_string(),
                None => format!("op{i}"),
            })
            .collect()
    }
}

/// Source function and line an instruction was compiled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Origin {
    /// Index into the world's function list.
    pub source: usize,
    pub line: u32,
}

/// A CFG whose every instruction carries its [`Origin`].
#[derive(Clone, Debug, PartialEq)]
pub struct TracedFunction {
    pub cfg: AttributedCfg,
    pub origins: BTreeMap<NodeId, Vec<Origin>>,
}

impl TracedFunction {
    /// Attributes every instruction of `cfg` to `source`, line 0.
    pub fn untraced(cfg: AttributedCfg, source: usize) -> Self {
        let origins = cfg
            .nodes()
            .iter()
            .map(|b| (b.id, vec![Origin { source, line: 0 }; b.instructions.len()]))
            .collect();
        TracedFunction { cfg, origins }
    }

    /// Address -> origin, for every instruction.
    pub fn provenance(&self) -> BTreeMap<u64, Origin> {
        self.cfg
            .nodes()
            .iter()
            .flat_map(|b| {
                b.instructions
                    .iter()
                    .zip(&self.origins[&b.id])
                    .map(|(i, o)| (i.address, *o))
            })
            .collect()
    }

    pub fn sources(&self) -> BTreeSet<usize> {
        self.origins.values().flatten().map(|o| o.source).collect()
    }
}

fn renumber(nodes: &mut [BasicBlock]) {
    nodes.sort_by_key(|b| b.id);
    let mut addr = 0u64;
    for b in nodes {
        for i in &mut b.instructions {
            i.address = addr;
            addr += 4;
        }
    }
}

/// Splices `callee` into `caller` at the call to it inside node `call_site`.
///
/// The call instruction disappears. Instructions before it stay in
/// `call_site`, which then jumps to the callee's entry; instructions after it
/// move to a fresh node that the callee's exit nodes fall into and which
/// inherits `call_site`'s successors. Callee nodes get fresh ids above the
/// caller's, and addresses are renumbered sequentially.
pub fn inline_transform(caller: &TracedFunction, callee: &TracedFunction, call_site: NodeId) -> Result<TracedFunction> {
    let callee_name = callee.cfg.function_name();
    let not_found = || Error::SiteNotFound {
        node: call_site,
        callee: callee_name.to_string(),
    };
    let site = caller.cfg.node(call_site).ok_or_else(not_found)?;
    let idx = site
        .instructions
        .iter()
        .position(|i| i.opcode == "call" && i.operands.first().map(String::as_str) == Some(callee_name))
        .ok_or_else(not_found)?;
    let site_origins = &caller.origins[&call_site];

    let offset = caller.cfg.nodes().last().map_or(0, |b| b.id) + 1;
    let fresh: BTreeMap<NodeId, NodeId> = callee
        .cfg
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, offset + i as NodeId))
        .collect();
    let callee_entry = fresh[&callee.cfg.entry()];
    let suffix_id = offset + callee.cfg.node_count() as NodeId;

    let has_prefix = idx > 0;
    let has_suffix = idx + 1 < site.instructions.len();
    let head = if has_prefix { call_site } else { callee_entry };

    let mut nodes = Vec::new();
    let mut origins = BTreeMap::new();
    for b in caller.cfg.nodes() {
        if b.id == call_site {
            continue;
        }
        nodes.push(b.clone());
        origins.insert(b.id, caller.origins[&b.id].clone());
    }
    if has_prefix {
        nodes.push(BasicBlock {
            id: call_site,
            instructions: site.instructions[..idx].to_vec(),
        });
        origins.insert(call_site, site_origins[..idx].to_vec());
    }
    if has_suffix {
        nodes.push(BasicBlock {
            id: suffix_id,
            instructions: site.instructions[idx + 1..].to_vec(),
        });
        origins.insert(suffix_id, site_origins[idx + 1..].to_vec());
    }
    for b in callee.cfg.nodes() {
        let id = fresh[&b.id];
        nodes.push(BasicBlock {
            id,
            instructions: b.instructions.clone(),
        });
        origins.insert(id, callee.origins[&b.id].clone());
    }

    let retarget = |n: NodeId| if n == call_site { head } else { n };
    let exits: Vec<NodeId> = callee
        .cfg
        .nodes()
        .iter()
        .filter(|b| callee.cfg.successors(b.id).next().is_none())
        .map(|b| fresh[&b.id])
        .collect();
    let tails: Vec<NodeId> = if has_suffix { vec![suffix_id] } else { exits.clone() };

    let mut edges = Vec::new();
    for &(s, d) in caller.cfg.edges() {
        if s == call_site {
            edges.extend(tails.iter().map(|&t| (t, retarget(d))));
        } else {
            edges.push((s, retarget(d)));
        }
    }
    for &(s, d) in callee.cfg.edges() {
        edges.push((fresh[&s], fresh[&d]));
    }
    if has_prefix {
        edges.push((call_site, callee_entry));
    }
    if has_suffix {
        edges.extend(exits.iter().map(|&e| (e, suffix_id)));
    }
    let entry = retarget(caller.cfg.entry());

    renumber(&mut nodes);
    let built = AttributedCfg::from_parts(caller.cfg.function_name(), nodes, edges, entry)?;
    origins.retain(|id, _| built.cfg.node(*id).is_some());
    Ok(TracedFunction {
        cfg: built.cfg,
        origins,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldFunction {
    pub project: usize,
    pub source: SourceFunction,
    /// Body with call instructions, lines attributed; addresses are provisional.
    pub base: TracedFunction,
    /// Indices of called functions, in call-site order.
    pub callees: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceWorld {
    pub projects: Vec<String>,
    pub functions: Vec<WorldFunction>,
}

impl SourceWorld {
    pub fn fcg_edges(&self) -> Vec<(SourceFnId, SourceFnId)> {
        self.functions
            .iter()
            .flat_map(|f| {
                f.callees
                    .iter()
                    .map(move |&c| (f.source.id(), self.functions[c].source.id()))
            })
            .collect()
    }
}

/// Random function body: a chain of blocks with forward branches and the
/// occasional loop, ending in the only exit block.
fn gen_body(
    config: &SynthConfig,
    alphabet: &[String],
    style: &[usize],
    r: &mut impl Rng,
) -> (Vec<Vec<(String, Vec<String>)>>, Vec<(NodeId, NodeId)>) {
    let n = r.gen_range(config.blocks_min..=config.blocks_max);
    let draw = |r: &mut _| -> (String, Vec<String>) {
        let r: &mut dyn rand::RngCore = r;
        let op = if !style.is_empty() && r.gen_bool(config.style_weight) {
            &alphabet[style[r.gen_range(0..style.len())]]
        } else {
            &alphabet[r.gen_range(0..alphabet.len())]
        };
        let args = vec![
            REGISTERS[r.gen_range(0..REGISTERS.len())].to_string(),
            format!("{:#x}", r.gen_range(0..0x100u32)),
        ];
        (op.clone(), args)
    };
    let mut blocks = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for i in 0..n {
        let len = r.gen_range(config.insns_min..=config.insns_max);
        let mut insns: Vec<_> = (0..len).map(|_| draw(&mut *r)).collect();
        let id = i as NodeId;
        if i + 1 == n {
            insns.push(("ret".into(), vec![]));
        } else if r.gen_bool(0.35) {
            let target = if i > 0 && r.gen_bool(0.2) {
                r.gen_range(0..=i)
            } else {
                r.gen_range(i + 1..n)
            };
            insns.push((BRANCHES[r.gen_range(0..BRANCHES.len())].into(), vec![format!("bb{target}")]));
            edges.push((id, id + 1));
            edges.push((id, target as NodeId));
        } else {
            edges.push((id, id + 1));
        }
        blocks.push(insns);
    }
    (blocks, edges)
}

/// Source functions, their call graph, and per-function base CFGs.
///
/// Within each project functions are put in a random topological order and
/// only call functions later in that order, so the call graph is acyclic.
pub fn gen_source_world(config: &SynthConfig) -> Result<SourceWorld> {
    config.validate()?;
    let alphabet = config.alphabet();
    let k = config.functions_per_project;
    let projects: Vec<String> = (0..config.n_projects).map(|p| format!("proj{p:02}")).collect();
    let per_project: Vec<Vec<WorldFunction>> = (0..config.n_projects)
        .into_par_iter()
        .map(|p| {
            let mut r = rng(config.seed ^ (p as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut topo: Vec<usize> = (0..k).collect();
            topo.shuffle(&mut r);
            let mut callees: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (pos, &f) in topo.iter().enumerate() {
                for &g in &topo[pos + 1..] {
                    if callees[f].len() < config.max_callees && r.gen_bool(config.call_density) {
                        callees[f].push(g);
                    }
                }
            }
            let mut next_line: BTreeMap<usize, u32> = BTreeMap::new();
            (0..k)
                .map(|f| {
                    let style: Vec<usize> = rand::seq::index::sample(
                        &mut r,
                        alphabet.len(),
                        config.style_size.min(alphabet.len()),
                    )
                    .into_vec();
                    let (mut blocks, edges) = gen_body(config, &alphabet, &style, &mut r);
                    for &g in &callees[f] {
                        let b = r.gen_range(0..blocks.len());
                        // keep the call off the first slot and before any terminator
                        let body_len = blocks[b]
                            .iter()
                            .take_while(|(op, _)| op != "ret" && !BRANCHES.contains(&op.as_str()))
                            .count();
                        let at = r.gen_range(1..=body_len);
                        blocks[b].insert(at, ("call".into(), vec![function_name(p, g)]));
                    }
                    let file_idx = f / config.functions_per_file;
                    let file = format!("{}/src/file{file_idx}.c", projects[p]);
                    let line_start = *next_line.entry(file_idx).or_insert(1);
                    let span = 1 + blocks.len() as u32 * 4;
                    let line_end = line_start + span;
                    next_line.insert(file_idx, line_end + 2);

                    let global = p * k + f;
                    let mut nodes = Vec::with_capacity(blocks.len());
                    let mut origins = BTreeMap::new();
                    let mut addr = 0u64;
                    for (bi, insns) in blocks.into_iter().enumerate() {
                        let mut instructions = Vec::with_capacity(insns.len());
                        let mut orig = Vec::with_capacity(insns.len());
                        for (ii, (op, args)) in insns.into_iter().enumerate() {
                            instructions.push(Instruction {
                                address: addr,
                                opcode: op,
                                operands: args,
                            });
                            addr += 4;
                            let line = line_start + 1 + bi as u32 * 4 + (ii as u32 / 3).min(3);
                            orig.push(Origin {
                                source: global,
                                line: line.min(line_end),
                            });
                        }
                        nodes.push(BasicBlock {
                            id: bi as NodeId,
                            instructions,
                        });
                        origins.insert(bi as NodeId, orig);
                    }
                    let name = function_name(p, f);
                    let cfg = AttributedCfg::from_parts(name.clone(), nodes, edges, 0)
                        .expect("generated bodies are well formed")
                        .cfg;
                    WorldFunction {
                        project: p,
                        source: SourceFunction {
                            file,
                            name,
                            line_start,
                            line_end,
                        },
                        base: TracedFunction { cfg, origins },
                        callees: callees[f].iter().map(|&g| p * k + g).collect(),
                    }
                })
                .collect()
        })
        .collect();
    Ok(SourceWorld {
        projects,
        functions: per_project.into_iter().flatten().collect(),
    })
}

fn function_name(project: usize, f: usize) -> String {
    format!("p{project:02}_fn{f:03}")
}

/// A binary function of one of the two builds.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryGraph {
    pub reference: BinFuncRef,
    pub cfg: AttributedCfg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub projects: Vec<String>,
    pub no_inline: Vec<BinaryGraph>,
    pub inline: Vec<BinaryGraph>,
    pub tables: LabelingTables,
    pub ground_truth: BridgeIndex,
    /// Total source instructions over all functions.
    pub source_instructions: usize,
    /// Call instructions removed by inlining, per inlined-build function.
    pub inlined_calls: Vec<usize>,
    /// Source instruction count of each inlined-build function's origins
    /// (counted with multiplicity of inlining).
    pub expected_instructions: Vec<usize>,
}

/// Lays out `func` at `base`, giving instructions random lengths of 1 to 7
/// bytes; returns the relocated graph, its line rows and its end address.
fn layout(
    func: &TracedFunction,
    world: &SourceWorld,
    binary_id: &str,
    base: u64,
    mut mutate: Option<(f64, &[String], &mut ChaCha8Rng)>,
    r: &mut impl Rng,
) -> (AttributedCfg, Vec<AddrLine>, u64) {
    let mut addr = base;
    let mut rows = Vec::new();
    let mut nodes = Vec::with_capacity(func.cfg.node_count());
    for b in func.cfg.nodes() {
        let mut instructions = Vec::with_capacity(b.instructions.len());
        for (insn, origin) in b.instructions.iter().zip(&func.origins[&b.id]) {
            let mut insn = insn.clone();
            if let Some((rate, alphabet, m)) = mutate.as_mut() {
                let is_body = insn.opcode != "call" && insn.opcode != "ret" && !BRANCHES.contains(&insn.opcode.as_str());
                if is_body && m.gen_bool(*rate) {
                    insn.opcode = alphabet[m.gen_range(0..alphabet.len())].clone();
                }
            }
            insn.address = addr;
            let src = &world.functions[origin.source].source;
            rows.push(AddrLine {
                binary_id: binary_id.to_string(),
                address: addr,
                file: src.file.clone(),
                line: origin.line,
            });
            addr += r.gen_range(1..=7);
            instructions.push(insn);
        }
        nodes.push(BasicBlock {
            id: b.id,
            instructions,
        });
    }
    let cfg = AttributedCfg::from_parts(func.cfg.function_name(), nodes, func.cfg.edges().to_vec(), func.cfg.entry())
        .expect("relocation preserves validity")
        .cfg;
    (cfg, rows, addr)
}

/// Compiles `world` twice and derives debug tables and the ground truth.
pub fn apply_inlining_policy(world: &SourceWorld, config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let alphabet = config.alphabet();
    let n = world.functions.len();

    // Inlined build, callees first. Callees always sit later in the
    // topological order, so a memoized depth-first walk suffices.
    let mut built: Vec<Option<(TracedFunction, usize)>> = vec![None; n];
    let mut decide = rng(config.seed ^ 0x5eed_1a1e);
    let mut order = Vec::with_capacity(n);
    fn visit(f: usize, world: &SourceWorld, seen: &mut Vec<bool>, order: &mut Vec<usize>) {
        if seen[f] {
            return;
        }
        seen[f] = true;
        for &c in &world.functions[f].callees {
            visit(c, world, seen, order);
        }
        order.push(f);
    }
    let mut seen = vec![false; n];
    for f in 0..n {
        visit(f, world, &mut seen, &mut order);
    }
    for &f in &order {
        let wf = &world.functions[f];
        let mut traced = wf.base.clone();
        let mut removed_calls = 0;
        for &c in &wf.callees {
            let roll: f64 = decide.gen();
            let (callee, callee_calls) = built[c].as_ref().expect("callees are built first");
            if callee.cfg.instruction_count() > config.inline_budget || roll >= config.inline_probability {
                continue;
            }
            let callee_name = callee.cfg.function_name().to_string();
            let site = traced
                .cfg
                .nodes()
                .iter()
                .find(|b| {
                    b.instructions.iter().zip(&traced.origins[&b.id]).any(|(i, o)| {
                        o.source == f && i.opcode == "call" && i.operands.first() == Some(&callee_name)
                    })
                })
                .map(|b| b.id)
                .expect("every call edge has a call site");
            traced = inline_transform(&traced, callee, site)?;
            removed_calls += 1 + callee_calls;
        }
        built[f] = Some((traced, removed_calls));
    }

    let mut no_inline = Vec::with_capacity(n);
    let mut inline = Vec::with_capacity(n);
    let mut tables = LabelingTables {
        srcfuncs: world.functions.iter().map(|f| f.source.clone()).collect(),
        fcg_edges: world.fcg_edges(),
        ..LabelingTables::default()
    };
    let mut inlined_calls = Vec::with_capacity(n);
    let mut expected_instructions = Vec::with_capacity(n);
    let mut layout_rng = rng(config.seed ^ 0x1a70_u64);
    let mut mutation_rng = rng(config.seed ^ 0x307a_7e00);
    for (p, project) in world.projects.iter().enumerate() {
        for (dataset, tables_out, graphs) in [
            (DATASET_NOINLINE, &mut tables.no_inline, &mut no_inline),
            (DATASET_INLINE, &mut tables.inline, &mut inline),
        ] {
            let mut base = 0x1000u64;
            for (f, wf) in world.functions.iter().enumerate().filter(|(_, wf)| wf.project == p) {
                let (func, mutate) = if dataset == DATASET_NOINLINE {
                    (&wf.base, None)
                } else {
                    let rate = config.mutation_rate;
                    let m = (rate > 0.0).then_some((rate, alphabet.as_slice(), &mut mutation_rng));
                    (&built[f].as_ref().expect("built").0, m)
                };
                let (cfg, rows, end) = layout(func, world, project, base, mutate, &mut layout_rng);
                tables_out.binfuncs.push(BinaryFunction {
                    binary_id: project.clone(),
                    name: wf.source.name.clone(),
                    addr_start: base,
                    addr_end: end,
                });
                tables_out.addr2line.extend(rows);
                graphs.push(BinaryGraph {
                    reference: BinFuncRef::new(dataset, project, &wf.source.name),
                    cfg,
                });
                base = (end + 15) & !15;
            }
        }
    }
    for slot in &built {
        let (traced, removed) = slot.as_ref().expect("built");
        inlined_calls.push(*removed);
        expected_instructions.push(traced.cfg.instruction_count() + removed);
    }

    let ground_truth = ground_truth_index(world, &built.iter().map(|b| b.as_ref().expect("built").0.sources()).collect::<Vec<_>>());
    if config.require_all_patterns && config.inline_probability > 0.0 && config.inline_budget > 0 {
        let mut seen = BTreeSet::new();
        for e in ground_truth.bridges.values() {
            seen.extend(e.cross_inlining.iter().map(|c| c.pattern));
        }
        for p in Pattern::CROSS_INLINING {
            if !seen.contains(&p) {
                return Err(Error::PatternStarvation(p));
            }
        }
    }
    Ok(SynthCorpus {
        config: config.clone(),
        projects: world.projects.clone(),
        no_inline,
        inline,
        tables,
        ground_truth,
        source_instructions: world.functions.iter().map(|f| f.base.cfg.instruction_count()).sum(),
        inlined_calls,
        expected_instructions,
    })
}

/// Bridge index straight from provenance: every source function is a bridge
/// (its no-inlining binary maps to it alone) and every inlined-build
/// function with several origins is a cross-inlining target of each of them.
fn ground_truth_index(world: &SourceWorld, origin_sets: &[BTreeSet<usize>]) -> BridgeIndex {
    let mut index = BridgeIndex::default();
    let callees: Vec<BTreeSet<usize>> = world
        .functions
        .iter()
        .map(|f| f.callees.iter().copied().collect())
        .collect();
    for wf in &world.functions {
        index.bridges.insert(
            wf.source.id(),
            BridgeEntry {
                equal: vec![BinFuncRef::new(DATASET_NOINLINE, &world.projects[wf.project], &wf.source.name)],
                cross_inlining: vec![],
            },
        );
    }
    for (t, set) in origin_sets.iter().enumerate() {
        if set.len() < 2 {
            continue;
        }
        let wt = &world.functions[t];
        let target = BinFuncRef::new(DATASET_INLINE, &world.projects[wt.project], &wt.source.name);
        for &b in set {
            let out_deg = set.iter().filter(|&&x| callees[b].contains(&x)).count();
            let in_deg = set.iter().filter(|&&x| callees[x].contains(&b)).count();
            let pattern = if out_deg == 0 {
                if in_deg == 0 {
                    index.diagnostics.isolated_bridges += 1;
                }
                Pattern::Leaf
            } else if in_deg == 0 {
                Pattern::Root
            } else {
                Pattern::Internal
            };
            index
                .bridges
                .get_mut(&world.functions[b].source.id())
                .expect("every function is a bridge")
                .cross_inlining
                .push(CrossEntry {
                    target: target.clone(),
                    pattern,
                });
        }
    }
    for e in index.bridges.values_mut() {
        e.cross_inlining.sort();
    }
    index
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    apply_inlining_policy(&gen_source_world(config)?, config)
}

#[derive(Serialize)]
struct CorpusManifest<'a> {
    config: &'a SynthConfig,
    projects: &'a [String],
    no_inline_functions: usize,
    inline_functions: usize,
    pattern_counts: crate::labeling::PatternCounts,
}

impl SynthCorpus {
    /// Writes graphs (`<dataset>/<binary>.jsonl`), debug tables, the ground
    /// truth and a manifest under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.tables.write_dir(dir)?;
        for (dataset, graphs) in [(DATASET_NOINLINE, &self.no_inline), (DATASET_INLINE, &self.inline)] {
            for project in &self.projects {
                let path = dir.join(dataset).join(format!("{project}.jsonl"));
                write_jsonl(
                    &path,
                    graphs.iter().filter(|g| &g.reference.binary == project).map(|g| &g.cfg),
                )?;
            }
        }
        self.ground_truth.save(&dir.join("ground_truth.json"))?;
        let manifest = CorpusManifest {
            config: &self.config,
            projects: &self.projects,
            no_inline_functions: self.no_inline.len(),
            inline_functions: self.inline.len(),
            pattern_counts: crate::labeling::pattern_distribution(&self.ground_truth),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(id: NodeId, ops: &[(&str, &[&str])]) -> BasicBlock {
        BasicBlock {
            id,
            instructions: ops
                .iter()
                .enumerate()
                .map(|(i, (op, args))| Instruction::new(id as u64 * 100 + i as u64, op, args))
                .collect(),
        }
    }

    fn traced(name: &str, nodes: Vec<BasicBlock>, edges: Vec<(NodeId, NodeId)>, source: usize) -> TracedFunction {
        TracedFunction::untraced(AttributedCfg::from_parts(name, nodes, edges, 0).unwrap().cfg, source)
    }

    #[test]
    fn single_block_callee_adds_one_node() {
        let caller = traced(
            "f",
            vec![block(0, &[("push", &[]), ("call", &["g"])]), block(1, &[("ret", &[])])],
            vec![(0, 1)],
            0,
        );
        let callee = traced("g", vec![block(0, &[("xor", &[]), ("add", &[]), ("ret", &[])])], vec![], 1);
        let out = inline_transform(&caller, &callee, 0).unwrap();
        assert_eq!(out.cfg.node_count(), caller.cfg.node_count() + 1);
        assert_eq!(out.cfg.instruction_count(), caller.cfg.instruction_count() - 1 + 3);
        assert_eq!(out.cfg.edges(), &[(0, 2), (2, 1)]);
        assert_eq!(out.sources(), BTreeSet::from([0, 1]));
    }

    #[test]
    fn diamond_callee_into_linear_caller() {
        // caller: 0 [mov; call g; add] -> 1 [ret]
        let caller = traced(
            "f",
            vec![block(0, &[("mov", &[]), ("call", &["g"]), ("add", &[])]), block(1, &[("ret", &[])])],
            vec![(0, 1)],
            0,
        );
        // callee diamond: 0 -> {1, 2} -> 3
        let callee = traced(
            "g",
            vec![
                block(0, &[("test", &[]), ("je", &[])]),
                block(1, &[("inc", &[])]),
                block(2, &[("dec", &[])]),
                block(3, &[("ret", &[])]),
            ],
            vec![(0, 1), (0, 2), (1, 3), (2, 3)],
            1,
        );
        let out = inline_transform(&caller, &callee, 0).unwrap();
        // prefix 0, caller exit 1, callee 2..=5, suffix 6
        let expected_edges = vec![(0, 2), (2, 3), (2, 4), (3, 5), (4, 5), (5, 6), (6, 1)];
        assert_eq!(out.cfg.edges(), expected_edges.as_slice());
        let ops = |id| out.cfg.node(id).unwrap().opcodes().collect::<Vec<_>>();
        assert_eq!(ops(0), vec!["mov"]);
        assert_eq!(ops(6), vec!["add"]);
        assert_eq!(ops(2), vec!["test", "je"]);
        assert_eq!(out.origins[&6], vec![Origin { source: 0, line: 0 }]);
        assert_eq!(out.origins[&3], vec![Origin { source: 1, line: 0 }]);
    }

    #[test]
    fn call_in_first_slot_replaces_node() {
        let caller = traced(
            "f",
            vec![block(0, &[("call", &["g"]), ("add", &[])]), block(1, &[("ret", &[])])],
            vec![(0, 1)],
            0,
        );
        let callee = traced("g", vec![block(0, &[("nop", &[])])], vec![], 1);
        let out = inline_transform(&caller, &callee, 0).unwrap();
        assert_eq!(out.cfg.entry(), 2);
        assert!(out.cfg.node(0).is_none());
        assert_eq!(out.cfg.edges(), &[(2, 3), (3, 1)]);
    }

    #[test]
    fn missing_site_is_an_error() {
        let caller = traced("f", vec![block(0, &[("mov", &[])])], vec![], 0);
        let callee = traced("g", vec![block(0, &[("nop", &[])])], vec![], 1);
        assert!(matches!(inline_transform(&caller, &callee, 0), Err(Error::SiteNotFound { .. })));
        assert!(matches!(inline_transform(&caller, &callee, 5), Err(Error::SiteNotFound { .. })));
    }

    #[test]
    fn one_function_world() {
        let config = SynthConfig {
            n_projects: 1,
            functions_per_project: 1,
            ..SynthConfig::default()
        };
        let world = gen_source_world(&config).unwrap();
        assert_eq!(world.functions.len(), 1);
        assert!(world.fcg_edges().is_empty());
    }

    #[test]
    fn zero_density_world_is_edgeless() {
        let config = SynthConfig {
            call_density: 0.0,
            ..SynthConfig::default()
        };
        assert!(gen_source_world(&config).unwrap().fcg_edges().is_empty());
    }

    #[test]
    fn no_inlining_when_probability_is_zero() {
        let config = SynthConfig {
            inline_probability: 0.0,
            n_projects: 2,
            ..SynthConfig::default()
        };
        let corpus = generate(&config).unwrap();
        for (a, b) in corpus.no_inline.iter().zip(&corpus.inline) {
            assert_eq!(a.cfg.nodes().len(), b.cfg.nodes().len());
            let ops = |g: &AttributedCfg| g.nodes().iter().flat_map(|n| n.opcodes().map(str::to_string)).collect::<Vec<_>>();
            assert_eq!(ops(&a.cfg), ops(&b.cfg));
            assert_eq!(a.cfg.edges(), b.cfg.edges());
        }
        assert!(corpus.ground_truth.bridges.values().all(|e| e.cross_inlining.is_empty()));
    }

    #[test]
    fn chain_world_has_every_pattern() {
        let config = SynthConfig {
            n_projects: 1,
            functions_per_project: 3,
            call_density: 1.0,
            max_callees: 1,
            inline_budget: usize::MAX,
            inline_probability: 1.0,
            ..SynthConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let mut by_pattern = BTreeMap::new();
        for (b, e) in &corpus.ground_truth.bridges {
            for c in &e.cross_inlining {
                by_pattern.entry(c.pattern).or_insert_with(Vec::new).push((b.clone(), c.target.function.clone()));
            }
        }
        assert_eq!(by_pattern[&Pattern::Root].len(), 2, "chain head and middle each inline their callee");
        assert_eq!(by_pattern[&Pattern::Internal].len(), 1);
        assert_eq!(by_pattern[&Pattern::Leaf].len(), 2);
    }

    #[test]
    fn starvation_is_reported() {
        let config = SynthConfig {
            call_density: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&config), Err(Error::PatternStarvation(_))));
    }
}
