use std::collections::{BTreeMap, BTreeSet};

use cidetect::dataset::GraphTable;
use cidetect::labeling::{pattern_distribution, LabelingTables, Pattern};
use cidetect::synth::{gen_source_world, generate, SynthConfig};

fn config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_projects: 4,
        functions_per_project: 25,
        call_density: 0.25,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn call_graph_is_acyclic() {
    for seed in 0..5 {
        let world = gen_source_world(&config(seed)).unwrap();
        assert_eq!(world.functions.len(), 100);
        let edges = world.fcg_edges();
        let mut indegree: BTreeMap<String, usize> = world.functions.iter().map(|f| (f.source.id(), 0)).collect();
        for (_, callee) in &edges {
            *indegree.get_mut(callee).unwrap() += 1;
        }
        // Kahn's algorithm consumes every node only if there is no cycle
        let mut ready: Vec<String> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| k.clone()).collect();
        let mut seen = 0;
        while let Some(n) = ready.pop() {
            seen += 1;
            for (_, callee) in edges.iter().filter(|(caller, _)| *caller == n) {
                let d = indegree.get_mut(callee).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(callee.clone());
                }
            }
        }
        assert_eq!(seen, 100, "seed {seed}");
        for (caller, callee) in &edges {
            assert_eq!(caller.split('/').next(), callee.split('/').next(), "calls stay inside a project");
        }
    }
}

#[test]
fn written_corpus_reloads_and_relabels() {
    let corpus = generate(&config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write_dir(dir.path()).unwrap();

    let loaded = GraphTable::load(dir.path()).unwrap();
    let built = GraphTable::from_corpus(&corpus);
    assert_eq!(loaded.len(), built.len());
    for r in built.refs() {
        assert_eq!(loaded.get(r), built.get(r), "{r}");
    }

    let tables = LabelingTables::read_dir(dir.path()).unwrap();
    assert_eq!(tables, corpus.tables);
    assert_eq!(tables.label().index.bridges, corpus.ground_truth.bridges);
    let counts = pattern_distribution(&corpus.ground_truth);
    for p in Pattern::CROSS_INLINING {
        assert!(counts.get(p) > 0, "{p}");
    }
}

#[test]
fn every_call_is_inlined_or_kept() {
    let corpus = generate(&SynthConfig {
        mutation_rate: 0.0,
        ..config(11)
    })
    .unwrap();
    for (i, g) in corpus.inline.iter().enumerate() {
        assert_eq!(
            g.cfg.instruction_count() + corpus.inlined_calls[i],
            corpus.expected_instructions[i],
            "{}",
            g.reference
        );
    }
    let no_inline: usize = corpus.no_inline.iter().map(|g| g.cfg.instruction_count()).sum();
    assert_eq!(no_inline, corpus.source_instructions);
}

#[test]
fn mutation_changes_only_opcodes() {
    let plain = generate(&config(5)).unwrap();
    let mutated = generate(&SynthConfig {
        mutation_rate: 0.2,
        ..config(5)
    })
    .unwrap();
    assert_eq!(plain.no_inline, mutated.no_inline);
    assert_eq!(plain.ground_truth, mutated.ground_truth);
    let mut changed = 0;
    for (a, b) in plain.inline.iter().zip(&mutated.inline) {
        assert_eq!(a.cfg.edges(), b.cfg.edges());
        assert_eq!(a.cfg.instruction_count(), b.cfg.instruction_count());
        let ops = |g: &cidetect::acfg::AttributedCfg| g.nodes().iter().flat_map(|n| n.opcodes().map(str::to_owned)).collect::<Vec<_>>();
        changed += ops(&a.cfg).iter().zip(ops(&b.cfg)).filter(|(x, y)| *x != y).count();
    }
    assert!(changed > 0);
    let names: BTreeSet<_> = mutated.inline.iter().map(|g| g.reference.function.clone()).collect();
    assert_eq!(names.len(), mutated.inline.len());
}
