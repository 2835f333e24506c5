use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cidetect::dataset::Variant;
use cidetect_cli::{
    cmd_detect, cmd_eval, cmd_label, cmd_pairs, cmd_sweep, cmd_synth, cmd_train, exit_code, format_counts, RunConfig,
    SplitPart,
};

#[derive(Parser)]
#[command(name = "cidetect", version, about = "Cross-inlining binary function similarity detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat key = value configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for embedding and training fan-out.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        projects: Option<usize>,
        #[arg(long)]
        functions: Option<usize>,
        #[arg(long)]
        mutation_rate: Option<f64>,
    },
    /// Build the bridge index from debug tables.
    Label {
        /// Directory holding srcfuncs.tsv, fcg.tsv and the per-dataset tables.
        tables: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample labeled pairs from one part of the project split.
    Pairs {
        corpus: PathBuf,
        /// leaf, root, internal, mixed or all.
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long, default_value = "test")]
        split: SplitPart,
        #[arg(long)]
        per_label: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector bundle.
    Train {
        corpus: PathBuf,
        /// leaf, root, internal, mixed or all (the three-model ensemble).
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        epoch_size: Option<usize>,
        /// Threshold grid used for selection: paper or extended.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decide whether a query function is inlined into a target function.
    Detect {
        #[arg(long)]
        bundle: PathBuf,
        /// JSONL graph file.
        query: PathBuf,
        target: PathBuf,
        #[arg(long)]
        query_name: Option<String>,
        #[arg(long)]
        target_name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-pattern metrics of a bundle on a pair file.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        pairs: PathBuf,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold sweep CSV of a bundle on a pair file.
    Sweep {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        pairs: PathBuf,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.set_opt("seed", cli.global.seed)?;
    config.set_opt("jobs", cli.global.jobs)?;
    if let Some(jobs) = config.get::<usize>("jobs")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let seed = config.seed()?;
    match cli.command {
        Command::Synth {
            out,
            projects,
            functions,
            mutation_rate,
        } => {
            config.set_opt("synth.n_projects", projects)?;
            config.set_opt("synth.functions_per_project", functions)?;
            config.set_opt("synth.mutation_rate", mutation_rate)?;
            let corpus = cmd_synth(&config.synth_config()?, &out)?;
            print!("{}", format_counts(&cidetect::labeling::pattern_distribution(&corpus.ground_truth)));
        }
        Command::Label { tables, out } => {
            let result = cmd_label(&tables, out.as_deref())?;
            print!("{}", format_counts(&result.counts));
            if result.issues > 0 {
                log::warn!("{} table issues", result.issues);
            }
        }
        Command::Pairs {
            corpus,
            pattern,
            split,
            per_label,
            out,
        } => {
            config.set_opt("pattern", pattern)?;
            config.set_opt("per_label", per_label)?;
            let variant: Variant = config.get_or("pattern", Variant::Ensemble)?;
            let pairs = cmd_pairs(&corpus, variant, split, config.get_or("per_label", 100)?, seed, Some(&out))?;
            println!("{} pairs written to {}", pairs.len(), out.display());
        }
        Command::Train {
            corpus,
            pattern,
            epochs,
            epoch_size,
            grid,
            out,
        } => {
            config.set_opt("pattern", pattern)?;
            config.set_opt("epochs", epochs)?;
            config.set_opt("epoch_size", epoch_size)?;
            config.set_opt("grid", grid)?;
            let variant: Variant = config.get_or("pattern", Variant::Ensemble)?;
            let detector = cmd_train(&corpus, variant, &config.train_options()?, &out)?;
            println!("threshold {} written to {}", detector.threshold(), out.display());
        }
        Command::Detect {
            bundle,
            query,
            target,
            query_name,
            target_name,
            out,
        } => {
            let verdict = cmd_detect(&bundle, &query, query_name.as_deref(), &target, target_name.as_deref())?;
            let text = serde_json::to_string_pretty(&verdict)? + "\n";
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Eval {
            bundle,
            corpus,
            pairs,
            grid,
            out,
        } => {
            config.set_opt("grid", grid)?;
            let result = cmd_eval(&bundle, &corpus, &pairs, config.grid()?, out.as_deref())?;
            print!("{}", result.table);
        }
        Command::Sweep {
            bundle,
            corpus,
            pairs,
            grid,
            out,
        } => {
            config.set_opt("grid", grid)?;
            let csv = cmd_sweep(&bundle, &corpus, &pairs, config.grid()?, out.as_deref())?;
            if out.is_none() {
                print!("{csv}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CIDETECT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
