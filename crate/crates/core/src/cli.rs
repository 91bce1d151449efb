//! Command-line front end.
//!
//! Every command except `build` and `bench` works on an existing snapshot
//! directory and saves it back when it changed anything. Output goes to the
//! supplied writer so runs can be captured and compared.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchParams};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::funnel::format_trace;
use crate::ingest::read_corpus;
use crate::persist::{self, EMBEDDING_CACHE};
use crate::quality::evolve::{innovation_round, run_loop, LoopParams, RoundOptions};
use crate::repo::{Providers, Repository};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "methodtree", version, about = "Explainable method-recombination engine")]
pub struct Cli {
    /// Engine configuration (TOML). Used by `build` and `bench`; other
    /// commands read the configuration stored in the snapshot.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Dot,
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TreeKind {
    Provenance,
    Abstraction,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a corpus and write a new snapshot.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, visible_alias = "out")]
        snapshot: PathBuf,
    },
    /// Retrieve leaves and ancestors for a question.
    Query {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        q: String,
    },
    /// Run one synthesis round and write accepted candidates back.
    Innovate {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        q: String,
        #[arg(long)]
        j: Option<usize>,
        #[arg(long)]
        operator: Option<String>,
        /// Keep threshold; defaults to the configured one.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the autonomous gap-driven loop.
    Loop {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Summarize a snapshot.
    Stats {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Render a tree as DOT or a retrieval trace.
    Export {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value = "dot")]
        format: ExportFormat,
        #[arg(long, value_enum, default_value = "provenance")]
        tree: TreeKind,
        /// Question for `--format trace`.
        #[arg(long)]
        q: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure funnel against flat retrieval cost.
    Bench {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        /// Independent corpora per size.
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        json: bool,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Provider { .. } => EXIT_PROVIDER,
        Error::Config(_) | Error::Validation(_) => EXIT_USAGE,
        _ => 1,
    }
}

fn providers_for(config: &Config, snapshot: &Path) -> Result<Providers> {
    let mut cfg = config.clone();
    cfg.apply_env(|k| std::env::var(k).ok());
    Providers::from_config(&cfg, Some(&snapshot.join(EMBEDDING_CACHE)))
}

fn open(snapshot: &Path) -> Result<(Repository, Providers)> {
    let repo = persist::load(snapshot)?;
    let providers = providers_for(&repo.config, snapshot)?;
    Ok((repo, providers))
}

fn close(repo: &Repository, providers: &Providers, snapshot: &Path) -> Result<()> {
    persist::save(repo, snapshot)?;
    providers.flush_cache()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let base_config = || match &cli.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    };
    match &cli.command {
        Command::Build { corpus, snapshot } => {
            let config = base_config()?;
            let docs = read_corpus(corpus)?;
            std::fs::create_dir_all(snapshot)?;
            let providers = providers_for(&config, snapshot)?;
            let (repo, report) = Repository::build(&docs, config, &providers)?;
            close(&repo, &providers, snapshot)?;
            writeln!(out, "documents: {}", report.documents)?;
            writeln!(out, "segments: {} ({} rejected)", report.segments, report.rejected_segments)?;
            writeln!(out, "mentions: {}", report.mentions)?;
            writeln!(out, "nodes: {}", report.nodes)?;
            writeln!(out, "edges: {}", report.edges)?;
            writeln!(out, "merged components: {}", report.merged_components)?;
            writeln!(out, "demotions: {}", report.demotions)?;
            writeln!(out, "levels: {:?}", report.levels)?;
        }
        Command::Query { snapshot, q } => {
            let (mut repo, providers) = open(snapshot)?;
            let ctx = repo.query(q, &providers)?;
            writeln!(out, "query: {q}")?;
            writeln!(out, "leaves:")?;
            for l in &ctx.leaves {
                writeln!(out, "  {} {:.4} {}", l.id, l.similarity, repo.node(l.id)?.name)?;
            }
            writeln!(out, "ancestors:")?;
            for a in &ctx.ancestors {
                writeln!(
                    out,
                    "  {} depth={} influence={:.4} from={} {}",
                    a.id,
                    a.depth,
                    a.influence,
                    a.source_leaf,
                    repo.node(a.id)?.name
                )?;
            }
            writeln!(out, "trace:")?;
            out.write_all(format_trace(&ctx.trace).as_bytes())?;
            let cost = repo.cost(&ctx);
            writeln!(
                out,
                "cost: comparisons={} selected={} budget={} bound={:.4}",
                cost.total_comparisons, cost.selected_total, cost.budget_total, cost.bound
            )?;
            close(&repo, &providers, snapshot)?;
        }
        Command::Innovate {
            snapshot,
            q,
            j,
            operator,
            threshold,
        } => {
            let (mut repo, providers) = open(snapshot)?;
            let options = RoundOptions {
                j: j.unwrap_or(repo.config.synthesis.j),
                threshold: threshold.unwrap_or(repo.config.scoring.threshold),
                operator: operator.clone(),
                max_verifications: repo.config.evolve.max_calls,
            };
            let round = innovation_round(&mut repo, q, &options, &providers)?;
            writeln!(
                out,
                "operator: {}{} ({})",
                round.selection.operator,
                if round.selection.forced { " [forced]" } else { "" },
                round.selection.condition
            )?;
            writeln!(out, "generated: {}", round.generated)?;
            for d in &round.diagnostics {
                writeln!(out, "diagnostic: variant {}: {}", d.variant, d.message)?;
            }
            let ev = &round.evaluation;
            writeln!(
                out,
                "{} kept, {} rejected, {} pending",
                ev.accepted.len(),
                ev.rejected.len(),
                ev.pending.len()
            )?;
            for (c, id) in round.written() {
                writeln!(
                    out,
                    "{} {} score={:.4} status={:?}",
                    id,
                    c.id,
                    c.score.unwrap_or(0.0),
                    c.status
                )?;
                writeln!(out, "  summary: {}", c.summary)?;
                for p in &c.parents {
                    writeln!(
                        out,
                        "  parent {} weight={:.2} share={:.4}: {}",
                        p.id, p.weight, p.share, p.explanation
                    )?;
                }
                writeln!(out, "  derivation: {}", repo.derivation_chain(id))?;
                writeln!(out, "  navigation: {}", repo.navigation_path(id))?;
            }
            for c in &ev.rejected {
                writeln!(out, "rejected {} score={:.4}", c.id, c.score.unwrap_or(0.0))?;
            }
            writeln!(out, "version: {}", round.writeback.version)?;
            close(&repo, &providers, snapshot)?;
        }
        Command::Loop { snapshot, iterations } => {
            let (mut repo, providers) = open(snapshot)?;
            let mut params = LoopParams::from_repo(&repo);
            if let Some(n) = iterations {
                params.iterations = *n;
            }
            let report = run_loop(&mut repo, &params, &providers)?;
            out.write_all(report.to_jsonl().as_bytes())?;
            close(&repo, &providers, snapshot)?;
        }
        Command::Stats { snapshot } => {
            let repo = persist::load(snapshot)?;
            let manifest = persist::read_manifest(snapshot)?;
            writeln!(out, "version: {}", repo.version)?;
            writeln!(out, "nodes: {}", repo.nodes.len())?;
            for (status, n) in repo.status_histogram() {
                writeln!(out, "  {status}: {n}")?;
            }
            writeln!(out, "edges: {}", repo.edges.len())?;
            writeln!(out, "demotions: {}", repo.demotions.len())?;
            writeln!(out, "clusters: {}", repo.abstraction.cluster_count())?;
            writeln!(out, "levels: {:?}", repo.abstraction.level_sizes())?;
            writeln!(out, "rebuilds: {}", repo.abstraction.rebuilds())?;
            writeln!(out, "audit records: {}", repo.audit.len())?;
            writeln!(out, "config: {}", manifest.config_hash)?;
        }
        Command::Export {
            snapshot,
            format,
            tree,
            q,
            out: path,
        } => {
            let text = match format {
                ExportFormat::Dot => {
                    let repo = persist::load(snapshot)?;
                    match tree {
                        TreeKind::Provenance => repo
                            .provenance
                            .to_dot(|id| repo.nodes.get(&id).map(|n| n.name.clone()).unwrap_or_default()),
                        TreeKind::Abstraction => repo.abstraction.to_dot(),
                    }
                }
                ExportFormat::Trace => {
                    let q = q
                        .as_deref()
                        .ok_or_else(|| Error::Validation("--format trace needs --q".into()))?;
                    let (mut repo, providers) = open(snapshot)?;
                    let ctx = repo.query(q, &providers)?;
                    close(&repo, &providers, snapshot)?;
                    format_trace(&ctx.trace)
                }
            };
            match path {
                Some(p) => persist::write_atomic(p, text.as_bytes())?,
                None => out.write_all(text.as_bytes())?,
            }
        }
        Command::Bench {
            sizes,
            trials,
            replicates,
            json,
        } => {
            let config = base_config()?;
            let mut params = BenchParams {
                dimension: config.dimension,
                funnel: config.funnel_params(),
                seed: config.seed,
                ..BenchParams::default()
            };
            if let Some(s) = sizes {
                params.sizes = s.clone();
            }
            if let Some(t) = trials {
                params.trials = *t;
            }
            if let Some(r) = replicates {
                params.replicates = *r;
            }
            let report = bench::run(&params)?;
            if *json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                out.write_all(report.to_table().as_bytes())?;
            }
        }
    }
    Ok(())
}
