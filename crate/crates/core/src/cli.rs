//! `qdit` command-line frontend.
//!
//! Exit codes: 0 on success, 2 on flag errors (usage printed), 1 on data or
//! service errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::embed::{embed_texts, EmbedClientConfig};
use crate::facility::SimilarityBackend;
use crate::io::{load_dataset, read_records, read_result, write_embeddings_bin, write_result};
use crate::metrics::{random_baseline, subset_metrics, sweep_alpha, write_sweep_csv};
use crate::select::select;
use crate::types::{Algorithm, Dataset, SelectionConfig, DEFAULT_CLUSTERS, DEFAULT_DENSE_CAP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qdit", version, about = "Quality-diversity subset selection")]
struct Cli {
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select a subset and write the result JSON.
    Select(SelectArgs),
    /// Run one selection per alpha and write a CSV of diversity and quality.
    Sweep(SweepArgs),
    /// Print diversity and mean quality of a subset.
    Score(ScoreArgs),
    /// Embed the `text` field of every record through the embeddings service.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// JSONL dataset.
    #[arg(long)]
    input: PathBuf,
    /// QDITEMB1 embeddings aligned with the JSONL records.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlgoArgs {
    /// Subset size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_parser = PossibleValuesParser::new(Algorithm::ALL.map(Algorithm::as_str))
        .map(|s| s.parse::<Algorithm>().expect("listed value")))]
    algorithm: Algorithm,
    /// Sampling slack for stochastic selection, in (0, 1). Default 0.01.
    #[arg(long, value_parser = parse_open_unit, conflicts_with_all = ["tau", "clusters"])]
    epsilon: Option<f64>,
    /// Similarity threshold for threshold selection, in [0, 1]. Default 0.5.
    #[arg(long, value_parser = parse_unit, conflicts_with = "clusters")]
    tau: Option<f64>,
    /// k-means cluster count for cluster selection. Default 100.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    clusters: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest dataset for which the full similarity matrix is precomputed.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    algo: AlgoArgs,
    /// Quality weight in [0, 1].
    #[arg(long, value_parser = parse_unit)]
    alpha: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    algo: AlgoArgs,
    /// Comma-separated alpha values in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true, value_parser = parse_unit)]
    alphas: Vec<f64>,
    #[arg(long)]
    output: PathBuf,
    /// Append a uniformly random subset of the same size.
    #[arg(long)]
    with_random_baseline: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Result JSON file or comma-separated index list.
    #[arg(long, allow_hyphen_values = true)]
    subset: String,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// JSONL whose records carry a `text` field.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: Option<u64>,
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is outside [0, 1]"))
    }
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(format!("{x} is outside (0, 1)"))
    }
}

enum Failure {
    Usage(clap::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(kind: ErrorKind, message: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, message))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t as usize);
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(Failure::Data(e.into())),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Select(a) => cmd_select(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Score(a) => cmd_score(a),
        Command::Embed(a) => cmd_embed(a),
    }
}

/// Rejects variant parameters given for an algorithm that does not use them.
fn check_variant_flags(a: &AlgoArgs) -> Result<(), Failure> {
    let stochastic = matches!(
        a.algorithm,
        Algorithm::Stochastic | Algorithm::StochasticLazy
    );
    let flags = [
        ("--epsilon", a.epsilon.is_some(), stochastic),
        (
            "--tau",
            a.tau.is_some(),
            a.algorithm == Algorithm::Threshold,
        ),
        (
            "--clusters",
            a.clusters.is_some(),
            a.algorithm == Algorithm::Cluster,
        ),
    ];
    match flags.iter().find(|(_, given, applies)| *given && !*applies) {
        Some((flag, _, _)) => Err(usage(
            ErrorKind::ArgumentConflict,
            format!("{flag} does not apply to --algorithm {}", a.algorithm),
        )),
        None => Ok(()),
    }
}

fn build_config(a: &AlgoArgs, alpha: f64, n: usize) -> SelectionConfig {
    let mut c = SelectionConfig::new(a.algorithm, a.k as usize, alpha).with_seed(a.seed);
    if a.epsilon.is_some() {
        c.epsilon = a.epsilon;
    }
    if a.tau.is_some() {
        c.tau = a.tau;
    }
    if a.algorithm == Algorithm::Cluster {
        c.n_clusters = Some(match a.clusters {
            Some(k) => k as usize,
            None => DEFAULT_CLUSTERS.min(n),
        });
    }
    c
}

fn backend_for(ds: &Dataset, a: &AlgoArgs) -> SimilarityBackend {
    match a.algorithm {
        // the variants never query the backend
        Algorithm::Cluster | Algorithm::Threshold => SimilarityBackend::streaming(ds),
        _ => SimilarityBackend::for_dataset(ds, a.dense_cap),
    }
}

fn load(d: &DataArgs) -> anyhow::Result<Dataset> {
    Ok(load_dataset(&d.input, d.embeddings.as_deref())?)
}

fn cmd_select(a: SelectArgs) -> Result<(), Failure> {
    check_variant_flags(&a.algo)?;
    let start = Instant::now();
    let ds = load(&a.data)?;
    let config = build_config(&a.algo, a.alpha, ds.len());
    config.validate(ds.len()).map_err(anyhow::Error::from)?;
    let backend = backend_for(&ds, &a.algo);
    let result = select(&ds, &backend, &config).map_err(anyhow::Error::from)?;
    write_result(&result, &ds, &a.output).map_err(anyhow::Error::from)?;
    eprintln!(
        "selected k={} alpha={} diversity={:.6} mean_quality={:.6}{} time={:.3}s",
        result.selected.len(),
        config.alpha,
        result.diversity,
        result.mean_quality,
        if result.truncated { " (truncated)" } else { "" },
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    check_variant_flags(&a.algo)?;
    let start = Instant::now();
    let ds = load(&a.data)?;
    let base = build_config(&a.algo, a.alphas[0], ds.len());
    base.validate(ds.len()).map_err(anyhow::Error::from)?;
    let backend = backend_for(&ds, &a.algo);
    let mut points = sweep_alpha(&ds, &backend, &a.alphas, &base).map_err(anyhow::Error::from)?;
    if a.with_random_baseline {
        points.push(random_baseline(&ds, base.k_select, base.seed).map_err(anyhow::Error::from)?);
    }
    write_sweep_csv(&points, &a.output).map_err(anyhow::Error::from)?;
    eprintln!(
        "sweep rows={} k={} algorithm={} time={:.3}s",
        points.len(),
        base.k_select,
        base.algorithm,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn is_index_list(s: &str) -> bool {
    s.chars()
        .all(|c| c.is_ascii_digit() || c == ',' || c.is_whitespace())
}

fn subset_from_arg(arg: &str, ds: &Dataset) -> anyhow::Result<Vec<usize>> {
    if is_index_list(arg) {
        return arg
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .with_context(|| format!("bad index {s:?}"))
            })
            .collect();
    }
    let path = Path::new(arg);
    let file = read_result(path)?;
    if file.selected_ids.len() != file.selected_indices.len() {
        bail!(
            "{}: selected_ids and selected_indices differ in length",
            path.display()
        );
    }
    for (id, &i) in file.selected_ids.iter().zip(&file.selected_indices) {
        if i >= ds.len() || ds.id(i) != id {
            bail!(
                "{}: index {i} does not hold id {id:?} in this dataset",
                path.display()
            );
        }
    }
    Ok(file.selected_indices)
}

#[derive(Serialize)]
struct ScoreReport {
    diversity: f64,
    mean_quality: f64,
    n_subset: usize,
    n_total: usize,
}

fn cmd_score(a: ScoreArgs) -> Result<(), Failure> {
    let ds = load(&a.data)?;
    let subset = subset_from_arg(&a.subset, &ds)?;
    if subset.is_empty() {
        return Err(anyhow::anyhow!("subset is empty").into());
    }
    let (diversity, mean_quality) = subset_metrics(&ds, &subset).map_err(anyhow::Error::from)?;
    let report = ScoreReport {
        diversity,
        mean_quality,
        n_subset: subset.len(),
        n_total: ds.len(),
    };
    println!(
        "{}",
        serde_json::to_string(&report).map_err(anyhow::Error::from)?
    );
    Ok(())
}

#[derive(Serialize)]
struct EmbedReport {
    count: usize,
    dim: usize,
}

fn cmd_embed(a: EmbedArgs) -> Result<(), Failure> {
    let mut cfg =
        EmbedClientConfig::from_env().map_err(|e| usage(ErrorKind::MissingRequiredArgument, e))?;
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b as usize;
    }
    let records = read_records(&a.input).map_err(anyhow::Error::from)?;
    let mut texts = Vec::with_capacity(records.len());
    for (line, rec) in records {
        match rec.text {
            Some(t) => texts.push(t),
            None => {
                return Err(
                    anyhow::anyhow!("{}:{line}: record has no text", a.input.display()).into(),
                );
            }
        }
    }
    let outcome = embed_texts(&texts, &cfg).map_err(anyhow::Error::from)?;
    write_embeddings_bin(&outcome.matrix, &a.output).map_err(anyhow::Error::from)?;
    eprintln!(
        "embedded {} texts in {} requests ({} retries)",
        outcome.matrix.n, outcome.requests, outcome.retries
    );
    let report = EmbedReport {
        count: outcome.matrix.n,
        dim: outcome.matrix.dim,
    };
    println!(
        "{}",
        serde_json::to_string(&report).map_err(anyhow::Error::from)?
    );
    Ok(())
}
