//! Batch command line for the thinned-CRM models: corpus ingestion,
//! synthetic data generation, Gibbs fitting, evaluation and plot-ready
//! report export.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod runs;

use runs::{ModelKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "thincrm",
    version,
    about = "Thinned-CRM models: fit, evaluate, report"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct McmcArgs {
    /// Total Gibbs sweeps.
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Sweeps discarded before retaining samples.
    #[arg(long, default_value_t = 500)]
    burnin: usize,
    /// Thinning interval between retained samples.
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Independent chains, run in parallel.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct KernelArgs {
    /// Normal-gamma weight prior shape.
    #[arg(long, default_value_t = 0.01)]
    c0: f64,
    /// Normal-gamma weight prior rate.
    #[arg(long, default_value_t = 0.01)]
    d0: f64,
    /// Kernel width dictionary, comma-separated positive reals.
    #[arg(long, value_parser = parse_widths, default_value = "0.01,0.05,0.25,1.0")]
    widths: std::vec::Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a corpus from raw timestamped text (`=== <timestamp>` headers,
    /// blank-line paragraphs chunked three per document).
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Minimum corpus-wide occurrences for a term.
        #[arg(long, default_value_t = 10)]
        min_count: u32,
        /// Fraction of terms kept by TFIDF score; 0 disables the filter.
        #[arg(long, default_value_t = 0.15)]
        tfidf_quantile: f64,
        /// Paragraphs per model document.
        #[arg(long, default_value_t = 3)]
        paragraphs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic image-feature dataset (8 binary 64-pixel
    /// features, covariates 1..20, 100 points each).
    SynthLfm {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        noise_variance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward-simulate a time-varying corpus from the topic model.
    SynthCorpus {
        #[arg(long, default_value_t = 8)]
        k_true: usize,
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        /// Number of equally spaced timestamps.
        #[arg(long, default_value_t = 20)]
        t_count: usize,
        #[arg(long, default_value_t = 1.0)]
        t_start: f64,
        #[arg(long, default_value_t = 1.0)]
        t_step: f64,
        #[arg(long, default_value_t = 30)]
        docs_per_t: usize,
        /// Use windowed activation curves instead of spike-and-slab weights.
        #[arg(long)]
        windows: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the covariate-dependent latent feature model.
    FitLfm {
        /// TSV rows `t <tab> y_1 … y_d`.
        #[arg(long)]
        data: PathBuf,
        /// Truncation level.
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Fit the exchangeable variant (all indicators pinned on).
        #[arg(long = "static")]
        static_model: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the time-varying topic model.
    FitTopics {
        /// Corpus TSV `doc_id <tab> timestamp <tab> token_id <tab> count`.
        #[arg(long)]
        data: PathBuf,
        /// Vocabulary file, one token per line (line number = id).
        #[arg(long)]
        vocab: PathBuf,
        /// Truncation level.
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Dirichlet topic prior.
        #[arg(long, default_value_t = 0.05)]
        alpha_theta: f64,
        /// Per-document rate prior shape.
        #[arg(long, default_value_t = 1.0)]
        e: f64,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Fit the static variant (all indicators pinned on).
        #[arg(long = "static")]
        static_model: bool,
        /// Hold out this fraction of words per document before fitting.
        #[arg(long)]
        holdout_words: Option<f64>,
        /// Hold out this fraction of documents per decade before fitting.
        #[arg(long)]
        holdout_docs: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out perplexity of a topic run against its word-level split.
    Perplexity {
        #[arg(long)]
        run: PathBuf,
        /// Split file; defaults to `split.json` inside the run directory.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Decade prediction accuracy of a topic run against its document split.
    PredictDecade {
        #[arg(long)]
        run: PathBuf,
    },
    /// Export topic/feature reports and activation curves as CSV.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
}

fn parse_widths(s: &str) -> Result<Vec<f64>, String> {
    let widths: Result<Vec<f64>, _> = s.split(',').map(|w| w.trim().parse::<f64>()).collect();
    let widths = widths.map_err(|e| format!("bad width list: {e}"))?;
    if widths.is_empty() || widths.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err("widths must be positive reals".into());
    }
    Ok(widths)
}

/// Output directory resolution: an explicit `--out`, otherwise
/// `$THINCRM_OUT/<name>`.
fn resolve_out(out: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    if let Some(out) = out {
        return Ok(out);
    }
    match std::env::var_os("THINCRM_OUT") {
        Some(root) => Ok(PathBuf::from(root).join(name)),
        None => bail!("no --out given and THINCRM_OUT is not set"),
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            input,
            min_count,
            tfidf_quantile,
            paragraphs,
            out,
        } => {
            let out = resolve_out(out, "ingest")?;
            runs::ingest(&input, min_count, tfidf_quantile, paragraphs, &out)
        }
        Command::SynthLfm {
            seed,
            noise_variance,
            out,
        } => {
            let out = resolve_out(out, &format!("synth-lfm-{seed}"))?;
            runs::synth_lfm(seed, noise_variance, &out)
        }
        Command::SynthCorpus {
            k_true,
            vocab_size,
            t_count,
            t_start,
            t_step,
            docs_per_t,
            windows,
            seed,
            out,
        } => {
            let out = resolve_out(out, &format!("synth-corpus-{seed}"))?;
            runs::synth_corpus(
                k_true, vocab_size, t_count, t_start, t_step, docs_per_t, windows, seed, &out,
            )
        }
        Command::FitLfm {
            data,
            k,
            mcmc,
            kernel,
            static_model,
            out,
        } => {
            let out = resolve_out(out, &format!("fit-lfm-{}", mcmc.seed))?;
            let config = RunConfig {
                model: ModelKind::Lfm,
                k,
                iters: mcmc.iters,
                burnin: mcmc.burnin,
                thin: mcmc.thin,
                chains: mcmc.chains,
                seed: mcmc.seed,
                alpha_theta: 0.0,
                e: 0.0,
                c0: kernel.c0,
                d0: kernel.d0,
                widths: kernel.widths,
                noise_prior: (1.0, 1.0),
                feature_prior: (1.0, 1.0),
                data,
                vocab: None,
                out: out.clone(),
                dynamic: !static_model,
                holdout_words: None,
                holdout_docs: None,
            };
            let dir = runs::run(&config).context("lfm fit failed")?;
            println!("run written to {}", dir.display());
            Ok(())
        }
        Command::FitTopics {
            data,
            vocab,
            k,
            alpha_theta,
            e,
            mcmc,
            kernel,
            static_model,
            holdout_words,
            holdout_docs,
            out,
        } => {
            if holdout_words.is_some() && holdout_docs.is_some() {
                bail!("choose at most one of --holdout-words and --holdout-docs");
            }
            let out = resolve_out(out, &format!("fit-topics-{}", mcmc.seed))?;
            let config = RunConfig {
                model: ModelKind::Topics,
                k,
                iters: mcmc.iters,
                burnin: mcmc.burnin,
                thin: mcmc.thin,
                chains: mcmc.chains,
                seed: mcmc.seed,
                alpha_theta,
                e,
                c0: kernel.c0,
                d0: kernel.d0,
                widths: kernel.widths,
                noise_prior: (1.0, 1.0),
                feature_prior: (1.0, 1.0),
                data,
                vocab: Some(vocab),
                out: out.clone(),
                dynamic: !static_model,
                holdout_words,
                holdout_docs,
            };
            let dir = runs::run(&config).context("topic fit failed")?;
            println!("run written to {}", dir.display());
            Ok(())
        }
        Command::Perplexity { run, split } => runs::perplexity_command(&run, split.as_deref()),
        Command::PredictDecade { run } => runs::predict_decade_command(&run),
        Command::Report { run, top_n } => runs::report_command(&run, top_n),
    }
}
