//! Run orchestration: output directories, chain execution, evaluation and
//! report export.
//!
//! Every run directory contains a `config.json` snapshot sufficient to
//! replay the run bit-exactly. Trace files are append-logs (flushed per
//! sweep so a crashed run keeps its partial trace); all other files are
//! written atomically via a temp-file rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use thincrm::corpus::{Corpus, IngestConfig, RawDocument};
use thincrm::eval::{self, EvalReport, HeldoutSplit};
use thincrm::lfm::{fit_lfm, LfmConfig, LfmData, LfmState};
use thincrm::mcmc::McmcSchedule;
use thincrm::topics::{fit_topics, top_words, TopicConfig, TopicState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lfm,
    Topics,
}

/// Snapshot of everything needed to replay a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub k: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub alpha_theta: f64,
    pub e: f64,
    pub c0: f64,
    pub d0: f64,
    pub widths: Vec<f64>,
    pub noise_prior: (f64, f64),
    pub feature_prior: (f64, f64),
    pub data: PathBuf,
    pub vocab: Option<PathBuf>,
    pub out: PathBuf,
    pub dynamic: bool,
    pub holdout_words: Option<f64>,
    pub holdout_docs: Option<f64>,
}

impl RunConfig {
    fn schedule(&self) -> McmcSchedule {
        McmcSchedule {
            iterations: self.iters,
            burnin: self.burnin,
            thin: self.thin,
        }
    }

    fn chain_seed(&self, chain: usize) -> u64 {
        self.seed.wrapping_add(chain as u64)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let bytes = if pretty {
        serde_json::to_vec_pretty(value)?
    } else {
        serde_json::to_vec(value)?
    };
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Executes a fit described by `config` and returns the output directory.
/// A completed run holds the config snapshot, per-chain traces and samples,
/// report CSVs, and — when the run was fit against a held-out split — the
/// matching evaluation JSON.
pub fn run(config: &RunConfig) -> Result<PathBuf> {
    config.schedule().validate()?;
    if config.chains == 0 {
        bail!("at least one chain is required");
    }
    fs::create_dir_all(&config.out)?;
    write_json_atomic(&config.out.join("config.json"), config, true)?;

    match config.model {
        ModelKind::Topics => run_topics(config)?,
        ModelKind::Lfm => run_lfm(config)?,
    }

    report_command(&config.out, 5)?;
    if config.model == ModelKind::Topics {
        if config.holdout_words.is_some() {
            perplexity_command(&config.out, None)?;
        } else if config.holdout_docs.is_some() {
            predict_decade_command(&config.out)?;
        }
    }
    Ok(config.out.clone())
}

fn run_topics(config: &RunConfig) -> Result<()> {
    let vocab = config
        .vocab
        .as_ref()
        .ok_or_else(|| anyhow!("topic fits need --vocab"))?;
    let corpus = Corpus::read_tsv(&config.data, vocab)?;

    // Optional held-out split, persisted beside the config.
    let train = if let Some(fraction) = config.holdout_words {
        let mut rng = thincrm::rng::substream(config.seed, 7);
        let (train, split) = eval::split_words(&corpus, fraction, config.seed, &mut rng)?;
        write_json_atomic(&config.out.join("split.json"), &split, false)?;
        train
    } else if let Some(fraction) = config.holdout_docs {
        let mut rng = thincrm::rng::substream(config.seed, 7);
        let (train, split) =
            eval::split_documents_by_decade(&corpus, fraction, config.seed, &mut rng)?;
        write_json_atomic(&config.out.join("split.json"), &split, false)?;
        train
    } else {
        corpus
    };

    let topic_config = TopicConfig {
        truncation: config.k,
        alpha_theta: config.alpha_theta,
        doc_rate_shape: config.e,
        c0: config.c0,
        d0: config.d0,
        width_dictionary: config.widths.clone(),
        dynamic: config.dynamic,
        ..TopicConfig::default()
    };
    let schedule = config.schedule();

    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for chain in 0..config.chains {
            let train = &train;
            let topic_config = &topic_config;
            handles.push(scope.spawn(move || -> Result<()> {
                let dir = chain_dir(&config.out, chain);
                let mut sink = ChainSink::create(&dir)?;
                fit_topics(
                    train,
                    topic_config,
                    &schedule,
                    config.chain_seed(chain),
                    |row, state| sink.record(row, state).map_err(to_thincrm_error),
                )?;
                Ok(())
            }));
        }
        join_chains(handles)
    })
}

fn run_lfm(config: &RunConfig) -> Result<()> {
    let data = LfmData::from_tsv(&fs::read_to_string(&config.data)?)?;
    let lfm_config = LfmConfig {
        truncation: config.k,
        c0: config.c0,
        d0: config.d0,
        width_dictionary: config.widths.clone(),
        noise_prior: config.noise_prior,
        feature_prior: config.feature_prior,
        dynamic: config.dynamic,
        curve_grid: Vec::new(),
    };
    let schedule = config.schedule();

    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for chain in 0..config.chains {
            let data = &data;
            let lfm_config = &lfm_config;
            handles.push(scope.spawn(move || -> Result<()> {
                let dir = chain_dir(&config.out, chain);
                let mut sink = ChainSink::create(&dir)?;
                fit_lfm(
                    data,
                    lfm_config,
                    &schedule,
                    config.chain_seed(chain),
                    |row, state| sink.record(row, state).map_err(to_thincrm_error),
                )?;
                Ok(())
            }));
        }
        join_chains(handles)
    })
}

fn to_thincrm_error(err: anyhow::Error) -> thincrm::Error {
    thincrm::Error::Io(std::io::Error::other(format!("{err:#}")))
}

fn join_chains(handles: Vec<std::thread::ScopedJoinHandle<'_, Result<()>>>) -> Result<()> {
    let mut first_err = None;
    for handle in handles {
        match handle.join() {
            Ok(Ok(())) => {}
            Ok(Err(err)) => first_err = first_err.or(Some(err)),
            Err(_) => first_err = first_err.or(Some(anyhow!("chain thread panicked"))),
        }
    }
    match first_err {
        None => Ok(()),
        Some(err) => Err(err),
    }
}

fn chain_dir(out: &Path, chain: usize) -> PathBuf {
    out.join(format!("chain-{chain}"))
}

/// Streams the per-sweep trace (flushed per row) and retained samples.
struct ChainSink {
    trace: fs::File,
    samples_dir: PathBuf,
    retained: usize,
}

impl ChainSink {
    fn create(dir: &Path) -> Result<ChainSink> {
        let samples_dir = dir.join("samples");
        fs::create_dir_all(&samples_dir)?;
        let mut trace = fs::File::create(dir.join("trace.csv"))?;
        writeln!(trace, "iteration,k_active,log_likelihood")?;
        Ok(ChainSink {
            trace,
            samples_dir,
            retained: 0,
        })
    }

    fn record<S: Serialize>(
        &mut self,
        row: &thincrm::mcmc::TraceRow,
        state: Option<&S>,
    ) -> Result<()> {
        writeln!(
            self.trace,
            "{},{},{}",
            row.iteration, row.k_active, row.log_likelihood
        )?;
        self.trace.flush()?;
        if let Some(state) = state {
            let path = self
                .samples_dir
                .join(format!("sample-{:04}.json", self.retained));
            write_json_atomic(&path, state, false)?;
            self.retained += 1;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generators and ingestion
// ---------------------------------------------------------------------------

pub fn ingest(
    input: &Path,
    min_count: u32,
    tfidf_quantile: f64,
    paragraphs: usize,
    out: &Path,
) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let mut raws: Vec<RawDocument> = Vec::new();
    for line in text.lines() {
        if let Some(header) = line.strip_prefix("===") {
            let timestamp: f64 = header
                .trim()
                .parse()
                .with_context(|| format!("bad timestamp header: {line}"))?;
            raws.push(RawDocument {
                timestamp,
                text: String::new(),
            });
        } else if let Some(current) = raws.last_mut() {
            current.text.push_str(line);
            current.text.push('\n');
        } else if !line.trim().is_empty() {
            bail!("input must start with a `=== <timestamp>` header");
        }
    }
    let config = IngestConfig {
        min_count,
        tfidf_quantile,
        paragraphs_per_doc: paragraphs,
    };
    let (corpus, stats) = thincrm::corpus::ingest(&raws, &config)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("corpus.tsv"), corpus.to_tsv().as_bytes())?;
    write_atomic(
        &out.join("vocab.txt"),
        (corpus.vocab.join("\n") + "\n").as_bytes(),
    )?;
    write_json_atomic(&out.join("ingest.json"), &stats, true)?;
    println!(
        "ingested {} documents ({} dropped empty), vocabulary {} of {}",
        stats.docs_kept, stats.docs_dropped_empty, stats.vocab_after, stats.vocab_before
    );
    Ok(())
}

pub fn synth_lfm(seed: u64, noise_variance: f64, out: &Path) -> Result<()> {
    let truth = eval::generate_bag_of_items_with(seed, noise_variance);
    fs::create_dir_all(out)?;
    write_atomic(&out.join("data.tsv"), truth.data.to_tsv().as_bytes())?;
    write_json_atomic(&out.join("truth.json"), &truth, false)?;
    println!(
        "wrote {} points of dimension {} to {}",
        truth.data.n_points(),
        truth.data.dim(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn synth_corpus(
    k_true: usize,
    vocab_size: usize,
    t_count: usize,
    t_start: f64,
    t_step: f64,
    docs_per_t: usize,
    windows: bool,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let config = eval::SynthCorpusConfig {
        k_true,
        vocab_size,
        timestamps: (0..t_count).map(|i| t_start + t_step * i as f64).collect(),
        docs_per_timestamp: docs_per_t,
        alpha_gen: 0.1,
        // Shape 2 per topic keeps the low tail of the rates thin, so few
        // documents come out empty.
        process_shape: 2.0 * k_true as f64,
        process_rate: 2.0 * k_true as f64 / 40.0,
        doc_rate_shape: 2.0,
        curves: if windows {
            eval::CurveKind::Windows {
                on_activation: 2.5,
                off_activation: -2.5,
            }
        } else {
            eval::CurveKind::SpikeSlab { variance: 4.0 }
        },
    };
    let truth = eval::generate_synthetic_corpus(&config, seed)?;
    fs::create_dir_all(out)?;
    truth
        .corpus
        .write_tsv(&out.join("corpus.tsv"), &out.join("vocab.txt"))?;
    write_json_atomic(&out.join("truth.json"), &truth, false)?;
    println!(
        "wrote {} documents over {} timestamps to {}",
        truth.corpus.n_docs(),
        truth.corpus.timestamps.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation and reports
// ---------------------------------------------------------------------------

struct LoadedRun {
    config: RunConfig,
    split: Option<HeldoutSplit>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    let split_path = dir.join("split.json");
    let split = if split_path.exists() {
        Some(read_json(&split_path)?)
    } else {
        None
    };
    Ok(LoadedRun { config, split })
}

fn chain_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("chain-"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no chain directories under {}", dir.display());
    }
    Ok(dirs)
}

fn load_chain_samples<T: for<'de> Deserialize<'de>>(chain: &Path) -> Result<Vec<T>> {
    let mut files: Vec<PathBuf> = fs::read_dir(chain.join("samples"))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| read_json(p)).collect()
}

/// Reconstructs the train corpus a run was fit on: the original data minus
/// the persisted split.
fn train_corpus(config: &RunConfig, split: Option<&HeldoutSplit>) -> Result<Corpus> {
    let vocab = config
        .vocab
        .as_ref()
        .ok_or_else(|| anyhow!("run has no vocabulary path"))?;
    let corpus = Corpus::read_tsv(&config.data, vocab)?;
    let Some(split) = split else {
        return Ok(corpus);
    };
    match split {
        HeldoutSplit::Words { held, .. } => {
            let mut train = corpus;
            for (doc, held_doc) in train.docs.iter_mut().zip(held) {
                for &(p, h) in held_doc {
                    let slot = doc
                        .counts
                        .iter_mut()
                        .find(|(tp, _)| *tp == p)
                        .ok_or_else(|| anyhow!("split references token {p} missing from data"))?;
                    slot.1 = slot
                        .1
                        .checked_sub(h)
                        .ok_or_else(|| anyhow!("split holds more of token {p} than observed"))?;
                }
                doc.counts.retain(|&(_, w)| w > 0);
            }
            Ok(train)
        }
        HeldoutSplit::Documents { heldout_docs, .. } => {
            let mut train = corpus;
            train.docs = train
                .docs
                .into_iter()
                .enumerate()
                .filter(|(n, _)| heldout_docs.binary_search(n).is_err())
                .map(|(_, d)| d)
                .collect();
            Ok(train)
        }
    }
}

pub fn perplexity_command(run_dir: &Path, split_path: Option<&Path>) -> Result<()> {
    let run = load_run(run_dir)?;
    if run.config.model != ModelKind::Topics {
        bail!("perplexity applies to topic runs");
    }
    let split: HeldoutSplit = match split_path {
        Some(p) => read_json(p)?,
        None => run
            .split
            .clone()
            .ok_or_else(|| anyhow!("run has no split.json; pass --split"))?,
    };

    let mut pooled: Vec<TopicState> = Vec::new();
    let mut per_chain = Vec::new();
    for chain in chain_dirs(run_dir)? {
        let samples: Vec<TopicState> = load_chain_samples(&chain)?;
        per_chain.push(eval::perplexity(&samples, &split)?);
        pooled.extend(samples);
    }
    let value = eval::perplexity(&pooled, &split)?;
    let std = if per_chain.len() > 1 {
        let mean = per_chain.iter().sum::<f64>() / per_chain.len() as f64;
        (per_chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (per_chain.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let report = EvalReport {
        metric: "perplexity".into(),
        value,
        std,
        n_folds: per_chain.len(),
        seed: run.config.seed,
    };
    let eval_dir = run_dir.join("eval");
    fs::create_dir_all(&eval_dir)?;
    write_json_atomic(&eval_dir.join("perplexity.json"), &report, true)?;
    println!("perplexity {value:.4} (chain std {std:.4})");
    Ok(())
}

pub fn predict_decade_command(run_dir: &Path) -> Result<()> {
    let run = load_run(run_dir)?;
    if run.config.model != ModelKind::Topics {
        bail!("decade prediction applies to topic runs");
    }
    let Some(HeldoutSplit::Documents { heldout_docs, .. }) = &run.split else {
        bail!("run has no document-level split.json (fit with --holdout-docs)");
    };
    let vocab = run
        .config
        .vocab
        .as_ref()
        .ok_or_else(|| anyhow!("run has no vocabulary path"))?;
    let corpus = Corpus::read_tsv(&run.config.data, vocab)?;

    let mut samples: Vec<TopicState> = Vec::new();
    for chain in chain_dirs(run_dir)? {
        samples.extend(load_chain_samples::<TopicState>(&chain)?);
    }

    let mut correct = 0usize;
    let mut l1 = 0.0;
    for &n in heldout_docs {
        let doc = &corpus.docs[n];
        let truth = eval::decade_of(corpus.timestamps[doc.timestamp_index]);
        let predicted = eval::decade_predict(&samples, &corpus.timestamps, &doc.counts)?;
        if predicted == truth {
            correct += 1;
        }
        l1 += ((predicted - truth).abs() as f64) / 10.0;
    }
    let n = heldout_docs.len().max(1);
    let accuracy = correct as f64 / n as f64;
    let reports = vec![
        EvalReport {
            metric: "decade_accuracy".into(),
            value: accuracy,
            std: 0.0,
            n_folds: 1,
            seed: run.config.seed,
        },
        EvalReport {
            metric: "decade_l1".into(),
            value: l1 / n as f64,
            std: 0.0,
            n_folds: 1,
            seed: run.config.seed,
        },
    ];
    let eval_dir = run_dir.join("eval");
    fs::create_dir_all(&eval_dir)?;
    write_json_atomic(&eval_dir.join("decade.json"), &reports, true)?;
    println!(
        "decade accuracy {accuracy:.4}, mean L1 {:.4} over {n} held-out documents",
        l1 / n as f64
    );
    Ok(())
}

pub fn report_command(run_dir: &Path, top_n: usize) -> Result<()> {
    let run = load_run(run_dir)?;
    let report_dir = run_dir.join("report");
    fs::create_dir_all(&report_dir)?;
    match run.config.model {
        ModelKind::Topics => {
            let train = train_corpus(&run.config, run.split.as_ref())?;
            let mut samples: Vec<TopicState> = Vec::new();
            for chain in chain_dirs(run_dir)? {
                samples.extend(load_chain_samples::<TopicState>(&chain)?);
            }
            if samples.is_empty() {
                bail!("no retained samples");
            }

            // Top words per topic.
            let mut csv = String::from("topic,rank,token_id,token,probability\n");
            for (k, words) in top_words(&samples, top_n)?.iter().enumerate() {
                for (rank, &(p, prob)) in words.iter().enumerate() {
                    csv.push_str(&format!("{k},{},{p},{},{prob}\n", rank + 1, train.vocab[p]));
                }
            }
            write_atomic(&report_dir.join("topics.csv"), csv.as_bytes())?;

            // Activation curves: mean of r over documents per timestamp,
            // averaged over samples.
            let k_trunc = samples[0].truncation();
            let mut csv = String::from("topic,timestamp,activation\n");
            for k in 0..k_trunc {
                let mut mean = vec![0.0; train.timestamps.len()];
                for s in &samples {
                    for (m, v) in mean.iter_mut().zip(s.activation_curve(&train, k)) {
                        *m += v;
                    }
                }
                for (ti, &t) in train.timestamps.iter().enumerate() {
                    csv.push_str(&format!("{k},{t},{}\n", mean[ti] / samples.len() as f64));
                }
            }
            write_atomic(&report_dir.join("activation.csv"), csv.as_bytes())?;
        }
        ModelKind::Lfm => {
            let mut samples: Vec<LfmState> = Vec::new();
            for chain in chain_dirs(run_dir)? {
                samples.extend(load_chain_samples::<LfmState>(&chain)?);
            }
            if samples.is_empty() {
                bail!("no retained samples");
            }
            let features = eval::mean_features(&samples);
            let mut csv = String::from("feature,dim,value\n");
            for (k, row) in features.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    csv.push_str(&format!("{k},{j},{v}\n"));
                }
            }
            write_atomic(&report_dir.join("features.csv"), csv.as_bytes())?;

            let grid = samples[0].grid.clone();
            let mut csv = String::from("feature,covariate,probability\n");
            for k in 0..samples[0].truncation() {
                let curve = eval::mean_thinning_curve(&samples, k, &grid);
                for (&t, &p) in grid.iter().zip(&curve) {
                    csv.push_str(&format!("{k},{t},{p}\n"));
                }
            }
            write_atomic(&report_dir.join("activation.csv"), csv.as_bytes())?;
        }
    }
    println!("reports written to {}", report_dir.display());
    Ok(())
}
