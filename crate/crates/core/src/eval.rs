//! Quantitative evaluation: held-out splits, perplexity, timestamp
//! prediction, missing-entry RMSE, and synthetic data generators.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::lfm::{LfmData, LfmState};
use crate::rng::substream;
use crate::thinning::ProbitRvmKernel;
use crate::topics::{predictive_rate, TopicConfig, TopicState};

/// A persisted held-out split, replayable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeldoutSplit {
    /// Word-level split: per document, held token counts. Train plus held
    /// counts reproduce the original corpus exactly.
    Words {
        fraction: f64,
        seed: u64,
        held: Vec<Vec<(usize, u32)>>,
    },
    /// Document-level split per decade: indices into the original corpus.
    Documents {
        fraction: f64,
        seed: u64,
        heldout_docs: Vec<usize>,
    },
}

/// Decade label of a timestamp.
pub fn decade_of(t: f64) -> i64 {
    (t / 10.0).floor() as i64 * 10
}

/// Splits each document's counts at the token level: held counts are
/// binomial with the given fraction, train keeps the rest. A document that
/// would lose every token gets its first held entry returned, so the train
/// corpus never contains an empty document.
pub fn split_words<R: Rng + ?Sized>(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
    rng: &mut R,
) -> Result<(Corpus, HeldoutSplit)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "held-out fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let mut train = corpus.clone();
    let mut held: Vec<Vec<(usize, u32)>> = Vec::with_capacity(corpus.n_docs());
    for doc in train.docs.iter_mut() {
        let mut held_doc: Vec<(usize, u32)> = Vec::new();
        for &mut (p, ref mut w) in doc.counts.iter_mut() {
            let h = if fraction == 0.0 || *w == 0 {
                0
            } else {
                Binomial::new(*w as u64, fraction)
                    .expect("valid fraction")
                    .sample(rng) as u32
            };
            if h > 0 {
                held_doc.push((p, h));
                *w -= h;
            }
        }
        if doc.counts.iter().all(|&(_, w)| w == 0) {
            // Keep the document nonempty: return one held entry to train.
            if let Some((p, h)) = held_doc.first().copied() {
                held_doc.remove(0);
                let slot = doc.counts.iter_mut().find(|(tp, _)| *tp == p).unwrap();
                slot.1 += h;
            }
        }
        doc.counts.retain(|&(_, w)| w > 0);
        held.push(held_doc);
    }
    train.validate()?;
    Ok((
        train,
        HeldoutSplit::Words {
            fraction,
            seed,
            held,
        },
    ))
}

/// Holds out a fraction of the documents in each decade. The train corpus
/// keeps the full timestamp grid.
pub fn split_documents_by_decade<R: Rng + ?Sized>(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
    rng: &mut R,
) -> Result<(Corpus, HeldoutSplit)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "held-out fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let mut by_decade: Vec<(i64, Vec<usize>)> = Vec::new();
    for (n, doc) in corpus.docs.iter().enumerate() {
        let d = decade_of(corpus.timestamps[doc.timestamp_index]);
        match by_decade.iter_mut().find(|(dec, _)| *dec == d) {
            Some((_, v)) => v.push(n),
            None => by_decade.push((d, vec![n])),
        }
    }
    let mut heldout_docs = Vec::new();
    for (_, mut docs) in by_decade {
        let n_held = ((docs.len() as f64) * fraction).round() as usize;
        let n_held = n_held.min(docs.len().saturating_sub(1));
        for _ in 0..n_held {
            let i = rng.random_range(0..docs.len());
            heldout_docs.push(docs.swap_remove(i));
        }
    }
    heldout_docs.sort_unstable();
    let train_docs: Vec<Document> = corpus
        .docs
        .iter()
        .enumerate()
        .filter(|(n, _)| heldout_docs.binary_search(n).is_err())
        .map(|(_, d)| d.clone())
        .collect();
    let train = Corpus {
        vocab: corpus.vocab.clone(),
        timestamps: corpus.timestamps.clone(),
        docs: train_docs,
    };
    train.validate()?;
    Ok((
        train,
        HeldoutSplit::Documents {
            fraction,
            seed,
            heldout_docs,
        },
    ))
}

/// Monte-Carlo estimate of held-out perplexity from posterior samples:
///
/// `exp(−(1/y_··) Σ_{p,n,t} y_p^{n,t} · log q_{p,n,t})`,
///
/// where `q` is the sample-averaged predictive word distribution of the
/// document, `q_p ∝ Σ_b Σ_k θ_pk π_k r β`. Samples must come from a fit of
/// the train side of the same split (documents aligned by index).
pub fn perplexity(samples: &[TopicState], split: &HeldoutSplit) -> Result<f64> {
    let held = match split {
        HeldoutSplit::Words { held, .. } => held,
        HeldoutSplit::Documents { .. } => {
            return Err(Error::Usage(
                "perplexity requires a word-level split".into(),
            ))
        }
    };
    let first = samples
        .first()
        .ok_or_else(|| Error::Usage("perplexity requires at least one posterior sample".into()))?;
    if first.beta.len() != held.len() {
        return Err(Error::DimensionMismatch {
            expected: held.len(),
            actual: first.beta.len(),
        });
    }
    let p_vocab = first.topics.first().map_or(0, |t| t.len());
    let k_trunc = first.truncation();
    let y_total: u64 = held
        .iter()
        .flat_map(|doc| doc.iter().map(|&(_, c)| c as u64))
        .sum();
    if y_total == 0 {
        return Err(Error::Usage("held-out set is empty".into()));
    }

    // Per-sample topic row sums, for the literal normalizer Σ_p Σ_k θπrβ.
    let theta_sums: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.topics.iter().map(|t| t.iter().sum()).collect())
        .collect();

    let mut acc = 0.0;
    for (n, held_doc) in held.iter().enumerate() {
        if held_doc.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        let mut numer = vec![0.0f64; held_doc.len()];
        for (b, state) in samples.iter().enumerate() {
            for k in 0..k_trunc {
                if !state.active[n][k] {
                    continue;
                }
                let w = state.pi[k] * state.beta[n][k];
                denom += w * theta_sums[b][k];
                for (slot, &(p, _)) in numer.iter_mut().zip(held_doc) {
                    debug_assert!(p < p_vocab);
                    *slot += w * state.topics[k][p];
                }
            }
        }
        if denom <= 0.0 {
            return Err(Error::Numerical(format!(
                "document {n} has zero predictive mass"
            )));
        }
        for (&(_, y), &num) in held_doc.iter().zip(&numer) {
            acc += y as f64 * (num.max(f64::MIN_POSITIVE) / denom).ln();
        }
    }
    Ok((-acc / y_total as f64).exp())
}

/// Poisson log-likelihood of a document's counts under given word rates.
fn poisson_document_ll(counts: &[(usize, u32)], rates: &[f64]) -> f64 {
    let total_rate: f64 = rates.iter().sum();
    let mut ll = -total_rate;
    for &(p, w) in counts {
        ll += w as f64 * rates[p].max(f64::MIN_POSITIVE).ln();
    }
    ll
}

/// Predicts the decade of a document by maximizing the predictive Poisson
/// likelihood over the candidate timestamps; a decade scores with its best
/// member timestamp, and ties resolve to the earliest decade.
pub fn decade_predict(
    samples: &[TopicState],
    timestamps: &[f64],
    counts: &[(usize, u32)],
) -> Result<i64> {
    if timestamps.is_empty() {
        return Err(Error::Usage("no candidate timestamps".into()));
    }
    let mut decades: Vec<i64> = timestamps.iter().map(|&t| decade_of(t)).collect();
    decades.sort_unstable();
    decades.dedup();
    let mut best: Option<(i64, f64)> = None;
    for &dec in &decades {
        let mut dec_ll = f64::NEG_INFINITY;
        for &t in timestamps.iter().filter(|&&t| decade_of(t) == dec) {
            let rates = predictive_rate(samples, t)?;
            dec_ll = dec_ll.max(poisson_document_ll(counts, &rates));
        }
        // Strict improvement keeps the earliest decade on ties.
        if best.is_none_or(|(_, ll)| dec_ll > ll) {
            best = Some((dec, dec_ll));
        }
    }
    Ok(best.expect("at least one decade").0)
}

/// Root-mean-square error between two equal-length vectors.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let sse: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// An evaluation result as persisted to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub std: f64,
    pub n_folds: usize,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// Ground truth for the synthetic latent feature experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BagOfItemsTruth {
    /// 8 × 64 binary image features.
    pub features: Vec<Vec<f64>>,
    /// Thinning probabilities, indexed `[feature][covariate − 1]`.
    pub curves: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub kernels: Vec<ProbitRvmKernel>,
    /// Feature usage per point, `2000 × 8`.
    pub z: Vec<Vec<bool>>,
    pub data: LfmData,
}

pub const BAG_OF_ITEMS_FEATURES: usize = 8;
pub const BAG_OF_ITEMS_PIXELS: usize = 64;
pub const BAG_OF_ITEMS_COVARIATES: usize = 20;
pub const BAG_OF_ITEMS_POINTS_PER_COVARIATE: usize = 100;

/// The eight binary image glyphs on the 8×8 pixel grid, as
/// `(row, column)` strokes.
fn bag_of_items_glyphs() -> Vec<Vec<f64>> {
    let strokes: [&[(usize, usize)]; 8] = [
        // Box outline, top left.
        &[
            (0, 0),
            (0, 1),
            (0, 2),
            (1, 0),
            (1, 2),
            (2, 0),
            (2, 1),
            (2, 2),
        ],
        // Diagonal, top right.
        &[(0, 7), (1, 6), (2, 5), (3, 4)],
        // Vertical bar.
        &[(2, 1), (3, 1), (4, 1), (5, 1), (6, 1)],
        // Horizontal bar, bottom.
        &[(7, 2), (7, 3), (7, 4), (7, 5), (7, 6)],
        // Plus sign, center.
        &[(3, 4), (4, 3), (4, 4), (4, 5), (5, 4)],
        // L shape, bottom left.
        &[(4, 0), (5, 0), (6, 0), (6, 1), (6, 2)],
        // Solid block, middle right.
        &[(4, 6), (4, 7), (5, 6), (5, 7)],
        // Chevron, top middle.
        &[(0, 3), (0, 4), (1, 2), (1, 5)],
    ];
    strokes
        .iter()
        .map(|glyph| {
            let mut pixels = vec![0.0; BAG_OF_ITEMS_PIXELS];
            for &(r, c) in glyph.iter() {
                pixels[r * 8 + c] = 1.0;
            }
            pixels
        })
        .collect()
}

/// Synthetic "bag of items" data: 8 binary 64-pixel image features (fixed
/// glyphs on an 8×8 grid), covariates 1..20 with 100 points each,
/// time-varying thinning probabilities from a spike-and-slab RVM kernel
/// (`ω ~ κ δ_0 + (1 − κ) N(0, 4)`, `κ ~ Be(1, 1)`, shared width), additive
/// Gaussian noise with variance 0.25.
pub fn generate_bag_of_items(seed: u64) -> BagOfItemsTruth {
    generate_bag_of_items_with(seed, 0.25)
}

/// Same construction with a configurable noise variance.
pub fn generate_bag_of_items_with(seed: u64, noise_variance: f64) -> BagOfItemsTruth {
    let mut rng = substream(seed, 17);
    let covariates: Vec<f64> = (1..=BAG_OF_ITEMS_COVARIATES).map(|t| t as f64).collect();
    let phi = 0.25;
    let normal = rand_distr::Normal::new(0.0, 2.0).unwrap();

    let features = bag_of_items_glyphs();
    let mut kernels = Vec::with_capacity(BAG_OF_ITEMS_FEATURES);
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(BAG_OF_ITEMS_FEATURES);
    let mut pi = Vec::with_capacity(BAG_OF_ITEMS_FEATURES);
    for _ in 0..BAG_OF_ITEMS_FEATURES {
        // Spike-and-slab weights, redrawn until the curve is identifiable:
        // strongly active somewhere (a feature that never appears leaves
        // nothing to recover) and decisive over most of the grid (each
        // indicator is observed once per covariate, so a curve lingering
        // near 1/2 is unrecoverable from its own realizations).
        let curve: Vec<f64> = loop {
            let kappa: f64 = rng.random();
            let omega: Vec<f64> = (0..=covariates.len())
                .map(|_| {
                    if rng.random_bool(kappa) {
                        0.0
                    } else {
                        normal.sample(&mut rng)
                    }
                })
                .collect();
            let kernel =
                ProbitRvmKernel::new(omega, phi, covariates.clone()).expect("valid kernel");
            let curve: Vec<f64> = covariates.iter().map(|&t| kernel.probability(t)).collect();
            let strong_on = curve.iter().filter(|&&p| p >= 0.9).count();
            let strong_off = curve.iter().filter(|&&p| p <= 0.1).count();
            let indecision = curve.iter().map(|p| p * (1.0 - p)).sum::<f64>() / curve.len() as f64;
            if strong_on >= 4 && strong_off >= 4 && indecision <= 0.012 {
                kernels.push(kernel);
                break curve;
            }
        };
        curves.push(curve);
        // Usage probabilities are kept well away from zero so every feature
        // leaves a recoverable footprint.
        pi.push(0.4 + 0.5 * rng.random::<f64>());
    }

    let noise = rand_distr::Normal::new(0.0, noise_variance.sqrt()).unwrap();
    let mut point_covariates = Vec::new();
    let mut z_all = Vec::new();
    let mut y_all = Vec::new();
    for (ti, &t) in covariates.iter().enumerate() {
        // Indicators are shared by all points at a covariate value.
        let r: Vec<bool> = (0..BAG_OF_ITEMS_FEATURES)
            .map(|k| rng.random_bool(curves[k][ti]))
            .collect();
        for _ in 0..BAG_OF_ITEMS_POINTS_PER_COVARIATE {
            let z: Vec<bool> = (0..BAG_OF_ITEMS_FEATURES)
                .map(|k| r[k] && rng.random_bool(pi[k]))
                .collect();
            let mut row = vec![0.0; BAG_OF_ITEMS_PIXELS];
            for (k, &on) in z.iter().enumerate() {
                if on {
                    for (slot, f) in row.iter_mut().zip(&features[k]) {
                        *slot += f;
                    }
                }
            }
            for slot in row.iter_mut() {
                *slot += noise.sample(&mut rng);
            }
            point_covariates.push(t);
            z_all.push(z);
            y_all.push(row);
        }
    }
    let data = LfmData::new(point_covariates, y_all).expect("consistent shapes");
    BagOfItemsTruth {
        features,
        curves,
        pi,
        kernels,
        z: z_all,
        data,
    }
}

/// How synthetic topic activation curves are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveKind {
    /// Spike-and-slab RVM weights, `ω ~ κ δ_0 + (1 − κ) N(0, v)`.
    SpikeSlab { variance: f64 },
    /// Each topic is active on one contiguous timestamp window.
    Windows {
        on_activation: f64,
        off_activation: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub k_true: usize,
    pub vocab_size: usize,
    pub timestamps: Vec<f64>,
    pub docs_per_timestamp: usize,
    /// Dirichlet parameter for the generating topics.
    pub alpha_gen: f64,
    /// Gamma-process parameters of the generating rates, `π ~ Ga(γ/K, λ)`.
    pub process_shape: f64,
    pub process_rate: f64,
    /// Per-document rate shape `e`.
    pub doc_rate_shape: f64,
    pub curves: CurveKind,
}

/// Ground truth plus the generated corpus. Documents that came out empty are
/// dropped; `state` rows stay aligned with the surviving documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthCorpusTruth {
    pub corpus: Corpus,
    pub state: TopicState,
    /// Thinning probabilities, indexed `[topic][timestamp index]`.
    pub curves: Vec<Vec<f64>>,
}

/// Forward-simulates the time-varying topic model: topics from a Dirichlet,
/// rates from the gamma-process truncation, per-document indicators from the
/// chosen curves, counts from the Poisson factorization.
pub fn generate_synthetic_corpus(
    config: &SynthCorpusConfig,
    seed: u64,
) -> Result<SynthCorpusTruth> {
    if config.k_true == 0
        || config.vocab_size == 0
        || config.timestamps.is_empty()
        || config.docs_per_timestamp == 0
    {
        return Err(Error::InvalidParameter(
            "all synthetic corpus sizes must be positive".into(),
        ));
    }
    let mut rng = substream(seed, 29);
    let n_t = config.timestamps.len();

    // Truth kernels.
    let mut kernels = Vec::with_capacity(config.k_true);
    match config.curves {
        CurveKind::SpikeSlab { variance } => {
            let normal = rand_distr::Normal::new(0.0, variance.sqrt()).unwrap();
            for _ in 0..config.k_true {
                let kappa: f64 = rng.random();
                let omega: Vec<f64> = (0..=n_t)
                    .map(|_| {
                        if rng.random_bool(kappa) {
                            0.0
                        } else {
                            normal.sample(&mut rng)
                        }
                    })
                    .collect();
                kernels.push(ProbitRvmKernel::new(
                    omega,
                    0.25,
                    config.timestamps.clone(),
                )?);
            }
        }
        CurveKind::Windows {
            on_activation,
            off_activation,
        } => {
            // Contiguous windows covering the timeline with light overlap.
            let span = n_t as f64 / config.k_true as f64;
            let lo_t = config.timestamps[0];
            let step = if n_t > 1 {
                (config.timestamps[n_t - 1] - lo_t) / (n_t - 1) as f64
            } else {
                1.0
            };
            // Sharp enough that neighbouring centers barely leak.
            let phi = 4.0 / (step * step);
            for k in 0..config.k_true {
                let lo = (k as f64 * span).floor() as usize;
                let hi = (((k + 1) as f64 * span).ceil() as usize).min(n_t);
                let omega: Vec<f64> = std::iter::once(off_activation)
                    .chain((0..n_t).map(|i| {
                        if i >= lo && i < hi {
                            on_activation - off_activation
                        } else {
                            0.0
                        }
                    }))
                    .collect();
                kernels.push(ProbitRvmKernel::new(omega, phi, config.timestamps.clone())?);
            }
        }
    }
    let curves: Vec<Vec<f64>> = kernels
        .iter()
        .map(|k| {
            config
                .timestamps
                .iter()
                .map(|&t| k.probability(t))
                .collect()
        })
        .collect();

    // Corpus scaffold: every (timestamp, slot) pair becomes a document.
    let scaffold = Corpus {
        vocab: (0..config.vocab_size).map(|p| format!("w{p:04}")).collect(),
        timestamps: config.timestamps.clone(),
        docs: (0..n_t)
            .flat_map(|ti| {
                (0..config.docs_per_timestamp).map(move |_| Document {
                    timestamp_index: ti,
                    counts: Vec::new(),
                })
            })
            .collect(),
    };

    let topic_config = TopicConfig {
        truncation: config.k_true,
        alpha_theta: config.alpha_gen,
        doc_rate_shape: config.doc_rate_shape,
        process_shape: config.process_shape,
        process_rate: config.process_rate,
        dynamic: true,
        ..TopicConfig::default()
    };
    let (mut state, mut corpus) = TopicState::draw_prior(&topic_config, &scaffold, &mut rng)?;

    // Overwrite the prior-drawn kernels and indicators with the truth
    // curves, then redraw the counts.
    state.kernels = kernels;
    for (n, doc) in corpus.docs.iter().enumerate() {
        let ti = doc.timestamp_index;
        for k in 0..config.k_true {
            state.active[n][k] = rng.random_bool(curves[k][ti]);
        }
        if !state.active[n].iter().any(|&r| r) {
            // Guarantee at least one serving topic per document.
            let k = rng.random_range(0..config.k_true);
            state.active[n][k] = true;
        }
    }
    state.resample_counts(&mut corpus, &mut rng);

    // Drop empty documents, keeping state rows aligned.
    let keep: Vec<usize> = (0..corpus.n_docs())
        .filter(|&n| !corpus.docs[n].is_empty())
        .collect();
    corpus.docs = keep.iter().map(|&n| corpus.docs[n].clone()).collect();
    state.beta = keep.iter().map(|&n| state.beta[n].clone()).collect();
    state.active = keep.iter().map(|&n| state.active[n].clone()).collect();
    state.alloc = keep.iter().map(|&n| state.alloc[n].clone()).collect();
    state.doc_topic = keep.iter().map(|&n| state.doc_topic[n].clone()).collect();
    corpus.validate()?;

    Ok(SynthCorpusTruth {
        corpus,
        state,
        curves,
    })
}

// ---------------------------------------------------------------------------
// Assignment matching
// ---------------------------------------------------------------------------

/// Pearson correlation between two equal-length vectors (0 when either is
/// constant).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Maximum-total-score assignment of rows to distinct columns (Hungarian
/// algorithm with potentials). `score` is `n × m` with `n ≤ m`; returns the
/// chosen column per row.
pub fn assignment_max(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    if n == 0 {
        return Vec::new();
    }
    let m = score[0].len();
    assert!(n <= m, "assignment needs at least as many columns as rows");
    // Minimization on negated scores, 1-indexed potentials.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut matched_col = vec![0usize; m + 1]; // row matched to column (1-indexed)
    for i in 1..=n {
        matched_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = -score[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_col[j0] = matched_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_col[j] > 0 {
            result[matched_col[j] - 1] = j - 1;
        }
    }
    result
}

/// Matches true features to learned ones by maximizing total correlation;
/// returns `(matched learned index, correlation)` per true feature.
pub fn match_features_by_correlation(
    truth: &[Vec<f64>],
    learned: &[Vec<f64>],
) -> Vec<(usize, f64)> {
    let score: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| learned.iter().map(|l| pearson(t, l)).collect())
        .collect();
    assignment_max(&score)
        .into_iter()
        .enumerate()
        .map(|(i, j)| (j, score[i][j]))
        .collect()
}

/// Builds missing-entry test folds: every `fold_count`-th point is a test
/// point observed at one random coordinate.
pub fn missing_entry_folds<R: Rng + ?Sized>(
    data: &LfmData,
    fold_count: usize,
    rng: &mut R,
) -> Vec<Vec<(usize, usize)>> {
    let mut folds = vec![Vec::new(); fold_count];
    for n in 0..data.n_points() {
        let fold = n % fold_count;
        let coord = rng.random_range(0..data.dim());
        folds[fold].push((n, coord));
    }
    folds
}

/// Posterior-mean thinning curve of one learned feature over a grid.
pub fn mean_thinning_curve(samples: &[LfmState], k: usize, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&t| {
            samples.iter().map(|s| s.thinning_curve(k, t)).sum::<f64>() / samples.len() as f64
        })
        .collect()
}

/// Posterior-mean feature matrix.
pub fn mean_features(samples: &[LfmState]) -> Vec<Vec<f64>> {
    let k_trunc = samples[0].truncation();
    let d = samples[0].dim();
    let mut mean = vec![vec![0.0; d]; k_trunc];
    for s in samples {
        for k in 0..k_trunc {
            for j in 0..d {
                mean[k][j] += s.features[k][j];
            }
        }
    }
    for row in mean.iter_mut() {
        for v in row.iter_mut() {
            *v /= samples.len() as f64;
        }
    }
    mean
}
