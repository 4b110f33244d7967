//! Time-varying topic model: Poisson factorization on a thinned gamma
//! process.
//!
//! Topics `θ_k` (vocabulary-simplex vectors) are fixed over time; their usage
//! varies. A truncated gamma process provides global rates `π_k`, each
//! document modulates them with `β_k^{n,t} ~ Ga(e, 1)`, and a per-document
//! indicator `r_k^{n,t} ~ Ber(p_{x_k}(t))` thins topics in and out of
//! service. Word counts decompose as
//!
//! `w_pnt = Σ_k w̃_pntk`, `w̃_pntk ~ Pois(θ_kp · r_k^{n,t} · π_k · β_k^{n,t})`.
//!
//! All conditionals are conjugate given the latent allocations `w̃`; the
//! indicator conditional distinguishes "thinned" from "unpopular" topics via
//! fictitious Poisson counts, and kernels are resampled through the shared
//! probit-RVM block with one observation per (document, topic).

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, McmcSchedule, TraceRow};
use crate::rng::substream;
use crate::thinning::{rvm_gibbs_block, ProbitRvmKernel, RvmObservation, RvmPrior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicConfig {
    /// Truncation level `K`.
    pub truncation: usize,
    /// Symmetric Dirichlet parameter of the topic prior.
    pub alpha_theta: f64,
    /// Shape of the per-document rate prior `β ~ Ga(e, 1)`.
    pub doc_rate_shape: f64,
    /// Normal-gamma hyperparameters of the RVM weight prior.
    pub c0: f64,
    pub d0: f64,
    pub width_dictionary: Vec<f64>,
    /// Gamma-process parameters (γ, λ); the truncation draws
    /// `π_k ~ Ga(γ/K, λ)`.
    pub process_shape: f64,
    pub process_rate: f64,
    /// `false` forces `r ≡ 1` (the static model) and skips kernel updates.
    pub dynamic: bool,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig {
            truncation: 100,
            alpha_theta: 0.05,
            doc_rate_shape: 1.0,
            c0: 0.01,
            d0: 0.01,
            width_dictionary: vec![0.01, 0.05, 0.25, 1.0],
            process_shape: 1.0,
            process_rate: 1.0,
            dynamic: true,
        }
    }
}

impl TopicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::InvalidParameter(
                "truncation must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("alpha_theta", self.alpha_theta),
            ("doc rate shape", self.doc_rate_shape),
            ("c0", self.c0),
            ("d0", self.d0),
            ("process shape", self.process_shape),
            ("process rate", self.process_rate),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.width_dictionary.is_empty() {
            return Err(Error::InvalidParameter("width dictionary is empty".into()));
        }
        Ok(())
    }
}

/// Full Gibbs state. Allocation counts are stored sparsely: per document,
/// a `(words-present × K)` row-major block aligned with the document's
/// `(token, count)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicState {
    pub config: TopicConfig,
    /// `K × P`, each row a probability vector.
    pub topics: Vec<Vec<f64>>,
    /// Global topic rates, positive.
    pub pi: Vec<f64>,
    /// Per-document rates `β_k^{n,t}`, indexed `[doc][k]`.
    pub beta: Vec<Vec<f64>>,
    /// Indicators `r_k^{n,t}`, indexed `[doc][k]`.
    pub active: Vec<Vec<bool>>,
    /// Allocations `w̃`, indexed `[doc][word_pos * K + k]`.
    pub alloc: Vec<Vec<u32>>,
    pub kernels: Vec<ProbitRvmKernel>,
    pub rvm: Vec<RvmPrior>,
    /// Word-topic totals `w̃_{p··k}`, indexed `[p][k]`.
    pub word_topic: Vec<Vec<u64>>,
    /// Document-topic totals `w̃_{·ntk}`, indexed `[doc][k]`.
    pub doc_topic: Vec<Vec<u64>>,
}

fn draw_gamma_positive<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let dist = Gamma::new(shape, 1.0 / rate).expect("positive parameters");
    loop {
        let x = dist.sample(rng);
        if x > 0.0 && x.is_finite() {
            return x;
        }
    }
}

/// Gamma posterior (shape, rate) for one global rate `π_k`: counts plus the
/// process shape over `K`, rate accumulating `r β` over documents. Documents
/// with `r = 0` contribute no exposure.
pub fn pi_posterior(config: &TopicConfig, total_alloc: u64, sum_active_beta: f64) -> (f64, f64) {
    (
        config.process_shape / config.truncation as f64 + total_alloc as f64,
        config.process_rate + sum_active_beta,
    )
}

/// Gamma posterior (shape, rate) for one per-document rate `β_k^{n,t}`.
pub fn beta_posterior(doc_rate_shape: f64, doc_alloc: u64, active: bool, pi: f64) -> (f64, f64) {
    let exposure = if active { pi } else { 0.0 };
    (doc_rate_shape + doc_alloc as f64, 1.0 + exposure)
}

/// Probability that a topic with no allocated words stays active: the three
/// fictitious-count cases have masses `{p e^{-R}, (1-p)(1-e^{-R}),
/// (1-p) e^{-R}}` with `R = Σ_p ρ_p`, and only the first keeps `r = 1`.
pub fn case3_active_probability(p: f64, big_r: f64) -> f64 {
    let masses = case3_masses(p, big_r);
    masses[0]
}

fn case3_masses(p: f64, big_r: f64) -> [f64; 3] {
    let e = (-big_r).exp();
    let raw = [p * e, (1.0 - p) * (1.0 - e), (1.0 - p) * e];
    let total: f64 = raw.iter().sum();
    let cells = [raw[0] / total, raw[1] / total, raw[2] / total];
    debug_assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    debug_assert!(cells.iter().all(|&c| c >= 0.0));
    cells
}

impl TopicState {
    /// Initializes a sampler state for an observed corpus: parameters from
    /// the prior, all indicators on, allocations drawn from their
    /// conditional.
    pub fn init_for_corpus<R: Rng + ?Sized>(
        config: &TopicConfig,
        corpus: &Corpus,
        rng: &mut R,
    ) -> Result<TopicState> {
        let mut state = TopicState::draw_parameters(config, corpus, rng)?;
        // Neutral kernels (p ≡ 1/2, unit precisions) mix better than the
        // heavy-tailed prior draws that small (c0, d0) produce.
        for (kernel, prior) in state.kernels.iter_mut().zip(state.rvm.iter_mut()) {
            kernel.omega.iter_mut().for_each(|w| *w = 0.0);
            prior.precisions.iter_mut().for_each(|l| *l = 1.0);
        }
        for flags in state.active.iter_mut() {
            for r in flags.iter_mut() {
                *r = true;
            }
        }
        state.alloc = corpus
            .docs
            .iter()
            .map(|d| vec![0u32; d.counts.len() * config.truncation])
            .collect();
        state.sample_allocations(corpus, rng)?;
        Ok(state)
    }

    /// Draws topics, rates, kernels, per-document rates and indicators from
    /// the prior, with empty allocations shaped for `corpus`.
    fn draw_parameters<R: Rng + ?Sized>(
        config: &TopicConfig,
        corpus: &Corpus,
        rng: &mut R,
    ) -> Result<TopicState> {
        config.validate()?;
        let k_trunc = config.truncation;
        let p_vocab = corpus.vocab_size();
        let n_docs = corpus.n_docs();

        let topics: Vec<Vec<f64>> = (0..k_trunc)
            .map(|_| draw_dirichlet_symmetric(config.alpha_theta, p_vocab, rng))
            .collect();
        let pi: Vec<f64> = (0..k_trunc)
            .map(|_| {
                draw_gamma_positive(
                    config.process_shape / k_trunc as f64,
                    config.process_rate,
                    rng,
                )
            })
            .collect();
        let centers = corpus.timestamps.clone();
        let mut kernels = Vec::with_capacity(k_trunc);
        let mut rvm = Vec::with_capacity(k_trunc);
        for _ in 0..k_trunc {
            let mut prior = RvmPrior::new(
                config.c0,
                config.d0,
                config.width_dictionary.clone(),
                centers.len() + 1,
            )?;
            let omega = prior.draw_weights(rng);
            let phi = prior.draw_width(rng);
            kernels.push(ProbitRvmKernel::new(omega, phi, centers.clone())?);
            rvm.push(prior);
        }
        let beta: Vec<Vec<f64>> = (0..n_docs)
            .map(|_| {
                (0..k_trunc)
                    .map(|_| draw_gamma_positive(config.doc_rate_shape, 1.0, rng))
                    .collect()
            })
            .collect();
        let active: Vec<Vec<bool>> = corpus
            .docs
            .iter()
            .map(|d| {
                let t = corpus.timestamps[d.timestamp_index];
                kernels
                    .iter()
                    .map(|kernel| !config.dynamic || rng.random_bool(kernel.probability(t)))
                    .collect()
            })
            .collect();

        Ok(TopicState {
            config: config.clone(),
            topics,
            pi,
            beta,
            active,
            alloc: corpus
                .docs
                .iter()
                .map(|d| vec![0u32; d.counts.len() * k_trunc])
                .collect(),
            kernels,
            rvm,
            word_topic: vec![vec![0; k_trunc]; p_vocab],
            doc_topic: vec![vec![0; k_trunc]; n_docs],
        })
    }

    /// Draws a complete joint sample from the forward model: parameters and
    /// indicators from the prior, then allocations `w̃ ~ Pois(θ r π β)` with
    /// the implied corpus counts. The returned corpus shares `vocab` and
    /// `timestamps` with `shape` and may contain empty documents.
    pub fn draw_prior<R: Rng + ?Sized>(
        config: &TopicConfig,
        shape: &Corpus,
        rng: &mut R,
    ) -> Result<(TopicState, Corpus)> {
        let mut state = TopicState::draw_parameters(config, shape, rng)?;
        let mut corpus = shape.clone();
        state.resample_counts(&mut corpus, rng);
        Ok((state, corpus))
    }

    /// Redraws every allocation from the likelihood given the current
    /// parameters and rewrites the corpus counts to match (`w = Σ_k w̃`).
    pub fn resample_counts<R: Rng + ?Sized>(&mut self, corpus: &mut Corpus, rng: &mut R) {
        let k_trunc = self.config.truncation;
        let p_vocab = corpus.vocab_size();
        for wt in self.word_topic.iter_mut() {
            wt.iter_mut().for_each(|c| *c = 0);
        }
        for (n, doc) in corpus.docs.iter_mut().enumerate() {
            let mut counts: Vec<(usize, Vec<u32>)> = Vec::new();
            for p in 0..p_vocab {
                let mut cell = vec![0u32; k_trunc];
                let mut any = false;
                for k in 0..k_trunc {
                    if !self.active[n][k] {
                        continue;
                    }
                    let rate = self.topics[k][p] * self.pi[k] * self.beta[n][k];
                    if rate <= 0.0 {
                        continue;
                    }
                    let draw = Poisson::new(rate).expect("positive rate").sample(rng);
                    let w = draw as u32;
                    if w > 0 {
                        cell[k] = w;
                        any = true;
                    }
                }
                if any {
                    counts.push((p, cell));
                }
            }
            self.doc_topic[n].iter_mut().for_each(|c| *c = 0);
            doc.counts = counts
                .iter()
                .map(|(p, cell)| (*p, cell.iter().sum::<u32>()))
                .collect();
            self.alloc[n] = counts.iter().flat_map(|(_, cell)| cell.clone()).collect();
            for (p, cell) in &counts {
                for k in 0..k_trunc {
                    self.word_topic[*p][k] += cell[k] as u64;
                    self.doc_topic[n][k] += cell[k] as u64;
                }
            }
        }
    }

    pub fn truncation(&self) -> usize {
        self.config.truncation
    }

    /// Topics currently explaining at least one token.
    pub fn active_topics(&self) -> usize {
        (0..self.truncation())
            .filter(|&k| self.word_topic.iter().any(|wt| wt[k] > 0))
            .count()
    }

    /// Multinomial reallocation of every word count across topics:
    /// `w̃ ~ Mult(w; ξ)`, `ξ_k ∝ θ_kp r π β`. Counts are conserved exactly
    /// and only active topics receive mass.
    pub fn sample_allocations<R: Rng + ?Sized>(
        &mut self,
        corpus: &Corpus,
        rng: &mut R,
    ) -> Result<()> {
        let k_trunc = self.truncation();
        for wt in self.word_topic.iter_mut() {
            wt.iter_mut().for_each(|c| *c = 0);
        }
        for (n, doc) in corpus.docs.iter().enumerate() {
            let weights: Vec<f64> = (0..k_trunc)
                .map(|k| {
                    if self.active[n][k] {
                        self.pi[k] * self.beta[n][k]
                    } else {
                        0.0
                    }
                })
                .collect();
            self.doc_topic[n].iter_mut().for_each(|c| *c = 0);
            for (pos, &(p, w)) in doc.counts.iter().enumerate() {
                let probs: Vec<f64> = (0..k_trunc)
                    .map(|k| self.topics[k][p] * weights[k])
                    .collect();
                let total: f64 = probs.iter().sum();
                if !total.is_finite() || total <= 0.0 {
                    return Err(Error::InvariantViolation(format!(
                        "document {n} word {p}: allocation rates are all zero"
                    )));
                }
                let cell = &mut self.alloc[n][pos * k_trunc..(pos + 1) * k_trunc];
                sample_multinomial(w, &probs, total, cell, rng);
                debug_assert_eq!(cell.iter().map(|&c| c as u64).sum::<u64>(), w as u64);
                for k in 0..k_trunc {
                    let c = cell[k] as u64;
                    if c > 0 {
                        debug_assert!(self.active[n][k]);
                        self.word_topic[p][k] += c;
                        self.doc_topic[n][k] += c;
                    }
                }
            }
        }
        Ok(())
    }

    /// Indicator update per (document, topic). Three cases: a topic holding
    /// allocated words stays active; a topic whose document has no other
    /// active topic is kept active; otherwise the fictitious-count masses
    /// decide between active-but-unlucky and genuinely thinned.
    pub fn sample_indicators<R: Rng + ?Sized>(&mut self, corpus: &Corpus, rng: &mut R) {
        if !self.config.dynamic {
            return;
        }
        let k_trunc = self.truncation();
        let theta_sums: Vec<f64> = self.topics.iter().map(|t| t.iter().sum()).collect();
        for (n, doc) in corpus.docs.iter().enumerate() {
            let t = corpus.timestamps[doc.timestamp_index];
            let nonempty = !doc.is_empty();
            let mut n_active = self.active[n].iter().filter(|&&r| r).count();
            for k in 0..k_trunc {
                let others = n_active - usize::from(self.active[n][k]);
                let r_new = if self.doc_topic[n][k] > 0 {
                    true
                } else if nonempty && others == 0 {
                    // Every document keeps at least one serving topic. With
                    // support consistency this branch cannot fire for a
                    // nonempty document, but it pins the invariant.
                    true
                } else {
                    let p = self.kernels[k].probability(t);
                    let big_r = self.pi[k] * self.beta[n][k] * theta_sums[k];
                    rng.random_bool(case3_active_probability(p, big_r))
                };
                if r_new != self.active[n][k] {
                    n_active = if r_new { n_active + 1 } else { n_active - 1 };
                    self.active[n][k] = r_new;
                }
            }
        }
    }

    /// Dirichlet update of each topic from its word-topic counts.
    pub fn sample_topics<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let alpha = self.config.alpha_theta;
        for (k, topic) in self.topics.iter_mut().enumerate() {
            let mut total = 0.0;
            for (p, slot) in topic.iter_mut().enumerate() {
                let shape = alpha + self.word_topic[p][k] as f64;
                let draw = draw_gamma_positive(shape, 1.0, rng);
                *slot = draw;
                total += draw;
            }
            for slot in topic.iter_mut() {
                *slot /= total;
            }
        }
    }

    /// Gamma update of each global rate. Only documents currently serving
    /// the topic contribute exposure.
    pub fn sample_pi<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k_trunc = self.truncation();
        for k in 0..k_trunc {
            let total_alloc: u64 = self.word_topic.iter().map(|wt| wt[k]).sum();
            let sum_active_beta: f64 = self
                .beta
                .iter()
                .zip(&self.active)
                .filter(|(_, r)| r[k])
                .map(|(b, _)| b[k])
                .sum();
            let (shape, rate) = pi_posterior(&self.config, total_alloc, sum_active_beta);
            self.pi[k] = draw_gamma_positive(shape, rate, rng);
        }
    }

    /// Gamma update of every per-document rate; thinned topics revert to the
    /// prior.
    pub fn sample_beta<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k_trunc = self.truncation();
        for n in 0..self.beta.len() {
            for k in 0..k_trunc {
                let (shape, rate) = beta_posterior(
                    self.config.doc_rate_shape,
                    self.doc_topic[n][k],
                    self.active[n][k],
                    self.pi[k],
                );
                self.beta[n][k] = draw_gamma_positive(shape, rate, rng);
            }
        }
    }

    /// Kernel update: one observation per (document, topic).
    pub fn sample_kernels<R: Rng + ?Sized>(&mut self, corpus: &Corpus, rng: &mut R) -> Result<()> {
        if !self.config.dynamic {
            return Ok(());
        }
        for k in 0..self.truncation() {
            let obs: Vec<RvmObservation> = corpus
                .docs
                .iter()
                .enumerate()
                .map(|(n, d)| RvmObservation {
                    covariate: corpus.timestamps[d.timestamp_index],
                    active: self.active[n][k],
                })
                .collect();
            rvm_gibbs_block(&obs, &mut self.kernels[k], &mut self.rvm[k], rng)?;
        }
        Ok(())
    }

    /// One systematic scan: allocations, indicators, topics, global rates,
    /// document rates, kernels.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&mut self, corpus: &Corpus, rng: &mut R) -> Result<()> {
        self.sample_allocations(corpus, rng)?;
        self.sample_indicators(corpus, rng);
        self.sample_topics(rng);
        self.sample_pi(rng);
        self.sample_beta(rng);
        self.sample_kernels(corpus, rng)?;
        self.assert_invariants(corpus);
        Ok(())
    }

    fn assert_invariants(&self, corpus: &Corpus) {
        if cfg!(debug_assertions) {
            for topic in &self.topics {
                debug_assert!((topic.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for (n, doc) in corpus.docs.iter().enumerate() {
                let allocated: u64 = self.doc_topic[n].iter().sum();
                debug_assert_eq!(allocated, doc.total_tokens());
                if !doc.is_empty() {
                    debug_assert!(self.active[n].iter().any(|&r| r));
                }
                for k in 0..self.truncation() {
                    if self.doc_topic[n][k] > 0 {
                        debug_assert!(self.active[n][k]);
                    }
                }
            }
        }
    }

    /// Poisson log-likelihood of the corpus under the current rates.
    pub fn log_likelihood(&self, corpus: &Corpus) -> f64 {
        let k_trunc = self.truncation();
        let mut ll = 0.0;
        for (n, doc) in corpus.docs.iter().enumerate() {
            let mut exposure = 0.0;
            for k in 0..k_trunc {
                if self.active[n][k] {
                    exposure += self.pi[k] * self.beta[n][k];
                }
            }
            ll -= exposure;
            for &(p, w) in &doc.counts {
                let rate: f64 = (0..k_trunc)
                    .filter(|&k| self.active[n][k])
                    .map(|k| self.topics[k][p] * self.pi[k] * self.beta[n][k])
                    .sum();
                ll += w as f64 * rate.max(f64::MIN_POSITIVE).ln() - ln_gamma(w as f64 + 1.0);
            }
        }
        ll
    }

    /// Mean of `r` over documents at each timestamp for one topic.
    pub fn activation_curve(&self, corpus: &Corpus, k: usize) -> Vec<f64> {
        let mut sums = vec![0.0; corpus.timestamps.len()];
        let mut counts = vec![0usize; corpus.timestamps.len()];
        for (n, doc) in corpus.docs.iter().enumerate() {
            sums[doc.timestamp_index] += f64::from(u8::from(self.active[n][k]));
            counts[doc.timestamp_index] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

fn draw_dirichlet_symmetric<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..dim)
        .map(|_| draw_gamma_positive(alpha, 1.0, rng))
        .collect();
    let total: f64 = draws.iter().sum();
    for d in draws.iter_mut() {
        *d /= total;
    }
    draws
}

/// Conditional-binomial multinomial sampler: exact counts, one pass.
fn sample_multinomial<R: Rng + ?Sized>(
    w: u32,
    probs: &[f64],
    total: f64,
    out: &mut [u32],
    rng: &mut R,
) {
    let mut remaining = w as u64;
    let mut rem_prob = total;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            out[k] = 0;
            continue;
        }
        if k + 1 == probs.len() {
            out[k] = remaining as u32;
            remaining = 0;
            continue;
        }
        let frac = (p / rem_prob).clamp(0.0, 1.0);
        let draw = if frac >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, frac)
                .expect("valid fraction")
                .sample(rng)
        };
        out[k] = draw as u32;
        remaining -= draw;
        rem_prob -= p;
    }
    debug_assert_eq!(remaining, 0);
}

/// Fits the model to a corpus. The callback sees every trace row and each
/// retained sample.
pub fn fit_topics<F>(
    corpus: &Corpus,
    config: &TopicConfig,
    schedule: &McmcSchedule,
    seed: u64,
    on_sweep: F,
) -> Result<(Vec<TopicState>, Vec<TraceRow>)>
where
    F: FnMut(&TraceRow, Option<&TopicState>) -> Result<()>,
{
    corpus.validate()?;
    let mut rng = substream(seed, 0);
    let state = TopicState::init_for_corpus(config, corpus, &mut rng)?;
    run_chain(
        state,
        schedule,
        |s| s.gibbs_sweep(corpus, &mut rng),
        |s| (s.active_topics(), s.log_likelihood(corpus)),
        on_sweep,
    )
}

/// Expected word rates for a fresh document at covariate `t`, averaged over
/// posterior samples with the indicator and document rate integrated out:
/// `rate_p = (1/B) Σ_b Σ_k θ_pk π_k p_{x_k}(t) e`.
pub fn predictive_rate(samples: &[TopicState], t: f64) -> Result<Vec<f64>> {
    let first = samples.first().ok_or_else(|| {
        Error::Usage("predictive rate requires at least one posterior sample".into())
    })?;
    let p_vocab = first.topics.first().map_or(0, |t| t.len());
    let mut rates = vec![0.0; p_vocab];
    for state in samples {
        let e = state.config.doc_rate_shape;
        for k in 0..state.truncation() {
            let keep = if state.config.dynamic {
                state.kernels[k].probability(t)
            } else {
                1.0
            };
            let scale = state.pi[k] * keep * e;
            for (r, &th) in rates.iter_mut().zip(&state.topics[k]) {
                *r += th * scale;
            }
        }
    }
    let b = samples.len() as f64;
    for r in rates.iter_mut() {
        *r = (*r / b).max(f64::MIN_POSITIVE);
    }
    Ok(rates)
}

/// Top `n` tokens per topic with their probabilities, from the mean of the
/// sampled topic vectors.
pub fn top_words(samples: &[TopicState], n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let first = samples.first().ok_or_else(|| {
        Error::Usage("topic report requires at least one posterior sample".into())
    })?;
    let k_trunc = first.truncation();
    let p_vocab = first.topics.first().map_or(0, |t| t.len());
    let mut report = Vec::with_capacity(k_trunc);
    for k in 0..k_trunc {
        let mut mean = vec![0.0; p_vocab];
        for state in samples {
            for (m, &th) in mean.iter_mut().zip(&state.topics[k]) {
                *m += th;
            }
        }
        let mut scored: Vec<(usize, f64)> = mean
            .into_iter()
            .map(|m| m / samples.len() as f64)
            .enumerate()
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(n);
        report.push(scored);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::diagnostics::mean_and_second_moment_z;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> TopicConfig {
        TopicConfig {
            truncation: 2,
            alpha_theta: 0.5,
            doc_rate_shape: 1.0,
            c0: 2.0,
            d0: 2.0,
            width_dictionary: vec![0.3, 1.0],
            process_shape: 1.0,
            process_rate: 1.0,
            dynamic: true,
        }
    }

    fn tiny_corpus() -> Corpus {
        // 2 timestamps × 2 documents, vocabulary of 3.
        Corpus {
            vocab: vec!["a".into(), "b".into(), "c".into()],
            timestamps: vec![0.0, 1.0],
            docs: vec![
                Document {
                    timestamp_index: 0,
                    counts: vec![(0, 2), (1, 1)],
                },
                Document {
                    timestamp_index: 0,
                    counts: vec![(2, 3)],
                },
                Document {
                    timestamp_index: 1,
                    counts: vec![(0, 1), (2, 1)],
                },
                Document {
                    timestamp_index: 1,
                    counts: vec![(1, 4)],
                },
            ],
        }
    }

    #[test]
    fn posterior_parameter_arithmetic() {
        let config = TopicConfig {
            truncation: 4,
            ..tiny_config()
        };
        let (shape, rate) = pi_posterior(&config, 12, 3.0);
        assert!((shape - 12.25).abs() < 1e-15);
        assert!((rate - 4.0).abs() < 1e-15);
        // No counts, no exposure: the prior.
        let (shape, rate) = pi_posterior(&config, 0, 0.0);
        assert!((shape - 0.25).abs() < 1e-15 && (rate - 1.0).abs() < 1e-15);

        let (shape, rate) = beta_posterior(1.0, 7, true, 2.0);
        assert!((shape - 8.0).abs() < 1e-15 && (rate - 3.0).abs() < 1e-15);
        // Thinned topic reverts to the prior.
        let (shape, rate) = beta_posterior(1.0, 0, false, 2.0);
        assert!((shape - 1.0).abs() < 1e-15 && (rate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pi_posterior_matches_brute_force_on_one_atom() {
        // One topic, one document, all mass on one word: posterior over π is
        // Ga(1/K + w, 1 + β). Quadrature oracle over the unnormalized
        // density Ga(π; 1/K, 1) · Pois(w; π β).
        let config = TopicConfig {
            truncation: 4,
            ..tiny_config()
        };
        let (w, beta) = (5u64, 1.5f64);
        let (shape, rate) = pi_posterior(&config, w, beta);
        let conjugate_mean = shape / rate;

        let grid = 200_000;
        let hi = 30.0;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..grid {
            let x = (i as f64 + 0.5) * hi / grid as f64;
            let prior = x.powf(0.25 - 1.0) * (-x).exp();
            let lik = (x * beta).powf(w as f64) * (-x * beta).exp();
            let f = prior * lik;
            num += x * f;
            den += f;
        }
        let oracle = num / den;
        assert!(
            (oracle - conjugate_mean).abs() < 1e-3,
            "quadrature {oracle} vs conjugate {conjugate_mean}"
        );
    }

    #[test]
    fn case3_reference_values() {
        // Zero fictitious rate: u carries no information.
        assert!((case3_active_probability(0.5, 0.0) - 0.5).abs() < 1e-12);
        // R = ln 2: masses (0.25, 0.25, 0.25) → P(active) = 1/3.
        let p = case3_active_probability(0.5, 2.0f64.ln());
        assert!((p - 1.0 / 3.0).abs() < 1e-12);

        // Enumeration oracle on a single word: r ~ Ber(p), u ~ Pois(ρ);
        // conditioning on observing no allocated words.
        let (pp, rho) = (0.5, 2.0f64.ln());
        let joint_active = pp * (-rho).exp();
        let joint_inactive = (1.0 - pp) * (-rho).exp() + (1.0 - pp) * (1.0 - (-rho).exp());
        let oracle = joint_active / (joint_active + joint_inactive);
        assert!((p - oracle).abs() < 1e-12);
    }

    #[test]
    fn allocation_reference_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        // Degenerate: a single active topic takes the whole count.
        let mut out = vec![0u32; 3];
        sample_multinomial(7, &[0.0, 2.5, 0.0], 2.5, &mut out, &mut rng);
        assert_eq!(out, vec![0, 7, 0]);

        // Mean of Mult(6; (2,1,1)/4) is (3, 1.5, 1.5).
        let probs = [2.0, 1.0, 1.0];
        let mut sums = [0u64; 3];
        let draws = 100_000;
        for _ in 0..draws {
            sample_multinomial(6, &probs, 4.0, &mut out, &mut rng);
            assert_eq!(out.iter().sum::<u32>(), 6);
            for k in 0..3 {
                sums[k] += out[k] as u64;
            }
        }
        let means: Vec<f64> = sums.iter().map(|&s| s as f64 / draws as f64).collect();
        // se of the mean of Binomial(6, 1/2)/Binomial(6, 1/4) components.
        assert!((means[0] - 3.0).abs() < 0.02, "{means:?}");
        assert!((means[1] - 1.5).abs() < 0.02, "{means:?}");
        assert!((means[2] - 1.5).abs() < 0.02, "{means:?}");

        // Symmetric two-topic split is Binomial(w, 1/2).
        let mut ones = 0u64;
        for _ in 0..draws {
            sample_multinomial(1, &[1.0, 1.0], 2.0, &mut out[..2], &mut rng);
            ones += out[0] as u64;
        }
        let frac = ones as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn allocations_conserve_counts_and_respect_support() {
        let config = tiny_config();
        let corpus = tiny_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = TopicState::init_for_corpus(&config, &corpus, &mut rng).unwrap();
        for _ in 0..30 {
            state.gibbs_sweep(&corpus, &mut rng).unwrap();
            for (n, doc) in corpus.docs.iter().enumerate() {
                for (pos, &(_, w)) in doc.counts.iter().enumerate() {
                    let cell = &state.alloc[n][pos * 2..(pos + 1) * 2];
                    assert_eq!(cell.iter().map(|&c| c as u64).sum::<u64>(), w as u64);
                    for k in 0..2 {
                        if cell[k] > 0 {
                            assert!(state.active[n][k]);
                        }
                    }
                }
                assert!(state.active[n].iter().any(|&r| r));
            }
            assert!(state.pi.iter().all(|&p| p > 0.0));
            assert!(state.beta.iter().flatten().all(|&b| b > 0.0));
            for topic in &state.topics {
                assert!((topic.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(topic.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn topic_update_concentrates_on_allocated_words() {
        // All mass on word 0: E[θ_k0] = (w + α)/(w + 3α) ≈ 1.
        let config = TopicConfig {
            alpha_theta: 0.05,
            ..tiny_config()
        };
        let corpus = tiny_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut state = TopicState::init_for_corpus(&config, &corpus, &mut rng).unwrap();
        state.word_topic = vec![vec![10_000, 0], vec![0, 0], vec![0, 0]];
        let expected = 10_000.05 / 10_000.15;
        let draws = 400;
        let mut mean = 0.0;
        for _ in 0..draws {
            state.sample_topics(&mut rng);
            mean += state.topics[0][0];
        }
        mean /= draws as f64;
        assert!((mean - expected).abs() < 1e-4, "mean {mean} vs {expected}");

        // Without counts the draw is a symmetric Dirichlet: uniform mean.
        // Component sd at α = 0.05 is ≈ 0.44, so 8000 draws give se ≈ 0.005.
        state.word_topic = vec![vec![0, 0]; 3];
        let draws = 8000;
        let mut mean = [0.0; 3];
        for _ in 0..draws {
            state.sample_topics(&mut rng);
            for p in 0..3 {
                mean[p] += state.topics[0][p];
            }
        }
        for p in 0..3 {
            assert!((mean[p] / draws as f64 - 1.0 / 3.0).abs() < 0.025);
        }
    }

    #[test]
    fn forced_indicator_cases() {
        let config = tiny_config();
        let corpus = tiny_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = TopicState::init_for_corpus(&config, &corpus, &mut rng).unwrap();
        // Document 0 has words allocated: any topic carrying them must stay
        // active through many indicator updates.
        for _ in 0..50 {
            state.sample_indicators(&corpus, &mut rng);
            for n in 0..corpus.n_docs() {
                for k in 0..2 {
                    if state.doc_topic[n][k] > 0 {
                        assert!(state.active[n][k]);
                    }
                }
                assert!(state.active[n].iter().any(|&r| r));
            }
        }
    }

    #[test]
    fn sweep_is_deterministic_given_seed() {
        let config = tiny_config();
        let corpus = tiny_corpus();
        let run = |seed: u64| {
            let schedule = McmcSchedule {
                iterations: 10,
                burnin: 5,
                thin: 1,
            };
            let (samples, _) =
                fit_topics(&corpus, &config, &schedule, seed, |_, _| Ok(())).unwrap();
            serde_json::to_string(&samples).unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn predictive_rate_reference_cases() {
        let config = tiny_config();
        let corpus = tiny_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut state = TopicState::init_for_corpus(&config, &corpus, &mut rng).unwrap();
        state.topics = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6]];
        state.pi = vec![2.0, 1.0];
        // Topic 1 always on, topic 2 never.
        state.kernels[0].omega = vec![40.0, 0.0, 0.0];
        state.kernels[1].omega = vec![-40.0, 0.0, 0.0];

        let rates = predictive_rate(&[state.clone()], 0.0).unwrap();
        for (r, &th) in rates.iter().zip(&state.topics[0]) {
            assert!((r - th * 2.0).abs() < 1e-9, "{rates:?}");
        }

        // Averaging two identical samples changes nothing.
        let twice = predictive_rate(&[state.clone(), state.clone()], 0.0).unwrap();
        for (a, b) in rates.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }

        // Hand-built two-sample average.
        let mut other = state.clone();
        other.pi = vec![1.0, 1.0];
        other.kernels[1].omega = vec![40.0, 0.0, 0.0];
        let avg = predictive_rate(&[state.clone(), other.clone()], 0.0).unwrap();
        for p in 0..3 {
            let expected =
                (state.topics[0][p] * 2.0 + other.topics[0][p] + other.topics[1][p]) / 2.0;
            assert!((avg[p] - expected).abs() < 1e-9);
        }

        assert!(predictive_rate(&[], 0.0).is_err());
    }

    #[test]
    fn top_words_ranks_by_mean_probability() {
        let config = tiny_config();
        let corpus = tiny_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut state = TopicState::init_for_corpus(&config, &corpus, &mut rng).unwrap();
        state.topics = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6]];
        let report = top_words(&[state], 2).unwrap();
        assert_eq!(report[0][0].0, 0);
        assert_eq!(report[1][0].0, 2);
        assert!((report[0][0].1 - 0.6).abs() < 1e-12);
    }

    /// With no documents there are no likelihood terms: sweeping must leave
    /// topics and rates marginally distributed as the prior.
    #[test]
    fn empty_corpus_recovers_priors() {
        let config = TopicConfig {
            truncation: 3,
            alpha_theta: 0.4,
            ..tiny_config()
        };
        let corpus = Corpus {
            vocab: vec!["a".into(), "b".into()],
            timestamps: vec![0.0],
            docs: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut state = TopicState::init_for_corpus(&config, &corpus, &mut rng).unwrap();
        let sweeps = 4000;
        let mut mean_pi = 0.0;
        let mut mean_theta0 = 0.0;
        for _ in 0..sweeps {
            state.gibbs_sweep(&corpus, &mut rng).unwrap();
            mean_pi += state.pi[0];
            mean_theta0 += state.topics[0][0];
        }
        // π ~ Ga(1/3, 1) has mean 1/3; θ_0 ~ Dir(0.4, 0.4) has mean 1/2.
        assert!((mean_pi / sweeps as f64 - 1.0 / 3.0).abs() < 0.05);
        assert!((mean_theta0 / sweeps as f64 - 0.5).abs() < 0.05);
    }

    /// Getting-it-right: forward joint draws versus the successive
    /// conditional chain on the 2-topic, 3-word, 2×2 instance.
    #[test]
    fn gibbs_sweep_passes_getting_it_right() {
        let config = tiny_config();
        let shape = tiny_corpus();
        let rounds = 6000;
        let mut rng = ChaCha8Rng::seed_from_u64(2718);

        let stats = |state: &TopicState, corpus: &Corpus| -> Vec<f64> {
            vec![
                state.pi.iter().sum(),
                state.topics[0][0],
                state.active.iter().flatten().filter(|&&r| r).count() as f64,
                corpus.total_tokens() as f64,
                state.beta.iter().flatten().sum(),
            ]
        };

        let mut forward: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for _ in 0..rounds {
            let (state, corpus) = TopicState::draw_prior(&config, &shape, &mut rng).unwrap();
            for (acc, s) in forward.iter_mut().zip(stats(&state, &corpus)) {
                acc.push(s);
            }
        }

        let (mut state, mut corpus) = TopicState::draw_prior(&config, &shape, &mut rng).unwrap();
        let mut chain: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for _ in 0..rounds {
            state.gibbs_sweep(&corpus, &mut rng).unwrap();
            state.resample_counts(&mut corpus, &mut rng);
            for (acc, s) in chain.iter_mut().zip(stats(&state, &corpus)) {
                acc.push(s);
            }
        }

        for (name, (f, c)) in ["sum_pi", "theta00", "sum_r", "total_w", "sum_beta"]
            .iter()
            .zip(forward.iter().zip(chain.iter()))
        {
            let (zm, zs) = mean_and_second_moment_z(f, c);
            assert!(
                zm.abs() < 4.0 && zs.abs() < 4.0,
                "{name}: z_mean {zm:.2}, z_second {zs:.2}"
            );
        }
    }
}
