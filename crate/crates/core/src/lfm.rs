//! Covariate-dependent linear-Gaussian latent feature model on a thinned
//! beta process.
//!
//! Each of `K` truncated beta-process atoms carries a latent feature
//! `A_k ∈ R^d` and a probit-RVM thinning kernel. At covariate `t` the atom is
//! locally available when `r_k^t = 1` with `r_k^t ~ Ber(p_{x_k}(t))`; a data
//! point at `t` then uses the feature with probability `π_k`, and
//!
//! `y^{n,t} ~ N(Σ_k z_k^{n,t} A_k, σ² I)`, `z_k^{n,t} ~ Ber(r_k^t π_k)`.
//!
//! Inference introduces a per-point auxiliary `b_k^{n,t} ~ Ber(π_k)` with
//! `z = b ∧ r`, which makes `π` conjugate and lets `(b, r)` be sampled from
//! their joint conditional by enumeration. The remaining conditionals are
//! the standard conjugate ones for a linear-Gaussian feature model, and the
//! kernels are resampled through the shared probit-RVM block.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::crm::{draw_truncated_crm, LevySpec};
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, McmcSchedule, TraceRow};
use crate::rng::substream;
use crate::thinning::{logsumexp, rvm_gibbs_block, ProbitRvmKernel, RvmObservation, RvmPrior};

/// Observations: one covariate and one `d`-dimensional real vector per point,
/// with an optional observed-entry mask for prediction tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmData {
    pub covariates: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// `mask[n][j] = true` means entry `j` of point `n` is observed. `None`
    /// means fully observed.
    pub mask: Option<Vec<Vec<bool>>>,
}

impl LfmData {
    pub fn new(covariates: Vec<f64>, y: Vec<Vec<f64>>) -> Result<Self> {
        if covariates.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: covariates.len(),
                actual: y.len(),
            });
        }
        let d = y.first().map_or(0, |row| row.len());
        if y.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidParameter("ragged observation matrix".into()));
        }
        Ok(LfmData {
            covariates,
            y,
            mask: None,
        })
    }

    /// Attaches an observed-entry mask (`true` = observed), validating that
    /// its dimensions match the data.
    pub fn with_mask(mut self, mask: Vec<Vec<bool>>) -> Result<Self> {
        if mask.len() != self.y.len() || mask.iter().any(|row| row.len() != self.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.y.len(),
                actual: mask.len(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn n_points(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.y.first().map_or(0, |row| row.len())
    }

    /// Rows `t <tab> y_1 … y_d`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, row) in self.covariates.iter().zip(&self.y) {
            out.push_str(&t.to_string());
            for v in row {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut covariates = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let t: f64 = fields
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: empty row", lineno + 1)))?
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad covariate", lineno + 1)))?;
            let row: std::result::Result<Vec<f64>, _> = fields.map(str::parse).collect();
            let row = row.map_err(|_| Error::Parse(format!("line {}: bad value", lineno + 1)))?;
            if row.is_empty() {
                return Err(Error::Parse(format!(
                    "line {}: no observations",
                    lineno + 1
                )));
            }
            covariates.push(t);
            y.push(row);
        }
        LfmData::new(covariates, y)
    }
}

/// Hyperparameters and sampler options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmConfig {
    /// Truncation level `K`.
    pub truncation: usize,
    /// Normal-gamma hyperparameters of the RVM weight prior.
    pub c0: f64,
    pub d0: f64,
    pub width_dictionary: Vec<f64>,
    /// Inverse-gamma (shape, scale) prior on the observation noise σ².
    pub noise_prior: (f64, f64),
    /// Inverse-gamma (shape, scale) prior on the feature variance σ_A².
    pub feature_prior: (f64, f64),
    /// `false` forces `r ≡ 1` (the exchangeable beta-Bernoulli model) and
    /// skips kernel updates.
    pub dynamic: bool,
    /// Extra covariate values to carry indicators on (activation curves).
    pub curve_grid: Vec<f64>,
}

impl Default for LfmConfig {
    fn default() -> Self {
        LfmConfig {
            truncation: 20,
            c0: 0.01,
            d0: 0.01,
            width_dictionary: vec![0.01, 0.05, 0.25, 1.0],
            noise_prior: (1.0, 1.0),
            feature_prior: (1.0, 1.0),
            dynamic: true,
            curve_grid: Vec::new(),
        }
    }
}

impl LfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(Error::InvalidParameter(
                "truncation must be at least 2".into(),
            ));
        }
        for (name, v) in [
            ("c0", self.c0),
            ("d0", self.d0),
            ("noise prior shape", self.noise_prior.0),
            ("noise prior scale", self.noise_prior.1),
            ("feature prior shape", self.feature_prior.0),
            ("feature prior scale", self.feature_prior.1),
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

/// Full Gibbs state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmState {
    pub config: LfmConfig,
    /// Beta-process atom masses, each in (0, 1).
    pub pi: Vec<f64>,
    /// Feature matrix, `K × d`.
    pub features: Vec<Vec<f64>>,
    pub kernels: Vec<ProbitRvmKernel>,
    pub rvm: Vec<RvmPrior>,
    /// Sorted covariate grid: unique data covariates plus `curve_grid`.
    pub grid: Vec<f64>,
    /// Grid index of each data point's covariate.
    pub point_grid: Vec<usize>,
    /// `r_k^t`, indexed `[k][grid index]`.
    pub indicators: Vec<Vec<bool>>,
    /// Auxiliary `b_k^{n,t}`, indexed `[n][k]`.
    pub usage: Vec<Vec<bool>>,
    /// `z = b ∧ r`, indexed `[n][k]`.
    pub assignments: Vec<Vec<bool>>,
    pub sigma2: f64,
    pub sigma_a2: f64,
}

fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    1.0 / Gamma::new(shape, 1.0 / scale)
        .expect("validated parameters")
        .sample(rng)
}

fn draw_beta_open<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let dist = Beta::new(a, b).expect("positive parameters");
    loop {
        let x = dist.sample(rng);
        if x > 0.0 && x < 1.0 {
            return x;
        }
    }
}

/// Beta posterior parameters for one atom mass given `m` successes in `n`
/// prior-level Bernoulli trials.
pub fn pi_posterior(truncation: usize, m: usize, n: usize) -> (f64, f64) {
    let k = truncation as f64;
    (1.0 / k + m as f64, 1.0 - 1.0 / k + (n - m) as f64)
}

/// The four `(r, b)` joint-cell probabilities for a single data point, in
/// order `(r=0,b=0), (r=0,b=1), (r=1,b=0), (r=1,b=1)`, normalized. `ll1` and
/// `ll0` are the point's Gaussian log-likelihoods under `z = 1` and `z = 0`.
pub fn joint_br_cells(pi: f64, p: f64, ll1: f64, ll0: f64) -> [f64; 4] {
    let logs = [
        (1.0 - p).ln() + (1.0 - pi).ln() + ll0,
        (1.0 - p).ln() + pi.ln() + ll0,
        p.ln() + (1.0 - pi).ln() + ll0,
        p.ln() + pi.ln() + ll1,
    ];
    let norm = logsumexp(&logs);
    let cells = [
        (logs[0] - norm).exp(),
        (logs[1] - norm).exp(),
        (logs[2] - norm).exp(),
        (logs[3] - norm).exp(),
    ];
    debug_assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    debug_assert!(cells.iter().all(|&c| c >= 0.0));
    cells
}

impl LfmState {
    /// Draws a complete state from the prior for data with the given
    /// covariates and dimension.
    pub fn draw_prior<R: Rng + ?Sized>(
        config: &LfmConfig,
        covariates: &[f64],
        dim: usize,
        rng: &mut R,
    ) -> Result<LfmState> {
        config.validate()?;
        let mut grid: Vec<f64> = covariates.to_vec();
        grid.extend(&config.curve_grid);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let point_grid = covariates
            .iter()
            .map(|t| {
                grid.binary_search_by(|g| g.partial_cmp(t).unwrap())
                    .unwrap()
            })
            .collect::<Vec<_>>();

        let sigma2 = draw_inverse_gamma(config.noise_prior.0, config.noise_prior.1, rng);
        let sigma_a2 = draw_inverse_gamma(config.feature_prior.0, config.feature_prior.1, rng);

        // Kernel centers sit at the observed covariate locations.
        let centers = grid.clone();
        let spec = LevySpec::beta_process(1.0, config.truncation)?;
        let sigma_a = sigma_a2.sqrt();
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let crm = draw_truncated_crm(
            &spec,
            |r: &mut ChaCha8Rng| (0..dim).map(|_| normal.sample(r) * sigma_a).collect(),
            |r: &mut ChaCha8Rng| {
                let mut prior = RvmPrior::new(
                    config.c0,
                    config.d0,
                    config.width_dictionary.clone(),
                    centers.len() + 1,
                )
                .expect("validated config");
                let omega = prior.draw_weights(r);
                let phi = prior.draw_width(r);
                (
                    ProbitRvmKernel::new(omega, phi, centers.clone()).expect("consistent dims"),
                    prior,
                )
            },
            rng,
        )?;

        let mut pi = Vec::with_capacity(config.truncation);
        let mut features = Vec::with_capacity(config.truncation);
        let mut kernels = Vec::with_capacity(config.truncation);
        let mut rvm = Vec::with_capacity(config.truncation);
        for atom in crm.atoms {
            pi.push(atom.mass);
            features.push(atom.theta);
            kernels.push(atom.x.0);
            rvm.push(atom.x.1);
        }

        let indicators: Vec<Vec<bool>> = kernels
            .iter()
            .map(|kernel| {
                grid.iter()
                    .map(|&t| !config.dynamic || rng.random_bool(kernel.probability(t)))
                    .collect()
            })
            .collect();
        let usage: Vec<Vec<bool>> = (0..covariates.len())
            .map(|_| pi.iter().map(|&p| rng.random_bool(p)).collect())
            .collect();
        let assignments = (0..covariates.len())
            .map(|n| {
                (0..config.truncation)
                    .map(|k| usage[n][k] && indicators[k][point_grid[n]])
                    .collect()
            })
            .collect();

        Ok(LfmState {
            config: config.clone(),
            pi,
            features,
            kernels,
            rvm,
            grid,
            point_grid,
            indicators,
            usage,
            assignments,
            sigma2,
            sigma_a2,
        })
    }

    /// Sampler initialization for observed data: a prior-drawn state with
    /// every indicator on, dense random assignments and unit scales. A dense
    /// start lets the chain prune unused features, which mixes far better
    /// than waiting for prior-drawn features to align with the residuals.
    pub fn init_for_data<R: Rng + ?Sized>(
        config: &LfmConfig,
        data: &LfmData,
        rng: &mut R,
    ) -> Result<LfmState> {
        let mut state = LfmState::draw_prior(config, &data.covariates, data.dim(), rng)?;
        state.sigma2 = 1.0;
        state.sigma_a2 = 1.0;
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        for row in state.features.iter_mut() {
            for v in row.iter_mut() {
                *v = normal.sample(rng);
            }
        }
        // Neutral kernels: zero weights (p ≡ 1/2) and unit precisions. With
        // small (c0, d0) the prior can draw enormous weights, which is fine
        // as a prior but a poor place to start a chain.
        for (kernel, prior) in state.kernels.iter_mut().zip(state.rvm.iter_mut()) {
            kernel.omega.iter_mut().for_each(|w| *w = 0.0);
            prior.precisions.iter_mut().for_each(|l| *l = 1.0);
        }
        for flags in state.indicators.iter_mut() {
            for r in flags.iter_mut() {
                *r = true;
            }
        }
        for n in 0..data.n_points() {
            for k in 0..config.truncation {
                let b = rng.random_bool(0.5);
                state.usage[n][k] = b;
                state.assignments[n][k] = b;
            }
        }
        Ok(state)
    }

    pub fn truncation(&self) -> usize {
        self.config.truncation
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    /// Number of features used by at least one point.
    pub fn active_features(&self) -> usize {
        (0..self.truncation())
            .filter(|&k| self.assignments.iter().any(|z| z[k]))
            .count()
    }

    /// Draws observations from the likelihood given the current latent state:
    /// `y_n ~ N(Σ_k z_nk A_k, σ² I)`.
    pub fn generate_data<R: Rng + ?Sized>(&self, rng: &mut R) -> LfmData {
        let d = self.dim();
        let sigma = self.sigma2.sqrt();
        let normal = rand_distr::Normal::new(0.0, sigma).expect("nonnegative noise sd");
        let y = self
            .assignments
            .iter()
            .map(|z| {
                let mut row = vec![0.0; d];
                for (k, &on) in z.iter().enumerate() {
                    if on {
                        for (r, a) in row.iter_mut().zip(&self.features[k]) {
                            *r += a;
                        }
                    }
                }
                for r in row.iter_mut() {
                    *r += normal.sample(rng);
                }
                row
            })
            .collect();
        let covariates = self.point_grid.iter().map(|&g| self.grid[g]).collect();
        LfmData {
            covariates,
            y,
            mask: None,
        }
    }

    /// Gaussian log-likelihood of `data` under the current state.
    pub fn log_likelihood(&self, data: &LfmData) -> f64 {
        let d = self.dim();
        let n = data.n_points();
        let sse: f64 = self
            .residuals(data)
            .iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>())
            .sum();
        -0.5 * (n * d) as f64 * (2.0 * std::f64::consts::PI * self.sigma2).ln()
            - sse / (2.0 * self.sigma2)
    }

    fn residuals(&self, data: &LfmData) -> Vec<Vec<f64>> {
        data.y
            .iter()
            .zip(&self.assignments)
            .map(|(y, z)| {
                let mut r = y.clone();
                for (k, &on) in z.iter().enumerate() {
                    if on {
                        for (ri, a) in r.iter_mut().zip(&self.features[k]) {
                            *ri -= a;
                        }
                    }
                }
                r
            })
            .collect()
    }

    /// Thinning probability of feature `k` at covariate `t` under the
    /// current kernel.
    pub fn thinning_curve(&self, k: usize, t: f64) -> f64 {
        self.kernels[k].probability(t)
    }

    fn assert_consistent(&self) {
        debug_assert!(self.assignments.iter().enumerate().all(|(n, z)| {
            z.iter()
                .enumerate()
                .all(|(k, &zz)| zz == (self.usage[n][k] && self.indicators[k][self.point_grid[n]]))
        }));
    }

    /// One systematic Gibbs scan: the `(b, r)` joint per (feature,
    /// covariate), features, masses, kernels, then noise scales.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&mut self, data: &LfmData, rng: &mut R) -> Result<()> {
        let n = data.n_points();
        let d = data.dim();
        if n != self.usage.len() || d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.usage.len(),
                actual: n,
            });
        }
        let k_trunc = self.truncation();

        // Points grouped by grid cell.
        let mut points_at: Vec<Vec<usize>> = vec![Vec::new(); self.grid.len()];
        for (p, &g) in self.point_grid.iter().enumerate() {
            points_at[g].push(p);
        }

        let mut resid = self.residuals(data);

        // (b, r) joint per (k, t). The indicator is shared by all points in a
        // grid cell, so r is drawn from its two-way marginal with every b
        // summed out, then the b's from their conditionals given r.
        for k in 0..k_trunc {
            let pi_k = self.pi[k];
            let ln_pi = pi_k.ln();
            let ln_1mpi = (1.0 - pi_k).ln();
            for g in 0..self.grid.len() {
                let p_keep = if self.config.dynamic {
                    self.kernels[k].probability(self.grid[g])
                } else {
                    1.0
                };
                // Per-point log-likelihoods under z = 1 and z = 0.
                let stats: Vec<(usize, f64, f64)> = points_at[g]
                    .iter()
                    .map(|&pt| {
                        let z_on = self.assignments[pt][k];
                        let mut ll0 = 0.0;
                        let mut ll1 = 0.0;
                        for j in 0..d {
                            let base = resid[pt][j] + if z_on { self.features[k][j] } else { 0.0 };
                            let dev = base - self.features[k][j];
                            ll0 += -base * base;
                            ll1 += -dev * dev;
                        }
                        (pt, ll1 / (2.0 * self.sigma2), ll0 / (2.0 * self.sigma2))
                    })
                    .collect();

                let r_new = if self.config.dynamic {
                    let mut log_m1 = p_keep.ln();
                    let mut log_m0 = (1.0 - p_keep).ln();
                    for &(_, ll1, ll0) in &stats {
                        log_m1 += logsumexp(&[ln_pi + ll1, ln_1mpi + ll0]);
                        log_m0 += ll0;
                    }
                    let norm = logsumexp(&[log_m1, log_m0]);
                    let prob_r = (log_m1 - norm).exp();
                    debug_assert!((0.0..=1.0).contains(&prob_r));
                    rng.random_bool(prob_r)
                } else {
                    true
                };
                self.indicators[k][g] = r_new;

                for &(pt, ll1, ll0) in &stats {
                    let b_new = if r_new {
                        let log_b1 = ln_pi + ll1;
                        let log_b0 = ln_1mpi + ll0;
                        let prob_b = (log_b1 - logsumexp(&[log_b1, log_b0])).exp();
                        rng.random_bool(prob_b)
                    } else {
                        rng.random_bool(pi_k)
                    };
                    let z_old = self.assignments[pt][k];
                    let z_new = b_new && r_new;
                    self.usage[pt][k] = b_new;
                    if z_new != z_old {
                        self.assignments[pt][k] = z_new;
                        let sign = if z_new { -1.0 } else { 1.0 };
                        for (rj, a) in resid[pt].iter_mut().zip(&self.features[k]) {
                            *rj += sign * a;
                        }
                    }
                }
            }
        }

        // Features, row-wise conjugate Gaussian.
        self.update_features(&mut resid, rng);

        // Masses: beta-Bernoulli conjugacy over the prior-level b's.
        for k in 0..k_trunc {
            let m = self.usage.iter().filter(|b| b[k]).count();
            let (a, b) = pi_posterior(k_trunc, m, n);
            self.pi[k] = draw_beta_open(a, b, rng);
        }

        // Kernels via the shared probit-RVM block.
        if self.config.dynamic {
            for k in 0..k_trunc {
                let obs: Vec<RvmObservation> = self
                    .grid
                    .iter()
                    .zip(&self.indicators[k])
                    .map(|(&t, &active)| RvmObservation {
                        covariate: t,
                        active,
                    })
                    .collect();
                rvm_gibbs_block(&obs, &mut self.kernels[k], &mut self.rvm[k], rng)?;
            }
        }

        // Noise scales.
        let sse: f64 = resid
            .iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>())
            .sum();
        self.sigma2 = draw_inverse_gamma(
            self.config.noise_prior.0 + (n * d) as f64 / 2.0,
            self.config.noise_prior.1 + sse / 2.0,
            rng,
        );
        let feature_ss: f64 = self
            .features
            .iter()
            .map(|f| f.iter().map(|x| x * x).sum::<f64>())
            .sum();
        self.sigma_a2 = draw_inverse_gamma(
            self.config.feature_prior.0 + (k_trunc * d) as f64 / 2.0,
            self.config.feature_prior.1 + feature_ss / 2.0,
            rng,
        );

        self.assert_consistent();
        Ok(())
    }

    /// Row-wise conjugate update of the feature matrix, maintaining the
    /// residuals: per-coordinate precision `(Σ_n z_nk)/σ² + 1/σ_A²`, mean
    /// scaled from the sum of assigned residuals.
    pub(crate) fn update_features<R: Rng + ?Sized>(&mut self, resid: &mut [Vec<f64>], rng: &mut R) {
        let d = self.dim();
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        for k in 0..self.truncation() {
            let assigned: Vec<usize> = (0..resid.len())
                .filter(|&pt| self.assignments[pt][k])
                .collect();
            let m = assigned.len() as f64;
            let precision = m / self.sigma2 + 1.0 / self.sigma_a2;
            let sd = precision.sqrt().recip();
            let mut new_row = vec![0.0; d];
            for (j, slot) in new_row.iter_mut().enumerate() {
                let mut s = m * self.features[k][j];
                for &pt in &assigned {
                    s += resid[pt][j];
                }
                let mean = s / (self.sigma2 * precision);
                *slot = mean + sd * normal.sample(rng);
            }
            for &pt in &assigned {
                for j in 0..d {
                    resid[pt][j] += self.features[k][j] - new_row[j];
                }
            }
            self.features[k] = new_row;
        }
    }
}

/// Generates observations from a fully specified state (the forward model):
/// `z` is already realized inside the state, `y = ZA + noise`.
pub fn lfm_generate<R: Rng + ?Sized>(truth: &LfmState, rng: &mut R) -> LfmData {
    truth.generate_data(rng)
}

/// Fits the model from a fresh prior-drawn state. The callback sees every
/// trace row and each retained sample.
pub fn fit_lfm<F>(
    data: &LfmData,
    config: &LfmConfig,
    schedule: &McmcSchedule,
    seed: u64,
    on_sweep: F,
) -> Result<(Vec<LfmState>, Vec<TraceRow>)>
where
    F: FnMut(&TraceRow, Option<&LfmState>) -> Result<()>,
{
    let mut rng = substream(seed, 0);
    let state = LfmState::init_for_data(config, data, &mut rng)?;
    run_chain(
        state,
        schedule,
        |s| s.gibbs_sweep(data, &mut rng),
        |s| (s.active_features(), s.log_likelihood(data)),
        on_sweep,
    )
}

/// A prediction task: one point with a single observed entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub covariate: f64,
    pub observed_index: usize,
    pub observed_value: f64,
}

/// Predicts the unobserved entries of a test point by averaging `z A` over
/// posterior samples, with `z` sampled per sample by a short Gibbs scan
/// conditioned on the observed entry. Returns the `d − 1` predictions in
/// coordinate order, skipping the observed index.
pub fn lfm_predict_missing<R: Rng + ?Sized>(
    samples: &[LfmState],
    point: &TestPoint,
    scans: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Usage(
            "prediction requires at least one posterior sample".into(),
        ));
    }
    let d = samples[0].dim();
    if point.observed_index >= d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: point.observed_index,
        });
    }
    let mut acc = vec![0.0; d];
    for state in samples {
        let k_trunc = state.truncation();
        // Marginal prior inclusion probability of a fresh point at this
        // covariate: P(z = 1) = p_{x_k}(t) π_k.
        let q: Vec<f64> = (0..k_trunc)
            .map(|k| {
                let p = if state.config.dynamic {
                    state.kernels[k].probability(point.covariate)
                } else {
                    1.0
                };
                (p * state.pi[k]).clamp(1e-12, 1.0 - 1e-12)
            })
            .collect();
        let mut z: Vec<bool> = q.iter().map(|&p| rng.random_bool(p)).collect();
        let j = point.observed_index;
        let mut fitted: f64 = (0..k_trunc)
            .filter(|&k| z[k])
            .map(|k| state.features[k][j])
            .sum();
        for _ in 0..scans {
            for k in 0..k_trunc {
                let base =
                    point.observed_value - fitted + if z[k] { state.features[k][j] } else { 0.0 };
                let dev = base - state.features[k][j];
                let ll0 = -base * base / (2.0 * state.sigma2);
                let ll1 = -dev * dev / (2.0 * state.sigma2);
                let l1 = q[k].ln() + ll1;
                let l0 = (1.0 - q[k]).ln() + ll0;
                let prob = (l1 - logsumexp(&[l1, l0])).exp();
                let z_new = rng.random_bool(prob);
                if z_new != z[k] {
                    fitted += if z_new {
                        state.features[k][j]
                    } else {
                        -state.features[k][j]
                    };
                    z[k] = z_new;
                }
            }
        }
        for k in 0..k_trunc {
            if z[k] {
                for (a, f) in acc.iter_mut().zip(&state.features[k]) {
                    *a += f;
                }
            }
        }
    }
    let b = samples.len() as f64;
    Ok(acc
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| j != point.observed_index)
        .map(|(_, v)| v / b)
        .collect())
}
