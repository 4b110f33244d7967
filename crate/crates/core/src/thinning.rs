//! Thinning kernels and operations on thinned CRMs.
//!
//! Each atom of a CRM on the augmented space carries a thinning function
//! `p_x : T → [0,1]`; the measure at covariate `t` keeps atom `k` with an
//! independent Bernoulli indicator `r_k^t ~ Ber(p_{x_k}(t))`. Two kernel
//! families are provided:
//!
//! - a single-location kernel, `p_x(t) = f(|x − t|)` with `f` a scaled
//!   Gaussian profile — unimodal, maximized at the center;
//! - a probit-RVM kernel,
//!   `p_x(t) = Φ(ω_0 + Σ_l ω_l exp(−φ ‖t − t_l‖²))`,
//!   a weighted kernel expansion over fixed centers pushed through the
//!   standard normal CDF, which lets an atom be active at multiple disjoint
//!   covariate regions.
//!
//! The module also houses the correlation law between two thinned marginals,
//! the kernel mixture expectation `E[B_t] = Σ_k p_{x_k}(t) π_k δ_{θ_k}`, the
//! normalization of a thinned measure into a probability vector, and the
//! Gibbs block that resamples probit-RVM parameters from binary indicator
//! observations via Albert–Chib data augmentation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::crm::TruncatedCrm;
use crate::error::{Error, Result};

/// Floor/ceiling used to keep probit probabilities strictly inside (0, 1)
/// at f64 resolution.
const PROB_FLOOR: f64 = 1e-300;

/// Uniform clamp for inverse-CDF truncated-normal sampling.
const TRUNC_EPS: f64 = 1e-12;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal is valid")
}

/// Standard normal CDF, clamped to the open unit interval.
pub fn probit_probability(activation: f64) -> f64 {
    std_normal()
        .cdf(activation)
        .clamp(PROB_FLOOR, 1.0 - f64::EPSILON)
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Probit-RVM thinning kernel: `L + 1` weights (bias first), a shared width
/// and `L` fixed centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitRvmKernel {
    pub omega: Vec<f64>,
    pub phi: f64,
    pub centers: Vec<f64>,
}

impl ProbitRvmKernel {
    pub fn new(omega: Vec<f64>, phi: f64, centers: Vec<f64>) -> Result<Self> {
        if omega.len() != centers.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: centers.len() + 1,
                actual: omega.len(),
            });
        }
        if phi <= 0.0 || !phi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel width must be positive, got {phi}"
            )));
        }
        Ok(ProbitRvmKernel {
            omega,
            phi,
            centers,
        })
    }

    /// Basis expansion at covariate `t`: `(1, exp(−φ(t−t_1)²), …)`.
    pub fn design_row(&self, t: f64) -> Vec<f64> {
        design_row(&self.centers, self.phi, t)
    }

    /// The probit argument `ω_0 + Σ_l ω_l exp(−φ(t−t_l)²)`.
    pub fn activation(&self, t: f64) -> f64 {
        self.design_row(t)
            .iter()
            .zip(&self.omega)
            .map(|(d, w)| d * w)
            .sum()
    }

    pub fn probability(&self, t: f64) -> f64 {
        probit_probability(self.activation(t))
    }
}

fn design_row(centers: &[f64], phi: f64, t: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(centers.len() + 1);
    row.push(1.0);
    row.extend(centers.iter().map(|c| (-phi * (t - c) * (t - c)).exp()));
    row
}

/// A thinning function mapping covariates to atom-retention probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThinningKernel {
    /// Unimodal profile centered at one covariate location: a scaled Gaussian
    /// `p(t) = peak · exp(−(t − center)² / (2 width²))`.
    SingleLocation {
        center: f64,
        width: f64,
        peak: f64,
    },
    ProbitRvm(ProbitRvmKernel),
}

impl ThinningKernel {
    pub fn single_location(center: f64, width: f64, peak: f64) -> Result<Self> {
        if width <= 0.0 || !width.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "profile width must be positive, got {width}"
            )));
        }
        if !(0.0..=1.0).contains(&peak) {
            return Err(Error::InvalidParameter(format!(
                "profile peak must lie in [0, 1], got {peak}"
            )));
        }
        Ok(ThinningKernel::SingleLocation {
            center,
            width,
            peak,
        })
    }
}

/// Evaluates the thinning probability `p_x(t)`. Total on all inputs.
pub fn thinning_probability(kernel: &ThinningKernel, t: f64) -> f64 {
    match kernel {
        ThinningKernel::SingleLocation {
            center,
            width,
            peak,
        } => {
            let d = t - center;
            peak * (-d * d / (2.0 * width * width)).exp()
        }
        ThinningKernel::ProbitRvm(k) => k.probability(t),
    }
}

/// A realized thinning of a truncated CRM at one covariate value. Retained
/// atoms keep their source masses exactly; thinned atoms contribute zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedMeasure {
    pub source_masses: Vec<f64>,
    pub indicators: Vec<bool>,
    pub covariate: f64,
}

impl ThinnedMeasure {
    /// Mass contributed by atom `k`: the source mass if retained, else zero.
    pub fn mass(&self, k: usize) -> f64 {
        if self.indicators[k] {
            self.source_masses[k]
        } else {
            0.0
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.indicators
            .iter()
            .zip(&self.source_masses)
            .filter(|(r, _)| **r)
            .map(|(_, m)| m)
            .sum()
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        self.indicators
            .iter()
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Thins a truncated CRM at covariate `t` with one kernel per atom:
/// `r_k ~ Ber(p_{x_k}(t))` independently.
pub fn thin<X, R: Rng + ?Sized>(
    crm: &TruncatedCrm<X>,
    kernels: &[ThinningKernel],
    t: f64,
    rng: &mut R,
) -> Result<ThinnedMeasure> {
    if kernels.len() != crm.atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: crm.atoms.len(),
            actual: kernels.len(),
        });
    }
    let indicators = kernels
        .iter()
        .map(|k| rng.random_bool(thinning_probability(k, t)))
        .collect();
    Ok(ThinnedMeasure {
        source_masses: crm.masses(),
        indicators,
        covariate: t,
    })
}

/// Correlation between the total thinned masses at two covariate values with
/// per-atom thinning probabilities `p` and `q` and mass variances `v`
/// (equal weights when omitted):
///
/// `Corr = Σ_k v_k p_k q_k / √(Σ_k v_k p_k · Σ_k v_k q_k)`.
///
/// Indicators at distinct covariates are independent given the
/// probabilities, so `E[r^t r^{t'}] = p q` in the numerator, while
/// `E[(r^t)²] = p` gives the first-power denominator sums. The value does
/// not otherwise depend on the mass distribution.
pub fn correlation(p: &[f64], q: &[f64], v: Option<&[f64]>) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    if let Some(v) = v {
        if v.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                actual: v.len(),
            });
        }
        if v.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "mass variances must be positive and finite".into(),
            ));
        }
    }
    for probs in [p, q] {
        if probs.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidParameter(
                "thinning probabilities must lie in [0, 1]".into(),
            ));
        }
    }
    let w = |k: usize| v.map_or(1.0, |v| v[k]);
    let mut num = 0.0;
    let mut dp = 0.0;
    let mut dq = 0.0;
    for k in 0..p.len() {
        num += w(k) * p[k] * q[k];
        dp += w(k) * p[k];
        dq += w(k) * q[k];
    }
    if dp == 0.0 || dq == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(num / (dp * dq).sqrt())
}

/// Per-atom expectation of the thinned measure at covariate `t`:
/// the vector `p_{x_k}(t) · π_k`, i.e. the atom weights of
/// `E[B_t] = Σ_k K(t, m_k, ψ_k) π_k δ_{θ_k}`. For a beta-process base and
/// unimodal kernels this is exactly the kernel beta process, which makes
/// thinning a generative construction for that model.
pub fn kbp_expectation<X>(
    crm: &TruncatedCrm<X>,
    kernels: &[ThinningKernel],
    t: f64,
) -> Result<Vec<f64>> {
    if kernels.len() != crm.atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: crm.atoms.len(),
            actual: kernels.len(),
        });
    }
    Ok(crm
        .atoms
        .iter()
        .zip(kernels)
        .map(|(a, k)| thinning_probability(k, t) * a.mass)
        .collect())
}

/// Normalizes a thinned measure into a probability vector over its retained
/// atoms (in atom order). Normalizing a thinned gamma process in this way
/// yields a covariate-indexed Dirichlet-process family.
pub fn normalize(m: &ThinnedMeasure) -> Result<Vec<f64>> {
    let total = m.total_mass();
    if total <= 0.0 {
        return Err(Error::EmptyMeasure);
    }
    Ok(m.retained_indices()
        .into_iter()
        .map(|k| m.source_masses[k] / total)
        .collect())
}

// ---------------------------------------------------------------------------
// Probit-RVM Gibbs block
// ---------------------------------------------------------------------------

/// Prior and auxiliary state for one probit-RVM kernel: normal-gamma weight
/// prior (per-weight precisions `λ_l ~ Ga(c_0, d_0)`, `ω_l ~ N(0, λ_l⁻¹)`)
/// and a finite dictionary of candidate widths with a uniform prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvmPrior {
    pub c0: f64,
    pub d0: f64,
    pub width_dictionary: Vec<f64>,
    pub precisions: Vec<f64>,
}

impl RvmPrior {
    pub fn new(c0: f64, d0: f64, width_dictionary: Vec<f64>, n_weights: usize) -> Result<Self> {
        if c0 <= 0.0 || d0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "normal-gamma hyperparameters must be positive, got ({c0}, {d0})"
            )));
        }
        if width_dictionary.is_empty() {
            return Err(Error::InvalidParameter("width dictionary is empty".into()));
        }
        if width_dictionary.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "width dictionary entries must be positive".into(),
            ));
        }
        Ok(RvmPrior {
            c0,
            d0,
            width_dictionary,
            // Prior-mean initialization.
            precisions: vec![c0 / d0; n_weights],
        })
    }

    /// Draws fresh precisions and weights from the prior.
    pub fn draw_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let gamma = Gamma::new(self.c0, 1.0 / self.d0).expect("validated parameters");
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        for lam in self.precisions.iter_mut() {
            *lam = gamma.sample(rng);
        }
        self.precisions
            .iter()
            .map(|&lam| normal.sample(rng) / lam.sqrt())
            .collect()
    }

    pub fn draw_width<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.width_dictionary[rng.random_range(0..self.width_dictionary.len())]
    }
}

/// One binary thinning observation: a covariate and whether the atom was
/// retained there.
#[derive(Debug, Clone, Copy)]
pub struct RvmObservation {
    pub covariate: f64,
    pub active: bool,
}

/// Samples from `N(mean, 1)` truncated to the positive (`positive = true`)
/// or nonpositive reals, by inversion with the uniform clamped to
/// `[ε, 1−ε]`, `ε = 1e−12`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    let n = std_normal();
    let u: f64 = rng.random();
    // Mass of the kept side, measured on the standardized variable x - mean.
    let cut = n.cdf(-mean); // P(x <= 0)
    let target = if positive {
        cut + u * (1.0 - cut)
    } else {
        u * cut
    };
    mean + n.inverse_cdf(target.clamp(TRUNC_EPS, 1.0 - TRUNC_EPS))
}

/// Gaussian weight posterior for probit regression with design rows `design`,
/// augmented responses `rtilde` and prior precisions `precisions`:
/// precision `diag(λ) + DᵀD`, mean `(diag(λ) + DᵀD)⁻¹ Dᵀ r̃`.
fn weight_posterior(
    design: &[Vec<f64>],
    rtilde: &[f64],
    precisions: &[f64],
) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
    let dim = precisions.len();
    let mut prec = DMatrix::from_diagonal(&DVector::from_row_slice(precisions));
    let mut dtr = DVector::zeros(dim);
    for (row, &r) in design.iter().zip(rtilde) {
        for i in 0..dim {
            dtr[i] += row[i] * r;
            for j in 0..dim {
                prec[(i, j)] += row[i] * row[j];
            }
        }
    }
    let chol = Cholesky::new(prec).ok_or_else(|| {
        Error::Numerical("singular posterior precision in RVM weight update".into())
    })?;
    let mean = chol.solve(&dtr);
    Ok((mean, chol))
}

/// Posterior parameters (shape, rate) of one weight precision.
fn lambda_posterior(c0: f64, d0: f64, omega: f64) -> (f64, f64) {
    (c0 + 0.5, d0 + 0.5 * omega * omega)
}

/// Bernoulli log-likelihood of the observed indicators under width `phi`,
/// holding the weights fixed.
fn width_log_likelihood(
    omega: &[f64],
    centers: &[f64],
    phi: f64,
    observations: &[RvmObservation],
) -> f64 {
    observations
        .iter()
        .map(|obs| {
            let act: f64 = design_row(centers, phi, obs.covariate)
                .iter()
                .zip(omega)
                .map(|(d, w)| d * w)
                .sum();
            // ln Φ(a) for active, ln Φ(-a) for inactive; clamped away from 0.
            let p = if obs.active {
                probit_probability(act)
            } else {
                probit_probability(-act)
            };
            p.ln()
        })
        .sum()
}

/// One systematic Gibbs scan of a probit-RVM kernel given binary indicator
/// observations:
///
/// 1. auxiliaries `r̃_i ~ N(activation(t_i), 1)` truncated to `r̃ > 0` iff the
///    indicator is active (Albert–Chib augmentation);
/// 2. weights jointly Gaussian with precision `diag(λ) + DᵀD` and mean
///    `(·)⁻¹ Dᵀ r̃`;
/// 3. precisions `λ_l ~ Ga(c_0 + 1/2, d_0 + ω_l²/2)`;
/// 4. width drawn from the dictionary with mass proportional to the
///    indicator likelihood `Π_i p(t_i)^{r_i} (1 − p(t_i))^{1−r_i}`, computed
///    in the log domain.
///
/// Distinct kernels have mutually independent conditionals given their
/// indicators and may be updated in parallel.
pub fn rvm_gibbs_block<R: Rng + ?Sized>(
    observations: &[RvmObservation],
    kernel: &mut ProbitRvmKernel,
    prior: &mut RvmPrior,
    rng: &mut R,
) -> Result<()> {
    let dim = kernel.omega.len();
    if prior.precisions.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: prior.precisions.len(),
        });
    }

    // (1) Augmented responses.
    let design: Vec<Vec<f64>> = observations
        .iter()
        .map(|obs| kernel.design_row(obs.covariate))
        .collect();
    let rtilde: Vec<f64> = observations
        .iter()
        .zip(&design)
        .map(|(obs, row)| {
            let act: f64 = row.iter().zip(&kernel.omega).map(|(d, w)| d * w).sum();
            sample_truncated_normal(act, obs.active, rng)
        })
        .collect();

    // (2) Joint Gaussian weight draw: ω = mean + L⁻ᵀ z with precision L Lᵀ.
    let (mean, chol) = weight_posterior(&design, &rtilde, &prior.precisions)?;
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let z = DVector::from_iterator(dim, (0..dim).map(|_| normal.sample(rng)));
    let scaled = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed in RVM weight draw".into()))?;
    for (w, (m, s)) in kernel.omega.iter_mut().zip(mean.iter().zip(scaled.iter())) {
        *w = m + s;
    }

    // (3) Precisions.
    for (lam, &w) in prior.precisions.iter_mut().zip(&kernel.omega) {
        let (shape, rate) = lambda_posterior(prior.c0, prior.d0, w);
        *lam = Gamma::new(shape, 1.0 / rate)
            .expect("positive posterior parameters")
            .sample(rng);
    }

    // (4) Width from the dictionary, log-domain categorical.
    if prior.width_dictionary.len() == 1 {
        kernel.phi = prior.width_dictionary[0];
        return Ok(());
    }
    let log_masses: Vec<f64> = prior
        .width_dictionary
        .iter()
        .map(|&phi| width_log_likelihood(&kernel.omega, &kernel.centers, phi, observations))
        .collect();
    let log_norm = logsumexp(&log_masses);
    if !log_norm.is_finite() {
        return Err(Error::Numerical(
            "width categorical has no finite mass".into(),
        ));
    }
    let probs: Vec<f64> = log_masses.iter().map(|m| (m - log_norm).exp()).collect();
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = prior.width_dictionary.len() - 1;
    for (m, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = m;
            break;
        }
    }
    kernel.phi = prior.width_dictionary[chosen];
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crm::{draw_truncated_crm, LevySpec};
    use crate::diagnostics::{geweke_z, mean_and_second_moment_z};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Standard normal CDF at 1, to 16 digits (Abramowitz & Stegun 26.2).
    const PHI_ONE: f64 = 0.841_344_746_068_542_9;

    #[test]
    fn probit_kernel_hits_reference_values() {
        let k = ProbitRvmKernel::new(vec![0.0, 0.0, 0.0], 1.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(k.probability(0.3), 0.5);

        let k = ProbitRvmKernel::new(vec![1.0, 0.0, 0.0], 1.0, vec![0.0, 1.0]).unwrap();
        assert!((k.probability(0.0) - PHI_ONE).abs() < 1e-9);
    }

    #[test]
    fn single_location_peaks_at_center() {
        let k = ThinningKernel::single_location(2.0, 0.7, 1.0).unwrap();
        assert_eq!(thinning_probability(&k, 2.0), 1.0);
        let far = thinning_probability(&k, 5.0);
        let near = thinning_probability(&k, 2.5);
        assert!(far < near && near < 1.0);
        assert!(far >= 0.0);
    }

    #[test]
    fn kernel_validation() {
        assert!(ProbitRvmKernel::new(vec![0.0], 1.0, vec![0.0]).is_err());
        assert!(ProbitRvmKernel::new(vec![0.0, 0.0], 0.0, vec![0.0]).is_err());
        assert!(ThinningKernel::single_location(0.0, 1.0, 1.5).is_err());
        assert!(ThinningKernel::single_location(0.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn kernel_serialization_is_flat() {
        let k = ThinningKernel::ProbitRvm(
            ProbitRvmKernel::new(vec![0.5, -1.0], 2.0, vec![3.0]).unwrap(),
        );
        let json = serde_json::to_value(&k).unwrap();
        assert_eq!(json["omega"][0], 0.5);
        assert_eq!(json["phi"], 2.0);
        assert_eq!(json["centers"][0], 3.0);
        let back: ThinningKernel = serde_json::from_value(json).unwrap();
        assert_eq!(back, k);
    }

    fn fixed_masses(masses: &[f64]) -> TruncatedCrm<()> {
        TruncatedCrm {
            spec: LevySpec::gamma_process(1.0, 1.0, masses.len()).unwrap(),
            atoms: masses
                .iter()
                .map(|&m| crate::crm::Atom {
                    mass: m,
                    theta: vec![],
                    x: (),
                })
                .collect(),
        }
    }

    fn constant_kernels(ps: &[f64], t: f64) -> Vec<ThinningKernel> {
        ps.iter()
            .map(|&p| ThinningKernel::single_location(t, 1.0, p).unwrap())
            .collect()
    }

    #[test]
    fn thinning_degenerate_probabilities() {
        let crm = fixed_masses(&[0.4, 0.6, 1.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let keep_all = thin(
            &crm,
            &constant_kernels(&[1.0, 1.0, 1.0], 0.0),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(keep_all.indicators.iter().all(|&r| r));
        assert_eq!(keep_all.total_mass(), crm.total_mass());

        let drop_all = thin(
            &crm,
            &constant_kernels(&[0.0, 0.0, 0.0], 0.0),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(drop_all.indicators.iter().all(|&r| !r));
        assert_eq!(drop_all.total_mass(), 0.0);
    }

    #[test]
    fn thinning_never_alters_retained_masses() {
        let spec = LevySpec::gamma_process(1.0, 1.0, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let crm: TruncatedCrm<()> =
            draw_truncated_crm(&spec, |_| vec![], |_| (), &mut rng).unwrap();
        let kernels = constant_kernels(&[0.5; 32], 0.0);
        for _ in 0..50 {
            let m = thin(&crm, &kernels, 0.0, &mut rng).unwrap();
            for k in 0..32 {
                let mass = m.mass(k);
                assert!(mass == 0.0 || mass == crm.atoms[k].mass);
            }
        }
    }

    #[test]
    fn thinned_count_stays_in_binomial_band() {
        // K = 1000, p = 0.3: 4σ band around 300 is ±58.
        let crm = fixed_masses(&vec![1.0; 1000]);
        let kernels = constant_kernels(&vec![0.3; 1000], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = thin(&crm, &kernels, 0.0, &mut rng).unwrap();
        let count = m.retained_indices().len() as i64;
        assert!((count - 300).abs() <= 58, "retained {count}");
    }

    #[test]
    fn thin_rejects_kernel_count_mismatch() {
        let crm = fixed_masses(&[1.0, 2.0]);
        let kernels = constant_kernels(&[0.5], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(thin(&crm, &kernels, 0.0, &mut rng).is_err());
    }

    #[test]
    fn correlation_reference_values() {
        let ones = vec![1.0; 4];
        assert_eq!(correlation(&ones, &ones, None).unwrap(), 1.0);
        assert_eq!(correlation(&[1.0, 0.0], &[0.0, 1.0], None).unwrap(), 0.0);
        let c = correlation(&[0.5, 0.5], &[0.5, 0.5], None).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        let c = correlation(&[0.5, 0.5], &[0.5, 0.0], None).unwrap();
        assert!((c - 0.25 / 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c - 0.35355).abs() < 1e-4);
    }

    #[test]
    fn correlation_errors() {
        assert!(matches!(
            correlation(&[0.0, 0.0], &[0.5, 0.5], None),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(correlation(&[0.5], &[0.5, 0.5], None).is_err());
        assert!(correlation(&[1.5], &[0.5], None).is_err());
    }

    /// Monte-Carlo oracle for the correlation law. Masses are redrawn each
    /// round with mean zero and variance `v_k`, which isolates exactly the
    /// indicator-driven covariance the closed form describes:
    /// `Cov = Σ v p q`, `Var = Σ v p`.
    fn mc_correlation(p: &[f64], q: &[f64], v: &[f64], rounds: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..rounds {
            let mut x = 0.0;
            let mut y = 0.0;
            for k in 0..p.len() {
                let mass = normal.sample(&mut rng) * v[k].sqrt();
                if rng.random_bool(p[k]) {
                    x += mass;
                }
                if rng.random_bool(q[k]) {
                    y += mass;
                }
            }
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let n = rounds as f64;
        let cov = sxy / n - (sx / n) * (sy / n);
        let vx = sxx / n - (sx / n) * (sx / n);
        let vy = syy / n - (sy / n) * (sy / n);
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn correlation_matches_monte_carlo_oracle() {
        let cases: [(&[f64], &[f64]); 2] = [(&[0.5, 0.5], &[0.5, 0.5]), (&[0.5, 0.5], &[0.5, 0.0])];
        for (i, (p, q)) in cases.iter().enumerate() {
            let v = vec![1.0; p.len()];
            let closed = correlation(p, q, Some(&v)).unwrap();
            let mc = mc_correlation(p, q, &v, 1_000_000, 100 + i as u64);
            assert!(
                (mc - closed).abs() < 0.02,
                "pair {i}: mc {mc} vs closed {closed}"
            );
        }
    }

    #[test]
    fn kbp_expectation_matches_hand_product_and_thinning_mean() {
        let crm = fixed_masses(&[0.4, 0.6]);
        let kernels = constant_kernels(&[0.5, 0.25], 0.0);
        let e = kbp_expectation(&crm, &kernels, 0.0).unwrap();
        assert!((e[0] - 0.2).abs() < 1e-15);
        assert!((e[1] - 0.15).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000usize;
        let mut sums = [0.0, 0.0];
        for _ in 0..n {
            let m = thin(&crm, &kernels, 0.0, &mut rng).unwrap();
            sums[0] += m.mass(0);
            sums[1] += m.mass(1);
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            // Bernoulli-scaled mass variance at fixed π.
            let p = [0.5, 0.25][k];
            let mass = [0.4, 0.6][k];
            let se = (p * (1.0 - p) * mass * mass / n as f64).sqrt();
            assert!((mean - e[k]).abs() < 3.0 * se);
        }

        let all_on = kbp_expectation(&crm, &constant_kernels(&[1.0, 1.0], 0.0), 0.0).unwrap();
        assert_eq!(all_on, vec![0.4, 0.6]);
        let all_off = kbp_expectation(&crm, &constant_kernels(&[0.0, 0.0], 0.0), 0.0).unwrap();
        assert_eq!(all_off, vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_reference_values() {
        let m = ThinnedMeasure {
            source_masses: vec![1.0, 3.0],
            indicators: vec![true, true],
            covariate: 0.0,
        };
        assert_eq!(normalize(&m).unwrap(), vec![0.25, 0.75]);

        let single = ThinnedMeasure {
            source_masses: vec![1.0, 3.0],
            indicators: vec![false, true],
            covariate: 0.0,
        };
        assert_eq!(normalize(&single).unwrap(), vec![1.0]);

        let empty = ThinnedMeasure {
            source_masses: vec![1.0, 3.0],
            indicators: vec![false, false],
            covariate: 0.0,
        };
        assert!(matches!(normalize(&empty), Err(Error::EmptyMeasure)));
    }

    #[test]
    fn normalize_random_gamma_draw_sums_to_one() {
        let spec = LevySpec::gamma_process(1.0, 1.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let crm: TruncatedCrm<()> =
            draw_truncated_crm(&spec, |_| vec![], |_| (), &mut rng).unwrap();
        let kernels = constant_kernels(&[0.7; 16], 0.0);
        let m = thin(&crm, &kernels, 0.0, &mut rng).unwrap();
        let weights = normalize(&m).unwrap();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn lambda_posterior_is_prior_plus_half() {
        let (shape, rate) = lambda_posterior(1.5, 2.5, 0.0);
        assert_eq!(shape, 2.0);
        assert_eq!(rate, 2.5);
        let (shape, rate) = lambda_posterior(1.0, 1.0, 2.0);
        assert_eq!(shape, 1.5);
        assert_eq!(rate, 3.0);
    }

    #[test]
    fn weight_posterior_with_no_observations_is_the_prior() {
        let (mean, chol) = weight_posterior(&[], &[], &[2.0, 4.0]).unwrap();
        assert_eq!(mean.as_slice(), &[0.0, 0.0]);
        let prec = chol.l() * chol.l().transpose();
        assert!((prec[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((prec[(1, 1)] - 4.0).abs() < 1e-12);
        assert!(prec[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn singleton_width_dictionary_is_fixed_point() {
        let mut kernel = ProbitRvmKernel::new(vec![0.3, -0.2], 0.7, vec![0.0]).unwrap();
        let mut prior = RvmPrior::new(2.0, 2.0, vec![0.7], 2).unwrap();
        let obs = [
            RvmObservation {
                covariate: 0.0,
                active: true,
            },
            RvmObservation {
                covariate: 1.0,
                active: false,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            rvm_gibbs_block(&obs, &mut kernel, &mut prior, &mut rng).unwrap();
            assert_eq!(kernel.phi, 0.7);
        }
    }

    #[test]
    fn truncated_normal_respects_sign_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..2000 {
            let mean = (i as f64 - 1000.0) / 200.0;
            assert!(sample_truncated_normal(mean, true, &mut rng) > 0.0);
            assert!(sample_truncated_normal(mean, false, &mut rng) <= 0.0);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Correlation is symmetric and lands in [0, 1] for any
            /// probability vectors with positive variances.
            #[test]
            fn correlation_symmetric_and_bounded(
                p in proptest::collection::vec(0.0f64..=1.0, 1..12),
                q_seed in proptest::collection::vec(0.0f64..=1.0, 1..12),
                v in proptest::collection::vec(1e-3f64..10.0, 1..12),
            ) {
                let n = p.len().min(q_seed.len()).min(v.len());
                let (p, q, v) = (&p[..n], &q_seed[..n], &v[..n]);
                match (correlation(p, q, Some(v)), correlation(q, p, Some(v))) {
                    (Ok(a), Ok(b)) => {
                        prop_assert!((a - b).abs() < 1e-12);
                        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
                    }
                    (Err(Error::UndefinedCorrelation), Err(Error::UndefinedCorrelation)) => {}
                    (a, b) => prop_assert!(false, "asymmetric outcome: {a:?} vs {b:?}"),
                }
            }

            /// Normalization of any thinned measure with retained mass is a
            /// probability vector.
            #[test]
            fn normalize_yields_probability_vector(
                masses in proptest::collection::vec(1e-6f64..10.0, 1..20),
                flags in proptest::collection::vec(proptest::bool::ANY, 1..20),
            ) {
                let n = masses.len().min(flags.len());
                let m = ThinnedMeasure {
                    source_masses: masses[..n].to_vec(),
                    indicators: flags[..n].to_vec(),
                    covariate: 0.0,
                };
                match normalize(&m) {
                    Ok(weights) => {
                        prop_assert_eq!(weights.len(), m.retained_indices().len());
                        prop_assert!(weights.iter().all(|&w| w >= 0.0));
                        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                    Err(Error::EmptyMeasure) => prop_assert!(!flags[..n].iter().any(|&f| f)),
                    Err(e) => prop_assert!(false, "unexpected error {e}"),
                }
            }
        }
    }

    /// Getting-it-right check for the probit-RVM block on a 3-observation
    /// problem: forward draws of (λ, ω, φ, r) versus a successive-conditional
    /// chain that alternates the Gibbs block with indicator resampling.
    #[test]
    fn rvm_gibbs_block_leaves_joint_invariant() {
        let centers = vec![0.0, 1.0, 2.0];
        let obs_t = [0.0, 1.0, 2.0];
        let dict = vec![0.3, 1.0];
        let (c0, d0) = (2.0, 2.0);
        let rounds = 10_000usize;

        let draw_r = |kernel: &ProbitRvmKernel, rng: &mut ChaCha8Rng| -> Vec<bool> {
            obs_t
                .iter()
                .map(|&t| rng.random_bool(kernel.probability(t)))
                .collect()
        };
        let stats = |kernel: &ProbitRvmKernel, prior: &RvmPrior, r: &[bool]| -> Vec<f64> {
            vec![
                kernel.omega[0],
                kernel.omega[1],
                r.iter().filter(|&&b| b).count() as f64,
                kernel.probability(1.0),
                prior.precisions[0],
            ]
        };

        // Forward: independent draws from the joint.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut forward: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for _ in 0..rounds {
            let mut prior = RvmPrior::new(c0, d0, dict.clone(), centers.len() + 1).unwrap();
            let omega = prior.draw_weights(&mut rng);
            let phi = prior.draw_width(&mut rng);
            let kernel = ProbitRvmKernel::new(omega, phi, centers.clone()).unwrap();
            let r = draw_r(&kernel, &mut rng);
            for (acc, s) in forward.iter_mut().zip(stats(&kernel, &prior, &r)) {
                acc.push(s);
            }
        }

        // Successive-conditional chain.
        let mut prior = RvmPrior::new(c0, d0, dict.clone(), centers.len() + 1).unwrap();
        let omega = prior.draw_weights(&mut rng);
        let phi = prior.draw_width(&mut rng);
        let mut kernel = ProbitRvmKernel::new(omega, phi, centers.clone()).unwrap();
        let mut r = draw_r(&kernel, &mut rng);
        let mut chain: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for _ in 0..rounds {
            let obs: Vec<RvmObservation> = obs_t
                .iter()
                .zip(&r)
                .map(|(&t, &active)| RvmObservation {
                    covariate: t,
                    active,
                })
                .collect();
            rvm_gibbs_block(&obs, &mut kernel, &mut prior, &mut rng).unwrap();
            r = draw_r(&kernel, &mut rng);
            for (acc, s) in chain.iter_mut().zip(stats(&kernel, &prior, &r)) {
                acc.push(s);
            }
        }

        for (name, (f, c)) in ["omega0", "omega1", "sum_r", "p(1)", "lambda0"]
            .iter()
            .zip(forward.iter().zip(chain.iter()))
        {
            let (z_mean, z_second) = mean_and_second_moment_z(f, c);
            assert!(
                z_mean.abs() < 4.0 && z_second.abs() < 4.0,
                "{name}: z_mean {z_mean:.2}, z_second {z_second:.2}"
            );
        }
        // Smoke-check the helper on an obviously shifted pair.
        let shifted: Vec<f64> = forward[0].iter().map(|x| x + 1.0).collect();
        assert!(geweke_z(&forward[0], &shifted).abs() > 4.0);
    }
}
