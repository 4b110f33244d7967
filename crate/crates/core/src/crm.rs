//! Truncated simulation of homogeneous completely random measures.
//!
//! A homogeneous CRM has a Lévy measure that factorizes as
//! `ν(dx, dθ, dπ) = G(dx, dθ) ν_0(dπ)`: atom masses are independent of their
//! locations. We approximate the infinite measure with `K` atoms whose masses
//! follow the usual truncation recipes,
//!
//! - beta process: `π_k ~ Be(1/K, 1 − 1/K)`,
//! - gamma process with parameters `(γ, λ)`: `π_k ~ Ga(γ/K, λ)`,
//!
//! both of which converge in distribution to the target process as
//! `K → ∞`, and both of which give `E[Σ_k π_k] = 1` at the default
//! hyperparameters. Parameter values `θ_k` and auxiliary locations `x_k` are
//! delegated to caller-supplied samplers since the base measures differ per
//! model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Mass distribution family of the underlying CRM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrmFamily {
    /// Beta process with concentration `c`. The truncation recipe draws
    /// masses from `Be(1/K, 1 − 1/K)` regardless of `c`; the concentration is
    /// retained for documentation and future exact samplers.
    BetaProcess { concentration: f64 },
    /// Gamma process with Lévy measure `γ π^{-1} e^{-λπ} dπ`.
    GammaProcess { shape: f64, rate: f64 },
}

/// A truncated CRM specification: family plus the number of represented atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevySpec {
    pub family: CrmFamily,
    #[serde(rename = "K")]
    pub truncation: usize,
}

impl LevySpec {
    pub fn beta_process(concentration: f64, truncation: usize) -> Result<Self> {
        let spec = LevySpec {
            family: CrmFamily::BetaProcess { concentration },
            truncation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gamma_process(shape: f64, rate: f64, truncation: usize) -> Result<Self> {
        let spec = LevySpec {
            family: CrmFamily::GammaProcess { shape, rate },
            truncation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            CrmFamily::BetaProcess { concentration } => {
                if concentration <= 0.0 || !concentration.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "beta process concentration must be positive, got {concentration}"
                    )));
                }
                // Be(1/K, 1 - 1/K) is degenerate at K = 1.
                if self.truncation < 2 {
                    return Err(Error::InvalidParameter(format!(
                        "beta process truncation must be at least 2, got {}",
                        self.truncation
                    )));
                }
            }
            CrmFamily::GammaProcess { shape, rate } => {
                if shape <= 0.0 || rate <= 0.0 || !shape.is_finite() || !rate.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "gamma process parameters must be positive, got ({shape}, {rate})"
                    )));
                }
                if self.truncation == 0 {
                    return Err(Error::InvalidParameter(
                        "truncation must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Draws one atom mass from the truncation distribution.
    pub fn draw_mass<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = self.truncation as f64;
        match self.family {
            CrmFamily::BetaProcess { .. } => {
                let dist = Beta::new(1.0 / k, 1.0 - 1.0 / k).expect("validated parameters");
                // Keep masses strictly inside (0, 1); extreme draws can round
                // to the endpoints in f64.
                loop {
                    let m = dist.sample(rng);
                    if m > 0.0 && m < 1.0 {
                        return m;
                    }
                }
            }
            CrmFamily::GammaProcess { shape, rate } => {
                let dist = Gamma::new(shape / k, 1.0 / rate).expect("validated parameters");
                loop {
                    let m = dist.sample(rng);
                    if m > 0.0 {
                        return m;
                    }
                }
            }
        }
    }
}

/// One atom of a truncated CRM: a mass, a parameter value and an
/// auxiliary-space location (for the models in this crate, thinning-kernel
/// parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom<X> {
    #[serde(rename = "pi")]
    pub mass: f64,
    pub theta: Vec<f64>,
    pub x: X,
}

/// A `K`-atom approximation to a CRM draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedCrm<X> {
    #[serde(flatten)]
    pub spec: LevySpec,
    pub atoms: Vec<Atom<X>>,
}

impl<X> TruncatedCrm<X> {
    pub fn truncation(&self) -> usize {
        self.spec.truncation
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

/// Draws a truncated CRM. Masses come from the family's truncation
/// distribution; `theta_sampler` and `location_sampler` draw `θ_k ~ B_0` and
/// `x_k ~ H` independently per atom.
///
/// Each atom is drawn from its own counter-based stream keyed by
/// `(seed, atom index)`, where the seed is consumed from `rng`, so draws are
/// order-independent and reproducible.
pub fn draw_truncated_crm<X, R, FT, FX>(
    spec: &LevySpec,
    mut theta_sampler: FT,
    mut location_sampler: FX,
    rng: &mut R,
) -> Result<TruncatedCrm<X>>
where
    R: Rng + ?Sized,
    FT: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    FX: FnMut(&mut ChaCha8Rng) -> X,
{
    spec.validate()?;
    let base_seed: u64 = rng.random();
    let atoms = (0..spec.truncation)
        .map(|k| {
            let mut stream = substream(base_seed, k as u64);
            let mass = spec.draw_mass(&mut stream);
            let theta = theta_sampler(&mut stream);
            let x = location_sampler(&mut stream);
            Atom { mass, theta, x }
        })
        .collect();
    Ok(TruncatedCrm { spec: *spec, atoms })
}

/// Conditional expectation of total thinned mass given the atoms:
/// `Σ_k p_k π_k`, with `p_k = 1` for every atom when `thinning_probs` is
/// omitted (Campbell's theorem specialized to the truncated representation).
pub fn expected_mass<X>(crm: &TruncatedCrm<X>, thinning_probs: Option<&[f64]>) -> Result<f64> {
    match thinning_probs {
        None => Ok(crm.total_mass()),
        Some(probs) => {
            if probs.len() != crm.atoms.len() {
                return Err(Error::DimensionMismatch {
                    expected: crm.atoms.len(),
                    actual: probs.len(),
                });
            }
            Ok(crm.atoms.iter().zip(probs).map(|(a, p)| p * a.mass).sum())
        }
    }
}
