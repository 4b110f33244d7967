//! Dependent random measures built by thinning Poisson processes on an
//! augmented space.
//!
//! A completely random measure (CRM) on a parameter space can be represented
//! as a Poisson process on `parameter × mass` space. Augmenting that space
//! with an auxiliary coordinate `x` and keeping each atom at covariate `t`
//! with probability `p_x(t)` (independent Bernoulli indicators) yields a
//! family of measures `B_t = Σ_k r_k^t π_k δ_{θ_k}` whose marginals are CRMs
//! of the original family. This crate provides:
//!
//! - [`crm`]: truncated simulation of beta- and gamma-process CRMs and their
//!   moment calculators;
//! - [`thinning`]: thinning kernels (single-location unimodal and probit-RVM),
//!   the thinned-measure construction, the indicator correlation law, kernel
//!   mixture expectations, normalization, and the shared probit-RVM Gibbs
//!   block;
//! - [`lfm`]: a covariate-dependent linear-Gaussian latent feature model on a
//!   thinned beta process, with a full Gibbs sampler;
//! - [`topics`]: a time-varying Poisson-factorization topic model on a
//!   thinned gamma process, with a full Gibbs sampler;
//! - [`corpus`]: sparse timestamped bag-of-words corpora, TSV ingestion and
//!   TFIDF vocabulary filtering;
//! - [`eval`]: held-out splits, perplexity, decade prediction, RMSE and
//!   synthetic data generators;
//! - [`diagnostics`]: Geweke-style getting-it-right utilities for checking
//!   sampler correctness.

#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod crm;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod lfm;
pub mod mcmc;
pub mod rng;
pub mod thinning;
pub mod topics;

pub use error::{Error, Result};
