//! Getting-it-right diagnostics for Gibbs samplers.
//!
//! The check compares two ways of sampling the joint distribution of
//! parameters and data: forward simulation (prior, then likelihood — exact
//! independent draws) and a successive-conditional chain (the transition
//! under test interleaved with data resampling). If the transition leaves
//! the joint invariant, every statistic has the same distribution under
//! both simulators; a bug shows up as a shifted moment.
//!
//! z-scores use the plain standard error on the forward side and a
//! batch-means standard error on the chain side, since successive samples
//! are autocorrelated.

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Batch-means standard error of the mean of an autocorrelated series.
fn batch_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let n_batches = (n as f64).sqrt().floor() as usize;
    let batch_len = n / n_batches.max(1);
    let means: Vec<f64> = (0..n_batches)
        .map(|b| mean(&xs[b * batch_len..(b + 1) * batch_len]))
        .collect();
    (var(&means) / n_batches as f64).sqrt()
}

/// z-score for the difference in means between an i.i.d. forward sample and
/// an autocorrelated chain sample.
pub fn geweke_z(forward: &[f64], chain: &[f64]) -> f64 {
    assert!(forward.len() > 4 && chain.len() > 16, "too few rounds");
    let se_f = (var(forward) / forward.len() as f64).sqrt();
    let se_c = batch_se(chain);
    let denom = (se_f * se_f + se_c * se_c).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (mean(forward) - mean(chain)) / denom
}

/// z-scores for the first moment and the second (uncentered) moment of a
/// tracked statistic.
pub fn mean_and_second_moment_z(forward: &[f64], chain: &[f64]) -> (f64, f64) {
    let f2: Vec<f64> = forward.iter().map(|x| x * x).collect();
    let c2: Vec<f64> = chain.iter().map(|x| x * x).collect();
    (geweke_z(forward, chain), geweke_z(&f2, &c2))
}
