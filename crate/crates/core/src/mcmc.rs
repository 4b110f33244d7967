//! Shared MCMC run machinery: schedules, trace rows and the chain runner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sweep schedule: total sweeps, burn-in and thinning interval. Samples are
/// retained at sweeps `burnin, burnin + thin, …`, giving
/// `⌈(iterations − burnin) / thin⌉` retained samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcSchedule {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
}

impl McmcSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn-in ({}) must be smaller than the iteration count ({})",
                self.burnin, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter(
                "thinning interval must be ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.iterations - self.burnin).div_ceil(self.thin)
    }

    pub fn retains(&self, iteration: usize) -> bool {
        iteration >= self.burnin && (iteration - self.burnin).is_multiple_of(self.thin)
    }
}

/// One row of the per-sweep trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub k_active: usize,
    pub log_likelihood: f64,
}

/// Runs one chain: applies `sweep` per iteration, summarizes the state with
/// `summarize`, retains post-burn-in thinned samples and reports every sweep
/// to `on_sweep` (with the state attached on retained sweeps, so callers can
/// stream samples to disk).
pub fn run_chain<S, W, T, F>(
    mut state: S,
    schedule: &McmcSchedule,
    mut sweep: W,
    mut summarize: T,
    mut on_sweep: F,
) -> Result<(Vec<S>, Vec<TraceRow>)>
where
    S: Clone,
    W: FnMut(&mut S) -> Result<()>,
    T: FnMut(&S) -> (usize, f64),
    F: FnMut(&TraceRow, Option<&S>) -> Result<()>,
{
    schedule.validate()?;
    let mut samples = Vec::with_capacity(schedule.n_retained());
    let mut trace = Vec::with_capacity(schedule.iterations);
    for iteration in 0..schedule.iterations {
        sweep(&mut state)?;
        let (k_active, log_likelihood) = summarize(&state);
        let row = TraceRow {
            iteration,
            k_active,
            log_likelihood,
        };
        let retained = schedule.retains(iteration);
        on_sweep(&row, retained.then_some(&state))?;
        trace.push(row);
        if retained {
            samples.push(state.clone());
        }
    }
    Ok((samples, trace))
}
