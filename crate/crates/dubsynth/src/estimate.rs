//! Parallel Monte Carlo runs of a synthesized policy.

use std::io::Write;

use dubsynth_core::strategy::{simulate, Estimate, SimSetup, SimTrace};
use rayon::prelude::*;

use crate::error::ServiceError;

/// Same result as the sequential core estimate: trial `k` always uses
/// stream `k` of `seed`.
pub fn estimate(setup: &SimSetup<'_>, trials: u64, seed: u64) -> Result<Estimate, ServiceError> {
    let successes = (0..trials)
        .into_par_iter()
        .map(|t| simulate(setup, seed, t, false).map(|tr| u64::from(tr.satisfied)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(Estimate { successes, trials })
}

/// Runs `trials` trials and writes each as one JSON line.
pub fn export_traces(
    setup: &SimSetup<'_>,
    trials: u64,
    seed: u64,
    positions: bool,
    out: &mut dyn Write,
) -> Result<Estimate, ServiceError> {
    let traces: Vec<SimTrace> = (0..trials)
        .into_par_iter()
        .map(|t| simulate(setup, seed, t, positions))
        .collect::<Result<_, _>>()?;
    let mut successes = 0;
    for t in &traces {
        successes += u64::from(t.satisfied);
        serde_json::to_writer(&mut *out, t).map_err(ServiceError::json("trace"))?;
        out.write_all(b"\n").map_err(ServiceError::io("traces"))?;
    }
    Ok(Estimate { successes, trials })
}
