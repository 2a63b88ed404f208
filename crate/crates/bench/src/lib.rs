//! Fixtures shared by the benchmarks under `benches/`.

use std::sync::Arc;

use edsim::config::{Baseline, EdSize, Resolved, SimConfig};
use edsim::interventions::InterventionKind;

/// A shipped scenario with fixed seeds and a horizon in minutes.
pub fn scenario(
    size: EdSize,
    baseline: Baseline,
    interventions: &[InterventionKind],
    minutes: u64,
) -> Arc<Resolved> {
    let mut c = SimConfig::preset(size)
        .with_baseline(baseline)
        .with_seeds(17, 29)
        .with_horizon_minutes(minutes);
    for k in interventions {
        c = c.with_intervention(*k);
    }
    Arc::new(Resolved::shipped(c).expect("shipped scenario resolves"))
}
