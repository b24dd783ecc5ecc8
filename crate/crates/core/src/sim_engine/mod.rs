//! Discrete-event Monte Carlo simulation of arrays and fleets.
//!
//! Per array, each device slot carries a disk-failure clock, an LSE renewal
//! process, and per-LSE scrub removal. Failed disks are replaced by a service
//! agent who may pull a healthy disk instead. The state is classified after
//! every event and DU/DL incidents are logged.

mod array;
mod log;
mod queue;

use rayon::prelude::*;

pub use array::ArraySeed;
pub use log::{count_ddf_compatible, DlCause, DlIncident, DuCause, DuIncident, DuScope, EventCounters, IncidentLog, ValidationMode};
pub use queue::EventQueue;

use crate::array_config::{CodeConfig, DiskModel, ExperimentConfig, PolicyConfig};
use crate::error::Result;
use crate::failure_conditions::ArrayState;
use crate::metrics::{aggregate, FleetResult};

pub fn simulate_array(disk: &DiskModel, code: &CodeConfig, policy: &PolicyConfig, mission: f64, seed: ArraySeed) -> IncidentLog {
    array::Sim::new(disk, *code, policy, mission, seed, false).run().0
}

/// Like [`simulate_array`], also returning the array state at the opening of
/// every DU interval.
pub fn simulate_array_traced(
    disk: &DiskModel,
    code: &CodeConfig,
    policy: &PolicyConfig,
    mission: f64,
    seed: ArraySeed,
) -> (IncidentLog, Vec<(ArrayState, DuCause)>) {
    let (log, trace) = array::Sim::new(disk, *code, policy, mission, seed, true).run();
    (log, trace.unwrap_or_default())
}

/// Simulates arrays `0..n_arrays` on the current rayon pool. Logs come back in
/// index order, so results do not depend on the worker count.
pub fn simulate_fleet(n_arrays: u64, config: &ExperimentConfig) -> Result<FleetResult> {
    let disk = config.effective_disk();
    let logs: Vec<IncidentLog> = (0..n_arrays)
        .into_par_iter()
        .map(|array| {
            simulate_array(&disk, &config.code, &config.policy, config.mission_hours, ArraySeed { seed: config.seed, array })
        })
        .collect();
    aggregate(logs, config.confidence)
}
