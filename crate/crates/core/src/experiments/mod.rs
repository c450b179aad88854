//! Evaluation harnesses: infiltration robustness, chain footprint, fee cost
//! and an end-to-end multi-pulse simulation.

mod cost;
mod footprint;
mod infiltration;
pub mod simulation;

use std::io::Write;

use serde::Serialize;

pub use cost::{estimate_cost, CostEstimate};
pub use footprint::{run_footprint, FootprintRow, DEFAULT_CAPACITIES};
pub use infiltration::{
    exact_tail, exact_tail_ratio, run_infiltration, threshold_count, InfiltrationConfig, RobustnessRow, Sampler,
    ThresholdMode,
};

/// Writes rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
