//! Evaluation and memory counters.
//!
//! Memory is modelled in element-slots: one retained scalar is one slot, a
//! retained vector of length `L` is `L` slots, and a retained activation
//! footprint of a dynamics evaluation is `P` slots. Nothing here hooks the
//! allocator.

use serde::Serialize;

use crate::error::{FdeError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InstrumentationCounters {
    pub f_evals: u64,
    #[serde(rename = "vjp_state")]
    pub vjp_state_evals: u64,
    #[serde(rename = "vjp_params")]
    pub vjp_params_evals: u64,
    #[serde(rename = "peak_slots")]
    pub peak_retained_slots: u64,
    #[serde(skip)]
    pub retained_slots: u64,
    #[serde(skip)]
    pub wall_time_ns: u64,
}

impl InstrumentationCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_retained(&mut self, slots: u64) {
        self.retained_slots += slots;
        self.peak_retained_slots = self.peak_retained_slots.max(self.retained_slots);
    }

    pub fn release_retained(&mut self, slots: u64) -> Result<()> {
        if slots > self.retained_slots {
            return Err(FdeError::SlotUnderflow {
                release: slots,
                held: self.retained_slots,
            });
        }
        self.retained_slots -= slots;
        Ok(())
    }

    /// Counters for a forward pass followed by a sweep that keeps the
    /// forward trajectory (`held_from_forward` slots) alive throughout.
    pub fn followed_by(&self, held_from_forward: u64, sweep: &Self) -> Self {
        Self {
            f_evals: self.f_evals + sweep.f_evals,
            vjp_state_evals: self.vjp_state_evals + sweep.vjp_state_evals,
            vjp_params_evals: self.vjp_params_evals + sweep.vjp_params_evals,
            peak_retained_slots: self
                .peak_retained_slots
                .max(held_from_forward + sweep.peak_retained_slots),
            retained_slots: held_from_forward + sweep.retained_slots,
            wall_time_ns: self.wall_time_ns + sweep.wall_time_ns,
        }
    }
}
