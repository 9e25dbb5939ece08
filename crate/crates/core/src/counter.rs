//! Period counter: counts clock edges between consecutive VCO rising edges.
//!
//! The clock is phase-locked to the simulation grid, so one call to
//! [`CounterState::step`] corresponds to one 100 MHz clock edge.

use serde::{Deserialize, Serialize};

/// `c_int` beyond this means the VCO has effectively stalled.
pub const STALL_THRESHOLD: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterState {
    /// Running count since the last latch.
    pub c_int: u32,
    /// Latched output; holds its value between VCO edges.
    pub c_ext: u32,
}

impl CounterState {
    /// One clock edge. A VCO edge in the same step latches the incremented
    /// running count and restarts it.
    #[inline]
    pub fn step(self, vco_edge: bool) -> Self {
        let c_int = self.c_int.saturating_add(1);
        let latch = (vco_edge as u32).wrapping_neg();
        CounterState {
            c_int: c_int & !latch,
            c_ext: (c_int & latch) | (self.c_ext & !latch),
        }
    }

    #[inline]
    pub fn observe(&self) -> u32 {
        self.c_ext
    }

    pub fn stalled(&self) -> bool {
        self.c_int > STALL_THRESHOLD
    }
}

/// Functional form of [`CounterState::step`] taking an edge count in {0, 1}.
#[inline]
pub fn counter_step(state: CounterState, vco_edges: u32) -> CounterState {
    debug_assert!(vco_edges <= 1);
    state.step(vco_edges > 0)
}

#[inline]
pub fn observe(state: &CounterState) -> u32 {
    state.observe()
}
