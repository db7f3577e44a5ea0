//! Working-set traces and peak-memory-minimal scheduling.
//!
//! A [`Schedule`] is a topological order of a graph's operators.
//! [`working_set_trace`] accounts the resident tensor set at every step of
//! a given schedule; [`min_peak_memory`] searches all schedules for the
//! minimal peak via a memoized dynamic program over pending-tensor sets;
//! [`enumerate_schedules`] and [`brute_force_min_peak`] provide the
//! exhaustive oracle the dynamic program is checked against.

mod dp;
mod enumerate;
mod meta;
mod trace;

use std::fmt;

use crate::graph::{OperatorId, TensorId, TensorSet};

pub use dp::{min_peak_memory, DpConfig};
pub use enumerate::{brute_force_min_peak, enumerate_schedules, EnumConfig, TopoOrders};
pub use trace::{peak_memory, peak_memory_counting_flash, working_set_trace};

pub(crate) use meta::{inplace_saving, inplace_target, schedule_meta};

/// An execution order: every operator exactly once, dependencies respected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule(Vec<OperatorId>);

impl Schedule {
    pub fn new(ops: Vec<OperatorId>) -> Self {
        Schedule(ops)
    }

    pub fn ids(&self) -> &[OperatorId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

/// One executed operator and what was resident while it ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub operator: OperatorId,
    /// Ram tensors resident during this step (inputs, output, held-back).
    pub resident: TensorSet,
    /// Byte total of the resident set, minus the in-place credit when the
    /// operator accumulates into an input that dies here.
    pub bytes: u64,
}

/// Per-step resident-set accounting for one schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryTrace {
    pub steps: Vec<TraceStep>,
    pub peak_bytes: u64,
    /// First step attaining the peak (0 for an empty trace).
    pub peak_step: usize,
    /// Total size of read-only flash tensors, reported separately; flash
    /// never enters the working set.
    pub flash_bytes: u64,
}

/// Outcome of a minimal-peak search (dynamic program or brute force).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpResult {
    pub min_peak_bytes: u64,
    pub schedule: Schedule,
    pub states_explored: u64,
    pub memo_entries: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedule is not a permutation of the graph's operators: {0}")]
    NotAPermutation(String),
    #[error(
        "schedule is not topological: operator {op} is placed before operator {producer}, \
         which produces its input {tensor}"
    )]
    NotTopological {
        op: OperatorId,
        producer: OperatorId,
        tensor: TensorId,
    },
    #[error(
        "graph has {ops} operators, above the limit of {limit}; the schedule search \
         is O(|V| * 2^|V|) and does not scale past small graphs"
    )]
    GraphTooLarge { ops: usize, limit: usize },
    #[error("memoization table exceeded the configured cap of {cap} entries")]
    MemoBudgetExceeded { cap: usize },
}
