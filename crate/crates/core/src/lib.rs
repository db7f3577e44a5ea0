//! Peak-memory-aware operator scheduling for tensor computation graphs.
//!
//! A neural network's operators can usually be executed in more than one
//! valid order, and the order decides which intermediate tensors have to be
//! held in RAM at the same time. This crate models such graphs, computes the
//! working-set trace of any execution schedule, searches for the schedule
//! with the smallest peak memory usage, and simulates how a compacting
//! arena allocator would place the tensor buffers on a device.
//!
//! Module map:
//!
//! - [`graph`] — validated computation-graph data model ([`Graph`],
//!   [`TensorInfo`](graph::TensorInfo), [`OperatorNode`](graph::OperatorNode)).
//! - [`sched`] — working-set traces, exhaustive schedule enumeration, and
//!   the minimal-peak dynamic program.
//! - [`alloc`] — arena simulation: static pre-allocation vs. dynamic
//!   allocation with after-every-operator compaction.
//! - [`corpus`] — deterministic random graph generation for cross-checking
//!   the scheduler against brute force.
//!
//! ```
//! use opsched_core::corpus::sample_branching_graph;
//! use opsched_core::sched::{min_peak_memory, working_set_trace, DpConfig};
//!
//! let graph = sample_branching_graph();
//! let embedded = working_set_trace(&graph, &graph.default_schedule())?;
//! let best = min_peak_memory(&graph, &DpConfig::default())?;
//! assert_eq!(embedded.peak_bytes, 5216);
//! assert_eq!(best.min_peak_bytes, 4960);
//! # Ok::<(), opsched_core::sched::ScheduleError>(())
//! ```

pub mod alloc;
pub mod corpus;
pub mod graph;
pub mod sched;

pub use graph::{Graph, OperatorId, OperatorNode, Storage, TensorId, TensorInfo, TensorSet};
pub use sched::{MemoryTrace, Schedule};
