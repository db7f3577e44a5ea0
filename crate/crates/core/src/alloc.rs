//! Arena allocation simulation.
//!
//! Models how tensor buffers would be placed in a contiguous SRAM region:
//! either statically (every ram tensor gets a disjoint region for the whole
//! run) or dynamically with a first-fit allocator that slides all live
//! buffers back to the start of the region after every operator. Buffers
//! are contiguous and cannot be fragmented, so compaction is what keeps the
//! dynamic peak equal to the working-set peak.

use serde::Serialize;

use crate::graph::{Graph, Storage, TensorId};
use crate::sched::{
    inplace_target, min_peak_memory, peak_memory_counting_flash, schedule_meta, working_set_trace,
    DpConfig, Schedule, ScheduleError,
};

/// Arena geometry.
#[derive(Debug, Clone)]
pub struct ArenaConfig {
    /// Absent means unbounded analysis.
    pub capacity_bytes: Option<u64>,
    /// Buffer start offsets are rounded up to this power of two.
    pub alignment_bytes: u64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            capacity_bytes: None,
            alignment_bytes: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Alloc,
    Free,
    Move,
}

/// One allocator action. Steps are 0-based schedule indices; graph inputs
/// are pre-allocated with step 0 events before the first operator's own
/// allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocEvent {
    pub step: usize,
    pub kind: EventKind,
    pub tensor: TensorId,
    pub from_offset: Option<u64>,
    pub to_offset: Option<u64>,
    pub size: u64,
}

/// A live buffer in a layout snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferAt {
    pub tensor: TensorId,
    pub offset: u64,
    pub size: u64,
}

/// Full record of a dynamic-allocation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationReport {
    pub events: Vec<AllocEvent>,
    /// Highest occupied byte + 1 over the whole run, measured after every
    /// allocation and before every compaction.
    pub peak_address_bytes: u64,
    pub total_moved_bytes: u64,
    pub move_count: u64,
    /// Post-compaction layout after each step, sorted by offset.
    pub per_step_layout: Vec<Vec<BufferAt>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AllocError {
    #[error(
        "arena capacity of {capacity} B exceeded at step {step}: \
         allocating {attempted} B with {live_bytes} B live"
    )]
    CapacityExceeded {
        step: usize,
        capacity: u64,
        attempted: u64,
        live_bytes: u64,
    },
    #[error("alignment must be a nonzero power of two, got {0}")]
    BadAlignment(u64),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Strategy comparison in the shape of a deployment report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// Working-set peak of the order embedded in the model.
    pub default_order_peak: u64,
    /// Working-set peak of the best order found.
    pub optimal_order_peak: u64,
    /// Bytes needed if every ram tensor gets its own region for the run.
    pub static_peak: u64,
    pub dynamic_peak_default: u64,
    pub dynamic_peak_optimal: u64,
    pub moved_bytes_default: u64,
    pub moved_bytes_optimal: u64,
    pub flash_bytes: u64,
    pub savings_bytes: u64,
    pub savings_percent: f64,
    /// Bookkeeping estimate: `overhead_per_tensor` x ram tensor count.
    /// Reported separately, never folded into the peaks above.
    pub overhead_bytes: u64,
}

/// Options for [`compare_strategies`].
#[derive(Debug, Clone, Default)]
pub struct CompareOptions {
    pub overhead_per_tensor: u64,
    pub dp: DpConfig,
}

fn align_up(offset: u64, alignment: u64) -> u64 {
    (offset + alignment - 1) & !(alignment - 1)
}

fn check_alignment(config: &ArenaConfig) -> Result<(), AllocError> {
    if config.alignment_bytes == 0 || !config.alignment_bytes.is_power_of_two() {
        return Err(AllocError::BadAlignment(config.alignment_bytes));
    }
    Ok(())
}

/// Simulates dynamic allocation with after-every-operator compaction.
///
/// Per step: the pending operator's output is placed first-fit at the
/// lowest aligned offset where it fits (graph inputs are pre-allocated at
/// step 0 in id order); inputs whose last consumer is this operator are
/// freed; then every live buffer slides toward offset 0, preserving
/// relative order. An operator that accumulates in place reuses the
/// designated input's interval with no alloc event.
pub fn simulate_compacting(
    graph: &Graph,
    schedule: &Schedule,
    config: &ArenaConfig,
) -> Result<AllocationReport, AllocError> {
    check_alignment(config)?;
    let meta = schedule_meta(graph, schedule)?;
    let mut arena = Arena::new(config);
    let n = graph.op_count();
    if n == 0 {
        return Ok(arena.into_report());
    }

    // Zero-size tensors occupy no bytes and get no buffer.
    for t in graph.input_tensors() {
        let size = graph.tensor(t).size_bytes;
        if size > 0 {
            arena.alloc(0, t, size)?;
        }
    }

    for (k, &op_id) in schedule.ids().iter().enumerate() {
        let op = graph.operator(op_id);
        let reused = inplace_target(graph, &meta, op_id);
        if graph.tensor(op.output).size_bytes > 0 {
            match reused {
                Some(target) => arena.transfer(target, op.output),
                None => arena.alloc(k, op.output, graph.tensor(op.output).size_bytes)?,
            }
        }
        arena.observe_peak();

        for &t in &op.inputs {
            if graph.tensor(t).storage == Storage::Ram
                && graph.tensor(t).size_bytes > 0
                && meta.death[t.index()] == k
                && Some(t) != reused
            {
                arena.free(k, t);
            }
        }
        arena.observe_peak();
        arena.compact(k);
        arena.snapshot();
    }

    Ok(arena.into_report())
}

/// Bytes needed to give every ram tensor its own region for the whole run,
/// start offsets aligned per `config`.
pub fn simulate_static(graph: &Graph, config: &ArenaConfig) -> Result<u64, AllocError> {
    check_alignment(config)?;
    Ok(graph
        .tensors()
        .iter()
        .filter(|t| t.storage == Storage::Ram)
        .map(|t| align_up(t.size_bytes, config.alignment_bytes))
        .sum())
}

/// Runs the full comparison: default vs. optimal order, static vs. dynamic
/// allocation.
pub fn compare_strategies(
    graph: &Graph,
    config: &ArenaConfig,
    options: &CompareOptions,
) -> Result<ComparisonReport, AllocError> {
    check_alignment(config)?;
    let default_schedule = graph.default_schedule();
    let optimal = min_peak_memory(graph, &options.dp)?;

    let default_order_peak = if options.dp.count_flash_as_ram {
        peak_memory_counting_flash(graph, &default_schedule)?
    } else {
        working_set_trace(graph, &default_schedule)?.peak_bytes
    };

    let sim_default = simulate_compacting(graph, &default_schedule, config)?;
    let sim_optimal = simulate_compacting(graph, &optimal.schedule, config)?;

    let ram_tensor_count = graph
        .tensors()
        .iter()
        .filter(|t| t.storage == Storage::Ram)
        .count() as u64;
    let savings_bytes = default_order_peak.saturating_sub(optimal.min_peak_bytes);
    let savings_percent = if default_order_peak == 0 {
        0.0
    } else {
        savings_bytes as f64 * 100.0 / default_order_peak as f64
    };

    Ok(ComparisonReport {
        default_order_peak,
        optimal_order_peak: optimal.min_peak_bytes,
        static_peak: simulate_static(graph, config)?,
        dynamic_peak_default: sim_default.peak_address_bytes,
        dynamic_peak_optimal: sim_optimal.peak_address_bytes,
        moved_bytes_default: sim_default.total_moved_bytes,
        moved_bytes_optimal: sim_optimal.total_moved_bytes,
        flash_bytes: graph.flash_bytes(),
        savings_bytes,
        savings_percent,
        overhead_bytes: options.overhead_per_tensor * ram_tensor_count,
    })
}

struct Arena<'c> {
    config: &'c ArenaConfig,
    /// Live buffers sorted by offset.
    live: Vec<BufferAt>,
    events: Vec<AllocEvent>,
    peak: u64,
    moved: u64,
    moves: u64,
    layouts: Vec<Vec<BufferAt>>,
}

impl<'c> Arena<'c> {
    fn new(config: &'c ArenaConfig) -> Self {
        Arena {
            config,
            live: Vec::new(),
            events: Vec::new(),
            peak: 0,
            moved: 0,
            moves: 0,
            layouts: Vec::new(),
        }
    }

    fn live_bytes(&self) -> u64 {
        self.live.iter().map(|b| b.size).sum()
    }

    /// Lowest aligned offset where `size` bytes fit between live buffers.
    fn first_fit(&self, size: u64) -> u64 {
        let align = self.config.alignment_bytes;
        let mut candidate = 0u64;
        for buf in &self.live {
            if candidate + size <= buf.offset {
                return candidate;
            }
            candidate = align_up(candidate.max(buf.offset + buf.size), align);
        }
        candidate
    }

    fn alloc(&mut self, step: usize, tensor: TensorId, size: u64) -> Result<(), AllocError> {
        let offset = self.first_fit(size);
        if let Some(capacity) = self.config.capacity_bytes {
            if offset + size > capacity {
                return Err(AllocError::CapacityExceeded {
                    step,
                    capacity,
                    attempted: size,
                    live_bytes: self.live_bytes(),
                });
            }
        }
        let at = self.live.partition_point(|b| b.offset <= offset);
        self.live.insert(
            at,
            BufferAt {
                tensor,
                offset,
                size,
            },
        );
        self.events.push(AllocEvent {
            step,
            kind: EventKind::Alloc,
            tensor,
            from_offset: None,
            to_offset: Some(offset),
            size,
        });
        self.observe_peak();
        self.debug_check_disjoint();
        Ok(())
    }

    /// In-place accumulation: the output takes over the input's interval.
    fn transfer(&mut self, from: TensorId, to: TensorId) {
        let buf = self
            .live
            .iter_mut()
            .find(|b| b.tensor == from)
            .expect("in-place target is live");
        buf.tensor = to;
    }

    fn free(&mut self, step: usize, tensor: TensorId) {
        let at = self
            .live
            .iter()
            .position(|b| b.tensor == tensor)
            .expect("freed buffers are live");
        let buf = self.live.remove(at);
        self.events.push(AllocEvent {
            step,
            kind: EventKind::Free,
            tensor,
            from_offset: Some(buf.offset),
            to_offset: None,
            size: buf.size,
        });
    }

    /// Slides every live buffer toward offset 0, preserving relative order.
    fn compact(&mut self, step: usize) {
        let align = self.config.alignment_bytes;
        let mut target = 0u64;
        for i in 0..self.live.len() {
            let slot = align_up(target, align);
            let buf = self.live[i];
            if buf.offset != slot {
                debug_assert!(slot < buf.offset, "compaction only moves down");
                self.events.push(AllocEvent {
                    step,
                    kind: EventKind::Move,
                    tensor: buf.tensor,
                    from_offset: Some(buf.offset),
                    to_offset: Some(slot),
                    size: buf.size,
                });
                self.moved += buf.size;
                self.moves += 1;
                self.live[i].offset = slot;
            }
            target = slot + buf.size;
        }
        self.debug_check_disjoint();
    }

    fn observe_peak(&mut self) {
        let extent = self
            .live
            .iter()
            .map(|b| b.offset + b.size)
            .max()
            .unwrap_or(0);
        self.peak = self.peak.max(extent);
    }

    fn snapshot(&mut self) {
        self.layouts.push(self.live.clone());
    }

    fn debug_check_disjoint(&self) {
        debug_assert!(
            self.live
                .windows(2)
                .all(|w| w[0].offset + w[0].size <= w[1].offset || w[1].size == 0),
            "live buffers overlap: {:?}",
            self.live
        );
    }

    fn into_report(self) -> AllocationReport {
        AllocationReport {
            events: self.events,
            peak_address_bytes: self.peak,
            total_moved_bytes: self.moved,
            move_count: self.moves,
            per_step_layout: self.layouts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sample_branching_graph;
    use crate::graph::{OperatorId, OperatorNode, TensorInfo};

    fn byte_config() -> ArenaConfig {
        ArenaConfig {
            capacity_bytes: None,
            alignment_bytes: 1,
        }
    }

    fn schedule(ids: &[u32]) -> Schedule {
        Schedule::new(ids.iter().copied().map(OperatorId).collect())
    }

    #[test]
    fn fixture_dynamic_peak_matches_working_set_peak() {
        let g = sample_branching_graph();
        let optimal = schedule(&[0, 3, 5, 1, 2, 4, 6]);
        let report = simulate_compacting(&g, &optimal, &byte_config()).unwrap();
        assert_eq!(report.peak_address_bytes, 4960);

        let report = simulate_compacting(&g, &g.default_schedule(), &byte_config()).unwrap();
        assert_eq!(report.peak_address_bytes, 5216);
    }

    #[test]
    fn single_op_placement_and_compaction() {
        let tensors = vec![
            TensorInfo::new(0, 100, Storage::Ram),
            TensorInfo::new(1, 50, Storage::Ram),
        ];
        let ops = vec![OperatorNode::new(0, "Op", vec![0], 1)];
        let g = Graph::new(None, tensors, ops).unwrap();
        let report = simulate_compacting(&g, &g.default_schedule(), &byte_config()).unwrap();

        // Input at 0, output first-fit after it, peak covers both.
        assert_eq!(
            report.events[0],
            AllocEvent {
                step: 0,
                kind: EventKind::Alloc,
                tensor: TensorId(0),
                from_offset: None,
                to_offset: Some(0),
                size: 100,
            }
        );
        assert_eq!(report.events[1].to_offset, Some(100));
        assert_eq!(report.peak_address_bytes, 150);

        // Freeing the input leaves a hole; the one compaction slides the
        // output down to offset 0.
        assert_eq!(report.move_count, 1);
        assert_eq!(report.total_moved_bytes, 50);
        assert_eq!(
            report.per_step_layout[0],
            vec![BufferAt {
                tensor: TensorId(1),
                offset: 0,
                size: 50,
            }]
        );
    }

    #[test]
    fn capacity_exceeded_reports_the_step() {
        let g = sample_branching_graph();
        let config = ArenaConfig {
            capacity_bytes: Some(4000),
            alignment_bytes: 1,
        };
        // Default order: the very first operator needs 1568 + 3136 > 4000.
        let err = simulate_compacting(&g, &g.default_schedule(), &config).unwrap_err();
        assert_eq!(
            err,
            AllocError::CapacityExceeded {
                step: 0,
                capacity: 4000,
                attempted: 3136,
                live_bytes: 1568,
            }
        );
    }

    #[test]
    fn static_allocation_sums_all_ram_tensors() {
        let g = sample_branching_graph();
        assert_eq!(simulate_static(&g, &byte_config()).unwrap(), 8320);
        // Word alignment changes nothing here: every size is a multiple of 4.
        assert_eq!(simulate_static(&g, &ArenaConfig::default()).unwrap(), 8320);
    }

    #[test]
    fn static_alignment_pads_odd_sizes() {
        let tensors = vec![
            TensorInfo::new(0, 5, Storage::Ram),
            TensorInfo::new(1, 3, Storage::Ram),
        ];
        let ops = vec![OperatorNode::new(0, "Op", vec![0], 1)];
        let g = Graph::new(None, tensors, ops).unwrap();
        assert_eq!(simulate_static(&g, &ArenaConfig::default()).unwrap(), 12);
    }

    #[test]
    fn zero_size_static_total_is_zero() {
        let tensors = vec![
            TensorInfo::new(0, 0, Storage::Ram),
            TensorInfo::new(1, 0, Storage::Ram),
        ];
        let ops = vec![OperatorNode::new(0, "Op", vec![0], 1)];
        let g = Graph::new(None, tensors, ops).unwrap();
        assert_eq!(simulate_static(&g, &byte_config()).unwrap(), 0);
    }

    #[test]
    fn inplace_step_reuses_the_input_interval() {
        let tensors = vec![
            TensorInfo::new(0, 32, Storage::Ram),
            TensorInfo::new(1, 64, Storage::Ram),
            TensorInfo::new(2, 64, Storage::Ram),
        ];
        let ops = vec![
            OperatorNode::new(0, "A", vec![0], 1),
            OperatorNode::new(1, "B", vec![1], 2).with_inplace(0),
        ];
        let g = Graph::new(None, tensors, ops).unwrap();
        let report = simulate_compacting(&g, &g.default_schedule(), &byte_config()).unwrap();
        // No alloc event for t2 and no free event for t1.
        assert!(!report
            .events
            .iter()
            .any(|e| e.tensor == TensorId(2) && e.kind == EventKind::Alloc));
        assert!(!report
            .events
            .iter()
            .any(|e| e.tensor == TensorId(1) && e.kind == EventKind::Free));
        // Peak covers step 0 (input + t1), not 32 + 64 + 64.
        assert_eq!(report.peak_address_bytes, 96);
        let last = report.per_step_layout.last().unwrap();
        assert_eq!(last.len(), 1);
        assert_eq!(last[0].tensor, TensorId(2));
    }

    #[test]
    fn alignment_must_be_a_power_of_two() {
        let g = sample_branching_graph();
        let config = ArenaConfig {
            capacity_bytes: None,
            alignment_bytes: 3,
        };
        assert_eq!(
            simulate_compacting(&g, &g.default_schedule(), &config).unwrap_err(),
            AllocError::BadAlignment(3)
        );
    }

    #[test]
    fn fixture_comparison_report() {
        let g = sample_branching_graph();
        let report = compare_strategies(&g, &byte_config(), &CompareOptions::default()).unwrap();
        assert_eq!(report.default_order_peak, 5216);
        assert_eq!(report.optimal_order_peak, 4960);
        assert_eq!(report.static_peak, 8320);
        assert_eq!(report.dynamic_peak_default, 5216);
        assert_eq!(report.dynamic_peak_optimal, 4960);
        assert_eq!(report.flash_bytes, 0);
        assert_eq!(report.savings_bytes, 256);
        assert!((report.savings_percent - 4.907975460122699).abs() < 1e-12);
        assert_eq!(report.overhead_bytes, 0);
    }

    #[test]
    fn chain_has_no_savings() {
        let tensors = vec![
            TensorInfo::new(0, 30, Storage::Ram),
            TensorInfo::new(1, 20, Storage::Ram),
            TensorInfo::new(2, 10, Storage::Ram),
        ];
        let ops = vec![
            OperatorNode::new(0, "A", vec![0], 1),
            OperatorNode::new(1, "B", vec![1], 2),
        ];
        let g = Graph::new(None, tensors, ops).unwrap();
        let report = compare_strategies(&g, &byte_config(), &CompareOptions::default()).unwrap();
        assert_eq!(report.default_order_peak, report.optimal_order_peak);
        assert_eq!(report.savings_bytes, 0);
        assert_eq!(report.savings_percent, 0.0);
    }

    #[test]
    fn overhead_is_reported_separately() {
        let g = sample_branching_graph();
        let options = CompareOptions {
            overhead_per_tensor: 10,
            ..CompareOptions::default()
        };
        let report = compare_strategies(&g, &byte_config(), &options).unwrap();
        assert_eq!(report.overhead_bytes, 80);
        assert_eq!(report.optimal_order_peak, 4960, "headline peak untouched");
    }
}
