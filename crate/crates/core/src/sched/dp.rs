use std::collections::HashMap;

use crate::graph::{Graph, OperatorId, Storage, TensorId, TensorSet};

use super::{DpResult, Schedule, ScheduleError};

/// Limits and accounting mode for the minimal-peak search.
#[derive(Debug, Clone)]
pub struct DpConfig {
    /// Hard cap on operator count; the state space is O(|V| * 2^|V|).
    pub op_limit: usize,
    /// Cap on memoization entries before giving up.
    pub memo_entry_cap: usize,
    /// When set, producerless read-only (flash) tensors are charged
    /// additively into the reported peak: each one is counted from the
    /// start of execution through every step that consumes it. When unset
    /// (the default), flash tensors are excluded entirely and reported
    /// separately, which models parameters living outside working RAM.
    pub count_flash_as_ram: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            op_limit: 62,
            memo_entry_cap: 1 << 26,
            count_flash_as_ram: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct MemoEntry {
    peak: u64,
    /// Sum of step bytes along the reconstructed suffix; secondary
    /// tie-break pushing toward lower average occupancy.
    total: u64,
    choice: Option<OperatorId>,
}

/// Finds a schedule minimizing peak working-set bytes.
///
/// The search walks execution backwards: a state is the set of pending ram
/// tensors that must be resident at that point, and each move un-applies
/// the producer of one pending tensor whose value is not needed to compute
/// any other pending tensor (re-execution is never allowed). The peak of a
/// move is the larger of the producer's own step footprint and the best
/// value of the predecessor state; states are memoized by their canonical
/// tensor set. Among equal-peak moves the search prefers the smaller step
/// total and then the smaller operator id, making the result deterministic.
///
/// The returned schedule always satisfies
/// `working_set_trace(graph, &result.schedule)?.peak_bytes ==
/// result.min_peak_bytes` under the default accounting.
pub fn min_peak_memory(graph: &Graph, config: &DpConfig) -> Result<DpResult, ScheduleError> {
    let n = graph.op_count();
    if n > config.op_limit {
        return Err(ScheduleError::GraphTooLarge {
            ops: n,
            limit: config.op_limit,
        });
    }
    if n == 0 {
        return Ok(DpResult {
            min_peak_bytes: 0,
            schedule: Schedule::new(vec![]),
            states_explored: 0,
            memo_entries: 0,
        });
    }

    let mut search = Search::new(graph, config);
    let goal: TensorSet = graph.output_tensors().collect();
    let goal_sum = search.sum(&goal);
    let (peak, _) = search.solve(&goal, goal_sum)?;

    // Flash tensors nothing consumes sit outside every step and are charged
    // once on top under the flash-as-ram accounting.
    let base_flash = if config.count_flash_as_ram {
        graph
            .tensors()
            .iter()
            .filter(|t| t.storage == Storage::Flash && graph.consumers(t.id).is_empty())
            .map(|t| t.size_bytes)
            .sum()
    } else {
        0
    };

    let schedule = search.reconstruct(goal);
    debug_assert_eq!(schedule.len(), n);

    Ok(DpResult {
        min_peak_bytes: peak + base_flash,
        schedule,
        states_explored: search.states_explored,
        memo_entries: search.memo.len() as u64,
    })
}

struct Search<'g> {
    graph: &'g Graph,
    count_flash_as_ram: bool,
    memo_entry_cap: usize,
    memo: HashMap<TensorSet, MemoEntry>,
    states_explored: u64,
    /// Operator id -> its ram inputs.
    ram_inputs: Vec<Vec<TensorId>>,
    /// Operator id -> total size of its flash inputs.
    flash_input_bytes: Vec<u64>,
    /// Operator id -> ram tensor the operator may accumulate into.
    inplace_target: Vec<Option<TensorId>>,
}

impl<'g> Search<'g> {
    fn new(graph: &'g Graph, config: &DpConfig) -> Self {
        let n = graph.op_count();
        let mut ram_inputs = vec![Vec::new(); n];
        let mut flash_input_bytes = vec![0u64; n];
        let mut inplace_target = vec![None; n];
        for op in graph.operators() {
            let i = op.id.index();
            for &t in &op.inputs {
                match graph.tensor(t).storage {
                    Storage::Ram => ram_inputs[i].push(t),
                    Storage::Flash => flash_input_bytes[i] += graph.tensor(t).size_bytes,
                }
            }
            inplace_target[i] = op
                .inplace_input
                .map(|idx| op.inputs[idx])
                .filter(|&t| graph.tensor(t).storage == Storage::Ram);
        }
        Search {
            graph,
            count_flash_as_ram: config.count_flash_as_ram,
            memo_entry_cap: config.memo_entry_cap,
            memo: HashMap::new(),
            states_explored: 0,
            ram_inputs,
            flash_input_bytes,
            inplace_target,
        }
    }

    fn sum(&self, state: &TensorSet) -> u64 {
        state.iter().map(|t| self.graph.tensor(t).size_bytes).sum()
    }

    /// Minimal achievable (peak, step-byte total) over execution prefixes
    /// that end with exactly `state` pending. `state_sum` is the byte total
    /// of `state`, maintained incrementally.
    fn solve(&mut self, state: &TensorSet, state_sum: u64) -> Result<(u64, u64), ScheduleError> {
        if let Some(entry) = self.memo.get(state) {
            return Ok((entry.peak, entry.total));
        }
        self.states_explored += 1;

        // Producers needed by some other pending tensor may not be
        // un-applied here: that would force them to execute twice.
        let mut blocked = vec![0u64; self.graph.reach_words_per_row()];
        let mut any_produced = false;
        for t in state.iter() {
            if let Some(p) = self.graph.tensor(t).producer {
                any_produced = true;
                self.graph.union_predecessors_into(p, &mut blocked);
            }
        }

        let entry = if !any_produced {
            // Only graph inputs remain: the memory held before the first
            // operator runs. Never larger than that operator's own step.
            MemoEntry {
                peak: state_sum,
                total: 0,
                choice: None,
            }
        } else {
            let mut best: Option<(u64, u64, OperatorId)> = None;
            for x in state.iter() {
                let Some(p) = self.graph.tensor(x).producer else {
                    continue;
                };
                if blocked[p.index() / 64] & (1 << (p.index() % 64)) != 0 {
                    continue;
                }
                let (next, next_sum) = self.unapply(state, state_sum, x, p);
                let mut step_bytes = next_sum + self.graph.tensor(x).size_bytes;
                if let Some(target) = self.inplace_target[p.index()] {
                    // The output may alias the target's buffer only when no
                    // other pending tensor still needs the target.
                    if !state.contains(target) {
                        step_bytes -= self.graph.tensor(x).size_bytes;
                    }
                }
                let flash_extra = if self.count_flash_as_ram {
                    self.flash_input_bytes[p.index()]
                } else {
                    0
                };
                let (sub_peak, sub_total) = self.solve(&next, next_sum)?;
                let cand = (
                    sub_peak.max(step_bytes) + flash_extra,
                    sub_total + step_bytes + flash_extra,
                    p,
                );
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
            let (peak, total, choice) =
                best.expect("a maximal pending tensor is always un-appliable");
            MemoEntry {
                peak,
                total,
                choice: Some(choice),
            }
        };

        if self.memo.len() >= self.memo_entry_cap {
            return Err(ScheduleError::MemoBudgetExceeded {
                cap: self.memo_entry_cap,
            });
        }
        self.memo.insert(state.clone(), entry);
        Ok((entry.peak, entry.total))
    }

    /// State transition: remove `x`, add the ram inputs of its producer.
    fn unapply(
        &self,
        state: &TensorSet,
        state_sum: u64,
        x: TensorId,
        producer: OperatorId,
    ) -> (TensorSet, u64) {
        let mut next = state.clone();
        next.remove(x);
        let mut next_sum = state_sum - self.graph.tensor(x).size_bytes;
        for &t in &self.ram_inputs[producer.index()] {
            if next.insert(t) {
                next_sum += self.graph.tensor(t).size_bytes;
            }
        }
        (next, next_sum)
    }

    /// Replays the memoized choices from the goal state into a forward
    /// schedule.
    fn reconstruct(&self, goal: TensorSet) -> Schedule {
        let mut reversed = Vec::with_capacity(self.graph.op_count());
        let mut state = goal;
        let mut state_sum = self.sum(&state);
        loop {
            let entry = self.memo.get(&state).expect("solved state");
            let Some(p) = entry.choice else { break };
            reversed.push(p);
            let x = self.graph.operator(p).output;
            (state, state_sum) = self.unapply(&state, state_sum, x, p);
        }
        reversed.reverse();
        Schedule::new(reversed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sample_branching_graph;
    use crate::graph::{Graph, OperatorNode, TensorInfo};
    use crate::sched::working_set_trace;

    #[test]
    fn finds_the_fixture_optimum_and_schedule() {
        let g = sample_branching_graph();
        let result = min_peak_memory(&g, &DpConfig::default()).unwrap();
        assert_eq!(result.min_peak_bytes, 4960);
        assert_eq!(result.schedule.to_string(), "0,3,5,1,2,4,6");
        let trace = working_set_trace(&g, &result.schedule).unwrap();
        assert_eq!(trace.peak_bytes, 4960);
        assert!(result.states_explored > 0);
        assert!(result.memo_entries > 0);
    }

    #[test]
    fn chain_equals_its_only_schedule() {
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
        let result = min_peak_memory(&g, &DpConfig::default()).unwrap();
        assert_eq!(result.schedule, g.default_schedule());
        assert_eq!(
            result.min_peak_bytes,
            working_set_trace(&g, &g.default_schedule())
                .unwrap()
                .peak_bytes
        );
    }

    #[test]
    fn operator_limit_enforced() {
        let g = sample_branching_graph();
        let err = min_peak_memory(
            &g,
            &DpConfig {
                op_limit: 3,
                ..DpConfig::default()
            },
        )
        .unwrap_err();
        assert_eq!(err, ScheduleError::GraphTooLarge { ops: 7, limit: 3 });
    }

    #[test]
    fn memo_budget_enforced() {
        let g = sample_branching_graph();
        let err = min_peak_memory(
            &g,
            &DpConfig {
                memo_entry_cap: 2,
                ..DpConfig::default()
            },
        )
        .unwrap_err();
        assert_eq!(err, ScheduleError::MemoBudgetExceeded { cap: 2 });
    }

    #[test]
    fn empty_graph_needs_nothing() {
        let g = Graph::new(None, vec![TensorInfo::new(0, 9, Storage::Ram)], vec![]).unwrap();
        let result = min_peak_memory(&g, &DpConfig::default()).unwrap();
        assert_eq!(result.min_peak_bytes, 0);
        assert!(result.schedule.is_empty());
    }

    #[test]
    fn repeated_runs_are_identical() {
        let g = sample_branching_graph();
        let a = min_peak_memory(&g, &DpConfig::default()).unwrap();
        let b = min_peak_memory(&g, &DpConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inplace_annotation_lowers_the_optimum() {
        // in -> A -> t1 -> B -> t2, where B may accumulate into t1.
        let tensors = vec![
            TensorInfo::new(0, 10, Storage::Ram),
            TensorInfo::new(1, 100, Storage::Ram),
            TensorInfo::new(2, 100, Storage::Ram),
        ];
        let without = Graph::new(
            None,
            tensors.clone(),
            vec![
                OperatorNode::new(0, "A", vec![0], 1),
                OperatorNode::new(1, "B", vec![1], 2),
            ],
        )
        .unwrap();
        let with = Graph::new(
            None,
            tensors,
            vec![
                OperatorNode::new(0, "A", vec![0], 1),
                OperatorNode::new(1, "B", vec![1], 2).with_inplace(0),
            ],
        )
        .unwrap();
        assert_eq!(
            min_peak_memory(&without, &DpConfig::default())
                .unwrap()
                .min_peak_bytes,
            200
        );
        assert_eq!(
            min_peak_memory(&with, &DpConfig::default())
                .unwrap()
                .min_peak_bytes,
            110
        );
    }

    #[test]
    fn flash_accounting_modes_differ() {
        let tensors = vec![
            TensorInfo::new(0, 100, Storage::Ram),
            TensorInfo::new(1, 7000, Storage::Flash),
            TensorInfo::new(2, 50, Storage::Ram),
        ];
        let ops = vec![OperatorNode::new(0, "Conv2D", vec![0, 1], 2)];
        let g = Graph::new(None, tensors, ops).unwrap();
        let plain = min_peak_memory(&g, &DpConfig::default()).unwrap();
        assert_eq!(plain.min_peak_bytes, 150);
        let counted = min_peak_memory(
            &g,
            &DpConfig {
                count_flash_as_ram: true,
                ..DpConfig::default()
            },
        )
        .unwrap();
        assert_eq!(counted.min_peak_bytes, 7150);
    }
}
