use crate::graph::{Graph, OperatorId};

use super::{schedule_meta, DpResult, Schedule, ScheduleError};

/// Limits for exhaustive schedule enumeration.
#[derive(Debug, Clone)]
pub struct EnumConfig {
    pub op_limit: usize,
}

impl Default for EnumConfig {
    fn default() -> Self {
        EnumConfig { op_limit: 12 }
    }
}

/// Yields every topological order of `graph` exactly once, in lexicographic
/// order by operator id.
pub fn enumerate_schedules<'g>(
    graph: &'g Graph,
    config: &EnumConfig,
) -> Result<TopoOrders<'g>, ScheduleError> {
    if graph.op_count() > config.op_limit {
        return Err(ScheduleError::GraphTooLarge {
            ops: graph.op_count(),
            limit: config.op_limit,
        });
    }
    Ok(TopoOrders::new(graph))
}

/// Backtracking enumerator over all topological orders.
#[derive(Debug)]
pub struct TopoOrders<'g> {
    graph: &'g Graph,
    chosen: Vec<OperatorId>,
    is_chosen: Vec<bool>,
    /// Operator id -> producers of its inputs not yet executed.
    missing: Vec<u32>,
    started: bool,
    done: bool,
}

impl<'g> TopoOrders<'g> {
    fn new(graph: &'g Graph) -> Self {
        let n = graph.op_count();
        let mut missing = vec![0u32; n];
        for op in graph.operators() {
            missing[op.id.index()] = op
                .inputs
                .iter()
                .filter(|t| graph.tensor(**t).producer.is_some())
                .count() as u32;
        }
        TopoOrders {
            graph,
            chosen: Vec::with_capacity(n),
            is_chosen: vec![false; n],
            missing,
            started: false,
            done: false,
        }
    }

    fn smallest_available(&self, min_id: u32) -> Option<u32> {
        (min_id..self.graph.op_count() as u32)
            .find(|&id| !self.is_chosen[id as usize] && self.missing[id as usize] == 0)
    }

    fn choose(&mut self, id: u32) {
        self.is_chosen[id as usize] = true;
        self.chosen.push(OperatorId(id));
        let output = self.graph.operator(OperatorId(id)).output;
        for &c in self.graph.consumers(output) {
            self.missing[c.index()] -= 1;
        }
    }

    fn unchoose(&mut self, id: u32) {
        self.is_chosen[id as usize] = false;
        self.chosen.pop();
        let output = self.graph.operator(OperatorId(id)).output;
        for &c in self.graph.consumers(output) {
            self.missing[c.index()] += 1;
        }
    }

    /// Extends the current prefix greedily with the smallest available id.
    fn descend(&mut self) {
        while self.chosen.len() < self.graph.op_count() {
            let id = self
                .smallest_available(0)
                .expect("a DAG always has an available operator");
            self.choose(id);
        }
    }
}

impl Iterator for TopoOrders<'_> {
    type Item = Schedule;

    fn next(&mut self) -> Option<Schedule> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.descend();
            return Some(Schedule::new(self.chosen.clone()));
        }
        // Backtrack to the deepest position with an untried alternative.
        loop {
            let Some(&last) = self.chosen.last() else {
                self.done = true;
                return None;
            };
            self.unchoose(last.0);
            if let Some(next) = self.smallest_available(last.0 + 1) {
                self.choose(next);
                self.descend();
                return Some(Schedule::new(self.chosen.clone()));
            }
        }
    }
}

/// Minimal peak over every topological order, by exhaustive search.
///
/// Ties are broken toward the lexicographically smallest schedule. This is
/// the independent oracle the dynamic program is validated against.
pub fn brute_force_min_peak(graph: &Graph, config: &EnumConfig) -> Result<DpResult, ScheduleError> {
    let mut best: Option<(u64, Schedule)> = None;
    let mut evaluated = 0u64;
    for schedule in enumerate_schedules(graph, config)? {
        let peak = schedule_peak(graph, &schedule);
        evaluated += 1;
        if best.as_ref().is_none_or(|(b, _)| peak < *b) {
            best = Some((peak, schedule));
        }
    }
    let (min_peak_bytes, schedule) = best.expect("at least one topological order exists");
    Ok(DpResult {
        min_peak_bytes,
        schedule,
        states_explored: evaluated,
        memo_entries: 0,
    })
}

/// Peak bytes of a schedule known to be valid (produced by the enumerator).
fn schedule_peak(graph: &Graph, schedule: &Schedule) -> u64 {
    let meta = schedule_meta(graph, schedule).expect("enumerated schedules are valid");
    let n = graph.op_count();
    let mut dying_bytes = vec![0u64; n.max(1)];
    let mut live_bytes = 0u64;
    for t in graph.tensors() {
        if t.storage != crate::graph::Storage::Ram {
            continue;
        }
        if n > 0 {
            dying_bytes[meta.death[t.id.index()]] += t.size_bytes;
        }
        if t.producer.is_none() {
            live_bytes += t.size_bytes;
        }
    }
    let mut peak = 0u64;
    for (k, &op_id) in schedule.ids().iter().enumerate() {
        let op = graph.operator(op_id);
        live_bytes += graph.tensor(op.output).size_bytes;
        peak = peak.max(live_bytes - super::inplace_saving(graph, &meta, op_id));
        live_bytes -= dying_bytes[k];
    }
    peak
}
