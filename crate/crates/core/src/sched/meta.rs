use crate::graph::{Graph, OperatorId, Storage, TensorId};

use super::{Schedule, ScheduleError};

/// Liveness of every ram tensor under one concrete schedule.
///
/// A ram tensor is resident over the contiguous step interval
/// `[birth, death]`: birth is its producer's step (0 for graph inputs),
/// death is its last consumer's step (the final step for tensors nothing
/// consumes, which are graph outputs held to the end).
#[derive(Debug)]
pub(crate) struct ScheduleMeta {
    /// Operator id -> step index.
    pub positions: Vec<usize>,
    /// Tensor id -> last step needing the tensor (ram tensors only).
    pub death: Vec<usize>,
}

/// Checks that `schedule` is a dependency-respecting permutation and
/// derives liveness intervals.
pub(crate) fn schedule_meta(
    graph: &Graph,
    schedule: &Schedule,
) -> Result<ScheduleMeta, ScheduleError> {
    let n = graph.op_count();
    if schedule.len() != n {
        return Err(ScheduleError::NotAPermutation(format!(
            "{} operators scheduled, graph has {n}",
            schedule.len()
        )));
    }
    let mut positions = vec![usize::MAX; n];
    for (pos, &op) in schedule.ids().iter().enumerate() {
        if op.index() >= n {
            return Err(ScheduleError::NotAPermutation(format!(
                "operator {op} does not exist"
            )));
        }
        if positions[op.index()] != usize::MAX {
            return Err(ScheduleError::NotAPermutation(format!(
                "operator {op} appears more than once"
            )));
        }
        positions[op.index()] = pos;
    }

    let mut produced = vec![false; graph.tensor_count()];
    for t in graph.tensors() {
        if t.producer.is_none() {
            produced[t.id.index()] = true;
        }
    }
    for &op_id in schedule.ids() {
        let op = graph.operator(op_id);
        for &t in &op.inputs {
            if !produced[t.index()] {
                return Err(ScheduleError::NotTopological {
                    op: op_id,
                    producer: graph.tensor(t).producer.expect("unproduced tensor"),
                    tensor: t,
                });
            }
        }
        produced[op.output.index()] = true;
    }

    let last_step = n.saturating_sub(1);
    let death = graph
        .tensors()
        .iter()
        .map(|t| {
            graph
                .consumers(t.id)
                .iter()
                .map(|c| positions[c.index()])
                .max()
                .unwrap_or(last_step)
        })
        .collect();

    Ok(ScheduleMeta { positions, death })
}

/// Bytes saved at `op`'s step by accumulating into an input in place: the
/// output aliases the designated input's buffer when that input is ram and
/// has no consumer after this step.
pub(crate) fn inplace_saving(graph: &Graph, meta: &ScheduleMeta, op: OperatorId) -> u64 {
    let node = graph.operator(op);
    let Some(idx) = node.inplace_input else {
        return 0;
    };
    let target = node.inputs[idx];
    let info = graph.tensor(target);
    if info.storage == Storage::Ram && meta.death[target.index()] == meta.positions[op.index()] {
        graph.tensor(node.output).size_bytes
    } else {
        0
    }
}

/// True when the in-place rule fires for `op` (see [`inplace_saving`]);
/// used by the allocator to reuse the input's buffer interval.
pub(crate) fn inplace_target(
    graph: &Graph,
    meta: &ScheduleMeta,
    op: OperatorId,
) -> Option<TensorId> {
    let node = graph.operator(op);
    let idx = node.inplace_input?;
    let target = node.inputs[idx];
    let info = graph.tensor(target);
    (info.storage == Storage::Ram && meta.death[target.index()] == meta.positions[op.index()])
        .then_some(target)
}
