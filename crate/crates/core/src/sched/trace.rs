use crate::graph::{Graph, Storage, TensorSet};

use super::{inplace_saving, schedule_meta, MemoryTrace, Schedule, ScheduleError, TraceStep};

/// Computes the per-step resident set and byte total of `schedule`.
///
/// At the step executing operator `o`, the resident set is `o`'s output,
/// `o`'s ram inputs, and every ram tensor already produced (or graph input)
/// whose last consumer comes strictly later. Tensors nothing consumes stay
/// resident from production to the end. Flash tensors never appear; their
/// total is reported in `flash_bytes`.
pub fn working_set_trace(graph: &Graph, schedule: &Schedule) -> Result<MemoryTrace, ScheduleError> {
    let meta = schedule_meta(graph, schedule)?;
    let n = graph.op_count();

    // Tensors leaving residency after each step.
    let mut dying: Vec<Vec<crate::graph::TensorId>> = vec![Vec::new(); n];
    let mut live = TensorSet::new();
    let mut live_bytes = 0u64;
    for t in graph.tensors() {
        if t.storage != Storage::Ram {
            continue;
        }
        if n > 0 {
            dying[meta.death[t.id.index()]].push(t.id);
        }
        if t.producer.is_none() {
            live.insert(t.id);
            live_bytes += t.size_bytes;
        }
    }

    let mut steps = Vec::with_capacity(n);
    for (k, &op_id) in schedule.ids().iter().enumerate() {
        let op = graph.operator(op_id);
        if live.insert(op.output) {
            live_bytes += graph.tensor(op.output).size_bytes;
        }
        steps.push(TraceStep {
            operator: op_id,
            resident: live.clone(),
            bytes: live_bytes - inplace_saving(graph, &meta, op_id),
        });
        for &t in &dying[k] {
            if live.remove(t) {
                live_bytes -= graph.tensor(t).size_bytes;
            }
        }
    }

    let (peak_step, peak_bytes) = steps
        .iter()
        .enumerate()
        .max_by(|(ai, a), (bi, b)| a.bytes.cmp(&b.bytes).then(bi.cmp(ai)))
        .map(|(i, s)| (i, s.bytes))
        .unwrap_or((0, 0));

    Ok(MemoryTrace {
        steps,
        peak_bytes,
        peak_step,
        flash_bytes: graph.flash_bytes(),
    })
}

/// Peak working-set bytes of `schedule`; shorthand for
/// [`working_set_trace`]`.peak_bytes`.
pub fn peak_memory(graph: &Graph, schedule: &Schedule) -> Result<u64, ScheduleError> {
    Ok(working_set_trace(graph, schedule)?.peak_bytes)
}

/// Peak of `schedule` when producerless read-only tensors are charged
/// additively: each flash tensor is charged from the start of execution
/// through each step that consumes it (so a flash tensor with several
/// consumers is charged once per consumer over the earlier steps). This is
/// the forward-evaluation counterpart of the `count_flash_as_ram`
/// accounting used by the schedule search, and serves as its independent
/// cross-check.
pub fn peak_memory_counting_flash(
    graph: &Graph,
    schedule: &Schedule,
) -> Result<u64, ScheduleError> {
    let trace = working_set_trace(graph, schedule)?;
    let meta = schedule_meta(graph, schedule)?;
    let n = graph.op_count();
    if n == 0 {
        return Ok(0);
    }

    let mut charge = vec![0u64; n];
    let mut unconsumed_flash = 0u64;
    for t in graph.tensors() {
        if t.storage != Storage::Flash {
            continue;
        }
        let consumers = graph.consumers(t.id);
        if consumers.is_empty() {
            unconsumed_flash += t.size_bytes;
            continue;
        }
        for c in consumers {
            for slot in &mut charge[..=meta.positions[c.index()]] {
                *slot += t.size_bytes;
            }
        }
    }

    let peak = trace
        .steps
        .iter()
        .zip(&charge)
        .map(|(step, extra)| step.bytes + extra)
        .max()
        .unwrap_or(0);
    Ok(peak + unconsumed_flash)
}
