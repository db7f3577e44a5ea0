//! Validated computation-graph data model.
//!
//! A [`Graph`] is a DAG of single-output operators over sized tensors. The
//! constructor validates the structure and precomputes the derived indexes
//! (consumers per tensor, transitive operator reachability) that the
//! scheduler and the allocator rely on. A constructed `Graph` is immutable
//! and safe to share across threads.

mod set;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use set::TensorSet;

/// Dense tensor identifier, `0..tensor_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TensorId(pub u32);

/// Dense operator identifier, `0..op_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OperatorId(pub u32);

impl TensorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl OperatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a tensor's bytes live on the target.
///
/// `Ram` tensors (activations and graph inputs) occupy working-set memory
/// while live. `Flash` tensors are read-only parameters baked into static
/// storage; they never enter the working set and are reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    Ram,
    Flash,
}

/// A sized data buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub id: TensorId,
    pub size_bytes: u64,
    pub storage: Storage,
    /// The operator whose output this tensor is. Derived during validation
    /// from the operator list; any caller-provided value is replaced.
    pub producer: Option<OperatorId>,
}

impl TensorInfo {
    pub fn new(id: u32, size_bytes: u64, storage: Storage) -> Self {
        Self {
            id: TensorId(id),
            size_bytes,
            storage,
            producer: None,
        }
    }
}

/// A single-output computation node with ordered inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorNode {
    pub id: OperatorId,
    /// Informational label ("Conv2D", "Concat", ...); not interpreted.
    pub opcode: String,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
    /// Index into `inputs` marking the operator as able to accumulate its
    /// result into that input, eliminating the output buffer when the input
    /// has no later consumer. Requires equal input/output sizes.
    pub inplace_input: Option<usize>,
}

impl OperatorNode {
    pub fn new(id: u32, opcode: &str, inputs: Vec<u32>, output: u32) -> Self {
        Self {
            id: OperatorId(id),
            opcode: opcode.to_string(),
            inputs: inputs.into_iter().map(TensorId).collect(),
            output: TensorId(output),
            inplace_input: None,
        }
    }

    pub fn with_inplace(mut self, input_index: usize) -> Self {
        self.inplace_input = Some(input_index);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("ids must be dense (0..N-1): {0}")]
    NonDenseIds(String),
    #[error("graph has no tensors")]
    EmptyGraph,
    #[error("operator {op} references unknown tensor {tensor}")]
    DanglingReference { op: OperatorId, tensor: TensorId },
    #[error("operator {op} lists tensor {tensor} as an input more than once")]
    DuplicateInput { op: OperatorId, tensor: TensorId },
    #[error("tensor {tensor} is produced by both operator {first} and operator {second}")]
    DuplicateProducer {
        tensor: TensorId,
        first: OperatorId,
        second: OperatorId,
    },
    #[error("flash tensor {tensor} cannot be produced by operator {op}; flash is read-only")]
    FlashTensorProduced { tensor: TensorId, op: OperatorId },
    #[error("operator {op}: inplace_input index {index} is out of range for {arity} inputs")]
    InplaceIndexOutOfRange {
        op: OperatorId,
        index: usize,
        arity: usize,
    },
    #[error(
        "operator {op}: in-place input {input} ({input_size} B) and output {output} \
         ({output_size} B) must have equal sizes"
    )]
    InplaceSizeMismatch {
        op: OperatorId,
        input: TensorId,
        output: TensorId,
        input_size: u64,
        output_size: u64,
    },
    #[error("dependency cycle through operators {0:?}")]
    CycleDetected(Vec<OperatorId>),
    #[error(
        "embedded operator order is not topological: operator {op} runs before \
         operator {producer}, which produces its input {tensor}"
    )]
    NotTopological {
        op: OperatorId,
        producer: OperatorId,
        tensor: TensorId,
    },
    #[error("unknown operator id {0}")]
    UnknownOperator(OperatorId),
}

/// Transitive operator reachability as one bit row per operator.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ReachMatrix {
    words_per_row: usize,
    bits: Vec<u64>,
}

impl ReachMatrix {
    fn new(n: usize) -> Self {
        let words_per_row = n.div_ceil(64);
        Self {
            words_per_row,
            bits: vec![0; n * words_per_row],
        }
    }

    fn row(&self, op: usize) -> &[u64] {
        &self.bits[op * self.words_per_row..(op + 1) * self.words_per_row]
    }

    fn contains(&self, op: usize, pred: usize) -> bool {
        self.row(op)[pred / 64] & (1 << (pred % 64)) != 0
    }

    fn union_row_into(&self, op: usize, out: &mut [u64]) {
        for (dst, src) in out.iter_mut().zip(self.row(op)) {
            *dst |= src;
        }
    }

    fn copy_row_from(&mut self, dst_op: usize, src: &[u64]) {
        let start = dst_op * self.words_per_row;
        self.bits[start..start + self.words_per_row].copy_from_slice(src);
    }
}

/// A validated DAG of operators and tensors.
///
/// The operator list order is the model's embedded default schedule and is
/// required to be a topological order at construction time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    name: Option<String>,
    tensors: Vec<TensorInfo>,
    operators: Vec<OperatorNode>,
    op_position: Vec<usize>,
    consumers: Vec<Vec<OperatorId>>,
    reach: ReachMatrix,
}

impl Graph {
    /// Validates the raw parts and derives the consumer and reachability
    /// indexes. Tensor `producer` fields are derived from the operator list;
    /// the operator list order is preserved as the default schedule.
    pub fn new(
        name: Option<String>,
        mut tensors: Vec<TensorInfo>,
        operators: Vec<OperatorNode>,
    ) -> Result<Self, GraphError> {
        if tensors.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        check_dense("tensor", tensors.iter().map(|t| t.id.0), tensors.len())?;
        check_dense(
            "operator",
            operators.iter().map(|o| o.id.0),
            operators.len(),
        )?;
        tensors.sort_by_key(|t| t.id);

        let n_tensors = tensors.len();
        let n_ops = operators.len();

        let mut op_position = vec![0usize; n_ops];
        for (pos, op) in operators.iter().enumerate() {
            op_position[op.id.index()] = pos;
        }

        // Reference and per-operator shape checks.
        for op in &operators {
            for &t in op.inputs.iter().chain([&op.output]) {
                if t.index() >= n_tensors {
                    return Err(GraphError::DanglingReference {
                        op: op.id,
                        tensor: t,
                    });
                }
            }
            let mut seen = TensorSet::new();
            for &t in &op.inputs {
                if !seen.insert(t) {
                    return Err(GraphError::DuplicateInput {
                        op: op.id,
                        tensor: t,
                    });
                }
            }
            if let Some(idx) = op.inplace_input {
                let Some(&input) = op.inputs.get(idx) else {
                    return Err(GraphError::InplaceIndexOutOfRange {
                        op: op.id,
                        index: idx,
                        arity: op.inputs.len(),
                    });
                };
                let input_size = tensors[input.index()].size_bytes;
                let output_size = tensors[op.output.index()].size_bytes;
                if input_size != output_size {
                    return Err(GraphError::InplaceSizeMismatch {
                        op: op.id,
                        input,
                        output: op.output,
                        input_size,
                        output_size,
                    });
                }
            }
        }

        // Derive producers; a tensor has at most one.
        for t in &mut tensors {
            t.producer = None;
        }
        for op in &operators {
            let slot = &mut tensors[op.output.index()];
            if let Some(first) = slot.producer {
                return Err(GraphError::DuplicateProducer {
                    tensor: op.output,
                    first,
                    second: op.id,
                });
            }
            if slot.storage == Storage::Flash {
                return Err(GraphError::FlashTensorProduced {
                    tensor: op.output,
                    op: op.id,
                });
            }
            slot.producer = Some(op.id);
        }

        // Consumers per tensor, ascending operator id.
        let mut consumers = vec![Vec::new(); n_tensors];
        for id in 0..n_ops {
            let op = &operators[op_position[id]];
            for &t in &op.inputs {
                consumers[t.index()].push(op.id);
            }
        }

        detect_cycle(&tensors, &operators, &op_position, &consumers)?;

        // The embedded list order must itself be topological. An operator
        // consuming its own output is caught above as a one-operator cycle.
        let mut available = vec![false; n_tensors];
        for t in &tensors {
            if t.producer.is_none() {
                available[t.id.index()] = true;
            }
        }
        for op in &operators {
            for &t in &op.inputs {
                if !available[t.index()] {
                    return Err(GraphError::NotTopological {
                        op: op.id,
                        producer: tensors[t.index()].producer.expect("missing producer"),
                        tensor: t,
                    });
                }
            }
            available[op.output.index()] = true;
        }

        // Transitive closure over the (now known topological) list order.
        let mut reach = ReachMatrix::new(n_ops);
        let mut scratch = vec![0u64; reach.words_per_row];
        for op in &operators {
            scratch.iter_mut().for_each(|w| *w = 0);
            for &t in &op.inputs {
                if let Some(p) = tensors[t.index()].producer {
                    reach.union_row_into(p.index(), &mut scratch);
                    scratch[p.index() / 64] |= 1 << (p.index() % 64);
                }
            }
            reach.copy_row_from(op.id.index(), &scratch);
        }

        debug_assert!(
            consumers.iter().any(|c| c.is_empty()),
            "a validated graph always has an output tensor"
        );

        Ok(Self {
            name,
            tensors,
            operators,
            op_position,
            consumers,
            reach,
        })
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn op_count(&self) -> usize {
        self.operators.len()
    }

    pub fn tensor(&self, id: TensorId) -> &TensorInfo {
        &self.tensors[id.index()]
    }

    pub fn operator(&self, id: OperatorId) -> &OperatorNode {
        &self.operators[self.op_position[id.index()]]
    }

    /// Tensors sorted by id.
    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    /// Operators in embedded default-schedule order.
    pub fn operators(&self) -> &[OperatorNode] {
        &self.operators
    }

    /// Operators that consume `t`, ascending id.
    pub fn consumers(&self, t: TensorId) -> &[OperatorId] {
        &self.consumers[t.index()]
    }

    /// True if `op` is reachable from `pred` via data dependencies.
    pub fn is_predecessor(&self, pred: OperatorId, op: OperatorId) -> bool {
        self.reach.contains(op.index(), pred.index())
    }

    /// All operators from which `op` is reachable (transitive, excluding
    /// `op` itself), ascending id.
    pub fn predecessors(&self, op: OperatorId) -> Result<Vec<OperatorId>, GraphError> {
        if op.index() >= self.op_count() {
            return Err(GraphError::UnknownOperator(op));
        }
        Ok((0..self.op_count() as u32)
            .map(OperatorId)
            .filter(|&p| self.reach.contains(op.index(), p.index()))
            .collect())
    }

    pub(crate) fn union_predecessors_into(&self, op: OperatorId, out: &mut [u64]) {
        self.reach.union_row_into(op.index(), out);
    }

    pub(crate) fn reach_words_per_row(&self) -> usize {
        self.reach.words_per_row
    }

    /// The schedule embedded in the model: the operator list order.
    pub fn default_schedule(&self) -> crate::sched::Schedule {
        crate::sched::Schedule::new(self.operators.iter().map(|o| o.id).collect())
    }

    /// Total size of read-only flash tensors (the model-parameter footprint).
    pub fn flash_bytes(&self) -> u64 {
        self.tensors
            .iter()
            .filter(|t| t.storage == Storage::Flash)
            .map(|t| t.size_bytes)
            .sum()
    }

    /// Ram tensors no operator consumes: the graph's outputs (plus any
    /// never-consumed input). These stay resident to the end of execution.
    pub fn output_tensors(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.tensors
            .iter()
            .filter(|t| t.storage == Storage::Ram && self.consumers[t.id.index()].is_empty())
            .map(|t| t.id)
    }

    /// Producerless ram tensors: graph inputs, resident from step 0.
    pub fn input_tensors(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.tensors
            .iter()
            .filter(|t| t.storage == Storage::Ram && t.producer.is_none())
            .map(|t| t.id)
    }

    /// Re-runs validation on this graph's parts. Always succeeds for a
    /// constructed graph and yields an identical value.
    pub fn revalidate(&self) -> Result<Graph, GraphError> {
        Graph::new(
            self.name.clone(),
            self.tensors.clone(),
            self.operators.clone(),
        )
    }
}

fn check_dense(what: &str, ids: impl Iterator<Item = u32>, count: usize) -> Result<(), GraphError> {
    let mut seen = vec![false; count];
    for id in ids {
        let Some(slot) = seen.get_mut(id as usize) else {
            return Err(GraphError::NonDenseIds(format!(
                "{what} id {id} with only {count} {what}s"
            )));
        };
        if *slot {
            return Err(GraphError::NonDenseIds(format!("duplicate {what} id {id}")));
        }
        *slot = true;
    }
    Ok(())
}

/// Kahn's algorithm over the operator dependency relation; on failure a
/// concrete cycle is extracted for the error message.
fn detect_cycle(
    tensors: &[TensorInfo],
    operators: &[OperatorNode],
    op_position: &[usize],
    consumers: &[Vec<OperatorId>],
) -> Result<(), GraphError> {
    let n = operators.len();
    let mut indegree: Vec<u32> = vec![0; n];
    for op in operators {
        indegree[op.id.index()] = op
            .inputs
            .iter()
            .filter(|t| tensors[t.index()].producer.is_some())
            .count() as u32;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut processed = 0;
    while let Some(id) = queue.pop() {
        processed += 1;
        let op = &operators[op_position[id]];
        for &q in &consumers[op.output.index()] {
            indegree[q.index()] -= 1;
            if indegree[q.index()] == 0 {
                queue.push(q.index());
            }
        }
    }
    if processed == n {
        return Ok(());
    }

    // Three-color DFS over the unprocessed subgraph; the first back edge
    // closes a cycle. Unprocessed nodes merely downstream of a cycle may
    // dead-end, so every unprocessed node is tried as a start.
    let remaining: Vec<bool> = indegree.iter().map(|&d| d > 0).collect();
    let mut color = vec![0u8; n]; // 0 unvisited, 1 on path, 2 done
    for start in 0..n {
        if !remaining[start] || color[start] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        let mut path: Vec<usize> = vec![start];
        color[start] = 1;
        while let Some(&(id, edge)) = stack.last() {
            let op = &operators[op_position[id]];
            let succs = &consumers[op.output.index()];
            if edge < succs.len() {
                stack.last_mut().expect("nonempty").1 += 1;
                let q = succs[edge].index();
                if !remaining[q] || color[q] == 2 {
                    continue;
                }
                if color[q] == 1 {
                    let at = path.iter().position(|&p| p == q).expect("on path");
                    let cycle = path[at..].iter().map(|&p| OperatorId(p as u32)).collect();
                    return Err(GraphError::CycleDetected(cycle));
                }
                color[q] = 1;
                path.push(q);
                stack.push((q, 0));
            } else {
                color[id] = 2;
                path.pop();
                stack.pop();
            }
        }
    }
    unreachable!("unprocessed operators always contain a cycle")
}
