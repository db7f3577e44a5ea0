//! Deterministic graph generation for cross-checking and benchmarks.
//!
//! The scheduler's dynamic program is verified against brute-force
//! enumeration over corpora of small random DAGs. Everything here is
//! seeded and platform-independent so failures reproduce exactly.

use crate::graph::{Graph, OperatorNode, Storage, TensorInfo};

/// SplitMix64. Small, fast, and stable across platforms.
#[derive(Debug, Clone)]
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform value in `lo..=hi`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + self.next_u64() % (hi - lo + 1)
    }

    /// True with probability `percent`/100.
    pub fn chance(&mut self, percent: u64) -> bool {
        self.range(0, 99) < percent
    }
}

/// Random-DAG shape parameters.
///
/// Generated graphs are valid by construction: ids are dense, every
/// operator consumes only tensors that already exist, and the creation
/// order doubles as the embedded default schedule.
#[derive(Debug, Clone)]
pub struct GraphGen {
    pub min_ops: usize,
    pub max_ops: usize,
    /// Tensor sizes are uniform in `1..=max_size` bytes.
    pub max_size: u64,
    /// Chance (percent) that an extra input is drawn from tensors that
    /// already have a consumer, creating a branch.
    pub reuse_percent: u64,
    /// Chance (percent) that an operator gets an extra read-only flash input.
    pub flash_percent: u64,
    /// Chance (percent) that an operator accumulates in place into one of
    /// its inputs (forces matching output size).
    pub inplace_percent: u64,
}

impl Default for GraphGen {
    fn default() -> Self {
        GraphGen {
            min_ops: 1,
            max_ops: 8,
            max_size: 1000,
            reuse_percent: 45,
            flash_percent: 0,
            inplace_percent: 0,
        }
    }
}

impl GraphGen {
    pub fn generate(&self, rng: &mut Rng) -> Graph {
        let n_ops = rng.range(self.min_ops as u64, self.max_ops as u64) as usize;
        let mut tensors: Vec<TensorInfo> = Vec::new();
        let mut operators: Vec<OperatorNode> = Vec::new();
        let mut consumed: Vec<u32> = Vec::new(); // ram tensors with >= 1 consumer

        let n_inputs = rng.range(1, 2);
        for _ in 0..n_inputs {
            let id = tensors.len() as u32;
            tensors.push(TensorInfo::new(
                id,
                rng.range(1, self.max_size),
                Storage::Ram,
            ));
        }

        for op_id in 0..n_ops as u32 {
            let ram_pool: Vec<u32> = tensors
                .iter()
                .filter(|t| t.storage == Storage::Ram)
                .map(|t| t.id.0)
                .collect();
            let arity = rng.range(1, 3.min(ram_pool.len() as u64)) as usize;
            let mut inputs: Vec<u32> = Vec::with_capacity(arity);
            while inputs.len() < arity {
                let pick = if !consumed.is_empty() && rng.chance(self.reuse_percent) {
                    consumed[rng.range(0, consumed.len() as u64 - 1) as usize]
                } else {
                    ram_pool[rng.range(0, ram_pool.len() as u64 - 1) as usize]
                };
                if !inputs.contains(&pick) {
                    inputs.push(pick);
                }
            }
            if rng.chance(self.flash_percent) {
                let id = tensors.len() as u32;
                tensors.push(TensorInfo::new(
                    id,
                    rng.range(1, self.max_size),
                    Storage::Flash,
                ));
                inputs.push(id);
            }

            let out_id = tensors.len() as u32;
            let mut out_size = rng.range(1, self.max_size);
            let mut inplace = None;
            if rng.chance(self.inplace_percent) {
                let ram_positions: Vec<usize> = inputs
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| tensors[t as usize].storage == Storage::Ram)
                    .map(|(i, _)| i)
                    .collect();
                if !ram_positions.is_empty() {
                    let at = ram_positions[rng.range(0, ram_positions.len() as u64 - 1) as usize];
                    out_size = tensors[inputs[at] as usize].size_bytes;
                    inplace = Some(at);
                }
            }
            tensors.push(TensorInfo::new(out_id, out_size, Storage::Ram));

            for &t in &inputs {
                if tensors[t as usize].storage == Storage::Ram && !consumed.contains(&t) {
                    consumed.push(t);
                }
            }
            let mut node = OperatorNode::new(op_id, "Op", inputs, out_id);
            node.inplace_input = inplace;
            operators.push(node);
        }

        Graph::new(None, tensors, operators).expect("generated graphs are valid by construction")
    }
}

/// True if some ram tensor feeds two or more operators.
pub fn has_branch(graph: &Graph) -> bool {
    graph
        .tensors()
        .iter()
        .any(|t| t.storage == Storage::Ram && graph.consumers(t.id).len() >= 2)
}

/// The branching seven-operator example graph used throughout the docs,
/// tests, and `fixtures/paper_fig1.json`.
///
/// One 1568 B input feeds a chain producing a 3136 B tensor that is
/// consumed by two branches (3136→1568→512→256 and 3136→512→256) whose
/// tails are concatenated into a 512 B output. Executing the operators in
/// list order peaks at 5216 B; evaluating the short branch first drops the
/// peak to 4960 B.
pub fn sample_branching_graph() -> Graph {
    let sizes = [1568u64, 3136, 1568, 512, 512, 256, 256, 512];
    let tensors = sizes
        .iter()
        .enumerate()
        .map(|(id, &size)| TensorInfo::new(id as u32, size, Storage::Ram))
        .collect();
    let operators = vec![
        OperatorNode::new(0, "Conv2D", vec![0], 1),
        OperatorNode::new(1, "Conv2D", vec![1], 2),
        OperatorNode::new(2, "Conv2D", vec![2], 3),
        OperatorNode::new(3, "Conv2D", vec![1], 4),
        OperatorNode::new(4, "Conv2D", vec![3], 5),
        OperatorNode::new(5, "Conv2D", vec![4], 6),
        OperatorNode::new(6, "Concat", vec![5, 6], 7),
    ];
    Graph::new(Some("branching-cnn-cell".to_string()), tensors, operators)
        .expect("sample graph is valid")
}
