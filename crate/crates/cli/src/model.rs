//! Versioned JSON graph documents and their mapping onto validated graphs.
//!
//! Document ids may be sparse or start anywhere; the loader densifies them
//! (rank by ascending id) and keeps the mapping so schedules, traces, and
//! saved files always speak the user's ids. The operator array order is the
//! model's embedded default schedule and is preserved verbatim.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use opsched_core::graph::{
    Graph, GraphError, OperatorId, OperatorNode, Storage, TensorId, TensorInfo,
};
use opsched_core::sched::Schedule;

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tensors: Vec<TensorDoc>,
    pub operators: Vec<OperatorDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDoc {
    pub id: u64,
    pub size_bytes: u64,
    pub storage: Storage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorDoc {
    pub id: u64,
    pub opcode: String,
    pub inputs: Vec<u64>,
    pub output: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inplace_input: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format version {0} (this tool reads version 1)")]
    Version(u32),
    #[error("unknown field `{field}` in {at} (strict mode)")]
    UnknownField { field: String, at: String },
    #[error("duplicate tensor id {0}")]
    DuplicateTensorId(u64),
    #[error("duplicate operator id {0}")]
    DuplicateOperatorId(u64),
    #[error("operator {op} references unknown tensor {tensor}")]
    UnknownTensorRef { op: u64, tensor: u64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A validated graph together with the document-id mapping.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub graph: Graph,
    tensor_ids: Vec<u64>,
    op_ids: Vec<u64>,
    op_by_original: HashMap<u64, OperatorId>,
}

impl LoadedModel {
    pub fn original_tensor_id(&self, id: TensorId) -> u64 {
        self.tensor_ids[id.index()]
    }

    pub fn original_op_id(&self, id: OperatorId) -> u64 {
        self.op_ids[id.index()]
    }

    pub fn op_from_original(&self, original: u64) -> Option<OperatorId> {
        self.op_by_original.get(&original).copied()
    }

    /// Dense-to-original pairs that actually changed, for --verbose output.
    pub fn remapped_tensors(&self) -> Vec<(u32, u64)> {
        changed(&self.tensor_ids)
    }

    pub fn remapped_operators(&self) -> Vec<(u32, u64)> {
        changed(&self.op_ids)
    }

    /// Renders a schedule in document operator ids.
    pub fn schedule_to_original(&self, schedule: &Schedule) -> String {
        schedule
            .ids()
            .iter()
            .map(|&op| self.original_op_id(op).to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Rebuilds the document with original ids, operators ordered by
    /// `schedule`.
    pub fn to_document(&self, schedule: &Schedule) -> GraphDocument {
        let tensors = self
            .graph
            .tensors()
            .iter()
            .map(|t| TensorDoc {
                id: self.original_tensor_id(t.id),
                size_bytes: t.size_bytes,
                storage: t.storage,
            })
            .collect();
        let operators = schedule
            .ids()
            .iter()
            .map(|&id| {
                let op = self.graph.operator(id);
                OperatorDoc {
                    id: self.original_op_id(op.id),
                    opcode: op.opcode.clone(),
                    inputs: op
                        .inputs
                        .iter()
                        .map(|&t| self.original_tensor_id(t))
                        .collect(),
                    output: self.original_tensor_id(op.output),
                    inplace_input: op.inplace_input,
                }
            })
            .collect();
        GraphDocument {
            version: FORMAT_VERSION,
            name: self.graph.name().map(str::to_string),
            tensors,
            operators,
        }
    }
}

fn changed(ids: &[u64]) -> Vec<(u32, u64)> {
    ids.iter()
        .enumerate()
        .filter(|&(dense, &orig)| dense as u64 != orig)
        .map(|(dense, &orig)| (dense as u32, orig))
        .collect()
}

/// Parses a document from JSON text. Under `strict`, unknown fields are
/// rejected; otherwise they are ignored.
pub fn parse_document(text: &str, strict: bool) -> Result<GraphDocument, ModelError> {
    let value: Value = serde_json::from_str(text)?;
    if strict {
        check_known_fields(&value)?;
    }
    let doc: GraphDocument = serde_json::from_value(value)?;
    if doc.version != FORMAT_VERSION {
        return Err(ModelError::Version(doc.version));
    }
    Ok(doc)
}

fn check_known_fields(value: &Value) -> Result<(), ModelError> {
    let check = |obj: &Value, allowed: &[&str], at: String| -> Result<(), ModelError> {
        if let Some(map) = obj.as_object() {
            for field in map.keys() {
                if !allowed.contains(&field.as_str()) {
                    return Err(ModelError::UnknownField {
                        field: field.clone(),
                        at,
                    });
                }
            }
        }
        Ok(())
    };
    check(
        value,
        &["version", "name", "tensors", "operators"],
        "document root".to_string(),
    )?;
    for (i, t) in value["tensors"]
        .as_array()
        .into_iter()
        .flatten()
        .enumerate()
    {
        check(t, &["id", "size_bytes", "storage"], format!("tensors[{i}]"))?;
    }
    for (i, o) in value["operators"]
        .as_array()
        .into_iter()
        .flatten()
        .enumerate()
    {
        check(
            o,
            &["id", "opcode", "inputs", "output", "inplace_input"],
            format!("operators[{i}]"),
        )?;
    }
    Ok(())
}

/// Densifies ids and validates the graph.
pub fn model_from_document(doc: GraphDocument) -> Result<LoadedModel, ModelError> {
    let mut tensor_ids: Vec<u64> = doc.tensors.iter().map(|t| t.id).collect();
    tensor_ids.sort_unstable();
    if let Some(dup) = first_duplicate(&tensor_ids) {
        return Err(ModelError::DuplicateTensorId(dup));
    }
    let tensor_by_original: HashMap<u64, TensorId> = tensor_ids
        .iter()
        .enumerate()
        .map(|(dense, &orig)| (orig, TensorId(dense as u32)))
        .collect();

    let mut op_ids: Vec<u64> = doc.operators.iter().map(|o| o.id).collect();
    op_ids.sort_unstable();
    if let Some(dup) = first_duplicate(&op_ids) {
        return Err(ModelError::DuplicateOperatorId(dup));
    }
    let op_by_original: HashMap<u64, OperatorId> = op_ids
        .iter()
        .enumerate()
        .map(|(dense, &orig)| (orig, OperatorId(dense as u32)))
        .collect();

    let tensors = doc
        .tensors
        .iter()
        .map(|t| TensorInfo {
            id: tensor_by_original[&t.id],
            size_bytes: t.size_bytes,
            storage: t.storage,
            producer: None,
        })
        .collect();
    let operators = doc
        .operators
        .iter()
        .map(|o| {
            let resolve = |raw: u64| {
                tensor_by_original
                    .get(&raw)
                    .copied()
                    .ok_or(ModelError::UnknownTensorRef {
                        op: o.id,
                        tensor: raw,
                    })
            };
            Ok(OperatorNode {
                id: op_by_original[&o.id],
                opcode: o.opcode.clone(),
                inputs: o
                    .inputs
                    .iter()
                    .map(|&t| resolve(t))
                    .collect::<Result<_, _>>()?,
                output: resolve(o.output)?,
                inplace_input: o.inplace_input,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let graph = Graph::new(doc.name, tensors, operators)?;
    Ok(LoadedModel {
        graph,
        tensor_ids,
        op_ids,
        op_by_original,
    })
}

fn first_duplicate(sorted: &[u64]) -> Option<u64> {
    sorted.windows(2).find(|w| w[0] == w[1]).map(|w| w[0])
}

/// Loads and validates a graph document from disk.
pub fn load_model(path: &Path, strict: bool) -> Result<LoadedModel, CliError> {
    let in_file = |source: ModelError| CliError::Model {
        path: path.display().to_string(),
        source,
    };
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc = parse_document(&text, strict).map_err(in_file)?;
    model_from_document(doc).map_err(in_file)
}

/// Convenience wrapper when the id mapping is not needed.
pub fn load_graph(path: &Path, strict: bool) -> Result<Graph, CliError> {
    Ok(load_model(path, strict)?.graph)
}

/// Writes the model back with its operator array reordered to `schedule`.
/// Ids are unchanged; a reload's default schedule is `schedule`. The write
/// is atomic (temp file + rename).
pub fn save_graph_with_schedule(
    model: &LoadedModel,
    schedule: &Schedule,
    path: &Path,
) -> Result<(), CliError> {
    // Surfaces NotAPermutation / NotTopological before any file is touched.
    opsched_core::sched::working_set_trace(&model.graph, schedule)?;
    let doc = model.to_document(schedule);
    let mut text = serde_json::to_string_pretty(&doc).expect("document serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write via a sibling temp file and rename, so readers never observe a
/// half-written document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |source: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}
