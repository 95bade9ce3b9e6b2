//! Executes a fine-tuned transformer with a two-logit head from an ONNX file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use tract_onnx::pb;
use tract_onnx::prelude::*;

use super::{
    toxic_probability, Classifier, ClassifierConfig, ClassifyError, TokenizerSpec,
    WordPieceTokenizer,
};

const QUANTIZED_OPS: &[&str] = &[
    "QuantizeLinear",
    "DequantizeLinear",
    "DynamicQuantizeLinear",
    "MatMulInteger",
    "ConvInteger",
    "QLinearMatMul",
    "QLinearConv",
    "QLinearAdd",
    "QLinearMul",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputRole {
    Ids,
    Mask,
    TokenType,
}

#[derive(Debug, Clone)]
struct GraphInput {
    name: String,
    role: InputRole,
    int32: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInfo {
    pub path: PathBuf,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub quantized: bool,
    pub num_labels: usize,
    /// Fixed batch size baked into the graph, if any.
    pub fixed_batch: Option<usize>,
    /// Fixed sequence length baked into the graph, if any.
    pub fixed_sequence: Option<usize>,
}

pub struct OnnxClassifier {
    plan: Arc<TypedRunnableModel>,
    inputs: Vec<GraphInput>,
    tokenizer: WordPieceTokenizer,
    max_tokens: usize,
    info: ModelInfo,
}

/// Loads a graph plus its tokenizer sidecar and checks for a binary head.
pub fn load_model(
    model_path: &Path,
    tokenizer_spec_path: &Path,
    config: &ClassifierConfig,
) -> Result<OnnxClassifier, ClassifyError> {
    config.validate()?;
    let tokenizer = TokenizerSpec::from_sidecar(tokenizer_spec_path)?.load()?;
    OnnxClassifier::load(model_path, tokenizer, config.max_tokens)
}

fn role_of(name: &str) -> Option<InputRole> {
    let lower = name.to_ascii_lowercase();
    if lower.contains("mask") {
        Some(InputRole::Mask)
    } else if lower.contains("token_type") || lower.contains("segment") {
        Some(InputRole::TokenType)
    } else if lower.contains("ids") || lower.contains("input") {
        Some(InputRole::Ids)
    } else {
        None
    }
}

fn dims(value: &pb::ValueInfoProto) -> Vec<Option<usize>> {
    let Some(pb::type_proto::Value::TensorType(t)) =
        value.r#type.as_ref().and_then(|t| t.value.as_ref())
    else {
        return Vec::new();
    };
    let Some(shape) = &t.shape else {
        return Vec::new();
    };
    shape
        .dim
        .iter()
        .map(|d| match d.value {
            Some(pb::tensor_shape_proto::dimension::Value::DimValue(v)) if v > 0 => {
                Some(v as usize)
            }
            _ => None,
        })
        .collect()
}

fn elem_type(value: &pb::ValueInfoProto) -> Option<i32> {
    match value.r#type.as_ref().and_then(|t| t.value.as_ref()) {
        Some(pb::type_proto::Value::TensorType(t)) => Some(t.elem_type),
        _ => None,
    }
}

impl OnnxClassifier {
    pub fn load(
        model_path: &Path,
        tokenizer: WordPieceTokenizer,
        max_tokens: usize,
    ) -> Result<Self, ClassifyError> {
        let load_err = |reason: String| ClassifyError::Load {
            path: model_path.to_path_buf(),
            reason,
        };
        if !model_path.is_file() {
            return Err(load_err("model file not found".into()));
        }
        let onnx = tract_onnx::onnx();
        let proto = onnx
            .proto_model_for_path(model_path)
            .map_err(|e| load_err(format!("{e:#}")))?;
        let graph = proto
            .graph
            .as_ref()
            .ok_or_else(|| load_err("file contains no graph".into()))?;
        let quantized = graph
            .node
            .iter()
            .any(|n| QUANTIZED_OPS.contains(&n.op_type.as_str()));
        let initializers: std::collections::HashSet<&str> =
            graph.initializer.iter().map(|t| t.name.as_str()).collect();
        let graph_inputs: Vec<&pb::ValueInfoProto> = graph
            .input
            .iter()
            .filter(|i| !initializers.contains(i.name.as_str()))
            .collect();

        let mut inputs = Vec::new();
        let (mut fixed_batch, mut fixed_sequence) = (None, None);
        for input in &graph_inputs {
            let role = role_of(&input.name)
                .ok_or_else(|| load_err(format!("unsupported graph input `{}`", input.name)))?;
            let shape = dims(input);
            if shape.len() != 2 {
                return Err(load_err(format!(
                    "input `{}` must be rank 2 [batch, sequence]",
                    input.name
                )));
            }
            fixed_batch = fixed_batch.or(shape[0]);
            fixed_sequence = fixed_sequence.or(shape[1]);
            inputs.push(GraphInput {
                name: input.name.clone(),
                role,
                int32: elem_type(input) == Some(pb::tensor_proto::DataType::Int32 as i32),
            });
        }
        if !inputs.iter().any(|i| i.role == InputRole::Ids) {
            return Err(load_err("graph has no token-id input".into()));
        }
        let output = graph
            .output
            .first()
            .ok_or_else(|| load_err("graph has no outputs".into()))?;
        let output_names = graph.output.iter().map(|o| o.name.clone()).collect();
        let input_names = inputs.iter().map(|i| i.name.clone()).collect();

        let mut model = onnx
            .model_for_proto_model(&proto)
            .map_err(|e| load_err(format!("{e:#}")))?;
        let batch_dim: TDim = match fixed_batch {
            Some(b) => b.to_dim(),
            None => model.symbols.sym("batch").into(),
        };
        let seq_dim: TDim = match fixed_sequence {
            Some(s) => s.to_dim(),
            None => model.symbols.sym("sequence").into(),
        };
        for (ix, input) in inputs.iter().enumerate() {
            let dt = if input.int32 {
                i32::datum_type()
            } else {
                i64::datum_type()
            };
            model
                .set_input_fact(
                    ix,
                    InferenceFact::dt_shape(dt, tvec!(batch_dim.clone(), seq_dim.clone())),
                )
                .map_err(|e| load_err(format!("{e:#}")))?;
        }
        let typed = model.into_typed().map_err(|e| load_err(format!("{e:#}")))?;
        let out_fact = typed
            .output_fact(0)
            .map_err(|e| load_err(format!("{e:#}")))?;
        let num_labels = out_fact
            .shape
            .last()
            .and_then(|d| d.to_i64().ok())
            .map(|v| v as usize)
            .or_else(|| dims(output).last().copied().flatten())
            .ok_or_else(|| load_err("output width is not static".into()))?;
        if num_labels != 2 {
            return Err(ClassifyError::NotBinaryHead(num_labels));
        }
        let plan = typed
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| load_err(format!("{e:#}")))?;

        let max_tokens = fixed_sequence.map_or(max_tokens, |s| max_tokens.min(s));
        Ok(Self {
            plan,
            inputs,
            tokenizer,
            max_tokens,
            info: ModelInfo {
                path: model_path.to_path_buf(),
                input_names,
                output_names,
                quantized,
                num_labels,
                fixed_batch,
                fixed_sequence,
            },
        })
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn run_rows(&self, rows: &[Vec<u32>]) -> Result<Vec<f64>, ClassifyError> {
        let width = match self.info.fixed_sequence {
            Some(s) => s,
            None => rows.iter().map(Vec::len).max().unwrap_or(0),
        };
        let height = self.info.fixed_batch.unwrap_or(rows.len()).max(rows.len());
        let pad = self.tokenizer.special().pad as i64;
        let mut ids = vec![pad; height * width];
        let mut mask = vec![0i64; height * width];
        for (r, row) in rows.iter().enumerate() {
            for (c, &id) in row.iter().enumerate() {
                ids[r * width + c] = id as i64;
                mask[r * width + c] = 1;
            }
        }
        let tensor = |data: Vec<i64>, int32: bool| -> Result<TValue, ClassifyError> {
            let t = if int32 {
                let narrowed: Vec<i32> = data.into_iter().map(|v| v as i32).collect();
                tract_ndarray::Array2::from_shape_vec((height, width), narrowed).map(Tensor::from)
            } else {
                tract_ndarray::Array2::from_shape_vec((height, width), data).map(Tensor::from)
            };
            t.map(TValue::from)
                .map_err(|e| ClassifyError::Execution(e.to_string()))
        };
        let feeds = self
            .inputs
            .iter()
            .map(|input| match input.role {
                InputRole::Ids => tensor(ids.clone(), input.int32),
                InputRole::Mask => tensor(mask.clone(), input.int32),
                InputRole::TokenType => tensor(vec![0; height * width], input.int32),
            })
            .collect::<Result<TVec<_>, _>>()?;
        let outputs = self
            .plan
            .run(feeds)
            .map_err(|e| ClassifyError::Execution(format!("{e:#}")))?;
        let logits = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| ClassifyError::Execution(format!("{e:#}")))?;
        let logits = logits
            .into_dimensionality::<tract_ndarray::Ix2>()
            .map_err(|e| ClassifyError::Execution(e.to_string()))?;
        if logits.ncols() != 2 || logits.nrows() < rows.len() {
            return Err(ClassifyError::Execution(format!(
                "unexpected output shape {:?}",
                logits.shape()
            )));
        }
        Ok((0..rows.len())
            .map(|r| toxic_probability(logits[(r, 0)], logits[(r, 1)]))
            .collect())
    }
}

impl Classifier for OnnxClassifier {
    fn name(&self) -> &str {
        "onnx"
    }

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>, ClassifyError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let rows = texts
            .iter()
            .map(|t| self.tokenizer.tokenize(t, self.max_tokens))
            .collect::<Result<Vec<_>, _>>()?;
        let step = self.info.fixed_batch.unwrap_or(rows.len());
        let mut scores = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(step) {
            scores.extend(self.run_rows(chunk)?);
        }
        Ok(scores)
    }

    fn tokenizer(&self) -> Option<&WordPieceTokenizer> {
        Some(&self.tokenizer)
    }
}
