//! JSON model files.
//!
//! ```json
//! {"format_version": 1, "input_shape": [28, 28, 1], "num_classes": 10,
//!  "layers": [{"kind": "conv2d", "hyper": {"stride": 1},
//!              "weights": [[[[...]]]], "bias": [...]},
//!             {"kind": "relu"}, ...]}
//! ```
//!
//! Weights are nested arrays in the tensor's row-major shape. Values are
//! written with the shortest decimal that reads back to the same `f32`
//! (at most 9 significant digits), so save/load is lossless.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, Model};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u64 = 1;

fn number(v: f32) -> Value {
    let shortest: f64 = v.to_string().parse().expect("float display parses");
    json!(shortest)
}

fn nest(data: &[f32], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => Value::Array(data.iter().map(|&v| number(v)).collect()),
        [n, rest @ ..] => {
            let stride = data.len() / n;
            Value::Array(data.chunks(stride).map(|chunk| nest(chunk, rest)).collect())
        }
    }
}

fn unnest(v: &Value, shape: &mut Vec<usize>, depth: usize, out: &mut Vec<f32>) -> Result<(), String> {
    match v {
        Value::Array(items) => {
            if shape.len() == depth {
                shape.push(items.len());
            } else if shape[depth] != items.len() {
                return Err(format!("ragged array at depth {depth}"));
            }
            for item in items {
                unnest(item, shape, depth + 1, out)?;
            }
            Ok(())
        }
        Value::Number(n) => {
            if shape.len() != depth {
                return Err(format!("scalar at depth {depth} in a {}-d array", shape.len()));
            }
            let f = n.as_f64().ok_or("number out of range")? as f32;
            if !f.is_finite() {
                return Err("non-finite number".into());
            }
            out.push(f);
            Ok(())
        }
        other => Err(format!("expected a number or array, found {other}")),
    }
}

fn tensor_from(v: Option<&Value>, name: &str) -> Result<Tensor<f32>, String> {
    let v = v.ok_or_else(|| format!("missing {name}"))?;
    let mut shape = Vec::new();
    let mut data = Vec::new();
    unnest(v, &mut shape, 0, &mut data).map_err(|e| format!("{name}: {e}"))?;
    Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))
}

fn layer_to_json(layer: &Layer<f32>) -> Value {
    let mut obj = Map::new();
    obj.insert("kind".into(), json!(layer.kind().name()));
    match layer {
        Layer::Conv2d { stride, .. } => {
            obj.insert("hyper".into(), json!({ "stride": stride }));
        }
        Layer::MaxPool2d { size, stride } => {
            obj.insert("hyper".into(), json!({ "size": size, "stride": stride }));
        }
        _ => {}
    }
    if let Some((w, b)) = layer.params() {
        obj.insert("weights".into(), nest(w.data(), w.shape()));
        obj.insert("bias".into(), nest(b.data(), b.shape()));
    }
    Value::Object(obj)
}

fn hyper_usize(obj: &Map<String, Value>, key: &str, default: Option<usize>) -> Result<usize, String> {
    match obj.get("hyper").and_then(|h| h.get(key)) {
        Some(v) => v
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| format!("hyper.{key} must be a non-negative integer")),
        None => default.ok_or_else(|| format!("missing hyper.{key}")),
    }
}

fn layer_from_json(v: &Value) -> Result<Layer<f32>, String> {
    let obj = v.as_object().ok_or("layer must be an object")?;
    let kind: LayerKind =
        serde_json::from_value(obj.get("kind").cloned().ok_or("missing kind")?).map_err(|e| format!("kind: {e}"))?;
    Ok(match kind {
        LayerKind::Dense => Layer::Dense {
            weights: tensor_from(obj.get("weights"), "weights")?,
            bias: tensor_from(obj.get("bias"), "bias")?,
        },
        LayerKind::Conv2d => Layer::Conv2d {
            weights: tensor_from(obj.get("weights"), "weights")?,
            bias: tensor_from(obj.get("bias"), "bias")?,
            stride: hyper_usize(obj, "stride", Some(1))?,
        },
        LayerKind::Relu => Layer::Relu,
        LayerKind::Maxpool2d => {
            let size = hyper_usize(obj, "size", None)?;
            Layer::MaxPool2d {
                size,
                stride: hyper_usize(obj, "stride", Some(size))?,
            }
        }
        LayerKind::Flatten => Layer::Flatten,
        LayerKind::Softmax => Layer::Softmax,
    })
}

pub fn model_to_json(model: &Model<f32>) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "input_shape": model.input_shape(),
        "num_classes": model.num_classes(),
        "layers": model.layers().iter().map(layer_to_json).collect::<Vec<_>>(),
    })
}

pub fn model_from_json(v: &Value) -> Result<Model<f32>> {
    let version = v.get("format_version").and_then(Value::as_u64);
    if version != Some(FORMAT_VERSION) {
        return Err(Error::model(
            None,
            format!("unsupported format_version {version:?}, expected {FORMAT_VERSION}"),
        ));
    }
    let input_shape: Vec<usize> = serde_json::from_value(v.get("input_shape").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::model(None, format!("input_shape: {e}")))?;
    let layers = v
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::model(None, "missing layers array"))?
        .iter()
        .enumerate()
        .map(|(i, l)| layer_from_json(l).map_err(|msg| Error::model(Some(i), msg)))
        .collect::<Result<Vec<_>>>()?;
    let model = Model::new(input_shape, layers)?;
    if let Some(n) = v.get("num_classes") {
        if n.as_u64() != Some(model.num_classes() as u64) {
            return Err(Error::model(
                Some(model.layers().len() - 1),
                format!(
                    "num_classes {n} disagrees with the final layer width {}",
                    model.num_classes()
                ),
            ));
        }
    }
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&model_to_json(model))?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    model_from_json(&serde_json::from_str(&text)?)
}
