//! JSON weight checkpoints. Parameter arrays are stored as base64 of their
//! little-endian `f64` bytes so a save/load round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::layer::{BatchNorm, Conv2d, Dense, Layer};
use super::model::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamArray {
    shape: Vec<usize>,
    data: String,
}

impl ParamArray {
    fn encode(shape: Vec<usize>, values: &[f64]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, path: &Path) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::corrupt(path, format!("bad base64: {e}")))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::corrupt(
                path,
                format!("array of shape {:?} holds {} bytes", self.shape, bytes.len()),
            ));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum LayerRecord {
    Conv2d {
        padding: usize,
        weight: ParamArray,
        bias: ParamArray,
    },
    Dense {
        weight: ParamArray,
        bias: ParamArray,
    },
    Relu,
    #[serde(rename = "maxpool2")]
    MaxPool2,
    #[serde(rename = "batchnorm")]
    BatchNorm {
        eps: f64,
        gamma: ParamArray,
        beta: ParamArray,
        running_mean: ParamArray,
        running_var: ParamArray,
    },
    GlobalAvgPool,
    Flatten,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    input_shape: Vec<usize>,
    num_classes: usize,
    canonized: bool,
    layers: Vec<LayerRecord>,
}

pub fn to_json(model: &Model) -> Result<String> {
    let layers = model
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Conv2d(c) => LayerRecord::Conv2d {
                padding: c.padding,
                weight: ParamArray::encode(
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    &c.weight,
                ),
                bias: ParamArray::encode(vec![c.out_channels], &c.bias),
            },
            Layer::Dense(d) => LayerRecord::Dense {
                weight: ParamArray::encode(vec![d.out_features, d.in_features], &d.weight),
                bias: ParamArray::encode(vec![d.out_features], &d.bias),
            },
            Layer::Relu => LayerRecord::Relu,
            Layer::MaxPool2 => LayerRecord::MaxPool2,
            Layer::BatchNorm(bn) => {
                let n = bn.gamma.len();
                LayerRecord::BatchNorm {
                    eps: bn.eps,
                    gamma: ParamArray::encode(vec![n], &bn.gamma),
                    beta: ParamArray::encode(vec![n], &bn.beta),
                    running_mean: ParamArray::encode(vec![n], &bn.running_mean),
                    running_var: ParamArray::encode(vec![n], &bn.running_var),
                }
            }
            Layer::GlobalAvgPool => LayerRecord::GlobalAvgPool,
            Layer::Flatten => LayerRecord::Flatten,
        })
        .collect();
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        input_shape: model.input_shape().to_vec(),
        num_classes: model.num_classes(),
        canonized: model.is_canonized(),
        layers,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str, path: &Path) -> Result<Model> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::corrupt(path, e.to_string()))?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::corrupt(
            path,
            format!("unsupported checkpoint version {}", file.format_version),
        ));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for rec in &file.layers {
        layers.push(match rec {
            LayerRecord::Conv2d { padding, weight, bias } => {
                let [out_ch, in_ch, k, k2] = weight.shape[..] else {
                    return Err(Error::corrupt(path, "conv2d weight must be rank 4"));
                };
                if k != k2 {
                    return Err(Error::corrupt(path, "conv2d kernel must be square"));
                }
                Layer::Conv2d(Conv2d {
                    in_channels: in_ch,
                    out_channels: out_ch,
                    kernel: k,
                    padding: *padding,
                    weight: weight.decode(path)?,
                    bias: bias.decode(path)?,
                })
            }
            LayerRecord::Dense { weight, bias } => {
                let [out_f, in_f] = weight.shape[..] else {
                    return Err(Error::corrupt(path, "dense weight must be rank 2"));
                };
                Layer::Dense(Dense {
                    in_features: in_f,
                    out_features: out_f,
                    weight: weight.decode(path)?,
                    bias: bias.decode(path)?,
                })
            }
            LayerRecord::Relu => Layer::Relu,
            LayerRecord::MaxPool2 => Layer::MaxPool2,
            LayerRecord::BatchNorm {
                eps,
                gamma,
                beta,
                running_mean,
                running_var,
            } => Layer::BatchNorm(BatchNorm {
                gamma: gamma.decode(path)?,
                beta: beta.decode(path)?,
                running_mean: running_mean.decode(path)?,
                running_var: running_var.decode(path)?,
                eps: *eps,
            }),
            LayerRecord::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerRecord::Flatten => Layer::Flatten,
        });
    }
    let mut model = Model::new(layers, file.input_shape, file.num_classes)
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    model.set_canonized(file.canonized);
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let text = to_json(model)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::micro_cnn(16, 16, 2, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save(&model, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn missing_and_corrupt_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.json");
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("nope.json"));
        std::fs::write(&path, "{\"format_version\": 99}").unwrap();
        assert!(matches!(load(&path), Err(Error::Corrupt { .. })));
    }
}
