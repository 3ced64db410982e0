//! Checkpoint container: a plain-text manifest (format version, architecture,
//! tensor names and shapes) followed by every tensor's values as row-major
//! little-endian f64. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::Engine;
use crate::nn::{build_model, Model, ModelConfig, ModelVariant};
use crate::pqc::QuantumLayerShape;

const MAGIC: &str = "hqnn-checkpoint v1";

pub fn save_checkpoint(model: &Model, seed: u64, path: &Path) -> Result<()> {
    let mut manifest = String::new();
    manifest.push_str(MAGIC);
    manifest.push('\n');
    let c = &model.config;
    manifest.push_str(&format!("variant {}\n", c.variant.name()));
    manifest.push_str(&format!("input_hw {},{}\n", c.input_hw.0, c.input_hw.1));
    manifest.push_str(&format!("classes {}\n", c.classes));
    manifest.push_str(&format!("conv_channels {},{}\n", c.conv_channels.0, c.conv_channels.1));
    manifest.push_str(&format!(
        "quantum {},{},{}\n",
        c.quantum.qubits, c.quantum.depth, c.quantum.circuits
    ));
    manifest.push_str(&format!("stride {}\n", c.stride));
    manifest.push_str(&format!("seed {seed}\n"));

    let tensors = model.tensors();
    for t in &tensors {
        let dims: Vec<String> = t.value.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {} {}\n", t.name, dims.join(",")));
    }
    manifest.push_str("payload f64le\n");

    let mut bytes = manifest.into_bytes();
    for t in &tensors {
        for v in t.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn parse_pair(value: &str, line: usize) -> Result<(usize, usize)> {
    let mut it = value.split(',').map(|s| s.parse::<usize>());
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::Format {
            offset: line as u64,
            message: format!("expected two integers, got '{value}'"),
        }),
    }
}

/// Restores a model (architecture + every tensor) from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    // Manifest ends at the line after "payload f64le".
    let marker = b"payload f64le\n";
    let payload_start = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
        .ok_or_else(|| Error::Checkpoint(format!("{}: no payload marker", path.display())))?;
    let manifest = std::str::from_utf8(&bytes[..payload_start])
        .map_err(|_| Error::Checkpoint(format!("{}: manifest is not UTF-8", path.display())))?;
    let payload = &bytes[payload_start..];

    let mut lines = manifest.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
    if first != MAGIC {
        return Err(Error::Checkpoint(format!(
            "unsupported container '{first}', expected '{MAGIC}'"
        )));
    }

    let mut variant = None;
    let mut input_hw = (28, 28);
    let mut classes = 10;
    let mut conv_channels = (16, 32);
    let mut quantum = QuantumLayerShape { qubits: 5, depth: 3, circuits: 4 };
    let mut stride = 1;
    let mut seed = 0u64;
    let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();

    for (lineno, line) in lines {
        let Some((key, value)) = line.split_once(' ') else {
            if line == "payload f64le" {
                break;
            }
            return Err(Error::Format {
                offset: lineno as u64,
                message: format!("malformed manifest line '{line}'"),
            });
        };
        match key {
            "variant" => variant = Some(ModelVariant::parse(value)?),
            "input_hw" => input_hw = parse_pair(value, lineno)?,
            "classes" => classes = value.parse().map_err(|_| Error::Format {
                offset: lineno as u64,
                message: format!("bad class count '{value}'"),
            })?,
            "conv_channels" => conv_channels = parse_pair(value, lineno)?,
            "quantum" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Format {
                        offset: lineno as u64,
                        message: format!("bad quantum shape '{value}'"),
                    })?;
                if parts.len() != 3 {
                    return Err(Error::Format {
                        offset: lineno as u64,
                        message: format!("quantum shape needs q,i,c, got '{value}'"),
                    });
                }
                quantum = QuantumLayerShape { qubits: parts[0], depth: parts[1], circuits: parts[2] };
            }
            "stride" => stride = value.parse().map_err(|_| Error::Format {
                offset: lineno as u64,
                message: format!("bad stride '{value}'"),
            })?,
            "seed" => seed = value.parse().map_err(|_| Error::Format {
                offset: lineno as u64,
                message: format!("bad seed '{value}'"),
            })?,
            "tensor" => {
                let Some((name, dims)) = value.split_once(' ') else {
                    return Err(Error::Format {
                        offset: lineno as u64,
                        message: format!("malformed tensor line '{line}'"),
                    });
                };
                let shape: Vec<usize> = if dims.is_empty() {
                    Vec::new()
                } else {
                    dims.split(',')
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Format {
                            offset: lineno as u64,
                            message: format!("bad tensor shape '{dims}'"),
                        })?
                };
                tensors.push((name.to_string(), shape));
            }
            "payload" => break,
            other => {
                return Err(Error::Checkpoint(format!("unknown manifest key '{other}'")))
            }
        }
    }

    let variant =
        variant.ok_or_else(|| Error::Checkpoint("manifest does not name a variant".into()))?;
    let config = ModelConfig {
        variant,
        input_hw,
        classes,
        conv_channels,
        quantum,
        features: None,
        stride,
    };
    let mut model = build_model(&config, seed, Engine::Adjoint)?;

    // The stored tensor list must exactly match the rebuilt model.
    let expected: Vec<(String, Vec<usize>)> = model
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.value.shape().to_vec()))
        .collect();
    if expected != tensors {
        return Err(Error::Checkpoint(format!(
            "tensor list mismatch: checkpoint has {:?}, architecture needs {:?}",
            tensors.iter().map(|(n, _)| n).collect::<Vec<_>>(),
            expected.iter().map(|(n, _)| n).collect::<Vec<_>>()
        )));
    }

    let total: usize = tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(Error::Format {
            offset: payload_start as u64,
            message: format!(
                "payload holds {} bytes, tensor list needs {}",
                payload.len(),
                total * 8
            ),
        });
    }

    let mut cursor = 0;
    for (name, _) in &tensors {
        let tensor = model
            .tensor_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("model has no tensor '{name}'")))?;
        for v in tensor.data_mut() {
            let chunk: [u8; 8] = payload[cursor..cursor + 8].try_into().unwrap();
            *v = f64::from_le_bytes(chunk);
            cursor += 8;
        }
    }
    Ok(model)
}
