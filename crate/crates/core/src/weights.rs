//! Loading neural-field parameters from disk.
//!
//! Text format (whitespace separated, `#` starts a comment):
//!
//! ```text
//! widths 2 8 2
//! activation tanh
//! W0 8 2
//! <8 rows of 2 numbers>
//! b0 8
//! <8 numbers>
//! W1 2 8
//! ...
//! ```
//!
//! Binary format: little-endian `f64`, for each layer `W_l` (row-major) followed
//! by `b_l`, with shapes taken from the declared widths.

use std::path::Path;

use crate::error::{Result, SlrError};
use crate::field::{Activation, NeuralFieldSpec};

pub fn parse_text(src: &str) -> Result<NeuralFieldSpec> {
    let mut tokens = src
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .peekable();
    let err = |m: String| SlrError::Config(format!("weights file: {m}"));

    let mut widths = Vec::new();
    let mut activation = None;
    let mut weights: Vec<Option<Vec<f64>>> = Vec::new();
    let mut biases: Vec<Option<Vec<f64>>> = Vec::new();

    let number = |tok: Option<&str>, what: &str| -> Result<f64> {
        let tok = tok.ok_or_else(|| err(format!("unexpected end of file reading {what}")))?;
        tok.parse::<f64>()
            .map_err(|_| err(format!("bad number {tok:?} in {what}")))
    };
    let count = |tok: Option<&str>, what: &str| -> Result<usize> {
        let tok = tok.ok_or_else(|| err(format!("unexpected end of file reading {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| err(format!("bad size {tok:?} in {what}")))
    };

    while let Some(tok) = tokens.next() {
        match tok {
            "widths" => {
                while let Some(next) = tokens.peek() {
                    match next.parse::<usize>() {
                        Ok(w) => {
                            widths.push(w);
                            tokens.next();
                        }
                        Err(_) => break,
                    }
                }
                let layers = widths.len().saturating_sub(1);
                weights = vec![None; layers];
                biases = vec![None; layers];
            }
            "activation" => {
                activation = Some(match tokens.next() {
                    Some("tanh") => Activation::Tanh,
                    Some("sigmoid") => Activation::Sigmoid,
                    other => return Err(err(format!("unsupported activation {other:?}"))),
                });
            }
            block if block.starts_with('W') || block.starts_with('b') => {
                let is_weight = block.starts_with('W');
                let layer: usize = block[1..]
                    .parse()
                    .map_err(|_| err(format!("bad block header {block:?}")))?;
                if layer >= weights.len() {
                    return Err(err(format!(
                        "layer {layer}: block {block} outside the {} declared layers",
                        weights.len()
                    )));
                }
                let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
                if is_weight {
                    let rows = count(tokens.next(), block)?;
                    let cols = count(tokens.next(), block)?;
                    if (rows, cols) != (fan_out, fan_in) {
                        return Err(err(format!(
                            "layer {layer}: weight shape {rows}x{cols} does not match widths ({fan_out}x{fan_in})"
                        )));
                    }
                    let vals = (0..rows * cols)
                        .map(|_| number(tokens.next(), block))
                        .collect::<Result<Vec<_>>>()?;
                    weights[layer] = Some(vals);
                } else {
                    let len = count(tokens.next(), block)?;
                    if len != fan_out {
                        return Err(err(format!(
                            "layer {layer}: bias length {len} does not match width {fan_out}"
                        )));
                    }
                    let vals = (0..len)
                        .map(|_| number(tokens.next(), block))
                        .collect::<Result<Vec<_>>>()?;
                    biases[layer] = Some(vals);
                }
            }
            other => return Err(err(format!("unexpected token {other:?}"))),
        }
    }

    if widths.len() < 2 {
        return Err(err("missing `widths` line".into()));
    }
    let activation = activation.ok_or_else(|| err("missing `activation` line".into()))?;
    let collect = |blocks: Vec<Option<Vec<f64>>>, name: char| -> Result<Vec<Vec<f64>>> {
        blocks
            .into_iter()
            .enumerate()
            .map(|(l, b)| b.ok_or_else(|| err(format!("layer {l}: missing {name}{l} block"))))
            .collect()
    };
    let spec = NeuralFieldSpec {
        widths,
        activation,
        weights: collect(weights, 'W')?,
        biases: collect(biases, 'b')?,
        depends_on_initial: false,
    };
    Ok(spec)
}

/// Text form accepted by [`parse_text`]; values use shortest round-trip formatting.
pub fn to_text(spec: &NeuralFieldSpec) -> String {
    let mut out = String::new();
    let ws: Vec<String> = spec.widths.iter().map(usize::to_string).collect();
    out.push_str(&format!("widths {}\n", ws.join(" ")));
    let act = match spec.activation {
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
    };
    out.push_str(&format!("activation {act}\n"));
    for l in 0..spec.layers() {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        out.push_str(&format!("W{l} {fan_out} {fan_in}\n"));
        for row in spec.weights[l].chunks(fan_in) {
            let r: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&r.join(" "));
            out.push('\n');
        }
        out.push_str(&format!("b{l} {fan_out}\n"));
        let b: Vec<String> = spec.biases[l].iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&b.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_binary(
    bytes: &[u8],
    widths: &[usize],
    activation: Activation,
) -> Result<NeuralFieldSpec> {
    if bytes.len() % 8 != 0 {
        return Err(SlrError::Config(format!(
            "weights file: binary length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut pos = 0;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let need = fan_out * fan_in + fan_out;
        if pos + need > values.len() {
            return Err(SlrError::Config(format!(
                "weights file: layer {l}: needs {need} values but only {} remain",
                values.len() - pos
            )));
        }
        weights.push(values[pos..pos + fan_out * fan_in].to_vec());
        pos += fan_out * fan_in;
        biases.push(values[pos..pos + fan_out].to_vec());
        pos += fan_out;
    }
    if pos != values.len() {
        return Err(SlrError::Config(format!(
            "weights file: {} trailing values after the last layer",
            values.len() - pos
        )));
    }
    Ok(NeuralFieldSpec {
        widths: widths.to_vec(),
        activation,
        weights,
        biases,
        depends_on_initial: false,
    })
}

pub fn to_binary(spec: &NeuralFieldSpec) -> Vec<u8> {
    spec.weights
        .iter()
        .zip(&spec.biases)
        .flat_map(|(w, b)| w.iter().chain(b))
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

pub fn load_text(path: &Path) -> Result<NeuralFieldSpec> {
    parse_text(&std::fs::read_to_string(path)?)
}

pub fn load_binary(
    path: &Path,
    widths: &[usize],
    activation: Activation,
) -> Result<NeuralFieldSpec> {
    parse_binary(&std::fs::read(path)?, widths, activation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let spec = NeuralFieldSpec::seeded(&[2, 8, 2], Activation::Tanh, 1.0, 4);
        let back = parse_text(&to_text(&spec)).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn binary_round_trip() {
        let spec = NeuralFieldSpec::seeded(&[3, 4, 3], Activation::Sigmoid, 1.0, 8);
        let back = parse_binary(&to_binary(&spec), &spec.widths, spec.activation).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn wrong_shape_names_layer() {
        let src = "widths 2 3 2\nactivation tanh\nW0 3 2\n1 0\n0 1\n1 1\nb0 3\n0 0 0\nW1 3 2\n";
        let e = parse_text(src).unwrap_err().to_string();
        assert!(e.contains("layer 1"), "{e}");
    }

    #[test]
    fn short_binary_names_layer() {
        let spec = NeuralFieldSpec::seeded(&[2, 4, 2], Activation::Tanh, 1.0, 1);
        let mut bytes = to_binary(&spec);
        bytes.truncate(bytes.len() - 8);
        let e = parse_binary(&bytes, &spec.widths, spec.activation)
            .unwrap_err()
            .to_string();
        assert!(e.contains("layer 1"), "{e}");
    }

    #[test]
    fn comments_are_ignored() {
        let src =
            "# net\nwidths 2 2 # single layer\nactivation tanh\nW0 2 2\n1 0\n0 1\nb0 2\n0 0\n";
        let spec = parse_text(src).unwrap();
        assert_eq!(spec.weights[0], vec![1.0, 0.0, 0.0, 1.0]);
    }
}
