//! Network specs for the six forecasting frameworks.
//!
//! Every framework is a stack of identical convolution blocks
//! (`conv -> batchnorm -> relu -> avgpool`) between an image input and a
//! fully connected regression head. [`ConvStack`] captures that family; the
//! `build_*` functions return the published configurations.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LayerSpec, NetworkSpec, NnError, Normalization, Padding};
use crate::tensor::Shape4;

pub use crate::nn::activation_shapes;

/// Buildings in the reference integrated energy system.
pub const NUM_BUILDINGS: usize = 39;
/// Half-hour samples in one day, the input window length.
pub const SAMPLES_PER_DAY: usize = 48;

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("multi-input model takes 2 or 3 input variables, got {0}")]
    BadChannelCount(usize),
    #[error(transparent)]
    Spec(#[from] NnError),
    #[error("layer table line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum FrameworkId {
    Cnn1,
    Cnn2,
    Cnn3,
    Cnn4,
    Cnn5,
    Cnn6,
}

impl FrameworkId {
    pub const ALL: [FrameworkId; 6] = [
        FrameworkId::Cnn1,
        FrameworkId::Cnn2,
        FrameworkId::Cnn3,
        FrameworkId::Cnn4,
        FrameworkId::Cnn5,
        FrameworkId::Cnn6,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FrameworkId::Cnn1 => "CNN_1",
            FrameworkId::Cnn2 => "CNN_2",
            FrameworkId::Cnn3 => "CNN_3",
            FrameworkId::Cnn4 => "CNN_4",
            FrameworkId::Cnn5 => "CNN_5",
            FrameworkId::Cnn6 => "CNN_6",
        }
    }
}

impl From<FrameworkId> for &'static str {
    fn from(f: FrameworkId) -> Self {
        f.label()
    }
}

impl TryFrom<String> for FrameworkId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for FrameworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FrameworkId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "cnn1" => Ok(FrameworkId::Cnn1),
            "cnn2" => Ok(FrameworkId::Cnn2),
            "cnn3" => Ok(FrameworkId::Cnn3),
            "cnn4" => Ok(FrameworkId::Cnn4),
            "cnn5" => Ok(FrameworkId::Cnn5),
            "cnn6" => Ok(FrameworkId::Cnn6),
            _ => Err(format!("unknown framework '{s}'")),
        }
    }
}

/// A family of `conv -> batchnorm -> relu -> avgpool` stacks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStack {
    pub input: (usize, usize, usize),
    pub normalization: Normalization,
    pub blocks: usize,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub pool: (usize, usize),
    pub pool_stride: (usize, usize),
    pub outputs: usize,
}

impl ConvStack {
    /// Single series in, next half-hour out: three blocks of 136 filters of
    /// length 146, subsampling by 4 after each block.
    pub fn cnn1() -> Self {
        Self {
            input: (SAMPLES_PER_DAY, 1, 1),
            normalization: Normalization::ZeroCenter,
            blocks: 3,
            filters: 136,
            kernel: (146, 1),
            pool: (1, 1),
            pool_stride: (4, 4),
            outputs: 1,
        }
    }

    /// Two or three input variables side by side along the width axis.
    pub fn cnn2(variables: usize) -> Result<Self, ArchError> {
        if !(2..=3).contains(&variables) {
            return Err(ArchError::BadChannelCount(variables));
        }
        Ok(Self {
            input: (SAMPLES_PER_DAY, variables, 1),
            blocks: 3,
            filters: 30,
            kernel: (100, 1),
            pool_stride: (1, 1),
            ..Self::cnn1()
        })
    }

    /// Joint model: every building along the width, every energy vector as
    /// a channel, one output per (vector, building).
    pub fn cnn4(buildings: usize) -> Self {
        Self {
            input: (SAMPLES_PER_DAY, buildings, 3),
            blocks: 2,
            pool_stride: (4, 1),
            outputs: 3 * buildings,
            ..Self::cnn1()
        }
    }

    /// One model per energy vector covering every building.
    pub fn cnn5(buildings: usize) -> Self {
        Self {
            input: (SAMPLES_PER_DAY, buildings, 1),
            outputs: buildings,
            ..Self::cnn4(buildings)
        }
    }

    /// Local model trained on each federated node.
    pub fn cnn6_local() -> Self {
        Self {
            blocks: 1,
            ..Self::cnn1()
        }
    }

    /// Single-building model with extra exogenous columns (temperature,
    /// solar). Pooling only subsamples the time axis so the extra columns
    /// survive.
    pub fn cnn1_with_inputs(width: usize) -> Self {
        let mut s = Self::cnn1();
        s.input.1 = width;
        if width > 1 {
            s.pool_stride = (4, 1);
        }
        s
    }

    pub fn with_filters(mut self, filters: usize) -> Self {
        self.filters = filters;
        self
    }

    pub fn with_kernel(mut self, kernel_h: usize) -> Self {
        self.kernel = (kernel_h, 1);
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn build(&self) -> Result<NetworkSpec, ArchError> {
        let (h, w, c) = self.input;
        let mut layers = vec![LayerSpec::ImageInput {
            h,
            w,
            c,
            normalization: self.normalization,
        }];
        for _ in 0..self.blocks {
            layers.push(LayerSpec::Conv2D {
                filters: self.filters,
                kernel: self.kernel,
                stride: (1, 1),
                padding: Padding::Same,
            });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::ReLU);
            layers.push(LayerSpec::AvgPool {
                pool: self.pool,
                stride: self.pool_stride,
            });
        }
        layers.push(LayerSpec::FullyConnected {
            out_units: self.outputs,
        });
        layers.push(LayerSpec::RegressionOutput);
        Ok(NetworkSpec::new(layers)?)
    }
}

pub fn build_cnn1() -> NetworkSpec {
    ConvStack::cnn1().build().expect("reference architecture is valid")
}

pub fn build_cnn2(num_input_channels: usize) -> Result<NetworkSpec, ArchError> {
    ConvStack::cnn2(num_input_channels)?.build()
}

pub fn build_cnn4() -> NetworkSpec {
    ConvStack::cnn4(NUM_BUILDINGS)
        .build()
        .expect("reference architecture is valid")
}

pub fn build_cnn5() -> NetworkSpec {
    ConvStack::cnn5(NUM_BUILDINGS)
        .build()
        .expect("reference architecture is valid")
}

pub fn build_cnn6_local() -> NetworkSpec {
    ConvStack::cnn6_local()
        .build()
        .expect("reference architecture is valid")
}

fn dims(s: Shape4) -> String {
    format!("{}x{}x{}x{}", s.h, s.w, s.c, s.n)
}

fn describe(layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::ImageInput {
            h,
            w,
            c,
            normalization,
        } => {
            let norm = match normalization {
                Normalization::ZeroCenter => "zerocenter",
                Normalization::None => "none",
            };
            format!("input {h}x{w}x{c} {norm}")
        }
        LayerSpec::Conv2D {
            filters,
            kernel,
            stride,
            padding,
        } => {
            let pad = match padding {
                Padding::Same => "same",
                Padding::None => "none",
            };
            format!(
                "conv {filters} {}x{} stride {}x{} {pad}",
                kernel.0, kernel.1, stride.0, stride.1
            )
        }
        LayerSpec::AvgPool { pool, stride } => format!(
            "avgpool {}x{} stride {}x{}",
            pool.0, pool.1, stride.0, stride.1
        ),
        LayerSpec::FullyConnected { out_units } => format!("fc {out_units}"),
        other => other.kind_name().to_string(),
    }
}

/// Renders a spec as a layer table: index, layer, activations and learnable
/// shapes. [`parse_layer_table`] reads it back.
pub fn layer_table(spec: &NetworkSpec) -> String {
    let shapes = activation_shapes(spec).expect("valid spec");
    let mut out = String::from("# layer | activations | learnables\n");
    for (i, layer) in spec.layers().iter().enumerate() {
        let prev = if i == 0 { shapes[0] } else { shapes[i - 1] };
        let learn = match layer {
            LayerSpec::Conv2D {
                filters, kernel, ..
            } => format!(
                "weights {}x{}x{}x{}, bias 1x1x{filters}",
                kernel.0, kernel.1, prev.c, filters
            ),
            LayerSpec::BatchNorm => format!("offset 1x1x{0}, scale 1x1x{0}", prev.c),
            LayerSpec::FullyConnected { out_units } => format!(
                "weights {out_units}x{}, bias {out_units}x1",
                prev.sample_len()
            ),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{:>2} {:<36} | {:<12} | {}",
            i + 1,
            describe(layer),
            dims(shapes[i]),
            learn
        );
    }
    out
}

fn parse_pair(tok: Option<&str>, line: usize) -> Result<(usize, usize), ArchError> {
    let err = || ArchError::Parse {
        line,
        msg: format!("expected AxB, got {tok:?}"),
    };
    let tok = tok.ok_or_else(err)?;
    let (a, b) = tok.split_once('x').ok_or_else(err)?;
    Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
}

pub fn parse_layer_table(text: &str) -> Result<NetworkSpec, ArchError> {
    let mut layers = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('|').next().unwrap_or("").trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut toks = body.split_whitespace();
        let _index = toks.next();
        let kind = toks.next().ok_or(ArchError::Parse {
            line,
            msg: "missing layer kind".into(),
        })?;
        let bad = |msg: &str| ArchError::Parse {
            line,
            msg: msg.to_string(),
        };
        let layer = match kind {
            "input" => {
                let dims_tok = toks.next().ok_or_else(|| bad("missing input dims"))?;
                let parts: Vec<usize> = dims_tok
                    .split('x')
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad input dims"))?;
                if parts.len() != 3 {
                    return Err(bad("input dims must be HxWxC"));
                }
                let normalization = match toks.next() {
                    Some("zerocenter") => Normalization::ZeroCenter,
                    Some("none") | None => Normalization::None,
                    Some(other) => return Err(bad(&format!("unknown normalization {other}"))),
                };
                LayerSpec::ImageInput {
                    h: parts[0],
                    w: parts[1],
                    c: parts[2],
                    normalization,
                }
            }
            "conv" => {
                let filters = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad("bad filter count"))?;
                let kernel = parse_pair(toks.next(), line)?;
                if toks.next() != Some("stride") {
                    return Err(bad("expected 'stride'"));
                }
                let stride = parse_pair(toks.next(), line)?;
                let padding = match toks.next() {
                    Some("same") => Padding::Same,
                    Some("none") => Padding::None,
                    _ => return Err(bad("expected padding same|none")),
                };
                LayerSpec::Conv2D {
                    filters,
                    kernel,
                    stride,
                    padding,
                }
            }
            "batchnorm" => LayerSpec::BatchNorm,
            "relu" => LayerSpec::ReLU,
            "avgpool" => {
                let pool = parse_pair(toks.next(), line)?;
                if toks.next() != Some("stride") {
                    return Err(bad("expected 'stride'"));
                }
                let stride = parse_pair(toks.next(), line)?;
                LayerSpec::AvgPool { pool, stride }
            }
            "fc" => LayerSpec::FullyConnected {
                out_units: toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad("bad unit count"))?,
            },
            "regression" => LayerSpec::RegressionOutput,
            other => return Err(bad(&format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    Ok(NetworkSpec::new(layers)?)
}
