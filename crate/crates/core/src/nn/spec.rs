use serde::{Deserialize, Serialize};

use super::NnError;
use crate::tensor::Shape4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Zero padding so that a stride-1 convolution preserves extent. Any odd
    /// overhang goes to the bottom/right.
    Same,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Subtract the per-element training-set mean before the first layer.
    ZeroCenter,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    ImageInput {
        h: usize,
        w: usize,
        c: usize,
        normalization: Normalization,
    },
    Conv2D {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm,
    ReLU,
    AvgPool {
        pool: (usize, usize),
        stride: (usize, usize),
    },
    FullyConnected {
        out_units: usize,
    },
    RegressionOutput,
}

impl LayerSpec {
    pub fn is_learnable(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2D { .. } | LayerSpec::BatchNorm | LayerSpec::FullyConnected { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::ImageInput { .. } => "input",
            LayerSpec::Conv2D { .. } => "conv",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::ReLU => "relu",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::RegressionOutput => "regression",
        }
    }
}

/// Ordered layer stack. Construct through [`NetworkSpec::new`], which checks
/// the structural rules and runs shape inference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerSpec>", into = "Vec<LayerSpec>")]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let spec = Self { layers };
        spec.check_structure()?;
        activation_shapes(&spec)?;
        Ok(spec)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Shape of a single input sample (`n = 1`).
    pub fn input_shape(&self) -> Shape4 {
        match self.layers[0] {
            LayerSpec::ImageInput { h, w, c, .. } => Shape4::new(h, w, c, 1),
            _ => unreachable!("checked at construction"),
        }
    }

    pub fn normalization(&self) -> Normalization {
        match self.layers[0] {
            LayerSpec::ImageInput { normalization, .. } => normalization,
            _ => unreachable!("checked at construction"),
        }
    }

    /// Width of the regression head.
    pub fn output_len(&self) -> usize {
        let shapes = activation_shapes(self).expect("checked at construction");
        shapes.last().map(Shape4::sample_len).unwrap_or(0)
    }

    fn check_structure(&self) -> Result<(), NnError> {
        let n = self.layers.len();
        if n < 2 {
            return Err(NnError::InvalidSpec(
                "need at least an input and a regression layer".into(),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let first = i == 0;
            let last = i == n - 1;
            match layer {
                LayerSpec::ImageInput { .. } if !first => {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {}: image input must be first and unique",
                        i + 1
                    )))
                }
                LayerSpec::RegressionOutput if !last => {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {}: regression output must be last and unique",
                        i + 1
                    )))
                }
                LayerSpec::Conv2D {
                    filters,
                    kernel,
                    stride,
                    ..
                } => {
                    if *filters == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0
                    {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {}: filters, kernel and stride must be >= 1",
                            i + 1
                        )));
                    }
                }
                LayerSpec::AvgPool { pool, stride } => {
                    if pool.0 == 0 || pool.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {}: pool and stride must be >= 1",
                            i + 1
                        )));
                    }
                }
                LayerSpec::FullyConnected { out_units: 0 } => {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {}: fully connected layer needs >= 1 unit",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        if !matches!(self.layers[0], LayerSpec::ImageInput { .. }) {
            return Err(NnError::InvalidSpec("first layer must be an image input".into()));
        }
        if !matches!(self.layers[n - 1], LayerSpec::RegressionOutput) {
            return Err(NnError::InvalidSpec(
                "last layer must be a regression output".into(),
            ));
        }
        Ok(())
    }
}

impl TryFrom<Vec<LayerSpec>> for NetworkSpec {
    type Error = NnError;

    fn try_from(layers: Vec<LayerSpec>) -> Result<Self, Self::Error> {
        NetworkSpec::new(layers)
    }
}

impl From<NetworkSpec> for Vec<LayerSpec> {
    fn from(spec: NetworkSpec) -> Self {
        spec.layers
    }
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(len.div_ceil(stride)),
        Padding::None => (kernel <= len).then(|| (len - kernel) / stride + 1),
    }
}

pub(crate) fn pool_out_len(len: usize, pool: usize, stride: usize) -> Option<usize> {
    (pool <= len).then(|| (len - pool) / stride + 1)
}

/// Symbolic forward pass: the activation shape after every layer, one entry
/// per layer, each with `n = 1`.
pub fn activation_shapes(spec: &NetworkSpec) -> Result<Vec<Shape4>, NnError> {
    let mut shapes = Vec::with_capacity(spec.layers.len());
    let mut cur = Shape4::new(0, 0, 0, 1);
    for (i, layer) in spec.layers.iter().enumerate() {
        let underflow = NnError::ShapeUnderflow { layer: i + 1 };
        cur = match *layer {
            LayerSpec::ImageInput { h, w, c, .. } => {
                if h == 0 || w == 0 || c == 0 {
                    return Err(underflow);
                }
                Shape4::new(h, w, c, 1)
            }
            LayerSpec::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let h = conv_out_len(cur.h, kernel.0, stride.0, padding).ok_or(underflow.clone())?;
                let w = conv_out_len(cur.w, kernel.1, stride.1, padding).ok_or(underflow)?;
                Shape4::new(h, w, filters, 1)
            }
            LayerSpec::BatchNorm | LayerSpec::ReLU | LayerSpec::RegressionOutput => cur,
            LayerSpec::AvgPool { pool, stride } => {
                let h = pool_out_len(cur.h, pool.0, stride.0).ok_or(underflow.clone())?;
                let w = pool_out_len(cur.w, pool.1, stride.1).ok_or(underflow)?;
                Shape4::new(h, w, cur.c, 1)
            }
            LayerSpec::FullyConnected { out_units } => Shape4::new(1, 1, out_units, 1),
        };
        if cur.is_empty() {
            return Err(NnError::ShapeUnderflow { layer: i + 1 });
        }
        shapes.push(cur);
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(h: usize) -> LayerSpec {
        LayerSpec::ImageInput {
            h,
            w: 1,
            c: 1,
            normalization: Normalization::None,
        }
    }

    #[test]
    fn structure_rules() {
        assert!(NetworkSpec::new(vec![input(4), LayerSpec::RegressionOutput]).is_ok());
        assert!(NetworkSpec::new(vec![LayerSpec::RegressionOutput, input(4)]).is_err());
        assert!(NetworkSpec::new(vec![
            input(4),
            LayerSpec::RegressionOutput,
            LayerSpec::RegressionOutput
        ])
        .is_err());
        assert!(NetworkSpec::new(vec![
            input(4),
            LayerSpec::AvgPool {
                pool: (1, 1),
                stride: (0, 1)
            },
            LayerSpec::RegressionOutput
        ])
        .is_err());
    }

    #[test]
    fn pooling_length_formula() {
        assert_eq!(pool_out_len(3, 1, 4), Some(1));
        assert_eq!(pool_out_len(48, 1, 4), Some(12));
        assert_eq!(pool_out_len(2, 3, 1), None);
        assert_eq!(conv_out_len(48, 146, 1, Padding::Same), Some(48));
        assert_eq!(conv_out_len(5, 2, 2, Padding::Same), Some(3));
        assert_eq!(conv_out_len(5, 6, 1, Padding::None), None);
    }

    #[test]
    fn underflow_names_the_layer() {
        let spec = NetworkSpec::new(vec![
            input(2),
            LayerSpec::AvgPool {
                pool: (3, 1),
                stride: (1, 1),
            },
            LayerSpec::RegressionOutput,
        ]);
        assert_eq!(spec, Err(NnError::ShapeUnderflow { layer: 2 }));
    }
}
