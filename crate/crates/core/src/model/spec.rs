use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Convolution along time, shared across electrodes.
    TemporalConv,
    /// Convolution across all electrodes at each time step.
    SpatialConv,
    /// Non-overlapping max-pooling along time.
    MaxPool,
    /// Fully connected layer over the flattened input.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Elu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Output feature maps (conv) or units (dense). Ignored for pooling.
    #[serde(default)]
    pub units: usize,
    /// Temporal kernel length, or pool size. Ignored for spatial/dense.
    #[serde(default)]
    pub kernel: usize,
    pub activation: Activation,
    /// Inverted dropout applied to the block input while training.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batch_norm: bool,
}

impl BlockSpec {
    pub fn temporal(units: usize, kernel: usize) -> Self {
        Self {
            kind: BlockKind::TemporalConv,
            units,
            kernel,
            activation: Activation::Linear,
            dropout: 0.0,
            batch_norm: false,
        }
    }

    pub fn spatial(units: usize) -> Self {
        Self {
            kind: BlockKind::SpatialConv,
            units,
            kernel: 0,
            activation: Activation::Elu,
            dropout: 0.0,
            batch_norm: true,
        }
    }

    pub fn max_pool(size: usize) -> Self {
        Self {
            kind: BlockKind::MaxPool,
            units: 0,
            kernel: size,
            activation: Activation::Linear,
            dropout: 0.0,
            batch_norm: false,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: BlockKind::Dense,
            units,
            kernel: 0,
            activation,
            dropout: 0.0,
            batch_norm: false,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn has_parameters(&self) -> bool {
        self.kind != BlockKind::MaxPool
    }
}

/// Activation tensor shape of one example: feature maps x rows x time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub maps: usize,
    pub rows: usize,
    pub time: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.maps * self.rows * self.time
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub channels: usize,
    pub samples: usize,
    pub class_count: usize,
    pub blocks: Vec<BlockSpec>,
}

impl NetworkSpec {
    /// Temporal conv, spatial conv (batch norm + ELU), max-pool, dense
    /// softmax head with dropout.
    pub fn four_block(channels: usize, samples: usize, class_count: usize) -> Self {
        Self {
            channels,
            samples,
            class_count,
            blocks: vec![
                BlockSpec::temporal(8, 5),
                BlockSpec::spatial(8),
                BlockSpec::max_pool(2),
                BlockSpec::dense(class_count, Activation::Softmax).with_dropout(0.5),
            ],
        }
    }

    /// Activation shapes: the input followed by each block's output.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.channels == 0 || self.samples == 0 {
            return Err(Error::invalid("input shape must be non-empty"));
        }
        if self.class_count < 2 {
            return Err(Error::invalid("class count must be at least 2"));
        }
        if self.blocks.is_empty() {
            return Err(Error::invalid("network needs at least one block"));
        }
        let mut shape = Shape {
            maps: 1,
            rows: self.channels,
            time: self.samples,
        };
        let mut out = vec![shape];
        let last = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            let bad = |msg: String| Error::invalid(format!("block {i} ({:?}): {msg}", b.kind));
            if !(0.0..1.0).contains(&b.dropout) {
                return Err(bad(format!("dropout must lie in [0, 1), got {}", b.dropout)));
            }
            if (b.activation == Activation::Softmax) != (i == last) {
                return Err(bad("softmax activation is required on, and only on, the final block".into()));
            }
            if b.kind != BlockKind::MaxPool && b.units == 0 {
                return Err(bad("units must be positive".into()));
            }
            shape = match b.kind {
                BlockKind::TemporalConv => {
                    if b.kernel == 0 || b.kernel > shape.time {
                        return Err(bad(format!("kernel {} does not fit {} time steps", b.kernel, shape.time)));
                    }
                    Shape {
                        maps: b.units,
                        rows: shape.rows,
                        time: shape.time - b.kernel + 1,
                    }
                }
                BlockKind::SpatialConv => Shape {
                    maps: b.units,
                    rows: 1,
                    time: shape.time,
                },
                BlockKind::MaxPool => {
                    if b.kernel == 0 || b.kernel > shape.time {
                        return Err(bad(format!("pool size {} does not fit {} time steps", b.kernel, shape.time)));
                    }
                    if b.batch_norm {
                        return Err(bad("pooling blocks carry no batch norm".into()));
                    }
                    Shape {
                        time: shape.time / b.kernel,
                        ..shape
                    }
                }
                BlockKind::Dense => Shape {
                    maps: b.units,
                    rows: 1,
                    time: 1,
                },
            };
            out.push(shape);
        }
        let fin = out[out.len() - 1];
        if self.blocks[last].kind != BlockKind::Dense || fin.len() != self.class_count {
            return Err(Error::invalid(format!(
                "final block must be dense with {} units",
                self.class_count
            )));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.samples
    }
}

/// Dimensions of `(weight, bias)` for a block with the given input shape.
pub(crate) fn parameter_dims(block: &BlockSpec, input: Shape) -> (Vec<usize>, usize) {
    match block.kind {
        BlockKind::TemporalConv => (vec![block.units, input.maps, block.kernel], block.units),
        BlockKind::SpatialConv => (vec![block.units, input.maps, input.rows], block.units),
        BlockKind::MaxPool => (vec![], 0),
        BlockKind::Dense => (vec![block.units, input.len()], block.units),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_block_shapes_chain() {
        let spec = NetworkSpec::four_block(8, 32, 2);
        let s = spec.shapes().unwrap();
        assert_eq!(s[1], Shape { maps: 8, rows: 8, time: 28 });
        assert_eq!(s[2], Shape { maps: 8, rows: 1, time: 28 });
        assert_eq!(s[3], Shape { maps: 8, rows: 1, time: 14 });
        assert_eq!(s[4].len(), 2);
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let mut spec = NetworkSpec::four_block(8, 32, 2);
        spec.blocks[3].units = 3;
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::four_block(8, 32, 2);
        spec.blocks[0].kernel = 40;
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::four_block(8, 32, 2);
        spec.blocks[1].activation = Activation::Softmax;
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::four_block(8, 32, 2);
        spec.blocks[3].activation = Activation::Elu;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = NetworkSpec::four_block(4, 16, 2);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<NetworkSpec>(&text).unwrap(), spec);
    }
}
