//! Small seeded CNNs standing in for the large pretrained classifiers.
//!
//! Every model shares one architecture:
//! conv 3x3 (3→8) → ReLU → maxpool 2x2 → conv 3x3 (8→16) → ReLU →
//! maxpool 2x2 → flatten (channel-last) → dense → 10 logits → softmax.
//! Only the input side length differs, which makes the server-side resize
//! different for every model.

mod layers;
mod weights;

pub use layers::{dense, maxpool2x2, relu_in_place, softmax, Conv3x3, Dims};
pub use weights::{load_weights, save_weights, Tensor, WeightFileError, WeightSet, MAGIC};

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::ImageTensor;

pub const NUM_CLASSES: usize = 10;
pub const VALID_TOP_K: [usize; 4] = [1, 3, 5, 10];

const CONV1_OUT: usize = 8;
const CONV2_OUT: usize = 16;
const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("model {0:?} not found")]
    ModelNotFound(String),
    #[error("expected {expected}x{expected}x3 input, got {height}x{width}x{channels}")]
    ShapeMismatch {
        expected: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("weight tensor {index} has dims {actual:?}, expected {expected:?}")]
    WeightShape {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("weight set has non-finite values")]
    NonFinite,
    #[error("top_k must be one of 1, 3, 5, 10 (got {0})")]
    BadTopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: &'static str,
    pub input_size: usize,
    pub num_classes: usize,
}

pub const MODEL_SPECS: [ModelSpec; 3] = [
    ModelSpec {
        name: "tinynet-a",
        input_size: 32,
        num_classes: NUM_CLASSES,
    },
    ModelSpec {
        name: "tinynet-b",
        input_size: 48,
        num_classes: NUM_CLASSES,
    },
    ModelSpec {
        name: "tinynet-c",
        input_size: 64,
        num_classes: NUM_CLASSES,
    },
];

impl ModelSpec {
    pub fn by_name(name: &str) -> Result<Self, ClassifierError> {
        MODEL_SPECS
            .iter()
            .find(|s| s.name == name)
            .copied()
            .ok_or_else(|| ClassifierError::ModelNotFound(name.to_string()))
    }

    fn flat_len(&self) -> usize {
        let side = self.input_size / 4;
        side * side * CONV2_OUT
    }

    /// Expected tensor dims in weight-file order.
    pub fn tensor_dims(&self) -> [Vec<usize>; 6] {
        [
            vec![CONV1_OUT, INPUT_CHANNELS, 3, 3],
            vec![CONV1_OUT],
            vec![CONV2_OUT, CONV1_OUT, 3, 3],
            vec![CONV2_OUT],
            vec![self.num_classes, self.flat_len()],
            vec![self.num_classes],
        ]
    }
}

/// Glorot-uniform kernels drawn layer by layer in row-major order from one
/// SplitMix64 stream; biases are zero and consume no draws.
pub fn build_weights(name: &str, seed: u64) -> Result<WeightSet, ClassifierError> {
    let spec = ModelSpec::by_name(name)?;
    let mut rng = Rng::new(seed);
    let tensors = spec
        .tensor_dims()
        .into_iter()
        .map(|dims| {
            if dims.len() == 1 {
                return Tensor::zeros(dims);
            }
            let (fan_in, fan_out) = if dims.len() == 4 {
                let field = dims[2] * dims[3];
                (dims[1] * field, dims[0] * field)
            } else {
                (dims[1], dims[0])
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = dims.iter().product();
            let values = (0..n)
                .map(|_| limit * (2.0 * rng.uniform() - 1.0))
                .collect();
            Tensor::new(dims, values)
        })
        .collect();
    Ok(WeightSet { tensors })
}

/// Probability vector over `NUM_CLASSES` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(pub Vec<f64>);

impl ClassProbabilities {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn top1(&self) -> usize {
        crate::loss::argmax(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probability: Option<f64>,
}

/// The first `k` classes by descending probability (ascending index on
/// ties). `k` must be 1, 3, 5 or 10.
pub fn top_k(
    probs: &[f64],
    k: usize,
    labels_only: bool,
) -> Result<Vec<Prediction>, ClassifierError> {
    if !VALID_TOP_K.contains(&k) {
        return Err(ClassifierError::BadTopK(k));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|class| Prediction {
            class,
            probability: (!labels_only).then(|| probs[class]),
        })
        .collect())
}

/// Immutable model ready for inference; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    conv1: Conv3x3,
    conv2: Conv3x3,
    dense_w: Vec<f64>,
    dense_b: Vec<f64>,
}

impl Model {
    pub fn build(name: &str, seed: u64) -> Result<Self, ClassifierError> {
        Self::from_weights(ModelSpec::by_name(name)?, &build_weights(name, seed)?)
    }

    pub fn from_weights(spec: ModelSpec, ws: &WeightSet) -> Result<Self, ClassifierError> {
        let expected = spec.tensor_dims();
        if ws.tensors.len() != expected.len() {
            return Err(ClassifierError::WeightShape {
                index: ws.tensors.len().min(expected.len()),
                expected: vec![expected.len()],
                actual: vec![ws.tensors.len()],
            });
        }
        for (index, (t, dims)) in ws.tensors.iter().zip(&expected).enumerate() {
            if &t.dims != dims {
                return Err(ClassifierError::WeightShape {
                    index,
                    expected: dims.clone(),
                    actual: t.dims.clone(),
                });
            }
        }
        if ws
            .tensors
            .iter()
            .flat_map(|t| &t.values)
            .any(|v| !v.is_finite())
        {
            return Err(ClassifierError::NonFinite);
        }
        let t = &ws.tensors;
        Ok(Self {
            spec,
            conv1: Conv3x3::new(INPUT_CHANNELS, CONV1_OUT, &t[0].values, &t[1].values),
            conv2: Conv3x3::new(CONV1_OUT, CONV2_OUT, &t[2].values, &t[3].values),
            dense_w: t[4].values.clone(),
            dense_b: t[5].values.clone(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn logits(&self, x: &ImageTensor) -> Result<Vec<f64>, ClassifierError> {
        let side = self.spec.input_size;
        if x.height() != side || x.width() != side || x.channels() != INPUT_CHANNELS {
            return Err(ClassifierError::ShapeMismatch {
                expected: side,
                height: x.height(),
                width: x.width(),
                channels: x.channels(),
            });
        }
        let (mut h, dims) = self
            .conv1
            .forward(x.data(), Dims::new(side, side, INPUT_CHANNELS));
        relu_in_place(&mut h);
        let (h, dims) = maxpool2x2(&h, dims);
        let (mut h, dims) = self.conv2.forward(&h, dims);
        relu_in_place(&mut h);
        let (h, _) = maxpool2x2(&h, dims);
        Ok(dense(&h, &self.dense_w, &self.dense_b))
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<ClassProbabilities, ClassifierError> {
        Ok(ClassProbabilities(softmax(&self.logits(x)?)))
    }
}
