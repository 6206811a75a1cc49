//! Differentiable raw-waveform classifiers.
//!
//! A [`Model`] is a stack of 1-D convolutions, ReLUs, max-pools and a dense
//! logits head. Gradients are computed by an explicit reverse pass; ReLU uses
//! a zero subgradient at the origin and max-pool routes to the lowest-index
//! winner.

mod checkpoint;
mod dataset;
mod layers;
mod registry;
mod train;

use std::hash::{Hash, Hasher};
use std::ops::Deref;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use dataset::{
    export_dataset, generate_synthetic_dataset, import_dataset, DatasetSpec, LabeledSample, Split,
    SyntheticDataset, LABELS_FILE,
};
pub use layers::{argmax, Layer, LayerSpec, Shape};
pub use registry::Architecture;
pub use train::{accuracy, train, TrainConfig, TrainHistory};

use crate::error::{check_len, Error, Result};

/// Pre-softmax class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(Self(values))
    }

    /// Predicted class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LogitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Reduces a logit vector to a scalar and reports its gradient with respect
/// to the logits.
pub trait ScalarHead {
    fn evaluate(&self, logits: &[f64]) -> (f64, Vec<f64>);
}

impl<F> ScalarHead for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn evaluate(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        self(logits)
    }
}

/// Softmax cross-entropy against a fixed label.
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy(pub usize);

impl ScalarHead for CrossEntropy {
    fn evaluate(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        let probs = softmax(logits);
        let loss = -probs[self.0].max(f64::MIN_POSITIVE).ln();
        let mut grad = probs;
        grad[self.0] -= 1.0;
        (loss, grad)
    }
}

/// A single logit `f_j`.
#[derive(Debug, Clone, Copy)]
pub struct SingleLogit(pub usize);

impl ScalarHead for SingleLogit {
    fn evaluate(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; logits.len()];
        grad[self.0] = 1.0;
        (logits[self.0], grad)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Activations of every layer boundary for one input.
pub(crate) struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    fn logits(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input")
    }
}

/// Per-layer parameter gradients, laid out like the model's parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl ParamGrads {
    fn zeros_like(model: &Model) -> Self {
        Self {
            weight: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weight.len()])
                .collect(),
            bias: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }
}

/// A feed-forward classifier over fixed-length waveforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    architecture: Option<Architecture>,
    input_dim: usize,
    classes: usize,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
    seed: u64,
}

impl Model {
    /// Builds a model from explicit layers, checking that shapes chain up to
    /// a `classes`-wide logits head.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() {
            return Err(Error::invalid(
                "model needs a positive input dimension and at least one layer",
            ));
        }
        let mut shapes = vec![(1, input_dim)];
        for (i, layer) in layers.iter().enumerate() {
            let (nw, nb) = layer.spec.param_counts();
            if layer.weight.len() != nw || layer.bias.len() != nb {
                return Err(Error::invalid(format!(
                    "layer {i} has mis-sized parameters"
                )));
            }
            let next = layer
                .spec
                .output_shape(*shapes.last().unwrap())
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "layer {i} ({:?}) does not fit its input",
                        layer.spec
                    ))
                })?;
            shapes.push(next);
        }
        let (ch, classes) = *shapes.last().unwrap();
        if ch != 1 || classes < 1 {
            return Err(Error::invalid("model must end in a dense logits head"));
        }
        Ok(Self {
            architecture: None,
            input_dim,
            classes,
            layers,
            shapes,
            seed: 0,
        })
    }

    /// Two-class model with logits `[w.x + b, -(w.x + b)]`.
    pub fn linear_binary(weights: &[f64], bias: f64) -> Result<Self> {
        let d = weights.len();
        let mut dense = Layer::new(LayerSpec::Dense {
            inputs: d,
            outputs: 2,
        });
        dense.weight[..d].copy_from_slice(weights);
        for (dst, w) in dense.weight[d..].iter_mut().zip(weights) {
            *dst = -w;
        }
        dense.bias = vec![bias, -bias];
        let mut model = Self::from_layers(d, vec![dense])?;
        model.architecture = Some(Architecture::Linear);
        Ok(model)
    }

    pub(crate) fn with_meta(mut self, arch: Architecture, seed: u64) -> Self {
        self.architecture = Some(arch);
        self.seed = seed;
        self
    }

    pub fn architecture(&self) -> Option<Architecture> {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Result<Trace> {
        check_len(self.input_dim, x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(&activations[i], self.shapes[i], self.shapes[i + 1]);
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    pub(crate) fn backward(
        &self,
        trace: &Trace,
        grad_logits: &[f64],
        mut param_grads: Option<&mut ParamGrads>,
    ) -> Vec<f64> {
        let mut grad = grad_logits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pg = match param_grads.as_deref_mut() {
                Some(pg) if layer.has_params() && !layer.frozen => {
                    Some((pg.weight[i].as_mut_slice(), pg.bias[i].as_mut_slice()))
                }
                _ => None,
            };
            grad = layer.backward(
                &trace.activations[i],
                self.shapes[i],
                self.shapes[i + 1],
                &grad,
                pg,
            );
        }
        grad
    }

    pub fn forward_logits(&self, x: &[f64]) -> Result<LogitVector> {
        let trace = self.trace(x)?;
        Ok(LogitVector(trace.activations.into_iter().last().unwrap()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward_logits(x)?.argmax())
    }

    /// Exact gradient of `head(logits(x))` with respect to `x`, together with
    /// the head's value and the logits it was evaluated on.
    pub fn input_gradient_with_logits<H: ScalarHead + ?Sized>(
        &self,
        x: &[f64],
        head: &H,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let trace = self.trace(x)?;
        let logits = trace.logits().to_vec();
        let (value, grad_logits) = head.evaluate(&logits);
        check_len(self.classes, grad_logits.len())?;
        Ok((value, self.backward(&trace, &grad_logits, None), logits))
    }

    pub fn input_gradient<H: ScalarHead + ?Sized>(
        &self,
        x: &[f64],
        head: &H,
    ) -> Result<(f64, Vec<f64>)> {
        let (value, grad, _) = self.input_gradient_with_logits(x, head)?;
        Ok((value, grad))
    }

    /// Identifies the linear region containing `x`. Two inputs with equal
    /// signatures see the same piecewise-linear map.
    pub fn region_signature(&self, x: &[f64]) -> Result<u64> {
        let trace = self.trace(x)?;
        let mut pattern = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.region(
                &trace.activations[i],
                self.shapes[i],
                self.shapes[i + 1],
                &mut pattern,
            );
        }
        let mut h = std::collections::hash_map::DefaultHasher::new();
        pattern.hash(&mut h);
        Ok(h.finish())
    }

    /// Hash of every parameter's bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for layer in &self.layers {
            for v in layer.weight.iter().chain(&layer.bias) {
                v.to_bits().hash(&mut h);
            }
            layer.frozen.hash(&mut h);
        }
        h.finish()
    }

    /// Rounds every parameter to the nearest `f32`, so that a checkpoint
    /// round trip reproduces the model bit for bit.
    pub fn snap_to_f32(&mut self) {
        for layer in &mut self.layers {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_binary_closed_form() {
        let w = [0.5, -1.0, 2.0];
        let model = Model::linear_binary(&w, 0.25).unwrap();
        let x = [0.2, 0.4, 0.9];
        let s: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + 0.25;
        let logits = model.forward_logits(&x).unwrap();
        assert!((logits[0] - s).abs() < 1e-12);
        assert!((logits[1] + s).abs() < 1e-12);
        assert_eq!(model.predict(&x).unwrap(), if s > 0.0 { 0 } else { 1 });
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let model = Model::from_layers(
            5,
            vec![Layer::new(LayerSpec::Dense {
                inputs: 5,
                outputs: 3,
            })],
        )
        .unwrap();
        assert_eq!(&*model.forward_logits(&[0.3; 5]).unwrap(), &[0.0; 3]);
        // tie between all classes resolves to class 0
        assert_eq!(model.predict(&[0.3; 5]).unwrap(), 0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = Model::linear_binary(&[1.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            model.forward_logits(&[0.1]),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn linear_head_gradient_is_weight() {
        let w = [0.5, -1.0, 2.0, 0.0];
        let model = Model::linear_binary(&w, -0.3).unwrap();
        let (_, g) = model
            .input_gradient(&[0.9, 0.1, 0.5, 0.5], &SingleLogit(0))
            .unwrap();
        assert_eq!(g, w.to_vec());
        let constant = |l: &[f64]| (1.0, vec![0.0; l.len()]);
        let (_, g) = model
            .input_gradient(&[0.9, 0.1, 0.5, 0.5], &constant)
            .unwrap();
        assert_eq!(g, vec![0.0; 4]);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Architecture::RandCnn.build(512, 3, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..512).map(|_| rng.random()).collect();
        assert_eq!(
            model.forward_logits(&x).unwrap(),
            model.forward_logits(&x).unwrap()
        );
    }

    #[test]
    fn cross_entropy_gradient() {
        let (loss, g) = CrossEntropy(1).evaluate(&[1.0, 2.0, 0.5]);
        let p = softmax(&[1.0, 2.0, 0.5]);
        assert!((loss + p[1].ln()).abs() < 1e-12);
        assert!((g[1] - (p[1] - 1.0)).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
    }
}
