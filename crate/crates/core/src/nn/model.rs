use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{BatchNorm, Conv2d, Dense, Layer, ReluMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything that maps an image to class probabilities. Perturbation-based
/// explainers and the faithfulness metrics only need this.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn probabilities(&self, image: &Tensor) -> Result<Vec<f64>>;
}

/// A sequential network over 3×H×W images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    num_classes: usize,
    canonized: bool,
}

/// Result of a forward pass. `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub activations: Vec<Tensor>,
    pub probabilities: Vec<f64>,
}

impl ForwardPass {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("at least the input").data()
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.probabilities)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Model {
    /// Validates the layer chain against `input_shape` and `num_classes`.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        let model = Self {
            layers,
            input_shape,
            num_classes,
            canonized: false,
        };
        model.validate()?;
        Ok(model)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::invalid(format!("layer {i} ({}): {e}", layer.name())))?;
        }
        if shape != [self.num_classes] {
            return Err(Error::invalid(format!(
                "network output shape {shape:?} does not match {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// The reference architecture: three conv+BN+ReLU blocks (8, 16, 32
    /// channels, 3×3, padding 1) with 2×2 max pooling after the first two,
    /// global average pooling and a dense classifier. He-uniform init.
    pub fn micro_cnn(height: usize, width: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = |cin: usize, cout: usize, rng: &mut ChaCha8Rng| {
            let fan_in = (cin * 9) as f64;
            let bound = (6.0 / fan_in).sqrt();
            Layer::Conv2d(Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: 3,
                padding: 1,
                weight: (0..cout * cin * 9).map(|_| rng.random_range(-bound..bound)).collect(),
                bias: vec![0.0; cout],
            })
        };
        let layers = vec![
            conv(3, 8, &mut rng),
            Layer::BatchNorm(BatchNorm::identity(8)),
            Layer::Relu,
            Layer::MaxPool2,
            conv(8, 16, &mut rng),
            Layer::BatchNorm(BatchNorm::identity(16)),
            Layer::Relu,
            Layer::MaxPool2,
            conv(16, 32, &mut rng),
            Layer::BatchNorm(BatchNorm::identity(32)),
            Layer::Relu,
            Layer::GlobalAvgPool,
            {
                let bound = (6.0 / 32.0f64).sqrt();
                Layer::Dense(Dense {
                    in_features: 32,
                    out_features: num_classes,
                    weight: (0..32 * num_classes)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; num_classes],
                })
            },
        ];
        Self::new(layers, vec![3, height, width], num_classes).expect("reference stack is consistent")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_canonized(&self) -> bool {
        self.canonized
    }

    pub(crate) fn set_canonized(&mut self, flag: bool) {
        self.canonized = flag;
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                got: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_class(&self, target: usize) -> Result<()> {
        if target >= self.num_classes {
            return Err(Error::invalid(format!(
                "target class {target} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardPass> {
        self.check_input(image)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(image.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }
        let probabilities = softmax(activations.last().unwrap().data());
        Ok(ForwardPass {
            activations,
            probabilities,
        })
    }

    /// Logits without keeping intermediate activations.
    pub fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let mut x = image.clone();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        Ok(x.into_data())
    }

    /// Back-propagates `grad_logits` through a cached forward pass.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &[f64], mode: ReluMode) -> Tensor {
        let mut grad = grad_logits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward_input(&pass.activations[i], &grad, mode);
        }
        Tensor::from_parts(self.input_shape.clone(), grad)
    }

    /// ∂ logit[target] / ∂ input under the chosen ReLU backward rule.
    pub fn input_gradient(&self, image: &Tensor, target: usize, mode: ReluMode) -> Result<Tensor> {
        self.check_class(target)?;
        let pass = self.forward(image)?;
        Ok(self.gradient_from_pass(&pass, target, mode))
    }

    pub fn gradient_from_pass(&self, pass: &ForwardPass, target: usize, mode: ReluMode) -> Tensor {
        let mut onehot = vec![0.0; self.num_classes];
        onehot[target] = 1.0;
        self.backward(pass, &onehot, mode)
    }

    /// Parameter gradients of `Σ grad_logits · logits`, one vector per
    /// parameter in [`Layer::params`] order.
    pub(crate) fn param_gradients(&self, pass: &ForwardPass, grad_logits: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let mut grads: Vec<Vec<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| l.params().iter().map(|(p, _)| vec![0.0; p.len()]).collect())
            .collect();
        let mut grad = grad_logits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.accumulate_param_grads(&pass.activations[i], &grad, &mut grads[i]);
            if i > 0 {
                grad = layer.backward_input(&pass.activations[i], &grad, ReluMode::Standard);
            }
        }
        grads
    }
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn probabilities(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image)?))
    }
}

/// Adapts a closure to [`Classifier`]; handy for constructed test models.
pub struct FnClassifier<F> {
    classes: usize,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&Tensor) -> Vec<f64> + Send + Sync,
{
    pub fn new(classes: usize, f: F) -> Self {
        Self { classes, f }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&Tensor) -> Vec<f64> + Send + Sync,
{
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn probabilities(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok((self.f)(image))
    }
}
