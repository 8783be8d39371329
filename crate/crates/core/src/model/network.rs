use super::config::{ActShape, LayerSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{
    relu, relu_backward, softmax, BatchNorm2d, BatchNormCache, Conv2d, ConvCache, Dense,
    DenseCache, Dropout, DropoutCache, MaxPool2d, MaxPoolCache, Mode,
};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    MaxPool(MaxPool2d),
    Dropout(Dropout),
    Flatten,
    Dense(Dense),
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }
}

#[derive(Clone, Debug)]
enum LayerCache {
    Conv(ConvCache),
    BatchNorm(BatchNormCache),
    Relu,
    MaxPool(MaxPoolCache),
    Dropout(DropoutCache),
    Flatten(Vec<usize>),
    Dense(DenseCache),
    Softmax,
}

/// Everything recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub mode: Mode,
    /// Output of every layer; the last entry is the class probabilities.
    pub activations: Vec<Tensor>,
    caches: Vec<LayerCache>,
}

impl ForwardPass {
    pub fn probs(&self) -> &Tensor {
        self.activations.last().expect("non-empty network")
    }

    /// Pre-softmax class scores.
    pub fn logits(&self) -> &Tensor {
        &self.activations[self.activations.len() - 2]
    }
}

/// A built network: its config plus live layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<Layer>,
}

impl Model {
    /// Validates `config` and initializes parameters: He-uniform conv and
    /// dense weights, zero biases, γ = 1, β = 0.
    pub fn build(config: &ModelConfig, rng: &mut Rng) -> Result<Model> {
        let mut model = Model::zeroed(config)?;
        for layer in &mut model.layers {
            match layer {
                Layer::Conv(c) => c.init_he_uniform(rng),
                Layer::Dense(d) => d.init_he_uniform(rng),
                _ => {}
            }
        }
        Ok(model)
    }

    /// Same structure as [`Model::build`] with every weight zero.
    pub fn zeroed(config: &ModelConfig) -> Result<Model> {
        let trace = config.validate()?;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut shape = ActShape::Spatial(
            config.input_shape[0],
            config.input_shape[1],
            config.input_shape[2],
        );
        for (spec, &out) in config.layers.iter().zip(&trace.outputs) {
            let layer = match (*spec, shape) {
                (
                    LayerSpec::Conv {
                        filters,
                        kernel,
                        stride,
                        padding,
                    },
                    ActShape::Spatial(c, _, _),
                ) => Layer::Conv(Conv2d::new(c, filters, (kernel[0], kernel[1]), stride, padding)?),
                (LayerSpec::Bn { momentum, epsilon }, ActShape::Spatial(c, _, _)) => {
                    Layer::BatchNorm(BatchNorm2d::new(c, momentum, epsilon)?)
                }
                (LayerSpec::Relu, _) => Layer::Relu,
                (
                    LayerSpec::Maxpool {
                        window,
                        stride,
                        padding,
                    },
                    _,
                ) => Layer::MaxPool(MaxPool2d::new((window[0], window[1]), stride, padding)?),
                (LayerSpec::Dropout { rate }, _) => Layer::Dropout(Dropout::new(rate)?),
                (LayerSpec::Flatten, _) => Layer::Flatten,
                (LayerSpec::Dense { units }, ActShape::Flat(f)) => Layer::Dense(Dense::new(f, units)?),
                (LayerSpec::Softmax, _) => Layer::Softmax,
                _ => unreachable!("validated config"),
            };
            layers.push(layer);
            shape = out;
        }
        Ok(Model {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for hand-built fixtures and weight surgery.
    /// Shapes must be left unchanged.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Trainable tensors in canonical order: per layer, conv/dense weight
    /// then bias, batch-norm γ then β.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let names: &[&str] = match layer {
                Layer::Conv(_) | Layer::Dense(_) => &["weight", "bias"],
                Layer::BatchNorm(_) => &["gamma", "beta"],
                _ => &[],
            };
            out.extend(names.iter().map(|n| format!("layers.{i}.{n}")));
        }
        out
    }

    /// Non-trainable state (batch-norm running mean and variance).
    pub fn buffers(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::BatchNorm(b) = layer {
                out.extend([&b.running_mean, &b.running_var]);
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(b) = layer {
                out.extend([&mut b.running_mean, &mut b.running_var]);
            }
        }
        out
    }

    pub fn buffer_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(_) = layer {
                out.push(format!("layers.{i}.running_mean"));
                out.push(format!("layers.{i}.running_var"));
            }
        }
        out
    }

    /// Scalars actually allocated for trainable parameters.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if [c, h, w] != self.config.input_shape {
            return Err(Error::Dimension(format!(
                "model expects N×{:?} input, got {:?}",
                self.config.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor, mode: Mode, mut rng: Option<&mut Rng>) -> Result<ForwardPass> {
        self.check_input(x)?;
        let mut activations: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = activations.last().unwrap_or(x);
            let (out, cache) = match layer {
                Layer::Conv(c) => {
                    let (y, cache) = c.forward(input)?;
                    (y, LayerCache::Conv(cache))
                }
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward(input, mode)?;
                    (y, LayerCache::BatchNorm(cache))
                }
                Layer::Relu => (relu(input), LayerCache::Relu),
                Layer::MaxPool(p) => {
                    let (y, cache) = p.forward(input)?;
                    (y, LayerCache::MaxPool(cache))
                }
                Layer::Dropout(d) => {
                    let (y, cache) = d.forward(input, mode, rng.as_deref_mut())?;
                    (y, LayerCache::Dropout(cache))
                }
                Layer::Flatten => {
                    let n = input.shape()[0];
                    let f = input.len() / n;
                    (
                        input.clone().reshape([n, f])?,
                        LayerCache::Flatten(input.shape().to_vec()),
                    )
                }
                Layer::Dense(d) => {
                    let (y, cache) = d.forward(input)?;
                    (y, LayerCache::Dense(cache))
                }
                Layer::Softmax => (softmax(input)?, LayerCache::Softmax),
            };
            activations.push(out);
            caches.push(cache);
        }
        Ok(ForwardPass {
            mode,
            activations,
            caches,
        })
    }

    /// Training-mode pass: batch statistics in batch norm (whose running
    /// statistics are updated), dropout masks drawn from `rng`.
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut Rng) -> Result<ForwardPass> {
        let pass = self.run(x, Mode::Train, Some(rng))?;
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
            if let (Layer::BatchNorm(b), LayerCache::BatchNorm(c)) = (layer, cache) {
                b.update_running_stats(c);
            }
        }
        Ok(pass)
    }

    /// Inference-mode pass: running statistics, dropout disabled. Pure in
    /// `(parameters, x)`.
    pub fn infer(&self, x: &Tensor) -> Result<ForwardPass> {
        self.run(x, Mode::Infer, None)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<ForwardPass> {
        match mode {
            Mode::Train => self.forward_train(x, rng),
            Mode::Infer => self.infer(x),
        }
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.infer(x)?.probs().clone())
    }

    /// Gradients of the loss with respect to every parameter (canonical
    /// order), given the gradient with respect to the logits.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.backprop(pass, grad_logits, None, true)?.1)
    }

    /// Gradient with respect to the *output* of layer `layer`, given the
    /// gradient with respect to the logits.
    pub fn grad_at_layer(
        &self,
        pass: &ForwardPass,
        grad_logits: &Tensor,
        layer: usize,
    ) -> Result<Tensor> {
        if layer + 1 >= self.layers.len() {
            return Err(Error::Config(format!(
                "layer {layer} is not below the logits"
            )));
        }
        Ok(self.backprop(pass, grad_logits, Some(layer), false)?.0)
    }

    /// Gradient with respect to the network input.
    pub fn input_grad(&self, pass: &ForwardPass, grad_logits: &Tensor) -> Result<Tensor> {
        Ok(self.backprop(pass, grad_logits, None, false)?.0)
    }

    fn backprop(
        &self,
        pass: &ForwardPass,
        grad_logits: &Tensor,
        stop: Option<usize>,
        want_params: bool,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        if pass.caches.len() != self.layers.len() {
            return Err(Error::Dimension("forward pass belongs to a different model".into()));
        }
        grad_logits.expect_same_shape(pass.logits())?;
        let top = self.layers.len() - 2;
        let mut grad = grad_logits.clone();
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        for i in (0..=top).rev() {
            if stop == Some(i) {
                return Ok((grad, Vec::new()));
            }
            grad = match (&self.layers[i], &pass.caches[i]) {
                (Layer::Conv(c), LayerCache::Conv(cache)) => {
                    let g = c.backward(cache, &grad)?;
                    if want_params {
                        per_layer[i] = vec![g.weight, g.bias];
                    }
                    g.input
                }
                (Layer::BatchNorm(b), LayerCache::BatchNorm(cache)) => {
                    let g = b.backward(cache, &grad)?;
                    if want_params {
                        per_layer[i] = vec![g.gamma, g.beta];
                    }
                    g.input
                }
                (Layer::Relu, LayerCache::Relu) => relu_backward(&pass.activations[i], &grad)?,
                (Layer::MaxPool(p), LayerCache::MaxPool(cache)) => p.backward(cache, &grad)?,
                (Layer::Dropout(d), LayerCache::Dropout(cache)) => d.backward(cache, &grad)?,
                (Layer::Flatten, LayerCache::Flatten(shape)) => grad.reshape(shape.clone())?,
                (Layer::Dense(d), LayerCache::Dense(cache)) => {
                    let g = d.backward(cache, &grad)?;
                    if want_params {
                        per_layer[i] = vec![g.weight, g.bias];
                    }
                    g.input
                }
                (Layer::Softmax, LayerCache::Softmax) => {
                    return Err(Error::Config("softmax may only be the final layer".into()))
                }
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
        Ok((grad, per_layer.into_iter().flatten().collect()))
    }
}
