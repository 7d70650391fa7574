use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BatchNormCache, ConvGeometry, LayerSpec, PoolGeometry};
use super::tensor::Tensor;
use crate::dataset::ClassScores;
use crate::error::{Error, Result};

/// Declarative layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Self {
        NetworkSpec {
            input_shape,
            layers,
            seed,
        }
    }

    /// Per-sample shapes: the input followed by each layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let current = shapes.last().unwrap();
            let next = layer.output_shape(current).map_err(|reason| {
                if i == 0 {
                    Error::Shape(format!(
                        "input {current:?} incompatible with layer 0 {layer}: {reason}"
                    ))
                } else {
                    Error::Shape(format!(
                        "layer {} {} (output {current:?}) incompatible with layer {i} {layer}: {reason}",
                        i - 1,
                        self.layers[i - 1]
                    ))
                }
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Shape-checks the stack and requires exactly one Softmax, in last place.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Softmax) => {}
            _ => return Err(Error::Shape("final layer must be Softmax".into())),
        }
        if self.layers[..self.layers.len() - 1]
            .iter()
            .any(|l| matches!(l, LayerSpec::Softmax))
        {
            return Err(Error::Shape(
                "Softmax is only supported as the final layer".into(),
            ));
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn buffer_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::buffer_count).sum()
    }
}

#[derive(Debug, Clone)]
struct LayerPlan {
    spec: LayerSpec,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    params: std::ops::Range<usize>,
    buffers: std::ops::Range<usize>,
}

impl LayerPlan {
    fn conv_geometry(&self) -> ConvGeometry {
        let LayerSpec::Conv2D {
            kernel,
            stride,
            padding,
            ..
        } = self.spec
        else {
            unreachable!()
        };
        ConvGeometry {
            channels: self.in_shape[0],
            height: self.in_shape[1],
            width: self.in_shape[2],
            kernel,
            stride,
            padding,
            out_h: self.out_shape[1],
            out_w: self.out_shape[2],
        }
    }

    fn pool_geometry(&self) -> PoolGeometry {
        let LayerSpec::MaxPool2D { window, stride } = self.spec else {
            unreachable!()
        };
        PoolGeometry {
            channels: self.in_shape[0],
            height: self.in_shape[1],
            width: self.in_shape[2],
            window,
            stride,
            out_h: self.out_shape[1],
            out_w: self.out_shape[2],
        }
    }

    fn spatial(&self) -> usize {
        self.in_shape[1..].iter().product()
    }
}

enum Cache {
    None,
    Pool(Vec<usize>),
    BatchNorm(BatchNormCache),
}

/// Activations of one forward pass, kept for backpropagation.
struct Trace {
    activations: Vec<Tensor>,
    caches: Vec<Cache>,
    /// Updated running statistics, one entry per BatchNorm layer.
    running: Vec<(std::ops::Range<usize>, Vec<f64>)>,
}

/// Loss and gradients of one batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub params: Vec<f64>,
    pub input: Tensor,
}

/// A built network: validated layer plan plus flat parameter and buffer
/// vectors.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    plan: Vec<LayerPlan>,
    params: Vec<f64>,
    buffers: Vec<f64>,
}

/// Shape-checks `spec` and initializes parameters from `spec.seed`.
///
/// Weights are Glorot-uniform per weight tensor, biases and BatchNorm shifts
/// are zero, BatchNorm scales one. Running means start at zero and running
/// variances at one.
pub fn build_network(spec: &NetworkSpec) -> Result<Network> {
    let plan = plan_layers(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = vec![0.0; spec.param_count()];
    let mut buffers = vec![0.0; spec.buffer_count()];
    for layer in &plan {
        let p = &mut params[layer.params.clone()];
        match layer.spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                glorot(&mut rng, &mut p[..in_dim * out_dim], in_dim, out_dim);
            }
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let area = kernel * kernel;
                glorot(
                    &mut rng,
                    &mut p[..in_channels * out_channels * area],
                    in_channels * area,
                    out_channels * area,
                );
            }
            LayerSpec::BatchNorm { num_features, .. } => {
                p[..num_features].fill(1.0);
                buffers[layer.buffers.start + num_features..layer.buffers.end].fill(1.0);
            }
            _ => {}
        }
    }
    Ok(Network {
        spec: spec.clone(),
        plan,
        params,
        buffers,
    })
}

fn glorot(rng: &mut ChaCha8Rng, weights: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weights {
        *w = rng.gen_range(-limit..=limit);
    }
}

fn plan_layers(spec: &NetworkSpec) -> Result<Vec<LayerPlan>> {
    let shapes = spec.validate()?;
    let mut plan = Vec::with_capacity(spec.layers.len());
    let (mut p, mut b) = (0, 0);
    for (i, layer) in spec.layers.iter().enumerate() {
        let (np, nb) = (layer.param_count(), layer.buffer_count());
        plan.push(LayerPlan {
            spec: layer.clone(),
            in_shape: shapes[i].clone(),
            out_shape: shapes[i + 1].clone(),
            params: p..p + np,
            buffers: b..b + nb,
        });
        p += np;
        b += nb;
    }
    Ok(plan)
}

impl Network {
    /// Rebuilds a network around stored parameters and buffers.
    pub fn from_parts(spec: NetworkSpec, params: Vec<f64>, buffers: Vec<f64>) -> Result<Self> {
        let plan = plan_layers(&spec)?;
        if params.len() != spec.param_count() {
            return Err(Error::Validation(format!(
                "spec declares {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if buffers.len() != spec.buffer_count() {
            return Err(Error::Validation(format!(
                "spec declares {} buffer values, got {}",
                spec.buffer_count(),
                buffers.len()
            )));
        }
        Ok(Network {
            spec,
            plan,
            params,
            buffers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self
            .plan
            .last()
            .expect("validated network has layers")
            .out_shape
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape()[0]
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..]
        {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} does not match [batch, {:?}]",
                self.spec.input_shape
            )));
        }
        Ok(shape[0])
    }

    fn trace(&self, batch: &Tensor, training: bool) -> Result<Trace> {
        let n = self.check_batch(batch)?;
        let mut activations = Vec::with_capacity(self.plan.len() + 1);
        let mut caches = Vec::with_capacity(self.plan.len());
        let mut running = Vec::new();
        activations.push(batch.clone());
        for layer in &self.plan {
            let input = activations.last().unwrap().data();
            let mut out_shape = vec![n];
            out_shape.extend_from_slice(&layer.out_shape);
            let mut output = vec![0.0; out_shape.iter().product()];
            let params = &self.params[layer.params.clone()];
            let cache = match layer.spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    layers::dense_forward(n, in_dim, out_dim, params, input, &mut output);
                    Cache::None
                }
                LayerSpec::Conv2D { out_channels, .. } => {
                    layers::conv_forward(
                        &layer.conv_geometry(),
                        out_channels,
                        params,
                        input,
                        &mut output,
                    );
                    Cache::None
                }
                LayerSpec::MaxPool2D { .. } => Cache::Pool(layers::max_pool_forward(
                    &layer.pool_geometry(),
                    n,
                    input,
                    &mut output,
                )),
                LayerSpec::BatchNorm {
                    num_features,
                    epsilon,
                    momentum,
                } => {
                    let spatial = layer.spatial();
                    if training {
                        let (cache, mean, var) = layers::batch_norm_forward_train(
                            n,
                            num_features,
                            spatial,
                            epsilon,
                            params,
                            input,
                            &mut output,
                        );
                        let old = &self.buffers[layer.buffers.clone()];
                        let updated: Vec<f64> = mean
                            .iter()
                            .chain(&var)
                            .zip(old)
                            .map(|(batch_stat, running)| {
                                momentum * running + (1.0 - momentum) * batch_stat
                            })
                            .collect();
                        running.push((layer.buffers.clone(), updated));
                        Cache::BatchNorm(cache)
                    } else {
                        layers::batch_norm_forward_eval(
                            num_features,
                            spatial,
                            epsilon,
                            params,
                            &self.buffers[layer.buffers.clone()],
                            input,
                            &mut output,
                        );
                        Cache::None
                    }
                }
                LayerSpec::ReLU => {
                    for (o, x) in output.iter_mut().zip(input) {
                        *o = x.max(0.0);
                    }
                    Cache::None
                }
                LayerSpec::Flatten => {
                    output.copy_from_slice(input);
                    Cache::None
                }
                LayerSpec::Softmax => {
                    layers::softmax_rows(layer.out_shape[0], input, &mut output);
                    Cache::None
                }
            };
            activations.push(Tensor::from_parts(out_shape, output));
            caches.push(cache);
        }
        Ok(Trace {
            activations,
            caches,
            running,
        })
    }

    fn scores_of(probabilities: &Tensor) -> Vec<ClassScores> {
        (0..probabilities.batch_size())
            .map(|i| ClassScores::from_softmax_row(probabilities.row(i).to_vec()))
            .collect()
    }

    /// Forward pass. In training mode BatchNorm normalizes with batch
    /// statistics and updates its running statistics.
    pub fn forward(&mut self, batch: &Tensor, training: bool) -> Result<Vec<ClassScores>> {
        let trace = self.trace(batch, training)?;
        self.apply_running(trace.running);
        Ok(Self::scores_of(trace.activations.last().unwrap()))
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<ClassScores>> {
        let trace = self.trace(batch, false)?;
        Ok(Self::scores_of(trace.activations.last().unwrap()))
    }

    /// Mean cross-entropy of a training-mode pass without touching any state.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        self.check_labels(batch, labels)?;
        let trace = self.trace(batch, true)?;
        let logits = &trace.activations[trace.activations.len() - 2];
        Ok(layers::cross_entropy(
            self.num_classes(),
            logits.data(),
            labels,
        ))
    }

    fn check_labels(&self, batch: &Tensor, labels: &[usize]) -> Result<()> {
        let n = self.check_batch(batch)?;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        let c = self.num_classes();
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {c})"
            )));
        }
        Ok(())
    }

    /// Training-mode loss and gradients with respect to every parameter and
    /// the input. Pure: running statistics are not updated.
    pub fn gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<Gradients> {
        self.check_labels(batch, labels)?;
        let trace = self.trace(batch, true)?;
        Ok(self.backprop(&trace, labels))
    }

    /// Training-mode loss and parameter gradients; BatchNorm running
    /// statistics are updated as a side effect of the forward pass.
    pub fn backward(&mut self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_labels(batch, labels)?;
        let trace = self.trace(batch, true)?;
        let grads = self.backprop(&trace, labels);
        self.apply_running(trace.running);
        Ok((grads.loss, grads.params))
    }

    fn apply_running(&mut self, running: Vec<(std::ops::Range<usize>, Vec<f64>)>) {
        for (range, values) in running {
            self.buffers[range].copy_from_slice(&values);
        }
    }

    fn backprop(&self, trace: &Trace, labels: &[usize]) -> Gradients {
        let n = labels.len();
        let c = self.num_classes();
        let depth = self.plan.len();
        let logits = &trace.activations[depth - 1];
        let loss = layers::cross_entropy(c, logits.data(), labels);

        // Softmax + cross-entropy: d loss / d logits = (p - onehot) / n.
        let probs = trace.activations[depth].data();
        let mut grad: Vec<f64> = probs.iter().map(|p| p / n as f64).collect();
        for (i, &y) in labels.iter().enumerate() {
            grad[i * c + y] -= 1.0 / n as f64;
        }

        let mut grad_params = vec![0.0; self.params.len()];
        for l in (0..depth - 1).rev() {
            let layer = &self.plan[l];
            let input = trace.activations[l].data();
            let mut grad_in = vec![0.0; input.len()];
            let params = &self.params[layer.params.clone()];
            let gp = &mut grad_params[layer.params.clone()];
            match (&layer.spec, &trace.caches[l]) {
                (&LayerSpec::Dense { in_dim, out_dim }, _) => {
                    layers::dense_backward(
                        n,
                        in_dim,
                        out_dim,
                        params,
                        input,
                        &grad,
                        gp,
                        &mut grad_in,
                    );
                }
                (&LayerSpec::Conv2D { out_channels, .. }, _) => {
                    layers::conv_backward(
                        &layer.conv_geometry(),
                        out_channels,
                        params,
                        input,
                        &grad,
                        gp,
                        &mut grad_in,
                    );
                }
                (LayerSpec::MaxPool2D { .. }, Cache::Pool(argmax)) => {
                    layers::max_pool_backward(argmax, &grad, &mut grad_in);
                }
                (&LayerSpec::BatchNorm { num_features, .. }, Cache::BatchNorm(cache)) => {
                    layers::batch_norm_backward(
                        n,
                        num_features,
                        layer.spatial(),
                        params,
                        cache,
                        &grad,
                        gp,
                        &mut grad_in,
                    );
                }
                (LayerSpec::ReLU, _) => {
                    for ((gi, g), x) in grad_in.iter_mut().zip(&grad).zip(input) {
                        *gi = if *x > 0.0 { *g } else { 0.0 };
                    }
                }
                (LayerSpec::Flatten, _) => grad_in.copy_from_slice(&grad),
                _ => unreachable!("layer/cache mismatch in backprop"),
            }
            grad = grad_in;
        }
        Gradients {
            loss,
            params: grad_params,
            input: Tensor::from_parts(trace.activations[0].shape().to_vec(), grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_softmax_parameter_count() {
        let spec = NetworkSpec::new(vec![4], vec![LayerSpec::dense(4, 3), LayerSpec::Softmax], 0);
        assert_eq!(build_network(&spec).unwrap().param_count(), 15);
    }

    #[test]
    fn conv_output_shape_in_network() {
        let spec = NetworkSpec::new(
            vec![1, 5, 5],
            vec![
                LayerSpec::conv(1, 2, 3, 1),
                LayerSpec::Flatten,
                LayerSpec::dense(18, 2),
                LayerSpec::Softmax,
            ],
            0,
        );
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[1], vec![2, 3, 3]);
    }

    #[test]
    fn incompatible_pair_is_named() {
        let spec = NetworkSpec::new(
            vec![4],
            vec![
                LayerSpec::dense(4, 3),
                LayerSpec::dense(5, 2),
                LayerSpec::Softmax,
            ],
            0,
        );
        let err = build_network(&spec).unwrap_err().to_string();
        assert!(err.contains("layer 0 Dense(4->3)"), "{err}");
        assert!(err.contains("layer 1 Dense(5->2)"), "{err}");
    }

    #[test]
    fn softmax_must_be_final() {
        let spec = NetworkSpec::new(vec![4], vec![LayerSpec::dense(4, 3)], 0);
        assert!(build_network(&spec).is_err());
        let spec = NetworkSpec::new(vec![3], vec![LayerSpec::Softmax, LayerSpec::Softmax], 0);
        assert!(build_network(&spec).is_err());
    }

    #[test]
    fn softmax_only_network_is_uniform_on_zero_logits() {
        let mut net =
            build_network(&NetworkSpec::new(vec![3], vec![LayerSpec::Softmax], 0)).unwrap();
        let out = net.forward(&Tensor::zeros(vec![1, 3]), false).unwrap();
        for v in out[0].values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_edges() {
        let net = build_network(&NetworkSpec::new(vec![3], vec![LayerSpec::Softmax], 0)).unwrap();
        let confident = Tensor::new(vec![1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.loss(&confident, &[0]).unwrap(), 0.0);
        let net = build_network(&NetworkSpec::new(vec![16], vec![LayerSpec::Softmax], 0)).unwrap();
        let loss = net.loss(&Tensor::zeros(vec![2, 16]), &[0, 5]).unwrap();
        assert!((loss - 16f64.ln()).abs() < 1e-12);
        assert!((loss - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn invalid_labels_and_shapes_error() {
        let net = build_network(&NetworkSpec::new(vec![3], vec![LayerSpec::Softmax], 0)).unwrap();
        assert!(matches!(
            net.gradients(&Tensor::zeros(vec![1, 3]), &[3]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            net.predict(&Tensor::zeros(vec![1, 4])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn from_parts_checks_counts() {
        let spec = NetworkSpec::new(vec![4], vec![LayerSpec::dense(4, 3), LayerSpec::Softmax], 0);
        assert!(Network::from_parts(spec.clone(), vec![0.0; 14], vec![]).is_err());
        assert!(Network::from_parts(spec, vec![0.0; 15], vec![]).is_ok());
    }

    #[test]
    fn initialization_is_seeded() {
        let spec = NetworkSpec::new(vec![4], vec![LayerSpec::dense(4, 3), LayerSpec::Softmax], 7);
        let a = build_network(&spec).unwrap();
        let b = build_network(&spec).unwrap();
        assert_eq!(a.params(), b.params());
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(a.params()[..12].iter().all(|w| w.abs() <= limit));
        assert!(a.params()[12..].iter().all(|b| *b == 0.0));
        let other = build_network(&NetworkSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.params(), other.params());
    }

    #[test]
    fn batch_norm_training_normalizes() {
        let spec = NetworkSpec::new(
            vec![3],
            vec![LayerSpec::batch_norm(3), LayerSpec::Softmax],
            0,
        );
        let net = build_network(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..3 * 64).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let batch = Tensor::new(vec![64, 3], data).unwrap();
        let trace = net.trace(&batch, true).unwrap();
        let Cache::BatchNorm(cache) = &trace.caches[0] else {
            panic!()
        };
        for f in 0..3 {
            let col: Vec<f64> = (0..64).map(|b| cache.normalized[b * 3 + f]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
