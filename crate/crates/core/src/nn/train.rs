//! Plain SGD driven by the per-epoch cosine schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::schedule::CosineBatchSchedule;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: CosineBatchSchedule,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl TrainConfig {
    /// A config whose schedule length matches `num_samples` split into
    /// batches of `batch_size` (the last batch may be short).
    pub fn for_samples(
        epochs: usize,
        batch_size: usize,
        l_max: f64,
        l_min: f64,
        seed: u64,
        num_samples: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(TrainConfig {
            epochs,
            batch_size,
            schedule: CosineBatchSchedule::new(
                l_max,
                l_min,
                batches_per_epoch(num_samples, batch_size),
            )?,
            seed,
        })
    }

    /// Refits the schedule length to a dataset of `num_samples`, clamping the
    /// batch size to the dataset size.
    pub fn fitted_to(&self, num_samples: usize) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let batch_size = self.batch_size.min(num_samples);
        Ok(TrainConfig {
            batch_size,
            schedule: self
                .schedule
                .with_batches(batches_per_epoch(num_samples, batch_size))?,
            ..self.clone()
        })
    }
}

pub fn batches_per_epoch(num_samples: usize, batch_size: usize) -> usize {
    num_samples.div_ceil(batch_size).max(1)
}

/// Something SGD can update: a flat parameter vector with a batch gradient.
pub trait Objective {
    fn parameters_mut(&mut self) -> &mut [f64];

    /// Mean loss and gradient over the samples in `batch`.
    fn batch_gradient(&mut self, epoch: usize, batch: &[usize]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Learning rate used for every batch, grouped by epoch.
    pub rates: Vec<Vec<f64>>,
    /// Sample-weighted mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Runs `config.epochs` epochs of plain SGD over `num_samples` samples.
///
/// Every epoch draws a fresh permutation from a generator seeded once with
/// `config.seed`, splits it into consecutive batches, and steps batch `k`
/// with `schedule.rate(k)`.
pub fn run_sgd(
    objective: &mut dyn Objective,
    num_samples: usize,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be positive".into()));
    }
    if config.batch_size == 0 || config.batch_size > num_samples {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must be in [1, {num_samples}]",
            config.batch_size
        )));
    }
    let n_batches = batches_per_epoch(num_samples, config.batch_size);
    if config.schedule.batches_per_epoch() != n_batches {
        return Err(Error::InvalidArgument(format!(
            "schedule expects {} batches per epoch, data yields {n_batches}",
            config.schedule.batches_per_epoch()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..num_samples).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut rates = Vec::with_capacity(n_batches);
        let mut loss_sum = 0.0;
        for (k, batch) in order.chunks(config.batch_size).enumerate() {
            let rate = config.schedule.rate(k)?;
            let (loss, grads) = objective.batch_gradient(epoch, batch)?;
            let params = objective.parameters_mut();
            if grads.len() != params.len() {
                return Err(Error::Shape(format!(
                    "gradient has {} entries for {} parameters",
                    grads.len(),
                    params.len()
                )));
            }
            for (p, g) in params.iter_mut().zip(&grads) {
                *p -= rate * g;
            }
            rates.push(rate);
            loss_sum += loss * batch.len() as f64;
        }
        log.rates.push(rates);
        log.epoch_losses.push(loss_sum / num_samples as f64);
    }
    Ok(log)
}

/// Labelled samples the network trainer can draw from. `fill` receives the
/// epoch so sources may re-augment per epoch.
pub trait TrainingData: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample_shape(&self) -> &[usize];

    fn label(&self, index: usize) -> usize;

    fn fill(&self, index: usize, epoch: usize, out: &mut [f64]) -> Result<()>;
}

/// Samples held in one flat buffer.
#[derive(Debug, Clone)]
pub struct InMemoryData {
    shape: Vec<usize>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl InMemoryData {
    pub fn new(shape: Vec<usize>, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || inputs.len() != per * labels.len() {
            return Err(Error::Shape(format!(
                "{} values for {} samples of shape {shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(InMemoryData {
            shape,
            inputs,
            labels,
        })
    }

    pub fn from_tensor(samples: Tensor, labels: Vec<usize>) -> Result<Self> {
        let shape = samples.shape()[1..].to_vec();
        Self::new(shape, samples.into_data(), labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl TrainingData for InMemoryData {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn sample_shape(&self) -> &[usize] {
        &self.shape
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn fill(&self, index: usize, _epoch: usize, out: &mut [f64]) -> Result<()> {
        let per = out.len();
        out.copy_from_slice(&self.inputs[index * per..(index + 1) * per]);
        Ok(())
    }
}

/// Gathers the samples at `indices` into one batch tensor.
pub fn gather_batch(
    data: &dyn TrainingData,
    indices: &[usize],
    epoch: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let per: usize = data.sample_shape().iter().product();
    let mut values = vec![0.0; per * indices.len()];
    for (slot, &i) in values.chunks_mut(per).zip(indices) {
        data.fill(i, epoch, slot)?;
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(data.sample_shape());
    let labels = indices.iter().map(|&i| data.label(i)).collect();
    Ok((Tensor::new(shape, values)?, labels))
}

struct NetworkObjective<'a> {
    network: &'a mut Network,
    data: &'a dyn TrainingData,
}

impl Objective for NetworkObjective<'_> {
    fn parameters_mut(&mut self) -> &mut [f64] {
        self.network.params_mut()
    }

    fn batch_gradient(&mut self, epoch: usize, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let (inputs, labels) = gather_batch(self.data, batch, epoch)?;
        let (loss, grads) = self.network.backward(&inputs, &labels)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite loss or gradient in epoch {epoch}"
            )));
        }
        Ok((loss, grads))
    }
}

/// Trains `network` in place with cross-entropy loss.
pub fn sgd_train(
    network: &mut Network,
    data: &dyn TrainingData,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.sample_shape() != network.input_shape() {
        return Err(Error::Shape(format!(
            "samples of shape {:?} for a network expecting {:?}",
            data.sample_shape(),
            network.input_shape()
        )));
    }
    let n = data.len();
    let mut objective = NetworkObjective { network, data };
    run_sgd(&mut objective, n, config)
}
