use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::example::EncodedExample;
use super::network::Dbpman;
use super::pam::batch_views;
use crate::error::{Error, Result};
use crate::ndiff::{AdamState, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seed for shuffling and augmentation masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            epochs: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub main: f64,
    pub contrastive: Option<f64>,
}

/// Mini-batch Adam training of a [`Dbpman`].
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Dbpman,
    pub config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    pub history: Vec<StepLoss>,
}

impl Trainer {
    pub fn new(model: Dbpman, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::with_betas(&model.store, config.beta1, config.beta2, config.eps);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            adam,
            rng,
            history: Vec::new(),
        })
    }

    /// One Adam step on `batch`.
    pub fn step(&mut self, batch: &[&EncodedExample]) -> Result<StepLoss> {
        let mc = &self.model.config;
        let views = mc
            .use_pam
            .then(|| batch_views(batch, mc.l, mc.mask_ratio, mc.pam_max_paths, &mut self.rng));
        let (loss, grads) = {
            let mut g = Graph::new(&self.model.store);
            let (nodes, _) = self.model.loss(&mut g, batch, views.as_ref())?;
            let loss = StepLoss {
                total: g.value(nodes.total).item(),
                main: g.value(nodes.main).item(),
                contrastive: nodes.contrastive.map(|c| g.value(c).item()),
            };
            if !loss.total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            (loss, g.backward(nodes.total)?)
        };
        self.adam.step(&mut self.model.store, &grads, self.config.lr)?;
        self.history.push(loss);
        Ok(loss)
    }

    /// One pass over `data` in a freshly shuffled order. Returns the mean
    /// total loss.
    pub fn epoch(&mut self, data: &[EncodedExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("no training examples".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &data[i]).collect();
            sum += self.step(&batch)?.total;
            steps += 1;
        }
        Ok(sum / steps as f64)
    }

    /// Run all configured epochs; returns the mean loss of each.
    pub fn fit(&mut self, data: &[EncodedExample]) -> Result<Vec<f64>> {
        (0..self.config.epochs).map(|_| self.epoch(data)).collect()
    }

    pub fn into_model(self) -> Dbpman {
        self.model
    }
}
