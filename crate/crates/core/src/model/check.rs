//! End-to-end gradient check of the full training objective on a small
//! model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::example::{Candidate, EncodedExample, TrainingExample};
use super::network::Dbpman;
use super::pam::batch_views;
use crate::behavior::{BehaviorSequence, BehaviorType, RawEvent};
use crate::error::Result;
use crate::ndiff::{grad_check, GaussianInit, GradCheckReport};

/// Largest acceptable relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Initial central-difference step.
pub const GRADCHECK_EPS: f64 = 3e-4;
/// Scale of the random point the gradients are checked at. Every
/// parameter, biases included, is drawn from `N(0, std²)` so that scores
/// are well separated and no activation sits exactly on a ReLU kink.
pub const GRADCHECK_INIT_STD: f64 = 0.3;
pub const GRADCHECK_BATCH: usize = 4;

/// `n` random examples valid for `cfg`, each with at least `cfg.t - 1`
/// clicks in its history.
pub fn random_examples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = cfg.vocab.items as u64 - 1;
    let cats = cfg.vocab.categories as u64 - 1;
    (0..n)
        .map(|i| {
            let len = rng.random_range(cfg.l..=cfg.l * (cfg.t + 1));
            let raw: Vec<RawEvent> = (0..len)
                .map(|ts| RawEvent {
                    item: rng.random_range(1..=items),
                    category: rng.random_range(1..=cats),
                    kind: match rng.random_range(0..10) {
                        0..=3 => BehaviorType::Click,
                        4..=8 => BehaviorType::Impression,
                        _ => BehaviorType::Order,
                    },
                    ts: ts as i64 * 60,
                })
                .collect();
            TrainingExample {
                user: rng.random_range(1..cfg.vocab.users as u64),
                candidate: Candidate {
                    item: rng.random_range(1..=items),
                    category: rng.random_range(1..=cats),
                },
                label: (i % 2) as u8,
                history: BehaviorSequence::from_raw(&raw, len as i64 * 60, usize::MAX),
            }
        })
        .collect()
}

/// Check reverse-mode gradients of the full loss (log loss plus the
/// contrastive term) of the miniature model against central differences,
/// over every parameter.
pub fn gradcheck_miniature(seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::miniature();
    let mut model = Dbpman::new(cfg.clone(), seed)?;
    let mut init = GaussianInit::new(seed.wrapping_add(1), GRADCHECK_INIT_STD);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let shape = model.store.get(id).shape().to_vec();
        *model.store.get_mut(id) = init.tensor(&shape);
    }
    let examples: Vec<EncodedExample> = random_examples(&cfg, GRADCHECK_BATCH, seed ^ 0x5eed)
        .iter()
        .map(|e| EncodedExample::new(e, &cfg))
        .collect::<Result<_>>()?;
    let batch: Vec<&EncodedExample> = examples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = batch_views(&batch, cfg.l, cfg.mask_ratio, cfg.pam_max_paths, &mut rng);
    grad_check(&model.store, &[], GRADCHECK_EPS, |g| {
        let (nodes, _) = model.loss(g, &batch, Some(&views))?;
        Ok(nodes.total)
    })
}
