//! End-to-end steps shared by the command-line tool and the experiments:
//! build a split, train a variant, evaluate it.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{
    assemble_examples, generate_synthetic, ingest_events, to_examples, BehaviorMapping, ExampleRecord, Ingested,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{config_hash, EvalReport};
use crate::model::{encode_all, Dbpman, EncodedExample, ModelConfig, Trainer, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<ExampleRecord>,
    pub test: Vec<ExampleRecord>,
}

/// Training users from `cfg.synth`, and `cfg.test_users` further users
/// generated with the same patterns but disjoint ids and histories.
pub fn synthetic_split(cfg: &RunConfig) -> Result<Split> {
    let train = generate_synthetic(&cfg.synth)?;
    let test = generate_synthetic(&SynthConfig {
        n_users: cfg.test_users,
        user_offset: cfg.synth.user_offset + cfg.synth.n_users,
        ..cfg.synth.clone()
    })?;
    Ok(Split {
        train: train.records(),
        test: test.records(),
    })
}

/// Counts from building a split out of an event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub lines: usize,
    pub skipped_lines: usize,
    pub truncated_events: usize,
    pub users: usize,
    pub users_without_click: usize,
}

/// Ingest an event log, assemble examples with negative sampling and send
/// a seeded `test_fraction` of the users to the test split.
pub fn ingest_split(cfg: &RunConfig, csv: &Path, mapping: &BehaviorMapping) -> Result<(Split, IngestSummary)> {
    let Ingested {
        users,
        lines,
        skipped,
        truncated,
    } = ingest_events(csv, mapping, cfg.t_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assembled = assemble_examples(&users, cfg.neg_ratio, &mut rng)?;
    let mut ids: Vec<u64> = users.iter().map(|u| u.user).collect();
    ids.shuffle(&mut rng);
    let n_test = (ids.len() as f64 * cfg.test_fraction).round() as usize;
    let test_ids: std::collections::HashSet<u64> = ids[..n_test].iter().copied().collect();
    let (test, train) = assembled
        .records
        .into_iter()
        .partition(|r| test_ids.contains(&r.user));
    let summary = IngestSummary {
        lines,
        skipped_lines: skipped,
        truncated_events: truncated,
        users: users.len(),
        users_without_click: assembled.skipped_users,
    };
    Ok((Split { train, test }, summary))
}

/// The same records with labels permuted among them.
pub fn shuffle_labels(records: &[ExampleRecord], seed: u64) -> Vec<ExampleRecord> {
    let mut labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    records
        .iter()
        .zip(labels)
        .map(|(r, label)| ExampleRecord { label, ..r.clone() })
        .collect()
}

pub fn encode(records: &[ExampleRecord], model: &ModelConfig, t_max: usize) -> Result<Vec<EncodedExample>> {
    if records.is_empty() {
        return Err(Error::Data("no examples".into()));
    }
    encode_all(&to_examples(records, t_max)?, model)
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: Dbpman,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Train `variant` from a fresh initialization seeded by `cfg.seed`.
/// `on_epoch` sees each epoch's index and mean loss.
pub fn train_variant(
    cfg: &RunConfig,
    variant: Variant,
    data: &[EncodedExample],
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedRun> {
    let start = Instant::now();
    let model = Dbpman::new(cfg.model_for(variant), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train_config())?;
    let mut epoch_losses = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let loss = trainer.epoch(data)?;
        on_epoch(epoch, loss);
        epoch_losses.push(loss);
    }
    Ok(TrainedRun {
        model: trainer.into_model(),
        epoch_losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// AUC and log loss of `model` on `data`; the hash identifies the model
/// configuration.
pub fn evaluate(model: &Dbpman, data: &[EncodedExample], batch: usize) -> Result<EvalReport> {
    let start = Instant::now();
    let preds = model.predict(data, batch)?;
    let labels: Vec<u8> = data.iter().map(|e| e.label as u8).collect();
    EvalReport::evaluate(&preds, &labels, config_hash(&model.config)?, start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub seed: u64,
    pub report: EvalReport,
    pub train_seconds: f64,
}

/// Train and evaluate every ablation variant on one split with one seed.
pub fn ablate(
    cfg: &RunConfig,
    train: &[EncodedExample],
    test: &[EncodedExample],
    mut on_epoch: impl FnMut(Variant, usize, f64),
) -> Result<Vec<VariantResult>> {
    Variant::ALL
        .iter()
        .map(|&variant| {
            let run = train_variant(cfg, variant, train, |e, l| on_epoch(variant, e, l))?;
            Ok(VariantResult {
                variant,
                seed: cfg.seed,
                report: evaluate(&run.model, test, cfg.eval_batch)?,
                train_seconds: run.seconds,
            })
        })
        .collect()
}
