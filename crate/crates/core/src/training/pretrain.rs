//! The pretraining loop: corrupt, encode, classify, backpropagate, update.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CellVocab, Table};
use crate::corruption::{corrupt, table_rng, CorruptionConfig, CorruptionRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{zeros_like, ModelParams, ParamSet};
use crate::training::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::training::batching::{make_batches, DEFAULT_MAX_CELLS};
use crate::training::objective::accumulate_table_gradients;
use crate::util::derived_rng;

/// Tables per gradient partial sum. Partial sums are reduced in a fixed order,
/// so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub max_cells: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 7,
            lr: 1e-5,
            max_cells: DEFAULT_MAX_CELLS,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

/// Mean loss over all eligible cells of a batch and the gradient of that mean.
pub fn batch_gradients(
    model: &Model<f32>,
    records: &[CorruptionRecord],
    dropout_seed: Option<(u64, u64)>,
) -> Result<(f64, ModelParams<f32>)> {
    let partials: Vec<Result<(f64, usize, ModelParams<f32>)>> = records
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = zeros_like(&model.params);
            let mut loss = 0.0;
            let mut cells = 0;
            for (k, rec) in chunk.iter().enumerate() {
                let mut rng = dropout_seed.map(|(seed, step)| {
                    derived_rng(
                        seed,
                        &[b"dropout", &step.to_le_bytes(), &((c * CHUNK + k) as u64).to_le_bytes()],
                    )
                });
                let rng = rng.as_mut().map(|r| r as &mut dyn rand::RngCore);
                let (l, n) = accumulate_table_gradients(model, rec, &mut grads, rng)?;
                loss += l;
                cells += n;
            }
            Ok((loss, cells, grads))
        })
        .collect();
    let mut total = zeros_like(&model.params);
    let mut loss = 0.0;
    let mut cells = 0;
    for p in partials {
        let (l, n, g) = p?;
        loss += l;
        cells += n;
        total.add_scaled(&g, 1.0);
    }
    if cells == 0 {
        return Err(Error::NoEligibleCells);
    }
    total.scale(1.0 / cells as f32);
    Ok((loss / cells as f64, total))
}

/// Model plus optimizer state.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub clip_norm: Option<f64>,
    pub dropout_seed: u64,
}

impl Trainer {
    pub fn new(model: Model<f32>, lr: f64, clip_norm: Option<f64>) -> Self {
        let adam = AdamState::new(&model.params, AdamConfig::with_lr(lr));
        Trainer {
            model,
            adam,
            clip_norm,
            dropout_seed: 0,
        }
    }

    /// One optimizer step on a batch of corrupted tables; returns the batch
    /// loss before the update.
    pub fn step(&mut self, records: &[CorruptionRecord]) -> Result<f64> {
        let dropout = (self.model.config.encoder.dropout > 0.0).then_some((self.dropout_seed, self.adam.step));
        let (loss, mut grads) = batch_gradients(&self.model, records, dropout)?;
        if let Some(max) = self.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        if !self.model.config.classifier_bias {
            grads.classifier_b.fill(0.0);
        }
        adam_step(&mut self.model.params, &grads, &mut self.adam)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PretrainReport {
    pub batch_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Corrupts `tables` afresh every epoch and trains the model to detect the
/// corrupted cells. `on_epoch` runs after each epoch (e.g. to checkpoint).
pub fn pretrain(
    model: Model<f32>,
    tables: &[Table],
    vocab: &CellVocab,
    corruption: &CorruptionConfig,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, &Model<f32>) -> Result<()>,
) -> Result<(Model<f32>, PretrainReport)> {
    corruption.validate()?;
    let mut trainer = Trainer::new(model, cfg.lr, cfg.clip_norm);
    trainer.dropout_seed = cfg.seed;
    let mut report = PretrainReport::default();
    for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        let batches = make_batches(tables, cfg.max_cells, epoch_seed, true)?;
        let mut sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let records: Vec<CorruptionRecord> = batch
                .par_iter()
                .map(|&i| {
                    let t = &tables[i];
                    let mut rng = table_rng(corruption.seed ^ cfg.seed, epoch as u64, &format!("{i}/{}", t.id));
                    corrupt(t, corruption, vocab, &mut rng)
                })
                .collect();
            let loss = trainer.step(&records)?;
            log::debug!("epoch {epoch} batch {b} loss {loss:.5}");
            report.batch_losses.push(loss);
            sum += loss;
        }
        let mean = if batches.is_empty() {
            0.0
        } else {
            sum / batches.len() as f64
        };
        log::info!("epoch {epoch} mean loss {mean:.5} over {} batches", batches.len());
        report.epoch_losses.push(mean);
        on_epoch(epoch, &trainer.model)?;
    }
    Ok((trainer.model, report))
}
