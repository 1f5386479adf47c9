//! Mini-batch training of the encoder against `L + Q`.
//!
//! Every step forms all in-batch pairs. Pair weights come from the global
//! similarity graph, divided by the graph's mean weight so that the degree
//! scaling changes the relative emphasis between pairs but not the overall
//! step size. The objective is reduced as mean-over-pairs plus
//! mean-over-points.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::encoder::{backward_and_step, init_encoder, Encoder, EncoderSpec, MomentumSgd};
use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::loss::{objective_and_gradient, AlphaMode, LossConfig, Reduction, WeightedPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` every `every` epochs.
    Step { factor: f64, every: usize },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { factor, every } => base * factor.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub fch_lr_multiplier: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 50,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            fch_lr_multiplier: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be >= 0, got {}", self.lr)));
        }
        if let LrSchedule::Step { factor, every } = self.lr_schedule {
            if factor.is_nan() || factor <= 0.0 || every == 0 {
                return Err(Error::InvalidConfig("step schedule needs factor > 0 and every >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_pair_loss: f64,
    pub mean_quant_loss: f64,
    /// Mean `| |z| - 1 |` over the codes seen during the epoch.
    pub mean_quant_error: f64,
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub encoder: Encoder,
    pub log: Vec<EpochRecord>,
}

/// Splits a permutation into batches of `size`; a trailing batch smaller than
/// two is merged into its predecessor.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

pub fn train(
    dataset: &LabeledDataset,
    graph: &SimilarityGraph,
    spec: &EncoderSpec,
    loss_config: &LossConfig,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    loss_config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.len() < 2 {
        return Err(Error::BatchTooSmall(dataset.len()));
    }
    if graph.n() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: graph.n(),
        });
    }
    if spec.input_dim != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            found: spec.input_dim,
        });
    }

    let mut encoder = init_encoder(spec, config.seed)?;
    let mut optimizer = MomentumSgd::new(
        &encoder,
        config.momentum,
        config.weight_decay,
        config.fch_lr_multiplier,
    )?;
    let step_config = LossConfig {
        reduction: Reduction::Mean,
        ..loss_config.clone()
    };
    let alpha_norm = match loss_config.alpha_mode {
        AlphaMode::Unit => 1.0,
        AlphaMode::Degree | AlphaMode::FocalPt => graph.mean_alpha().unwrap_or(1.0),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.lr_schedule.rate(config.lr, epoch);
        let (mut sum_l, mut sum_q, mut sum_err) = (0.0, 0.0, 0.0);
        let mut skipped = 0usize;
        let steps = batches(&order, config.batch_size.min(dataset.len()));
        for batch in &steps {
            let x = dataset.feature_rows(batch);
            let (mut codes, cache) = encoder.forward(&x, batch.len())?;
            let sampled = graph.sample_pairs(batch)?;
            let mut pairs = Vec::with_capacity(sampled.len());
            for p in &sampled {
                let alpha = match loss_config.alpha_mode {
                    AlphaMode::Unit => 1.0,
                    _ => match graph.alpha(p.i, p.j) {
                        Ok(a) => a / alpha_norm,
                        Err(Error::DegenerateDegree { .. }) => {
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    },
                };
                pairs.push(WeightedPair {
                    left: p.left,
                    right: p.right,
                    similar: p.similar,
                    alpha,
                });
            }
            let points: Vec<usize> = (0..batch.len()).collect();
            let obj = objective_and_gradient(&mut codes, &pairs, &points, &step_config)?;
            sum_l += obj.pair_loss;
            sum_q += obj.quant_loss;
            sum_err += codes.mean_quantization_error();
            backward_and_step(&mut encoder, &cache, &codes, &mut optimizer, lr)?;
        }
        if skipped > 0 {
            log::warn!("epoch {epoch}: skipped {skipped} pairs with degenerate degree");
        }
        let n = steps.len() as f64;
        let record = EpochRecord {
            epoch,
            mean_pair_loss: sum_l / n,
            mean_quant_loss: sum_q / n,
            mean_quant_error: sum_err / n,
            skipped_pairs: skipped,
        };
        log::debug!(
            "epoch {epoch}: L = {:.6}, Q = {:.6}, quant error = {:.4}",
            record.mean_pair_loss,
            record.mean_quant_loss,
            record.mean_quant_error
        );
        log.push(record);
    }

    Ok(TrainOutput { encoder, log })
}

/// Codes for every dataset item, in order.
pub fn encode_dataset(encoder: &Encoder, dataset: &LabeledDataset) -> Result<crate::loss::CodeBatch> {
    encoder.encode(&dataset.feature_matrix(), dataset.len())
}

pub fn write_log_csv<W: Write>(mut out: W, log: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,mean_pair_loss,mean_quant_loss,mean_quant_error,skipped_pairs")?;
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.mean_pair_loss, r.mean_quant_loss, r.mean_quant_error, r.skipped_pairs
        )?;
    }
    Ok(())
}
