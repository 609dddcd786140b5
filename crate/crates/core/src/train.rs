//! SGD training on `L = L_d + beta · L_r`.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, EncodedPair, PaddedBatch, Vocabulary};
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::metrics::evaluate_model;
use crate::model::NmtModel;
use crate::tensor::{Gradients, Graph, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Steps between checkpoints; epoch ends always checkpoint.
    pub checkpoint_interval: Option<usize>,
    /// Sort batches by source length.
    pub bucketing: bool,
    /// Stop after this many steps even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            dropout: 0.2,
            batch_size: 32,
            epochs: 30,
            beta: 0.1,
            grad_clip_norm: Some(5.0),
            seed: 1234,
            checkpoint_interval: None,
            bucketing: true,
            max_steps: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if let Some(c) = self.grad_clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad clip norm {c} must be > 0")));
            }
        }
        if self.checkpoint_interval == Some(0) {
            return Err(Error::Config("checkpoint interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss values of one update, measured before the parameters moved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_d: f64,
    /// 0 when `beta = 0`.
    pub l_r: f64,
    pub total: f64,
    /// `exp` of the mean per-token cross-entropy of the batch.
    pub perplexity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub last_step: usize,
    pub dev_perplexity: Option<f64>,
    pub dev_bleu: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

pub const TSV_HEADER: &str = "step\tL_d\tL_r\tL\tppl";

impl StepRecord {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.step, self.l_d, self.l_r, self.total, self.perplexity
        )
    }
}

impl TrainingLog {
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TSV_HEADER}")?;
        for r in &self.steps {
            writeln!(out, "{}", r.tsv_row())?;
        }
        Ok(())
    }
}

/// Callbacks from [`train`]. Every method defaults to doing nothing.
pub trait TrainHooks {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_interval` steps and at each epoch end.
    fn checkpoint(&mut self, _model: &NmtModel, _step: usize, _epoch_end: bool) -> Result<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        store.scale_grads(factor);
        factor
    } else {
        1.0
    }
}

/// Zeroes, accumulates `grads`, clips and takes one SGD step.
fn apply_update(store: &mut ParamStore, grads: &Gradients, config: &TrainingConfig) {
    store.zero_grads();
    store.accumulate(grads);
    if let Some(cap) = config.grad_clip_norm {
        clip_gradients(store, cap);
    }
    store.sgd_step(config.learning_rate);
}

/// One SGD update on `batch`. `step` names the update in diagnostics and
/// `dropout_seed` drives the dropout masks.
pub fn train_step(
    model: &mut NmtModel,
    batch: &PaddedBatch,
    config: &TrainingConfig,
    step: usize,
    dropout_seed: u64,
) -> Result<StepRecord> {
    if batch.batch_size() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut g = Graph::with_dropout(config.dropout, dropout_seed);
    let losses = model.losses(&mut g, batch, config.beta)?;
    let l_d = g.value(losses.decoder).item();
    let l_r = losses.reconstructor.map_or(0.0, |v| g.value(v).item());
    let total = g.value(losses.total).item();
    if !(l_d.is_finite() && l_r.is_finite() && total.is_finite()) {
        return Err(Error::NonFinite { step, l_d, l_r });
    }
    let nll = g.value(losses.nll_sum).item();
    let grads = g.backward(losses.total)?;
    // Release the graph's references so the update writes in place.
    drop(g);
    apply_update(model.params_mut(), &grads, config);
    Ok(StepRecord {
        step,
        epoch: 0,
        l_d,
        l_r,
        total,
        perplexity: (nll / losses.target_tokens as f64).exp(),
    })
}

/// Held-out data evaluated at each epoch end.
#[derive(Clone, Copy, Debug)]
pub struct DevSet<'a> {
    pub pairs: &'a [EncodedPair],
    pub tgt_vocab: &'a Vocabulary,
    pub threads: usize,
}

/// Runs `config.epochs` passes of shuffled batches.
pub fn train(
    model: &mut NmtModel,
    corpus: &[EncodedPair],
    dev: Option<DevSet<'_>>,
    config: &TrainingConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainingLog> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainingLog::default();
    let mut step = 0;
    'epochs: for epoch in 1..=config.epochs {
        let batches = make_batches(corpus, config.batch_size, config.bucketing, rng.next_u64());
        for batch in &batches {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let mut record = train_step(model, batch, config, step, rng.next_u64())?;
            record.epoch = epoch;
            log::debug!("step {step}: L={:.6} ppl={:.4}", record.total, record.perplexity);
            hooks.on_step(&record)?;
            log.steps.push(record);
            if config.checkpoint_interval.is_some_and(|k| step % k == 0) {
                hooks.checkpoint(model, step, false)?;
            }
        }
        let (dev_perplexity, dev_bleu) = match dev {
            Some(d) if !d.pairs.is_empty() => {
                let eval = evaluate_model(model, d.pairs, d.tgt_vocab, &DecodeConfig::default(), d.threads)?;
                (Some(eval.perplexity), Some(eval.bleu.score))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            last_step: step,
            dev_perplexity,
            dev_bleu,
        };
        log::info!("epoch {epoch} done at step {step}: dev ppl {dev_perplexity:?}, dev BLEU {dev_bleu:?}");
        hooks.on_epoch(&record)?;
        log.epochs.push(record);
        hooks.checkpoint(model, step, true)?;
    }
    Ok(log)
}
