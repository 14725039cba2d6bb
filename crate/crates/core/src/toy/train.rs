use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{length_loss, ToyModel, ToyModelConfig};
use super::optim::Adam;
use super::tasks::{generate_task_data, SyntheticTaskSpec};
use crate::axe::OpCounts;
use crate::decode::{decode_all, DecodeConfig};
use crate::error::{AxeError, Result};
use crate::metrics::{repetition_rate, sequence_quality};
use crate::objectives::{draw_input, sequence_loss, LossKind, LossSettings, ObjectiveVariant};
use crate::types::{SourceSequence, TargetSequence};

pub type Pair = (SourceSequence, TargetSequence);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of the (per-token) sequence loss.
    pub loss: f64,
    pub length_loss: f64,
    /// Operator tallies over the batch's AXE backtraces (zero for CE).
    pub counts: OpCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidRecord {
    pub step: usize,
    pub exact_match: f64,
    pub token_f1: f64,
    pub bleu: f64,
    pub repetition_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub valid: Vec<ValidRecord>,
}

impl TrainingLog {
    /// Operator tallies summed over the last `window` steps.
    pub fn recent_counts(&self, window: usize) -> OpCounts {
        let mut c = OpCounts::default();
        for r in self.steps.iter().rev().take(window) {
            c.add(&r.counts);
        }
        c
    }

    /// Trailing moving average of the step loss.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut sum = 0.0;
        for (k, r) in self.steps.iter().enumerate() {
            sum += r.loss;
            if k >= window {
                sum -= self.steps[k - window].loss;
            }
            out.push(sum / (k + 1).min(window) as f64);
        }
        out
    }
}

/// What to optimize and how to validate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub loss: LossKind,
    pub variant: ObjectiveVariant,
    pub decode: DecodeConfig,
    /// Validate every this many steps (and after the last step); 0 means
    /// only after the last step.
    pub valid_every: usize,
    pub normalize: bool,
}

pub struct Trainer {
    pub model: ToyModel,
    pub adam: Adam,
    pub opts: TrainOptions,
}

struct InstanceOut {
    grads: Vec<f64>,
    loss: f64,
    length_loss: f64,
    counts: Option<OpCounts>,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl Trainer {
    pub fn new(model: ToyModel, opts: TrainOptions) -> Self {
        let adam = Adam::new(model.params.len());
        Trainer { model, adam, opts }
    }

    pub fn settings(&self) -> LossSettings {
        LossSettings {
            label_smoothing: self.model.cfg.label_smoothing,
            normalize: self.opts.normalize,
        }
    }

    fn instance(&self, x: &SourceSequence, y: &TargetSequence, mask_seed: u64) -> Result<InstanceOut> {
        let model = &self.model;
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let input = draw_input(y, self.opts.variant, &mut rng);
        let out = model.forward(x, &input)?;
        let seq = sequence_loss(y, &input, &out.log_probs, self.opts.variant, self.opts.loss, &self.settings())?;
        let (len_loss, mut len_grad) = length_loss(&out.length_logits, y.len());
        let w = model.cfg.length_loss_weight;
        for g in &mut len_grad {
            *g *= w;
        }
        let mut grads = vec![0.0; model.params.len()];
        model.backward(&out.cache, &seq.grad_logits, &len_grad, &mut grads)?;
        Ok(InstanceOut {
            grads,
            loss: seq.loss,
            length_loss: len_loss,
            counts: seq.counts,
        })
    }

    /// One optimizer step on a batch drawn deterministically from
    /// `(seed, step)`. `step` is 1-based.
    pub fn step(&mut self, data: &[Pair], step: usize) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(AxeError::EmptyCorpus);
        }
        let b = self.model.cfg.batch_size;
        let mut rng = step_rng(self.model.cfg.seed, step);
        let picks: Vec<(usize, u64)> = (0..b).map(|_| (rng.random_range(0..data.len()), rng.random())).collect();
        let outs: Vec<Result<InstanceOut>> = picks
            .par_iter()
            .map(|&(i, s)| self.instance(&data[i].0, &data[i].1, s))
            .collect();
        let mut grads = vec![0.0; self.model.params.len()];
        let (mut loss, mut len_loss) = (0.0, 0.0);
        let mut counts = OpCounts::default();
        for o in outs {
            let o = match o {
                Ok(o) => o,
                Err(AxeError::NonFinite(_)) => return Err(AxeError::Diverged { step, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            for (g, x) in grads.iter_mut().zip(&o.grads) {
                *g += x;
            }
            loss += o.loss;
            len_loss += o.length_loss;
            if let Some(c) = o.counts {
                counts.add(&c);
            }
        }
        let inv = 1.0 / b as f64;
        loss *= inv;
        len_loss *= inv;
        if !loss.is_finite() || !len_loss.is_finite() {
            return Err(AxeError::Diverged { step, loss });
        }
        grads.iter_mut().for_each(|g| *g *= inv);
        let cfg = self.model.cfg.clone();
        let layout = self.model.layout().clone();
        let lr = self.adam.update(&cfg, &layout, &mut self.model.params, &grads);
        if !self.model.all_finite() {
            return Err(AxeError::Diverged { step, loss });
        }
        Ok(StepRecord {
            step,
            lr,
            loss,
            length_loss: len_loss,
            counts,
        })
    }

    pub fn validate(&self, valid: &[Pair], step: usize) -> Result<ValidRecord> {
        let sources: Vec<SourceSequence> = valid.iter().map(|p| p.0.clone()).collect();
        let refs: Vec<Vec<usize>> = valid.iter().map(|p| p.1.ids().to_vec()).collect();
        let results = decode_all(&self.model, &sources, &self.opts.decode)?;
        let hyps: Vec<Vec<usize>> = results.into_iter().map(|r| r.tokens).collect();
        let q = sequence_quality(&hyps, &refs)?;
        Ok(ValidRecord {
            step,
            exact_match: q.exact_match,
            token_f1: q.token_f1,
            bleu: q.bleu,
            repetition_rate: repetition_rate(&hyps)?,
        })
    }

    /// Runs steps `adam.step + 1 ..= cfg.steps`, appending to `log`.
    /// `on_step` sees every record as it is produced.
    pub fn run(
        &mut self,
        data: &[Pair],
        valid: &[Pair],
        log: &mut TrainingLog,
        mut on_step: impl FnMut(&StepRecord, Option<&ValidRecord>) -> Result<()>,
    ) -> Result<()> {
        let total = self.model.cfg.steps;
        while self.adam.step < total {
            let step = self.adam.step + 1;
            let rec = self.step(data, step)?;
            let due = step == total || (self.opts.valid_every > 0 && step.is_multiple_of(self.opts.valid_every));
            let v = if due && !valid.is_empty() {
                Some(self.validate(valid, step)?)
            } else {
                None
            };
            on_step(&rec, v.as_ref())?;
            log.steps.push(rec);
            if let Some(v) = v {
                log.valid.push(v);
            }
        }
        Ok(())
    }
}

/// Builds data for `task`, trains a fresh model and returns it with its log.
/// Training pairs use `task.seed`; validation pairs use `task.seed + 1`.
pub fn train(
    task: &SyntheticTaskSpec,
    cfg: &ToyModelConfig,
    opts: TrainOptions,
    train_count: usize,
    valid_count: usize,
) -> Result<(ToyModel, TrainingLog)> {
    task.validate(cfg.max_len)?;
    let vocab = task.vocabulary()?;
    let data = generate_task_data(task, train_count, task.seed)?;
    let valid = generate_task_data(task, valid_count, task.seed.wrapping_add(1))?;
    let model = ToyModel::new(cfg, vocab.size(), cfg.seed)?;
    let mut trainer = Trainer::new(model, opts);
    let mut log = TrainingLog::default();
    trainer.run(&data, &valid, &mut log, |_, _| Ok(()))?;
    Ok((trainer.model, log))
}
