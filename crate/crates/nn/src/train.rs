//! The training loop: forward-process examples, losses, AdamW, EMA.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use igd_core::forward::{make_training_example, TrainingExample};
use igd_core::oracle::TargetDistribution;
use igd_core::rng::{domain, keyed_rng, StreamRng};
use igd_core::schedule::ScheduleTable;
use igd_core::state::Sequence;

use crate::error::{NnError, Result};
use crate::loss::{example_loss, DiscreteLoss, LossKind};
use crate::model::DiscoDit;
use crate::optim::{lr_at, AdamW, Ema};
use crate::params::{Grads, ParamStore};
use crate::tape::Tape;

/// How sequence times are drawn for training examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    /// Uniform over the times whose element is not held fixed.
    #[default]
    Uniform,
    /// A continuous element is the one noised with probability 0.5.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub discrete_loss: DiscreteLoss,
    pub time_sampling: TimeSampling,
    pub log_every: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Examples per gradient-accumulation chunk; fixes the reduction order.
    pub grad_chunk: usize,
    pub divergence_threshold: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            lr: 1e-3,
            warmup_steps: 8000,
            min_lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            ema_decay: 0.9999,
            discrete_loss: DiscreteLoss::Bce,
            time_sampling: TimeSampling::Uniform,
            log_every: 50,
            checkpoint_every: 0,
            grad_chunk: 8,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.batch_size == 0 || self.grad_chunk == 0 || self.log_every == 0 {
            return bad("batch_size, grad_chunk and log_every must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.min_lr >= 0.0) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("AdamW needs 0 ≤ β1, β2 < 1 and ε > 0");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1]");
        }
        if self.weight_decay < 0.0 || self.divergence_threshold <= 0.0 {
            return bad("weight_decay must be ≥ 0 and divergence_threshold > 0");
        }
        Ok(())
    }
}

/// Where clean training sequences come from.
pub trait CleanSource: Sync {
    fn draw(&self, rng: &mut StreamRng) -> Sequence;
}

impl CleanSource for [Sequence] {
    fn draw(&self, rng: &mut StreamRng) -> Sequence {
        self[rng.random_range(0..self.len())].clone()
    }
}

impl CleanSource for Vec<Sequence> {
    fn draw(&self, rng: &mut StreamRng) -> Sequence {
        self.as_slice().draw(rng)
    }
}

impl CleanSource for TargetDistribution {
    fn draw(&self, rng: &mut StreamRng) -> Sequence {
        self.sample(rng)
    }
}

/// Draws a sequence time whose element is free in `s0`, or `None` when
/// every element is held fixed.
pub fn sample_time<R: Rng + ?Sized>(
    table: &ScheduleTable,
    s0: &Sequence,
    mode: TimeSampling,
    rng: &mut R,
) -> Option<usize> {
    let free: Vec<usize> = (0..table.total_steps())
        .filter(|&t| !s0.is_conditioned(table.position(t)))
        .collect();
    if free.is_empty() {
        return None;
    }
    if mode == TimeSampling::Balanced {
        let l1 = table.layout().discrete_len();
        let (cont, disc): (Vec<usize>, Vec<usize>) = free.iter().partition(|&&t| table.position(t) >= l1);
        if !cont.is_empty() && !disc.is_empty() {
            let pool = if rng.random::<f64>() < 0.5 { &cont } else { &disc };
            return Some(pool[rng.random_range(0..pool.len())]);
        }
    }
    Some(free[rng.random_range(0..free.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub loss_discrete: Option<f64>,
    pub loss_continuous: Option<f64>,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub params: ParamStore,
    pub ema: ParamStore,
    pub metrics: Vec<MetricRecord>,
    /// Fraction of examples whose element was continuous.
    pub continuous_fraction: f64,
}

/// Snapshot handed to the checkpoint callback.
pub struct TrainSnapshot<'a> {
    pub step: usize,
    pub params: &'a ParamStore,
    pub ema: &'a ParamStore,
}

/// The batch of examples for one optimizer step.
pub fn draw_batch<S: CleanSource + ?Sized>(
    table: &ScheduleTable,
    source: &S,
    cfg: &TrainerConfig,
    seed: u64,
    step: usize,
) -> Result<Vec<TrainingExample>> {
    (0..cfg.batch_size)
        .map(|b| {
            let mut rng = keyed_rng(seed, &[domain::TRAIN, step as u64, b as u64]);
            let s0 = source.draw(&mut rng);
            let t = sample_time(table, &s0, cfg.time_sampling, &mut rng)
                .ok_or_else(|| NnError::Config("a training sequence has every element held fixed".into()))?;
            Ok(make_training_example(&s0, table, t, None, &mut rng)?)
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct LossSums {
    total: f64,
    discrete: f64,
    n_discrete: usize,
    continuous: f64,
    n_continuous: usize,
}

/// Mean loss of `examples` and its gradient, reduced over fixed chunks in
/// index order so the result does not depend on thread count.
pub fn batch_gradient(
    model: &DiscoDit,
    params: &ParamStore,
    examples: &[TrainingExample],
    flavor: DiscreteLoss,
    chunk: usize,
) -> Result<(f64, Grads, [Option<f64>; 2], usize)> {
    let scale = 1.0 / examples.len() as f64;
    let parts: Vec<(Grads, LossSums)> = examples
        .par_chunks(chunk.max(1))
        .map(|exs| {
            let mut g = params.zeros_like();
            let mut sums = LossSums::default();
            for ex in exs {
                let mut tape = Tape::new(params);
                let (loss, kind) = example_loss(model, &mut tape, ex, flavor)?;
                let v = tape.value(loss)[[0, 0]];
                tape.backward(loss, scale, &mut g)?;
                sums.total += v;
                match kind {
                    LossKind::Discrete => {
                        sums.discrete += v;
                        sums.n_discrete += 1;
                    }
                    LossKind::Continuous => {
                        sums.continuous += v;
                        sums.n_continuous += 1;
                    }
                }
            }
            Ok((g, sums))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut grads, mut sums) = iter.next().ok_or_else(|| NnError::Graph("empty batch".into()))?;
    for (g, s) in iter {
        grads.add_assign(&g);
        sums.total += s.total;
        sums.discrete += s.discrete;
        sums.n_discrete += s.n_discrete;
        sums.continuous += s.continuous;
        sums.n_continuous += s.n_continuous;
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok((
        sums.total * scale,
        grads,
        [
            mean(sums.discrete, sums.n_discrete),
            mean(sums.continuous, sums.n_continuous),
        ],
        sums.n_continuous,
    ))
}

/// Trains `params` in place for `cfg.steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn train<S: CleanSource + ?Sized>(
    model: &DiscoDit,
    mut params: ParamStore,
    table: &ScheduleTable,
    source: &S,
    cfg: &TrainerConfig,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(TrainSnapshot<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut opt = AdamW::new(&params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut ema = Ema::new(&params, cfg.ema_decay);
    let mut metrics = Vec::new();
    let mut n_cont = 0usize;
    let mut window = (0.0, 0.0, 0usize, 0.0, 0usize, 0usize);
    for step in 0..cfg.steps {
        let batch = draw_batch(table, source, cfg, seed, step)?;
        let (loss, grads, [ld, lc], nc) = batch_gradient(model, &params, &batch, cfg.discrete_loss, cfg.grad_chunk)?;
        if !loss.is_finite() || loss > cfg.divergence_threshold {
            return Err(NnError::Diverged { step, loss });
        }
        n_cont += nc;
        let lr = lr_at(step, cfg.lr, cfg.warmup_steps, cfg.steps, cfg.min_lr);
        opt.step(&mut params, &grads, lr);
        ema.update(&params);
        window.0 += loss;
        window.5 += 1;
        if let Some(v) = ld {
            window.1 += v;
            window.2 += 1;
        }
        if let Some(v) = lc {
            window.3 += v;
            window.4 += 1;
        }
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
            metrics.push(MetricRecord {
                step: step + 1,
                loss: window.0 / window.5 as f64,
                loss_discrete: mean(window.1, window.2),
                loss_continuous: mean(window.3, window.4),
                lr,
            });
            window = (0.0, 0.0, 0, 0.0, 0, 0);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(TrainSnapshot {
                step: step + 1,
                params: &params,
                ema: &ema.shadow,
            })?;
        }
    }
    let total = (cfg.steps * cfg.batch_size).max(1) as f64;
    Ok(TrainOutcome {
        params,
        ema: ema.shadow,
        metrics,
        continuous_fraction: n_cont as f64 / total,
    })
}
