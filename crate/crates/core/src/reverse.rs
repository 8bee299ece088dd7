//! The reverse (denoising) sampler.
//!
//! Time runs from `T − 1` down to `0`, touching the same element `i_t` the
//! forward process touched. Discrete elements are resampled from the
//! denoiser's conditional (after top-p truncation); continuous elements are
//! walked back through their `K` inner DDPM steps using the predicted
//! cumulative noise ε̂.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{IgdError, Result};
use crate::forward::forward_step;
use crate::rng::{domain, keyed_rng};
use crate::schedule::{DiscreteSchedule, ScheduleTable};
use crate::state::{Sequence, Token};

/// Clamp applied to binary-head probabilities before inversion.
pub const BINARY_CLAMP: f64 = 1e-7;

/// What a discrete query returns for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteOutput {
    /// A probability vector over the vocabulary.
    Probs(Vec<f64>),
    /// Unnormalized log-probabilities over the vocabulary.
    Logits(Vec<f64>),
    /// Binary-reduction head: `y_x = P(Z_t = x | s_{-i}, S_i = x)` for each x.
    Binary(Vec<f64>),
}

/// A learned or exact denoiser. Queries are batched: every sequence in the
/// slice is asked about the same position and time.
pub trait Denoiser: Sync {
    fn discrete(&self, seqs: &[&Sequence], pos: usize, t: usize) -> Result<Vec<DiscreteOutput>>;

    /// Predicted cumulative noise ε̂ for the element at `pos` in the state
    /// `s^(t,k+1)`.
    fn continuous(&self, seqs: &[&Sequence], pos: usize, t: usize, k: usize) -> Result<Vec<Vec<f64>>>;
}

/// How the continuous reverse step uses ε̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousUpdate {
    /// Score form: `x ← (x − β ε̂ / √(1 − ᾱ)) / √(1 − β) + √β ε′`.
    #[default]
    ScoreScaled,
    /// Literal pseudocode form: `x ← (x − β ε̂) / √(1 − β) + √β ε′`.
    Pseudocode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub top_p: f64,
    pub redenoise_rounds: usize,
    pub redenoise_iterations: usize,
    pub last_step_zero_noise: bool,
    pub continuous_update: ContinuousUpdate,
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_p: 1.0,
            redenoise_rounds: 0,
            redenoise_iterations: 0,
            last_step_zero_noise: true,
            continuous_update: ContinuousUpdate::ScoreScaled,
            batch_size: 256,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(IgdError::InvalidValue(format!("top_p = {} outside (0, 1]", self.top_p)));
        }
        if self.batch_size == 0 {
            return Err(IgdError::InvalidValue("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Counters surfaced after sampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SamplerDiagnostics {
    pub clamp_events: usize,
    pub nonfinite_aborts: Vec<NonFiniteAbort>,
    /// Per forward round: discrete reverse steps taken and how many changed
    /// the token.
    pub rounds: Vec<RoundStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonFiniteAbort {
    pub sample: u64,
    pub t: usize,
    pub k: usize,
    pub position: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoundStats {
    pub round: usize,
    pub discrete_steps: usize,
    pub discrete_changes: usize,
    pub continuous_steps: usize,
}

impl SamplerDiagnostics {
    fn round_mut(&mut self, round: usize) -> &mut RoundStats {
        while self.rounds.len() <= round {
            let r = self.rounds.len();
            self.rounds.push(RoundStats {
                round: r,
                ..Default::default()
            });
        }
        &mut self.rounds[round]
    }

    /// Line-delimited JSON: a summary line, one line per round and one per
    /// aborted sample.
    pub fn to_jsonl(&self) -> String {
        let mut out = format!(
            "{{\"record\":\"summary\",\"clamp_events\":{},\"nonfinite_aborts\":{}}}\n",
            self.clamp_events,
            self.nonfinite_aborts.len()
        );
        for r in &self.rounds {
            let rate = if r.discrete_steps > 0 {
                r.discrete_changes as f64 / r.discrete_steps as f64
            } else {
                0.0
            };
            out.push_str(&format!(
                "{{\"record\":\"round\",\"round\":{},\"discrete_steps\":{},\"discrete_changes\":{},\"change_rate\":{},\"continuous_steps\":{}}}\n",
                r.round, r.discrete_steps, r.discrete_changes, rate, r.continuous_steps
            ));
        }
        for a in &self.nonfinite_aborts {
            out.push_str(&format!(
                "{{\"record\":\"abort\",\"sample\":{},\"t\":{},\"k\":{},\"position\":{}}}\n",
                a.sample, a.t, a.k, a.position
            ));
        }
        out
    }
}

/// Converts binary-head outputs into the leave-one-out conditional
/// `p(x) ∝ (Π_t(x) / Π_t(φ)) (1 / y_x − 1)`. Returns the normalized vector
/// and the number of clamped entries.
pub fn binary_to_conditional(binary: &[f64], sched: &DiscreteSchedule, round: usize) -> Result<(Vec<f64>, usize)> {
    let phi = sched.phi(round);
    if phi <= 0.0 {
        return Err(IgdError::InvalidDenoiserOutput(
            "binary reduction needs Π_t(φ) > 0".into(),
        ));
    }
    if binary.len() != sched.vocab_size() as usize {
        return Err(IgdError::InvalidDenoiserOutput(format!(
            "expected {} binary outputs, got {}",
            sched.vocab_size(),
            binary.len()
        )));
    }
    let ratio = sched.token_prob(round) / phi;
    let mut clamps = 0;
    let mut p = Vec::with_capacity(binary.len());
    for &y in binary {
        if y.is_nan() {
            return Err(IgdError::InvalidDenoiserOutput("NaN binary output".into()));
        }
        let yc = y.clamp(BINARY_CLAMP, 1.0 - BINARY_CLAMP);
        if yc != y {
            clamps += 1;
        }
        p.push(ratio * (1.0 / yc - 1.0));
    }
    let z: f64 = p.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(IgdError::InvalidDenoiserOutput(format!(
            "conditional does not normalize (sum {z})"
        )));
    }
    p.iter_mut().for_each(|v| *v /= z);
    Ok((p, clamps))
}

/// Keeps the smallest set of most probable tokens whose mass reaches `p`
/// (ties broken by ascending token id) and renormalizes. `p = 1` returns the
/// input as is.
pub fn top_p(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let z: f64 = probs.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = vec![false; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        keep[i] = true;
        mass += probs[i] / z;
        if mass >= p {
            break;
        }
    }
    let kept: f64 = probs.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v).sum();
    probs
        .iter()
        .zip(&keep)
        .map(|(v, &k)| if k { v / kept } else { 0.0 })
        .collect()
}

fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(IgdError::InvalidDenoiserOutput("non-finite logits".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(IgdError::InvalidDenoiserOutput("all logits are -inf".into()));
    }
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// The conditional over the vocabulary implied by a denoiser output.
pub fn output_to_conditional(
    out: &DiscreteOutput,
    sched: &DiscreteSchedule,
    round: usize,
) -> Result<(Vec<f64>, usize)> {
    let vocab = sched.vocab_size() as usize;
    match out {
        DiscreteOutput::Probs(p) => {
            if p.len() != vocab || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(IgdError::InvalidDenoiserOutput("invalid probability vector".into()));
            }
            let z: f64 = p.iter().sum();
            if z.is_nan() || z <= 0.0 {
                return Err(IgdError::InvalidDenoiserOutput("probabilities sum to zero".into()));
            }
            Ok((p.iter().map(|v| v / z).collect(), 0))
        }
        DiscreteOutput::Logits(l) => {
            if l.len() != vocab {
                return Err(IgdError::InvalidDenoiserOutput("wrong number of logits".into()));
            }
            Ok((softmax(l)?, 0))
        }
        DiscreteOutput::Binary(y) => binary_to_conditional(y, sched, round),
    }
}

/// Inverse-CDF draw from a normalized probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Token {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i as Token;
            }
        }
    }
    last as Token
}

/// Identifies the random streams of a batch: sample ids plus a pass number
/// (0 for the main sweep, 1.. for ReDeNoise iterations).
#[derive(Debug, Clone, Copy)]
pub struct Streams<'a> {
    pub seed: u64,
    pub ids: &'a [u64],
    pub pass: u64,
}

impl Streams<'_> {
    fn reverse_rng(&self, b: usize, t: usize, k: usize) -> crate::rng::StreamRng {
        keyed_rng(
            self.seed,
            &[domain::REVERSE, self.ids[b], self.pass, t as u64, k as u64],
        )
    }
}

/// Batch state for one sweep: sequences plus alive flags.
pub struct Batch {
    pub seqs: Vec<Sequence>,
    pub alive: Vec<bool>,
}

impl Batch {
    pub fn new(seqs: Vec<Sequence>) -> Self {
        let alive = vec![true; seqs.len()];
        Self { seqs, alive }
    }

    fn active(&self, pos: usize) -> Vec<usize> {
        (0..self.seqs.len())
            .filter(|&b| self.alive[b] && !self.seqs[b].is_conditioned(pos))
            .collect()
    }
}

/// Reverse step at time `t` for a discrete `i_t`, applied to every active
/// sequence of the batch.
pub fn reverse_step_discrete<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    batch: &mut Batch,
    t: usize,
    streams: Streams<'_>,
    diag: &mut SamplerDiagnostics,
) -> Result<()> {
    let pos = table.position(t);
    let active = batch.active(pos);
    if active.is_empty() {
        return Ok(());
    }
    let refs: Vec<&Sequence> = active.iter().map(|&b| &batch.seqs[b]).collect();
    let outs = den.discrete(&refs, pos, t)?;
    if outs.len() != active.len() {
        return Err(IgdError::InvalidDenoiserOutput("batch size mismatch".into()));
    }
    let round = table.round_of(t);
    let mut changes = 0;
    for (&b, out) in active.iter().zip(&outs) {
        let (cond, clamps) = output_to_conditional(out, table.discrete(), round)?;
        diag.clamp_events += clamps;
        let probs = top_p(&cond, cfg.top_p);
        let mut rng = streams.reverse_rng(b, t, 0);
        let tok = sample_categorical(&probs, &mut rng);
        let slot = batch.seqs[b].token_slot(pos);
        if *slot != tok {
            changes += 1;
        }
        *slot = tok;
    }
    let stats = diag.round_mut(round);
    stats.discrete_steps += active.len();
    stats.discrete_changes += changes;
    Ok(())
}

/// Reverse step at time `t` for a continuous `i_t`: all `K` inner steps,
/// from `k = K − 1` down to `0`.
pub fn reverse_step_continuous<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    batch: &mut Batch,
    t: usize,
    streams: Streams<'_>,
    diag: &mut SamplerDiagnostics,
) -> Result<()> {
    let pos = table.position(t);
    let kmax = table.inner_steps(t);
    for k in (0..kmax).rev() {
        let active = batch.active(pos);
        if active.is_empty() {
            return Ok(());
        }
        // The state s^(t,k+1) was produced by cumulative step j.
        let j = table.step_index(t, k);
        let beta = table.continuous().beta(j)?;
        if beta == 0.0 {
            continue;
        }
        let ab = table.continuous().cumulative_alpha(j)?;
        let refs: Vec<&Sequence> = active.iter().map(|&b| &batch.seqs[b]).collect();
        let eps_hat = den.continuous(&refs, pos, t, k)?;
        if eps_hat.len() != active.len() {
            return Err(IgdError::InvalidDenoiserOutput("batch size mismatch".into()));
        }
        let coef = match cfg.continuous_update {
            ContinuousUpdate::ScoreScaled => beta / (1.0 - ab).sqrt(),
            ContinuousUpdate::Pseudocode => beta,
        };
        let inv_keep = 1.0 / (1.0 - beta).sqrt();
        let noise = if cfg.last_step_zero_noise && j == 0 {
            0.0
        } else {
            beta.sqrt()
        };
        for (&b, e) in active.iter().zip(&eps_hat) {
            let mut rng = streams.reverse_rng(b, t, k);
            let (v, fixed) = batch.seqs[b].vector_slot(pos);
            if e.len() != v.len() {
                return Err(IgdError::InvalidDenoiserOutput("ε̂ dimension mismatch".into()));
            }
            let mut ok = true;
            for ((x, &f), &eh) in v.iter_mut().zip(fixed).zip(e) {
                let z: f64 = rng.sample(StandardNormal);
                if f {
                    continue;
                }
                let nx = (*x - coef * eh) * inv_keep + noise * z;
                if !nx.is_finite() {
                    ok = false;
                }
                *x = nx;
            }
            if !ok {
                batch.alive[b] = false;
                diag.nonfinite_aborts.push(NonFiniteAbort {
                    sample: streams.ids[b],
                    t,
                    k,
                    position: pos,
                });
            }
        }
        diag.round_mut(table.round_of(t)).continuous_steps += active.len();
    }
    Ok(())
}

/// Runs reverse steps for `t` in `range`, from the top down.
pub fn reverse_sweep<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    batch: &mut Batch,
    range: Range<usize>,
    streams: Streams<'_>,
    diag: &mut SamplerDiagnostics,
) -> Result<()> {
    for t in range.rev() {
        if table.layout().is_discrete(table.position(t)) {
            reverse_step_discrete(den, table, cfg, batch, t, streams, diag)?;
        } else {
            reverse_step_continuous(den, table, cfg, batch, t, streams, diag)?;
        }
    }
    Ok(())
}

/// Draws a start state from the stationary product law (uniform tokens,
/// standard normal vectors), copying conditioned entries from `condition`.
pub fn init_stationary<R: Rng + ?Sized>(condition: &Sequence, rng: &mut R) -> Sequence {
    let layout = condition.layout();
    let mut out = condition.clone();
    for pos in 0..layout.discrete_len() {
        let tok = rng.random_range(0..layout.vocab_size());
        if !condition.cond_mask().tokens[pos] {
            *out.token_slot(pos) = tok;
        }
    }
    for pos in layout.discrete_len()..layout.len() {
        let (v, fixed) = out.vector_slot(pos);
        for (x, &f) in v.iter_mut().zip(fixed) {
            let z: f64 = rng.sample(StandardNormal);
            if !f {
                *x = z;
            }
        }
    }
    out
}

/// Output of a batched generation: finished samples (`None` for aborted
/// ones) and diagnostics.
#[derive(Debug, Clone)]
pub struct Generated {
    pub samples: Vec<Option<Sequence>>,
    pub diagnostics: SamplerDiagnostics,
}

impl Generated {
    pub fn finished(&self) -> Vec<Sequence> {
        self.samples.iter().flatten().cloned().collect()
    }
}

/// Generates one sample per entry of `conditions` (each a template whose
/// conditioned entries are kept). Sample `b` draws from streams keyed by
/// `ids[b]`.
pub fn generate<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    conditions: &[Sequence],
    seed: u64,
    ids: &[u64],
) -> Result<Generated> {
    let init: Vec<Sequence> = conditions
        .iter()
        .zip(ids)
        .map(|(c, &id)| init_stationary(c, &mut keyed_rng(seed, &[domain::INIT, id])))
        .collect();
    generate_from(den, table, cfg, init, seed, ids)
}

/// Like [`generate`] but starting from the given `ŝ^(T)` states.
pub fn generate_from<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    init: Vec<Sequence>,
    seed: u64,
    ids: &[u64],
) -> Result<Generated> {
    cfg.validate()?;
    if init.len() != ids.len() {
        return Err(IgdError::InvalidValue("one stream id per sample required".into()));
    }
    let mut diag = SamplerDiagnostics::default();
    let mut samples = Vec::with_capacity(init.len());
    let mut init = init.into_iter();
    for chunk in ids.chunks(cfg.batch_size) {
        let mut batch = Batch::new(init.by_ref().take(chunk.len()).collect());
        let streams = Streams {
            seed,
            ids: chunk,
            pass: 0,
        };
        reverse_sweep(den, table, cfg, &mut batch, 0..table.total_steps(), streams, &mut diag)?;
        if cfg.redenoise_rounds > 0 {
            redenoise_batch(den, table, cfg, &mut batch, seed, chunk, &mut diag, None)?;
        }
        samples.extend(
            batch
                .seqs
                .into_iter()
                .zip(batch.alive)
                .map(|(s, a)| if a { Some(s) } else { None }),
        );
    }
    Ok(Generated {
        samples,
        diagnostics: diag,
    })
}

#[allow(clippy::too_many_arguments)]
fn redenoise_batch<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    batch: &mut Batch,
    seed: u64,
    ids: &[u64],
    diag: &mut SamplerDiagnostics,
    mut iterates: Option<&mut [Vec<Option<Sequence>>]>,
) -> Result<()> {
    let rounds = cfg.redenoise_rounds.min(table.rounds());
    let horizon = rounds * table.layout().len();
    for it in 0..cfg.redenoise_iterations {
        for (b, seq) in batch.seqs.iter_mut().enumerate() {
            if !batch.alive[b] {
                continue;
            }
            let mut cur = seq.clone();
            for t in 0..horizon {
                let mut rng = keyed_rng(seed, &[domain::REDENOISE, ids[b], it as u64, t as u64]);
                cur = forward_step(&cur, table, t, &mut rng)?;
            }
            *seq = cur;
        }
        let streams = Streams {
            seed,
            ids,
            pass: it as u64 + 1,
        };
        reverse_sweep(den, table, cfg, batch, 0..horizon, streams, diag)?;
        if let Some(iterates) = iterates.as_deref_mut() {
            iterates[it].extend(batch.seqs.iter().zip(&batch.alive).map(|(s, &a)| a.then(|| s.clone())));
        }
    }
    Ok(())
}

/// ReDeNoise: re-noise finished samples through the first `r′` forward
/// rounds and denoise them back, `redenoise_iterations` times. With
/// `r′ = 0` the input is returned unchanged.
pub fn redenoise<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    samples: Vec<Sequence>,
    seed: u64,
    ids: &[u64],
) -> Result<Generated> {
    if cfg.redenoise_rounds == 0 || cfg.redenoise_iterations == 0 {
        cfg.validate()?;
        if samples.len() != ids.len() {
            return Err(IgdError::InvalidValue("one stream id per sample required".into()));
        }
        return Ok(Generated {
            samples: samples.into_iter().map(Some).collect(),
            diagnostics: SamplerDiagnostics::default(),
        });
    }
    let (mut iterates, diagnostics) = redenoise_iterates(den, table, cfg, samples, seed, ids)?;
    Ok(Generated {
        samples: iterates.pop().unwrap_or_default(),
        diagnostics,
    })
}

/// Like [`redenoise`] but returns the samples after every iteration;
/// entry `k` holds the state after `k + 1` iterations.
pub fn redenoise_iterates<D: Denoiser + ?Sized>(
    den: &D,
    table: &ScheduleTable,
    cfg: &SamplerConfig,
    samples: Vec<Sequence>,
    seed: u64,
    ids: &[u64],
) -> Result<(Vec<Vec<Option<Sequence>>>, SamplerDiagnostics)> {
    cfg.validate()?;
    if samples.len() != ids.len() {
        return Err(IgdError::InvalidValue("one stream id per sample required".into()));
    }
    let mut diag = SamplerDiagnostics::default();
    let mut iterates = vec![Vec::with_capacity(samples.len()); cfg.redenoise_iterations];
    if cfg.redenoise_rounds == 0 {
        for it in iterates.iter_mut() {
            *it = samples.iter().cloned().map(Some).collect();
        }
        return Ok((iterates, diag));
    }
    let mut it = samples.into_iter();
    for chunk in ids.chunks(cfg.batch_size) {
        let mut batch = Batch::new(it.by_ref().take(chunk.len()).collect());
        redenoise_batch(den, table, cfg, &mut batch, seed, chunk, &mut diag, Some(&mut iterates))?;
    }
    Ok((iterates, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use crate::schedule::{BetaSchedule, ContinuousSchedule, NoiseOrder};
    use crate::state::{CondMask, ElementLayout};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn symmetric_binary_gives_uniform() {
        let d = DiscreteSchedule::new(vec![0.5, 0.5], 2).unwrap();
        let (p, c) = binary_to_conditional(&[0.3, 0.3], &d, 0).unwrap();
        assert_eq!(c, 0);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn binary_near_one_wins() {
        // Small y means "Z = x is unlikely given S_i = x", i.e. x was most
        // likely already there: that token dominates.
        let d = DiscreteSchedule::new(vec![0.5, 0.5], 3).unwrap();
        let (p, _) = binary_to_conditional(&[1e-6, 0.5, 0.5], &d, 0).unwrap();
        assert!(p[0] > 0.999);
        let (p, c) = binary_to_conditional(&[0.0, 1.0, 0.5], &d, 0).unwrap();
        assert_eq!(c, 2);
        assert!(p[0] > 0.999 && p[1] < 1e-6);
    }

    #[test]
    fn binary_needs_phi() {
        let d = DiscreteSchedule::new(vec![0.0, 0.5], 2).unwrap();
        assert!(binary_to_conditional(&[0.3, 0.3], &d, 0).is_err());
        assert!(binary_to_conditional(&[f64::NAN, 0.3], &d, 1).is_err());
    }

    #[test]
    fn top_p_limits() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(top_p(&p, 1.0), p.to_vec());
        assert_eq!(top_p(&p, 0.1), vec![0.0, 1.0, 0.0]);
        let two = top_p(&p, 0.7);
        assert_abs_diff_eq!(two[1], 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(two[2], 0.375, epsilon = 1e-15);
        // ties broken by ascending token id
        assert_eq!(top_p(&[0.4, 0.4, 0.2], 0.3), vec![1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn top_p_is_distribution(raw in proptest::collection::vec(0.01f64..1.0, 2..8), p in 0.05f64..1.0) {
            let out = top_p(&raw, p);
            let s: f64 = out.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let z: f64 = raw.iter().sum();
            let kept: f64 = raw.iter().zip(&out).filter(|(_, &o)| o > 0.0).map(|(r, _)| r / z).sum();
            prop_assert!(kept >= p - 1e-12);
        }

        #[test]
        fn uniform_prior_cancels(ys in proptest::collection::vec(0.01f64..0.99, 3), phi in 0.05f64..0.95) {
            // With a uniform Π(·|X) the prefactor is common to all tokens.
            let d = DiscreteSchedule::new(vec![phi, phi], 3).unwrap();
            let (p, _) = binary_to_conditional(&ys, &d, 0).unwrap();
            let raw: Vec<f64> = ys.iter().map(|y| 1.0 / y - 1.0).collect();
            let z: f64 = raw.iter().sum();
            for (a, b) in p.iter().zip(&raw) {
                prop_assert!((a - b / z).abs() < 1e-12);
            }
            prop_assert_eq!(top_p(&p, 1.0), p.clone());
        }
    }

    struct ZeroEps;
    impl Denoiser for ZeroEps {
        fn discrete(&self, seqs: &[&Sequence], _: usize, _: usize) -> Result<Vec<DiscreteOutput>> {
            Ok(seqs.iter().map(|_| DiscreteOutput::Probs(vec![0.5, 0.5])).collect())
        }
        fn continuous(&self, seqs: &[&Sequence], _: usize, _: usize, _: usize) -> Result<Vec<Vec<f64>>> {
            Ok(seqs.iter().map(|_| vec![0.0]).collect())
        }
    }

    struct NanEps;
    impl Denoiser for NanEps {
        fn discrete(&self, seqs: &[&Sequence], _: usize, _: usize) -> Result<Vec<DiscreteOutput>> {
            Ok(seqs.iter().map(|_| DiscreteOutput::Probs(vec![0.5, 0.5])).collect())
        }
        fn continuous(&self, seqs: &[&Sequence], _: usize, _: usize, _: usize) -> Result<Vec<Vec<f64>>> {
            Ok(seqs.iter().map(|_| vec![f64::NAN]).collect())
        }
    }

    fn cont_table(beta: f64) -> ScheduleTable {
        let layout = Arc::new(ElementLayout::new(0, vec![1], 2).unwrap());
        ScheduleTable::new(
            layout,
            NoiseOrder::round_robin(1, 2).unwrap(),
            DiscreteSchedule::new(vec![0.5, 0.5], 2).unwrap(),
            ContinuousSchedule::new(vec![1, 1], BetaSchedule::Table { values: vec![beta; 2] }).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_prediction_is_rescale_plus_noise() {
        let table = cont_table(0.1);
        let cfg = SamplerConfig {
            last_step_zero_noise: false,
            ..Default::default()
        };
        let s = Sequence::new(table.layout_arc().clone(), vec![], vec![vec![2.0]]).unwrap();
        let mut batch = Batch::new(vec![s]);
        let streams = Streams {
            seed: 3,
            ids: &[9],
            pass: 0,
        };
        let mut diag = SamplerDiagnostics::default();
        reverse_step_continuous(&ZeroEps, &table, &cfg, &mut batch, 1, streams, &mut diag).unwrap();
        let z: f64 = rand::Rng::sample(&mut streams.reverse_rng(0, 1, 0), StandardNormal);
        let expected = 2.0 / 0.9f64.sqrt() + 0.1f64.sqrt() * z;
        assert_eq!(batch.seqs[0].vectors()[0][0], expected);
    }

    #[test]
    fn nonfinite_aborts_sample() {
        let table = cont_table(0.1);
        let s = Sequence::new(table.layout_arc().clone(), vec![], vec![vec![2.0]]).unwrap();
        let out = generate_from(&NanEps, &table, &SamplerConfig::default(), vec![s], 1, &[0]).unwrap();
        assert_eq!(out.samples, vec![None]);
        assert_eq!(out.diagnostics.nonfinite_aborts.len(), 1);
        assert!(out.diagnostics.to_jsonl().contains("\"record\":\"abort\""));
    }

    #[test]
    fn fully_conditioned_is_returned_unchanged() {
        let layout = Arc::new(ElementLayout::new(1, vec![2], 2).unwrap());
        let table = ScheduleTable::new(
            layout.clone(),
            NoiseOrder::round_robin(2, 2).unwrap(),
            DiscreteSchedule::new(vec![0.5, 0.5], 2).unwrap(),
            ContinuousSchedule::new(vec![3, 3], BetaSchedule::Cosine { a: 0.01, b: 0.3 }).unwrap(),
        )
        .unwrap();
        let cond =
            Sequence::with_mask(layout.clone(), vec![1], vec![vec![0.25, -3.5]], CondMask::all(&layout)).unwrap();
        let out = generate(
            &ZeroEps,
            &table,
            &SamplerConfig::default(),
            std::slice::from_ref(&cond),
            5,
            &[0],
        )
        .unwrap();
        assert_eq!(out.samples[0].as_ref().unwrap(), &cond);
    }

    #[test]
    fn zero_rounds_redenoise_is_identity() {
        let table = cont_table(0.1);
        let s = Sequence::new(table.layout_arc().clone(), vec![], vec![vec![2.0]]).unwrap();
        let out = redenoise(&ZeroEps, &table, &SamplerConfig::default(), vec![s.clone()], 1, &[0]).unwrap();
        assert_eq!(out.samples[0].as_ref().unwrap(), &s);
    }

    #[test]
    fn iterates_end_at_the_redenoised_sample() {
        let table = cont_table(0.1);
        let s = Sequence::new(table.layout_arc().clone(), vec![], vec![vec![2.0]]).unwrap();
        let cfg = SamplerConfig {
            redenoise_rounds: 1,
            redenoise_iterations: 3,
            ..SamplerConfig::default()
        };
        let out = redenoise(&ZeroEps, &table, &cfg, vec![s.clone(), s.clone()], 4, &[0, 1]).unwrap();
        let (its, _) = redenoise_iterates(&ZeroEps, &table, &cfg, vec![s.clone(), s], 4, &[0, 1]).unwrap();
        assert_eq!(its.len(), 3);
        assert_eq!(its[2], out.samples);
        assert_ne!(its[0], its[2]);
    }

    #[test]
    fn categorical_draws() {
        let mut rng = keyed_rng(0, &[]);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
