//! Exact denoisers for atom-mixture targets.
//!
//! Given an atom, elements evolve independently under the forward chain: a
//! discrete element keeps its token with probability `1 − p_j^t` and is
//! otherwise uniform, and a continuous element is `N(√ᾱ μ, ᾱσ² + 1 − ᾱ)`
//! per coordinate. Every marginal `P_t` is therefore again a finite
//! mixture, and all conditionals follow by Bayes' rule over atoms.

use std::f64::consts::PI;

use crate::error::{IgdError, Result};
use crate::reverse::{Denoiser, DiscreteOutput};
use crate::schedule::ScheduleTable;
use crate::state::Sequence;

use super::chain::DiscreteFlavor;
use super::target::{Atom, TargetDistribution};

/// Log-density of `N(x; m, v)`.
pub fn log_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((x - m) * (x - m) / v + (2.0 * PI * v).ln())
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn normalize_log(lw: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(lw);
    lw.iter().map(|v| (v - z).exp()).collect()
}

pub struct MixtureDenoiser<'a> {
    pub target: &'a TargetDistribution,
    pub table: &'a ScheduleTable,
    pub flavor: DiscreteFlavor,
}

impl<'a> MixtureDenoiser<'a> {
    pub fn new(target: &'a TargetDistribution, table: &'a ScheduleTable, flavor: DiscreteFlavor) -> Result<Self> {
        if target.layout() != table.layout() {
            return Err(IgdError::InvalidValue("target and schedule layouts differ".into()));
        }
        Ok(Self { target, table, flavor })
    }

    fn discrete_loglik(&self, atom: &Atom, seq: &Sequence, pos: usize, t: usize) -> f64 {
        let tok = seq.tokens()[pos];
        if seq.is_conditioned(pos) {
            return if tok == atom.tokens[pos] {
                0.0
            } else {
                f64::NEG_INFINITY
            };
        }
        let p = self.table.flip_prob(pos, t);
        let uniform = p / self.table.layout().vocab_size() as f64;
        let q = if tok == atom.tokens[pos] {
            1.0 - p + uniform
        } else {
            uniform
        };
        q.ln()
    }

    fn continuous_loglik(&self, atom: &Atom, seq: &Sequence, pos: usize, alpha_bar: f64) -> f64 {
        let j = pos - self.table.layout().discrete_len();
        let fixed = &seq.cond_mask().vectors[j];
        let (sa, na) = (alpha_bar.sqrt(), 1.0 - alpha_bar);
        seq.vectors()[j]
            .iter()
            .zip(&atom.means[j])
            .zip(&atom.stds[j])
            .zip(fixed)
            .map(|(((&x, &m), &s), &f)| {
                if f {
                    log_normal(x, m, s * s)
                } else {
                    log_normal(x, sa * m, alpha_bar * s * s + na)
                }
            })
            .sum()
    }

    /// Log-weights of each atom given every element except `skip`, with the
    /// other elements at their time-`t` marginals.
    fn context_logweights(&self, seq: &Sequence, skip: usize, t: usize) -> Result<Vec<f64>> {
        let layout = self.table.layout();
        let mut out = Vec::with_capacity(self.target.atoms().len());
        for a in self.target.atoms() {
            let mut lw = a.weight.ln();
            for pos in 0..layout.len() {
                if pos == skip {
                    continue;
                }
                lw += if layout.is_discrete(pos) {
                    self.discrete_loglik(a, seq, pos, t)
                } else {
                    let ab = self.table.alpha_bar_at(pos, t, 0)?;
                    self.continuous_loglik(a, seq, pos, ab)
                };
            }
            out.push(lw);
        }
        Ok(out)
    }

    /// `P_t(S_i = · | S_{-i})` for the sequence's context.
    pub fn leave_one_out(&self, seq: &Sequence, pos: usize, t: usize) -> Result<Vec<f64>> {
        let lw = self.context_logweights(seq, pos, t)?;
        let w = normalize_log(&lw);
        let vocab = self.table.layout().vocab_size() as usize;
        let p = self.table.flip_prob(pos, t);
        let mut out = vec![p / vocab as f64; vocab];
        for (a, wa) in self.target.atoms().iter().zip(&w) {
            out[a.tokens[pos] as usize] += wa * (1.0 - p);
        }
        let z: f64 = out.iter().sum();
        Ok(out.into_iter().map(|v| v / z).collect())
    }

    /// Exact `E[ε | s^(t,k+1)]` for continuous element `pos`.
    pub fn expected_eps(&self, seq: &Sequence, pos: usize, t: usize, k: usize) -> Result<Vec<f64>> {
        let ab = self.table.alpha_bar_at(pos, t, k + 1)?;
        if ab >= 1.0 - 1e-15 {
            return Err(IgdError::DegenerateNoising(format!("ᾱ = {ab} at t = {t}, k = {k}")));
        }
        let mut lw = self.context_logweights(seq, pos, t)?;
        for (l, a) in lw.iter_mut().zip(self.target.atoms()) {
            *l += self.continuous_loglik(a, seq, pos, ab);
        }
        let w = normalize_log(&lw);
        let j = pos - self.table.layout().discrete_len();
        let x = &seq.vectors()[j];
        let fixed = &seq.cond_mask().vectors[j];
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut eps = vec![0.0; x.len()];
        for (a, wa) in self.target.atoms().iter().zip(&w) {
            for (c, e) in eps.iter_mut().enumerate() {
                if fixed[c] {
                    continue;
                }
                let s2 = a.stds[j][c] * a.stds[j][c];
                *e += wa * sn * (x[c] - sa * a.means[j][c]) / (ab * s2 + 1.0 - ab);
            }
        }
        Ok(eps)
    }
}

impl Denoiser for MixtureDenoiser<'_> {
    fn discrete(&self, seqs: &[&Sequence], pos: usize, t: usize) -> Result<Vec<DiscreteOutput>> {
        let round = self.table.round_of(t);
        let (keep, tok) = (
            self.table.discrete().phi(round),
            self.table.discrete().token_prob(round),
        );
        seqs.iter()
            .map(|s| {
                let loo = self.leave_one_out(s, pos, t)?;
                Ok(match self.flavor {
                    DiscreteFlavor::LeaveOneOut => DiscreteOutput::Probs(loo),
                    DiscreteFlavor::Posterior => {
                        let y = s.tokens()[pos] as usize;
                        let w: Vec<f64> = loo
                            .iter()
                            .enumerate()
                            .map(|(x, p)| p * (tok + if x == y { keep } else { 0.0 }))
                            .collect();
                        let z: f64 = w.iter().sum();
                        DiscreteOutput::Probs(w.into_iter().map(|v| v / z).collect())
                    }
                    DiscreteFlavor::Binary => {
                        DiscreteOutput::Binary(loo.iter().map(|p| tok / (tok + keep * p)).collect())
                    }
                })
            })
            .collect()
    }

    fn continuous(&self, seqs: &[&Sequence], pos: usize, t: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        seqs.iter().map(|s| self.expected_eps(s, pos, t, k)).collect()
    }
}
