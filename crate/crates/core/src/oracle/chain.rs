//! Exact enumeration of the forward chain on small discrete targets.

use rand::Rng;

use crate::error::{IgdError, Result};
use crate::reverse::{output_to_conditional, sample_categorical, top_p, Denoiser, DiscreteOutput};
use crate::schedule::ScheduleTable;
use crate::state::{Sequence, Token};

use super::target::{state_count, state_index, state_tokens, TargetDistribution};

/// Which conditional an exact discrete denoiser reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteFlavor {
    /// `P(S^(t)_i = x | S^(t+1)_{-i})` as probabilities.
    LeaveOneOut,
    /// `P(S^(t)_i = x | S^(t+1))`, the exact time reversal.
    Posterior,
    /// `P(Z_t = x | S^(t+1)_{-i}, S^(t+1)_i = x)` for the binary head.
    Binary,
}

/// The laws `P_0, …, P_T` of the forward chain as explicit vectors.
#[derive(Debug, Clone)]
pub struct ExactChain {
    table: ScheduleTable,
    vocab: usize,
    l1: usize,
    laws: Vec<Vec<f64>>,
}

/// Total variation distance between two probability vectors.
pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

impl ExactChain {
    pub fn enumerate(target: &TargetDistribution, table: &ScheduleTable) -> Result<Self> {
        if target.layout() != table.layout() {
            return Err(IgdError::InvalidValue("target and schedule layouts differ".into()));
        }
        let p0 = target.discrete_probs()?;
        state_count(table.layout())?;
        let mut chain = Self {
            table: table.clone(),
            vocab: table.layout().vocab_size() as usize,
            l1: table.layout().discrete_len(),
            laws: vec![p0],
        };
        for t in 0..table.total_steps() {
            let next = chain.forward_kernel_apply(t, &chain.laws[t]);
            let s: f64 = next.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(IgdError::InvalidValue(format!("P_{} sums to {s}", t + 1)));
            }
            chain.laws.push(next);
        }
        Ok(chain)
    }

    pub fn table(&self) -> &ScheduleTable {
        &self.table
    }

    pub fn num_states(&self) -> usize {
        self.laws[0].len()
    }

    pub fn law(&self, t: usize) -> &[f64] {
        &self.laws[t]
    }

    pub fn tokens_of(&self, idx: usize) -> Vec<Token> {
        state_tokens(idx, self.l1, self.vocab)
    }

    pub fn index_of(&self, tokens: &[Token]) -> usize {
        state_index(tokens, self.vocab)
    }

    fn stride(&self, pos: usize) -> usize {
        self.vocab.pow((self.l1 - 1 - pos) as u32)
    }

    /// Index of the state with position `pos` of `idx` replaced by `x`.
    fn with_digit(&self, idx: usize, pos: usize, x: usize) -> usize {
        let st = self.stride(pos);
        idx - ((idx / st) % self.vocab) * st + x * st
    }

    fn digit(&self, idx: usize, pos: usize) -> usize {
        (idx / self.stride(pos)) % self.vocab
    }

    /// `P_{t+1} = kernel_t · P_t` for any vector `p` at time `t`.
    pub fn forward_kernel_apply(&self, t: usize, p: &[f64]) -> Vec<f64> {
        let pos = self.table.position(t);
        let round = self.table.round_of(t);
        let (keep, tok) = (
            self.table.discrete().phi(round),
            self.table.discrete().token_prob(round),
        );
        (0..p.len())
            .map(|s| {
                let marg: f64 = (0..self.vocab).map(|x| p[self.with_digit(s, pos, x)]).sum();
                tok * marg + keep * p[s]
            })
            .collect()
    }

    /// `P_t(S_i = · | S_{-i} = c)` where `c` is taken from state `idx`.
    pub fn leave_one_out(&self, t: usize, idx: usize, pos: usize) -> Vec<f64> {
        let p = &self.laws[t];
        let w: Vec<f64> = (0..self.vocab).map(|x| p[self.with_digit(idx, pos, x)]).collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 {
            w.into_iter().map(|v| v / z).collect()
        } else {
            vec![1.0 / self.vocab as f64; self.vocab]
        }
    }

    /// `P(S^(t)_i = · | S^(t+1) = state idx)`.
    pub fn posterior(&self, t: usize, idx: usize, pos: usize) -> Vec<f64> {
        let round = self.table.round_of(t);
        let (keep, tok) = (
            self.table.discrete().phi(round),
            self.table.discrete().token_prob(round),
        );
        let y = self.digit(idx, pos);
        let p = &self.laws[t];
        let w: Vec<f64> = (0..self.vocab)
            .map(|x| p[self.with_digit(idx, pos, x)] * (tok + if x == y { keep } else { 0.0 }))
            .collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 {
            w.into_iter().map(|v| v / z).collect()
        } else {
            vec![1.0 / self.vocab as f64; self.vocab]
        }
    }

    /// Binary-head targets `y_x = P(Z_t = x | S^(t+1)_{-i}, S^(t+1)_i = x)`,
    /// from the joint law of `(S^(t), Z_t)`.
    pub fn binary(&self, t: usize, idx: usize, pos: usize) -> Vec<f64> {
        let round = self.table.round_of(t);
        let (keep, tok) = (
            self.table.discrete().phi(round),
            self.table.discrete().token_prob(round),
        );
        let p = &self.laws[t];
        let marg: f64 = (0..self.vocab).map(|x| p[self.with_digit(idx, pos, x)]).sum();
        (0..self.vocab)
            .map(|x| {
                let via_z = tok * marg;
                let via_phi = keep * p[self.with_digit(idx, pos, x)];
                if via_z + via_phi > 0.0 {
                    via_z / (via_z + via_phi)
                } else {
                    0.5
                }
            })
            .collect()
    }

    /// The exact time-reversal kernel at step `t` in compact form: row `s'`
    /// holds `P(S^(t)_{i_t} = x | S^(t+1) = s')` over `x`.
    pub fn time_reversal_kernel(&self, t: usize) -> Vec<Vec<f64>> {
        let pos = self.table.position(t);
        (0..self.num_states()).map(|s| self.posterior(t, s, pos)).collect()
    }

    /// The Markov kernel the sampler realizes at step `t` with denoiser
    /// `den`, in the same compact form.
    pub fn sampler_kernel<D: Denoiser + ?Sized>(&self, den: &D, t: usize, top: f64) -> Result<Vec<Vec<f64>>> {
        let pos = self.table.position(t);
        let layout = self.table.layout_arc().clone();
        let seqs: Vec<Sequence> = (0..self.num_states())
            .map(|s| Sequence::new(layout.clone(), self.tokens_of(s), vec![]))
            .collect::<Result<_>>()?;
        let refs: Vec<&Sequence> = seqs.iter().collect();
        let outs = den.discrete(&refs, pos, t)?;
        outs.iter()
            .map(|o| {
                output_to_conditional(o, self.table.discrete(), self.table.round_of(t)).map(|(p, _)| top_p(&p, top))
            })
            .collect()
    }

    /// Pushes a law at time `t + 1` back to time `t` through a compact
    /// kernel.
    pub fn apply_reverse(&self, t: usize, kernel: &[Vec<f64>], p_next: &[f64]) -> Vec<f64> {
        let pos = self.table.position(t);
        let mut out = vec![0.0; p_next.len()];
        for (s, row) in kernel.iter().enumerate() {
            if p_next[s] == 0.0 {
                continue;
            }
            for (x, &q) in row.iter().enumerate() {
                out[self.with_digit(s, pos, x)] += p_next[s] * q;
            }
        }
        out
    }

    /// Runs the sampler's kernels from `start` (a law at time `T`) down to
    /// time 0.
    pub fn composite_reverse<D: Denoiser + ?Sized>(&self, den: &D, start: &[f64], top: f64) -> Result<Vec<f64>> {
        let mut p = start.to_vec();
        for t in (0..self.table.total_steps()).rev() {
            let k = self.sampler_kernel(den, t, top)?;
            p = self.apply_reverse(t, &k, &p);
        }
        Ok(p)
    }

    /// The uniform product law over `X^{L1}`.
    pub fn stationary(&self) -> Vec<f64> {
        vec![1.0 / self.num_states() as f64; self.num_states()]
    }

    pub fn tv_to_stationary(&self, t: usize) -> f64 {
        tv(&self.laws[t], &self.stationary())
    }

    /// A draw from `P_t`.
    pub fn sample_law<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Sequence {
        let idx = sample_categorical(&self.laws[t], rng) as usize;
        Sequence::new(self.table.layout_arc().clone(), self.tokens_of(idx), vec![])
            .expect("enumerated state fits layout")
    }

    /// Empirical law of a set of discrete sequences.
    pub fn histogram(&self, samples: &[Sequence]) -> Vec<f64> {
        let mut h = vec![0.0; self.num_states()];
        for s in samples {
            h[self.index_of(s.tokens())] += 1.0;
        }
        let n = samples.len().max(1) as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }
}

/// The exact discrete denoiser of an enumerated chain.
pub struct ChainDenoiser<'a> {
    pub chain: &'a ExactChain,
    pub flavor: DiscreteFlavor,
}

impl Denoiser for ChainDenoiser<'_> {
    fn discrete(&self, seqs: &[&Sequence], pos: usize, t: usize) -> Result<Vec<DiscreteOutput>> {
        Ok(seqs
            .iter()
            .map(|s| {
                let idx = self.chain.index_of(s.tokens());
                match self.flavor {
                    DiscreteFlavor::LeaveOneOut => DiscreteOutput::Probs(self.chain.leave_one_out(t, idx, pos)),
                    DiscreteFlavor::Posterior => DiscreteOutput::Probs(self.chain.posterior(t, idx, pos)),
                    DiscreteFlavor::Binary => DiscreteOutput::Binary(self.chain.binary(t, idx, pos)),
                }
            })
            .collect())
    }

    fn continuous(&self, _: &[&Sequence], _: usize, _: usize, _: usize) -> Result<Vec<Vec<f64>>> {
        Err(IgdError::InvalidValue(
            "enumerated chains have no continuous elements".into(),
        ))
    }
}
