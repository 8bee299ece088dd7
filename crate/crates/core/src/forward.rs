//! The interleaved forward (noising) process.
//!
//! One element changes per sequence step. A discrete element draws
//! `z ~ Π_t` and is replaced unless `z = φ`; a continuous element receives
//! `K` DDPM steps `x ← √(1−β) x + √β ε`. Because elements are noised
//! independently, `s^(t,k)` can also be drawn directly from `s^(0)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{IgdError, Result};
use crate::schedule::ScheduleTable;
use crate::state::{ElementKind, Sequence, Token};

/// Draws `z_t ~ Π_t`: `None` is φ.
pub fn draw_z<R: Rng + ?Sized>(table: &ScheduleTable, t: usize, rng: &mut R) -> Option<Token> {
    let phi = table.phi_at(t);
    let u: f64 = rng.random();
    if u < phi {
        None
    } else {
        Some(rng.random_range(0..table.layout().vocab_size()))
    }
}

fn check_time(table: &ScheduleTable, t: usize) -> Result<()> {
    if t >= table.total_steps() {
        return Err(IgdError::IndexOutOfRange(format!(
            "sequence time {t} >= T = {}",
            table.total_steps()
        )));
    }
    Ok(())
}

/// One discrete forward step at time `t`. Returns `s^(t+1)` and the drawn
/// `z_t`; a conditioned element is left unchanged whatever `z_t` is.
pub fn forward_step_discrete<R: Rng + ?Sized>(
    seq: &Sequence,
    table: &ScheduleTable,
    t: usize,
    rng: &mut R,
) -> Result<(Sequence, Option<Token>)> {
    check_time(table, t)?;
    let pos = table.position(t);
    seq.layout().expect_kind(pos, ElementKind::Discrete)?;
    let z = draw_z(table, t, rng);
    let mut out = seq.clone();
    if let Some(tok) = z {
        if !seq.is_conditioned(pos) {
            *out.token_slot(pos) = tok;
        }
    }
    Ok((out, z))
}

/// One inner DDPM step `k` of the visit at time `t`: returns `s^(t,k+1)`.
/// Conditioned scalars are held fixed.
pub fn forward_step_continuous<R: Rng + ?Sized>(
    seq: &Sequence,
    table: &ScheduleTable,
    t: usize,
    k: usize,
    rng: &mut R,
) -> Result<Sequence> {
    check_time(table, t)?;
    let pos = table.position(t);
    seq.layout().expect_kind(pos, ElementKind::Continuous)?;
    if k >= table.inner_steps(t) {
        return Err(IgdError::IndexOutOfRange(format!(
            "element time {k} >= K = {}",
            table.inner_steps(t)
        )));
    }
    let beta = table.continuous().beta(table.step_index(t, k))?;
    let (keep, noise) = ((1.0 - beta).sqrt(), beta.sqrt());
    let mut out = seq.clone();
    let (v, fixed) = out.vector_slot(pos);
    for (x, &f) in v.iter_mut().zip(fixed) {
        let e: f64 = rng.sample(StandardNormal);
        if !f {
            *x = keep * *x + noise * e;
        }
    }
    Ok(out)
}

/// Applies the full forward step at time `t` (all `K` inner steps for a
/// continuous element).
pub fn forward_step<R: Rng + ?Sized>(seq: &Sequence, table: &ScheduleTable, t: usize, rng: &mut R) -> Result<Sequence> {
    let pos = table.position(t);
    if seq.layout().is_discrete(pos) {
        Ok(forward_step_discrete(seq, table, t, rng)?.0)
    } else {
        let mut cur = seq.clone();
        for k in 0..table.inner_steps(t) {
            cur = forward_step_continuous(&cur, table, t, k, rng)?;
        }
        Ok(cur)
    }
}

/// Runs forward steps `t_from..t_to`.
pub fn forward_walk<R: Rng + ?Sized>(
    seq: &Sequence,
    table: &ScheduleTable,
    t_from: usize,
    t_to: usize,
    rng: &mut R,
) -> Result<Sequence> {
    let mut cur = seq.clone();
    for t in t_from..t_to {
        cur = forward_step(&cur, table, t, rng)?;
    }
    Ok(cur)
}

/// Per-position record of a direct draw: whether a discrete element was
/// resampled, and the standard normal ε used for each continuous element.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectDrawAux {
    pub flipped: Vec<bool>,
    pub eps: Vec<Vec<f64>>,
}

/// Draws `s^(t,k)` directly from `s^(0)`. `k` only matters for the element
/// being noised at `t`; `None` means `k = 0`, i.e. `s^(t)`.
pub fn sample_state_at<R: Rng + ?Sized>(
    s0: &Sequence,
    table: &ScheduleTable,
    t: usize,
    k: Option<usize>,
    rng: &mut R,
) -> Result<(Sequence, DirectDrawAux)> {
    let k = k.unwrap_or(0);
    if t > table.total_steps() {
        return Err(IgdError::IndexOutOfRange(format!(
            "t = {t} > T = {}",
            table.total_steps()
        )));
    }
    let layout = s0.layout();
    let l1 = layout.discrete_len();
    let mut out = s0.clone();
    let mut flipped = vec![false; l1];
    for (pos, flag) in flipped.iter_mut().enumerate() {
        let p = table.flip_prob(pos, t);
        let u: f64 = rng.random();
        if u < p && !s0.is_conditioned(pos) {
            *out.token_slot(pos) = rng.random_range(0..layout.vocab_size());
            *flag = true;
        }
    }
    let mut eps = Vec::with_capacity(layout.continuous_len());
    for pos in l1..layout.len() {
        let ab = table.alpha_bar_at(pos, t, if is_current(table, pos, t) { k } else { 0 })?;
        let (keep, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (v, fixed) = out.vector_slot(pos);
        let mut e_vec = Vec::with_capacity(v.len());
        for (x, &f) in v.iter_mut().zip(fixed) {
            let e: f64 = rng.sample(StandardNormal);
            if f {
                e_vec.push(0.0);
            } else {
                *x = keep * *x + noise * e;
                e_vec.push(e);
            }
        }
        eps.push(e_vec);
    }
    Ok((out, DirectDrawAux { flipped, eps }))
}

fn is_current(table: &ScheduleTable, pos: usize, t: usize) -> bool {
    t < table.total_steps() && table.position(t) == pos
}

/// What the denoiser is trained to predict for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleTarget {
    /// `target_token = s^(t)_{i_t}`; `z_was_phi` is the binary-reduction
    /// label (true when the step kept the token).
    Discrete { target_token: Token, z_was_phi: bool },
    /// Cumulative noise `ε^(t,k+1)` of the element at `i_t`. Conditioned
    /// scalars carry 0.
    Continuous { k: usize, eps: Vec<f64> },
}

/// One supervised example drawn from the forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub t: usize,
    pub position: usize,
    /// `s^(t+1)` for a discrete element, `s^(t,k+1)` for a continuous one.
    pub input: Sequence,
    pub target: ExampleTarget,
}

impl TrainingExample {
    pub fn element_time(&self) -> usize {
        match self.target {
            ExampleTarget::Discrete { .. } => 0,
            ExampleTarget::Continuous { k, .. } => k,
        }
    }
}

/// Builds a training example at sequence time `t` from a clean `s0`. For a
/// continuous `i_t`, `k` is drawn uniformly from `0..K` unless supplied.
pub fn make_training_example<R: Rng + ?Sized>(
    s0: &Sequence,
    table: &ScheduleTable,
    t: usize,
    k: Option<usize>,
    rng: &mut R,
) -> Result<TrainingExample> {
    check_time(table, t)?;
    let pos = table.position(t);
    if s0.is_conditioned(pos) {
        return Err(IgdError::Conditioned(pos));
    }
    if s0.layout().is_discrete(pos) {
        let (st, _) = sample_state_at(s0, table, t, None, rng)?;
        let target_token = st.tokens()[pos];
        let (next, z) = forward_step_discrete(&st, table, t, rng)?;
        Ok(TrainingExample {
            t,
            position: pos,
            input: next,
            target: ExampleTarget::Discrete {
                target_token,
                z_was_phi: z.is_none(),
            },
        })
    } else {
        let kmax = table.inner_steps(t);
        let k = match k {
            Some(k) if k < kmax => k,
            Some(k) => return Err(IgdError::IndexOutOfRange(format!("k = {k} >= K = {kmax}"))),
            None => rng.random_range(0..kmax),
        };
        // s^(t,k+1) is the state after k + 1 inner steps; the other
        // elements sit at their s^(t) values.
        let (mut st, aux) = sample_state_at(s0, table, t, Some(k), rng)?;
        let m = table.visit_count(pos, t, k)? + 1;
        let ab = table.continuous().alpha_bar_after(m);
        let (keep, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        let j = pos - s0.layout().discrete_len();
        let clean = s0.vectors()[j].clone();
        let (v, fixed) = st.vector_slot(pos);
        let mut eps = Vec::with_capacity(v.len());
        for ((x, &c), &f) in v.iter_mut().zip(&clean).zip(fixed) {
            if f {
                eps.push(0.0);
            } else {
                let e: f64 = rng.sample(StandardNormal);
                *x = keep * c + noise * e;
                eps.push(e);
            }
        }
        debug_assert_eq!(aux.eps.len(), s0.layout().continuous_len());
        Ok(TrainingExample {
            t,
            position: pos,
            input: st,
            target: ExampleTarget::Continuous { k, eps },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use crate::schedule::{BetaSchedule, ContinuousSchedule, DiscreteSchedule, NoiseOrder};
    use crate::state::{CondMask, ElementLayout};
    use std::sync::Arc;

    fn table(l1: usize, dims: Vec<usize>, vocab: u32, phi: Vec<f64>, betas: Vec<f64>) -> ScheduleTable {
        let layout = Arc::new(ElementLayout::new(l1, dims, vocab).unwrap());
        let rounds = phi.len();
        let per = betas.len() / rounds;
        ScheduleTable::new(
            layout.clone(),
            NoiseOrder::round_robin(layout.len(), rounds).unwrap(),
            DiscreteSchedule::new(phi, vocab).unwrap(),
            ContinuousSchedule::new(vec![per; rounds], BetaSchedule::Table { values: betas }).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn phi_one_never_changes() {
        let tab = table(1, vec![], 2, vec![1.0, 1.0], vec![0.1, 0.1]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![1], vec![]).unwrap();
        let mut rng = keyed_rng(1, &[]);
        for _ in 0..200 {
            let (out, z) = forward_step_discrete(&s, &tab, 0, &mut rng).unwrap();
            assert_eq!(out, s);
            assert_eq!(z, None);
        }
    }

    #[test]
    fn phi_zero_uniform_tokens() {
        // Monte Carlo against the binomial: frequency of token 1 within 3σ.
        let tab = table(1, vec![], 2, vec![0.0, 0.0], vec![0.1, 0.1]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![0], vec![]).unwrap();
        let mut rng = keyed_rng(2, &[]);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| forward_step_discrete(&s, &tab, 0, &mut rng).unwrap().0.tokens()[0] == 1)
            .count();
        let sd = (n as f64 * 0.25).sqrt();
        assert!((ones as f64 - n as f64 / 2.0).abs() < 3.0 * sd, "{ones}");
    }

    #[test]
    fn conditioned_discrete_unchanged() {
        let tab = table(1, vec![], 2, vec![0.0, 0.0], vec![0.1, 0.1]);
        let mut cond = CondMask::none(tab.layout());
        cond.tokens[0] = true;
        let s = Sequence::with_mask(tab.layout_arc().clone(), vec![0], vec![], cond).unwrap();
        let mut rng = keyed_rng(3, &[]);
        for _ in 0..100 {
            assert_eq!(forward_step_discrete(&s, &tab, 0, &mut rng).unwrap().0, s);
        }
    }

    #[test]
    fn continuous_identity_and_replacement() {
        let tab = table(0, vec![1], 2, vec![0.5, 0.5], vec![0.0, 1.0]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![], vec![vec![3.0]]).unwrap();
        let mut rng = keyed_rng(4, &[]);
        assert_eq!(forward_step_continuous(&s, &tab, 0, 0, &mut rng).unwrap(), s);
        // β = 1 forgets the input entirely: output is exactly the drawn ε.
        let mut a = keyed_rng(5, &[]);
        let mut b = keyed_rng(5, &[]);
        let out = forward_step_continuous(&s, &tab, 1, 0, &mut a).unwrap();
        let e: f64 = b.sample(StandardNormal);
        assert_eq!(out.vectors()[0][0], e);
    }

    #[test]
    fn continuous_moments() {
        let tab = table(0, vec![1], 2, vec![0.5, 0.5], vec![0.1, 0.1]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![], vec![vec![1.0]]).unwrap();
        let mut rng = keyed_rng(6, &[]);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_step_continuous(&s, &tab, 0, 0, &mut rng).unwrap().vectors()[0][0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se_mean = (0.1f64 / n as f64).sqrt();
        let se_var = 0.1 * (2.0 / n as f64).sqrt();
        assert!((mean - 0.9f64.sqrt()).abs() < 3.0 * se_mean, "{mean}");
        assert!((var - 0.1).abs() < 3.0 * se_var, "{var}");
    }

    #[test]
    fn single_site_property() {
        let tab = table(2, vec![2], 3, vec![0.2, 0.2], vec![0.3; 4]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![0, 1], vec![vec![0.5, -0.5]]).unwrap();
        let mut rng = keyed_rng(7, &[]);
        let mut cur = s;
        for t in 0..tab.total_steps() {
            let next = forward_step(&cur, &tab, t, &mut rng).unwrap();
            let i = tab.position(t);
            for j in 0..3 {
                if j != i {
                    assert_eq!(next.value(j).unwrap(), cur.value(j).unwrap());
                }
            }
            cur = next;
        }
    }

    #[test]
    fn direct_draw_at_zero_is_identity() {
        let tab = table(2, vec![2], 3, vec![0.2, 0.2], vec![0.3; 4]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![0, 1], vec![vec![0.5, -0.5]]).unwrap();
        let (out, aux) = sample_state_at(&s, &tab, 0, None, &mut keyed_rng(8, &[])).unwrap();
        assert_eq!(out, s);
        assert_eq!(aux.flipped, vec![false, false]);
        assert!(sample_state_at(&s, &tab, 7, None, &mut keyed_rng(8, &[])).is_err());
    }

    #[test]
    fn conditioned_elements_survive_direct_draws() {
        let tab = table(2, vec![2], 3, vec![0.0, 0.0], vec![0.9; 4]);
        let mut cond = CondMask::none(tab.layout());
        cond.tokens[1] = true;
        cond.vectors[0][0] = true;
        let s = Sequence::with_mask(tab.layout_arc().clone(), vec![0, 1], vec![vec![0.5, -0.5]], cond).unwrap();
        let mut rng = keyed_rng(9, &[]);
        for t in 0..=tab.total_steps() {
            let (out, _) = sample_state_at(&s, &tab, t, None, &mut rng).unwrap();
            assert_eq!(out.tokens()[1], 1);
            assert_eq!(out.vectors()[0][0].to_bits(), 0.5f64.to_bits());
        }
    }

    #[test]
    fn training_example_phi_forced() {
        let tab = table(1, vec![1], 2, vec![1.0, 1.0], vec![0.1; 2]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![1], vec![vec![0.0]]).unwrap();
        let ex = make_training_example(&s, &tab, 0, None, &mut keyed_rng(10, &[])).unwrap();
        match ex.target {
            ExampleTarget::Discrete {
                target_token,
                z_was_phi,
            } => {
                assert!(z_was_phi);
                assert_eq!(ex.input.tokens()[0], target_token);
            }
            _ => panic!("expected discrete"),
        }
    }

    #[test]
    fn training_example_zero_noise_path() {
        // All β = 0 so far: ᾱ = 1 and the input equals s0 exactly.
        let tab = table(0, vec![2], 2, vec![0.5, 0.5], vec![0.0, 0.0, 0.5, 0.5]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![], vec![vec![1.5, -2.0]]).unwrap();
        let ex = make_training_example(&s, &tab, 0, Some(1), &mut keyed_rng(11, &[])).unwrap();
        assert_eq!(ex.input.vectors(), s.vectors());
        assert!(matches!(ex.target, ExampleTarget::Continuous { k: 1, .. }));
    }

    #[test]
    fn training_example_reconstructs_bitwise() {
        let tab = table(1, vec![2], 3, vec![0.5, 0.5], vec![0.05, 0.1, 0.2, 0.3]);
        let s = Sequence::new(tab.layout_arc().clone(), vec![2], vec![vec![0.7, -1.1]]).unwrap();
        for seed in 0..20 {
            let ex = make_training_example(&s, &tab, 3, None, &mut keyed_rng(seed, &[])).unwrap();
            let ExampleTarget::Continuous { k, eps } = &ex.target else {
                panic!()
            };
            let m = tab.visit_count(1, 3, *k).unwrap() + 1;
            let ab = tab.continuous().alpha_bar_after(m);
            for d in 0..2 {
                let rebuilt = ab.sqrt() * s.vectors()[0][d] + (1.0 - ab).sqrt() * eps[d];
                assert_eq!(rebuilt.to_bits(), ex.input.vectors()[0][d].to_bits());
            }
        }
    }
}
