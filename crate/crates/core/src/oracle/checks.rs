//! Convergence and contraction checks on the forward chain.

use rand::Rng;

use crate::error::Result;
use crate::forward::{forward_step, sample_state_at};
use crate::rng::{domain, keyed_rng};
use crate::schedule::ScheduleTable;
use crate::state::Sequence;

use super::chain::ExactChain;
use super::report::Report;
use super::target::TargetDistribution;

/// Slack allowed for exact-arithmetic monotonicity.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// TV(P_t, stationary) at the end of every round, its monotonicity, and the
/// terminal value against `terminal_bound`.
pub fn verify_lemma1(chain: &ExactChain, terminal_bound: f64) -> Report {
    let mut rep = Report::new();
    let table = chain.table();
    let l = table.layout().len();
    let tvs: Vec<f64> = (0..=table.rounds()).map(|r| chain.tv_to_stationary(r * l)).collect();
    for (r, w) in tvs.windows(2).enumerate() {
        rep.at_most(
            format!("lemma1.tv_nonincreasing.round{}", r + 1),
            w[1] - w[0],
            MONOTONE_SLACK,
        );
    }
    rep.at_most("lemma1.terminal_tv", tvs[tvs.len() - 1], terminal_bound);
    rep.note(format!(
        "tv per round: {}",
        tvs.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(" ")
    ));
    if !table.discrete().mixes() {
        rep.warn("Π(φ) = 1 in some round: the chain never mixes and the convergence hypothesis fails");
    }
    rep
}

/// A draw from `P_T` obtained by sampling `π` and jumping directly to `T`.
pub fn sample_terminal<R: Rng + ?Sized>(
    target: &TargetDistribution,
    table: &ScheduleTable,
    rng: &mut R,
) -> Result<Sequence> {
    let s0 = target.sample(rng);
    Ok(sample_state_at(&s0, table, table.total_steps(), None, rng)?.0)
}

/// The mixed cost: Hamming on tokens plus squared Euclidean on vectors.
pub fn mixed_cost(a: &Sequence, b: &Sequence) -> f64 {
    let ham = a.tokens().iter().zip(b.tokens()).filter(|(x, y)| x != y).count() as f64;
    let sq: f64 = a
        .vectors()
        .iter()
        .zip(b.vectors())
        .flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)))
        .sum();
    ham + sq
}

/// The fixed perturbation defining the second start law: flip the first
/// token to its successor mod |X| and shift every continuous scalar by 0.5.
pub fn perturb(s: &Sequence) -> Sequence {
    let layout = s.layout();
    let mut out = s.clone();
    if layout.discrete_len() > 0 {
        let slot = out.token_slot(0);
        *slot = (*slot + 1) % layout.vocab_size();
    }
    for pos in layout.discrete_len()..layout.len() {
        let (v, _) = out.vector_slot(pos);
        v.iter_mut().for_each(|x| *x += 0.5);
    }
    out
}

/// `α_ρ` for round `ρ`: the smallest per-step probability of leaving the
/// coupling gap behind among the element kinds present.
pub fn contraction_rate(table: &ScheduleTable, round: usize) -> Result<f64> {
    let layout = table.layout();
    let mut alpha = f64::INFINITY;
    if layout.discrete_len() > 0 {
        alpha = alpha.min(1.0 - table.discrete().phi(round));
    }
    if layout.continuous_len() > 0 {
        let c = table.continuous();
        let off = c.round_offset(round);
        let mut keep = 1.0;
        for j in off..off + c.steps_in_round(round) {
            keep *= 1.0 - c.beta(j)?;
        }
        alpha = alpha.min(1.0 - keep);
    }
    Ok(alpha)
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Same-noise coupling of the forward chain from `π` and its perturbed copy:
/// per round, `E D` after must not exceed `(1 − α) E D` before, up to three
/// relative standard errors. Continuous-only layouts additionally check the
/// per-pair deterministic factor `∏(1 − β)` to 1e−12.
pub fn wasserstein_contraction_check(
    target: &TargetDistribution,
    table: &ScheduleTable,
    n_pairs: usize,
    seed: u64,
) -> Result<Report> {
    let mut rep = Report::new();
    rep.note("second start law: first token advanced by one mod |X|, every continuous scalar shifted by +0.5");
    let l = table.layout().len();
    let rounds = table.rounds();
    let mut costs = vec![Vec::with_capacity(n_pairs); rounds + 1];
    for p in 0..n_pairs {
        let mut rng = keyed_rng(seed, &[domain::ORACLE, p as u64]);
        let mut a = target.sample(&mut rng);
        let mut b = perturb(&a);
        costs[0].push(mixed_cost(&a, &b));
        for t in 0..table.total_steps() {
            let rng = keyed_rng(seed, &[domain::ORACLE, p as u64, t as u64 + 1]);
            a = forward_step(&a, table, t, &mut rng.clone())?;
            b = forward_step(&b, table, t, &mut rng.clone())?;
            if (t + 1) % l == 0 {
                costs[(t + 1) / l].push(mixed_cost(&a, &b));
            }
        }
    }
    let continuous_only = table.layout().discrete_len() == 0;
    for r in 0..rounds {
        let alpha = contraction_rate(table, r)?;
        let (before, _) = mean_and_stderr(&costs[r]);
        let (after, se) = mean_and_stderr(&costs[r + 1]);
        let rel = if after > 0.0 { se / after } else { 0.0 };
        let bound = (1.0 - alpha) * before * (1.0 + 3.0 * rel) + MONOTONE_SLACK * before;
        rep.at_most(format!("contraction.round{}", r + 1), after, bound);
        if continuous_only {
            let worst = costs[r]
                .iter()
                .zip(&costs[r + 1])
                .map(|(b, a)| (a - (1.0 - alpha) * b).abs() / b.max(1.0))
                .fold(0.0, f64::max);
            rep.at_most(format!("contraction.exact_factor.round{}", r + 1), worst, 1e-12);
        }
    }
    Ok(rep)
}
