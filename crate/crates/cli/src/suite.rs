//! The oracle suite run by `verify`.

use rayon::prelude::*;

use igd_core::forward::{forward_step_continuous, forward_walk, sample_state_at};
use igd_core::oracle::gmm::fd_score;
use igd_core::oracle::{
    gmm_eps_by_quadrature, gmm_ideal_eps, sample_terminal, tv, verify_lemma1, wasserstein_contraction_check,
    ChainDenoiser, Component, DiscreteFlavor, ExactChain, MixtureDenoiser, Report, TargetDistribution,
};
use igd_core::reverse::{generate_from, output_to_conditional, DiscreteOutput, SamplerConfig};
use igd_core::rng::{domain, keyed_rng};
use igd_core::schedule::ScheduleTable;
use igd_core::state::Sequence;
use igd_core::tasks::sat::{check_sat, sequence_solves};
use igd_core::tasks::w1_proxy;

use crate::config::{RunConfig, TaskConfig};
use crate::error::Result;
use crate::task::Task;

/// Stream tags separating the suite's checks.
mod tag {
    pub const CHAIN_MC: u64 = 1;
    pub const DISCRETE_CONSISTENCY: u64 = 2;
    pub const CONTINUOUS_CONSISTENCY: u64 = 3;
    pub const MIXED_INIT: u64 = 4;
    pub const MIXED_SAMPLER: u64 = 5;
    pub const MIXED_REFERENCE: u64 = 6;
    pub const CONTRACTION: u64 = 7;
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// TV bound for a histogram of `n` draws against the exact law `p`: the
/// larger of `floor` and three times the expected sampling TV.
pub fn tv_bound(p: &[f64], n: usize, floor: f64) -> f64 {
    let expected: f64 = p
        .iter()
        .map(|&q| (q * (1.0 - q) / (2.0 * std::f64::consts::PI * n as f64)).sqrt())
        .sum();
    floor.max(3.0 * expected)
}

/// The 1D two-component mixture used by the score checks.
pub fn score_mixture() -> Vec<Component> {
    vec![
        Component::isotropic(0.3, vec![-1.0], 0.5),
        Component::isotropic(0.7, vec![1.5], 0.8),
    ]
}

/// `−E[ε | x] / √(1 − ᾱ)` against a finite-difference log-density score and
/// the ideal ε̂ against quadrature, over `x ∈ [−4, 4]`.
pub fn score_checks(rep: &mut Report) -> Result<()> {
    let comps = score_mixture();
    for ab in [0.9, 0.5, 0.1] {
        let (mut fd_err, mut quad_err) = (0.0f64, 0.0f64);
        for i in 0..=160 {
            let x = -4.0 + 0.05 * i as f64;
            let eps = gmm_ideal_eps(&comps, ab, &[x])?[0];
            let score = -eps / (1.0 - ab).sqrt();
            fd_err = fd_err.max((score - fd_score(&comps, ab, x, 1e-4)).abs());
            quad_err = quad_err.max((eps - gmm_eps_by_quadrature(&comps, ab, x)?).abs());
        }
        rep.at_most(format!("score.finite_difference.alpha_bar_{ab}"), fd_err, 1e-4);
        rep.at_most(format!("score.quadrature.alpha_bar_{ab}"), quad_err, 1e-8);
    }
    Ok(())
}

/// `visit_count` against a counter advanced by walking the noise order.
pub fn visit_count_check(table: &ScheduleTable, rep: &mut Report) -> Result<()> {
    let layout = table.layout();
    let mut counts = vec![0usize; layout.len()];
    let mut mismatches = 0usize;
    for t in 0..=table.total_steps() {
        let current = (t < table.total_steps()).then(|| table.position(t));
        let kmax = if current.is_some() { table.inner_steps(t) } else { 0 };
        for k in 0..=kmax {
            for (pos, &c) in counts.iter().enumerate() {
                let extra = if Some(pos) == current && !layout.is_discrete(pos) {
                    k
                } else {
                    0
                };
                if table.visit_count(pos, t, k)? != c + extra {
                    mismatches += 1;
                }
            }
        }
        if let Some(pos) = current {
            counts[pos] += if layout.is_discrete(pos) {
                1
            } else {
                table.inner_steps(t)
            };
        }
    }
    rep.at_most("consistency.visit_count_mismatches", mismatches as f64, 0.0);
    Ok(())
}

/// Discrete marginals of direct draws of `s^(t)` against the step walk and
/// against the exact law, at a few times.
pub fn discrete_consistency(
    chain: &ExactChain,
    target: &TargetDistribution,
    n: usize,
    seed: u64,
    rep: &mut Report,
) -> Result<()> {
    let table = chain.table();
    let t_total = table.total_steps();
    let mut times = vec![1, t_total / 2, t_total];
    times.dedup();
    for t in times {
        let pairs: Vec<(Sequence, Sequence)> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = keyed_rng(seed, &[domain::ORACLE, tag::DISCRETE_CONSISTENCY, t as u64, i]);
                let s0 = target.sample(&mut rng);
                let d = sample_state_at(&s0, table, t, None, &mut rng)?.0;
                let w = forward_walk(&s0, table, 0, t, &mut rng)?;
                Ok((d, w))
            })
            .collect::<igd_core::Result<_>>()?;
        let (direct, walked): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (hd, hw) = (chain.histogram(&direct), chain.histogram(&walked));
        let bound = tv_bound(chain.law(t), n, 0.01);
        rep.at_most(format!("consistency.discrete.direct_vs_walk.t{t}"), tv(&hd, &hw), bound);
        rep.at_most(
            format!("consistency.discrete.direct_vs_exact.t{t}"),
            tv(&hd, chain.law(t)),
            bound,
        );
    }
    Ok(())
}

fn moments(xs: &[f64]) -> [(f64, f64); 2] {
    let n = xs.len() as f64;
    let mut out = [(0.0, 0.0); 2];
    for (p, slot) in out.iter_mut().enumerate() {
        let v: Vec<f64> = xs.iter().map(|x| x.powi(p as i32 + 1)).collect();
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0);
        *slot = (m, (var / n).sqrt());
    }
    out
}

/// First two moments of every continuous scalar, direct draw of `s^(t,k)`
/// against the step walk, within three standard errors. Probes the middle
/// of the first and last visit of each continuous element.
pub fn continuous_consistency(
    target: &TargetDistribution,
    table: &ScheduleTable,
    n: usize,
    seed: u64,
    rep: &mut Report,
) -> Result<()> {
    let layout = table.layout();
    let l1 = layout.discrete_len();
    if layout.continuous_len() == 0 {
        return Ok(());
    }
    let mut probes = Vec::new();
    for pos in l1..layout.len() {
        let visits: Vec<usize> = (0..table.total_steps()).filter(|&t| table.position(t) == pos).collect();
        for &t in [visits.first(), visits.last()].into_iter().flatten() {
            probes.push((t, table.inner_steps(t) / 2));
        }
    }
    probes.push((table.total_steps(), 0));
    for (t, k) in probes {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = keyed_rng(
                    seed,
                    &[domain::ORACLE, tag::CONTINUOUS_CONSISTENCY, t as u64, k as u64, i],
                );
                let s0 = target.sample(&mut rng);
                let (d, _) = sample_state_at(&s0, table, t, Some(k), &mut rng)?;
                let mut w = forward_walk(&s0, table, 0, t, &mut rng)?;
                for kk in 0..k {
                    w = forward_step_continuous(&w, table, t, kk, &mut rng)?;
                }
                let flat = |s: &Sequence| s.vectors().iter().flatten().copied().collect::<Vec<f64>>();
                Ok((flat(&d), flat(&w)))
            })
            .collect::<igd_core::Result<_>>()?;
        let dim = pairs[0].0.len();
        let mut worst = 0.0f64;
        for c in 0..dim {
            let d: Vec<f64> = pairs.iter().map(|p| p.0[c]).collect();
            let w: Vec<f64> = pairs.iter().map(|p| p.1[c]).collect();
            let (md, mw) = (moments(&d), moments(&w));
            for p in 0..2 {
                let se = (md[p].1.powi(2) + mw[p].1.powi(2)).sqrt();
                let gap = (md[p].0 - mw[p].0).abs();
                worst = worst.max(if gap == 0.0 { 0.0 } else { gap / se });
            }
        }
        rep.at_most(
            format!("consistency.continuous.moments_in_stderr.t{t}.k{k}"),
            worst,
            3.0,
        );
    }
    Ok(())
}

/// Which exact flavors reverse the chain: leave-one-out needs every
/// Π(φ) < 1, the binary reduction additionally Π(φ) > 0.
pub fn exact_flavors(table: &ScheduleTable) -> Vec<DiscreteFlavor> {
    let phis = table.discrete().phi_per_round();
    let mut out = vec![DiscreteFlavor::Posterior];
    if phis.iter().all(|&p| p < 1.0) {
        out.push(DiscreteFlavor::LeaveOneOut);
        if phis.iter().all(|&p| p > 0.0) {
            out.push(DiscreteFlavor::Binary);
        }
    }
    out
}

pub fn flavor_name(flavor: DiscreteFlavor) -> &'static str {
    match flavor {
        DiscreteFlavor::LeaveOneOut => "leave_one_out",
        DiscreteFlavor::Posterior => "posterior",
        DiscreteFlavor::Binary => "binary",
    }
}

/// Composite reversal error per exact flavor.
pub fn reversal_errors(chain: &ExactChain) -> Result<Vec<(DiscreteFlavor, f64)>> {
    let t_total = chain.table().total_steps();
    exact_flavors(chain.table())
        .into_iter()
        .map(|flavor| {
            let den = ChainDenoiser { chain, flavor };
            let p0 = chain.composite_reverse(&den, chain.law(t_total), 1.0)?;
            Ok((flavor, max_abs(&p0, chain.law(0))))
        })
        .collect()
}

/// Largest gap between the binary reduction converted back and the
/// leave-one-out conditional, over every time and state.
pub fn binary_identity_error(chain: &ExactChain) -> Result<f64> {
    let table = chain.table();
    let mut worst = 0.0f64;
    for t in 0..table.total_steps() {
        let pos = table.position(t);
        for s in 0..chain.num_states() {
            let out = DiscreteOutput::Binary(chain.binary(t, s, pos));
            let (p, _) = output_to_conditional(&out, table.discrete(), table.round_of(t))?;
            worst = worst.max(max_abs(&p, &chain.leave_one_out(t, s, pos)));
        }
    }
    Ok(worst)
}

/// Generates `n` samples from the exact `P_T` with the exact chain
/// denoiser and returns the TV of their histogram to `π`.
pub fn chain_generation_tv(chain: &ExactChain, flavor: DiscreteFlavor, n: usize, seed: u64) -> Result<f64> {
    let t_total = chain.table().total_steps();
    let ids: Vec<u64> = (0..n as u64).collect();
    let init: Vec<Sequence> = ids
        .iter()
        .map(|&i| chain.sample_law(t_total, &mut keyed_rng(seed, &[domain::ORACLE, tag::CHAIN_MC, i])))
        .collect();
    let den = ChainDenoiser { chain, flavor };
    let out = generate_from(&den, chain.table(), &SamplerConfig::default(), init, seed, &ids)?;
    Ok(tv(&chain.histogram(&out.finished()), chain.law(0)))
}

pub fn exact_chain_checks(chain: &ExactChain, cfg: &RunConfig, seed: u64, rep: &mut Report) -> Result<()> {
    let table = chain.table();
    let mixes = table.discrete().mixes();
    let mut l1 = verify_lemma1(chain, cfg.verify.terminal_tv);
    l1.warnings.clear();
    if !mixes {
        l1.assertions.retain(|a| a.name != "lemma1.terminal_tv");
        l1.note("terminal TV not asserted: the convergence hypothesis does not hold");
    }
    rep.merge(l1);
    for (flavor, err) in reversal_errors(chain)? {
        rep.at_most(format!("reversal.exact.{}", flavor_name(flavor)), err, 1e-10);
    }
    let flavors = exact_flavors(table);
    if flavors.contains(&DiscreteFlavor::Binary) {
        rep.at_most("binary_reduction.identity", binary_identity_error(chain)?, 1e-12);
    }
    let flavor = *flavors.last().expect("posterior is always exact");
    let n = cfg.verify.mc_samples;
    let d = chain_generation_tv(chain, flavor, n, seed)?;
    rep.at_most("reversal.monte_carlo_tv", d, tv_bound(chain.law(0), n, 0.015));
    Ok(())
}

/// Label frequencies, per-label means and the W1 proxy of samples drawn
/// with the exact mixture denoiser from the exact `P_T`.
pub struct MixedStats {
    pub label_gap: f64,
    pub mean_gap: f64,
    pub w1: f64,
    pub samples: Vec<Sequence>,
}

pub fn mixed_generation(target: &TargetDistribution, table: &ScheduleTable, n: usize, seed: u64) -> Result<MixedStats> {
    let den = MixtureDenoiser::new(target, table, DiscreteFlavor::Binary)?;
    let ids: Vec<u64> = (0..n as u64).collect();
    let init: Vec<Sequence> = ids
        .par_iter()
        .map(|&i| {
            sample_terminal(
                target,
                table,
                &mut keyed_rng(seed, &[domain::ORACLE, tag::MIXED_INIT, i]),
            )
        })
        .collect::<igd_core::Result<_>>()?;
    let out = generate_from(
        &den,
        table,
        &SamplerConfig::default(),
        init,
        seed ^ tag::MIXED_SAMPLER,
        &ids,
    )?;
    let samples = out.finished();
    let vocab = table.layout().vocab_size();
    let marginal = target.token_marginal(0);
    let (mut label_gap, mut mean_gap) = (0.0f64, 0.0f64);
    for tok in 0..vocab {
        let xs: Vec<&Sequence> = samples.iter().filter(|s| s.tokens()[0] == tok).collect();
        label_gap = label_gap.max((xs.len() as f64 / n as f64 - marginal[tok as usize]).abs());
        if let Some(mean) = target.conditional_mean(0, tok, 0) {
            if xs.is_empty() {
                mean_gap = f64::INFINITY;
                continue;
            }
            for (c, m) in mean.iter().enumerate() {
                let got = xs.iter().map(|s| s.vectors()[0][c]).sum::<f64>() / xs.len() as f64;
                mean_gap = mean_gap.max((got - m).abs());
            }
        }
    }
    let reference: Vec<Vec<f64>> = (0..n as u64)
        .map(|i| {
            target
                .sample(&mut keyed_rng(seed, &[domain::ORACLE, tag::MIXED_REFERENCE, i]))
                .vectors()[0]
                .clone()
        })
        .collect();
    let gen: Vec<Vec<f64>> = samples.iter().map(|s| s.vectors()[0].clone()).collect();
    Ok(MixedStats {
        label_gap,
        mean_gap,
        w1: w1_proxy(&gen, &reference),
        samples,
    })
}

/// Runs every check that applies to the configured task.
pub fn run_suite(cfg: &RunConfig, task: &Task, seed: u64) -> Result<Report> {
    let mut rep = Report::new();
    for w in task.table.warnings() {
        rep.warn(w);
    }
    rep.holds("consistency.schedule_tables", task.table.verify_consistency().is_ok());
    visit_count_check(&task.table, &mut rep)?;
    score_checks(&mut rep)?;
    let v = &cfg.verify;
    if let Some(target) = &task.target {
        continuous_consistency(target, &task.table, v.consistency_samples.min(40_000), seed, &mut rep)?;
        let c = wasserstein_contraction_check(target, &task.table, v.contraction_pairs, seed ^ tag::CONTRACTION)?;
        rep.merge(c);
    }
    match &cfg.task {
        TaskConfig::ToyDiscrete { .. } => {
            let target = task.target.as_ref().expect("toy target");
            let chain = ExactChain::enumerate(target, &task.table)?;
            discrete_consistency(&chain, target, v.consistency_samples, seed, &mut rep)?;
            exact_chain_checks(&chain, cfg, seed, &mut rep)?;
        }
        TaskConfig::ToyMixed { .. } | TaskConfig::Ring { .. } => {
            let target = task.target.as_ref().expect("synthetic target");
            let n = v.mc_samples.min(100_000);
            let st = mixed_generation(target, &task.table, n, seed)?;
            rep.at_most("mixed.label_marginal_gap", st.label_gap, 0.01);
            rep.at_most("mixed.per_label_mean_gap", st.mean_gap, 0.02);
            rep.at_most("mixed.w1_proxy", st.w1, 0.05);
            if let (Some(acc), Some(ideal)) = (task.constraint_accuracy(&st.samples), task.ideal_accuracy()) {
                let se = (ideal * (1.0 - ideal) / n as f64).sqrt();
                rep.at_most("ring.exact_denoiser_accuracy_gap", (acc - ideal).abs(), 4.0 * se + 1e-3);
            }
        }
        TaskConfig::Sat { n, .. } => {
            let all_ok = task
                .train
                .iter()
                .chain(&task.test)
                .all(|s| sequence_solves(s, *n).unwrap_or(false));
            rep.holds("sat.stored_assignments_satisfy", all_ok);
            let test_ok = task.sat_test.iter().all(|i| check_sat(&i.clauses, &i.assignment).0);
            rep.holds("sat.test_assignments_satisfy", test_ok);
        }
        TaskConfig::Tabular { .. } => {
            let finite = task
                .train
                .iter()
                .chain(&task.test)
                .all(|s| s.vectors().iter().flatten().all(|x| x.is_finite()));
            rep.holds("tabular.encoded_values_finite", finite);
        }
    }
    Ok(rep)
}
