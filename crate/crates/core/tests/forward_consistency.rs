use std::sync::Arc;

use igd_core::forward::{forward_step, forward_step_continuous, forward_walk, sample_state_at};
use igd_core::oracle::{tv, ExactChain, TargetDistribution};
use igd_core::rng::keyed_rng;
use igd_core::schedule::{BetaSchedule, ContinuousSchedule, DiscreteSchedule, NoiseOrder, ScheduleTable};
use igd_core::state::{ElementLayout, Sequence};

fn discrete_table() -> ScheduleTable {
    let layout = Arc::new(ElementLayout::new(3, vec![], 2).unwrap());
    ScheduleTable::new(
        layout,
        NoiseOrder::with_permutation(vec![1, 2, 0], 3).unwrap(),
        DiscreteSchedule::new(vec![0.7, 0.5, 0.3], 2).unwrap(),
        ContinuousSchedule::new(vec![1; 3], BetaSchedule::Table { values: vec![0.1; 3] }).unwrap(),
    )
    .unwrap()
}

fn mixed_table() -> ScheduleTable {
    let layout = Arc::new(ElementLayout::new(1, vec![1, 2], 3).unwrap());
    ScheduleTable::new(
        layout.clone(),
        NoiseOrder::with_permutation(vec![2, 0, 1], 2).unwrap(),
        DiscreteSchedule::new(vec![0.6, 0.4], 3).unwrap(),
        ContinuousSchedule::new(vec![5, 7], BetaSchedule::Cosine { a: 0.01, b: 0.2 }).unwrap(),
    )
    .unwrap()
}

fn histogram(seqs: &[Sequence], chain: &ExactChain) -> Vec<f64> {
    chain.histogram(seqs)
}

#[test]
fn discrete_direct_draws_match_the_step_walk() {
    let tb = discrete_table();
    let target = TargetDistribution::discrete_table(
        tb.layout_arc().clone(),
        vec![0.35, 0.025, 0.025, 0.25, 0.025, 0.15, 0.15, 0.025],
    )
    .unwrap();
    let chain = ExactChain::enumerate(&target, &tb).unwrap();
    let n = 200_000u64;
    for t in [1, 4, 6, 9] {
        let mut direct = Vec::with_capacity(n as usize);
        let mut walked = Vec::with_capacity(n as usize);
        for i in 0..n {
            let mut rng = keyed_rng(31, &[t as u64, i]);
            let s0 = target.sample(&mut rng);
            direct.push(sample_state_at(&s0, &tb, t, None, &mut rng).unwrap().0);
            walked.push(forward_walk(&s0, &tb, 0, t, &mut rng).unwrap());
        }
        let (hd, hw) = (histogram(&direct, &chain), histogram(&walked, &chain));
        assert!(tv(&hd, &hw) < 0.01, "t = {t}");
        assert!(tv(&hd, chain.law(t)) < 0.01, "t = {t}");
    }
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

#[test]
fn continuous_direct_draws_match_the_step_walk_in_two_moments() {
    let tb = mixed_table();
    let layout = tb.layout_arc().clone();
    let s0 = Sequence::new(layout.clone(), vec![2], vec![vec![1.5], vec![-0.5, 2.0]]).unwrap();
    let n = 40_000u64;
    // (t, k): k > 0 probes mid-visit states of the element being noised
    for (t, k) in [(0, 2), (1, 0), (2, 4), (3, 3), (5, 6), (6, 0)] {
        let mut direct = vec![Vec::new(); 3];
        let mut walked = vec![Vec::new(); 3];
        for i in 0..n {
            let mut rng = keyed_rng(41, &[t as u64, k as u64, i]);
            let (d, _) = sample_state_at(&s0, &tb, t, Some(k), &mut rng).unwrap();
            let mut w = forward_walk(&s0, &tb, 0, t, &mut rng).unwrap();
            for kk in 0..k {
                w = forward_step_continuous(&w, &tb, t, kk, &mut rng).unwrap();
            }
            for (out, s) in [(&mut direct, &d), (&mut walked, &w)] {
                out[0].push(s.vectors()[0][0]);
                out[1].push(s.vectors()[1][0]);
                out[2].push(s.vectors()[1][1]);
            }
        }
        for c in 0..3 {
            let (md, mw) = (moments(&direct[c]), moments(&walked[c]));
            for p in 0..2 {
                let se = (md[p].1.powi(2) + mw[p].1.powi(2)).sqrt();
                assert!(
                    (md[p].0 - mw[p].0).abs() <= 3.0 * se,
                    "t={t} k={k} coord={c} moment={} direct={} walked={} se={se}",
                    p + 1,
                    md[p].0,
                    mw[p].0
                );
            }
        }
    }
}

#[test]
fn visit_counts_match_a_step_walk_counter() {
    for tb in [discrete_table(), mixed_table()] {
        let layout = tb.layout_arc().clone();
        let mut counts = vec![0usize; layout.len()];
        for t in 0..=tb.total_steps() {
            let current = (t < tb.total_steps()).then(|| tb.position(t));
            let kmax = if current.is_some() { tb.inner_steps(t) } else { 0 };
            for k in 0..=kmax {
                for pos in 0..layout.len() {
                    let extra = if Some(pos) == current && !layout.is_discrete(pos) {
                        k
                    } else {
                        0
                    };
                    assert_eq!(
                        tb.visit_count(pos, t, k).unwrap(),
                        counts[pos] + extra,
                        "pos {pos} t {t} k {k}"
                    );
                }
            }
            if let Some(pos) = current {
                counts[pos] += if layout.is_discrete(pos) { 1 } else { tb.inner_steps(t) };
            }
        }
        tb.verify_consistency().unwrap();
    }
}

#[test]
fn one_step_of_the_walk_equals_a_direct_jump_from_zero_noise() {
    // starting at t=0 a single discrete step is a direct jump to t=1
    let tb = discrete_table();
    let layout = tb.layout_arc().clone();
    let s0 = Sequence::new(layout, vec![1, 0, 1], vec![]).unwrap();
    let n = 100_000u64;
    let pos = tb.position(0);
    let mut changed_direct = 0;
    let mut changed_step = 0;
    for i in 0..n {
        let mut rng = keyed_rng(51, &[i]);
        changed_direct +=
            (sample_state_at(&s0, &tb, 1, None, &mut rng).unwrap().0.tokens()[pos] != s0.tokens()[pos]) as u32;
        changed_step += (forward_step(&s0, &tb, 0, &mut rng).unwrap().tokens()[pos] != s0.tokens()[pos]) as u32;
    }
    // each changes with probability (1 − Π(φ)) / 2 = 0.15
    let se = (0.15f64 * 0.85 / n as f64).sqrt();
    for c in [changed_direct, changed_step] {
        assert!((c as f64 / n as f64 - 0.15).abs() < 4.0 * se);
    }
}
