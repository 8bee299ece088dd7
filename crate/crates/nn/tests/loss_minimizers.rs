//! The discrete losses, fitted with one free parameter set per context over
//! the enumerated forward chain, recover the exact oracle conditionals.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;

use igd_core::oracle::{ExactChain, TargetDistribution};
use igd_core::schedule::{BetaSchedule, ContinuousSchedule, DiscreteSchedule, NoiseOrder, ScheduleTable};
use igd_core::state::ElementLayout;
use igd_nn::params::ParamStore;
use igd_nn::tape::{sigmoid, Tape};

fn chain() -> ExactChain {
    let layout = Arc::new(ElementLayout::new(3, vec![], 2).unwrap());
    let tb = ScheduleTable::new(
        layout.clone(),
        NoiseOrder::round_robin(3, 2).unwrap(),
        DiscreteSchedule::new(vec![0.5, 0.5], 2).unwrap(),
        ContinuousSchedule::new(vec![1; 2], BetaSchedule::Table { values: vec![0.1; 2] }).unwrap(),
    )
    .unwrap();
    let target =
        TargetDistribution::discrete_table(layout, vec![0.35, 0.025, 0.025, 0.25, 0.025, 0.15, 0.15, 0.025]).unwrap();
    ExactChain::enumerate(&target, &tb).unwrap()
}

/// Weighted `(next state, previous token at i_t, z was φ)` triples at `t`.
fn transitions(ch: &ExactChain, t: usize) -> Vec<(usize, usize, bool, f64)> {
    let tb = ch.table();
    let pos = tb.position(t);
    let round = tb.round_of(t);
    let (keep, tok) = (tb.discrete().phi(round), tb.discrete().token_prob(round));
    let mut out = Vec::new();
    for s in 0..ch.num_states() {
        let p = ch.law(t)[s];
        let toks = ch.tokens_of(s);
        out.push((s, toks[pos] as usize, true, p * keep));
        for x in 0..2u32 {
            let mut next = toks.clone();
            next[pos] = x;
            out.push((ch.index_of(&next), toks[pos] as usize, false, p * tok));
        }
    }
    out
}

fn normalized(tr: &[(usize, usize, bool, f64)]) -> (BTreeMap<usize, usize>, Vec<f64>) {
    let mut keys = BTreeMap::new();
    let mut totals = Vec::new();
    for &(s, _, _, w) in tr {
        let n = keys.len();
        let k = *keys.entry(s).or_insert(n);
        if k == totals.len() {
            totals.push(0.0);
        }
        totals[k] += w;
    }
    (keys, totals)
}

#[test]
fn bce_minimizer_is_the_binary_oracle() {
    let ch = chain();
    for t in 0..ch.table().total_steps() {
        let pos = ch.table().position(t);
        let tr = transitions(&ch, t);
        let (keys, totals) = normalized(&tr);
        let mut ps = ParamStore::new();
        ps.push("theta", Array2::zeros((keys.len(), 1)));
        for _ in 0..4000 {
            let mut tape = Tape::new(&ps);
            let th = tape.param(0);
            let mut g = ps.zeros_like();
            for &(s, _, phi, w) in &tr {
                let k = keys[&s];
                let l = tape.bce_logit(th, k, 0, !phi);
                tape.backward(l, w / totals[k], &mut g).unwrap();
            }
            let upd = &g.tensors[0] * 2.0;
            *ps.get_mut(0) -= &upd;
        }
        for (&s, &k) in &keys {
            let shown = ch.tokens_of(s)[pos] as usize;
            let exact = ch.binary(t, s, pos)[shown];
            let fit = sigmoid(ps.get(0)[[k, 0]]);
            assert!((fit - exact).abs() < 1e-6, "t={t} state={s}: fit {fit} exact {exact}");
        }
    }
}

#[test]
fn cross_entropy_minimizer_is_the_posterior_oracle() {
    let ch = chain();
    for t in 0..ch.table().total_steps() {
        let pos = ch.table().position(t);
        let tr = transitions(&ch, t);
        let (keys, totals) = normalized(&tr);
        let mut ps = ParamStore::new();
        ps.push("theta", Array2::zeros((keys.len(), 2)));
        for _ in 0..4000 {
            let mut tape = Tape::new(&ps);
            let th = tape.param(0);
            let mut g = ps.zeros_like();
            for &(s, prev, _, w) in &tr {
                let k = keys[&s];
                let l = tape.cross_entropy(th, k, prev);
                tape.backward(l, w / totals[k], &mut g).unwrap();
            }
            let upd = &g.tensors[0] * 1.5;
            *ps.get_mut(0) -= &upd;
        }
        for (&s, &k) in &keys {
            let exact = ch.posterior(t, s, pos);
            let row = ps.get(0).row(k).to_vec();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for (c, v) in row.iter().enumerate() {
                let fit = v.exp() / z;
                assert!(
                    (fit - exact[c]).abs() < 1e-6,
                    "t={t} state={s} class={c}: fit {fit} exact {}",
                    exact[c]
                );
            }
        }
    }
}
