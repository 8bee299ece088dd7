use std::sync::Arc;

use igd_core::oracle::{tv, ChainDenoiser, DiscreteFlavor, ExactChain, TargetDistribution};
use igd_core::reverse::{generate_from, output_to_conditional, redenoise, SamplerConfig};
use igd_core::rng::keyed_rng;
use igd_core::schedule::{BetaSchedule, ContinuousSchedule, DiscreteSchedule, NoiseOrder, ScheduleTable};
use igd_core::state::{ElementLayout, Sequence};

const SOFT_PARITY: [f64; 8] = [0.35, 0.025, 0.025, 0.25, 0.025, 0.15, 0.15, 0.025];

fn table(order: NoiseOrder, phi: Vec<f64>) -> ScheduleTable {
    let r = phi.len();
    let layout = Arc::new(ElementLayout::new(3, vec![], 2).unwrap());
    ScheduleTable::new(
        layout,
        order,
        DiscreteSchedule::new(phi, 2).unwrap(),
        ContinuousSchedule::new(vec![1; r], BetaSchedule::Table { values: vec![0.1; r] }).unwrap(),
    )
    .unwrap()
}

fn chain_for(tb: &ScheduleTable) -> ExactChain {
    let target = TargetDistribution::discrete_table(tb.layout_arc().clone(), SOFT_PARITY.to_vec()).unwrap();
    ExactChain::enumerate(&target, tb).unwrap()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn posterior_flavor_kernel_is_the_time_reversal() {
    let tb = table(NoiseOrder::round_robin(3, 2).unwrap(), vec![0.5, 0.5]);
    let chain = chain_for(&tb);
    let den = ChainDenoiser {
        chain: &chain,
        flavor: DiscreteFlavor::Posterior,
    };
    for t in 0..tb.total_steps() {
        let k = chain.sampler_kernel(&den, t, 1.0).unwrap();
        let exact = chain.time_reversal_kernel(t);
        for (a, b) in k.iter().zip(&exact) {
            assert!(max_abs(a, b) < 1e-12);
        }
        // and it maps P_{t+1} back to P_t
        let back = chain.apply_reverse(t, &k, chain.law(t + 1));
        assert!(max_abs(&back, chain.law(t)) < 1e-12);
    }
}

#[test]
fn every_flavor_reverses_exactly_for_any_order() {
    let orders = [
        NoiseOrder::round_robin(3, 2).unwrap(),
        NoiseOrder::with_permutation(vec![2, 0, 1], 2).unwrap(),
        NoiseOrder::with_permutation(vec![1, 2, 0], 2).unwrap(),
        NoiseOrder::with_permutation(vec![2, 1, 0], 2).unwrap(),
    ];
    for order in orders {
        let tb = table(order, vec![0.5, 0.5]);
        let chain = chain_for(&tb);
        for flavor in [
            DiscreteFlavor::LeaveOneOut,
            DiscreteFlavor::Posterior,
            DiscreteFlavor::Binary,
        ] {
            let den = ChainDenoiser { chain: &chain, flavor };
            let p0 = chain.composite_reverse(&den, chain.law(tb.total_steps()), 1.0).unwrap();
            assert!(max_abs(&p0, chain.law(0)) < 1e-10, "{flavor:?}");
        }
    }
}

#[test]
fn binary_reduction_matches_leave_one_out_everywhere() {
    let tb = table(NoiseOrder::round_robin(3, 3).unwrap(), vec![0.8, 0.5, 0.3]);
    let chain = chain_for(&tb);
    let mut worst: f64 = 0.0;
    for t in 0..tb.total_steps() {
        let pos = tb.position(t);
        for s in 0..chain.num_states() {
            let y = chain.binary(t, s, pos);
            let out = igd_core::reverse::DiscreteOutput::Binary(y);
            let (p, clamps) = output_to_conditional(&out, tb.discrete(), tb.round_of(t)).unwrap();
            assert_eq!(clamps, 0);
            worst = worst.max(max_abs(&p, &chain.leave_one_out(t, s, pos)));
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn deterministic_target_is_recovered() {
    let tb = table(NoiseOrder::round_robin(3, 2).unwrap(), vec![0.5, 0.5]);
    let mut probs = vec![0.0; 8];
    probs[5] = 1.0;
    let target = TargetDistribution::discrete_table(tb.layout_arc().clone(), probs).unwrap();
    let chain = ExactChain::enumerate(&target, &tb).unwrap();
    let den = ChainDenoiser {
        chain: &chain,
        flavor: DiscreteFlavor::LeaveOneOut,
    };
    let ids: Vec<u64> = (0..200).collect();
    let init: Vec<Sequence> = ids
        .iter()
        .map(|&i| chain.sample_law(6, &mut keyed_rng(1, &[i])))
        .collect();
    let out = generate_from(&den, &tb, &SamplerConfig::default(), init, 4, &ids).unwrap();
    assert!(out.finished().iter().all(|s| s.tokens() == [1, 0, 1]));
}

#[test]
fn monte_carlo_generation_and_redenoise_keep_the_target() {
    let tb = table(NoiseOrder::round_robin(3, 2).unwrap(), vec![0.5, 0.5]);
    let chain = chain_for(&tb);
    let den = ChainDenoiser {
        chain: &chain,
        flavor: DiscreteFlavor::Binary,
    };
    let n = 40_000u64;
    let ids: Vec<u64> = (0..n).collect();
    let init: Vec<Sequence> = ids
        .iter()
        .map(|&i| chain.sample_law(6, &mut keyed_rng(11, &[i])))
        .collect();
    let out = generate_from(&den, &tb, &SamplerConfig::default(), init, 12, &ids).unwrap();
    let samples = out.finished();
    let h = chain.histogram(&samples);
    // 8 cells: E TV ≈ Σ sqrt(p(1-p)/(2πn)), well under 0.015 at this n
    assert!(tv(&h, chain.law(0)) < 0.015);
    let cfg = SamplerConfig {
        redenoise_rounds: 1,
        redenoise_iterations: 3,
        ..Default::default()
    };
    let again = redenoise(&den, &tb, &cfg, samples, 13, &ids).unwrap();
    assert!(tv(&chain.histogram(&again.finished()), chain.law(0)) < 0.015);
}

#[test]
fn decode_order_does_not_change_the_law() {
    let n = 30_000u64;
    let ids: Vec<u64> = (0..n).collect();
    let mut laws = Vec::new();
    for perm in [vec![0, 1, 2], vec![2, 0, 1], vec![1, 2, 0], vec![2, 1, 0]] {
        let tb = table(NoiseOrder::with_permutation(perm, 2).unwrap(), vec![0.5, 0.5]);
        let chain = chain_for(&tb);
        let den = ChainDenoiser {
            chain: &chain,
            flavor: DiscreteFlavor::LeaveOneOut,
        };
        let init: Vec<Sequence> = ids
            .iter()
            .map(|&i| chain.sample_law(6, &mut keyed_rng(21, &[i])))
            .collect();
        let out = generate_from(&den, &tb, &SamplerConfig::default(), init, 22, &ids).unwrap();
        laws.push(chain.histogram(&out.finished()));
    }
    for l in &laws[1..] {
        assert!(tv(&laws[0], l) < 0.02);
    }
}

#[test]
fn greedy_top_p_is_deterministic() {
    let tb = table(NoiseOrder::round_robin(3, 2).unwrap(), vec![0.5, 0.5]);
    let chain = chain_for(&tb);
    let den = ChainDenoiser {
        chain: &chain,
        flavor: DiscreteFlavor::LeaveOneOut,
    };
    let cfg = SamplerConfig {
        top_p: 1e-9,
        ..Default::default()
    };
    let start = chain.sample_law(6, &mut keyed_rng(0, &[]));
    let a = generate_from(&den, &tb, &cfg, vec![start.clone()], 1, &[0]).unwrap();
    let b = generate_from(&den, &tb, &cfg, vec![start], 2, &[5]).unwrap();
    assert_eq!(a.samples, b.samples);
}
