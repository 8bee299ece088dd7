use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use igd_core::oracle::{sample_terminal, Atom, Component, DiscreteFlavor, MixtureDenoiser, TargetDistribution};
use igd_core::reverse::{generate, generate_from, ContinuousUpdate, SamplerConfig};
use igd_core::rng::keyed_rng;
use igd_core::schedule::{BetaSchedule, ContinuousSchedule, DiscreteSchedule, NoiseOrder, ScheduleTable};
use igd_core::state::{CondMask, ElementLayout, Sequence};
use igd_core::tasks::{w1, RingTask};

fn scalar_table(layout: Arc<ElementLayout>, rounds: usize, k: usize, b: f64) -> ScheduleTable {
    ScheduleTable::new(
        layout.clone(),
        NoiseOrder::round_robin(layout.len(), rounds).unwrap(),
        DiscreteSchedule::new(vec![0.5; rounds], layout.vocab_size()).unwrap(),
        ContinuousSchedule::new(vec![k; rounds], BetaSchedule::Cosine { a: 1e-4, b }).unwrap(),
    )
    .unwrap()
}

fn templates(layout: &Arc<ElementLayout>, n: usize) -> Vec<Sequence> {
    let tokens = vec![0; layout.discrete_len()];
    let vectors = layout.dims().iter().map(|&d| vec![0.0; d]).collect();
    vec![Sequence::new(layout.clone(), tokens, vectors).unwrap(); n]
}

#[test]
fn standard_normal_target_passes_ks() {
    let layout = Arc::new(ElementLayout::new(0, vec![1], 2).unwrap());
    let tb = scalar_table(layout.clone(), 2, 20, 0.2);
    let atom = Atom {
        weight: 1.0,
        tokens: vec![],
        means: vec![vec![0.0]],
        stds: vec![vec![1.0]],
    };
    let target = TargetDistribution::from_atoms(layout.clone(), vec![atom]).unwrap();
    let den = MixtureDenoiser::new(&target, &tb, DiscreteFlavor::LeaveOneOut).unwrap();
    let n = 100_000;
    let ids: Vec<u64> = (0..n as u64).collect();
    let out = generate(&den, &tb, &SamplerConfig::default(), &templates(&layout, n), 5, &ids).unwrap();
    let mut xs: Vec<f64> = out.finished().iter().map(|s| s.vectors()[0][0]).collect();
    xs.sort_by(f64::total_cmp);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm.cdf(x);
            (f - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 5% critical value of the one-sample KS statistic
    assert!(d < 1.358 / (n as f64).sqrt(), "KS D = {d}");
}

#[test]
fn gmm_target_w1() {
    let layout = Arc::new(ElementLayout::new(0, vec![1], 2).unwrap());
    let tb = scalar_table(layout.clone(), 2, 150, 0.1);
    let atoms = [-2.0, 2.0]
        .iter()
        .map(|&m| Atom {
            weight: 0.5,
            tokens: vec![],
            means: vec![vec![m]],
            stds: vec![vec![0.5]],
        })
        .collect();
    let target = TargetDistribution::from_atoms(layout.clone(), atoms).unwrap();
    let den = MixtureDenoiser::new(&target, &tb, DiscreteFlavor::LeaveOneOut).unwrap();
    let n = 100_000;
    let ids: Vec<u64> = (0..n as u64).collect();
    let out = generate(&den, &tb, &SamplerConfig::default(), &templates(&layout, n), 6, &ids).unwrap();
    let xs: Vec<f64> = out.finished().iter().map(|s| s.vectors()[0][0]).collect();
    let mut rng = keyed_rng(7, &[]);
    let reference: Vec<f64> = (0..n).map(|_| target.sample(&mut rng).vectors()[0][0]).collect();
    let d = w1(&xs, &reference);
    assert!(d < 0.05, "W1 = {d}");
}

#[test]
fn mixed_target_label_means() {
    let layout = Arc::new(ElementLayout::new(1, vec![1], 2).unwrap());
    let tb = scalar_table(layout.clone(), 2, 100, 0.15);
    let target = TargetDistribution::labeled_gmm(
        layout.clone(),
        vec![0.4, 0.6],
        vec![
            vec![Component::isotropic(1.0, vec![-1.0], 0.5)],
            vec![Component::isotropic(1.0, vec![1.0], 0.5)],
        ],
    )
    .unwrap();
    let den = MixtureDenoiser::new(&target, &tb, DiscreteFlavor::Binary).unwrap();
    let n = 40_000u64;
    let ids: Vec<u64> = (0..n).collect();
    let init: Vec<Sequence> = ids
        .iter()
        .map(|&i| sample_terminal(&target, &tb, &mut keyed_rng(8, &[i])).unwrap())
        .collect();
    let out = generate_from(&den, &tb, &SamplerConfig::default(), init, 9, &ids).unwrap();
    let samples = out.finished();
    for label in 0..2u32 {
        let xs: Vec<f64> = samples
            .iter()
            .filter(|s| s.tokens()[0] == label)
            .map(|s| s.vectors()[0][0])
            .collect();
        let frac = xs.len() as f64 / n as f64;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(
            (frac - [0.4, 0.6][label as usize]).abs() < 0.01,
            "label {label} frac {frac}"
        );
        assert!(
            (mean - [-1.0, 1.0][label as usize]).abs() < 0.02,
            "label {label} mean {mean}"
        );
    }
}

#[test]
fn conditioning_on_the_label_and_one_scalar() {
    let task = RingTask::new(4, 0.15).unwrap();
    let layout = Arc::new(task.layout().unwrap());
    let tb = scalar_table(layout.clone(), 2, 60, 0.2);
    let target = task.target(layout.clone()).unwrap();
    let den = MixtureDenoiser::new(&target, &tb, DiscreteFlavor::Binary).unwrap();
    let mut cond = CondMask::none(&layout);
    cond.tokens[0] = true;
    let n = 2_000;
    let templ = vec![Sequence::with_mask(layout.clone(), vec![1], vec![vec![0.0, 0.0]], cond.clone()).unwrap(); n];
    let ids: Vec<u64> = (0..n as u64).collect();
    let out = generate(&den, &tb, &SamplerConfig::default(), &templ, 3, &ids).unwrap();
    let samples = out.finished();
    assert!(samples.iter().all(|s| s.tokens()[0] == 1));
    let acc = task.constraint_accuracy(&samples);
    assert!(acc > 0.95, "{acc}");
    // fix the y coordinate at 0.25 and let x and the label move
    let mut cond = CondMask::none(&layout);
    cond.vectors[0][1] = true;
    let templ = vec![Sequence::with_mask(layout.clone(), vec![0], vec![vec![0.0, 0.25]], cond).unwrap(); 200];
    let ids: Vec<u64> = (0..200).collect();
    let out = generate(&den, &tb, &SamplerConfig::default(), &templ, 4, &ids).unwrap();
    assert!(out
        .finished()
        .iter()
        .all(|s| s.vectors()[0][1].to_bits() == 0.25f64.to_bits()));
}

#[test]
fn pseudocode_variant_runs() {
    let layout = Arc::new(ElementLayout::new(0, vec![1], 2).unwrap());
    let tb = scalar_table(layout.clone(), 2, 20, 0.2);
    let atom = Atom {
        weight: 1.0,
        tokens: vec![],
        means: vec![vec![0.0]],
        stds: vec![vec![1.0]],
    };
    let target = TargetDistribution::from_atoms(layout.clone(), vec![atom]).unwrap();
    let den = MixtureDenoiser::new(&target, &tb, DiscreteFlavor::LeaveOneOut).unwrap();
    let cfg = SamplerConfig {
        continuous_update: ContinuousUpdate::Pseudocode,
        ..Default::default()
    };
    let ids: Vec<u64> = (0..100).collect();
    let a = generate(&den, &tb, &cfg, &templates(&layout, 100), 1, &ids).unwrap();
    let b = generate(&den, &tb, &SamplerConfig::default(), &templates(&layout, 100), 1, &ids).unwrap();
    assert!(a.finished().iter().all(|s| s.vectors()[0][0].is_finite()));
    assert_ne!(a.samples, b.samples);
}
