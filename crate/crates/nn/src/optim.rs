//! AdamW, the warmup-cosine learning-rate schedule and parameter EMA.

use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Grads,
    v: Grads,
    steps: i32,
}

impl AdamW {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: params.zeros_like(),
            v: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            let g = &grads.tensors[i];
            let m = &mut self.m.tensors[i];
            let v = &mut self.v.tensors[i];
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *p -= lr * (update + self.weight_decay * *p);
            });
        }
    }
}

/// Linear warmup over `warmup` steps to `peak`, then cosine decay to
/// `min(floor, peak)` at `total`.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize, floor: f64) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let floor = floor.min(peak);
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl Ema {
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }

    /// `ema ← decay · ema + (1 − decay) · θ`.
    pub fn update(&mut self, params: &ParamStore) {
        for i in 0..params.len() {
            let d = self.decay;
            ndarray::Zip::from(self.shadow.get_mut(i))
                .and(params.get(i))
                .for_each(|e, &p| *e = d * *e + (1.0 - d) * p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn warmup_then_cosine() {
        assert!((lr_at(0, 1.0, 10, 110, 1e-6) - 0.1).abs() < 1e-15);
        assert!((lr_at(9, 1.0, 10, 110, 1e-6) - 1.0).abs() < 1e-15);
        assert!((lr_at(10, 1.0, 10, 110, 1e-6) - 1.0).abs() < 1e-15);
        assert!((lr_at(60, 1.0, 10, 110, 0.0) - 0.5).abs() < 1e-12);
        assert!((lr_at(110, 1.0, 10, 110, 1e-6) - 1e-6).abs() < 1e-15);
        assert_eq!(lr_at(50, 0.0, 10, 110, 1e-6), 0.0);
    }

    #[test]
    fn ema_of_a_constant_follows_the_geometric_series() {
        let mut ps = ParamStore::new();
        ps.push("w", array![[0.0]]);
        let mut ema = Ema::new(&ps, 0.9);
        ps.get_mut(0)[[0, 0]] = 1.0;
        for n in 1..=20 {
            ema.update(&ps);
            let expect = 1.0 - 0.9f64.powi(n);
            assert!((ema.shadow.get(0)[[0, 0]] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut ps = ParamStore::new();
        ps.push("w", array![[1.0, -2.0]]);
        let mut opt = AdamW::new(&ps, 0.9, 0.999, 1e-8, 0.0);
        let g = crate::params::Grads {
            tensors: vec![array![[3.0, -0.5]]],
        };
        opt.step(&mut ps, &g, 0.1);
        assert!((ps.get(0)[[0, 0]] - 0.9).abs() < 1e-8);
        assert!((ps.get(0)[[0, 1]] + 1.9).abs() < 1e-8);
    }
}
