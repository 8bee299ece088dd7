//! The ring task: label `k` of `C` pairs with a 2D Gaussian centred at angle
//! `2πk/C` on the unit circle. A point should fall in its own label's
//! angular sector.

use std::f64::consts::PI;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{IgdError, Result};
use crate::oracle::quad::{integrate, QUAD_TOL};
use crate::oracle::target::{Component, TargetDistribution};
use crate::state::{ElementLayout, Sequence, Token};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingTask {
    pub labels: usize,
    pub sigma: f64,
}

impl RingTask {
    pub fn new(labels: usize, sigma: f64) -> Result<Self> {
        if labels < 2 || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(IgdError::InvalidValue("ring task needs C >= 2 and sigma > 0".into()));
        }
        Ok(Self { labels, sigma })
    }

    pub fn layout(&self) -> Result<ElementLayout> {
        ElementLayout::new(1, vec![2], self.labels as u32)
    }

    pub fn center(&self, label: usize) -> [f64; 2] {
        let a = 2.0 * PI * label as f64 / self.labels as f64;
        [a.cos(), a.sin()]
    }

    /// Uniform labels, one isotropic Gaussian per label.
    pub fn target(&self, layout: Arc<ElementLayout>) -> Result<TargetDistribution> {
        let c = self.labels;
        TargetDistribution::labeled_gmm(
            layout,
            vec![1.0 / c as f64; c],
            (0..c)
                .map(|k| vec![Component::isotropic(1.0, self.center(k).to_vec(), self.sigma)])
                .collect(),
        )
    }

    /// The label whose sector contains `p`.
    pub fn sector_of(&self, p: &[f64]) -> usize {
        let width = 2.0 * PI / self.labels as f64;
        let a = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
        ((a / width).round() as usize) % self.labels
    }

    /// Fraction of samples whose point lies in its label's sector.
    pub fn constraint_accuracy(&self, samples: &[Sequence]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let ok = samples
            .iter()
            .filter(|s| s.tokens()[0] as usize == self.sector_of(&s.vectors()[0]))
            .count();
        ok as f64 / samples.len() as f64
    }

    /// Probability that a target draw lands in its own sector, by quadrature
    /// over the angle with the radial integral in closed form.
    pub fn ideal_accuracy(&self) -> f64 {
        let s = self.sigma;
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let half = PI / self.labels as f64;
        let radial = |theta: f64| {
            let c = theta.cos();
            (-0.5 / (s * s)).exp() / (2.0 * PI)
                + c / (s * (2.0 * PI).sqrt()) * (-(1.0 - c * c) / (2.0 * s * s)).exp() * std.cdf(c / s)
        };
        integrate(radial, -half, half, QUAD_TOL)
    }

    pub fn labels_of(samples: &[Sequence]) -> Vec<Token> {
        samples.iter().map(|s| s.tokens()[0]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;

    #[test]
    fn sectors() {
        let r = RingTask::new(4, 0.15).unwrap();
        assert_eq!(r.sector_of(&[1.0, 0.1]), 0);
        assert_eq!(r.sector_of(&[0.1, 1.0]), 1);
        assert_eq!(r.sector_of(&[-1.0, -0.1]), 2);
        assert_eq!(r.sector_of(&[0.1, -1.0]), 3);
        assert_eq!(r.sector_of(&[1.0, -0.1]), 0);
    }

    #[test]
    fn ideal_accuracy_matches_grid_and_samples() {
        let r = RingTask::new(4, 0.15).unwrap();
        let q = r.ideal_accuracy();
        // independent check: midpoint rule over a Cartesian grid
        let (h, s) = (0.002, 0.15);
        let mut acc = 0.0;
        let mut x = -0.2 + h / 2.0;
        while x < 2.2 {
            let mut y = -1.2 + h / 2.0;
            while y < 1.2 {
                if r.sector_of(&[x, y]) == 0 {
                    let d2 = (x - 1.0) * (x - 1.0) + y * y;
                    acc += (-d2 / (2.0 * s * s)).exp() / (2.0 * PI * s * s) * h * h;
                }
                y += h;
            }
            x += h;
        }
        assert!((q - acc).abs() < 1e-5, "{q} vs {acc}");
        let layout = Arc::new(r.layout().unwrap());
        let target = r.target(layout).unwrap();
        let mut rng = keyed_rng(2, &[]);
        let samples: Vec<Sequence> = (0..40_000).map(|_| target.sample(&mut rng)).collect();
        let emp = r.constraint_accuracy(&samples);
        assert!((emp - q).abs() < 4.0 * (q * (1.0 - q) / 40_000.0).sqrt());
    }
}
