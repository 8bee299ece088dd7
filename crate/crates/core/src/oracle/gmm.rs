//! Closed forms for Gaussian-mixture targets under DDPM noising, and
//! independent numeric evaluators used to check them.

use crate::error::{IgdError, Result};

use super::mixture::{log_normal, log_sum_exp};
use super::quad::{integrate, QUAD_TOL};
use super::target::Component;

fn check_alpha(alpha_bar: f64) -> Result<()> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(IgdError::InvalidValue(format!("ᾱ = {alpha_bar} outside (0, 1]")));
    }
    if alpha_bar >= 1.0 - 1e-15 {
        return Err(IgdError::DegenerateNoising(
            "ᾱ is numerically 1; the noise is not identifiable".into(),
        ));
    }
    Ok(())
}

fn component_logs(comps: &[Component], alpha_bar: f64, x: &[f64]) -> Vec<f64> {
    let sa = alpha_bar.sqrt();
    comps
        .iter()
        .map(|c| {
            c.weight.ln()
                + x.iter()
                    .zip(&c.mean)
                    .zip(&c.std)
                    .map(|((&xi, &m), &s)| log_normal(xi, sa * m, alpha_bar * s * s + 1.0 - alpha_bar))
                    .sum::<f64>()
        })
        .collect()
}

/// Log-density of `√ᾱ S0 + √(1−ᾱ) ε` with `S0` drawn from the mixture.
pub fn gmm_log_density(comps: &[Component], alpha_bar: f64, x: &[f64]) -> f64 {
    log_sum_exp(&component_logs(comps, alpha_bar, x))
}

/// `E[ε | x]` in closed form: posterior component weights, then
/// `(x − √ᾱ E[S0 | x]) / √(1−ᾱ)`.
pub fn gmm_ideal_eps(comps: &[Component], alpha_bar: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha_bar)?;
    let logs = component_logs(comps, alpha_bar, x);
    let z = log_sum_exp(&logs);
    let sa = alpha_bar.sqrt();
    let mut mean0 = vec![0.0; x.len()];
    for (c, l) in comps.iter().zip(&logs) {
        let w = (l - z).exp();
        for (i, m0) in mean0.iter_mut().enumerate() {
            let s2 = c.std[i] * c.std[i];
            let post = c.mean[i] + sa * s2 / (alpha_bar * s2 + 1.0 - alpha_bar) * (x[i] - sa * c.mean[i]);
            *m0 += w * post;
        }
    }
    let sn = (1.0 - alpha_bar).sqrt();
    Ok(x.iter().zip(&mean0).map(|(xi, m)| (xi - sa * m) / sn).collect())
}

/// Analytic score `∇ log f(x)` of the noised mixture.
pub fn gmm_score(comps: &[Component], alpha_bar: f64, x: &[f64]) -> Vec<f64> {
    let logs = component_logs(comps, alpha_bar, x);
    let z = log_sum_exp(&logs);
    let sa = alpha_bar.sqrt();
    let mut g = vec![0.0; x.len()];
    for (c, l) in comps.iter().zip(&logs) {
        let w = (l - z).exp();
        for (i, gi) in g.iter_mut().enumerate() {
            let v = alpha_bar * c.std[i] * c.std[i] + 1.0 - alpha_bar;
            *gi -= w * (x[i] - sa * c.mean[i]) / v;
        }
    }
    g
}

/// Central finite difference of the 1D log-density.
pub fn fd_score(comps: &[Component], alpha_bar: f64, x: f64, h: f64) -> f64 {
    (gmm_log_density(comps, alpha_bar, &[x + h]) - gmm_log_density(comps, alpha_bar, &[x - h])) / (2.0 * h)
}

/// `E[ε | x]` for a 1D mixture by direct quadrature of the defining
/// conditional expectation over `S0`, each component integrated on its
/// `μ ± 8σ` envelope.
pub fn gmm_eps_by_quadrature(comps: &[Component], alpha_bar: f64, x: f64) -> Result<f64> {
    check_alpha(alpha_bar)?;
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    // Shift the likelihood by its largest component so integrands stay O(1).
    let shift = component_logs(comps, alpha_bar, &[x])
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for c in comps {
        let (m, s) = (c.mean[0], c.std[0]);
        let joint = |s0: f64| {
            (c.weight.ln() + log_normal(s0, m, s * s) + log_normal(x, sa * s0, 1.0 - alpha_bar) - shift).exp()
        };
        let (lo, hi) = (m - 8.0 * s, m + 8.0 * s);
        den += integrate(joint, lo, hi, QUAD_TOL);
        num += integrate(|s0| joint(s0) * (x - sa * s0) / sn, lo, hi, QUAD_TOL);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two() -> Vec<Component> {
        vec![
            Component::isotropic(0.5, vec![-2.0], 0.5),
            Component::isotropic(0.5, vec![2.0], 0.5),
        ]
    }

    #[test]
    fn standard_normal_identity() {
        let c = vec![Component::isotropic(1.0, vec![0.0], 1.0)];
        for ab in [0.1, 0.5, 0.9] {
            for x in [-3.0, -0.2, 1.4] {
                let e = gmm_ideal_eps(&c, ab, &[x]).unwrap()[0];
                assert_abs_diff_eq!(e, (1.0 - ab).sqrt() * x, epsilon = 1e-14);
                assert_abs_diff_eq!(gmm_score(&c, ab, &[x])[0], -x, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_alpha_rejected() {
        assert!(matches!(
            gmm_ideal_eps(&two(), 1.0, &[0.0]),
            Err(IgdError::DegenerateNoising(_))
        ));
        assert!(gmm_ideal_eps(&two(), 0.0, &[0.0]).is_err());
    }

    #[test]
    fn closed_form_matches_quadrature_on_grid() {
        let c = two();
        let mut worst: f64 = 0.0;
        for i in 0..10_000 {
            let x = -4.0 + 8.0 * i as f64 / 9_999.0;
            let a = gmm_ideal_eps(&c, 0.5, &[x]).unwrap()[0];
            let b = gmm_eps_by_quadrature(&c, 0.5, x).unwrap();
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-8, "max abs err {worst}");
    }

    #[test]
    fn score_relation() {
        let c = two();
        for ab in [0.9, 0.5, 0.1] {
            for i in 0..=800 {
                let x = -4.0 + i as f64 * 0.01;
                let e = gmm_ideal_eps(&c, ab, &[x]).unwrap()[0];
                let s = -e / (1.0 - ab).sqrt();
                assert!((s - fd_score(&c, ab, x, 1e-4)).abs() < 1e-4);
                assert_abs_diff_eq!(s, gmm_score(&c, ab, &[x])[0], epsilon = 1e-10);
            }
        }
    }
}
