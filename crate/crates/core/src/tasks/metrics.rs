//! Sample-quality metrics.

/// Exact 1-Wasserstein distance between two 1D empirical laws,
/// `∫ |F_a − F_b|`.
pub fn w1(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = xa[0].min(xb[0]);
    let mut total = 0.0;
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        prev = next;
        while i < xa.len() && xa[i] == next {
            i += 1;
        }
        while j < xb.len() && xb[j] == next {
            j += 1;
        }
    }
    total
}

/// Per-coordinate 1D W1 averaged over coordinates. A proxy for the
/// multivariate distance, reported as such.
pub fn w1_proxy(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a.first().map_or(0, Vec::len);
    if d == 0 || b.is_empty() {
        return f64::NAN;
    }
    (0..d)
        .map(|c| {
            let ca: Vec<f64> = a.iter().map(|v| v[c]).collect();
            let cb: Vec<f64> = b.iter().map(|v| v[c]).collect();
            w1(&ca, &cb)
        })
        .sum::<f64>()
        / d as f64
}

/// Empirical probabilities of category ids `0..bins`.
pub fn histogram(xs: &[usize], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &x in xs {
        if x < bins {
            h[x] += 1.0;
        }
    }
    let n = xs.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Total variation between the category histograms of two samples.
pub fn tv_hist(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let (ha, hb) = (histogram(a, bins), histogram(b, bins));
    0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
