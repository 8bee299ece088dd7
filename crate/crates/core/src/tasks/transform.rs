//! The clipped logit reparameterization for quantities in `[0, 1]`.

/// Clip bound applied before the logit.
pub const LOGIT_CLIP: f64 = 1e-5;

/// `g(x) = log(x / (1 − x))` after clipping `x` to `[1e−5, 1 − 1e−5]`.
pub fn logit_transform(x: f64) -> f64 {
    let x = x.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
    (x / (1.0 - x)).ln()
}

/// `h(y) = 1 / (1 + e^{−y})`.
pub fn logit_inverse(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        assert_eq!(logit_transform(0.5), 0.0);
        assert_eq!(logit_inverse(0.0), 0.5);
        assert_eq!(logit_transform(0.0), logit_transform(LOGIT_CLIP));
        assert_eq!(logit_transform(1.0), logit_transform(1.0 - LOGIT_CLIP));
    }

    proptest! {
        #[test]
        fn round_trip(x in LOGIT_CLIP..=1.0 - LOGIT_CLIP) {
            prop_assert!((logit_inverse(logit_transform(x)) - x).abs() < 1e-12);
        }
    }
}
