//! Unconstrained-to-physical parameter transforms.
//!
//! Continuous parameters map through a tanh squash onto an open interval;
//! discrete parameters additionally snap to one of `cardinality` levels by
//! binning the squashed value. Both transforms are deterministic, so
//! black-box inference can operate on unconstrained coordinates.

use crate::error::{Error, Result};

/// `0.5 (1 + tanh(theta)) (upper - lower) + lower`; strictly inside
/// `(lower, upper)` for finite `theta` (up to rounding at saturation).
pub fn tanh_transform(theta: f64, lower: f64, upper: f64) -> Result<f64> {
    if upper <= lower {
        return Err(Error::input("upper bound must exceed lower bound"));
    }
    Ok(0.5 * (1.0 + theta.tanh()) * (upper - lower) + lower)
}

/// Snap the tanh-transformed value onto one of `cardinality` evenly
/// spaced levels `{lower, lower + gap, ..., upper}`.
pub fn discrete_transform(
    theta: f64,
    lower: f64,
    upper: f64,
    cardinality: usize,
) -> Result<f64> {
    if cardinality < 2 {
        return Err(Error::input("discrete transform needs cardinality >= 2"));
    }
    let t = tanh_transform(theta, lower, upper)?;
    let delta = (upper - lower) / cardinality as f64;
    // tanh saturation can round t onto the upper bound itself; the level
    // index stays within the final bin.
    let level = (((t - lower) / delta).floor() as usize).min(cardinality - 1);
    Ok(delta * level as f64 * (cardinality as f64 / (cardinality - 1) as f64) + lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tanh_midpoint_and_saturation() {
        assert_abs_diff_eq!(tanh_transform(0.0, 2.0, 6.0).unwrap(), 4.0, epsilon = 1e-14);
        assert!((tanh_transform(20.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_abs_diff_eq!(
            tanh_transform(1.0, 0.0, 1.0).unwrap(),
            0.5 * (1.0 + 1.0_f64.tanh()),
            epsilon = 1e-14
        );
        assert!((tanh_transform(1.0, 0.0, 1.0).unwrap() - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn tanh_is_strictly_increasing_and_bounded() {
        let mut last = f64::NEG_INFINITY;
        for k in -200..=200 {
            let v = tanh_transform(k as f64 * 0.05, -3.0, 7.0).unwrap();
            assert!(v > last);
            assert!(v >= -3.0 && v <= 7.0);
            last = v;
        }
    }

    #[test]
    fn discrete_image_has_exactly_cardinality_levels() {
        for cardinality in [2usize, 3, 4, 7] {
            let mut seen = std::collections::BTreeSet::new();
            let mut k = -4000;
            while k <= 4000 {
                let v = discrete_transform(k as f64 * 0.01, -1.0, 5.0, cardinality).unwrap();
                seen.insert(v.to_bits());
                k += 1;
            }
            assert_eq!(
                seen.len(),
                cardinality,
                "cardinality {cardinality}: image {:?}",
                seen.iter()
                    .map(|b| f64::from_bits(*b))
                    .collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn discrete_lower_saturation() {
        assert_abs_diff_eq!(
            discrete_transform(-30.0, 370.0, 430.0, 4).unwrap(),
            370.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn separator_thickness_levels() {
        let allowed = [370.0, 390.0, 410.0, 430.0];
        for k in -300..=300 {
            let v = discrete_transform(k as f64 * 0.1, 370.0, 430.0, 4).unwrap();
            assert!(
                allowed.iter().any(|a| (a - v).abs() < 1e-9),
                "value {v} not on a level"
            );
        }
        // saturation reaches both extreme levels
        assert_abs_diff_eq!(
            discrete_transform(30.0, 370.0, 430.0, 4).unwrap(),
            430.0,
            epsilon = 1e-9
        );
    }
}
