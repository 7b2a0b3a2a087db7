//! Angles, angular series, and circular summary statistics.
//!
//! Everything downstream works with directions stored in `[0, 2*pi)`. The
//! cosine loss `1 - cos(a - b)` is the discrepancy measure used throughout:
//! it is the circular analogue of squared error and is what both the
//! cross-validation criterion and the simulation metrics accumulate.

use std::f64::consts::TAU;

use crate::error::Error;

/// A direction on the unit circle, stored in radians within `[0, 2*pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(f64);

impl Angle {
    /// Wraps `radians` into `[0, 2*pi)`. Fails on non-finite input.
    pub fn new(radians: f64) -> Result<Self, Error> {
        if !radians.is_finite() {
            return Err(Error::NonFiniteAngle(radians));
        }
        Ok(Self(wrap_raw(radians)))
    }

    /// Direction of the vector with the given sine and cosine components.
    ///
    /// The components need not be normalised; only their ratio matters.
    /// Both components zero yields an arbitrary but finite direction, so
    /// callers that care about degeneracy must check the resultant length
    /// themselves.
    pub fn from_atan2(sin_part: f64, cos_part: f64) -> Self {
        Self(wrap_raw(sin_part.atan2(cos_part)))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    pub fn sin(self) -> f64 {
        self.0.sin()
    }

    pub fn cos(self) -> f64 {
        self.0.cos()
    }

    /// Signed difference `self - other`, wrapped into `(-pi, pi]`.
    pub fn signed_difference(self, other: Angle) -> f64 {
        let mut d = (self.0 - other.0) % TAU;
        if d > std::f64::consts::PI {
            d -= TAU;
        } else if d <= -std::f64::consts::PI {
            d += TAU;
        }
        d
    }
}

/// Wraps an arbitrary finite value into `[0, 2*pi)`.
pub fn wrap_angle(radians: f64) -> Result<f64, Error> {
    if !radians.is_finite() {
        return Err(Error::NonFiniteAngle(radians));
    }
    Ok(wrap_raw(radians))
}

fn wrap_raw(radians: f64) -> f64 {
    let r = radians.rem_euclid(TAU);
    // rem_euclid can round up to the modulus itself for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Cosine loss `1 - cos(a - b)`, in `[0, 2]`.
pub fn angular_loss(a: Angle, b: Angle) -> f64 {
    1.0 - (a.radians() - b.radians()).cos()
}

/// An ordered collection of angles. May be empty; summaries of an empty
/// series are rejected at the call site instead.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AngleSeries(Vec<Angle>);

impl AngleSeries {
    pub fn new(angles: Vec<Angle>) -> Self {
        Self(angles)
    }

    /// Wraps raw radian values into a series, rejecting non-finite entries.
    pub fn from_radians(values: &[f64]) -> Result<Self, Error> {
        values
            .iter()
            .map(|&v| Angle::new(v))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn angles(&self) -> &[Angle] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = Angle> + '_ {
        self.0.iter().copied()
    }

    pub fn push(&mut self, angle: Angle) {
        self.0.push(angle);
    }
}

impl std::ops::Index<usize> for AngleSeries {
    type Output = Angle;

    fn index(&self, i: usize) -> &Angle {
        &self.0[i]
    }
}

/// Resultant length below which the mean direction is reported as undefined.
pub const RESULTANT_TOLERANCE: f64 = 1e-14;

/// Mean direction and mean resultant length of a sample of angles.
///
/// `mean_direction` is `None` when the resultant vector is numerically zero,
/// as happens for perfectly balanced samples such as `{0, pi}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionStats {
    pub mean_direction: Option<Angle>,
    pub resultant_length: f64,
}

/// Weighted circular mean and resultant length.
///
/// With `weights = None` every angle gets weight `1/n`. Explicit weights
/// must be nonnegative, match the series length, and sum to one within
/// `1e-12`.
pub fn circ_mean_and_resultant(
    series: &AngleSeries,
    weights: Option<&[f64]>,
) -> Result<DirectionStats, Error> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = series.len();
    let (mut s, mut c) = (0.0, 0.0);
    match weights {
        None => {
            for a in series.iter() {
                s += a.sin();
                c += a.cos();
            }
            s /= n as f64;
            c /= n as f64;
        }
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            let mut total = 0.0;
            for (&wi, a) in w.iter().zip(series.iter()) {
                if !wi.is_finite() || wi < 0.0 {
                    return Err(Error::InvalidWeights(format!(
                        "weight {wi} is negative or not finite"
                    )));
                }
                total += wi;
                s += wi * a.sin();
                c += wi * a.cos();
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidWeights(format!(
                    "weights sum to {total}, expected 1"
                )));
            }
        }
    }
    let resultant = s.hypot(c).min(1.0);
    let mean_direction = if resultant < RESULTANT_TOLERANCE {
        None
    } else {
        Some(Angle::from_atan2(s, c))
    };
    Ok(DirectionStats {
        mean_direction,
        resultant_length: resultant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn wrap_known_values() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_angle(5.0 * PI / 2.0).unwrap(), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            wrap_angle(-FRAC_PI_4).unwrap(),
            7.0 * FRAC_PI_4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
        assert!(Angle::new(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn wrap_never_reaches_tau() {
        // rem_euclid(-1e-19, TAU) rounds to TAU; the guard must kick in
        for &v in &[-1e-19, -1e-300, TAU, -TAU, 1e9, -1e9] {
            let w = wrap_angle(v).unwrap();
            assert!((0.0..TAU).contains(&w), "wrap({v}) = {w}");
        }
    }

    #[test]
    fn loss_known_values() {
        let zero = Angle::new(0.0).unwrap();
        assert_abs_diff_eq!(angular_loss(zero, Angle::new(PI).unwrap()), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            angular_loss(zero, Angle::new(FRAC_PI_2).unwrap()),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(angular_loss(zero, zero), 0.0);
    }

    #[test]
    fn mean_of_identical_angles() {
        let series = AngleSeries::from_radians(&[FRAC_PI_2, FRAC_PI_2]).unwrap();
        let stats = circ_mean_and_resultant(&series, None).unwrap();
        assert_abs_diff_eq!(
            stats.mean_direction.unwrap().radians(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(stats.resultant_length, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_of_antipodal_pair_is_undefined() {
        let series = AngleSeries::from_radians(&[0.0, PI]).unwrap();
        let stats = circ_mean_and_resultant(&series, None).unwrap();
        assert!(stats.mean_direction.is_none());
        assert!(stats.resultant_length < 1e-14);
    }

    #[test]
    fn mean_of_quarter_turn_pair() {
        let series = AngleSeries::from_radians(&[0.0, FRAC_PI_2]).unwrap();
        let stats = circ_mean_and_resultant(&series, None).unwrap();
        assert_abs_diff_eq!(
            stats.mean_direction.unwrap().radians(),
            FRAC_PI_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(stats.resultant_length, FRAC_PI_4.cos(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_mean_matches_replication() {
        // weight 3/4 on one angle is the same as repeating it three times
        let series = AngleSeries::from_radians(&[0.3, 2.1]).unwrap();
        let weighted = circ_mean_and_resultant(&series, Some(&[0.75, 0.25])).unwrap();
        let replicated = AngleSeries::from_radians(&[0.3, 0.3, 0.3, 2.1]).unwrap();
        let plain = circ_mean_and_resultant(&replicated, None).unwrap();
        assert_abs_diff_eq!(
            weighted.mean_direction.unwrap().radians(),
            plain.mean_direction.unwrap().radians(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            weighted.resultant_length,
            plain.resultant_length,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weight_validation() {
        let series = AngleSeries::from_radians(&[0.0, 1.0]).unwrap();
        assert!(matches!(
            circ_mean_and_resultant(&series, Some(&[0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            circ_mean_and_resultant(&series, Some(&[-0.1, 1.1])),
            Err(Error::InvalidWeights(_))
        ));
        assert!(matches!(
            circ_mean_and_resultant(&series, Some(&[0.5, 0.6])),
            Err(Error::InvalidWeights(_))
        ));
        let empty = AngleSeries::default();
        assert!(matches!(
            circ_mean_and_resultant(&empty, None),
            Err(Error::EmptySeries)
        ));
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(v in -1e6f64..1e6) {
            let w = wrap_angle(v).unwrap();
            prop_assert!((0.0..TAU).contains(&w));
            prop_assert!((wrap_angle(w).unwrap() - w).abs() < 1e-12);
        }

        #[test]
        fn wrap_preserves_direction(v in -1e3f64..1e3) {
            let w = wrap_angle(v).unwrap();
            prop_assert!((w.sin() - v.sin()).abs() < 1e-9);
            prop_assert!((w.cos() - v.cos()).abs() < 1e-9);
        }

        #[test]
        fn loss_is_symmetric_and_bounded(a in 0.0f64..TAU, b in 0.0f64..TAU) {
            let x = Angle::new(a).unwrap();
            let y = Angle::new(b).unwrap();
            let l = angular_loss(x, y);
            prop_assert!((0.0..=2.0 + 1e-15).contains(&l));
            prop_assert!((l - angular_loss(y, x)).abs() < 1e-12);
        }

        #[test]
        fn loss_is_rotation_invariant(a in 0.0f64..TAU, b in 0.0f64..TAU, c in -10.0f64..10.0) {
            let base = angular_loss(Angle::new(a).unwrap(), Angle::new(b).unwrap());
            let rotated = angular_loss(
                Angle::new(wrap_angle(a + c).unwrap()).unwrap(),
                Angle::new(wrap_angle(b + c).unwrap()).unwrap(),
            );
            prop_assert!((base - rotated).abs() < 1e-9);
        }

        #[test]
        fn signed_difference_round_trip(a in 0.0f64..TAU, b in 0.0f64..TAU) {
            let x = Angle::new(a).unwrap();
            let y = Angle::new(b).unwrap();
            let d = x.signed_difference(y);
            prop_assert!(d > -PI && d <= PI);
            let rebuilt = wrap_angle(y.radians() + d).unwrap();
            prop_assert!((rebuilt - x.radians()).abs() < 1e-9
                || (rebuilt - x.radians()).abs() > TAU - 1e-9);
        }

        #[test]
        fn mean_resultant_is_at_most_one(values in proptest::collection::vec(0.0f64..TAU, 1..40)) {
            let series = AngleSeries::from_radians(&values).unwrap();
            let stats = circ_mean_and_resultant(&series, None).unwrap();
            prop_assert!(stats.resultant_length <= 1.0);
            prop_assert!(stats.resultant_length >= 0.0);
        }

        #[test]
        fn mean_is_rotation_equivariant(
            values in proptest::collection::vec(0.0f64..TAU, 2..30),
            shift in 0.0f64..TAU,
        ) {
            let series = AngleSeries::from_radians(&values).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| wrap_angle(v + shift).unwrap()).collect();
            let shifted_series = AngleSeries::from_radians(&shifted).unwrap();
            let a = circ_mean_and_resultant(&series, None).unwrap();
            let b = circ_mean_and_resultant(&shifted_series, None).unwrap();
            // skip near-degenerate resultants where the direction is unstable
            prop_assume!(a.resultant_length > 1e-6);
            let da = b.mean_direction.unwrap().signed_difference(a.mean_direction.unwrap());
            let ds = Angle::new(shift).unwrap().signed_difference(Angle::new(0.0).unwrap());
            prop_assert!((da - ds).abs() < 1e-6 || (da - ds).abs() > TAU - 1e-6);
            prop_assert!((a.resultant_length - b.resultant_length).abs() < 1e-9);
        }
    }
}
