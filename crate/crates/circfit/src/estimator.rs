//! Circular regression by componentwise smoothing.
//!
//! The conditional mean direction satisfies
//! `m(x) = atan2(E[sin T | X = x], E[cos T | X = x])`, so the estimator
//! fits the sine and cosine of the responses with the same local
//! polynomial weights and recombines the two component estimates. Both
//! components share one weighted design, so each prediction costs a single
//! factorization with two right-hand sides.

use rayon::prelude::*;

use crate::angle::{Angle, AngleSeries};
use crate::error::Error;
use crate::localpoly::{
    assemble_system, solve_assembled, FitScratch, LocalFitSpec, STABILITY_CONDITION_LIMIT,
};

/// Resultant length below which the fitted direction is reported as
/// undefined: the sine and cosine estimates nearly cancel and the angle
/// they would give is numerically meaningless.
pub const ELL_DEGENERACY_THRESHOLD: f64 = 1e-10;

/// A regression sample: covariate rows paired with angular responses.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    covariates: Vec<f64>,
    dim: usize,
    responses: AngleSeries,
}

impl ObservationSet {
    /// `covariates` is row-major with one row of length `dim` per response.
    pub fn new(covariates: Vec<f64>, dim: usize, responses: AngleSeries) -> Result<Self, Error> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "covariate dimension must be at least 1".into(),
            ));
        }
        let n = responses.len();
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if covariates.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: covariates.len(),
            });
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates must be finite".into()));
        }
        Ok(Self {
            covariates,
            dim,
            responses,
        })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn responses(&self) -> &AngleSeries {
        &self.responses
    }

    /// Sample standard deviation of one covariate axis (denominator n - 1).
    pub fn axis_sd(&self, axis: usize) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let mut mean = 0.0;
        for i in 0..n {
            mean += self.covariates[i * self.dim + axis];
        }
        mean /= n as f64;
        let mut ss = 0.0;
        for i in 0..n {
            let d = self.covariates[i * self.dim + axis] - mean;
            ss += d * d;
        }
        (ss / (n - 1) as f64).sqrt()
    }

    /// Coordinate range of one covariate axis.
    pub fn axis_range(&self, axis: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n() {
            let v = self.covariates[i * self.dim + axis];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Estimated direction at one point, with the component diagnostics.
///
/// On a singular local system `m1_hat`, `m2_hat`, and `ell_hat` are NaN.
/// `direction` is present only for stable, nondegenerate fits.
#[derive(Debug, Clone, Copy)]
pub struct CircularPrediction {
    pub direction: Option<Angle>,
    pub m1_hat: f64,
    pub m2_hat: f64,
    pub ell_hat: f64,
    pub stable: bool,
    pub condition_estimate: f64,
    pub effective_points: usize,
}

/// A fitted circular regression: the sample, the fit specification, and
/// the precomputed sine and cosine of the responses.
#[derive(Debug, Clone)]
pub struct CircularFit<'a> {
    data: &'a ObservationSet,
    spec: LocalFitSpec,
    sin_responses: Vec<f64>,
    cos_responses: Vec<f64>,
}

impl<'a> CircularFit<'a> {
    pub fn new(data: &'a ObservationSet, spec: LocalFitSpec) -> Result<Self, Error> {
        if spec.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: spec.dim(),
            });
        }
        let sin_responses = data.responses().iter().map(|a| a.sin()).collect();
        let cos_responses = data.responses().iter().map(|a| a.cos()).collect();
        Ok(Self {
            data,
            spec,
            sin_responses,
            cos_responses,
        })
    }

    pub fn data(&self) -> &ObservationSet {
        self.data
    }

    pub fn spec(&self) -> &LocalFitSpec {
        &self.spec
    }

    /// Predicts the direction at `at`, validating the point first.
    pub fn predict_at(&self, at: &[f64]) -> Result<CircularPrediction, Error> {
        if at.len() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim(),
                got: at.len(),
            });
        }
        if at.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prediction point must be finite".into()));
        }
        let mut scratch = FitScratch::new();
        Ok(self.predict_with(at, None, &mut scratch))
    }

    /// Core prediction on preallocated scratch. `skip` removes one
    /// observation, which is what the leave-one-out score uses.
    pub(crate) fn predict_with(
        &self,
        at: &[f64],
        skip: Option<usize>,
        scratch: &mut FitScratch,
    ) -> CircularPrediction {
        let sys = assemble_system(
            self.data.covariates(),
            self.data.n(),
            at,
            self.spec.degree(),
            self.spec.kernel().family(),
            self.spec.bandwidth(),
            Some(&self.sin_responses),
            Some(&self.cos_responses),
            skip,
            scratch,
        );
        let (ok, condition) = solve_assembled(scratch, sys.k, true);
        if !ok {
            return CircularPrediction {
                direction: None,
                m1_hat: f64::NAN,
                m2_hat: f64::NAN,
                ell_hat: f64::NAN,
                stable: false,
                condition_estimate: f64::INFINITY,
                effective_points: sys.effective_points,
            };
        }
        let m1 = scratch.solution1[0];
        let m2 = scratch.solution2[0];
        let ell = m1.hypot(m2);
        let stable = condition <= STABILITY_CONDITION_LIMIT && ell >= ELL_DEGENERACY_THRESHOLD;
        CircularPrediction {
            direction: if stable {
                Some(Angle::from_atan2(m1, m2))
            } else {
                None
            },
            m1_hat: m1,
            m2_hat: m2,
            ell_hat: ell,
            stable,
            condition_estimate: condition,
            effective_points: sys.effective_points,
        }
    }
}

/// Fits the circular local polynomial estimator at a single point.
pub fn fit_circular_at(fit: &CircularFit, at: &[f64]) -> Result<CircularPrediction, Error> {
    fit.predict_at(at)
}

/// Predicts at every row of `points` (row-major, one point per row),
/// in parallel. The output order matches the input order.
pub fn predict_surface(
    fit: &CircularFit,
    points: &[f64],
) -> Result<Vec<CircularPrediction>, Error> {
    let dim = fit.data().dim();
    if points.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim * (points.len() / dim + 1),
            got: points.len(),
        });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("prediction points must be finite".into()));
    }
    Ok(points
        .par_chunks(dim)
        .map_init(FitScratch::new, |scratch, at| {
            fit.predict_with(at, None, scratch)
        })
        .collect())
}

/// Moments of the sine and cosine of the response around the component
/// regression functions `m1 = f1 * ell` and `m2 = f2 * ell`, derived from
/// the angular error moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMoments {
    pub m1: f64,
    pub m2: f64,
    pub s1_sq: f64,
    pub s2_sq: f64,
    pub cross: f64,
}

/// Maps the error moments `(sigma1_sq, sigma2_sq, sigma12)` of
/// `(sin eps, cos eps)` to the component moments at a point where the
/// mean direction has sine `f1` and cosine `f2` and the conditional
/// concentration is `ell`.
pub fn error_moments_from_truth(
    f1: f64,
    f2: f64,
    ell: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    sigma12: f64,
) -> Result<ErrorMoments, Error> {
    if !(f1.is_finite() && f2.is_finite()) || (f1 * f1 + f2 * f2 - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "(f1, f2) must lie on the unit circle, got ({f1}, {f2})"
        )));
    }
    if !(0.0..=1.0).contains(&ell) {
        return Err(Error::InvalidInput(format!(
            "mean resultant length must lie in [0, 1], got {ell}"
        )));
    }
    if !(sigma1_sq.is_finite() && sigma2_sq.is_finite() && sigma12.is_finite())
        || sigma1_sq < 0.0
        || sigma2_sq < 0.0
    {
        return Err(Error::InvalidInput(
            "error moments must be finite with nonnegative variances".into(),
        ));
    }
    Ok(ErrorMoments {
        m1: f1 * ell,
        m2: f2 * ell,
        s1_sq: f1 * f1 * sigma2_sq + 2.0 * f1 * f2 * sigma12 + f2 * f2 * sigma1_sq,
        s2_sq: f2 * f2 * sigma2_sq - 2.0 * f1 * f2 * sigma12 + f1 * f1 * sigma1_sq,
        cross: f1 * f2 * sigma2_sq - f1 * f1 * sigma12 + f2 * f2 * sigma12 - f1 * f2 * sigma1_sq,
    })
}
