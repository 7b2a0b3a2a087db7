//! Monte Carlo machinery: benchmark regression surfaces, von Mises errors,
//! discrepancy metrics, and the replicated study driver.
//!
//! Replicates are independent and reproducible: every replicate derives its
//! generator from the master seed and its own stream index, so results do
//! not depend on thread count or scheduling. Aggregation happens in
//! replicate order after the parallel section.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::angle::{circ_mean_and_resultant, Angle, AngleSeries};
use crate::bandwidth::{select_bandwidth_cv, CvConfig};
use crate::error::Error;
use crate::estimator::{CircularFit, ObservationSet};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::localpoly::{BandwidthMatrix, FitScratch, LocalFitSpec};

/// A regression surface on the unit square mapping covariates to a mean
/// direction. The two built-in surfaces are the benchmark pair used by the
/// simulation study; `Custom` accepts any user function returning radians.
#[derive(Clone)]
pub enum Model {
    M1,
    M2,
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::M1 => f.write_str("M1"),
            Model::M2 => f.write_str("M2"),
            Model::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::M1 => "m1",
            Model::M2 => "m2",
            Model::Custom(_) => "custom",
        }
    }
}

/// True mean direction of `model` at `x`.
///
/// The first surface is defined on all of `R^2`; the second involves
/// `acos` and `asin` and rejects points whose transformed coordinates
/// leave `[-1, 1]`. Both are well defined everywhere on the unit square.
pub fn regression_truth(model: &Model, x: &[f64]) -> Result<Angle, Error> {
    match model {
        Model::M1 => {
            require_2d(x)?;
            let u = 6.0 * x[0].powi(5) - 2.0 * x[0].powi(3) - 1.0;
            let v = -2.0 * x[1].powi(5) - 3.0 * x[1] - 1.0;
            Ok(Angle::from_atan2(u, v))
        }
        Model::M2 => {
            require_2d(x)?;
            let a = x[0].powi(5) - 1.0;
            let b = x[1].powi(3) - x[1] + 1.0;
            if !(-1.0..=1.0).contains(&a) {
                return Err(Error::OutsideDomain(format!(
                    "x1^5 - 1 = {a} falls outside [-1, 1]"
                )));
            }
            if !(-1.0..=1.0).contains(&b) {
                return Err(Error::OutsideDomain(format!(
                    "x2^3 - x2 + 1 = {b} falls outside [-1, 1]"
                )));
            }
            Angle::new(a.acos() + 1.5 * b.asin())
        }
        Model::Custom(f) => Angle::new(f(x)),
    }
}

fn require_2d(x: &[f64]) -> Result<(), Error> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    if !(x[0].is_finite() && x[1].is_finite()) {
        return Err(Error::InvalidInput("model input must be finite".into()));
    }
    Ok(())
}

/// Gradient of the first benchmark surface. Exists everywhere because the
/// cosine component `-2 x2^5 - 3 x2 - 1` is strictly negative.
pub fn m1_gradient(x: &[f64]) -> Result<[f64; 2], Error> {
    require_2d(x)?;
    let u = 6.0 * x[0].powi(5) - 2.0 * x[0].powi(3) - 1.0;
    let v = -2.0 * x[1].powi(5) - 3.0 * x[1] - 1.0;
    let du = 30.0 * x[0].powi(4) - 6.0 * x[0].powi(2);
    let dv = -10.0 * x[1].powi(4) - 3.0;
    let r2 = u * u + v * v;
    Ok([v * du / r2, -u * dv / r2])
}

/// Hessian of the first benchmark surface, row-major.
pub fn m1_hessian(x: &[f64]) -> Result<[f64; 4], Error> {
    require_2d(x)?;
    let u = 6.0 * x[0].powi(5) - 2.0 * x[0].powi(3) - 1.0;
    let v = -2.0 * x[1].powi(5) - 3.0 * x[1] - 1.0;
    let du = 30.0 * x[0].powi(4) - 6.0 * x[0].powi(2);
    let ddu = 120.0 * x[0].powi(3) - 12.0 * x[0];
    let dv = -10.0 * x[1].powi(4) - 3.0;
    let ddv = -40.0 * x[1].powi(3);
    let r2 = u * u + v * v;
    let h11 = v * ddu / r2 - 2.0 * u * v * du * du / (r2 * r2);
    let h22 = -u * ddv / r2 + 2.0 * u * v * dv * dv / (r2 * r2);
    let h12 = du * dv * (u * u - v * v) / (r2 * r2);
    Ok([h11, h12, h12, h22])
}

/// Endpoint-inclusive square grid on the unit square, row-major with the
/// second coordinate varying fastest.
pub fn unit_square_grid(points_per_axis: usize) -> Result<Vec<f64>, Error> {
    if points_per_axis < 2 {
        return Err(Error::InvalidInput(
            "grid needs at least 2 points per axis".into(),
        ));
    }
    let k = points_per_axis;
    let mut out = Vec::with_capacity(2 * k * k);
    for i in 0..k {
        let x1 = i as f64 / (k - 1) as f64;
        for j in 0..k {
            let x2 = j as f64 / (k - 1) as f64;
            out.push(x1);
            out.push(x2);
        }
    }
    Ok(out)
}

fn square_side(n: usize) -> Result<usize, Error> {
    let side = (n as f64).sqrt().round() as usize;
    if side < 2 || side * side != n {
        return Err(Error::Config(format!(
            "sample size must be a perfect square of at least 4, got {n}"
        )));
    }
    Ok(side)
}

/// Largest argument the power series for the Bessel ratios is used for.
pub const BESSEL_KAPPA_LIMIT: f64 = 50.0;

/// Ratio `I_order(kappa) / I_0(kappa)` of modified Bessel functions of the
/// first kind, by the ascending power series. Accurate to full precision
/// for `kappa` up to [`BESSEL_KAPPA_LIMIT`], which covers every
/// concentration the study uses.
pub fn bessel_i_ratio(order: u32, kappa: f64) -> Result<f64, Error> {
    if !kappa.is_finite() || kappa < 0.0 || kappa > BESSEL_KAPPA_LIMIT {
        return Err(Error::InvalidInput(format!(
            "bessel ratio needs 0 <= kappa <= {BESSEL_KAPPA_LIMIT}, got {kappa}"
        )));
    }
    if kappa == 0.0 {
        return Ok(if order == 0 { 1.0 } else { 0.0 });
    }
    Ok(bessel_series(order, kappa) / bessel_series(0, kappa))
}

fn bessel_series(order: u32, kappa: f64) -> f64 {
    let half = kappa / 2.0;
    // first term: (kappa/2)^order / order!
    let mut term = 1.0;
    for j in 1..=order {
        term *= half / j as f64;
    }
    let mut sum = term;
    let half_sq = half * half;
    for k in 1..500 {
        term *= half_sq / (k as f64 * (k as f64 + order as f64));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Conditional moments of a von Mises error with concentration `kappa`:
/// the mean resultant length and the variances and covariance of
/// `(sin eps, cos eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VonMisesMoments {
    pub ell: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma12: f64,
}

pub fn von_mises_moments(kappa: f64) -> Result<VonMisesMoments, Error> {
    let r1 = bessel_i_ratio(1, kappa)?;
    let r2 = bessel_i_ratio(2, kappa)?;
    Ok(VonMisesMoments {
        ell: r1,
        sigma1_sq: (1.0 - r2) / 2.0,
        sigma2_sq: (1.0 + r2) / 2.0 - r1 * r1,
        // the density is symmetric around the mean, so sin and cos of the
        // error are uncorrelated
        sigma12: 0.0,
    })
}

/// Draws from the von Mises distribution by the Best-Fisher rejection
/// sampler; `kappa = 0` degenerates to the uniform distribution on the
/// circle. Valid for any nonnegative concentration.
pub fn sample_von_mises<R: Rng + ?Sized>(
    mean: Angle,
    kappa: f64,
    count: usize,
    rng: &mut R,
) -> Result<AngleSeries, Error> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::InvalidInput(format!(
            "concentration must be nonnegative and finite, got {kappa}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    if kappa == 0.0 {
        for _ in 0..count {
            out.push(Angle::new(std::f64::consts::TAU * rng.gen::<f64>())?);
        }
        return Ok(AngleSeries::new(out));
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    if !(r > 1.0) {
        // r - 1 is about 1/(2 kappa) and underflows near kappa = 1e16,
        // where the distribution is a point mass at the mean to double
        // precision; returning the mean keeps the rejection loop finite
        out.resize(count, mean);
        return Ok(AngleSeries::new(out));
    }
    for _ in 0..count {
        let f = loop {
            let u1: f64 = rng.gen();
            let z = (std::f64::consts::PI * u1).cos();
            // clamp against a one-ulp overshoot for near-degenerate rho
            let f = ((1.0 + r * z) / (r + z)).clamp(-1.0, 1.0);
            let c = kappa * (r - f);
            let u2: f64 = rng.gen();
            if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                break f;
            }
        };
        let magnitude = f.acos();
        let signed = if rng.gen::<f64>() < 0.5 {
            -magnitude
        } else {
            magnitude
        };
        out.push(Angle::new(mean.radians() + signed)?);
    }
    Ok(AngleSeries::new(out))
}

/// Mean cosine loss between true and estimated directions at the design
/// points, with undefined estimates contributing the maximal loss of two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseScore {
    pub value: f64,
    pub undefined: usize,
}

pub fn metric_case(truth: &[Angle], estimates: &[Option<Angle>]) -> Result<CaseScore, Error> {
    if truth.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if truth.len() != estimates.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    let mut total = 0.0;
    let mut undefined = 0usize;
    for (t, e) in truth.iter().zip(estimates) {
        match e {
            Some(est) => total += 1.0 - (t.radians() - est.radians()).cos(),
            None => {
                total += 2.0;
                undefined += 1;
            }
        }
    }
    Ok(CaseScore {
        value: total / truth.len() as f64,
        undefined,
    })
}

/// Replicate-wise summaries of the estimator at one evaluation point:
/// circular bias, circular variance around the replicate mean direction,
/// and circular mean squared error. All are `None` when every replicate
/// was undefined at the point; the variance is additionally `None` when
/// the replicate mean direction degenerates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointwiseMetrics {
    pub circular_bias: Option<f64>,
    pub circular_variance: Option<f64>,
    pub circular_mse: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

pub fn metric_pointwise(
    truth: Angle,
    estimates: &[Option<Angle>],
) -> Result<PointwiseMetrics, Error> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let defined: Vec<Angle> = estimates.iter().flatten().copied().collect();
    let undefined = estimates.len() - defined.len();
    if defined.is_empty() {
        return Ok(PointwiseMetrics {
            circular_bias: None,
            circular_variance: None,
            circular_mse: None,
            defined: 0,
            undefined,
        });
    }
    let count = defined.len() as f64;
    let bias = defined
        .iter()
        .map(|e| (e.radians() - truth.radians()).sin())
        .sum::<f64>()
        / count;
    let mse = defined
        .iter()
        .map(|e| 1.0 - (truth.radians() - e.radians()).cos())
        .sum::<f64>()
        / count;
    let series = AngleSeries::new(defined.clone());
    let stats = circ_mean_and_resultant(&series, None)?;
    let variance = stats.mean_direction.map(|center| {
        defined
            .iter()
            .map(|e| 1.0 - (e.radians() - center.radians()).cos())
            .sum::<f64>()
            / count
    });
    Ok(PointwiseMetrics {
        circular_bias: Some(bias),
        circular_variance: variance,
        circular_mse: Some(mse),
        defined: defined.len(),
        undefined,
    })
}

/// How each replicate obtains its bandwidth.
#[derive(Debug, Clone)]
pub enum BandwidthPolicy {
    Fixed(BandwidthMatrix),
    CrossValidated(CvConfig),
}

/// Specification of one simulation cell.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub model: Model,
    /// Sample size; must be a perfect square since the design is a grid.
    pub n: usize,
    pub kappa: f64,
    pub replicates: usize,
    pub degree: usize,
    pub kernel_family: KernelFamily,
    pub bandwidth: BandwidthPolicy,
    pub seed: u64,
    /// Optional side length of a separate evaluation grid on which the
    /// pointwise metrics are aggregated across replicates.
    pub pointwise_grid: Option<usize>,
    /// Strip width trimmed from each side of the unit square when scoring
    /// the fit at the design points.
    pub interior_margin: f64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), Error> {
        square_side(self.n)?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::Config(format!(
                "kappa must be nonnegative, got {}",
                self.kappa
            )));
        }
        if self.degree > 1 {
            return Err(Error::UnsupportedDegree {
                degree: self.degree,
                dim: 2,
            });
        }
        if let Some(g) = self.pointwise_grid {
            if g < 2 {
                return Err(Error::Config(
                    "pointwise evaluation grid needs at least 2 points per axis".into(),
                ));
            }
        }
        if !(0.0..0.5).contains(&self.interior_margin) {
            return Err(Error::Config(format!(
                "interior_margin must lie in [0, 0.5), got {}",
                self.interior_margin
            )));
        }
        Ok(())
    }
}

/// Per-replicate outcome kept in the study report.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// Mean cosine loss at the evaluated design points.
    pub case: f64,
    /// Number of evaluation points with undefined estimates.
    pub undefined: usize,
    /// Row-major entries of the bandwidth used by this replicate.
    pub bandwidth: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

/// Cross-replicate summary at one evaluation-grid point.
#[derive(Debug, Clone, Serialize)]
pub struct PointwiseSummary {
    pub point: Vec<f64>,
    pub metrics: PointwiseMetrics,
}

/// Aggregated result of a simulation cell.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    /// Average of the per-replicate CASE values over completed replicates.
    pub mean_case: f64,
    pub replicates_completed: usize,
    pub per_replicate: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
    pub pointwise: Option<Vec<PointwiseSummary>>,
}

impl StudyReport {
    pub fn per_replicate_case(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_replicate.iter().map(|r| r.case)
    }
}

struct ReplicateOutcome {
    record: ReplicateRecord,
    pointwise: Option<Vec<Option<Angle>>>,
}

/// Runs one simulation cell: for every replicate, draw responses on the
/// design grid, obtain a bandwidth per the policy, fit, and score the fit
/// at the (optionally trimmed) design points; pointwise metrics are then
/// aggregated across replicates on the separate evaluation grid.
///
/// Replicate `r` uses stream `r + 1` of the seeded generator, so reports
/// are identical across thread counts and repeat runs.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport, Error> {
    config.validate()?;
    let side = square_side(config.n)?;
    let design = unit_square_grid(side)?;
    let n = config.n;

    let truth: Vec<Angle> = (0..n)
        .map(|i| regression_truth(&config.model, &design[2 * i..2 * i + 2]))
        .collect::<Result<_, _>>()?;

    let margin = config.interior_margin;
    let eval_indices: Vec<usize> = (0..n)
        .filter(|&i| {
            let x = &design[2 * i..2 * i + 2];
            x.iter().all(|&v| v >= margin && v <= 1.0 - margin)
        })
        .collect();
    if eval_indices.is_empty() {
        return Err(Error::Config(format!(
            "interior margin {margin} leaves no evaluation points"
        )));
    }
    let eval_truth: Vec<Angle> = eval_indices.iter().map(|&i| truth[i]).collect();

    let pointwise_setup: Option<(Vec<f64>, Vec<Angle>)> = match config.pointwise_grid {
        Some(g) => {
            let grid = unit_square_grid(g)?;
            let grid_truth: Vec<Angle> = grid
                .chunks(2)
                .map(|x| regression_truth(&config.model, x))
                .collect::<Result<_, _>>()?;
            Some((grid, grid_truth))
        }
        None => None,
    };

    let kernel = KernelSpec::new(config.kernel_family, 2)?;
    let zero = Angle::new(0.0)?;

    let run_replicate = |r: usize| -> Result<ReplicateOutcome, Error> {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64 + 1);
        let noise = sample_von_mises(zero, config.kappa, n, &mut rng)?;
        let mut responses = AngleSeries::new(Vec::with_capacity(n));
        for i in 0..n {
            responses.push(Angle::new(truth[i].radians() + noise[i].radians())?);
        }
        let data = ObservationSet::new(design.clone(), 2, responses)?;
        let bandwidth = match &config.bandwidth {
            BandwidthPolicy::Fixed(h) => h.clone(),
            BandwidthPolicy::CrossValidated(cv) => {
                select_bandwidth_cv(&data, config.degree, kernel, cv)?.bandwidth
            }
        };
        let spec = LocalFitSpec::new(config.degree, kernel, bandwidth.clone())?;
        let fit = CircularFit::new(&data, spec)?;

        let mut scratch = FitScratch::new();
        let estimates: Vec<Option<Angle>> = eval_indices
            .iter()
            .map(|&i| {
                fit.predict_with(&design[2 * i..2 * i + 2], None, &mut scratch)
                    .direction
            })
            .collect();
        let case = metric_case(&eval_truth, &estimates)?;

        let pointwise = pointwise_setup.as_ref().map(|(grid, _)| {
            grid.chunks(2)
                .map(|x| fit.predict_with(x, None, &mut scratch).direction)
                .collect()
        });

        Ok(ReplicateOutcome {
            record: ReplicateRecord {
                replicate: r,
                case: case.value,
                undefined: case.undefined,
                bandwidth: bandwidth.entries().to_vec(),
            },
            pointwise,
        })
    };

    let outcomes: Vec<Result<ReplicateOutcome, Error>> = (0..config.replicates)
        .into_par_iter()
        .map(run_replicate)
        .collect();

    let mut per_replicate = Vec::new();
    let mut failures = Vec::new();
    let mut replicate_estimates: Vec<Vec<Option<Angle>>> = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                per_replicate.push(o.record);
                if let Some(p) = o.pointwise {
                    replicate_estimates.push(p);
                }
            }
            Err(e) => failures.push(ReplicateFailure {
                replicate: r,
                message: e.to_string(),
            }),
        }
    }
    if per_replicate.is_empty() {
        return Err(Error::AllReplicatesFailed(config.replicates));
    }
    let mean_case =
        per_replicate.iter().map(|r| r.case).sum::<f64>() / per_replicate.len() as f64;

    let pointwise = match &pointwise_setup {
        Some((grid, grid_truth)) => {
            let points = grid_truth.len();
            let mut summaries = Vec::with_capacity(points);
            for p in 0..points {
                let column: Vec<Option<Angle>> =
                    replicate_estimates.iter().map(|rep| rep[p]).collect();
                summaries.push(PointwiseSummary {
                    point: grid[2 * p..2 * p + 2].to_vec(),
                    metrics: metric_pointwise(grid_truth[p], &column)?,
                });
            }
            Some(summaries)
        }
        None => None,
    };

    Ok(StudyReport {
        mean_case,
        replicates_completed: per_replicate.len(),
        per_replicate,
        failures,
        pointwise,
    })
}
