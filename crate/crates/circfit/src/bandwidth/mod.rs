//! Cross-validation bandwidth selection.
//!
//! The criterion is the leave-one-out sum of cosine losses
//! `CV(H) = sum_i 1 - cos(T_i - mhat_(-i)(X_i))`, with a fixed penalty for
//! left-out fits that come back undefined. Scalar and diagonal matrices are
//! selected over a per-axis geometric grid around the usual `n^(-1/(d+4))`
//! scale; full matrices by Nelder-Mead over a log-Cholesky parameterization.
//!
//! Scoring a grid means `O(n^2)` local fits per candidate, so the grid
//! search runs on a cached engine that stores per-axis squared coordinate
//! differences and the component sines and cosines once per sample. The
//! engine reproduces the general predictor's stability rules exactly and is
//! tested against it to `1e-12`.

mod asymptotic;
mod nelder_mead;

pub use asymptotic::{amse_local, h_opt_local, AsymptoticInputs, EstimatorKind};

use crate::angle::angular_loss;
use crate::error::Error;
use crate::estimator::{CircularFit, ObservationSet, ELL_DEGENERACY_THRESHOLD};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg;
use crate::localpoly::{
    coefficient_count, BandwidthKind, BandwidthMatrix, FitScratch, LocalFitSpec,
    STABILITY_CONDITION_LIMIT,
};

/// Loss assigned to an undefined leave-one-out estimate. Two is the
/// maximum of the cosine loss, so an undefined fit counts as a worst-case
/// miss.
pub const DEFAULT_UNDEFINED_PENALTY: f64 = 2.0;

/// Bandwidth matrix shape to select over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMatrixKind {
    Scalar,
    Diagonal,
    Full,
}

impl CvMatrixKind {
    pub fn name(self) -> &'static str {
        match self {
            CvMatrixKind::Scalar => "scalar",
            CvMatrixKind::Diagonal => "diagonal",
            CvMatrixKind::Full => "full",
        }
    }
}

/// Settings for [`select_bandwidth_cv`].
#[derive(Debug, Clone)]
pub struct CvConfig {
    pub matrix_kind: CvMatrixKind,
    /// Grid points per axis for scalar and diagonal selection.
    pub grid_per_axis: usize,
    /// Nelder-Mead stops when the simplex value spread drops below this.
    pub simplex_tolerance: f64,
    /// Nelder-Mead iteration budget for full-matrix selection.
    pub max_iterations: usize,
    /// Loss contributed by an undefined leave-one-out estimate.
    pub undefined_penalty: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            matrix_kind: CvMatrixKind::Diagonal,
            grid_per_axis: 12,
            simplex_tolerance: 1e-6,
            max_iterations: 400,
            undefined_penalty: DEFAULT_UNDEFINED_PENALTY,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.grid_per_axis < 3 {
            return Err(Error::Config(format!(
                "grid_per_axis must be at least 3, got {}",
                self.grid_per_axis
            )));
        }
        if !(self.simplex_tolerance.is_finite() && self.simplex_tolerance > 0.0) {
            return Err(Error::Config("simplex_tolerance must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.undefined_penalty) {
            return Err(Error::Config(format!(
                "undefined_penalty must lie in [0, 2], got {}",
                self.undefined_penalty
            )));
        }
        Ok(())
    }
}

/// One evaluated grid candidate.
#[derive(Debug, Clone)]
pub struct CvCandidate {
    /// Per-axis bandwidths (a single entry for scalar candidates).
    pub per_axis: Vec<f64>,
    pub score: f64,
}

/// Result of a bandwidth search.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub bandwidth: BandwidthMatrix,
    pub score: f64,
    /// Number of criterion evaluations performed.
    pub evaluations: usize,
    /// Nelder-Mead iterations (zero for grid searches).
    pub iterations: usize,
    /// Whether the simplex met its tolerance (always true for grids).
    pub converged: bool,
    /// Evaluated candidates in ascending lexicographic order; empty for
    /// full-matrix selection.
    pub candidates: Vec<CvCandidate>,
}

/// Leave-one-out cross-validation score of a fixed specification, with the
/// default penalty for undefined fits.
pub fn cv_score(data: &ObservationSet, spec: &LocalFitSpec) -> Result<f64, Error> {
    cv_score_with_penalty(data, spec, DEFAULT_UNDEFINED_PENALTY)
}

/// Leave-one-out cross-validation score with an explicit penalty.
pub fn cv_score_with_penalty(
    data: &ObservationSet,
    spec: &LocalFitSpec,
    penalty: f64,
) -> Result<f64, Error> {
    if data.n() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: data.n(),
        });
    }
    if spec.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: spec.dim(),
        });
    }
    if !(0.0..=2.0).contains(&penalty) {
        return Err(Error::Config(format!(
            "undefined_penalty must lie in [0, 2], got {penalty}"
        )));
    }
    let bandwidth = spec.bandwidth();
    if engine_applicable(data, spec.degree()) && bandwidth.kind() != BandwidthKind::Full {
        let engine = CvEngine::new(data, spec.degree(), spec.kernel().family(), penalty);
        let per_axis: Vec<f64> = (0..data.dim()).map(|k| bandwidth.entry(k, k)).collect();
        let (score, _) = engine.score_diagonal(&per_axis);
        Ok(score)
    } else {
        let fit = CircularFit::new(data, spec.clone())?;
        let (score, _) = score_general(&fit, penalty);
        Ok(score)
    }
}

fn score_general(fit: &CircularFit, penalty: f64) -> (f64, usize) {
    let data = fit.data();
    let mut scratch = FitScratch::new();
    let mut score = 0.0;
    let mut defined = 0usize;
    for i in 0..data.n() {
        let p = fit.predict_with(data.covariate_row(i), Some(i), &mut scratch);
        match p.direction {
            Some(d) => {
                score += angular_loss(data.responses()[i], d);
                defined += 1;
            }
            None => score += penalty,
        }
    }
    (score, defined)
}

/// The grid engine caches per-axis squared differences, which costs
/// `dim * n^2` doubles; beyond this cap the general path is used instead.
const ENGINE_MAX_CACHED: usize = 4_000_000;

fn engine_applicable(data: &ObservationSet, degree: usize) -> bool {
    let n = data.n();
    let dim = data.dim();
    degree <= 1 && dim <= 3 && dim * n * n <= ENGINE_MAX_CACHED
}

/// Precomputed state for scoring many diagonal bandwidths on one sample.
struct CvEngine {
    n: usize,
    dim: usize,
    degree: usize,
    family: KernelFamily,
    penalty: f64,
    /// Covariates transposed to one contiguous array per axis.
    axis_values: Vec<Vec<f64>>,
    /// Per axis, the n x n squared coordinate differences.
    sq_diffs: Vec<Vec<f64>>,
    sin_responses: Vec<f64>,
    cos_responses: Vec<f64>,
}

impl CvEngine {
    fn new(data: &ObservationSet, degree: usize, family: KernelFamily, penalty: f64) -> Self {
        let n = data.n();
        let dim = data.dim();
        let mut axis_values = vec![vec![0.0; n]; dim];
        for i in 0..n {
            let row = data.covariate_row(i);
            for k in 0..dim {
                axis_values[k][i] = row[k];
            }
        }
        let mut sq_diffs = Vec::with_capacity(dim);
        for vals in &axis_values {
            let mut sq = vec![0.0; n * n];
            for i in 0..n {
                let vi = vals[i];
                let row = &mut sq[i * n..(i + 1) * n];
                for (j, slot) in row.iter_mut().enumerate() {
                    let d = vals[j] - vi;
                    *slot = d * d;
                }
            }
            sq_diffs.push(sq);
        }
        Self {
            n,
            dim,
            degree,
            family,
            penalty,
            axis_values,
            sq_diffs,
            sin_responses: data.responses().iter().map(|a| a.sin()).collect(),
            cos_responses: data.responses().iter().map(|a| a.cos()).collect(),
        }
    }

    /// Scores one diagonal candidate; returns the score and how many
    /// leave-one-out estimates were defined.
    ///
    /// The normalising constants of the kernel cancel between the normal
    /// matrix and the right-hand sides, so raw radial profiles are
    /// accumulated. Stability decisions (pivot tolerance, condition limit,
    /// resultant threshold) mirror the general path exactly.
    fn score_diagonal(&self, per_axis: &[f64]) -> (f64, usize) {
        debug_assert_eq!(per_axis.len(), self.dim);
        let n = self.n;
        let dim = self.dim;
        let k = coefficient_count(self.degree, dim);
        let epanechnikov = matches!(self.family, KernelFamily::Epanechnikov);
        let inv: Vec<f64> = per_axis.iter().map(|h| 1.0 / h).collect();
        let inv_sq: Vec<f64> = inv.iter().map(|v| v * v).collect();

        let mut matrix = [0.0f64; 16];
        let mut rhs1 = [0.0f64; 4];
        let mut rhs2 = [0.0f64; 4];
        let mut sol = [0.0f64; 4];
        let mut row = [0.0f64; 4];
        let mut perm = [0usize; 4];

        let mut score = 0.0;
        let mut defined = 0usize;
        for i in 0..n {
            matrix[..k * k].iter_mut().for_each(|v| *v = 0.0);
            rhs1[..k].iter_mut().for_each(|v| *v = 0.0);
            rhs2[..k].iter_mut().for_each(|v| *v = 0.0);

            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut q = 0.0;
                for a in 0..dim {
                    q += self.sq_diffs[a][i * n + j] * inv_sq[a];
                }
                let w = if epanechnikov {
                    if q >= 1.0 {
                        continue;
                    }
                    1.0 - q
                } else {
                    (-0.5 * q).exp()
                };
                row[0] = 1.0;
                if k > 1 {
                    for a in 0..dim {
                        row[a + 1] =
                            (self.axis_values[a][j] - self.axis_values[a][i]) * inv[a];
                    }
                }
                let (sj, cj) = (self.sin_responses[j], self.cos_responses[j]);
                for r in 0..k {
                    let wr = w * row[r];
                    for c in r..k {
                        matrix[r * k + c] += wr * row[c];
                    }
                    rhs1[r] += wr * sj;
                    rhs2[r] += wr * cj;
                }
            }
            for r in 0..k {
                for c in (r + 1)..k {
                    matrix[c * k + r] = matrix[r * k + c];
                }
            }

            let fac = linalg::ldl_factor(&mut matrix[..k * k], k, &mut perm[..k]);
            if !fac.is_full_rank(k) || fac.condition > STABILITY_CONDITION_LIMIT {
                score += self.penalty;
                continue;
            }
            linalg::ldl_solve(&matrix[..k * k], k, &perm[..k], &rhs1[..k], &mut sol[..k]);
            let m1 = sol[0];
            linalg::ldl_solve(&matrix[..k * k], k, &perm[..k], &rhs2[..k], &mut sol[..k]);
            let m2 = sol[0];
            let ell = m1.hypot(m2);
            if ell < ELL_DEGENERACY_THRESHOLD {
                score += self.penalty;
                continue;
            }
            // 1 - cos(T_i - atan2(m1, m2)) without the atan2
            score += 1.0 - (self.cos_responses[i] * m2 + self.sin_responses[i] * m1) / ell;
            defined += 1;
        }
        (score, defined)
    }
}

fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    debug_assert!(count >= 2 && lo > 0.0 && hi > lo);
    let ratio = hi / lo;
    (0..count)
        .map(|i| lo * ratio.powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// Per-axis sample scales, used to center the candidate grids.
fn axis_scales(data: &ObservationSet) -> Result<Vec<f64>, Error> {
    (0..data.dim())
        .map(|k| {
            let sd = data.axis_sd(k);
            if !(sd.is_finite() && sd > 0.0) {
                Err(Error::DegenerateAxis { axis: k })
            } else {
                Ok(sd)
            }
        })
        .collect()
}

/// Spread of grid candidates around the reference scale, as multiples of
/// `sd_k * n^(-1/(d+4))`.
const GRID_LOWER_FACTOR: f64 = 0.25;
const GRID_UPPER_FACTOR: f64 = 4.0;

/// Multiple of the per-axis standard deviation used to start the
/// full-matrix simplex search.
const FULL_INIT_FACTOR: f64 = 1.5;

/// Selects a bandwidth by leave-one-out cross-validation.
///
/// Scalar and diagonal shapes are chosen by exhaustive search over a
/// geometric grid (`grid_per_axis` points per axis, diagonal candidates
/// forming the full product grid); ties prefer the lexicographically
/// smaller bandwidth. The full shape runs Nelder-Mead over the
/// log-Cholesky parameterization starting at `1.5 * diag(sd_1..sd_d)` and
/// returns the best matrix it visited.
pub fn select_bandwidth_cv(
    data: &ObservationSet,
    degree: usize,
    kernel: KernelSpec,
    config: &CvConfig,
) -> Result<CvSelection, Error> {
    config.validate()?;
    let dim = data.dim();
    if kernel.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: kernel.dim(),
        });
    }
    if data.n() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: data.n(),
        });
    }
    if dim > 1 && degree > 1 {
        return Err(Error::UnsupportedDegree { degree, dim });
    }
    let scales = axis_scales(data)?;

    match config.matrix_kind {
        CvMatrixKind::Scalar | CvMatrixKind::Diagonal => {
            select_on_grid(data, degree, kernel, config, &scales)
        }
        CvMatrixKind::Full => select_full(data, degree, kernel, config, &scales),
    }
}

fn select_on_grid(
    data: &ObservationSet,
    degree: usize,
    kernel: KernelSpec,
    config: &CvConfig,
    scales: &[f64],
) -> Result<CvSelection, Error> {
    let dim = data.dim();
    let rate = (data.n() as f64).powf(-1.0 / (dim as f64 + 4.0));
    let scalar_mode = config.matrix_kind == CvMatrixKind::Scalar;

    // one grid per search axis (a single axis in scalar mode, using the
    // mean of the per-axis standard deviations as the common scale)
    let grids: Vec<Vec<f64>> = if scalar_mode {
        let mean_sd = scales.iter().sum::<f64>() / dim as f64;
        vec![geometric_grid(
            GRID_LOWER_FACTOR * mean_sd * rate,
            GRID_UPPER_FACTOR * mean_sd * rate,
            config.grid_per_axis,
        )]
    } else {
        scales
            .iter()
            .map(|sd| {
                geometric_grid(
                    GRID_LOWER_FACTOR * sd * rate,
                    GRID_UPPER_FACTOR * sd * rate,
                    config.grid_per_axis,
                )
            })
            .collect()
    };

    let engine = if engine_applicable(data, degree) {
        Some(CvEngine::new(
            data,
            degree,
            kernel.family(),
            config.undefined_penalty,
        ))
    } else {
        None
    };

    let score_candidate = |per_axis: &[f64]| -> Result<(f64, usize), Error> {
        match &engine {
            Some(e) => Ok(e.score_diagonal(per_axis)),
            None => {
                let bandwidth = if scalar_mode {
                    BandwidthMatrix::scalar(per_axis[0], dim)?
                } else {
                    BandwidthMatrix::diagonal(per_axis)?
                };
                let spec = LocalFitSpec::new(degree, kernel, bandwidth)?;
                let fit = CircularFit::new(data, spec)?;
                Ok(score_general(&fit, config.undefined_penalty))
            }
        }
    };

    // walk the product grid in ascending lexicographic order; strict
    // comparison keeps the lexicographically smallest among exact ties
    let axes = grids.len();
    let total: usize = config.grid_per_axis.pow(axes as u32);
    let mut candidates = Vec::with_capacity(total);
    let mut best_index = 0usize;
    let mut best_score = f64::INFINITY;
    let mut any_defined = false;
    let mut indices = vec![0usize; axes];
    let mut per_axis = vec![0.0; dim.max(1)];
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..axes).rev() {
            indices[a] = rem % config.grid_per_axis;
            rem /= config.grid_per_axis;
        }
        let search_values: Vec<f64> = (0..axes).map(|a| grids[a][indices[a]]).collect();
        if scalar_mode {
            per_axis.iter_mut().for_each(|v| *v = search_values[0]);
        } else {
            per_axis.copy_from_slice(&search_values);
        }
        let (score, defined) = score_candidate(&per_axis)?;
        if defined > 0 {
            any_defined = true;
        }
        if score < best_score {
            best_score = score;
            best_index = flat;
        }
        candidates.push(CvCandidate {
            per_axis: search_values,
            score,
        });
    }
    if !any_defined {
        return Err(Error::NoValidBandwidth);
    }

    let best = &candidates[best_index];
    let bandwidth = if scalar_mode {
        BandwidthMatrix::scalar(best.per_axis[0], dim)?
    } else {
        BandwidthMatrix::diagonal(&best.per_axis)?
    };
    Ok(CvSelection {
        bandwidth,
        score: best_score,
        evaluations: total,
        iterations: 0,
        converged: true,
        candidates,
    })
}

/// Number of free parameters of a symmetric d x d matrix.
fn cholesky_param_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Maps log-Cholesky parameters (diagonal entries stored as logarithms,
/// strict lower triangle raw, packed row by row) to `H = L L^T`.
fn cholesky_params_to_matrix(params: &[f64], dim: usize) -> Option<BandwidthMatrix> {
    if params.iter().any(|p| !p.is_finite() || p.abs() > 40.0) {
        return None;
    }
    let mut l = vec![0.0; dim * dim];
    let mut idx = 0;
    for r in 0..dim {
        for c in 0..=r {
            l[r * dim + c] = if r == c { params[idx].exp() } else { params[idx] };
            idx += 1;
        }
    }
    let mut h = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            let mut acc = 0.0;
            for m in 0..dim {
                acc += l[r * dim + m] * l[c * dim + m];
            }
            h[r * dim + c] = acc;
        }
    }
    BandwidthMatrix::full(&h, dim).ok()
}

fn select_full(
    data: &ObservationSet,
    degree: usize,
    kernel: KernelSpec,
    config: &CvConfig,
    scales: &[f64],
) -> Result<CvSelection, Error> {
    let dim = data.dim();
    let mut x0 = vec![0.0; cholesky_param_count(dim)];
    let mut idx = 0;
    for r in 0..dim {
        for c in 0..=r {
            x0[idx] = if r == c {
                (FULL_INIT_FACTOR * scales[r]).ln()
            } else {
                0.0
            };
            idx += 1;
        }
    }

    let evaluations = std::cell::Cell::new(0usize);
    let any_defined = std::cell::Cell::new(false);
    let objective = |params: &[f64]| -> f64 {
        evaluations.set(evaluations.get() + 1);
        let Some(bandwidth) = cholesky_params_to_matrix(params, dim) else {
            return f64::INFINITY;
        };
        let Ok(spec) = LocalFitSpec::new(degree, kernel, bandwidth) else {
            return f64::INFINITY;
        };
        let Ok(fit) = CircularFit::new(data, spec) else {
            return f64::INFINITY;
        };
        let (score, defined) = score_general(&fit, config.undefined_penalty);
        if defined > 0 {
            any_defined.set(true);
        }
        score
    };

    let outcome = nelder_mead::minimize(
        objective,
        &x0,
        &nelder_mead::NelderMeadOptions {
            max_iterations: config.max_iterations,
            f_tolerance: config.simplex_tolerance,
        },
    );
    if !any_defined.get() {
        return Err(Error::NoValidBandwidth);
    }
    let bandwidth = cholesky_params_to_matrix(&outcome.best, dim)
        .ok_or(Error::NoValidBandwidth)?;
    Ok(CvSelection {
        bandwidth,
        score: outcome.best_value,
        evaluations: evaluations.get(),
        iterations: outcome.iterations,
        converged: outcome.converged,
        candidates: Vec::new(),
    })
}
