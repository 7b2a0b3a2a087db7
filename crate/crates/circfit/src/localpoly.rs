//! Local polynomial weighted least squares for real-valued responses.
//!
//! The circular estimator never smooths angles directly; it smooths the
//! sine and cosine of the response with the machinery in this module and
//! recombines afterwards. Three routes are exposed: a direct
//! Nadaraya-Watson ratio, the general weighted-least-squares fit, and the
//! equivalent-weights vector. The first two overlap on purpose so they can
//! check each other in tests.
//!
//! Design rows are built on the bandwidth scale, `(x_i - x) / s_k` with
//! `s_k` the k-th row norm of `H`. Rescaling columns this way leaves the
//! intercept untouched while keeping the normal matrix well conditioned
//! for small bandwidths.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::kernel::{eval_radial, KernelFamily, KernelSpec};
use crate::linalg;

/// Condition-number threshold above which a local system is flagged
/// unstable. Predictions from unstable fits are still reported, but the
/// grid filter and the cross-validation score treat them as unusable.
pub const STABILITY_CONDITION_LIMIT: f64 = 1e8;

/// Shape of a bandwidth matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthKind {
    Scalar,
    Diagonal,
    Full,
}

impl BandwidthKind {
    pub fn name(self) -> &'static str {
        match self {
            BandwidthKind::Scalar => "scalar",
            BandwidthKind::Diagonal => "diagonal",
            BandwidthKind::Full => "full",
        }
    }
}

/// A symmetric positive definite bandwidth matrix `H`.
///
/// The kernel sees data through `H^-1`, so the inverse and determinant are
/// computed once at construction. Scalar and diagonal matrices are stored
/// in the same row-major layout as full ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthMatrix {
    kind: BandwidthKind,
    dim: usize,
    entries: Vec<f64>,
    inverse: Vec<f64>,
    det: f64,
    operator_norm: f64,
}

impl BandwidthMatrix {
    /// `h * I` in the given dimension.
    pub fn scalar(h: f64, dim: usize) -> Result<Self, Error> {
        if dim == 0 {
            return Err(Error::InvalidBandwidth("dimension must be at least 1".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidBandwidth(format!(
                "scalar bandwidth must be positive and finite, got {h}"
            )));
        }
        let mut m = Self::from_diagonal_unchecked(&vec![h; dim]);
        m.kind = BandwidthKind::Scalar;
        Ok(m)
    }

    /// Diagonal matrix with one bandwidth per axis.
    pub fn diagonal(per_axis: &[f64]) -> Result<Self, Error> {
        if per_axis.is_empty() {
            return Err(Error::InvalidBandwidth("dimension must be at least 1".into()));
        }
        for &h in per_axis {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidBandwidth(format!(
                    "diagonal bandwidth entries must be positive and finite, got {h}"
                )));
            }
        }
        Ok(Self::from_diagonal_unchecked(per_axis))
    }

    fn from_diagonal_unchecked(per_axis: &[f64]) -> Self {
        let dim = per_axis.len();
        let mut entries = vec![0.0; dim * dim];
        let mut inverse = vec![0.0; dim * dim];
        let mut det = 1.0;
        let mut largest = 0.0f64;
        for (k, &h) in per_axis.iter().enumerate() {
            entries[k * dim + k] = h;
            inverse[k * dim + k] = 1.0 / h;
            det *= h;
            largest = largest.max(h);
        }
        Self {
            kind: BandwidthKind::Diagonal,
            dim,
            entries,
            inverse,
            det,
            operator_norm: largest,
        }
    }

    /// Full symmetric positive definite matrix from row-major entries.
    pub fn full(entries: &[f64], dim: usize) -> Result<Self, Error> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::InvalidBandwidth(format!(
                "expected {} row-major entries for dimension {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let largest_abs = entries.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBandwidth("entries must be finite".into()));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (entries[i * dim + j] - entries[j * dim + i]).abs()
                    > 1e-12 * largest_abs.max(1.0)
                {
                    return Err(Error::InvalidBandwidth("matrix is not symmetric".into()));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, entries);
        let sym = (&m + m.transpose()) * 0.5;
        let eigen = sym.symmetric_eigen();
        let lambda_max = eigen.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let lambda_min = eigen
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        if !(lambda_min > 0.0) || lambda_min < 1e-14 * lambda_max {
            return Err(Error::InvalidBandwidth(
                "matrix is singular or not positive definite".into(),
            ));
        }
        let det = eigen.eigenvalues.iter().product();
        let mut inv_diag = eigen.eigenvalues.clone();
        inv_diag.iter_mut().for_each(|v| *v = 1.0 / *v);
        let inv =
            &eigen.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eigen.eigenvectors.transpose();
        let mut inverse = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                inverse[i * dim + j] = inv[(i, j)];
            }
        }
        Ok(Self {
            kind: BandwidthKind::Full,
            dim,
            entries: entries.to_vec(),
            inverse,
            det,
            operator_norm: lambda_max,
        })
    }

    pub fn kind(&self) -> BandwidthKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries of `H`.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    /// Entries on and above the diagonal, row by row. This is the compact
    /// form written to fit records.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * (self.dim + 1) / 2);
        for i in 0..self.dim {
            for j in i..self.dim {
                out.push(self.entries[i * self.dim + j]);
            }
        }
        out
    }

    /// Largest eigenvalue, i.e. the widest smoothing scale.
    pub fn operator_norm(&self) -> f64 {
        self.operator_norm
    }

    /// `|H^-1 u|^2` without allocating.
    pub(crate) fn inv_norm_sq(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim);
        match self.kind {
            BandwidthKind::Scalar | BandwidthKind::Diagonal => {
                let d = self.dim;
                let mut acc = 0.0;
                for k in 0..d {
                    let t = u[k] * self.inverse[k * d + k];
                    acc += t * t;
                }
                acc
            }
            BandwidthKind::Full => {
                let d = self.dim;
                let mut acc = 0.0;
                for r in 0..d {
                    let mut t = 0.0;
                    for c in 0..d {
                        t += self.inverse[r * d + c] * u[c];
                    }
                    acc += t * t;
                }
                acc
            }
        }
    }

    /// `|H^-1 (a - b)|^2` without allocating the difference.
    pub(crate) fn inv_norm_sq_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.dim);
        debug_assert_eq!(b.len(), self.dim);
        match self.kind {
            BandwidthKind::Scalar | BandwidthKind::Diagonal => {
                let d = self.dim;
                let mut acc = 0.0;
                for k in 0..d {
                    let t = (a[k] - b[k]) * self.inverse[k * d + k];
                    acc += t * t;
                }
                acc
            }
            BandwidthKind::Full => {
                let d = self.dim;
                let mut acc = 0.0;
                for r in 0..d {
                    let mut t = 0.0;
                    for c in 0..d {
                        t += self.inverse[r * d + c] * (a[c] - b[c]);
                    }
                    acc += t * t;
                }
                acc
            }
        }
    }

    /// Per-axis design scale: the norm of row `k` of `H`.
    pub(crate) fn axis_scale(&self, k: usize) -> f64 {
        match self.kind {
            BandwidthKind::Scalar | BandwidthKind::Diagonal => self.entries[k * self.dim + k],
            BandwidthKind::Full => {
                let d = self.dim;
                self.entries[k * d..(k + 1) * d]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }
}

/// Specification of one local polynomial fit: degree, kernel, bandwidth.
///
/// Multivariate predictors support degrees 0 and 1; univariate predictors
/// support any degree.
#[derive(Debug, Clone)]
pub struct LocalFitSpec {
    degree: usize,
    kernel: KernelSpec,
    bandwidth: BandwidthMatrix,
}

impl LocalFitSpec {
    pub fn new(
        degree: usize,
        kernel: KernelSpec,
        bandwidth: BandwidthMatrix,
    ) -> Result<Self, Error> {
        if kernel.dim() != bandwidth.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: bandwidth.dim(),
            });
        }
        if kernel.dim() > 1 && degree > 1 {
            return Err(Error::UnsupportedDegree {
                degree,
                dim: kernel.dim(),
            });
        }
        Ok(Self {
            degree,
            kernel,
            bandwidth,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Number of coefficients in the local model.
    pub fn coefficient_count(&self) -> usize {
        coefficient_count(self.degree, self.dim())
    }

    /// Same spec with a different bandwidth.
    pub fn with_bandwidth(&self, bandwidth: BandwidthMatrix) -> Result<Self, Error> {
        Self::new(self.degree, self.kernel, bandwidth)
    }
}

pub(crate) fn coefficient_count(degree: usize, dim: usize) -> usize {
    if dim == 1 {
        degree + 1
    } else if degree == 0 {
        1
    } else {
        dim + 1
    }
}

/// Outcome of one local fit.
///
/// `estimate` is `None` when the weighted design is singular at this point
/// (no kernel support, or too few distinct support points). `stable` is
/// false for singular or badly conditioned systems.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFitResult {
    pub estimate: Option<f64>,
    pub stable: bool,
    pub condition_estimate: f64,
    pub effective_points: usize,
}

impl LocalFitResult {
    fn singular(effective_points: usize) -> Self {
        Self {
            estimate: None,
            stable: false,
            condition_estimate: f64::INFINITY,
            effective_points,
        }
    }
}

/// Equivalent-weights representation of a local fit: the estimate at the
/// target point is `sum_i weights[i] * y_i` for any response vector `y`.
#[derive(Debug, Clone)]
pub struct SmoothingWeights {
    pub weights: Option<Vec<f64>>,
    pub stable: bool,
    pub condition_estimate: f64,
}

/// Reusable buffers for repeated local fits. One instance per worker
/// thread keeps the cross-validation loop allocation-free.
#[derive(Debug, Default)]
pub(crate) struct FitScratch {
    pub kernel_weights: Vec<f64>,
    matrix: Vec<f64>,
    rhs1: Vec<f64>,
    rhs2: Vec<f64>,
    pub solution1: Vec<f64>,
    pub solution2: Vec<f64>,
    row: Vec<f64>,
    perm: Vec<usize>,
    scales: Vec<f64>,
}

impl FitScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, n: usize, k: usize, dim: usize) {
        self.kernel_weights.resize(n, 0.0);
        self.matrix.resize(k * k, 0.0);
        self.rhs1.resize(k, 0.0);
        self.rhs2.resize(k, 0.0);
        self.solution1.resize(k, 0.0);
        self.solution2.resize(k, 0.0);
        self.row.resize(k, 0.0);
        self.perm.resize(k, 0);
        self.scales.resize(dim, 0.0);
    }
}

fn fill_design_row(row: &mut [f64], xi: &[f64], at: &[f64], degree: usize, scales: &[f64]) {
    let dim = at.len();
    row[0] = 1.0;
    if dim == 1 {
        let t = (xi[0] - at[0]) / scales[0];
        let mut p = 1.0;
        for entry in row.iter_mut().skip(1) {
            p *= t;
            *entry = p;
        }
    } else if degree >= 1 {
        for k in 0..dim {
            row[k + 1] = (xi[k] - at[k]) / scales[k];
        }
    }
}

/// Result of assembling the weighted normal equations at one point.
pub(crate) struct AssembledSystem {
    pub k: usize,
    pub effective_points: usize,
}

/// Builds kernel weights, the normal matrix, and up to two right-hand
/// sides into `scratch`. Observation `skip` (if any) gets weight zero,
/// which is how leave-one-out scores are formed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_system(
    covariates: &[f64],
    n: usize,
    at: &[f64],
    degree: usize,
    family: KernelFamily,
    bandwidth: &BandwidthMatrix,
    y1: Option<&[f64]>,
    y2: Option<&[f64]>,
    skip: Option<usize>,
    scratch: &mut FitScratch,
) -> AssembledSystem {
    let dim = at.len();
    let k = coefficient_count(degree, dim);
    scratch.ensure(n, k, dim);
    for axis in 0..dim {
        scratch.scales[axis] = bandwidth.axis_scale(axis);
    }
    scratch.matrix.iter_mut().for_each(|v| *v = 0.0);
    scratch.rhs1.iter_mut().for_each(|v| *v = 0.0);
    scratch.rhs2.iter_mut().for_each(|v| *v = 0.0);

    let mut effective = 0usize;
    for i in 0..n {
        if skip == Some(i) {
            scratch.kernel_weights[i] = 0.0;
            continue;
        }
        let xi = &covariates[i * dim..(i + 1) * dim];
        // the determinant factor of K_H is constant in i and cancels in
        // the solution, so the radial profile alone is accumulated
        let w = eval_radial(family, dim, bandwidth.inv_norm_sq_diff(xi, at));
        scratch.kernel_weights[i] = w;
        if w <= 0.0 {
            continue;
        }
        effective += 1;
        fill_design_row(&mut scratch.row, xi, at, degree, &scratch.scales);
        for r in 0..k {
            let wr = w * scratch.row[r];
            for c in r..k {
                scratch.matrix[r * k + c] += wr * scratch.row[c];
            }
            if let Some(y) = y1 {
                scratch.rhs1[r] += wr * y[i];
            }
            if let Some(y) = y2 {
                scratch.rhs2[r] += wr * y[i];
            }
        }
    }
    for r in 0..k {
        for c in (r + 1)..k {
            scratch.matrix[c * k + r] = scratch.matrix[r * k + c];
        }
    }
    AssembledSystem {
        k,
        effective_points: effective,
    }
}

/// Factors the assembled system and solves for the requested right-hand
/// sides. Returns `None` with the condition estimate when rank deficient.
pub(crate) fn solve_assembled(
    scratch: &mut FitScratch,
    k: usize,
    second_rhs: bool,
) -> (bool, f64) {
    let fac = linalg::ldl_factor(&mut scratch.matrix, k, &mut scratch.perm);
    if !fac.is_full_rank(k) {
        return (false, f64::INFINITY);
    }
    linalg::ldl_solve(
        &scratch.matrix,
        k,
        &scratch.perm,
        &scratch.rhs1,
        &mut scratch.solution1,
    );
    if second_rhs {
        linalg::ldl_solve(
            &scratch.matrix,
            k,
            &scratch.perm,
            &scratch.rhs2,
            &mut scratch.solution2,
        );
    }
    (true, fac.condition)
}

fn check_design(covariates: &[f64], n: usize, at: &[f64]) -> Result<usize, Error> {
    let dim = at.len();
    if dim == 0 {
        return Err(Error::InvalidInput("target point must have dimension >= 1".into()));
    }
    if covariates.len() != n * dim {
        return Err(Error::DimensionMismatch {
            expected: n * dim,
            got: covariates.len(),
        });
    }
    if at.iter().any(|v| !v.is_finite()) || covariates.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("covariates must be finite".into()));
    }
    Ok(dim)
}

/// Nadaraya-Watson estimate by direct ratio of kernel sums.
///
/// This route deliberately shares no code with [`local_fit_real`]; the two
/// must agree at `degree = 0` and are tested against each other.
pub fn nw_direct(
    covariates: &[f64],
    responses: &[f64],
    at: &[f64],
    kernel: &KernelSpec,
    bandwidth: &BandwidthMatrix,
) -> Result<LocalFitResult, Error> {
    let n = responses.len();
    let dim = check_design(covariates, n, at)?;
    if kernel.dim() != dim || bandwidth.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if kernel.dim() != dim {
                kernel.dim()
            } else {
                bandwidth.dim()
            },
        });
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut effective = 0usize;
    for i in 0..n {
        let xi = &covariates[i * dim..(i + 1) * dim];
        let q = bandwidth.inv_norm_sq_diff(xi, at);
        let w = eval_radial(kernel.family(), dim, q) / bandwidth.det();
        if w > 0.0 {
            effective += 1;
            denominator += w;
            numerator += w * responses[i];
        }
    }
    if denominator > 0.0 {
        Ok(LocalFitResult {
            estimate: Some(numerator / denominator),
            stable: true,
            condition_estimate: 1.0,
            effective_points: effective,
        })
    } else {
        Ok(LocalFitResult::singular(effective))
    }
}

/// Local polynomial estimate of a real response at one point.
pub fn local_fit_real(
    covariates: &[f64],
    responses: &[f64],
    at: &[f64],
    spec: &LocalFitSpec,
) -> Result<LocalFitResult, Error> {
    let n = responses.len();
    let dim = check_design(covariates, n, at)?;
    if spec.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: spec.dim(),
        });
    }
    let mut scratch = FitScratch::new();
    Ok(local_fit_real_with(
        covariates,
        responses,
        at,
        spec,
        None,
        &mut scratch,
    ))
}

pub(crate) fn local_fit_real_with(
    covariates: &[f64],
    responses: &[f64],
    at: &[f64],
    spec: &LocalFitSpec,
    skip: Option<usize>,
    scratch: &mut FitScratch,
) -> LocalFitResult {
    let n = responses.len();
    let sys = assemble_system(
        covariates,
        n,
        at,
        spec.degree(),
        spec.kernel().family(),
        spec.bandwidth(),
        Some(responses),
        None,
        skip,
        scratch,
    );
    let (ok, condition) = solve_assembled(scratch, sys.k, false);
    if !ok {
        return LocalFitResult::singular(sys.effective_points);
    }
    LocalFitResult {
        estimate: Some(scratch.solution1[0]),
        stable: condition <= STABILITY_CONDITION_LIMIT,
        condition_estimate: condition,
        effective_points: sys.effective_points,
    }
}

/// Equivalent smoothing weights of the local fit at one point.
///
/// When defined, `sum_i weights[i] * y_i` reproduces [`local_fit_real`]
/// for every response vector, and the weights sum to one.
pub fn smoothing_weights(
    covariates: &[f64],
    at: &[f64],
    spec: &LocalFitSpec,
) -> Result<SmoothingWeights, Error> {
    let dim = spec.dim();
    if at.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: at.len(),
        });
    }
    if covariates.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim * (covariates.len() / dim + 1),
            got: covariates.len(),
        });
    }
    let n = covariates.len() / dim;
    check_design(covariates, n, at)?;

    let mut scratch = FitScratch::new();
    let sys = assemble_system(
        covariates,
        n,
        at,
        spec.degree(),
        spec.kernel().family(),
        spec.bandwidth(),
        None,
        None,
        None,
        &mut scratch,
    );
    let k = sys.k;
    // solve A z = e1; the weight on observation i is then w_i (row_i . z)
    scratch.rhs1.iter_mut().for_each(|v| *v = 0.0);
    scratch.rhs1[0] = 1.0;
    let (ok, condition) = solve_assembled(&mut scratch, k, false);
    if !ok {
        return Ok(SmoothingWeights {
            weights: None,
            stable: false,
            condition_estimate: f64::INFINITY,
        });
    }
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let w = scratch.kernel_weights[i];
        if w <= 0.0 {
            continue;
        }
        let xi = &covariates[i * dim..(i + 1) * dim];
        fill_design_row(&mut scratch.row, xi, at, spec.degree(), &scratch.scales);
        let mut dot = 0.0;
        for r in 0..k {
            dot += scratch.row[r] * scratch.solution1[r];
        }
        weights[i] = w * dot;
    }
    Ok(SmoothingWeights {
        weights: Some(weights),
        stable: condition <= STABILITY_CONDITION_LIMIT,
        condition_estimate: condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn epan_spec(degree: usize, bandwidth: BandwidthMatrix) -> LocalFitSpec {
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, bandwidth.dim()).unwrap();
        LocalFitSpec::new(degree, kernel, bandwidth).unwrap()
    }

    /// Brute-force weighted least squares on the unscaled design, solved
    /// with nalgebra. Used as the oracle for `local_fit_real`.
    fn wls_oracle(
        covariates: &[f64],
        responses: &[f64],
        at: &[f64],
        degree: usize,
        bandwidth: &BandwidthMatrix,
    ) -> Option<f64> {
        let dim = at.len();
        let n = responses.len();
        let k = coefficient_count(degree, dim);
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let xi = &covariates[i * dim..(i + 1) * dim];
            let kv = eval_radial(
                KernelFamily::Epanechnikov,
                dim,
                bandwidth.inv_norm_sq_diff(xi, at),
            );
            if kv <= 0.0 {
                continue;
            }
            let mut row = vec![1.0];
            if dim == 1 {
                for p in 1..=degree {
                    row.push((xi[0] - at[0]).powi(p as i32));
                }
            } else if degree >= 1 {
                for a in 0..dim {
                    row.push(xi[a] - at[a]);
                }
            }
            rows.push(row);
            w.push(kv.sqrt());
            y.push(responses[i] * kv.sqrt());
        }
        if rows.len() < k {
            return None;
        }
        let mut design = DMatrix::zeros(rows.len(), k);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                design[(i, j)] = v * w[i];
            }
        }
        let rhs = DVector::from_vec(y);
        let svd = design.svd(true, true);
        if svd.singular_values.iter().any(|&s| s < 1e-10) {
            return None;
        }
        let beta = svd.solve(&rhs, 1e-12).ok()?;
        Some(beta[0])
    }

    #[test]
    fn bandwidth_constructors_validate() {
        assert!(BandwidthMatrix::scalar(0.0, 2).is_err());
        assert!(BandwidthMatrix::scalar(-1.0, 2).is_err());
        assert!(BandwidthMatrix::scalar(f64::NAN, 1).is_err());
        assert!(BandwidthMatrix::diagonal(&[1.0, 0.0]).is_err());
        assert!(BandwidthMatrix::diagonal(&[]).is_err());
        // asymmetric
        assert!(BandwidthMatrix::full(&[1.0, 0.5, 0.1, 1.0], 2).is_err());
        // symmetric but indefinite
        assert!(BandwidthMatrix::full(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        // singular
        assert!(BandwidthMatrix::full(&[1.0, 1.0, 1.0, 1.0], 2).is_err());
        let ok = BandwidthMatrix::full(&[2.0, 0.5, 0.5, 1.0], 2).unwrap();
        assert_eq!(ok.kind(), BandwidthKind::Full);
        assert_abs_diff_eq!(ok.det(), 2.0 * 1.0 - 0.25, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_inverse_identities() {
        let h = BandwidthMatrix::full(&[2.0, 0.5, 0.5, 1.0], 2).unwrap();
        // H^-1 H u = u  =>  |H^-1 (H u)|^2 = |u|^2
        let u = [0.3, -0.7];
        let hu = [
            h.entry(0, 0) * u[0] + h.entry(0, 1) * u[1],
            h.entry(1, 0) * u[0] + h.entry(1, 1) * u[1],
        ];
        assert_abs_diff_eq!(
            h.inv_norm_sq(&hu),
            u[0] * u[0] + u[1] * u[1],
            epsilon = 1e-12
        );
        let d = BandwidthMatrix::diagonal(&[0.5, 2.0]).unwrap();
        assert_abs_diff_eq!(d.inv_norm_sq(&[1.0, 1.0]), 4.0 + 0.25, epsilon = 1e-12);
        assert_eq!(d.upper_triangle(), vec![0.5, 0.0, 2.0]);
        assert_abs_diff_eq!(d.operator_norm(), 2.0, epsilon = 1e-12);
        // eigenvalues of [[2, 1/2], [1/2, 1]] are (3 +- sqrt(2)) / 2
        assert_abs_diff_eq!(h.operator_norm(), (3.0 + 2.0f64.sqrt()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn spec_rejects_multivariate_high_degree() {
        let h = BandwidthMatrix::scalar(1.0, 2).unwrap();
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 2).unwrap();
        assert!(matches!(
            LocalFitSpec::new(2, kernel, h.clone()),
            Err(Error::UnsupportedDegree { degree: 2, dim: 2 })
        ));
        assert!(LocalFitSpec::new(1, kernel, h).is_ok());
        // univariate cubic is fine
        let h1 = BandwidthMatrix::scalar(1.0, 1).unwrap();
        let k1 = KernelSpec::new(KernelFamily::Epanechnikov, 1).unwrap();
        let spec = LocalFitSpec::new(3, k1, h1).unwrap();
        assert_eq!(spec.coefficient_count(), 4);
    }

    #[test]
    fn nw_two_point_average() {
        // both points get equal weight, so the estimate is the midpoint
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 1).unwrap();
        let h = BandwidthMatrix::scalar(2.0, 1).unwrap();
        let r = nw_direct(&[0.0, 1.0], &[0.0, 1.0], &[0.5], &kernel, &h).unwrap();
        assert_abs_diff_eq!(r.estimate.unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(r.effective_points, 2);

        // narrow bandwidth at x = 0 only sees the first observation
        let h = BandwidthMatrix::scalar(0.5, 1).unwrap();
        let r = nw_direct(&[0.0, 1.0], &[0.0, 1.0], &[0.0], &kernel, &h).unwrap();
        assert_abs_diff_eq!(r.estimate.unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(r.effective_points, 1);
    }

    #[test]
    fn nw_undefined_outside_support() {
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 1).unwrap();
        let h = BandwidthMatrix::scalar(0.1, 1).unwrap();
        let r = nw_direct(&[0.0, 1.0], &[0.0, 1.0], &[10.0], &kernel, &h).unwrap();
        assert!(r.estimate.is_none());
        assert!(!r.stable);
        assert_eq!(r.effective_points, 0);
    }

    #[test]
    fn local_linear_singular_on_single_support_point() {
        let h = BandwidthMatrix::scalar(0.4, 1).unwrap();
        let spec = epan_spec(1, h);
        let r = local_fit_real(&[0.0, 5.0], &[1.0, 2.0], &[0.0], &spec).unwrap();
        assert!(r.estimate.is_none());
        assert!(!r.stable);
        assert_eq!(r.effective_points, 1);
    }

    #[test]
    fn matches_nw_direct_at_degree_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let dim = rng.gen_range(1..=3);
            let n = rng.gen_range(5..=40);
            let covariates: Vec<f64> =
                (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let responses: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let at: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = BandwidthMatrix::scalar(rng.gen_range(0.2..1.5), dim).unwrap();
            let kernel = KernelSpec::new(KernelFamily::Epanechnikov, dim).unwrap();
            let spec = LocalFitSpec::new(0, kernel, h.clone()).unwrap();

            let direct = nw_direct(&covariates, &responses, &at, &kernel, &h).unwrap();
            let general = local_fit_real(&covariates, &responses, &at, &spec).unwrap();
            match (direct.estimate, general.estimate) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10, "{a} vs {b}"),
                (None, None) => {}
                other => panic!("routes disagree on definedness: {other:?}"),
            }
            assert_eq!(direct.effective_points, general.effective_points);
        }
    }

    #[test]
    fn matches_wls_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut compared = 0;
        for _ in 0..200 {
            let dim = rng.gen_range(1..=2);
            let degree = if dim == 1 {
                rng.gen_range(0..=3)
            } else {
                rng.gen_range(0..=1)
            };
            let n = rng.gen_range(8..=30);
            let covariates: Vec<f64> =
                (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let responses: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let at: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let h = BandwidthMatrix::scalar(rng.gen_range(0.4..1.2), dim).unwrap();
            let spec = epan_spec(degree, h.clone());

            let mine = local_fit_real(&covariates, &responses, &at, &spec).unwrap();
            let oracle = wls_oracle(&covariates, &responses, &at, degree, &h);
            if let (Some(a), Some(b)) = (mine.estimate, oracle) {
                assert!(
                    (a - b).abs() < 1e-8 * (1.0 + b.abs()),
                    "dim={dim} degree={degree}: {a} vs {b}"
                );
                compared += 1;
            }
        }
        assert!(compared > 100, "only {compared} comparisons were definite");
    }

    #[test]
    fn equal_weight_pair_smoothing_weights() {
        let h = BandwidthMatrix::scalar(2.0, 1).unwrap();
        let spec = epan_spec(0, h);
        let sw = smoothing_weights(&[0.0, 1.0], &[0.5], &spec).unwrap();
        let w = sw.weights.unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_weights_undefined_when_singular() {
        let h = BandwidthMatrix::scalar(0.4, 1).unwrap();
        let spec = epan_spec(1, h);
        let sw = smoothing_weights(&[0.0, 5.0], &[0.0], &spec).unwrap();
        assert!(sw.weights.is_none());
        assert!(!sw.stable);
    }

    #[test]
    fn smoothing_weights_reproduce_fit() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let n = 6;
        let covariates: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let h = BandwidthMatrix::scalar(0.8, 1).unwrap();
        let spec = epan_spec(1, h);
        let at = [0.4];
        let sw = smoothing_weights(&covariates, &at, &spec).unwrap();
        let w = sw.weights.unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        for _ in 0..10 {
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let fit = local_fit_real(&covariates, &y, &at, &spec).unwrap();
            let dot: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(dot, fit.estimate.unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn weights_reproduce_local_polynomials() {
        // sum_i w_i (x_i - x)^j = 0 for 1 <= j <= degree, and 1 for j = 0
        let covariates: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let at = [0.45];
        for degree in 0..=3 {
            let h = BandwidthMatrix::scalar(0.5, 1).unwrap();
            let spec = epan_spec(degree, h);
            let w = smoothing_weights(&covariates, &at, &spec)
                .unwrap()
                .weights
                .unwrap();
            for j in 0..=degree {
                let moment: f64 = w
                    .iter()
                    .zip(&covariates)
                    .map(|(wi, xi)| wi * (xi - at[0]).powi(j as i32))
                    .sum();
                let expected = if j == 0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(moment, expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_kernel_gives_full_support() {
        let h = BandwidthMatrix::diagonal(&[0.3, 0.4]).unwrap();
        let kernel = KernelSpec::new(KernelFamily::Gaussian, 2).unwrap();
        let spec = LocalFitSpec::new(1, kernel, h).unwrap();
        let covariates = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let responses = [0.0, 1.0, 2.0, 3.0];
        let r = local_fit_real(&covariates, &responses, &[0.5, 0.5], &spec).unwrap();
        assert_eq!(r.effective_points, 4);
        assert!(r.estimate.is_some());
        assert_abs_diff_eq!(r.estimate.unwrap(), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn validates_dimensions() {
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 2).unwrap();
        let h = BandwidthMatrix::scalar(1.0, 2).unwrap();
        assert!(nw_direct(&[0.0, 1.0, 2.0], &[0.0, 1.0], &[0.0, 0.0], &kernel, &h).is_err());
        let spec = LocalFitSpec::new(1, kernel, h).unwrap();
        assert!(local_fit_real(&[0.0, 1.0], &[0.0], &[0.0], &spec).is_err());
        assert!(local_fit_real(&[0.0, f64::NAN], &[0.0], &[0.0, 0.0], &spec).is_err());
    }

    proptest! {
        // leaving an observation out via `skip` must equal deleting it
        #[test]
        fn skip_equals_deletion(seed in 0u64..300) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n = rng.gen_range(6..=20);
            let covariates: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let responses: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let at = [rng.gen_range(0.2..0.8)];
            let h = BandwidthMatrix::scalar(rng.gen_range(0.3..0.9), 1).unwrap();
            let spec = epan_spec(1, h);
            let skip = rng.gen_range(0..n);

            let mut scratch = FitScratch::new();
            let with_skip = local_fit_real_with(
                &covariates, &responses, &at, &spec, Some(skip), &mut scratch,
            );

            let mut reduced_x = covariates.clone();
            let mut reduced_y = responses.clone();
            reduced_x.remove(skip);
            reduced_y.remove(skip);
            let deleted = local_fit_real(&reduced_x, &reduced_y, &at, &spec).unwrap();

            match (with_skip.estimate, deleted.estimate) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-10),
                (None, None) => {}
                other => prop_assert!(false, "skip/deletion disagree: {other:?}"),
            }
        }
    }
}
