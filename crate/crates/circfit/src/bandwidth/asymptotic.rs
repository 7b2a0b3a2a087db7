//! Asymptotic mean squared error of the circular local estimators and the
//! bandwidth matrix that the asymptotic theory prescribes.
//!
//! The squared-bias term involves a curvature matrix `B(x)` that differs
//! between the local constant and local linear fits: the local constant
//! estimator picks up a design term driven by the gradient of
//! `ell(x) f(x)`, the local linear one only by the gradient of `ell(x)`.
//! Everything here is pointwise; the caller supplies the true derivatives.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::kernel::KernelConstants;
use crate::localpoly::BandwidthMatrix;

/// Which estimator the asymptotic expressions describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    NadarayaWatson,
    LocalLinear,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::NadarayaWatson => "nw",
            EstimatorKind::LocalLinear => "ll",
        }
    }
}

/// Pointwise inputs to the asymptotic formulas: derivatives of the
/// regression function `m`, the design density `f`, the conditional
/// concentration `ell`, the error variance `sigma1_sq` of `sin(eps)`,
/// the sample size, and the kernel constants.
#[derive(Debug, Clone)]
pub struct AsymptoticInputs {
    pub grad_m: Vec<f64>,
    /// Hessian of `m`, row-major `d x d`.
    pub hess_m: Vec<f64>,
    pub density: f64,
    pub grad_density: Vec<f64>,
    pub ell: f64,
    pub grad_ell: Vec<f64>,
    pub sigma1_sq: f64,
    pub n: usize,
    pub kernel: KernelConstants,
}

impl AsymptoticInputs {
    pub fn dim(&self) -> usize {
        self.grad_m.len()
    }

    fn validate(&self) -> Result<usize, Error> {
        let d = self.grad_m.len();
        if d == 0 {
            return Err(Error::InvalidInput("gradient must have dimension >= 1".into()));
        }
        if self.hess_m.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: self.hess_m.len(),
            });
        }
        if self.grad_density.len() != d || self.grad_ell.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if self.grad_density.len() != d {
                    self.grad_density.len()
                } else {
                    self.grad_ell.len()
                },
            });
        }
        let finite = self.grad_m.iter().all(|v| v.is_finite())
            && self.hess_m.iter().all(|v| v.is_finite())
            && self.grad_density.iter().all(|v| v.is_finite())
            && self.grad_ell.iter().all(|v| v.is_finite())
            && self.density.is_finite()
            && self.ell.is_finite()
            && self.sigma1_sq.is_finite();
        if !finite {
            return Err(Error::InvalidInput("asymptotic inputs must be finite".into()));
        }
        if self.sigma1_sq < 0.0 {
            return Err(Error::InvalidInput(format!(
                "sigma1_sq must be nonnegative, got {}",
                self.sigma1_sq
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("sample size must be at least 1".into()));
        }
        if !(self.kernel.mu2 > 0.0 && self.kernel.roughness > 0.0) {
            return Err(Error::InvalidInput("kernel constants must be positive".into()));
        }
        Ok(d)
    }

    fn require_positive_point(&self) -> Result<(), Error> {
        if self.density <= 0.0 {
            return Err(Error::SingularPoint(format!(
                "design density is {} at this point",
                self.density
            )));
        }
        if self.ell <= 0.0 {
            return Err(Error::SingularPoint(format!(
                "mean resultant length is {} at this point",
                self.ell
            )));
        }
        Ok(())
    }

    /// The curvature matrix `B(x)` entering the squared-bias term.
    fn curvature(&self, estimator: EstimatorKind) -> Vec<f64> {
        let d = self.dim();
        let mut b = self.hess_m.clone();
        match estimator {
            EstimatorKind::NadarayaWatson => {
                // (1/(ell f)) [grad(ell f) grad(m)^T + grad(m) grad(ell f)^T]
                let scale = 1.0 / (self.ell * self.density);
                for i in 0..d {
                    let gi = self.ell * self.grad_density[i] + self.density * self.grad_ell[i];
                    for j in 0..d {
                        let gj =
                            self.ell * self.grad_density[j] + self.density * self.grad_ell[j];
                        b[i * d + j] += scale * (gi * self.grad_m[j] + self.grad_m[i] * gj);
                    }
                }
            }
            EstimatorKind::LocalLinear => {
                // (1/ell) [grad(ell) grad(m)^T + grad(m) grad(ell)^T]
                let scale = 1.0 / self.ell;
                for i in 0..d {
                    for j in 0..d {
                        b[i * d + j] += scale
                            * (self.grad_ell[i] * self.grad_m[j]
                                + self.grad_m[i] * self.grad_ell[j]);
                    }
                }
            }
        }
        b
    }
}

/// Pointwise asymptotic mean squared error of the estimator with
/// bandwidth `H`: squared bias plus leading variance.
pub fn amse_local(
    inputs: &AsymptoticInputs,
    bandwidth: &BandwidthMatrix,
    estimator: EstimatorKind,
) -> Result<f64, Error> {
    let d = inputs.validate()?;
    inputs.require_positive_point()?;
    if bandwidth.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bandwidth.dim(),
        });
    }
    let curvature = inputs.curvature(estimator);
    let h = bandwidth.entries();
    // trace of H^2 B
    let mut trace = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut h2 = 0.0;
            for m in 0..d {
                h2 += h[i * d + m] * h[m * d + j];
            }
            trace += h2 * curvature[j * d + i];
        }
    }
    let bias = 0.5 * inputs.kernel.mu2 * trace;
    let variance = inputs.kernel.roughness * inputs.sigma1_sq
        / (inputs.n as f64
            * bandwidth.det()
            * inputs.ell
            * inputs.ell
            * inputs.density);
    Ok(bias * bias + variance)
}

/// Eigenvalues closer to zero than this (relative to the largest
/// magnitude) make the curvature matrix effectively singular.
const CURVATURE_RANK_TOLERANCE: f64 = 1e-12;

/// The asymptotically optimal local bandwidth matrix.
///
/// Requires the curvature matrix to be definite; it is flipped to positive
/// when negative definite and rejected as indefinite otherwise. The result
/// is `h* B~^(-1/2)` with the scalar rate constant
/// `h* = [R sigma1_sq |B~|^(1/2) / (n d mu2^2 f)]^(1/(d+4))`.
pub fn h_opt_local(
    inputs: &AsymptoticInputs,
    estimator: EstimatorKind,
) -> Result<BandwidthMatrix, Error> {
    let d = inputs.validate()?;
    inputs.require_positive_point()?;
    if inputs.sigma1_sq == 0.0 {
        return Err(Error::SingularPoint(
            "sigma1_sq is zero; the optimal bandwidth degenerates".into(),
        ));
    }
    let curvature = inputs.curvature(estimator);
    let b = DMatrix::from_row_slice(d, d, &curvature);
    let sym = (&b + b.transpose()) * 0.5;
    let eigen = sym.symmetric_eigen();
    let max_abs = eigen
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::IndefiniteCurvature);
    }
    let mut positive = 0usize;
    let mut negative = 0usize;
    for &lambda in eigen.eigenvalues.iter() {
        if lambda.abs() <= CURVATURE_RANK_TOLERANCE * max_abs {
            return Err(Error::IndefiniteCurvature);
        }
        if lambda > 0.0 {
            positive += 1;
        } else {
            negative += 1;
        }
    }
    if positive != d && negative != d {
        return Err(Error::IndefiniteCurvature);
    }

    // |B~|^(1/2) and B~^(-1/2) from the absolute eigenvalues
    let det_sqrt = eigen
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .product::<f64>()
        .sqrt();
    let scale = (inputs.kernel.roughness * inputs.sigma1_sq * det_sqrt
        / (inputs.n as f64 * d as f64 * inputs.kernel.mu2 * inputs.kernel.mu2 * inputs.density))
        .powf(1.0 / (d as f64 + 4.0));

    let mut inv_sqrt_diag = eigen.eigenvalues.clone();
    inv_sqrt_diag
        .iter_mut()
        .for_each(|l| *l = 1.0 / l.abs().sqrt());
    let root = &eigen.eigenvectors
        * DMatrix::from_diagonal(&inv_sqrt_diag)
        * eigen.eigenvectors.transpose();
    let mut entries = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            // exact symmetry for the constructor's validation
            entries[i * d + j] = scale * 0.5 * (root[(i, j)] + root[(j, i)]);
        }
    }
    BandwidthMatrix::full(&entries, d)
}
