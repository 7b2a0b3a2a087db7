//! Smoothing kernels and the constants that enter the asymptotic formulas.
//!
//! Both families are spherically symmetric, so the second-moment matrix is
//! `mu2 * I` and a single scalar per family/dimension pair is enough. The
//! constants are evaluated in closed form; the unit tests check them against
//! numerical integration so the algebra cannot drift silently.

use std::f64::consts::PI;

use crate::error::Error;
use crate::localpoly::BandwidthMatrix;

/// Kernel family. Epanechnikov is the spherically symmetric
/// `c_d (1 - |u|^2)` on the unit ball; Gaussian is the standard normal
/// density in `d` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Epanechnikov,
    Gaussian,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epan" => Ok(KernelFamily::Epanechnikov),
            "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// A kernel family fixed to a predictor dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self, Error> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "kernel dimension must be at least 1".into(),
            ));
        }
        Ok(Self { family, dim })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// The two kernel-dependent constants in the AMSE expressions: the second
/// moment `mu2 = int u_1^2 K(u) du` and the roughness `R = int K(u)^2 du`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub mu2: f64,
    pub roughness: f64,
}

/// Normalising constant of the spherical Epanechnikov kernel,
/// `Gamma(d/2 + 2) / pi^(d/2)`.
pub(crate) fn epanechnikov_constant(dim: usize) -> f64 {
    gamma_of_half(dim as u32 + 4) / PI.powf(dim as f64 / 2.0)
}

/// `Gamma(k/2)` for positive integer `k`, by the recursion from
/// `Gamma(1/2) = sqrt(pi)` and `Gamma(1) = 1`.
fn gamma_of_half(k: u32) -> f64 {
    debug_assert!(k >= 1);
    let mut value = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut arg = if k % 2 == 0 { 2 } else { 1 };
    while arg < k {
        value *= arg as f64 / 2.0;
        arg += 2;
    }
    value
}

/// Kernel value at `u` given the squared norm of the (rescaled) argument.
pub(crate) fn eval_radial(family: KernelFamily, dim: usize, norm_sq: f64) -> f64 {
    match family {
        KernelFamily::Epanechnikov => {
            if norm_sq >= 1.0 {
                0.0
            } else {
                epanechnikov_constant(dim) * (1.0 - norm_sq)
            }
        }
        KernelFamily::Gaussian => {
            (2.0 * PI).powf(-(dim as f64) / 2.0) * (-0.5 * norm_sq).exp()
        }
    }
}

/// Evaluates the kernel at `u`, optionally rescaled by a bandwidth matrix:
/// with `H` the value is `|H|^-1 K(H^-1 u)`, without it plain `K(u)`.
pub fn kernel_eval(
    spec: &KernelSpec,
    u: &[f64],
    bandwidth: Option<&BandwidthMatrix>,
) -> Result<f64, Error> {
    if u.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: u.len(),
        });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("kernel argument is not finite".into()));
    }
    match bandwidth {
        None => {
            let norm_sq = u.iter().map(|v| v * v).sum();
            Ok(eval_radial(spec.family, spec.dim, norm_sq))
        }
        Some(h) => {
            if h.dim() != spec.dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim,
                    got: h.dim(),
                });
            }
            let norm_sq = h.inv_norm_sq(u);
            Ok(eval_radial(spec.family, spec.dim, norm_sq) / h.det())
        }
    }
}

/// Second moment and roughness of the kernel, in closed form.
///
/// For the spherical Epanechnikov these reduce to `mu2 = 1/(d+4)` and
/// `R = 4 c_d/(d+4)`; the Gaussian has `mu2 = 1` and `R = (4 pi)^(-d/2)`.
pub fn kernel_constants(spec: &KernelSpec) -> KernelConstants {
    let d = spec.dim as f64;
    match spec.family {
        KernelFamily::Epanechnikov => KernelConstants {
            mu2: 1.0 / (d + 4.0),
            roughness: 4.0 * epanechnikov_constant(spec.dim) / (d + 4.0),
        },
        KernelFamily::Gaussian => KernelConstants {
            mu2: 1.0,
            roughness: (4.0 * PI).powf(-d / 2.0),
        },
    }
}
