//! Prediction-grid construction with the survey filtering protocol: lay a
//! regular grid over the covariate bounding box, keep only cells close to
//! an actual observation, and optionally drop points where the local fit
//! is unstable.

use rayon::prelude::*;

use crate::error::Error;
use crate::estimator::{CircularFit, CircularPrediction};
use crate::localpoly::FitScratch;

/// Hard cap on the number of grid points, reached only by extreme
/// resolution/dimension combinations.
pub const MAX_GRID_POINTS: usize = 10_000_000;

/// Filtering protocol for a prediction grid.
///
/// Distances for the nearness rule are measured in grid-cell units per
/// axis: the gap between a grid point and an observation is
/// `sqrt(sum_k ((g_k - o_k) / cell_k)^2)`, which makes the rule meaningful
/// when axes carry different units.
#[derive(Debug, Clone)]
pub struct GridFilterConfig {
    /// Grid points per axis.
    pub resolution: usize,
    /// Nearness threshold in grid-cell units.
    pub max_cell_distance: f64,
    /// Drop points whose local fit is flagged unstable.
    pub require_stability: bool,
    /// Per-axis `(min, max)` grid extent; the bounding box of the observed
    /// covariates when absent.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for GridFilterConfig {
    fn default() -> Self {
        GridFilterConfig {
            resolution: 100,
            max_cell_distance: 15.0,
            require_stability: true,
            bounds: None,
        }
    }
}

impl GridFilterConfig {
    fn validate(&self, dim: usize) -> Result<(), Error> {
        if self.resolution < 2 {
            return Err(Error::Config(format!(
                "grid resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        if !(self.max_cell_distance.is_finite() && self.max_cell_distance > 0.0) {
            return Err(Error::Config(format!(
                "max cell distance must be positive, got {}",
                self.max_cell_distance
            )));
        }
        if let Some(bounds) = &self.bounds {
            if bounds.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: bounds.len(),
                });
            }
        }
        Ok(())
    }
}

/// A filtered prediction grid. `points` holds every grid point row-major;
/// `kept` marks the survivors of both rules; `predictions` holds the fit
/// at every point that passed the nearness rule (points far from all
/// observations are never evaluated).
#[derive(Debug, Clone)]
pub struct PredictionGrid {
    pub dim: usize,
    pub resolution: usize,
    pub cell_sizes: Vec<f64>,
    pub points: Vec<f64>,
    pub kept: Vec<bool>,
    pub predictions: Vec<Option<CircularPrediction>>,
}

impl PredictionGrid {
    pub fn point_count(&self) -> usize {
        self.kept.len()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index * self.dim..(index + 1) * self.dim]
    }

    /// Iterates over the surviving points with their predictions.
    pub fn kept_rows(&self) -> impl Iterator<Item = (&[f64], &CircularPrediction)> + '_ {
        self.kept.iter().enumerate().filter_map(move |(i, &keep)| {
            if keep {
                Some((
                    self.point(i),
                    self.predictions[i]
                        .as_ref()
                        .expect("kept points pass the nearness rule"),
                ))
            } else {
                None
            }
        })
    }
}

/// Lays a `resolution^d` grid over the bounding box (or the configured
/// bounds), keeps points within `max_cell_distance` grid cells of some
/// observation, evaluates the fit there, and further drops unstable points
/// when `require_stability` is set. An empty surviving set is a valid
/// outcome, not an error.
pub fn build_prediction_grid(
    fit: &CircularFit<'_>,
    config: &GridFilterConfig,
) -> Result<PredictionGrid, Error> {
    let data = fit.data();
    let dim = data.dim();
    config.validate(dim)?;

    let bounds: Vec<(f64, f64)> = match &config.bounds {
        Some(b) => b.clone(),
        None => (0..dim).map(|k| data.axis_range(k)).collect(),
    };
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::DegenerateAxis { axis: k });
        }
    }

    let resolution = config.resolution;
    let total = resolution
        .checked_pow(dim as u32)
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::Config(format!(
                "grid of {resolution}^{dim} points exceeds the {MAX_GRID_POINTS} cap"
            ))
        })?;

    let cell_sizes: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo) / (resolution - 1) as f64)
        .collect();

    let mut points = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut rest = flat;
        for k in (0..dim).rev() {
            let step = rest % resolution;
            rest /= resolution;
            points.push(bounds[k].0 + step as f64 * cell_sizes[k]);
        }
        // indices were pushed innermost-last; restore axis order
        points[flat * dim..(flat + 1) * dim].reverse();
    }

    let threshold_sq = config.max_cell_distance * config.max_cell_distance;
    let n = data.n();
    let covariates = data.covariates();

    let evaluated: Vec<Option<CircularPrediction>> = points
        .par_chunks(dim)
        .map_init(FitScratch::new, |scratch, point| {
            let mut near = false;
            for i in 0..n {
                let mut dist_sq = 0.0;
                for k in 0..dim {
                    let gap = (point[k] - covariates[i * dim + k]) / cell_sizes[k];
                    dist_sq += gap * gap;
                }
                if dist_sq <= threshold_sq {
                    near = true;
                    break;
                }
            }
            if near {
                Some(fit.predict_with(point, None, scratch))
            } else {
                None
            }
        })
        .collect();

    let kept: Vec<bool> = evaluated
        .iter()
        .map(|p| match p {
            Some(prediction) => !config.require_stability || prediction.stable,
            None => false,
        })
        .collect();

    Ok(PredictionGrid {
        dim,
        resolution,
        cell_sizes,
        points,
        kept,
        predictions: evaluated,
    })
}
