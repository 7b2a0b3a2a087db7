//! Convergence-rate probes: runs the study driver over a schedule of
//! sample sizes with oracle bandwidths `h = c * n^(-e)` and fits the
//! log-log slope of the resulting errors, for desk-scale checks of the
//! theoretical rates.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::kernel::KernelFamily;
use crate::localpoly::BandwidthMatrix;
use crate::simulate::{run_study, BandwidthPolicy, Model, StudyConfig};

/// A rate probe: one model and noise level, a strictly increasing schedule
/// of sample sizes, and a deterministic bandwidth law `c * n^(-e)`.
#[derive(Debug, Clone)]
pub struct RateProbeConfig {
    pub model: Model,
    pub kappa: f64,
    pub degree: usize,
    pub kernel_family: KernelFamily,
    pub replicates: usize,
    pub seed: u64,
    pub sample_sizes: Vec<usize>,
    pub bandwidth_constant: f64,
    pub bandwidth_exponent: f64,
}

/// Mean circular error per sample size and the least-squares slope of
/// `log(error)` against `log(n)`.
#[derive(Debug, Clone, Serialize)]
pub struct RateProbeResult {
    pub sample_sizes: Vec<usize>,
    pub empirical_mse: Vec<f64>,
    pub fitted_log_slope: f64,
}

impl RateProbeConfig {
    fn validate(&self) -> Result<(), Error> {
        if self.sample_sizes.len() < 3 {
            return Err(Error::ProbeInvalid(format!(
                "need at least 3 sample sizes, got {}",
                self.sample_sizes.len()
            )));
        }
        if !self.sample_sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::ProbeInvalid(
                "sample sizes must be strictly increasing".into(),
            ));
        }
        if !(self.bandwidth_constant.is_finite() && self.bandwidth_constant > 0.0) {
            return Err(Error::ProbeInvalid(format!(
                "bandwidth constant must be positive, got {}",
                self.bandwidth_constant
            )));
        }
        if !(self.bandwidth_exponent > 0.0 && self.bandwidth_exponent < 1.0) {
            return Err(Error::ProbeInvalid(format!(
                "bandwidth exponent must lie in (0, 1), got {}",
                self.bandwidth_exponent
            )));
        }
        Ok(())
    }

    fn bandwidth_for(&self, n: usize) -> f64 {
        self.bandwidth_constant * (n as f64).powf(-self.bandwidth_exponent)
    }

    fn study_for(&self, n: usize, interior_margin: f64) -> Result<StudyConfig, Error> {
        let h = self.bandwidth_for(n);
        let config = StudyConfig {
            model: self.model.clone(),
            n,
            kappa: self.kappa,
            replicates: self.replicates,
            degree: self.degree,
            kernel_family: self.kernel_family,
            bandwidth: BandwidthPolicy::Fixed(BandwidthMatrix::scalar(h, 2)?),
            seed: self.seed,
            pointwise_grid: None,
            interior_margin,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Runs the probe: one study per sample size with the scheduled bandwidth,
/// evaluated away from the boundary, then a least-squares fit of
/// `log(mse)` on `log(n)`.
///
/// Evaluation trims a strip of 1.5 times the largest scheduled bandwidth
/// from every side so boundary bias cannot contaminate the slope; the
/// strip is shared across sample sizes. A zero or nonfinite error at any
/// size makes the slope meaningless and is rejected.
pub fn rate_probe(config: &RateProbeConfig) -> Result<RateProbeResult, Error> {
    config.validate()?;
    // the schedule is increasing, so the first size carries the widest
    // bandwidth
    let margin = 1.5 * config.bandwidth_for(config.sample_sizes[0]);
    if margin >= 0.5 {
        return Err(Error::ProbeInvalid(format!(
            "interior margin 1.5h = {margin:.3} swallows the unit square; \
             lower the bandwidth constant"
        )));
    }
    let studies: Vec<StudyConfig> = config
        .sample_sizes
        .iter()
        .map(|&n| config.study_for(n, margin))
        .collect::<Result<_, _>>()?;

    let reports: Vec<Result<f64, Error>> = studies
        .par_iter()
        .map(|study| run_study(study).map(|report| report.mean_case))
        .collect();

    let mut empirical_mse = Vec::with_capacity(reports.len());
    for (i, r) in reports.into_iter().enumerate() {
        let mse = r?;
        if !(mse.is_finite() && mse > 0.0) {
            return Err(Error::ProbeInvalid(format!(
                "error at n = {} is {mse}; the log-log fit is undefined",
                config.sample_sizes[i]
            )));
        }
        empirical_mse.push(mse);
    }

    let log_n: Vec<f64> = config
        .sample_sizes
        .iter()
        .map(|&n| (n as f64).ln())
        .collect();
    let log_mse: Vec<f64> = empirical_mse.iter().map(|&m| m.ln()).collect();
    let fitted_log_slope = ols_slope(&log_n, &log_mse);

    Ok(RateProbeResult {
        sample_sizes: config.sample_sizes.clone(),
        empirical_mse,
        fitted_log_slope,
    })
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

/// Writes the probe as CSV with columns `n,empirical_mse,predicted_amse`.
/// The prediction column is left empty when no predictions are supplied;
/// when given, one prediction per sample size is required.
pub fn write_probe_csv<W: std::io::Write>(
    result: &RateProbeResult,
    predicted_amse: Option<&[f64]>,
    out: W,
) -> Result<(), Error> {
    if let Some(p) = predicted_amse {
        if p.len() != result.sample_sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: result.sample_sizes.len(),
                got: p.len(),
            });
        }
    }
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["n", "empirical_mse", "predicted_amse"])?;
    for i in 0..result.sample_sizes.len() {
        let predicted = match predicted_amse {
            Some(p) => p[i].to_string(),
            None => String::new(),
        };
        writer.write_record([
            result.sample_sizes[i].to_string(),
            result.empirical_mse[i].to_string(),
            predicted,
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angle::Angle;
    use crate::bandwidth::{amse_local, h_opt_local, AsymptoticInputs, EstimatorKind};
    use crate::estimator::{CircularFit, ObservationSet};
    use crate::kernel::{kernel_constants, KernelSpec};
    use crate::localpoly::LocalFitSpec;
    use crate::simulate::{
        m1_gradient, m1_hessian, regression_truth, sample_von_mises, unit_square_grid,
        von_mises_moments,
    };
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    fn small_probe(replicates: usize) -> RateProbeConfig {
        RateProbeConfig {
            model: Model::M1,
            kappa: 5.0,
            degree: 1,
            kernel_family: KernelFamily::Epanechnikov,
            replicates,
            seed: 11,
            sample_sizes: vec![25, 64, 144],
            bandwidth_constant: 0.4,
            bandwidth_exponent: 1.0 / 6.0,
        }
    }

    #[test]
    fn error_decays_with_sample_size() {
        let result = rate_probe(&small_probe(10)).unwrap();
        assert_eq!(result.sample_sizes, vec![25, 64, 144]);
        assert_eq!(result.empirical_mse.len(), 3);
        assert!(result.empirical_mse.iter().all(|&m| m > 0.0));
        assert!(
            result.fitted_log_slope < 0.0,
            "slope {} should be negative",
            result.fitted_log_slope
        );
    }

    #[test]
    fn doubling_replicates_barely_moves_the_slope() {
        let a = rate_probe(&small_probe(15)).unwrap().fitted_log_slope;
        let b = rate_probe(&small_probe(30)).unwrap().fitted_log_slope;
        assert!((a - b).abs() <= 0.15, "slopes {a} and {b} disagree");
    }

    #[test]
    fn validation_rejects_malformed_schedules() {
        let mut config = small_probe(5);
        config.sample_sizes = vec![25, 64];
        assert!(matches!(rate_probe(&config), Err(Error::ProbeInvalid(_))));

        config = small_probe(5);
        config.sample_sizes = vec![64, 64, 144];
        assert!(matches!(rate_probe(&config), Err(Error::ProbeInvalid(_))));

        config = small_probe(5);
        config.bandwidth_constant = 0.0;
        assert!(matches!(rate_probe(&config), Err(Error::ProbeInvalid(_))));

        config = small_probe(5);
        config.bandwidth_exponent = 1.0;
        assert!(matches!(rate_probe(&config), Err(Error::ProbeInvalid(_))));

        // a constant that swallows the square is caught before any study
        config = small_probe(5);
        config.bandwidth_constant = 3.0;
        assert!(matches!(rate_probe(&config), Err(Error::ProbeInvalid(_))));

        // non-square sizes are rejected by the study layer
        config = small_probe(5);
        config.sample_sizes = vec![25, 60, 144];
        assert!(rate_probe(&config).is_err());
    }

    #[test]
    fn exactly_recovered_truth_invalidates_the_probe() {
        // constant surface and concentration beyond the point-mass cutoff:
        // every response equals the truth, the cosine loss underflows to
        // zero, and the log fit is rejected
        let mut config = small_probe(2);
        config.model = Model::Custom(Arc::new(|_: &[f64]| 1.0));
        config.kappa = 1e18;
        match rate_probe(&config) {
            Err(Error::ProbeInvalid(message)) => {
                assert!(message.contains("log-log"), "unexpected message: {message}")
            }
            other => panic!("expected ProbeInvalid, got {other:?}"),
        }
    }

    #[test]
    fn csv_output_includes_optional_predictions() {
        let result = RateProbeResult {
            sample_sizes: vec![25, 100, 400],
            empirical_mse: vec![0.5, 0.125, 0.03125],
            fitted_log_slope: -1.0,
        };
        let mut buffer = Vec::new();
        write_probe_csv(&result, None, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert_eq!(
            text,
            "n,empirical_mse,predicted_amse\n25,0.5,\n100,0.125,\n400,0.03125,\n"
        );

        let mut buffer = Vec::new();
        write_probe_csv(&result, Some(&[0.4, 0.1, 0.025]), &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert!(text.contains("25,0.5,0.4\n"));

        let mut buffer = Vec::new();
        assert!(write_probe_csv(&result, Some(&[0.4]), &mut buffer).is_err());
    }

    #[test]
    fn empirical_error_tracks_the_asymptotic_prediction() {
        // at each interior point with definite curvature, fit with that
        // point's plug-in optimal bandwidth and compare the Monte Carlo
        // mean squared angular error against the asymptotic prediction;
        // the factor-3 band is a sanity check, not a sharp one
        let kappa = 5.0;
        let n = 225;
        let replicates = 100;
        let moments = von_mises_moments(kappa).unwrap();
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 2).unwrap();
        let constants = kernel_constants(&kernel);

        let candidates = [
            [0.3, 0.3],
            [0.3, 0.7],
            [0.5, 0.3],
            [0.7, 0.5],
            [0.7, 0.7],
            [0.4, 0.6],
        ];
        let mut points = Vec::new();
        for x in candidates {
            let inputs = AsymptoticInputs {
                grad_m: m1_gradient(&x).unwrap().to_vec(),
                hess_m: m1_hessian(&x).unwrap().to_vec(),
                density: 1.0,
                grad_density: vec![0.0, 0.0],
                ell: moments.ell,
                grad_ell: vec![0.0, 0.0],
                sigma1_sq: moments.sigma1_sq,
                n,
                kernel: constants,
            };
            if let Ok(h) = h_opt_local(&inputs, EstimatorKind::LocalLinear) {
                let predicted = amse_local(&inputs, &h, EstimatorKind::LocalLinear).unwrap();
                points.push((x, h, predicted));
            }
        }
        assert!(
            points.len() >= 3,
            "too few definite-curvature points: {}",
            points.len()
        );

        let design = unit_square_grid(15).unwrap();
        let truth: Vec<Angle> = design
            .chunks(2)
            .map(|x| regression_truth(&Model::M1, x).unwrap())
            .collect();
        let zero = Angle::new(0.0).unwrap();

        let mut sq_error_sums = vec![0.0; points.len()];
        for r in 0..replicates {
            let mut rng = ChaCha12Rng::seed_from_u64(4242);
            rng.set_stream(r + 1);
            let noise = sample_von_mises(zero, kappa, n, &mut rng).unwrap();
            let mut responses = crate::angle::AngleSeries::default();
            for i in 0..n {
                responses
                    .push(Angle::new(truth[i].radians() + noise[i].radians()).unwrap());
            }
            let data = ObservationSet::new(design.clone(), 2, responses).unwrap();
            for (j, (x, h, _)) in points.iter().enumerate() {
                let spec = LocalFitSpec::new(1, kernel, h.clone()).unwrap();
                let fit = CircularFit::new(&data, spec).unwrap();
                let prediction = fit.predict_at(x).unwrap();
                let direction = prediction.direction.expect("interior fit is stable");
                let gap = direction.signed_difference(truth_at(*x));
                sq_error_sums[j] += gap * gap;
            }
        }

        let empirical_mean = sq_error_sums
            .iter()
            .map(|s| s / replicates as f64)
            .sum::<f64>()
            / points.len() as f64;
        let predicted_mean =
            points.iter().map(|(_, _, p)| p).sum::<f64>() / points.len() as f64;
        let ratio = empirical_mean / predicted_mean;
        assert!(
            (1.0 / 3.0..=3.0).contains(&ratio),
            "empirical {empirical_mean:.5} vs predicted {predicted_mean:.5}, ratio {ratio:.2}"
        );
    }

    fn truth_at(x: [f64; 2]) -> Angle {
        regression_truth(&Model::M1, &x).unwrap()
    }
}
