//! Bayesian identification of `q = [κ, G, b_R, b_χ, σ_y]` from displacement
//! measurements of the cube specimen.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{
    measure_indices, sample_indices, FixedParams, ForwardError, LoadProgram, ParameterVector, Specimen,
    PARAMETER_NAMES,
};
use crate::synthetic::MeasurementSet;
use crate::tmcmc::{TargetProblem, UniformBox};

pub const DEFAULT_BINS: usize = 40;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid prior box: {0}")]
    InvalidPrior(String),
    #[error("invalid likelihood: {0}")]
    InvalidLikelihood(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

/// Independent uniform priors on each component of `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBox {
    pub lower: ParameterVector,
    pub upper: ParameterVector,
}

impl PriorBox {
    /// `[(1 - fraction) q, (1 + fraction) q]` per component.
    pub fn around(center: &ParameterVector, fraction: f64) -> Self {
        let c = center.to_array();
        PriorBox {
            lower: ParameterVector::from_array(c.map(|v| v * (1.0 - fraction))),
            upper: ParameterVector::from_array(c.map(|v| v * (1.0 + fraction))),
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        for ((name, lo), hi) in PARAMETER_NAMES.iter().zip(self.lower.to_array()).zip(self.upper.to_array()) {
            if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
                return Err(CalibrationError::InvalidPrior(format!("{name}: bounds must be positive and finite")));
            }
            if !(lo < hi) {
                return Err(CalibrationError::InvalidPrior(format!("{name}: lower {lo} must be below upper {hi}")));
            }
        }
        Ok(())
    }

    pub fn uniform(&self) -> UniformBox {
        UniformBox::new(self.lower.to_array().to_vec(), self.upper.to_array().to_vec())
    }

    pub fn contains(&self, q: &ParameterVector) -> bool {
        self.uniform().contains(&q.to_array())
    }

    /// `n` uniform draws, draw `k` taken from ChaCha stream `k`.
    pub fn draw(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let bounds = self.uniform();
        let base = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let mut rng = base.clone();
                rng.set_stream(k as u64);
                let unit: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
                bounds.transform(&unit)
            })
            .collect()
    }
}

impl Default for PriorBox {
    fn default() -> Self {
        Self::around(&ParameterVector::REFERENCE, 0.5)
    }
}

/// Measured data and the noise level assumed by the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSpec {
    pub data: MeasurementSet,
    pub noise_sigma: f64,
}

impl LikelihoodSpec {
    /// Uses the noise level the data were generated with.
    pub fn matched(data: MeasurementSet) -> Self {
        let noise_sigma = data.noise_sigma;
        LikelihoodSpec { data, noise_sigma }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(CalibrationError::InvalidLikelihood(format!(
                "noise_sigma must be > 0, got {}",
                self.noise_sigma
            )));
        }
        self.data.validate().map_err(|e| CalibrationError::InvalidLikelihood(e.to_string()))
    }
}

/// Coordinates the sampler works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `θ = q`.
    #[default]
    Physical,
    /// `θ = ln q`; the prior density carries the Jacobian `Π q_i`.
    Log,
}

impl Parameterization {
    pub fn to_physical(self, theta: &[f64]) -> Vec<f64> {
        match self {
            Parameterization::Physical => theta.to_vec(),
            Parameterization::Log => theta.iter().map(|z| z.exp()).collect(),
        }
    }

    pub fn from_physical(self, q: &[f64]) -> Vec<f64> {
        match self {
            Parameterization::Physical => q.to_vec(),
            Parameterization::Log => q.iter().map(|v| v.ln()).collect(),
        }
    }
}

/// Posterior target for the five-parameter calibration.
#[derive(Debug)]
pub struct CalibrationProblem {
    prior: PriorBox,
    bounds: UniformBox,
    log_volume: f64,
    data: Vec<f64>,
    sigma: f64,
    log_norm: f64,
    fixed: FixedParams,
    program: LoadProgram,
    specimen: Specimen,
    indices: Vec<usize>,
    parameterization: Parameterization,
    flat: bool,
    failures: AtomicUsize,
}

pub fn build_problem(
    prior: &PriorBox,
    likelihood: &LikelihoodSpec,
    fixed: &FixedParams,
    program: &LoadProgram,
    specimen: &Specimen,
) -> Result<CalibrationProblem, CalibrationError> {
    prior.validate()?;
    likelihood.validate()?;
    program.validate()?;
    specimen.validate()?;
    let indices = sample_indices(program, &likelihood.data.sample_times)?;
    let bounds = prior.uniform();
    let log_volume = bounds.lower.iter().zip(&bounds.upper).map(|(lo, hi)| (hi - lo).ln()).sum();
    let n = likelihood.data.values.len() as f64;
    Ok(CalibrationProblem {
        prior: *prior,
        bounds,
        log_volume,
        data: likelihood.data.values.clone(),
        sigma: likelihood.noise_sigma,
        log_norm: n * (likelihood.noise_sigma * (2.0 * std::f64::consts::PI).sqrt()).ln(),
        fixed: *fixed,
        program: program.clone(),
        specimen: specimen.clone(),
        indices,
        parameterization: Parameterization::Physical,
        flat: false,
        failures: AtomicUsize::new(0),
    })
}

impl CalibrationProblem {
    pub fn with_parameterization(mut self, p: Parameterization) -> Self {
        self.parameterization = p;
        self
    }

    /// Replaces the likelihood by a constant, so that the sampler returns the
    /// prior. For debugging the sampler plumbing.
    pub fn with_flat_likelihood(mut self, flat: bool) -> Self {
        self.flat = flat;
        self
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn prior(&self) -> &PriorBox {
        &self.prior
    }

    /// Number of likelihood evaluations whose forward run failed.
    pub fn forward_failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn physical_samples(&self, samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
        samples.iter().map(|t| self.parameterization.to_physical(t)).collect()
    }

    /// Gaussian log-likelihood of physical parameters `q`.
    pub fn log_likelihood_physical(&self, q: &[f64]) -> f64 {
        if self.flat {
            return 0.0;
        }
        let Some(pv) = ParameterVector::from_slice(q) else {
            return f64::NEG_INFINITY;
        };
        if pv.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        match measure_indices(&pv.material(&self.fixed), &self.program, &self.specimen, &self.indices) {
            Ok(y) => self.gaussian_log_likelihood(&y),
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                log::debug!("forward failure at {q:?}: {e}");
                f64::NEG_INFINITY
            }
        }
    }

    /// `-½ Σ ((d_i - y_i)/σ)² - n log(σ√(2π))` for model output `y`.
    pub fn gaussian_log_likelihood(&self, y: &[f64]) -> f64 {
        let inv = 1.0 / self.sigma;
        let ss: f64 = self.data.iter().zip(y).map(|(d, m)| ((d - m) * inv).powi(2)).sum();
        -0.5 * ss - self.log_norm
    }
}

impl TargetProblem for CalibrationProblem {
    fn dim(&self) -> usize {
        PARAMETER_NAMES.len()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        match self.parameterization {
            Parameterization::Physical => {
                if self.bounds.contains(theta) {
                    -self.log_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
            Parameterization::Log => {
                let q = self.parameterization.to_physical(theta);
                if self.bounds.contains(&q) {
                    theta.iter().sum::<f64>() - self.log_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.log_likelihood_physical(&self.parameterization.to_physical(theta))
    }

    fn prior_transform(&self, unit: &[f64]) -> Vec<f64> {
        self.parameterization.from_physical(&self.bounds.transform(unit))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: Option<f64>,
    pub mean: f64,
    pub std: f64,
    /// `(mean - truth) / truth`.
    pub rel_error: Option<f64>,
    /// `std / mean`.
    pub std_over_mean: f64,
}

/// Prior and posterior counts over equal-width bins spanning the prior box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub parameter: String,
    pub edges: Vec<f64>,
    pub prior_counts: Vec<usize>,
    pub posterior_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_samples: usize,
    pub parameters: Vec<ParameterSummary>,
    pub histograms: Vec<Histogram>,
}

/// Counts of `values` in `bins` equal bins on `[lo, hi]`. Values outside the
/// range are counted in the nearest edge bin.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let pos = ((v - lo) / width).floor();
        let i = if pos.is_nan() || pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        counts[i] += 1;
    }
    (edges, counts)
}

/// Per-parameter moments and histograms of equally weighted physical samples.
pub fn summarize(
    posterior: &[Vec<f64>],
    prior_samples: &[Vec<f64>],
    prior: &PriorBox,
    truth: Option<&ParameterVector>,
    bins: usize,
) -> PosteriorSummary {
    let lower = prior.lower.to_array();
    let upper = prior.upper.to_array();
    let truth = truth.map(ParameterVector::to_array);
    let n = posterior.len() as f64;
    let mut parameters = Vec::new();
    let mut histograms = Vec::new();
    for (d, name) in PARAMETER_NAMES.iter().enumerate() {
        let col: Vec<f64> = posterior.iter().map(|x| x[d]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let t = truth.map(|t| t[d]);
        parameters.push(ParameterSummary {
            name: name.to_string(),
            truth: t,
            mean,
            std,
            rel_error: t.map(|t| (mean - t) / t),
            std_over_mean: std / mean.abs(),
        });
        let prior_col: Vec<f64> = prior_samples.iter().map(|x| x[d]).collect();
        let (edges, posterior_counts) = histogram(&col, lower[d], upper[d], bins);
        let (_, prior_counts) = histogram(&prior_col, lower[d], upper[d], bins);
        histograms.push(Histogram { parameter: name.to_string(), edges, prior_counts, posterior_counts });
    }
    PosteriorSummary { n_samples: posterior.len(), parameters, histograms }
}

impl PosteriorSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// `parameter,bin_left,bin_right,prior_count,posterior_count` rows.
    pub fn write_histograms_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "parameter,bin_left,bin_right,prior_count,posterior_count")?;
        for h in &self.histograms {
            for (i, (p, q)) in h.prior_counts.iter().zip(&h.posterior_counts).enumerate() {
                writeln!(out, "{},{:e},{:e},{},{}", h.parameter, h.edges[i], h.edges[i + 1], p, q)?;
            }
        }
        Ok(())
    }

    /// Fixed-width table of truth, mean, std and relative error.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<9} {:>12} {:>12} {:>12} {:>10} {:>9}\n",
            "parameter", "truth", "mean", "std", "rel.err", "std/mean"
        );
        for p in &self.parameters {
            let truth = p.truth.map_or("-".to_string(), |t| format!("{t:.4e}"));
            let err = p.rel_error.map_or("-".to_string(), |e| format!("{:+.2}%", 100.0 * e));
            s += &format!(
                "{:<9} {:>12} {:>12.4e} {:>12.4e} {:>10} {:>8.2}%\n",
                p.name,
                truth,
                p.mean,
                p.std,
                err,
                100.0 * p.std_over_mean
            );
        }
        s
    }
}
