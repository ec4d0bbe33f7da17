//! Virtual measurements `u = Y(q) + e` with independent Gaussian noise.
//!
//! Each observation draws its noise from its own ChaCha stream (stream id =
//! observation index), so the realization depends only on the seed and the
//! position in the observation vector.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{measurement_operator, FixedParams, ForwardError, LoadProgram, ParameterVector, Specimen};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid measurement set: {0}")]
    InvalidMeasurements(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Additive, independent, zero-mean Gaussian per observation component.
    #[default]
    Gaussian,
}

/// Noise level given either in metres or as a fraction of the signal RMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma_abs: Option<f64>,
    #[serde(default)]
    pub sigma_rel: Option<f64>,
}

impl NoiseModel {
    pub fn absolute(sigma: f64) -> Self {
        NoiseModel { kind: NoiseKind::Gaussian, sigma_abs: Some(sigma), sigma_rel: None }
    }

    pub fn relative(fraction: f64) -> Self {
        NoiseModel { kind: NoiseKind::Gaussian, sigma_abs: None, sigma_rel: Some(fraction) }
    }

    /// Checks that exactly one level is set and that it is finite and
    /// non-negative. A zero level yields noiseless data.
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let level = match (self.sigma_abs, self.sigma_rel) {
            (Some(v), None) | (None, Some(v)) => v,
            _ => {
                return Err(SyntheticError::InvalidNoise(
                    "exactly one of sigma_abs and sigma_rel must be set".into(),
                ))
            }
        };
        if !(level >= 0.0 && level.is_finite()) {
            return Err(SyntheticError::InvalidNoise(format!("noise level must be >= 0, got {level}")));
        }
        Ok(())
    }

    /// Standard deviation in metres for the given noiseless signal.
    pub fn resolve_sigma(&self, signal: &[f64]) -> Result<f64, SyntheticError> {
        self.validate()?;
        Ok(match (self.sigma_abs, self.sigma_rel) {
            (Some(abs), _) => abs,
            (_, Some(rel)) => rel * rms(signal),
            _ => unreachable!(),
        })
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::relative(0.01)
    }
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// `n` independent `N(0, sigma²)` draws, draw `i` taken from ChaCha stream `i`.
pub fn gaussian_noise(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
    let base = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

/// Observed displacement history of the monitored node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSet {
    pub sample_times: Vec<f64>,
    /// `(u_x, u_y, u_z)` per sample time, flattened (m).
    pub values: Vec<f64>,
    pub noise: NoiseModel,
    /// Resolved noise standard deviation (m).
    pub noise_sigma: f64,
    pub seed: u64,
    /// Parameters the data were generated from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ParameterVector>,
    /// Realized noise vector; kept in memory only.
    #[serde(skip)]
    pub noise_realization: Vec<f64>,
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.values.len() != 3 * self.sample_times.len() {
            return Err(SyntheticError::InvalidMeasurements(format!(
                "expected {} values for {} sample times, found {}",
                3 * self.sample_times.len(),
                self.sample_times.len(),
                self.values.len()
            )));
        }
        if self.values.iter().chain(&self.sample_times).any(|v| !v.is_finite()) {
            return Err(SyntheticError::InvalidMeasurements("non-finite entry".into()));
        }
        if self.sample_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SyntheticError::InvalidMeasurements(
                "sample times must be strictly increasing".into(),
            ));
        }
        self.noise.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, SyntheticError> {
        let set: MeasurementSet = serde_json::from_str(text)
            .map_err(|e| SyntheticError::InvalidMeasurements(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measurement set serializes")
    }

    /// `time,ux,uy,uz` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,ux,uy,uz")?;
        for (t, u) in self.sample_times.iter().zip(self.values.chunks_exact(3)) {
            writeln!(out, "{:e},{:e},{:e},{:e}", t, u[0], u[1], u[2])?;
        }
        Ok(())
    }
}

/// Evaluates the measurement operator at `q_true` and adds seeded noise.
pub fn generate(
    q_true: &ParameterVector,
    fixed: &FixedParams,
    program: &LoadProgram,
    specimen: &Specimen,
    times: &[f64],
    noise: &NoiseModel,
    seed: u64,
) -> Result<MeasurementSet, SyntheticError> {
    noise.validate()?;
    let clean = measurement_operator(q_true, fixed, program, specimen, times)?;
    let sigma = noise.resolve_sigma(&clean)?;
    let realization = gaussian_noise(seed, clean.len(), sigma);
    let values = clean.iter().zip(&realization).map(|(y, e)| y + e).collect();
    Ok(MeasurementSet {
        sample_times: times.to_vec(),
        values,
        noise: *noise,
        noise_sigma: sigma,
        seed,
        truth: Some(*q_true),
        noise_realization: realization,
    })
}
