use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use viscoid::calibration::{Parameterization, PriorBox, DEFAULT_BINS};
use viscoid::forward::Knot;
use viscoid::synthetic::{NoiseKind, NoiseModel};
use viscoid::tmcmc::TmcmcConfig;
use viscoid::{FixedParams, LoadProgram, ParameterVector, Specimen};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub material: MaterialSection,
    pub load: LoadSection,
    pub specimen: Specimen,
    pub noise: NoiseSection,
    pub prior: PriorBox,
    pub tmcmc: TmcmcSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            material: MaterialSection::default(),
            load: LoadSection::default(),
            specimen: Specimen::unit_cube(),
            noise: NoiseSection::default(),
            prior: PriorBox::default(),
            tmcmc: TmcmcSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Truth is optional once the section is written out: a config that only
/// calibrates has no reason to know it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    #[serde(default)]
    pub truth: Option<ParameterVector>,
    #[serde(default)]
    pub fixed: FixedParams,
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection { truth: Some(ParameterVector::REFERENCE), fixed: FixedParams::REFERENCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSection {
    pub knots: Vec<Knot>,
    pub cycles: u32,
    pub dt: f64,
    /// Spacing of the observation times (s).
    pub sample_interval: f64,
}

impl Default for LoadSection {
    fn default() -> Self {
        let p = LoadProgram::default();
        LoadSection { knots: p.knots, cycles: p.cycles, dt: p.dt, sample_interval: 0.1 }
    }
}

impl LoadSection {
    pub fn program(&self) -> LoadProgram {
        LoadProgram { knots: self.knots.clone(), cycles: self.cycles, dt: self.dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub sigma_abs: Option<f64>,
    pub sigma_rel: Option<f64>,
    /// Noise level assumed by the likelihood; defaults to the level stored
    /// with the data.
    pub likelihood_sigma: Option<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let m = NoiseModel::default();
        NoiseSection { kind: m.kind, sigma_abs: m.sigma_abs, sigma_rel: m.sigma_rel, likelihood_sigma: None }
    }
}

impl NoiseSection {
    pub fn model(&self) -> NoiseModel {
        NoiseModel { kind: self.kind, sigma_abs: self.sigma_abs, sigma_rel: self.sigma_rel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TmcmcSection {
    pub n_samples: usize,
    pub cov_target: f64,
    pub beta_scale: f64,
    pub burn_in: usize,
    pub burn_in_final: usize,
    pub accept_lo: f64,
    pub accept_hi: f64,
    pub max_stages: usize,
    pub parameterization: Parameterization,
}

impl Default for TmcmcSection {
    fn default() -> Self {
        let c = TmcmcConfig::default();
        TmcmcSection {
            n_samples: c.n_samples,
            cov_target: c.cov_target,
            beta_scale: c.beta_scale,
            burn_in: c.burn_in,
            burn_in_final: c.burn_in_final,
            accept_lo: c.accept_lo,
            accept_hi: c.accept_hi,
            max_stages: c.max_stages,
            parameterization: Parameterization::Physical,
        }
    }
}

impl TmcmcSection {
    pub fn sampler(&self, seed: u64) -> TmcmcConfig {
        TmcmcConfig {
            n_samples: self.n_samples,
            cov_target: self.cov_target,
            beta_scale: self.beta_scale,
            burn_in: self.burn_in,
            burn_in_final: self.burn_in_final,
            accept_lo: self.accept_lo,
            accept_hi: self.accept_hi,
            max_stages: self.max_stages,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub bins: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), bins: DEFAULT_BINS }
    }
}

impl RunConfig {
    /// Checks every section, prefixing messages with the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{name}: {e}"));
        if let Some(q) = &self.material.truth {
            q.material(&self.material.fixed).validate().map_err(|e| field("material.truth", &e))?;
        }
        let fixed = ParameterVector::REFERENCE.material(&self.material.fixed);
        fixed.validate().map_err(|e| field("material.fixed", &e))?;
        if !(self.load.dt > 0.0 && self.load.dt.is_finite()) {
            return Err(CliError::Config(format!("load.dt: must be > 0, got {}", self.load.dt)));
        }
        self.load.program().validate().map_err(|e| field("load", &e))?;
        if !(self.load.sample_interval > 0.0) {
            return Err(CliError::Config("load.sample_interval: must be > 0".into()));
        }
        let steps = self.load.sample_interval / self.load.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(CliError::Config("load.sample_interval: must be a whole number of dt steps".into()));
        }
        self.specimen.validate().map_err(|e| field("specimen", &e))?;
        self.noise.model().validate().map_err(|e| field("noise", &e))?;
        if let Some(s) = self.noise.likelihood_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Config(format!("noise.likelihood_sigma: must be > 0, got {s}")));
            }
        }
        self.prior.validate().map_err(|e| field("prior", &e))?;
        self.tmcmc.sampler(self.seed).validate(5).map_err(|e| field("tmcmc", &e))?;
        if self.output.bins == 0 {
            return Err(CliError::Config("output.bins: must be >= 1".into()));
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<ParameterVector, CliError> {
        self.material
            .truth
            .ok_or_else(|| CliError::Config("material.truth: required by this command".into()))
    }
}

/// Sets `path` (dot-separated) in `root` to `raw`, parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("--set {path}: empty key")));
    }
    for key in &keys[..keys.len() - 1] {
        if node.get(*key).is_none_or(Value::is_null) {
            node[*key] = Value::Object(Default::default());
        }
        node = node
            .get_mut(*key)
            .filter(|v| v.is_object())
            .ok_or_else(|| CliError::Config(format!("--set {path}: `{key}` is not a section")))?;
    }
    let Some(obj) = node.as_object_mut() else {
        return Err(CliError::Config(format!("--set {path}: parent is not a section")));
    };
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_overrides(sets: &[String]) -> Result<Vec<(&str, &str)>, CliError> {
    sets.iter()
        .map(|s| s.split_once('=').ok_or_else(|| CliError::Config(format!("--set {s}: expected KEY=VALUE"))))
        .collect()
}

/// Reads the config file (or starts from defaults), applies `--set`
/// overrides and validates the result.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let overrides = parse_overrides(sets)?;
    let config = if overrides.is_empty() {
        base
    } else {
        let mut value = serde_json::to_value(&base).expect("config serializes");
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("after --set: {e}")))?
    };
    config.validate()?;
    Ok(config)
}
