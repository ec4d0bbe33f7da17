use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use viscoid::calibration::{build_problem, summarize, LikelihoodSpec, PosteriorSummary};
use viscoid::forward::{run_forward_with, sample_times, ForwardError, PARAMETER_NAMES};
use viscoid::synthetic::{generate, MeasurementSet, SyntheticError};
use viscoid::tmcmc::{run_with_observer, write_samples_csv, TmcmcError};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    /// Seconds since the Unix epoch. The only field that changes between
    /// otherwise identical runs.
    timestamp: u64,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<&'a Path>,
}

fn config_hash(config: &RunConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig, data: Option<&Path>) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: config.seed,
        config_sha256: config_hash(config),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config,
        data,
    };
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn forward_error(e: ForwardError) -> CliError {
    match e {
        ForwardError::ForwardFailure { .. } => CliError::Forward(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub fn simulate(config: &RunConfig) -> Result<(), CliError> {
    let truth = config.truth()?;
    let dir = out_dir(config)?;
    let traj = run_forward_with(&truth, &config.material.fixed, &config.load.program(), &config.specimen, true)
        .map_err(forward_error)?;
    let path = dir.join("trajectory.csv");
    let mut out = create(&path)?;
    traj.write_csv(&mut out).and_then(|_| out.flush()).map_err(io_at(&path))?;
    write_manifest(&dir, "simulate", config, None)?;
    println!("wrote {} ({} steps)", path.display(), traj.len());
    Ok(())
}

pub fn generate_data(config: &RunConfig) -> Result<(), CliError> {
    let truth = config.truth()?;
    let dir = out_dir(config)?;
    let program = config.load.program();
    let times = sample_times(&program, config.load.sample_interval);
    let set = generate(
        &truth,
        &config.material.fixed,
        &program,
        &config.specimen,
        &times,
        &config.noise.model(),
        config.seed,
    )
    .map_err(|e| match e {
        SyntheticError::Forward(f) => forward_error(f),
        other => CliError::Config(other.to_string()),
    })?;
    write_text(&dir.join("measurements.json"), &set.to_json())?;
    let csv = dir.join("measurements.csv");
    let mut out = create(&csv)?;
    set.write_csv(&mut out).and_then(|_| out.flush()).map_err(io_at(&csv))?;
    write_manifest(&dir, "generate", config, None)?;
    println!(
        "wrote {} ({} observations, noise sigma {:.3e} m)",
        dir.join("measurements.json").display(),
        set.values.len(),
        set.noise_sigma
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct CalibrationReport<'a> {
    partial: bool,
    final_exponent: f64,
    log_evidence: f64,
    stage_count: usize,
    forward_failures: usize,
    likelihood_sigma: f64,
    #[serde(flatten)]
    summary: &'a PosteriorSummary,
}

pub fn calibrate(config: &RunConfig, data_path: Option<&Path>, flat: bool) -> Result<(), CliError> {
    let data_path = data_path.ok_or_else(|| CliError::Config("calibrate requires --data PATH".into()))?;
    let text = fs::read_to_string(data_path).map_err(|e| CliError::Config(format!("{}: {e}", data_path.display())))?;
    let data = MeasurementSet::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", data_path.display())))?;
    let truth = data.truth.or(config.material.truth);

    let mut likelihood = LikelihoodSpec::matched(data);
    if let Some(s) = config.noise.likelihood_sigma {
        likelihood.noise_sigma = s;
    }
    let program = config.load.program();
    let problem = build_problem(&config.prior, &likelihood, &config.material.fixed, &program, &config.specimen)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_parameterization(config.tmcmc.parameterization)
        .with_flat_likelihood(flat);

    let dir = out_dir(config)?;
    let stages_path = dir.join("stages.jsonl");
    let mut stages_out = create(&stages_path)?;
    let mut write_err = None;
    let outcome = run_with_observer(&problem, &config.tmcmc.sampler(config.seed), |stage| {
        let line = serde_json::to_string(&stage.summary()).expect("stage serializes");
        if let Err(e) = writeln!(stages_out, "{line}").and_then(|_| stages_out.flush()) {
            write_err.get_or_insert(e);
        }
        eprintln!(
            "stage {:>3}  r = {:.4e}  acceptance = {:.3}  beta = {:.3}",
            stage.index, stage.r, stage.acceptance_rate, stage.beta
        );
    });
    if let Some(e) = write_err {
        return Err(io_at(&stages_path)(e));
    }
    let (result, partial) = match outcome {
        Ok(r) => (r, false),
        Err(TmcmcError::StageLimitExceeded { partial }) => (*partial, true),
        Err(e) => return Err(CliError::Sampler(e.to_string())),
    };

    let samples = problem.physical_samples(&result.samples);
    let prior_samples = problem.physical_samples(&result.prior_samples);
    let summary = summarize(&samples, &prior_samples, &config.prior, truth.as_ref(), config.output.bins);

    let samples_path = dir.join("samples.csv");
    let mut out = create(&samples_path)?;
    write_samples_csv(&mut out, &PARAMETER_NAMES, &samples).and_then(|_| out.flush()).map_err(io_at(&samples_path))?;
    let report = CalibrationReport {
        partial,
        final_exponent: result.final_exponent,
        log_evidence: result.log_evidence,
        stage_count: result.stages.len(),
        forward_failures: problem.forward_failures(),
        likelihood_sigma: likelihood.noise_sigma,
        summary: &summary,
    };
    write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write_histograms(&dir, &summary)?;
    write_manifest(&dir, "calibrate", config, Some(data_path))?;

    print!("{}", summary.table());
    println!("log evidence {:.4}  stages {}", result.log_evidence, result.stages.len() - 1);
    if partial {
        return Err(CliError::StageLimit(result.final_exponent));
    }
    Ok(())
}

fn write_histograms(dir: &Path, summary: &PosteriorSummary) -> Result<(), CliError> {
    let path = dir.join("histograms.csv");
    let mut out = create(&path)?;
    summary.write_histograms_csv(&mut out).and_then(|_| out.flush()).map_err(io_at(&path))
}

/// Reads a samples CSV whose header lists the five parameter names.
pub fn read_samples(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header != PARAMETER_NAMES {
        return Err(bad(format!("expected header {}, found {}", PARAMETER_NAMES.join(","), header.join(","))));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let row = record
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("row {}: non-finite value", i + 2)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok(rows)
}

pub fn summarize_samples(config: &RunConfig, samples_path: Option<&Path>) -> Result<(), CliError> {
    let path = samples_path.ok_or_else(|| CliError::Config("summarize requires --data SAMPLES.csv".into()))?;
    let samples = read_samples(path)?;
    let prior_samples = config.prior.draw(samples.len(), config.seed);
    let summary = summarize(&samples, &prior_samples, &config.prior, config.material.truth.as_ref(), config.output.bins);
    let dir = out_dir(config)?;
    write_text(&dir.join("summary.json"), &summary.to_json())?;
    write_histograms(&dir, &summary)?;
    write_manifest(&dir, "summarize", config, Some(path))?;
    print!("{}", summary.table());
    Ok(())
}
