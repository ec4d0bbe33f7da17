//! Transitional Markov chain Monte Carlo.
//!
//! The sampler moves a population of `N` points through the tempered
//! densities `f_j(θ) ∝ p(θ) L(θ)^{r_j}` with `0 = r_0 < r_1 < ... < r_M = 1`.
//! Each transition
//!
//! 1. picks `r_{j+1}` so that the incremental weights `L^{r_{j+1} - r_j}`
//!    have a prescribed coefficient of variation,
//! 2. accumulates the evidence factor `S_j = mean(weights)`,
//! 3. resamples chain seeds in proportion to the weights, and
//! 4. runs one Metropolis-Hastings chain per seed with a Gaussian random-walk
//!    proposal whose covariance is the weighted sample covariance scaled by
//!    `β²`, keeping each chain's final state.
//!
//! Likelihoods are handled in log space only. Every chain draws from its own
//! ChaCha stream derived from `(seed, stage, chain)`, so results do not depend
//! on how the chains are scheduled across threads.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Acceptance rate the β adaptation steers towards.
pub const OPTIMAL_ACCEPTANCE: f64 = 0.234;
const BETA_MIN: f64 = 1e-3;
const BETA_MAX: f64 = 1.0;
const PRIOR_DRAW_ATTEMPTS: usize = 1000;
/// Stream id reserved for the resampling step of each stage.
const RESAMPLE_STREAM: u64 = u32::MAX as u64;
/// Mixed into the seed so that sampler streams differ from those of other
/// seeded components (e.g. measurement noise) given the same integer seed.
const SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum TmcmcError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("could not draw a prior sample inside the support after {0} attempts")]
    PriorUnsamplable(usize),
    #[error("every log-likelihood in the population is -inf")]
    DegenerateWeights,
    #[error("proposal covariance is not positive definite; the population has collapsed")]
    RankDeficient,
    #[error("stopped after {} stages at r = {}", .partial.stages.len(), .partial.final_exponent)]
    StageLimitExceeded { partial: Box<PosteriorResult> },
}

/// Prior and likelihood of a Bayesian inverse problem.
///
/// Implementations are evaluated concurrently from several threads.
pub trait TargetProblem: Sync {
    fn dim(&self) -> usize;

    /// Log prior density; `-inf` outside the support.
    fn log_prior(&self, theta: &[f64]) -> f64;

    fn log_likelihood(&self, theta: &[f64]) -> f64;

    /// Maps a point of the unit hypercube to a prior draw (inverse CDF).
    fn prior_transform(&self, unit: &[f64]) -> Vec<f64>;
}

/// Independent uniform priors on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UniformBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        UniformBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.lower.iter().zip(&self.upper).map(|(lo, hi)| (hi - lo).ln()).sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn transform(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TmcmcConfig {
    /// Population size `N`.
    pub n_samples: usize,
    /// Target coefficient of variation of the incremental weights.
    pub cov_target: f64,
    /// Initial proposal scale β.
    pub beta_scale: f64,
    /// Chain steps discarded at intermediate stages.
    pub burn_in: usize,
    /// Chain steps discarded at the final stage.
    pub burn_in_final: usize,
    pub accept_lo: f64,
    pub accept_hi: f64,
    pub max_stages: usize,
    pub seed: u64,
}

impl Default for TmcmcConfig {
    fn default() -> Self {
        TmcmcConfig {
            n_samples: 1000,
            cov_target: 1.0,
            beta_scale: 0.2,
            burn_in: 200,
            burn_in_final: 500,
            accept_lo: 0.2,
            accept_hi: 0.3,
            max_stages: 200,
            seed: 0,
        }
    }
}

impl TmcmcConfig {
    pub fn validate(&self, dim: usize) -> Result<(), TmcmcError> {
        let bad = |m: String| Err(TmcmcError::InvalidConfig(m));
        if self.n_samples < 10 * dim.max(1) {
            return bad(format!("n_samples must be >= 10 * dim = {}", 10 * dim.max(1)));
        }
        if !(self.cov_target > 0.0 && self.cov_target.is_finite()) {
            return bad("cov_target must be > 0".into());
        }
        if !(self.beta_scale > 0.0 && self.beta_scale.is_finite()) {
            return bad("beta_scale must be > 0".into());
        }
        if !(0.0 < self.accept_lo && self.accept_lo < self.accept_hi && self.accept_hi < 1.0) {
            return bad("acceptance band must satisfy 0 < accept_lo < accept_hi < 1".into());
        }
        if self.max_stages == 0 {
            return bad("max_stages must be >= 1".into());
        }
        Ok(())
    }
}

/// Population at one tempering level, with diagnostics of the transition
/// that produced it.
#[derive(Debug, Clone)]
pub struct TmcmcStage {
    pub index: usize,
    /// Tempering exponent `r_j`.
    pub r: f64,
    pub samples: Vec<Vec<f64>>,
    pub log_likes: Vec<f64>,
    pub log_priors: Vec<f64>,
    /// Normalized plausibility weights used to resample into this stage
    /// (uniform at stage 0).
    pub weights: Vec<f64>,
    /// `log S_{j-1}` of the incoming transition (0 at stage 0).
    pub log_s: f64,
    /// Proposal covariance of the incoming transition (empty at stage 0).
    pub proposal_cov: DMatrix<f64>,
    pub acceptance_rate: f64,
    pub beta: f64,
    /// Chains that never accepted a move.
    pub stalled_chains: usize,
}

impl TmcmcStage {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self) -> StageSummary {
        StageSummary {
            j: self.index,
            r: self.r,
            log_s: self.log_s,
            acceptance_rate: self.acceptance_rate,
            beta: self.beta,
            ess: effective_sample_size(&self.weights),
            stalled_chains: self.stalled_chains,
        }
    }
}

/// One JSON-lines record of the stage log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub j: usize,
    pub r: f64,
    #[serde(rename = "log_S")]
    pub log_s: f64,
    pub acceptance_rate: f64,
    pub beta: f64,
    pub ess: f64,
    pub stalled_chains: usize,
}

#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub samples: Vec<Vec<f64>>,
    pub log_likes: Vec<f64>,
    /// Population drawn from the prior at stage 0.
    pub prior_samples: Vec<Vec<f64>>,
    /// `Σ_j log S_j`.
    pub log_evidence: f64,
    pub final_exponent: f64,
    pub stages: Vec<StageSummary>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalized plausibility weights of a transition.
#[derive(Debug, Clone, PartialEq)]
pub struct PlausibilityWeights {
    /// Weights summing to one.
    pub normalized: Vec<f64>,
    /// `log S = log(mean_k L_k^{Δr})`, exact up to rounding.
    pub log_s: f64,
    /// Constant subtracted from every log weight before exponentiation.
    pub log_shift: f64,
}

impl PlausibilityWeights {
    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.normalized)
    }
}

/// Weighted mean, scaled covariance and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

/// `1 / Σ w²` for normalized weights.
pub fn effective_sample_size(normalized: &[f64]) -> f64 {
    let s: f64 = normalized.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// `r · ℓ` with the convention `0 · (-inf) = 0`.
fn tempered(r: f64, log_like: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r * log_like
    }
}

fn chain_rng(seed: u64, stage: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SEED_SALT);
    rng.set_stream(((stage as u64) << 32) | stream);
    rng
}

/// Draws the stage-0 population from the prior.
pub fn init_stage<P: TargetProblem + ?Sized>(problem: &P, config: &TmcmcConfig) -> Result<TmcmcStage, TmcmcError> {
    let dim = problem.dim();
    let n = config.n_samples;
    let draws: Vec<Result<(Vec<f64>, f64, f64), TmcmcError>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = chain_rng(config.seed, 0, k as u64);
            for _ in 0..PRIOR_DRAW_ATTEMPTS {
                let unit: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let theta = problem.prior_transform(&unit);
                let lp = problem.log_prior(&theta);
                if lp.is_finite() {
                    let ll = problem.log_likelihood(&theta);
                    return Ok((theta, lp, ll));
                }
            }
            Err(TmcmcError::PriorUnsamplable(PRIOR_DRAW_ATTEMPTS))
        })
        .collect();

    let mut samples = Vec::with_capacity(n);
    let mut log_priors = Vec::with_capacity(n);
    let mut log_likes = Vec::with_capacity(n);
    for d in draws {
        let (theta, lp, ll) = d?;
        samples.push(theta);
        log_priors.push(lp);
        log_likes.push(ll);
    }
    Ok(TmcmcStage {
        index: 0,
        r: 0.0,
        samples,
        log_likes,
        log_priors,
        weights: vec![1.0 / n as f64; n],
        log_s: 0.0,
        proposal_cov: DMatrix::zeros(0, 0),
        acceptance_rate: 1.0,
        beta: config.beta_scale,
        stalled_chains: 0,
    })
}

/// Coefficient of variation of `exp(Δr (ℓ_k - ℓ_max))` over the finite ℓ_k.
fn weight_cov(delta: f64, log_likes: &[f64], max: f64) -> f64 {
    let mut n = 0.0;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &l in log_likes.iter().filter(|l| l.is_finite()) {
        let w = (delta * (l - max)).exp();
        n += 1.0;
        sum += w;
        sum_sq += w * w;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    var.sqrt() / mean
}

/// Largest `r_{j+1} ≤ 1` whose incremental weights have a coefficient of
/// variation no larger than `cov_target`, found by bisection on `Δr`.
///
/// Samples with `ℓ = -inf` receive zero weight at any positive `Δr` and are
/// left out of the coefficient of variation.
pub fn next_exponent(stage: &TmcmcStage, config: &TmcmcConfig) -> Result<f64, TmcmcError> {
    let finite = || stage.log_likes.iter().copied().filter(|l| l.is_finite());
    let max = finite().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(TmcmcError::DegenerateWeights);
    }
    let min = finite().fold(f64::INFINITY, f64::min);
    let span = 1.0 - stage.r;
    if min == max || weight_cov(span, &stage.log_likes, max) <= config.cov_target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if weight_cov(mid, &stage.log_likes, max) <= config.cov_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((stage.r + lo).min(1.0))
}

/// Incremental weights `L^{r_next - r_j}` and the evidence factor `S_j`.
pub fn plausibility_weights(stage: &TmcmcStage, r_next: f64) -> PlausibilityWeights {
    let delta = r_next - stage.r;
    let log_w: Vec<f64> = stage.log_likes.iter().map(|&l| tempered(delta, l)).collect();
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|&lw| (lw - shift).exp()).collect();
    let total: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    PlausibilityWeights {
        normalized: raw.iter().map(|w| w / total).collect(),
        log_s: shift + (total / n).ln(),
        log_shift: shift,
    }
}

/// Weighted mean and `β²`-scaled weighted covariance of the population.
///
/// A diagonal jitter of `1e-12 · tr(Σ)/d` is added before factorization.
pub fn proposal_covariance(samples: &[Vec<f64>], weights: &[f64], beta: f64) -> Result<Proposal, TmcmcError> {
    let dim = samples.first().map_or(0, Vec::len);
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::<f64>::zeros(dim);
    for (x, w) in samples.iter().zip(weights) {
        for i in 0..dim {
            mean[i] += w * x[i];
        }
    }
    mean /= total;

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (x, w) in samples.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for i in 0..dim {
            let di = x[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += w * di * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov *= beta * beta / total;

    let mut scale = cov.trace() / dim as f64;
    if !(scale > 0.0) {
        // Collapsed population: fall back to the magnitude of the mean.
        scale = beta * beta * mean.norm_squared() / dim as f64;
    }
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let jitter = 1e-12 * scale;
    for i in 0..dim {
        cov[(i, i)] += jitter;
    }
    let factor = cov.clone().cholesky().ok_or(TmcmcError::RankDeficient)?.l();
    Ok(Proposal { mean, cov, factor })
}

/// Resamples chain seeds by weight and advances each with a
/// Metropolis-Hastings chain targeting `p(θ) L(θ)^{r_next}`.
///
/// Each chain runs `burn_in + 1` steps (`burn_in_final + 1` when `r_next` is 1)
/// and contributes its last state.
pub fn resample_and_propagate<P: TargetProblem + ?Sized>(
    stage: &TmcmcStage,
    r_next: f64,
    weights: &PlausibilityWeights,
    proposal: &Proposal,
    beta: f64,
    problem: &P,
    config: &TmcmcConfig,
) -> TmcmcStage {
    let n = config.n_samples;
    let next_index = stage.index + 1;
    let burn_in = if r_next >= 1.0 { config.burn_in_final } else { config.burn_in };
    let steps = burn_in + 1;

    let mut resample_rng = chain_rng(config.seed, next_index, RESAMPLE_STREAM);
    let picker = WeightedIndex::new(&weights.normalized).expect("weights are non-negative with positive sum");
    let starts: Vec<usize> = (0..n).map(|_| picker.sample(&mut resample_rng)).collect();

    let dim = problem.dim();
    let chains: Vec<(Vec<f64>, f64, f64, usize)> = starts
        .par_iter()
        .enumerate()
        .map(|(k, &start)| {
            let mut rng = chain_rng(config.seed, next_index, k as u64);
            let mut theta = stage.samples[start].clone();
            let mut lp = stage.log_priors[start];
            let mut ll = stage.log_likes[start];
            let mut accepted = 0;
            let mut z = DVector::<f64>::zeros(dim);
            let mut candidate = vec![0.0; dim];
            for _ in 0..steps {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                let step = &proposal.factor * &z;
                for i in 0..dim {
                    candidate[i] = theta[i] + step[i];
                }
                // The uniform is drawn unconditionally so that every step
                // consumes the same amount of randomness.
                let u: f64 = rng.random();
                let lp_new = problem.log_prior(&candidate);
                if !lp_new.is_finite() {
                    continue;
                }
                let ll_new = problem.log_likelihood(&candidate);
                let current = lp + tempered(r_next, ll);
                let proposed = lp_new + tempered(r_next, ll_new);
                let accept = if proposed == f64::NEG_INFINITY {
                    false
                } else if current == f64::NEG_INFINITY {
                    true
                } else {
                    u.ln() < proposed - current
                };
                if accept {
                    theta.copy_from_slice(&candidate);
                    lp = lp_new;
                    ll = ll_new;
                    accepted += 1;
                }
            }
            (theta, lp, ll, accepted)
        })
        .collect();

    let mut samples = Vec::with_capacity(n);
    let mut log_priors = Vec::with_capacity(n);
    let mut log_likes = Vec::with_capacity(n);
    let mut total_accepted = 0usize;
    let mut stalled = 0;
    for (theta, lp, ll, acc) in chains {
        samples.push(theta);
        log_priors.push(lp);
        log_likes.push(ll);
        total_accepted += acc;
        if acc == 0 {
            stalled += 1;
        }
    }
    if stalled > 0 {
        log::warn!("stage {next_index}: {stalled} of {n} chains accepted no move");
    }

    TmcmcStage {
        index: next_index,
        r: r_next,
        samples,
        log_likes,
        log_priors,
        weights: weights.normalized.clone(),
        log_s: weights.log_s,
        proposal_cov: proposal.cov.clone(),
        acceptance_rate: total_accepted as f64 / (n * steps) as f64,
        beta,
        stalled_chains: stalled,
    }
}

/// Rescales β towards the optimal acceptance rate when the realized rate
/// leaves `[accept_lo, accept_hi]`.
pub fn adapt_beta(beta: f64, acceptance: f64, config: &TmcmcConfig) -> f64 {
    let ratio = acceptance / OPTIMAL_ACCEPTANCE;
    let next = if acceptance < config.accept_lo {
        beta * ratio.max(0.5)
    } else if acceptance > config.accept_hi {
        beta * ratio.min(2.0)
    } else {
        beta
    };
    next.clamp(BETA_MIN, BETA_MAX)
}

fn moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = samples.first().map_or(0, Vec::len);
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in samples {
        for i in 0..dim {
            mean[i] += x[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in samples {
        for i in 0..dim {
            var[i] += (x[i] - mean[i]).powi(2);
        }
    }
    (mean, var.iter().map(|v| (v / n).sqrt()).collect())
}

/// Runs the sampler from the prior to the posterior.
pub fn run<P: TargetProblem + ?Sized>(problem: &P, config: &TmcmcConfig) -> Result<PosteriorResult, TmcmcError> {
    run_with_observer(problem, config, |_| {})
}

/// Like [`run`], calling `observer` with each completed stage.
pub fn run_with_observer<P, F>(problem: &P, config: &TmcmcConfig, mut observer: F) -> Result<PosteriorResult, TmcmcError>
where
    P: TargetProblem + ?Sized,
    F: FnMut(&TmcmcStage),
{
    config.validate(problem.dim())?;
    let mut stage = init_stage(problem, config)?;
    observer(&stage);
    let prior_samples = stage.samples.clone();
    let mut summaries = vec![stage.summary()];
    let mut log_evidence = 0.0;
    let mut beta = config.beta_scale;

    while stage.r < 1.0 && summaries.len() <= config.max_stages {
        let r_next = next_exponent(&stage, config)?;
        let weights = plausibility_weights(&stage, r_next);
        let proposal = proposal_covariance(&stage.samples, &weights.normalized, beta)?;
        let next = resample_and_propagate(&stage, r_next, &weights, &proposal, beta, problem, config);
        log_evidence += weights.log_s;
        beta = adapt_beta(beta, next.acceptance_rate, config);
        log::info!(
            "stage {:>3}  r = {:.6e}  log S = {:>12.4}  acceptance = {:.3}  beta = {:.3}",
            next.index,
            next.r,
            next.log_s,
            next.acceptance_rate,
            next.beta
        );
        observer(&next);
        summaries.push(next.summary());
        stage = next;
    }

    let (mean, std) = moments(&stage.samples);
    let result = PosteriorResult {
        samples: stage.samples,
        log_likes: stage.log_likes,
        prior_samples,
        log_evidence,
        final_exponent: stage.r,
        stages: summaries,
        mean,
        std,
    };
    if result.final_exponent < 1.0 {
        return Err(TmcmcError::StageLimitExceeded { partial: Box::new(result) });
    }
    Ok(result)
}

pub fn write_stage_jsonl<W: Write>(mut out: W, stages: &[StageSummary]) -> std::io::Result<()> {
    for s in stages {
        serde_json::to_writer(&mut out, s)?;
        writeln!(out)?;
    }
    Ok(())
}

/// One row per sample, one column per dimension.
pub fn write_samples_csv<W: Write>(mut out: W, names: &[&str], samples: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(out, "{}", names.join(","))?;
    for x in samples {
        let row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
