//! Modified Chaboche viscoplastic model at a single material point.
//!
//! Small strains with an additive split `ε = ε_e + ε_vp`, isotropic elasticity
//! given by bulk and shear moduli, a Perzyna-type power-law flow rule driven by
//! the over-stress `σ_eq - σ_y - R`, and saturating isotropic (`R`) and
//! kinematic (`χ`) hardening.
//!
//! The flow rule uses `∂σ_ex/∂σ` and the back-stress law uses `∂σ_eq/∂σ`.
//! Neither `σ_y` nor `R` depends on `σ`, so both are the same tensor and a
//! single [`flow_direction`] serves both equations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::SymTensor;

/// Below this equivalent stress (Pa) the flow direction is undefined.
pub const SINGULAR_STRESS_TOL: f64 = 1e-6;
/// Newton iteration cap for the local backward-Euler solve.
pub const MAX_NEWTON_ITERATIONS: usize = 50;
/// Relative residual tolerance of the local solve.
pub const NEWTON_TOLERANCE: f64 = 1e-10;
/// Maximum recursion depth when a step is bisected after a failed solve.
pub const MAX_BISECTION_DEPTH: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("flow direction undefined at equivalent stress {sigma_eq:e} Pa")]
    SingularDirection { sigma_eq: f64 },
    #[error("local Newton solve did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

/// The nine Chaboche constants, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Bulk modulus κ (Pa).
    pub kappa: f64,
    /// Shear modulus G (Pa).
    pub shear: f64,
    /// Initial yield stress σ_y (Pa).
    pub sigma_y: f64,
    /// Flow-rule exponent n.
    pub n_exp: f64,
    /// Flow-rule drag stress k (Pa).
    pub k_drag: f64,
    /// Isotropic hardening speed b_R.
    pub b_r: f64,
    /// Isotropic hardening asymptote H_R (Pa).
    pub h_r: f64,
    /// Kinematic hardening speed b_χ.
    pub b_chi: f64,
    /// Kinematic hardening asymptote H_χ (Pa).
    pub h_chi: f64,
}

impl MaterialParams {
    /// Reference steel-like parameter set used as the virtual truth.
    pub const REFERENCE: MaterialParams = MaterialParams {
        kappa: 1.66e9,
        shear: 7.69e8,
        sigma_y: 1.7e8,
        n_exp: 1.0,
        k_drag: 1.5e8,
        b_r: 50.0,
        h_r: 2.75e8,
        b_chi: 50.0,
        h_chi: 2.75e8,
    };

    pub fn validate(&self) -> Result<(), MaterialError> {
        fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), MaterialError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(MaterialError::InvalidParameter { name, value, reason })
            }
        }
        check("kappa", self.kappa, self.kappa > 0.0, "must be > 0")?;
        check("shear", self.shear, self.shear > 0.0, "must be > 0")?;
        check("sigma_y", self.sigma_y, self.sigma_y > 0.0, "must be > 0")?;
        check("k_drag", self.k_drag, self.k_drag > 0.0, "must be > 0")?;
        check("n_exp", self.n_exp, self.n_exp >= 1.0, "must be >= 1")?;
        check("b_r", self.b_r, self.b_r >= 0.0, "must be >= 0")?;
        check("b_chi", self.b_chi, self.b_chi >= 0.0, "must be >= 0")?;
        check("h_r", self.h_r, self.h_r >= 0.0, "must be >= 0")?;
        check("h_chi", self.h_chi, self.h_chi >= 0.0, "must be >= 0")?;
        Ok(())
    }

    pub fn young_modulus(&self) -> f64 {
        9.0 * self.kappa * self.shear / (3.0 * self.kappa + self.shear)
    }

    pub fn poisson_ratio(&self) -> f64 {
        (3.0 * self.kappa - 2.0 * self.shear) / (2.0 * (3.0 * self.kappa + self.shear))
    }
}

/// Internal variables of the material point. All zero in the virgin state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InternalState {
    pub eps_vp: SymTensor,
    pub r_iso: f64,
    pub chi: SymTensor,
    pub p_acc: f64,
}

/// Time derivatives of every [`InternalState`] field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateRates {
    pub eps_vp: SymTensor,
    pub r_iso: f64,
    pub chi: SymTensor,
    pub p_acc: f64,
}

/// `σ = κ tr(ε_e) I + 2G dev(ε_e)`.
pub fn elasticity_apply(params: &MaterialParams, eps_e: &SymTensor) -> SymTensor {
    params.kappa * eps_e.vol().scale(3.0) + eps_e.dev().scale(2.0 * params.shear)
}

/// Inverse of [`elasticity_apply`]: `ε_e = tr(σ)/(9κ) I + dev(σ)/(2G)`.
pub fn compliance_apply(params: &MaterialParams, sigma: &SymTensor) -> SymTensor {
    sigma.vol().scale(1.0 / (3.0 * params.kappa)) + sigma.dev().scale(0.5 / params.shear)
}

/// Von Mises norm of the effective stress `σ - χ`.
pub fn equivalent_stress(sigma: &SymTensor, chi: &SymTensor) -> f64 {
    (*sigma - *chi).von_mises()
}

/// `σ_ex = σ_eq - σ_y - R`, signed.
pub fn over_stress(params: &MaterialParams, sigma: &SymTensor, state: &InternalState) -> f64 {
    equivalent_stress(sigma, &state.chi) - params.sigma_y - state.r_iso
}

/// Normal `∂σ_eq/∂σ = 3/2 (σ - χ)_D / σ_eq`.
pub fn flow_direction(sigma: &SymTensor, chi: &SymTensor) -> Result<SymTensor, MaterialError> {
    let xi = (*sigma - *chi).dev();
    let sigma_eq = (1.5 * xi.ddot(&xi)).sqrt();
    if sigma_eq <= SINGULAR_STRESS_TOL {
        return Err(MaterialError::SingularDirection { sigma_eq });
    }
    Ok(xi.scale(1.5 / sigma_eq))
}

/// `ṗ = <σ_ex / k>^n`.
pub fn plastic_multiplier_rate(params: &MaterialParams, sigma: &SymTensor, state: &InternalState) -> f64 {
    let f = over_stress(params, sigma, state);
    if f <= 0.0 {
        0.0
    } else {
        (f / params.k_drag).powf(params.n_exp)
    }
}

/// Dissipation potential `k/(n+1) <σ_ex/k>^(n+1)`. Diagnostic only.
pub fn dissipation_potential(params: &MaterialParams, sigma: &SymTensor, state: &InternalState) -> f64 {
    let f = over_stress(params, sigma, state).max(0.0);
    params.k_drag / (params.n_exp + 1.0) * (f / params.k_drag).powf(params.n_exp + 1.0)
}

pub fn state_rates(
    params: &MaterialParams,
    sigma: &SymTensor,
    state: &InternalState,
) -> Result<StateRates, MaterialError> {
    let p_rate = plastic_multiplier_rate(params, sigma, state);
    if p_rate == 0.0 {
        return Ok(StateRates::default());
    }
    let normal = flow_direction(sigma, &state.chi)?;
    Ok(StateRates {
        eps_vp: normal.scale(p_rate),
        r_iso: params.b_r * (params.h_r - state.r_iso) * p_rate,
        chi: (normal.scale(2.0 / 3.0 * params.h_chi) - state.chi).scale(params.b_chi * p_rate),
        p_acc: p_rate,
    })
}

/// Quantities of the condensed backward-Euler equation at a trial increment `Δp`.
///
/// For a fixed end-of-step stress the implicit back-stress update keeps
/// `σ_D - χ_{n+1}` coaxial with `ξ* = σ_D - χ_n / (1 + b_χ Δp)`, which reduces the
/// whole system to one scalar equation in `Δp`.
struct Condensed {
    xi_star: SymTensor,
    xi_star_eq: f64,
    over_stress: f64,
    d_over_stress: f64,
    r_new: f64,
}

fn condense(params: &MaterialParams, s_dev: &SymTensor, state: &InternalState, dp: f64) -> Condensed {
    let a = 1.0 + params.b_chi * dp;
    let xi_star = *s_dev - state.chi.scale(1.0 / a);
    let xi_star_eq = (1.5 * xi_star.ddot(&xi_star)).sqrt();
    let xi_eq = xi_star_eq - params.b_chi * params.h_chi * dp / a;

    let c = 1.0 + params.b_r * dp;
    let r_new = (state.r_iso + params.b_r * params.h_r * dp) / c;

    let d_xi_star_eq = if xi_star_eq > 0.0 {
        1.5 * xi_star.ddot(&state.chi) * params.b_chi / (a * a * xi_star_eq)
    } else {
        0.0
    };
    let d_xi_eq = d_xi_star_eq - params.b_chi * params.h_chi / (a * a);
    let d_r = params.b_r * (params.h_r - state.r_iso) / (c * c);

    Condensed {
        xi_star,
        xi_star_eq,
        over_stress: xi_eq - params.sigma_y - r_new,
        d_over_stress: d_xi_eq - d_r,
        r_new,
    }
}

/// Advances the internal state over one step of length `dt` by backward Euler.
///
/// Rates are evaluated at `sigma_end`; `sigma_start` only matters when
/// [`integrate_interval`] subdivides the step. A step whose trial over-stress
/// is non-positive returns the input state unchanged.
pub fn integrate_step(
    params: &MaterialParams,
    _sigma_start: &SymTensor,
    sigma_end: &SymTensor,
    state: &InternalState,
    dt: f64,
) -> Result<InternalState, MaterialError> {
    if !(dt > 0.0) {
        return Err(MaterialError::InvalidTimeStep(dt));
    }
    let s_dev = sigma_end.dev();
    let trial = condense(params, &s_dev, state, 0.0);
    if trial.over_stress <= 0.0 {
        return Ok(*state);
    }

    let k = params.k_drag;
    let n = params.n_exp;
    let residual = |dp: f64| -> (f64, f64, Condensed) {
        let cd = condense(params, &s_dev, state, dp);
        if cd.over_stress <= 0.0 {
            return (dp, 1.0, cd);
        }
        let ratio = cd.over_stress / k;
        let (flow, d_flow) = if n == 1.0 {
            (dt * ratio, dt / k * cd.d_over_stress)
        } else {
            let r_nm1 = ratio.powf(n - 1.0);
            (dt * r_nm1 * ratio, dt * n * r_nm1 / k * cd.d_over_stress)
        };
        (dp - flow, 1.0 - d_flow, cd)
    };

    // g(0) < 0 and g(upper) >= 0 because the over-stress does not grow with Δp.
    let mut lo = 0.0;
    let mut hi = dt * (trial.over_stress / k).powf(n);
    if !hi.is_finite() {
        return Err(MaterialError::NoConvergence { iterations: 0 });
    }
    let mut dp = hi;
    let mut converged = None;
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let (g, dg, cd) = residual(dp);
        let scale = dp.abs().max(hi * f64::EPSILON);
        if g.abs() <= NEWTON_TOLERANCE * scale {
            converged = Some((dp, cd));
            break;
        }
        if g < 0.0 {
            lo = dp;
        } else {
            hi = dp;
        }
        let newton = dp - g / dg;
        dp = if dg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            let (_, _, cd) = residual(dp);
            converged = Some((dp, cd));
            break;
        }
    }
    let (dp, cd) = converged.ok_or(MaterialError::NoConvergence {
        iterations: MAX_NEWTON_ITERATIONS,
    })?;

    if cd.xi_star_eq <= SINGULAR_STRESS_TOL {
        return Err(MaterialError::SingularDirection { sigma_eq: cd.xi_star_eq });
    }
    let normal = cd.xi_star.dev().scale(1.5 / cd.xi_star_eq);
    let a = 1.0 + params.b_chi * dp;
    let chi = (state.chi + normal.scale(2.0 / 3.0 * params.b_chi * params.h_chi * dp)).scale(1.0 / a);

    Ok(InternalState {
        eps_vp: state.eps_vp + normal.scale(dp),
        r_iso: cd.r_new,
        chi: chi.dev(),
        p_acc: state.p_acc + dp,
    })
}

/// Integrates over `[t, t + dt]` with the stress interpolated linearly between
/// the two end values, bisecting the step recursively when the local solve
/// fails.
pub fn integrate_interval(
    params: &MaterialParams,
    sigma_start: &SymTensor,
    sigma_end: &SymTensor,
    state: &InternalState,
    dt: f64,
) -> Result<InternalState, MaterialError> {
    integrate_bisecting(params, sigma_start, sigma_end, state, dt, 0)
}

fn integrate_bisecting(
    params: &MaterialParams,
    sigma_start: &SymTensor,
    sigma_end: &SymTensor,
    state: &InternalState,
    dt: f64,
    depth: u32,
) -> Result<InternalState, MaterialError> {
    match integrate_step(params, sigma_start, sigma_end, state, dt) {
        Err(MaterialError::NoConvergence { .. }) if depth < MAX_BISECTION_DEPTH => {
            let mid = (*sigma_start + *sigma_end).scale(0.5);
            let half = 0.5 * dt;
            let first = integrate_bisecting(params, sigma_start, &mid, state, half, depth + 1)?;
            integrate_bisecting(params, &mid, sigma_end, &first, half, depth + 1)
        }
        other => other,
    }
}
