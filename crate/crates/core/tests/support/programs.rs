//! Randomized multiaxial stress programs and a comparison of the library's
//! backward-Euler integrator against the RK4 reference.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscoid::material::{integrate_interval, InternalState, MaterialParams};
use viscoid::SymTensor;

use super::rk4;

/// Piecewise-linear stress history, knots at `knot_dt` spacing starting from zero.
pub struct StressProgram {
    pub knot_dt: f64,
    pub knots: Vec<rk4::Mat>,
}

impl StressProgram {
    pub fn random(seed: u64, n_knots: usize, knot_dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut knots = vec![[[0.0; 3]; 3]];
        for _ in 0..n_knots {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                m[i][i] = rng.random_range(-3.5e8..3.5e8);
            }
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let v = rng.random_range(-1.0e8..1.0e8);
                m[i][j] = v;
                m[j][i] = v;
            }
            knots.push(m);
        }
        StressProgram { knot_dt, knots }
    }

    pub fn duration(&self) -> f64 {
        self.knot_dt * (self.knots.len() - 1) as f64
    }

    pub fn at(&self, t: f64) -> rk4::Mat {
        let pos = (t / self.knot_dt).clamp(0.0, (self.knots.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.knots.len() - 2);
        let w = pos - i as f64;
        let (a, b) = (&self.knots[i], &self.knots[i + 1]);
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = a[r][c] + w * (b[r][c] - a[r][c]);
            }
        }
        out
    }
}

pub fn oracle_params(p: &MaterialParams) -> rk4::Params {
    rk4::Params {
        sigma_y: p.sigma_y,
        n: p.n_exp,
        k: p.k_drag,
        b_r: p.b_r,
        h_r: p.h_r,
        b_chi: p.b_chi,
        h_chi: p.h_chi,
    }
}

/// Backward-Euler states at every multiple of `dt`, each base step split into
/// `refine` equal substeps.
pub fn backward_euler_path(p: &MaterialParams, prog: &StressProgram, dt: f64, refine: usize) -> Vec<InternalState> {
    let steps = (prog.duration() / dt).round() as usize;
    let h = dt / refine as f64;
    let mut st = InternalState::default();
    let mut out = vec![st];
    for i in 0..steps {
        for k in 0..refine {
            let t0 = i as f64 * dt + k as f64 * h;
            let s0 = SymTensor::from_matrix(prog.at(t0));
            let s1 = SymTensor::from_matrix(prog.at(t0 + h));
            st = integrate_interval(p, &s0, &s1, &st, h).expect("backward Euler step");
        }
        out.push(st);
    }
    out
}

/// RK4 states at every multiple of `dt`, each base step split into `substeps`.
pub fn rk4_path(p: &MaterialParams, prog: &StressProgram, dt: f64, substeps: usize) -> Vec<rk4::State> {
    let op = oracle_params(p);
    let steps = (prog.duration() / dt).round() as usize;
    let mut st = rk4::State::default();
    let mut out = vec![st];
    for i in 0..steps {
        let t0 = i as f64 * dt;
        st = rk4::integrate(&op, &prog.at(t0), &prog.at(t0 + dt), &st, dt, substeps);
        out.push(st);
    }
    out
}

/// Largest deviation over the path of each state field, relative to the
/// largest magnitude that field reaches on the reference path:
/// `[eps_vp, R, chi, p]`.
pub fn relative_errors(be: &[InternalState], rk: &[rk4::State]) -> [f64; 4] {
    let mut err = [0.0f64; 4];
    let mut scale = [0.0f64; 4];
    for (a, b) in be.iter().zip(rk) {
        let a_vp = a.eps_vp.to_matrix();
        let a_chi = a.chi.to_matrix();
        err[0] = err[0].max(rk4::frobenius(&rk4::diff(&a_vp, &b.eps_vp)));
        err[1] = err[1].max((a.r_iso - b.r).abs());
        err[2] = err[2].max(rk4::frobenius(&rk4::diff(&a_chi, &b.chi)));
        err[3] = err[3].max((a.p_acc - b.p).abs());
        scale[0] = scale[0].max(rk4::frobenius(&b.eps_vp));
        scale[1] = scale[1].max(b.r.abs());
        scale[2] = scale[2].max(rk4::frobenius(&b.chi));
        scale[3] = scale[3].max(b.p.abs());
    }
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = if scale[i] > 0.0 { err[i] / scale[i] } else { err[i] };
    }
    out
}
