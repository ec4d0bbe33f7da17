mod support;

use support::programs::{backward_euler_path, relative_errors, rk4_path, StressProgram};
use viscoid::forward::run_forward_with;
use viscoid::material::{integrate_interval, InternalState, MaterialParams};
use viscoid::{FixedParams, LoadProgram, ParameterVector, Specimen, SymTensor};

const ORACLE_DT: f64 = 1e-3;

#[test]
fn backward_euler_converges_to_rk4_oracle() {
    let p = MaterialParams::REFERENCE;
    for seed in 0..10 {
        let prog = StressProgram::random(seed, 4, 0.5);
        let rk = rk4_path(&p, &prog, ORACLE_DT, 1000);
        let be = backward_euler_path(&p, &prog, ORACLE_DT, 64);
        assert!(rk.last().unwrap().p > 1e-3, "program {seed} barely yields");
        for (field, err) in ["eps_vp", "R", "chi", "p"].iter().zip(relative_errors(&be, &rk)) {
            assert!(err < 1e-4, "program {seed}: {field} relative error {err:e}");
        }
    }
}

#[test]
fn backward_euler_error_is_first_order() {
    let p = MaterialParams::REFERENCE;
    let prog = StressProgram::random(3, 4, 0.5);
    let rk = rk4_path(&p, &prog, 0.01, 1000);
    let coarse = relative_errors(&backward_euler_path(&p, &prog, 0.01, 8), &rk);
    let fine = relative_errors(&backward_euler_path(&p, &prog, 0.01, 16), &rk);
    for (c, f) in coarse.iter().zip(&fine) {
        let ratio = c / f;
        assert!((1.7..=2.3).contains(&ratio), "halving ratio {ratio}");
    }
}

#[test]
fn long_hold_saturates_hardening() {
    // Saturation needs σ > σ_y + H_R + H_χ = 7.2e8 Pa, otherwise flow stops first.
    let q = ParameterVector::REFERENCE;
    let f = FixedParams::REFERENCE;
    let prog = LoadProgram::ramp_and_hold(0, 8.0e8, 0.1, 5.0, 1e-3);
    let traj = run_forward_with(&q, &f, &prog, &Specimen::unit_cube(), true).unwrap();
    let last = traj.states.unwrap().pop().unwrap();
    assert!((last.r_iso - f.h_r).abs() <= 1e-3 * f.h_r, "R = {:e}", last.r_iso);
    let chi_axial = 2.0 / 3.0 * f.h_chi;
    assert!((last.chi.0[0] - chi_axial).abs() <= 1e-3 * chi_axial, "chi_xx = {:e}", last.chi.0[0]);
}

fn path_states(p: &MaterialParams, prog: &StressProgram, dt: f64) -> Vec<InternalState> {
    backward_euler_path(p, prog, dt, 1)
}

#[test]
fn trajectory_invariants_on_random_programs() {
    let p = MaterialParams::REFERENCE;
    for seed in 20..30 {
        let prog = StressProgram::random(seed, 6, 0.4);
        let states = path_states(&p, &prog, 0.01);
        for w in states.windows(2) {
            assert!(w[1].p_acc >= w[0].p_acc);
        }
        for s in &states {
            assert!(s.chi.trace().abs() <= 1e-10 * s.chi.norm().max(f64::MIN_POSITIVE));
            assert!(s.eps_vp.trace().abs() <= 1e-10 * s.eps_vp.norm().max(f64::MIN_POSITIVE));
            assert!(s.r_iso >= -1e-9 * p.h_r && s.r_iso <= p.h_r * (1.0 + 1e-9));
        }
    }
}

#[test]
fn elastic_shakedown_returns_initial_state() {
    let p = MaterialParams::REFERENCE;
    let mut prog = StressProgram::random(7, 5, 0.5);
    // Scale every knot below yield.
    for k in &mut prog.knots {
        let eq = SymTensor::from_matrix(*k).von_mises();
        if eq > 0.0 {
            let c = 0.9 * p.sigma_y / eq;
            for row in k.iter_mut() {
                row.iter_mut().for_each(|v| *v *= c);
            }
        }
    }
    let states = path_states(&p, &prog, 0.01);
    assert_eq!(*states.last().unwrap(), InternalState::default());

    let s = SymTensor::diag(1.0e8, -5.0e7, 0.0);
    let after = integrate_interval(&p, &SymTensor::ZERO, &s, &InternalState::default(), 0.5).unwrap();
    assert_eq!(after, InternalState::default());
}
