use viscoid::forward::{run_forward, run_forward_with, Knot};
use viscoid::{FixedParams, LoadProgram, ParameterVector, Specimen};

fn permuted(program: &LoadProgram, perm: [usize; 3]) -> LoadProgram {
    LoadProgram {
        knots: program
            .knots
            .iter()
            .map(|k| Knot { time: k.time, traction: perm.map(|i| k.traction[i]) })
            .collect(),
        ..program.clone()
    }
}

#[test]
fn permuting_tractions_permutes_displacements() {
    let q = ParameterVector::REFERENCE;
    let f = FixedParams::REFERENCE;
    let spec = Specimen::unit_cube();
    let base = LoadProgram::staggered_triangles(2.4e8, 1, 0.01);
    let reference = run_forward(&q, &f, &base, &spec).unwrap();
    let scale = reference.displacements.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for perm in [[1, 2, 0], [2, 0, 1], [0, 2, 1], [1, 0, 2]] {
        let traj = run_forward(&q, &f, &permuted(&base, perm), &spec).unwrap();
        for (u, v) in traj.displacements.iter().zip(&reference.displacements) {
            for i in 0..3 {
                assert!((u[i] - v[perm[i]]).abs() <= 1e-12 * scale);
            }
        }
    }
}

/// The default step of 0.01 s is still pre-asymptotic on this program; first-order
/// behaviour is clean from about 2.5e-3 s down.
#[test]
fn halving_the_step_halves_the_change() {
    let q = ParameterVector::REFERENCE;
    let f = FixedParams::REFERENCE;
    let spec = Specimen::unit_cube();
    let end = |dt| {
        let traj = run_forward(&q, &f, &LoadProgram::staggered_triangles(2.4e8, 3, dt), &spec).unwrap();
        *traj.displacements.last().unwrap()
    };
    let (a, b, c) = (end(6.25e-4), end(3.125e-4), end(1.5625e-4));
    let dist = |x: [f64; 3], y: [f64; 3]| (0..3).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
    let ratio = dist(a, b) / dist(b, c);
    assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn higher_yield_stress_never_adds_plastic_strain() {
    let f = FixedParams::REFERENCE;
    let spec = Specimen::unit_cube();
    let prog = LoadProgram::default();
    let mut last = f64::INFINITY;
    for sigma_y in [1.0e8, 1.3e8, 1.7e8, 2.0e8, 2.3e8, 2.6e8] {
        let q = ParameterVector { sigma_y, ..ParameterVector::REFERENCE };
        let traj = run_forward_with(&q, &f, &prog, &spec, true).unwrap();
        let p = traj.states.unwrap().last().unwrap().p_acc;
        assert!(p <= last, "sigma_y {sigma_y:e}: p {p:e} > {last:e}");
        last = p;
    }
}
