//! Forward model of the cyclically loaded unit-cube specimen.
//!
//! The specimen is a single cube loaded by uniform normal tractions on its
//! three pairs of opposite faces and held by six scalar constraints that only
//! remove rigid-body motion. Such a configuration carries a homogeneous stress
//! state equal to the applied tractions, so the response is obtained by
//! integrating one material point under prescribed stress and mapping the
//! resulting uniform strain to the displacement of the monitored corner.
//! A multi-element mesh would replace [`run_forward`]'s stress-driven loop with
//! a global equilibrium solve; everything downstream only sees the
//! [`Trajectory`].

use std::io::Write;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::{compliance_apply, integrate_interval, InternalState, MaterialError, MaterialParams};
use crate::tensor::SymTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("invalid load program: {0}")]
    InvalidProgram(String),
    #[error("invalid specimen: {0}")]
    InvalidSpecimen(String),
    #[error(transparent)]
    InvalidParameters(MaterialError),
    #[error("time {t} s outside the load program [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },
    #[error("sample time {0} s does not coincide with an integration step")]
    SampleTimeMismatch(f64),
    #[error("forward model failed at t = {time} s: {source}")]
    ForwardFailure { time: f64, source: MaterialError },
}

/// Names of the calibrated parameters, in [`ParameterVector`] order.
pub const PARAMETER_NAMES: [&str; 5] = ["kappa", "shear", "b_r", "b_chi", "sigma_y"];

/// The identified parameters `[κ, G, b_R, b_χ, σ_y]`, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterVector {
    pub kappa: f64,
    pub shear: f64,
    pub b_r: f64,
    pub b_chi: f64,
    pub sigma_y: f64,
}

impl ParameterVector {
    pub const REFERENCE: ParameterVector = ParameterVector {
        kappa: 1.66e9,
        shear: 7.69e8,
        b_r: 50.0,
        b_chi: 50.0,
        sigma_y: 1.7e8,
    };

    pub fn from_array(q: [f64; 5]) -> Self {
        ParameterVector {
            kappa: q[0],
            shear: q[1],
            b_r: q[2],
            b_chi: q[3],
            sigma_y: q[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.kappa, self.shear, self.b_r, self.b_chi, self.sigma_y]
    }

    pub fn from_slice(q: &[f64]) -> Option<Self> {
        <[f64; 5]>::try_from(q).ok().map(Self::from_array)
    }

    pub fn validate(&self) -> Result<(), ForwardError> {
        for (name, v) in PARAMETER_NAMES.iter().zip(self.to_array()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ForwardError::InvalidParameters(MaterialError::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be > 0",
                }));
            }
        }
        Ok(())
    }

    pub fn material(&self, fixed: &FixedParams) -> MaterialParams {
        MaterialParams {
            kappa: self.kappa,
            shear: self.shear,
            sigma_y: self.sigma_y,
            n_exp: fixed.n_exp,
            k_drag: fixed.k_drag,
            b_r: self.b_r,
            h_r: fixed.h_r,
            b_chi: self.b_chi,
            h_chi: fixed.h_chi,
        }
    }
}

/// Constants held fixed during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedParams {
    pub n_exp: f64,
    pub k_drag: f64,
    pub h_r: f64,
    pub h_chi: f64,
}

impl FixedParams {
    pub const REFERENCE: FixedParams = FixedParams {
        n_exp: 1.0,
        k_drag: 1.5e8,
        h_r: 2.75e8,
        h_chi: 2.75e8,
    };
}

impl Default for FixedParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    /// Time within one cycle (s).
    pub time: f64,
    /// Normal traction per axis (Pa).
    pub traction: [f64; 3],
}

/// Piecewise-linear traction history, repeated `cycles` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProgram {
    pub knots: Vec<Knot>,
    pub cycles: u32,
    /// Base integration step (s).
    pub dt: f64,
}

impl LoadProgram {
    /// Peak traction of [`LoadProgram::staggered_triangles`] in the default program.
    pub const DEFAULT_PEAK: f64 = 2.4e8;

    /// Triangular tension-compression cycle on each axis, the three axes
    /// staggered by a quarter of the 4 s period so that two axes overlap with
    /// opposite signs at every peak.
    pub fn staggered_triangles(peak: f64, cycles: u32, dt: f64) -> Self {
        let p = peak;
        let rows: [(f64, [f64; 3]); 9] = [
            (0.0, [0.0, 0.0, 0.0]),
            (0.5, [p, 0.0, 0.0]),
            (1.0, [0.0, 0.0, 0.0]),
            (1.5, [-p, p, 0.0]),
            (2.0, [0.0, 0.0, 0.0]),
            (2.5, [0.0, -p, p]),
            (3.0, [0.0, 0.0, 0.0]),
            (3.5, [0.0, 0.0, -p]),
            (4.0, [0.0, 0.0, 0.0]),
        ];
        LoadProgram {
            knots: rows.iter().map(|&(time, traction)| Knot { time, traction }).collect(),
            cycles,
            dt,
        }
    }

    /// Uniaxial ramp to `peak` over `ramp` seconds, then held until `total`.
    pub fn ramp_and_hold(axis: usize, peak: f64, ramp: f64, total: f64, dt: f64) -> Self {
        let mut t = [0.0; 3];
        t[axis] = peak;
        LoadProgram {
            knots: vec![
                Knot { time: 0.0, traction: [0.0; 3] },
                Knot { time: ramp, traction: t },
                Knot { time: total, traction: t },
            ],
            cycles: 1,
            dt,
        }
    }

    pub fn validate(&self) -> Result<(), ForwardError> {
        let bad = |m: &str| Err(ForwardError::InvalidProgram(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if self.cycles < 1 {
            return bad("cycles must be >= 1");
        }
        if self.knots.len() < 2 {
            return bad("at least two knots are required");
        }
        let first = &self.knots[0];
        if first.time != 0.0 || first.traction != [0.0; 3] {
            return bad("first knot must be at t = 0 with zero traction");
        }
        for w in self.knots.windows(2) {
            if !(w[1].time > w[0].time) {
                return bad("knot times must be strictly increasing");
            }
        }
        if self.knots.iter().any(|k| !k.time.is_finite() || k.traction.iter().any(|v| !v.is_finite())) {
            return bad("knot values must be finite");
        }
        if self.cycles > 1 && self.knots.last().map(|k| k.traction) != Some([0.0; 3]) {
            return bad("a repeated program must end each cycle at zero traction");
        }
        let steps = self.duration() / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return bad("program duration must be a whole number of dt steps");
        }
        Ok(())
    }

    /// Length of one cycle (s).
    pub fn period(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.time)
    }

    /// Total length over all cycles (s).
    pub fn duration(&self) -> f64 {
        self.period() * f64::from(self.cycles)
    }

    pub fn step_count(&self) -> usize {
        (self.duration() / self.dt).round() as usize
    }

    /// Integration grid `0, dt, 2 dt, ..., duration`.
    pub fn step_times(&self) -> Vec<f64> {
        (0..=self.step_count()).map(|i| i as f64 * self.dt).collect()
    }

    /// Traction vector at time `t`, linear between knots, periodic across cycles.
    pub fn traction_at(&self, t: f64) -> Result<[f64; 3], ForwardError> {
        let duration = self.duration();
        let slack = 1e-9 * duration.max(1.0);
        if !(t >= -slack && t <= duration + slack) {
            return Err(ForwardError::OutOfRange { t, duration });
        }
        let period = self.period();
        let t = t.clamp(0.0, duration);
        let mut local = t % period;
        // The end of a cycle maps to the last knot, not the first.
        if local == 0.0 && t > 0.0 {
            local = period;
        }
        Ok(self.interpolate(local))
    }

    fn interpolate(&self, local: f64) -> [f64; 3] {
        let idx = self.knots.partition_point(|k| k.time <= local);
        if idx == 0 {
            return self.knots[0].traction;
        }
        if idx >= self.knots.len() {
            return self.knots[self.knots.len() - 1].traction;
        }
        let a = &self.knots[idx - 1];
        let b = &self.knots[idx];
        let w = (local - a.time) / (b.time - a.time);
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = a.traction[i] + w * (b.traction[i] - a.traction[i]);
        }
        out
    }

    /// Knot instants over the whole program, in increasing order.
    fn breakpoints(&self) -> Vec<f64> {
        let period = self.period();
        (0..self.cycles)
            .flat_map(|c| self.knots.iter().map(move |k| k.time + f64::from(c) * period))
            .collect()
    }
}

impl Default for LoadProgram {
    fn default() -> Self {
        Self::staggered_triangles(Self::DEFAULT_PEAK, 3, 0.01)
    }
}

/// Evenly spaced observation instants `0, interval, ..., duration`, placed
/// on the integration grid. `interval` is rounded to a whole number of steps.
pub fn sample_times(program: &LoadProgram, interval: f64) -> Vec<f64> {
    let stride = ((interval / program.dt).round() as usize).max(1);
    (0..=program.step_count()).step_by(stride).map(|i| i as f64 * program.dt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    A,
    B,
    C,
    D,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Single-element cube with its kinematic constraints.
///
/// Corner B sits at the origin; A, C and D are its neighbours along y, x and z,
/// and E is the corner opposite to B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specimen {
    /// Cube edge length (m).
    pub edge_length: f64,
    pub monitored_node: Node,
    pub constrained_dofs: Vec<(Node, Axis)>,
}

impl Specimen {
    pub fn unit_cube() -> Self {
        Specimen {
            edge_length: 1.0,
            monitored_node: Node::E,
            constrained_dofs: vec![
                (Node::B, Axis::X),
                (Node::B, Axis::Y),
                (Node::B, Axis::Z),
                (Node::A, Axis::X),
                (Node::C, Axis::Z),
                (Node::D, Axis::Y),
            ],
        }
    }

    pub fn node_position(&self, node: Node) -> [f64; 3] {
        let l = self.edge_length;
        match node {
            Node::B => [0.0, 0.0, 0.0],
            Node::A => [0.0, l, 0.0],
            Node::C => [l, 0.0, 0.0],
            Node::D => [0.0, 0.0, l],
            Node::E => [l, l, l],
        }
    }

    /// Checks that exactly six constraints are given and that together they
    /// suppress every rigid-body translation and rotation.
    pub fn validate(&self) -> Result<(), ForwardError> {
        if !(self.edge_length > 0.0 && self.edge_length.is_finite()) {
            return Err(ForwardError::InvalidSpecimen("edge_length must be > 0".into()));
        }
        if self.constrained_dofs.len() != 6 {
            return Err(ForwardError::InvalidSpecimen(format!(
                "exactly six constrained dofs are required, got {}",
                self.constrained_dofs.len()
            )));
        }
        // Rigid motion u(X) = t + ω × X; each constraint is one row in (t, ω).
        let mut m = Matrix6::<f64>::zeros();
        for (row, &(node, axis)) in self.constrained_dofs.iter().enumerate() {
            let x = self.node_position(node);
            let i = axis.index();
            m[(row, i)] = 1.0;
            // (ω × X)_i = ε_ijk ω_j X_k
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            m[(row, 3 + j)] += x[k];
            m[(row, 3 + k)] -= x[j];
        }
        if m.determinant().abs() < 1e-12 * self.edge_length.powi(3) {
            return Err(ForwardError::InvalidSpecimen(
                "constraints do not remove all rigid-body modes".into(),
            ));
        }
        Ok(())
    }

    /// Displacement of the monitored node under a homogeneous strain, with B fixed.
    pub fn monitored_displacement(&self, strain: &SymTensor) -> [f64; 3] {
        let x = self.node_position(self.monitored_node);
        let e = strain.to_matrix();
        let mut u = [0.0; 3];
        for i in 0..3 {
            u[i] = e[i][0] * x[0] + e[i][1] * x[1] + e[i][2] * x[2];
        }
        u
    }
}

impl Default for Specimen {
    fn default() -> Self {
        Self::unit_cube()
    }
}

/// Displacement history of the monitored node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub displacements: Vec<[f64; 3]>,
    pub states: Option<Vec<InternalState>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `time,ux,uy,uz` rows, followed by the internal variables when
    /// they were retained.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let with_states = self.states.is_some();
        write!(out, "time,ux,uy,uz")?;
        if with_states {
            write!(
                out,
                ",R,p,chi_11,chi_22,chi_33,chi_23,chi_13,chi_12,eps_vp_11,eps_vp_22,eps_vp_33"
            )?;
        }
        writeln!(out)?;
        for (i, (t, u)) in self.times.iter().zip(&self.displacements).enumerate() {
            write!(out, "{:e},{:e},{:e},{:e}", t, u[0], u[1], u[2])?;
            if let Some(states) = &self.states {
                let s = &states[i];
                write!(out, ",{:e},{:e}", s.r_iso, s.p_acc)?;
                for c in s.chi.0 {
                    write!(out, ",{c:e}")?;
                }
                write!(out, ",{:e},{:e},{:e}", s.eps_vp.0[0], s.eps_vp.0[1], s.eps_vp.0[2])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn stress_at(program: &LoadProgram, t: f64) -> Result<SymTensor, ForwardError> {
    let [x, y, z] = program.traction_at(t)?;
    Ok(SymTensor::diag(x, y, z))
}

/// Steps the material point through the whole program, calling `visit` with
/// the step index, time, state and monitored displacement at every grid point.
fn drive<F>(
    material: &MaterialParams,
    program: &LoadProgram,
    specimen: &Specimen,
    mut visit: F,
) -> Result<(), ForwardError>
where
    F: FnMut(usize, f64, &InternalState, [f64; 3]),
{
    let breakpoints = program.breakpoints();
    let mut next_break = 0;
    let mut state = InternalState::default();
    let mut sigma = SymTensor::ZERO;
    let observe = |sigma: &SymTensor, state: &InternalState| {
        let strain = compliance_apply(material, sigma) + state.eps_vp;
        specimen.monitored_displacement(&strain)
    };
    visit(0, 0.0, &state, observe(&sigma, &state));

    let steps = program.step_count();
    let mut t = 0.0;
    for i in 1..=steps {
        let t_end = i as f64 * program.dt;
        // Integrate up to every knot inside the step so that load reversals
        // are not cut off.
        while next_break < breakpoints.len() && breakpoints[next_break] <= t + 1e-12 * program.dt {
            next_break += 1;
        }
        let mut sub_start = t;
        loop {
            let sub_end = match breakpoints.get(next_break) {
                Some(&b) if b < t_end - 1e-9 * program.dt => {
                    next_break += 1;
                    b
                }
                _ => t_end,
            };
            let sigma_end = stress_at(program, sub_end)?;
            state = integrate_interval(material, &sigma, &sigma_end, &state, sub_end - sub_start)
                .map_err(|source| ForwardError::ForwardFailure { time: sub_end, source })?;
            sigma = sigma_end;
            sub_start = sub_end;
            if sub_end == t_end {
                break;
            }
        }
        t = t_end;
        visit(i, t, &state, observe(&sigma, &state));
    }
    Ok(())
}

fn check_inputs(
    q: &ParameterVector,
    fixed: &FixedParams,
    program: &LoadProgram,
    specimen: &Specimen,
) -> Result<MaterialParams, ForwardError> {
    q.validate()?;
    let material = q.material(fixed);
    material.validate().map_err(ForwardError::InvalidParameters)?;
    program.validate()?;
    specimen.validate()?;
    Ok(material)
}

/// Runs the specimen through `program`, sampling the monitored node at every
/// integration step.
pub fn run_forward(
    q: &ParameterVector,
    fixed: &FixedParams,
    program: &LoadProgram,
    specimen: &Specimen,
) -> Result<Trajectory, ForwardError> {
    run_forward_with(q, fixed, program, specimen, false)
}

/// Like [`run_forward`], optionally retaining the internal state at every step.
pub fn run_forward_with(
    q: &ParameterVector,
    fixed: &FixedParams,
    program: &LoadProgram,
    specimen: &Specimen,
    keep_states: bool,
) -> Result<Trajectory, ForwardError> {
    let material = check_inputs(q, fixed, program, specimen)?;
    let n = program.step_count() + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n),
        displacements: Vec::with_capacity(n),
        states: keep_states.then(|| Vec::with_capacity(n)),
    };
    drive(&material, program, specimen, |_, t, state, u| {
        traj.times.push(t);
        traj.displacements.push(u);
        if let Some(states) = traj.states.as_mut() {
            states.push(*state);
        }
    })?;
    Ok(traj)
}

/// Maps observation instants onto integration step indices.
pub fn sample_indices(program: &LoadProgram, sample_times: &[f64]) -> Result<Vec<usize>, ForwardError> {
    let steps = program.step_count();
    sample_times
        .iter()
        .map(|&t| {
            let k = t / program.dt;
            let idx = k.round();
            if idx < 0.0 || idx as usize > steps || (k - idx).abs() > 1e-6 {
                Err(ForwardError::SampleTimeMismatch(t))
            } else {
                Ok(idx as usize)
            }
        })
        .collect()
}

/// Measurement operator: `(u_x, u_y, u_z)` of the monitored node at each
/// sample time, concatenated.
pub fn measurement_operator(
    q: &ParameterVector,
    fixed: &FixedParams,
    program: &LoadProgram,
    specimen: &Specimen,
    sample_times: &[f64],
) -> Result<Vec<f64>, ForwardError> {
    let material = check_inputs(q, fixed, program, specimen)?;
    let indices = sample_indices(program, sample_times)?;
    measure_indices(&material, program, specimen, &indices)
}

/// Measurement operator on pre-validated inputs. Used in the likelihood loop.
pub(crate) fn measure_indices(
    material: &MaterialParams,
    program: &LoadProgram,
    specimen: &Specimen,
    indices: &[usize],
) -> Result<Vec<f64>, ForwardError> {
    let steps = program.step_count();
    let mut wanted: Vec<Vec<usize>> = vec![Vec::new(); steps + 1];
    for (slot, &i) in indices.iter().enumerate() {
        wanted[i].push(slot);
    }
    let mut out = vec![0.0; 3 * indices.len()];
    drive(material, program, specimen, |i, _, _, u| {
        for &slot in &wanted[i] {
            out[3 * slot..3 * slot + 3].copy_from_slice(&u);
        }
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elastic_q() -> ParameterVector {
        ParameterVector {
            sigma_y: 1e30,
            ..ParameterVector::REFERENCE
        }
    }

    #[test]
    fn traction_examples() {
        let prog = LoadProgram {
            knots: vec![
                Knot { time: 0.0, traction: [0.0; 3] },
                Knot { time: 1.0, traction: [2.4e8, 0.0, 0.0] },
                Knot { time: 2.0, traction: [0.0; 3] },
            ],
            cycles: 2,
            dt: 0.1,
        };
        prog.validate().unwrap();
        assert_eq!(prog.traction_at(0.0).unwrap(), [0.0; 3]);
        assert_eq!(prog.traction_at(1.0).unwrap(), [2.4e8, 0.0, 0.0]);
        assert_eq!(prog.traction_at(0.5).unwrap(), [1.2e8, 0.0, 0.0]);
        assert_eq!(prog.traction_at(3.0).unwrap(), [2.4e8, 0.0, 0.0]);
        assert_eq!(prog.traction_at(4.0).unwrap(), [0.0; 3]);
        assert!(matches!(prog.traction_at(4.5), Err(ForwardError::OutOfRange { .. })));
        assert!(matches!(prog.traction_at(-0.1), Err(ForwardError::OutOfRange { .. })));
    }

    #[test]
    fn program_validation() {
        let mut p = LoadProgram::default();
        p.validate().unwrap();
        p.dt = -0.01;
        assert!(p.validate().is_err());
        let mut p = LoadProgram::default();
        p.knots[0].traction[1] = 1.0;
        assert!(p.validate().is_err());
        let mut p = LoadProgram::default();
        p.knots.swap(2, 3);
        assert!(p.validate().is_err());
        let mut p = LoadProgram::default();
        p.dt = 0.07;
        assert!(p.validate().is_err());
    }

    #[test]
    fn default_specimen_is_statically_determinate() {
        Specimen::unit_cube().validate().unwrap();
        let mut s = Specimen::unit_cube();
        s.constrained_dofs.pop();
        assert!(s.validate().is_err());
        // Six constraints that leave rotation about z free.
        let mut s = Specimen::unit_cube();
        s.constrained_dofs[3] = (Node::A, Axis::Y);
        assert!(s.validate().is_err());
    }

    #[test]
    fn default_program_shape() {
        let p = LoadProgram::default();
        assert_eq!(p.duration(), 12.0);
        assert_eq!(p.step_count(), 1200);
        assert_eq!(sample_times(&p, 0.1).len(), 121);
    }

    #[test]
    fn zero_traction_gives_zero_displacement() {
        let prog = LoadProgram {
            knots: vec![Knot { time: 0.0, traction: [0.0; 3] }, Knot { time: 1.0, traction: [0.0; 3] }],
            cycles: 1,
            dt: 0.1,
        };
        let t = run_forward(&ParameterVector::REFERENCE, &FixedParams::REFERENCE, &prog, &Specimen::unit_cube()).unwrap();
        assert_eq!(t.len(), 11);
        assert!(t.displacements.iter().all(|u| *u == [0.0; 3]));
    }

    #[test]
    fn uniaxial_elastic_matches_young_modulus() {
        let q = elastic_q();
        let prog = LoadProgram::ramp_and_hold(0, 2.4e8, 1.0, 2.0, 0.05);
        let traj = run_forward(&q, &FixedParams::REFERENCE, &prog, &Specimen::unit_cube()).unwrap();
        let e = 9.0 * q.kappa * q.shear / (3.0 * q.kappa + q.shear);
        let nu = (3.0 * q.kappa - 2.0 * q.shear) / (2.0 * (3.0 * q.kappa + q.shear));
        for (t, u) in traj.times.iter().zip(&traj.displacements) {
            let s = prog.traction_at(*t).unwrap()[0];
            let ex = s / e;
            if s != 0.0 {
                assert!(((u[0] - ex) / ex).abs() < 1e-10);
                assert!(((u[1] + nu * ex) / (nu * ex)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn knots_between_grid_points_are_honoured() {
        // The peak falls between two grid points; the material must see it.
        let prog = LoadProgram {
            knots: vec![
                Knot { time: 0.0, traction: [0.0; 3] },
                Knot { time: 0.55, traction: [3.0e8, 0.0, 0.0] },
                Knot { time: 1.0, traction: [0.0; 3] },
            ],
            cycles: 1,
            dt: 0.1,
        };
        let fine = LoadProgram { dt: 0.05, ..prog.clone() };
        let q = ParameterVector::REFERENCE;
        let f = FixedParams::REFERENCE;
        let spec = Specimen::unit_cube();
        let a = run_forward_with(&q, &f, &prog, &spec, true).unwrap();
        let b = run_forward_with(&q, &f, &fine, &spec, true).unwrap();
        let pa = a.states.unwrap().last().unwrap().p_acc;
        let pb = b.states.unwrap().last().unwrap().p_acc;
        assert!(pa > 0.0);
        assert!((pa - pb).abs() / pb < 0.05);
    }

    #[test]
    fn measurement_operator_shape_and_determinism() {
        let prog = LoadProgram::staggered_triangles(2.4e8, 1, 0.01);
        let q = ParameterVector::REFERENCE;
        let f = FixedParams::REFERENCE;
        let spec = Specimen::unit_cube();
        let y = measurement_operator(&q, &f, &prog, &spec, &[0.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
        let all = prog.step_times();
        let y1 = measurement_operator(&q, &f, &prog, &spec, &all).unwrap();
        let y2 = measurement_operator(&q, &f, &prog, &spec, &all).unwrap();
        assert_eq!(y1.len(), 3 * all.len());
        assert_eq!(y1, y2);
        let traj = run_forward(&q, &f, &prog, &spec).unwrap();
        let flat: Vec<f64> = traj.displacements.iter().flatten().copied().collect();
        assert_eq!(flat, y1);
        assert!(matches!(
            measurement_operator(&q, &f, &prog, &spec, &[0.005]),
            Err(ForwardError::SampleTimeMismatch(_))
        ));
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let prog = LoadProgram::staggered_triangles(2.4e8, 1, 0.1);
        let traj = run_forward_with(&ParameterVector::REFERENCE, &FixedParams::REFERENCE, &prog, &Specimen::unit_cube(), true)
            .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with("time,ux,uy,uz,R,p,chi_11"));
        assert_eq!(lines.len(), 1 + 41);
    }
}
