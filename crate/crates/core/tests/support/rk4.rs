//! Explicit fourth-order Runge-Kutta reference for the Chaboche internal
//! variables under a prescribed stress history.
//!
//! Written directly on full 3×3 arrays so that it shares no code with the
//! library's implicit integrator.

#![allow(dead_code)]

pub type Mat = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, Default)]
pub struct Params {
    pub sigma_y: f64,
    pub n: f64,
    pub k: f64,
    pub b_r: f64,
    pub h_r: f64,
    pub b_chi: f64,
    pub h_chi: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct State {
    pub eps_vp: Mat,
    pub r: f64,
    pub chi: Mat,
    pub p: f64,
}

fn deviator(a: &Mat) -> Mat {
    let m = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let mut d = *a;
    for (i, row) in d.iter_mut().enumerate() {
        row[i] -= m;
    }
    d
}

fn contract(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

fn rates(p: &Params, sigma: &Mat, st: &State) -> State {
    let mut eff = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            eff[i][j] = sigma[i][j] - st.chi[i][j];
        }
    }
    let xi = deviator(&eff);
    let eq = (1.5 * contract(&xi, &xi)).sqrt();
    let f = eq - p.sigma_y - st.r;
    if f <= 0.0 {
        return State::default();
    }
    let pdot = (f / p.k).powf(p.n);
    let mut out = State {
        p: pdot,
        r: p.b_r * (p.h_r - st.r) * pdot,
        ..State::default()
    };
    for i in 0..3 {
        for j in 0..3 {
            let normal = 1.5 * xi[i][j] / eq;
            out.eps_vp[i][j] = pdot * normal;
            out.chi[i][j] = p.b_chi * (2.0 / 3.0 * p.h_chi * normal - st.chi[i][j]) * pdot;
        }
    }
    out
}

fn axpy(st: &State, h: f64, d: &State) -> State {
    let mut out = *st;
    out.p += h * d.p;
    out.r += h * d.r;
    for i in 0..3 {
        for j in 0..3 {
            out.eps_vp[i][j] += h * d.eps_vp[i][j];
            out.chi[i][j] += h * d.chi[i][j];
        }
    }
    out
}

fn lerp(a: &Mat, b: &Mat, w: f64) -> Mat {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] + w * (b[i][j] - a[i][j]);
        }
    }
    out
}

/// Integrates over an interval of length `dt` with the stress linear between
/// `s0` and `s1`, using `substeps` classical RK4 steps.
pub fn integrate(p: &Params, s0: &Mat, s1: &Mat, st: &State, dt: f64, substeps: usize) -> State {
    let h = dt / substeps as f64;
    let mut x = *st;
    for k in 0..substeps {
        let w0 = k as f64 / substeps as f64;
        let wm = (k as f64 + 0.5) / substeps as f64;
        let w1 = (k as f64 + 1.0) / substeps as f64;
        let sa = lerp(s0, s1, w0);
        let sm = lerp(s0, s1, wm);
        let sb = lerp(s0, s1, w1);
        let k1 = rates(p, &sa, &x);
        let k2 = rates(p, &sm, &axpy(&x, 0.5 * h, &k1));
        let k3 = rates(p, &sm, &axpy(&x, 0.5 * h, &k2));
        let k4 = rates(p, &sb, &axpy(&x, h, &k3));
        x.p += h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
        x.r += h / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r);
        for i in 0..3 {
            for j in 0..3 {
                x.eps_vp[i][j] +=
                    h / 6.0 * (k1.eps_vp[i][j] + 2.0 * k2.eps_vp[i][j] + 2.0 * k3.eps_vp[i][j] + k4.eps_vp[i][j]);
                x.chi[i][j] += h / 6.0 * (k1.chi[i][j] + 2.0 * k2.chi[i][j] + 2.0 * k3.chi[i][j] + k4.chi[i][j]);
            }
        }
    }
    x
}

pub fn frobenius(a: &Mat) -> f64 {
    contract(a, a).sqrt()
}

pub fn diff(a: &Mat, b: &Mat) -> Mat {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}
