//! Symmetric second-order tensors in six-component storage.
//!
//! Components are held in the order `[xx, yy, zz, yz, xz, xy]`. The
//! off-diagonal entries are stored once (tensorial, not engineering shear), and
//! [`SymTensor::ddot`] doubles their contribution so that `A.ddot(&B)`
//! reproduces `tr(A·B)` exactly.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymTensor(pub [f64; 6]);

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor([0.0; 6]);
    pub const IDENTITY: SymTensor = SymTensor([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

    pub fn diag(x: f64, y: f64, z: f64) -> Self {
        SymTensor([x, y, z, 0.0, 0.0, 0.0])
    }

    /// Builds a tensor from its upper triangle.
    pub fn from_components(xx: f64, yy: f64, zz: f64, yz: f64, xz: f64, xy: f64) -> Self {
        SymTensor([xx, yy, zz, yz, xz, xy])
    }

    /// Builds a tensor from a full 3×3 matrix, averaging the off-diagonal pairs.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        SymTensor([
            m[0][0],
            m[1][1],
            m[2][2],
            0.5 * (m[1][2] + m[2][1]),
            0.5 * (m[0][2] + m[2][0]),
            0.5 * (m[0][1] + m[1][0]),
        ])
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let [xx, yy, zz, yz, xz, xy] = self.0;
        [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Deviatoric part `A - tr(A)/3 I`.
    pub fn dev(&self) -> Self {
        let m = self.trace() / 3.0;
        let mut out = *self;
        out.0[0] -= m;
        out.0[1] -= m;
        out.0[2] -= m;
        out
    }

    /// Volumetric part `tr(A)/3 I`.
    pub fn vol(&self) -> Self {
        let m = self.trace() / 3.0;
        SymTensor::diag(m, m, m)
    }

    /// Double contraction `A : B = tr(A·B)` for symmetric arguments.
    pub fn ddot(&self, other: &SymTensor) -> f64 {
        let a = &self.0;
        let b = &other.0;
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
    }

    /// Frobenius norm `sqrt(A : A)`.
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    /// Von Mises norm of the deviator, `sqrt(3/2 A_D : A_D)`.
    pub fn von_mises(&self) -> f64 {
        let d = self.dev();
        (1.5 * d.ddot(&d)).sqrt()
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().for_each(|c| *c *= factor);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(mut self, rhs: SymTensor) -> SymTensor {
        self += rhs;
        self
    }
}

impl AddAssign for SymTensor {
    fn add_assign(&mut self, rhs: SymTensor) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(mut self, rhs: SymTensor) -> SymTensor {
        self -= rhs;
        self
    }
}

impl SubAssign for SymTensor {
    fn sub_assign(&mut self, rhs: SymTensor) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
    }
}

impl Neg for SymTensor {
    type Output = SymTensor;
    fn neg(self) -> SymTensor {
        self.scale(-1.0)
    }
}

impl Mul<SymTensor> for f64 {
    type Output = SymTensor;
    fn mul(self, rhs: SymTensor) -> SymTensor {
        rhs.scale(self)
    }
}

impl Mul<f64> for SymTensor {
    type Output = SymTensor;
    fn mul(self, rhs: f64) -> SymTensor {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix_trace_product(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for k in 0..3 {
                s += a[i][k] * b[k][i];
            }
        }
        s
    }

    fn arb_tensor() -> impl Strategy<Value = SymTensor> {
        prop::array::uniform6(-10.0..10.0f64).prop_map(SymTensor)
    }

    proptest! {
        #[test]
        fn ddot_matches_full_matrix_product(a in arb_tensor(), b in arb_tensor()) {
            let full = matrix_trace_product(a.to_matrix(), b.to_matrix());
            prop_assert!((a.ddot(&b) - full).abs() <= 1e-12 * (1.0 + full.abs()));
        }

        #[test]
        fn dev_plus_vol_recovers_tensor(a in arb_tensor()) {
            let back = a.dev() + a.vol();
            for (x, y) in back.0.iter().zip(a.0) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(a.dev().trace().abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_round_trip() {
        let t = SymTensor::from_components(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(SymTensor::from_matrix(t.to_matrix()), t);
    }

    #[test]
    fn von_mises_of_uniaxial_is_axial_value() {
        assert!((SymTensor::diag(-3.5, 0.0, 0.0).von_mises() - 3.5).abs() < 1e-14);
    }
}
