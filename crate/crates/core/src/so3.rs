//! Rotation math on SO(3): hat/vee maps, the Rodrigues exponential, the
//! attitude error function and tracking error vectors, and polar
//! re-orthonormalization.
//!
//! All rotations are stored as plain 3×3 matrices. Quaternions and Euler
//! angles are deliberately absent.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `|R^T R - I|_F` accepted by [`RotationMatrix::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Tolerance on `|m + m^T|_F` accepted by [`vee`].
pub const SKEW_TOLERANCE: f64 = 1e-8;
/// Below this angle the exponential switches to its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-4;

pub fn e1() -> Vec3 {
    Vec3::new(1.0, 0.0, 0.0)
}

pub fn e2() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

pub fn e3() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// An element of SO(3).
///
/// The checked constructor enforces orthogonality and unit determinant.
/// Intermediate Runge-Kutta stage states are not rotations; they are carried
/// with [`RotationMatrix::from_matrix_unchecked`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self> {
        let orthogonality = orthogonality_error(&m);
        let det = m.determinant();
        if !orthogonality.is_finite()
            || orthogonality > ROTATION_TOLERANCE
            || (det - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(Error::NotARotation { orthogonality, det });
        }
        Ok(RotationMatrix(m))
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        RotationMatrix(m)
    }

    /// Builds `[b1 | b2 | b3]` from column vectors.
    pub fn from_columns(b1: &Vec3, b2: &Vec3, b3: &Vec3) -> Result<Self> {
        Self::new(Mat3::from_columns(&[*b1, *b2, *b3]))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Column `i` (body axis `b_{i+1}` expressed in the inertial frame).
    pub fn axis(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.0)
    }
}

impl From<RotationMatrix> for [[f64; 3]; 3] {
    fn from(r: RotationMatrix) -> Self {
        let m = r.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl TryFrom<[[f64; 3]; 3]> for RotationMatrix {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        RotationMatrix::new(mat3_from_rows(&rows))
    }
}

pub fn mat3_from_rows(rows: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    )
}

/// `|m^T m - I|_F`.
pub fn orthogonality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Skew-symmetric matrix with `hat(v) * w == v × w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices that are not skew-symmetric.
pub fn vee(m: &Mat3) -> Result<Vec3> {
    let asym = (m + m.transpose()).norm();
    if !(asym <= SKEW_TOLERANCE) {
        return Err(Error::NotSkewSymmetric(asym));
    }
    Ok(Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// Rodrigues exponential: rotation by `|v|` about `v/|v|`.
pub fn exp_so3(v: &Vec3) -> RotationMatrix {
    let theta = v.norm();
    let k = hat(v);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    RotationMatrix(Mat3::identity() + k * a + k * k * b)
}

/// Attitude error function `½ tr(I - R_dᵀ R)`.
pub fn psi(r: &RotationMatrix, rd: &RotationMatrix) -> f64 {
    // tr(R_dᵀ R) = Σ_ij (R_d)_ij R_ij
    0.5 * (3.0 - rd.0.component_mul(&r.0).sum())
}

/// Attitude tracking error `e_R = ½ (R_dᵀR - RᵀR_d)^∨`.
pub fn attitude_error(r: &RotationMatrix, rd: &RotationMatrix) -> Vec3 {
    let x = rd.0.transpose() * r.0;
    let skew = x - x.transpose();
    // x - xᵀ is exactly skew in floating point.
    0.5 * Vec3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)])
}

/// Angular velocity tracking error `e_Ω = Ω - RᵀR_d Ω_d`.
pub fn angular_velocity_error(
    omega: &Vec3,
    r: &RotationMatrix,
    rd: &RotationMatrix,
    omega_d: &Vec3,
) -> Vec3 {
    omega - r.0.transpose() * (rd.0 * omega_d)
}

/// Matrix `C(R_dᵀR) = ½(tr(RᵀR_d) I - RᵀR_d)` with `ė_R = C e_Ω`.
pub fn error_rate_matrix(r: &RotationMatrix, rd: &RotationMatrix) -> Mat3 {
    let x = r.0.transpose() * rd.0;
    0.5 * (Mat3::identity() * x.trace() - x)
}

/// Normalized projection of `b1d` onto the plane orthogonal to `b3c`.
pub fn normalized_projection(b1d: &Vec3, b3c: &Vec3) -> Result<Vec3> {
    if (b3c.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "thrust axis must be a unit vector, |b3c| = {}",
            b3c.norm()
        )));
    }
    let c = b3c.cross(b1d);
    let n = c.norm();
    if !(n > 1e-6) {
        return Err(Error::DegenerateProjection(n));
    }
    Ok(-b3c.cross(&c) / n)
}

/// Closest rotation to `m` in Frobenius norm (the orthogonal polar factor).
///
/// Computed by the Newton iteration `X ← ½(X + X⁻ᵀ)`, which converges
/// quadratically to the polar factor of any nonsingular matrix.
pub fn orthonormalize(m: &Mat3) -> Result<RotationMatrix> {
    let det = m.determinant();
    if !(det > 1e-12) {
        return Err(Error::SingularInput(det));
    }
    let mut x = *m;
    for _ in 0..100 {
        let inv_t = match x.try_inverse() {
            Some(inv) => inv.transpose(),
            None => return Err(Error::SingularInput(x.determinant())),
        };
        let next = 0.5 * (x + inv_t);
        let delta = (next - x).norm();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(RotationMatrix(x))
}
