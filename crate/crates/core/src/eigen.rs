//! Eigen-decomposition of 3x3 symmetric matrices.
//!
//! The fast path solves the characteristic cubic in closed form and takes the
//! smallest eigenvector as the best-conditioned cross product of the rows of
//! `A - λ_min I`. When the two smallest eigenvalues are too close for that to
//! be reliable, cyclic Jacobi rotations are used instead.

use nalgebra::{Matrix3, Vector3};

/// Relative eigenvalue gap below which the Jacobi fallback is taken.
pub const SEPARATION_THRESHOLD: f64 = 1e-9;
/// Smallest relative gap the trigonometric cubic solution resolves. Near a
/// repeated root it loses about half the significant digits (error on the
/// order of √ε ≈ 1.5e-8), so a computed gap below this may be spurious and
/// the Jacobi fallback is taken for any gap smaller than it as well.
pub const CLOSED_FORM_RESOLUTION: f64 = 1e-6;
/// Off-diagonal tolerance for the Jacobi fallback (on the scaled matrix).
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 50;

/// A symmetric 3x3 matrix stored as its six unique entries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self { xx, xy, xz, yy, yz, zz }
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, 0.0, 0.0, b, 0.0, c)
    }

    pub fn identity() -> Self {
        Self::diagonal(1.0, 1.0, 1.0)
    }

    /// Symmetric part of an arbitrary matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::new(
            m[(0, 0)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            m[(1, 1)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            m[(2, 2)],
        )
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, //
            self.xy, self.yy, self.yz, //
            self.xz, self.yz, self.zz,
        )
    }

    pub fn mul_vec(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.xx * v.x + self.xy * v.y + self.xz * v.z,
            self.xy * v.x + self.yy * v.y + self.yz * v.z,
            self.xz * v.x + self.yz * v.y + self.zz * v.z,
        )
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .all(|v| v.is_finite())
    }

    fn max_abs(&self) -> f64 {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn scaled(&self, s: f64) -> Self {
        Self::new(
            self.xx * s,
            self.xy * s,
            self.xz * s,
            self.yy * s,
            self.yz * s,
            self.zz * s,
        )
    }
}

/// Eigenvalues (ascending) and the unit eigenvector of the smallest one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    pub values: [f64; 3],
    pub smallest_vector: Vector3<f64>,
}

/// Eigenvalues of `m` in ascending order.
pub fn eigenvalues(m: &SymMat3) -> [f64; 3] {
    smallest_eigen(m).values
}

/// Unit eigenvector for the smallest eigenvalue. The sign is arbitrary.
pub fn smallest_eigenvector(m: &SymMat3) -> Vector3<f64> {
    smallest_eigen(m).smallest_vector
}

pub fn smallest_eigen(m: &SymMat3) -> SymEigen {
    let scale = m.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return SymEigen {
            values: [0.0; 3],
            smallest_vector: Vector3::z(),
        };
    }
    let a = m.scaled(1.0 / scale);
    let eig = closed_form(&a).unwrap_or_else(|| jacobi_smallest(&a));
    SymEigen {
        values: eig.values.map(|v| v * scale),
        smallest_vector: eig.smallest_vector,
    }
}

fn closed_form(a: &SymMat3) -> Option<SymEigen> {
    let values = cubic_eigenvalues(a);
    let min_gap = SEPARATION_THRESHOLD.max(CLOSED_FORM_RESOLUTION);
    if values[1] - values[0] < min_gap || values[2] - values[1] < min_gap {
        return None;
    }
    let lambda = values[0];
    let r0 = Vector3::new(a.xx - lambda, a.xy, a.xz);
    let r1 = Vector3::new(a.xy, a.yy - lambda, a.yz);
    let r2 = Vector3::new(a.xz, a.yz, a.zz - lambda);
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|u, v| u.norm_squared().total_cmp(&v.norm_squared()))?;
    let norm = best.norm();
    // Rows of a rank-2 matrix with unit-scale entries; a tiny cross product
    // means the rows are nearly parallel and the direction is unreliable.
    if norm < 1e-12 {
        return None;
    }
    Some(SymEigen {
        values,
        smallest_vector: best / norm,
    })
}

/// Trigonometric solution of the characteristic polynomial.
fn cubic_eigenvalues(a: &SymMat3) -> [f64; 3] {
    let p1 = a.xy * a.xy + a.xz * a.xz + a.yz * a.yz;
    if p1 == 0.0 {
        let mut d = [a.xx, a.yy, a.zz];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = a.trace() / 3.0;
    let (dx, dy, dz) = (a.xx - q, a.yy - q, a.zz - q);
    let p2 = dx * dx + dy * dy + dz * dz + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let inv = 1.0 / p;
    let b = SymMat3::new(dx * inv, a.xy * inv, a.xz * inv, dy * inv, a.yz * inv, dz * inv);
    let det =
        b.xx * (b.yy * b.zz - b.yz * b.yz) - b.xy * (b.xy * b.zz - b.yz * b.xz) + b.xz * (b.xy * b.yz - b.yy * b.xz);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let middle = 3.0 * q - largest - smallest;
    let mut values = [smallest, middle, largest];
    values.sort_by(f64::total_cmp);
    values
}

fn jacobi_smallest(a: &SymMat3) -> SymEigen {
    let (values, vectors) = jacobi_eigen(a, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let v: Vector3<f64> = vectors.column(idx[0]).into_owned();
    SymEigen {
        values: idx.map(|i| values[i]),
        smallest_vector: v.normalize(),
    }
}

/// Cyclic Jacobi diagonalization. Returns unsorted eigenvalues and the
/// matrix whose columns are the matching eigenvectors.
pub fn jacobi_eigen(m: &SymMat3, tolerance: f64, max_sweeps: usize) -> ([f64; 3], Matrix3<f64>) {
    let mut a = m.to_matrix();
    let mut v = Matrix3::identity();
    for _ in 0..max_sweeps {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off.sqrt() <= tolerance {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }
    ([a[(0, 0)], a[(1, 1)], a[(2, 2)]], v)
}
