//! Small fixed-size linear algebra: 2x2 and 3x3 matrices with closed-form
//! adjugate inverses and their directional derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinalgError {
    #[error("matrix is singular")]
    Singular,
}

/// 3x3 matrix, row-major.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<S = f64>(pub [[S; 3]; 3]);

/// 2x2 matrix, row-major.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Mat2<S = f64>(pub [[S; 2]; 2]);

pub fn dot3<S: Real>(a: [S; 3], b: [S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn dot2<S: Real>(a: [S; 2], b: [S; 2]) -> S {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross3<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3<S: Real>(a: [S; 3]) -> S {
    dot3(a, a).sqrt()
}

pub fn norm2<S: Real>(a: [S; 2]) -> S {
    dot2(a, a).sqrt()
}

pub fn scale3<S: Real>(a: [S; 3], k: S) -> [S; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub fn add3<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add2<S: Real>(a: [S; 2], b: [S; 2]) -> [S; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub2<S: Real>(a: [S; 2], b: [S; 2]) -> [S; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale2<S: Real>(a: [S; 2], k: S) -> [S; 2] {
    [a[0] * k, a[1] * k]
}

impl<S: Real> Mat3<S> {
    pub fn identity() -> Self {
        let o = S::one();
        let z = S::zero();
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn zeros() -> Self {
        Mat3([[S::zero(); 3]; 3])
    }

    pub fn from_rows(r0: [S; 3], r1: [S; 3], r2: [S; 3]) -> Self {
        Mat3([r0, r1, r2])
    }

    pub fn diag(d: [S; 3]) -> Self {
        let z = S::zero();
        Mat3([[d[0], z, z], [z, d[1], z], [z, z, d[2]]])
    }

    pub fn det(&self) -> S {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: [S; 3]) -> [S; 3] {
        [
            dot3(self.0[0], v),
            dot3(self.0[1], v),
            dot3(self.0[2], v),
        ]
    }

    pub fn mul_mat(&self, o: &Mat3<S>) -> Mat3<S> {
        let mut r = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        r
    }

    pub fn add(&self, o: &Mat3<S>) -> Mat3<S> {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] = r.0[i][j] + o.0[i][j];
            }
        }
        r
    }

    pub fn scale(&self, k: S) -> Mat3<S> {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] = r.0[i][j] * k;
            }
        }
        r
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for row in &self.0 {
            for e in row {
                m = m.max(e.primal().abs());
            }
        }
        m
    }

    /// Adjugate-over-determinant inverse.
    pub fn inverse(&self) -> Result<Mat3<S>, LinalgError> {
        let det = self.det();
        if det.primal() == 0.0 {
            return Err(LinalgError::Singular);
        }
        Ok(self.inverse_with_det(det))
    }

    fn inverse_with_det(&self, det: S) -> Mat3<S> {
        let m = &self.0;
        let inv_det = det.recip();
        let mut r = Mat3::zeros();
        r.0[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        r.0[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        r.0[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        r.0[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        r.0[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        r.0[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        r.0[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        r.0[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        r.0[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        r
    }
}

impl<S: Real> Mat2<S> {
    pub fn identity() -> Self {
        let o = S::one();
        let z = S::zero();
        Mat2([[o, z], [z, o]])
    }

    pub fn zeros() -> Self {
        Mat2([[S::zero(); 2]; 2])
    }

    pub fn det(&self) -> S {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn mul_vec(&self, v: [S; 2]) -> [S; 2] {
        [dot2(self.0[0], v), dot2(self.0[1], v)]
    }

    pub fn inverse(&self) -> Result<Mat2<S>, LinalgError> {
        let det = self.det();
        if det.primal() == 0.0 {
            return Err(LinalgError::Singular);
        }
        let inv_det = det.recip();
        Ok(Mat2([
            [self.0[1][1] * inv_det, -self.0[0][1] * inv_det],
            [-self.0[1][0] * inv_det, self.0[0][0] * inv_det],
        ]))
    }
}

/// Closed-form 3x3 inverse.
pub fn inv3<S: Real>(h: &Mat3<S>) -> Result<Mat3<S>, LinalgError> {
    h.inverse()
}

/// Directional derivative of [`inv3`] along `dh`: `-H^-1 dH H^-1`.
pub fn dinv3<S: Real>(h: &Mat3<S>, dh: &Mat3<S>) -> Result<Mat3<S>, LinalgError> {
    let hi = h.inverse()?;
    Ok(hi.mul_mat(dh).mul_mat(&hi).scale(-S::one()))
}

/// In-place Gaussian elimination with partial pivoting. Used as the
/// independent numeric route against the closed-form inverses.
pub fn gauss_inverse<const N: usize>(a: &[[f64; N]; N]) -> Result<[[f64; N]; N], LinalgError> {
    let mut aug = [[0.0f64; N]; N];
    let mut m = *a;
    for (i, row) in aug.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..N {
        let mut pivot = col;
        for r in col + 1..N {
            if m[r][col].abs() > m[pivot][col].abs() {
                pivot = r;
            }
        }
        if m[pivot][col] == 0.0 {
            return Err(LinalgError::Singular);
        }
        m.swap(col, pivot);
        aug.swap(col, pivot);
        let inv_p = 1.0 / m[col][col];
        for j in 0..N {
            m[col][j] *= inv_p;
            aug[col][j] *= inv_p;
        }
        for r in 0..N {
            if r != col && m[r][col] != 0.0 {
                let f = m[r][col];
                for j in 0..N {
                    m[r][j] -= f * m[col][j];
                    aug[r][j] -= f * aug[col][j];
                }
            }
        }
    }
    Ok(aug)
}

/// Numeric check of the block-inverse identity behind the velocity operator:
/// inverts `[[J, dwdt], [0, 1]]` with Gaussian elimination and returns the
/// max-abs difference between its top-right block and `-J^-1 dwdt`.
pub fn blockinv_check(j: &Mat3<f64>, dwdt: [f64; 3]) -> Result<f64, LinalgError> {
    let mut block = [[0.0f64; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            block[r][c] = j.0[r][c];
        }
        block[r][3] = dwdt[r];
    }
    block[3][3] = 1.0;
    let block_inv = gauss_inverse(&block)?;
    let expected = scale3(j.inverse()?.mul_vec(dwdt), -1.0);
    let mut resid = 0.0f64;
    for r in 0..3 {
        resid = resid.max((block_inv[r][3] - expected[r]).abs());
    }
    Ok(resid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_mat3(rng: &mut impl Rng) -> Mat3<f64> {
        let mut m = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = rng.gen_range(-1.0..1.0);
            }
        }
        // Diagonal boost keeps the sample well away from singularity.
        for i in 0..3 {
            m.0[i][i] += 3.0;
        }
        m
    }

    #[test]
    fn inv3_identity() {
        let i = Mat3::<f64>::identity();
        let inv = inv3(&i).unwrap();
        assert_eq!(inv, Mat3::identity());
    }

    #[test]
    fn inv3_diagonal() {
        let m = Mat3::diag([2.0, 4.0, 5.0]);
        let inv = inv3(&m).unwrap();
        let expect = Mat3::diag([0.5, 0.25, 0.2]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv.0[i][j] - expect.0[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inv3_rejects_singular() {
        let m = Mat3::from_rows([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]);
        assert_eq!(inv3(&m).unwrap_err(), LinalgError::Singular);
    }

    #[test]
    fn inv3_matches_gaussian_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = random_mat3(&mut rng);
            let closed = inv3(&m).unwrap();
            let elim = gauss_inverse(&m.0).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((closed.0[i][j] - elim[i][j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn dinv3_identity_base_point() {
        let mut dh = Mat3::zeros();
        dh.0[0][0] = 1.0;
        let d = dinv3(&Mat3::identity(), &dh).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == 0 && j == 0 { -1.0 } else { 0.0 };
                assert!((d.0[i][j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dinv3_scalar_case() {
        let h = Mat3::diag([2.0, 2.0, 2.0]);
        let d = dinv3(&h, &Mat3::identity()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { -0.25 } else { 0.0 };
                assert!((d.0[i][j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dinv3_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let m = random_mat3(&mut rng);
            let mut dm = Mat3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    dm.0[i][j] = rng.gen_range(-1.0..1.0);
                }
            }
            let analytic = dinv3(&m, &dm).unwrap();
            let plus = inv3(&m.add(&dm.scale(h))).unwrap();
            let minus = inv3(&m.add(&dm.scale(-h))).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (plus.0[i][j] - minus.0[i][j]) / (2.0 * h);
                    assert!((analytic.0[i][j] - fd).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dinv3_product_rule_identity() {
        // d(H H^-1) = 0  =>  H dinv3(H, dH) + dH inv3(H) = 0
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let m = random_mat3(&mut rng);
            let mut dm = Mat3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    dm.0[i][j] = rng.gen_range(-1.0..1.0);
                }
            }
            let lhs = m.mul_mat(&dinv3(&m, &dm).unwrap()).add(&dm.mul_mat(&inv3(&m).unwrap()));
            assert!(lhs.max_abs() < 1e-10);
        }
    }

    #[test]
    fn blockinv_identity_case() {
        let r = blockinv_check(&Mat3::identity(), [1.0, 0.0, 0.0]).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn blockinv_rotation_case() {
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rz = Mat3::from_rows([c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]);
        let r = blockinv_check(&rz, [0.0, 1.0, 0.0]).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn blockinv_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let m = random_mat3(&mut rng);
            let dwdt = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            assert!(blockinv_check(&m, dwdt).unwrap() <= 1e-9);
        }
    }
}
