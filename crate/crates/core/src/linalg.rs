//! Small dense linear algebra: 4×4 complex matrices, cyclic Jacobi
//! eigen-decomposition, and real solves for the least-squares engines.
//!
//! Everything here operates on tiny fixed-size problems, so the routines favor
//! clarity over blocking or cache tricks.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64 as C64;

pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// 4×4 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4(pub [[C64; 4]; 4]);

impl Mat4 {
    pub fn zeros() -> Self {
        Mat4([[C64::new(0.0, 0.0); 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            m.0[i][i] = C64::new(1.0, 0.0);
        }
        m
    }

    /// |v⟩⟨w|
    pub fn outer(v: &[C64; 4], w: &[C64; 4]) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = v[i] * w[j].conj();
            }
        }
        m
    }

    pub fn from_diagonal(d: &[f64; 4]) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            m.0[i][i] = C64::new(d[i], 0.0);
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|z| *z = z.conj());
        m
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|z| *z *= s);
        m
    }

    pub fn mul_vec(&self, v: &[C64; 4]) -> [C64; 4] {
        let mut out = [C64::new(0.0, 0.0); 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|j| self.0[i][j] * v[j]).sum();
        }
        out
    }

    /// ⟨v|M|v⟩
    pub fn expectation(&self, v: &[C64; 4]) -> C64 {
        let mv = self.mul_vec(v);
        (0..4).map(|i| v[i].conj() * mv[i]).sum()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((self.0[i][j] - self.0[j][i].conj()).norm());
            }
        }
        worst
    }

    /// Returns (A + A†)/2.
    pub fn hermitian_part(&self) -> Self {
        let adj = self.adjoint();
        let mut m = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = (self.0[i][j] + adj.0[i][j]) * 0.5;
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Mat4 {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat4 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.0[i][j]
    }
}

impl Mul for Mat4 {
    type Output = Mat4;
    fn mul(self, rhs: Mat4) -> Mat4 {
        let mut m = Mat4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = (0..4).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        m
    }
}

impl Add for Mat4 {
    type Output = Mat4;
    fn add(self, rhs: Mat4) -> Mat4 {
        let mut m = self;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] += rhs.0[i][j];
            }
        }
        m
    }
}

impl Sub for Mat4 {
    type Output = Mat4;
    fn sub(self, rhs: Mat4) -> Mat4 {
        let mut m = self;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] -= rhs.0[i][j];
            }
        }
        m
    }
}

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as the
/// columns of the returned matrix (`vecs[row][col]`).
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(1.0);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off < JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n)
        .map(|r| order.iter().map(|&c| v[r][c]).collect())
        .collect();
    (vals, vecs)
}

/// Eigen-decomposition of a Hermitian 4×4 matrix through its real symmetric
/// 8×8 embedding `[[A, -B], [B, A]]` (with `H = A + iB`).
///
/// Every eigenvalue of the embedding appears twice; the complex eigenvectors
/// are recovered by Gram-Schmidt over the embedded pairs. Eigenvalues are
/// returned ascending, eigenvectors as columns.
pub fn hermitian_eigen(h: &Mat4) -> ([f64; 4], Mat4) {
    let mut emb = vec![vec![0.0; 8]; 8];
    for i in 0..4 {
        for j in 0..4 {
            let z = h.0[i][j];
            emb[i][j] = z.re;
            emb[i + 4][j + 4] = z.re;
            emb[i][j + 4] = -z.im;
            emb[i + 4][j] = z.im;
        }
    }
    let (vals, vecs) = symmetric_eigen(&emb);

    let mut out_vals = [0.0; 4];
    let mut out_vecs: Vec<([C64; 4], f64)> = Vec::with_capacity(4);
    for (col, &val) in vals.iter().enumerate() {
        if out_vecs.len() == 4 {
            break;
        }
        let mut x = [C64::new(0.0, 0.0); 4];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = C64::new(vecs[i][col], vecs[i + 4][col]);
        }
        for (u, _) in &out_vecs {
            let proj: C64 = (0..4).map(|i| u[i].conj() * x[i]).sum();
            for i in 0..4 {
                x[i] -= proj * u[i];
            }
        }
        let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.5 {
            x.iter_mut().for_each(|z| *z /= norm);
            out_vecs.push((x, val));
        }
    }
    // Fallback that should never trigger; keeps the output well-formed.
    while out_vecs.len() < 4 {
        out_vecs.push(([C64::new(0.0, 0.0); 4], 0.0));
    }

    let mut m = Mat4::zeros();
    for (c, (v, val)) in out_vecs.iter().enumerate() {
        out_vals[c] = *val;
        for r in 0..4 {
            m.0[r][c] = v[r];
        }
    }
    (out_vals, m)
}

/// Builds `V diag(f(λ)) V†` from a Hermitian eigen-decomposition.
pub fn hermitian_function(h: &Mat4, f: impl Fn(f64) -> f64) -> Mat4 {
    let (vals, vecs) = hermitian_eigen(h);
    let mut out = Mat4::zeros();
    for (k, &lam) in vals.iter().enumerate() {
        let fl = f(lam);
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] += vecs.0[i][k] * vecs.0[j][k].conj() * fl;
            }
        }
    }
    out
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` if a pivot falls below `1e-300` in magnitude.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    Some(x)
}

/// Inverse of a symmetric positive-definite matrix through its eigen
/// decomposition; eigenvalues below `rel_tol·max` are treated as infinite
/// variance directions and produce `f64::INFINITY` on the diagonal.
pub fn symmetric_pseudo_inverse(a: &[Vec<f64>], rel_tol: f64) -> Vec<Vec<f64>> {
    let n = a.len();
    let (vals, vecs) = symmetric_eigen(a);
    let max = vals.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut inv = vec![vec![0.0; n]; n];
    let mut singular = vec![false; n];
    for (k, &lam) in vals.iter().enumerate() {
        if lam.abs() <= rel_tol * max || lam <= 0.0 {
            for (i, s) in singular.iter_mut().enumerate() {
                if vecs[i][k].abs() > 1e-6 {
                    *s = true;
                }
            }
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                inv[i][j] += vecs[i][k] * vecs[j][k] / lam;
            }
        }
    }
    for (i, s) in singular.iter().enumerate() {
        if *s {
            inv[i][i] = f64::INFINITY;
        }
    }
    inv
}

/// Numerical rank of a symmetric positive semidefinite matrix.
pub fn symmetric_rank(a: &[Vec<f64>], rel_tol: f64) -> usize {
    let (vals, _) = symmetric_eigen(a);
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    vals.iter().filter(|&&v| v > rel_tol * max).count()
}
