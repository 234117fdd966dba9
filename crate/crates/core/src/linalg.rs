//! Dense linear-algebra helpers shared by the bound, solver and estimators.
//!
//! The per-support hot loops work on tiny `K×K` systems; [`SpdWorkspace`]
//! factors and inverts those in reusable row-major buffers so the loops do
//! not allocate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Reusable Cholesky workspace for small symmetric positive definite systems.
#[derive(Debug, Clone)]
pub struct SpdWorkspace {
    n: usize,
    chol: Vec<f64>,
    inv: Vec<f64>,
    tmp: Vec<f64>,
}

impl SpdWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            chol: vec![0.0; n * n],
            inv: vec![0.0; n * n],
            tmp: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major access to the factored matrix input buffer. Fill this with
    /// the matrix to factor (only the lower triangle is read), then call
    /// [`SpdWorkspace::factor`].
    pub fn input_mut(&mut self) -> &mut [f64] {
        &mut self.chol
    }

    /// In-place lower Cholesky of the input buffer. Returns `false` when a
    /// pivot is not strictly positive.
    pub fn factor(&mut self) -> bool {
        let n = self.n;
        let l = &mut self.chol;
        for j in 0..n {
            let mut d = l[j * n + j];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / djj;
            }
            for i in 0..j {
                l[i * n + j] = 0.0;
            }
        }
        true
    }

    /// Log-determinant of the factored matrix.
    pub fn log_det(&self) -> f64 {
        let n = self.n;
        (0..n).map(|i| self.chol[i * n + i].ln()).sum::<f64>() * 2.0
    }

    /// Trace of the inverse, `‖L⁻¹‖_F²`.
    pub fn trace_inverse(&mut self) -> f64 {
        self.invert_lower();
        self.tmp.iter().map(|v| v * v).sum()
    }

    /// Solves `M x = b` in place using the current factorization.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let l = &self.chol;
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= l[i * n + p] * b[p];
            }
            b[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in (i + 1)..n {
                s -= l[p * n + i] * b[p];
            }
            b[i] = s / l[i * n + i];
        }
    }

    /// Full inverse `M⁻¹ = L⁻ᵀ L⁻¹`, row-major, symmetric.
    pub fn inverse(&mut self) -> &[f64] {
        self.invert_lower();
        let n = self.n;
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for p in i..n {
                    s += self.tmp[p * n + i] * self.tmp[p * n + j];
                }
                self.inv[i * n + j] = s;
                self.inv[j * n + i] = s;
            }
        }
        &self.inv
    }

    // tmp <- L⁻¹ (lower triangular)
    fn invert_lower(&mut self) {
        let n = self.n;
        let l = &self.chol;
        let t = &mut self.tmp;
        t.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            t[j * n + j] = 1.0 / l[j * n + j];
            for i in (j + 1)..n {
                let mut s = 0.0;
                for p in j..i {
                    s -= l[i * n + p] * t[p * n + j];
                }
                t[i * n + j] = s / l[i * n + i];
            }
        }
    }
}

/// Compensated (Neumaier) summation with a fixed accumulation order.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Binomial coefficient as `f64` (exact for the sizes used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Returns `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    sym_eigen_sorted(m, true)
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen_asc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    sym_eigen_sorted(m, false)
}

fn sym_eigen_sorted(m: &DMatrix<f64>, descending: bool) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's column order for ties
    order.sort_by(|&i, &j| {
        let (a, b) = (eig.eigenvalues[i], eig.eigenvalues[j]);
        if descending {
            b.total_cmp(&a)
        } else {
            a.total_cmp(&b)
        }
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Rebuilds `U diag(values) Uᵀ`.
pub fn from_eigen(values: &[f64], vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * values[j]
    });
    symmetrize(&(scaled * vectors.transpose()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `S^{1/2}` and `S^{-1/2}` of a symmetric positive definite matrix.
pub fn spd_sqrt_pair(m: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (vals, vecs) = sym_eigen_desc(m);
    let floor = vals.first().copied().unwrap_or(0.0).abs() * 1e-14;
    if vals.iter().any(|&v| !(v > floor)) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let root: Vec<f64> = vals.iter().map(|v| v.sqrt()).collect();
    let inv_root: Vec<f64> = root.iter().map(|v| 1.0 / v).collect();
    Ok((from_eigen(&root, &vecs), from_eigen(&inv_root, &vecs)))
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues below
/// `rel_tol·‖M‖₂` are treated as zero. Returns the pseudo-inverse and rank.
pub fn psd_pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (vals, vecs) = sym_eigen_desc(m);
    let cutoff = rel_tol * vals.first().copied().unwrap_or(0.0).abs();
    let mut rank = 0;
    let inv: Vec<f64> = vals
        .iter()
        .map(|&v| {
            if v > cutoff && v > 0.0 {
                rank += 1;
                1.0 / v
            } else {
                0.0
            }
        })
        .collect();
    (from_eigen(&inv, &vecs), rank)
}

/// Euclidean projection of `values` onto `{λ ≥ 0, Σλ ≤ cap}`.
pub fn project_capped_simplex(values: &[f64], cap: f64) -> Vec<f64> {
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    // projection onto {λ ≥ 0, Σλ = cap}
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - cap) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    values.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Frobenius inner product `⟨A, B⟩ = Tr(AᵀB)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Row-major copy of the principal submatrix `M[idx, idx]` into `out`.
pub fn gather_principal(m: &DMatrix<f64>, idx: &[usize], out: &mut [f64]) {
    let k = idx.len();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[a * k + b] = m[(i, j)];
        }
    }
}

pub fn gather_vec(v: &DVector<f64>, idx: &[usize], out: &mut [f64]) {
    for (a, &i) in idx.iter().enumerate() {
        out[a] = v[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cholesky_matches_nalgebra() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let mut ws = SpdWorkspace::new(3);
        ws.input_mut().copy_from_slice(m.as_slice());
        assert!(ws.factor());
        let inv = m.clone().try_inverse().unwrap();
        let got = ws.inverse().to_vec();
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[i * 3 + j] - inv[(i, j)]).abs() < 1e-14);
            }
        }
        assert!((ws.trace_inverse() - inv.trace()).abs() < 1e-14);
        assert!((ws.log_det() - m.determinant().ln()).abs() < 1e-13);
        let mut b = [1.0, -2.0, 0.5];
        ws.solve_in_place(&mut b);
        let want = inv * DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        for i in 0..3 {
            assert!((b[i] - want[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut ws = SpdWorkspace::new(2);
        ws.input_mut().copy_from_slice(&[1.0, 2.0, 2.0, 1.0]);
        assert!(!ws.factor());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(36, 3), 7140.0);
        assert_eq!(binomial(100, 5), 75_287_520.0);
        assert_eq!(binomial(3, 4), 0.0);
    }

    #[test]
    fn capped_simplex_projection() {
        assert_eq!(project_capped_simplex(&[0.5, -1.0, 0.2], 1.0), vec![0.5, 0.0, 0.2]);
        let p = project_capped_simplex(&[3.0, 1.0, -2.0], 2.0);
        assert!((p[0] - 2.0).abs() < 1e-15 && p[1] == 0.0 && p[2] == 0.0);
        let p = project_capped_simplex(&[1.0, 1.0, 1.0], 1.5);
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        let u = DVector::from_row_slice(&[1.0, 2.0, 2.0]) / 3.0;
        let m = &u * u.transpose() * 4.0;
        let (p, rank) = psd_pseudo_inverse(&m, 1e-10);
        assert_eq!(rank, 1);
        let want = &u * u.transpose() * 0.25;
        assert!((p - want).norm() < 1e-14);
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let s: NeumaierSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.value(), 1.0);
    }
}
