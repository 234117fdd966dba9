#![allow(dead_code)]

use csdesign::model::SystemModel;
use csdesign::rng::SimRng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// All increasing `k`-subsets of `0..n`, generated recursively.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random SPD matrix with eigenvalues in roughly `[0.2, 2]`.
pub fn random_spd(k: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let b = gaussian(k, k, rng);
    b.transpose() * b / k as f64 + DMatrix::identity(k, k) * 0.2
}

/// Direct oracle-MMSE bound: per support, `Tr{(R⁻¹ + g²(AH)_Sᵀ R_n⁻¹ (AH)_S)⁻¹}`
/// with `R_n = g²σ_v²AAᵀ + σ_w²I`, using generic LU inverses.
pub fn naive_bound(model: &SystemModel, a: &DMatrix<f64>) -> f64 {
    let g = model.g();
    let m = a.nrows();
    let rn = a * a.transpose() * (g * g * model.sigma_v().powi(2)) + DMatrix::identity(m, m) * model.sigma_w().powi(2);
    let rn_inv = rn.try_inverse().expect("R_n invertible");
    let r_inv = model.r().clone().try_inverse().unwrap();
    let ah = a * model.h();
    let supports = subsets(model.n(), model.k());
    let mut total = 0.0;
    for s in &supports {
        let cols = ah.select_columns(s);
        let m_s = &r_inv + cols.transpose() * &rn_inv * &cols * (g * g);
        total += m_s.try_inverse().unwrap().trace();
    }
    total / supports.len() as f64
}

/// `R_x` by explicit enumeration of `Σ_S E_S R E_Sᵀ / C(N,K)`.
pub fn naive_rx(r: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = r.nrows();
    let supports = subsets(n, k);
    let mut acc = DMatrix::zeros(n, n);
    for s in &supports {
        for (a, &i) in s.iter().enumerate() {
            for (b, &j) in s.iter().enumerate() {
                acc[(i, j)] += r[(a, b)];
            }
        }
    }
    acc / supports.len() as f64
}

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
