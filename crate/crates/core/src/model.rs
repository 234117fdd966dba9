//! System model: sparse Gaussian source, support combinatorics, the
//! source-to-sensor channel `H` with sensor noise `v`, and the scalar-gain
//! communication channel with noise `w`.
//!
//! Support indices are zero-based and always stored sorted ascending.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::linalg::{binomial, spd_inverse};
use crate::rng::SimRng;

/// Largest `C(N,K)` for which the full support set is enumerated.
pub const FULL_ENUMERATION_LIMIT: f64 = 1e6;

/// Fixed problem data of the measurement chain `y = g·A·(H·x + v) + w`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    n: usize,
    k: usize,
    l: usize,
    m: usize,
    h: DMatrix<f64>,
    g: f64,
    sigma_v: f64,
    sigma_w: f64,
    power: f64,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_chol: DMatrix<f64>,
    r_x: DMatrix<f64>,
}

/// Builder for [`SystemModel`]. Defaults: `H = I_N`, `g = 1`, `σ_v = 0`,
/// `σ_w = 0.1`, `P = 1`, `R = I_K`.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    n: usize,
    k: usize,
    m: usize,
    h: Option<DMatrix<f64>>,
    g: f64,
    sigma_v: f64,
    sigma_w: f64,
    power: f64,
    r: Option<DMatrix<f64>>,
}

impl ModelBuilder {
    pub fn channel(mut self, h: DMatrix<f64>) -> Self {
        self.h = Some(h);
        self
    }

    pub fn gain(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn sigma_v(mut self, s: f64) -> Self {
        self.sigma_v = s;
        self
    }

    pub fn sigma_w(mut self, s: f64) -> Self {
        self.sigma_w = s;
        self
    }

    pub fn power(mut self, p: f64) -> Self {
        self.power = p;
        self
    }

    pub fn source_covariance(mut self, r: DMatrix<f64>) -> Self {
        self.r = Some(r);
        self
    }

    pub fn build(self) -> Result<SystemModel> {
        let ModelBuilder { n, k, m, h, g, sigma_v, sigma_w, power, r } = self;
        if n == 0 || k == 0 || k > n {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= K <= N, got N={n}, K={k}"
            )));
        }
        let h = h.unwrap_or_else(|| DMatrix::identity(n, n));
        if h.ncols() != n || h.nrows() == 0 {
            return Err(Error::dim("channel H", format!("L×{n}"), format!("{}×{}", h.nrows(), h.ncols())));
        }
        let l = h.nrows();
        if m == 0 || m > l {
            return Err(Error::InvalidParameter(format!("need 1 <= M <= L, got M={m}, L={l}")));
        }
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gain g must be positive, got {g}")));
        }
        for (name, s) in [("sigma_v", sigma_v), ("sigma_w", sigma_w)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {s}")));
            }
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::InvalidParameter(format!("power P must be positive, got {power}")));
        }
        let r = r.unwrap_or_else(|| DMatrix::identity(k, k));
        if r.nrows() != k || r.ncols() != k {
            return Err(Error::dim("source covariance R", format!("{k}×{k}"), format!("{}×{}", r.nrows(), r.ncols())));
        }
        let asym = (&r - r.transpose()).amax();
        if asym > 1e-12 * r.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!("R is not symmetric (max asymmetry {asym:e})")));
        }
        let r_chol = r
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("source covariance R"))?
            .l();
        let r_inv = spd_inverse(&r, "source covariance R")?;
        let r_x = exact_source_covariance(&r, n);
        Ok(SystemModel { n, k, l, m, h, g, sigma_v, sigma_w, power, r, r_inv, r_chol, r_x })
    }
}

impl SystemModel {
    pub fn builder(n: usize, k: usize, m: usize) -> ModelBuilder {
        ModelBuilder {
            n,
            k,
            m,
            h: None,
            g: 1.0,
            sigma_v: 0.0,
            sigma_w: 0.1,
            power: 1.0,
            r: None,
        }
    }

    fn to_builder(&self) -> ModelBuilder {
        ModelBuilder {
            n: self.n,
            k: self.k,
            m: self.m,
            h: Some(self.h.clone()),
            g: self.g,
            sigma_v: self.sigma_v,
            sigma_w: self.sigma_w,
            power: self.power,
            r: Some(self.r.clone()),
        }
    }

    pub fn with_measurements(&self, m: usize) -> Result<Self> {
        ModelBuilder { m, ..self.to_builder() }.build()
    }

    pub fn with_power(&self, p: f64) -> Result<Self> {
        self.to_builder().power(p).build()
    }

    pub fn with_gain(&self, g: f64) -> Result<Self> {
        self.to_builder().gain(g).build()
    }

    pub fn with_noise(&self, sigma_v: f64, sigma_w: f64) -> Result<Self> {
        self.to_builder().sigma_v(sigma_v).sigma_w(sigma_w).build()
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }
    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }
    pub fn power(&self) -> f64 {
        self.power
    }
    /// Covariance `R` of the on-support entries.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }
    /// Lower Cholesky factor of `R`.
    pub fn r_chol(&self) -> &DMatrix<f64> {
        &self.r_chol
    }
    /// Exact full-source covariance `R_x = E[xxᵀ]`.
    pub fn r_x(&self) -> &DMatrix<f64> {
        &self.r_x
    }

    /// Number of possible supports, `C(N,K)`.
    pub fn support_count(&self) -> f64 {
        binomial(self.n, self.k)
    }

    /// `g²/σ_w²` (infinite when `σ_w = 0`).
    pub fn csnr(&self) -> f64 {
        self.g * self.g / (self.sigma_w * self.sigma_w)
    }

    /// Power weighting `H R_x Hᵀ + σ_v² I_L` of the transmit-power constraint.
    pub fn power_weight(&self) -> DMatrix<f64> {
        let mut c = &self.h * &self.r_x * self.h.transpose();
        for i in 0..self.l {
            c[(i, i)] += self.sigma_v * self.sigma_v;
        }
        crate::linalg::symmetrize(&c)
    }

    pub fn is_white_identity_case(&self) -> bool {
        is_scaled_identity(&self.r) && is_identity(&self.h)
    }
}

pub(crate) fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - DMatrix::<f64>::identity(m.nrows(), m.ncols())).amax() < 1e-12
}

pub(crate) fn is_scaled_identity(m: &DMatrix<f64>) -> bool {
    m.is_square() && {
        let s = m[(0, 0)];
        (m - DMatrix::<f64>::identity(m.nrows(), m.ncols()) * s).amax() <= 1e-12 * s.abs().max(1.0)
    }
}

/// How a [`SupportEnsemble`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    Full,
    Sampled { count: usize, seed: u64 },
}

/// An ordered list of sorted `K`-subsets of `{0..N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportEnsemble {
    n: usize,
    k: usize,
    flat: Vec<usize>,
    kind: EnsembleKind,
}

impl SupportEnsemble {
    /// All `C(N,K)` supports in lexicographic order.
    pub fn full(n: usize, k: usize) -> Result<Self> {
        check_nk(n, k)?;
        let count = binomial(n, k);
        if count > FULL_ENUMERATION_LIMIT {
            return Err(Error::Intractable {
                count,
                limit: FULL_ENUMERATION_LIMIT,
                hint: "use a sampled support ensemble",
            });
        }
        let mut flat = Vec::with_capacity(count as usize * k);
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            flat.extend_from_slice(&comb);
            if !next_combination(&mut comb, n) {
                break;
            }
        }
        Ok(Self { n, k, flat, kind: EnsembleKind::Full })
    }

    /// `count` distinct supports drawn uniformly without replacement, stored
    /// in lexicographic order. With `count = C(N,K)` the result holds the same
    /// supports, in the same order, as [`SupportEnsemble::full`].
    pub fn sampled(n: usize, k: usize, count: usize, seed: u64) -> Result<Self> {
        check_nk(n, k)?;
        let total = binomial(n, k);
        if count == 0 || count as f64 > total {
            return Err(Error::InvalidParameter(format!(
                "sampled ensemble size must be in 1..=C({n},{k})={total}, got {count}"
            )));
        }
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag::ENSEMBLE, n as u64, k as u64]);
        let flat = if total <= FULL_ENUMERATION_LIMIT && 4 * count as u64 >= total as u64 {
            let full = Self::full(n, k)?;
            let mut picks = index::sample(&mut rng, total as usize, count).into_vec();
            picks.sort_unstable();
            picks.iter().flat_map(|&i| full.get(i).to_vec()).collect()
        } else {
            let mut set: BTreeSet<Vec<usize>> = BTreeSet::new();
            while set.len() < count {
                set.insert(draw_support(n, k, &mut rng));
            }
            set.into_iter().flatten().collect()
        };
        Ok(Self { n, k, flat, kind: EnsembleKind::Sampled { count, seed } })
    }

    /// Full enumeration when tractable, otherwise a sampled ensemble.
    pub fn for_model(model: &SystemModel, sampled: Option<(usize, u64)>) -> Result<Self> {
        match sampled {
            None => Self::full(model.n(), model.k()),
            Some((count, seed)) => Self::sampled(model.n(), model.k(), count, seed),
        }
    }

    /// Ensemble from explicit supports (each is sorted; duplicates rejected).
    pub fn from_supports(n: usize, k: usize, supports: &[Vec<usize>]) -> Result<Self> {
        check_nk(n, k)?;
        let mut flat = Vec::with_capacity(supports.len() * k);
        for s in supports {
            let s = validate_support(s, n, k)?;
            flat.extend_from_slice(&s);
        }
        if supports.is_empty() {
            return Err(Error::InvalidParameter("empty support ensemble".into()));
        }
        Ok(Self { n, k, flat, kind: EnsembleKind::Sampled { count: supports.len(), seed: 0 } })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }
    pub fn len(&self) -> usize {
        self.flat.len() / self.k
    }
    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
    pub fn get(&self, i: usize) -> &[usize] {
        &self.flat[i * self.k..(i + 1) * self.k]
    }
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        self.flat.chunks_exact(self.k)
    }
}

fn check_nk(n: usize, k: usize) -> Result<()> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 1 <= K <= N, got N={n}, K={k}")));
    }
    Ok(())
}

fn validate_support(s: &[usize], n: usize, k: usize) -> Result<Vec<usize>> {
    if s.len() != k {
        return Err(Error::dim("support", k, s.len()));
    }
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter(format!("support {s:?} has repeated indices")));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!("support index {bad} out of range 0..{n}")));
    }
    Ok(sorted)
}

fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in (i + 1)..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// A uniformly random sorted `K`-subset of `{0..N-1}`.
pub fn draw_support(n: usize, k: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut s = index::sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

/// Exponential correlation model `R[i][j] = ρ^|i−j|`.
pub fn exponential_correlation(k: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("correlation rho must be in [0,1), got {rho}")));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

/// Selection matrix `E_S ∈ R^{N×K}`: the columns of `I_N` indexed by `S`.
pub fn selection_matrix(support: &[usize], n: usize) -> Result<DMatrix<f64>> {
    let s = validate_support(support, n, support.len())?;
    let mut e = DMatrix::zeros(n, s.len());
    for (col, &i) in s.iter().enumerate() {
        e[(i, col)] = 1.0;
    }
    Ok(e)
}

/// `R_x = (1/|Ω|) Σ_S E_S R E_Sᵀ` averaged over the given ensemble. Exact for
/// the full ensemble; an approximation for a sampled one.
pub fn source_covariance(model: &SystemModel, ensemble: &SupportEnsemble) -> Result<DMatrix<f64>> {
    if ensemble.n() != model.n() || ensemble.k() != model.k() {
        return Err(Error::dim(
            "support ensemble",
            format!("N={}, K={}", model.n(), model.k()),
            format!("N={}, K={}", ensemble.n(), ensemble.k()),
        ));
    }
    let r = model.r();
    let mut acc = DMatrix::zeros(model.n(), model.n());
    for s in ensemble.iter() {
        for (a, &i) in s.iter().enumerate() {
            for (b, &j) in s.iter().enumerate() {
                acc[(i, j)] += r[(a, b)];
            }
        }
    }
    Ok(acc / ensemble.len() as f64)
}

/// Closed-form `R_x` without enumeration: entry `(i, j)` collects `R[a][b]`
/// over supports placing index `i` at sorted position `a` and `j` at `b`,
/// whose count is a product of three binomials.
pub fn exact_source_covariance(r: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = r.nrows();
    let total = binomial(n, k);
    let mut rx = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut d = 0.0;
        for a in 0..k {
            d += binomial(i, a) * binomial(n - 1 - i, k - 1 - a) * r[(a, a)];
        }
        rx[(i, i)] = d / total;
        for j in (i + 1)..n {
            let mut s = 0.0;
            for a in 0..k {
                for b in (a + 1)..k {
                    let c = binomial(i, a)
                        * binomial(j - i - 1, b - a - 1)
                        * binomial(n - 1 - j, k - 1 - b);
                    s += c * r[(a, b)];
                }
            }
            rx[(i, j)] = s / total;
            rx[(j, i)] = s / total;
        }
    }
    rx
}

/// Sample estimate of `R_x` from `draws` source realizations.
pub fn empirical_source_covariance(model: &SystemModel, draws: usize, rng: &mut SimRng) -> Result<DMatrix<f64>> {
    let mut acc = DMatrix::zeros(model.n(), model.n());
    for _ in 0..draws {
        let s = draw_sparse_sample(model, rng)?;
        for (a, &i) in s.support.iter().enumerate() {
            for &j in &s.support[a..] {
                let v = s.x[i] * s.x[j];
                acc[(i, j)] += v;
                if i != j {
                    acc[(j, i)] += v;
                }
            }
        }
    }
    Ok(acc / draws.max(1) as f64)
}

/// One realization of the sparse source.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSample {
    pub x: DVector<f64>,
    pub support: Vec<usize>,
}

/// Uniform support, on-support entries `x_S ~ N(0, R)` via the Cholesky
/// factor of `R`.
pub fn draw_sparse_sample(model: &SystemModel, rng: &mut SimRng) -> Result<SparseSample> {
    let support = draw_support(model.n(), model.k(), rng);
    let z = DVector::from_fn(model.k(), |_, _| StandardNormal.sample(rng));
    let xs = model.r_chol() * z;
    let mut x = DVector::zeros(model.n());
    for (a, &i) in support.iter().enumerate() {
        x[i] = xs[a];
    }
    Ok(SparseSample { x, support })
}

fn check_matrix(model: &SystemModel, a: &DMatrix<f64>) -> Result<()> {
    if a.ncols() != model.l() || a.nrows() == 0 {
        return Err(Error::dim("sensing matrix A", format!("M×{}", model.l()), format!("{}×{}", a.nrows(), a.ncols())));
    }
    Ok(())
}

/// `y = g·A·(H·x + v) + w` with explicit noise vectors.
pub fn channel_output(
    model: &SystemModel,
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_matrix(model, a)?;
    if x.len() != model.n() {
        return Err(Error::dim("source x", model.n(), x.len()));
    }
    if v.len() != model.l() {
        return Err(Error::dim("sensor noise v", model.l(), v.len()));
    }
    if w.len() != a.nrows() {
        return Err(Error::dim("channel noise w", a.nrows(), w.len()));
    }
    let z = model.h() * x + v;
    Ok(a * z * model.g() + w)
}

/// Channel output with fresh noise draws (`v` first, then `w`).
pub fn simulate_channel(
    model: &SystemModel,
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    rng: &mut SimRng,
) -> Result<DVector<f64>> {
    check_matrix(model, a)?;
    let sv = model.sigma_v();
    let sw = model.sigma_w();
    let v = DVector::from_fn(model.l(), |_, _| sv * { let z: f64 = StandardNormal.sample(rng); z });
    let w = DVector::from_fn(a.nrows(), |_, _| sw * { let z: f64 = StandardNormal.sample(rng); z });
    channel_output(model, a, x, &v, &w)
}

/// Total noise covariance `R_n = g²σ_v² AAᵀ + σ_w² I_M`.
pub fn noise_covariance(model: &SystemModel, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_matrix(model, a)?;
    let gv = model.g() * model.sigma_v();
    let mut rn = a * a.transpose() * (gv * gv);
    for i in 0..a.nrows() {
        rn[(i, i)] += model.sigma_w() * model.sigma_w();
    }
    Ok(crate::linalg::symmetrize(&rn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn exponential_correlation_examples() {
        assert_eq!(exponential_correlation(3, 0.0).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(
            exponential_correlation(2, 0.5).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])
        );
        let r = exponential_correlation(3, 0.25).unwrap();
        assert_eq!(r[(0, 1)], 0.25);
        assert_eq!(r[(0, 2)], 0.0625);
        assert_eq!(r[(2, 1)], 0.25);
        assert!(exponential_correlation(3, 1.0).is_err());
        assert!(exponential_correlation(3, -0.1).is_err());
    }

    #[test]
    fn selection_matrix_examples() {
        assert_eq!(selection_matrix(&[0], 2).unwrap(), DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let e = selection_matrix(&[1, 2], 3).unwrap();
        assert_eq!(e, DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        assert_eq!(e.transpose() * &e, DMatrix::identity(2, 2));
        assert!(selection_matrix(&[3], 3).is_err());
    }

    #[test]
    fn full_ensemble_is_lexicographic() {
        let e = SupportEnsemble::full(4, 2).unwrap();
        let all: Vec<Vec<usize>> = e.iter().map(|s| s.to_vec()).collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn full_ensemble_guard() {
        assert!(matches!(SupportEnsemble::full(100, 5), Err(Error::Intractable { .. })));
    }

    #[test]
    fn sampled_ensemble_distinct_and_sorted() {
        for (n, k, c) in [(16, 2, 30), (100, 5, 50), (6, 3, 20)] {
            let e = SupportEnsemble::sampled(n, k, c, 11).unwrap();
            assert_eq!(e.len(), c);
            let v: Vec<Vec<usize>> = e.iter().map(|s| s.to_vec()).collect();
            assert!(v.windows(2).all(|w| w[0] < w[1]));
            assert!(v.iter().all(|s| s.windows(2).all(|p| p[0] < p[1]) && s[k - 1] < n));
        }
        let full = SupportEnsemble::full(6, 3).unwrap();
        let all = SupportEnsemble::sampled(6, 3, 20, 5).unwrap();
        assert!(full.iter().eq(all.iter()));
        assert!(SupportEnsemble::sampled(6, 3, 21, 5).is_err());
        assert!(SupportEnsemble::sampled(6, 3, 0, 5).is_err());
    }

    #[test]
    fn source_covariance_examples() {
        // N=2, K=1: average of e1e1ᵀ and e2e2ᵀ
        let m = SystemModel::builder(2, 1, 1)
            .source_covariance(DMatrix::from_element(1, 1, 3.0))
            .build()
            .unwrap();
        let e = SupportEnsemble::full(2, 1).unwrap();
        assert_eq!(source_covariance(&m, &e).unwrap(), DMatrix::identity(2, 2) * 1.5);

        // N=4, K=2, R=I: each index is in 3 of 6 supports
        let m = SystemModel::builder(4, 2, 2).build().unwrap();
        let e = SupportEnsemble::full(4, 2).unwrap();
        assert!((source_covariance(&m, &e).unwrap() - DMatrix::identity(4, 4) * 0.5).amax() < 1e-15);

        // N=3, K=2: supports {0,1},{0,2},{1,2}; each pair shares exactly one
        let rho = 0.3;
        let m = SystemModel::builder(3, 2, 2)
            .source_covariance(exponential_correlation(2, rho).unwrap())
            .build()
            .unwrap();
        let e = SupportEnsemble::full(3, 2).unwrap();
        let rx = source_covariance(&m, &e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 / 3.0 } else { rho / 3.0 };
                assert!((rx[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert!((m.r_x() - rx).amax() < 1e-15);
    }

    #[test]
    fn exact_covariance_matches_enumeration() {
        let r = exponential_correlation(3, 0.7).unwrap();
        for n in 3..9 {
            let m = SystemModel::builder(n, 3, 3).source_covariance(r.clone()).build().unwrap();
            let e = SupportEnsemble::full(n, 3).unwrap();
            assert!((source_covariance(&m, &e).unwrap() - m.r_x()).amax() < 1e-14);
            assert!((m.r_x().trace() - r.trace()).abs() < 1e-13);
        }
    }

    #[test]
    fn sparse_samples_have_exact_zeros_off_support() {
        let m = SystemModel::builder(10, 3, 4).build().unwrap();
        let mut rng = seeded(3);
        for _ in 0..100 {
            let s = draw_sparse_sample(&m, &mut rng).unwrap();
            for i in 0..10 {
                if !s.support.contains(&i) {
                    assert_eq!(s.x[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn empirical_variance_and_inclusion() {
        let (n, k) = (8, 3);
        let m = SystemModel::builder(n, k, 4).build().unwrap();
        let mut rng = seeded(17);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        let mut sq = 0.0;
        for _ in 0..draws {
            let s = draw_sparse_sample(&m, &mut rng).unwrap();
            for &i in &s.support {
                counts[i] += 1;
                sq += s.x[i] * s.x[i];
            }
        }
        let var = sq / (draws * k) as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        let p = k as f64 / n as f64;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - p).abs() < 5.0 * sd, "inclusion {f} vs {p}");
        }
    }

    #[test]
    fn noiseless_channel_is_exact() {
        let m = SystemModel::builder(3, 1, 2).sigma_w(0.0).build().unwrap();
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let x = DVector::from_row_slice(&[0.0, 2.0, 0.0]);
        let y = simulate_channel(&m, &a, &x, &mut seeded(1)).unwrap();
        assert_eq!(y, &a * &x);
    }

    #[test]
    fn scalar_chain_by_hand() {
        let m = SystemModel::builder(1, 1, 1)
            .channel(DMatrix::from_element(1, 1, 0.8))
            .gain(2.0)
            .sigma_v(0.5)
            .sigma_w(0.3)
            .build()
            .unwrap();
        let a = DMatrix::from_element(1, 1, 1.5);
        let y = channel_output(
            &m,
            &a,
            &DVector::from_element(1, 1.25),
            &DVector::from_element(1, -0.2),
            &DVector::from_element(1, 0.1),
        )
        .unwrap();
        // 2·1.5·(0.8·1.25 − 0.2) + 0.1 = 2.5
        assert!((y[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn noise_covariance_examples() {
        let m = SystemModel::builder(2, 1, 1).gain(2.0).sigma_v(1.0).sigma_w(0.1).build().unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let rn = noise_covariance(&m, &a).unwrap();
        assert!((rn[(0, 0)] - 8.01).abs() < 1e-12);

        let m0 = m.with_noise(0.0, 0.2).unwrap();
        assert!((noise_covariance(&m0, &a).unwrap()[(0, 0)] - 0.04).abs() < 1e-15);

        let m1 = SystemModel::builder(3, 1, 2).sigma_v(0.4).sigma_w(0.3).build().unwrap();
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let rn = noise_covariance(&m1, &rows).unwrap();
        assert!((rn - DMatrix::identity(2, 2) * 0.25).amax() < 1e-15);
    }

    #[test]
    fn channel_noise_covariance_matches_empirical() {
        let m = SystemModel::builder(4, 1, 2).sigma_v(0.7).sigma_w(0.2).build().unwrap();
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, 0.0, -0.3, 0.2, 1.0, 0.4, 0.0]);
        let x = DVector::zeros(4);
        let mut rng = seeded(5);
        let draws = 50_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..draws {
            let y = simulate_channel(&m, &a, &x, &mut rng).unwrap();
            acc += &y * y.transpose();
        }
        acc /= draws as f64;
        let want = noise_covariance(&m, &a).unwrap();
        assert!((acc - &want).norm() / want.norm() < 0.03);
    }

    #[test]
    fn builder_validation() {
        assert!(SystemModel::builder(4, 5, 2).build().is_err());
        assert!(SystemModel::builder(4, 2, 5).build().is_err());
        assert!(SystemModel::builder(4, 2, 2).gain(0.0).build().is_err());
        assert!(SystemModel::builder(4, 2, 2).power(-1.0).build().is_err());
        assert!(SystemModel::builder(4, 2, 2)
            .source_covariance(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]))
            .build()
            .is_err());
        let err = SystemModel::builder(4, 2, 2)
            .source_covariance(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]))
            .build();
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }
}
