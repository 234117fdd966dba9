//! Decoders for `y = g·A·(Hx + v) + w`.
//!
//! All estimators except OMP work in information form with the effective
//! matrix `a_eff = gAH`: `J = a_effᵀ R_n⁻¹ a_eff` and `z = a_effᵀ R_n⁻¹ y`,
//! so the oracle mean on a support `S` is `(R⁻¹ + J_SS)⁻¹ z_S`.
//! [`EstimationContext`] caches everything that depends only on the design.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{binomial, gather_principal, gather_vec, psd_pseudo_inverse, spd_inverse, symmetrize, SpdWorkspace};
use crate::metrics::{noise_precision, PINV_RANK_TOL};
use crate::model::{SupportEnsemble, SystemModel};
use crate::rng::SimRng;

/// Largest support count the exhaustive MMSE estimator will enumerate.
pub const EXHAUSTIVE_LIMIT: f64 = 1e5;

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub x_hat: DVector<f64>,
    pub support_estimate: Option<Vec<usize>>,
    /// Posterior support weights, in the lexicographic order of the full ensemble.
    pub weights: Option<Vec<f64>>,
}

impl Reconstruction {
    fn plain(x_hat: DVector<f64>) -> Self {
        Self { x_hat, support_estimate: None, weights: None }
    }
}

/// Knobs of the randomized greedy decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomOmpOptions {
    pub passes: usize,
    /// Divides the selection scores; `0` selects the best atom deterministically.
    pub temperature: f64,
}

impl Default for RandomOmpOptions {
    fn default() -> Self {
        Self { passes: 20, temperature: 1.0 }
    }
}

/// Design-dependent quantities shared by every decode with the same `(model, A)`.
#[derive(Debug, Clone)]
pub struct EstimationContext {
    n: usize,
    k: usize,
    a_eff: DMatrix<f64>,
    /// `a_effᵀ R_n⁻¹`; `None` on a noiseless link.
    whitened_t: Option<DMatrix<f64>>,
    info: Option<DMatrix<f64>>,
    r_inv: DMatrix<f64>,
    lmmse_gain: DMatrix<f64>,
    sigma_eff2: f64,
    posterior_factor: f64,
}

impl EstimationContext {
    pub fn new(model: &SystemModel, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != model.l() {
            return Err(Error::dim("sensing matrix columns", model.l(), a.ncols()));
        }
        let a_eff = a * model.h() * model.g();
        let noiseless = model.sigma_v() == 0.0 && model.sigma_w() == 0.0;
        let (whitened_t, info, lmmse_gain, sigma_eff2) = if noiseless {
            let cov = symmetrize(&(&a_eff * model.r_x() * a_eff.transpose()));
            let (pinv, _) = psd_pseudo_inverse(&cov, PINV_RANK_TOL);
            (None, None, model.r_x() * a_eff.transpose() * pinv, 0.0)
        } else {
            let rn_inv = noise_precision(model, a)?;
            let wt = a_eff.transpose() * &rn_inv;
            let info = symmetrize(&(&wt * &a_eff));
            let rx_inv = spd_inverse(model.r_x(), "source covariance R_x")?;
            let post = spd_inverse(&symmetrize(&(rx_inv + &info)), "LMMSE posterior precision")?;
            let gain = post * &wt;
            let m = a.nrows() as f64;
            let rn_trace = model.g().powi(2) * model.sigma_v().powi(2) * (a * a.transpose()).trace()
                + m * model.sigma_w().powi(2);
            (Some(wt), Some(info), gain, rn_trace / m)
        };
        let atom_energy = a_eff.column_iter().map(|c| c.norm_squared()).sum::<f64>() / model.n() as f64;
        let prior_var = model.r().diagonal().mean();
        let v = atom_energy * prior_var;
        let posterior_factor = if v + sigma_eff2 > 0.0 { v / (v + sigma_eff2) } else { 1.0 };
        Ok(Self {
            n: model.n(),
            k: model.k(),
            a_eff,
            whitened_t,
            info,
            r_inv: model.r_inv().clone(),
            lmmse_gain,
            sigma_eff2,
            posterior_factor,
        })
    }

    pub fn a_eff(&self) -> &DMatrix<f64> {
        &self.a_eff
    }

    /// Mean diagonal of `R_n`.
    pub fn sigma_eff2(&self) -> f64 {
        self.sigma_eff2
    }

    fn check_y(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.a_eff.nrows() {
            return Err(Error::dim("measurement y", self.a_eff.nrows(), y.len()));
        }
        Ok(())
    }

    fn check_support(&self, support: &[usize]) -> Result<()> {
        if support.len() != self.k || support.iter().any(|&i| i >= self.n) || support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "support {support:?} is not an increasing {}-subset of 0..{}",
                self.k, self.n
            )));
        }
        Ok(())
    }

    /// `a_effᵀ R_n⁻¹ y`.
    pub fn matched(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        self.whitened_t.as_ref().map(|wt| wt * y)
    }

    /// Oracle mean on `support`, given the matched output `z` (noisy link) or
    /// `y` itself (noiseless link, least squares on the support columns).
    fn oracle_values(&self, y: &DVector<f64>, z: Option<&DVector<f64>>, support: &[usize], ws: &mut SpdWorkspace) -> Result<Vec<f64>> {
        let k = support.len();
        match (z, &self.info) {
            (Some(z), Some(info)) => {
                let buf = ws.input_mut();
                gather_principal(info, support, buf);
                for i in 0..k {
                    for j in 0..k {
                        buf[i * k + j] += self.r_inv[(i, j)];
                    }
                }
                if !ws.factor() {
                    return Err(Error::NumericalSingularity(format!("posterior precision on support {support:?}")));
                }
                let mut rhs = vec![0.0; k];
                gather_vec(z, support, &mut rhs);
                ws.solve_in_place(&mut rhs);
                Ok(rhs)
            }
            _ => {
                let cols = self.a_eff.select_columns(support);
                let eps = PINV_RANK_TOL * cols.norm();
                let sol = cols
                    .svd(true, true)
                    .solve(y, eps)
                    .map_err(|e| Error::NumericalSingularity(e.to_string()))?;
                Ok(sol.iter().copied().collect())
            }
        }
    }

    pub fn oracle(&self, y: &DVector<f64>, support: &[usize]) -> Result<Reconstruction> {
        self.check_y(y)?;
        self.check_support(support)?;
        let z = self.matched(y);
        let vals = self.oracle_values(y, z.as_ref(), support, &mut SpdWorkspace::new(self.k))?;
        let mut x = DVector::zeros(self.n);
        for (&i, v) in support.iter().zip(vals) {
            x[i] = v;
        }
        Ok(Reconstruction { x_hat: x, support_estimate: Some(support.to_vec()), weights: None })
    }

    pub fn lmmse(&self, y: &DVector<f64>) -> Result<Reconstruction> {
        self.check_y(y)?;
        Ok(Reconstruction::plain(&self.lmmse_gain * y))
    }

    /// Posterior-weighted mixture of oracle means over every support.
    pub fn mmse_exhaustive(&self, y: &DVector<f64>) -> Result<Reconstruction> {
        self.check_y(y)?;
        let count = binomial(self.n, self.k);
        if count > EXHAUSTIVE_LIMIT {
            return Err(Error::Intractable {
                count,
                limit: EXHAUSTIVE_LIMIT,
                hint: "use the random-OMP estimator instead",
            });
        }
        let (Some(z), Some(info)) = (self.matched(y), self.info.as_ref()) else {
            return Err(Error::InvalidParameter("exhaustive MMSE needs a noisy link".into()));
        };
        let ensemble = SupportEnsemble::full(self.n, self.k)?;
        let k = self.k;
        let mut ws = SpdWorkspace::new(k);
        let mut log_w = Vec::with_capacity(ensemble.len());
        let mut means = Vec::with_capacity(ensemble.len() * k);
        let mut zs = vec![0.0; k];
        for s in ensemble.iter() {
            let buf = ws.input_mut();
            gather_principal(info, s, buf);
            for i in 0..k {
                for j in 0..k {
                    buf[i * k + j] += self.r_inv[(i, j)];
                }
            }
            if !ws.factor() {
                return Err(Error::NumericalSingularity(format!("posterior precision on support {s:?}")));
            }
            gather_vec(&z, s, &mut zs);
            let mut sol = zs.clone();
            ws.solve_in_place(&mut sol);
            let quad: f64 = zs.iter().zip(&sol).map(|(a, b)| a * b).sum();
            log_w.push(0.5 * quad - 0.5 * ws.log_det());
            means.extend_from_slice(&sol);
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut x = DVector::zeros(self.n);
        let mut best = 0;
        for (idx, (s, w)) in ensemble.iter().zip(&weights).enumerate() {
            for (p, &i) in s.iter().enumerate() {
                x[i] += w * means[idx * k + p];
            }
            if *w > weights[best] {
                best = idx;
            }
        }
        Ok(Reconstruction {
            x_hat: x,
            support_estimate: Some(ensemble.get(best).to_vec()),
            weights: Some(weights),
        })
    }

    pub fn omp(&self, y: &DVector<f64>) -> Result<Reconstruction> {
        omp(&self.a_eff, y, self.k)
    }

    /// Randomized greedy supports, each contributing its oracle mean.
    pub fn random_omp(&self, y: &DVector<f64>, options: &RandomOmpOptions, rng: &mut SimRng) -> Result<Reconstruction> {
        self.check_y(y)?;
        if options.passes == 0 {
            return Err(Error::InvalidParameter("random-OMP needs at least one pass".into()));
        }
        if !(options.temperature >= 0.0) {
            return Err(Error::InvalidParameter("random-OMP temperature must be nonnegative".into()));
        }
        let z = self.matched(y);
        let norms: Vec<f64> = self.a_eff.column_iter().map(|c| c.norm()).collect();
        let scale = if self.sigma_eff2 > 0.0 && options.temperature > 0.0 {
            self.posterior_factor / (2.0 * self.sigma_eff2 * options.temperature)
        } else {
            0.0
        };
        let mut ws = SpdWorkspace::new(self.k);
        let mut acc = DVector::zeros(self.n);
        let mut scores = vec![0.0; self.n];
        for _ in 0..options.passes {
            let mut selected: Vec<usize> = Vec::with_capacity(self.k);
            let mut residual = y.clone();
            for _ in 0..self.k {
                let corr = self.a_eff.tr_mul(&residual);
                let mut best: Option<(usize, f64)> = None;
                for i in 0..self.n {
                    scores[i] = f64::NEG_INFINITY;
                    if selected.contains(&i) || norms[i] == 0.0 {
                        continue;
                    }
                    let c = corr[i] / norms[i];
                    scores[i] = c * c;
                    if best.map_or(true, |(_, b)| scores[i] > b) {
                        best = Some((i, scores[i]));
                    }
                }
                let Some((argmax, top)) = best else {
                    // Fewer usable atoms than K: pad with the lowest unused index.
                    let i = (0..self.n).find(|i| !selected.contains(i)).expect("K <= N");
                    selected.push(i);
                    continue;
                };
                let pick = if scale == 0.0 {
                    argmax
                } else {
                    let total: f64 = scores.iter().map(|&s| ((s - top) * scale).exp()).sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = argmax;
                    for (i, &s) in scores.iter().enumerate() {
                        let w = ((s - top) * scale).exp();
                        if w == 0.0 {
                            continue;
                        }
                        if u < w {
                            pick = i;
                            break;
                        }
                        u -= w;
                    }
                    pick
                };
                selected.push(pick);
                residual = y - least_squares_fit(&self.a_eff, &selected, y).1;
            }
            selected.sort_unstable();
            let vals = self.oracle_values(y, z.as_ref(), &selected, &mut ws)?;
            for (&i, v) in selected.iter().zip(vals) {
                acc[i] += v;
            }
        }
        Ok(Reconstruction::plain(acc / options.passes as f64))
    }
}

/// Least-squares coefficients on `cols` and the fitted vector.
fn least_squares_fit(a: &DMatrix<f64>, cols: &[usize], y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let sub = a.select_columns(cols);
    let svd = sub.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if min <= PINV_RANK_TOL * max {
        log::warn!("OMP refit on rank-deficient columns {cols:?}; using the pseudo-inverse");
    }
    let coef = svd
        .solve(y, PINV_RANK_TOL * max.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(cols.len()));
    let fit = &sub * &coef;
    (coef, fit)
}

/// Orthogonal matching pursuit: `k` rounds of picking the atom with the
/// largest normalized correlation with the residual (lowest index on ties),
/// each followed by a least-squares refit on the selected atoms.
pub fn omp(a_eff: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<Reconstruction> {
    let (m, n) = a_eff.shape();
    if y.len() != m {
        return Err(Error::dim("measurement y", m, y.len()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("sparsity {k} exceeds {n} atoms")));
    }
    let norms: Vec<f64> = a_eff.column_iter().map(|c| c.norm()).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut residual = y.clone();
    let mut coef = DVector::zeros(0);
    for _ in 0..k {
        let corr = a_eff.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if selected.contains(&i) {
                continue;
            }
            let c = if norms[i] > 0.0 { (corr[i] / norms[i]).abs() } else { 0.0 };
            if best.map_or(true, |(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        selected.push(best.expect("k <= n").0);
        let (c, fit) = least_squares_fit(a_eff, &selected, y);
        coef = c;
        residual = y - fit;
    }
    let mut x = DVector::zeros(n);
    for (&i, &v) in selected.iter().zip(coef.iter()) {
        x[i] = v;
    }
    selected.sort_unstable();
    Ok(Reconstruction { x_hat: x, support_estimate: Some(selected), weights: None })
}

/// Conditional mean given the true support.
pub fn oracle_mmse(model: &SystemModel, a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Result<Reconstruction> {
    EstimationContext::new(model, a)?.oracle(y, support)
}

/// Linear MMSE estimate `(R_x⁻¹ + J)⁻¹ a_effᵀ R_n⁻¹ y`.
pub fn lmmse(model: &SystemModel, a: &DMatrix<f64>, y: &DVector<f64>) -> Result<Reconstruction> {
    EstimationContext::new(model, a)?.lmmse(y)
}

pub fn mmse_exhaustive(model: &SystemModel, a: &DMatrix<f64>, y: &DVector<f64>) -> Result<Reconstruction> {
    if model.support_count() > EXHAUSTIVE_LIMIT {
        return Err(Error::Intractable {
            count: model.support_count(),
            limit: EXHAUSTIVE_LIMIT,
            hint: "use the random-OMP estimator instead",
        });
    }
    EstimationContext::new(model, a)?.mmse_exhaustive(y)
}

pub fn random_omp(
    model: &SystemModel,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    options: &RandomOmpOptions,
    rng: &mut SimRng,
) -> Result<Reconstruction> {
    EstimationContext::new(model, a)?.random_omp(y, options, rng)
}
