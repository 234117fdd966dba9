//! Scalar objectives and diagnostics: the oracle-MMSE lower bound (full and
//! sampled ensembles), the LMMSE upper bound, transmit power, NMSE, mutual
//! coherence and frame potential.

use nalgebra::{DMatrix, DVector};
use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{gather_principal, psd_pseudo_inverse, symmetrize, sym_spectral_norm, NeumaierSum, SpdWorkspace};
use crate::model::{noise_covariance, EnsembleKind, SupportEnsemble, SystemModel};

/// Relative rank tolerance for the pseudo-inverse of a singular `R_n`.
pub const PINV_RANK_TOL: f64 = 1e-10;

/// Value of the oracle-MSE lower bound over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub value: f64,
    pub per_support_terms: Option<Vec<(Vec<usize>, f64)>>,
    pub ensemble_kind: EnsembleKind,
}

impl BoundReport {
    /// Debug dump: one `support,term` row per support, indices space-separated.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "support,term")?;
        if let Some(terms) = &self.per_support_terms {
            for (s, t) in terms {
                let idx: Vec<String> = s.iter().map(|i| i.to_string()).collect();
                writeln!(w, "{},{}", idx.join(" "), t)?;
            }
        }
        Ok(())
    }
}

/// `R_n⁻¹`, or the pseudo-inverse `R_n†` when `σ_w = 0` and `σ_v > 0`.
pub fn noise_precision(model: &SystemModel, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rn = noise_covariance(model, a)?;
    if model.sigma_w() > 0.0 {
        return rn
            .cholesky()
            .map(|c| symmetrize(&c.inverse()))
            .ok_or_else(|| Error::NumericalSingularity("noise covariance R_n".into()));
    }
    if model.sigma_v() > 0.0 {
        let (pinv, rank) = psd_pseudo_inverse(&rn, PINV_RANK_TOL);
        if rank == 0 {
            return Err(Error::NumericalSingularity("R_n vanishes: A has no energy".into()));
        }
        return Ok(pinv);
    }
    Err(Error::NumericalSingularity(
        "noise covariance R_n is zero (sigma_v = sigma_w = 0)".into(),
    ))
}

/// Fisher information of the source seen through the channel,
/// `J = g²·(AH)ᵀ R_n⁻¹ (AH)` (`N×N`).
pub fn information_matrix(model: &SystemModel, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let prec = noise_precision(model, a)?;
    let ah = a * model.h() * model.g();
    Ok(symmetrize(&(ah.transpose() * prec * &ah)))
}

/// Ensemble average of `Tr{(P + J_SS)⁻¹}` given prior precision `P` (`K×K`)
/// and information `J`. Summed in ensemble order with compensation.
pub(crate) fn average_trace_inverse(
    prior_precision: &DMatrix<f64>,
    info: &DMatrix<f64>,
    ensemble: &SupportEnsemble,
    keep_terms: bool,
) -> Result<(f64, Option<Vec<(Vec<usize>, f64)>>)> {
    let k = ensemble.k();
    let mut ws = SpdWorkspace::new(k);
    let mut sum = NeumaierSum::default();
    let mut terms = keep_terms.then(|| Vec::with_capacity(ensemble.len()));
    for s in ensemble.iter() {
        let buf = ws.input_mut();
        gather_principal(info, s, buf);
        for a in 0..k {
            for b in 0..k {
                buf[a * k + b] += prior_precision[(a, b)];
            }
        }
        if !ws.factor() {
            return Err(Error::NumericalSingularity(format!("posterior precision on support {s:?}")));
        }
        let t = ws.trace_inverse();
        sum.add(t);
        if let Some(v) = terms.as_mut() {
            v.push((s.to_vec(), t));
        }
    }
    Ok((sum.value() / ensemble.len() as f64, terms))
}

fn check_ensemble(model: &SystemModel, ensemble: &SupportEnsemble) -> Result<()> {
    if ensemble.n() != model.n() || ensemble.k() != model.k() {
        return Err(Error::dim(
            "support ensemble",
            format!("N={}, K={}", model.n(), model.k()),
            format!("N={}, K={}", ensemble.n(), ensemble.k()),
        ));
    }
    Ok(())
}

/// Oracle-MMSE lower bound
/// `(1/|Ω|) Σ_S Tr{(R⁻¹ + g² E_Sᵀ Hᵀ Aᵀ R_n⁻¹ A H E_S)⁻¹}`.
pub fn mse_lower_bound(model: &SystemModel, ensemble: &SupportEnsemble, a: &DMatrix<f64>) -> Result<BoundReport> {
    bound_impl(model, ensemble, a, false)
}

/// Same as [`mse_lower_bound`], keeping every per-support term.
pub fn mse_lower_bound_detailed(
    model: &SystemModel,
    ensemble: &SupportEnsemble,
    a: &DMatrix<f64>,
) -> Result<BoundReport> {
    bound_impl(model, ensemble, a, true)
}

fn bound_impl(model: &SystemModel, ensemble: &SupportEnsemble, a: &DMatrix<f64>, keep: bool) -> Result<BoundReport> {
    check_ensemble(model, ensemble)?;
    let info = information_matrix(model, a)?;
    let (value, per_support_terms) = average_trace_inverse(model.r_inv(), &info, ensemble, keep)?;
    Ok(BoundReport { value, per_support_terms, ensemble_kind: ensemble.kind() })
}

/// Sampled-ensemble estimate of the lower bound over `size` supports drawn
/// uniformly without replacement with the given seed.
pub fn mse_lower_bound_sampled(model: &SystemModel, size: usize, seed: u64, a: &DMatrix<f64>) -> Result<BoundReport> {
    let ensemble = SupportEnsemble::sampled(model.n(), model.k(), size, seed)?;
    mse_lower_bound(model, &ensemble, a)
}

/// LMMSE error `Tr{(R_x⁻¹ + g² Hᵀ Aᵀ R_n⁻¹ A H)⁻¹}`.
pub fn lmmse_mse(model: &SystemModel, a: &DMatrix<f64>) -> Result<f64> {
    let info = information_matrix(model, a)?;
    let rx_inv = crate::linalg::spd_inverse(model.r_x(), "source covariance R_x")?;
    let post = symmetrize(&(rx_inv + info));
    let chol = post
        .cholesky()
        .ok_or_else(|| Error::NumericalSingularity("LMMSE posterior precision".into()))?;
    Ok(chol.inverse().trace())
}

/// Average transmit power `Tr{A (H R_x Hᵀ + σ_v² I) Aᵀ}`.
pub fn transmit_power(model: &SystemModel, a: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != model.l() {
        return Err(Error::dim("sensing matrix A", format!("M×{}", model.l()), format!("{}×{}", a.nrows(), a.ncols())));
    }
    Ok((a * model.power_weight() * a.transpose()).trace())
}

/// Normalized MSE, `E‖x − x̂‖²/K`, with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseStats {
    pub linear: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl NmseStats {
    pub fn db(&self) -> f64 {
        to_db(self.linear)
    }

    /// Aggregates per-trial squared errors `‖x − x̂‖²`.
    pub fn from_squared_errors(errors: &[f64], k: usize) -> Self {
        let trials = errors.len();
        if trials == 0 {
            return Self { linear: f64::NAN, stderr: f64::NAN, trials };
        }
        let per: Vec<f64> = errors.iter().map(|e| e / k as f64).collect();
        let mean = per.iter().copied().collect::<NeumaierSum>().value() / trials as f64;
        let var = if trials > 1 {
            per.iter().map(|v| (v - mean) * (v - mean)).collect::<NeumaierSum>().value() / (trials - 1) as f64
        } else {
            0.0
        };
        Self { linear: mean, stderr: (var / trials as f64).sqrt(), trials }
    }
}

pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// NMSE over paired trials.
pub fn nmse(x_true: &[DVector<f64>], x_hat: &[DVector<f64>], k: usize) -> Result<NmseStats> {
    if x_true.len() != x_hat.len() {
        return Err(Error::dim("nmse trials", x_true.len(), x_hat.len()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("sparsity K must be positive".into()));
    }
    let mut errs = Vec::with_capacity(x_true.len());
    for (x, xh) in x_true.iter().zip(x_hat) {
        if x.len() != xh.len() {
            return Err(Error::dim("nmse vector", x.len(), xh.len()));
        }
        errs.push((x - xh).norm_squared());
    }
    Ok(NmseStats::from_squared_errors(&errs, k))
}

/// Mutual coherence with a count of zero columns excluded from the maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    pub value: f64,
    pub skipped_zero_columns: usize,
}

/// `max_{i≠j} |aᵢᵀaⱼ| / (‖aᵢ‖‖aⱼ‖)` over nonzero columns.
pub fn mutual_coherence(a: &DMatrix<f64>) -> Coherence {
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let live: Vec<usize> = (0..a.ncols()).filter(|&i| norms[i] > 0.0).collect();
    let gram = a.transpose() * a;
    let mut mu = 0.0f64;
    for (p, &i) in live.iter().enumerate() {
        for &j in &live[p + 1..] {
            mu = mu.max(gram[(i, j)].abs() / (norms[i] * norms[j]));
        }
    }
    Coherence { value: mu.min(1.0), skipped_zero_columns: a.ncols() - live.len() }
}

/// Frame potential `‖AᵀA − I‖_F`.
pub fn frame_potential(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    (a.transpose() * a - DMatrix::<f64>::identity(n, n)).norm()
}

/// Spectral norm helper used for rank tolerances.
pub fn gram_spectral_norm(a: &DMatrix<f64>) -> f64 {
    sym_spectral_norm(&(a * a.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::exponential_correlation;

    fn white_model(n: usize, k: usize, m: usize, sx2: f64) -> SystemModel {
        SystemModel::builder(n, k, m)
            .source_covariance(DMatrix::identity(k, k) * sx2)
            .sigma_w(0.2)
            .gain(0.7)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_matrix_gives_prior_trace() {
        let m = white_model(6, 2, 3, 1.7);
        let e = SupportEnsemble::full(6, 2).unwrap();
        let b = mse_lower_bound(&m, &e, &DMatrix::zeros(3, 6)).unwrap();
        assert!((b.value - 2.0 * 1.7).abs() < 1e-14);
        assert!((lmmse_mse(&m, &DMatrix::zeros(3, 6)).unwrap() - 3.4).abs() < 1e-12);
        assert_eq!(transmit_power(&m, &DMatrix::zeros(3, 6)).unwrap(), 0.0);
    }

    #[test]
    fn k_one_brute_force() {
        let m = SystemModel::builder(4, 1, 2)
            .source_covariance(DMatrix::from_element(1, 1, 2.0))
            .gain(0.8)
            .sigma_v(0.3)
            .sigma_w(0.4)
            .build()
            .unwrap();
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.2, -0.5, 0.0, 0.3, 1.1, 0.4, -0.9]);
        let rn = noise_covariance(&m, &a).unwrap();
        let rn_inv = rn.try_inverse().unwrap();
        let mut want = 0.0;
        for i in 0..4 {
            let col = a.column(i).into_owned();
            let q = (col.transpose() * &rn_inv * &col)[(0, 0)];
            want += 1.0 / (0.5 + 0.64 * q);
        }
        want /= 4.0;
        let got = mse_lower_bound_detailed(&m, &SupportEnsemble::full(4, 1).unwrap(), &a).unwrap();
        assert!((got.value - want).abs() < 1e-14);
        let terms = got.per_support_terms.unwrap();
        assert_eq!(terms.len(), 4);
        let mean: f64 = terms.iter().map(|t| t.1).sum::<f64>() / 4.0;
        assert!((mean - got.value).abs() < 1e-15);
    }

    #[test]
    fn truncated_identity_with_sensor_noise_only() {
        // σ_w = 0: per-support term is k1·σx²σv²/(σx²+σv²) + (K−k1)·σx²
        let (n, k, mm) = (6, 2, 3);
        let (sx2, sv) = (1.5, 0.6);
        let m = SystemModel::builder(n, k, mm)
            .source_covariance(DMatrix::identity(k, k) * sx2)
            .sigma_v(sv)
            .sigma_w(0.0)
            .build()
            .unwrap();
        let mut a = DMatrix::zeros(mm, n);
        for i in 0..mm {
            a[(i, i)] = 2.5;
        }
        let e = SupportEnsemble::full(n, k).unwrap();
        let got = mse_lower_bound_detailed(&m, &e, &a).unwrap();
        let sv2 = sv * sv;
        for (s, t) in got.per_support_terms.unwrap() {
            let k1 = s.iter().filter(|&&i| i < mm).count() as f64;
            let want = k1 * sx2 * sv2 / (sx2 + sv2) + (k as f64 - k1) * sx2;
            assert!((t - want).abs() < 1e-12, "{s:?}: {t} vs {want}");
        }
    }

    #[test]
    fn both_noises_zero_is_singular() {
        let m = SystemModel::builder(4, 1, 2).sigma_w(0.0).build().unwrap();
        let e = SupportEnsemble::full(4, 1).unwrap();
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(mse_lower_bound(&m, &e, &a), Err(Error::NumericalSingularity(_))));
    }

    #[test]
    fn lmmse_scalar_chain() {
        let (sx2, g, sv, sw, a) = (1.3, 0.9, 0.4, 0.25, 1.7);
        let m = SystemModel::builder(1, 1, 1)
            .source_covariance(DMatrix::from_element(1, 1, sx2))
            .gain(g)
            .sigma_v(sv)
            .sigma_w(sw)
            .build()
            .unwrap();
        let got = lmmse_mse(&m, &DMatrix::from_element(1, 1, a)).unwrap();
        let want = 1.0 / (1.0 / sx2 + g * g * a * a / (g * g * sv * sv * a * a + sw * sw));
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn lower_bound_below_lmmse() {
        let m = SystemModel::builder(8, 2, 4)
            .source_covariance(exponential_correlation(2, 0.6).unwrap())
            .gain(0.5)
            .sigma_v(0.1)
            .sigma_w(0.1)
            .build()
            .unwrap();
        let e = SupportEnsemble::full(8, 2).unwrap();
        let a = DMatrix::from_fn(4, 8, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let lb = mse_lower_bound(&m, &e, &a).unwrap().value;
        let ub = lmmse_mse(&m, &a).unwrap();
        assert!(lb <= ub, "{lb} > {ub}");
    }

    #[test]
    fn transmit_power_orthonormal_rows() {
        let (n, k, mm, sx2, sv) = (8, 2, 3, 2.0, 0.5);
        let m = SystemModel::builder(n, k, mm)
            .source_covariance(DMatrix::identity(k, k) * sx2)
            .sigma_v(sv)
            .build()
            .unwrap();
        let a = DMatrix::from_fn(mm, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let want = mm as f64 * (sx2 * k as f64 / n as f64 + sv * sv);
        assert!((transmit_power(&m, &a).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn nmse_examples() {
        let x = vec![DVector::from_row_slice(&[1.0, 0.0, 2.0, 0.0])];
        assert_eq!(nmse(&x, &x, 2).unwrap().linear, 0.0);
        let z = vec![DVector::zeros(4)];
        assert!((nmse(&x, &z, 2).unwrap().linear - 2.5).abs() < 1e-15);
        let e = vec![DVector::from_row_slice(&[2.0, 1.0, 2.0, 0.0])];
        // error vector (1,1,0,0), K = 2
        let s = nmse(&x, &e, 2).unwrap();
        assert!((s.linear - 1.0).abs() < 1e-15);
        assert!((s.db() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn coherence_examples() {
        assert_eq!(mutual_coherence(&DMatrix::identity(3, 3)).value, 0.0);
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!((mutual_coherence(&dup).value - 1.0).abs() < 1e-15);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert!((mutual_coherence(&a).value - 0.5f64.sqrt()).abs() < 1e-15);
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = mutual_coherence(&z);
        assert_eq!(c.skipped_zero_columns, 1);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn frame_potential_examples() {
        assert!(frame_potential(&DMatrix::identity(4, 4)) < 1e-15);
        assert!((frame_potential(&DMatrix::zeros(2, 5)) - 5f64.sqrt()).abs() < 1e-15);
        let (mm, n, c) = (3, 7, 1.8f64);
        let a = DMatrix::from_fn(mm, n, |i, j| if i == j { c } else { 0.0 });
        let want = ((n - mm) as f64 + mm as f64 * (c * c - 1.0).powi(2)).sqrt();
        assert!((frame_potential(&a) - want).abs() < 1e-13);
    }

    #[test]
    fn bound_csv_dump() {
        let m = white_model(3, 1, 2, 1.0);
        let e = SupportEnsemble::full(3, 1).unwrap();
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = mse_lower_bound_detailed(&m, &e, &a).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("support,term\n0,"));
    }
}
