//! Rank-relaxed design problem over the Gram matrix `Q = AᵀA`.
//!
//! Writing `R_n⁻¹` with the matrix inversion lemma removes `A` from the
//! objective except through `Q`: the per-support posterior precision becomes
//! `R⁻¹ + D_Sᵀ W(Q) D_S` with `D_S = H E_S` and
//!
//! ```text
//! W(Q) = (g²/σ_w²)·(Q − Q(cI + Q)⁻¹Q),   c = σ_w²/(g²σ_v²)
//!      = a·(I + bQ)⁻¹Q,                  a = g²/σ_w², b = g²σ_v²/σ_w²
//! ```
//!
//! The relaxed problem minimizes the ensemble average of `Tr{(·)⁻¹}` over
//! `{Q ⪰ 0, Tr((H R_x Hᵀ + σ_v² I) Q) ≤ P}`. [`solve_sdr`] runs a spectral
//! projected gradient method in whitened coordinates `X = C^{1/2} Q C^{1/2}`,
//! where the feasible set is `{X ⪰ 0, Tr X ≤ P}` and the Euclidean projection
//! is exact (eigenvalue projection onto a capped simplex).

use nalgebra::DMatrix;
use std::borrow::Cow;
use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{
    frob_dot, from_eigen, gather_principal, min_eigenvalue, project_capped_simplex, spd_inverse, spd_sqrt_pair,
    sym_eigen_desc, sym_spectral_norm, symmetrize, NeumaierSum, SpdWorkspace,
};
use crate::model::{SupportEnsemble, SystemModel};

/// Smooth objective `(1/|B|) Σ_S Tr{(P₀ + (Hᵀ W(Q) H)_SS)⁻¹}` over index
/// blocks `S`. The lower-bound design uses `P₀ = R⁻¹` with support blocks;
/// the LMMSE design uses `P₀ = R_x⁻¹` with the single block `{0..N-1}`.
#[derive(Debug, Clone)]
pub struct GramObjective<'a> {
    prior_precision: DMatrix<f64>,
    blocks: Cow<'a, SupportEnsemble>,
    h: DMatrix<f64>,
    a: f64,
    b: f64,
}

impl<'a> GramObjective<'a> {
    /// Oracle lower-bound objective over `ensemble`.
    pub fn lower_bound(model: &SystemModel, ensemble: &'a SupportEnsemble) -> Result<Self> {
        check_sigma_w(model)?;
        if ensemble.n() != model.n() || ensemble.k() != model.k() {
            return Err(Error::dim(
                "support ensemble",
                format!("N={}, K={}", model.n(), model.k()),
                format!("N={}, K={}", ensemble.n(), ensemble.k()),
            ));
        }
        Ok(Self {
            prior_precision: model.r_inv().clone(),
            blocks: Cow::Borrowed(ensemble),
            h: model.h().clone(),
            a: model.g().powi(2) / model.sigma_w().powi(2),
            b: model.g().powi(2) * model.sigma_v().powi(2) / model.sigma_w().powi(2),
        })
    }

    /// LMMSE objective `Tr{(R_x⁻¹ + Hᵀ W(Q) H)⁻¹}`.
    pub fn lmmse(model: &SystemModel) -> Result<GramObjective<'static>> {
        check_sigma_w(model)?;
        Ok(GramObjective {
            prior_precision: spd_inverse(model.r_x(), "source covariance R_x")?,
            blocks: Cow::Owned(SupportEnsemble::full(model.n(), model.n())?),
            h: model.h().clone(),
            a: model.g().powi(2) / model.sigma_w().powi(2),
            b: model.g().powi(2) * model.sigma_v().powi(2) / model.sigma_w().powi(2),
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// `(I + bQ)⁻¹` and `W(Q) = a (I + bQ)⁻¹ Q`.
    fn weight(&self, q: &DMatrix<f64>) -> Result<(Option<DMatrix<f64>>, DMatrix<f64>)> {
        if self.b == 0.0 {
            return Ok((None, q * self.a));
        }
        let l = q.nrows();
        let shifted = DMatrix::<f64>::identity(l, l) + q * self.b;
        let inv = shifted
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::NumericalSingularity("I + bQ".into()))?;
        let w = symmetrize(&(&inv * q * self.a));
        Ok((Some(symmetrize(&inv)), w))
    }

    fn check_q(&self, q: &DMatrix<f64>) -> Result<()> {
        let l = self.dim();
        if q.nrows() != l || q.ncols() != l {
            return Err(Error::dim("Gram matrix Q", format!("{l}×{l}"), format!("{}×{}", q.nrows(), q.ncols())));
        }
        Ok(())
    }

    /// Objective value (no PSD check).
    pub fn value(&self, q: &DMatrix<f64>) -> Result<f64> {
        self.check_q(q)?;
        let (_, w) = self.weight(q)?;
        let v = symmetrize(&(self.h.transpose() * w * &self.h));
        crate::metrics::average_trace_inverse(&self.prior_precision, &v, &self.blocks, false).map(|r| r.0)
    }

    /// Objective value and its gradient with respect to symmetric `Q`.
    pub fn value_and_gradient(&self, q: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check_q(q)?;
        let (shift_inv, w) = self.weight(q)?;
        let v = symmetrize(&(self.h.transpose() * w * &self.h));
        let kb = self.blocks.k();
        let n = v.nrows();
        let mut ws = SpdWorkspace::new(kb);
        let mut sum = NeumaierSum::default();
        let mut scatter = DMatrix::<f64>::zeros(n, n);
        let mut sq = vec![0.0; kb * kb];
        for s in self.blocks.iter() {
            let buf = ws.input_mut();
            gather_principal(&v, s, buf);
            for i in 0..kb {
                for j in 0..kb {
                    buf[i * kb + j] += self.prior_precision[(i, j)];
                }
            }
            if !ws.factor() {
                return Err(Error::NumericalSingularity(format!("posterior precision on support {s:?}")));
            }
            let inv = ws.inverse();
            let mut tr = 0.0;
            for i in 0..kb {
                tr += inv[i * kb + i];
                for j in 0..kb {
                    sq[i * kb + j] = (0..kb).map(|p| inv[i * kb + p] * inv[p * kb + j]).sum();
                }
            }
            sum.add(tr);
            for (i, &si) in s.iter().enumerate() {
                for (j, &sj) in s.iter().enumerate() {
                    scatter[(si, sj)] += sq[i * kb + j];
                }
            }
        }
        let count = self.blocks.len() as f64;
        // ∂f/∂W = −H C Hᵀ,  dW = a (I+bQ)⁻¹ dQ (I+bQ)⁻¹
        let grad_w = &self.h * scatter * self.h.transpose() * (-1.0 / count);
        let grad = match shift_inv {
            Some(bi) => &bi * grad_w * &bi * self.a,
            None => grad_w * self.a,
        };
        Ok((sum.value() / count, symmetrize(&grad)))
    }
}

fn check_sigma_w(model: &SystemModel) -> Result<()> {
    if model.sigma_w() > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "the Gram-space relaxation needs sigma_w > 0; use the sensor-noise-only closed form".into(),
        ))
    }
}

fn check_psd(q: &DMatrix<f64>) -> Result<()> {
    let scale = sym_spectral_norm(q);
    let lo = min_eigenvalue(q);
    if lo < -1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidParameter(format!(
            "Gram matrix is not PSD (min eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

/// Relaxed objective at a PSD `Q`; equals the oracle lower bound at any `A`
/// with `AᵀA = Q`.
pub fn relaxed_objective(model: &SystemModel, ensemble: &SupportEnsemble, q: &DMatrix<f64>) -> Result<f64> {
    let obj = GramObjective::lower_bound(model, ensemble)?;
    obj.check_q(q)?;
    check_psd(q)?;
    obj.value(&symmetrize(q))
}

/// Analytic gradient of [`relaxed_objective`].
pub fn relaxed_gradient(model: &SystemModel, ensemble: &SupportEnsemble, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    GramObjective::lower_bound(model, ensemble)?
        .value_and_gradient(&symmetrize(q))
        .map(|r| r.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityResiduals {
    /// `P − Tr(C Q)`; nonnegative when the power constraint holds.
    pub power_slack: f64,
    pub min_eigenvalue: f64,
}

/// A symmetric PSD Gram matrix with its objective value.
#[derive(Debug, Clone)]
pub struct GramCandidate {
    pub q: DMatrix<f64>,
    pub objective: f64,
    pub residuals: FeasibilityResiduals,
}

impl GramCandidate {
    pub fn new(model: &SystemModel, q: DMatrix<f64>, objective: f64) -> Self {
        let q = symmetrize(&q);
        let residuals = FeasibilityResiduals {
            power_slack: model.power() - (model.power_weight() * &q).trace(),
            min_eigenvalue: min_eigenvalue(&q),
        };
        Self { q, objective, residuals }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    /// Scale-free stationarity residual `‖Π(X − s̄∇) − X‖/‖X‖`.
    pub gradient_norm: f64,
    /// Used fraction of the power budget, `Tr(C Q)/P`.
    pub power_used: f64,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub iterates: Vec<IterateRecord>,
    pub termination: Termination,
}

impl SolverTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,step,gradient_norm,power_used")?;
        for r in &self.iterates {
            writeln!(w, "{},{},{},{},{}", r.iteration, r.objective, r.step, r.gradient_norm, r.power_used)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// Barzilai–Borwein step with Armijo backtracking.
    BarzilaiBorwein,
    /// Fixed step (relative to the natural scale `‖X₀‖/‖∇₀‖`) with backtracking.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stationarity tolerance on the scale-free residual.
    pub tol: f64,
    /// Stop when the decrease over `stall_window` iterations falls below
    /// `stall_tol` times the total decrease so far.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub armijo: f64,
    pub step_policy: StepPolicy,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-9,
            stall_window: 10,
            stall_tol: 1e-12,
            armijo: 1e-4,
            step_policy: StepPolicy::BarzilaiBorwein,
        }
    }
}

/// Solves the relaxed lower-bound problem for `model` over `ensemble`.
pub fn solve_sdr(
    model: &SystemModel,
    ensemble: &SupportEnsemble,
    options: &SolverOptions,
) -> Result<(GramCandidate, SolverTrace)> {
    let obj = GramObjective::lower_bound(model, ensemble)?;
    solve_gram_problem(model, &obj, options)
}

/// Progress has hit rounding level; that counts as convergence when the
/// stationarity residual is already close to the tolerance.
fn stall_outcome(residual: f64, tol: f64) -> Termination {
    if residual < 1e3 * tol {
        Termination::Converged
    } else {
        Termination::Stalled
    }
}

/// Minimizes `objective` over `{Q ⪰ 0, Tr((H R_x Hᵀ + σ_v² I) Q) ≤ P}`.
pub fn solve_gram_problem(
    model: &SystemModel,
    objective: &GramObjective<'_>,
    options: &SolverOptions,
) -> Result<(GramCandidate, SolverTrace)> {
    let p = model.power();
    let c = model.power_weight();
    let (c_half, c_inv_half) = spd_sqrt_pair(&c, "power weighting H R_x Hᵀ + σ_v² I")?;
    let to_q = |x: &DMatrix<f64>| symmetrize(&(&c_inv_half * x * &c_inv_half));
    let project = |y: &DMatrix<f64>| {
        let (vals, vecs) = sym_eigen_desc(y);
        from_eigen(&project_capped_simplex(&vals, p), &vecs)
    };
    let eval = |x: &DMatrix<f64>| -> Result<(f64, DMatrix<f64>)> {
        let (f, gq) = objective.value_and_gradient(&to_q(x))?;
        Ok((f, symmetrize(&(&c_inv_half * gq * &c_inv_half))))
    };

    let l = c.nrows();
    let mut x = symmetrize(&(&c_half * DMatrix::<f64>::identity(l, l) * &c_half)) * (p / c.trace());
    let (mut f, mut grad) = eval(&x)?;
    let f0 = f;
    let gnorm0 = grad.norm();
    let mut iterates = Vec::new();
    if gnorm0 == 0.0 {
        iterates.push(IterateRecord { iteration: 0, objective: f, step: 0.0, gradient_norm: 0.0, power_used: x.trace() / p });
        let cand = GramCandidate::new(model, to_q(&x), f);
        return Ok((cand, SolverTrace { iterates, termination: Termination::Converged }));
    }
    let scale = x.norm() / gnorm0;
    let (s_min, s_max) = (scale * 1e-10, scale * 1e10);
    let mut step = match options.step_policy {
        StepPolicy::BarzilaiBorwein => scale,
        StepPolicy::Fixed(s) => s * scale,
    };
    let mut history = vec![f];
    let mut termination = Termination::MaxIter;

    for it in 0..options.max_iter {
        let residual = (project(&(&x - &grad * scale)) - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
        iterates.push(IterateRecord {
            iteration: it,
            objective: f,
            step,
            gradient_norm: residual,
            power_used: x.trace() / p,
        });
        if residual < options.tol {
            termination = Termination::Converged;
            break;
        }
        let d = project(&(&x - &grad * step)) - &x;
        let slope = frob_dot(&grad, &d);
        if !(slope < 0.0) {
            termination = stall_outcome(residual, options.tol);
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &d * t;
            let (fc, gc) = eval(&cand)?;
            if fc <= f + options.armijo * t * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            termination = stall_outcome(residual, options.tol);
            break;
        };
        if let StepPolicy::BarzilaiBorwein = options.step_policy {
            let dx = &x_new - &x;
            let dg = &g_new - &grad;
            let curv = frob_dot(&dx, &dg);
            step = if curv > 0.0 { (frob_dot(&dx, &dx) / curv).clamp(s_min, s_max) } else { s_max };
        }
        x = x_new;
        f = f_new;
        grad = g_new;
        history.push(f);
        let w = options.stall_window;
        if history.len() > w {
            let recent = history[history.len() - 1 - w] - f;
            if recent <= options.stall_tol * (f0 - f).abs() {
                let last = iterates.last().map_or(f64::INFINITY, |r| r.gradient_norm);
                iterates.push(IterateRecord {
                    iteration: it + 1,
                    objective: f,
                    step,
                    gradient_norm: f64::NAN,
                    power_used: x.trace() / p,
                });
                termination = stall_outcome(last, options.tol);
                break;
            }
        }
    }
    if termination != Termination::Converged {
        log::warn!("Gram-space solver stopped with {termination:?} after {} iterations", iterates.len());
    }
    let cand = GramCandidate::new(model, to_q(&x), f);
    Ok((cand, SolverTrace { iterates, termination }))
}

/// Local refinement of a rank-`M` factor: projected gradient on `A` itself,
/// in whitened coordinates `B = A C^{1/2}` where the power constraint is the
/// ball `‖B‖_F² ≤ P`. The objective is nonconvex in `A`; the result is never
/// worse than the starting point.
pub fn refine_factor(
    model: &SystemModel,
    objective: &GramObjective<'_>,
    a0: &DMatrix<f64>,
    options: &SolverOptions,
) -> Result<(DMatrix<f64>, SolverTrace)> {
    let p = model.power();
    let (c_half, c_inv_half) = spd_sqrt_pair(&model.power_weight(), "power weighting H R_x Hᵀ + σ_v² I")?;
    let project = |b: DMatrix<f64>| {
        let nsq = b.norm_squared();
        if nsq > p {
            b * (p / nsq).sqrt()
        } else {
            b
        }
    };
    let eval = |b: &DMatrix<f64>| -> Result<(f64, DMatrix<f64>)> {
        let a = b * &c_inv_half;
        let (f, gq) = objective.value_and_gradient(&symmetrize(&(a.transpose() * &a)))?;
        Ok((f, a * gq * &c_inv_half * 2.0))
    };
    let mut b = project(a0 * &c_half);
    let (mut f, mut grad) = eval(&b)?;
    let f0 = f;
    let gnorm0 = grad.norm();
    let mut iterates = Vec::new();
    let scale = if gnorm0 > 0.0 { b.norm().max(p.sqrt()) / gnorm0 } else { 0.0 };
    let mut step = scale;
    let mut history = vec![f];
    let mut termination = Termination::MaxIter;
    for it in 0..options.max_iter {
        let residual = if scale > 0.0 {
            (project(&b - &grad * scale) - &b).norm() / b.norm().max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        iterates.push(IterateRecord { iteration: it, objective: f, step, gradient_norm: residual, power_used: b.norm_squared() / p });
        if residual < options.tol {
            termination = Termination::Converged;
            break;
        }
        let d = project(&b - &grad * step) - &b;
        let slope = frob_dot(&grad, &d);
        if !(slope < 0.0) {
            termination = Termination::Stalled;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &b + &d * t;
            let (fc, gc) = eval(&cand)?;
            if fc <= f + options.armijo * t * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((b_new, f_new, g_new)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let db = &b_new - &b;
        let dg = &g_new - &grad;
        let curv = frob_dot(&db, &dg);
        step = if curv > 0.0 { (frob_dot(&db, &db) / curv).clamp(scale * 1e-10, scale * 1e10) } else { scale * 1e10 };
        b = b_new;
        f = f_new;
        grad = g_new;
        history.push(f);
        let w = options.stall_window;
        if history.len() > w && history[history.len() - 1 - w] - f <= options.stall_tol * (f0 - f).abs().max(f.abs() * 1e-3) {
            termination = Termination::Converged;
            break;
        }
    }
    Ok((b * &c_inv_half, SolverTrace { iterates, termination }))
}

/// Slack variables of the LMI form: one `K×K` matrix per support and `Y`.
#[derive(Debug, Clone)]
pub struct SlackWitness {
    pub x_s: Vec<DMatrix<f64>>,
    pub y: DMatrix<f64>,
}

impl SlackWitness {
    /// Schur-complement witness that makes every LMI tight:
    /// `Y = (g²/σ_w²) Q (cI + Q)⁻¹ Q` and `X_S = (R⁻¹ + D_Sᵀ((g²/σ_w²)Q − Y)D_S)⁻¹`.
    pub fn canonical(model: &SystemModel, ensemble: &SupportEnsemble, q: &DMatrix<f64>) -> Result<Self> {
        check_sigma_w(model)?;
        let l = model.l();
        let q = symmetrize(q);
        let a = model.csnr();
        let y = if model.sigma_v() > 0.0 {
            let c = model.sigma_w().powi(2) / (model.g().powi(2) * model.sigma_v().powi(2));
            let shifted = DMatrix::<f64>::identity(l, l) * c + &q;
            let inv = spd_inverse(&shifted, "cI + Q")?;
            symmetrize(&(&q * inv * &q * a))
        } else {
            DMatrix::zeros(l, l)
        };
        let v = symmetrize(&(model.h().transpose() * (&q * a - &y) * model.h()));
        let k = model.k();
        let mut x_s = Vec::with_capacity(ensemble.len());
        let mut buf = vec![0.0; k * k];
        for s in ensemble.iter() {
            gather_principal(&v, s, &mut buf);
            let m = DMatrix::from_row_slice(k, k, &buf) + model.r_inv();
            x_s.push(spd_inverse(&m, "posterior precision")?);
        }
        Ok(Self { x_s, y })
    }
}

/// Outcome of checking a witness against the LMI constraints.
#[derive(Debug, Clone)]
pub struct LmiReport {
    /// Minimum eigenvalue of each support block `[[R⁻¹ + D_Sᵀ(aQ − Y)D_S, I], [I, X_S]]`.
    pub support_block_min_eig: Vec<f64>,
    /// Minimum eigenvalue of `[[Y, (g/σ_w)Q], [(g/σ_w)Q, cI + Q]]`; `None` when `σ_v = 0`.
    pub y_block_min_eig: Option<f64>,
    pub q_min_eig: f64,
    pub power_slack: f64,
    pub sum_trace_x: f64,
    /// `|Ω|` times the relaxed objective at `Q`.
    pub objective_total: f64,
}

impl LmiReport {
    pub fn min_support_eig(&self) -> f64 {
        self.support_block_min_eig.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// All blocks PSD and power feasible within `tol` (scaled by the block
    /// magnitudes), and `Σ Tr(X_S)` not below the objective total.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.min_support_eig() >= -tol
            && self.y_block_min_eig.map_or(true, |e| e >= -tol)
            && self.q_min_eig >= -tol
            && self.power_slack >= -tol
            && self.sum_trace_x >= self.objective_total - tol * self.objective_total.abs().max(1.0)
    }
}

/// Checks both LMI families, PSD-ness and the power constraint for `q`.
pub fn verify_lmi_witness(
    model: &SystemModel,
    ensemble: &SupportEnsemble,
    q: &DMatrix<f64>,
    witness: &SlackWitness,
) -> Result<LmiReport> {
    check_sigma_w(model)?;
    let l = model.l();
    let k = model.k();
    if q.nrows() != l || q.ncols() != l {
        return Err(Error::dim("Gram matrix Q", format!("{l}×{l}"), format!("{}×{}", q.nrows(), q.ncols())));
    }
    if witness.y.nrows() != l || witness.y.ncols() != l {
        return Err(Error::dim("slack Y", format!("{l}×{l}"), format!("{}×{}", witness.y.nrows(), witness.y.ncols())));
    }
    if witness.x_s.len() != ensemble.len() {
        return Err(Error::dim("slack X_S count", ensemble.len(), witness.x_s.len()));
    }
    let q = symmetrize(q);
    let a = model.csnr();
    let v = symmetrize(&(model.h().transpose() * (&q * a - &witness.y) * model.h()));
    let mut buf = vec![0.0; k * k];
    let mut support_block_min_eig = Vec::with_capacity(ensemble.len());
    let mut trace_sum = NeumaierSum::default();
    for (s, xs) in ensemble.iter().zip(&witness.x_s) {
        if xs.nrows() != k || xs.ncols() != k {
            return Err(Error::dim("slack X_S", format!("{k}×{k}"), format!("{}×{}", xs.nrows(), xs.ncols())));
        }
        gather_principal(&v, s, &mut buf);
        let top = DMatrix::from_row_slice(k, k, &buf) + model.r_inv();
        let mut block = DMatrix::zeros(2 * k, 2 * k);
        block.view_mut((0, 0), (k, k)).copy_from(&top);
        block.view_mut((0, k), (k, k)).fill_with_identity();
        block.view_mut((k, 0), (k, k)).fill_with_identity();
        block.view_mut((k, k), (k, k)).copy_from(xs);
        support_block_min_eig.push(min_eigenvalue(&block));
        trace_sum.add(xs.trace());
    }
    let y_block_min_eig = if model.sigma_v() > 0.0 {
        let c = model.sigma_w().powi(2) / (model.g().powi(2) * model.sigma_v().powi(2));
        let off = &q * (model.g() / model.sigma_w());
        let mut block = DMatrix::zeros(2 * l, 2 * l);
        block.view_mut((0, 0), (l, l)).copy_from(&witness.y);
        block.view_mut((0, l), (l, l)).copy_from(&off);
        block.view_mut((l, 0), (l, l)).copy_from(&off);
        block
            .view_mut((l, l), (l, l))
            .copy_from(&(DMatrix::<f64>::identity(l, l) * c + &q));
        Some(min_eigenvalue(&block))
    } else {
        None
    };
    let objective = GramObjective::lower_bound(model, ensemble)?.value(&q)?;
    Ok(LmiReport {
        support_block_min_eig,
        y_block_min_eig,
        q_min_eig: min_eigenvalue(&q),
        power_slack: model.power() - (model.power_weight() * &q).trace(),
        sum_trace_x: trace_sum.value(),
        objective_total: objective * ensemble.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse_lower_bound;
    use crate::model::exponential_correlation;

    fn model(sv: f64) -> SystemModel {
        SystemModel::builder(5, 2, 2)
            .source_covariance(exponential_correlation(2, 0.4).unwrap())
            .gain(0.6)
            .sigma_v(sv)
            .sigma_w(0.3)
            .power(4.0)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_gram_gives_prior_trace() {
        let m = model(0.2);
        let e = SupportEnsemble::full(5, 2).unwrap();
        let f = relaxed_objective(&m, &e, &DMatrix::zeros(5, 5)).unwrap();
        assert!((f - 2.0).abs() < 1e-14);
    }

    #[test]
    fn matches_bound_at_factored_gram() {
        for sv in [0.0, 0.25] {
            let m = model(sv);
            let e = SupportEnsemble::full(5, 2).unwrap();
            let a = DMatrix::from_fn(2, 5, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.17);
            let q = a.transpose() * &a;
            let f = relaxed_objective(&m, &e, &q).unwrap();
            let b = mse_lower_bound(&m, &e, &a).unwrap().value;
            assert!((f - b).abs() < 1e-12 * b, "sv={sv}: {f} vs {b}");
        }
    }

    #[test]
    fn scalar_sensor_noise_free_case() {
        let (sx2, g, sw, q) = (1.4, 0.8, 0.5, 2.2);
        let m = SystemModel::builder(1, 1, 1)
            .source_covariance(DMatrix::from_element(1, 1, sx2))
            .gain(g)
            .sigma_w(sw)
            .build()
            .unwrap();
        let e = SupportEnsemble::full(1, 1).unwrap();
        let qm = DMatrix::from_element(1, 1, q);
        let cg = g * g / (sw * sw);
        let f = relaxed_objective(&m, &e, &qm).unwrap();
        assert!((f - 1.0 / (1.0 / sx2 + cg * q)).abs() < 1e-14);
        let d = relaxed_gradient(&m, &e, &qm).unwrap()[(0, 0)];
        let want = -cg / (1.0 / sx2 + cg * q).powi(2);
        assert!((d - want).abs() < 1e-13 * want.abs());
    }

    #[test]
    fn rejects_indefinite_gram() {
        let m = model(0.2);
        let e = SupportEnsemble::full(5, 2).unwrap();
        let mut q = DMatrix::identity(5, 5);
        q[(0, 0)] = -1.0;
        assert!(relaxed_objective(&m, &e, &q).is_err());
        let no_channel_noise = m.with_noise(0.2, 0.0).unwrap();
        assert!(relaxed_objective(&no_channel_noise, &e, &DMatrix::identity(5, 5)).is_err());
    }

    #[test]
    fn trivial_witness_examples() {
        let m = model(0.2);
        let e = SupportEnsemble::full(5, 2).unwrap();
        let zero = DMatrix::zeros(5, 5);
        let w = SlackWitness { x_s: vec![m.r().clone(); e.len()], y: zero.clone() };
        let rep = verify_lmi_witness(&m, &e, &zero, &w).unwrap();
        assert!(rep.is_feasible(1e-10));
        assert!((rep.sum_trace_x - e.len() as f64 * m.r().trace()).abs() < 1e-12);

        let q = DMatrix::identity(5, 5) * 0.3;
        let bad = SlackWitness::canonical(&m, &e, &q).map(|mut w| {
            w.y = DMatrix::zeros(5, 5);
            w
        });
        let rep = verify_lmi_witness(&m, &e, &q, &bad.unwrap()).unwrap();
        assert!(rep.y_block_min_eig.unwrap() < -1e-3);
    }

    #[test]
    fn solver_trace_is_monotone() {
        let m = model(0.1);
        let e = SupportEnsemble::full(5, 2).unwrap();
        let (cand, trace) = solve_sdr(&m, &e, &SolverOptions::default()).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        for w in trace.iterates.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-15);
        }
        assert!(cand.residuals.power_slack.abs() < 1e-9 * m.power());
        assert!(cand.residuals.min_eigenvalue > -1e-10);
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("iteration,objective"));
    }
}
