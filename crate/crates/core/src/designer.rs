//! Sensing-matrix designs.
//!
//! The main design solves the relaxed Gram-space problem, truncates the
//! solution to rank `M`, refines that factor locally and rescales it to meet
//! the power budget with equality. Closed forms cover the special cases with
//! explicit optima, and the baselines (LMMSE upper bound, Gaussian, tight
//! frame, randomization) are the comparison designs used by the experiments.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt_pair, sym_eigen_asc, sym_eigen_desc, symmetrize};
use crate::metrics::{mse_lower_bound, transmit_power};
use crate::model::{is_identity, is_scaled_identity, EnsembleKind, SupportEnsemble, SystemModel};
use crate::rng::{derive_seed, tag, SimRng};
use crate::sdr::{
    refine_factor, solve_gram_problem, solve_sdr, GramCandidate, GramObjective, SolverOptions, SolverTrace, Termination,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClosedFormCase {
    /// White source, no channel.
    I,
    /// White source, square channel, no sensor noise.
    II,
    /// White source, no channel, noiseless link.
    III,
    /// No sensor noise, vanishing channel SNR.
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignMethod {
    LowerBound,
    UpperBound,
    Gaussian,
    TightFrame,
    Randomized,
    ClosedForm(ClosedFormCase),
}

impl DesignMethod {
    /// The designs compared in the experiments, in plotting order.
    pub const BASELINES: [DesignMethod; 3] = [DesignMethod::UpperBound, DesignMethod::Gaussian, DesignMethod::TightFrame];

    pub fn name(self) -> &'static str {
        match self {
            DesignMethod::LowerBound => "lower-bound",
            DesignMethod::UpperBound => "upper-bound",
            DesignMethod::Gaussian => "gaussian",
            DesignMethod::TightFrame => "tight-frame",
            DesignMethod::Randomized => "randomization",
            DesignMethod::ClosedForm(ClosedFormCase::I) => "closed-form-1",
            DesignMethod::ClosedForm(ClosedFormCase::II) => "closed-form-2",
            DesignMethod::ClosedForm(ClosedFormCase::III) => "closed-form-3",
            DesignMethod::ClosedForm(ClosedFormCase::IV) => "closed-form-4",
        }
    }
}

impl fmt::Display for DesignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "lower-bound" | "lb" => DesignMethod::LowerBound,
            "upper-bound" | "ub" => DesignMethod::UpperBound,
            "gaussian" => DesignMethod::Gaussian,
            "tight-frame" => DesignMethod::TightFrame,
            "randomization" | "randomized" => DesignMethod::Randomized,
            "closed-form-1" => DesignMethod::ClosedForm(ClosedFormCase::I),
            "closed-form-2" => DesignMethod::ClosedForm(ClosedFormCase::II),
            "closed-form-3" => DesignMethod::ClosedForm(ClosedFormCase::III),
            "closed-form-4" => DesignMethod::ClosedForm(ClosedFormCase::IV),
            other => return Err(Error::Config(format!("unknown design method `{other}`"))),
        })
    }
}

/// An `M×L` sensing matrix with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub a: DMatrix<f64>,
    pub method: DesignMethod,
    pub power_normalized: bool,
    pub seed: Option<u64>,
}

impl SensingMatrix {
    pub fn new(a: DMatrix<f64>, method: DesignMethod) -> Self {
        Self { a, method, power_normalized: false, seed: None }
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn l(&self) -> usize {
        self.a.ncols()
    }

    /// `σ_min > 1e-10·σ_max` over the `M` singular values.
    pub fn is_full_row_rank(&self) -> bool {
        let sv = self.a.singular_values();
        let max = sv.max();
        let min = sv.min();
        self.a.nrows() <= self.a.ncols() && max > 0.0 && min > 1e-10 * max
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.a.transpose() * &self.a
    }

    /// Plain-text form: a `M L method seed` header (seed `-` when absent)
    /// followed by one whitespace-separated row per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        writeln!(w, "{} {} {} {}", self.m(), self.l(), self.method, seed)?;
        for i in 0..self.m() {
            let row: Vec<String> = (0..self.l()).map(|j| format!("{}", self.a[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty matrix file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!("bad matrix header `{header}`")));
        }
        let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Config(format!("bad dimension `{s}`")));
        let (m, l) = (parse_dim(fields[0])?, parse_dim(fields[1])?);
        let method: DesignMethod = fields[2].parse()?;
        let seed = match fields[3] {
            "-" => None,
            s => Some(s.parse::<u64>().map_err(|_| Error::Config(format!("bad seed `{s}`")))?),
        };
        let mut data = Vec::with_capacity(m * l);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| Error::Config(format!("bad matrix entry `{tok}`")))?);
            }
        }
        if data.len() != m * l {
            return Err(Error::Config(format!("matrix file has {} entries, header says {m}×{l}", data.len())));
        }
        Ok(Self { a: DMatrix::from_row_slice(m, l, &data), method, power_normalized: false, seed })
    }

    /// Comma-separated rows, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.m() {
            let row: Vec<String> = (0..self.l()).map(|j| format!("{}", self.a[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Options shared by the optimization-based designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub solver: SolverOptions,
    /// Local refinement of the truncated factor; `None` keeps the plain
    /// truncation.
    pub refine: Option<SolverOptions>,
    /// With a sampled ensemble, refinement draws a fresh batch of the same
    /// size every this many iterations. A fixed small sample is easy to
    /// overfit: columns of supports that never co-occur in it collapse.
    pub resample_every: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            refine: Some(SolverOptions { max_iter: 2000, tol: 1e-7, stall_tol: 1e-7, ..SolverOptions::default() }),
            resample_every: 2,
        }
    }
}

impl DesignOptions {
    /// Relaxation, truncation and rescaling only.
    pub fn truncation_only() -> Self {
        Self { refine: None, ..Self::default() }
    }
}

/// A designed matrix together with the relaxed solution it came from.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub matrix: SensingMatrix,
    pub gram: GramCandidate,
    pub trace: SolverTrace,
    pub refine_trace: Option<SolverTrace>,
}

/// Best rank-`m` factor `A = [diag(√γ₁..√γ_m) 0]·U_qᵀ` of a PSD `q` (left
/// unitary fixed to the identity).
pub fn low_rank_factor(q: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    let l = q.nrows();
    if q.ncols() != l {
        return Err(Error::dim("Gram matrix", "square", format!("{}×{}", q.nrows(), q.ncols())));
    }
    if m == 0 || m > l {
        return Err(Error::InvalidParameter(format!("rank {m} outside 1..={l}")));
    }
    let (vals, vecs) = sym_eigen_desc(&symmetrize(q));
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let rank = vals.iter().filter(|&&v| v > 1e-10 * top && v > 0.0).count();
    if rank < m {
        log::warn!("Gram matrix has numerical rank {rank} < {m}; padding with zero singular values");
    }
    let mut a = DMatrix::zeros(m, l);
    for i in 0..m {
        let s = if i < rank { vals[i].sqrt() } else { 0.0 };
        for j in 0..l {
            a[(i, j)] = s * vecs[(j, i)];
        }
    }
    Ok(a)
}

/// Scales `a` so that its transmit power equals `P`.
pub fn power_rescale(model: &SystemModel, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = transmit_power(model, a)?;
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidParameter("cannot rescale a matrix with zero transmit power".into()));
    }
    Ok(a * (model.power() / p).sqrt())
}

fn finish(model: &SystemModel, a: DMatrix<f64>, method: DesignMethod) -> Result<SensingMatrix> {
    let a = power_rescale(model, &a)?;
    Ok(SensingMatrix { a, method, power_normalized: true, seed: None })
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg.to_string()))
    }
}

fn check_m(model: &SystemModel) -> Result<()> {
    require(model.m() <= model.l(), "design needs M <= L")
}

/// Relaxed solve, rank-`M` truncation and power rescaling.
pub fn design_lower_bound(
    model: &SystemModel,
    ensemble: &SupportEnsemble,
    options: &DesignOptions,
) -> Result<DesignOutcome> {
    check_m(model)?;
    let (gram, trace) = solve_sdr(model, ensemble, &options.solver)?;
    let a = power_rescale(model, &low_rank_factor(&gram.q, model.m())?)?;
    let (a, refine_trace) = match (ensemble.kind(), &options.refine) {
        (EnsembleKind::Sampled { count, seed }, Some(opts)) if options.resample_every > 0 => {
            let (a, trace) = refine_resampled(model, ensemble, count, seed, a, opts, options.resample_every)?;
            (a, Some(trace))
        }
        _ => refine(model, &GramObjective::lower_bound(model, ensemble)?, a, options)?,
    };
    let matrix = finish(model, a, DesignMethod::LowerBound)?;
    Ok(DesignOutcome { matrix, gram, trace, refine_trace })
}

fn refine(
    model: &SystemModel,
    obj: &GramObjective<'_>,
    a: DMatrix<f64>,
    options: &DesignOptions,
) -> Result<(DMatrix<f64>, Option<SolverTrace>)> {
    match &options.refine {
        Some(opts) => {
            let (refined, trace) = refine_factor(model, obj, &a, opts)?;
            Ok((refined, Some(trace)))
        }
        None => Ok((a, None)),
    }
}

fn refine_resampled(
    model: &SystemModel,
    ensemble: &SupportEnsemble,
    count: usize,
    seed: u64,
    mut a: DMatrix<f64>,
    opts: &SolverOptions,
    every: usize,
) -> Result<(DMatrix<f64>, SolverTrace)> {
    let round_opts = SolverOptions { max_iter: every, ..*opts };
    let mut iterates = Vec::with_capacity(opts.max_iter);
    for round in 0..opts.max_iter.div_ceil(every) {
        let batch = SupportEnsemble::sampled(ensemble.n(), ensemble.k(), count, derive_seed(seed, &[tag::REFINE, round as u64]))?;
        let (next, trace) = refine_factor(model, &GramObjective::lower_bound(model, &batch)?, &a, &round_opts)?;
        a = next;
        let offset = iterates.len();
        iterates.extend(trace.iterates.into_iter().map(|mut r| {
            r.iteration += offset;
            r
        }));
    }
    Ok((a, SolverTrace { iterates, termination: Termination::MaxIter }))
}

/// Minimizer of the LMMSE error over power-feasible matrices.
pub fn design_upper_bound(model: &SystemModel, options: &DesignOptions) -> Result<DesignOutcome> {
    check_m(model)?;
    let obj = GramObjective::lmmse(model)?;
    let (gram, trace) = solve_gram_problem(model, &obj, &options.solver)?;
    let a = power_rescale(model, &low_rank_factor(&gram.q, model.m())?)?;
    let (a, refine_trace) = refine(model, &obj, a, options)?;
    let matrix = finish(model, a, DesignMethod::UpperBound)?;
    Ok(DesignOutcome { matrix, gram, trace, refine_trace })
}

fn truncated_identity(m: usize, l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, l, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// White source, `H = I`: the tight frame `[I_M 0]` at full power.
pub fn closed_form_case1(model: &SystemModel) -> Result<SensingMatrix> {
    check_m(model)?;
    require(is_scaled_identity(model.r()), "case I needs a white source covariance")?;
    require(is_identity(model.h()), "case I needs H = I")?;
    finish(model, truncated_identity(model.m(), model.l()), DesignMethod::ClosedForm(ClosedFormCase::I))
}

/// White source, square invertible `H`, `σ_v = 0`: inverts the `M` weakest
/// channel directions, `A ∝ [Γ_a 0]U_hᵀ` with `Γ_a = diag(1/γ_h1, …, 1/γ_hM)`.
pub fn closed_form_case2(model: &SystemModel) -> Result<SensingMatrix> {
    check_m(model)?;
    require(is_scaled_identity(model.r()), "case II needs a white source covariance")?;
    require(model.sigma_v() == 0.0, "case II needs sigma_v = 0")?;
    let h = model.h();
    require(h.nrows() == h.ncols(), "case II needs a square channel")?;
    let (vals, u) = sym_eigen_asc(&symmetrize(&(h * h.transpose())));
    let sv: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    let largest = sv.last().copied().unwrap_or(0.0);
    if !(sv[0] > 1e-12 * largest) {
        return Err(Error::NumericalSingularity("channel H is singular".into()));
    }
    debug_assert!(sv.windows(2).all(|w| w[0] <= w[1]));
    let l = model.l();
    let a = DMatrix::from_fn(model.m(), l, |i, j| u[(j, i)] / sv[i]);
    finish(model, a, DesignMethod::ClosedForm(ClosedFormCase::II))
}

/// Noiseless link, white source, `H = I`: `A ∝ [I_M 0]`.
pub fn closed_form_case3(model: &SystemModel) -> Result<SensingMatrix> {
    check_m(model)?;
    require(model.sigma_w() == 0.0, "case III needs sigma_w = 0")?;
    require(is_scaled_identity(model.r()), "case III needs a white source covariance")?;
    require(is_identity(model.h()), "case III needs H = I")?;
    finish(model, truncated_identity(model.m(), model.l()), DesignMethod::ClosedForm(ClosedFormCase::III))
}

/// The low-CSNR Gram matrix `Q* = (P/γ_z1)·T^{-1/2} u uᵀ T^{-1/2}` with
/// `T = mean_S D_S R² D_Sᵀ` and `(γ_z1, u)` the smallest eigenpair of
/// `Z = T^{-1/2}(H R_x Hᵀ + σ_v² I)T^{-1/2}`.
pub fn case4_gram(model: &SystemModel, ensemble: &SupportEnsemble) -> Result<DMatrix<f64>> {
    require(model.sigma_v() == 0.0, "case IV needs sigma_v = 0")?;
    let n = model.n();
    let r2 = model.r() * model.r();
    let mut inner = DMatrix::<f64>::zeros(n, n);
    for s in ensemble.iter() {
        for (i, &si) in s.iter().enumerate() {
            for (j, &sj) in s.iter().enumerate() {
                inner[(si, sj)] += r2[(i, j)];
            }
        }
    }
    inner /= ensemble.len() as f64;
    let t = symmetrize(&(model.h() * inner * model.h().transpose()));
    let (_, t_inv_half) = spd_sqrt_pair(&t, "case IV matrix T")?;
    let z = symmetrize(&(&t_inv_half * model.power_weight() * &t_inv_half));
    let (vals, vecs) = sym_eigen_asc(&z);
    let gamma = vals[0];
    if !(gamma > 0.0) {
        return Err(Error::NumericalSingularity("case IV matrix Z is singular".into()));
    }
    let u = vecs.column(0);
    let w = &t_inv_half * u;
    Ok(symmetrize(&(&w * w.transpose() * (model.power() / gamma))))
}

/// Rank-one design for `σ_v = 0` and vanishing channel SNR.
pub fn closed_form_case4(model: &SystemModel, ensemble: &SupportEnsemble) -> Result<SensingMatrix> {
    check_m(model)?;
    let q = case4_gram(model, ensemble)?;
    let a = low_rank_factor(&q, model.m())?;
    finish(model, a, DesignMethod::ClosedForm(ClosedFormCase::IV))
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// I.i.d. standard normal entries, rescaled to power `P`.
pub fn design_gaussian(model: &SystemModel, rng: &mut SimRng) -> Result<SensingMatrix> {
    check_m(model)?;
    let a = gaussian_matrix(model.m(), model.l(), 1.0, rng);
    finish(model, a, DesignMethod::Gaussian)
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`).
pub fn haar_orthogonal(n: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, 1.0, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `A = U_a [I_M 0] V_aᵀ` with Haar-random `U_a`, `V_a`.
pub fn design_tight_frame(model: &SystemModel, rng: &mut SimRng) -> Result<SensingMatrix> {
    check_m(model)?;
    let (m, l) = (model.m(), model.l());
    let u = haar_orthogonal(m, rng);
    let v = haar_orthogonal(l, rng);
    let a = u * v.columns(0, m).transpose();
    finish(model, a, DesignMethod::TightFrame)
}

/// Randomized factorization: candidates `A = V Γ^{1/2} U_qᵀ` with `V` having
/// i.i.d. `N(0, 1/M)` entries (so `E[AᵀA] = Q`), each rescaled to power `P`;
/// returns the candidate with the smallest oracle bound (lowest index on ties).
pub fn design_randomized(
    model: &SystemModel,
    ensemble: &SupportEnsemble,
    q: &GramCandidate,
    realizations: usize,
    rng: &mut SimRng,
) -> Result<SensingMatrix> {
    check_m(model)?;
    if realizations == 0 {
        return Err(Error::InvalidParameter("randomization needs at least one realization".into()));
    }
    let factor = randomization_factor(&q.q);
    let (m, l) = (model.m(), model.l());
    let std = 1.0 / (m as f64).sqrt();
    let candidates: Vec<DMatrix<f64>> = (0..realizations)
        .map(|_| gaussian_matrix(m, l, std, rng) * &factor)
        .collect();
    let scored: Vec<Result<(DMatrix<f64>, f64)>> = candidates
        .into_par_iter()
        .map(|a| {
            let a = power_rescale(model, &a)?;
            let b = mse_lower_bound(model, ensemble, &a)?.value;
            Ok((a, b))
        })
        .collect();
    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for item in scored {
        let (a, b) = item?;
        if best.as_ref().map_or(true, |(_, bb)| b < *bb) {
            best = Some((a, b));
        }
    }
    let (a, _) = best.expect("at least one realization");
    Ok(SensingMatrix { a, method: DesignMethod::Randomized, power_normalized: true, seed: None })
}

/// `Γ^{1/2} U_qᵀ` for the eigendecomposition of `q` (negative eigenvalues clipped).
pub fn randomization_factor(q: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(&symmetrize(q));
    let half: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    DMatrix::from_fn(vals.len(), vals.len(), |i, j| half[i] * vecs[(j, i)])
}
