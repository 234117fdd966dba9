//! Monte Carlo harness: sweeps over `M`, transmit power or channel SNR,
//! builds every requested design at each point and measures the NMSE of a
//! chosen decoder over a common set of source and noise draws.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::designer::{
    closed_form_case1, closed_form_case2, closed_form_case3, closed_form_case4, design_gaussian, design_lower_bound,
    design_randomized, design_tight_frame, design_upper_bound, ClosedFormCase, DesignMethod, DesignOptions,
    SensingMatrix,
};
use crate::error::{Error, Result};
use crate::estimators::{EstimationContext, RandomOmpOptions};
use crate::metrics::{mse_lower_bound, to_db, NmseStats};
use crate::model::{draw_sparse_sample, exponential_correlation, simulate_channel, SupportEnsemble, SystemModel};
use crate::rng::{derive_seed, seeded, stream, tag};
use crate::sdr::{solve_sdr, GramCandidate};

/// Label of the analytic bound curve in the results.
pub const BOUND_LABEL: &str = "lower-bound-analytic";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Measurements,
    PowerDb,
    CsnrDb,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Measurements => "M",
            SweepVar::PowerDb => "P_dB",
            SweepVar::CsnrDb => "CSNR_dB",
        }
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" => Ok(SweepVar::Measurements),
            "p_db" | "power_db" | "p" => Ok(SweepVar::PowerDb),
            "csnr_db" | "csnr" => Ok(SweepVar::CsnrDb),
            other => Err(Error::Config(format!("unknown sweep variable `{other}` (m, p_db, csnr_db)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Omp,
    RandomOmp,
    Lmmse,
    Oracle,
    Mmse,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Omp => "omp",
            EstimatorKind::RandomOmp => "romp",
            EstimatorKind::Lmmse => "lmmse",
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Mmse => "mmse",
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "omp" => Ok(EstimatorKind::Omp),
            "romp" | "random-omp" => Ok(EstimatorKind::RandomOmp),
            "lmmse" => Ok(EstimatorKind::Lmmse),
            "oracle" => Ok(EstimatorKind::Oracle),
            "mmse" => Ok(EstimatorKind::Mmse),
            other => Err(Error::Config(format!("unknown estimator `{other}` (omp, romp, lmmse, oracle, mmse)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleSpec {
    Full,
    Sampled(usize),
}

impl fmt::Display for EnsembleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleSpec::Full => f.write_str("full"),
            EnsembleSpec::Sampled(c) => write!(f, "sampled:{c}"),
        }
    }
}

impl FromStr for EnsembleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "full" {
            return Ok(EnsembleSpec::Full);
        }
        if let Some(c) = s.strip_prefix("sampled:") {
            let count: usize = c.parse().map_err(|_| Error::Config(format!("bad ensemble size `{c}`")))?;
            if count == 0 {
                return Err(Error::Config("sampled ensemble size must be positive".into()));
            }
            return Ok(EnsembleSpec::Sampled(count));
        }
        Err(Error::Config(format!("bad ensemble `{s}` (full or sampled:<count>)")))
    }
}

/// Sweep configuration. The channel is `H = I` (so `L = N`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub n: usize,
    pub k: usize,
    /// Number of measurements when `M` is not swept.
    pub m: usize,
    pub g: f64,
    pub sigma_v: f64,
    pub sigma_w: f64,
    /// Transmit power in dB when it is not swept.
    pub power_db: f64,
    pub rho: f64,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub designs: Vec<DesignMethod>,
    pub estimator: EstimatorKind,
    pub trials: usize,
    pub seed: u64,
    pub ensemble: EnsembleSpec,
    /// Candidate count of the randomization baseline.
    pub randomizations: usize,
    pub romp: RandomOmpOptions,
    pub out_dir: PathBuf,
}

/// Keys accepted in a config file, with a short description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("name", "run name; also the .dat file stem"),
    ("n", "source dimension N (channel is H = I, so L = N)"),
    ("k", "sparsity K"),
    ("m", "measurements M when not swept"),
    ("g", "channel gain g when CSNR is not swept"),
    ("sigma_v", "sensor noise std (default 0)"),
    ("sigma_w", "channel noise std"),
    ("power_db", "transmit power P in dB when not swept"),
    ("rho", "exponential correlation coefficient of R"),
    ("sweep", "m | p_db | csnr_db"),
    ("values", "comma-separated ascending sweep values"),
    ("designs", "comma-separated: lower-bound, upper-bound, gaussian, tight-frame, randomization, closed-form-1..4"),
    ("estimator", "omp | romp | lmmse | oracle | mmse"),
    ("trials", "Monte Carlo trials per point"),
    ("seed", "master seed"),
    ("ensemble", "full | sampled:<count>"),
    ("randomizations", "candidates for the randomization baseline"),
    ("romp_passes", "random-OMP passes"),
    ("romp_temperature", "random-OMP score temperature (0 = greedy)"),
    ("out", "output directory"),
];

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    fn base(name: &str) -> Self {
        Self {
            name: name.to_string(),
            n: 36,
            k: 3,
            m: 18,
            g: 0.5,
            sigma_v: 0.0,
            sigma_w: 0.1,
            power_db: 10.0,
            rho: 0.25,
            sweep: SweepVar::Measurements,
            values: vec![18.0],
            designs: vec![
                DesignMethod::LowerBound,
                DesignMethod::UpperBound,
                DesignMethod::Gaussian,
                DesignMethod::TightFrame,
            ],
            estimator: EstimatorKind::RandomOmp,
            trials: 500,
            seed: 1,
            ensemble: EnsembleSpec::Full,
            randomizations: 1000,
            romp: RandomOmpOptions::default(),
            out_dir: PathBuf::from("results").join(name),
        }
    }

    /// NMSE versus `M`.
    pub fn fig2() -> Self {
        Self {
            values: vec![6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0, 32.0, 35.0],
            ..Self::base("fig2")
        }
    }

    /// NMSE versus transmit power at `M = 18`.
    pub fn fig3() -> Self {
        Self {
            sweep: SweepVar::PowerDb,
            values: vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            ..Self::base("fig3")
        }
    }

    /// NMSE versus channel SNR with the OMP decoder.
    pub fn fig4() -> Self {
        Self {
            rho: 0.5,
            sweep: SweepVar::CsnrDb,
            values: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            estimator: EstimatorKind::Omp,
            ..Self::base("fig4")
        }
    }

    /// Larger system with a sampled support ensemble and the randomization baseline.
    pub fn fig5() -> Self {
        Self {
            n: 100,
            k: 5,
            rho: 0.75,
            values: vec![20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0],
            ensemble: EnsembleSpec::Sampled(2500),
            designs: vec![
                DesignMethod::LowerBound,
                DesignMethod::UpperBound,
                DesignMethod::Gaussian,
                DesignMethod::TightFrame,
                DesignMethod::Randomized,
            ],
            ..Self::base("fig5")
        }
    }

    pub fn canned(name: &str) -> Result<Self> {
        match name {
            "fig2" => Ok(Self::fig2()),
            "fig3" => Ok(Self::fig3()),
            "fig4" => Ok(Self::fig4()),
            "fig5" => Ok(Self::fig5()),
            other => Err(Error::Config(format!("unknown figure `{other}` (fig2, fig3, fig4, fig5)"))),
        }
    }

    /// Parses `key = value` lines (`#` starts a comment) on top of the
    /// generic defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(Self::base("sweep"), text)
    }

    /// Like [`Self::parse`], starting from `base` instead of the defaults.
    pub fn parse_onto(base: Self, text: &str) -> Result<Self> {
        let mut cfg = base;
        let original_name = cfg.name.clone();
        let mut out_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} `{value}`", lineno + 1));
            let int = || value.parse::<usize>().map_err(|_| bad(key));
            let real = || value.parse::<f64>().map_err(|_| bad(key));
            match key {
                "name" => cfg.name = value.to_string(),
                "n" => cfg.n = int()?,
                "k" => cfg.k = int()?,
                "m" => cfg.m = int()?,
                "g" => cfg.g = real()?,
                "sigma_v" => cfg.sigma_v = real()?,
                "sigma_w" => cfg.sigma_w = real()?,
                "power_db" => cfg.power_db = real()?,
                "rho" => cfg.rho = real()?,
                "sweep" => cfg.sweep = value.parse()?,
                "values" => {
                    cfg.values = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>().map_err(|_| bad("sweep value")))
                        .collect::<Result<_>>()?
                }
                "designs" => cfg.designs = value.split(',').map(str::parse).collect::<Result<_>>()?,
                "estimator" => cfg.estimator = value.parse()?,
                "trials" => cfg.trials = int()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "ensemble" => cfg.ensemble = value.parse()?,
                "randomizations" => cfg.randomizations = int()?,
                "romp_passes" => cfg.romp.passes = int()?,
                "romp_temperature" => cfg.romp.temperature = real()?,
                "out" => {
                    cfg.out_dir = PathBuf::from(value);
                    out_set = true;
                }
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        if !out_set && cfg.name != original_name {
            cfg.out_dir = PathBuf::from("results").join(&cfg.name);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the same `key = value` form [`Self::parse`] reads.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let designs: Vec<&str> = self.designs.iter().map(|d| d.name()).collect();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "g = {}", self.g);
        let _ = writeln!(s, "sigma_v = {}", self.sigma_v);
        let _ = writeln!(s, "sigma_w = {}", self.sigma_w);
        let _ = writeln!(s, "power_db = {}", self.power_db);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "sweep = {}", self.sweep.name().to_ascii_lowercase());
        let _ = writeln!(s, "values = {}", join(&self.values));
        let _ = writeln!(s, "designs = {}", designs.join(","));
        let _ = writeln!(s, "estimator = {}", self.estimator.name());
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ensemble = {}", self.ensemble);
        let _ = writeln!(s, "randomizations = {}", self.randomizations);
        let _ = writeln!(s, "romp_passes = {}", self.romp.passes);
        let _ = writeln!(s, "romp_temperature = {}", self.romp.temperature);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if self.values.is_empty() {
            return err("the sweep needs at least one value".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.values.windows(2).any(|w| w[0] >= w[1]) {
            return err("sweep values must be finite and strictly ascending".into());
        }
        if self.designs.is_empty() {
            return err("at least one design is required".into());
        }
        if self.k == 0 || self.k > self.n {
            return err(format!("need 1 <= K <= N, got K={}, N={}", self.k, self.n));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return err(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.sweep == SweepVar::Measurements {
            for &v in &self.values {
                if v.fract() != 0.0 || v < 1.0 || v > self.n as f64 {
                    return err(format!("M sweep value {v} must be an integer in 1..={}", self.n));
                }
            }
        } else if self.m == 0 || self.m > self.n {
            return err(format!("M must lie in 1..={}, got {}", self.n, self.m));
        }
        if let EnsembleSpec::Sampled(c) = self.ensemble {
            if c as f64 > crate::linalg::binomial(self.n, self.k) {
                return err(format!("sampled ensemble size {c} exceeds C({}, {})", self.n, self.k));
            }
        }
        if self.romp.passes == 0 || !(self.romp.temperature >= 0.0) {
            return err("random-OMP needs passes >= 1 and temperature >= 0".into());
        }
        if self.designs.contains(&DesignMethod::Randomized) && self.randomizations == 0 {
            return err("randomizations must be at least 1".into());
        }
        for v in [self.g, self.sigma_v, self.sigma_w] {
            if !(v >= 0.0 && v.is_finite()) {
                return err("g, sigma_v and sigma_w must be finite and nonnegative".into());
            }
        }
        Ok(())
    }

    /// System model at sweep value `value`.
    pub fn model_at(&self, value: f64) -> Result<SystemModel> {
        let (mut m, mut p_db, mut g) = (self.m, self.power_db, self.g);
        match self.sweep {
            SweepVar::Measurements => m = value as usize,
            SweepVar::PowerDb => p_db = value,
            SweepVar::CsnrDb => g = db_to_linear(value).sqrt() * self.sigma_w,
        }
        SystemModel::builder(self.n, self.k, m)
            .source_covariance(exponential_correlation(self.k, self.rho)?)
            .gain(g)
            .sigma_v(self.sigma_v)
            .sigma_w(self.sigma_w)
            .power(db_to_linear(p_db))
            .build()
    }
}

/// Outcome of one design at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRecord {
    pub design: DesignMethod,
    /// `None` when the design failed at this point.
    pub nmse: Option<NmseStats>,
    pub bound: Option<f64>,
    pub power: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub value: f64,
    pub records: Vec<DesignRecord>,
    /// Analytic oracle bound of the lower-bound design, divided by `K`.
    pub bound_nmse: Option<f64>,
    /// Seed for this point's design randomness, source and noise draws.
    pub point_seed: u64,
    pub seconds: f64,
}

impl PointResult {
    pub fn record(&self, design: DesignMethod) -> Option<&DesignRecord> {
        self.records.iter().find(|r| r.design == design)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub points: Vec<PointResult>,
}

impl ExperimentRun {
    pub fn point(&self, value: f64) -> Option<&PointResult> {
        self.points.iter().find(|p| p.value == value)
    }
}

struct BuiltDesigns {
    matrices: Vec<(DesignMethod, std::result::Result<SensingMatrix, String>)>,
}

fn build_designs(cfg: &ExperimentConfig, model: &SystemModel, ensemble: &SupportEnsemble, point_seed: u64) -> BuiltDesigns {
    let opts = DesignOptions::default();
    let mut lb_gram: Option<std::result::Result<GramCandidate, String>> = None;
    let mut matrices = Vec::with_capacity(cfg.designs.len());
    for (idx, &design) in cfg.designs.iter().enumerate() {
        let mut rng = stream(point_seed, &[tag::DESIGN, idx as u64]);
        let built: Result<SensingMatrix> = match design {
            DesignMethod::LowerBound => design_lower_bound(model, ensemble, &opts).map(|o| {
                lb_gram = Some(Ok(o.gram));
                o.matrix
            }),
            DesignMethod::UpperBound => design_upper_bound(model, &opts).map(|o| o.matrix),
            DesignMethod::Gaussian => design_gaussian(model, &mut rng),
            DesignMethod::TightFrame => design_tight_frame(model, &mut rng),
            DesignMethod::Randomized => {
                if lb_gram.is_none() {
                    lb_gram = Some(solve_sdr(model, ensemble, &opts.solver).map(|r| r.0).map_err(|e| e.to_string()));
                }
                match lb_gram.as_ref().expect("set above") {
                    Ok(q) => design_randomized(model, ensemble, q, cfg.randomizations, &mut rng),
                    Err(e) => Err(Error::NumericalSingularity(e.clone())),
                }
            }
            DesignMethod::ClosedForm(ClosedFormCase::I) => closed_form_case1(model),
            DesignMethod::ClosedForm(ClosedFormCase::II) => closed_form_case2(model),
            DesignMethod::ClosedForm(ClosedFormCase::III) => closed_form_case3(model),
            DesignMethod::ClosedForm(ClosedFormCase::IV) => closed_form_case4(model, ensemble),
        };
        let built = built.map(|mut s| {
            if matches!(design, DesignMethod::Gaussian | DesignMethod::TightFrame | DesignMethod::Randomized) {
                s.seed = Some(derive_seed(point_seed, &[tag::DESIGN, idx as u64]));
            }
            s
        });
        if let Err(e) = &built {
            log::warn!("design {design} failed at this point: {e}");
        }
        matrices.push((design, built.map_err(|e| e.to_string())));
    }
    BuiltDesigns { matrices }
}

fn decode(
    cfg: &ExperimentConfig,
    ctx: &EstimationContext,
    y: &DVector<f64>,
    support: &[usize],
    rng: &mut crate::rng::SimRng,
) -> Result<DVector<f64>> {
    let r = match cfg.estimator {
        EstimatorKind::Omp => ctx.omp(y)?,
        EstimatorKind::RandomOmp => ctx.random_omp(y, &cfg.romp, rng)?,
        EstimatorKind::Lmmse => ctx.lmmse(y)?,
        EstimatorKind::Oracle => ctx.oracle(y, support)?,
        EstimatorKind::Mmse => ctx.mmse_exhaustive(y)?,
    };
    Ok(r.x_hat)
}

/// Squared errors per trial for every design matrix, using the same source,
/// noise and decoder streams for all designs.
fn run_trials(cfg: &ExperimentConfig, model: &SystemModel, designs: &[Option<(DMatrix<f64>, EstimationContext)>], point_seed: u64) -> Result<Vec<Vec<f64>>> {
    let per_trial: Vec<Result<Vec<f64>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let t = t as u64;
            let sample = draw_sparse_sample(model, &mut stream(point_seed, &[tag::SOURCE, t]))?;
            let mut errs = Vec::with_capacity(designs.len());
            for d in designs {
                let Some((a, ctx)) = d else {
                    errs.push(f64::NAN);
                    continue;
                };
                let y = simulate_channel(model, a, &sample.x, &mut stream(point_seed, &[tag::NOISE, t]))?;
                let xh = decode(cfg, ctx, &y, &sample.support, &mut stream(point_seed, &[tag::DECODER, t]))?;
                errs.push((&sample.x - xh).norm_squared());
            }
            Ok(errs)
        })
        .collect();
    let mut by_design = vec![Vec::with_capacity(cfg.trials); designs.len()];
    for row in per_trial {
        for (d, e) in row?.into_iter().enumerate() {
            by_design[d].push(e);
        }
    }
    Ok(by_design)
}

/// Runs every sweep point. Design failures mark the point's record as
/// failed and the sweep continues; decoder failures abort.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let mut points = Vec::with_capacity(cfg.values.len());
    for (pi, &value) in cfg.values.iter().enumerate() {
        let start = Instant::now();
        let point_seed = derive_seed(cfg.seed, &[pi as u64]);
        let model = cfg.model_at(value)?;
        let ensemble = match cfg.ensemble {
            EnsembleSpec::Full => SupportEnsemble::full(cfg.n, cfg.k)?,
            EnsembleSpec::Sampled(c) => SupportEnsemble::sampled(cfg.n, cfg.k, c, derive_seed(point_seed, &[tag::ENSEMBLE]))?,
        };
        let built = build_designs(cfg, &model, &ensemble, point_seed);
        let mut contexts = Vec::with_capacity(built.matrices.len());
        let mut records = Vec::with_capacity(built.matrices.len());
        for (design, m) in &built.matrices {
            match m {
                Ok(s) => {
                    let ctx = EstimationContext::new(&model, &s.a)?;
                    let bound = mse_lower_bound(&model, &ensemble, &s.a).ok().map(|b| b.value);
                    let power = crate::metrics::transmit_power(&model, &s.a).ok();
                    contexts.push(Some((s.a.clone(), ctx)));
                    records.push(DesignRecord { design: *design, nmse: None, bound, power, error: None });
                }
                Err(e) => {
                    contexts.push(None);
                    records.push(DesignRecord { design: *design, nmse: None, bound: None, power: None, error: Some(e.clone()) });
                }
            }
        }
        let errors = run_trials(cfg, &model, &contexts, point_seed)?;
        for (rec, errs) in records.iter_mut().zip(&errors) {
            if rec.error.is_none() {
                rec.nmse = Some(NmseStats::from_squared_errors(errs, cfg.k));
            }
        }
        let bound_nmse = records
            .iter()
            .find(|r| r.design == DesignMethod::LowerBound)
            .and_then(|r| r.bound)
            .map(|b| b / cfg.k as f64);
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{} {} = {value}: done in {seconds:.2}s", cfg.name, cfg.sweep.name());
        points.push(PointResult { value, records, bound_nmse, point_seed, seconds });
    }
    Ok(ExperimentRun { config: cfg.clone(), points })
}

fn stderr_db(stats: &NmseStats) -> f64 {
    if stats.linear > 0.0 {
        10.0 / std::f64::consts::LN_10 * stats.stderr / stats.linear
    } else {
        0.0
    }
}

/// Long-format results: one row per design and sweep point, plus the analytic
/// bound curve. Failed points carry `nan`.
pub fn results_csv(run: &ExperimentRun) -> String {
    let mut s = String::from("design,sweep_var,value,nmse_db,stderr\n");
    let var = run.config.sweep.name();
    for p in &run.points {
        for r in &p.records {
            let (db, se) = r.nmse.as_ref().map_or((f64::NAN, f64::NAN), |n| (n.db(), stderr_db(n)));
            let _ = writeln!(s, "{},{var},{},{db},{se}", r.design, p.value);
        }
        if let Some(b) = p.bound_nmse {
            let _ = writeln!(s, "{BOUND_LABEL},{var},{},{},0", p.value, to_db(b));
        }
    }
    s
}

/// Gnuplot table: sweep value, then `nmse_db stderr` per design and the bound.
pub fn results_dat(run: &ExperimentRun) -> String {
    let mut s = String::new();
    let mut header = vec![run.config.sweep.name().to_string()];
    for d in &run.config.designs {
        header.push(format!("{d}_db"));
        header.push(format!("{d}_stderr"));
    }
    let with_bound = run.points.iter().any(|p| p.bound_nmse.is_some());
    if with_bound {
        header.push(format!("{BOUND_LABEL}_db"));
    }
    let _ = writeln!(s, "# {}", header.join(" "));
    for p in &run.points {
        let mut row = vec![p.value.to_string()];
        for d in &run.config.designs {
            match p.record(*d).and_then(|r| r.nmse.as_ref()) {
                Some(n) => {
                    row.push(n.db().to_string());
                    row.push(stderr_db(n).to_string());
                }
                None => row.extend(["nan".to_string(), "nan".to_string()]),
            }
        }
        if with_bound {
            row.push(p.bound_nmse.map_or("nan".to_string(), |b| to_db(b).to_string()));
        }
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Writes `results.csv`, `config.snapshot` and `<name>.dat` into `dir`.
pub fn emit_results(run: &ExperimentRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (dir.join("results.csv"), results_csv(run)),
        (dir.join("config.snapshot"), run.config.snapshot()),
        (dir.join(format!("{}.dat", run.config.name)), results_dat(run)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (path, body) in files {
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// A seeded RNG for one-off designs built outside a sweep.
pub fn design_rng(seed: u64) -> crate::rng::SimRng {
    seeded(derive_seed(seed, &[tag::DESIGN]))
}
