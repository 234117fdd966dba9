use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csdesign::designer::{
    closed_form_case1, closed_form_case2, closed_form_case3, closed_form_case4, design_gaussian, design_lower_bound,
    design_randomized, design_tight_frame, design_upper_bound, ClosedFormCase, DesignMethod, DesignOptions,
    SensingMatrix,
};
use csdesign::experiments::{
    db_to_linear, emit_results, run_sweep, EnsembleSpec, EstimatorKind, ExperimentConfig, CONFIG_KEYS,
};
use csdesign::metrics::{frame_potential, lmmse_mse, mse_lower_bound, mutual_coherence, transmit_power};
use csdesign::model::{exponential_correlation, SupportEnsemble, SystemModel};
use csdesign::sdr::solve_sdr;
use csdesign::{Error, Result};

#[derive(Parser)]
#[command(name = "csdesign", version, about = "Sensing-matrix design for sparse sources over noisy channels")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Support ensemble: full | sampled:<count>.
    #[arg(long, global = true)]
    ensemble: Option<EnsembleSpec>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a sensing matrix and write it in plain-text matrix format.
    Design {
        #[command(flatten)]
        model: ModelArgs,
        /// lower-bound, upper-bound, gaussian, tight-frame, randomization, closed-form-1..4.
        #[arg(long, default_value = "lower-bound")]
        method: DesignMethod,
        /// Candidates for the randomization design.
        #[arg(long, default_value_t = 1000)]
        randomizations: usize,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report bound, power, coherence and LMMSE error of a matrix file.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        /// Matrix file written by `design`.
        #[arg(long)]
        matrix: PathBuf,
        /// Also write per-support bound terms to this CSV.
        #[arg(long)]
        terms: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep from a config file.
    #[command(after_help = config_help())]
    Sweep {
        /// Config file with `key = value` lines.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run one of the canned figure configurations.
    Reproduce {
        /// fig2 | fig3 | fig4 | fig5.
        figure: String,
        /// Optional config file overriding the canned parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory (overrides the config; CSDESIGN_OUT also works).
    #[arg(long, env = "CSDESIGN_OUT")]
    out: Option<PathBuf>,
    /// omp | romp | lmmse | oracle | mmse.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 36)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 18)]
    m: usize,
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    g: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_v: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_w: f64,
    #[arg(long, default_value_t = 10.0)]
    power_db: f64,
}

impl ModelArgs {
    fn build(&self) -> Result<SystemModel> {
        SystemModel::builder(self.n, self.k, self.m)
            .source_covariance(exponential_correlation(self.k, self.rho)?)
            .gain(self.g)
            .sigma_v(self.sigma_v)
            .sigma_w(self.sigma_w)
            .power(db_to_linear(self.power_db))
            .build()
    }
}

fn config_help() -> String {
    let mut s = String::from("Config keys:\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<18} {d}\n"));
    }
    s
}

fn ensemble_for(model: &SystemModel, spec: Option<EnsembleSpec>, seed: u64) -> Result<SupportEnsemble> {
    match spec.unwrap_or(EnsembleSpec::Full) {
        EnsembleSpec::Full => SupportEnsemble::full(model.n(), model.k()),
        EnsembleSpec::Sampled(c) => SupportEnsemble::sampled(model.n(), model.k(), c, seed),
    }
}

fn design(cli: &Cli, model: &ModelArgs, method: DesignMethod, randomizations: usize, out: Option<&Path>) -> Result<()> {
    let model = model.build()?;
    let seed = cli.seed.unwrap_or(1);
    let ensemble = ensemble_for(&model, cli.ensemble, seed)?;
    let opts = DesignOptions::default();
    let mut rng = csdesign::experiments::design_rng(seed);
    let mut matrix: SensingMatrix = match method {
        DesignMethod::LowerBound => design_lower_bound(&model, &ensemble, &opts)?.matrix,
        DesignMethod::UpperBound => design_upper_bound(&model, &opts)?.matrix,
        DesignMethod::Gaussian => design_gaussian(&model, &mut rng)?,
        DesignMethod::TightFrame => design_tight_frame(&model, &mut rng)?,
        DesignMethod::Randomized => {
            let (q, _) = solve_sdr(&model, &ensemble, &opts.solver)?;
            design_randomized(&model, &ensemble, &q, randomizations, &mut rng)?
        }
        DesignMethod::ClosedForm(ClosedFormCase::I) => closed_form_case1(&model)?,
        DesignMethod::ClosedForm(ClosedFormCase::II) => closed_form_case2(&model)?,
        DesignMethod::ClosedForm(ClosedFormCase::III) => closed_form_case3(&model)?,
        DesignMethod::ClosedForm(ClosedFormCase::IV) => closed_form_case4(&model, &ensemble)?,
    };
    if matches!(method, DesignMethod::Gaussian | DesignMethod::TightFrame | DesignMethod::Randomized) {
        matrix.seed = Some(seed);
    }
    match out {
        Some(path) => matrix.write_text(File::create(path)?)?,
        None => matrix.write_text(io::stdout().lock())?,
    }
    if let Ok(b) = mse_lower_bound(&model, &ensemble, &matrix.a) {
        eprintln!("lower bound: {}", b.value);
    }
    Ok(())
}

fn evaluate(cli: &Cli, model: &ModelArgs, matrix: &Path, terms: Option<&Path>) -> Result<()> {
    let model = model.build()?;
    let m = SensingMatrix::read_text(BufReader::new(File::open(matrix)?))?;
    if m.m() != model.m() || m.l() != model.l() {
        return Err(Error::Config(format!(
            "matrix is {}×{} but the model expects {}×{}",
            m.m(),
            m.l(),
            model.m(),
            model.l()
        )));
    }
    let ensemble = ensemble_for(&model, cli.ensemble, cli.seed.unwrap_or(1))?;
    let bound = mse_lower_bound(&model, &ensemble, &m.a)?;
    let coh = mutual_coherence(&m.a);
    let mut out = io::stdout().lock();
    writeln!(out, "method: {}", m.method)?;
    writeln!(out, "lower_bound: {}", bound.value)?;
    writeln!(out, "lmmse_mse: {}", lmmse_mse(&model, &m.a)?)?;
    writeln!(out, "transmit_power: {}", transmit_power(&model, &m.a)?)?;
    writeln!(out, "mutual_coherence: {}", coh.value)?;
    writeln!(out, "frame_potential: {}", frame_potential(&m.a))?;
    if let Some(path) = terms {
        let detailed = csdesign::metrics::mse_lower_bound_detailed(&model, &ensemble, &m.a)?;
        detailed.write_csv(File::create(path)?)?;
    }
    Ok(())
}

fn run(cli: &Cli, mut cfg: ExperimentConfig, run: &RunArgs) -> Result<()> {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.ensemble {
        cfg.ensemble = e;
    }
    if let Some(t) = run.trials {
        cfg.trials = t;
    }
    if let Some(e) = run.estimator {
        cfg.estimator = e;
    }
    if let Some(o) = &run.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    let result = run_sweep(&cfg)?;
    for path in emit_results(&result, &cfg.out_dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Design { model, method, randomizations, out } => design(cli, model, *method, *randomizations, out.as_deref()),
        Command::Evaluate { model, matrix, terms } => evaluate(cli, model, matrix, terms.as_deref()),
        Command::Sweep { config, run: args } => {
            let text = std::fs::read_to_string(config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            run(cli, ExperimentConfig::parse(&text)?, args)
        }
        Command::Reproduce { figure, config, run: args } => {
            let mut cfg = ExperimentConfig::canned(figure)?;
            if let Some(path) = config {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                cfg = ExperimentConfig::parse_onto(cfg, &text)?;
            }
            run(cli, cfg, args)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
