//! Batch front end for `qrenv`.
//!
//! Every command prints a short human-readable summary. With `--out DIR` it
//! also writes CSV tables, a key=value record and a `manifest.txt` that holds
//! enough to rerun it.
//!
//! Exit status: 0 on a positive answer, 1 on a valid negative answer (not
//! separable, not certified, ordering violated, truncation diverging), 2 on
//! usage or model errors.

mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use qrenv::bounds::{
    bound_report, sweep_gamma, write_sweep_csv, BoundOptions, BoundParams, BoundsError,
};
use qrenv::ergodicity::{certify, Certification, ErgodicityError, LyapunovKind};
use qrenv::numerics::{
    auto_truncate, check_cut_structure, metrics, solve_truncated, NumericsError, SolveMethod,
    TruncationStep,
};
use qrenv::separability::{product_form, Separability, SeparabilityError, DEFAULT_TOL};
use qrenv::simulate::{simulate, trace, Horizon, SimConfig, SimError, TraceError};
use qrenv::{
    catalog_by_name, load_model, validate_model, CatalogParams, JointModel, ModelDocument,
    ModelError, State,
};

pub use output::{sha256_hex, Manifest, Record, RunOutput};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write output: {0}")]
    Write(#[from] std::io::Error),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Separability(#[from] SeparabilityError),
    #[error(transparent)]
    Ergodicity(#[from] ErgodicityError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Sim(s) => CliError::Simulation(s),
            TraceError::Csv(c) => CliError::Csv(c),
            TraceError::Io(i) => CliError::Write(i),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qrenv",
    version,
    about = "Queues in a two-way interacting random environment"
)]
pub struct Cli {
    /// Directory for CSV tables, records and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check rates, generators and connectivity up to a level.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        /// Highest level checked; defaults to two tail periods past the prefix.
        #[arg(long)]
        n_check: Option<usize>,
    },
    /// Decide separability and print the product-form steady state.
    Separability {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Build and verify a Lyapunov ergodicity certificate.
    Certify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = KindArg::LinearDrift)]
        kind: KindArg,
    },
    /// Stationary distribution of the truncated chain.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        /// Queue cap; omitted means doubling until the metrics settle.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long, value_enum, default_value_t = MethodArg::Elimination)]
        method: MethodArg,
        /// Settling tolerance for the doubling heuristic, or the power
        /// iteration tolerance.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_iter: usize,
        /// Relative tolerance of the cut identity check.
        #[arg(long, default_value_t = 1e-8)]
        cut_tol: f64,
    },
    /// Estimate the throughput by simulation.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Also write the event log of replication 0.
        #[arg(long)]
        trace: bool,
    },
    /// Two-sided throughput bounds for the perishable inventory.
    Bounds {
        #[command(flatten)]
        params: BoundArgs,
        #[arg(long)]
        gamma: f64,
        #[command(flatten)]
        sim: SimArgs,
        /// Skip the simulation of the target system.
        #[arg(long)]
        no_sim: bool,
        #[arg(long, default_value_t = 60)]
        iso_cap: usize,
        /// Jump horizon of the departure-value isotonicity check; 0 skips it.
        #[arg(long, default_value_t = 50)]
        iso_horizon: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Bounds along a grid of ageing rates.
    Sweep {
        #[command(flatten)]
        params: BoundArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model definition file (TOML).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Catalog model name.
    #[arg(long)]
    pub catalog: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub b: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub nu: f64,
    #[arg(long)]
    pub b: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Simulated time per replication.
    #[arg(long, conflicts_with = "jumps")]
    pub time: Option<f64>,
    /// Jumps per replication.
    #[arg(long)]
    pub jumps: Option<u64>,
    #[arg(long, default_value_t = 20)]
    pub replications: usize,
    #[arg(long, default_value_t = 0.0)]
    pub warmup: f64,
    /// Initial state as `n,k` with `k` an environment label.
    #[arg(long, default_value = "0,0")]
    pub initial: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    LinearDrift,
    HittingTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Elimination,
    Power,
}

impl KindArg {
    fn kind(self) -> LyapunovKind {
        match self {
            KindArg::LinearDrift => LyapunovKind::LinearDrift,
            KindArg::HittingTime => LyapunovKind::HittingTime,
        }
    }
}

const DEFAULT_SIM_TIME: f64 = 1e4;

impl ModelArgs {
    fn has_params(&self) -> bool {
        self.lambda.is_some()
            || self.mu.is_some()
            || self.nu.is_some()
            || self.gamma.is_some()
            || self.eta.is_some()
            || self.b.is_some()
    }

    fn load(&self, manifest: &mut Manifest) -> Result<JointModel, CliError> {
        let model = match (&self.model, &self.catalog) {
            (Some(path), None) => {
                if self.has_params() {
                    return Err(CliError::Usage(
                        "rate flags only apply to --catalog; put them in the model file instead"
                            .into(),
                    ));
                }
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
                    path: path.clone(),
                    source,
                })?;
                manifest.set("model_source", format!("file:{}", path.display()));
                load_model(&text)?
            }
            (None, Some(name)) => {
                manifest.set("model_source", format!("catalog:{name}"));
                for (key, value) in [
                    ("lambda", self.lambda),
                    ("mu", self.mu),
                    ("nu", self.nu),
                    ("gamma", self.gamma),
                    ("eta", self.eta),
                ] {
                    if let Some(v) = value {
                        manifest.set(&format!("param.{key}"), v);
                    }
                }
                if let Some(b) = self.b {
                    manifest.set("param.b", b);
                }
                catalog_by_name(
                    name,
                    &CatalogParams {
                        lambda: self.lambda,
                        mu: self.mu,
                        nu: self.nu,
                        gamma: self.gamma,
                        eta: self.eta,
                        b: self.b,
                        rates: None,
                    },
                )?
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "give either --model or --catalog, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "a model is required: --model FILE or --catalog NAME".into(),
                ))
            }
        };
        manifest.set(
            "model_sha256",
            output::sha256_hex(ModelDocument::from_model(&model).to_toml().as_bytes()),
        );
        Ok(model)
    }
}

impl SimArgs {
    fn config(
        &self,
        model: Option<&JointModel>,
        manifest: &mut Manifest,
    ) -> Result<SimConfig, CliError> {
        let horizon = match (self.time, self.jumps) {
            (_, Some(j)) => Horizon::Jumps(j),
            (Some(t), None) => Horizon::Time(t),
            (None, None) => Horizon::Time(DEFAULT_SIM_TIME),
        };
        let initial = parse_state(&self.initial, model)?;
        let config = SimConfig {
            seed: self.seed,
            horizon,
            replications: self.replications,
            warmup: self.warmup,
            initial,
        };
        config.validate()?;
        manifest.set("seed", self.seed);
        match horizon {
            Horizon::Time(t) => manifest.set("horizon_time", t),
            Horizon::Jumps(j) => manifest.set("horizon_jumps", j),
        }
        manifest.set("replications", self.replications);
        manifest.set("warmup", self.warmup);
        manifest.set("initial", &self.initial);
        Ok(config)
    }
}

fn parse_state(text: &str, model: Option<&JointModel>) -> Result<State, CliError> {
    let bad = || CliError::Usage(format!("initial state `{text}` must look like `n,k`"));
    let (n, k) = text.split_once(',').ok_or_else(bad)?;
    let level: usize = n.trim().parse().map_err(|_| bad())?;
    let label = k.trim();
    let env = match model {
        Some(m) => m
            .env()
            .index_of(label)
            .ok_or_else(|| CliError::Usage(format!("unknown environment label `{label}`")))?,
        None => label.parse().map_err(|_| bad())?,
    };
    Ok(State::new(level, env))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Parse `args` and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let rendered: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, &rendered) {
        Ok(out) => {
            print!("{}", out.summary);
            out.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Run a parsed command and write its files.
pub fn execute(cli: &Cli, args: &[String]) -> Result<RunOutput, CliError> {
    let mut manifest = Manifest::new(args);
    let out = match &cli.command {
        Command::Validate { model, n_check } => cmd_validate(model, *n_check, &mut manifest)?,
        Command::Separability { model, tol } => cmd_separability(model, *tol, &mut manifest)?,
        Command::Certify { model, kind } => cmd_certify(model, kind.kind(), &mut manifest)?,
        Command::Solve {
            model,
            cap,
            method,
            tol,
            max_iter,
            cut_tol,
        } => cmd_solve(
            model,
            *cap,
            *method,
            *tol,
            *max_iter,
            *cut_tol,
            &mut manifest,
        )?,
        Command::Simulate { model, sim, trace } => cmd_simulate(model, sim, *trace, &mut manifest)?,
        Command::Bounds {
            params,
            gamma,
            sim,
            no_sim,
            iso_cap,
            iso_horizon,
            tol,
        } => cmd_bounds(
            params,
            *gamma,
            sim,
            *no_sim,
            *iso_cap,
            *iso_horizon,
            *tol,
            &mut manifest,
        )?,
        Command::Sweep {
            params,
            gammas,
            tol,
        } => cmd_sweep(params, gammas, *tol, &mut manifest)?,
    };
    if let Some(dir) = &cli.out {
        out.write_to(dir, manifest)?;
    }
    Ok(out)
}

fn cmd_validate(
    args: &ModelArgs,
    n_check: Option<usize>,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "validate");
    let model = args.load(manifest)?;
    let n_check = n_check.unwrap_or_else(|| model.check_levels() + 2);
    manifest.set("n_check", n_check);
    let report = validate_model(&model, n_check)?;
    let mut out = RunOutput::new(if report.has_errors() { 1 } else { 0 });
    out.line(format!(
        "validated levels 0..={n_check}: {}",
        if report.passes() {
            "ok"
        } else if report.has_errors() {
            "errors"
        } else {
            "warnings"
        }
    ));
    let mut record = Record::new();
    record.set("passes", report.passes());
    record.set("has_errors", report.has_errors());
    record.set("connected", report.connected);
    record.set("n_check", n_check);
    record.set("issues", report.issues.len());
    for (i, issue) in report.issues.iter().enumerate() {
        let severity = if issue.is_warning() {
            "warning"
        } else {
            "error"
        };
        out.line(format!("  {severity}: {issue}"));
        record.set(&format!("issue.{i}"), format!("{severity}: {issue}"));
    }
    out.record("validation.txt", record);
    Ok(out)
}

fn cmd_separability(
    args: &ModelArgs,
    tol: f64,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "separability");
    manifest.set("tol", tol);
    let model = args.load(manifest)?;
    let mut record = Record::new();
    let labels = model.env().labels();
    let out = match product_form(&model, tol)? {
        Separability::Separable(pf) => {
            let mut out = RunOutput::new(0);
            out.line("separable: product-form steady state".to_string());
            out.line(format!("{:>10}  {:>22}", "k", "theta"));
            let mut csv = output::csv_writer();
            csv.write_record(["k", "theta"])?;
            for (k, t) in pf.theta.iter().enumerate() {
                out.line(format!("{:>10}  {:>22}", labels[k], t));
                csv.write_record([labels[k].clone(), t.to_string()])?;
            }
            out.table("theta.csv", output::finish_csv(csv)?);
            record.set("separable", true);
            record.set("reason", "");
            record.set("theta", fmt_list(&pf.theta));
            record.set("C", pf.normalization());
            record.set("tail_ratio", pf.marginal.tail_ratio);
            record.set("near_critical", pf.marginal.near_critical);
            record.set("theta_residual", pf.theta_residual);
            record.set("balance_residual", pf.balance_residual);
            record.set("balance_levels", pf.balance_levels);
            record.set("blocked_probability", pf.blocked_probability());
            record.set("throughput", pf.throughput());
            out.line(format!(
                "C = {}, throughput = {}",
                pf.normalization(),
                pf.throughput()
            ));
            out
        }
        Separability::NotSeparable(reason) => {
            let mut out = RunOutput::new(1);
            out.line(format!("not separable: {reason}"));
            record.set("separable", false);
            record.set("reason", &reason);
            out
        }
    };
    let mut out = out;
    out.record("separability.txt", record);
    Ok(out)
}

fn cmd_certify(
    args: &ModelArgs,
    kind: LyapunovKind,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "certify");
    manifest.set("kind", kind);
    let model = args.load(manifest)?;
    let mut record = Record::new();
    record.set("kind", kind);
    let mut out = match certify(&model, kind)? {
        Certification::Certified(cert) => {
            let mut out = RunOutput::new(0);
            out.line(format!(
                "certified ergodic with {kind}: epsilon = {}",
                cert.epsilon
            ));
            record.set("certified", true);
            record.set("reason", "");
            record.set("epsilon", cert.epsilon);
            record.set("epsilon_tilde", cert.epsilon_tilde());
            record.set("F_levels", format!("0..{}", cert.base.exception_levels));
            record.set("tail_start", cert.tail.start);
            record.set("tail_period", cert.tail.period);
            record.set("check_horizon", cert.check_horizon);
            record.set("worst_margin", cert.worst_margin);
            out.line(format!(
                "F = levels 0..{} x K, epsilon_tilde = {}, drift verified on levels 0..={}",
                cert.base.exception_levels,
                cert.epsilon_tilde(),
                cert.check_horizon
            ));
            out.line(format!(
                "{:>4}  {:>22}  {:>22}  {:>22}  {:>22}",
                "n", "c_hat", "service", "environment", "c"
            ));
            let mut levels = output::csv_writer();
            levels.write_record(["n", "c_hat", "service_branch", "environment_branch", "c"])?;
            for (h, c) in cert.c_hat.iter().zip(&cert.c) {
                out.line(format!(
                    "{:>4}  {:>22}  {:>22}  {:>22}  {:>22}",
                    h.level, h.value, h.service_branch, h.environment_branch, c
                ));
                levels.write_record([
                    h.level.to_string(),
                    h.value.to_string(),
                    h.service_branch.to_string(),
                    h.environment_branch.to_string(),
                    c.to_string(),
                ])?;
            }
            out.table("levels.csv", output::finish_csv(levels)?);
            let labels = model.env().labels();
            let mut tau = output::csv_writer();
            tau.write_record(["n", "k", "tau", "residual"])?;
            for t in &cert.tau {
                for k in model.env().blocked_states() {
                    tau.write_record([
                        t.level.to_string(),
                        labels[k].clone(),
                        t.tau[k].to_string(),
                        t.residual.to_string(),
                    ])?;
                }
            }
            out.table("tau.csv", output::finish_csv(tau)?);
            out
        }
        Certification::NotCertified(reason) => {
            let mut out = RunOutput::new(1);
            out.line(format!("not certified: {reason}"));
            record.set("certified", false);
            record.set("reason", &reason);
            out
        }
    };
    out.record("certificate.txt", record);
    Ok(out)
}

fn cmd_solve(
    args: &ModelArgs,
    cap: Option<usize>,
    method: MethodArg,
    tol: f64,
    max_iter: usize,
    cut_tol: f64,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "solve");
    manifest.set("tol", tol);
    manifest.set("cut_tol", cut_tol);
    let model = args.load(manifest)?;
    let mut history: Vec<TruncationStep> = Vec::new();
    let solution = match (cap, method) {
        (Some(cap), MethodArg::Elimination) => {
            manifest.set("cap", cap);
            manifest.set("method", "elimination");
            solve_truncated(&model, cap, SolveMethod::Elimination)
        }
        (Some(cap), MethodArg::Power) => {
            manifest.set("cap", cap);
            manifest.set("method", "power");
            manifest.set("max_iter", max_iter);
            solve_truncated(&model, cap, SolveMethod::Power { tol, max_iter })
        }
        (None, MethodArg::Elimination) => {
            manifest.set("cap", "auto");
            manifest.set("method", "elimination");
            auto_truncate(&model, tol).map(|a| {
                history = a.history;
                a.solution
            })
        }
        (None, MethodArg::Power) => {
            return Err(CliError::Usage(
                "--method power needs an explicit --cap".into(),
            ));
        }
    };
    let solution = match solution {
        Ok(s) => s,
        Err(e @ NumericsError::Diverging { .. }) => {
            let mut out = RunOutput::new(1);
            out.line(format!("no truncation settled: {e}"));
            let mut record = Record::new();
            record.set("converged", false);
            record.set("reason", &e);
            out.record("metrics.txt", record);
            return Ok(out);
        }
        Err(e) => return Err(e.into()),
    };
    let m = metrics(&solution, &model);
    let cut = check_cut_structure(&solution, &model, cut_tol, false);
    let mut out = RunOutput::new(0);
    out.line(format!(
        "cap {}: residual {:e}, top-decile mass {:e}",
        solution.cap, solution.residual, solution.truncation_estimate
    ));
    out.line(format!("throughput           {}", m.throughput));
    out.line(format!("mean queue length    {}", m.mean_queue_length));
    out.line(format!("blocked probability  {}", m.blocked_probability));
    out.line(format!("loss rate            {}", m.loss_rate));
    out.line(format!(
        "cut identity on levels < {}: worst relative {:e} at {} ({})",
        cut.checked_levels,
        cut.worst_relative,
        cut.worst_level,
        if cut.holds { "holds" } else { "violated" }
    ));
    let mut record = Record::new();
    record.set("converged", true);
    record.set("cap", solution.cap);
    record.set("residual", solution.residual);
    record.set("truncation_estimate", solution.truncation_estimate);
    record.set(
        "truncation",
        if cap.is_some() {
            "fixed"
        } else {
            "doubling heuristic"
        },
    );
    record.set("throughput", m.throughput);
    record.set("mean_queue_length", m.mean_queue_length);
    record.set("blocked_probability", m.blocked_probability);
    record.set("loss_rate", m.loss_rate);
    record.set("cut_holds", cut.holds);
    record.set("cut_worst_relative", cut.worst_relative);
    record.set("cut_worst_level", cut.worst_level);
    out.record("metrics.txt", record);
    let mut pi = Vec::new();
    solution.write_csv(&model, &mut pi)?;
    out.table("pi.csv", pi);
    if !history.is_empty() {
        let mut csv = output::csv_writer();
        csv.write_record([
            "cap",
            "throughput",
            "blocked_probability",
            "truncation_estimate",
        ])?;
        for s in &history {
            csv.write_record([
                s.cap.to_string(),
                s.throughput.to_string(),
                s.blocked_probability.to_string(),
                s.truncation_estimate.to_string(),
            ])?;
        }
        out.table("truncation.csv", output::finish_csv(csv)?);
    }
    Ok(out)
}

fn cmd_simulate(
    args: &ModelArgs,
    sim: &SimArgs,
    with_trace: bool,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "simulate");
    let model = args.load(manifest)?;
    let config = sim.config(Some(&model), manifest)?;
    manifest.set("trace", with_trace);
    let result = simulate(&model, &config)?;
    let e = &result.estimate;
    let mut out = RunOutput::new(0);
    out.line(format!(
        "throughput {} ± {} (95%, {} replications, seed {})",
        e.mean, e.half_width, config.replications, config.seed
    ));
    let mut record = Record::new();
    record.set("seed", config.seed);
    record.set("replications", config.replications);
    record.set("mean", e.mean);
    record.set("half_width", e.half_width);
    out.record("estimate.txt", record);
    let mut csv = output::csv_writer();
    csv.write_record([
        "replication",
        "throughput",
        "departures",
        "arrivals",
        "jumps",
        "elapsed",
    ])?;
    for (r, s) in result.replications.iter().enumerate() {
        csv.write_record([
            r.to_string(),
            s.throughput().to_string(),
            s.departures.to_string(),
            s.arrivals.to_string(),
            s.jumps.to_string(),
            s.elapsed.to_string(),
        ])?;
    }
    out.table("replications.csv", output::finish_csv(csv)?);
    if with_trace {
        let mut buf = Vec::new();
        trace(&model, &config, 0, &mut buf)?;
        out.table("trace.csv", buf);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bounds(
    args: &BoundArgs,
    gamma: f64,
    sim: &SimArgs,
    no_sim: bool,
    iso_cap: usize,
    iso_horizon: usize,
    tol: f64,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "bounds");
    let params = BoundParams {
        lambda: args.lambda,
        mu: args.mu,
        nu: args.nu,
        gamma,
        b: args.b,
    };
    set_bound_params(manifest, &params);
    manifest.set("tol", tol);
    let simulation = if no_sim {
        manifest.set("simulation", false);
        None
    } else {
        Some(sim.config(None, manifest)?)
    };
    let isotone = (iso_horizon > 0).then_some((iso_cap, iso_horizon));
    manifest.set("iso_cap", iso_cap);
    manifest.set("iso_horizon", iso_horizon);
    let r = bound_report(
        &params,
        &BoundOptions {
            truncation_tol: tol,
            simulation,
            isotone,
        },
    )?;
    let mut out = RunOutput::new(if r.ordering_holds { 0 } else { 1 });
    out.line(format!("regime {}", r.regime));
    out.line(format!("TH-  {}  (exact)", r.th_minus.value));
    out.line(format!(
        "THo  {}  (truncated at {})",
        r.th_target_truncated, r.truncation_cap
    ));
    if let Some(c) = r.th_target_closed_form {
        out.line(format!("THo  {c}  (closed form)"));
    }
    if let Some(e) = &r.th_target_simulated {
        out.line(format!("THo  {} ± {}  (simulated)", e.mean, e.half_width));
    }
    out.line(format!("TH+  {}  (exact)", r.th_plus.value));
    out.line(format!(
        "ordering {}",
        if r.ordering_holds {
            "holds"
        } else {
            "VIOLATED"
        }
    ));
    for s in &r.isotone {
        out.line(format!(
            "isotone {:<6} {} ({} interior, {} boundary violations)",
            s.system, s.isotone, s.interior_violations, s.boundary_violations
        ));
    }
    let mut record = Record::new();
    record.set("lambda", params.lambda);
    record.set("mu", params.mu);
    record.set("nu", params.nu);
    record.set("gamma", params.gamma);
    record.set("b", params.b);
    record.set("regime", r.regime);
    record.set("lower_proved", r.regime.lower_proved());
    record.set("upper_proved", r.regime.upper_proved());
    record.set("th_minus", r.th_minus.value);
    record.set("th_minus_balance_residual", r.th_minus.balance_residual);
    record.set("th_plus", r.th_plus.value);
    record.set("th_plus_balance_residual", r.th_plus.balance_residual);
    record.set("th_o_truncated", r.th_target_truncated);
    record.set("th_o_cap", r.truncation_cap);
    record.set(
        "th_o_closed_form",
        r.th_target_closed_form
            .map(|c| c.to_string())
            .unwrap_or_default(),
    );
    match &r.th_target_simulated {
        Some(e) => {
            record.set("th_o_sim_mean", e.mean);
            record.set("th_o_sim_half_width", e.half_width);
        }
        None => {
            record.set("th_o_sim_mean", "");
            record.set("th_o_sim_half_width", "");
        }
    }
    record.set("lower_margin", r.lower_margin);
    record.set("upper_margin", r.upper_margin);
    record.set("exact_ordering_holds", r.exact_ordering_holds);
    record.set(
        "simulated_ordering_holds",
        r.simulated_ordering_holds
            .map(|b| b.to_string())
            .unwrap_or_default(),
    );
    record.set("ordering_holds", r.ordering_holds);
    out.record("bounds.txt", record);
    if !r.isotone.is_empty() {
        let mut csv = output::csv_writer();
        csv.write_record([
            "system",
            "cap",
            "horizon",
            "isotone",
            "interior_violations",
            "boundary_violations",
            "worst_interior_margin",
        ])?;
        for s in &r.isotone {
            csv.write_record([
                s.system.to_string(),
                s.cap.to_string(),
                s.horizon.to_string(),
                s.isotone.to_string(),
                s.interior_violations.to_string(),
                s.boundary_violations.to_string(),
                s.worst_interior_margin.to_string(),
            ])?;
        }
        out.table("isotone.csv", output::finish_csv(csv)?);
    }
    Ok(out)
}

fn set_bound_params(manifest: &mut Manifest, p: &BoundParams) {
    manifest.set("param.lambda", p.lambda);
    manifest.set("param.mu", p.mu);
    manifest.set("param.nu", p.nu);
    manifest.set("param.b", p.b);
}

fn cmd_sweep(
    args: &BoundArgs,
    gammas: &[f64],
    tol: f64,
    manifest: &mut Manifest,
) -> Result<RunOutput, CliError> {
    manifest.set("command", "sweep");
    let base = BoundParams {
        lambda: args.lambda,
        mu: args.mu,
        nu: args.nu,
        gamma: 0.0,
        b: args.b,
    };
    set_bound_params(manifest, &base);
    manifest.set("gammas", fmt_list(gammas));
    manifest.set("tol", tol);
    let rows = sweep_gamma(&base, gammas, tol)?;
    let all_hold = rows.iter().all(|r| r.ordering_holds);
    let mut out = RunOutput::new(if all_hold { 0 } else { 1 });
    out.line(format!(
        "{:>10}  {:>20}  {:>20}  {:>20}",
        "gamma", "TH-", "THo", "TH+"
    ));
    for r in &rows {
        out.line(format!(
            "{:>10}  {:>20}  {:>20}  {:>20}{}",
            r.gamma,
            r.th_minus,
            r.th_target,
            r.th_plus,
            if r.ordering_holds { "" } else { "  VIOLATED" }
        ));
    }
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    out.table("sweep.csv", buf);
    Ok(out)
}
