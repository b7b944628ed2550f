//! Command-line front end: parses flags and an optional TOML config, runs one
//! experiment and writes its CSV and metadata.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ecd_sim::experiments::{
    default_robustness_grid, run_cd_field, run_dissipation_grid, run_ecd_scan, run_gap_report, run_robustness,
    run_sweep_comparison, Metadata,
};
use ecd_sim::sweeps::SweepKind;
use serde::Serialize;

pub use config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ALL_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ecd-sim", version, about = "Accelerated adiabatic entangling-gate simulations")]
pub struct Cli {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for Monte Carlo draws
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct SystemArgs {
    /// Resonator frequency
    #[arg(long, global = true)]
    pub resonator_ghz: Option<f64>,
    /// Initial frequency of qubit 1 (the upper one)
    #[arg(long, global = true)]
    pub qubit1_ghz: Option<f64>,
    /// Initial frequency of qubit 2
    #[arg(long, global = true)]
    pub qubit2_ghz: Option<f64>,
    /// Qubit-resonator coupling
    #[arg(long, global = true)]
    pub g_mhz: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct GridArgs {
    /// Explicit durations in μs (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub tf_us: Vec<f64>,
    /// Explicit durations in ns (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub tf_ns: Vec<f64>,
    /// Lower end of the logarithmic grid
    #[arg(long)]
    pub tf_min_ns: Option<f64>,
    #[arg(long)]
    pub tf_max_ns: Option<f64>,
    /// Grid points per decade
    #[arg(long)]
    pub per_decade: Option<usize>,
    /// Repeat every row with halved steps and report the change
    #[arg(long)]
    pub check_halving: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unassisted sweeps against duration
    SweepCompare {
        /// Sweep kinds (lz, pl, beta, rc, tan)
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<SweepKind>,
        #[arg(long)]
        k_beta: Option<u32>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Counterdiabatic field elements along the sweep
    CdField {
        #[arg(long)]
        sweep: Option<SweepKind>,
        /// Points on the rescaled-time grid
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        k_beta: Option<u32>,
    },
    /// Sweeps assisted by oscillating coupling controls
    EcdScan {
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<SweepKind>,
        /// Peak control amplitude in units of g (comma separated)
        #[arg(long, value_delimiter = ',')]
        k_ratio: Vec<f64>,
        /// Upper bound on the control frequency
        #[arg(long)]
        omega_ceiling_ghz: Option<f64>,
        /// Reference rows at these fixed control frequencies
        #[arg(long, value_delimiter = ',')]
        fixed_omega_ghz: Vec<f64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Monte Carlo over static control errors
    Robustness {
        #[arg(long)]
        sweep: Option<SweepKind>,
        /// Samples per duration
        #[arg(long)]
        n_eps: Option<usize>,
        /// Half-width of the uniform relative error distribution
        #[arg(long)]
        eps_max: Option<f64>,
        /// Unperturbed control frequency
        #[arg(long)]
        fixed_omega_ghz: Option<f64>,
        /// Apply the phase error to both controls
        #[arg(long)]
        shift_both_phases: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Fidelity under resonator and qubit damping
    Dissipation {
        #[arg(long)]
        sweep: Option<SweepKind>,
        #[arg(long, value_delimiter = ',')]
        kappa_khz: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        gamma_khz: Vec<f64>,
        #[arg(long)]
        tf_ns: Option<f64>,
        /// Resonator Fock states kept
        #[arg(long)]
        n_fock: Option<usize>,
        #[arg(long)]
        fixed_omega_ghz: Option<f64>,
    },
    /// Minimal gap against the dispersive estimates
    GapReport,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SweepCompare { .. } => "sweep-compare",
            Command::CdField { .. } => "cd-field",
            Command::EcdScan { .. } => "ecd-scan",
            Command::Robustness { .. } => "robustness",
            Command::Dissipation { .. } => "dissipation",
            Command::GapReport => "gap-report",
        }
    }
}

/// Errors reported by [`run`]: bad configuration (exit 1), or every row of
/// the experiment failed numerically (exit 2).
#[derive(Debug)]
pub enum RunError {
    Config(String),
    AllFailed(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<ecd_sim::Error> for RunError {
    fn from(e: ecd_sim::Error) -> Self {
        RunError::Config(e.to_string())
    }
}

fn apply_grid(cfg: &mut RunConfig, grid: &GridArgs) {
    let mut list: Vec<f64> = grid.tf_us.iter().map(|t| t * 1e3).collect();
    list.extend(&grid.tf_ns);
    if !list.is_empty() {
        cfg.grid.tf_ns = list;
    }
    if grid.tf_min_ns.is_some() {
        cfg.grid.tf_min_ns = grid.tf_min_ns;
    }
    if grid.tf_max_ns.is_some() {
        cfg.grid.tf_max_ns = grid.tf_max_ns;
    }
    if grid.per_decade.is_some() {
        cfg.grid.per_decade = grid.per_decade;
    }
    if grid.check_halving {
        cfg.integrator.check_step_halving = true;
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Effective configuration: file (if any), then flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.run.workers, cli.workers);
    set(&mut cfg.run.seed, cli.seed);
    set(&mut cfg.run.out, cli.out.clone());
    set(&mut cfg.system.resonator_ghz, cli.system.resonator_ghz);
    set(&mut cfg.system.qubit1_ghz, cli.system.qubit1_ghz);
    set(&mut cfg.system.qubit2_ghz, cli.system.qubit2_ghz);
    set(&mut cfg.system.coupling_mhz, cli.system.g_mhz);
    match &cli.command {
        Command::SweepCompare { sweep, k_beta, grid } => {
            if !sweep.is_empty() {
                cfg.sweep.kinds = sweep.clone();
            }
            set(&mut cfg.sweep.k_beta, *k_beta);
            apply_grid(&mut cfg, grid);
        }
        Command::CdField { sweep, k_beta, grid_points } => {
            if let Some(s) = sweep {
                cfg.sweep.kinds = vec![*s];
            }
            set(&mut cfg.cd_field.grid_points, *grid_points);
            set(&mut cfg.sweep.k_beta, *k_beta);
        }
        Command::EcdScan { sweep, k_ratio, omega_ceiling_ghz, fixed_omega_ghz, grid } => {
            if !sweep.is_empty() {
                cfg.sweep.kinds = sweep.clone();
            }
            if !k_ratio.is_empty() {
                cfg.ecd.k_ratios = k_ratio.clone();
            }
            set(&mut cfg.ecd.omega_ceiling_ghz, *omega_ceiling_ghz);
            if !fixed_omega_ghz.is_empty() {
                cfg.ecd.fixed_omega_ghz = fixed_omega_ghz.clone();
            }
            apply_grid(&mut cfg, grid);
        }
        Command::Robustness { sweep, n_eps, eps_max, fixed_omega_ghz, shift_both_phases, grid } => {
            if let Some(s) = sweep {
                cfg.sweep.kinds = vec![*s];
            }
            set(&mut cfg.robustness.n_eps, *n_eps);
            set(&mut cfg.robustness.eps_max, *eps_max);
            set(&mut cfg.robustness.omega_ghz, *fixed_omega_ghz);
            if *shift_both_phases {
                cfg.robustness.shift_both_phases = true;
            }
            apply_grid(&mut cfg, grid);
        }
        Command::Dissipation { sweep, kappa_khz, gamma_khz, tf_ns, n_fock, fixed_omega_ghz } => {
            if let Some(s) = sweep {
                cfg.sweep.kinds = vec![*s];
            }
            if !kappa_khz.is_empty() {
                cfg.dissipation.kappa_khz = kappa_khz.clone();
            }
            if !gamma_khz.is_empty() {
                cfg.dissipation.gamma_khz = gamma_khz.clone();
            }
            set(&mut cfg.dissipation.t_f_ns, *tf_ns);
            set(&mut cfg.dissipation.n_fock, *n_fock);
            set(&mut cfg.dissipation.omega_ghz, *fixed_omega_ghz);
        }
        Command::GapReport => {}
    }
    Ok(cfg)
}

fn with_config(metadata: Metadata, cfg: &RunConfig) -> Metadata {
    #[derive(Serialize)]
    struct Settings<'a> {
        experiment: &'a serde_json::Value,
        config: &'a RunConfig,
    }
    let experiment = metadata.settings.clone();
    metadata.with_settings(Settings { experiment: &experiment, config: cfg })
}

fn single_sweep(cfg: &RunConfig, default: SweepKind) -> Result<SweepKind, RunError> {
    match cfg.sweep.kinds.as_slice() {
        [] => Ok(default),
        [k] => Ok(*k),
        _ => Err(RunError::Config("this experiment takes a single sweep".into())),
    }
}

fn report(out: &Path, name: &str, failed: usize, total: usize) {
    eprintln!("{name}: {} rows ({failed} failed) written to {}", total, out.display());
}

/// Runs the experiment selected by `cli` with the effective configuration.
pub fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), RunError> {
    let params = cfg.system.params()?;
    let opts = cfg.scan_options()?;
    let out = cfg.run.out.as_path();
    let name = cli.command.name();
    match &cli.command {
        Command::SweepCompare { .. } => {
            let t_fs = cfg.grid.resolve((10.0, 10_000.0, 40))?;
            let kinds = cfg.sweeps_or(&SweepKind::ALL);
            let mut res = run_sweep_comparison(&t_fs, &kinds, &params, &opts)?;
            res.metadata = with_config(res.metadata, cfg);
            res.metadata.seed = Some(cfg.run.seed);
            res.write(out, name)?;
            report(out, name, res.n_failed(), res.rows.len());
            for r in &res.rows {
                match r.infidelity {
                    Some(i) => println!("{:<5} t_f = {:>10.3} ns  infidelity = {:.4e}", r.sweep, r.t_f_s * 1e9, i),
                    None => println!("{:<5} t_f = {:>10.3} ns  {}", r.sweep, r.t_f_s * 1e9, r.status),
                }
            }
            if res.all_failed() {
                return Err(RunError::AllFailed(name.into()));
            }
        }
        Command::CdField { .. } => {
            let kind = single_sweep(cfg, SweepKind::Pl)?;
            let mut res = run_cd_field(kind, &params, cfg.cd_field.grid_points, cfg.sweep.k_beta)?;
            res.metadata = with_config(res.metadata, cfg);
            res.write(out, name)?;
            println!(
                "{kind}: max h23 = {:.6}, min h23 = {:.6}, dominance = {:.2}",
                res.max_h23, res.min_h23, res.dominance_ratio
            );
        }
        Command::EcdScan { .. } => {
            let t_fs = cfg.grid.resolve((10.0, 3_000.0, 40))?;
            let kinds = cfg.sweeps_or(&[SweepKind::Pl, SweepKind::Tan]);
            let mut failed = 0;
            let mut total = 0;
            for kind in kinds {
                let scan = cfg.ecd_scan(kind)?;
                let mut res = run_ecd_scan(&t_fs, &scan, &params, &opts)?;
                res.metadata = with_config(res.metadata, cfg);
                let file = format!("{name}-{kind}");
                res.write(out, &file)?;
                report(out, &file, res.n_failed(), res.rows.len());
                failed += res.n_failed();
                total += res.rows.len();
            }
            if total > 0 && failed == total {
                return Err(RunError::AllFailed(name.into()));
            }
        }
        Command::Robustness { .. } => {
            let kind = single_sweep(cfg, SweepKind::Tan)?;
            let t_fs = if cfg.grid == Default::default() {
                default_robustness_grid()
            } else {
                cfg.grid.resolve((20.0, 1_000.0, 10))?
            };
            let spec = cfg.robustness_spec(kind)?;
            let mut res = run_robustness(&t_fs, &spec, &params, &opts)?;
            res.metadata = with_config(res.metadata, cfg);
            res.write(out, name)?;
            let failed = res.rows.iter().filter(|r| r.status != "ok").count();
            report(out, name, failed, res.rows.len());
            if res.all_failed() {
                return Err(RunError::AllFailed(name.into()));
            }
        }
        Command::Dissipation { .. } => {
            let kind = single_sweep(cfg, SweepKind::Tan)?;
            let spec = cfg.dissipation_spec(kind)?;
            let mut res = run_dissipation_grid(&spec, &params, &opts)?;
            res.metadata = with_config(res.metadata, cfg);
            res.write(out, name)?;
            let failed = res.rows.iter().filter(|r| r.status != "ok").count();
            report(out, name, failed, res.rows.len());
            println!("closed-system fidelity: {:.6}", res.closed_system_fidelity);
            for r in &res.rows {
                match r.fidelity {
                    Some(f) => println!("kappa = {:>6.2} kHz  gamma = {:>6.2} kHz  fidelity = {:.6}", r.kappa_khz, r.gamma_khz, f),
                    None => println!("kappa = {:>6.2} kHz  gamma = {:>6.2} kHz  {}", r.kappa_khz, r.gamma_khz, r.status),
                }
            }
            if res.all_failed() {
                return Err(RunError::AllFailed(name.into()));
            }
        }
        Command::GapReport => {
            let mut res = run_gap_report(&params)?;
            res.metadata = with_config(res.metadata, cfg);
            res.write(out, name)?;
            print!("{}", res.render());
        }
    }
    Ok(())
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match effective_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.run.workers).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| run(&cli, &cfg)) {
        Ok(()) => EXIT_OK,
        Err(RunError::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(RunError::AllFailed(what)) => {
            eprintln!("error: every row of {what} failed");
            EXIT_ALL_FAILED
        }
    }
}
