//! Batch runs over protocol durations, sweeps, control settings, perturbation
//! samples and damping rates. Rows are independent and evaluated in parallel;
//! a failing row is kept with its error in the `status` column.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecd::{draw_perturbations, resolve_omega, ControlSignals, ECDConfig, PhasePerturbation, PerturbationSample};
use crate::error::{Error, Result};
use crate::model::{dispersive_estimates, ghz, khz, minimal_gap, to_ghz, SystemParams};
use crate::propagators::{
    adiabatic_target, fidelity_mixed, infidelity, propagate_lindblad, propagate_unitary, AdiabaticTarget, Correction,
    DensityMatrix, IntegratorOptions, NoiseRates, DEFAULT_N_FOCK,
};
use crate::spectral::{build_cd_profile, CDProfile, DEFAULT_PROFILE_GRID, UPPER_PAIRS};
use crate::sweeps::{SweepKind, SweepSpec};

pub const STATUS_OK: &str = "ok";

/// Logarithmic grid from `start` to `stop` inclusive with `per_decade` points
/// per factor of ten.
pub fn log_grid(start: f64, stop: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && stop >= start && per_decade > 0) {
        return Err(Error::InvalidParameter(format!(
            "bad grid: start {start}, stop {stop}, {per_decade} per decade"
        )));
    }
    let decades = (stop / start).log10();
    let n = (decades * per_decade as f64).round() as usize;
    if n == 0 {
        return Ok(vec![start]);
    }
    Ok((0..=n)
        .map(|i| if i == n { stop } else { start * 10f64.powf(decades * i as f64 / n as f64) })
        .collect())
}

/// Default duration grid: 10 ns to 10 μs, 40 points per decade.
pub fn default_tf_grid() -> Vec<f64> {
    log_grid(10e-9, 10e-6, 40).expect("valid default grid")
}

fn check_durations(t_fs: &[f64]) -> Result<()> {
    if t_fs.is_empty() {
        return Err(Error::InvalidParameter("empty duration list".into()));
    }
    if t_fs.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter("durations must be positive".into()));
    }
    if t_fs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("durations must be strictly ascending".into()));
    }
    Ok(())
}

/// `git describe` of the working tree, or `"unknown"`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub experiment: String,
    pub version: String,
    pub git_describe: String,
    pub params: SystemParams,
    pub seed: Option<u64>,
    pub integrator: IntegratorOptions,
    /// Experiment-specific settings, and the effective run configuration when
    /// started from the command line.
    pub settings: serde_json::Value,
}

impl Metadata {
    pub fn new(experiment: &str, params: &SystemParams, integrator: &IntegratorOptions) -> Self {
        Self {
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_describe: git_describe(),
            params: *params,
            seed: None,
            integrator: *integrator,
            settings: serde_json::Value::Null,
        }
    }

    pub fn with_settings(mut self, settings: impl Serialize) -> Self {
        self.settings = serde_json::to_value(settings).unwrap_or(serde_json::Value::Null);
        self
    }
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.meta.json`.
pub fn write_outputs<R: Serialize>(dir: &Path, name: &str, rows: &[R], metadata: &Metadata) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let meta_path = dir.join(format!("{name}.meta.json"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(&meta_path, serde_json::to_string_pretty(metadata)? + "\n")?;
    Ok((csv_path, meta_path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub integrator: IntegratorOptions,
    pub profile_grid: usize,
    /// Repeat every row with halved step bounds and report the relative change.
    pub check_step_halving: bool,
    /// Order of the incomplete-beta sweep.
    pub k_beta: u32,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorOptions::default(),
            profile_grid: DEFAULT_PROFILE_GRID,
            check_step_halving: false,
            k_beta: crate::sweeps::DEFAULT_BETA_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub t_f_s: f64,
    pub sweep: SweepKind,
    pub correction: String,
    pub omega_mode: Option<String>,
    pub k_ratio: Option<f64>,
    pub omega_ghz: Option<f64>,
    pub ceiling_binding: Option<bool>,
    pub peak_amplitude_over_g: Option<f64>,
    pub infidelity: Option<f64>,
    pub halving_rel_change: Option<f64>,
    pub steps: Option<u64>,
    pub status: String,
}

impl ScanRow {
    fn new(t_f: f64, sweep: SweepKind, correction: &str) -> Self {
        Self {
            t_f_s: t_f,
            sweep,
            correction: correction.into(),
            omega_mode: None,
            k_ratio: None,
            omega_ghz: None,
            ceiling_binding: None,
            peak_amplitude_over_g: None,
            infidelity: None,
            halving_rel_change: None,
            steps: None,
            status: STATUS_OK.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    fn fill(&mut self, outcome: Result<(f64, u64, Option<f64>)>) {
        match outcome {
            Ok((inf, steps, change)) => {
                self.infidelity = Some(inf);
                self.steps = Some(steps);
                self.halving_rel_change = change;
            }
            Err(e) => self.status = format!("error: {e}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub metadata: Metadata,
}

impl ScanResult {
    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.n_failed() == self.rows.len()
    }

    /// Successful rows matching `pred`, in scan order.
    pub fn select<'a>(&'a self, pred: impl Fn(&ScanRow) -> bool + 'a) -> impl Iterator<Item = &'a ScanRow> + 'a {
        self.rows.iter().filter(move |r| r.is_ok() && pred(r))
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        write_outputs(dir, name, &self.rows, &self.metadata)
    }
}

/// Final infidelity of one unitary run; optionally repeated with halved steps.
fn unitary_infidelity(
    spec: &SweepSpec,
    params: &SystemParams,
    t_f: f64,
    correction: &Correction,
    target: &AdiabaticTarget,
    opts: &ScanOptions,
) -> Result<(f64, u64, Option<f64>)> {
    let out = propagate_unitary(spec, params, t_f, correction, &target.initial, &opts.integrator)?;
    let inf = infidelity(&out.state, &target.target)?;
    let change = if opts.check_step_halving {
        let fine = propagate_unitary(spec, params, t_f, correction, &target.initial, &opts.integrator.refined())?;
        let inf_fine = infidelity(&fine.state, &target.target)?;
        Some(relative_change(inf, inf_fine))
    } else {
        None
    };
    Ok((inf, out.steps, change))
}

pub fn relative_change(coarse: f64, fine: f64) -> f64 {
    if fine == 0.0 {
        if coarse == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (coarse - fine).abs() / fine
    }
}

struct SweepSetup {
    spec: SweepSpec,
    target: AdiabaticTarget,
}

fn setup(kind: SweepKind, params: &SystemParams, k_beta: u32) -> Result<SweepSetup> {
    let spec = SweepSpec::for_params(kind, params)?.with_k_beta(k_beta)?;
    let target = adiabatic_target(&spec, params)?;
    Ok(SweepSetup { spec, target })
}

/// Unassisted sweeps: one propagation per `(sweep, t_f)`.
pub fn run_sweep_comparison(
    t_fs: &[f64],
    kinds: &[SweepKind],
    params: &SystemParams,
    opts: &ScanOptions,
) -> Result<ScanResult> {
    check_durations(t_fs)?;
    let setups = kinds.iter().map(|&k| setup(k, params, opts.k_beta)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..kinds.len()).flat_map(|i| t_fs.iter().map(move |&t| (i, t))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, t_f)| {
            let s = &setups[i];
            let mut row = ScanRow::new(t_f, kinds[i], Correction::None.label());
            row.fill(unitary_infidelity(&s.spec, params, t_f, &Correction::None, &s.target, opts));
            row
        })
        .collect();
    let metadata = Metadata::new("sweep-compare", params, &opts.integrator).with_settings(serde_json::json!({
        "sweeps": kinds,
        "t_f_s": t_fs,
        "profile_grid": opts.profile_grid,
        "check_step_halving": opts.check_step_halving,
    }));
    Ok(ScanResult { rows, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdFieldRow {
    pub s: f64,
    pub f: f64,
    pub h12: f64,
    pub h13: f64,
    pub h14: f64,
    pub h23: f64,
    pub h24: f64,
    pub h34: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdFieldResult {
    pub rows: Vec<CdFieldRow>,
    /// Largest flip-flop element over the largest of the others.
    pub dominance_ratio: f64,
    pub max_h23: f64,
    pub min_h23: f64,
    pub metadata: Metadata,
}

impl CdFieldResult {
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        write_outputs(dir, name, &self.rows, &self.metadata)
    }
}

/// Imaginary parts of all independent counterdiabatic elements (times `t_f`)
/// on a uniform grid. Row/column labels are 1-based.
pub fn run_cd_field(kind: SweepKind, params: &SystemParams, n_grid: usize, k_beta: u32) -> Result<CdFieldResult> {
    let spec = SweepSpec::for_params(kind, params)?.with_k_beta(k_beta)?;
    let profile = build_cd_profile(&spec, params, n_grid)?;
    let rows = profile
        .grid()
        .iter()
        .zip(profile.generators())
        .map(|(&s, a)| {
            let e: Vec<f64> = UPPER_PAIRS.iter().map(|&(i, j)| a[(i, j)]).collect();
            Ok(CdFieldRow { s, f: spec.eval(s)?, h12: e[0], h13: e[1], h14: e[2], h23: e[3], h24: e[4], h34: e[5] })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_h23 = profile.h23_samples().iter().cloned().fold(f64::INFINITY, f64::min);
    let metadata = Metadata::new("cd-field", params, &IntegratorOptions::default())
        .with_settings(serde_json::json!({ "sweep": kind, "n_grid": n_grid, "k_beta": k_beta }));
    Ok(CdFieldResult { dominance_ratio: profile.dominance_ratio(), max_h23: profile.max_h23(), min_h23, rows, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdScanSpec {
    pub kind: SweepKind,
    pub k_ratios: Vec<f64>,
    /// rad/s
    pub omega_ceiling: f64,
    /// rad/s; one reference row per value and duration.
    pub fixed_omegas: Vec<f64>,
    pub include_unassisted: bool,
}

impl EcdScanSpec {
    pub fn new(kind: SweepKind) -> Self {
        Self {
            kind,
            k_ratios: vec![1.0, 2.0, 3.0],
            omega_ceiling: ghz(crate::ecd::DEFAULT_OMEGA_CEILING_GHZ),
            fixed_omegas: [4.0, 5.0, 6.0, 8.0].iter().map(|&w| ghz(w)).collect(),
            include_unassisted: true,
        }
    }
}

enum EcdJob {
    Unassisted,
    Ceiling(f64),
    Fixed(f64),
}

/// Sweep assisted by eCD controls, in ceiling-limited mode for each `k` and at
/// fixed reference frequencies.
pub fn run_ecd_scan(t_fs: &[f64], scan: &EcdScanSpec, params: &SystemParams, opts: &ScanOptions) -> Result<ScanResult> {
    check_durations(t_fs)?;
    let s = setup(scan.kind, params, opts.k_beta)?;
    let profile: Arc<CDProfile> = Arc::new(build_cd_profile(&s.spec, params, opts.profile_grid)?);

    let mut jobs = Vec::new();
    for &t_f in t_fs {
        if scan.include_unassisted {
            jobs.push((t_f, EcdJob::Unassisted));
        }
        jobs.extend(scan.k_ratios.iter().map(|&k| (t_f, EcdJob::Ceiling(k))));
        jobs.extend(scan.fixed_omegas.iter().map(|&w| (t_f, EcdJob::Fixed(w))));
    }

    let rows = jobs
        .par_iter()
        .map(|(t_f, job)| {
            let t_f = *t_f;
            let cfg = match job {
                EcdJob::Unassisted => {
                    let mut row = ScanRow::new(t_f, scan.kind, "none");
                    row.fill(unitary_infidelity(&s.spec, params, t_f, &Correction::None, &s.target, opts));
                    return row;
                }
                EcdJob::Ceiling(k) => ECDConfig::ceiling_limited(*k).with_ceiling(scan.omega_ceiling),
                EcdJob::Fixed(w) => ECDConfig::fixed(*w),
            };
            let mut row = ScanRow::new(t_f, scan.kind, "ecd");
            row.omega_mode = Some(if matches!(job, EcdJob::Fixed(_)) { "fixed" } else { "ceiling-limited" }.into());
            if let EcdJob::Ceiling(k) = job {
                row.k_ratio = Some(*k);
            }
            let outcome = resolve_omega(&cfg, &profile, t_f, params).and_then(|r| {
                row.omega_ghz = Some(to_ghz(r.omega));
                if let EcdJob::Ceiling(_) = job {
                    row.ceiling_binding = Some(r.ceiling_binding);
                }
                let sig = ControlSignals::new(profile.clone(), t_f, r.omega)?;
                row.peak_amplitude_over_g = Some(sig.peak_amplitude() / params.g());
                unitary_infidelity(&s.spec, params, t_f, &Correction::Ecd(sig), &s.target, opts)
            });
            row.fill(outcome);
            row
        })
        .collect();
    let metadata = Metadata::new("ecd-scan", params, &opts.integrator).with_settings(serde_json::json!({
        "scan": scan,
        "t_f_s": t_fs,
        "profile_grid": opts.profile_grid,
        "max_h23": profile.max_h23(),
        "check_step_halving": opts.check_step_halving,
    }));
    Ok(ScanResult { rows, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSpec {
    pub kind: SweepKind,
    /// Unperturbed eCD frequency, rad/s.
    pub omega: f64,
    pub n_eps: usize,
    pub eps_max: f64,
    pub seed: u64,
    pub phase: PhasePerturbation,
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        Self {
            kind: SweepKind::Tan,
            omega: ghz(crate::ecd::DEFAULT_OMEGA_CEILING_GHZ),
            n_eps: 200,
            eps_max: crate::ecd::DEFAULT_EPS_MAX,
            seed: 0,
            phase: PhasePerturbation::CosineOnly,
        }
    }
}

/// Default robustness durations: 20 ns to 1 μs, 10 points per decade.
pub fn default_robustness_grid() -> Vec<f64> {
    log_grid(20e-9, 1e-6, 10).expect("valid default grid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub t_f_s: f64,
    pub unperturbed: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// `1 − ⟨I⟩ / I⁽⁰⁾`
    pub relative_deviation: Option<f64>,
    pub log10_unperturbed: Option<f64>,
    pub mean_log10: Option<f64>,
    pub std_log10: Option<f64>,
    pub n_eps: usize,
    pub n_failed: usize,
    pub seed: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessSample {
    pub t_f_s: f64,
    pub index: usize,
    pub eps_omega: f64,
    pub eps_phi: f64,
    pub eps_amp: f64,
    pub infidelity: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessResult {
    pub rows: Vec<RobustnessRow>,
    pub samples: Vec<RobustnessSample>,
    pub metadata: Metadata,
}

impl RobustnessResult {
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        let out = write_outputs(dir, name, &self.rows, &self.metadata)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{name}_samples.csv")))?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(out)
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.status != STATUS_OK)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Monte Carlo over static control errors at a fixed eCD frequency. Samples
/// for duration `i` come from stream `i` of the seeded generator.
pub fn run_robustness(t_fs: &[f64], spec: &RobustnessSpec, params: &SystemParams, opts: &ScanOptions) -> Result<RobustnessResult> {
    check_durations(t_fs)?;
    if spec.n_eps == 0 {
        return Err(Error::InvalidParameter("n_eps must be positive".into()));
    }
    let s = setup(spec.kind, params, opts.k_beta)?;
    let profile = Arc::new(build_cd_profile(&s.spec, params, opts.profile_grid)?);
    let draws = t_fs
        .iter()
        .enumerate()
        .map(|(i, _)| draw_perturbations(spec.seed, i as u64, spec.n_eps, spec.eps_max))
        .collect::<Result<Vec<_>>>()?;

    // sample index 0 of every duration is the unperturbed run
    let jobs: Vec<(usize, Option<usize>)> = (0..t_fs.len())
        .flat_map(|i| std::iter::once((i, None)).chain((0..spec.n_eps).map(move |j| (i, Some(j)))))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let t_f = t_fs[i];
            let eps = j.map_or(PerturbationSample::zero(), |j| draws[i][j]);
            let sig = ControlSignals::new(profile.clone(), t_f, spec.omega)?.with_perturbation(eps, spec.phase);
            let out = propagate_unitary(&s.spec, params, t_f, &Correction::Ecd(sig), &s.target.initial, &opts.integrator)?;
            infidelity(&out.state, &s.target.target)
        })
        .collect();

    let mut rows = Vec::with_capacity(t_fs.len());
    let mut samples = Vec::with_capacity(t_fs.len() * spec.n_eps);
    let per = spec.n_eps + 1;
    for (i, &t_f) in t_fs.iter().enumerate() {
        let chunk = &results[i * per..(i + 1) * per];
        let mut ok = Vec::with_capacity(spec.n_eps);
        for (j, r) in chunk[1..].iter().enumerate() {
            let e = draws[i][j];
            samples.push(RobustnessSample {
                t_f_s: t_f,
                index: j,
                eps_omega: e.eps_omega,
                eps_phi: e.eps_phi,
                eps_amp: e.eps_amp,
                infidelity: r.as_ref().ok().copied(),
                status: r.as_ref().map_or_else(|e| format!("error: {e}"), |_| STATUS_OK.into()),
            });
            if let Ok(v) = r {
                ok.push(*v);
            }
        }
        let mut row = RobustnessRow {
            t_f_s: t_f,
            unperturbed: None,
            mean: None,
            std: None,
            min: None,
            max: None,
            relative_deviation: None,
            log10_unperturbed: None,
            mean_log10: None,
            std_log10: None,
            n_eps: spec.n_eps,
            n_failed: spec.n_eps - ok.len(),
            seed: spec.seed,
            status: STATUS_OK.into(),
        };
        match &chunk[0] {
            Err(e) => row.status = format!("error: {e}"),
            Ok(_) if ok.is_empty() => row.status = "error: every perturbed run failed".into(),
            Ok(i0) => {
                let (mean, std) = mean_std(&ok);
                let logs: Vec<f64> = ok.iter().map(|v| v.max(f64::MIN_POSITIVE).log10()).collect();
                let (mean_log, std_log) = mean_std(&logs);
                row.unperturbed = Some(*i0);
                row.mean = Some(mean);
                row.std = Some(std);
                row.min = Some(ok.iter().cloned().fold(f64::INFINITY, f64::min));
                row.max = Some(ok.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                row.relative_deviation = Some(1.0 - mean / i0);
                row.log10_unperturbed = Some(i0.max(f64::MIN_POSITIVE).log10());
                row.mean_log10 = Some(mean_log);
                row.std_log10 = Some(std_log);
            }
        }
        rows.push(row);
    }
    let mut metadata = Metadata::new("robustness", params, &opts.integrator).with_settings(serde_json::json!({
        "spec": spec,
        "t_f_s": t_fs,
        "profile_grid": opts.profile_grid,
    }));
    metadata.seed = Some(spec.seed);
    Ok(RobustnessResult { rows, samples, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationSpec {
    pub kind: SweepKind,
    pub t_f: f64,
    /// Fixed eCD frequency, rad/s.
    pub omega: f64,
    /// rad/s
    pub kappas: Vec<f64>,
    /// rad/s; dephasing is `dephasing_ratio · γ`.
    pub gammas: Vec<f64>,
    pub dephasing_ratio: f64,
    pub n_fock: usize,
}

impl Default for DissipationSpec {
    fn default() -> Self {
        let grid: Vec<f64> = [0.0, 5.0, 10.0, 15.0, 20.0].iter().map(|&k| khz(k)).collect();
        Self {
            kind: SweepKind::Tan,
            t_f: 100e-9,
            omega: ghz(crate::ecd::DEFAULT_OMEGA_CEILING_GHZ),
            kappas: grid.clone(),
            gammas: grid,
            dephasing_ratio: 0.5,
            n_fock: DEFAULT_N_FOCK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationRow {
    pub kappa_khz: f64,
    pub gamma_khz: f64,
    pub gamma_phi_khz: f64,
    pub fidelity: Option<f64>,
    pub max_trace_drift: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub steps: Option<u64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipationResult {
    pub rows: Vec<DissipationRow>,
    /// `1 − infidelity` of the four-level unitary run with the same controls.
    pub closed_system_fidelity: f64,
    pub metadata: Metadata,
}

impl DissipationResult {
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        write_outputs(dir, name, &self.rows, &self.metadata)
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.status != STATUS_OK)
    }

    pub fn fidelity_at(&self, kappa_khz: f64, gamma_khz: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.kappa_khz - kappa_khz).abs() < 1e-9 && (r.gamma_khz - gamma_khz).abs() < 1e-9)
            .and_then(|r| r.fidelity)
    }
}

/// Lindblad runs of the eCD-assisted protocol over a grid of damping rates.
pub fn run_dissipation_grid(spec: &DissipationSpec, params: &SystemParams, opts: &ScanOptions) -> Result<DissipationResult> {
    if spec.kappas.is_empty() || spec.gammas.is_empty() {
        return Err(Error::InvalidParameter("empty rate grid".into()));
    }
    let s = setup(spec.kind, params, opts.k_beta)?;
    let profile = Arc::new(build_cd_profile(&s.spec, params, opts.profile_grid)?);
    let sig = ControlSignals::new(profile, spec.t_f, spec.omega)?;
    let correction = Correction::Ecd(sig);
    let closed = propagate_unitary(&s.spec, params, spec.t_f, &correction, &s.target.initial, &opts.integrator)?;
    let closed_system_fidelity = 1.0 - infidelity(&closed.state, &s.target.target)?;
    let rho0 = DensityMatrix::from_pure(&s.target.initial.embed(spec.n_fock)?)?;

    let jobs: Vec<(f64, f64)> = spec.kappas.iter().flat_map(|&k| spec.gammas.iter().map(move |&g| (k, g))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(kappa, gamma)| {
            let mut row = DissipationRow {
                kappa_khz: kappa / khz(1.0),
                gamma_khz: gamma / khz(1.0),
                gamma_phi_khz: spec.dephasing_ratio * gamma / khz(1.0),
                fidelity: None,
                max_trace_drift: None,
                min_eigenvalue: None,
                steps: None,
                status: STATUS_OK.into(),
            };
            let outcome = NoiseRates::with_dephasing(kappa, gamma, spec.dephasing_ratio * gamma).and_then(|rates| {
                let out = propagate_lindblad(&s.spec, params, spec.t_f, &correction, &rates, &rho0, spec.n_fock, &opts.integrator)?;
                let fid = fidelity_mixed(&out.state, &s.target.target)?;
                Ok((fid, out))
            });
            match outcome {
                Ok((fid, out)) => {
                    row.fidelity = Some(fid);
                    row.max_trace_drift = Some(out.max_trace_drift);
                    row.min_eigenvalue = Some(out.min_eigenvalue);
                    row.steps = Some(out.steps);
                }
                Err(e) => row.status = format!("error: {e}"),
            }
            row
        })
        .collect();
    let metadata = Metadata::new("dissipation", params, &opts.integrator).with_settings(serde_json::json!({
        "spec": spec,
        "closed_system_fidelity": closed_system_fidelity,
        "profile_grid": opts.profile_grid,
    }));
    Ok(DissipationResult { rows, closed_system_fidelity, metadata })
}

/// Couplings of one resonator configuration, in rad/s and in MHz (ordinary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEntry {
    pub omega_r_ghz: f64,
    /// Numerical minimal splitting `2 g0`, rad/s.
    pub two_g0: f64,
    pub rwa_coupling: f64,
    pub renormalized_coupling: f64,
    /// `renormalized / rwa`
    pub ratio: f64,
    /// `1 − δ/Δ`
    pub ratio_closed_form: f64,
    /// The counter-rotating correction enlarges the coupling.
    pub enlarged: bool,
}

impl GapEntry {
    fn compute(params: &SystemParams) -> Result<Self> {
        let est = dispersive_estimates(params)?;
        let ratio = est.renormalized_coupling / est.rwa_coupling;
        Ok(Self {
            omega_r_ghz: to_ghz(params.omega_r()),
            two_g0: 2.0 * minimal_gap(params),
            rwa_coupling: est.rwa_coupling,
            renormalized_coupling: est.renormalized_coupling,
            ratio,
            ratio_closed_form: 1.0 - est.delta / est.sum_frequency,
            enlarged: est.renormalized_coupling.abs() > est.rwa_coupling.abs(),
        })
    }

    pub fn in_mhz(x: f64) -> f64 {
        crate::model::to_mhz(x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub configured: GapEntry,
    /// Same qubits with the resonator mirrored below them, at `2 ω_q − ω_r`.
    pub mirrored: GapEntry,
    pub metadata: Metadata,
}

/// Minimal gap against the dispersive estimates, for the given resonator and
/// for its mirror image on the other side of the qubits.
pub fn run_gap_report(params: &SystemParams) -> Result<GapReport> {
    let mirrored_params = params.with_omega_r(2.0 * params.omega_q_final() - params.omega_r())?;
    Ok(GapReport {
        configured: GapEntry::compute(params)?,
        mirrored: GapEntry::compute(&mirrored_params)?,
        metadata: Metadata::new("gap-report", params, &IntegratorOptions::default()),
    })
}

impl GapReport {
    pub fn render(&self) -> String {
        use crate::model::to_mhz;
        let mut out = String::new();
        for (label, e) in [("configured", &self.configured), ("mirrored", &self.mirrored)] {
            out += &format!(
                "{label}: omega_r/2pi = {:.3} GHz\n  2 g0          = {:>9.4} MHz  ({:>9.4} x 1e6 rad/s)\n  g^2/delta     = {:>9.4} MHz  ({:>9.4} x 1e6 rad/s)\n  renormalized  = {:>9.4} MHz  ({:>9.4} x 1e6 rad/s)\n  ratio         = {:.6} (1 - delta/Delta = {:.6})\n  counter-rotating terms {} the coupling\n",
                e.omega_r_ghz,
                to_mhz(e.two_g0),
                e.two_g0 * 1e-6,
                to_mhz(e.rwa_coupling),
                e.rwa_coupling * 1e-6,
                to_mhz(e.renormalized_coupling),
                e.renormalized_coupling * 1e-6,
                e.ratio,
                e.ratio_closed_form,
                if e.enlarged { "enlarge" } else { "reduce" },
            );
        }
        out
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        write_outputs(dir, name, &[self.configured, self.mirrored], &self.metadata)
    }
}
