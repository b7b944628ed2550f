//! Run configuration: a TOML file with one table per concern. Every field is
//! optional in the file; command-line flags override file values.

use std::path::{Path, PathBuf};

use ecd_sim::ecd::{PhasePerturbation, DEFAULT_EPS_MAX, DEFAULT_OMEGA_CEILING_GHZ};
use ecd_sim::experiments::{log_grid, DissipationSpec, EcdScanSpec, RobustnessSpec, ScanOptions};
use ecd_sim::model::{ghz, khz, SystemParams};
use ecd_sim::propagators::{IntegratorOptions, DEFAULT_N_FOCK};
use ecd_sim::spectral::DEFAULT_PROFILE_GRID;
use ecd_sim::sweeps::{SweepKind, DEFAULT_BETA_K};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub resonator_ghz: f64,
    pub qubit1_ghz: f64,
    pub qubit2_ghz: f64,
    pub coupling_mhz: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { resonator_ghz: 8.2, qubit1_ghz: 6.01, qubit2_ghz: 5.99, coupling_mhz: 50.0 }
    }
}

impl SystemConfig {
    pub fn params(&self) -> Result<SystemParams, ConfigError> {
        SystemParams::from_frequencies(self.resonator_ghz, self.qubit1_ghz, self.qubit2_ghz, self.coupling_mhz)
            .map_err(|e| ConfigError(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Empty means the subcommand default.
    pub kinds: Vec<SweepKind>,
    pub k_beta: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { kinds: Vec::new(), k_beta: DEFAULT_BETA_K }
    }
}

/// Durations: either an explicit list or a logarithmic grid. Unset values take
/// the subcommand default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub tf_ns: Vec<f64>,
    pub tf_min_ns: Option<f64>,
    pub tf_max_ns: Option<f64>,
    pub per_decade: Option<usize>,
}

impl GridConfig {
    /// Durations in seconds.
    pub fn resolve(&self, default: (f64, f64, usize)) -> Result<Vec<f64>, ConfigError> {
        if !self.tf_ns.is_empty() {
            let mut v: Vec<f64> = self.tf_ns.iter().map(|t| t / 1e9).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            return Ok(v);
        }
        let lo = self.tf_min_ns.unwrap_or(default.0);
        let hi = self.tf_max_ns.unwrap_or(default.1);
        let n = self.per_decade.unwrap_or(default.2);
        log_grid(lo / 1e9, hi / 1e9, n).map_err(|e| ConfigError(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdFieldConfig {
    pub grid_points: usize,
}

impl Default for CdFieldConfig {
    fn default() -> Self {
        Self { grid_points: 501 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcdConfigFile {
    pub k_ratios: Vec<f64>,
    pub omega_ceiling_ghz: f64,
    pub fixed_omega_ghz: Vec<f64>,
    pub include_unassisted: bool,
}

impl Default for EcdConfigFile {
    fn default() -> Self {
        Self {
            k_ratios: vec![1.0, 2.0, 3.0],
            omega_ceiling_ghz: DEFAULT_OMEGA_CEILING_GHZ,
            fixed_omega_ghz: vec![4.0, 5.0, 6.0, 8.0],
            include_unassisted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub n_eps: usize,
    pub eps_max: f64,
    pub omega_ghz: f64,
    pub shift_both_phases: bool,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self { n_eps: 200, eps_max: DEFAULT_EPS_MAX, omega_ghz: DEFAULT_OMEGA_CEILING_GHZ, shift_both_phases: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissipationConfig {
    pub t_f_ns: f64,
    pub kappa_khz: Vec<f64>,
    pub gamma_khz: Vec<f64>,
    pub dephasing_ratio: f64,
    pub n_fock: usize,
    pub omega_ghz: f64,
}

impl Default for DissipationConfig {
    fn default() -> Self {
        let grid = vec![0.0, 5.0, 10.0, 15.0, 20.0];
        Self {
            t_f_ns: 100.0,
            kappa_khz: grid.clone(),
            gamma_khz: grid,
            dephasing_ratio: 0.5,
            n_fock: DEFAULT_N_FOCK,
            omega_ghz: DEFAULT_OMEGA_CEILING_GHZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub local_tolerance: f64,
    pub steps_per_period: usize,
    pub max_phase_per_step: f64,
    pub max_step_fraction: f64,
    pub profile_grid: usize,
    pub check_step_halving: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let d = IntegratorOptions::default();
        Self {
            local_tolerance: d.local_tolerance,
            steps_per_period: d.steps_per_period,
            max_phase_per_step: d.max_phase_per_step,
            max_step_fraction: d.max_step_fraction,
            profile_grid: DEFAULT_PROFILE_GRID,
            check_step_halving: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, workers: 0, out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub sweep: SweepConfig,
    pub grid: GridConfig,
    pub cd_field: CdFieldConfig,
    pub ecd: EcdConfigFile,
    pub robustness: RobustnessConfig,
    pub dissipation: DissipationConfig,
    pub integrator: IntegratorConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn scan_options(&self) -> Result<ScanOptions, ConfigError> {
        let i = &self.integrator;
        if !(i.local_tolerance > 0.0) || i.steps_per_period == 0 || !(i.max_phase_per_step > 0.0) || !(i.max_step_fraction > 0.0) {
            return Err(ConfigError("integrator settings must be positive".into()));
        }
        if i.profile_grid < 5 {
            return Err(ConfigError("profile_grid must be at least 5".into()));
        }
        Ok(ScanOptions {
            integrator: IntegratorOptions {
                local_tolerance: i.local_tolerance,
                steps_per_period: i.steps_per_period,
                max_phase_per_step: i.max_phase_per_step,
                max_step_fraction: i.max_step_fraction,
                ..IntegratorOptions::default()
            },
            profile_grid: i.profile_grid,
            check_step_halving: i.check_step_halving,
            k_beta: self.sweep.k_beta,
        })
    }

    pub fn sweeps_or(&self, default: &[SweepKind]) -> Vec<SweepKind> {
        if self.sweep.kinds.is_empty() { default.to_vec() } else { self.sweep.kinds.clone() }
    }

    pub fn ecd_scan(&self, kind: SweepKind) -> Result<EcdScanSpec, ConfigError> {
        let e = &self.ecd;
        if e.k_ratios.iter().any(|k| !(*k > 0.0)) || !(e.omega_ceiling_ghz > 0.0) || e.fixed_omega_ghz.iter().any(|w| !(*w > 0.0)) {
            return Err(ConfigError("eCD ratios and frequencies must be positive".into()));
        }
        Ok(EcdScanSpec {
            kind,
            k_ratios: e.k_ratios.clone(),
            omega_ceiling: ghz(e.omega_ceiling_ghz),
            fixed_omegas: e.fixed_omega_ghz.iter().map(|&w| ghz(w)).collect(),
            include_unassisted: e.include_unassisted,
        })
    }

    pub fn robustness_spec(&self, kind: SweepKind) -> Result<RobustnessSpec, ConfigError> {
        let r = &self.robustness;
        if r.n_eps == 0 || !(r.eps_max >= 0.0) || !(r.omega_ghz > 0.0) {
            return Err(ConfigError("robustness needs n_eps > 0, eps_max >= 0 and a positive frequency".into()));
        }
        Ok(RobustnessSpec {
            kind,
            omega: ghz(r.omega_ghz),
            n_eps: r.n_eps,
            eps_max: r.eps_max,
            seed: self.run.seed,
            phase: if r.shift_both_phases { PhasePerturbation::Both } else { PhasePerturbation::CosineOnly },
        })
    }

    pub fn dissipation_spec(&self, kind: SweepKind) -> Result<DissipationSpec, ConfigError> {
        let d = &self.dissipation;
        let rates_ok = |v: &[f64]| !v.is_empty() && v.iter().all(|r| *r >= 0.0 && r.is_finite());
        if !rates_ok(&d.kappa_khz) || !rates_ok(&d.gamma_khz) || !(d.dephasing_ratio >= 0.0) {
            return Err(ConfigError("damping rates must be non-empty lists of non-negative values".into()));
        }
        if !(d.t_f_ns > 0.0) || !(d.omega_ghz > 0.0) || d.n_fock < 3 {
            return Err(ConfigError("dissipation needs t_f > 0, omega > 0 and n_fock >= 3".into()));
        }
        Ok(DissipationSpec {
            kind,
            t_f: d.t_f_ns / 1e9,
            omega: ghz(d.omega_ghz),
            kappas: d.kappa_khz.iter().map(|&k| khz(k)).collect(),
            gammas: d.gamma_khz.iter().map(|&g| khz(g)).collect(),
            dephasing_ratio: d.dephasing_ratio,
            n_fock: d.n_fock,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.grid.tf_ns = vec![100.0, 50.0];
        c.sweep.kinds = vec![SweepKind::Tan];
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.grid.resolve((1.0, 2.0, 1)).unwrap(), vec![50e-9, 100e-9]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[system]\nfoo = 1\n").is_err());
        assert!(RunConfig::from_toml("[sweep]\nkinds = [\"zz\"]\n").is_err());
    }

    #[test]
    fn partial_tables() {
        let c = RunConfig::from_toml("[system]\ncoupling_mhz = 40.0\n[run]\nseed = 9\n").unwrap();
        assert_eq!(c.system.coupling_mhz, 40.0);
        assert_eq!(c.system.resonator_ghz, 8.2);
        assert_eq!(c.run.seed, 9);
    }
}
