//! Python module `ecd_sim`.
//!
//! Durations are in seconds and frequencies in ordinary GHz/MHz/kHz unless a
//! name says otherwise. Experiment results come back as plain dicts and lists.

use std::sync::Arc;

use ecd_sim::ecd::{resolve_omega as resolve_omega_rs, ControlSignals, ECDConfig};
use ecd_sim::experiments::{self as exp, ScanOptions};
use ecd_sim::model::{self, ghz, khz, to_ghz, to_mhz};
use ecd_sim::propagators::{self as prop, Correction, IntegratorOptions, PureState};
use ecd_sim::spectral::{build_cd_profile, CDProfile as CoreProfile, DEFAULT_PROFILE_GRID};
use ecd_sim::sweeps::{SweepKind, SweepSpec, DEFAULT_BETA_K};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py_err(e: ecd_sim::Error) -> PyErr {
    use ecd_sim::Error as E;
    match e {
        E::InvalidParameter(_) | E::TimeOutOfRange(_) | E::Config(_) | E::NotNormalized(_) => {
            PyValueError::new_err(e.to_string())
        }
        E::Io(_) | E::Csv(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_kind(name: &str) -> PyResult<SweepKind> {
    name.parse().map_err(to_py_err)
}

/// Serialize through JSON into native Python containers.
fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "SystemParams", module = "ecd_sim", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystemParams {
    inner: model::SystemParams,
}

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (resonator_ghz=8.2, qubit1_ghz=6.01, qubit2_ghz=5.99, coupling_mhz=50.0))]
    fn new(resonator_ghz: f64, qubit1_ghz: f64, qubit2_ghz: f64, coupling_mhz: f64) -> PyResult<Self> {
        let inner = model::SystemParams::from_frequencies(resonator_ghz, qubit1_ghz, qubit2_ghz, coupling_mhz)
            .map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn reference() -> Self {
        Self { inner: model::SystemParams::reference() }
    }

    /// Bare coupling g, rad/s.
    #[getter]
    fn g(&self) -> f64 {
        self.inner.g()
    }

    /// Effective coupling g0, rad/s.
    #[getter]
    fn g0(&self) -> f64 {
        self.inner.g0()
    }

    #[getter]
    fn delta_g(&self) -> f64 {
        self.inner.delta_g()
    }

    #[getter]
    fn f0(&self) -> f64 {
        self.inner.f0()
    }

    /// Minimal anticrossing gap 2 g0, in MHz.
    fn minimal_gap_mhz(&self) -> f64 {
        to_mhz(2.0 * model::minimal_gap(&self.inner))
    }

    /// Dispersive coupling estimates, rad/s.
    fn dispersive_estimates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let est = model::dispersive_estimates(&self.inner).map_err(to_py_err)?;
        to_python(py, &est)
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(resonator_ghz={}, qubit1_ghz={}, qubit2_ghz={}, coupling_mhz={})",
            to_ghz(self.inner.omega_r()),
            to_ghz(self.inner.omega_1_init()),
            to_ghz(self.inner.omega_2_init()),
            to_mhz(self.inner.g()),
        )
    }
}

#[pyclass(name = "Sweep", module = "ecd_sim", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySweep {
    inner: SweepSpec,
}

#[pymethods]
impl PySweep {
    #[new]
    #[pyo3(signature = (kind, params, k_beta=DEFAULT_BETA_K))]
    fn new(kind: &str, params: &PySystemParams, k_beta: u32) -> PyResult<Self> {
        let inner = SweepSpec::for_params(parse_kind(kind)?, &params.inner)
            .and_then(|s| s.with_k_beta(k_beta))
            .map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    /// f(s) for s in [0, 1].
    fn __call__(&self, s: f64) -> PyResult<f64> {
        self.inner.eval(s).map_err(to_py_err)
    }

    fn derivative(&self, s: f64) -> PyResult<f64> {
        self.inner.derivative(s).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Sweep('{}')", self.inner.kind())
    }
}

#[pyclass(name = "CDProfile", module = "ecd_sim", frozen)]
struct PyCDProfile {
    inner: Arc<CoreProfile>,
    sweep: SweepSpec,
}

#[pymethods]
impl PyCDProfile {
    #[new]
    #[pyo3(signature = (sweep, params, n_grid=DEFAULT_PROFILE_GRID))]
    fn new(py: Python<'_>, sweep: &PySweep, params: &PySystemParams, n_grid: usize) -> PyResult<Self> {
        let spec = sweep.inner.clone();
        let p = params.inner.clone();
        let inner = py.detach(|| build_cd_profile(&spec, &p, n_grid)).map_err(to_py_err)?;
        Ok(Self { inner: Arc::new(inner), sweep: spec })
    }

    /// Dimensionless flip-flop element of t_f·H_CD at s.
    fn h23(&self, s: f64) -> f64 {
        self.inner.h23(s)
    }

    #[getter]
    fn max_h23(&self) -> f64 {
        self.inner.max_h23()
    }

    #[getter]
    fn dominance_ratio(&self) -> f64 {
        self.inner.dominance_ratio()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid().to_vec()
    }

    #[getter]
    fn h23_samples(&self) -> Vec<f64> {
        self.inner.h23_samples().to_vec()
    }

    #[getter]
    fn sweep(&self) -> PySweep {
        PySweep { inner: self.sweep.clone() }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Control frequency for a duration: fixed when `fixed_omega_ghz` is given,
/// otherwise the amplitude-limited value capped at the ceiling.
#[pyfunction]
#[pyo3(signature = (profile, params, t_f, k_ratio=1.0, omega_ceiling_ghz=7.0, fixed_omega_ghz=None))]
fn resolve_omega<'py>(
    py: Python<'py>,
    profile: &PyCDProfile,
    params: &PySystemParams,
    t_f: f64,
    k_ratio: f64,
    omega_ceiling_ghz: f64,
    fixed_omega_ghz: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match fixed_omega_ghz {
        Some(w) => ECDConfig::fixed(ghz(w)),
        None => ECDConfig::ceiling_limited(k_ratio).with_ceiling(ghz(omega_ceiling_ghz)),
    };
    let r = resolve_omega_rs(&cfg, &profile.inner, t_f, &params.inner).map_err(to_py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("omega_ghz", to_ghz(r.omega))?;
    d.set_item("amplitude_bound_ghz", to_ghz(r.amplitude_bound))?;
    d.set_item("ceiling_binding", r.ceiling_binding)?;
    Ok(d.into_any())
}

fn options(refined: bool) -> IntegratorOptions {
    let d = IntegratorOptions::default();
    if refined {
        d.refined()
    } else {
        d
    }
}

/// Infidelity of the final state against the adiabatic target.
///
/// `correction` is one of "none", "full_cd", "partial_cd" or "ecd". With
/// "ecd" the control frequency comes from `omega_ghz` when given, else from
/// `k_ratio` and the 7 GHz ceiling.
#[pyfunction]
#[pyo3(signature = (sweep, params, t_f, correction="none", omega_ghz=None, k_ratio=1.0, refined=false))]
fn infidelity(
    py: Python<'_>,
    sweep: &PySweep,
    params: &PySystemParams,
    t_f: f64,
    correction: &str,
    omega_ghz: Option<f64>,
    k_ratio: f64,
    refined: bool,
) -> PyResult<f64> {
    let spec = sweep.inner.clone();
    let p = params.inner.clone();
    let correction = correction.to_ascii_lowercase();
    py.detach(move || -> ecd_sim::Result<f64> {
        let corr = match correction.as_str() {
            "none" => Correction::None,
            "full_cd" => Correction::FullCd,
            "partial_cd" => Correction::PartialCd,
            "ecd" => {
                let profile = Arc::new(build_cd_profile(&spec, &p, DEFAULT_PROFILE_GRID)?);
                let cfg = match omega_ghz {
                    Some(w) => ECDConfig::fixed(ghz(w)),
                    None => ECDConfig::ceiling_limited(k_ratio),
                };
                let omega = resolve_omega_rs(&cfg, &profile, t_f, &p)?.omega;
                Correction::Ecd(ControlSignals::new(profile, t_f, omega)?)
            }
            other => {
                return Err(ecd_sim::Error::InvalidParameter(format!("unknown correction '{other}'")));
            }
        };
        let target = prop::adiabatic_target(&spec, &p)?;
        let out = prop::propagate_unitary(&spec, &p, t_f, &corr, &target.initial, &options(refined))?;
        prop::infidelity(&out.state, &target.target)
    })
    .map_err(to_py_err)
}

/// Final four-level amplitudes of the unassisted evolution, as complex numbers.
#[pyfunction]
fn evolve(py: Python<'_>, sweep: &PySweep, params: &PySystemParams, t_f: f64) -> PyResult<Vec<(f64, f64)>> {
    let spec = sweep.inner.clone();
    let p = params.inner.clone();
    let state: PureState = py
        .detach(|| -> ecd_sim::Result<PureState> {
            let target = prop::adiabatic_target(&spec, &p)?;
            Ok(prop::propagate_unitary(&spec, &p, t_f, &Correction::None, &target.initial, &options(false))?.state)
        })
        .map_err(to_py_err)?;
    Ok(state.amplitudes().iter().map(|c| (c.re, c.im)).collect())
}

fn parse_kinds(kinds: Option<Vec<String>>) -> PyResult<Vec<SweepKind>> {
    match kinds {
        None => Ok(SweepKind::ALL.to_vec()),
        Some(v) => v.iter().map(|k| parse_kind(k)).collect(),
    }
}

/// One row per (sweep, duration) of unassisted infidelities.
#[pyfunction]
#[pyo3(signature = (t_fs, params, kinds=None, check_step_halving=false))]
fn sweep_comparison<'py>(
    py: Python<'py>,
    t_fs: Vec<f64>,
    params: &PySystemParams,
    kinds: Option<Vec<String>>,
    check_step_halving: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let kinds = parse_kinds(kinds)?;
    let p = params.inner.clone();
    let opts = ScanOptions { check_step_halving, ..ScanOptions::default() };
    let res = py.detach(|| exp::run_sweep_comparison(&t_fs, &kinds, &p, &opts)).map_err(to_py_err)?;
    to_python(py, &res.rows)
}

/// Rows of the counterdiabatic field elements along the sweep.
#[pyfunction]
#[pyo3(signature = (kind, params, n_grid=501, k_beta=DEFAULT_BETA_K))]
fn cd_field<'py>(py: Python<'py>, kind: &str, params: &PySystemParams, n_grid: usize, k_beta: u32) -> PyResult<Bound<'py, PyAny>> {
    let kind = parse_kind(kind)?;
    let p = params.inner.clone();
    let res = py.detach(|| exp::run_cd_field(kind, &p, n_grid, k_beta)).map_err(to_py_err)?;
    to_python(py, &res.rows)
}

#[pyfunction]
#[pyo3(signature = (t_fs, params, kind="tan", k_ratios=vec![1.0, 2.0, 3.0], fixed_omegas_ghz=vec![]))]
fn ecd_scan<'py>(
    py: Python<'py>,
    t_fs: Vec<f64>,
    params: &PySystemParams,
    kind: &str,
    k_ratios: Vec<f64>,
    fixed_omegas_ghz: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut scan = exp::EcdScanSpec::new(parse_kind(kind)?);
    scan.k_ratios = k_ratios;
    scan.fixed_omegas = fixed_omegas_ghz.iter().map(|&w| ghz(w)).collect();
    let p = params.inner.clone();
    let res = py.detach(|| exp::run_ecd_scan(&t_fs, &scan, &p, &ScanOptions::default())).map_err(to_py_err)?;
    to_python(py, &res.rows)
}

/// Monte Carlo summary rows; reproducible for a fixed seed.
#[pyfunction]
#[pyo3(signature = (t_fs, params, n_eps=200, eps_max=0.05, seed=0, omega_ghz=7.0, kind="tan"))]
fn robustness<'py>(
    py: Python<'py>,
    t_fs: Vec<f64>,
    params: &PySystemParams,
    n_eps: usize,
    eps_max: f64,
    seed: u64,
    omega_ghz: f64,
    kind: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = exp::RobustnessSpec { kind: parse_kind(kind)?, omega: ghz(omega_ghz), n_eps, eps_max, seed, ..Default::default() };
    let p = params.inner.clone();
    let res = py.detach(|| exp::run_robustness(&t_fs, &spec, &p, &ScanOptions::default())).map_err(to_py_err)?;
    to_python(py, &res.rows)
}

/// Fidelity grid under resonator decay κ and qubit relaxation γ (both kHz).
#[pyfunction]
#[pyo3(signature = (params, kappas_khz, gammas_khz, t_f=100e-9, omega_ghz=7.0, n_fock=3))]
fn dissipation<'py>(
    py: Python<'py>,
    params: &PySystemParams,
    kappas_khz: Vec<f64>,
    gammas_khz: Vec<f64>,
    t_f: f64,
    omega_ghz: f64,
    n_fock: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = exp::DissipationSpec {
        t_f,
        omega: ghz(omega_ghz),
        kappas: kappas_khz.iter().map(|&k| khz(k)).collect(),
        gammas: gammas_khz.iter().map(|&g| khz(g)).collect(),
        n_fock,
        ..Default::default()
    };
    let p = params.inner.clone();
    let res = py.detach(|| exp::run_dissipation_grid(&spec, &p, &ScanOptions::default())).map_err(to_py_err)?;
    to_python(py, &res.rows)
}

/// Human-readable gap report for the configured and mirrored resonator.
#[pyfunction]
fn gap_report(params: &PySystemParams) -> PyResult<String> {
    Ok(exp::run_gap_report(&params.inner).map_err(to_py_err)?.render())
}

#[pymodule]
#[pyo3(name = "ecd_sim")]
fn ecd_sim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemParams>()?;
    m.add_class::<PySweep>()?;
    m.add_class::<PyCDProfile>()?;
    m.add_function(wrap_pyfunction!(resolve_omega, m)?)?;
    m.add_function(wrap_pyfunction!(infidelity, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_comparison, m)?)?;
    m.add_function(wrap_pyfunction!(cd_field, m)?)?;
    m.add_function(wrap_pyfunction!(ecd_scan, m)?)?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    m.add_function(wrap_pyfunction!(dissipation, m)?)?;
    m.add_function(wrap_pyfunction!(gap_report, m)?)?;
    m.add("SWEEPS", SweepKind::ALL.iter().map(|k| k.as_str()).collect::<Vec<_>>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    fn with_module(code: &std::ffi::CStr) {
        Python::initialize();
        Python::attach(|py| {
            let m = pyo3::wrap_pymodule!(ecd_sim_module)(py);
            let globals = PyDict::new(py);
            globals.set_item("ecd_sim", m).unwrap();
            if let Err(e) = py.run(code, Some(&globals), None) {
                e.display(py);
                panic!("python snippet failed");
            }
        });
    }

    #[test]
    fn classes_and_functions() {
        with_module(
            cr#"
p = ecd_sim.SystemParams()
assert abs(p.f0 - 0.2) < 1e-12
sw = ecd_sim.Sweep("pl", p)
assert abs(sw(0.0) - p.f0) < 1e-12 and abs(sw(1.0)) < 1e-12
prof = ecd_sim.CDProfile(sw, p, 401)
assert len(prof) == 401 and prof.dominance_ratio > 10
om = ecd_sim.resolve_omega(prof, p, 1e-6, fixed_omega_ghz=5.0)
assert abs(om["omega_ghz"] - 5.0) < 1e-12
assert ecd_sim.infidelity(sw, p, 50e-9, correction="full_cd") < 1e-8
"#,
        );
    }

    #[test]
    fn errors_map_to_python_exceptions() {
        with_module(
            cr#"
p = ecd_sim.SystemParams()
for bad in (lambda: ecd_sim.Sweep("nope", p), lambda: ecd_sim.infidelity(ecd_sim.Sweep("lz", p), p, -1.0),
            lambda: ecd_sim.infidelity(ecd_sim.Sweep("lz", p), p, 1e-8, correction="magic")):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
"#,
        );
    }
}
