//! Time evolution of the four-level model (Schrödinger) and of the
//! twelve-dimensional Jaynes–Cummings model with damping (Lindblad).
//!
//! Both paths step with the exponential midpoint rule, `exp(−i H(t + Δt/2) Δt)`,
//! using an exact eigendecomposition per step. Without oscillating controls the
//! four-level path adapts `Δt` by step doubling; with them `Δt` is fixed to a
//! fraction of the control period. In the open system the constant dissipator is
//! split off symmetrically (Strang) and integrated with a classical RK4 step.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ecd::{map_controls_to_couplings, ControlSignals};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix4, CVector4, C64};
use crate::model::{assemble_h4, ControlBasis, JcSpace, SystemParams};
use crate::spectral::{cd_generator, eigen_frames, restrict_to_flip_flop};
use crate::sweeps::SweepSpec;

/// States must have unit norm to this tolerance to be accepted as input.
pub const NORM_TOLERANCE: f64 = 1e-9;
pub const TRACE_TOLERANCE: f64 = 1e-8;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// Index (ascending energy at `s = 0`) of the tracked adiabatic branch.
pub const TARGET_BRANCH: usize = 1;
/// Grid used to follow the target branch from `s = 0` to `s = 1`.
pub const TRACKING_GRID: usize = 2001;
pub const DEFAULT_N_FOCK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// `|0↑↑⟩, |1↑↓⟩, |1↓↑⟩, |2↓↓⟩`
    FourLevel,
    /// qubit ⊗ qubit ⊗ Fock, see [`JcSpace`].
    JaynesCummings { n_fock: usize },
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::FourLevel => 4,
            Basis::JaynesCummings { n_fock } => 4 * n_fock,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<C64>,
    basis: Basis,
}

impl PureState {
    pub fn new(amplitudes: DVector<C64>, basis: Basis) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::InvalidParameter(format!(
                "state has {} amplitudes, basis needs {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        Ok(Self { amplitudes, basis })
    }

    pub fn four_level(v: &CVector4) -> Self {
        Self { amplitudes: DVector::from_iterator(4, v.iter().cloned()), basis: Basis::FourLevel }
    }

    pub fn from_real4(v: &nalgebra::Vector4<f64>) -> Self {
        Self::four_level(&v.map(|x| C64::new(x, 0.0)))
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(n));
        }
        Ok(())
    }

    pub fn to_four_level(&self) -> Result<CVector4> {
        if self.basis != Basis::FourLevel {
            return Err(Error::InvalidParameter("expected a four-level state".into()));
        }
        Ok(CVector4::from_iterator(self.amplitudes.iter().cloned()))
    }

    /// The same state in the Jaynes–Cummings space, placed in the
    /// two-excitation block.
    pub fn embed(&self, n_fock: usize) -> Result<Self> {
        match self.basis {
            Basis::JaynesCummings { n_fock: n } if n == n_fock => Ok(self.clone()),
            Basis::JaynesCummings { .. } => Err(Error::InvalidParameter("Fock cutoff mismatch".into())),
            Basis::FourLevel => {
                let space = JcSpace::new(n_fock)?;
                let idx = space.two_excitation_indices()?;
                let mut out = DVector::zeros(space.dim());
                for (k, &i) in idx.iter().enumerate() {
                    out[i] = self.amplitudes[k];
                }
                Ok(Self { amplitudes: out, basis: Basis::JaynesCummings { n_fock } })
            }
        }
    }

    pub fn overlap(&self, other: &PureState) -> Result<C64> {
        if self.basis != other.basis {
            return Err(Error::InvalidParameter("states live in different bases".into()));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidDensityMatrix("matrix is not square".into()));
        }
        let rho = Self { matrix };
        let herm = rho.hermiticity_error();
        if herm > HERMITICITY_TOLERANCE {
            return Err(Error::InvalidDensityMatrix(format!("not Hermitian ({herm:e})")));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        let min = rho.min_eigenvalue();
        if min < -POSITIVITY_TOLERANCE {
            return Err(Error::InvalidDensityMatrix(format!("negative eigenvalue {min:e}")));
        }
        Ok(rho)
    }

    pub fn from_pure(psi: &PureState) -> Result<Self> {
        psi.check_normalized()?;
        let a = &psi.amplitudes;
        Ok(Self { matrix: a * a.adjoint() })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0) }
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `⟨ψ|ρ|ψ⟩`
    pub fn expectation(&self, psi: &PureState) -> f64 {
        (psi.amplitudes.adjoint() * &self.matrix * &psi.amplitudes)[(0, 0)].re
    }
}

/// Damping rates (rad/s) of the resonator and of each qubit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseRates {
    pub kappa: f64,
    pub gamma_r: f64,
    pub gamma_phi: f64,
}

impl NoiseRates {
    /// Relaxation `γ` with dephasing `γ/2`.
    pub fn new(kappa: f64, gamma: f64) -> Result<Self> {
        Self::with_dephasing(kappa, gamma, 0.5 * gamma)
    }

    pub fn with_dephasing(kappa: f64, gamma_r: f64, gamma_phi: f64) -> Result<Self> {
        let rates = Self { kappa, gamma_r, gamma_phi };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.kappa, self.gamma_r, self.gamma_phi].iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("rates must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.kappa == 0.0 && self.gamma_r == 0.0 && self.gamma_phi == 0.0
    }
}

/// What is added to the bare sweep Hamiltonian.
#[derive(Debug, Clone, Default)]
pub enum Correction {
    #[default]
    None,
    /// The exact counterdiabatic field.
    FullCd,
    /// Only its flip-flop element.
    PartialCd,
    /// Oscillating coupling modulations.
    Ecd(ControlSignals),
}

impl Correction {
    pub fn label(&self) -> &'static str {
        match self {
            Correction::None => "none",
            Correction::FullCd => "full-cd",
            Correction::PartialCd => "partial-cd",
            Correction::Ecd(_) => "ecd",
        }
    }

    fn signals(&self) -> Option<&ControlSignals> {
        match self {
            Correction::Ecd(sig) => Some(sig),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    /// Local error per step of the adaptive path (state-vector norm).
    pub local_tolerance: f64,
    /// Fixed steps per control period.
    pub steps_per_period: usize,
    /// Bound on `‖H‖ Δt` for fixed steps.
    pub max_phase_per_step: f64,
    /// Largest step as a fraction of `t_f`.
    pub max_step_fraction: f64,
    pub max_steps: u64,
    /// Steps between density-matrix positivity checks.
    pub positivity_check_interval: u64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            local_tolerance: 1e-10,
            steps_per_period: 32,
            max_phase_per_step: 0.5,
            max_step_fraction: 1e-2,
            max_steps: 200_000_000,
            positivity_check_interval: 2000,
        }
    }
}

impl IntegratorOptions {
    /// Settings with every step-size bound halved.
    pub fn refined(&self) -> Self {
        Self {
            local_tolerance: self.local_tolerance / 8.0,
            steps_per_period: self.steps_per_period * 2,
            max_phase_per_step: self.max_phase_per_step / 2.0,
            max_step_fraction: self.max_step_fraction / 2.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnitaryOutcome {
    pub state: PureState,
    pub steps: u64,
    pub rejected: u64,
    /// `|‖ψ(t_f)‖ − ‖ψ(0)‖|`
    pub norm_drift: f64,
}

#[derive(Debug, Clone)]
pub struct LindbladOutcome {
    pub state: DensityMatrix,
    pub steps: u64,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

/// Instantaneous eigenstates at both ends of the tracked target branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdiabaticTarget {
    pub initial: PureState,
    pub target: PureState,
}

/// Follows branch [`TARGET_BRANCH`] (`≈ |1↓↑⟩` at `s = 0`) by eigenvector
/// continuity to `s = 1`, where it is the symmetric Bell-like state.
pub fn adiabatic_target(spec: &SweepSpec, params: &SystemParams) -> Result<AdiabaticTarget> {
    let frames = eigen_frames(spec, params, TRACKING_GRID)?;
    let first = &frames[0];
    let last = frames.last().expect("grid has at least two frames");
    Ok(AdiabaticTarget {
        initial: PureState::from_real4(&first.state(TARGET_BRANCH)),
        target: PureState::from_real4(&last.state(TARGET_BRANCH)),
    })
}

/// `1 − |⟨ψ|e⟩|²`
pub fn infidelity(psi: &PureState, target: &PureState) -> Result<f64> {
    psi.check_normalized()?;
    target.check_normalized()?;
    let o = psi.overlap(target)?.norm_sqr();
    Ok((1.0 - o).clamp(0.0, 1.0))
}

/// Infidelity against the tracked target of `spec`.
pub fn final_infidelity(psi: &PureState, spec: &SweepSpec, params: &SystemParams) -> Result<f64> {
    infidelity(psi, &adiabatic_target(spec, params)?.target)
}

/// `⟨e|ρ|e⟩` with a four-level target embedded in the two-excitation block.
pub fn fidelity_mixed(rho: &DensityMatrix, target: &PureState) -> Result<f64> {
    target.check_normalized()?;
    let target = match target.basis {
        Basis::FourLevel => {
            let n_fock = rho.dim() / 4;
            if 4 * n_fock != rho.dim() {
                return Err(Error::InvalidDensityMatrix(format!("dimension {} is not 4 n_fock", rho.dim())));
            }
            target.embed(n_fock)?
        }
        _ => target.clone(),
    };
    if target.amplitudes.len() != rho.dim() {
        return Err(Error::InvalidDensityMatrix("dimension mismatch with target".into()));
    }
    let herm = rho.hermiticity_error();
    if herm > HERMITICITY_TOLERANCE {
        return Err(Error::InvalidDensityMatrix(format!("not Hermitian ({herm:e})")));
    }
    Ok(rho.expectation(&target))
}

enum Generator {
    Real(Matrix4<f64>),
    Complex(CMatrix4),
}

impl Generator {
    /// `exp(−i H Δt) ψ`
    fn apply(&self, dt: f64, psi: &CVector4) -> CVector4 {
        match self {
            Generator::Real(h) => {
                let eig = SymmetricEigen::new(*h);
                let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
                let mut c = v.transpose() * psi;
                for k in 0..4 {
                    c[k] *= C64::from_polar(1.0, -eig.eigenvalues[k] * dt);
                }
                v * c
            }
            Generator::Complex(h) => {
                let eig = SymmetricEigen::new(*h);
                let v = eig.eigenvectors;
                let mut c = v.adjoint() * psi;
                for k in 0..4 {
                    c[k] *= C64::from_polar(1.0, -eig.eigenvalues[k] * dt);
                }
                v * c
            }
        }
    }
}

struct FourLevel<'a> {
    spec: &'a SweepSpec,
    params: &'a SystemParams,
    t_f: f64,
    correction: &'a Correction,
}

impl FourLevel<'_> {
    /// `H(t)` in rad/s.
    fn hamiltonian(&self, t: f64) -> Result<Generator> {
        let s = (t / self.t_f).clamp(0.0, 1.0);
        let g = self.params.g();
        let h0 = assemble_h4(self.params.delta_g(), self.spec.value(s)) * g;
        Ok(match self.correction {
            Correction::None => Generator::Real(h0),
            Correction::Ecd(sig) => Generator::Real(h0 + sig.hamiltonian(t)),
            Correction::FullCd | Correction::PartialCd => {
                let mut a = cd_generator(self.spec, self.params, s)?;
                if matches!(self.correction, Correction::PartialCd) {
                    a = restrict_to_flip_flop(&a);
                }
                let inv = 1.0 / self.t_f;
                Generator::Complex(CMatrix4::from_fn(|i, j| C64::new(h0[(i, j)], a[(i, j)] * inv)))
            }
        })
    }

    fn step(&self, t: f64, dt: f64, psi: &CVector4) -> Result<CVector4> {
        Ok(self.hamiltonian(t + 0.5 * dt)?.apply(dt, psi))
    }
}

fn check_duration(t_f: f64) -> Result<()> {
    if !(t_f > 0.0) || !t_f.is_finite() {
        return Err(Error::InvalidParameter(format!("t_f must be positive and finite, got {t_f}")));
    }
    Ok(())
}

fn check_signals(sig: &ControlSignals, t_f: f64) -> Result<()> {
    if (sig.t_f() - t_f).abs() > 1e-12 * t_f {
        return Err(Error::InvalidParameter(format!(
            "controls were built for t_f = {:e} s, propagation uses {t_f:e} s",
            sig.t_f()
        )));
    }
    Ok(())
}

/// Fixed step for runs with oscillating controls.
fn fixed_step(sig: &ControlSignals, h_bound: f64, t_f: f64, opts: &IntegratorOptions) -> f64 {
    let by_period = sig.period() / opts.steps_per_period as f64;
    let by_phase = opts.max_phase_per_step / h_bound;
    by_period.min(by_phase).min(opts.max_step_fraction * t_f)
}

/// Solve `i ∂_t ψ = H(t) ψ` on `[0, t_f]` for the four-level model.
pub fn propagate_unitary(
    spec: &SweepSpec,
    params: &SystemParams,
    t_f: f64,
    correction: &Correction,
    psi0: &PureState,
    opts: &IntegratorOptions,
) -> Result<UnitaryOutcome> {
    check_duration(t_f)?;
    psi0.check_normalized()?;
    let mut psi = psi0.to_four_level()?;
    let norm0 = psi.norm();
    let sys = FourLevel { spec, params, t_f, correction };

    let (steps, rejected) = match correction.signals() {
        Some(sig) => {
            check_signals(sig, t_f)?;
            let g = params.g();
            let peak = sig.peak_amplitude();
            let basis = ControlBasis::new();
            let bound = (assemble_h4(params.delta_g(), spec.f0()) * g + (basis.c1 + basis.c2) * peak).norm();
            let n = (t_f / fixed_step(sig, bound, t_f, opts)).ceil();
            if n > opts.max_steps as f64 {
                return Err(Error::StepUnderflow { t: 0.0, required: n as u64 });
            }
            let n = n as u64;
            let dt = t_f / n as f64;
            for j in 0..n {
                psi = sys.step(j as f64 * dt, dt, &psi)?;
            }
            (n, 0)
        }
        None => adaptive(&sys, &mut psi, opts)?,
    };

    let norm_drift = (psi.norm() - norm0).abs();
    if norm_drift > NORM_TOLERANCE {
        return Err(Error::NonConvergence(format!("norm drift {norm_drift:e} after {steps} steps")));
    }
    Ok(UnitaryOutcome { state: PureState::four_level(&psi), steps, rejected, norm_drift })
}

/// Step doubling: a full midpoint step against two half steps; the more
/// accurate pair is kept.
fn adaptive(sys: &FourLevel, psi: &mut CVector4, opts: &IntegratorOptions) -> Result<(u64, u64)> {
    let t_f = sys.t_f;
    let tol = opts.local_tolerance;
    let dt_max = opts.max_step_fraction * t_f;
    let dt_min = 1e-14 * t_f;
    let mut dt = dt_max.min(1e-3 * t_f);
    let mut t = 0.0;
    let (mut steps, mut rejected) = (0u64, 0u64);
    while t_f - t > 1e-15 * t_f {
        let h = dt.min(t_f - t);
        let full = sys.step(t, h, psi)?;
        let mid = sys.step(t, 0.5 * h, psi)?;
        let half = sys.step(t + 0.5 * h, 0.5 * h, &mid)?;
        let err = (full - half).norm();
        if err <= tol {
            *psi = half;
            t += h;
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::NonConvergence(format!("more than {} steps", opts.max_steps)));
            }
        } else {
            rejected += 1;
            if h <= dt_min {
                return Err(Error::StepUnderflow { t, required: ((t_f - t) / h).ceil() as u64 });
            }
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(1.0 / 3.0)).clamp(0.2, 4.0) };
        dt = (h * factor).clamp(dt_min, dt_max);
    }
    Ok((steps, rejected))
}

/// Operators of the Jaynes–Cummings model, built once per run.
struct OpenSystem {
    sz1: DMatrix<f64>,
    sz2: DMatrix<f64>,
    ex1: DMatrix<f64>,
    ex2: DMatrix<f64>,
    jumps: Vec<(f64, DMatrix<C64>)>,
    /// `Σ γ L†L / 2`
    decay: DMatrix<C64>,
}

impl OpenSystem {
    fn new(space: &JcSpace, rates: &NoiseRates) -> Self {
        let c = |m: DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
        let mut jumps = Vec::new();
        if rates.kappa > 0.0 {
            jumps.push((rates.kappa, c(space.annihilation())));
        }
        for q in [1, 2] {
            if rates.gamma_r > 0.0 {
                jumps.push((rates.gamma_r, c(space.lowering(q))));
            }
            if rates.gamma_phi > 0.0 {
                jumps.push((rates.gamma_phi, c(space.sigma_z(q))));
            }
        }
        let dim = space.dim();
        let mut decay = DMatrix::zeros(dim, dim);
        for (rate, l) in &jumps {
            decay += l.adjoint() * l * C64::new(0.5 * rate, 0.0);
        }
        Self {
            sz1: space.sigma_z(1),
            sz2: space.sigma_z(2),
            ex1: space.exchange(1),
            ex2: space.exchange(2),
            jumps,
            decay,
        }
    }

    fn hamiltonian(&self, detunings: (f64, f64), couplings: (f64, f64)) -> DMatrix<f64> {
        &self.sz1 * (0.5 * detunings.0)
            + &self.sz2 * (0.5 * detunings.1)
            + &self.ex1 * couplings.0
            + &self.ex2 * couplings.1
    }

    fn dissipator(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = -(&self.decay * rho + rho * &self.decay);
        for (rate, l) in &self.jumps {
            out += l * rho * l.adjoint() * C64::new(*rate, 0.0);
        }
        out
    }

    /// One RK4 step of the dissipator alone.
    fn dissipate(&self, rho: &DMatrix<C64>, dt: f64) -> DMatrix<C64> {
        if self.jumps.is_empty() {
            return rho.clone();
        }
        let h = C64::new(dt, 0.0);
        let half = C64::new(0.5 * dt, 0.0);
        let k1 = self.dissipator(rho);
        let k2 = self.dissipator(&(rho + &k1 * half));
        let k3 = self.dissipator(&(rho + &k2 * half));
        let k4 = self.dissipator(&(rho + &k3 * h));
        rho + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0)
    }
}

fn unitary_dense(h: &DMatrix<f64>, dt: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h.clone());
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let mut scaled = v.clone();
    for k in 0..v.ncols() {
        let phase = C64::from_polar(1.0, -eig.eigenvalues[k] * dt);
        scaled.column_mut(k).iter_mut().for_each(|z| *z *= phase);
    }
    scaled * v.transpose()
}

/// Lindblad evolution of the Jaynes–Cummings model with damping.
///
/// Only the bare sweep and oscillating controls are meaningful here; the
/// counterdiabatic fields are defined on the four-level model only.
#[allow(clippy::too_many_arguments)]
pub fn propagate_lindblad(
    spec: &SweepSpec,
    params: &SystemParams,
    t_f: f64,
    correction: &Correction,
    rates: &NoiseRates,
    rho0: &DensityMatrix,
    n_fock: usize,
    opts: &IntegratorOptions,
) -> Result<LindbladOutcome> {
    check_duration(t_f)?;
    rates.validate()?;
    let space = JcSpace::new(n_fock)?;
    if rho0.dim() != space.dim() {
        return Err(Error::InvalidDensityMatrix(format!(
            "initial state has dimension {}, model needs {}",
            rho0.dim(),
            space.dim()
        )));
    }
    if matches!(correction, Correction::FullCd | Correction::PartialCd) {
        return Err(Error::InvalidParameter(
            "counterdiabatic fields are only available for the four-level model".into(),
        ));
    }
    let sys = OpenSystem::new(&space, rates);
    let g = params.g();
    let signals = correction.signals();
    let peak = signals.map_or(0.0, |s| s.peak_amplitude());
    let bound = sys.hamiltonian(params.detunings(spec.f0()), (g + peak, g + peak)).norm();
    let dt_target = match signals {
        Some(sig) => {
            check_signals(sig, t_f)?;
            fixed_step(sig, bound, t_f, opts)
        }
        None => (opts.max_phase_per_step / bound).min(opts.max_step_fraction * t_f),
    };
    let n = (t_f / dt_target).ceil();
    if n > opts.max_steps as f64 {
        return Err(Error::StepUnderflow { t: 0.0, required: n as u64 });
    }
    let n = n as u64;
    let dt = t_f / n as f64;

    let mut rho = rho0.matrix.clone();
    let mut max_trace_drift = 0.0f64;
    let mut max_herm = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for j in 0..n {
        let tm = (j as f64 + 0.5) * dt;
        let f = spec.value((tm / t_f).clamp(0.0, 1.0));
        let couplings = match signals {
            Some(sig) => map_controls_to_couplings(sig, params, tm),
            None => (g, g),
        };
        let u = unitary_dense(&sys.hamiltonian(params.detunings(f), couplings), dt);
        rho = sys.dissipate(&rho, 0.5 * dt);
        rho = &u * rho * u.adjoint();
        rho = sys.dissipate(&rho, 0.5 * dt);

        let check_positivity = (j + 1) % opts.positivity_check_interval.max(1) == 0 || j + 1 == n;
        if check_positivity || j % 64 == 0 {
            let state = DensityMatrix { matrix: rho.clone() };
            max_trace_drift = max_trace_drift.max((state.trace() - 1.0).abs());
            max_herm = max_herm.max(state.hermiticity_error());
            if check_positivity {
                min_eig = min_eig.min(state.min_eigenvalue());
            }
            if max_trace_drift > TRACE_TOLERANCE {
                return Err(Error::InvalidDensityMatrix(format!(
                    "trace drift {max_trace_drift:e} at t = {:e} s",
                    tm
                )));
            }
            if min_eig < -POSITIVITY_TOLERANCE {
                return Err(Error::InvalidDensityMatrix(format!("eigenvalue {min_eig:e} at t = {tm:e} s")));
            }
        }
    }
    Ok(LindbladOutcome {
        state: DensityMatrix { matrix: rho },
        steps: n,
        max_trace_drift,
        max_hermiticity_error: max_herm,
        min_eigenvalue: min_eig,
    })
}

/// Period of population exchange inside the anticrossing doublet at `f = 0`.
pub fn doublet_oscillation_period(params: &SystemParams) -> f64 {
    2.0 * PI / (2.0 * params.g0())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecd::{resolve_omega, ECDConfig};
    use crate::model::ghz;
    use crate::spectral::build_cd_profile;
    use crate::sweeps::SweepKind;
    use std::sync::Arc;

    fn setup(kind: SweepKind) -> (SweepSpec, SystemParams, AdiabaticTarget) {
        let p = SystemParams::reference();
        let spec = SweepSpec::for_params(kind, &p).unwrap();
        let target = adiabatic_target(&spec, &p).unwrap();
        (spec, p, target)
    }

    fn run(kind: SweepKind, t_f: f64, correction: &Correction) -> f64 {
        let (spec, p, target) = setup(kind);
        let out = propagate_unitary(&spec, &p, t_f, correction, &target.initial, &IntegratorOptions::default()).unwrap();
        infidelity(&out.state, &target.target).unwrap()
    }

    #[test]
    fn target_is_symmetric_bell_state() {
        let (_, _, target) = setup(SweepKind::Pl);
        let v = target.target.to_four_level().unwrap();
        let r = 0.5f64.sqrt();
        assert!((v[1].re - r).abs() < 0.05 && (v[2].re - r).abs() < 0.05, "{v:?}");
        let v0 = target.initial.to_four_level().unwrap();
        assert!(v0[2].norm() > 0.99);
    }

    #[test]
    fn infidelity_trivial_cases() {
        let (_, _, target) = setup(SweepKind::Pl);
        assert!(infidelity(&target.target, &target.target).unwrap() < 1e-15);
        let v = target.target.to_four_level().unwrap();
        let orth = PureState::four_level(&CVector4::new(v[2], -v[1], C64::new(0.0, 0.0), C64::new(0.0, 0.0)).normalize());
        let ov = target.target.overlap(&orth).unwrap().norm();
        let expected = 1.0 - ov * ov;
        assert!((infidelity(&orth, &target.target).unwrap() - expected).abs() < 1e-12);
        let bare = PureState::four_level(&CVector4::new(C64::new(1.0, 0.0), 0.0.into(), 0.0.into(), 0.0.into()));
        let inf = infidelity(&bare, &target.target).unwrap();
        assert!(inf > 0.99);
        let phased = PureState::four_level(&(v * C64::from_polar(1.0, 1.234)));
        assert!(infidelity(&phased, &target.target).unwrap() < 1e-15);
        let unnormalized = PureState::four_level(&(v * C64::new(1.1, 0.0)));
        assert!(matches!(infidelity(&unnormalized, &target.target), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn orthogonal_state_gives_one() {
        let (_, _, target) = setup(SweepKind::Pl);
        let v = target.target.to_four_level().unwrap();
        // Gram–Schmidt a basis vector against the target
        let e3 = CVector4::new(0.0.into(), 0.0.into(), 0.0.into(), 1.0.into());
        let w = (e3 - v * v.dotc(&e3)).normalize();
        assert!((infidelity(&PureState::four_level(&w), &target.target).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resonant_doublet_oscillation_period() {
        // f ≡ 0 throughout: start in |1↓↑⟩, which is an equal mix of the doublet
        let p = SystemParams::reference();
        let spec = SweepSpec::new(SweepKind::Lz, 1e-300, 8, p.g0_over_g()).unwrap();
        let period = doublet_oscillation_period(&p);
        let psi0 = PureState::four_level(&CVector4::new(0.0.into(), 0.0.into(), 1.0.into(), 0.0.into()));
        let opts = IntegratorOptions::default();
        let population = |t: f64| {
            let out = propagate_unitary(&spec, &p, t, &Correction::None, &psi0, &opts).unwrap();
            out.state.amplitudes()[2].norm_sqr()
        };
        // the population of |1↓↑⟩ returns to its maximum after one period and
        // is minimal after half of it
        let samples: Vec<(f64, f64)> = (80..=120).map(|i| {
            let t = period * i as f64 / 100.0;
            (t, population(t))
        }).collect();
        let best = samples.iter().cloned().fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!((best.0 / period - 1.0).abs() < 0.01, "revival at {} periods", best.0 / period);
        assert!(population(0.5 * period) < 0.02);
    }

    #[test]
    fn full_cd_is_transitionless() {
        for t_f in [1e-9, 1e-7] {
            let inf = run(SweepKind::Pl, t_f, &Correction::FullCd);
            assert!(inf < 1e-8, "{t_f}: {inf}");
        }
    }

    #[test]
    fn partial_cd_close_to_full() {
        let inf = run(SweepKind::Pl, 10e-9, &Correction::PartialCd);
        assert!(inf < 1e-4, "{inf}");
    }

    #[test]
    fn slow_sweep_is_adiabatic_and_fast_one_is_not() {
        let fast = run(SweepKind::Pl, 10e-9, &Correction::None);
        let slow = run(SweepKind::Pl, 5e-6, &Correction::None);
        assert!(fast > 0.1, "{fast}");
        assert!(slow < 1e-3, "{slow}");
    }

    #[test]
    fn landau_zener_ten_microseconds() {
        let inf = run(SweepKind::Lz, 10e-6, &Correction::None);
        assert!((3.3e-4..=3e-3).contains(&inf), "{inf}");
    }

    #[test]
    fn rejects_bad_input() {
        let (spec, p, target) = setup(SweepKind::Pl);
        let opts = IntegratorOptions::default();
        assert!(propagate_unitary(&spec, &p, 0.0, &Correction::None, &target.initial, &opts).is_err());
        let bad = PureState::four_level(&(target.initial.to_four_level().unwrap() * C64::new(2.0, 0.0)));
        assert!(propagate_unitary(&spec, &p, 1e-7, &Correction::None, &bad, &opts).is_err());
    }

    fn ecd_signals(kind: SweepKind, t_f: f64, cfg: ECDConfig) -> (SweepSpec, SystemParams, AdiabaticTarget, ControlSignals) {
        let (spec, p, target) = setup(kind);
        let prof = Arc::new(build_cd_profile(&spec, &p, 2001).unwrap());
        let omega = resolve_omega(&cfg, &prof, t_f, &p).unwrap().omega;
        let sig = ControlSignals::new(prof, t_f, omega).unwrap();
        (spec, p, target, sig)
    }

    #[test]
    fn ecd_improves_tangent_sweep() {
        let t_f = 500e-9;
        let (spec, p, target, sig) = ecd_signals(SweepKind::Tan, t_f, ECDConfig::ceiling_limited(1.0));
        let opts = IntegratorOptions::default();
        let bare = propagate_unitary(&spec, &p, t_f, &Correction::None, &target.initial, &opts).unwrap();
        let with = propagate_unitary(&spec, &p, t_f, &Correction::Ecd(sig), &target.initial, &opts).unwrap();
        let i0 = infidelity(&bare.state, &target.target).unwrap();
        let i1 = infidelity(&with.state, &target.target).unwrap();
        assert!(i1 < 0.2 * i0, "{i0} -> {i1}");
        assert!(with.norm_drift < 1e-9);
    }

    #[test]
    fn ecd_step_halving() {
        let t_f = 200e-9;
        let (spec, p, target, sig) = ecd_signals(SweepKind::Tan, t_f, ECDConfig::ceiling_limited(1.0));
        let opts = IntegratorOptions::default();
        let c = Correction::Ecd(sig);
        let a = propagate_unitary(&spec, &p, t_f, &c, &target.initial, &opts).unwrap();
        let b = propagate_unitary(&spec, &p, t_f, &c, &target.initial, &opts.refined()).unwrap();
        let ia = infidelity(&a.state, &target.target).unwrap();
        let ib = infidelity(&b.state, &target.target).unwrap();
        assert!((ia - ib).abs() < 0.05 * ib, "{ia} vs {ib}");
    }

    #[test]
    fn noise_rates_validate() {
        let r = NoiseRates::new(1.0, 2.0).unwrap();
        assert_eq!(r.gamma_phi, 1.0);
        assert!(NoiseRates::new(-1.0, 0.0).is_err());
        assert!(NoiseRates::with_dephasing(0.0, 0.0, f64::NAN).is_err());
        assert!(NoiseRates::default().is_zero());
    }

    #[test]
    fn density_matrix_validation() {
        let mixed = DensityMatrix::maximally_mixed(12);
        assert!(DensityMatrix::new(mixed.matrix().clone()).is_ok());
        let mut bad = mixed.matrix().clone();
        bad[(0, 1)] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(bad).is_err());
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.5, 0.0), C64::new(-0.5, 0.0)]));
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn fidelity_mixed_trivial_cases() {
        let (_, _, target) = setup(SweepKind::Pl);
        let rho = DensityMatrix::from_pure(&target.target.embed(3).unwrap()).unwrap();
        assert!((fidelity_mixed(&rho, &target.target).unwrap() - 1.0).abs() < 1e-14);
        let mixed = DensityMatrix::maximally_mixed(12);
        assert!((fidelity_mixed(&mixed, &target.target).unwrap() - 1.0 / 12.0).abs() < 1e-14);
    }

    #[test]
    fn closed_lindblad_matches_unitary() {
        let t_f = 50e-9;
        let (spec, p, target, sig) = ecd_signals(SweepKind::Tan, t_f, ECDConfig::fixed(ghz(7.0)));
        let opts = IntegratorOptions::default();
        let c = Correction::Ecd(sig);
        let psi = propagate_unitary(&spec, &p, t_f, &c, &target.initial, &opts).unwrap();
        let closed = infidelity(&psi.state, &target.target).unwrap();
        let rho0 = DensityMatrix::from_pure(&target.initial.embed(DEFAULT_N_FOCK).unwrap()).unwrap();
        let out = propagate_lindblad(&spec, &p, t_f, &c, &NoiseRates::default(), &rho0, DEFAULT_N_FOCK, &opts).unwrap();
        let fid = fidelity_mixed(&out.state, &target.target).unwrap();
        assert!((1.0 - fid - closed).abs() < 1e-6, "{} vs {closed}", 1.0 - fid);
        assert!(out.max_trace_drift < 1e-8);

        // excitation number is conserved without damping
        let space = JcSpace::new(DEFAULT_N_FOCK).unwrap();
        let n_op = space.excitation_number().map(|x| C64::new(x, 0.0));
        let n_mean = (out.state.matrix() * n_op).trace().re;
        assert!((n_mean - 2.0).abs() < 1e-9);
    }

    #[test]
    fn damping_lowers_fidelity_and_keeps_trace() {
        let t_f = 50e-9;
        let (spec, p, target, sig) = ecd_signals(SweepKind::Tan, t_f, ECDConfig::fixed(ghz(7.0)));
        let opts = IntegratorOptions::default();
        let c = Correction::Ecd(sig);
        let rho0 = DensityMatrix::from_pure(&target.initial.embed(DEFAULT_N_FOCK).unwrap()).unwrap();
        let rates = NoiseRates::new(crate::model::khz(200.0), crate::model::khz(200.0)).unwrap();
        let clean = propagate_lindblad(&spec, &p, t_f, &c, &NoiseRates::default(), &rho0, 3, &opts).unwrap();
        let noisy = propagate_lindblad(&spec, &p, t_f, &c, &rates, &rho0, 3, &opts).unwrap();
        let f0 = fidelity_mixed(&clean.state, &target.target).unwrap();
        let f1 = fidelity_mixed(&noisy.state, &target.target).unwrap();
        assert!(f1 < f0);
        assert!(noisy.max_trace_drift < 1e-8);
        assert!(noisy.min_eigenvalue > -1e-8);
        assert!(noisy.max_hermiticity_error < 1e-10);
    }

    #[test]
    fn lindblad_rejects_cd_and_wrong_dimension() {
        let (spec, p, target) = setup(SweepKind::Pl);
        let rho0 = DensityMatrix::from_pure(&target.initial.embed(3).unwrap()).unwrap();
        let opts = IntegratorOptions::default();
        let r = NoiseRates::default();
        assert!(propagate_lindblad(&spec, &p, 1e-8, &Correction::FullCd, &r, &rho0, 3, &opts).is_err());
        assert!(propagate_lindblad(&spec, &p, 1e-8, &Correction::None, &r, &rho0, 4, &opts).is_err());
    }

    #[test]
    fn pure_dephasing_destroys_coherence_only() {
        // single dephasing channel on a static Hamiltonian-free check of the
        // dissipator: D[σz] kills off-diagonals at rate 2γ_φ and leaves populations
        let space = JcSpace::new(3).unwrap();
        let rates = NoiseRates::with_dephasing(0.0, 0.0, 1.0).unwrap();
        let sys = OpenSystem::new(&space, &rates);
        let i = space.index(true, false, 1);
        let j = space.index(false, true, 1);
        let mut rho = DMatrix::zeros(12, 12);
        rho[(i, i)] = C64::new(0.5, 0.0);
        rho[(j, j)] = C64::new(0.5, 0.0);
        rho[(i, j)] = C64::new(0.5, 0.0);
        rho[(j, i)] = C64::new(0.5, 0.0);
        let mut r = rho.clone();
        let dt = 1e-3;
        for _ in 0..1000 {
            r = sys.dissipate(&r, dt);
        }
        // both qubits dephase: σz⁽¹⁾ and σz⁽²⁾ differ in sign on i and j, rate 2γ each
        let expected = 0.5 * (-4.0f64).exp();
        assert!((r[(i, j)].re - expected).abs() < 1e-10, "{} vs {expected}", r[(i, j)].re);
        assert!((r[(i, i)].re - 0.5).abs() < 1e-14);
    }
}
