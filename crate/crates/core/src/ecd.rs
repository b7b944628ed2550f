//! Effective counterdiabatic (eCD) controls: fast oscillations of the two
//! qubit-resonator couplings whose second-order Magnus term reproduces the
//! flip-flop part of the counterdiabatic field.
//!
//! With `h(t) = Im⟨2|H_CD(t)|3⟩` (rad/s) and `𝒜(t) = √(2 h(t))`,
//!
//! ```text
//! H_e(t) = √ω 𝒜(t) [sin(ωt) C1 + cos(ωt) C2]
//! ```
//!
//! Where `h < 0` the sine control changes sign, which keeps the product of the
//! two amplitudes equal to `2h`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm_hermitian, expm_real_symmetric, CMatrix4, C64};
use crate::model::{ghz, ControlBasis, SystemParams};
use crate::spectral::CDProfile;

pub const DEFAULT_OMEGA_CEILING_GHZ: f64 = 7.0;
pub const DEFAULT_EPS_MAX: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaMode {
    /// Largest ω allowed by both the amplitude bound `k g` and the ceiling.
    CeilingLimited,
    /// ω fixed; the amplitude follows from the field and may exceed `k g`.
    Fixed,
}

/// Which oscillation receives the relative-phase perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhasePerturbation {
    /// Only `cos(ωt) → cos(ωt + π ε_φ)`.
    #[default]
    CosineOnly,
    /// Shift both the sine and the cosine.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ECDConfig {
    /// Maximal control amplitude in units of g.
    pub k_ratio: f64,
    /// rad/s
    pub omega_ceiling: f64,
    pub mode: OmegaMode,
    /// rad/s, used in [`OmegaMode::Fixed`].
    pub fixed_omega: f64,
    pub phase_perturbation: PhasePerturbation,
}

impl ECDConfig {
    pub fn ceiling_limited(k_ratio: f64) -> Self {
        Self {
            k_ratio,
            omega_ceiling: ghz(DEFAULT_OMEGA_CEILING_GHZ),
            mode: OmegaMode::CeilingLimited,
            fixed_omega: ghz(DEFAULT_OMEGA_CEILING_GHZ),
            phase_perturbation: PhasePerturbation::CosineOnly,
        }
    }

    pub fn fixed(omega: f64) -> Self {
        Self { mode: OmegaMode::Fixed, fixed_omega: omega, ..Self::ceiling_limited(1.0) }
    }

    pub fn with_ceiling(mut self, omega_ceiling: f64) -> Self {
        self.omega_ceiling = omega_ceiling;
        self
    }
}

impl Default for ECDConfig {
    fn default() -> Self {
        Self::ceiling_limited(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedOmega {
    /// rad/s
    pub omega: f64,
    /// `k² g² / (2 max_t h(t))`, rad/s (NaN in fixed mode).
    pub amplitude_bound: f64,
    /// Whether the frequency ceiling (rather than the amplitude bound) set ω.
    pub ceiling_binding: bool,
}

/// The eCD frequency for a protocol of duration `t_f`.
///
/// `max_t h(t) = max_s h̃(s) / t_f`, so the amplitude bound grows linearly in
/// `t_f` until the ceiling takes over.
pub fn resolve_omega(cfg: &ECDConfig, profile: &CDProfile, t_f: f64, params: &SystemParams) -> Result<ResolvedOmega> {
    if !(t_f > 0.0) {
        return Err(Error::InvalidParameter(format!("t_f must be positive, got {t_f}")));
    }
    match cfg.mode {
        OmegaMode::Fixed => {
            if !(cfg.fixed_omega > 0.0) {
                return Err(Error::InvalidParameter("fixed eCD frequency must be positive".into()));
            }
            Ok(ResolvedOmega { omega: cfg.fixed_omega, amplitude_bound: f64::NAN, ceiling_binding: false })
        }
        OmegaMode::CeilingLimited => {
            let max_h = profile.max_h23();
            if !(max_h > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "counterdiabatic flip-flop element must have a positive maximum, got {max_h}"
                )));
            }
            if !(cfg.k_ratio > 0.0) || !(cfg.omega_ceiling > 0.0) {
                return Err(Error::InvalidParameter("k_ratio and omega_ceiling must be positive".into()));
            }
            let g = params.g();
            let bound = cfg.k_ratio * cfg.k_ratio * g * g * t_f / (2.0 * max_h);
            let ceiling_binding = bound >= cfg.omega_ceiling;
            Ok(ResolvedOmega {
                omega: if ceiling_binding { cfg.omega_ceiling } else { bound },
                amplitude_bound: bound,
                ceiling_binding,
            })
        }
    }
}

/// Relative static errors on the eCD frequency, phase and amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbationSample {
    pub eps_omega: f64,
    pub eps_phi: f64,
    pub eps_amp: f64,
    /// Seed and stream of the generator that produced the sample.
    pub seed: Option<u64>,
    pub stream: u64,
}

impl PerturbationSample {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.eps_omega == 0.0 && self.eps_phi == 0.0 && self.eps_amp == 0.0
    }
}

/// `n` samples uniform on `[−eps_max, eps_max]³` from the ChaCha stream
/// `(seed, stream)`.
pub fn draw_perturbations(seed: u64, stream: u64, n: usize, eps_max: f64) -> Result<Vec<PerturbationSample>> {
    if !(eps_max >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps_max must be non-negative, got {eps_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut draw = || if eps_max == 0.0 { 0.0 } else { rng.random_range(-eps_max..=eps_max) };
    Ok((0..n)
        .map(|_| PerturbationSample {
            eps_omega: draw(),
            eps_phi: draw(),
            eps_amp: draw(),
            seed: Some(seed),
            stream,
        })
        .collect())
}

/// Time-dependent eCD control functions `c1(t)`, `c2(t)` (rad/s) for one
/// protocol of duration `t_f`.
#[derive(Debug, Clone)]
pub struct ControlSignals {
    profile: Arc<CDProfile>,
    t_f: f64,
    omega: f64,
    perturbation: PerturbationSample,
    phase: PhasePerturbation,
    basis: ControlBasis,
}

impl ControlSignals {
    pub fn new(profile: Arc<CDProfile>, t_f: f64, omega: f64) -> Result<Self> {
        if !(t_f > 0.0 && omega > 0.0) {
            return Err(Error::InvalidParameter("t_f and omega must be positive".into()));
        }
        Ok(Self {
            profile,
            t_f,
            omega,
            perturbation: PerturbationSample::zero(),
            phase: PhasePerturbation::CosineOnly,
            basis: ControlBasis::new(),
        })
    }

    pub fn with_perturbation(mut self, perturbation: PerturbationSample, phase: PhasePerturbation) -> Self {
        self.perturbation = perturbation;
        self.phase = phase;
        self
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    /// Nominal (unperturbed) frequency.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Frequency actually applied, `ω (1 + ε_ω)`.
    pub fn effective_omega(&self) -> f64 {
        self.omega * (1.0 + self.perturbation.eps_omega)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.effective_omega()
    }

    pub fn perturbation(&self) -> &PerturbationSample {
        &self.perturbation
    }

    pub fn profile(&self) -> &CDProfile {
        &self.profile
    }

    /// `Im⟨2|H_CD(t)|3⟩` in rad/s.
    pub fn h23(&self, t: f64) -> f64 {
        self.profile.h23(t / self.t_f) / self.t_f
    }

    /// Signed amplitude `√(2|h|)` (sign of `h`), before perturbation.
    pub fn amplitude(&self, t: f64) -> f64 {
        let h = self.h23(t);
        h.signum() * (2.0 * h.abs()).sqrt()
    }

    /// `(c1(t), c2(t))`.
    pub fn controls(&self, t: f64) -> (f64, f64) {
        let h = self.h23(t);
        let w = self.effective_omega();
        let env = (2.0 * w * h.abs()).sqrt() * (1.0 + self.perturbation.eps_amp);
        let shift = PI * self.perturbation.eps_phi;
        let sin_phase = match self.phase {
            PhasePerturbation::CosineOnly => w * t,
            PhasePerturbation::Both => w * t + shift,
        };
        let c1 = if h < 0.0 { -env } else { env } * sin_phase.sin();
        let c2 = env * (w * t + shift).cos();
        (c1, c2)
    }

    /// `H_e(t) = c1(t) C1 + c2(t) C2` in rad/s.
    pub fn hamiltonian(&self, t: f64) -> Matrix4<f64> {
        let (c1, c2) = self.controls(t);
        self.basis.c1 * c1 + self.basis.c2 * c2
    }

    /// Upper bound of the control envelope, `max_t √(2ω' h(t)) (1 + ε_𝒜)`.
    pub fn peak_amplitude(&self) -> f64 {
        let max_h = self.profile.max_h23() / self.t_f;
        (2.0 * self.effective_omega() * max_h).sqrt() * (1.0 + self.perturbation.eps_amp).abs()
    }
}

/// Alias matching the operation name used by the experiment harness.
pub fn ecd_hamiltonian(signals: &ControlSignals, t: f64) -> Matrix4<f64> {
    signals.hamiltonian(t)
}

/// Qubit-resonator couplings `(g1(t), g2(t))` realizing the controls:
/// `C1` carries the `g2` pattern and `C2` the `g1` pattern.
pub fn map_controls_to_couplings(signals: &ControlSignals, params: &SystemParams, t: f64) -> (f64, f64) {
    let (c1, c2) = signals.controls(t);
    (params.g() + c2, params.g() + c1)
}

/// `‖U_e − U_p‖_F` over one period `[t, t + T]`: the brute-force propagator of
/// the oscillating controls against `exp(−i ∫ H_p)`.
pub fn magnus_match_error(signals: &ControlSignals, t: f64, substeps: usize) -> f64 {
    let period = signals.period();
    let n = substeps.max(2) & !1; // even, for Simpson
    let dt = period / n as f64;

    let mut u_e = CMatrix4::identity();
    for j in 0..n {
        let tm = t + (j as f64 + 0.5) * dt;
        u_e = expm_real_symmetric(&signals.hamiltonian(tm), dt) * u_e;
    }

    // ∫ h(t') dt' by composite Simpson
    let mut integral = signals.h23(t) + signals.h23(t + period);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * signals.h23(t + j as f64 * dt);
    }
    integral *= dt / 3.0;
    let mut generator = CMatrix4::zeros();
    generator[(1, 2)] = C64::new(0.0, integral);
    generator[(2, 1)] = C64::new(0.0, -integral);
    let u_p = expm_hermitian(&generator, 1.0);

    (u_e - u_p).norm()
}
