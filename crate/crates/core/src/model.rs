//! System parameters and Hamiltonians of two qubits coupled to a resonator.
//!
//! The closed model lives in the two-excitation manifold with the fixed basis
//! ordering
//!
//! | index | state      |
//! |-------|------------|
//! | 0     | `|0 ↑ ↑⟩`  |
//! | 1     | `|1 ↑ ↓⟩`  |
//! | 2     | `|1 ↓ ↑⟩`  |
//! | 3     | `|2 ↓ ↓⟩`  |
//!
//! (photon number first, `↑` = excited qubit). Element `(1, 2)` is the
//! qubit-qubit flip-flop channel. The open-system model uses the full
//! qubit ⊗ qubit ⊗ Fock space in the frame rotating at the resonator frequency.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, Matrix4};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen4;

/// Convert an ordinary frequency in GHz to an angular frequency in rad/s.
pub fn ghz(f: f64) -> f64 {
    2.0 * PI * f * 1e9
}

pub fn mhz(f: f64) -> f64 {
    2.0 * PI * f * 1e6
}

pub fn khz(f: f64) -> f64 {
    2.0 * PI * f * 1e3
}

/// Angular frequency (rad/s) to ordinary MHz.
pub fn to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

pub fn to_ghz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e9)
}

/// Frequencies and couplings of the device. All values are angular (rad/s).
///
/// `delta_g`, `f0` and `g0` are derived at construction; `g0` comes from
/// diagonalizing the four-level Hamiltonian at mutual resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemParams {
    omega_r: f64,
    omega_1_init: f64,
    omega_2_init: f64,
    g: f64,
    delta_g: f64,
    f0: f64,
    g0: f64,
}

impl SystemParams {
    pub fn new(omega_r: f64, omega_1_init: f64, omega_2_init: f64, g: f64) -> Result<Self> {
        let all = [omega_r, omega_1_init, omega_2_init, g];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("frequencies must be finite".into()));
        }
        if g <= 0.0 {
            return Err(Error::InvalidParameter(format!("coupling g must be positive, got {g}")));
        }
        if omega_1_init <= omega_2_init {
            return Err(Error::InvalidParameter(
                "qubit 1 must start above qubit 2 (f0 > 0)".into(),
            ));
        }
        let delta_1 = omega_1_init - omega_r;
        let delta_2 = omega_2_init - omega_r;
        let delta_g = (delta_1 + delta_2) / (2.0 * g);
        let f0 = (delta_1 - delta_2) / (2.0 * g);
        let g0 = g * half_gap_dimensionless(delta_g);
        let params = Self { omega_r, omega_1_init, omega_2_init, g, delta_g, f0, g0 };
        for ratio in params.dispersive_ratios() {
            if ratio.abs() >= 0.1 {
                log::warn!("outside the dispersive regime: |g/delta| = {:.3}", ratio.abs());
            }
        }
        Ok(params)
    }

    /// Ordinary frequencies: resonator and qubits in GHz, coupling in MHz.
    pub fn from_frequencies(fr_ghz: f64, f1_ghz: f64, f2_ghz: f64, g_mhz: f64) -> Result<Self> {
        Self::new(ghz(fr_ghz), ghz(f1_ghz), ghz(f2_ghz), mhz(g_mhz))
    }

    /// ω_r/2π = 8.2 GHz, qubits at 6.01 and 5.99 GHz, g/2π = 50 MHz.
    pub fn reference() -> Self {
        Self::from_frequencies(8.2, 6.01, 5.99, 50.0).expect("reference parameters are valid")
    }

    /// Same qubits and coupling, resonator moved so that the mean detuning in
    /// units of g equals `delta_g`.
    pub fn with_delta_g(&self, delta_g: f64) -> Result<Self> {
        let omega_r = self.omega_q_final() - delta_g * self.g;
        Self::new(omega_r, self.omega_1_init, self.omega_2_init, self.g)
    }

    /// Same qubits and coupling with a different resonator frequency.
    pub fn with_omega_r(&self, omega_r: f64) -> Result<Self> {
        Self::new(omega_r, self.omega_1_init, self.omega_2_init, self.g)
    }

    pub fn omega_r(&self) -> f64 {
        self.omega_r
    }
    pub fn omega_1_init(&self) -> f64 {
        self.omega_1_init
    }
    pub fn omega_2_init(&self) -> f64 {
        self.omega_2_init
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    /// Mean qubit-resonator detuning in units of g (constant during the sweep).
    pub fn delta_g(&self) -> f64 {
        self.delta_g
    }
    /// Half the initial qubit-qubit detuning in units of g.
    pub fn f0(&self) -> f64 {
        self.f0
    }
    /// Half the minimal anticrossing gap, rad/s.
    pub fn g0(&self) -> f64 {
        self.g0
    }
    pub fn g0_over_g(&self) -> f64 {
        self.g0 / self.g
    }

    /// Common qubit frequency at mutual resonance.
    pub fn omega_q_final(&self) -> f64 {
        0.5 * (self.omega_1_init + self.omega_2_init)
    }

    /// Qubit-resonator detunings at sweep position `f` (units of g).
    pub fn detunings(&self, f: f64) -> (f64, f64) {
        let mean = self.delta_g * self.g;
        (mean + f * self.g, mean - f * self.g)
    }

    /// `g/δ_k` at the start and end of the sweep; the detunings move
    /// monotonically in between.
    pub fn dispersive_ratios(&self) -> [f64; 3] {
        let (d1, d2) = self.detunings(self.f0);
        let (d, _) = self.detunings(0.0);
        [self.g / d1, self.g / d2, self.g / d]
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// The constant matrices whose combination spans the four-level Hamiltonian:
/// `H = δ_g D0 + f D1 + C1 + C2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBasis {
    pub d0: Matrix4<f64>,
    pub d1: Matrix4<f64>,
    pub c1: Matrix4<f64>,
    pub c2: Matrix4<f64>,
}

impl ControlBasis {
    pub fn new() -> Self {
        let r2 = SQRT_2;
        Self {
            d0: Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 0.0, 0.0, -1.0)),
            d1: Matrix4::from_diagonal(&nalgebra::Vector4::new(0.0, 1.0, -1.0, 0.0)),
            #[rustfmt::skip]
            c1: Matrix4::new(
                0.0, 1.0, 0.0, 0.0,
                1.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, r2,
                0.0, 0.0, r2, 0.0,
            ),
            #[rustfmt::skip]
            c2: Matrix4::new(
                0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, r2,
                1.0, 0.0, 0.0, 0.0,
                0.0, r2, 0.0, 0.0,
            ),
        }
    }
}

impl Default for ControlBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// Dimensionless four-level Hamiltonian (units of g) at sweep value `f`.
pub fn assemble_h4(delta_g: f64, f: f64) -> Matrix4<f64> {
    let r2 = SQRT_2;
    #[rustfmt::skip]
    let h = Matrix4::new(
        delta_g, 1.0, 1.0, 0.0,
        1.0, f, 0.0, r2,
        1.0, 0.0, -f, r2,
        0.0, r2, r2, -delta_g,
    );
    h
}

/// Half the splitting of the two middle levels at mutual resonance, units of g.
pub fn half_gap_dimensionless(delta_g: f64) -> f64 {
    let (vals, _) = symmetric_eigen4(&assemble_h4(delta_g, 0.0));
    0.5 * (vals[2] - vals[1])
}

/// Half the minimal anticrossing gap (rad/s), from dense diagonalization.
///
/// The spectrum is symmetric under `f -> -f` (swap of the two qubits), so the
/// minimum of the middle splitting sits at `f = 0`.
pub fn minimal_gap(params: &SystemParams) -> f64 {
    params.g * half_gap_dimensionless(params.delta_g)
}

/// Second-order qubit-qubit exchange couplings at mutual resonance (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersiveEstimates {
    /// Qubit-resonator detuning δ = ω_q − ω_r.
    pub delta: f64,
    /// Sum frequency Δ = ω_q + ω_r.
    pub sum_frequency: f64,
    /// g²/δ.
    pub rwa_coupling: f64,
    /// g²(1/δ − 1/Δ), including counter-rotating terms.
    pub renormalized_coupling: f64,
}

pub fn dispersive_estimates(params: &SystemParams) -> Result<DispersiveEstimates> {
    let omega_q = params.omega_q_final();
    let delta = omega_q - params.omega_r;
    let sum_frequency = omega_q + params.omega_r;
    if delta == 0.0 {
        return Err(Error::Resonant("qubits resonant with the resonator (δ = 0)".into()));
    }
    if sum_frequency == 0.0 {
        return Err(Error::Resonant("Δ = ω_q + ω_r vanishes".into()));
    }
    let g2 = params.g * params.g;
    Ok(DispersiveEstimates {
        delta,
        sum_frequency,
        rwa_coupling: g2 / delta,
        renormalized_coupling: g2 * (1.0 / delta - 1.0 / sum_frequency),
    })
}

/// Index bookkeeping for qubit ⊗ qubit ⊗ Fock(n_fock).
///
/// Qubit states are `0 = ↓` (ground) and `1 = ↑`; the index is
/// `(2 q1 + q2) n_fock + n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JcSpace {
    n_fock: usize,
}

impl JcSpace {
    pub fn new(n_fock: usize) -> Result<Self> {
        if n_fock < 1 {
            return Err(Error::InvalidParameter("n_fock must be at least 1".into()));
        }
        Ok(Self { n_fock })
    }

    pub fn n_fock(&self) -> usize {
        self.n_fock
    }

    pub fn dim(&self) -> usize {
        4 * self.n_fock
    }

    pub fn index(&self, q1_up: bool, q2_up: bool, photons: usize) -> usize {
        debug_assert!(photons < self.n_fock);
        (2 * q1_up as usize + q2_up as usize) * self.n_fock + photons
    }

    /// `(q1_up, q2_up, photons)` of a basis index.
    pub fn decode(&self, index: usize) -> (bool, bool, usize) {
        let q = index / self.n_fock;
        (q >= 2, q % 2 == 1, index % self.n_fock)
    }

    /// Positions of `|0↑↑⟩, |1↑↓⟩, |1↓↑⟩, |2↓↓⟩` in the full space.
    pub fn two_excitation_indices(&self) -> Result<[usize; 4]> {
        if self.n_fock < 3 {
            return Err(Error::InvalidParameter(
                "two-excitation manifold needs n_fock >= 3".into(),
            ));
        }
        Ok([
            self.index(true, true, 0),
            self.index(true, false, 1),
            self.index(false, true, 1),
            self.index(false, false, 2),
        ])
    }

    fn operator(&self, element: impl Fn(bool, bool, usize) -> Vec<(usize, f64)>) -> DMatrix<f64> {
        // element(col state) -> list of (row, amplitude)
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let (q1, q2, n) = self.decode(col);
            for (row, amp) in element(q1, q2, n) {
                m[(row, col)] += amp;
            }
        }
        m
    }

    /// Resonator annihilation operator `a`.
    pub fn annihilation(&self) -> DMatrix<f64> {
        self.operator(|q1, q2, n| {
            if n == 0 {
                vec![]
            } else {
                vec![(self.index(q1, q2, n - 1), (n as f64).sqrt())]
            }
        })
    }

    /// Lowering operator `σ₋` of qubit 1 or 2.
    pub fn lowering(&self, qubit: usize) -> DMatrix<f64> {
        self.operator(|q1, q2, n| match qubit {
            1 if q1 => vec![(self.index(false, q2, n), 1.0)],
            2 if q2 => vec![(self.index(q1, false, n), 1.0)],
            _ => vec![],
        })
    }

    /// `σ_z` of qubit 1 or 2 (`+1` on `↑`).
    pub fn sigma_z(&self, qubit: usize) -> DMatrix<f64> {
        self.operator(|q1, q2, n| {
            let up = if qubit == 1 { q1 } else { q2 };
            vec![(self.index(q1, q2, n), if up { 1.0 } else { -1.0 })]
        })
    }

    /// `σ₊ a + σ₋ a†` for qubit 1 or 2.
    pub fn exchange(&self, qubit: usize) -> DMatrix<f64> {
        let a = self.annihilation();
        let sm = self.lowering(qubit);
        let term = sm.transpose() * &a;
        &term + term.transpose()
    }

    /// `N = a†a + Σ_k σ₊σ₋`.
    pub fn excitation_number(&self) -> DMatrix<f64> {
        self.operator(|q1, q2, n| vec![(self.index(q1, q2, n), (n + q1 as usize + q2 as usize) as f64)])
    }
}

/// Jaynes–Cummings Hamiltonian in the frame rotating at ω_r (rad/s):
/// `Σ_k δ_k/2 σ_z⁽ᵏ⁾ + Σ_k g_k (σ₊⁽ᵏ⁾ a + σ₋⁽ᵏ⁾ a†)`.
pub fn assemble_h12(
    detunings: (f64, f64),
    couplings: (f64, f64),
    n_fock: usize,
) -> Result<DMatrix<f64>> {
    let space = JcSpace::new(n_fock)?;
    Ok(space.sigma_z(1) * (0.5 * detunings.0)
        + space.sigma_z(2) * (0.5 * detunings.1)
        + space.exchange(1) * couplings.0
        + space.exchange(2) * couplings.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commutator(a: &Matrix4<f64>, b: &Matrix4<f64>) -> Matrix4<f64> {
        a * b - b * a
    }

    #[test]
    fn reference_parameters() {
        let p = SystemParams::reference();
        assert!((p.delta_g() + 44.0).abs() < 1e-9);
        assert!((p.f0() - 0.2).abs() < 1e-9);
        assert!(p.g0() > 0.0);
    }

    #[test]
    fn rejects_wrong_qubit_order() {
        assert!(SystemParams::from_frequencies(8.2, 5.99, 6.01, 50.0).is_err());
        assert!(SystemParams::from_frequencies(8.2, 6.01, 5.99, -1.0).is_err());
    }

    #[test]
    fn h4_at_resonance_and_at_f0() {
        let h = assemble_h4(-44.0, 0.0);
        assert_eq!(h[(0, 0)], -44.0);
        assert_eq!(h[(1, 1)], 0.0);
        assert_eq!(h[(2, 2)], 0.0);
        assert_eq!(h[(3, 3)], 44.0);
        let h = assemble_h4(-44.0, 0.2);
        assert_eq!(h[(1, 1)], 0.2);
        assert_eq!(h[(2, 2)], -0.2);
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn h4_matches_literal_transcription() {
        // Straight from the 4x4 matrix with g1 = g2 = 1:
        // [[δ_g, 1, 1, 0], [1, f, 0, √2], [1, 0, -f, √2], [0, √2, √2, -δ_g]]
        let cb = ControlBasis::new();
        for &(dg, f) in &[(-44.0, 0.2), (3.1, -0.7), (0.0, 0.0), (-12.5, 1e-3)] {
            let literal: [[f64; 4]; 4] = [
                [dg, 1.0, 1.0, 0.0],
                [1.0, f, 0.0, 2f64.sqrt()],
                [1.0, 0.0, -f, 2f64.sqrt()],
                [0.0, 2f64.sqrt(), 2f64.sqrt(), -dg],
            ];
            let via_basis = cb.d0 * dg + cb.d1 * f + cb.c1 + cb.c2;
            let direct = assemble_h4(dg, f);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((direct[(i, j)] - literal[i][j]).abs() < 1e-15);
                    assert!((via_basis[(i, j)] - literal[i][j]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn control_basis_is_hermitian_and_traceless() {
        let cb = ControlBasis::new();
        for m in [&cb.d0, &cb.d1, &cb.c1, &cb.c2] {
            assert_eq!(*m, m.transpose());
            assert_eq!(m.trace(), 0.0);
        }
    }

    #[test]
    fn commutator_generates_flip_flop_current() {
        // 2i[C1, C2] = σ_y⁽¹⁾σ_x⁽²⁾ − σ_x⁽¹⁾σ_y⁽²⁾, which on this basis has
        // ⟨1↑↓| · |1↓↑⟩ = −2i and nothing else.
        let cb = ControlBasis::new();
        let c = commutator(&cb.c1, &cb.c2);
        let mut expected = Matrix4::zeros();
        expected[(1, 2)] = -1.0;
        expected[(2, 1)] = 1.0;
        assert!((c - expected).abs().max() < 1e-15);

        // Cross-check against the operator identity on the 12-dim space.
        let space = JcSpace::new(3).unwrap();
        let idx = space.two_excitation_indices().unwrap();
        let sp1 = space.lowering(1).transpose();
        let sp2 = space.lowering(2).transpose();
        // σxσy − σyσx = 2i(σ₊σ₋ − σ₋σ₊) (tensor products), so
        // σyσx − σxσy = −2i(σ₊⊗σ₋ − σ₋⊗σ₊)
        let flip = &sp1 * space.lowering(2) - space.lowering(1) * &sp2;
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                // 2i[C1,C2](a,b) = 2i·c(a,b) must equal −2i·flip(i,j)
                assert!((c[(a, b)] + flip[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn h12_without_coupling_is_bare_energies() {
        let h = assemble_h12((1.5, -0.5), (0.0, 0.0), 3).unwrap();
        let space = JcSpace::new(3).unwrap();
        for i in 0..12 {
            let (q1, q2, _) = space.decode(i);
            let e = 0.5 * (if q1 { 1.5 } else { -1.5 }) + 0.5 * (if q2 { -0.5 } else { 0.5 });
            assert!((h[(i, i)] - e).abs() < 1e-15);
            for j in 0..12 {
                if i != j {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn h12_conserves_excitations() {
        for n_fock in [1, 3, 5] {
            let h = assemble_h12((0.3, -2.0), (0.7, 1.3), n_fock).unwrap();
            let n = JcSpace::new(n_fock).unwrap().excitation_number();
            assert!((&h * &n - &n * &h).abs().max() < 1e-14);
            assert_eq!(h, h.transpose());
        }
    }

    #[test]
    fn h12_two_excitation_block_reproduces_h4() {
        let g = 2.0;
        let (dg, f) = (-44.0, 0.13);
        let detunings = (g * (dg + f), g * (dg - f));
        let h = assemble_h12(detunings, (g, g), 3).unwrap();
        let idx = JcSpace::new(3).unwrap().two_excitation_indices().unwrap();
        let h4 = assemble_h4(dg, f) * g;
        for a in 0..4 {
            for b in 0..4 {
                assert!((h[(idx[a], idx[b])] - h4[(a, b)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h12_rejects_empty_fock_space() {
        assert!(assemble_h12((0.0, 0.0), (0.0, 0.0), 0).is_err());
        assert!(JcSpace::new(2).unwrap().two_excitation_indices().is_err());
    }

    #[test]
    fn resonance_spectrum_has_close_middle_pair() {
        let (vals, vecs) = symmetric_eigen4(&assemble_h4(-44.0, 0.0));
        let split = vals[2] - vals[1];
        assert!(split > 0.0 && split < 0.1);
        assert!(vals[1] - vals[0] > 40.0 && vals[3] - vals[2] > 40.0);
        // lower member of the doublet is the symmetric Bell combination
        let v = vecs.column(1);
        assert!((v[1] - v[2]).abs() < 1e-12);
        assert!(v[1].abs() > 0.7);
    }

    #[test]
    fn gap_grows_as_detuning_shrinks() {
        let p = SystemParams::reference();
        let gaps: Vec<f64> = [-88.0, -44.0, -22.0]
            .iter()
            .map(|&dg| minimal_gap(&p.with_delta_g(dg).unwrap()))
            .collect();
        assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2]);
        // second-order picture: g0 ≈ g/|δ_g|
        for (&dg, &g0) in [-88.0, -44.0, -22.0].iter().zip(&gaps) {
            let approx = p.g() / f64::abs(dg);
            assert!((g0 / approx - 1.0).abs() < 0.1, "{dg}: {g0} vs {approx}");
        }
    }

    #[test]
    fn gap_is_minimal_at_resonance() {
        let dg = -44.0;
        let split = |f: f64| {
            let (v, _) = symmetric_eigen4(&assemble_h4(dg, f));
            v[2] - v[1]
        };
        let at0 = split(0.0);
        for &f in &[1e-4, -1e-4, 1e-3, -0.01, 0.05] {
            assert!(split(f) > at0);
        }
    }

    #[test]
    fn dispersive_estimates_identity_and_signs() {
        let p = SystemParams::reference();
        let e = dispersive_estimates(&p).unwrap();
        assert!(e.rwa_coupling < 0.0);
        let ratio = e.renormalized_coupling / e.rwa_coupling;
        assert!((ratio - (1.0 - e.delta / e.sum_frequency)).abs() < 1e-14);
        assert!(e.renormalized_coupling.abs() > e.rwa_coupling.abs());

        let mirrored = p.with_omega_r(ghz(3.8)).unwrap();
        let m = dispersive_estimates(&mirrored).unwrap();
        assert!(m.rwa_coupling > 0.0);
        assert!(m.renormalized_coupling.abs() < m.rwa_coupling.abs());
    }

    #[test]
    fn dispersive_estimates_vanish_for_far_resonator() {
        let p = SystemParams::reference().with_omega_r(ghz(1e6)).unwrap();
        let e = dispersive_estimates(&p).unwrap();
        assert!(e.rwa_coupling.abs() < 1e-3 * mhz(1.0));
        assert!(e.renormalized_coupling.abs() < 1e-3 * mhz(1.0));
    }

    #[test]
    fn dispersive_estimates_reject_resonance() {
        let p = SystemParams::reference();
        let resonant = p.with_omega_r(p.omega_q_final()).unwrap();
        assert!(dispersive_estimates(&resonant).is_err());
    }
}
