//! Adiabatic sweep functions `f(s)` driving the qubit detuning from `f0` to 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Linear, Landau–Zener-like.
    Lz,
    /// Degree-7 polynomial with three vanishing derivatives at both ends.
    Pl,
    /// Regularized incomplete Beta function.
    Beta,
    /// Roland–Cerf local adiabatic sweep.
    Rc,
    /// Tangent (adiabatic brachistochrone) sweep.
    Tan,
}

impl SweepKind {
    pub const ALL: [SweepKind; 5] = [Self::Lz, Self::Pl, Self::Beta, Self::Rc, Self::Tan];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Lz => "lz",
            Self::Pl => "pl",
            Self::Beta => "beta",
            Self::Rc => "rc",
            Self::Tan => "tan",
        }
    }

    /// Whether the sweep shape depends on the anticrossing half-gap.
    pub fn needs_gap(&self) -> bool {
        matches!(self, Self::Rc | Self::Tan)
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lz" => Ok(Self::Lz),
            "pl" => Ok(Self::Pl),
            "beta" => Ok(Self::Beta),
            "rc" => Ok(Self::Rc),
            "tan" => Ok(Self::Tan),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep '{other}' (expected lz, pl, beta, rc or tan)"
            ))),
        }
    }
}

pub const DEFAULT_BETA_K: u32 = 8;

/// Gauss–Legendre rule for the Beta sweep integrand `y^k (1-y)^k`, which is a
/// polynomial of degree `2k`; `k + 1` nodes integrate it exactly.
#[derive(Debug, Clone, PartialEq)]
struct BetaRule {
    k: i32,
    nodes: Vec<(f64, f64)>,
    norm: f64,
}

impl BetaRule {
    fn new(k: u32) -> Self {
        let nodes = gauss_legendre(k as usize + 1);
        let k = k as i32;
        let mut rule = Self { k, nodes, norm: 1.0 };
        rule.norm = rule.integral(1.0);
        rule
    }

    fn integrand(&self, y: f64) -> f64 {
        (y * (1.0 - y)).powi(self.k)
    }

    fn integral(&self, s: f64) -> f64 {
        let half = 0.5 * s;
        half * self
            .nodes
            .iter()
            .map(|&(x, w)| w * self.integrand(half * (x + 1.0)))
            .sum::<f64>()
    }

    /// Regularized incomplete Beta ratio `B_s(1+k, 1+k) / B_1(1+k, 1+k)`.
    fn theta(&self, s: f64) -> f64 {
        if s <= 0.5 {
            self.integral(s) / self.norm
        } else {
            1.0 - self.integral(1.0 - s) / self.norm
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// A sweep function together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    kind: SweepKind,
    f0: f64,
    k_beta: u32,
    g0_over_g: f64,
    #[serde(skip)]
    beta: Option<BetaRule>,
}

impl SweepSpec {
    pub fn new(kind: SweepKind, f0: f64, k_beta: u32, g0_over_g: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::InvalidParameter(format!("f0 must be positive, got {f0}")));
        }
        if kind == SweepKind::Beta && k_beta == 0 {
            return Err(Error::InvalidParameter("k_beta must be a positive integer".into()));
        }
        if kind.needs_gap() && !(g0_over_g > 0.0 && g0_over_g.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "g0/g must be positive for the {kind} sweep, got {g0_over_g}"
            )));
        }
        let beta = (kind == SweepKind::Beta).then(|| BetaRule::new(k_beta));
        Ok(Self { kind, f0, k_beta, g0_over_g, beta })
    }

    /// Sweep of the given kind for a device, using its `f0` and numerically
    /// determined half-gap.
    pub fn for_params(kind: SweepKind, params: &SystemParams) -> Result<Self> {
        Self::new(kind, params.f0(), DEFAULT_BETA_K, params.g0_over_g())
    }

    pub fn with_k_beta(&self, k_beta: u32) -> Result<Self> {
        Self::new(self.kind, self.f0, k_beta, self.g0_over_g)
    }

    pub fn kind(&self) -> SweepKind {
        self.kind
    }
    pub fn f0(&self) -> f64 {
        self.f0
    }
    pub fn k_beta(&self) -> u32 {
        self.k_beta
    }
    pub fn g0_over_g(&self) -> f64 {
        self.g0_over_g
    }

    fn check(s: f64) -> Result<()> {
        if (0.0..=1.0).contains(&s) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange(s))
        }
    }

    /// `f(s)`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        Self::check(s)?;
        Ok(self.value(s))
    }

    /// `df/ds`.
    pub fn derivative(&self, s: f64) -> Result<f64> {
        Self::check(s)?;
        Ok(self.slope(s))
    }

    pub(crate) fn value(&self, s: f64) -> f64 {
        let f0 = self.f0;
        let r = self.g0_over_g;
        match self.kind {
            SweepKind::Lz => f0 * (1.0 - s),
            SweepKind::Pl => {
                let s4 = s * s * s * s;
                f0 * (1.0 + s4 * (-35.0 + s * (84.0 + s * (-70.0 + 20.0 * s))))
            }
            SweepKind::Beta => f0 * (1.0 - self.beta_rule().theta(s)),
            SweepKind::Rc => r * f0 * (1.0 - s) / (r * r + f0 * f0 * s * (2.0 - s)).sqrt(),
            SweepKind::Tan => {
                let alpha = (f0 / r).atan();
                r * (alpha * (1.0 - s)).tan()
            }
        }
    }

    pub(crate) fn slope(&self, s: f64) -> f64 {
        let f0 = self.f0;
        let r = self.g0_over_g;
        match self.kind {
            SweepKind::Lz => -f0,
            SweepKind::Pl => {
                let u = s * (1.0 - s);
                -140.0 * f0 * u * u * u
            }
            SweepKind::Beta => {
                let rule = self.beta_rule();
                -f0 * rule.integrand(s) / rule.norm
            }
            SweepKind::Rc => {
                let d = r * r + f0 * f0 * s * (2.0 - s);
                -r * f0 * (r * r + f0 * f0) / (d * d.sqrt())
            }
            SweepKind::Tan => {
                let alpha = (f0 / r).atan();
                let c = (alpha * (1.0 - s)).cos();
                -r * alpha / (c * c)
            }
        }
    }

    fn beta_rule(&self) -> &BetaRule {
        self.beta.as_ref().expect("Beta sweep carries its quadrature rule")
    }
}

/// Which local adiabaticity condition a residual refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdiabaticCondition {
    /// `|df/dt| |⟨e|∂_f H|gs⟩| / ΔE²` (Roland–Cerf).
    MatrixElement,
    /// `|df/dt| ‖∂_f H‖_HS / ΔE²` (brachistochrone).
    HilbertSchmidt,
}

/// Left-hand side of the local adiabatic condition for the two-level reduction
/// `H = g f σ_z + x0 σ_x` swept over total time `t_f`.
///
/// `g` and `x0` are angular frequencies; the result is dimensionless.
pub fn local_adiabatic_residual(
    spec: &SweepSpec,
    s: f64,
    g: f64,
    x0: f64,
    t_f: f64,
    condition: AdiabaticCondition,
) -> Result<f64> {
    let f = spec.eval(s)?;
    let rate = spec.slope(s).abs() / t_f;
    let e2 = g * g * f * f + x0 * x0;
    let gap_sq = 4.0 * e2;
    let coupling = match condition {
        AdiabaticCondition::MatrixElement => g * x0.abs() / e2.sqrt(),
        AdiabaticCondition::HilbertSchmidt => g * std::f64::consts::SQRT_2,
    };
    Ok(rate * coupling / gap_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: f64 = 0.0227;

    fn all_specs(f0: f64, r: f64) -> Vec<SweepSpec> {
        SweepKind::ALL
            .iter()
            .map(|&k| SweepSpec::new(k, f0, DEFAULT_BETA_K, r).unwrap())
            .collect()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let rule = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = rule.iter().map(|&(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn endpoints() {
        for spec in all_specs(0.2, R) {
            assert!((spec.eval(0.0).unwrap() - 0.2).abs() < 1e-12, "{}", spec.kind());
            assert!(spec.eval(1.0).unwrap().abs() < 1e-12, "{}", spec.kind());
        }
    }

    #[test]
    fn midpoint_values() {
        let lz = SweepSpec::new(SweepKind::Lz, 0.2, 8, R).unwrap();
        assert!((lz.eval(0.5).unwrap() - 0.1).abs() < 1e-15);
        // 1 − 35/16 + 84/32 − 70/64 + 20/128 = 1/2
        let pl = SweepSpec::new(SweepKind::Pl, 0.2, 8, R).unwrap();
        assert!((pl.eval(0.5).unwrap() - 0.1).abs() < 1e-15);
        let beta = SweepSpec::new(SweepKind::Beta, 0.2, 8, R).unwrap();
        assert!((beta.eval(0.5).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn tangent_inverse_identity() {
        let tan = SweepSpec::new(SweepKind::Tan, 0.2, 8, R).unwrap();
        assert!((tan.eval(0.0).unwrap() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let lz = SweepSpec::new(SweepKind::Lz, 0.2, 8, R).unwrap();
        assert!(matches!(lz.eval(-0.1), Err(Error::TimeOutOfRange(_))));
        assert!(matches!(lz.derivative(1.5), Err(Error::TimeOutOfRange(_))));
        assert!(SweepSpec::new(SweepKind::Pl, 0.0, 8, R).is_err());
        assert!(SweepSpec::new(SweepKind::Pl, -0.2, 8, R).is_err());
        assert!(SweepSpec::new(SweepKind::Beta, 0.2, 0, R).is_err());
        assert!(SweepSpec::new(SweepKind::Rc, 0.2, 8, 0.0).is_err());
        assert!(SweepSpec::new(SweepKind::Tan, 0.2, 8, -1.0).is_err());
    }

    #[test]
    fn simple_derivatives() {
        let lz = SweepSpec::new(SweepKind::Lz, 0.2, 8, R).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(lz.derivative(s).unwrap(), -0.2);
        }
        let pl = SweepSpec::new(SweepKind::Pl, 0.2, 8, R).unwrap();
        assert_eq!(pl.derivative(0.0).unwrap(), 0.0);
        assert_eq!(pl.derivative(1.0).unwrap(), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for spec in all_specs(0.2, R) {
            for i in 1..=100 {
                let s = i as f64 / 101.0;
                let h = 1e-5;
                let fd = (spec.value(s + h) - spec.value(s - h)) / (2.0 * h);
                let an = spec.derivative(s).unwrap();
                let scale = an.abs().max(1e-3);
                assert!((fd - an).abs() / scale < 1e-6, "{} at s={s}: fd {fd} vs {an}", spec.kind());
            }
        }
    }

    #[test]
    fn beta_matches_binomial_sum() {
        // For integer a = b = k + 1, I_s(a, b) = Σ_{j=a}^{2k+1} C(2k+1, j) s^j (1−s)^{2k+1−j}.
        fn binom(n: u32, k: u32) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        for k in [1u32, 2, 5, 8, 12] {
            let spec = SweepSpec::new(SweepKind::Beta, 1.0, k, R).unwrap();
            let n = 2 * k + 1;
            for i in 0..=20 {
                let s = i as f64 / 20.0;
                let reg: f64 = (k + 1..=n)
                    .map(|j| binom(n, j) * s.powi(j as i32) * (1.0 - s).powi((n - j) as i32))
                    .sum();
                assert!((spec.eval(s).unwrap() - (1.0 - reg)).abs() < 1e-13, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn polynomial_boundary_derivatives_vanish() {
        // the derivative −140 f0 s³(1−s)³ has zeros of order 3 at both ends
        let pl = SweepSpec::new(SweepKind::Pl, 0.2, 8, R).unwrap();
        for &s in &[1e-3, 1.0 - 1e-3] {
            let d = pl.derivative(s).unwrap().abs();
            assert!(d < 140.0 * 0.2 * 1e-9 * 1.01);
        }
    }

    #[test]
    fn larger_beta_k_flattens_endpoints() {
        let f = |k: u32, s: f64| {
            SweepSpec::new(SweepKind::Beta, 0.2, k, R).unwrap().derivative(s).unwrap().abs()
        };
        for &s in &[1e-3, 1e-2, 0.05] {
            for k in 1..12 {
                assert!(f(k + 1, s) <= f(k, s), "k={k} s={s}");
            }
        }
    }

    #[test]
    fn rc_saturates_matrix_element_condition() {
        let spec = SweepSpec::new(SweepKind::Rc, 0.2, 8, R).unwrap();
        let (g, t_f) = (3.0e8, 1e-6);
        let x0 = R * g;
        let vals: Vec<f64> = (0..=200)
            .map(|i| {
                local_adiabatic_residual(&spec, i as f64 / 200.0, g, x0, t_f, AdiabaticCondition::MatrixElement)
                    .unwrap()
            })
            .collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min - 1.0 < 1e-6);
    }

    #[test]
    fn tan_saturates_hilbert_schmidt_condition() {
        let spec = SweepSpec::new(SweepKind::Tan, 0.2, 8, R).unwrap();
        let (g, t_f) = (3.0e8, 1e-6);
        let x0 = R * g;
        let vals: Vec<f64> = (0..=200)
            .map(|i| {
                local_adiabatic_residual(&spec, i as f64 / 200.0, g, x0, t_f, AdiabaticCondition::HilbertSchmidt)
                    .unwrap()
            })
            .collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min - 1.0 < 1e-6);
    }

    #[test]
    fn lz_residual_peaks_at_anticrossing() {
        let spec = SweepSpec::new(SweepKind::Lz, 0.2, 8, R).unwrap();
        let (g, t_f) = (3.0e8, 1e-6);
        let res = |s: f64| {
            local_adiabatic_residual(&spec, s, g, R * g, t_f, AdiabaticCondition::MatrixElement).unwrap()
        };
        let best = (0..=100).map(|i| i as f64 / 100.0).max_by(|a, b| res(*a).total_cmp(&res(*b))).unwrap();
        assert_eq!(best, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn endpoints_and_monotonicity(
                f0 in 1e-3f64..=1.0,
                r in 1e-3f64..0.999,
                k in 1u32..16,
            ) {
                for kind in SweepKind::ALL {
                    let spec = SweepSpec::new(kind, f0, k, r).unwrap();
                    prop_assert!((spec.eval(0.0).unwrap() - f0).abs() <= 1e-12);
                    prop_assert!(spec.eval(1.0).unwrap().abs() <= 1e-12);
                    let mut prev = spec.eval(0.0).unwrap();
                    for i in 1..=400 {
                        let cur = spec.eval(i as f64 / 400.0).unwrap();
                        prop_assert!(cur <= prev + 1e-14, "{kind} not monotone");
                        prev = cur;
                    }
                }
            }
        }
    }
}
