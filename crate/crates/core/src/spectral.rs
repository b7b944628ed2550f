//! Instantaneous spectra with continuity tracking, and the counterdiabatic
//! field built from them.
//!
//! For a real Hamiltonian the counterdiabatic field is purely imaginary:
//! `t_f · H_CD(s) = i A(s)` with `A` real antisymmetric. Profiles store `A`,
//! so `A[(i, j)] = t_f · Im⟨i|H_CD|j⟩`; the flip-flop element is `A[(1, 2)]`.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen4, CMatrix4, C64};
use crate::model::{assemble_h4, ControlBasis, SystemParams};
use crate::sweeps::SweepSpec;

/// Spectral gaps below this are treated as degenerate.
pub const MIN_LEVEL_SPACING: f64 = 1e-9;

/// Overlaps below this between consecutive frames mean the grid is too coarse.
pub const MIN_TRACKING_OVERLAP: f64 = 0.5;

/// Eigenpairs of `H(s)`, columns ordered and signed consistently with the
/// previous frame of a tracked sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenFrame {
    pub s: f64,
    pub energies: Vector4<f64>,
    pub vectors: Matrix4<f64>,
}

impl EigenFrame {
    /// Frame at `s` in ascending energy order, each vector signed so that its
    /// largest-magnitude component is positive.
    pub fn initial(h: &Matrix4<f64>, s: f64) -> Self {
        let (energies, mut vectors) = symmetric_eigen4(h);
        for k in 0..4 {
            let col = vectors.column(k);
            let pivot = col.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            if pivot < 0.0 {
                vectors.column_mut(k).neg_mut();
            }
        }
        Self { s, energies, vectors }
    }

    /// Diagonalize `h` and match its eigenvectors to this frame by maximal
    /// overlap, fixing signs so that every overlap is positive.
    pub fn follow(&self, h: &Matrix4<f64>, s: f64) -> Result<Self> {
        let (energies, vectors) = symmetric_eigen4(h);
        let overlap = self.vectors.transpose() * vectors;
        let perm = best_assignment(&overlap);
        let worst = (0..4).map(|i| overlap[(i, perm[i])].abs()).fold(f64::INFINITY, f64::min);
        if worst < MIN_TRACKING_OVERLAP {
            return Err(Error::TrackingLost { s, overlap: worst });
        }
        let mut out = Self { s, energies: Vector4::zeros(), vectors: Matrix4::zeros() };
        for (i, &j) in perm.iter().enumerate() {
            let o = overlap[(i, j)];
            out.energies[i] = energies[j];
            let sign = if o < 0.0 { -1.0 } else { 1.0 };
            out.vectors.set_column(i, &(vectors.column(j) * sign));
        }
        Ok(out)
    }

    /// Column `k` as a 4-vector.
    pub fn state(&self, k: usize) -> Vector4<f64> {
        self.vectors.column(k).into()
    }
}

/// Permutation `p` maximizing `Σ_i |overlap[(i, p[i])]|`.
fn best_assignment(overlap: &Matrix4<f64>) -> [usize; 4] {
    let mut best = ([0usize, 1, 2, 3], f64::MIN);
    for perm in PERMUTATIONS.iter() {
        let score: f64 = (0..4).map(|i| overlap[(i, perm[i])].abs()).sum();
        if score > best.1 {
            best = (*perm, score);
        }
    }
    best.0
}

const PERMUTATIONS: [[usize; 4]; 24] = {
    let mut out = [[0usize; 4]; 24];
    let mut n = 0;
    let mut a = 0;
    while a < 4 {
        let mut b = 0;
        while b < 4 {
            let mut c = 0;
            while c < 4 {
                let d = 6usize.wrapping_sub(a + b + c);
                if a != b && a != c && b != c && d < 4 && d != a && d != b && d != c {
                    out[n] = [a, b, c, d];
                    n += 1;
                }
                c += 1;
            }
            b += 1;
        }
        a += 1;
    }
    out
};

/// Tracked eigenframes on the uniform grid `s_j = j / (n_grid − 1)`.
pub fn eigen_frames(spec: &SweepSpec, params: &SystemParams, n_grid: usize) -> Result<Vec<EigenFrame>> {
    if n_grid < 2 {
        return Err(Error::InvalidParameter("n_grid must be at least 2".into()));
    }
    let dg = params.delta_g();
    let step = 1.0 / (n_grid - 1) as f64;
    let mut frames = Vec::with_capacity(n_grid);
    frames.push(EigenFrame::initial(&assemble_h4(dg, spec.eval(0.0)?), 0.0));
    for j in 1..n_grid {
        let s = if j == n_grid - 1 { 1.0 } else { j as f64 * step };
        let next = frames[j - 1].follow(&assemble_h4(dg, spec.eval(s)?), s)?;
        frames.push(next);
    }
    Ok(frames)
}

/// Real antisymmetric generator `A(s)` with `t_f H_CD(s) = i A(s)`.
///
/// `∂_s H = f'(s) D1` is used analytically, so the result is exact up to the
/// eigendecomposition and does not depend on eigenvector signs.
pub fn cd_generator(spec: &SweepSpec, params: &SystemParams, s: f64) -> Result<Matrix4<f64>> {
    let f = spec.eval(s)?;
    let slope = spec.slope(s);
    let (energies, vectors) = symmetric_eigen4(&assemble_h4(params.delta_g(), f));
    cd_from_eigensystem(&energies, &vectors, slope, s)
}

pub(crate) fn cd_from_eigensystem(
    energies: &Vector4<f64>,
    vectors: &Matrix4<f64>,
    slope: f64,
    s: f64,
) -> Result<Matrix4<f64>> {
    let gap = (0..3).map(|k| energies[k + 1] - energies[k]).fold(f64::INFINITY, f64::min);
    if gap < MIN_LEVEL_SPACING {
        return Err(Error::Degenerate { s, gap });
    }
    let mut a = Matrix4::zeros();
    if slope == 0.0 {
        return Ok(a);
    }
    let d1 = ControlBasis::new().d1;
    // ⟨m|D1|n⟩ in the eigenbasis
    let dh = vectors.transpose() * d1 * vectors * slope;
    for m in 0..4 {
        for n in 0..4 {
            if m == n {
                continue;
            }
            let w = dh[(m, n)] / (energies[n] - energies[m]);
            a += vectors.column(m) * vectors.column(n).transpose() * w;
        }
    }
    Ok(a)
}

/// `t_f · H_CD(s)` as a complex Hermitian matrix with purely imaginary entries.
pub fn cd_field(spec: &SweepSpec, params: &SystemParams, s: f64) -> Result<CMatrix4> {
    Ok(cd_generator(spec, params, s)?.map(|x| C64::new(0.0, x)))
}

/// Keeps only the flip-flop element `(1, 2)`/`(2, 1)` of a generator.
pub fn restrict_to_flip_flop(a: &Matrix4<f64>) -> Matrix4<f64> {
    let mut p = Matrix4::zeros();
    p[(1, 2)] = a[(1, 2)];
    p[(2, 1)] = a[(2, 1)];
    p
}

/// `t_f · H_p(s) = (h23/2)(σ_x⁽¹⁾σ_y⁽²⁾ − σ_y⁽¹⁾σ_x⁽²⁾)`: the counterdiabatic
/// field with every element except the flip-flop pair removed.
pub fn partial_cd(spec: &SweepSpec, params: &SystemParams, s: f64) -> Result<CMatrix4> {
    let a = restrict_to_flip_flop(&cd_generator(spec, params, s)?);
    Ok(a.map(|x| C64::new(0.0, x)))
}

/// Upper-triangle element pairs in row-major order.
pub const UPPER_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Sampled counterdiabatic field over a uniform grid in `s`, with cubic
/// interpolation of the flip-flop element.
#[derive(Debug, Clone, Serialize)]
pub struct CDProfile {
    s: Vec<f64>,
    #[serde(skip)]
    generators: Vec<Matrix4<f64>>,
    h23: Vec<f64>,
    #[serde(skip)]
    dh23: Vec<f64>,
    max_h23: f64,
}

impl CDProfile {
    pub fn grid(&self) -> &[f64] {
        &self.s
    }

    pub fn generators(&self) -> &[Matrix4<f64>] {
        &self.generators
    }

    pub fn h23_samples(&self) -> &[f64] {
        &self.h23
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn spacing(&self) -> f64 {
        1.0 / (self.s.len() - 1) as f64
    }

    /// Interpolated `t_f · Im⟨2|H_CD|3⟩` at `s` (clamped into [0, 1]).
    pub fn h23(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let h = self.spacing();
        let j = ((s / h).floor() as usize).min(self.s.len() - 2);
        let u = (s - self.s[j]) / h;
        hermite(self.h23[j], self.h23[j + 1], self.dh23[j] * h, self.dh23[j + 1] * h, u)
    }

    /// Maximum of the interpolated flip-flop element over [0, 1].
    pub fn max_h23(&self) -> f64 {
        self.max_h23
    }

    /// Largest `|A[(i, j)]|` over the grid.
    pub fn max_abs_element(&self, i: usize, j: usize) -> f64 {
        self.generators.iter().map(|a| a[(i, j)].abs()).fold(0.0, f64::max)
    }

    /// `max|h23| / max|h_ij|` over the other five independent elements.
    pub fn dominance_ratio(&self) -> f64 {
        let main = self.max_abs_element(1, 2);
        let other = UPPER_PAIRS
            .iter()
            .filter(|&&p| p != (1, 2))
            .map(|&(i, j)| self.max_abs_element(i, j))
            .fold(0.0, f64::max);
        main / other
    }

    fn interpolant_max(&self) -> f64 {
        let h = self.spacing();
        let mut best = self.h23.iter().cloned().fold(f64::MIN, f64::max);
        for j in 0..self.s.len() - 1 {
            let (p0, p1, m0, m1) = (self.h23[j], self.h23[j + 1], self.dh23[j] * h, self.dh23[j + 1] * h);
            // derivative of the cubic Hermite segment in u is a quadratic
            let a = 6.0 * p0 + 3.0 * m0 - 6.0 * p1 + 3.0 * m1;
            let b = -6.0 * p0 - 4.0 * m0 + 6.0 * p1 - 2.0 * m1;
            let c = m0;
            for u in quadratic_roots(a, b, c) {
                if (0.0..=1.0).contains(&u) {
                    best = best.max(hermite(p0, p1, m0, m1, u));
                }
            }
        }
        best
    }
}

fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * p0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * p1 + (u3 - u2) * m1
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-300 {
        return if b.abs() < 1e-300 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = vec![q / a];
    if q != 0.0 {
        roots.push(c / q);
    }
    roots
}

/// Fourth-order finite-difference derivative of uniformly sampled data.
fn sampled_derivative(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    if n < 5 {
        return (0..n)
            .map(|i| {
                let (a, b) = if i == 0 { (0, 1) } else if i == n - 1 { (n - 2, n - 1) } else { (i - 1, i + 1) };
                (y[b] - y[a]) / ((b - a) as f64 * h)
            })
            .collect();
    }
    (0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (-y[i + 2] + 8.0 * y[i + 1] - 8.0 * y[i - 1] + y[i - 2]) / (12.0 * h)
            } else if i < 2 {
                let o = i; // offset of the evaluation point inside the stencil y[0..5]
                one_sided(&y[0..5], o, h)
            } else {
                let o = i - (n - 5);
                one_sided(&y[n - 5..n], o, h)
            }
        })
        .collect()
}

/// Five-point derivative at stencil position `o` of `y[0..5]`.
fn one_sided(y: &[f64], o: usize, h: f64) -> f64 {
    const W: [[f64; 5]; 5] = [
        [-25.0, 48.0, -36.0, 16.0, -3.0],
        [-3.0, -10.0, 18.0, -6.0, 1.0],
        [1.0, -8.0, 0.0, 8.0, -1.0],
        [-1.0, 6.0, -18.0, 10.0, 3.0],
        [3.0, -16.0, 36.0, -48.0, 25.0],
    ];
    W[o].iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / (12.0 * h)
}

/// Sample the counterdiabatic field on `n_grid` uniform points.
pub fn build_cd_profile(spec: &SweepSpec, params: &SystemParams, n_grid: usize) -> Result<CDProfile> {
    if n_grid < 2 {
        return Err(Error::InvalidParameter("n_grid must be at least 2".into()));
    }
    let h = 1.0 / (n_grid - 1) as f64;
    let s: Vec<f64> = (0..n_grid).map(|j| if j == n_grid - 1 { 1.0 } else { j as f64 * h }).collect();
    let generators = s
        .par_iter()
        .map(|&sj| cd_generator(spec, params, sj))
        .collect::<Result<Vec<_>>>()?;
    let h23: Vec<f64> = generators.iter().map(|a| a[(1, 2)]).collect();
    let dh23 = sampled_derivative(&h23, h);
    let mut profile = CDProfile { s, generators, h23, dh23, max_h23: 0.0 };
    profile.max_h23 = profile.interpolant_max();
    Ok(profile)
}

pub const DEFAULT_PROFILE_GRID: usize = 2001;
