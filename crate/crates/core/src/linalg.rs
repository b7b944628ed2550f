//! Small dense linear-algebra helpers for the 4x4 problems.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix4 = Matrix4<C64>;
pub type CVector4 = Vector4<C64>;

/// Eigendecomposition of a real symmetric 4x4 matrix, eigenvalues ascending.
/// Columns of the returned matrix are the eigenvectors.
pub fn symmetric_eigen4(h: &Matrix4<f64>) -> (Vector4<f64>, Matrix4<f64>) {
    let eig = SymmetricEigen::new(*h);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = Vector4::zeros();
    let mut vectors = Matrix4::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `exp(-i h dt)` for real symmetric `h`.
pub fn expm_real_symmetric(h: &Matrix4<f64>, dt: f64) -> CMatrix4 {
    let eig = SymmetricEigen::new(*h);
    let v = &eig.eigenvectors;
    let phases: [C64; 4] = std::array::from_fn(|k| C64::from_polar(1.0, -eig.eigenvalues[k] * dt));
    CMatrix4::from_fn(|i, j| {
        (0..4)
            .map(|k| phases[k] * (v[(i, k)] * v[(j, k)]))
            .sum()
    })
}

/// `exp(-i h dt)` for complex Hermitian `h`.
pub fn expm_hermitian(h: &CMatrix4, dt: f64) -> CMatrix4 {
    let eig = SymmetricEigen::new(*h);
    let v = &eig.eigenvectors;
    let phases: [C64; 4] = std::array::from_fn(|k| C64::from_polar(1.0, -eig.eigenvalues[k] * dt));
    CMatrix4::from_fn(|i, j| {
        (0..4)
            .map(|k| phases[k] * v[(i, k)] * v[(j, k)].conj())
            .sum()
    })
}

pub fn to_complex(m: &Matrix4<f64>) -> CMatrix4 {
    m.map(|x| C64::new(x, 0.0))
}

/// Largest absolute deviation from Hermiticity.
pub fn hermiticity_error(m: &CMatrix4) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
