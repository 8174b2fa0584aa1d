//! Dense complex matrix helpers shared by the channel and metric code.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

/// Dense `d × d` complex operator (states, unitaries, generators).
pub type DenseOperator = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(dim: usize) -> DenseOperator {
    DMatrix::identity(dim, dim)
}

/// Largest entrywise modulus.
pub fn max_abs(m: &DenseOperator) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &DenseOperator, b: &DenseOperator) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// `max |H - H†|` entrywise.
pub fn hermiticity_defect(h: &DenseOperator) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `max |U U† - 1|` entrywise.
pub fn unitarity_defect(u: &DenseOperator) -> f64 {
    let prod = u * u.adjoint();
    max_abs_diff(&prod, &identity(u.nrows()))
}

pub fn is_unitary(u: &DenseOperator, tol: f64) -> bool {
    u.is_square() && unitarity_defect(u) <= tol
}

/// Hermitian, positive semidefinite and unit trace, all within `tol`.
pub fn is_density_operator(rho: &DenseOperator, tol: f64) -> bool {
    if !rho.is_square() || hermiticity_defect(rho) > tol {
        return false;
    }
    if (rho.trace() - ONE).norm() > tol {
        return false;
    }
    let (values, _) = hermitian_eigen(rho);
    values.iter().all(|&v| v >= -tol)
}

/// From this size on faer's divide-and-conquer solver is several times faster.
const LARGE_EIGEN: usize = 48;

/// Eigendecomposition of a Hermitian matrix. The input is symmetrized first so
/// round-off in the lower triangle cannot leak into the result.
pub fn hermitian_eigen(h: &DenseOperator) -> (Vec<f64>, DenseOperator) {
    let sym = (h + h.adjoint()).scale(0.5);
    let n = sym.nrows();
    if n < LARGE_EIGEN {
        let eig = SymmetricEigen::new(sym);
        return (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors);
    }
    let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| sym[(i, j)]);
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("Hermitian eigensolver converges on finite input");
    let (s, u) = (eig.S(), eig.U());
    let values = (0..n).map(|k| s[k].re).collect();
    (values, DMatrix::from_fn(n, n, |i, j| u[(i, j)]))
}

fn to_faer(m: &DMatrix<Complex64>) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `op(a) · op(b)` where `op` is the identity or the conjugate transpose.
/// Large products go through faer; nalgebra has no fast complex kernel.
pub fn matmul(
    a: &DMatrix<Complex64>,
    adj_a: bool,
    b: &DMatrix<Complex64>,
    adj_b: bool,
) -> DMatrix<Complex64> {
    let work = a.nrows() * a.ncols() * if adj_b { b.nrows() } else { b.ncols() };
    if work < 1 << 18 {
        return match (adj_a, adj_b) {
            (false, false) => a * b,
            (true, false) => a.adjoint() * b,
            (false, true) => a * b.adjoint(),
            (true, true) => a.adjoint() * b.adjoint(),
        };
    }
    let (fa, fb) = (to_faer(a), to_faer(b));
    let prod = match (adj_a, adj_b) {
        (false, false) => &fa * &fb,
        (true, false) => fa.adjoint() * &fb,
        (false, true) => &fa * fb.adjoint(),
        (true, true) => fa.adjoint() * fb.adjoint(),
    };
    DMatrix::from_fn(prod.nrows(), prod.ncols(), |i, j| prod[(i, j)])
}

/// Trace norm of a Hermitian matrix (sum of absolute eigenvalues).
pub fn trace_norm_hermitian(h: &DenseOperator) -> f64 {
    let (values, _) = hermitian_eigen(h);
    values.iter().map(|v| v.abs()).sum()
}

pub fn kron(a: &DenseOperator, b: &DenseOperator) -> DenseOperator {
    a.kronecker(b)
}

/// Bitwise equality of two matrices. Used to merge identical ensemble members.
pub fn bitwise_eq(a: &DenseOperator, b: &DenseOperator) -> bool {
    a.shape() == b.shape()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
}

/// Eigenvalues of a unitary (or any normal) matrix via complex Schur form.
pub fn unitary_eigenvalues(u: &DenseOperator) -> Vec<Complex64> {
    let schur = u.clone().schur();
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}
