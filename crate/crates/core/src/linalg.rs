//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0), -I, I, c(0.0)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn hermiticity_error(m: &CMatrix) -> f64 {
    hs_norm(&(m - m.adjoint()))
}

pub fn unitarity_error(u: &CMatrix) -> f64 {
    let n = u.nrows();
    hs_norm(&(u.adjoint() * u - identity(n)))
}

/// `Tr[A B]` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn determinant(m: &CMatrix) -> Complex64 {
    m.clone().determinant()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(h: &CMatrix) -> Result<HermitianEigen> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite entry in Hermitian matrix".into()));
    }
    let n = h.nrows();
    let (values, vectors) = if h.iter().all(|z| z.im == 0.0) {
        // real symmetric path
        let re = RMatrix::from_fn(n, n, |i, j| h[(i, j)].re);
        let eig = re.symmetric_eigen();
        let v = eig.eigenvectors.map(c);
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), v)
    } else {
        let eig = h.clone().symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    let sorted_vectors = CMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    Ok(HermitianEigen { values: sorted_values, vectors: sorted_vectors })
}

/// `exp(-i H t)` for Hermitian `H`, through its eigendecomposition.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> Result<CMatrix> {
    let eig = hermitian_eigen(h)?;
    Ok(propagator_from_eigen(&eig, t))
}

pub(crate) fn propagator_from_eigen(eig: &HermitianEigen, t: f64) -> CMatrix {
    let n = eig.values.len();
    let v = &eig.vectors;
    let phases: Vec<Complex64> = eig.values.iter().map(|&e| Complex64::from_polar(1.0, -e * t)).collect();
    CMatrix::from_fn(n, n, |i, j| {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            acc += v[(i, k)] * phases[k] * v[(j, k)].conj();
        }
        acc
    })
}

/// Real symmetric eigendecomposition, sorted by the given key (descending).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `j` is the unit-norm eigenvector of `values[j]`.
    pub vectors: RMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenOrder {
    DescendingValue,
    DescendingMagnitude,
}

pub fn symmetric_eigen(m: RMatrix, order: EigenOrder) -> Result<SymmetricEigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: m.ncols() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
    }
    let eig = m.symmetric_eigen();
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite eigenvalues".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    match order {
        EigenOrder::DescendingValue => idx.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
        EigenOrder::DescendingMagnitude => {
            idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()))
        }
    }
    let sorted = idx.iter().map(|&k| values[k]).collect();
    let vectors = RMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    Ok(SymmetricEigen { values: sorted, vectors })
}
