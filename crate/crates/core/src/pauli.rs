//! Pauli strings, their dense matrices and fast-forwarded exponentials.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseOperator, I, ONE, ZERO};

/// Hard limit on system size. Superoperators are `4^n × 4^n`.
pub const MAX_QUBITS: usize = 10;

/// Tolerance for the Hermiticity check in [`general_exp`].
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// Does this factor flip the computational basis bit?
    fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Phase picked up acting on basis bit `bit` (before the flip).
    fn phase(self, bit: bool) -> Complex64 {
        match (self, bit) {
            (Pauli::I, _) | (Pauli::X, _) | (Pauli::Z, false) => ONE,
            (Pauli::Z, true) => -ONE,
            // Y|0> = i|1>, Y|1> = -i|0>
            (Pauli::Y, false) => I,
            (Pauli::Y, true) => -I,
        }
    }
}

/// Tensor product of single-qubit Paulis, qubit 1 leftmost.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    factors: Vec<Pauli>,
}

impl PauliString {
    pub fn new(factors: Vec<Pauli>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("Pauli string needs at least one qubit"));
        }
        if factors.len() > MAX_QUBITS {
            return Err(Error::invalid(format!(
                "{} qubits exceeds the dense limit of {MAX_QUBITS}",
                factors.len()
            )));
        }
        Ok(Self { factors })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        Self::new(vec![Pauli::I; n_qubits])
    }

    /// Builds a string from `(qubit, label)` pairs with 1-based qubit indices;
    /// unlisted qubits carry the identity.
    pub fn from_sparse(n_qubits: usize, support: &[(usize, Pauli)]) -> Result<Self> {
        let mut factors = vec![Pauli::I; n_qubits];
        for &(qubit, p) in support {
            if qubit == 0 || qubit > n_qubits {
                return Err(Error::invalid(format!(
                    "qubit index {qubit} outside 1..={n_qubits}"
                )));
            }
            factors[qubit - 1] = p;
        }
        Self::new(factors)
    }

    /// `Z` on every listed (1-based) qubit, e.g. `z_on(4, &[1, 4])` is `Z₁Z₄`.
    pub fn z_on(n_qubits: usize, qubits: &[usize]) -> Result<Self> {
        let support: Vec<_> = qubits.iter().map(|&q| (q, Pauli::Z)).collect();
        Self::from_sparse(n_qubits, &support)
    }

    pub fn x_on(n_qubits: usize, qubit: usize) -> Result<Self> {
        Self::from_sparse(n_qubits, &[(qubit, Pauli::X)])
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Pauli] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits()
    }

    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(|&p| p == Pauli::I)
    }

    /// Number of non-identity factors.
    pub fn weight(&self) -> usize {
        self.factors.iter().filter(|&&p| p != Pauli::I).count()
    }

    /// Whether the two strings commute. Strings of different length never
    /// compare; see [`commutator_norm`].
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let clashes = self
            .factors
            .iter()
            .zip(&other.factors)
            .filter(|(a, b)| **a != Pauli::I && **b != Pauli::I && a != b)
            .count();
        clashes % 2 == 0
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.factors {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let factors = s
            .trim()
            .chars()
            .map(|c| {
                Pauli::from_char(c)
                    .ok_or_else(|| Error::Validation(format!("unknown Pauli label {c:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(factors)
    }
}

impl Serialize for PauliString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense `2^n × 2^n` matrix of a Pauli string.
///
/// Every column has a single non-zero entry: column `c` maps to row
/// `c ^ flip_mask` with a phase that is the product of the per-qubit phases.
pub fn dense_matrix(p: &PauliString) -> DenseOperator {
    let n = p.n_qubits();
    let dim = p.dim();
    let mut flip_mask = 0usize;
    for (k, f) in p.factors().iter().enumerate() {
        if f.flips() {
            flip_mask |= 1 << (n - 1 - k);
        }
    }
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for col in 0..dim {
        let mut phase = ONE;
        for (k, f) in p.factors().iter().enumerate() {
            let bit = (col >> (n - 1 - k)) & 1 == 1;
            phase *= f.phase(bit);
        }
        m[(col ^ flip_mask, col)] = phase;
    }
    m
}

/// `exp(-iθP) = cos θ · 1 − i sin θ · P`, exact because `P² = 1`.
pub fn pauli_exp(p: &PauliString, theta: f64) -> DenseOperator {
    let mut m = dense_matrix(p);
    let s = Complex64::new(0.0, -theta.sin());
    m.iter_mut().for_each(|z| *z *= s);
    let c = Complex64::new(theta.cos(), 0.0);
    for i in 0..m.nrows() {
        m[(i, i)] += c;
    }
    m
}

/// Exact propagator `exp(-iHt)` of a Hermitian matrix via eigendecomposition.
pub fn general_exp(h: &DenseOperator, t: f64) -> Result<DenseOperator> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            left: h.nrows(),
            right: h.ncols(),
        });
    }
    let deviation = linalg::hermiticity_defect(h);
    if deviation > HERMITIAN_TOL {
        return Err(Error::NonHermitianInput { deviation });
    }
    let (values, vectors) = linalg::hermitian_eigen(h);
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -lambda * t);
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= phase);
    }
    Ok(scaled * vectors.adjoint())
}

/// Spectral norm of `[p1, p2]`: 0 when the strings commute, 2 otherwise.
pub fn commutator_norm(p1: &PauliString, p2: &PauliString) -> Result<f64> {
    if p1.n_qubits() != p2.n_qubits() {
        return Err(Error::DimensionMismatch {
            left: p1.n_qubits(),
            right: p2.n_qubits(),
        });
    }
    Ok(if p1.commutes_with(p2) { 0.0 } else { 2.0 })
}
