//! Simulation and resource analysis for randomized product formulas.
//!
//! The crate covers standard and importance-sampled qDrift channels, composite
//! Trotter + qDrift channels, exact channel distances for small systems and the
//! closed-form bias, concentration and cost bounds that go with them. Everything
//! is dense and exact: systems up to [`pauli::MAX_QUBITS`] qubits are represented
//! by explicit `2^n × 2^n` operators and `4^n × 4^n` superoperators.
//!
//! Qubit 1 is the leftmost Kronecker factor (big-endian), so the text form
//! `"ZIIZ"` is `Z₁Z₄` on four qubits. All modules follow this convention.

pub mod bounds;
pub mod channels;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod linalg;
pub mod metrics;
pub mod pauli;
pub mod sampling;

pub use error::{Error, Result};
pub use hamiltonian::{CostTable, Hamiltonian, Partition, Term};
pub use linalg::DenseOperator;
pub use pauli::{Pauli, PauliString};
pub use sampling::{RngStream, SamplingDistribution, WeightProfile};
