//! Weighted Pauli-sum Hamiltonians, two-block partitions and gate-cost tables.
//!
//! Also home to the built-in 4-qubit lattice models (two partitionings of the
//! same 19 generators) and the default cost table for their generators.
//!
//! # File format
//!
//! Partitions are stored as TOML:
//!
//! ```toml
//! label = "lattice-0"
//! n_qubits = 4
//!
//! [[A]]
//! coeff = 1.0
//! pauli = "XIII"
//!
//! [[B]]
//! coeff = 0.05
//! pauli = "ZIII"
//!
//! [costs]          # optional
//! XIII = 0.1
//! ZIII = 0.1
//! ```
//!
//! Term order is preserved; it fixes the Trotter product order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseOperator, ZERO};
use crate::pauli::{self, PauliString};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub pauli: PauliString,
}

impl Term {
    pub fn new(coeff: f64, pauli: PauliString) -> Self {
        Self { coeff, pauli }
    }
}

/// `H = Σ h_l H_l` with every `h_l > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hamiltonian {
    n_qubits: usize,
    terms: Vec<Term>,
}

impl Hamiltonian {
    /// Validates the terms. Zero coefficients are dropped; negative or
    /// non-finite ones are rejected (signs belong in the generator).
    pub fn new(n_qubits: usize, terms: Vec<Term>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > pauli::MAX_QUBITS {
            return Err(Error::Validation(format!(
                "n_qubits must be in 1..={}, got {n_qubits}",
                pauli::MAX_QUBITS
            )));
        }
        let mut kept = Vec::with_capacity(terms.len());
        for (i, term) in terms.into_iter().enumerate() {
            if term.pauli.n_qubits() != n_qubits {
                return Err(Error::Validation(format!(
                    "term {i} ({}) acts on {} qubits, expected {n_qubits}",
                    term.pauli,
                    term.pauli.n_qubits()
                )));
            }
            if !term.coeff.is_finite() || term.coeff < 0.0 {
                return Err(Error::Validation(format!(
                    "term {i} ({}) has coefficient {}; coefficients must be positive",
                    term.pauli, term.coeff
                )));
            }
            if term.coeff > 0.0 {
                kept.push(term);
            }
        }
        Ok(Self {
            n_qubits,
            terms: kept,
        })
    }

    pub fn empty(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, Vec::new())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.coeff).collect()
    }

    /// `λ = Σ h_l`.
    pub fn lambda(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff).sum()
    }

    /// `Λ = max h_l` (zero for an empty Hamiltonian).
    pub fn lambda_max(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff).fold(0.0, f64::max)
    }

    pub fn dense(&self) -> DenseOperator {
        let dim = self.dim();
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for term in &self.terms {
            m += pauli::dense_matrix(&term.pauli).scale(term.coeff);
        }
        m
    }

    /// Same generators, every coefficient multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.n_qubits,
            self.terms
                .iter()
                .map(|t| Term::new(t.coeff * factor, t.pauli.clone()))
                .collect(),
        )
    }
}

/// `H = A + B`, with `A` simulated deterministically and `B` stochastically.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub label: String,
    part_a: Hamiltonian,
    part_b: Hamiltonian,
}

impl Partition {
    pub fn new(label: impl Into<String>, part_a: Hamiltonian, part_b: Hamiltonian) -> Result<Self> {
        if part_a.n_qubits() != part_b.n_qubits() {
            return Err(Error::Validation(format!(
                "blocks act on {} and {} qubits",
                part_a.n_qubits(),
                part_b.n_qubits()
            )));
        }
        Ok(Self {
            label: label.into(),
            part_a,
            part_b,
        })
    }

    pub fn part_a(&self) -> &Hamiltonian {
        &self.part_a
    }

    pub fn part_b(&self) -> &Hamiltonian {
        &self.part_b
    }

    pub fn n_qubits(&self) -> usize {
        self.part_a.n_qubits()
    }

    /// Term concatenation `A` then `B`.
    pub fn full(&self) -> Hamiltonian {
        let terms = self
            .part_a
            .terms()
            .iter()
            .chain(self.part_b.terms())
            .cloned()
            .collect();
        Hamiltonian::new(self.n_qubits(), terms).expect("blocks were validated")
    }

    /// Rescales the blocks: every `A` coefficient times `a`, every `B`
    /// coefficient times `b`.
    pub fn rescaled(&self, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid(format!(
                "block strengths must be positive, got a={a}, b={b}"
            )));
        }
        Partition::new(self.label.clone(), self.part_a.scaled(a)?, self.part_b.scaled(b)?)
    }
}

/// Per-generator implementation cost `C_j > 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<PauliString, f64>", into = "BTreeMap<PauliString, f64>")]
pub struct CostTable {
    entries: BTreeMap<PauliString, f64>,
}

impl CostTable {
    pub fn new(entries: BTreeMap<PauliString, f64>) -> Result<Self> {
        for (p, &c) in &entries {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::NonPositiveCost {
                    pauli: p.to_string(),
                    cost: c,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<I: IntoIterator<Item = (PauliString, f64)>>(pairs: I) -> Result<Self> {
        Self::new(pairs.into_iter().collect())
    }

    pub fn lookup(&self, p: &PauliString) -> Result<f64> {
        self.entries
            .get(p)
            .copied()
            .ok_or_else(|| Error::MissingCost(p.to_string()))
    }

    /// Costs for every term of `h`, in term order.
    pub fn costs_for(&self, h: &Hamiltonian) -> Result<Vec<f64>> {
        h.terms().iter().map(|t| self.lookup(&t.pauli)).collect()
    }

    /// `Σ C_j` over the generators of `h`.
    pub fn total(&self, h: &Hamiltonian) -> Result<f64> {
        Ok(self.costs_for(h)?.iter().sum())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PauliString, &f64)> {
        self.entries.iter()
    }

    /// Adds or replaces entries from `other`.
    pub fn merged_with(&self, other: &CostTable) -> CostTable {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), *v)));
        CostTable { entries }
    }
}

impl TryFrom<BTreeMap<PauliString, f64>> for CostTable {
    type Error = Error;

    fn try_from(entries: BTreeMap<PauliString, f64>) -> Result<Self> {
        CostTable::new(entries)
    }
}

impl From<CostTable> for BTreeMap<PauliString, f64> {
    fn from(table: CostTable) -> Self {
        table.entries
    }
}

const LATTICE_QUBITS: usize = 4;

fn z(qubits: &[usize]) -> PauliString {
    PauliString::z_on(LATTICE_QUBITS, qubits).expect("static lattice generator")
}

fn x(qubit: usize) -> PauliString {
    PauliString::x_on(LATTICE_QUBITS, qubit).expect("static lattice generator")
}

/// Generators of the two lattice partitionings, `(A, B)`, in listed order.
pub fn lattice_generators(variant: u8) -> Result<(Vec<PauliString>, Vec<PauliString>)> {
    let xs = (1..=4).map(x);
    match variant {
        0 => {
            let a = xs
                .chain([z(&[1, 4]), z(&[2, 3])])
                .chain([z(&[1, 2, 3]), z(&[1, 2, 4]), z(&[1, 3, 4]), z(&[2, 3, 4])])
                .collect();
            let b = (1..=4)
                .map(|k| z(&[k]))
                .chain([z(&[1, 2]), z(&[1, 3]), z(&[2, 4]), z(&[3, 4]), z(&[1, 2, 3, 4])])
                .collect();
            Ok((a, b))
        }
        1 => {
            let a = xs
                .chain([z(&[1]), z(&[1, 4]), z(&[2, 3]), z(&[2, 4]), z(&[1, 2, 4])])
                .collect();
            let b = (2..=4)
                .map(|k| z(&[k]))
                .chain([z(&[1, 2]), z(&[1, 3]), z(&[3, 4])])
                .chain([z(&[1, 2, 3]), z(&[2, 3, 4]), z(&[1, 3, 4]), z(&[1, 2, 3, 4])])
                .collect();
            Ok((a, b))
        }
        other => Err(Error::InvalidVariant(other)),
    }
}

/// The 4-qubit lattice model with uniform block strengths: every `A`
/// generator carries `a`, every `B` generator carries `b`. The constant
/// offset of the underlying model is dropped (global phase only).
pub fn build_lattice_model(a: f64, b: f64, variant: u8) -> Result<Partition> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!(
            "block strengths must be positive, got a={a}, b={b}"
        )));
    }
    let (gens_a, gens_b) = lattice_generators(variant)?;
    let block = |gens: Vec<PauliString>, c: f64| {
        Hamiltonian::new(
            LATTICE_QUBITS,
            gens.into_iter().map(|p| Term::new(c, p)).collect(),
        )
    };
    Partition::new(format!("lattice-{variant}"), block(gens_a, a)?, block(gens_b, b)?)
}

/// Gate costs of the lattice generators: 0.1 per single-qubit rotation and
/// one unit per CNOT on a linear 1-4-2-3 layout.
pub fn default_cost_table() -> CostTable {
    let mut entries = BTreeMap::new();
    for k in 1..=4 {
        entries.insert(x(k), 0.1);
        entries.insert(z(&[k]), 0.1);
    }
    let multi: [(&[usize], f64); 11] = [
        (&[1, 4], 2.0),
        (&[2, 4], 2.0),
        (&[2, 3], 2.0),
        (&[1, 2, 4], 4.0),
        (&[2, 3, 4], 4.0),
        (&[1, 2], 6.0),
        (&[3, 4], 6.0),
        (&[1, 2, 3, 4], 6.0),
        (&[1, 3, 4], 8.0),
        (&[1, 2, 3], 8.0),
        (&[1, 3], 10.0),
    ];
    for (qubits, cost) in multi {
        entries.insert(z(qubits), cost);
    }
    CostTable::new(entries).expect("static costs are positive")
}

/// Weighted commutator sum driving the deterministic part of the composite
/// bias: `Σ_{i<j} a_i a_j ‖[A_i, A_j]‖ + ½ Σ_{i,j} a_i b_j ‖[A_i, B_j]‖`.
pub fn gamma_comm(p: &Partition) -> f64 {
    let a = p.part_a().terms();
    let b = p.part_b().terms();
    let norm = |x: &Term, y: &Term| {
        pauli::commutator_norm(&x.pauli, &y.pauli).expect("partition blocks share n_qubits")
    };
    let mut within = 0.0;
    for (i, ai) in a.iter().enumerate() {
        for aj in &a[i + 1..] {
            within += ai.coeff * aj.coeff * norm(ai, aj);
        }
    }
    let mut across = 0.0;
    for ai in a {
        for bj in b {
            across += ai.coeff * bj.coeff * norm(ai, bj);
        }
    }
    within + 0.5 * across
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionDoc {
    #[serde(default)]
    label: Option<String>,
    n_qubits: usize,
    #[serde(rename = "A", default)]
    a: Vec<TermRecord>,
    #[serde(rename = "B", default)]
    b: Vec<TermRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermRecord {
    coeff: f64,
    pauli: String,
}

/// A parsed Hamiltonian file: the partition plus its optional cost map.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianFile {
    pub partition: Partition,
    pub costs: Option<CostTable>,
}

impl HamiltonianFile {
    pub fn parse(source: &str) -> Result<Self> {
        let doc: PartitionDoc = toml::from_str(source).map_err(|e| toml_error(source, &e))?;
        let block = |records: &[TermRecord], name: &str| -> Result<Hamiltonian> {
            let terms = records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let pauli: PauliString = r
                        .pauli
                        .parse()
                        .map_err(|e| Error::Validation(format!("block {name}, term {i}: {e}")))?;
                    Ok(Term::new(r.coeff, pauli))
                })
                .collect::<Result<Vec<_>>>()?;
            Hamiltonian::new(doc.n_qubits, terms).map_err(|e| Error::Validation(format!("block {name}: {e}")))
        };
        let part_a = block(&doc.a, "A")?;
        let part_b = block(&doc.b, "B")?;
        let label = doc.label.clone().unwrap_or_else(|| "custom".to_string());
        let partition = Partition::new(label, part_a, part_b)?;
        let costs = match &doc.costs {
            None => None,
            Some(map) => {
                let mut entries = BTreeMap::new();
                for (k, &v) in map {
                    let p: PauliString = k.parse()?;
                    if p.n_qubits() != doc.n_qubits {
                        return Err(Error::Validation(format!(
                            "cost entry {k} acts on {} qubits, expected {}",
                            p.n_qubits(),
                            doc.n_qubits
                        )));
                    }
                    entries.insert(p, v);
                }
                Some(CostTable::new(entries)?)
            }
        };
        Ok(Self { partition, costs })
    }

    pub fn to_toml(&self) -> String {
        let records = |h: &Hamiltonian| {
            h.terms()
                .iter()
                .map(|t| TermRecord {
                    coeff: t.coeff,
                    pauli: t.pauli.to_string(),
                })
                .collect()
        };
        let doc = PartitionDoc {
            label: Some(self.partition.label.clone()),
            n_qubits: self.partition.n_qubits(),
            a: records(self.partition.part_a()),
            b: records(self.partition.part_b()),
            costs: self
                .costs
                .as_ref()
                .map(|c| c.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
        };
        toml::to_string(&doc).expect("partition documents always serialize")
    }
}

/// Parses a Hamiltonian file and returns its partition.
pub fn load_hamiltonian(source: &str) -> Result<Partition> {
    HamiltonianFile::parse(source).map(|f| f.partition)
}

pub(crate) fn toml_error(source: &str, err: &toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|span| source[..span.start.min(source.len())].lines().count().max(1))
        .unwrap_or(0);
    let message = err.message().to_string();
    // Semantic failures raised from inside deserialization (bad labels, costs)
    // are validation errors, not syntax errors.
    if message.contains("unknown Pauli label") || message.contains("must be positive") {
        Error::Validation(format!("line {line}: {message}"))
    } else {
        Error::Parse { line, message }
    }
}
