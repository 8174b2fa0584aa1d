//! Channels as explicit superoperators: exact evolution, Trotter products,
//! sampled qDrift circuits, their finite and exact averages, and the composite
//! Trotter + qDrift construction.
//!
//! Density operators are vectorized by stacking columns, so conjugation by `U`
//! acts as `conj(U) ⊗ U` on `vec ρ`. Besides the matrix, a channel keeps its
//! mixed-unitary decomposition whenever that decomposition is small; the
//! diamond-norm estimator uses it to avoid a Choi eigendecomposition.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{CostTable, Hamiltonian, Partition};
use crate::linalg::{self, DenseOperator, ONE, ZERO};
use crate::pauli::{general_exp, pauli_exp};
use crate::sampling::{sample_term, time_step, RngStream, SamplingDistribution};

/// Largest mixed-unitary decomposition carried alongside a superoperator.
pub const ENSEMBLE_CAP: usize = 2048;

/// Weighted unitaries `Σ_k w_k U_k · U_k†`.
pub type Ensemble = Vec<(f64, DenseOperator)>;

#[derive(Clone, Debug)]
pub struct SuperOperator {
    dim: usize,
    matrix: DMatrix<Complex64>,
    ensemble: Option<Ensemble>,
}

fn conjugation_matrix(u: &DenseOperator) -> DMatrix<Complex64> {
    u.map(|z| z.conj()).kronecker(u)
}

impl SuperOperator {
    pub fn identity(dim: usize) -> Self {
        Self::unitary(&linalg::identity(dim))
    }

    /// `ρ ↦ U ρ U†`.
    pub fn unitary(u: &DenseOperator) -> Self {
        Self {
            dim: u.nrows(),
            matrix: conjugation_matrix(u),
            ensemble: Some(vec![(1.0, u.clone())]),
        }
    }

    /// `ρ ↦ Σ_k w_k U_k ρ U_k†`, summed in the given order.
    pub fn mixture(members: Ensemble) -> Self {
        assert!(!members.is_empty(), "empty ensemble");
        let dim = members[0].1.nrows();
        let mut matrix = DMatrix::from_element(dim * dim, dim * dim, ZERO);
        for (w, u) in &members {
            matrix += conjugation_matrix(u) * Complex64::new(*w, 0.0);
        }
        let ensemble = (members.len() <= ENSEMBLE_CAP).then_some(members);
        Self {
            dim,
            matrix,
            ensemble,
        }
    }

    /// Wraps a raw `d² × d²` matrix with no known decomposition.
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = (matrix.nrows() as f64).sqrt().round() as usize;
        if !matrix.is_square() || dim * dim != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                left: matrix.nrows(),
                right: matrix.ncols(),
            });
        }
        Ok(Self {
            dim,
            matrix,
            ensemble: None,
        })
    }

    /// Hilbert-space dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn ensemble(&self) -> Option<&Ensemble> {
        self.ensemble.as_ref()
    }

    pub fn apply(&self, rho: &DenseOperator) -> DenseOperator {
        let d = self.dim;
        let v = DMatrix::from_column_slice(d * d, 1, rho.as_slice());
        let out = &self.matrix * v;
        DMatrix::from_column_slice(d, d, out.as_slice())
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &SuperOperator) -> SuperOperator {
        assert_eq!(self.dim, first.dim, "composing channels of different dimension");
        let ensemble = match (&self.ensemble, &first.ensemble) {
            (Some(outer), Some(inner)) if outer.len() * inner.len() <= ENSEMBLE_CAP => Some(
                outer
                    .iter()
                    .flat_map(|(wo, uo)| inner.iter().map(move |(wi, ui)| (wo * wi, uo * ui)))
                    .collect(),
            ),
            _ => None,
        };
        SuperOperator {
            dim: self.dim,
            matrix: &self.matrix * &first.matrix,
            ensemble,
        }
    }

    /// `k`-fold composition by repeated squaring.
    pub fn power(&self, k: usize) -> SuperOperator {
        let mut result = SuperOperator::identity(self.dim);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = base.after(&result);
            }
            k >>= 1;
            if k > 0 {
                base = base.after(&base);
            }
        }
        result
    }

    /// `max_ij |Σ_a S[(a,a),(i,j)] − δ_ij|`, zero for trace-preserving maps.
    pub fn trace_preservation_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let mut s = ZERO;
                for a in 0..d {
                    s += self.matrix[(a + a * d, i + j * d)];
                }
                if i == j {
                    s -= ONE;
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    /// Same map with the decomposition dropped (forces the Choi route).
    pub fn without_ensemble(&self) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: self.matrix.clone(),
            ensemble: None,
        }
    }
}

/// `exp(-iHt)` for the full Hamiltonian.
pub fn exact_unitary(h: &Hamiltonian, t: f64) -> Result<DenseOperator> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("time {t} is not finite")));
    }
    general_exp(&h.dense(), t)
}

pub fn exact_channel(h: &Hamiltonian, t: f64) -> Result<SuperOperator> {
    Ok(SuperOperator::unitary(&exact_unitary(h, t)?))
}

/// One first-order product `e^{-iτ h_L H_L} ⋯ e^{-iτ h_1 H_1}`: the first
/// stored term acts first.
fn trotter_step(h: &Hamiltonian, tau: f64) -> DenseOperator {
    let mut u = linalg::identity(h.dim());
    for term in h.terms() {
        u = pauli_exp(&term.pauli, tau * term.coeff) * u;
    }
    u
}

pub fn trotter_unitary(h: &Hamiltonian, t: f64, r: usize) -> Result<DenseOperator> {
    if r == 0 {
        return Err(Error::invalid("r must be at least 1"));
    }
    let step = trotter_step(h, t / r as f64);
    let mut u = linalg::identity(h.dim());
    for _ in 0..r {
        u = &step * u;
    }
    Ok(u)
}

pub fn trotter_channel(h: &Hamiltonian, t: f64, r: usize) -> Result<SuperOperator> {
    Ok(SuperOperator::unitary(&trotter_unitary(h, t, r)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Block {
    A,
    B,
}

/// One gate of a sampled circuit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircuitStep {
    pub step: usize,
    pub block: Block,
    /// 0-based index into the block's terms.
    pub term: usize,
    pub pauli: String,
    pub tau: f64,
    pub cost: Option<f64>,
}

/// A sampled circuit. `unitary` is the ordered product with the first step
/// applied first (rightmost factor).
#[derive(Clone, Debug)]
pub struct SampledCircuit {
    pub steps: Vec<CircuitStep>,
    pub total_cost: Option<f64>,
    pub unitary: DenseOperator,
}

impl SampledCircuit {
    /// Indices of the drawn B terms, in draw order.
    pub fn drawn_terms(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.block == Block::B)
            .map(|s| s.term)
            .collect()
    }

    /// CSV rendering of the step list for auditing.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.steps {
            w.serialize(s)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn check_support(h: &Hamiltonian, q: &SamplingDistribution) -> Result<()> {
    if q.len() != h.len() {
        return Err(Error::DimensionMismatch {
            left: q.len(),
            right: h.len(),
        });
    }
    match q.probs().iter().position(|&p| p <= 0.0) {
        Some(index) => Err(Error::UnboundedWeight { index }),
        None => Ok(()),
    }
}

struct CircuitBuilder<'a> {
    costs: Option<&'a CostTable>,
    steps: Vec<CircuitStep>,
    total: f64,
    unitary: DenseOperator,
}

impl<'a> CircuitBuilder<'a> {
    fn new(dim: usize, costs: Option<&'a CostTable>) -> Self {
        Self {
            costs,
            steps: Vec::new(),
            total: 0.0,
            unitary: linalg::identity(dim),
        }
    }

    fn push(&mut self, h: &Hamiltonian, block: Block, term: usize, tau: f64) -> Result<()> {
        let pauli = &h.terms()[term].pauli;
        let cost = match self.costs {
            Some(c) => {
                let v = c.lookup(pauli)?;
                self.total += v;
                Some(v)
            }
            None => None,
        };
        self.unitary = pauli_exp(pauli, tau) * &self.unitary;
        self.steps.push(CircuitStep {
            step: self.steps.len(),
            block,
            term,
            pauli: pauli.to_string(),
            tau,
            cost,
        });
        Ok(())
    }

    fn draw(
        &mut self,
        h: &Hamiltonian,
        q: &SamplingDistribution,
        t: f64,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<()> {
        for _ in 0..n {
            let j = sample_term(q, rng);
            let tau = time_step(h, q, j, t, n)?;
            self.push(h, Block::B, j, tau)?;
        }
        Ok(())
    }

    fn finish(self) -> SampledCircuit {
        SampledCircuit {
            total_cost: self.costs.map(|_| self.total),
            steps: self.steps,
            unitary: self.unitary,
        }
    }
}

/// Draws `n` terms i.i.d. from `q` and multiplies their exponentials, each
/// new factor on the left. Steps are tagged as block B.
pub fn sample_qdrift_circuit(
    h: &Hamiltonian,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
    rng: &mut RngStream,
    costs: Option<&CostTable>,
) -> Result<SampledCircuit> {
    check_support(h, q)?;
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let mut b = CircuitBuilder::new(h.dim(), costs);
    b.draw(h, q, t, n, rng)?;
    Ok(b.finish())
}

/// Where experiment `m` draws its randomness: stream `offset + m` of
/// `master_seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamBase {
    pub master_seed: u64,
    pub offset: u64,
}

impl StreamBase {
    pub fn new(master_seed: u64, offset: u64) -> Self {
        Self { master_seed, offset }
    }

    pub fn stream(&self, m: usize) -> RngStream {
        RngStream::new(self.master_seed, self.offset + m as u64)
    }
}

/// `M` independent qDrift circuits, built in parallel and returned in
/// experiment order.
pub fn qdrift_experiments(
    h: &Hamiltonian,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
    m: usize,
    base: StreamBase,
    costs: Option<&CostTable>,
) -> Result<Vec<SampledCircuit>> {
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    check_support(h, q)?;
    (0..m)
        .into_par_iter()
        .map(|k| sample_qdrift_circuit(h, q, t, n, &mut base.stream(k), costs))
        .collect()
}

/// Uniform mixture of the circuits' conjugations. Circuits that drew the same
/// term sequence have bitwise-identical unitaries and are merged; the sum
/// runs in order of first appearance, independent of how the circuits were
/// produced.
pub fn mixture_of_circuits(circuits: &[SampledCircuit]) -> SuperOperator {
    assert!(!circuits.is_empty(), "no circuits to average");
    let mut slots: HashMap<Vec<(Block, usize)>, usize> = HashMap::new();
    let mut members: Vec<(usize, &DenseOperator)> = Vec::new();
    for c in circuits {
        let key: Vec<_> = c.steps.iter().map(|s| (s.block, s.term)).collect();
        match slots.get(&key) {
            Some(&i) => members[i].0 += 1,
            None => {
                slots.insert(key, members.len());
                members.push((1, &c.unitary));
            }
        }
    }
    let m = circuits.len() as f64;
    SuperOperator::mixture(
        members
            .into_iter()
            .map(|(count, u)| (count as f64 / m, u.clone()))
            .collect(),
    )
}

/// `(1/M) Σ_m Conj(V_m)` over `M` sampled experiments.
pub fn finite_qdrift_channel(
    h: &Hamiltonian,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
    m: usize,
    base: StreamBase,
) -> Result<SuperOperator> {
    Ok(mixture_of_circuits(&qdrift_experiments(
        h, q, t, n, m, base, None,
    )?))
}

/// One averaged qDrift step `Σ_j q_j Conj(e^{-iτ_j H_j})`.
pub fn single_sample_channel(
    h: &Hamiltonian,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
) -> Result<SuperOperator> {
    check_support(h, q)?;
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let members = (0..h.len())
        .map(|j| {
            let tau = time_step(h, q, j, t, n)?;
            Ok((q.probs()[j], pauli_exp(&h.terms()[j].pauli, tau)))
        })
        .collect::<Result<Ensemble>>()?;
    Ok(SuperOperator::mixture(members))
}

/// Exact expectation of the `N`-sample qDrift channel: the single-sample
/// channel composed `N` times.
pub fn average_qdrift_channel(
    h: &Hamiltonian,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
) -> Result<SuperOperator> {
    Ok(single_sample_channel(h, q, t, n)?.power(n))
}

fn check_composite(p: &Partition, q: &SamplingDistribution, n: usize, r: usize) -> Result<()> {
    if n == 0 || r == 0 {
        return Err(Error::invalid("N and r must be at least 1"));
    }
    check_support(p.part_b(), q)
}

/// `[Conj(U_A(t/r)) ∘ Ē_B(t/r; N)]^r` with `U_A` one first-order Trotter step.
pub fn composite_channel_average(
    p: &Partition,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
    r: usize,
) -> Result<SuperOperator> {
    check_composite(p, q, n, r)?;
    let dt = t / r as f64;
    let a_step = SuperOperator::unitary(&trotter_step(p.part_a(), dt));
    let segment = a_step.after(&average_qdrift_channel(p.part_b(), q, dt, n)?);
    Ok(segment.power(r))
}

/// `M` composite circuits. Each segment draws `N` fresh B terms and is then
/// followed by the A Trotter step; experiment `m` owns stream `offset + m`.
#[allow(clippy::too_many_arguments)]
pub fn composite_experiments(
    p: &Partition,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
    m: usize,
    r: usize,
    base: StreamBase,
    costs: Option<&CostTable>,
) -> Result<Vec<SampledCircuit>> {
    check_composite(p, q, n, r)?;
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    let dt = t / r as f64;
    let (a, b) = (p.part_a(), p.part_b());
    (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.stream(k);
            let mut c = CircuitBuilder::new(p.part_a().dim(), costs);
            for _ in 0..r {
                c.draw(b, q, dt, n, &mut rng)?;
                for (l, term) in a.terms().iter().enumerate() {
                    c.push(a, Block::A, l, dt * term.coeff)?;
                }
            }
            Ok(c.finish())
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn composite_channel_finite(
    p: &Partition,
    q: &SamplingDistribution,
    t: f64,
    n: usize,
    m: usize,
    r: usize,
    base: StreamBase,
) -> Result<SuperOperator> {
    Ok(mixture_of_circuits(&composite_experiments(
        p, q, t, n, m, r, base, None,
    )?))
}
