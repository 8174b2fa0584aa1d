//! Channel distances: spectral norm, Choi matrices and a diamond-norm
//! estimator that reports a certified `lower ≤ value ≤ upper` sandwich.
//!
//! The estimator maximizes `‖(Δ ⊗ 1)(|ψ⟩⟨ψ|)‖₁` over pure inputs with a
//! `d`-dimensional ancilla. `Δ` is written as a signed Kraus sum
//! `Σ_k c_k K_k · K_k†`, taken from the channels' mixed-unitary
//! decompositions when both are available and small, otherwise from the
//! eigendecomposition of the Choi matrix of `Δ`. The output trace norm of a
//! pure input depends only on its reduced state `ρ`, so the ascent runs over
//! density operators `ρ` using the purification `vec(ρ^½)`; `ρ = 1/d` is the
//! maximally entangled input.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channels::SuperOperator;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseOperator, ZERO};
use crate::sampling::RngStream;

/// Trace-preservation defect above which a map is refused.
pub const TP_TOL: f64 = 1e-8;
/// Slack of the sandwich assertion.
pub const SANDWICH_SLACK: f64 = 1e-9;

/// Restarts launched together before checking for agreement.
const RESTART_BATCH: usize = 4;

const MAX_CONVEXITY_PAIRS: usize = 4096;

pub fn spectral_norm(m: &DenseOperator) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Choi matrix `J[(i,a),(j,b)] = Φ(|i⟩⟨j|)[a,b]`, input index first.
pub fn choi_matrix(s: &SuperOperator) -> DenseOperator {
    let d = s.dim();
    let m = s.matrix();
    DMatrix::from_fn(d * d, d * d, |row, col| {
        let (i, a) = (row / d, row % d);
        let (j, b) = (col / d, col % d);
        m[(a + b * d, i + j * d)]
    })
}

/// Exact diamond distance between the unitary channels of `u` and `v`:
/// `2 sin(w/2)` where `w` is the width of the smallest arc holding the
/// eigenphases of `U†V`, or 2 once that arc reaches a half circle.
pub fn unitary_pair_distance(u: &DenseOperator, v: &DenseOperator) -> f64 {
    let w = u.adjoint() * v;
    let mut phases: Vec<f64> = linalg::unitary_eigenvalues(&w).iter().map(|z| z.arg()).collect();
    phases.sort_by(f64::total_cmp);
    let n = phases.len();
    let mut largest_gap = phases[0] + 2.0 * PI - phases[n - 1];
    for k in 1..n {
        largest_gap = largest_gap.max(phases[k] - phases[k - 1]);
    }
    let width = 2.0 * PI - largest_gap;
    if width >= PI {
        2.0
    } else {
        2.0 * (width / 2.0).sin()
    }
}

/// `2‖U − Σ_k p_k V_k‖`.
pub fn lemma_upper_bound(u: &DenseOperator, ensemble: &[(f64, DenseOperator)]) -> f64 {
    let mut diff = u.clone();
    for (p, v) in ensemble {
        diff -= v * Complex64::new(*p, 0.0);
    }
    2.0 * spectral_norm(&diff)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiamondMethod {
    PureStateAscent,
    ChoiLowerOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiamondEstimate {
    pub value: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub method: DiamondMethod,
    pub restarts_used: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiamondOptions {
    /// Most ascent runs; the first starts from the maximally entangled state.
    /// Runs stop early, in batches of four, once the two best agree. Zero
    /// skips the ascent and reports the Choi lower bound.
    pub restarts: usize,
    /// Agreement required between the two best runs.
    pub tol: f64,
    /// Seed of the random starting points.
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for DiamondOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            tol: 1e-7,
            seed: 0,
            max_iter: 2000,
        }
    }
}

/// Signed Kraus representation of a Hermiticity-preserving map.
struct SignedKraus {
    d: usize,
    ops: Vec<DenseOperator>,
    signs: Vec<f64>,
    /// `vec(K_k)` as columns.
    stacked: DMatrix<Complex64>,
}

fn kraus_from_ensembles(
    e1: &[(f64, DenseOperator)],
    e2: &[(f64, DenseOperator)],
) -> Vec<(f64, DenseOperator)> {
    let mut merged: Vec<(f64, DenseOperator)> = Vec::with_capacity(e1.len() + e2.len());
    for (w, u) in e1
        .iter()
        .map(|(w, u)| (*w, u))
        .chain(e2.iter().map(|(w, u)| (-*w, u)))
    {
        match merged.iter_mut().find(|(_, v)| linalg::bitwise_eq(u, v)) {
            Some(slot) => slot.0 += w,
            None => merged.push((w, u.clone())),
        }
    }
    merged.retain(|(w, _)| *w != 0.0);
    merged
}

impl SignedKraus {
    fn assemble(d: usize, ops: Vec<DenseOperator>, signs: Vec<f64>) -> Self {
        let mut stacked = DMatrix::from_element(d * d, ops.len(), ZERO);
        for (col, op) in ops.iter().enumerate() {
            stacked.column_mut(col).copy_from_slice(op.as_slice());
        }
        Self {
            d,
            ops,
            signs,
            stacked,
        }
    }

    fn from_weighted(d: usize, members: Vec<(f64, DenseOperator)>) -> Self {
        let mut ops = Vec::with_capacity(members.len());
        let mut signs = Vec::with_capacity(members.len());
        for (w, u) in members {
            ops.push(u * Complex64::new(w.abs().sqrt(), 0.0));
            signs.push(w.signum());
        }
        Self::assemble(d, ops, signs)
    }

    fn from_choi(d: usize, j: &DenseOperator) -> Self {
        let (values, vectors) = linalg::hermitian_eigen(j);
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let mut ops = Vec::new();
        let mut signs = Vec::new();
        for (k, &mu) in values.iter().enumerate() {
            if mu.abs() <= 1e-14 * scale {
                continue;
            }
            let s = mu.abs().sqrt();
            let col = vectors.column(k);
            ops.push(DMatrix::from_fn(d, d, |a, i| col[i * d + a] * s));
            signs.push(mu.signum());
        }
        Self::assemble(d, ops, signs)
    }

    /// Trace norm of the output for the purification of `ρ` and, optionally,
    /// its gradient with respect to `ρ`.
    ///
    /// With `X = ρ^½` and `V = [vec(K_k X)]` the output is `V C V†`. For one
    /// of its eigenpairs `(μ_i, u_i)` put `a_i = C V† u_i` and
    /// `B_i = Σ_l a_il K_l`; then `∂μ_i/∂ρ = B_i† B_i / μ_i`, so the gradient
    /// is `Σ_i B_i† B_i / |μ_i|`. With fewer Kraus operators than `d²` the
    /// spectrum is taken from the smaller `R C R†`, `V = QR`, where `u_i = Q p_i`
    /// gives `a_i = C R† p_i`.
    fn evaluate(&self, rho: &DenseOperator, with_grad: bool) -> (f64, Option<DenseOperator>) {
        let d = self.d;
        let (vals, vecs) = linalg::hermitian_eigen(rho);
        let mut x = vecs.clone();
        for (col, &v) in vals.iter().enumerate() {
            let s = Complex64::new(v.max(0.0).sqrt(), 0.0);
            x.column_mut(col).iter_mut().for_each(|z| *z *= s);
        }
        let x = &x * vecs.adjoint();
        let mut v = DMatrix::from_element(d * d, self.ops.len(), ZERO);
        for (col, op) in self.ops.iter().enumerate() {
            v.column_mut(col).copy_from_slice((op * &x).as_slice());
        }
        let signed = |m: &DMatrix<Complex64>| {
            let mut out = m.clone();
            for (col, &c) in self.signs.iter().enumerate() {
                out.column_mut(col).iter_mut().for_each(|z| *z *= c);
            }
            out
        };
        // `factor` is `V` or `R`; `a_i` is `(factor C)† e_i` in both cases.
        let factor = if self.ops.len() < d * d { v.qr().r() } else { v };
        let fc = signed(&factor);
        let (mu, e) = linalg::hermitian_eigen(&linalg::matmul(&fc, false, &factor, true));
        let value: f64 = mu.iter().map(|m| m.abs()).sum();
        if !with_grad {
            return (value, None);
        }
        let cutoff = 1e-14 * mu.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let b = linalg::matmul(&self.stacked, false, &linalg::matmul(&fc, true, &e, false), false);
        let mut grad = DMatrix::from_element(d, d, ZERO);
        for (i, &m) in mu.iter().enumerate() {
            if m.abs() <= cutoff {
                continue;
            }
            let bi = DMatrix::from_column_slice(d, d, b.column(i).as_slice());
            grad += bi.adjoint() * bi * Complex64::new(1.0 / m.abs(), 0.0);
        }
        (value, Some((&grad + grad.adjoint()) * Complex64::new(0.5, 0.0)))
    }
}

/// Euclidean projection of a Hermitian matrix onto the density operators.
fn project_to_states(m: &DenseOperator) -> DenseOperator {
    let (vals, vecs) = linalg::hermitian_eigen(m);
    let mut sorted = vals.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        acc += u;
        let candidate = (acc - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut scaled = vecs.clone();
    for (col, &v) in vals.iter().enumerate() {
        let w = Complex64::new((v - theta).max(0.0), 0.0);
        scaled.column_mut(col).iter_mut().for_each(|z| *z *= w);
    }
    let rho = scaled * vecs.adjoint();
    (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0)
}

fn real_inner(a: &DenseOperator, b: &DenseOperator) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn gaussian_matrix(d: usize, rng: &mut RngStream) -> DenseOperator {
    let mut normal = || {
        let u1 = 1.0 - rng.uniform();
        let u2 = rng.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    };
    DMatrix::from_fn(d, d, |_, _| Complex64::new(normal(), normal()))
}

/// Reduced state of a Haar-like random pure input.
fn random_state(d: usize, rng: &mut RngStream) -> DenseOperator {
    let x = gaussian_matrix(d, rng);
    let rho = &x * x.adjoint();
    let tr = rho.trace();
    rho / tr
}

/// Spectral projected gradient ascent over the reduced state `ρ` of the pure
/// input (the objective depends on the input only through `ρ`): the search
/// direction is `P(ρ + η∇) − ρ` with `P` the projection onto density
/// operators and `η` the Barzilai–Borwein step, followed by a nonmonotone
/// backtracking line search. Stops at a stationary point or once the best
/// value gains less than `tol / 100` over `WINDOW` iterations.
fn ascend(kraus: &SignedKraus, start: DenseOperator, rng: &mut RngStream, opts: &DiamondOptions) -> f64 {
    const MEMORY: usize = 10;
    const WINDOW: usize = 25;
    const SUFFICIENT: f64 = 1e-4;
    let mut rho = start;
    let (mut f, g) = kraus.evaluate(&rho, true);
    let mut g = g.expect("gradient requested");
    let mut eta = 1.0_f64;
    let mut recent = vec![f];
    let mut best = vec![f];
    let mut perturbed = false;
    for _ in 0..opts.max_iter {
        let dir = project_to_states(&(&rho + &g * Complex64::new(eta, 0.0))) - &rho;
        let slope = real_inner(&g, &dir);
        if slope <= 1e-15 * f.max(1e-300) {
            break;
        }
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0_f64;
        let mut accepted = None;
        while alpha > 1e-10 {
            let cand = &rho + &dir * Complex64::new(alpha, 0.0);
            let (fc, gc) = kraus.evaluate(&cand, true);
            if fc >= reference + SUFFICIENT * alpha * slope {
                accepted = Some((cand, fc, gc.expect("gradient requested")));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            // Stalled, possibly on an eigenvalue crossing: nudge once.
            if perturbed {
                break;
            }
            perturbed = true;
            let noise = random_state(kraus.d, rng);
            rho = &rho * Complex64::new(1.0 - 1e-9, 0.0) + noise * Complex64::new(1e-9, 0.0);
            let (fy, gy) = kraus.evaluate(&rho, true);
            f = fy;
            g = gy.expect("gradient requested");
            recent.push(f);
            continue;
        };
        let s = &next - &rho;
        let y = &g_next - &g;
        let sy = real_inner(&s, &y);
        eta = if sy < 0.0 {
            (real_inner(&s, &s) / -sy).clamp(1e-10, 1e10)
        } else {
            1e10
        };
        rho = next;
        f = f_next;
        g = g_next;
        recent.push(f);
        if recent.len() > MEMORY {
            recent.remove(0);
        }
        best.push(best.last().copied().unwrap_or(f).max(f));
        if best.len() > WINDOW && best[best.len() - 1] - best[best.len() - 1 - WINDOW] < opts.tol * 1e-2 {
            break;
        }
    }
    best.last().copied().unwrap_or(f).max(f)
}

fn convexity_bound(e1: &[(f64, DenseOperator)], e2: &[(f64, DenseOperator)]) -> Option<f64> {
    if e1.len() * e2.len() > MAX_CONVEXITY_PAIRS {
        return None;
    }
    let mut total = 0.0;
    for (p, u) in e1 {
        for (q, v) in e2 {
            total += p * q * unitary_pair_distance(u, v);
        }
    }
    Some(total)
}

/// Diamond distance `‖s1 − s2‖_⋄` by pure-state ascent.
///
/// `lower_bound` is the output trace norm at the maximally entangled input,
/// `‖J_Δ‖₁/d`. `upper_bound` is the smallest of 2, `‖J_Δ‖₁` and, when both
/// channels are small unitary mixtures, the convexity bound
/// `Σ_kl p_k p'_l ‖U_k − V_l‖_⋄` with the exact unitary-pair distance.
pub fn diamond_distance(
    s1: &SuperOperator,
    s2: &SuperOperator,
    opts: &DiamondOptions,
) -> Result<DiamondEstimate> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch {
            left: s1.dim(),
            right: s2.dim(),
        });
    }
    for s in [s1, s2] {
        let deviation = s.trace_preservation_defect();
        if deviation > TP_TOL {
            return Err(Error::NotTracePreserving { deviation });
        }
    }
    let d = s1.dim();
    let mut upper = 2.0_f64;
    let kraus = match (s1.ensemble(), s2.ensemble()) {
        (Some(e1), Some(e2)) if e1.len() + e2.len() <= d * d => {
            if let Some(b) = convexity_bound(e1, e2) {
                upper = upper.min(b);
            }
            SignedKraus::from_weighted(d, kraus_from_ensembles(e1, e2))
        }
        _ => {
            let j = choi_matrix(s1) - choi_matrix(s2);
            SignedKraus::from_choi(d, &j)
        }
    };
    if kraus.ops.is_empty() {
        let method = if opts.restarts == 0 {
            DiamondMethod::ChoiLowerOnly
        } else {
            DiamondMethod::PureStateAscent
        };
        return Ok(finish(0.0, 0.0, 0.0, method, opts.restarts, true));
    }
    let maximally_mixed = linalg::identity(d) / Complex64::new(d as f64, 0.0);
    let lower = kraus.evaluate(&maximally_mixed, false).0;
    upper = upper.min(lower * d as f64);

    if opts.restarts == 0 {
        return Ok(finish(
            lower,
            lower,
            upper,
            DiamondMethod::ChoiLowerOnly,
            0,
            false,
        ));
    }
    // Restarts run in fixed-size batches until the two best climbs agree, so
    // the number used depends on the values only, never on the thread count.
    let mut runs: Vec<f64> = Vec::with_capacity(opts.restarts);
    let mut converged = false;
    while runs.len() < opts.restarts && !converged {
        let batch = runs.len()..(runs.len() + RESTART_BATCH).min(opts.restarts);
        let fresh: Vec<f64> = batch
            .into_par_iter()
            .map(|k| {
                let mut rng = RngStream::new(opts.seed, k as u64);
                let start = if k == 0 {
                    maximally_mixed.clone()
                } else {
                    random_state(d, &mut rng)
                };
                ascend(&kraus, start, &mut rng, opts)
            })
            .collect();
        runs.extend(fresh);
        runs.sort_by(|a, b| b.total_cmp(a));
        // Either the certificate is closed or two independent climbs agree.
        converged = upper - runs[0].max(lower) <= opts.tol
            || (runs.len() >= 2 && (runs[0] - runs[1]).abs() <= opts.tol);
    }
    // The ascent only climbs, so the entangled start never ends below `lower`.
    let value = runs[0].max(lower).min(upper);
    let restarts_used = runs.len();
    Ok(finish(
        value,
        lower,
        upper,
        DiamondMethod::PureStateAscent,
        restarts_used,
        converged,
    ))
}

fn finish(
    value: f64,
    lower: f64,
    upper: f64,
    method: DiamondMethod,
    restarts_used: usize,
    converged: bool,
) -> DiamondEstimate {
    assert!(
        lower <= value + SANDWICH_SLACK && value <= upper + SANDWICH_SLACK,
        "diamond sandwich violated: {lower} ≤ {value} ≤ {upper}"
    );
    DiamondEstimate {
        value,
        lower_bound: lower,
        upper_bound: upper,
        method,
        restarts_used,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{dense_matrix, pauli_exp};

    fn op(label: &str) -> DenseOperator {
        dense_matrix(&label.parse().unwrap())
    }

    /// Largest singular value by power iteration on `M† M`.
    fn power_iteration_norm(m: &DenseOperator) -> f64 {
        let mtm = m.adjoint() * m;
        let mut v = DMatrix::from_fn(m.ncols(), 1, |i, _| Complex64::new(1.0 + i as f64 * 0.1, 0.3));
        let mut est = 0.0;
        for _ in 0..5000 {
            let w = &mtm * &v;
            let n = w.norm();
            v = w / Complex64::new(n, 0.0);
            est = n;
        }
        est.sqrt()
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&linalg::identity(4)) - 1.0).abs() < 1e-14);
        assert!((spectral_norm(&(op("Z") * Complex64::new(2.0, 0.0))) - 2.0).abs() < 1e-14);
        let mut rng = RngStream::new(8, 8);
        let m = gaussian_matrix(8, &mut rng);
        assert!((spectral_norm(&m) - power_iteration_norm(&m)).abs() < 1e-8);
    }

    #[test]
    fn choi_examples() {
        let id = SuperOperator::identity(2);
        let j = choi_matrix(&id);
        let mut omega = DMatrix::from_element(4, 4, ZERO);
        for &r in &[0usize, 3] {
            for &c in &[0usize, 3] {
                omega[(r, c)] = Complex64::new(1.0, 0.0);
            }
        }
        assert!(linalg::max_abs_diff(&j, &omega) < 1e-15);

        let u = SuperOperator::unitary(&pauli_exp(&"XY".parse().unwrap(), 0.4));
        let (vals, _) = linalg::hermitian_eigen(&choi_matrix(&u));
        assert_eq!(vals.iter().filter(|v| v.abs() > 1e-10).count(), 1);
        assert!((vals.iter().sum::<f64>() - 4.0).abs() < 1e-12);

        let mix = SuperOperator::mixture(vec![
            (0.2, pauli_exp(&"XZ".parse().unwrap(), 0.3)),
            (0.5, pauli_exp(&"YY".parse().unwrap(), 0.1)),
            (0.3, pauli_exp(&"IZ".parse().unwrap(), 0.7)),
        ]);
        let (vals, _) = linalg::hermitian_eigen(&choi_matrix(&mix));
        assert!(vals.iter().filter(|v| v.abs() > 1e-10).count() <= 3);
    }

    #[test]
    fn identical_and_phase_shifted_channels_are_at_distance_zero() {
        let u = pauli_exp(&"XZ".parse().unwrap(), 0.8);
        let s = SuperOperator::unitary(&u);
        let e = diamond_distance(&s, &s, &DiamondOptions::default()).unwrap();
        assert!(e.value.abs() < 1e-10);
        let shifted = SuperOperator::unitary(&(&u * Complex64::from_polar(1.0, 0.7)));
        let e = diamond_distance(&s, &shifted, &DiamondOptions::default()).unwrap();
        assert!(e.value.abs() < 1e-10);
    }

    #[test]
    fn quarter_turn_rotation() {
        let id = SuperOperator::identity(2);
        let rot = SuperOperator::unitary(&pauli_exp(&"Z".parse().unwrap(), PI / 4.0));
        let opts = DiamondOptions::default();
        let e = diamond_distance(&id, &rot, &opts).unwrap();
        assert!((e.value - 2f64.sqrt()).abs() < 1e-6, "{e:?}");
        assert!(e.converged);
        let e2 = diamond_distance(&id.without_ensemble(), &rot.without_ensemble(), &opts).unwrap();
        assert!((e2.value - 2f64.sqrt()).abs() < 1e-6, "{e2:?}");
        let e3 = diamond_distance(&rot, &id, &opts).unwrap();
        assert!((e3.value - e.value).abs() < 1e-7);
    }

    #[test]
    fn choi_lower_only_mode() {
        let id = SuperOperator::identity(2);
        let rot = SuperOperator::unitary(&pauli_exp(&"X".parse().unwrap(), 0.3));
        let opts = DiamondOptions {
            restarts: 0,
            ..DiamondOptions::default()
        };
        let e = diamond_distance(&id, &rot, &opts).unwrap();
        assert_eq!(e.method, DiamondMethod::ChoiLowerOnly);
        assert_eq!(e.value, e.lower_bound);
    }

    #[test]
    fn non_trace_preserving_input_is_rejected() {
        let id = SuperOperator::identity(2);
        let half = SuperOperator::from_matrix(id.matrix() * Complex64::new(0.5, 0.0)).unwrap();
        assert!(matches!(
            diamond_distance(&id, &half, &DiamondOptions::default()),
            Err(Error::NotTracePreserving { .. })
        ));
    }

    #[test]
    fn lemma_bound_examples() {
        let u = pauli_exp(&"YX".parse().unwrap(), 0.2);
        assert!(lemma_upper_bound(&u, &[(1.0, u.clone())]).abs() < 1e-15);
        let v = pauli_exp(&"Z".parse().unwrap(), 0.1);
        let b = lemma_upper_bound(&linalg::identity(2), &[(1.0, v)]);
        assert!((b - 4.0 * 0.05f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn unitary_pair_distance_examples() {
        let id = linalg::identity(2);
        let z = op("Z");
        assert!((unitary_pair_distance(&id, &z) - 2.0).abs() < 1e-12);
        let r = pauli_exp(&"Z".parse().unwrap(), 0.25);
        assert!((unitary_pair_distance(&id, &r) - 2.0 * 0.25f64.sin()).abs() < 1e-12);
    }
}
