use std::path::Path;

use proptest::prelude::*;
use qdrift_core::bounds::{
    composite_concentration_budget, concentration_budget, qdrift_sample_count, verify_cost_reduction,
};
use qdrift_core::channels::{
    average_qdrift_channel, composite_channel_average, composite_channel_finite, exact_channel,
    finite_qdrift_channel, single_sample_channel, trotter_channel, StreamBase, SuperOperator,
};
use qdrift_core::hamiltonian::{build_lattice_model, default_cost_table, HamiltonianFile};
use qdrift_core::linalg::{self, max_abs_diff};
use qdrift_core::metrics::{diamond_distance, DiamondOptions};
use qdrift_core::pauli::{dense_matrix, pauli_exp};
use qdrift_core::sampling::{cost_distribution, standard_distribution, weight_profile};
use qdrift_core::{CostTable, Hamiltonian, Partition, Pauli, PauliString, Term};

fn pauli_string(n: usize) -> impl Strategy<Value = PauliString> {
    prop::collection::vec(0u8..4, n).prop_filter_map("identity string", |ks| {
        let factors: Vec<Pauli> = ks
            .iter()
            .map(|k| [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][*k as usize])
            .collect();
        let p = PauliString::new(factors).ok()?;
        (!p.is_identity()).then_some(p)
    })
}

/// A Hamiltonian on `n` qubits with 1..=max_terms distinct non-identity terms.
fn hamiltonian(n: usize, max_terms: usize) -> impl Strategy<Value = Hamiltonian> {
    prop::collection::vec((0.05f64..1.0, pauli_string(n)), 1..=max_terms).prop_map(move |raw| {
        let mut terms: Vec<Term> = Vec::new();
        for (c, p) in raw {
            if !terms.iter().any(|t| t.pauli == p) {
                terms.push(Term::new(c, p));
            }
        }
        Hamiltonian::new(n, terms).unwrap()
    })
}

fn costs_for(h: &Hamiltonian, raw: &[f64]) -> CostTable {
    CostTable::from_pairs(
        h.terms()
            .iter()
            .zip(raw.iter().cycle())
            .map(|(t, c)| (t.pauli.clone(), *c)),
    )
    .unwrap()
}

fn choi_min_eigenvalue(s: &SuperOperator) -> f64 {
    let j = qdrift_core::metrics::choi_matrix(s);
    let (vals, _) = linalg::hermitian_eigen(&j);
    vals.into_iter().fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pauli_strings_are_hermitian_unitary_involutions(p in pauli_string(3)) {
        let m = dense_matrix(&p);
        prop_assert!(linalg::hermiticity_defect(&m) == 0.0);
        prop_assert!(max_abs_diff(&(&m * &m), &linalg::identity(8)) == 0.0);
    }

    #[test]
    fn pauli_exponentials_are_unitary(p in pauli_string(2), theta in -3.0f64..3.0) {
        prop_assert!(linalg::is_unitary(&pauli_exp(&p, theta), 1e-13));
    }

    #[test]
    fn reweighting_moments(h in hamiltonian(2, 5), raw in prop::collection::vec(0.1f64..10.0, 5)) {
        let costs = costs_for(&h, &raw);
        let q = cost_distribution(&h, &costs).unwrap();
        let w = weight_profile(&h, &q).unwrap();
        prop_assert!((w.mean_q_omega - 1.0).abs() < 1e-12);
        prop_assert!(w.mean_p_omega >= 1.0 - 1e-12);
        prop_assert!(w.max_omega >= w.mean_p_omega - 1e-12);
        let sum: f64 = q.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn importance_sampling_never_needs_fewer_samples(
        h in hamiltonian(2, 5),
        raw in prop::collection::vec(0.1f64..10.0, 5),
        t in 0.01f64..0.5,
    ) {
        let lambda = h.lambda();
        let eps = 0.01;
        let p = weight_profile(&h, &standard_distribution(&h).unwrap()).unwrap();
        let q = weight_profile(&h, &cost_distribution(&h, &costs_for(&h, &raw)).unwrap()).unwrap();
        let np = qdrift_sample_count(lambda, t, eps, &p).unwrap();
        let nq = qdrift_sample_count(lambda, t, eps, &q).unwrap();
        prop_assert!(nq.value >= np.value * (1.0 - 1e-12));
    }

    #[test]
    fn composite_budget_at_one_segment_is_the_plain_budget(
        lambda in 0.1f64..5.0, t in 0.01f64..0.5, delta in 0.01f64..0.5, n in 1usize..5,
    ) {
        let h = Hamiltonian::new(1, vec![Term::new(1.0, "Z".parse().unwrap())]).unwrap();
        let w = weight_profile(&h, &standard_distribution(&h).unwrap()).unwrap();
        let eps = 2.0 * t * lambda;
        let a = concentration_budget(lambda, t, eps, delta, n, &w).unwrap();
        let b = composite_concentration_budget(lambda, t, eps, delta, n, &w).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cost_reduction_always_holds(
        a in hamiltonian(3, 3),
        b in hamiltonian(3, 5),
        raw in prop::collection::vec(0.1f64..10.0, 8),
    ) {
        let b_terms: Vec<Term> = b
            .terms()
            .iter()
            .filter(|t| !a.terms().iter().any(|s| s.pauli == t.pauli))
            .cloned()
            .collect();
        prop_assume!(!b_terms.is_empty());
        let b = Hamiltonian::new(3, b_terms).unwrap();
        let p = Partition::new("random", a, b).unwrap();
        let report = verify_cost_reduction(&p, &costs_for(&p.full(), &raw)).unwrap();
        prop_assert!(report.passes(), "{:?}", report);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_and_averaged_channels_are_cptp(
        h in hamiltonian(2, 4),
        t in 0.01f64..0.6,
        n in 1usize..4,
        m in 1usize..6,
        seed in any::<u64>(),
    ) {
        let q = standard_distribution(&h).unwrap();
        for s in [
            average_qdrift_channel(&h, &q, t, n).unwrap(),
            finite_qdrift_channel(&h, &q, t, n, m, StreamBase::new(seed, 0)).unwrap(),
            trotter_channel(&h, t, n).unwrap(),
        ] {
            prop_assert!(s.trace_preservation_defect() < 1e-12);
            prop_assert!(choi_min_eigenvalue(&s) > -1e-12);
        }
    }

    #[test]
    fn single_sample_channel_averages_the_term_unitaries(h in hamiltonian(1, 3), t in 0.01f64..1.0) {
        let q = standard_distribution(&h).unwrap();
        let s = single_sample_channel(&h, &q, t, 1).unwrap();
        let rho = linalg::identity(2) * num_complex::Complex64::new(0.5, 0.0);
        // The maximally mixed state is a fixed point of every unital channel.
        prop_assert!(max_abs_diff(&s.apply(&rho), &rho) < 1e-14);
    }

    #[test]
    fn diamond_distance_is_a_certified_metric(
        h1 in hamiltonian(1, 3),
        h2 in hamiltonian(1, 3),
        t in 0.05f64..1.5,
    ) {
        let opts = DiamondOptions { restarts: 4, ..DiamondOptions::default() };
        let e1 = exact_channel(&h1, t).unwrap();
        let e2 = exact_channel(&h2, t).unwrap();
        let q = standard_distribution(&h1).unwrap();
        let avg = average_qdrift_channel(&h1, &q, t, 2).unwrap();
        let d12 = diamond_distance(&e1, &e2, &opts).unwrap();
        let d21 = diamond_distance(&e2, &e1, &opts).unwrap();
        let d1a = diamond_distance(&e1, &avg, &opts).unwrap();
        let d2a = diamond_distance(&e2, &avg, &opts).unwrap();
        for d in [&d12, &d21, &d1a, &d2a] {
            prop_assert!(d.lower_bound <= d.value + 1e-9 && d.value <= d.upper_bound + 1e-9);
            prop_assert!(d.value <= 2.0 + 1e-12);
        }
        prop_assert!((d12.value - d21.value).abs() < 1e-6);
        prop_assert!(d12.value <= d1a.value + d2a.value + 1e-6);
        prop_assert!(diamond_distance(&e1, &e1, &opts).unwrap().value == 0.0);
    }

    #[test]
    fn composite_with_empty_deterministic_block_is_plain_qdrift(
        b in hamiltonian(2, 4),
        t in 0.01f64..0.5,
        n in 1usize..3,
        r in 1usize..3,
    ) {
        let p = Partition::new("b-only", Hamiltonian::empty(2).unwrap(), b.clone()).unwrap();
        let q = standard_distribution(&b).unwrap();
        let comp = composite_channel_average(&p, &q, t, n, r).unwrap();
        let mut plain = SuperOperator::identity(4);
        let seg = average_qdrift_channel(&b, &q, t / r as f64, n).unwrap();
        for _ in 0..r {
            plain = seg.after(&plain);
        }
        prop_assert!(max_abs_diff(comp.matrix(), plain.matrix()) < 1e-12);
    }

    #[test]
    fn finite_composite_is_deterministic_in_the_seed(seed in any::<u64>(), m in 1usize..5) {
        let p = build_lattice_model(1.0, 0.2, 0).unwrap();
        let q = standard_distribution(p.part_b()).unwrap();
        let run = || composite_channel_finite(&p, &q, 0.05, 1, m, 1, StreamBase::new(seed, 3)).unwrap();
        prop_assert!(max_abs_diff(run().matrix(), run().matrix()) == 0.0);
    }
}

#[test]
fn shipped_model_files_match_the_built_in_models() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let table = default_cost_table();
    for variant in [0u8, 1] {
        let src = std::fs::read_to_string(dir.join(format!("lattice_model_{variant}.toml"))).unwrap();
        let file = HamiltonianFile::parse(&src).unwrap();
        let built = build_lattice_model(1.0, 1.0, variant).unwrap();
        assert_eq!(file.partition.part_a(), built.part_a());
        assert_eq!(file.partition.part_b(), built.part_b());
        let costs = file.costs.unwrap();
        for term in built.full().terms() {
            assert_eq!(
                costs.lookup(&term.pauli).unwrap(),
                table.lookup(&term.pauli).unwrap()
            );
        }
        let q = cost_distribution(built.part_b(), &costs).unwrap();
        assert!(q.probs().iter().all(|&p| p > 0.0));
    }
}
