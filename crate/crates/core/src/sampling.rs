//! Sampling distributions over Hamiltonian terms and the reweighting that
//! keeps importance-sampled qDrift unbiased to first order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{toml_error, CostTable, Hamiltonian};
use crate::pauli::PauliString;

/// Accepted drift of a custom probability vector's sum before it is rejected.
pub const NORMALIZATION_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Standard,
    CostWeighted,
    Custom,
}

impl DistributionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributionKind::Standard => "standard",
            DistributionKind::CostWeighted => "cost_weighted",
            DistributionKind::Custom => "custom",
        }
    }
}

/// Probability vector `q(j)` over the terms of one Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    kind: DistributionKind,
}

impl SamplingDistribution {
    fn from_normalized(probs: Vec<f64>, kind: DistributionKind) -> Self {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cdf.push(acc);
        }
        // Pin the last supported entry to exactly 1 so every u in [0, 1) lands.
        if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
            for c in &mut cdf[last..] {
                *c = 1.0;
            }
        }
        Self { probs, cdf, kind }
    }

    /// Explicit probability vector. Sums within [`NORMALIZATION_SLACK`] of one
    /// are renormalized; anything else is rejected.
    pub fn custom(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution over zero terms"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::invalid(format!("probability {i} is {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_SLACK {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Self::from_normalized(probs, DistributionKind::Custom))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn check_len(&self, h: &Hamiltonian) -> Result<()> {
        if self.len() != h.len() {
            return Err(Error::DimensionMismatch {
                left: self.len(),
                right: h.len(),
            });
        }
        Ok(())
    }
}

/// `p(j) = h_j / λ`.
pub fn standard_distribution(h: &Hamiltonian) -> Result<SamplingDistribution> {
    let lambda = h.lambda();
    if !(lambda > 0.0) {
        return Err(Error::invalid("standard distribution needs λ > 0"));
    }
    let probs = h.terms().iter().map(|t| t.coeff / lambda).collect();
    Ok(SamplingDistribution::from_normalized(
        probs,
        DistributionKind::Standard,
    ))
}

/// `q_c(j) = h_j / (C_j λ_c)` with `λ_c = Σ_l h_l / C_l`.
pub fn cost_distribution(h: &Hamiltonian, costs: &CostTable) -> Result<SamplingDistribution> {
    if h.is_empty() {
        return Err(Error::invalid("cost distribution needs at least one term"));
    }
    let mut ratios = Vec::with_capacity(h.len());
    for term in h.terms() {
        let c = costs.lookup(&term.pauli)?;
        if !(c > 0.0) {
            return Err(Error::NonPositiveCost {
                pauli: term.pauli.to_string(),
                cost: c,
            });
        }
        ratios.push(term.coeff / c);
    }
    let lambda_c: f64 = ratios.iter().sum();
    let probs = ratios.into_iter().map(|r| r / lambda_c).collect();
    Ok(SamplingDistribution::from_normalized(
        probs,
        DistributionKind::CostWeighted,
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomDoc {
    probability: Vec<CustomRecord>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomRecord {
    pauli: PauliString,
    probability: f64,
}

/// Reads a custom distribution file, a TOML list of `[[probability]]`
/// records with `pauli` and `probability` keys. The records must cover
/// exactly the generators of `h`; they are reordered to match its terms.
pub fn custom_distribution_from_toml(h: &Hamiltonian, source: &str) -> Result<SamplingDistribution> {
    let doc: CustomDoc = toml::from_str(source).map_err(|e| toml_error(source, &e))?;
    if doc.probability.len() != h.len() {
        return Err(Error::Validation(format!(
            "custom distribution has {} records for {} terms",
            doc.probability.len(),
            h.len()
        )));
    }
    let mut probs = vec![f64::NAN; h.len()];
    for rec in &doc.probability {
        let idx = h
            .terms()
            .iter()
            .position(|t| t.pauli == rec.pauli)
            .ok_or_else(|| Error::Validation(format!("{} is not a term of the target block", rec.pauli)))?;
        if !probs[idx].is_nan() {
            return Err(Error::Validation(format!("duplicate record for {}", rec.pauli)));
        }
        probs[idx] = rec.probability;
    }
    SamplingDistribution::custom(probs)
}

/// Reweighting factors `ω(j) = p(j)/q(j)` and the two moments every bound uses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightProfile {
    pub omega: Vec<f64>,
    /// `E_p[ω] = Σ_j p_j ω_j`.
    pub mean_p_omega: f64,
    /// `E_q[ω]`; equal to one up to rounding.
    pub mean_q_omega: f64,
    pub max_omega: f64,
}

impl WeightProfile {
    /// The profile of `q = p`: `ω ≡ 1`.
    pub fn uniform(len: usize) -> Self {
        Self {
            omega: vec![1.0; len],
            mean_p_omega: 1.0,
            mean_q_omega: 1.0,
            max_omega: 1.0,
        }
    }
}

pub fn weight_profile(h: &Hamiltonian, q: &SamplingDistribution) -> Result<WeightProfile> {
    q.check_len(h)?;
    let lambda = h.lambda();
    let mut omega = Vec::with_capacity(h.len());
    for (j, (term, &qj)) in h.terms().iter().zip(q.probs()).enumerate() {
        if qj <= 0.0 {
            return Err(Error::UnboundedWeight { index: j });
        }
        omega.push(term.coeff / lambda / qj);
    }
    let mean_p_omega = h
        .terms()
        .iter()
        .zip(&omega)
        .map(|(t, w)| t.coeff / lambda * w)
        .sum();
    let mean_q_omega = q.probs().iter().zip(&omega).map(|(q, w)| q * w).sum();
    let max_omega = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(WeightProfile {
        omega,
        mean_p_omega,
        mean_q_omega,
        max_omega,
    })
}

/// Seeded random stream. `(master_seed, stream_index)` selects an independent
/// ChaCha20 keystream, so draws are identical across runs and platforms.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Underlying generator, for callers that need other distributions.
    pub fn rng_mut(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// Inverse-CDF draw of a term index (0-based). Consumes one uniform.
pub fn sample_term(q: &SamplingDistribution, rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let idx = q.cdf.partition_point(|&c| c <= u);
    idx.min(q.len() - 1)
}

/// Per-sample time step `τ_j = t h_j / (N q_j)`.
pub fn time_step(
    h: &Hamiltonian,
    q: &SamplingDistribution,
    j: usize,
    t: f64,
    n_samples: usize,
) -> Result<f64> {
    q.check_len(h)?;
    if n_samples == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let term = h
        .terms()
        .get(j)
        .ok_or_else(|| Error::invalid(format!("term index {j} out of range")))?;
    let qj = q.probs()[j];
    if qj <= 0.0 {
        return Err(Error::UnboundedWeight { index: j });
    }
    Ok(t * term.coeff / (n_samples as f64 * qj))
}

/// `Σ_j q(j) C_j` over the terms of `h`.
pub fn expected_cost(h: &Hamiltonian, q: &SamplingDistribution, costs: &CostTable) -> Result<f64> {
    q.check_len(h)?;
    let c = costs.costs_for(h)?;
    Ok(q.probs().iter().zip(&c).map(|(q, c)| q * c).sum())
}

/// Moments of the cost under `p`: `(E_p[C], E_p[1/C], max_j C_j)`.
pub fn cost_moments(h: &Hamiltonian, costs: &CostTable) -> Result<(f64, f64, f64)> {
    let c = costs.costs_for(h)?;
    let lambda = h.lambda();
    let mut mean = 0.0;
    let mut mean_inv = 0.0;
    for (term, cj) in h.terms().iter().zip(&c) {
        let p = term.coeff / lambda;
        mean += p * cj;
        mean_inv += p / cj;
    }
    Ok((mean, mean_inv, c.iter().copied().fold(0.0, f64::max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_lattice_model, default_cost_table, Term};

    fn ham(terms: &[(f64, &str)]) -> Hamiltonian {
        let n = terms[0].1.len();
        Hamiltonian::new(
            n,
            terms
                .iter()
                .map(|(c, s)| Term::new(*c, s.parse().unwrap()))
                .collect(),
        )
        .unwrap()
    }

    fn xz_costs() -> CostTable {
        CostTable::from_pairs([("X".parse().unwrap(), 1.0), ("Z".parse().unwrap(), 3.0)]).unwrap()
    }

    #[test]
    fn standard_examples() {
        let q = standard_distribution(&ham(&[(1.0, "X"), (1.0, "Z")])).unwrap();
        assert_eq!(q.probs(), &[0.5, 0.5]);
        let q = standard_distribution(&ham(&[(3.0, "X"), (1.0, "Z")])).unwrap();
        assert_eq!(q.probs(), &[0.75, 0.25]);
        let b = build_lattice_model(1.0, 0.1, 0).unwrap();
        let q = standard_distribution(b.part_b()).unwrap();
        assert!(q.probs().iter().all(|p| (p - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn cost_examples() {
        let h = ham(&[(1.0, "X"), (1.0, "Z")]);
        let q = cost_distribution(&h, &xz_costs()).unwrap();
        assert!((q.probs()[0] - 0.75).abs() < 1e-15);
        assert!((q.probs()[1] - 0.25).abs() < 1e-15);

        let flat = CostTable::from_pairs([("X".parse().unwrap(), 2.5), ("Z".parse().unwrap(), 2.5)]).unwrap();
        let h2 = ham(&[(0.3, "X"), (0.9, "Z")]);
        let a = cost_distribution(&h2, &flat).unwrap();
        let b = standard_distribution(&h2).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-15);
        }

        let model = build_lattice_model(1.0, 0.1, 0).unwrap();
        let q = cost_distribution(model.part_b(), &default_cost_table()).unwrap();
        assert!((q.probs()[0] - 10.0 / 41.1).abs() < 1e-12);

        let missing = CostTable::from_pairs([("X".parse().unwrap(), 1.0)]).unwrap();
        assert!(matches!(
            cost_distribution(&h, &missing),
            Err(Error::MissingCost(_))
        ));
    }

    #[test]
    fn weight_profile_examples() {
        let h = ham(&[(1.0, "X"), (2.0, "Z")]);
        let w = weight_profile(&h, &standard_distribution(&h).unwrap()).unwrap();
        assert!(w.omega.iter().all(|x| (x - 1.0).abs() < 1e-15));
        assert!((w.mean_p_omega - 1.0).abs() < 1e-15);
        assert!((w.max_omega - 1.0).abs() < 1e-15);

        let costs = default_cost_table();
        for (variant, expected) in [(0u8, 15.43), (1, 15.02)] {
            let m = build_lattice_model(1.0, 0.1, variant).unwrap();
            let q = cost_distribution(m.part_b(), &costs).unwrap();
            let w = weight_profile(m.part_b(), &q).unwrap();
            assert!((w.mean_p_omega - expected).abs() < 0.005, "{}", w.mean_p_omega);
            assert!((w.mean_q_omega - 1.0).abs() < 1e-12);
            let (ec, einv, _) = cost_moments(m.part_b(), &costs).unwrap();
            assert!((w.mean_p_omega - ec * einv).abs() < 1e-12);
        }

        let zero = SamplingDistribution::custom(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            weight_profile(&h, &zero),
            Err(Error::UnboundedWeight { index: 1 })
        ));
    }

    #[test]
    fn custom_normalization_rules() {
        let q = SamplingDistribution::custom(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(SamplingDistribution::custom(vec![0.5, 0.6]).is_err());
        assert!(SamplingDistribution::custom(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn custom_file_is_reordered_to_terms() {
        let h = ham(&[(1.0, "X"), (1.0, "Z")]);
        let src = "[[probability]]\npauli = \"Z\"\nprobability = 0.3\n\n[[probability]]\npauli = \"X\"\nprobability = 0.7\n";
        let q = custom_distribution_from_toml(&h, src).unwrap();
        assert_eq!(q.probs(), &[0.7, 0.3]);
        let short = "[[probability]]\npauli = \"Z\"\nprobability = 1.0\n";
        assert!(custom_distribution_from_toml(&h, short).is_err());
        let foreign = src.replace("\"X\"", "\"Y\"");
        assert!(custom_distribution_from_toml(&h, &foreign).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_respects_support() {
        let q = SamplingDistribution::custom(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = RngStream::new(7, 3);
        assert!((0..1000).all(|_| sample_term(&q, &mut rng) == 0));

        let q = SamplingDistribution::custom(vec![0.0, 0.4, 0.0, 0.6, 0.0]).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert!((0..10_000).all(|_| matches!(sample_term(&q, &mut rng), 1 | 3)));

        let q = SamplingDistribution::custom(vec![0.2, 0.3, 0.5]).unwrap();
        let draw = |seed, stream| {
            let mut rng = RngStream::new(seed, stream);
            (0..64).map(|_| sample_term(&q, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42, 0), draw(42, 0));
        assert_ne!(draw(42, 0), draw(42, 1));
    }

    #[test]
    fn balanced_coin_frequency() {
        let q = SamplingDistribution::custom(vec![0.5, 0.5]).unwrap();
        let mut rng = RngStream::new(42, 0);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_term(&q, &mut rng) == 0).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn time_step_examples() {
        let h = ham(&[(1.0, "X"), (1.0, "Z")]);
        let p = standard_distribution(&h).unwrap();
        for j in 0..2 {
            assert!((time_step(&h, &p, j, 0.3, 5).unwrap() - 0.3 * 2.0 / 5.0).abs() < 1e-15);
            assert_eq!(time_step(&h, &p, j, 0.0, 5).unwrap(), 0.0);
        }
        let qc = cost_distribution(&h, &xz_costs()).unwrap();
        assert!((time_step(&h, &qc, 1, 1.0, 1).unwrap() - 4.0).abs() < 1e-12);
        assert!(time_step(&h, &p, 0, 1.0, 0).is_err());
    }

    #[test]
    fn expected_costs_for_lattice_b_blocks() {
        let costs = default_cost_table();
        let m0 = build_lattice_model(1.0, 0.1, 0).unwrap();
        let p = standard_distribution(m0.part_b()).unwrap();
        let qc = cost_distribution(m0.part_b(), &costs).unwrap();
        assert!((expected_cost(m0.part_b(), &p, &costs).unwrap() - 3.38).abs() < 0.005);
        assert!((expected_cost(m0.part_b(), &qc, &costs).unwrap() - 0.22).abs() < 0.005);
        let m1 = build_lattice_model(1.0, 0.1, 1).unwrap();
        let qc = cost_distribution(m1.part_b(), &costs).unwrap();
        assert!((expected_cost(m1.part_b(), &qc, &costs).unwrap() - 0.32).abs() < 0.005);
    }
}
