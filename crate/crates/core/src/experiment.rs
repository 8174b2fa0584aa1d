//! Declarative sweeps over block strength `b`: channel construction, diamond
//! distances to the exact evolution, circuit-cost histograms and resource
//! plans, driven by a TOML configuration.
//!
//! A run is split into groups `(model, t, b)`. Inside a group every
//! `(channel, distribution, repetition)` unit is sampled in parallel, units
//! that realise the same channel share one diamond estimate, and rows come
//! out in a fixed order. Output is therefore independent of the thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{plan_composite, plan_pure_qdrift, verify_cost_reduction, BoundParams, ResourcePlan};
use crate::channels::{
    average_qdrift_channel, composite_channel_average, composite_experiments, exact_channel,
    qdrift_experiments, trotter_channel, Block, SampledCircuit, StreamBase, SuperOperator,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_lattice_model, default_cost_table, CostTable, Hamiltonian, HamiltonianFile, Partition,
};
use crate::linalg::DenseOperator;
use crate::metrics::{diamond_distance, DiamondEstimate, DiamondOptions};
use crate::sampling::{
    cost_distribution, custom_distribution_from_toml, expected_cost, standard_distribution, weight_profile,
    SamplingDistribution,
};

pub const DEFAULT_B_POINTS: usize = 22;
pub const DEFAULT_B_RANGE: (f64, f64) = (0.005, 0.5);

/// Histogram bins are costs rounded to `1 / COST_SCALE`.
const COST_SCALE: f64 = 1e9;

/// Largest number of drawn terms for which achievable costs are enumerated.
const ENUMERATION_LIMIT: usize = 64;

/// `DEFAULT_B_POINTS` logarithmically spaced values spanning `DEFAULT_B_RANGE`.
pub fn default_b_grid() -> Vec<f64> {
    let (lo, hi) = DEFAULT_B_RANGE;
    let steps = (DEFAULT_B_POINTS - 1) as f64;
    (0..DEFAULT_B_POINTS)
        .map(|k| lo * (hi / lo).powf(k as f64 / steps))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelSpec {
    Exact,
    Trotter { r: usize },
    AvgQdrift { n: usize },
    FiniteQdrift { n: usize, m: usize },
    CompositeAvg { n: usize, r: usize },
    CompositeFinite { n: usize, m: usize, r: usize },
}

impl ChannelSpec {
    /// Number of sampled experiments, zero for deterministic channels.
    pub fn experiments(self) -> usize {
        match self {
            ChannelSpec::FiniteQdrift { m, .. } | ChannelSpec::CompositeFinite { m, .. } => m,
            _ => 0,
        }
    }

    pub fn is_sampled(self) -> bool {
        self.experiments() > 0
    }

    pub fn uses_distribution(self) -> bool {
        !matches!(self, ChannelSpec::Exact | ChannelSpec::Trotter { .. })
    }

    pub fn is_composite(self) -> bool {
        matches!(
            self,
            ChannelSpec::CompositeAvg { .. } | ChannelSpec::CompositeFinite { .. }
        )
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ChannelSpec::Exact => write!(f, "exact"),
            ChannelSpec::Trotter { r } => write!(f, "trotter({r})"),
            ChannelSpec::AvgQdrift { n } => write!(f, "avg_qdrift({n})"),
            ChannelSpec::FiniteQdrift { n, m } => write!(f, "finite_qdrift({n},{m})"),
            ChannelSpec::CompositeAvg { n, r } => write!(f, "composite_avg({n},{r})"),
            ChannelSpec::CompositeFinite { n, m, r } => write!(f, "composite_finite({n},{m},{r})"),
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = |why: &str| Error::Config(format!("channel spec {s:?}: {why}"));
        let (name, args) = match compact.split_once('(') {
            None => (compact.as_str(), Vec::new()),
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| bad("missing closing parenthesis"))?;
                let args = inner
                    .split(',')
                    .map(|a| match a.parse::<usize>() {
                        Ok(v) if v > 0 => Ok(v),
                        _ => Err(bad("parameters must be positive integers")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (name, args)
            }
        };
        let arity = |k: usize| {
            if args.len() == k {
                Ok(())
            } else {
                Err(bad(&format!("expected {k} parameters, got {}", args.len())))
            }
        };
        match name {
            "exact" => arity(0).map(|_| ChannelSpec::Exact),
            "trotter" => arity(1).map(|_| ChannelSpec::Trotter { r: args[0] }),
            "avg_qdrift" => arity(1).map(|_| ChannelSpec::AvgQdrift { n: args[0] }),
            "finite_qdrift" => arity(2).map(|_| ChannelSpec::FiniteQdrift {
                n: args[0],
                m: args[1],
            }),
            "composite_avg" => arity(2).map(|_| ChannelSpec::CompositeAvg {
                n: args[0],
                r: args[1],
            }),
            "composite_finite" => arity(3).map(|_| ChannelSpec::CompositeFinite {
                n: args[0],
                m: args[1],
                r: args[2],
            }),
            _ => Err(bad("unknown channel")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    Lattice(u8),
    /// A Hamiltonian file; its A and B coefficients are multiplied by `a`
    /// and `b` respectively.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DistributionSpec {
    Standard,
    CostWeighted,
    Custom(PathBuf),
}

impl DistributionSpec {
    pub fn label(&self) -> String {
        match self {
            DistributionSpec::Standard => "standard".into(),
            DistributionSpec::CostWeighted => "cost_weighted".into(),
            DistributionSpec::Custom(path) => format!(
                "custom:{}",
                path.file_stem().and_then(|s| s.to_str()).unwrap_or("file")
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<ModelSpec>,
    pub a: f64,
    pub times: Vec<f64>,
    pub b_values: Vec<f64>,
    pub channels: Vec<ChannelSpec>,
    pub distributions: Vec<DistributionSpec>,
    pub repetitions: usize,
    pub master_seed: u64,
    pub diamond: DiamondOptions,
    pub output_dir: Option<PathBuf>,
    /// TOML file with a `[costs]` table; its entries override the model's.
    pub costs: Option<PathBuf>,
    pub plan: Option<PlanConfig>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: OneOrMany<String>,
    #[serde(default = "one")]
    a: f64,
    t: OneOrMany<f64>,
    b_values: Option<Vec<f64>>,
    channels: Vec<String>,
    #[serde(default)]
    distributions: Option<Vec<String>>,
    #[serde(default = "one_usize")]
    repetitions: usize,
    #[serde(default)]
    master_seed: u64,
    output_dir: Option<String>,
    costs: Option<String>,
    diamond: Option<RawDiamond>,
    plan: Option<RawPlan>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiamond {
    restarts: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    epsilon: f64,
    #[serde(default = "default_delta")]
    delta: f64,
    #[serde(default = "two")]
    kappa: f64,
    #[serde(default = "one")]
    alpha: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn one_usize() -> usize {
    1
}

fn default_delta() -> f64 {
    0.05
}

impl ExperimentConfig {
    /// Parses a configuration; relative paths are resolved against `base_dir`.
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(source).map_err(|e| Error::Config(e.message().to_string()))?;
        let path = |p: &str| base_dir.join(p);
        let models = raw
            .model
            .into_vec()
            .into_iter()
            .map(|m| match m.as_str() {
                "lattice_0" => ModelSpec::Lattice(0),
                "lattice_1" => ModelSpec::Lattice(1),
                other => ModelSpec::File(path(other)),
            })
            .collect();
        let channels = raw
            .channels
            .iter()
            .map(|c| c.parse())
            .collect::<Result<Vec<_>>>()?;
        let distributions = raw
            .distributions
            .unwrap_or_else(|| vec!["standard".into()])
            .into_iter()
            .map(|d| match d.as_str() {
                "standard" => Ok(DistributionSpec::Standard),
                "cost_weighted" => Ok(DistributionSpec::CostWeighted),
                other => match other.strip_prefix("custom:") {
                    Some(p) => Ok(DistributionSpec::Custom(path(p))),
                    None => Err(Error::Config(format!("unknown distribution {other:?}"))),
                },
            })
            .collect::<Result<Vec<_>>>()?;
        let mut diamond = DiamondOptions::default();
        if let Some(d) = raw.diamond {
            diamond.restarts = d.restarts.unwrap_or(diamond.restarts);
            diamond.tol = d.tol.unwrap_or(diamond.tol);
            diamond.max_iter = d.max_iter.unwrap_or(diamond.max_iter);
            diamond.seed = d.seed.unwrap_or(diamond.seed);
        }
        let cfg = Self {
            models,
            a: raw.a,
            times: raw.t.into_vec(),
            b_values: raw.b_values.unwrap_or_else(default_b_grid),
            channels,
            distributions,
            repetitions: raw.repetitions,
            master_seed: raw.master_seed,
            diamond,
            output_dir: raw.output_dir.map(|p| path(&p)),
            costs: raw.costs.map(|p| path(&p)),
            plan: raw.plan.map(|p| PlanConfig {
                epsilon: p.epsilon,
                delta: p.delta,
                kappa: p.kappa,
                alpha: p.alpha,
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&source, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.models.is_empty() {
            return fail("at least one model is required".into());
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return fail(format!("a = {} must be positive", self.a));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return fail("t must be a non-empty list of positive times".into());
        }
        if self.b_values.is_empty() || self.b_values.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return fail("b_values must be a non-empty list of positive values".into());
        }
        if self.channels.is_empty() {
            return fail("at least one channel is required".into());
        }
        if self.distributions.is_empty() {
            return fail("at least one distribution is required".into());
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1".into());
        }
        let d = &self.diamond;
        if !(d.tol > 0.0 && d.tol.is_finite()) || d.max_iter == 0 {
            return fail("diamond tol must be positive and max_iter at least 1".into());
        }
        if let Some(p) = &self.plan {
            if !(p.epsilon > 0.0 && p.delta > 0.0 && p.delta < 1.0 && p.kappa > 1.0 && p.alpha > 0.0) {
                return fail("plan needs epsilon > 0, 0 < delta < 1, kappa > 1, alpha > 0".into());
            }
        }
        Ok(())
    }

    /// Largest `M` over the channel specs, at least 1; the stride between
    /// repetitions in the stream schedule.
    pub fn max_experiments(&self) -> usize {
        self.channels
            .iter()
            .map(|c| c.experiments())
            .max()
            .unwrap_or(0)
            .max(1)
    }
}

struct Model {
    label: String,
    kind: ModelKind,
    costs: Option<CostTable>,
}

enum ModelKind {
    Lattice(u8),
    File(Partition),
}

impl Model {
    fn partition(&self, a: f64, b: f64) -> Result<Partition> {
        match &self.kind {
            ModelKind::Lattice(v) => build_lattice_model(a, b, *v),
            ModelKind::File(p) => p.rescaled(a, b),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CostDoc {
    costs: BTreeMap<String, f64>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_cost_override(path: &Path) -> Result<CostTable> {
    let src = read(path)?;
    let doc: CostDoc =
        toml::from_str(&src).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let pairs = doc
        .costs
        .into_iter()
        .map(|(k, v)| Ok((k.parse()?, v)))
        .collect::<Result<Vec<_>>>()?;
    CostTable::from_pairs(pairs)
}

fn resolve_models(cfg: &ExperimentConfig) -> Result<Vec<Model>> {
    let extra = cfg.costs.as_deref().map(load_cost_override).transpose()?;
    cfg.models
        .iter()
        .map(|spec| {
            let (label, kind, costs) = match spec {
                ModelSpec::Lattice(v) => (
                    format!("lattice_{v}"),
                    ModelKind::Lattice(*v),
                    Some(default_cost_table()),
                ),
                ModelSpec::File(path) => {
                    let file = HamiltonianFile::parse(&read(path)?)
                        .map_err(|e| Error::Config(format!("model {}: {e}", path.display())))?;
                    (
                        file.partition.label.clone(),
                        ModelKind::File(file.partition),
                        file.costs,
                    )
                }
            };
            let costs = match (costs, &extra) {
                (Some(c), Some(x)) => Some(c.merged_with(x)),
                (None, Some(x)) => Some(x.clone()),
                (c, None) => c,
            };
            Ok(Model { label, kind, costs })
        })
        .collect()
}

fn distribution_for(
    spec: &DistributionSpec,
    h: &Hamiltonian,
    costs: Option<&CostTable>,
    custom_sources: &HashMap<PathBuf, String>,
) -> Result<SamplingDistribution> {
    match spec {
        DistributionSpec::Standard => standard_distribution(h),
        DistributionSpec::CostWeighted => match costs {
            Some(c) => cost_distribution(h, c),
            None => Err(Error::Config("cost_weighted sampling needs a cost table".into())),
        },
        DistributionSpec::Custom(path) => custom_distribution_from_toml(h, &custom_sources[path]),
    }
}

/// One CSV record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub model: String,
    pub t: f64,
    pub b: f64,
    pub channel: String,
    pub distribution: String,
    pub repetition: usize,
    pub diamond_value: f64,
    pub diamond_lower: f64,
    pub diamond_upper: f64,
    pub converged: bool,
    /// Mean circuit cost of the channel: deterministic for Trotter, expected
    /// for averaged channels, sample mean over the `M` circuits otherwise.
    pub total_cost: Option<f64>,
}

/// A row together with the costs of the circuits it sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub row: Row,
    pub estimate: DiamondEstimate,
    pub circuit_costs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointSummary {
    pub model: String,
    pub t: f64,
    pub b: f64,
    pub channel: String,
    pub distribution: String,
    pub repetitions: usize,
    pub mean: f64,
    pub std: f64,
    pub min_lower: f64,
    pub max_upper: f64,
    pub all_converged: bool,
    pub mean_cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub cost: f64,
    pub count: usize,
    pub mean_per_repetition: f64,
    /// Normal-approximation 95% half-width of the per-repetition count.
    pub ci95_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostHistogram {
    pub model: String,
    pub t: f64,
    pub b: f64,
    pub channel: String,
    pub distribution: String,
    pub repetitions: usize,
    pub circuits: usize,
    pub bins: Vec<HistogramBin>,
    pub sample_mean_cost: f64,
    /// Expected circuit cost under this distribution.
    pub expected_cost: f64,
    pub expected_cost_standard: Option<f64>,
    pub expected_cost_cost_weighted: Option<f64>,
    /// Every circuit cost with non-zero probability, when enumerable.
    pub achievable_costs: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub points: Vec<PointRecord>,
    pub summaries: Vec<PointSummary>,
    pub histograms: Vec<CostHistogram>,
    /// Wall time of the run; kept out of the written outputs so they stay
    /// reproducible.
    pub elapsed: Duration,
}

impl ExperimentResult {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.points.iter().map(|p| &p.row)
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.row.converged)
    }

    pub fn csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv(self.rows(), &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn aggregate_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Aggregate<'a> {
            points: &'a [PointSummary],
            histograms: &'a [CostHistogram],
        }
        Ok(serde_json::to_string_pretty(&Aggregate {
            points: &self.summaries,
            histograms: &self.histograms,
        })?)
    }

    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.csv()?)?;
        std::fs::write(dir.join("summary.json"), self.aggregate_json()?)?;
        Ok(())
    }
}

pub fn write_csv<'a, W: Write>(rows: impl IntoIterator<Item = &'a Row>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut any = false;
    for row in rows {
        w.serialize(row)?;
        any = true;
    }
    if !any {
        w.write_record([
            "model",
            "t",
            "b",
            "channel",
            "distribution",
            "repetition",
            "diamond_value",
            "diamond_lower",
            "diamond_upper",
            "converged",
            "total_cost",
        ])?;
    }
    w.flush()?;
    Ok(())
}

type Sequence = Vec<(Block, usize)>;

/// What a unit's channel is, up to identity: two units with equal keys in
/// the same group realise the same superoperator.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum ChannelKey {
    Fixed {
        spec: ChannelSpec,
        dist: Option<usize>,
    },
    Mixture {
        pure: bool,
        dist: usize,
        members: Vec<(Sequence, usize)>,
    },
}

struct Unit {
    spec: ChannelSpec,
    dist: Option<usize>,
    rep: usize,
}

struct Draw {
    key: ChannelKey,
    unitaries: Vec<(Sequence, DenseOperator)>,
    costs: Vec<f64>,
    cost: Option<f64>,
}

fn sequence(c: &SampledCircuit) -> Sequence {
    c.steps.iter().map(|s| (s.block, s.term)).collect()
}

fn mixture_draw(pure: bool, dist: usize, circuits: Vec<SampledCircuit>) -> Draw {
    let mut counts: BTreeMap<Sequence, usize> = BTreeMap::new();
    let mut unitaries: Vec<(Sequence, DenseOperator)> = Vec::new();
    let mut costs = Vec::with_capacity(circuits.len());
    for c in circuits {
        let seq = sequence(&c);
        if let Some(v) = c.total_cost {
            costs.push(v);
        }
        let count = counts.entry(seq.clone()).or_insert(0);
        if *count == 0 {
            unitaries.push((seq, c.unitary));
        }
        *count += 1;
    }
    let cost = (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64);
    Draw {
        key: ChannelKey::Mixture {
            pure,
            dist,
            members: counts.into_iter().collect(),
        },
        unitaries,
        costs,
        cost,
    }
}

/// Everything a group needs that does not depend on the unit.
struct Group<'a> {
    cfg: &'a ExperimentConfig,
    partition: Partition,
    full: Hamiltonian,
    costs: Option<&'a CostTable>,
    q_b: Vec<Option<SamplingDistribution>>,
    q_full: Vec<Option<SamplingDistribution>>,
    t: f64,
}

impl Group<'_> {
    fn q(&self, pure: bool, dist: usize) -> &SamplingDistribution {
        let qs = if pure { &self.q_full } else { &self.q_b };
        qs[dist]
            .as_ref()
            .expect("distribution prepared for every unit that uses it")
    }

    fn composite_cost(&self, q: &SamplingDistribution, n: usize, r: usize) -> Result<Option<f64>> {
        let Some(c) = self.costs else { return Ok(None) };
        let per_segment =
            c.total(self.partition.part_a())? + n as f64 * expected_cost(self.partition.part_b(), q, c)?;
        Ok(Some(r as f64 * per_segment))
    }

    fn draw(&self, unit: &Unit) -> Result<Draw> {
        let t = self.t;
        let base = StreamBase::new(
            self.cfg.master_seed,
            (unit.rep * self.cfg.max_experiments()) as u64,
        );
        let fixed = |cost: Option<f64>| Draw {
            key: ChannelKey::Fixed {
                spec: unit.spec,
                dist: unit.dist,
            },
            unitaries: Vec::new(),
            costs: Vec::new(),
            cost,
        };
        let dist = unit.dist.unwrap_or(0);
        match unit.spec {
            ChannelSpec::Exact => Ok(fixed(None)),
            ChannelSpec::Trotter { r } => {
                let cost = self.costs.map(|c| c.total(&self.full)).transpose()?;
                Ok(fixed(cost.map(|c| r as f64 * c)))
            }
            ChannelSpec::AvgQdrift { n } => {
                let q = self.q(true, dist);
                let cost = self.costs.map(|c| expected_cost(&self.full, q, c)).transpose()?;
                Ok(fixed(cost.map(|c| n as f64 * c)))
            }
            ChannelSpec::CompositeAvg { n, r } => {
                Ok(fixed(self.composite_cost(self.q(false, dist), n, r)?))
            }
            ChannelSpec::FiniteQdrift { n, m } => {
                let q = self.q(true, dist);
                let circuits = qdrift_experiments(&self.full, q, t, n, m, base, self.costs)?;
                Ok(mixture_draw(true, dist, circuits))
            }
            ChannelSpec::CompositeFinite { n, m, r } => {
                let q = self.q(false, dist);
                let circuits = composite_experiments(&self.partition, q, t, n, m, r, base, self.costs)?;
                Ok(mixture_draw(false, dist, circuits))
            }
        }
    }

    fn channel(&self, key: &ChannelKey, draw: &Draw) -> Result<SuperOperator> {
        let t = self.t;
        match key {
            ChannelKey::Fixed { spec, dist } => {
                let dist = dist.unwrap_or(0);
                match *spec {
                    ChannelSpec::Exact => exact_channel(&self.full, t),
                    ChannelSpec::Trotter { r } => trotter_channel(&self.full, t, r),
                    ChannelSpec::AvgQdrift { n } => {
                        average_qdrift_channel(&self.full, self.q(true, dist), t, n)
                    }
                    ChannelSpec::CompositeAvg { n, r } => {
                        composite_channel_average(&self.partition, self.q(false, dist), t, n, r)
                    }
                    _ => unreachable!("sampled channels are keyed as mixtures"),
                }
            }
            ChannelKey::Mixture { members, .. } => {
                let total: usize = members.iter().map(|(_, c)| c).sum();
                let lookup: HashMap<&Sequence, &DenseOperator> =
                    draw.unitaries.iter().map(|(s, u)| (s, u)).collect();
                Ok(SuperOperator::mixture(
                    members
                        .iter()
                        .map(|(seq, count)| (*count as f64 / total as f64, lookup[seq].clone()))
                        .collect(),
                ))
            }
        }
    }
}

fn units(cfg: &ExperimentConfig) -> Vec<Unit> {
    let mut out = Vec::new();
    for &spec in &cfg.channels {
        let dists: Vec<Option<usize>> = if spec.uses_distribution() {
            (0..cfg.distributions.len()).map(Some).collect()
        } else {
            vec![None]
        };
        let reps = if spec.is_sampled() { cfg.repetitions } else { 1 };
        for dist in dists {
            for rep in 0..reps {
                out.push(Unit { spec, dist, rep });
            }
        }
    }
    out
}

fn read_custom_sources(cfg: &ExperimentConfig) -> Result<HashMap<PathBuf, String>> {
    let mut out = HashMap::new();
    for d in &cfg.distributions {
        if let DistributionSpec::Custom(path) = d {
            out.insert(path.clone(), read(path)?);
        }
    }
    Ok(out)
}

struct Prepared<'a> {
    model: &'a Model,
    group: Group<'a>,
    b: f64,
}

fn prepare<'a>(
    cfg: &'a ExperimentConfig,
    model: &'a Model,
    custom: &HashMap<PathBuf, String>,
    t: f64,
    b: f64,
) -> Result<Prepared<'a>> {
    let partition = model.partition(cfg.a, b)?;
    let full = partition.full();
    let costs = model.costs.as_ref();
    let needs = |pure: bool| {
        cfg.channels
            .iter()
            .any(|c| c.uses_distribution() && c.is_composite() != pure)
    };
    let build = |h: &Hamiltonian, wanted: bool| -> Result<Vec<Option<SamplingDistribution>>> {
        cfg.distributions
            .iter()
            .map(|d| wanted.then(|| distribution_for(d, h, costs, custom)).transpose())
            .collect()
    };
    let q_b = build(partition.part_b(), needs(false))?;
    let q_full = build(&full, needs(true))?;
    Ok(Prepared {
        model,
        b,
        group: Group {
            cfg,
            partition,
            full,
            costs,
            q_b,
            q_full,
            t,
        },
    })
}

fn run_group(p: &Prepared<'_>, units: &[Unit]) -> Result<Vec<PointRecord>> {
    let g = &p.group;
    let cfg = g.cfg;
    let exact = exact_channel(&g.full, g.t)?;
    let draws: Vec<Draw> = units.par_iter().map(|u| g.draw(u)).collect::<Result<_>>()?;

    let mut slots: HashMap<&ChannelKey, usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    let slot_of: Vec<usize> = draws
        .iter()
        .enumerate()
        .map(|(i, d)| {
            *slots.entry(&d.key).or_insert_with(|| {
                unique.push(i);
                unique.len() - 1
            })
        })
        .collect();
    let estimates: Vec<DiamondEstimate> = unique
        .par_iter()
        .map(|&i| {
            let ch = g.channel(&draws[i].key, &draws[i])?;
            diamond_distance(&exact, &ch, &cfg.diamond)
        })
        .collect::<Result<_>>()?;

    Ok(units
        .iter()
        .zip(draws)
        .zip(slot_of)
        .map(|((u, d), slot)| {
            let e = estimates[slot].clone();
            PointRecord {
                row: Row {
                    model: p.model.label.clone(),
                    t: g.t,
                    b: p.b,
                    channel: u.spec.to_string(),
                    distribution: u
                        .dist
                        .map_or_else(|| "none".to_string(), |k| cfg.distributions[k].label()),
                    repetition: u.rep,
                    diamond_value: e.value,
                    diamond_lower: e.lower_bound,
                    diamond_upper: e.upper_bound,
                    converged: e.converged,
                    total_cost: d.cost,
                },
                estimate: e,
                circuit_costs: d.costs,
            }
        })
        .collect())
}

/// Runs the sweep, handing each finished `(model, t, b)` group to `sink`
/// before starting the next, so completed rows survive a later failure.
pub fn run_experiment_with<F>(cfg: &ExperimentConfig, mut sink: F) -> Result<ExperimentResult>
where
    F: FnMut(&[PointRecord]) -> Result<()>,
{
    cfg.validate()?;
    let start = Instant::now();
    let models = resolve_models(cfg)?;
    let custom = read_custom_sources(cfg)?;
    let units = units(cfg);
    let mut points = Vec::new();
    let mut histograms = Vec::new();
    for model in &models {
        for &t in &cfg.times {
            for &b in &cfg.b_values {
                let prepared = prepare(cfg, model, &custom, t, b)?;
                let records = run_group(&prepared, &units)?;
                sink(&records)?;
                histograms.extend(histograms_for(&prepared, &records)?);
                points.extend(records);
            }
        }
    }
    Ok(ExperimentResult {
        summaries: summarize(&points),
        points,
        histograms,
        elapsed: start.elapsed(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, |_| Ok(()))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(points: &[PointRecord]) -> Vec<PointSummary> {
    let mut order: Vec<(String, u64, u64, String, String)> = Vec::new();
    let mut groups: HashMap<(String, u64, u64, String, String), Vec<&PointRecord>> = HashMap::new();
    for p in points {
        let r = &p.row;
        let key = (
            r.model.clone(),
            r.t.to_bits(),
            r.b.to_bits(),
            r.channel.clone(),
            r.distribution.clone(),
        );
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(p);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let values: Vec<f64> = members.iter().map(|p| p.row.diamond_value).collect();
            let (mean, std) = mean_std(&values);
            let costs: Vec<f64> = members.iter().filter_map(|p| p.row.total_cost).collect();
            let first = &members[0].row;
            PointSummary {
                model: first.model.clone(),
                t: first.t,
                b: first.b,
                channel: first.channel.clone(),
                distribution: first.distribution.clone(),
                repetitions: members.len(),
                mean,
                std,
                min_lower: members
                    .iter()
                    .map(|p| p.row.diamond_lower)
                    .fold(f64::INFINITY, f64::min),
                max_upper: members
                    .iter()
                    .map(|p| p.row.diamond_upper)
                    .fold(f64::NEG_INFINITY, f64::max),
                all_converged: members.iter().all(|p| p.row.converged),
                mean_cost: (costs.len() == members.len()).then(|| mean_std(&costs).0),
            }
        })
        .collect()
}

fn cost_key(c: f64) -> i64 {
    (c * COST_SCALE).round() as i64
}

/// All sums of `draws` costs picked (with repetition) from `choices`, plus
/// `offset`, as rounded keys.
fn reachable_sums(choices: &[f64], draws: usize, offset: f64) -> BTreeSet<i64> {
    let mut sums: BTreeSet<i64> = BTreeSet::from([cost_key(offset)]);
    for _ in 0..draws {
        sums = sums
            .iter()
            .flat_map(|&s| choices.iter().map(move |&c| s + cost_key(c)))
            .collect();
    }
    sums
}

/// Circuit costs with non-zero probability for a sampled channel spec, or
/// `None` when the spec is deterministic or too long to enumerate.
pub fn achievable_costs(
    spec: ChannelSpec,
    p: &Partition,
    q: &SamplingDistribution,
    costs: &CostTable,
) -> Result<Option<Vec<f64>>> {
    let (h, draws, offset) = match spec {
        ChannelSpec::FiniteQdrift { n, .. } => (p.full(), n, 0.0),
        ChannelSpec::CompositeFinite { n, r, .. } => {
            (p.part_b().clone(), n * r, r as f64 * costs.total(p.part_a())?)
        }
        _ => return Ok(None),
    };
    if draws > ENUMERATION_LIMIT {
        return Ok(None);
    }
    let c = costs.costs_for(&h)?;
    let choices: Vec<f64> = c
        .into_iter()
        .zip(q.probs())
        .filter(|(_, &qj)| qj > 0.0)
        .map(|(c, _)| c)
        .collect();
    Ok(Some(
        reachable_sums(&choices, draws, offset)
            .into_iter()
            .map(|k| k as f64 / COST_SCALE)
            .collect(),
    ))
}

fn histogram(p: &Prepared<'_>, spec: ChannelSpec, dist: usize, per_rep: &[&[f64]]) -> Result<CostHistogram> {
    let g = &p.group;
    let costs = g.costs.ok_or_else(|| {
        let first = g.partition.part_b().terms().first().or(g.full.terms().first());
        Error::MissingCost(first.map_or_else(String::new, |t| t.pauli.to_string()))
    })?;
    let reps = per_rep.len();
    let mut counts: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (k, rep_costs) in per_rep.iter().enumerate() {
        for &c in rep_costs.iter() {
            counts.entry(cost_key(c)).or_insert_with(|| vec![0; reps])[k] += 1;
        }
    }
    let bins = counts
        .into_iter()
        .map(|(key, per)| {
            let xs: Vec<f64> = per.iter().map(|&c| c as f64).collect();
            let (mean, std) = mean_std(&xs);
            HistogramBin {
                cost: key as f64 / COST_SCALE,
                count: per.iter().sum(),
                mean_per_repetition: mean,
                ci95_half_width: 1.96 * std / (reps as f64).sqrt(),
            }
        })
        .collect();
    let all: Vec<f64> = per_rep.iter().flat_map(|r| r.iter().copied()).collect();
    let pure = !spec.is_composite();
    let (n, r) = match spec {
        ChannelSpec::FiniteQdrift { n, .. } => (n, 1),
        ChannelSpec::CompositeFinite { n, r, .. } => (n, r),
        _ => unreachable!("histograms are built for sampled channels only"),
    };
    let expected = |q: &SamplingDistribution| -> Result<f64> {
        if pure {
            Ok(n as f64 * expected_cost(&g.full, q, costs)?)
        } else {
            Ok(g.composite_cost(q, n, r)?.expect("cost table bound"))
        }
    };
    let block = if pure { &g.full } else { g.partition.part_b() };
    let q = g.q(pure, dist);
    Ok(CostHistogram {
        model: p.model.label.clone(),
        t: g.t,
        b: p.b,
        channel: spec.to_string(),
        distribution: g.cfg.distributions[dist].label(),
        repetitions: reps,
        circuits: all.len(),
        bins,
        sample_mean_cost: mean_std(&all).0,
        expected_cost: expected(q)?,
        expected_cost_standard: Some(expected(&standard_distribution(block)?)?),
        expected_cost_cost_weighted: Some(expected(&cost_distribution(block, costs)?)?),
        achievable_costs: achievable_costs(spec, &g.partition, q, costs)?,
    })
}

fn histograms_for(p: &Prepared<'_>, records: &[PointRecord]) -> Result<Vec<CostHistogram>> {
    if p.group.costs.is_none() {
        return Ok(Vec::new());
    }
    let cfg = p.group.cfg;
    let mut out = Vec::new();
    let mut offset = 0;
    for &spec in &cfg.channels {
        let dists = if spec.uses_distribution() {
            cfg.distributions.len()
        } else {
            1
        };
        let reps = if spec.is_sampled() { cfg.repetitions } else { 1 };
        for dist in 0..dists {
            let block = &records[offset..offset + reps];
            offset += reps;
            if spec.is_sampled() {
                let per_rep: Vec<&[f64]> = block.iter().map(|r| r.circuit_costs.as_slice()).collect();
                out.push(histogram(p, spec, dist, &per_rep)?);
            }
        }
    }
    Ok(out)
}

/// Cost histograms of the sampled channels only, without any diamond
/// distance evaluation.
pub fn cost_histogram(cfg: &ExperimentConfig) -> Result<Vec<CostHistogram>> {
    cfg.validate()?;
    let sampled: Vec<ChannelSpec> = cfg.channels.iter().copied().filter(|c| c.is_sampled()).collect();
    if sampled.is_empty() {
        return Err(Error::Config("cost histograms need a sampled channel".into()));
    }
    let restricted = ExperimentConfig {
        channels: sampled,
        ..cfg.clone()
    };
    let models = resolve_models(&restricted)?;
    let custom = read_custom_sources(&restricted)?;
    let units = units(&restricted);
    let mut out = Vec::new();
    for model in &models {
        if model.costs.is_none() {
            return Err(Error::MissingCost(format!("model {}", model.label)));
        }
        for &t in &restricted.times {
            for &b in &restricted.b_values {
                let prepared = prepare(&restricted, model, &custom, t, b)?;
                let draws: Vec<Draw> = units
                    .par_iter()
                    .map(|u| prepared.group.draw(u))
                    .collect::<Result<_>>()?;
                let mut offset = 0;
                for &spec in &restricted.channels {
                    for dist in 0..restricted.distributions.len() {
                        let block = &draws[offset..offset + restricted.repetitions];
                        offset += restricted.repetitions;
                        let per_rep: Vec<&[f64]> = block.iter().map(|d| d.costs.as_slice()).collect();
                        out.push(histogram(&prepared, spec, dist, &per_rep)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One computed cost-table entry against its printed reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table2Entry {
    pub model: String,
    pub quantity: &'static str,
    pub computed: f64,
    pub reference: f64,
    /// Decimal places of the printed reference.
    pub decimals: u32,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table2Report {
    pub entries: Vec<Table2Entry>,
    /// `E_{q_c}[ω]` per model, identically 1; the reweighting moment shown
    /// in the table is `E_p[ω]`.
    pub mean_qc_omega: Vec<(String, f64)>,
}

impl Table2Report {
    pub fn passes(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

impl fmt::Display for Table2Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:<16} {:>10} {:>10}  result",
            "model", "quantity", "computed", "reference"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<10} {:<16} {:>10.prec$} {:>10.prec$}  {}",
                e.model,
                e.quantity,
                e.computed,
                e.reference,
                if e.pass { "pass" } else { "FAIL" },
                prec = e.decimals as usize + 2,
            )?;
        }
        for (model, v) in &self.mean_qc_omega {
            writeln!(f, "{model}: E_qc[omega] = {v:.6}")?;
        }
        Ok(())
    }
}

/// Quantity label, printed value and its decimal places.
type Reference = (&'static str, f64, u32);

const TABLE2_REFERENCE: [(u8, [Reference; 7]); 2] = [
    (
        0,
        [
            ("sum C_A", 28.4, 1),
            ("sum C_B", 30.4, 1),
            ("E_p[omega]", 15.43, 2),
            ("E_p[C_B]", 3.38, 2),
            ("E_qc[C_B]", 0.22, 2),
            ("N_p E_p[C_B]", 6.76, 2),
            ("N_qc E_qc[C_B]", 3.6, 1),
        ],
    ),
    (
        1,
        [
            ("sum C_A", 10.5, 1),
            ("sum C_B", 48.3, 1),
            ("E_p[omega]", 15.02, 2),
            ("E_p[C_B]", 4.83, 2),
            ("E_qc[C_B]", 0.32, 2),
            ("N_p E_p[C_B]", 9.66, 2),
            ("N_qc E_qc[C_B]", 5.15, 2),
        ],
    ),
];

/// Expected-cost table of both lattice models under the default costs. The
/// sample-cost rows are in units of `t²λ_B²/ε`. Entries pass when they agree
/// with the reference to half a unit in its last printed digit.
pub fn table2_report() -> Result<Table2Report> {
    let costs = default_cost_table();
    let mut entries = Vec::new();
    let mut mean_qc_omega = Vec::new();
    for (variant, refs) in TABLE2_REFERENCE {
        let p = build_lattice_model(1.0, 1.0, variant)?;
        let b = p.part_b();
        let q_p = standard_distribution(b)?;
        let q_c = cost_distribution(b, &costs)?;
        let w = weight_profile(b, &q_c)?;
        let report = verify_cost_reduction(&p, &costs)?;
        let computed = [
            costs.total(p.part_a())?,
            costs.total(b)?,
            w.mean_p_omega,
            expected_cost(b, &q_p, &costs)?,
            expected_cost(b, &q_c, &costs)?,
            report.p_sample_cost,
            report.qc_sample_cost,
        ];
        let model = format!("lattice_{variant}");
        for ((quantity, reference, decimals), computed) in refs.into_iter().zip(computed) {
            let half_unit = 0.5 * 10f64.powi(-(decimals as i32));
            entries.push(Table2Entry {
                model: model.clone(),
                quantity,
                computed,
                reference,
                decimals,
                pass: (computed - reference).abs() <= half_unit + 1e-12,
            });
        }
        mean_qc_omega.push((model, w.mean_q_omega));
    }
    Ok(Table2Report {
        entries,
        mean_qc_omega,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanRecord {
    pub model: String,
    pub t: f64,
    pub b: f64,
    pub distribution: String,
    pub pure: ResourcePlan,
    /// `None` when the model has no cost table.
    pub composite: Option<ResourcePlan>,
    pub inputs: BoundParams,
}

/// Pure qDrift plans on the full Hamiltonian and composite plans on the
/// partition, for every `(model, t, b, distribution)` of the config.
pub fn plan_report(cfg: &ExperimentConfig) -> Result<Vec<PlanRecord>> {
    cfg.validate()?;
    let plan = cfg
        .plan
        .ok_or_else(|| Error::Config("bounds-plan needs a [plan] section".into()))?;
    let models = resolve_models(cfg)?;
    let custom = read_custom_sources(cfg)?;
    let mut out = Vec::new();
    for model in &models {
        let costs = model.costs.as_ref();
        for &t in &cfg.times {
            for &b in &cfg.b_values {
                let p = model.partition(cfg.a, b)?;
                let full = p.full();
                let mut bp = BoundParams::new(t, plan.epsilon, plan.delta, p.n_qubits())?;
                bp.kappa = plan.kappa;
                bp.alpha = plan.alpha;
                bp.validate()?;
                for spec in &cfg.distributions {
                    let q_full = distribution_for(spec, &full, costs, &custom)?;
                    let w_full = weight_profile(&full, &q_full)?;
                    let mean_cost = match costs {
                        Some(c) => expected_cost(&full, &q_full, c)?,
                        None => 1.0,
                    };
                    let pure = plan_pure_qdrift(full.lambda(), &bp, &w_full, mean_cost)?;
                    let composite = match costs {
                        Some(c) => {
                            let q_b = distribution_for(spec, p.part_b(), costs, &custom)?;
                            let w_b = weight_profile(p.part_b(), &q_b)?;
                            Some(plan_composite(&p, &q_b, c, &bp, &w_b)?)
                        }
                        None => None,
                    };
                    out.push(PlanRecord {
                        model: model.label.clone(),
                        t,
                        b,
                        distribution: spec.label(),
                        pure,
                        composite,
                        inputs: bp,
                    });
                }
            }
        }
    }
    Ok(out)
}
