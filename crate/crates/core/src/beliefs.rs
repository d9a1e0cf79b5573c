//! Monte Carlo harness for the provider-belief model.
//!
//! Every provider draws its constant iid from a common positive distribution
//! with mean `c*`; the pool runs at the share-weighted geometric mean `c`.
//! A provider that scales its draw by `a` moves the aggregate to
//! `d = a^s * c`. The harness samples both on shared randomness so the two
//! are coupled draw-for-draw, and measures rather than assumes the gap
//! between `E[c]` and `c*`.
//!
//! Replicas are split into fixed-size shards, each with its own ChaCha
//! stream derived from the seed, evaluated in parallel and concatenated in
//! shard order. Results depend only on the seed and parameters.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{positive, toml_error, Error, Result};

/// Replicas per RNG stream.
pub const SHARD_SIZE: usize = 1 << 16;

/// Honest and misreport means must differ by this many standard errors to flag.
pub const FLAG_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeliefDistribution {
    /// Log-normal with log-scale `sigma`, located so its mean is `c*`.
    LogNormal { sigma: f64 },
    PointMass,
}

impl Default for BeliefDistribution {
    fn default() -> Self {
        BeliefDistribution::LogNormal { sigma: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefModel {
    #[serde(default)]
    pub distribution: BeliefDistribution,
    pub c_star: f64,
    pub shares: Vec<f64>,
    pub seed: u64,
}

enum Sampler {
    LogNormal(LogNormal<f64>),
    Point(f64),
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Point(c) => *c,
        }
    }
}

impl BeliefModel {
    pub fn new(distribution: BeliefDistribution, c_star: f64, shares: Vec<f64>, seed: u64) -> Result<Self> {
        let m = BeliefModel {
            distribution,
            c_star,
            shares,
            seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        positive("c_star", self.c_star)?;
        if self.shares.is_empty() {
            return Err(Error::EmptyPool);
        }
        if self.shares.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Validation(vec!["shares must be nonnegative".into()]));
        }
        let total: f64 = self.shares.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(vec![format!("shares sum to {total}, not 1")]));
        }
        if let BeliefDistribution::LogNormal { sigma } = self.distribution {
            positive("sigma", sigma)?;
        }
        Ok(())
    }

    fn sampler(&self) -> Sampler {
        match self.distribution {
            BeliefDistribution::LogNormal { sigma } => {
                let mu = self.c_star.ln() - sigma * sigma / 2.0;
                Sampler::LogNormal(LogNormal::new(mu, sigma).expect("sigma validated positive"))
            }
            BeliefDistribution::PointMass => Sampler::Point(self.c_star),
        }
    }

    fn share(&self, provider: usize) -> Result<f64> {
        self.shares
            .get(provider)
            .copied()
            .ok_or_else(|| Error::Validation(vec![format!("no provider at index {provider}")]))
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSample {
    pub values: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    /// `mean - c*`; nonzero in general since the geometric mean of draws
    /// sits below their arithmetic mean.
    pub bias: f64,
    /// `prod_l (mean of c_l draws)^s_l`.
    pub geometric_mean_of_means: f64,
}

fn draw_shard(model: &BeliefModel, sampler: &Sampler, shard: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(shard as u64);
    let mut values = Vec::with_capacity(len);
    let mut sums = vec![0.0; model.shares.len()];
    for _ in 0..len {
        let mut c = 1.0;
        for (l, &s) in model.shares.iter().enumerate() {
            let draw = sampler.draw(&mut rng);
            sums[l] += draw;
            if s > 0.0 {
                c *= draw.powf(s);
            }
        }
        values.push(c);
    }
    (values, sums)
}

/// `replicas` independent draws of the aggregate constant.
pub fn sample_aggregate(model: &BeliefModel, replicas: usize) -> Result<AggregateSample> {
    model.validate()?;
    if replicas == 0 {
        return Err(Error::Validation(vec!["replicas must be at least 1".into()]));
    }
    let sampler = model.sampler();
    let shards = replicas.div_ceil(SHARD_SIZE);
    let parts: Vec<_> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let len = SHARD_SIZE.min(replicas - k * SHARD_SIZE);
            draw_shard(model, &sampler, k, len)
        })
        .collect();

    let mut values = Vec::with_capacity(replicas);
    let mut sums = vec![0.0; model.shares.len()];
    for (v, s) in parts {
        values.extend(v);
        for (acc, x) in sums.iter_mut().zip(s) {
            *acc += x;
        }
    }
    let (mean, se) = mean_se(&values);
    let geometric_mean_of_means = model
        .shares
        .iter()
        .zip(&sums)
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, sum)| (sum / replicas as f64).powf(*s))
        .product();
    Ok(AggregateSample {
        values,
        mean,
        se,
        bias: mean - model.c_star,
        geometric_mean_of_means,
    })
}

/// `a^s` for the given provider.
pub fn misreport_factor(model: &BeliefModel, provider: usize, a: f64) -> Result<f64> {
    positive("a", a)?;
    Ok(a.powf(model.share(provider)?))
}

/// Aggregate samples when `provider` reports `a` times its draw, on the same
/// randomness as [`sample_aggregate`]: element `i` is `a^s * c_i`.
pub fn misreport_aggregate(model: &BeliefModel, provider: usize, a: f64, replicas: usize) -> Result<Vec<f64>> {
    let factor = misreport_factor(model, provider, a)?;
    let honest = sample_aggregate(model, replicas)?;
    Ok(scale(&honest.values, factor))
}

fn scale(values: &[f64], factor: f64) -> Vec<f64> {
    values.iter().map(|c| factor * c).collect()
}

// ---------------------------------------------------------------------------
// Density transform
// ---------------------------------------------------------------------------

/// Which change of variables predicts the misreport density from `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityForm {
    /// `g(x) = a^-s * f(a^-s * x)`, the pushforward of `f` under `x -> a^s x`.
    Pushforward,
    /// `g(x) = a^-s * f(a^s * x)`; not a density of `d` unless `a = 1`.
    Inverted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub bins: usize,
    pub replicas: usize,
    /// Left edges of the `d` histogram bins, plus the final right edge.
    pub edges: Vec<f64>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    /// `max |observed - predicted|` over bins, divided by the peak predicted
    /// density so that the figure does not depend on the scale of `c`.
    pub discrepancy: f64,
    pub mass_observed: f64,
    pub mass_predicted: f64,
}

/// Fraction of sorted `values` in `[lo, hi)`.
fn mass_in(sorted: &[f64], lo: f64, hi: f64) -> f64 {
    let a = sorted.partition_point(|v| *v < lo);
    let b = sorted.partition_point(|v| *v < hi);
    (b - a) as f64 / sorted.len() as f64
}

/// Compares the histogram of misreport samples with the density predicted
/// from the honest-sample histogram by a change of variables.
pub fn density_transform_check(
    model: &BeliefModel,
    provider: usize,
    a: f64,
    bins: usize,
    replicas: usize,
) -> Result<DensityReport> {
    density_check_with(model, provider, a, bins, replicas, DensityForm::Pushforward)
}

pub fn density_check_with(
    model: &BeliefModel,
    provider: usize,
    a: f64,
    bins: usize,
    replicas: usize,
    form: DensityForm,
) -> Result<DensityReport> {
    if bins == 0 {
        return Err(Error::Validation(vec!["bins must be at least 1".into()]));
    }
    let factor = misreport_factor(model, provider, a)?;
    let c = sample_aggregate(model, replicas)?.values;
    let d = scale(&c, factor);
    Ok(density_report(c, d, factor, bins, form))
}

/// As [`density_transform_check`], but predicts from an honest sample drawn
/// independently of the misreport sample, so the discrepancy measures
/// sampling error as well as the transform.
pub fn density_check_independent(
    model: &BeliefModel,
    provider: usize,
    a: f64,
    bins: usize,
    replicas: usize,
) -> Result<DensityReport> {
    if bins == 0 {
        return Err(Error::Validation(vec!["bins must be at least 1".into()]));
    }
    let factor = misreport_factor(model, provider, a)?;
    let d = misreport_aggregate(model, provider, a, replicas)?;
    let other = BeliefModel {
        seed: model.seed ^ INDEPENDENT_SEED,
        ..model.clone()
    };
    let c = sample_aggregate(&other, replicas)?.values;
    Ok(density_report(c, d, factor, bins, DensityForm::Pushforward))
}

const INDEPENDENT_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

fn density_report(mut c: Vec<f64>, mut d: Vec<f64>, factor: f64, bins: usize, form: DensityForm) -> DensityReport {
    let replicas = d.len();
    c.sort_by(f64::total_cmp);
    d.sort_by(f64::total_cmp);

    // The last edge is nudged past the maximum so every sample falls in a bin.
    let top = d[d.len() - 1];
    let top = if top > 0.0 { top * (1.0 + 1e-12) + f64::MIN_POSITIVE } else { 1.0 };
    let width = top / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|j| j as f64 * width).collect();
    edges.push(top);

    // Predicted mass of [lo, hi) is the c-mass of its preimage under the
    // assumed map; density divides by the d-bin width.
    let preimage = match form {
        DensityForm::Pushforward => 1.0 / factor,
        DensityForm::Inverted => factor,
    };
    let jacobian = match form {
        DensityForm::Pushforward => 1.0,
        DensityForm::Inverted => 1.0 / (factor * factor),
    };
    let mut observed = Vec::with_capacity(bins);
    let mut predicted = Vec::with_capacity(bins);
    for j in 0..bins {
        let (lo, hi) = (edges[j], edges[j + 1]);
        let w = hi - lo;
        observed.push(mass_in(&d, lo, hi) / w);
        predicted.push(jacobian * mass_in(&c, lo * preimage, hi * preimage) / w);
    }
    let peak = predicted.iter().cloned().fold(0.0, f64::max);
    let sup = observed
        .iter()
        .zip(&predicted)
        .map(|(o, p)| (o - p).abs())
        .fold(0.0, f64::max);
    let mass = |v: &[f64]| v.iter().zip(edges.windows(2)).map(|(g, e)| g * (e[1] - e[0])).sum();
    DensityReport {
        bins,
        replicas,
        mass_observed: mass(&observed),
        mass_predicted: mass(&predicted),
        discrepancy: if peak > 0.0 { sup / peak } else { sup },
        edges,
        observed,
        predicted,
    }
}

// ---------------------------------------------------------------------------
// Expected profit
// ---------------------------------------------------------------------------

/// Profit as a function of the aggregate constant, peaked at `c*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfitFunction {
    /// `exp(-((ln x - ln c*) / width)^2)`.
    PeakedLog { c_star: f64, width: f64 },
}

impl ProfitFunction {
    pub fn peaked_log(c_star: f64) -> Self {
        ProfitFunction::PeakedLog { c_star, width: 1.0 }
    }

    pub fn c_star(&self) -> f64 {
        match *self {
            ProfitFunction::PeakedLog { c_star, .. } => c_star,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ProfitFunction::PeakedLog { c_star, width } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let z = (x.ln() - c_star.ln()) / width;
                (-z * z).exp()
            }
        }
    }

    /// Samples a log-spaced grid: the peak sits at `c*`, values rise strictly
    /// below it and fall strictly above it, and both tails approach 0.
    pub fn validate(&self) -> bool {
        let c = self.c_star();
        let grid: Vec<f64> = (-400..=400).map(|i| c * (f64::from(i) / 100.0).exp()).collect();
        let peak = self.eval(c);
        let rising = grid.windows(2).filter(|w| w[1] <= c).all(|w| self.eval(w[0]) < self.eval(w[1]));
        let falling = grid.windows(2).filter(|w| w[0] >= c).all(|w| self.eval(w[0]) > self.eval(w[1]));
        let tails = self.eval(c * 1e-6) < 1e-3 * peak && self.eval(c * 1e6) < 1e-3 * peak;
        grid.iter().all(|x| self.eval(*x) <= peak) && rising && falling && tails
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HonestyRow {
    pub a: f64,
    pub mean_honest: f64,
    pub mean_misreport: f64,
    pub se_honest: f64,
    pub se_misreport: f64,
    /// Honest mean exceeds misreport mean by at least [`FLAG_SIGMAS`]
    /// combined standard errors.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HonestyTable {
    pub rows: Vec<HonestyRow>,
    pub replicas: usize,
    pub mean_c: f64,
    pub se_c: f64,
    pub bias: f64,
    pub geometric_mean_of_means: f64,
}

impl HonestyTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn all_flagged_except_control(&self) -> bool {
        self.rows.iter().filter(|r| r.a != 1.0).all(|r| r.flag)
    }
}

/// Estimates `E[r(c)]` and `E[r(d)]` for each `a` on coupled samples.
pub fn honesty_experiment(
    model: &BeliefModel,
    profit: &ProfitFunction,
    provider: usize,
    a_grid: &[f64],
    replicas: usize,
) -> Result<HonestyTable> {
    let sample = sample_aggregate(model, replicas)?;
    let honest: Vec<f64> = sample.values.par_iter().map(|c| profit.eval(*c)).collect();
    let (mean_honest, se_honest) = mean_se(&honest);
    let mut rows = Vec::with_capacity(a_grid.len());
    for &a in a_grid {
        let factor = misreport_factor(model, provider, a)?;
        let mis: Vec<f64> = sample.values.par_iter().map(|c| profit.eval(factor * c)).collect();
        let (mean_misreport, se_misreport) = mean_se(&mis);
        let se = (se_honest * se_honest + se_misreport * se_misreport).sqrt();
        rows.push(HonestyRow {
            a,
            mean_honest,
            mean_misreport,
            se_honest,
            se_misreport,
            flag: mean_honest > mean_misreport && mean_honest - mean_misreport >= FLAG_SIGMAS * se,
        });
    }
    Ok(HonestyTable {
        rows,
        replicas,
        mean_c: sample.mean,
        se_c: sample.se,
        bias: sample.bias,
        geometric_mean_of_means: sample.geometric_mean_of_means,
    })
}

// ---------------------------------------------------------------------------
// Experiment files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_density_replicas")]
    pub replicas: usize,
    pub a: f64,
}

fn default_bins() -> usize {
    64
}

fn default_density_replicas() -> usize {
    1_000_000
}

fn default_replicas() -> usize {
    100_000
}

/// A beliefs experiment as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub model: BeliefModel,
    pub profit: Option<ProfitFunction>,
    #[serde(default)]
    pub provider: usize,
    pub a_grid: Vec<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub table: HonestyTable,
    pub density: Option<DensityReport>,
}

impl Experiment {
    pub fn from_toml(text: &str) -> Result<Self> {
        let e: Experiment = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        e.model.validate()?;
        Ok(e)
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let profit = self
            .profit
            .unwrap_or_else(|| ProfitFunction::peaked_log(self.model.c_star));
        let table = honesty_experiment(&self.model, &profit, self.provider, &self.a_grid, self.replicas)?;
        let density = self
            .density
            .as_ref()
            .map(|d| density_transform_check(&self.model, self.provider, d.a, d.bins, d.replicas))
            .transpose()?;
        Ok(ExperimentReport { table, density })
    }
}
