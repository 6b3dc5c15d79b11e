//! Ground-truth generators, data simulation with missingness, and replica
//! orchestration for simulation studies.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_product, cholesky, SparsityPattern, SpdMatrix};
use crate::mcmc::{run_chain_with, ChainConfig, SummaryAccumulator};
use crate::metrics::{crps_mean, kl_oriented, quantile_sorted, sensitivity, specificity, EvalReport, KlOrientation};
use crate::posterior::{draw_poisson_count, DataMatrix, Family, ModelSpec};
use crate::sbartlett::{sample_prior, SBartlettParams};

/// Sparsity structure of the true precision matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TruthPattern {
    /// Non-zeros within `w` of the diagonal.
    Band { w: usize },
    /// Each sub-diagonal entry is zero with probability `alpha`.
    Random { alpha: f64 },
}

impl std::str::FromStr for TruthPattern {
    type Err = Error;

    /// `band:W` or `random:ALPHA`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let bad = || Error::invalid(format!("unknown pattern '{s}' (expected band:W or random:ALPHA)"));
        match name.trim().to_ascii_lowercase().as_str() {
            "band" => Ok(TruthPattern::Band {
                w: arg.trim().parse().map_err(|_| bad())?,
            }),
            "random" => Ok(TruthPattern::Random {
                alpha: arg.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for TruthPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruthPattern::Band { w } => write!(f, "band:{w}"),
            TruthPattern::Random { alpha } => write!(f, "random:{alpha}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingMode {
    /// Uniformly chosen cells.
    #[default]
    Cells,
    /// Uniformly chosen whole rows.
    Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub p: usize,
    pub pattern: TruthPattern,
    pub n: usize,
    pub family: Family,
    /// Intercept on the linear-predictor scale.
    pub mu: f64,
    pub pmiss: f64,
    pub missing: MissingMode,
    pub replicas: usize,
    pub seed: u64,
    /// Degrees of freedom of the fitting prior (scale is the identity).
    pub nu: f64,
    /// Prior edge-inclusion probability of the fit.
    pub pi: f64,
    pub threshold: f64,
    pub kl_orientation: KlOrientation,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            p: 10,
            pattern: TruthPattern::Band { w: 1 },
            n: 100,
            family: Family::Gaussian,
            mu: 0.0,
            pmiss: 0.1,
            missing: MissingMode::Cells,
            replicas: 20,
            seed: 0,
            nu: 3.0,
            pi: 0.5,
            threshold: 0.5,
            kl_orientation: KlOrientation::EstimateToTruth,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::invalid("p must be at least 2"));
        }
        if self.replicas == 0 {
            return Err(Error::invalid("replicas must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.pmiss) {
            return Err(Error::invalid(format!("pmiss must be in [0, 1), got {}", self.pmiss)));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::invalid(format!("pi must be in [0, 1], got {}", self.pi)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::invalid(format!("nu must be positive, got {}", self.nu)));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu must be finite"));
        }
        match self.pattern {
            TruthPattern::Band { w } if w == 0 || w >= self.p => Err(Error::invalid(format!(
                "band width must satisfy 1 <= w < p, got w = {w}, p = {}",
                self.p
            ))),
            TruthPattern::Random { alpha } if !(0.0..1.0).contains(&alpha) => {
                Err(Error::invalid(format!("alpha must be in [0, 1), got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn fit_prior(&self) -> Result<SBartlettParams> {
        SBartlettParams::identity(self.p, self.nu)
    }
}

/// Rescales `lambda` to `D lambda D` with `D = diag(sqrt(diag(lambda^-1)))`,
/// so that the implied marginal variances are all one.
pub fn rescale_unit_variance(lambda: &SpdMatrix) -> Result<SpdMatrix> {
    let inv = lambda.inverse()?;
    let d: Vec<f64> = (0..lambda.dim()).map(|k| inv.get(k, k).sqrt()).collect();
    Ok(lambda.scale_symmetric(&d))
}

/// Banded precision with unit diagonal and `-0.999 / (2w)` inside the band,
/// rescaled to unit marginal variances.
pub fn banded_truth(p: usize, w: usize) -> Result<SpdMatrix> {
    if w == 0 || w >= p {
        return Err(Error::invalid(format!("band width must satisfy 1 <= w < p, got w = {w}, p = {p}")));
    }
    let v = -0.999 / (2.0 * w as f64);
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| match j.abs_diff(k) {
                    0 => 1.0,
                    d if d <= w => v,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    rescale_unit_variance(&SpdMatrix::from_rows(&rows)?)
}

/// Bernoulli(1 - alpha) pattern, a prior draw of `Lambda` given it, then
/// unit-variance rescaling.
pub fn random_truth<R: Rng + ?Sized>(
    p: usize,
    alpha: f64,
    prior: &SBartlettParams,
    rng: &mut R,
) -> Result<(SpdMatrix, SparsityPattern)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must be in [0, 1), got {alpha}")));
    }
    let z = SparsityPattern::from_fn(p, |_, _| rng.random::<f64>() >= alpha);
    let q = sample_prior(prior, &z, rng)?;
    let lambda = rescale_unit_variance(&chol_product(&q))?;
    Ok((lambda, z))
}

/// Simulated data set: the masked matrix handed to the sampler plus the
/// values it hides.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub data: DataMatrix,
    /// All `n x p` values before masking.
    pub complete: Vec<f64>,
    /// True latent field (Poisson only).
    pub w: Option<Vec<f64>>,
}

impl SimulatedData {
    /// True values at the masked cells, row-major cell order.
    pub fn held_out(&self) -> Vec<f64> {
        let p = self.data.cols();
        self.data
            .missing_cells()
            .into_iter()
            .map(|(i, j)| self.complete[i * p + j])
            .collect()
    }
}

/// Draws `n` rows from `N(0, truth^-1)` (shifted by `mu` for Gaussian data,
/// or used as the latent field of Poisson counts) and masks
/// `round(pmiss n p)` cells, or `round(pmiss n)` rows, uniformly at random.
pub fn simulate_data<R: Rng + ?Sized>(truth: &SpdMatrix, scenario: &SimScenario, rng: &mut R) -> Result<SimulatedData> {
    let p = truth.dim();
    if p != scenario.p {
        return Err(Error::DimensionMismatch {
            expected: scenario.p,
            found: p,
        });
    }
    let n = scenario.n;
    let l = cholesky(truth)?;
    let mut field = vec![0.0; n * p];
    for row in field.chunks_mut(p) {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        l.solve_upper_in_place(row);
    }
    let (complete, w) = match scenario.family {
        Family::Gaussian => (field.iter().map(|x| x + scenario.mu).collect(), None),
        Family::Poisson => {
            let counts = field
                .iter()
                .map(|x| draw_poisson_count(scenario.mu + x, rng))
                .collect::<Result<Vec<_>>>()?;
            (counts, Some(field))
        }
    };
    let mut observed = vec![true; n * p];
    match scenario.missing {
        MissingMode::Cells => {
            let m = (scenario.pmiss * (n * p) as f64).round() as usize;
            for c in index::sample(rng, n * p, m.min(n * p)) {
                observed[c] = false;
            }
        }
        MissingMode::Rows => {
            let m = (scenario.pmiss * n as f64).round() as usize;
            for i in index::sample(rng, n, m.min(n)) {
                observed[i * p..(i + 1) * p].iter_mut().for_each(|o| *o = false);
            }
        }
    }
    Ok(SimulatedData {
        data: DataMatrix::new(n, p, complete.clone(), observed)?,
        complete,
        w,
    })
}

/// Truth and pattern for one replica.
pub fn generate_truth<R: Rng + ?Sized>(scenario: &SimScenario, rng: &mut R) -> Result<(SpdMatrix, SparsityPattern)> {
    match scenario.pattern {
        TruthPattern::Band { w } => Ok((banded_truth(scenario.p, w)?, SparsityPattern::band(scenario.p, w))),
        TruthPattern::Random { alpha } => random_truth(scenario.p, alpha, &scenario.fit_prior()?, rng),
    }
}

/// Seed of replica `index`.
pub fn replica_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// One row of a study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaResult {
    pub replica: usize,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub divergences: usize,
    /// Error message of a failed replica.
    pub error: Option<String>,
}

/// Median and 95% interval of one metric across successful replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile_sorted(&v, 0.5),
            lower: quantile_sorted(&v, 0.025),
            upper: quantile_sorted(&v, 0.975),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAggregate {
    pub succeeded: usize,
    pub failed: usize,
    pub sensitivity: Option<MetricSummary>,
    pub specificity: Option<MetricSummary>,
    pub kl_discrepancy: Option<MetricSummary>,
    pub crps: Option<MetricSummary>,
    pub edge_count: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub replicas: Vec<ReplicaResult>,
    pub aggregate: StudyAggregate,
}

/// Simulates, fits and scores one replica.
pub fn run_replica(scenario: &SimScenario, chain: &ChainConfig, index: usize) -> Result<(EvalReport, usize)> {
    let seed = replica_seed(scenario.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, z_true) = generate_truth(scenario, &mut rng)?;
    let sim = simulate_data(&truth, scenario, &mut rng)?;
    let model = ModelSpec::new(
        scenario.family,
        sim.data.clone(),
        ModelSpec::uniform_pi(scenario.p, scenario.pi),
        scenario.fit_prior()?,
    )?;
    let cfg = ChainConfig {
        seed: rng.next_u64(),
        ..chain.clone()
    };
    let mut acc = SummaryAccumulator::new();
    let diag = run_chain_with(&model, &cfg, |r| {
        acc.push(&r);
        Ok(())
    })?;
    let summary = acc.finish(scenario.threshold)?;
    let report = EvalReport {
        sensitivity: sensitivity(&z_true, &summary.z_hat)?,
        specificity: specificity(&z_true, &summary.z_hat)?,
        kl_discrepancy: kl_oriented(&summary.lambda_hat, &truth, scenario.kl_orientation)?,
        kl_orientation: scenario.kl_orientation,
        crps_mean: crps_mean(acc.cell_draws(), &sim.held_out())?,
        edge_count_mean: summary.edge_mean,
        edge_count_lower: summary.edge_lower,
        edge_count_upper: summary.edge_upper,
    };
    Ok((report, diag.divergences))
}

/// Runs every replica (in parallel on the current rayon pool); failures are
/// recorded per replica rather than aborting the study.
pub fn run_study(scenario: &SimScenario, chain: &ChainConfig) -> Result<StudyResult> {
    scenario.validate()?;
    chain.validate()?;
    let replicas: Vec<ReplicaResult> = (0..scenario.replicas)
        .into_par_iter()
        .map(|i| {
            let seed = replica_seed(scenario.seed, i);
            match run_replica(scenario, chain, i) {
                Ok((report, divergences)) => ReplicaResult {
                    replica: i,
                    seed,
                    report: Some(report),
                    divergences,
                    error: None,
                },
                Err(e) => ReplicaResult {
                    replica: i,
                    seed,
                    report: None,
                    divergences: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let ok: Vec<&EvalReport> = replicas.iter().filter_map(|r| r.report.as_ref()).collect();
    let pick = |f: &dyn Fn(&EvalReport) -> Option<f64>| MetricSummary::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    let aggregate = StudyAggregate {
        succeeded: ok.len(),
        failed: replicas.len() - ok.len(),
        sensitivity: pick(&|r| Some(r.sensitivity)),
        specificity: pick(&|r| Some(r.specificity)),
        kl_discrepancy: pick(&|r| Some(r.kl_discrepancy)),
        crps: pick(&|r| r.crps_mean),
        edge_count: pick(&|r| Some(r.edge_count_mean)),
    };
    Ok(StudyResult { replicas, aggregate })
}
