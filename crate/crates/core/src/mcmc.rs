//! Chain orchestration: NUTS over `B`, Gibbs sweeps over `Z`, latent-field,
//! intercept and missing-data updates, and posterior summaries.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_product, CholFactor, SparsityPattern, SpdMatrix};
use crate::metrics::quantile_sorted;
use crate::nuts::{LogDensity, NutsConfig, NutsState, TransitionInfo};
use crate::posterior::{
    column_quad, draw_poisson_count, gaussian_layer, impute_missing_gaussian, poisson_loglik, scatter, to_theta,
    BartlettTarget, Family, LatentRowTarget, LatentState, ModelSpec, MAX_LINEAR_PREDICTOR,
};
use crate::sbartlett::{log_prior_diag, ColumnPlan, TransformPlan};

/// Standard deviation of the Gaussian prior on Poisson intercepts.
pub const INTERCEPT_PRIOR_SD: f64 = 10.0;

/// Fraction of divergent post-adaptation transitions that aborts a chain.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.9;

const MU_TUNE_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub nuts: NutsConfig,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Visit the `z_jk` in a fresh random order each sweep instead of column-major.
    pub random_sweep: bool,
    /// Initial random-walk step for the Poisson intercepts.
    pub mu_step: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            nuts: NutsConfig::default(),
            iterations: 10_000,
            burn_in: 8_000,
            thin: 1,
            seed: 0,
            random_sweep: false,
            mu_step: 0.1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.nuts.validate()?;
        if self.iterations <= self.burn_in {
            return Err(Error::invalid(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if !(self.mu_step > 0.0) || !self.mu_step.is_finite() {
            return Err(Error::invalid(format!("mu_step must be positive, got {}", self.mu_step)));
        }
        Ok(())
    }
}

/// Everything a chain carries between iterations.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub b: CholFactor,
    pub z: SparsityPattern,
    pub latent: LatentState,
    pub nuts: NutsState,
    /// One adaptation state per latent row (Poisson only).
    pub w_nuts: Vec<NutsState>,
    pub mu_step: f64,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub random_sweep: bool,
    mu_window: (usize, usize),
    mu_total: (usize, usize),
    /// Start/end offsets into `latent.y_missing` per data row.
    missing_rows: Vec<(usize, usize)>,
}

impl ChainState {
    /// `B = I`, every edge on, zeros (Gaussian) or log-count starting values
    /// (Poisson) for the latent quantities.
    pub fn new(model: &ModelSpec, cfg: &ChainConfig) -> Result<Self> {
        cfg.validate()?;
        let p = model.dim();
        let n = model.data.rows();
        let mut missing_rows = Vec::with_capacity(n);
        let mut offset = 0;
        for i in 0..n {
            let m = (0..p).filter(|&j| !model.data.is_observed(i, j)).count();
            missing_rows.push((offset, offset + m));
            offset += m;
        }
        let w_nuts = match model.family {
            Family::Gaussian => Vec::new(),
            Family::Poisson => vec![NutsState::new(cfg.nuts.clone())?; n],
        };
        Ok(Self {
            b: CholFactor::identity(p),
            z: SparsityPattern::full(p),
            latent: LatentState::initial(model),
            nuts: NutsState::new(cfg.nuts.clone())?,
            w_nuts,
            mu_step: cfg.mu_step,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            random_sweep: cfg.random_sweep,
            mu_window: (0, 0),
            mu_total: (0, 0),
            missing_rows,
        })
    }

    /// Current `Lambda = Q Q^T`.
    pub fn lambda(&self, model: &ModelSpec) -> Result<SpdMatrix> {
        let q = TransformPlan::new(&model.prior, &self.z)?.apply(&self.b);
        Ok(chol_product(&q))
    }

    /// Acceptance rate of the intercept updates so far.
    pub fn mu_acceptance(&self) -> Option<f64> {
        (self.mu_total.1 > 0).then(|| self.mu_total.0 as f64 / self.mu_total.1 as f64)
    }

    /// Joint log posterior of `(B, Z, latent)` up to the normalising constant:
    /// S-Bartlett prior, Bernoulli edge prior, Gaussian layer and (Poisson)
    /// the count likelihood.
    pub fn log_posterior(&self, model: &ModelSpec) -> Result<f64> {
        let target = BartlettTarget::new(model, &self.z, &self.latent)?;
        let mut lp = target.log_posterior(&self.b);
        let p = model.dim();
        for k in 0..p {
            for j in k + 1..p {
                lp += log_bernoulli(model.pi(j, k), self.z.get(j, k));
            }
        }
        if model.family == Family::Poisson {
            lp += poisson_loglik(&model.data, &self.latent);
            if model.fit_intercepts {
                lp += self.latent.mu.iter().map(|m| intercept_log_prior(*m)).sum::<f64>();
            }
        }
        Ok(lp)
    }
}

fn log_bernoulli(pi: f64, on: bool) -> f64 {
    if on {
        pi.ln()
    } else {
        (1.0 - pi).ln()
    }
}

fn intercept_log_prior(mu: f64) -> f64 {
    -0.5 * (mu / INTERCEPT_PRIOR_SD).powi(2)
}

/// One NUTS transition of `B` at fixed `(Z, latent)`.
pub fn nuts_update_b(state: &mut ChainState, model: &ModelSpec) -> Result<TransitionInfo> {
    let mut target = BartlettTarget::new(model, &state.z, &state.latent)?;
    let mut theta = to_theta(&state.b);
    let mut grad = vec![0.0; theta.len()];
    let mut logp = target.logp_grad(&theta, &mut grad);
    if !logp.is_finite() {
        return Err(Error::Overflow(logp));
    }
    let info = state.nuts.transition(&mut target, &mut theta, &mut logp, &mut grad, &mut state.rng);
    state.b = target.to_b(&theta);
    Ok(info)
}

/// One sweep of single-site Gibbs updates over every `z_jk`, `j > k`.
///
/// Only transform columns `k..p` are recomputed per flip, and the likelihood
/// change is read off cached per-column quadratic forms.
pub fn gibbs_update_z(state: &mut ChainState, model: &ModelSpec) -> Result<()> {
    let p = model.dim();
    if p < 2 {
        return Ok(());
    }
    let n = model.data.rows();
    let sc = scatter(&gaussian_layer(model, &state.latent), n, p);
    let psi = model.prior.psi();
    let b = &state.b;
    let z = &mut state.z;
    let mut plan = TransformPlan::new(&model.prior, z)?;
    let mut q = plan.apply(b);
    let mut quad: Vec<f64> = (0..p).map(|k| column_quad(&sc, &q, k)).collect();

    let mut sites: Vec<(usize, usize)> = (0..p).flat_map(|k| (k + 1..p).map(move |j| (j, k))).collect();
    if state.random_sweep {
        sites.shuffle(&mut state.rng);
    }

    for (j, k) in sites {
        let pi = model.pi(j, k);
        let current = z.get(j, k);
        let bkk = b.get(k, k);
        let lp_current =
            log_bernoulli(pi, current) + log_prior_diag(bkk, model.prior.diag_shape(z.free_count(k)));

        z.set(j, k, !current);
        let shape_alt = model.prior.diag_shape(z.free_count(k));
        let proposal = match ColumnPlan::build(psi, z, k) {
            Ok(col) => {
                let old = plan.column(k).clone();
                plan.set_column(k, col);
                let mut q_alt = q.clone();
                plan.apply_from(b, &mut q_alt, k);
                let quad_alt: Vec<f64> = (k..p).map(|c| column_quad(&sc, &q_alt, c)).collect();
                let delta: f64 = quad_alt.iter().zip(&quad[k..]).map(|(a, c)| a - c).sum();
                let lp = log_bernoulli(pi, !current) + log_prior_diag(bkk, shape_alt) - 0.5 * delta;
                Some((lp, old, q_alt, quad_alt))
            }
            Err(e) if e.is_numerical() => None,
            Err(e) => return Err(e),
        };

        let lp_alt = proposal.as_ref().map_or(f64::NEG_INFINITY, |t| t.0);
        let prob_alt = flip_probability(lp_current, lp_alt);
        let u: f64 = state.rng.random();
        match proposal {
            Some((_, _, q_alt, quad_alt)) if u < prob_alt => {
                q = q_alt;
                quad[k..].copy_from_slice(&quad_alt);
            }
            Some((_, old, _, _)) => {
                z.set(j, k, current);
                plan.set_column(k, old);
            }
            None => z.set(j, k, current),
        }
    }
    Ok(())
}

/// `P(alt)` from two unnormalised log masses.
fn flip_probability(lp_current: f64, lp_alt: f64) -> f64 {
    if lp_alt == f64::NEG_INFINITY {
        return 0.0;
    }
    if lp_current == f64::NEG_INFINITY {
        return 1.0;
    }
    let d = lp_current - lp_alt;
    if d.is_nan() {
        return 0.0;
    }
    1.0 / (1.0 + d.exp())
}

/// Redraws every missing Gaussian cell from its conditional given the
/// observed part of its row.
pub fn impute_gaussian(state: &mut ChainState, model: &ModelSpec, lambda: &SpdMatrix) -> Result<()> {
    let p = model.dim();
    let data = &model.data;
    let mask = data.mask();
    let mut row = vec![0.0; p];
    for (i, &(start, end)) in state.missing_rows.iter().enumerate() {
        if start == end {
            continue;
        }
        let obs = &mask[i * p..(i + 1) * p];
        row.copy_from_slice(&data.values()[i * p..(i + 1) * p]);
        impute_missing_gaussian(lambda, &mut row, obs, &mut state.rng)?;
        let mut slot = start;
        for j in 0..p {
            if !obs[j] {
                state.latent.y_missing[slot] = row[j];
                slot += 1;
            }
        }
    }
    Ok(())
}

/// One NUTS transition per latent row `w_i` given `Lambda` and `mu`.
pub fn update_latent_rows(state: &mut ChainState, model: &ModelSpec, lambda: &SpdMatrix) -> Result<usize> {
    let p = model.dim();
    let data = &model.data;
    let mut divergent = 0;
    let w = state.latent.w.as_mut().ok_or_else(|| Error::invalid("latent field missing"))?;
    let mut grad = vec![0.0; p];
    for i in 0..data.rows() {
        let mut target = LatentRowTarget {
            lambda,
            mu: &state.latent.mu,
            counts: &data.values()[i * p..(i + 1) * p],
            observed: &data.mask()[i * p..(i + 1) * p],
        };
        let mut x = w[i * p..(i + 1) * p].to_vec();
        let mut logp = target.logp_grad(&x, &mut grad);
        if !logp.is_finite() {
            return Err(Error::Overflow(logp));
        }
        let info = state.w_nuts[i].transition(&mut target, &mut x, &mut logp, &mut grad, &mut state.rng);
        divergent += info.divergent as usize;
        w[i * p..(i + 1) * p].copy_from_slice(&x);
    }
    Ok(divergent)
}

/// Random-walk Metropolis on each intercept `mu_j`. During burn-in the step
/// is nudged every few iterations towards 20-50% acceptance.
pub fn update_intercepts(state: &mut ChainState, model: &ModelSpec, tuning: bool) -> Result<()> {
    if !model.fit_intercepts {
        return Ok(());
    }
    let p = model.dim();
    let n = model.data.rows();
    let data = &model.data;
    let w = state.latent.w.as_ref().ok_or_else(|| Error::invalid("latent field missing"))?;
    for j in 0..p {
        let mu = state.latent.mu[j];
        let prop = mu + state.mu_step * state.rng.sample::<f64, _>(StandardNormal);
        let mut log_ratio = intercept_log_prior(prop) - intercept_log_prior(mu);
        let mut admissible = true;
        for i in 0..n {
            let wij = w[i * p + j];
            if prop + wij > MAX_LINEAR_PREDICTOR {
                admissible = false;
                break;
            }
            if data.is_observed(i, j) {
                let y = data.get(i, j);
                log_ratio += y * (prop - mu) - ((prop + wij).exp() - (mu + wij).exp());
            }
        }
        let u: f64 = state.rng.random();
        let accept = admissible && u.ln() < log_ratio;
        if accept {
            state.latent.mu[j] = prop;
        }
        state.mu_window.0 += accept as usize;
        state.mu_window.1 += 1;
        state.mu_total.0 += accept as usize;
        state.mu_total.1 += 1;
    }
    if tuning && state.mu_window.1 >= MU_TUNE_WINDOW * p {
        let rate = state.mu_window.0 as f64 / state.mu_window.1 as f64;
        if rate < 0.2 {
            state.mu_step *= 0.8;
        } else if rate > 0.5 {
            state.mu_step *= 1.25;
        }
        state.mu_window = (0, 0);
    }
    Ok(())
}

/// Draws every missing count from `Poisson(exp(mu_j + w_ij))`.
pub fn impute_poisson(state: &mut ChainState, model: &ModelSpec) -> Result<()> {
    let p = model.dim();
    for (i, &(start, end)) in state.missing_rows.iter().enumerate() {
        let mut slot = start;
        for j in 0..p {
            if slot == end {
                break;
            }
            if !model.data.is_observed(i, j) {
                state.latent.y_missing[slot] = draw_poisson_count(state.latent.eta(i, j), &mut state.rng)?;
                slot += 1;
            }
        }
    }
    Ok(())
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub iteration: usize,
    pub lambda: SpdMatrix,
    pub z: SparsityPattern,
    pub edge_count: usize,
    pub log_posterior: f64,
    /// Values at the data's missing cells, row-major cell order.
    pub imputed: Vec<f64>,
    pub step_size: f64,
    pub divergent: bool,
}

/// Sampler diagnostics at the end of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub iterations: usize,
    pub records: usize,
    pub divergences: usize,
    pub post_adaptation_transitions: usize,
    pub post_adaptation_divergences: usize,
    pub final_step_size: f64,
    pub mu_acceptance: Option<f64>,
    pub final_mu_step: f64,
}

/// One full iteration: `B`, then `Z`, then the family-specific latent updates.
pub fn step(state: &mut ChainState, model: &ModelSpec, tuning: bool) -> Result<TransitionInfo> {
    let info = nuts_update_b(state, model)?;
    gibbs_update_z(state, model)?;
    match model.family {
        Family::Gaussian => {
            if !state.latent.y_missing.is_empty() {
                let lambda = state.lambda(model)?;
                impute_gaussian(state, model, &lambda)?;
            }
        }
        Family::Poisson => {
            let lambda = state.lambda(model)?;
            update_latent_rows(state, model, &lambda)?;
            update_intercepts(state, model, tuning)?;
            impute_poisson(state, model)?;
        }
    }
    state.iteration += 1;
    Ok(info)
}

/// Runs a chain and hands each retained record to `sink` as it is produced.
pub fn run_chain_with<F>(model: &ModelSpec, cfg: &ChainConfig, mut sink: F) -> Result<ChainDiagnostics>
where
    F: FnMut(SampleRecord) -> Result<()>,
{
    let mut state = ChainState::new(model, cfg)?;
    let mut post_total = 0;
    let mut post_divergent = 0;
    let mut records = 0;
    for it in 0..cfg.iterations {
        let adapting = state.nuts.is_adapting();
        let info = step(&mut state, model, it < cfg.burn_in)?;
        if !adapting {
            post_total += 1;
            post_divergent += info.divergent as usize;
        }
        if it >= cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
            let lambda = state.lambda(model)?;
            let record = SampleRecord {
                iteration: it,
                lambda,
                edge_count: state.z.edge_count(),
                z: state.z.clone(),
                log_posterior: state.log_posterior(model)?,
                imputed: state.latent.y_missing.clone(),
                step_size: info.step_size,
                divergent: info.divergent,
            };
            sink(record)?;
            records += 1;
        }
    }
    if post_total > 0 && post_divergent as f64 > MAX_DIVERGENT_FRACTION * post_total as f64 {
        return Err(Error::AllDivergent {
            divergent: post_divergent,
            total: post_total,
        });
    }
    Ok(ChainDiagnostics {
        iterations: cfg.iterations,
        records,
        divergences: state.nuts.divergences(),
        post_adaptation_transitions: post_total,
        post_adaptation_divergences: post_divergent,
        final_step_size: state.nuts.step_size(),
        mu_acceptance: state.mu_acceptance(),
        final_mu_step: state.mu_step,
    })
}

/// Runs a chain and collects the retained records.
pub fn run_chain(model: &ModelSpec, cfg: &ChainConfig) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    run_chain_with(model, cfg, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// Posterior means and edge-count summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub samples: usize,
    pub threshold: f64,
    pub lambda_hat: SpdMatrix,
    /// Posterior inclusion probabilities, `p x p` row-major, unit diagonal.
    pub z_prob: Vec<f64>,
    pub z_hat: SparsityPattern,
    pub edge_mean: f64,
    pub edge_lower: f64,
    pub edge_upper: f64,
    /// Posterior mean of each missing cell.
    pub imputed_mean: Vec<f64>,
}

impl PosteriorSummary {
    /// Edge count as `mean (lower, upper)`, rounded to integers.
    pub fn edge_report(&self) -> String {
        format_edge_interval(self.edge_mean, self.edge_lower, self.edge_upper)
    }

    pub fn inclusion(&self, j: usize, k: usize) -> f64 {
        self.z_prob[j * self.lambda_hat.dim() + k]
    }
}

pub fn format_edge_interval(mean: f64, lower: f64, upper: f64) -> String {
    format!("{:.0} ({:.0}, {:.0})", mean, lower, upper)
}

/// Streaming counterpart of [`summarize`]; also keeps each missing cell's
/// draws for predictive scoring.
#[derive(Debug, Clone, Default)]
pub struct SummaryAccumulator {
    p: usize,
    count: usize,
    lambda_sum: Vec<f64>,
    z_sum: Vec<f64>,
    edges: Vec<f64>,
    cell_draws: Vec<Vec<f64>>,
}

impl SummaryAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: &SampleRecord) {
        let p = r.lambda.dim();
        if self.count == 0 {
            self.p = p;
            self.lambda_sum = vec![0.0; p * p];
            self.z_sum = vec![0.0; p * p];
            self.cell_draws = vec![Vec::new(); r.imputed.len()];
        }
        for (s, v) in self.lambda_sum.iter_mut().zip(r.lambda.as_slice()) {
            *s += v;
        }
        for j in 0..p {
            for k in 0..j {
                if r.z.get(j, k) {
                    self.z_sum[j * p + k] += 1.0;
                }
            }
        }
        self.edges.push(r.edge_count as f64);
        for (d, v) in self.cell_draws.iter_mut().zip(&r.imputed) {
            d.push(*v);
        }
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Posterior draws of each missing cell.
    pub fn cell_draws(&self) -> &[Vec<f64>] {
        &self.cell_draws
    }

    pub fn finish(&self, threshold: f64) -> Result<PosteriorSummary> {
        if self.count == 0 {
            return Err(Error::EmptyChain);
        }
        let p = self.p;
        let c = self.count as f64;
        let mut lower = Vec::with_capacity(p * (p + 1) / 2);
        for j in 0..p {
            for k in 0..=j {
                lower.push(self.lambda_sum[j * p + k] / c);
            }
        }
        let lambda_hat = SpdMatrix::from_lower_packed(p, &lower)?;
        let mut z_prob = vec![1.0; p * p];
        let mut z_hat = SparsityPattern::identity(p);
        for j in 0..p {
            for k in 0..j {
                let v = self.z_sum[j * p + k] / c;
                z_prob[j * p + k] = v;
                z_prob[k * p + j] = v;
                z_hat.set(j, k, v >= threshold);
            }
        }
        let mut sorted = self.edges.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(PosteriorSummary {
            samples: self.count,
            threshold,
            lambda_hat,
            z_prob,
            z_hat,
            edge_mean: sorted.iter().sum::<f64>() / c,
            edge_lower: quantile_sorted(&sorted, 0.025),
            edge_upper: quantile_sorted(&sorted, 0.975),
            imputed_mean: self.cell_draws.iter().map(|d| d.iter().sum::<f64>() / c).collect(),
        })
    }
}

/// Posterior mean of `Lambda`, inclusion frequencies, thresholded graph
/// (`z_hat >= threshold` keeps the edge) and the edge-count interval.
pub fn summarize(samples: &[SampleRecord], threshold: f64) -> Result<PosteriorSummary> {
    let mut acc = SummaryAccumulator::new();
    for r in samples {
        acc.push(r);
    }
    acc.finish(threshold)
}
