//! Model specification, log-posterior of the Bartlett matrix `B`, and the
//! missing-data / latent-field conditionals.
//!
//! Sampling coordinates for `B` use packed row-major lower-triangular order;
//! diagonal slots hold `log b_kk`, sub-diagonal slots hold `b_jk` as is.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{chol_product, cholesky_packed, tri_index, CholFactor, SparsityPattern, SpdMatrix};
use crate::nuts::LogDensity;
use crate::sbartlett::{log_prior_b, SBartlettParams, TransformPlan};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest linear predictor accepted when drawing Poisson counts.
pub const MAX_LINEAR_PREDICTOR: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::invalid(format!(
                "unknown family '{other}' (expected gaussian or poisson)"
            ))),
        }
    }
}

/// `n x p` data with an observation mask. Values at unobserved cells are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                found: values.len(),
            });
        }
        if observed.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                found: observed.len(),
            });
        }
        Ok(Self { n, p, values, observed })
    }

    /// Fully observed data.
    pub fn complete(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, p, values, vec![true; n * p])
    }

    pub fn empty(p: usize) -> Self {
        Self {
            n: 0,
            p,
            values: Vec::new(),
            observed: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.p + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    /// Unobserved cells in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        (0..self.n * self.p)
            .filter(|&c| !self.observed[c])
            .map(|c| (c / self.p, c % self.p))
            .collect()
    }

    /// Copy with the given cells masked out.
    pub fn with_masked(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, j) in cells {
            out.observed[i * self.p + j] = false;
        }
        out
    }
}

/// Likelihood family, data, edge-inclusion probabilities and the S-Bartlett prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub data: DataMatrix,
    /// `p x p` row-major inclusion probabilities; only `j > k` entries are read.
    pub pi: Vec<f64>,
    pub prior: SBartlettParams,
    /// Sample outcome-specific intercepts (Poisson only).
    pub fit_intercepts: bool,
}

impl ModelSpec {
    pub fn new(family: Family, data: DataMatrix, pi: Vec<f64>, prior: SBartlettParams) -> Result<Self> {
        let p = prior.dim();
        if data.cols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: data.cols(),
            });
        }
        if pi.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                found: pi.len(),
            });
        }
        for j in 0..p {
            for k in 0..j {
                let v = pi[j * p + k];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("pi[{j},{k}] = {v} is outside [0, 1]")));
                }
                if v != pi[k * p + j] {
                    return Err(Error::invalid(format!("pi is not symmetric at ({j}, {k})")));
                }
            }
        }
        if family == Family::Poisson {
            for i in 0..data.rows() {
                for j in 0..p {
                    if data.is_observed(i, j) {
                        let y = data.get(i, j);
                        if !(y >= 0.0) || y.fract() != 0.0 {
                            return Err(Error::invalid(format!(
                                "Poisson data must be non-negative integers; cell ({i}, {j}) = {y}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            family,
            data,
            pi,
            prior,
            fit_intercepts: family == Family::Poisson,
        })
    }

    /// Constant inclusion probability on every edge.
    pub fn uniform_pi(p: usize, prob: f64) -> Vec<f64> {
        let mut pi = vec![prob; p * p];
        for k in 0..p {
            pi[k * p + k] = 1.0;
        }
        pi
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    #[inline]
    pub fn pi(&self, j: usize, k: usize) -> f64 {
        self.pi[j * self.dim() + k]
    }
}

/// Latent quantities carried alongside `B` and `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub n: usize,
    pub p: usize,
    /// Latent Gaussian field, `n x p` row-major (Poisson only).
    pub w: Option<Vec<f64>>,
    /// Outcome intercepts `mu_j` (Poisson only; zeros otherwise).
    pub mu: Vec<f64>,
    /// Imputed values at the data's missing cells, in row-major cell order.
    pub y_missing: Vec<f64>,
}

impl LatentState {
    /// Starting values: zeros for Gaussian imputations; for Poisson,
    /// `mu_j = log(mean_j + 0.5)` and `w_ij = log(y_ij + 0.5) - mu_j`.
    pub fn initial(model: &ModelSpec) -> Self {
        let data = &model.data;
        let (n, p) = (data.rows(), data.cols());
        let missing = data.missing_cells();
        match model.family {
            Family::Gaussian => Self {
                n,
                p,
                w: None,
                mu: vec![0.0; p],
                y_missing: vec![0.0; missing.len()],
            },
            Family::Poisson => {
                let mut mu = vec![0.0; p];
                for (j, m) in mu.iter_mut().enumerate() {
                    let (s, c) = (0..n)
                        .filter(|&i| data.is_observed(i, j))
                        .fold((0.0, 0usize), |(s, c), i| (s + data.get(i, j), c + 1));
                    let mean = if c > 0 { s / c as f64 } else { 1.0 };
                    *m = if model.fit_intercepts { (mean + 0.5).ln() } else { 0.0 };
                }
                let mut w = vec![0.0; n * p];
                for i in 0..n {
                    for j in 0..p {
                        if data.is_observed(i, j) {
                            w[i * p + j] = (data.get(i, j) + 0.5).ln() - mu[j];
                        }
                    }
                }
                let y_missing = missing
                    .iter()
                    .map(|&(_, j)| mu[j].exp().round())
                    .collect();
                Self {
                    n,
                    p,
                    w: Some(w),
                    mu,
                    y_missing,
                }
            }
        }
    }

    /// Linear predictor `mu_j + w_ij`.
    pub fn eta(&self, i: usize, j: usize) -> f64 {
        let w = self.w.as_ref().map_or(0.0, |w| w[i * self.p + j]);
        self.mu[j] + w
    }
}

/// Data with imputed values written into the missing cells, row-major.
pub fn completed_data(data: &DataMatrix, imputed: &[f64]) -> Vec<f64> {
    let mut y = data.values().to_vec();
    for ((i, j), v) in data.missing_cells().into_iter().zip(imputed) {
        y[i * data.cols() + j] = *v;
    }
    y
}

/// `Y^T Y` for row-major `n x p` data.
pub fn scatter(y: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for row in y.chunks_exact(p).take(n) {
        for j in 0..p {
            let yj = row[j];
            if yj == 0.0 {
                continue;
            }
            for k in 0..=j {
                c[j * p + k] += yj * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            c[k * p + j] = c[j * p + k];
        }
    }
    c
}

/// `sum_i log N_p(y_i | 0, (Q Q^T)^-1)` for complete row-major data.
pub fn gaussian_loglik(y: &[f64], n: usize, q: &CholFactor) -> f64 {
    let p = q.dim();
    let mut quad = 0.0;
    for row in y.chunks_exact(p).take(n) {
        let v = q.transpose_mul(row);
        quad += v.iter().map(|x| x * x).sum::<f64>();
    }
    -0.5 * (n * p) as f64 * LN_2PI + 0.5 * n as f64 * q.log_det_product() - 0.5 * quad
}

/// Poisson log-likelihood (log link) over observed cells.
pub fn poisson_loglik(data: &DataMatrix, latent: &LatentState) -> f64 {
    let mut ll = 0.0;
    for i in 0..data.rows() {
        for j in 0..data.cols() {
            if data.is_observed(i, j) {
                let y = data.get(i, j);
                let eta = latent.eta(i, j);
                ll += y * eta - eta.exp() - ln_gamma(y + 1.0);
            }
        }
    }
    ll
}

/// `q_k^T C q_k` for column `k` of `q` and a `p x p` scatter matrix `C`.
pub fn column_quad(scatter: &[f64], q: &CholFactor, k: usize) -> f64 {
    let p = q.dim();
    let mut s = 0.0;
    for a in k..p {
        let qa = q.get(a, k);
        if qa == 0.0 {
            continue;
        }
        let row = &scatter[a * p..(a + 1) * p];
        let mut inner = 0.0;
        for b in k..p {
            inner += row[b] * q.get(b, k);
        }
        s += qa * inner;
    }
    s
}

/// Data the Gaussian layer sees: imputed `Y` (Gaussian) or `W` (Poisson).
pub fn gaussian_layer(model: &ModelSpec, latent: &LatentState) -> Vec<f64> {
    match model.family {
        Family::Gaussian => completed_data(&model.data, &latent.y_missing),
        Family::Poisson => latent.w.clone().unwrap_or_default(),
    }
}

/// Log-posterior of the Bartlett coordinates at fixed `(Z, latent)`.
///
/// Holds the `(Psi, Z)` transform plan and the scatter matrix of the Gaussian
/// layer, so each evaluation costs `O(p^3)` independently of `n`.
#[derive(Debug, Clone)]
pub struct BartlettTarget {
    plan: TransformPlan,
    scatter: Vec<f64>,
    n: usize,
    p: usize,
    shapes: Vec<f64>,
    nu: f64,
    z: SparsityPattern,
}

impl BartlettTarget {
    pub fn new(model: &ModelSpec, z: &SparsityPattern, latent: &LatentState) -> Result<Self> {
        let layer = gaussian_layer(model, latent);
        let n = model.data.rows();
        Self::from_scatter(&model.prior, z, scatter(&layer, n, model.dim()), n)
    }

    pub fn from_scatter(prior: &SBartlettParams, z: &SparsityPattern, scatter: Vec<f64>, n: usize) -> Result<Self> {
        let p = prior.dim();
        Ok(Self {
            plan: TransformPlan::new(prior, z)?,
            scatter,
            n,
            p,
            shapes: (0..p).map(|k| prior.diag_shape(z.free_count(k))).collect(),
            nu: prior.nu(),
            z: z.clone(),
        })
    }

    pub fn plan(&self) -> &TransformPlan {
        &self.plan
    }

    /// Gaussian-layer log-likelihood at `Q`, via the scatter matrix.
    pub fn loglik(&self, q: &CholFactor) -> f64 {
        let p = self.p;
        let mut quad = 0.0;
        for k in 0..p {
            quad += self.column_quad(q, k);
        }
        -0.5 * (self.n * p) as f64 * LN_2PI + 0.5 * self.n as f64 * q.log_det_product() - 0.5 * quad
    }

    pub fn column_quad(&self, q: &CholFactor, k: usize) -> f64 {
        column_quad(&self.scatter, q, k)
    }

    pub fn scatter(&self) -> &[f64] {
        &self.scatter
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unpacks sampling coordinates into `B`.
    pub fn to_b(&self, theta: &[f64]) -> CholFactor {
        let mut data = theta.to_vec();
        for k in 0..self.p {
            let i = tri_index(k, k);
            data[i] = data[i].exp();
        }
        CholFactor::from_packed_unchecked(self.p, data)
    }

    pub fn log_posterior(&self, b: &CholFactor) -> f64 {
        let q = self.plan.apply(b);
        log_prior_b(b, &self.z, self.nu) + self.loglik(&q)
    }
}

/// Packs `B` into sampling coordinates (`log b_kk` on the diagonal).
pub fn to_theta(b: &CholFactor) -> Vec<f64> {
    let mut theta = b.packed().to_vec();
    for k in 0..b.dim() {
        let i = tri_index(k, k);
        theta[i] = theta[i].ln();
    }
    theta
}

impl LogDensity for BartlettTarget {
    fn dim(&self) -> usize {
        self.p * (self.p + 1) / 2
    }

    fn logp_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.p;
        let b = self.to_b(theta);
        if (0..p).any(|k| !(b.get(k, k) > 0.0) || !b.get(k, k).is_finite()) {
            return f64::NEG_INFINITY;
        }
        let q = self.plan.apply(&b);

        // M = C Q, lower part gives dL/dQ
        let c = &self.scatter;
        let mut q_bar = vec![0.0; theta.len()];
        let mut quad = 0.0;
        for j in 0..p {
            for k in 0..=j {
                let mut m = 0.0;
                for a in k..p {
                    m += c[j * p + a] * q.get(a, k);
                }
                quad += q.get(j, k) * m;
                q_bar[tri_index(j, k)] = -m;
            }
        }
        let nf = self.n as f64;
        let mut logdet = 0.0;
        for k in 0..p {
            let qkk = q.get(k, k);
            logdet += qkk.ln();
            q_bar[tri_index(k, k)] += nf / qkk;
        }
        let loglik = -0.5 * (self.n * p) as f64 * LN_2PI + nf * logdet - 0.5 * quad;

        grad.iter_mut().for_each(|g| *g = 0.0);
        self.plan.backprop(&q, &mut q_bar, grad);

        // prior terms and the chain rule for log b_kk
        let mut lp = 0.0;
        for j in 0..p {
            for k in 0..j {
                let i = tri_index(j, k);
                let v = theta[i];
                lp -= 0.5 * (LN_2PI + v * v);
                grad[i] -= v;
            }
            let i = tri_index(j, j);
            let bjj = b.get(j, j);
            let shape = self.shapes[j];
            lp += crate::sbartlett::log_prior_diag(bjj, shape);
            grad[i] = grad[i] * bjj + 2.0 * shape - bjj * bjj;
        }
        let out = lp + loglik;
        if out.is_finite() {
            out
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// `log_prior_b + log-likelihood` of the Gaussian layer at `Q = Q*(B)`.
pub fn log_posterior_b(b: &CholFactor, z: &SparsityPattern, model: &ModelSpec, latent: &LatentState) -> Result<f64> {
    let target = BartlettTarget::new(model, z, latent)?;
    Ok(target.log_posterior(b))
}

/// Gradient of [`log_posterior_b`] in sampling coordinates (packed; diagonal
/// slots are derivatives with respect to `log b_kk`).
pub fn grad_log_posterior_b(
    b: &CholFactor,
    z: &SparsityPattern,
    model: &ModelSpec,
    latent: &LatentState,
) -> Result<Vec<f64>> {
    let mut target = BartlettTarget::new(model, z, latent)?;
    let theta = to_theta(b);
    let mut grad = vec![0.0; theta.len()];
    target.logp_grad(&theta, &mut grad);
    Ok(grad)
}

/// Draws the missing entries of one row from `Y^m | Y^o, Lambda` (mean-zero
/// model) and writes them into `row`. Rows without missing entries are left
/// unchanged; all-missing rows are drawn from `N(0, Lambda^-1)`.
pub fn impute_missing_gaussian<R: Rng + ?Sized>(
    lambda: &SpdMatrix,
    row: &mut [f64],
    observed: &[bool],
    rng: &mut R,
) -> Result<()> {
    let p = lambda.dim();
    let miss: Vec<usize> = (0..p).filter(|&j| !observed[j]).collect();
    if miss.is_empty() {
        return Ok(());
    }
    let m = miss.len();
    let mut lmm = vec![0.0; m * m];
    for (a, &ja) in miss.iter().enumerate() {
        for (b, &jb) in miss.iter().enumerate() {
            lmm[a * m + b] = lambda.get(ja, jb);
        }
    }
    let l = CholFactor::from_packed_unchecked(m, cholesky_packed(&lmm, m)?);
    // rhs = -Lambda_mo y_o
    let mut mean: Vec<f64> = miss
        .iter()
        .map(|&ja| {
            -(0..p)
                .filter(|&t| observed[t])
                .map(|t| lambda.get(ja, t) * row[t])
                .sum::<f64>()
        })
        .collect();
    l.solve_lower_in_place(&mut mean);
    l.solve_upper_in_place(&mut mean);
    let mut noise: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    l.solve_upper_in_place(&mut noise);
    for ((&j, mu), e) in miss.iter().zip(&mean).zip(&noise) {
        row[j] = mu + e;
    }
    Ok(())
}

/// Draws a count from `Poisson(exp(eta))`.
pub fn draw_poisson_count<R: Rng + ?Sized>(eta: f64, rng: &mut R) -> Result<f64> {
    if eta > MAX_LINEAR_PREDICTOR || eta.is_nan() {
        return Err(Error::Overflow(eta));
    }
    let rate = eta.exp();
    if rate <= 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Draws the missing count at cell `(i, j)` given the latent field.
pub fn impute_missing_poisson<R: Rng + ?Sized>(latent: &LatentState, i: usize, j: usize, rng: &mut R) -> Result<f64> {
    draw_poisson_count(latent.eta(i, j), rng)
}

/// Log density of one latent row `w_i` given `Lambda`, the intercepts and
/// the observed counts of that row. Rows whose linear predictor exceeds
/// [`MAX_LINEAR_PREDICTOR`] anywhere are outside the support.
pub struct LatentRowTarget<'a> {
    pub lambda: &'a SpdMatrix,
    pub mu: &'a [f64],
    pub counts: &'a [f64],
    pub observed: &'a [bool],
}

impl LogDensity for LatentRowTarget<'_> {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn logp_grad(&mut self, w: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.mu.len();
        let mut lp = 0.0;
        for j in 0..p {
            let mut lw = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                lw += self.lambda.get(j, k) * wk;
            }
            lp -= 0.5 * w[j] * lw;
            grad[j] = -lw;
            let eta = self.mu[j] + w[j];
            if eta > MAX_LINEAR_PREDICTOR {
                return f64::NEG_INFINITY;
            }
            if self.observed[j] {
                let rate = eta.exp();
                lp += self.counts[j] * eta - rate;
                grad[j] += self.counts[j] - rate;
            }
        }
        if lp.is_finite() {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// `Lambda = Q Q^T` for the current `B` and `Z`.
pub fn precision_of(b: &CholFactor, z: &SparsityPattern, prior: &SBartlettParams) -> Result<SpdMatrix> {
    let q = crate::sbartlett::transform_b_to_q(b, prior, z)?;
    Ok(chol_product(&q))
}
