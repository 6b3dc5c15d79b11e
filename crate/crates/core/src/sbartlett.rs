//! The S-Bartlett distribution over sparse Cholesky factors.
//!
//! A factor `Q` is built column by column. Diagonal entries are drawn first;
//! entries with `z_jk = 0` are then pinned to the value that zeroes `lambda_jk`,
//! and the remaining free entries follow the Bartlett column Gaussian
//! conditioned on those pinned values.
//!
//! Sampling for MCMC happens on an unconstrained Bartlett matrix `B` whose
//! law depends on `Z` only through the diagonal shapes. [`TransformPlan`]
//! maps `B` to `Q` deterministically and caches everything that depends on
//! `(Psi, Z)` alone.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_packed, constrained_entry, CholFactor, SparsityPattern, SpdMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Degrees of freedom `nu` (> 0), scale `S` and its Cholesky factor `Psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SBartlettParams {
    nu: f64,
    scale: SpdMatrix,
    psi: CholFactor,
}

impl SBartlettParams {
    pub fn new(nu: f64, scale: SpdMatrix) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::invalid(format!("degrees of freedom must be > 0, got {nu}")));
        }
        let psi = cholesky(&scale)?;
        Ok(Self { nu, scale, psi })
    }

    /// `S = I_p`.
    pub fn identity(p: usize, nu: f64) -> Result<Self> {
        Self::new(nu, SpdMatrix::identity(p))
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn scale(&self) -> &SpdMatrix {
        &self.scale
    }

    pub fn psi(&self) -> &CholFactor {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    /// Gamma shape of `b_kk^2` (and `q_kk^2`) given `z_k` free rows.
    pub fn diag_shape(&self, free_count: usize) -> f64 {
        0.5 * (self.nu + free_count as f64)
    }
}

/// Conditional law of the free rows of one column given the pinned rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnConditional {
    pub mean: Vec<f64>,
    /// Lower Cholesky factor of the conditional covariance.
    pub cov_chol: CholFactor,
    pub constrained_rows: Vec<usize>,
    pub free_rows: Vec<usize>,
}

/// Distributions for the diagonal (`g_d`, positive support) and the free
/// off-diagonal entries (`g_o`) of a generic sparse factor.
pub struct ElementDistributions<D, O> {
    pub diagonal: D,
    pub off_diagonal: O,
}

/// `(Psi, Z)`-dependent pieces of one column of the B -> Q map.
///
/// With `F` the free rows and `C` the constrained rows of column `k` and
/// `V = Psi_kk Psi_kk^T`, the free entries are
/// `q_F = b_kk * drift + gain * q_C + cov_chol * b_F` where
/// `gain = V_FC V_CC^-1` and `drift = psi_F - gain * psi_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnPlan {
    free: Vec<usize>,
    constrained: Vec<usize>,
    /// `|F| x |C|`, row-major.
    gain: Vec<f64>,
    drift: Vec<f64>,
    cov_chol: CholFactor,
}

impl ColumnPlan {
    pub fn build(psi: &CholFactor, z: &SparsityPattern, k: usize) -> Result<Self> {
        let free = z.free_rows(k);
        let constrained = z.constrained_rows(k);
        // V_ab = sum_{t=k+1}^{min(a,b)} psi_at psi_bt
        let v = |a: usize, b: usize| -> f64 {
            let m = a.min(b);
            let (ra, rb) = (psi.row(a), psi.row(b));
            ra[k + 1..=m].iter().zip(&rb[k + 1..=m]).map(|(x, y)| x * y).sum()
        };
        let nf = free.len();
        let nc = constrained.len();

        let mut gain = vec![0.0; nf * nc];
        if nc > 0 && nf > 0 {
            let mut vcc = vec![0.0; nc * nc];
            for (i, &a) in constrained.iter().enumerate() {
                for (j, &b) in constrained.iter().enumerate() {
                    vcc[i * nc + j] = v(a, b);
                }
            }
            let lcc = CholFactor::from_packed_unchecked(nc, cholesky_packed(&vcc, nc)?);
            let mut x = vec![0.0; nc];
            for (fi, &f) in free.iter().enumerate() {
                for (ci, &c) in constrained.iter().enumerate() {
                    x[ci] = v(c, f);
                }
                lcc.solve_lower_in_place(&mut x);
                lcc.solve_upper_in_place(&mut x);
                gain[fi * nc..(fi + 1) * nc].copy_from_slice(&x);
            }
        }

        let mut sigma = vec![0.0; nf * nf];
        for (a, &fa) in free.iter().enumerate() {
            for (b, &fb) in free.iter().enumerate().take(a + 1) {
                let mut s = v(fa, fb);
                for (ci, &c) in constrained.iter().enumerate() {
                    s -= gain[a * nc + ci] * v(c, fb);
                }
                sigma[a * nf + b] = s;
                sigma[b * nf + a] = s;
            }
        }
        let cov_chol = CholFactor::from_packed_unchecked(nf, cholesky_packed(&sigma, nf)?);

        let drift = free
            .iter()
            .enumerate()
            .map(|(a, &f)| {
                psi.get(f, k)
                    - constrained
                        .iter()
                        .enumerate()
                        .map(|(ci, &c)| gain[a * nc + ci] * psi.get(c, k))
                        .sum::<f64>()
            })
            .collect();

        Ok(Self {
            free,
            constrained,
            gain,
            drift,
            cov_chol,
        })
    }

    pub fn free_rows(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained_rows(&self) -> &[usize] {
        &self.constrained
    }

    /// Conditional mean of the free rows given `b_kk` and the pinned values.
    fn mean(&self, b_kk: f64, q_constrained: &[f64]) -> Vec<f64> {
        let nc = self.constrained.len();
        self.drift
            .iter()
            .enumerate()
            .map(|(a, &d)| {
                b_kk * d
                    + self.gain[a * nc..(a + 1) * nc]
                        .iter()
                        .zip(q_constrained)
                        .map(|(g, q)| g * q)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Conditional law of the free rows of column `k` given `q_kk` and the values
/// already pinned at the constrained rows.
pub fn conditional_column(
    params: &SBartlettParams,
    z: &SparsityPattern,
    k: usize,
    q_kk: f64,
    q_constrained: &[f64],
) -> Result<ColumnConditional> {
    let plan = ColumnPlan::build(&params.psi, z, k)?;
    if q_constrained.len() != plan.constrained.len() {
        return Err(Error::DimensionMismatch {
            expected: plan.constrained.len(),
            found: q_constrained.len(),
        });
    }
    let mean = plan.mean(q_kk / params.psi.get(k, k), q_constrained);
    Ok(ColumnConditional {
        mean,
        cov_chol: plan.cov_chol,
        constrained_rows: plan.constrained,
        free_rows: plan.free,
    })
}

/// Draws a sparse precision matrix with arbitrary element laws: diagonal
/// from `g_d`, free entries from `g_o`, constrained entries pinned.
pub fn sample_sparse_generic<D, O, R>(
    z: &SparsityPattern,
    dists: &ElementDistributions<D, O>,
    rng: &mut R,
) -> Result<(CholFactor, SpdMatrix)>
where
    D: Distribution<f64>,
    O: Distribution<f64>,
    R: Rng + ?Sized,
{
    let p = z.dim();
    let mut q = CholFactor::zeros_unchecked(p);
    for k in 0..p {
        let d = dists.diagonal.sample(rng);
        if !(d > 0.0) {
            return Err(Error::invalid(format!("diagonal draw {d} is not positive")));
        }
        q.set(k, k, d);
    }
    for k in 0..p {
        let qkk = q.get(k, k);
        for j in k + 1..p {
            let v = if z.get(j, k) {
                dists.off_diagonal.sample(rng)
            } else {
                constrained_entry(&q, qkk, j, k)
            };
            q.set(j, k, v);
        }
    }
    let lambda = crate::linalg::chol_product(&q);
    Ok((q, lambda))
}

/// Draws `Q` from the S-Bartlett prior `SB(nu, S, Z)`.
pub fn sample_prior<R: Rng + ?Sized>(
    params: &SBartlettParams,
    z: &SparsityPattern,
    rng: &mut R,
) -> Result<CholFactor> {
    let p = params.dim();
    if z.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: z.dim(),
        });
    }
    let psi = &params.psi;
    let mut q = CholFactor::zeros_unchecked(p);
    for k in 0..p {
        let psi_kk = psi.get(k, k);
        let shape = params.diag_shape(z.free_count(k));
        // rate 1/(2 psi_kk^2) == scale 2 psi_kk^2
        let gamma = Gamma::new(shape, 2.0 * psi_kk * psi_kk).map_err(|e| Error::invalid(e.to_string()))?;
        let mut x: f64 = gamma.sample(rng);
        if x <= 0.0 {
            x = f64::MIN_POSITIVE;
        }
        q.set(k, k, x.sqrt());
    }
    for k in 0..p.saturating_sub(1) {
        let qkk = q.get(k, k);
        let constrained = z.constrained_rows(k);
        let mut pinned = Vec::with_capacity(constrained.len());
        for &j in &constrained {
            let v = constrained_entry(&q, qkk, j, k);
            q.set(j, k, v);
            pinned.push(v);
        }
        let cond = conditional_column(params, z, k, qkk, &pinned)?;
        let eps: Vec<f64> = (0..cond.free_rows.len()).map(|_| rng.sample(StandardNormal)).collect();
        let draw = cond.cov_chol.mul(&eps);
        for ((&j, m), e) in cond.free_rows.iter().zip(&cond.mean).zip(draw) {
            q.set(j, k, m + e);
        }
    }
    if let Some(&bad) = q.packed().iter().find(|v| !v.is_finite()) {
        return Err(Error::Overflow(bad));
    }
    Ok(q)
}

/// Cached B -> Q map for a fixed `(Psi, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPlan {
    psi_diag: Vec<f64>,
    columns: Vec<ColumnPlan>,
}

impl TransformPlan {
    pub fn new(params: &SBartlettParams, z: &SparsityPattern) -> Result<Self> {
        let p = params.dim();
        if z.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: z.dim(),
            });
        }
        let columns = (0..p)
            .map(|k| ColumnPlan::build(&params.psi, z, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            psi_diag: params.psi.diagonal(),
            columns,
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &ColumnPlan {
        &self.columns[k]
    }

    /// Replaces the plan of column `k` (after `z` changed in that column).
    pub fn set_column(&mut self, k: usize, plan: ColumnPlan) {
        self.columns[k] = plan;
    }

    /// Full forward map `Q = Q*(B)`.
    pub fn apply(&self, b: &CholFactor) -> CholFactor {
        let mut q = CholFactor::zeros_unchecked(self.dim());
        self.apply_from(b, &mut q, 0);
        q
    }

    /// Recomputes columns `start..p` of `q` in place; earlier columns are reused.
    pub fn apply_from(&self, b: &CholFactor, q: &mut CholFactor, start: usize) {
        let p = self.dim();
        let mut pinned = Vec::with_capacity(p);
        for k in start..p {
            let plan = &self.columns[k];
            let bkk = b.get(k, k);
            let qkk = self.psi_diag[k] * bkk;
            q.set(k, k, qkk);
            pinned.clear();
            for &j in &plan.constrained {
                let v = constrained_entry(q, qkk, j, k);
                q.set(j, k, v);
                pinned.push(v);
            }
            let nc = plan.constrained.len();
            for (a, &f) in plan.free.iter().enumerate() {
                let mut v = bkk * plan.drift[a];
                for (g, x) in plan.gain[a * nc..(a + 1) * nc].iter().zip(&pinned) {
                    v += g * x;
                }
                for (l, &fb) in plan.cov_chol.row(a).iter().zip(&plan.free) {
                    v += l * b.get(fb, k);
                }
                q.set(f, k, v);
            }
        }
    }

    /// Reverse-mode pass through the map.
    ///
    /// `q_bar` holds `d f / d Q` (packed) on entry and is consumed as scratch;
    /// `d f / d B` is accumulated into `b_bar` (packed). `q` must be the
    /// output of [`apply`](Self::apply).
    pub fn backprop(&self, q: &CholFactor, q_bar: &mut [f64], b_bar: &mut [f64]) {
        use crate::linalg::tri_index as ix;
        let p = self.dim();
        for k in (0..p).rev() {
            let plan = &self.columns[k];
            let nc = plan.constrained.len();
            let qkk = q.get(k, k);
            for (a, &f) in plan.free.iter().enumerate() {
                let g = q_bar[ix(f, k)];
                if g == 0.0 {
                    continue;
                }
                b_bar[ix(k, k)] += g * plan.drift[a];
                for (ci, &c) in plan.constrained.iter().enumerate() {
                    q_bar[ix(c, k)] += g * plan.gain[a * nc + ci];
                }
                for (l, &fb) in plan.cov_chol.row(a).iter().zip(&plan.free) {
                    b_bar[ix(fb, k)] += g * l;
                }
            }
            if k > 0 {
                for &j in &plan.constrained {
                    let g = q_bar[ix(j, k)];
                    if g == 0.0 {
                        continue;
                    }
                    q_bar[ix(k, k)] -= g * q.get(j, k) / qkk;
                    let w = g / qkk;
                    for t in 0..k {
                        let (qjt, qkt) = (q.get(j, t), q.get(k, t));
                        q_bar[ix(j, t)] -= w * qkt;
                        q_bar[ix(k, t)] -= w * qjt;
                    }
                }
            }
            b_bar[ix(k, k)] += self.psi_diag[k] * q_bar[ix(k, k)];
        }
    }

    /// Inverse of [`apply`](Self::apply) on the free coordinates. Inert
    /// coordinates (`z_jk = 0`) cannot be recovered and are copied from `inert`.
    pub fn invert(&self, q: &CholFactor, inert: &CholFactor) -> CholFactor {
        let p = self.dim();
        let mut b = inert.clone();
        for k in 0..p {
            let plan = &self.columns[k];
            let bkk = q.get(k, k) / self.psi_diag[k];
            b.set(k, k, bkk);
            let pinned: Vec<f64> = plan.constrained.iter().map(|&j| q.get(j, k)).collect();
            let mean = plan.mean(bkk, &pinned);
            let mut r: Vec<f64> = plan.free.iter().zip(&mean).map(|(&f, m)| q.get(f, k) - m).collect();
            plan.cov_chol.solve_lower_in_place(&mut r);
            for (&f, v) in plan.free.iter().zip(r) {
                b.set(f, k, v);
            }
        }
        b
    }
}

/// Deterministic map from a Bartlett matrix `B` to the sparse factor `Q`.
pub fn transform_b_to_q(b: &CholFactor, params: &SBartlettParams, z: &SparsityPattern) -> Result<CholFactor> {
    if b.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: b.dim(),
        });
    }
    Ok(TransformPlan::new(params, z)?.apply(b))
}

/// Log density of `x` under `Gamma(shape, rate)`.
pub fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density contribution of diagonal `b_kk` in the `log b_kk` coordinate:
/// Gamma density of `b_kk^2` with rate 1/2 plus the Jacobian `log 2 + 2 log b_kk`.
pub fn log_prior_diag(b_kk: f64, shape: f64) -> f64 {
    log_gamma_density(b_kk * b_kk, shape, 0.5) + std::f64::consts::LN_2 + 2.0 * b_kk.ln()
}

/// Log prior of `B | Z ~ B(nu + z, I)` in the sampling coordinates
/// (`log b_kk` on the diagonal, raw sub-diagonal entries). Inert entries keep
/// their standard-normal terms.
pub fn log_prior_b(b: &CholFactor, z: &SparsityPattern, nu: f64) -> f64 {
    let p = b.dim();
    let mut lp = 0.0;
    for j in 0..p {
        let row = b.row(j);
        for &v in &row[..j] {
            lp -= 0.5 * (LN_2PI + v * v);
        }
        lp += log_prior_diag(row[j], 0.5 * (nu + z.free_count(j) as f64));
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{chol_product, pattern_of};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn psi3() -> SpdMatrix {
        let psi = CholFactor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.2, 0.3, 1.0],
        ])
        .unwrap();
        chol_product(&psi)
    }

    /// Textbook Gaussian conditioning on a dense `(phi, V)` via nalgebra inverses.
    fn condition_oracle(phi: &[f64], v: &[Vec<f64>], free: &[usize], cons: &[usize], qc: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        use nalgebra::DMatrix;
        let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| v[r[i]][c[j]]);
        let vff = sub(free, free);
        let vfc = sub(free, cons);
        let vcc_inv = sub(cons, cons).try_inverse().unwrap();
        let dc = nalgebra::DVector::from_iterator(cons.len(), cons.iter().zip(qc).map(|(&c, q)| q - phi[c]));
        let mean = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&f| phi[f])) + &vfc * &vcc_inv * dc;
        let cov = vff - &vfc * &vcc_inv * vfc.transpose();
        (
            mean.iter().copied().collect(),
            (0..free.len()).map(|i| (0..free.len()).map(|j| cov[(i, j)]).collect()).collect(),
        )
    }

    #[test]
    fn conditional_column_matches_dense_oracle() {
        let params = SBartlettParams::new(3.0, psi3()).unwrap();
        let mut z = SparsityPattern::identity(3);
        z.set(1, 0, true);
        let cond = conditional_column(&params, &z, 0, 2.0, &[0.0]).unwrap();
        // phi and V over rows {1, 2} of column 0
        let psi = params.psi();
        let phi = [2.0 * psi.get(1, 0), 2.0 * psi.get(2, 0)];
        let v = vec![
            vec![1.0, psi.get(2, 1)],
            vec![psi.get(2, 1), psi.get(2, 1).powi(2) + 1.0],
        ];
        let (mean, cov) = condition_oracle(&phi, &v, &[0], &[1], &[0.0]);
        assert!((cond.mean[0] - mean[0]).abs() < 1e-14);
        let c = cond.cov_chol.get(0, 0).powi(2);
        assert!((c - cov[0][0]).abs() < 1e-14);
        assert_eq!(cond.free_rows, vec![1]);
        assert_eq!(cond.constrained_rows, vec![2]);
    }

    #[test]
    fn conditional_column_identity_scale_decouples() {
        let params = SBartlettParams::identity(4, 2.0).unwrap();
        let mut z = SparsityPattern::identity(4);
        z.set(2, 0, true);
        z.set(3, 0, true);
        let cond = conditional_column(&params, &z, 0, 1.7, &[0.0]).unwrap();
        assert_eq!(cond.mean, vec![0.0, 0.0]);
        assert_eq!(cond.cov_chol, CholFactor::identity(2));
    }

    #[test]
    fn conditional_column_without_constraints_is_marginal() {
        let s = SpdMatrix::from_rows(&[
            vec![2.0, 0.3, 0.1, 0.0],
            vec![0.3, 1.5, 0.2, 0.1],
            vec![0.1, 0.2, 1.2, 0.4],
            vec![0.0, 0.1, 0.4, 1.1],
        ])
        .unwrap();
        let params = SBartlettParams::new(3.0, s).unwrap();
        let z = SparsityPattern::full(4);
        let qkk = 1.3;
        let cond = conditional_column(&params, &z, 0, qkk, &[]).unwrap();
        let psi = params.psi();
        for (a, &j) in cond.free_rows.iter().enumerate() {
            let phi = qkk / psi.get(0, 0) * psi.get(j, 0);
            assert!((cond.mean[a] - phi).abs() < 1e-14);
        }
        // Sigma_c == Psi_kk Psi_kk^T
        let sig = chol_product(&cond.cov_chol);
        for a in 0..3 {
            for b in 0..3 {
                let v: f64 = (1..=(a.min(b) + 1)).map(|t| psi.get(a + 1, t) * psi.get(b + 1, t)).sum();
                assert!((sig.get(a, b) - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn sample_prior_pins_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = SBartlettParams::new(3.0, psi3()).unwrap();
        let mut z = SparsityPattern::identity(3);
        z.set(1, 0, true);
        z.set(2, 0, true);
        for _ in 0..1000 {
            let q = sample_prior(&params, &z, &mut rng).unwrap();
            let l = chol_product(&q);
            assert!(l.get(2, 1).abs() < 1e-10 * l.max_diag());
        }
    }

    #[test]
    fn generic_sampler_pins_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dists = ElementDistributions {
            diagonal: rand_distr::ChiSquared::new(3.0).unwrap(),
            off_diagonal: StandardNormal,
        };
        let mut z = SparsityPattern::identity(3);
        z.set(1, 0, true);
        z.set(2, 0, true);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let (_, l) = sample_sparse_generic(&z, &dists, &mut rng).unwrap();
            worst = worst.max(l.get(2, 1).abs());
        }
        assert!(worst < 1e-10);

        let (_, l) = sample_sparse_generic(&SparsityPattern::identity(4), &dists, &mut rng).unwrap();
        assert_eq!(pattern_of(&l, 0.0), SparsityPattern::identity(4));
        let (q, _) = sample_sparse_generic(&SparsityPattern::full(4), &dists, &mut rng).unwrap();
        assert!((1..4).all(|j| (0..j).all(|k| q.get(j, k) != 0.0)));
    }

    #[test]
    fn transform_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = SBartlettParams::identity(4, 3.0).unwrap();
        let b = sample_prior(&params, &SparsityPattern::full(4), &mut rng).unwrap();
        let q = transform_b_to_q(&b, &params, &SparsityPattern::full(4)).unwrap();
        assert_eq!(q, b);

        let s = psi3();
        let params = SBartlettParams::new(3.0, s).unwrap();
        let b = CholFactor::from_rows(&[
            vec![1.2, 0.0, 0.0],
            vec![0.7, 0.9, 0.0],
            vec![-0.4, 1.1, 1.5],
        ])
        .unwrap();
        let q = transform_b_to_q(&b, &params, &SparsityPattern::identity(3)).unwrap();
        let psi = params.psi();
        for j in 0..3 {
            assert!((q.get(j, j) - psi.get(j, j) * b.get(j, j)).abs() < 1e-15);
            for k in 0..j {
                assert_eq!(q.get(j, k), 0.0);
            }
        }
    }

    #[test]
    fn log_prior_scalar_case() {
        // p = 1, nu = 2: chi2_2 density at b^2 = 1 is 0.5 e^{-0.5}; Jacobian 2 b^2 = 2.
        let b = CholFactor::from_rows(&[vec![1.0]]).unwrap();
        let v = log_prior_b(&b, &SparsityPattern::identity(1), 2.0);
        let oracle = (0.5 * (-0.5f64).exp()).ln() + 2.0f64.ln();
        assert!((v - oracle).abs() < 1e-14);
    }

    #[test]
    fn log_prior_free_entry_and_shape() {
        let b1 = CholFactor::from_rows(&[vec![1.3]]).unwrap();
        let b2 = CholFactor::from_rows(&[vec![1.3, 0.0], vec![0.0, 1.0]]).unwrap();
        let z1 = SparsityPattern::identity(1);
        let z2 = SparsityPattern::identity(2);
        let extra = log_prior_diag(1.0, 1.5);
        let d = log_prior_b(&b2, &z2, 3.0) - log_prior_b(&b1, &z1, 3.0) - extra;
        assert!((d + 0.5 * LN_2PI).abs() < 1e-14);

        // turning on z_21 bumps only column 0's shape by 1/2
        let mut z = SparsityPattern::identity(2);
        let before = log_prior_b(&b2, &z, 3.0);
        z.set(1, 0, true);
        let after = log_prior_b(&b2, &z, 3.0);
        let expect = log_prior_diag(1.3, 2.0) - log_prior_diag(1.3, 1.5);
        assert!((after - before - expect).abs() < 1e-14);
    }

    #[test]
    fn invert_recovers_free_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = SpdMatrix::from_rows(&[
            vec![2.0, 0.3, 0.1, 0.0, 0.2],
            vec![0.3, 1.5, 0.2, 0.1, 0.0],
            vec![0.1, 0.2, 1.2, 0.4, 0.1],
            vec![0.0, 0.1, 0.4, 1.1, 0.3],
            vec![0.2, 0.0, 0.1, 0.3, 1.4],
        ])
        .unwrap();
        let params = SBartlettParams::new(2.5, s).unwrap();
        for _ in 0..50 {
            let z = SparsityPattern::from_fn(5, |_, _| rng.random_bool(0.5));
            let b = sample_prior(&SBartlettParams::identity(5, 2.5).unwrap(), &SparsityPattern::full(5), &mut rng).unwrap();
            let plan = TransformPlan::new(&params, &z).unwrap();
            let q = plan.apply(&b);
            let back = plan.invert(&q, &b);
            for (x, y) in back.packed().iter().zip(b.packed()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
