//! No-U-Turn sampler with dual-averaging step-size adaptation.
//!
//! Slice-variable NUTS with the efficient (progressive) sampling scheme and
//! a unit mass matrix, following Hoffman & Gelman (2014), Algorithm 6.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy error beyond which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable log density on `R^d`.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    /// Points outside the support return `-inf` (gradient unspecified).
    fn logp_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Initial step size: fixed, or found by the doubling heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialStep {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsConfig {
    /// Number of transitions during which the step size is adapted.
    pub m_adapt: usize,
    /// Target mean acceptance statistic.
    pub delta: f64,
    pub max_tree_depth: usize,
    pub initial_step: InitialStep,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            m_adapt: 10,
            delta: 0.5,
            max_tree_depth: 10,
            initial_step: InitialStep::Auto,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 12 {
            return Err(Error::invalid(format!(
                "max_tree_depth must be in 1..=12, got {}",
                self.max_tree_depth
            )));
        }
        if let InitialStep::Fixed(e) = self.initial_step {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::invalid(format!("initial step must be > 0, got {e}")));
            }
        }
        Ok(())
    }
}

/// Dual-averaging state for `log(step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_step_bar: f64,
    count: usize,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(initial_step: f64, delta: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            h_bar: 0.0,
            log_step_bar: 0.0,
            count: 0,
            delta,
        }
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.count += 1;
        let m = self.count as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.delta - accept_stat);
        let log_step = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_step_bar = eta * log_step + (1.0 - eta) * self.log_step_bar;
        log_step.exp()
    }

    /// Averaged step size used once adaptation ends.
    pub fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Per-transition diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionInfo {
    pub accept_stat: f64,
    pub step_size: f64,
    pub tree_depth: usize,
    pub divergent: bool,
}

/// One NUTS chain's tuning state. The position itself is owned by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsState {
    cfg: NutsConfig,
    step: f64,
    adapt: Option<DualAveraging>,
    iteration: usize,
    divergences: usize,
}

struct Point {
    x: Vec<f64>,
    r: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl Point {
    fn joint(&self) -> f64 {
        self.logp - 0.5 * dot(&self.r, &self.r)
    }
}

struct Tree {
    minus: Point,
    plus: Point,
    proposal_x: Vec<f64>,
    proposal_grad: Vec<f64>,
    proposal_logp: f64,
    n_valid: f64,
    keep_going: bool,
    alpha: f64,
    n_alpha: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leapfrog<T: LogDensity + ?Sized>(target: &mut T, from: &Point, step: f64) -> Point {
    let mut r: Vec<f64> = from.r.iter().zip(&from.grad).map(|(r, g)| r + 0.5 * step * g).collect();
    let x: Vec<f64> = from.x.iter().zip(&r).map(|(x, r)| x + step * r).collect();
    let mut grad = vec![0.0; x.len()];
    let mut logp = target.logp_grad(&x, &mut grad);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        logp = f64::NEG_INFINITY;
    } else {
        for (r, g) in r.iter_mut().zip(&grad) {
            *r += 0.5 * step * g;
        }
    }
    Point { x, r, grad, logp }
}

impl NutsState {
    pub fn new(cfg: NutsConfig) -> Result<Self> {
        cfg.validate()?;
        let step = match cfg.initial_step {
            InitialStep::Fixed(e) => e,
            InitialStep::Auto => f64::NAN,
        };
        Ok(Self {
            cfg,
            step,
            adapt: None,
            iteration: 0,
            divergences: 0,
        })
    }

    pub fn config(&self) -> &NutsConfig {
        &self.cfg
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn divergences(&self) -> usize {
        self.divergences
    }

    pub fn is_adapting(&self) -> bool {
        self.iteration < self.cfg.m_adapt
    }

    /// Heuristic initial step: double or halve until a single leapfrog step
    /// has acceptance probability crossing 1/2.
    pub fn find_reasonable_step<T, R>(target: &mut T, x: &[f64], rng: &mut R) -> f64
    where
        T: LogDensity + ?Sized,
        R: Rng + ?Sized,
    {
        let d = x.len();
        let mut grad = vec![0.0; d];
        let logp = target.logp_grad(x, &mut grad);
        if !logp.is_finite() {
            return 1.0;
        }
        let start = Point {
            x: x.to_vec(),
            r: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            grad,
            logp,
        };
        let h0 = start.joint();
        let mut step = 1.0;
        let mut log_ratio = leapfrog(target, &start, step).joint() - h0;
        if log_ratio.is_nan() {
            log_ratio = f64::NEG_INFINITY;
        }
        let dir = if log_ratio > 0.5f64.ln() { 1.0 } else { -1.0 };
        for _ in 0..100 {
            if !(dir * log_ratio > -dir * std::f64::consts::LN_2) {
                break;
            }
            step *= 2f64.powf(dir);
            log_ratio = leapfrog(target, &start, step).joint() - h0;
            if log_ratio.is_nan() {
                log_ratio = f64::NEG_INFINITY;
            }
        }
        step
    }

    /// One NUTS transition from `x` (updated in place). `logp` and `grad`
    /// must hold the target's value and gradient at `x` on entry and are
    /// updated alongside it.
    pub fn transition<T, R>(
        &mut self,
        target: &mut T,
        x: &mut Vec<f64>,
        logp: &mut f64,
        grad: &mut Vec<f64>,
        rng: &mut R,
    ) -> TransitionInfo
    where
        T: LogDensity + ?Sized,
        R: Rng + ?Sized,
    {
        if self.step.is_nan() {
            self.step = Self::find_reasonable_step(target, x, rng);
        }
        if self.adapt.is_none() && self.is_adapting() {
            self.adapt = Some(DualAveraging::new(self.step, self.cfg.delta));
        }
        let step = self.step;
        let d = x.len();
        let start = Point {
            x: x.clone(),
            r: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            grad: grad.clone(),
            logp: *logp,
        };
        let h0 = start.joint();
        let u: f64 = rng.random();
        let log_u = h0 + u.ln();

        let mut minus = Point {
            x: start.x.clone(),
            r: start.r.clone(),
            grad: start.grad.clone(),
            logp: start.logp,
        };
        let mut plus = start;
        let mut n_valid = 1.0;
        let mut depth = 0;
        let mut alpha_sum = 0.0;
        let mut n_alpha = 0.0;
        let mut divergent = false;

        while depth < self.cfg.max_tree_depth {
            let forward = rng.random_bool(0.5);
            let tree = if forward {
                let t = build(target, &plus, log_u, 1.0, depth, step, h0, rng);
                plus = clone_point(&t.plus);
                t
            } else {
                let t = build(target, &minus, log_u, -1.0, depth, step, h0, rng);
                minus = clone_point(&t.minus);
                t
            };
            alpha_sum = tree.alpha;
            n_alpha = tree.n_alpha;
            divergent |= tree.divergent;
            depth += 1;
            if tree.keep_going && rng.random::<f64>() < tree.n_valid / n_valid {
                *x = tree.proposal_x;
                *grad = tree.proposal_grad;
                *logp = tree.proposal_logp;
            }
            n_valid += tree.n_valid;
            let span: Vec<f64> = plus.x.iter().zip(&minus.x).map(|(a, b)| a - b).collect();
            if !(tree.keep_going && dot(&span, &minus.r) >= 0.0 && dot(&span, &plus.r) >= 0.0) {
                break;
            }
        }

        let accept_stat = if n_alpha > 0.0 { alpha_sum / n_alpha } else { 0.0 };
        if divergent {
            self.divergences += 1;
        }
        self.iteration += 1;
        if let Some(adapt) = self.adapt.as_mut() {
            if self.iteration <= self.cfg.m_adapt {
                self.step = adapt.update(accept_stat);
                if self.iteration == self.cfg.m_adapt {
                    self.step = adapt.final_step();
                    self.adapt = None;
                }
            }
        }
        TransitionInfo {
            accept_stat,
            step_size: step,
            tree_depth: depth,
            divergent,
        }
    }
}

fn clone_point(p: &Point) -> Point {
    Point {
        x: p.x.clone(),
        r: p.r.clone(),
        grad: p.grad.clone(),
        logp: p.logp,
    }
}

#[allow(clippy::too_many_arguments)]
fn build<T, R>(
    target: &mut T,
    from: &Point,
    log_u: f64,
    dir: f64,
    depth: usize,
    step: f64,
    h0: f64,
    rng: &mut R,
) -> Tree
where
    T: LogDensity + ?Sized,
    R: Rng + ?Sized,
{
    if depth == 0 {
        let next = leapfrog(target, from, dir * step);
        let h = next.joint();
        let h = if h.is_nan() { f64::NEG_INFINITY } else { h };
        let valid = if log_u <= h { 1.0 } else { 0.0 };
        let keep_going = log_u < DIVERGENCE_THRESHOLD + h;
        let alpha = (h - h0).exp().min(1.0);
        return Tree {
            minus: clone_point(&next),
            proposal_x: next.x.clone(),
            proposal_grad: next.grad.clone(),
            proposal_logp: next.logp,
            plus: next,
            n_valid: valid,
            keep_going,
            alpha: if alpha.is_nan() { 0.0 } else { alpha },
            n_alpha: 1.0,
            divergent: !keep_going,
        };
    }
    let mut tree = build(target, from, log_u, dir, depth - 1, step, h0, rng);
    if !tree.keep_going {
        return tree;
    }
    let other = if dir < 0.0 {
        let o = build(target, &tree.minus, log_u, dir, depth - 1, step, h0, rng);
        tree.minus = clone_point(&o.minus);
        o
    } else {
        let o = build(target, &tree.plus, log_u, dir, depth - 1, step, h0, rng);
        tree.plus = clone_point(&o.plus);
        o
    };
    let total = tree.n_valid + other.n_valid;
    if total > 0.0 && rng.random::<f64>() < other.n_valid / total {
        tree.proposal_x = other.proposal_x;
        tree.proposal_grad = other.proposal_grad;
        tree.proposal_logp = other.proposal_logp;
    }
    tree.alpha += other.alpha;
    tree.n_alpha += other.n_alpha;
    tree.divergent |= other.divergent;
    let span: Vec<f64> = tree.plus.x.iter().zip(&tree.minus.x).map(|(a, b)| a - b).collect();
    tree.keep_going = other.keep_going && dot(&span, &tree.minus.r) >= 0.0 && dot(&span, &tree.plus.r) >= 0.0;
    tree.n_valid = total;
    tree
}
