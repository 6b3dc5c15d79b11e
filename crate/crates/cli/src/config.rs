//! Command-line arguments and the matching TOML config file.
//!
//! Every command-specific option can be given on the command line or in the
//! config file section named after the command; the command line wins.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sbartlett", version, about = "Sparse precision matrices with S-Bartlett priors")]
pub struct Cli {
    /// TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel replicas
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory (created if missing)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw precision matrices from the prior for a given pattern
    SamplePrior(PriorArgs),
    /// Fit a graphical model to a CSV data table
    Fit(FitArgs),
    /// Run a simulation study
    Simulate(SimArgs),
    /// Score a fit against a known truth
    Evaluate(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SamplePrior(_) => "sample-prior",
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PriorArgs {
    /// Dimension (taken from the pattern or scale file when those are given)
    #[arg(long)]
    pub p: Option<usize>,

    #[arg(long)]
    pub nu: Option<f64>,

    /// `identity` or a CSV matrix
    #[arg(long)]
    pub scale: Option<String>,

    /// full, identity, band:W, random:ALPHA or a 0/1 matrix file
    #[arg(long)]
    pub pattern: Option<String>,

    /// Number of draws
    #[arg(long)]
    pub draws: Option<usize>,

    /// Also write the Cholesky factor of each draw
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub write_q: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    /// CSV data, rows are observations; empty or NA marks a missing cell
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// gaussian or poisson
    #[arg(long)]
    pub family: Option<String>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub burnin: Option<usize>,

    #[arg(long)]
    pub thin: Option<usize>,

    #[arg(long)]
    pub nu: Option<f64>,

    /// `identity` or a CSV matrix
    #[arg(long)]
    pub scale: Option<String>,

    /// Prior edge-inclusion probability
    #[arg(long)]
    pub pi: Option<f64>,

    /// Fraction of observed cells withheld and scored
    #[arg(long)]
    pub holdout: Option<f64>,

    /// Inclusion-probability threshold for the summary graph
    #[arg(long)]
    pub threshold: Option<f64>,

    #[arg(long)]
    pub nuts_madapt: Option<usize>,

    #[arg(long)]
    pub nuts_delta: Option<f64>,

    #[arg(long)]
    pub max_tree_depth: Option<usize>,

    /// Random visiting order in the edge sweep
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub random_sweep: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimArgs {
    #[arg(long)]
    pub p: Option<usize>,

    /// band:W or random:ALPHA
    #[arg(long)]
    pub pattern: Option<String>,

    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long)]
    pub family: Option<String>,

    /// Intercept on the linear-predictor scale
    #[arg(long)]
    pub mu: Option<f64>,

    #[arg(long)]
    pub pmiss: Option<f64>,

    /// cells or rows
    #[arg(long)]
    pub missing: Option<String>,

    #[arg(long)]
    pub replicas: Option<usize>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub burnin: Option<usize>,

    #[arg(long)]
    pub thin: Option<usize>,

    #[arg(long)]
    pub nu: Option<f64>,

    #[arg(long)]
    pub pi: Option<f64>,

    #[arg(long)]
    pub threshold: Option<f64>,

    #[arg(long)]
    pub nuts_madapt: Option<usize>,

    #[arg(long)]
    pub nuts_delta: Option<f64>,

    /// estimate-to-truth or truth-to-estimate
    #[arg(long)]
    pub kl_orientation: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// CSV of the true precision matrix
    #[arg(long)]
    pub truth: Option<PathBuf>,

    /// 0/1 file of the true graph (default: nonzero pattern of the truth)
    #[arg(long)]
    pub truth_pattern: Option<PathBuf>,

    /// Output directory of `fit`, or its summary.json
    #[arg(long)]
    pub fit: Option<PathBuf>,

    /// estimate-to-truth or truth-to-estimate
    #[arg(long)]
    pub kl_orientation: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sample_prior: PriorArgs,
    #[serde(default)]
    pub fit: FitArgs,
    #[serde(default)]
    pub simulate: SimArgs,
    #[serde(default)]
    pub evaluate: EvalArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }
}

/// Fills every unset field of `$cli` from `$file`.
macro_rules! merge {
    ($cli:expr, $file:expr, $($f:ident),+ $(,)?) => {
        $( if $cli.$f.is_none() { $cli.$f = $file.$f.clone(); } )+
    };
}

impl PriorArgs {
    pub fn merged(mut self, file: &PriorArgs) -> Self {
        merge!(self, file, p, nu, scale, pattern, draws, write_q);
        self
    }
}

impl FitArgs {
    pub fn merged(mut self, file: &FitArgs) -> Self {
        merge!(
            self,
            file,
            data,
            family,
            iterations,
            burnin,
            thin,
            nu,
            scale,
            pi,
            holdout,
            threshold,
            nuts_madapt,
            nuts_delta,
            max_tree_depth,
            random_sweep
        );
        self
    }
}

impl SimArgs {
    pub fn merged(mut self, file: &SimArgs) -> Self {
        merge!(
            self,
            file,
            p,
            pattern,
            n,
            family,
            mu,
            pmiss,
            missing,
            replicas,
            iterations,
            burnin,
            thin,
            nu,
            pi,
            threshold,
            nuts_madapt,
            nuts_delta,
            kl_orientation
        );
        self
    }
}

impl EvalArgs {
    pub fn merged(mut self, file: &EvalArgs) -> Self {
        merge!(self, file, truth, truth_pattern, fit, kl_orientation);
        self
    }
}

/// Global settings after merging the command line with the config file.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl Globals {
    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::validation("a seed is required: pass --seed or set `seed` in the config file"))
    }
}

pub fn parse_kl_orientation(s: Option<&str>) -> CliResult<sparse_bartlett::metrics::KlOrientation> {
    use sparse_bartlett::metrics::KlOrientation;
    match s.map(|v| v.to_ascii_lowercase()) {
        None => Ok(KlOrientation::EstimateToTruth),
        Some(v) if v == "estimate-to-truth" => Ok(KlOrientation::EstimateToTruth),
        Some(v) if v == "truth-to-estimate" => Ok(KlOrientation::TruthToEstimate),
        Some(v) => Err(CliError::validation(format!(
            "unknown KL orientation '{v}' (expected estimate-to-truth or truth-to-estimate)"
        ))),
    }
}

pub fn positive_fraction(name: &str, v: f64, allow_zero: bool) -> CliResult<f64> {
    let ok = if allow_zero { (0.0..1.0).contains(&v) } else { v > 0.0 && v < 1.0 };
    if ok {
        Ok(v)
    } else {
        Err(CliError::validation(format!("{name} must be in {}, got {v}", if allow_zero { "[0, 1)" } else { "(0, 1)" })))
    }
}
