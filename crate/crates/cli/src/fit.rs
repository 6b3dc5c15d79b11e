use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sparse_bartlett::mcmc::{run_chain_with, ChainConfig, ChainDiagnostics, SummaryAccumulator};
use sparse_bartlett::metrics::{crps_empirical, quantile_sorted};
use sparse_bartlett::nuts::NutsConfig;
use sparse_bartlett::posterior::{Family, ModelSpec};

use crate::config::{positive_fraction, FitArgs, Globals};
use crate::error::{CliError, CliResult};
use crate::io::{
    ensure_dir, matrix_csv, out_path, pattern_csv, read_data_csv, to_json_pretty, write_text, Provenance,
};
use crate::prior::{build_prior, resolve_scale};

/// Offset mixed into the seed for choosing held-out cells, so that the
/// chain's stream stays the one given by `seed`.
const HOLDOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Serialize)]
pub struct FitRun {
    pub seed: u64,
    pub data: PathBuf,
    pub family: Family,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub nu: f64,
    pub scale: String,
    pub pi: f64,
    pub holdout: f64,
    pub threshold: f64,
    pub nuts: NutsConfig,
    pub random_sweep: bool,
}

impl FitRun {
    fn resolve(a: FitArgs, g: &Globals) -> CliResult<Self> {
        let seed = g.require_seed()?;
        let data = a.data.ok_or_else(|| CliError::validation("no data file: pass --data"))?;
        let family = a.family.as_deref().unwrap_or("gaussian").parse::<Family>()?;
        let pi = a.pi.unwrap_or(0.5);
        if !(0.0..=1.0).contains(&pi) {
            return Err(CliError::validation(format!("pi must be in [0, 1], got {pi}")));
        }
        let nuts = NutsConfig {
            m_adapt: a.nuts_madapt.unwrap_or(10),
            delta: a.nuts_delta.unwrap_or(0.5),
            max_tree_depth: a.max_tree_depth.unwrap_or(10),
            ..NutsConfig::default()
        };
        Ok(Self {
            seed,
            data,
            family,
            iterations: a.iterations.unwrap_or(10_000),
            burnin: a.burnin.unwrap_or(8_000),
            thin: a.thin.unwrap_or(1),
            nu: a.nu.unwrap_or(3.0),
            scale: a.scale.unwrap_or_else(|| "identity".into()),
            pi,
            holdout: positive_fraction("holdout", a.holdout.unwrap_or(0.0), true)?,
            threshold: a.threshold.unwrap_or(0.5),
            nuts,
            random_sweep: a.random_sweep.unwrap_or(false),
        })
    }

    fn chain(&self) -> ChainConfig {
        ChainConfig {
            nuts: self.nuts.clone(),
            iterations: self.iterations,
            burn_in: self.burnin,
            thin: self.thin,
            seed: self.seed,
            random_sweep: self.random_sweep,
            ..ChainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCount {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub report: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    /// 1-based, like the rows and columns of the input file.
    pub row: usize,
    pub col: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub provenance: serde_json::Value,
    pub p: usize,
    pub n: usize,
    pub samples: usize,
    pub threshold: f64,
    pub lambda_hat: Vec<Vec<f64>>,
    pub inclusion: Vec<Vec<f64>>,
    pub z_hat: Vec<Vec<u8>>,
    pub edge_count: EdgeCount,
    pub missing: Vec<CellSummary>,
    pub holdout_cells: usize,
    pub holdout_crps: Option<f64>,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    iteration: usize,
    edge_count: usize,
    log_posterior: f64,
    z: Vec<u8>,
    lambda: Vec<f64>,
    #[serde(skip_serializing_if = "<[f64]>::is_empty")]
    imputed: &'a [f64],
    step_size: f64,
    divergent: bool,
}

pub fn run(args: FitArgs, g: &Globals) -> CliResult<Vec<PathBuf>> {
    let run = FitRun::resolve(args, g)?;
    let mut data = read_data_csv(&run.data)?;
    let (n, p) = (data.rows(), data.cols());
    if run.iterations <= run.burnin {
        return Err(CliError::validation(format!(
            "iterations ({}) must exceed burn-in ({})",
            run.iterations, run.burnin
        )));
    }

    // withhold a fraction of the observed cells
    let mut held: Vec<(usize, usize, f64)> = Vec::new();
    if run.holdout > 0.0 {
        let observed: Vec<usize> = (0..n * p).filter(|&c| data.mask()[c]).collect();
        let m = (run.holdout * observed.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ HOLDOUT_STREAM);
        let mut picked: Vec<usize> = index::sample(&mut rng, observed.len(), m).into_iter().map(|i| observed[i]).collect();
        picked.sort_unstable();
        held = picked.iter().map(|&c| (c / p, c % p, data.values()[c])).collect();
        let cells: Vec<(usize, usize)> = held.iter().map(|&(i, j, _)| (i, j)).collect();
        data = data.with_masked(&cells);
        for j in 0..p {
            if (0..n).all(|i| !data.is_observed(i, j)) {
                return Err(CliError::validation(format!("holdout leaves column {} without observations", j + 1)));
            }
        }
    }

    let scale = resolve_scale(&run.scale, Some(p))?;
    let prior = build_prior(run.nu, scale)?;
    let model = ModelSpec::new(run.family, data, ModelSpec::uniform_pi(p, run.pi), prior)?;
    let missing = model.data.missing_cells();

    ensure_dir(&g.out)?;
    let prov = Provenance::new("fit", &run);
    let samples_path = out_path(&g.out, "samples.ndjson");
    let file = std::fs::File::create(&samples_path).map_err(|e| CliError::io(&samples_path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{{\"provenance\":{}}}", prov.json()).map_err(|e| CliError::io(&samples_path, e))?;
    let mut acc = SummaryAccumulator::new();
    let mut write_error: Option<std::io::Error> = None;
    let result = run_chain_with(&model, &run.chain(), |r| {
        let line = RecordLine {
            iteration: r.iteration,
            edge_count: r.edge_count,
            log_posterior: r.log_posterior,
            z: r.z.lower_bits().iter().map(|&b| b as u8).collect(),
            lambda: r.lambda.lower_packed(),
            imputed: &r.imputed,
            step_size: r.step_size,
            divergent: r.divergent,
        };
        let written = serde_json::to_writer(&mut w, &line)
            .map_err(std::io::Error::from)
            .and_then(|_| writeln!(w));
        if let Err(e) = written {
            write_error = Some(e);
            return Err(sparse_bartlett::Error::invalid("record stream write failed"));
        }
        acc.push(&r);
        Ok(())
    });
    if let Some(e) = write_error {
        return Err(CliError::io(&samples_path, e));
    }
    let diagnostics = result?;
    w.flush().map_err(|e| CliError::io(&samples_path, e))?;
    drop(w);

    let summary = acc.finish(run.threshold)?;
    let draws = acc.cell_draws();
    let cell_summaries: Vec<CellSummary> = missing
        .iter()
        .zip(draws)
        .zip(&summary.imputed_mean)
        .map(|((&(row, col), d), &mean)| {
            let mut s = d.clone();
            s.sort_by(f64::total_cmp);
            CellSummary {
                row: row + 1,
                col: col + 1,
                mean,
                lower: quantile_sorted(&s, 0.025),
                upper: quantile_sorted(&s, 0.975),
            }
        })
        .collect();

    let mut written = vec![samples_path];

    // held-out cells: scores and predictive draws
    let mut holdout_crps = None;
    if !held.is_empty() {
        let mut table = prov.comment();
        table.push_str("row,col,truth,mean,crps\n");
        let mut draw_table = prov.comment();
        draw_table.push_str("row,col,draws...\n");
        let mut total = 0.0;
        for &(i, j, truth) in &held {
            let pos = missing.binary_search(&(i, j)).expect("held-out cell is missing");
            let score = crps_empirical(&draws[pos], truth);
            total += score;
            let _ = writeln!(table, "{},{},{truth:?},{:?},{score:?}", i + 1, j + 1, summary.imputed_mean[pos]);
            let joined: Vec<String> = draws[pos].iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(draw_table, "{},{},{}", i + 1, j + 1, joined.join(","));
        }
        holdout_crps = Some(total / held.len() as f64);
        let path = out_path(&g.out, "holdout.csv");
        write_text(&path, &table)?;
        written.push(path);
        let path = out_path(&g.out, "predictive_draws.csv");
        write_text(&path, &draw_table)?;
        written.push(path);
    }

    let lambda_rows = summary.lambda_hat.to_rows();
    let inclusion: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|k| summary.inclusion(j, k)).collect()).collect();
    let out = FitSummary {
        provenance: serde_json::to_value(&prov).expect("provenance serializes"),
        p,
        n,
        samples: summary.samples,
        threshold: run.threshold,
        lambda_hat: lambda_rows.clone(),
        inclusion: inclusion.clone(),
        z_hat: summary.z_hat.to_dense(),
        edge_count: EdgeCount {
            mean: summary.edge_mean,
            lower: summary.edge_lower,
            upper: summary.edge_upper,
            report: summary.edge_report(),
        },
        missing: cell_summaries,
        holdout_cells: held.len(),
        holdout_crps,
        diagnostics,
    };
    let path = out_path(&g.out, "summary.json");
    write_text(&path, &to_json_pretty(&out))?;
    written.push(path);
    let path = out_path(&g.out, "lambda_hat.csv");
    write_text(&path, &matrix_csv(&prov.comment(), &lambda_rows))?;
    written.push(path);
    let path = out_path(&g.out, "inclusion.csv");
    write_text(&path, &matrix_csv(&prov.comment(), &inclusion))?;
    written.push(path);
    let path = out_path(&g.out, "z_hat.csv");
    write_text(&path, &pattern_csv(&prov.comment(), &summary.z_hat))?;
    written.push(path);

    println!("edges: {}", out.edge_count.report);
    if let Some(c) = holdout_crps {
        println!("held-out cells: {}  mean CRPS: {c:.4}", held.len());
    }
    Ok(written)
}

/// Loads `summary.json` from a fit directory or the file itself.
pub fn load_summary(path: &Path) -> CliResult<(FitSummary, PathBuf)> {
    let file = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
    let s: FitSummary =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", file.display())))?;
    Ok((s, file))
}
