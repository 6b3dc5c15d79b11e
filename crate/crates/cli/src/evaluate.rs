use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use sparse_bartlett::linalg::{pattern_of, SparsityPattern, SpdMatrix};
use sparse_bartlett::metrics::{kl_oriented, sensitivity, specificity, EvalReport, KlOrientation};

use crate::config::{parse_kl_orientation, EvalArgs, Globals};
use crate::error::{CliError, CliResult};
use crate::fit::load_summary;
use crate::io::{ensure_dir, out_path, read_pattern, read_spd, to_json_pretty, write_text, Provenance};

/// Relative threshold for reading the true graph off the truth matrix.
const PATTERN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
struct EvalRun {
    truth: PathBuf,
    truth_pattern: Option<PathBuf>,
    fit: PathBuf,
    kl_orientation: KlOrientation,
}

#[derive(Serialize)]
struct EvalFile<'a> {
    provenance: Provenance<'a, EvalRun>,
    report: &'a EvalReport,
    edge_count: String,
    true_edges: usize,
    kl_formula: &'static str,
}

pub fn run(args: EvalArgs, g: &Globals) -> CliResult<Vec<PathBuf>> {
    let run = EvalRun {
        truth: args.truth.ok_or_else(|| CliError::validation("no truth file: pass --truth"))?,
        truth_pattern: args.truth_pattern,
        fit: args.fit.ok_or_else(|| CliError::validation("no fit output: pass --fit"))?,
        kl_orientation: parse_kl_orientation(args.kl_orientation.as_deref())?,
    };
    let truth = read_spd(&run.truth)?;
    let p = truth.dim();
    let z_true = match &run.truth_pattern {
        Some(path) => read_pattern(path)?,
        None => pattern_of(&truth, PATTERN_TOL),
    };
    let (summary, _) = load_summary(&run.fit)?;
    if summary.p != p || z_true.dim() != p {
        return Err(CliError::validation(format!(
            "dimension mismatch: truth is {p} x {p}, pattern {}, fit {}",
            z_true.dim(),
            summary.p
        )));
    }
    let lambda_hat = SpdMatrix::from_rows(&summary.lambda_hat)?;
    let z_hat = SparsityPattern::from_dense(&summary.z_hat)?;
    let report = EvalReport {
        sensitivity: sensitivity(&z_true, &z_hat)?,
        specificity: specificity(&z_true, &z_hat)?,
        kl_discrepancy: kl_oriented(&lambda_hat, &truth, run.kl_orientation)?,
        kl_orientation: run.kl_orientation,
        crps_mean: summary.holdout_crps,
        edge_count_mean: summary.edge_count.mean,
        edge_count_lower: summary.edge_count.lower,
        edge_count_upper: summary.edge_count.upper,
    };

    let mut text = String::new();
    let _ = writeln!(text, "{:<16}{}", "sensitivity", format_args!("{:.4}", report.sensitivity));
    let _ = writeln!(text, "{:<16}{}", "specificity", format_args!("{:.4}", report.specificity));
    let _ = writeln!(text, "{:<16}{}", "kl", format_args!("{:.6}", report.kl_discrepancy));
    match report.crps_mean {
        Some(c) => {
            let _ = writeln!(text, "{:<16}{c:.4}", "crps");
        }
        None => {
            let _ = writeln!(text, "{:<16}-", "crps");
        }
    }
    let _ = writeln!(text, "{:<16}{}", "edges", report.edge_report());
    let _ = writeln!(text, "{:<16}{}", "true edges", z_true.edge_count());
    print!("{text}");

    ensure_dir(&g.out)?;
    let file = EvalFile {
        edge_count: report.edge_report(),
        true_edges: z_true.edge_count(),
        kl_formula: match run.kl_orientation {
            KlOrientation::EstimateToTruth => "KL(N(0, lambda_hat^-1) || N(0, lambda^-1))",
            KlOrientation::TruthToEstimate => "KL(N(0, lambda^-1) || N(0, lambda_hat^-1))",
        },
        report: &report,
        provenance: Provenance::new("evaluate", &run),
    };
    let json_path = out_path(&g.out, "evaluation.json");
    write_text(&json_path, &to_json_pretty(&file))?;
    let txt_path = out_path(&g.out, "evaluation.txt");
    write_text(&txt_path, &format!("{}{text}", file.provenance.comment()))?;
    Ok(vec![json_path, txt_path])
}
