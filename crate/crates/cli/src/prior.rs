use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sparse_bartlett::linalg::{chol_product, cholesky, SparsityPattern, SpdMatrix};
use sparse_bartlett::sbartlett::{sample_prior, SBartlettParams};
use sparse_bartlett::sim::TruthPattern;

use crate::config::{Globals, PriorArgs};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, matrix_csv, out_path, read_pattern, read_spd, to_json_pretty, write_text, Provenance};

/// Scale matrix from `identity` or a CSV path.
pub fn resolve_scale(scale: &str, p: Option<usize>) -> CliResult<SpdMatrix> {
    if scale.eq_ignore_ascii_case("identity") {
        let p = p.ok_or_else(|| CliError::validation("dimension unknown: pass --p or a scale/pattern file"))?;
        return Ok(SpdMatrix::identity(p));
    }
    let m = read_spd(Path::new(scale))?;
    if let Some(p) = p {
        if m.dim() != p {
            return Err(CliError::validation(format!(
                "scale matrix {scale} is {d} x {d}, expected {p} x {p}",
                d = m.dim()
            )));
        }
    }
    Ok(m)
}

pub fn build_prior(nu: f64, scale: SpdMatrix) -> CliResult<SBartlettParams> {
    SBartlettParams::new(nu, scale).map_err(|e| match e {
        sparse_bartlett::Error::NotPositiveDefinite { .. } => {
            CliError::validation(format!("scale matrix is not positive definite ({e})"))
        }
        other => other.into(),
    })
}

fn resolve_pattern(spec: &str, p: Option<usize>, rng: &mut ChaCha8Rng) -> CliResult<SparsityPattern> {
    let need_p = || p.ok_or_else(|| CliError::validation("dimension unknown: pass --p or a scale/pattern file"));
    match spec.to_ascii_lowercase().as_str() {
        "full" => return Ok(SparsityPattern::full(need_p()?)),
        "identity" | "diagonal" => return Ok(SparsityPattern::identity(need_p()?)),
        _ => {}
    }
    if spec.contains(':') && !Path::new(spec).exists() {
        let p = need_p()?;
        return match spec.parse::<TruthPattern>()? {
            TruthPattern::Band { w } => {
                if w == 0 || w >= p {
                    return Err(CliError::validation(format!("band width must satisfy 1 <= w < p, got {w}")));
                }
                Ok(SparsityPattern::band(p, w))
            }
            TruthPattern::Random { alpha } => {
                if !(0.0..1.0).contains(&alpha) {
                    return Err(CliError::validation(format!("alpha must be in [0, 1), got {alpha}")));
                }
                use rand::Rng;
                Ok(SparsityPattern::from_fn(p, |_, _| rng.random::<f64>() >= alpha))
            }
        };
    }
    let z = read_pattern(Path::new(spec))?;
    if let Some(p) = p {
        if z.dim() != p {
            return Err(CliError::validation(format!("pattern {spec} has dimension {}, expected {p}", z.dim())));
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Serialize)]
struct PriorRun {
    seed: u64,
    p: usize,
    nu: f64,
    scale: String,
    pattern: String,
    draws: usize,
    write_q: bool,
}

#[derive(Serialize)]
struct DrawLine<'a> {
    draw: usize,
    lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct Verification {
    /// Largest `|lambda_jk| / max_diag` over entries forced to zero.
    max_forced_ratio: f64,
    forced_zeros_ok: bool,
    min_pivot: f64,
    all_pivots_positive: bool,
    mean_lambda: Vec<Vec<f64>>,
    /// `(nu + p - 1) S`, the mean of the prior for a full pattern.
    #[serde(skip_serializing_if = "Option::is_none")]
    full_pattern_mean: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct PriorReport<'a> {
    provenance: Provenance<'a, PriorRun>,
    p: usize,
    draws: usize,
    edges: usize,
    pattern: Vec<Vec<u8>>,
    verification: Verification,
}

pub fn run(args: PriorArgs, g: &Globals) -> CliResult<Vec<PathBuf>> {
    let seed = g.require_seed()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = args.nu.unwrap_or(3.0);
    let scale_spec = args.scale.clone().unwrap_or_else(|| "identity".into());
    let pattern_spec = args.pattern.clone().unwrap_or_else(|| "full".into());
    let draws = args.draws.unwrap_or(1000);
    if draws == 0 {
        return Err(CliError::validation("draws must be at least 1"));
    }
    let write_q = args.write_q.unwrap_or(false);

    let mut p = args.p;
    let pattern_is_file = Path::new(&pattern_spec).is_file();
    if pattern_is_file && p.is_none() {
        p = Some(read_pattern(Path::new(&pattern_spec))?.dim());
    }
    let scale = resolve_scale(&scale_spec, p)?;
    let p = scale.dim();
    let z = resolve_pattern(&pattern_spec, Some(p), &mut rng)?;
    let prior = build_prior(nu, scale)?;

    let run = PriorRun {
        seed,
        p,
        nu,
        scale: scale_spec,
        pattern: pattern_spec,
        draws,
        write_q,
    };
    let prov = Provenance::new("sample-prior", &run);
    ensure_dir(&g.out)?;
    let draws_path = out_path(&g.out, "prior_draws.ndjson");
    let file = std::fs::File::create(&draws_path).map_err(|e| CliError::io(&draws_path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| CliError::io(&draws_path, e);
    writeln!(w, "{{\"provenance\":{}}}", prov.json()).map_err(io_err)?;

    let mut sum = vec![0.0; p * p];
    let mut max_ratio: f64 = 0.0;
    let mut min_pivot = f64::INFINITY;
    for d in 0..draws {
        let q = sample_prior(&prior, &z, &mut rng)?;
        let lambda = chol_product(&q);
        for (s, v) in sum.iter_mut().zip(lambda.as_slice()) {
            *s += v;
        }
        let md = lambda.max_diag();
        for j in 0..p {
            for k in 0..j {
                if !z.get(j, k) {
                    max_ratio = max_ratio.max(lambda.get(j, k).abs() / md);
                }
            }
        }
        min_pivot = match cholesky(&lambda) {
            Ok(l) => (0..p).map(|k| l.get(k, k)).fold(min_pivot, f64::min),
            Err(_) => min_pivot.min(0.0),
        };
        let line = DrawLine {
            draw: d,
            lambda: lambda.lower_packed(),
            q: write_q.then(|| q.packed()),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| CliError::io(&draws_path, e.into()))?;
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    let mean: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|k| sum[j * p + k] / draws as f64).collect())
        .collect();
    let full_pattern_mean = (z == SparsityPattern::full(p)).then(|| {
        let dof = nu + p as f64 - 1.0;
        prior.scale().scaled(dof).to_rows()
    });
    let report = PriorReport {
        provenance: Provenance::new("sample-prior", &run),
        p,
        draws,
        edges: z.edge_count(),
        pattern: z.to_dense(),
        verification: Verification {
            max_forced_ratio: max_ratio,
            forced_zeros_ok: max_ratio < 1e-10,
            min_pivot,
            all_pivots_positive: min_pivot > 0.0,
            mean_lambda: mean.clone(),
            full_pattern_mean,
        },
    };
    let report_path = out_path(&g.out, "prior_report.json");
    write_text(&report_path, &to_json_pretty(&report))?;
    let mean_path = out_path(&g.out, "prior_mean.csv");
    write_text(&mean_path, &matrix_csv(&prov.comment(), &mean))?;
    Ok(vec![draws_path, report_path, mean_path])
}
