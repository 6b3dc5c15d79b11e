use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use sparse_bartlett::mcmc::ChainConfig;
use sparse_bartlett::nuts::NutsConfig;
use sparse_bartlett::posterior::Family;
use sparse_bartlett::sim::{run_study, MissingMode, MetricSummary, SimScenario, TruthPattern};

use crate::config::{parse_kl_orientation, Globals, SimArgs};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, out_path, to_json_pretty, write_text, Provenance};

#[derive(Debug, Clone, Serialize)]
struct SimRun {
    scenario: SimScenario,
    chain: ChainConfig,
}

fn resolve(a: SimArgs, g: &Globals) -> CliResult<SimRun> {
    let seed = g.require_seed()?;
    let d = SimScenario::default();
    let family = a.family.as_deref().unwrap_or("gaussian").parse::<Family>()?;
    let missing = match a.missing.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None | Some("cells") => MissingMode::Cells,
        Some("rows") => MissingMode::Rows,
        Some(other) => {
            return Err(CliError::validation(format!(
                "unknown missingness '{other}' (expected cells or rows)"
            )))
        }
    };
    let pattern = match &a.pattern {
        Some(s) => s.parse::<TruthPattern>()?,
        None => d.pattern,
    };
    let scenario = SimScenario {
        p: a.p.unwrap_or(d.p),
        pattern,
        n: a.n.unwrap_or(d.n),
        family,
        mu: a.mu.unwrap_or(d.mu),
        pmiss: a.pmiss.unwrap_or(d.pmiss),
        missing,
        replicas: a.replicas.unwrap_or(d.replicas),
        seed,
        nu: a.nu.unwrap_or(d.nu),
        pi: a.pi.unwrap_or(d.pi),
        threshold: a.threshold.unwrap_or(d.threshold),
        kl_orientation: parse_kl_orientation(a.kl_orientation.as_deref())?,
    };
    scenario.validate()?;
    let chain = ChainConfig {
        nuts: NutsConfig {
            m_adapt: a.nuts_madapt.unwrap_or(10),
            delta: a.nuts_delta.unwrap_or(0.5),
            ..NutsConfig::default()
        },
        iterations: a.iterations.unwrap_or(10_000),
        burn_in: a.burnin.unwrap_or(8_000),
        thin: a.thin.unwrap_or(1),
        ..ChainConfig::default()
    };
    chain.validate()?;
    Ok(SimRun { scenario, chain })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn run(args: SimArgs, g: &Globals) -> CliResult<Vec<PathBuf>> {
    let run = resolve(args, g)?;
    let study = run_study(&run.scenario, &run.chain)?;
    let prov = Provenance::new("simulate", &run);
    ensure_dir(&g.out)?;

    let mut table = prov.comment();
    table.push_str(
        "replica,seed,status,sensitivity,specificity,kl_discrepancy,crps,edge_mean,edge_lower,edge_upper,divergences,error\n",
    );
    for r in &study.replicas {
        let rep = r.report.as_ref();
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.replica,
            r.seed,
            if rep.is_some() { "ok" } else { "failed" },
            opt(rep.map(|x| x.sensitivity)),
            opt(rep.map(|x| x.specificity)),
            opt(rep.map(|x| x.kl_discrepancy)),
            opt(rep.and_then(|x| x.crps_mean)),
            opt(rep.map(|x| x.edge_count_mean)),
            opt(rep.map(|x| x.edge_count_lower)),
            opt(rep.map(|x| x.edge_count_upper)),
            r.divergences,
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    let replicas_path = out_path(&g.out, "replicas.csv");
    write_text(&replicas_path, &table)?;

    let a = &study.aggregate;
    let rows: [(&str, Option<MetricSummary>); 5] = [
        ("sensitivity", a.sensitivity),
        ("specificity", a.specificity),
        ("kl_discrepancy", a.kl_discrepancy),
        ("crps", a.crps),
        ("edge_count", a.edge_count),
    ];
    let mut agg = prov.comment();
    agg.push_str("metric,mean,median,lower,upper,replicas\n");
    println!("{:<16}{:>10}{:>10}{:>10}{:>10}", "metric", "mean", "median", "2.5%", "97.5%");
    for (name, m) in rows {
        match m {
            Some(m) => {
                let _ = writeln!(agg, "{name},{:?},{:?},{:?},{:?},{}", m.mean, m.median, m.lower, m.upper, a.succeeded);
                println!("{name:<16}{:>10.4}{:>10.4}{:>10.4}{:>10.4}", m.mean, m.median, m.lower, m.upper);
            }
            None => {
                let _ = writeln!(agg, "{name},,,,,0");
            }
        }
    }
    println!("replicas: {} ok, {} failed", a.succeeded, a.failed);
    let agg_path = out_path(&g.out, "aggregate.csv");
    write_text(&agg_path, &agg)?;

    #[derive(Serialize)]
    struct StudyFile<'a> {
        provenance: &'a Provenance<'a, SimRun>,
        study: &'a sparse_bartlett::sim::StudyResult,
    }
    let json_path = out_path(&g.out, "study.json");
    write_text(&json_path, &to_json_pretty(&StudyFile { provenance: &prov, study: &study }))?;
    Ok(vec![replicas_path, agg_path, json_path])
}
