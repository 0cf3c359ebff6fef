//! Experiment front end: config handling, experiment runners, and the
//! invariant self-checks.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod experiments;

use config::{load_config, parse_invocation, Command, Invocation, Manifest, RunConfig};
use experiments::{Context, Outputs, RunError};

pub const THREADS_ENV: &str = "MEGAREFINE_THREADS";

/// Thread cap from `--threads`, else from the environment.
pub fn thread_count(inv: &Invocation) -> Result<Option<usize>, RunError> {
    if inv.threads.is_some() {
        return Ok(inv.threads);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Config(config::ConfigError(format!("{THREADS_ENV}={v} is not a positive integer")))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `args` (everything after the subcommand), runs the experiment, and
/// returns a short report for the terminal.
pub fn run(command: Command, args: &[String]) -> Result<String, RunError> {
    let inv = parse_invocation(args)?;
    let cfg = load_config(command, &inv)?;
    let threads = thread_count(&inv)?;
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunError::Runtime(e.to_string()))?
            .install(|| execute(command, cfg)),
        None => execute(command, cfg),
    }
}

fn execute(command: Command, cfg: RunConfig) -> Result<String, RunError> {
    let out = Outputs::create(&cfg.output)?;
    out.json("manifest.json", &Manifest::new(command, &cfg))?;
    let report = match command {
        Command::Selftest => return selftest(&cfg, &out),
        Command::Render => {
            let rows = experiments::render(&Context::new(cfg)?, &out)?;
            out.csv("views.csv", &rows)?;
            format!("{} views rendered", rows.len())
        }
        Command::Hypotheses => {
            let h = experiments::hypotheses(&Context::new(cfg)?)?;
            out.csv("hypotheses.csv", &h.rows)?;
            out.jsonl("hypotheses.jsonl", &h.lines)?;
            let positives: usize = h.rows.iter().map(|r| r.positives).sum();
            format!("{} hypothesis sets, {} poses, {positives} in basin", h.rows.len(), h.lines.len())
        }
        Command::Coarse => {
            let c = experiments::coarse(&Context::new(cfg)?)?;
            out.results(&c.records)?;
            out.csv("scores.csv", &c.scores)?;
            success_line(&c.records)
        }
        Command::Refine => {
            let r = experiments::refine_runs(&Context::new(cfg)?)?;
            out.results(&r.records)?;
            out.traces(&r.traces)?;
            success_line(&r.records)
        }
        Command::Pipeline => {
            let p = experiments::pipeline(&Context::new(cfg)?)?;
            out.results(&p.records)?;
            out.traces(&p.traces)?;
            out.json("summary.json", &p.summary)?;
            out.csv("summary.csv", &p.summary.by_object)?;
            format!(
                "{} (selected in basin {:.3}, any in basin {:.3})",
                success_line(&p.records),
                p.summary.selected_in_basin_rate,
                p.summary.any_in_basin_rate
            )
        }
        Command::Basin => {
            let b = experiments::basin(&Context::new(cfg)?)?;
            out.results(&b.records)?;
            out.csv("basin.csv", &b.rows)?;
            b.rows
                .iter()
                .map(|r| format!("magnitude {}: {}/{} converged ({:.3})", r.magnitude, r.converged, r.trials, r.rate))
                .collect::<Vec<_>>()
                .join("\n")
        }
    };
    Ok(format!("{report}\noutputs in {}", out.dir.display()))
}

fn success_line(records: &[megarefine_core::ResultRecord]) -> String {
    let ok = records.iter().filter(|r| r.success).count();
    format!("{ok}/{} runs within 5 cm / 15 deg", records.len())
}

#[derive(serde::Serialize)]
struct CheckRow<'a> {
    check: &'a str,
    passed: bool,
    detail: &'a str,
}

fn selftest(cfg: &RunConfig, out: &Outputs) -> Result<String, RunError> {
    let results = checks::run_all(cfg.selftest.trials, cfg.seed);
    let rows: Vec<CheckRow<'_>> =
        results.iter().map(|c| CheckRow { check: c.name, passed: c.passed, detail: &c.detail }).collect();
    out.csv("checks.csv", &rows)?;
    let report = results.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("\n");
    if results.iter().all(|c| c.passed) {
        Ok(report)
    } else {
        Err(RunError::Runtime(format!("{report}\nself-test failed")))
    }
}
