//! The four subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use fracpoint_core::adm::AdmEngine;
use fracpoint_core::processes::{EvalResult, ProcessKind, StateSeries};
use fracpoint_core::simulate::{
    chunks, simulate_chunk, FactorEstimator, McEstimate, PathRecord, PathSimulator, SdfpbpSimulator,
    Sdtfpp2Simulator, StateHistogram,
};
use fracpoint_core::transforms::{talbot_invert, LtClosedForm};
use rayon::prelude::*;

use crate::config::{Method, RunConfig};
use crate::table::{format_num, Cell, Table};
use crate::CliError;

fn eval_err(kind: ProcessKind, n: usize, t: f64, e: impl std::fmt::Display) -> CliError {
    CliError::Eval(format!("{kind} n={n} t={t}: {e}"))
}

/// Series results for every state and time, rows ordered by `(n, t)`.
fn series_grid(cfg: &RunConfig) -> Result<Vec<Vec<EvalResult>>, CliError> {
    cfg.states
        .par_iter()
        .map(|&n| {
            let mut s = StateSeries::new(cfg.kind, &cfg.params, n).map_err(|e| eval_err(cfg.kind, n, 0.0, e))?;
            cfg.times
                .iter()
                .map(|&t| s.eval(t, &cfg.policy).map_err(|e| eval_err(cfg.kind, n, t, e)))
                .collect()
        })
        .collect()
}

fn warn_unreliable(cfg: &RunConfig, grid: &[Vec<EvalResult>]) {
    for (&n, row) in cfg.states.iter().zip(grid) {
        for (&t, r) in cfg.times.iter().zip(row) {
            if !r.reliable {
                let note = r.note.as_deref().unwrap_or("error estimate above tolerance");
                eprintln!("warning: n={n} t={t}: {note}");
            }
        }
    }
}

pub fn eval(cfg: &RunConfig) -> Result<Table, CliError> {
    let grid = series_grid(cfg)?;
    warn_unreliable(cfg, &grid);
    let mut table = Table::new(["n", "t", "value", "err_est", "k_used", "reliable"]);
    for (&n, row) in cfg.states.iter().zip(&grid) {
        for (&t, r) in cfg.times.iter().zip(row) {
            table.push(vec![
                Cell::Int(n as u64),
                Cell::Num(t),
                Cell::Num(r.value),
                Cell::Num(r.err_est),
                Cell::Int(r.k_used as u64),
                Cell::Bool(r.reliable),
            ]);
        }
    }
    Ok(table)
}

/// Monte-Carlo estimates keyed by state, one per time.
type McGrid = BTreeMap<usize, Vec<McEstimate>>;

fn run_paths<S: PathSimulator + Sync>(
    sim: &S,
    cfg: &RunConfig,
    dump: Option<&mut dyn Write>,
) -> Result<McGrid, CliError> {
    let keep = dump.is_some();
    let parts: Vec<(u64, u64)> = chunks(cfg.samples).collect();
    let results = parts
        .par_iter()
        .map(|&(c, size)| {
            let mut paths = keep.then(Vec::new);
            let h = simulate_chunk(sim, &cfg.times, cfg.seed, c, size, paths.as_mut())
                .map_err(|e| CliError::Eval(format!("simulation: {e}; supply more orders or pass --censor")))?;
            Ok((h, paths))
        })
        .collect::<Result<Vec<(StateHistogram, Option<Vec<PathRecord>>)>, CliError>>()?;
    let mut hist = StateHistogram::new(&cfg.times);
    let mut dump = dump;
    for (h, paths) in results {
        hist.merge(&h);
        if let (Some(w), Some(paths)) = (dump.as_deref_mut(), paths) {
            for p in paths {
                let line: Vec<String> = p.event_times.iter().map(|&x| format_num(x)).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
    }
    Ok(cfg
        .states
        .iter()
        .map(|&n| (n, (0..cfg.times.len()).map(|i| hist.estimate(i, n)).collect()))
        .collect())
}

fn run_factor(cfg: &RunConfig, make: impl Fn(usize) -> fracpoint_core::Result<FactorEstimator> + Sync) -> Result<McGrid, CliError> {
    cfg.states
        .par_iter()
        .map(|&n| {
            let est = make(n).map_err(|e| CliError::Eval(format!("estimator for n={n}: {e}")))?;
            let parts: Vec<(u64, u64)> = chunks(cfg.samples).collect();
            let hits = parts
                .par_iter()
                .map(|&(c, size)| est.chunk(&cfg.times, cfg.seed, c, size))
                .reduce(
                    || vec![0; cfg.times.len()],
                    |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
                );
            Ok((n, hits.iter().map(|&h| est.estimate(h, cfg.samples)).collect()))
        })
        .collect()
}

/// How Monte-Carlo estimates are produced for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum McRoute {
    Sdtfpp2Paths,
    SdfpbpPaths,
    Sdtfpp1Factor,
    SdfpbpFactor,
}

fn mc_route(cfg: &RunConfig, for_compare: bool) -> Result<McRoute, CliError> {
    let unsupported = || {
        CliError::Config(format!(
            "process: no Monte-Carlo route for {}; use sdtfpp1, sdtfpp2 or sdfpbp",
            cfg.kind
        ))
    };
    match cfg.kind {
        ProcessKind::Sdtfpp2 => Ok(McRoute::Sdtfpp2Paths),
        ProcessKind::Sdtfpp1 | ProcessKind::Tfpp if for_compare => Ok(McRoute::Sdtfpp1Factor),
        ProcessKind::Sdtfpp1 => Ok(McRoute::Sdtfpp1Factor),
        // Sojourn paths carry s^{ν_n - 1} where the series has s^{ν_1 - 1},
        // so comparisons against the series use the factorized estimator.
        ProcessKind::Sdfpbp | ProcessKind::Fpbp | ProcessKind::Sdlbp if for_compare => Ok(McRoute::SdfpbpFactor),
        ProcessKind::Sdfpbp if cfg.factorized => Ok(McRoute::SdfpbpFactor),
        ProcessKind::Sdfpbp => Ok(McRoute::SdfpbpPaths),
        _ => Err(unsupported()),
    }
}

fn monte_carlo(cfg: &RunConfig, route: McRoute, censor: bool, dump: Option<&mut dyn Write>) -> Result<McGrid, CliError> {
    let max_n = cfg.states.iter().copied().max().unwrap_or(0);
    let (_, base) = cfg.kind.canonical(&cfg.params, max_n).map_err(|e| CliError::Config(format!("orders: {e}")))?;
    let config_err = |e: fracpoint_core::Error| CliError::Config(format!("orders: {e}"));
    match route {
        McRoute::Sdtfpp2Paths => {
            let sim = Sdtfpp2Simulator::new(&cfg.params).map_err(config_err)?;
            let sim = if censor { sim.censored() } else { sim };
            run_paths(&sim, cfg, dump)
        }
        McRoute::SdfpbpPaths => {
            let sim = SdfpbpSimulator::new(&cfg.params).map_err(config_err)?;
            let sim = if censor { sim.censored() } else { sim };
            run_paths(&sim, cfg, dump)
        }
        McRoute::Sdtfpp1Factor => run_factor(cfg, |n| FactorEstimator::sdtfpp1(&base, n)),
        McRoute::SdfpbpFactor => run_factor(cfg, |n| FactorEstimator::sdfpbp(&base, n)),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Table, CliError> {
    let route = mc_route(cfg, false)?;
    let mut dump_file = match &cfg.paths_file {
        Some(p) if matches!(route, McRoute::Sdtfpp2Paths | McRoute::SdfpbpPaths) => {
            Some(BufWriter::new(File::create(p)?))
        }
        Some(_) => {
            return Err(CliError::Config(
                "paths-file: only path simulations (sdtfpp2, sdfpbp) produce paths".into(),
            ))
        }
        None => None,
    };
    let grid = monte_carlo(cfg, route, cfg.censor, dump_file.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = dump_file {
        w.flush()?;
    }
    let mut table = Table::new(["n", "t", "estimate", "half_width", "samples"]);
    for (&n, row) in &grid {
        for (&t, e) in cfg.times.iter().zip(row) {
            table.push(vec![
                Cell::Int(n as u64),
                Cell::Num(t),
                Cell::Num(e.estimate),
                Cell::Num(e.half_width),
                Cell::Int(e.samples),
            ]);
        }
    }
    Ok(table)
}

/// Comparison table and the number of rows outside tolerance.
pub fn compare(cfg: &RunConfig) -> Result<(Table, usize), CliError> {
    if cfg.methods.len() < 2 {
        return Err(CliError::Config("methods: compare needs at least two".into()));
    }
    let series = series_grid(cfg)?;
    let mc = if cfg.methods.contains(&Method::Mc) {
        let route = mc_route(cfg, true)?;
        Some(monte_carlo(cfg, route, true, None)?)
    } else {
        None
    };
    let deterministic: Vec<Vec<Vec<(Method, f64)>>> = cfg
        .states
        .par_iter()
        .zip(&series)
        .map(|(&n, row)| {
            let mut adm = AdmEngine::new(cfg.kind, &cfg.params, n).map_err(|e| eval_err(cfg.kind, n, 0.0, e))?;
            let form = LtClosedForm::new(cfg.kind, &cfg.params, n).map_err(|e| eval_err(cfg.kind, n, 0.0, e))?;
            cfg.times
                .iter()
                .zip(row)
                .map(|(&t, r)| {
                    let mut vals = Vec::new();
                    for &m in &cfg.methods {
                        let v = match m {
                            Method::Series => r.value,
                            // Same truncation as the series stopped at.
                            Method::Adm => adm.partial_sum(n, r.k_used, t).map_err(|e| eval_err(cfg.kind, n, t, e))?,
                            Method::Talbot => talbot_invert(&form, t, cfg.talbot_points)
                                .map_err(|e| eval_err(cfg.kind, n, t, format!("talbot: {e}")))?,
                            Method::Mc => continue,
                        };
                        vals.push((m, v));
                    }
                    Ok(vals)
                })
                .collect()
        })
        .collect::<Result<_, CliError>>()?;

    let mut columns: Vec<String> = vec!["n".into(), "t".into()];
    columns.extend(cfg.methods.iter().map(|m| m.name().to_string()));
    if mc.is_some() {
        columns.push("mc_half_width".into());
    }
    columns.extend(["max_abs_diff".into(), "within_tolerance".into()]);
    let mut table = Table::new(columns);
    let mut failures = 0;
    for (i, &n) in cfg.states.iter().enumerate() {
        for (j, &t) in cfg.times.iter().enumerate() {
            let det = &deterministic[i][j];
            let est = mc.as_ref().map(|g| g[&n][j]);
            let mut max_diff = 0.0f64;
            let mut ok = true;
            for (a, (_, x)) in det.iter().enumerate() {
                for (_, y) in &det[a + 1..] {
                    let d = (x - y).abs();
                    max_diff = max_diff.max(d);
                    ok &= d <= cfg.tolerance;
                }
            }
            if let Some(e) = est {
                // An empty or full bin has zero binomial width; fall back to 3/N.
                let width = e.half_width.max(3.0 / e.samples as f64);
                for (_, x) in det {
                    let d = (x - e.estimate).abs();
                    max_diff = max_diff.max(d);
                    ok &= d <= width;
                }
            }
            failures += usize::from(!ok);
            let mut row = vec![Cell::Int(n as u64), Cell::Num(t)];
            for &m in &cfg.methods {
                let v = match m {
                    Method::Mc => est.map_or(f64::NAN, |e| e.estimate),
                    _ => det.iter().find(|(k, _)| *k == m).map_or(f64::NAN, |p| p.1),
                };
                row.push(Cell::Num(v));
            }
            if let Some(e) = est {
                row.push(Cell::Num(e.half_width));
            }
            row.extend([Cell::Num(max_diff), Cell::Bool(ok)]);
            table.push(row);
        }
    }
    Ok((table, failures))
}
