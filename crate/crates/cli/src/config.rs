//! Flags, config files and the validated run configuration.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use fracpoint_core::processes::{OrderSequence, ProcessKind, SumMode, TruncationPolicy};
use fracpoint_core::transforms::DEFAULT_TALBOT_POINTS;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "fracpoint", version, about = "State probabilities of state-dependent fractional point processes")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Series values over a grid of states and times.
    Eval(RunArgs),
    /// The same grid by several methods, with their largest disagreement.
    Compare(RunArgs),
    /// Monte-Carlo estimates of the pmf, optionally dumping event times.
    Simulate(RunArgs),
    /// Densities of sums of Mittag-Leffler variables.
    Convolve(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Series,
    Adm,
    Talbot,
    Mc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Series => "series",
            Method::Adm => "adm",
            Method::Talbot => "talbot",
            Method::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// sdtfpp1, sdtfpp2, sdfpbp, tfpp, fpbp, sdlbp, conv-unit or conv-general.
    #[arg(long)]
    pub process: Option<String>,
    /// Comma-separated orders in (0, 1].
    #[arg(long)]
    pub orders: Option<String>,
    /// Comma-separated per-state rates (sdfpbp, fpbp, conv-general).
    #[arg(long)]
    pub rates: Option<String>,
    /// Common rate (sdtfpp1, sdtfpp2, tfpp, sdlbp).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// States: `3`, `0..4` or `0-4` (inclusive), or `1,3,5`.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub t_start: Option<f64>,
    #[arg(long)]
    pub t_stop: Option<f64>,
    #[arg(long)]
    pub t_count: Option<usize>,
    #[arg(long, value_enum)]
    pub t_scale: Option<Scale>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// plain, compensated or extended.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated subset of series, adm, talbot, mc.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, value_enum)]
    pub output: Option<Format>,
    #[arg(long)]
    pub out_file: Option<PathBuf>,
    /// key=value file with the same keys as the long flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Largest tolerated difference between deterministic methods.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub talbot_points: Option<usize>,
    /// Repeat the order and rate lists periodically to this length.
    #[arg(long)]
    pub cycle_orders: Option<usize>,
    /// Write the event times of every simulated path to this file.
    #[arg(long)]
    pub paths_file: Option<PathBuf>,
    /// Stop paths in the last supplied state instead of failing.
    #[arg(long)]
    pub censor: bool,
    /// Estimate sdfpbp through the factorized transform instead of paths.
    #[arg(long)]
    pub factorized: bool,
}

/// Parses `args`, splicing the entries of a `--config` file in front of the
/// explicit flags so that the flags take precedence.
pub fn parse<I: IntoIterator<Item = OsString>>(args: I) -> Result<Cli, CliError> {
    let args: Vec<OsString> = args.into_iter().collect();
    let Some(path) = config_path(&args) else {
        return Cli::try_parse_from(args).map_err(CliError::Usage);
    };
    let sub = args[1].to_string_lossy().into_owned();
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
    let injected = config_args(&sub, &text)?;
    let mut merged = args[..2].to_vec();
    merged.extend(injected.into_iter().map(OsString::from));
    merged.extend(args[2..].iter().cloned());
    Cli::try_parse_from(merged).map_err(CliError::Usage)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn config_args(sub: &str, text: &str) -> Result<Vec<String>, CliError> {
    let cmd = Cli::command();
    let Some(sub_cmd) = cmd.find_subcommand(sub) else {
        return Err(CliError::Config(format!("config: unknown subcommand `{sub}`")));
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("config line {}: expected key=value", i + 1)));
        };
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .filter(|_| key != "config")
            .ok_or_else(|| CliError::Config(format!("config line {}: unknown key `{key}`", i + 1)))?;
        if arg.get_action().takes_values() {
            out.push(format!("--{key}"));
            out.push(value.to_string());
        } else {
            match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                _ => {
                    return Err(CliError::Config(format!(
                        "config line {}: `{key}` takes true or false",
                        i + 1
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: ProcessKind,
    pub params: OrderSequence,
    pub states: Vec<usize>,
    pub times: Vec<f64>,
    pub policy: TruncationPolicy,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub samples: u64,
    pub format: Format,
    pub out_file: Option<PathBuf>,
    pub tolerance: f64,
    pub talbot_points: usize,
    pub paths_file: Option<PathBuf>,
    pub censor: bool,
    pub factorized: bool,
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn parse_list(field: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| bad(field, format!("`{}`: {e}", x.trim()))))
        .collect()
}

pub fn parse_states(s: &str) -> Result<Vec<usize>, CliError> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| bad("n", format!("`{}`: {e}", x.trim())));
    let range = s.split_once("..").or_else(|| s.split_once('-'));
    let mut states = match range {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(bad("n", format!("empty range {s}")));
            }
            (a..=b).collect()
        }
        None => s.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
    };
    states.sort_unstable();
    states.dedup();
    Ok(states)
}

fn cycle<T: Copy>(v: &[T], len: Option<usize>) -> Vec<T> {
    match len {
        Some(l) if l > v.len() => v.iter().cycle().take(l).copied().collect(),
        _ => v.to_vec(),
    }
}

pub fn time_grid(start: f64, stop: f64, count: usize, scale: Scale) -> Result<Vec<f64>, CliError> {
    if count == 0 {
        return Err(bad("t-count", "must be at least 1"));
    }
    if !(start >= 0.0 && start.is_finite()) || !(stop >= 0.0 && stop.is_finite()) {
        return Err(bad("t-start", "times must be finite and nonnegative"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    if stop < start {
        return Err(bad("t-stop", "must not be below t-start"));
    }
    let step = |i: usize| i as f64 / (count - 1) as f64;
    Ok(match scale {
        Scale::Linear => (0..count).map(|i| start + (stop - start) * step(i)).collect(),
        Scale::Log => {
            if start <= 0.0 {
                return Err(bad("t-start", "a log grid needs t-start > 0"));
            }
            let (a, b) = (start.ln(), stop.ln());
            (0..count)
                .map(|i| match i {
                    0 => start,
                    _ if i == count - 1 => stop,
                    _ => (a + (b - a) * step(i)).exp(),
                })
                .collect()
        }
    })
}

impl RunArgs {
    pub fn resolve(&self, convolve: bool) -> Result<RunConfig, CliError> {
        let process = self.process.as_deref().ok_or_else(|| bad("process", "missing"))?;
        let kind: ProcessKind = process.parse().map_err(|e| bad("process", e))?;
        if convolve && !kind.is_density() {
            return Err(bad("process", "convolve takes conv-unit or conv-general"));
        }
        let orders = parse_list("orders", self.orders.as_deref().ok_or_else(|| bad("orders", "missing"))?)?;
        let orders = cycle(&orders, self.cycle_orders);
        let params = match kind {
            ProcessKind::ConvUnit => {
                if self.rates.is_some() || self.lambda.is_some() {
                    return Err(bad("rates", "conv-unit has unit rates"));
                }
                OrderSequence::common(&orders, 1.0)
            }
            _ if kind.per_state_rates() => {
                if self.lambda.is_some() {
                    return Err(bad("lambda", format!("{kind} takes --rates")));
                }
                let rates = parse_list("rates", self.rates.as_deref().ok_or_else(|| bad("rates", "missing"))?)?;
                OrderSequence::per_state(&orders, &cycle(&rates, self.cycle_orders))
            }
            _ => {
                if self.rates.is_some() {
                    return Err(bad("rates", format!("{kind} takes --lambda")));
                }
                OrderSequence::common(&orders, self.lambda.ok_or_else(|| bad("lambda", "missing"))?)
            }
        }
        .map_err(|e| bad("orders", e))?;
        let states = match (&self.n, kind) {
            (Some(s), _) => parse_states(s)?,
            (None, ProcessKind::ConvUnit) => vec![orders.len() - 1],
            (None, ProcessKind::ConvGeneral) => vec![orders.len()],
            (None, _) => return Err(bad("n", "missing")),
        };
        if states.is_empty() {
            return Err(bad("n", "no states given"));
        }
        for &n in &states {
            kind.canonical(&params, n).map_err(|e| bad("orders", e))?;
        }
        let start = self.t_start.unwrap_or(1.0);
        let times = time_grid(
            start,
            self.t_stop.unwrap_or(start),
            self.t_count.unwrap_or(1),
            self.t_scale.unwrap_or(Scale::Linear),
        )?;
        let defaults = TruncationPolicy::default();
        let mode: SumMode = match &self.mode {
            Some(m) => m.parse().map_err(|e| bad("mode", e))?,
            None => defaults.mode,
        };
        let policy = TruncationPolicy::new(
            self.rel_tol.unwrap_or(defaults.rel_tol),
            self.abs_tol.unwrap_or(defaults.abs_tol),
            self.k_max.unwrap_or(defaults.k_max),
            mode,
        )
        .map_err(|e| bad("rel-tol", e))?;
        let methods = match &self.methods {
            Some(m) => m
                .split(',')
                .map(|x| Method::from_str(x.trim(), true).map_err(|e| bad("methods", e)))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![Method::Series],
        };
        if methods.is_empty() {
            return Err(bad("methods", "at least one method is required"));
        }
        let tolerance = self.tolerance.unwrap_or(1e-8);
        if !(tolerance > 0.0) {
            return Err(bad("tolerance", "must be positive"));
        }
        let talbot_points = self.talbot_points.unwrap_or(DEFAULT_TALBOT_POINTS);
        if talbot_points < 16 {
            return Err(bad("talbot-points", "at least 16 are required"));
        }
        let samples = self.samples.unwrap_or(100_000);
        if samples == 0 {
            return Err(bad("samples", "must be positive"));
        }
        Ok(RunConfig {
            kind,
            params,
            states,
            times,
            policy,
            methods,
            seed: self.seed.unwrap_or(0),
            samples,
            format: self.output.unwrap_or(Format::Csv),
            out_file: self.out_file.clone(),
            tolerance,
            talbot_points,
            paths_file: self.paths_file.clone(),
            censor: self.censor,
            factorized: self.factorized,
        })
    }
}
