mod commands;
mod config;
mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use config::{Command, RunConfig};
use table::Table;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(clap::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("{0} of {1} rows disagree beyond tolerance")]
    Mismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) => e.exit_code() as u8,
            CliError::Config(_) => 2,
            CliError::Eval(_) => 3,
            CliError::Mismatch(..) => 4,
            CliError::Io(_) => 1,
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FRACPOINT_THREADS") else {
        return Ok(());
    };
    let threads: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| CliError::Config(format!("FRACPOINT_THREADS: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("FRACPOINT_THREADS: {e}")))
}

fn emit(cfg: &RunConfig, table: &Table) -> Result<(), CliError> {
    match &cfg.out_file {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            table.write(cfg.format, &mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            table.write(cfg.format, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = config::parse(std::env::args_os())?;
    init_threads()?;
    match cli.command {
        Command::Eval(a) => {
            let cfg = a.resolve(false)?;
            emit(&cfg, &commands::eval(&cfg)?)
        }
        Command::Convolve(a) => {
            let cfg = a.resolve(true)?;
            emit(&cfg, &commands::eval(&cfg)?)
        }
        Command::Simulate(a) => {
            let cfg = a.resolve(false)?;
            emit(&cfg, &commands::simulate(&cfg)?)
        }
        Command::Compare(a) => {
            let cfg = a.resolve(false)?;
            let (table, failures) = commands::compare(&cfg)?;
            emit(&cfg, &table)?;
            if failures > 0 {
                return Err(CliError::Mismatch(failures, table.rows.len()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            let code = e.exit_code() as u8;
            let _ = e.print();
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("fracpoint: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
