use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mgloop::report::{overall, summary_line, write_aggregate, write_csv, write_json_lines};
use mgloop::{Command, LabError, RunConfig, Status};

/// Numerical checks of loop-space variables for gauge fields.
///
/// Exit codes: 0 every check passed, 1 a check failed or was inconclusive,
/// 2 usage or configuration error.
#[derive(Parser, Debug)]
#[command(name = "mgloop", version)]
struct Cli {
    /// TOML run configuration; the committed default when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print one aggregate JSON document instead of summary lines.
    #[arg(long, global = true)]
    json: bool,
    /// JSON-lines report file (overrides `output.path`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the Monte Carlo loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Threshold override, repeatable.
    #[arg(long = "tolerance", value_name = "NAME=VALUE", global = true)]
    tolerances: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Loop variable, transversality, nonanticipation, constraint, T map.
    VerifyKinematics,
    /// Loop-space action identity over the s-grid.
    VerifyAction,
    /// Equations-of-motion residuals.
    VerifyEom,
    /// Finite-dimensional Jacobian lab.
    VerifyJacobians,
    /// Principal chiral model on a lattice.
    VerifyPcm,
    /// Everything above.
    All,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Command {
        match c {
            Cmd::VerifyKinematics => Command::Kinematics,
            Cmd::VerifyAction => Command::Action,
            Cmd::VerifyEom => Command::Eom,
            Cmd::VerifyJacobians => Command::Jacobians,
            Cmd::VerifyPcm => Command::Pcm,
            Cmd::All => Command::All,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, LabError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default_config(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    for t in &cli.tolerances {
        cfg.set_tolerance(t)?;
    }
    if let Some(o) = &cli.out {
        cfg.output.path = Some(o.display().to_string());
    }
    Ok(cfg)
}

fn create(path: &str) -> Result<BufWriter<File>, LabError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LabError::config("output", format!("{path}: {e}")))
}

fn emit(cli: &Cli, cfg: &RunConfig, cmd: Command, reports: &[mgloop::CheckReport]) -> Result<(), LabError> {
    let io_err = |e: io::Error| LabError::config("output", e.to_string());
    if let Some(path) = &cfg.output.path {
        let mut f = create(path)?;
        write_json_lines(&mut f, reports).and_then(|_| f.flush()).map_err(io_err)?;
    }
    if let Some(path) = &cfg.output.csv {
        let mut f = create(path)?;
        write_csv(&mut f, reports).and_then(|_| f.flush()).map_err(io_err)?;
    }
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    if cli.json {
        write_aggregate(&mut lock, cmd.name(), cfg.seed, reports).map_err(io_err)?;
    } else {
        for r in reports {
            writeln!(lock, "{}", summary_line(r)).map_err(io_err)?;
        }
        writeln!(lock, "overall: {}", overall(reports).as_str()).map_err(io_err)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let cmd: Command = cli.command.into();
    let result = load(&cli).and_then(|cfg| {
        let reports = mgloop::suite::run(cmd, &cfg)?;
        emit(&cli, &cfg, cmd, &reports)?;
        Ok(overall(&reports))
    });
    match result {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(status) => {
            eprintln!("checks did not pass: {}", status.as_str());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
