use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softbody_cli::{cmd_ahp, cmd_replay, cmd_run, cmd_script, serve_until, CliError, RunOptions};
use softbody_core::dynamics::IntegratorKind;
use softbody_core::persistence::Format;
use softbody_server::DEFAULT_PORT;

/// Soft-body simulator: headless runs, dump replay, scripted scenarios,
/// AHP prioritization and the WebSocket server.
#[derive(Parser)]
#[command(name = "softbody", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scene for a number of ticks.
    Run {
        scene: PathBuf,
        #[arg(long)]
        steps: u64,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Read a dump and optionally check its invariants.
    Replay {
        dump: PathBuf,
        /// Exit 1 on non-monotone time, non-finite values or out-of-bounds positions.
        #[arg(long)]
        check: bool,
    },
    /// Drive a scene with a timed command script and print the outcome as JSON.
    Script {
        scene: PathBuf,
        script: PathBuf,
        /// Ticks to run; defaults to the tick that applies the last entry.
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Priority vectors from pairwise comparison matrices.
    Ahp {
        value_matrix: PathBuf,
        cost_matrix: Option<PathBuf>,
        /// Write the cost-value points here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        decimals: usize,
    },
    /// Serve a scene over WebSocket until interrupted.
    Serve {
        scene: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        dt: Option<f64>,
    },
}

#[derive(Args)]
struct RunFlags {
    /// Record every tick to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long, value_parser = parse_integrator)]
    integrator: Option<IntegratorKind>,
    #[arg(long)]
    dt: Option<f64>,
    /// Frame limit of the save-simulation recorder.
    #[arg(long)]
    capacity: Option<usize>,
    /// Default directory of the save-simulation recorder.
    #[arg(long)]
    save_dir: Option<PathBuf>,
    /// Start the simulation immediately instead of idling.
    #[arg(long)]
    start: bool,
}

impl RunFlags {
    fn into_options(self, steps: Option<u64>) -> RunOptions {
        RunOptions {
            steps,
            record: self.record,
            format: self.format,
            integrator: self.integrator,
            dt: self.dt,
            capacity: self.capacity,
            save_dir: self.save_dir,
            start: self.start,
        }
    }
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

fn parse_integrator(s: &str) -> Result<IntegratorKind, String> {
    s.parse()
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run { scene, steps, flags } => print_json(&cmd_run(&scene, &flags.into_options(Some(steps)))?),
        Cmd::Replay { dump, check } => print_json(&cmd_replay(&dump, check)?),
        Cmd::Script { scene, script, steps, flags } => {
            print_json(&cmd_script(&scene, &script, &flags.into_options(steps))?)
        }
        Cmd::Ahp { value_matrix, cost_matrix, out, decimals } => {
            let mut stdout = std::io::stdout().lock();
            cmd_ahp(&value_matrix, cost_matrix.as_deref(), out.as_deref(), decimals, &mut stdout).map(|_| ())
        }
        Cmd::Serve { scene, port, host, dt } => {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(serve_until(
                &scene,
                SocketAddr::new(host, port),
                dt,
                |addr| {
                    println!("listening on ws://{addr}{}", softbody_server::SESSION_PATH);
                    let _ = std::io::stdout().flush();
                },
                async {
                    if let Err(e) = tokio::signal::ctrl_c().await {
                        log::error!("cannot wait for interrupt: {e}");
                    }
                },
            ))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Check(violations) = &e {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
