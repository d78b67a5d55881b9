use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lunarhop::harness::read_log;
use lunarhop::terrain::Heightfield;
use lunarhop::twin::{check_commands, encode_commands, parse_commands, twin_rollout, BodyPose};
use lunarhop_cli::load_config;

/// Map a simulated trajectory onto platform tilt and treadmill commands.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Shared TOML config; `[twin]` sets limits and the probe layout.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write `t,phi_deg,theta_deg,speed_mps` lines for every logged step.
    Run {
        /// Heightfield the trajectory was recorded on.
        #[arg(long)]
        terrain: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a command file against the platform limits.
    Check {
        #[arg(long)]
        commands: PathBuf,
    },
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?.twin;
    match cli.cmd {
        Cmd::Run { terrain, trajectory, out } => {
            let field = Heightfield::load(&terrain).with_context(|| format!("loading {}", terrain.display()))?;
            let file = fs::File::open(&trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
            let log = read_log(std::io::BufReader::new(file)).with_context(|| format!("reading {}", trajectory.display()))?;
            let poses: Vec<BodyPose> = log
                .iter()
                .map(|r| BodyPose {
                    time: r.time,
                    x: r.position[0],
                    y: r.position[1],
                    yaw: r.yaw,
                    forward_velocity: r.heading_velocity[0],
                })
                .collect();
            let cmds = twin_rollout(&poses, &field, &cfg)?;
            fs::write(&out, encode_commands(&cmds)).with_context(|| format!("writing {}", out.display()))?;
            let saturated = cmds.iter().filter(|c| c.saturated).count();
            println!("{} commands ({saturated} saturated) -> {}", cmds.len(), out.display());
        }
        Cmd::Check { commands } => {
            let text = fs::read_to_string(&commands).with_context(|| format!("reading {}", commands.display()))?;
            let records = parse_commands(&text)?;
            let violations = check_commands(&records, &cfg);
            for v in &violations {
                println!("line {}: {}", v.line, v.what);
            }
            if !violations.is_empty() {
                println!("{} violations in {} commands", violations.len(), records.len());
                return Ok(ExitCode::FAILURE);
            }
            println!("{} commands within limits", records.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}
