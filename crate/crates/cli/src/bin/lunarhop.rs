use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lunarhop::dynamics::ScriptedPronk;
use lunarhop::harness::{
    generate_dataset, plot_trajectory, read_log, recompute_metrics, run_episode, run_suite, write_log, write_suite_csv, EpisodeMetrics,
    HarnessConfig, MetricParams, OnlineEstimator, ValidationTerrain,
};
use lunarhop_cli::{format_mse, load_checkpoint, load_config, output_dir, write_json};
use serde::{Deserialize, Serialize};

/// Scripted low-gravity pronking experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Shared TOML config; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One episode: writes the trajectory log, its metrics and the terrain.
    Run(RunArgs),
    /// Terrains x speeds x repeats; writes suite.csv and suite.json.
    Suite {
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rollouts with ground truth for estimator training.
    Dataset {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Recompute episode metrics from a trajectory log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        /// Metric parameters written by `run`; defaults to the log path with
        /// a `.json` extension, then to the config.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Height, velocity and phase traces of a log as SVG.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

#[derive(Args)]
struct RunArgs {
    /// Use a validation terrain instead of `episode.terrain`.
    #[arg(long)]
    terrain: Option<ValidationTerrain>,
    #[arg(long, default_value_t = 0)]
    terrain_seed: u64,
    #[arg(long)]
    speed: Option<f64>,
    /// Disturbance seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Estimator checkpoint scored online.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeReport {
    params: MetricParams,
    metrics: EpisodeMetrics,
}

fn print_metrics(m: &EpisodeMetrics) {
    println!("survival time      {:.2} s{}", m.survival_time, if m.fell { " (fell)" } else { "" });
    println!("landings           {} of {} successful ({:.1}%)", m.landings_successful, m.landings_total, m.landing_success_rate);
    match m.peak_height_error {
        Some(e) => println!("peak height error  {e:.4} m over {} apexes", m.apexes),
        None => println!("peak height error  n/a (no apex)"),
    }
    if let Some(mse) = &m.estimator_mse {
        println!("estimator mse      {}", format_mse(mse));
    }
    println!("gravity            {:.4} m/s^2", m.gravity);
}

fn read_log_file(path: &Path) -> Result<Vec<lunarhop::harness::LogRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_log(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn run(cfg: &HarnessConfig, args: RunArgs) -> Result<()> {
    let mut ep = cfg.episode.clone();
    if let Some(t) = args.terrain {
        ep.terrain = t.spec(args.terrain_seed);
    }
    if let Some(v) = args.speed {
        ep.v_x_cmd = v;
    }
    if let Some(s) = args.seed {
        ep.seed = s;
    }
    if let Some(d) = args.duration {
        ep.max_duration = d;
    }
    let checkpoint = args.checkpoint.or_else(|| ep.estimator_checkpoint.clone());
    let dir = output_dir(args.out_dir.as_deref(), cfg)?;
    let field = ep.field(&cfg.terrain)?;
    let controller = ScriptedPronk::calibrate(&cfg.sim, cfg.pronk, &ep.target(&cfg.sim));
    let mut runtime = checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|m| m.runtime());
    let est = runtime.as_mut().map(|r| r as &mut dyn OnlineEstimator);
    let episode = run_episode(&ep, &field, &cfg.sim, &controller, est)?;

    let log_path = dir.join("episode.csv");
    let file = fs::File::create(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
    write_log(&episode.log, std::io::BufWriter::new(file))?;
    write_json(
        &dir.join("episode.json"),
        &EpisodeReport {
            params: episode.params,
            metrics: episode.metrics.clone(),
        },
    )?;
    field.save(&dir.join("terrain.lhf"))?;
    println!("{} at {} m/s: {} steps -> {}", ep.terrain.category, ep.v_x_cmd, episode.log.len(), dir.display());
    print_metrics(&episode.metrics);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Run(args) => run(&cfg, args)?,
        Cmd::Suite { repeats, seed, out_dir: dir } => {
            let mut settings = cfg.suite.clone();
            if let Some(r) = repeats {
                settings.repeats = r;
            }
            if let Some(s) = seed {
                settings.master_seed = s;
            }
            let dir = output_dir(dir.as_deref(), &cfg)?;
            let result = run_suite(&settings, &cfg.sim, &cfg.pronk, &cfg.terrain)?;
            let mut csv = Vec::new();
            write_suite_csv(&result, &mut csv)?;
            fs::write(dir.join("suite.csv"), &csv)?;
            write_json(&dir.join("suite.json"), &result)?;
            print!("{}", String::from_utf8_lossy(&csv));
        }
        Cmd::Dataset { episodes, seed, out_dir: dir } => {
            let mut settings = cfg.dataset.clone();
            if let Some(n) = episodes {
                settings.episodes = n;
            }
            if let Some(s) = seed {
                settings.master_seed = s;
            }
            let dir = output_dir(dir.as_deref(), &cfg)?;
            let m = generate_dataset(&settings, &cfg.sim, &cfg.pronk, &cfg.terrain, &dir)?;
            println!("{} episodes, {} steps -> {}", m.entries.len(), m.total_steps, dir.display());
        }
        Cmd::Metrics { log, meta } => {
            let records = read_log_file(&log)?;
            let meta = meta.or_else(|| Some(log.with_extension("json")).filter(|p| p.exists()));
            let params = match meta {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<EpisodeReport>(&text).with_context(|| format!("parsing {}", p.display()))?.params
                }
                None => {
                    let ep = &cfg.episode;
                    MetricParams {
                        h_cmd: ep.target(&cfg.sim).h_cmd,
                        landing_tolerance: ep.landing_tolerance,
                        fall_angle: ep.fall_angle,
                        max_duration: ep.max_duration,
                        gravity: cfg.sim.gravity,
                    }
                }
            };
            print_metrics(&recompute_metrics(&records, &params));
        }
        Cmd::Plot { log, out } => {
            plot_trajectory(&read_log_file(&log)?, &out)?;
            println!("plot -> {}", out.display());
        }
        Cmd::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

