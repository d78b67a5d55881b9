use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lunarhop::terrain::{build_curriculum, generate_patch, generate_strip, uniform_proportions, TerrainCategory, TerrainParams, TerrainSpec};
use lunarhop_cli::{load_config, write_json};

/// Generate terrain heightfields.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Shared TOML config; its `[terrain]` section sets the geometry laws.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One patch, or a strip of patches along x.
    Gen {
        #[arg(long)]
        category: TerrainCategory,
        #[arg(long)]
        difficulty: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        patches: usize,
        /// Also write `x,y,height` rows next to the binary file.
        #[arg(long)]
        csv: bool,
    },
    /// Every cell of the 10 x 20 curriculum grid.
    Grid {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let params: TerrainParams = load_config(cli.config.as_deref())?.terrain;
    match cli.cmd {
        Cmd::Gen {
            category,
            difficulty,
            seed,
            out,
            patches,
            csv,
        } => {
            anyhow::ensure!(patches >= 1, "--patches must be at least 1");
            let spec = TerrainSpec::new(category, difficulty, seed);
            let field = generate_strip(&spec, &params, patches)?;
            field.save(&out).with_context(|| format!("writing {}", out.display()))?;
            if csv {
                let path = out.with_extension("csv");
                let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                field.write_csv(std::io::BufWriter::new(file))?;
            }
            let (ex, ey) = field.extent();
            println!("{category} d={:.3} seed={seed}: {}x{} nodes, {ex} m x {ey} m -> {}", spec.difficulty(), field.width(), field.height(), out.display());
        }
        Cmd::Grid { seed, out_dir } => {
            fs::create_dir_all(&out_dir)?;
            let grid = build_curriculum(seed, &uniform_proportions())?;
            for r in 0..grid.rows() {
                for c in 0..grid.cols() {
                    let spec = grid.cell(r, c).expect("cell in range");
                    let path = out_dir.join(format!("cell_r{r:02}_c{c:02}.lhf"));
                    generate_patch(spec, &params)?.save(&path).with_context(|| format!("writing {}", path.display()))?;
                }
            }
            write_json(&out_dir.join("grid.json"), &grid)?;
            println!("{} x {} cells -> {}", grid.rows(), grid.cols(), out_dir.display());
        }
    }
    Ok(())
}
