//! `mftd` — multifidelity topology design pipeline.
//!
//! Exit codes: `0` success, `2` configuration/input error, `3` numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mftd_core::hf::{HfObjectiveKind, HfSetup};
use mftd_core::lf::{run_lf_optimization, LfConfig};
use mftd_core::mapping::harmonic_map;

use mftd_cli::artifacts::{
    export_artifacts, load_checkpoint, read_density_png, write_field_png, write_lf_log,
};
use mftd_cli::config::RunConfig;
use mftd_cli::error::CliError;
use mftd_cli::meshio::read_mesh;
use mftd_cli::pipeline::run_mftd;

#[derive(Parser)]
#[command(
    name = "mftd",
    version,
    about = "Data-driven multifidelity topology design pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    /// Minimize compliance alongside reinforcement volume.
    Stiffness,
    /// Minimize the peak von Mises stress alongside reinforcement volume.
    Stress,
}

impl From<ModeArg> for HfObjectiveKind {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Stiffness => HfObjectiveKind::Stiffness,
            ModeArg::Stress => HfObjectiveKind::Stress,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full design loop from a configuration file.
    Run {
        /// Flat `key = value` configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exactly evaluate one candidate: a grayscale layout image plus a
    /// reinforcement thickness.
    Evaluate {
        /// 8-bit grayscale PNG of the layout (white = reinforced).
        #[arg(long)]
        density: PathBuf,
        /// Reinforcement thickness in length units.
        #[arg(long)]
        h: f64,
        /// Objective to report as J1.
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Lower end of the admissible thickness range.
        #[arg(long, default_value_t = 0.01)]
        h_min: f64,
        /// Upper end of the admissible thickness range.
        #[arg(long, default_value_t = 0.1)]
        h_max: f64,
    },
    /// Re-export all artifacts from a run checkpoint.
    Export {
        /// Checkpoint JSON written by `run`.
        #[arg(long)]
        state: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a single low-fidelity topology optimization.
    Lf {
        /// Volume-fraction bound in (0, 1].
        #[arg(long)]
        vmax: f64,
        /// Objective driving the optimization.
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Design grid edge length in elements.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Directory for the layout PNG and the iteration log CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flatten a quad surface patch to the unit square (prints `node,u,v`).
    Map {
        /// Plain-text mesh file (see the repository README for the format).
        #[arg(long)]
        mesh: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn cmd_run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut run_config = RunConfig::from_file(&config)?;
    if let Some(seed) = seed {
        run_config.seed = seed;
    }
    if let Some(out) = out {
        run_config.out = out.display().to_string();
    }
    let outdir = PathBuf::from(&run_config.out);
    let state = run_mftd(&run_config, &outdir)?;
    println!(
        "completed {} iterations ({}converged), archive {}, hypervolume {}",
        state.iteration,
        if state.converged { "" } else { "not " },
        state.archive.len(),
        state.hv_history.last().copied().unwrap_or(0.0)
    );
    println!("artifacts written to {}", outdir.display());
    Ok(())
}

fn cmd_evaluate(
    density: PathBuf,
    h: f64,
    mode: ModeArg,
    h_min: f64,
    h_max: f64,
) -> Result<(), CliError> {
    if !(0.0 < h_min && h_min < h_max) {
        return Err(CliError::config(
            "thickness range must satisfy 0 < h_min < h_max",
        ));
    }
    let field = read_density_png(&density)?;
    let mut setup = HfSetup::new(mftd_core::fem::GridProblem::cantilever(field.nx, field.ny));
    setup.h_min = h_min;
    setup.h_max = h_max;
    let result = mftd_core::hf::evaluate(&field, h, &setup, mode.into());
    println!("feasible: {}", result.feasible);
    println!("J1: {}", result.j1);
    println!("J2: {}", result.j2);
    if let Some(reason) = &result.diagnostic {
        println!("diagnostic: {reason}");
    }
    Ok(())
}

fn cmd_export(state: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let state = load_checkpoint(&state)?;
    export_artifacts(&state, &out)?;
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn cmd_lf(vmax: f64, mode: ModeArg, grid: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let problem = mftd_core::fem::GridProblem::cantilever(grid, grid);
    let config = match HfObjectiveKind::from(mode) {
        HfObjectiveKind::Stiffness => LfConfig::compliance(problem, vmax),
        HfObjectiveKind::Stress => LfConfig::stress(problem, vmax),
    };
    let run = run_lf_optimization(&config).map_err(|e| CliError::from_lf("lf", e))?;
    let last = run.log.last().expect("at least one iteration");
    println!("iterations: {}", run.log.len());
    println!("objective: {}", last.objective);
    println!("volume_fraction: {}", run.density.volume_fraction());
    if let Some(dir) = out {
        write_field_png(
            &dir.join("density.png"),
            &run.density.values,
            run.density.nx,
            run.density.ny,
        )?;
        write_lf_log(&dir.join("lf_log.csv"), &run.log)?;
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

fn cmd_map(mesh: PathBuf, out: Option<PathBuf>) -> Result<(), CliError> {
    let mesh = read_mesh(&mesh)?;
    let uv = harmonic_map(&mesh).map_err(|e| CliError::from_mapping("map", e))?;
    let mut csv = String::from("node,u,v\n");
    for (node, coords) in uv.uv.iter().enumerate() {
        use std::fmt::Write as _;
        let _ = writeln!(csv, "{node},{},{}", coords[0], coords[1]);
    }
    match out {
        Some(path) => {
            std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
            println!("flattening written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, seed, out } => cmd_run(config, seed, out),
        Command::Evaluate {
            density,
            h,
            mode,
            h_min,
            h_max,
        } => cmd_evaluate(density, h, mode, h_min, h_max),
        Command::Export { state, out } => cmd_export(state, out),
        Command::Lf {
            vmax,
            mode,
            grid,
            out,
        } => cmd_lf(vmax, mode, grid, out),
        Command::Map { mesh, out } => cmd_map(mesh, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
