//! Artifact export and checkpoint IO.
//!
//! Everything written here is a pure function of the run state, so exporting
//! the same state twice produces byte-identical files and a checkpointed run
//! can be re-exported losslessly.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use image::{GrayImage, Luma};
use mftd_core::lf::{DensityField, LfIteration};
use mftd_core::moea::{non_dominated_sort, ObjectivePoint};
use mftd_core::vae::{VaeArchitecture, VaeModel};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::RunState;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Formats a float for CSV: shortest representation that round-trips,
/// with infinities spelled `inf`.
fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Serializes the full run state as JSON.
pub fn write_checkpoint(state: &RunState, path: &Path) -> Result<(), CliError> {
    let bytes = serde_json::to_vec(state)
        .map_err(|e| CliError::numeric("checkpoint serialization", e))?;
    write_bytes(path, &bytes)
}

/// Loads a checkpoint written by [`write_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<RunState, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("corrupt checkpoint {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Grayscale images
// ---------------------------------------------------------------------------

/// Renders per-element values (row-major, x fastest, row 0 at the BOTTOM of
/// the domain) into an 8-bit grayscale image with row 0 at the TOP.
pub fn field_to_image(values: &[f64], nx: usize, ny: usize) -> GrayImage {
    assert_eq!(values.len(), nx * ny, "field shape mismatch");
    let mut img = GrayImage::new(nx as u32, ny as u32);
    for row in 0..ny {
        let ey = ny - 1 - row;
        for x in 0..nx {
            let v = values[ey * nx + x].clamp(0.0, 1.0);
            img.put_pixel(x as u32, row as u32, Luma([(v * 255.0).round() as u8]));
        }
    }
    img
}

/// Writes a field as a PNG (top row of the image = top of the domain).
pub fn write_field_png(path: &Path, values: &[f64], nx: usize, ny: usize) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    field_to_image(values, nx, ny)
        .save(path)
        .map_err(|e| CliError::io(path, e))
}

/// Reads an 8-bit grayscale PNG back into a density field (inverse of
/// [`write_field_png`], up to 1/255 quantization).
pub fn read_density_png(path: &Path) -> Result<DensityField, CliError> {
    let img = image::open(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        .into_luma8();
    let (nx, ny) = (img.width() as usize, img.height() as usize);
    if nx == 0 || ny == 0 {
        return Err(CliError::config(format!("{}: empty image", path.display())));
    }
    let mut values = vec![0.0; nx * ny];
    for row in 0..ny {
        let ey = ny - 1 - row;
        for x in 0..nx {
            values[ey * nx + x] = img.get_pixel(x as u32, row as u32).0[0] as f64 / 255.0;
        }
    }
    Ok(DensityField::new(values, nx, ny, 1.0 / nx as f64))
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

fn pareto_csv(state: &RunState) -> String {
    let mut csv = String::from("id,J1,J2,h,rank\n");
    let points: Vec<ObjectivePoint> = state
        .archive
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let o = s.objectives.as_ref().expect("archive samples are evaluated");
            ObjectivePoint { j1: o.j1, j2: o.j2, id: i }
        })
        .collect();
    let fronts = non_dominated_sort(&points);
    let mut rows: Vec<(usize, usize)> = Vec::with_capacity(points.len());
    for (rank, front) in fronts.iter().enumerate() {
        for &i in front {
            rows.push((rank + 1, i));
        }
    }
    rows.sort_unstable();
    for (rank, i) in rows {
        let s = &state.archive[i];
        let o = s.objectives.as_ref().expect("evaluated");
        let _ = writeln!(
            csv,
            "{},{},{},{},{rank}",
            s.id,
            fmt_f64(o.j1),
            fmt_f64(o.j2),
            fmt_f64(s.h)
        );
    }
    csv
}

fn hv_history_csv(state: &RunState) -> String {
    let mut csv = String::from("iteration,hypervolume\n");
    for (i, hv) in state.hv_history.iter().enumerate() {
        let _ = writeln!(csv, "{i},{}", fmt_f64(*hv));
    }
    csv
}

fn evaluations_csv(state: &RunState) -> String {
    let mut csv = String::from("id,iteration,origin,J1,J2,h,feasible\n");
    for r in &state.evaluations {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.id,
            r.iteration,
            r.origin,
            r.j1.map_or_else(|| "inf".to_string(), fmt_f64),
            r.j2.map_or_else(|| "inf".to_string(), fmt_f64),
            fmt_f64(r.h),
            r.feasible
        );
    }
    csv
}

/// Writes a low-fidelity iteration log as CSV.
pub fn write_lf_log(path: &Path, log: &[LfIteration]) -> Result<(), CliError> {
    let mut csv = String::from("iteration,objective,volume_fraction,constraint_violation,change,exponent\n");
    for row in log {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.iteration,
            fmt_f64(row.objective),
            fmt_f64(row.volume_fraction),
            fmt_f64(row.constraint_violation),
            fmt_f64(row.change),
            fmt_f64(row.exponent)
        );
    }
    write_bytes(path, csv.as_bytes())
}

/// Writes an autoencoder training curve (mean per-sample loss per epoch).
pub fn write_vae_curve(path: &Path, curve: &[f64]) -> Result<(), CliError> {
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in curve.iter().enumerate() {
        let _ = writeln!(csv, "{epoch},{}", fmt_f64(*loss));
    }
    write_bytes(path, csv.as_bytes())
}

// ---------------------------------------------------------------------------
// Autoencoder model checkpoint: text header + flat little-endian f64 block
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &str = "mftd-vae-model v1";

/// Writes the model as a text header (layer dimensions, training seed, best
/// epoch, parameter count) followed by the flattened parameters as
/// little-endian 64-bit floats.
pub fn write_vae_model(
    path: &Path,
    model: &VaeModel,
    config: &RunConfig,
    seed: u64,
    epoch: usize,
) -> Result<(), CliError> {
    let arch = model.architecture();
    let flat = model.flatten_parameters();
    let mut bytes = Vec::with_capacity(flat.len() * 8 + 256);
    let header = format!(
        "{MODEL_MAGIC}\ninput {}\nhidden {}\nlatent {}\nchannels {}\nheight {}\nwidth {}\nseed {}\nepoch {}\nparams {}\nend\n",
        arch.input_dim,
        arch.hidden_dim,
        arch.latent_dim,
        config.channels,
        config.grid,
        config.grid,
        seed,
        epoch,
        flat.len()
    );
    bytes.extend_from_slice(header.as_bytes());
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

/// Reads a model checkpoint written by [`write_vae_model`]; returns the model
/// plus the `(seed, epoch)` recorded in the header.
pub fn read_vae_model(path: &Path) -> Result<(VaeModel, u64, usize), CliError> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| CliError::io(path, e))?;

    let bad = |msg: &str| CliError::config(format!("{}: {msg}", path.display()));
    let end_marker = b"\nend\n";
    let end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| bad("missing header terminator"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let body = &bytes[end + end_marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MODEL_MAGIC) {
        return Err(bad("not a model checkpoint"));
    }
    let mut field = |name: &str| -> Result<u64, CliError> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let value = line
            .strip_prefix(name)
            .and_then(|rest| rest.trim().parse::<u64>().ok())
            .ok_or_else(|| bad(&format!("bad header line `{line}`")))?;
        Ok(value)
    };
    let input = field("input")? as usize;
    let hidden = field("hidden")? as usize;
    let latent = field("latent")? as usize;
    let _channels = field("channels")?;
    let _height = field("height")?;
    let _width = field("width")?;
    let seed = field("seed")?;
    let epoch = field("epoch")? as usize;
    let params = field("params")? as usize;

    if body.len() != params * 8 {
        return Err(bad("parameter block length mismatch"));
    }
    let mut flat = Vec::with_capacity(params);
    for chunk in body.chunks_exact(8) {
        flat.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }
    let arch = VaeArchitecture {
        input_dim: input,
        hidden_dim: hidden,
        latent_dim: latent,
    };
    let mut model = VaeModel::new(arch, 0);
    if model.parameter_count() != params {
        return Err(bad("parameter count does not match architecture"));
    }
    model.assign_parameters(&flat);
    Ok((model, seed, epoch))
}

// ---------------------------------------------------------------------------
// Run manifest + full export
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct Manifest {
    tool: &'static str,
    pipeline_version: &'static str,
    core_version: &'static str,
    seed: u64,
    iterations_completed: usize,
    converged: bool,
    archive_size: usize,
    r_hv: Option<[f64; 2]>,
    config: Vec<(String, String)>,
}

fn manifest_json(state: &RunState) -> Result<Vec<u8>, CliError> {
    let manifest = Manifest {
        tool: "mftd",
        pipeline_version: env!("CARGO_PKG_VERSION"),
        core_version: mftd_core::VERSION,
        seed: state.config.seed,
        iterations_completed: state.iteration,
        converged: state.converged,
        archive_size: state.archive.len(),
        r_hv: state.r_hv,
        config: state.config.to_key_values(),
    };
    serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::numeric("manifest", e))
}

/// Writes every run artifact into `outdir`:
///
/// - `pareto.csv` — archive objectives with non-domination ranks
/// - `hv_history.csv` — hypervolume per iteration
/// - `evaluations.csv` — every evaluation performed, in order
/// - `events.log` — the run event log
/// - `manifest.json` — tool versions, seed, and the full configuration
/// - `images/density_<id>.png`, `images/hf_<id>.png` — archive sample fields
///
/// An empty archive still produces every CSV (headers only).
pub fn export_artifacts(state: &RunState, outdir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(outdir).map_err(|e| CliError::io(outdir, e))?;
    write_bytes(&outdir.join("pareto.csv"), pareto_csv(state).as_bytes())?;
    write_bytes(&outdir.join("hv_history.csv"), hv_history_csv(state).as_bytes())?;
    write_bytes(&outdir.join("evaluations.csv"), evaluations_csv(state).as_bytes())?;
    let mut log = state.events.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    write_bytes(&outdir.join("events.log"), log.as_bytes())?;
    write_bytes(&outdir.join("manifest.json"), &manifest_json(state)?)?;

    let images = outdir.join("images");
    for sample in &state.archive {
        let nx = sample.density.nx;
        let ny = sample.density.ny;
        write_field_png(
            &images.join(format!("density_{:05}.png", sample.id)),
            &sample.density.values,
            nx,
            ny,
        )?;
        write_field_png(
            &images.join(format!("hf_{:05}.png", sample.id)),
            &sample.hf_field,
            nx,
            ny,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{DesignSample, SampleOrigin};
    use mftd_core::hf::HfObjectives;

    fn sample(id: u64, j1: f64, j2: f64) -> DesignSample {
        DesignSample {
            id,
            iteration_born: 0,
            origin: SampleOrigin::Seed,
            density: DensityField::uniform(1.0, 2, 2, 0.5),
            hf_field: vec![0.25; 4],
            h: 0.05,
            objectives: Some(HfObjectives {
                j1,
                j2,
                feasible: true,
                diagnostic: None,
            }),
        }
    }

    fn demo_state() -> RunState {
        let mut state = RunState::new(RunConfig::default());
        state.archive = vec![sample(0, 1.0, 4.0), sample(1, 4.0, 1.0), sample(2, 5.0, 5.0)];
        state.hv_history = vec![10.0, 12.5];
        state.r_hv = Some([10.0, 10.0]);
        state.iteration = 1;
        state
    }

    #[test]
    fn pareto_csv_ranks_and_orders_rows() {
        let csv = pareto_csv(&demo_state());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "id,J1,J2,h,rank");
        assert_eq!(lines[1], "0,1,4,0.05,1");
        assert_eq!(lines[2], "1,4,1,0.05,1");
        assert_eq!(lines[3], "2,5,5,0.05,2");
    }

    #[test]
    fn empty_archive_exports_headers_only() {
        let state = RunState::new(RunConfig::default());
        let dir = tempfile::tempdir().unwrap();
        export_artifacts(&state, dir.path()).unwrap();
        let pareto = std::fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
        assert_eq!(pareto, "id,J1,J2,h,rank\n");
        let evals = std::fs::read_to_string(dir.path().join("evaluations.csv")).unwrap();
        assert_eq!(evals, "id,iteration,origin,J1,J2,h,feasible\n");
        let hv = std::fs::read_to_string(dir.path().join("hv_history.csv")).unwrap();
        assert_eq!(hv, "iteration,hypervolume\n");
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn export_twice_is_byte_identical() {
        let state = demo_state();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        export_artifacts(&state, a.path()).unwrap();
        export_artifacts(&state, b.path()).unwrap();
        for name in ["pareto.csv", "hv_history.csv", "manifest.json"] {
            let xa = std::fs::read(a.path().join(name)).unwrap();
            let xb = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(xa, xb, "{name}");
        }
        let ia = std::fs::read(a.path().join("images/density_00000.png")).unwrap();
        let ib = std::fs::read(b.path().join("images/density_00000.png")).unwrap();
        assert_eq!(ia, ib);
    }

    #[test]
    fn checkpoint_round_trips() {
        let state = demo_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        write_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.iteration, state.iteration);
        assert_eq!(loaded.hv_history, state.hv_history);
        assert_eq!(loaded.archive.len(), state.archive.len());
        assert_eq!(loaded.archive[2].density.values, state.archive[2].density.values);
        assert_eq!(loaded.config, state.config);
    }

    #[test]
    fn png_round_trip_preserves_orientation() {
        // ey = 1 (top of the domain) is solid; ey = 0 (bottom) is void.
        let field = DensityField::new(vec![0.0, 0.0, 1.0, 1.0], 2, 2, 0.5);
        let img = field_to_image(&field.values, 2, 2);
        assert_eq!(img.get_pixel(0, 0).0[0], 255, "top row of PNG is the top row of the domain");
        assert_eq!(img.get_pixel(0, 1).0[0], 0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.png");
        write_field_png(&path, &field.values, 2, 2).unwrap();
        let back = read_density_png(&path).unwrap();
        assert_eq!(back.values, field.values);
        assert_eq!((back.nx, back.ny), (2, 2));
    }

    #[test]
    fn quantization_preserves_the_solid_threshold() {
        let field = DensityField::new(vec![0.499, 0.5, 0.501, 1.0], 4, 1, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        write_field_png(&path, &field.values, 4, 1).unwrap();
        let back = read_density_png(&path).unwrap();
        assert!(back.values[0] < 0.5);
        assert!(back.values[1] >= 0.5);
        assert!(back.values[2] >= 0.5);
    }

    #[test]
    fn vae_model_round_trips() {
        let arch = VaeArchitecture {
            input_dim: 8,
            hidden_dim: 5,
            latent_dim: 2,
        };
        let model = VaeModel::new(arch, 42);
        let config = RunConfig {
            grid: 2,
            ..RunConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        write_vae_model(&path, &model, &config, 99, 7).unwrap();
        let (loaded, seed, epoch) = read_vae_model(&path).unwrap();
        assert_eq!(seed, 99);
        assert_eq!(epoch, 7);
        assert_eq!(loaded.flatten_parameters(), model.flatten_parameters());
    }
}
