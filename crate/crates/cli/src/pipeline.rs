//! The design loop: low-fidelity seeding, autoencoder crossover, constrained
//! mutation, exact evaluation, archive selection, and convergence tracking.
//!
//! Every stochastic stage derives its stream from the single run seed and the
//! iteration index, so a run is reproducible byte-for-byte and can resume
//! from any checkpoint without replaying earlier iterations.

use std::path::Path;

use mftd_core::fem::GridProblem;
use mftd_core::hf::{self, HfObjectiveKind, HfObjectives, HfSetup};
use mftd_core::lf::{
    run_lf_optimization, DensityField, LfConfig, MutationConstraint,
};
use mftd_core::mapping::helmholtz_smooth;
use mftd_core::moea::{
    converged, hypervolume_2d, latin_hypercube, non_dominated_sort, select, ObjectivePoint,
};
use mftd_core::rng::{derive_seed, stream};
use mftd_core::vae::{
    extract_scalar_hf, generate, normalize_hf, oversample_indices, train, MultiChannelImage,
    TrainConfig, TrainedVae, VaeArchitecture,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{export_artifacts, write_checkpoint, write_vae_curve, write_vae_model};
use crate::config::RunConfig;
use crate::error::CliError;

/// Spatial radius of the pre-training layout smoothing, in domain units.
pub const SMOOTHING_RADIUS: f64 = 0.03;
/// Similarity budget for mutation: a mutant may keep at most this fraction
/// of the reference layout's volume-weighted overlap.
pub const G_MUT_MAX: f64 = 0.5;
/// Selection never trims the first front below this size.
pub const ARCHIVE_MIN_KEEP: usize = 100;
/// Number of trailing hypervolume deltas that must sit below `eps_hv`.
pub const CONVERGENCE_WINDOW: usize = 5;
/// Thickness-balancing histogram bins used when oversampling the train set.
pub const OVERSAMPLE_BINS: usize = 4;

const TAG_SEED_PLAN: u64 = 0x5344_504c;
const TAG_VAE_TRAIN: u64 = 0x5654_5241;
const TAG_VAE_GEN: u64 = 0x5647_454e;
const TAG_MUT_PICK: u64 = 0x4d50_4b31;
const TAG_MUT_PLAN: u64 = 0x4d4c_4853;

/// Which stage created a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleOrigin {
    Seed,
    Crossover,
    Mutation,
}

impl std::fmt::Display for SampleOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleOrigin::Seed => "seed",
            SampleOrigin::Crossover => "crossover",
            SampleOrigin::Mutation => "mutation",
        })
    }
}

/// One candidate design: a layout field, a thickness field, and the scalar
/// thickness actually used by the exact evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignSample {
    pub id: u64,
    pub iteration_born: usize,
    pub origin: SampleOrigin,
    /// Layout channel: per-element density in `[0, 1]`.
    pub density: DensityField,
    /// Thickness channel, normalized to `[0, 1]`, same pixel layout.
    pub hf_field: Vec<f64>,
    /// Reinforcement thickness in length units.
    pub h: f64,
    /// Exact objective values; `None` until evaluated.
    pub objectives: Option<HfObjectives>,
}

impl DesignSample {
    pub fn is_feasible(&self) -> bool {
        self.objectives.as_ref().map_or(false, |o| o.feasible)
    }

    fn objective_point(&self, id: usize) -> ObjectivePoint {
        let o = self.objectives.as_ref().expect("sample not evaluated");
        ObjectivePoint { j1: o.j1, j2: o.j2, id }
    }
}

/// One evaluation outcome, kept for the run ledger. Objectives are `None`
/// when the candidate was infeasible (they would be infinite).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: u64,
    pub iteration: usize,
    pub origin: SampleOrigin,
    pub j1: Option<f64>,
    pub j2: Option<f64>,
    pub h: f64,
    pub feasible: bool,
}

/// Complete, serializable state of a run. A checkpoint is exactly this
/// structure; resuming continues from `iteration + 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    /// Last completed iteration (0 = seeding).
    pub iteration: usize,
    pub next_id: u64,
    /// Current evaluated, feasible archive.
    pub archive: Vec<DesignSample>,
    /// Candidates generated but not yet folded into the archive. Empty at
    /// every checkpoint; present so a state dump mid-iteration is complete.
    pub pending: Vec<DesignSample>,
    pub hv_history: Vec<f64>,
    /// Hypervolume reference point, fixed after the seeding iteration.
    pub r_hv: Option<[f64; 2]>,
    pub converged: bool,
    pub events: Vec<String>,
    pub evaluations: Vec<EvalRecord>,
    /// Mean per-sample loss curve of the most recent autoencoder training.
    pub vae_curve: Vec<f64>,
}

impl RunState {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            iteration: 0,
            next_id: 0,
            archive: Vec::new(),
            pending: Vec::new(),
            hv_history: Vec::new(),
            r_hv: None,
            converged: false,
            events: Vec::new(),
            evaluations: Vec::new(),
            vae_curve: Vec::new(),
        }
    }

    /// Reference point, panicking if seeding has not run yet.
    pub fn reference_point(&self) -> [f64; 2] {
        self.r_hv.expect("reference point set during seeding")
    }

    fn log(&mut self, line: String) {
        eprintln!("{line}");
        self.events.push(line);
    }
}

fn stage_seed(seed: u64, tag: u64, iteration: usize) -> u64 {
    derive_seed(derive_seed(seed, tag), iteration as u64)
}

/// The load case shared by every stage of a run: a square cantilever plate,
/// clamped on the left wall, loaded downward near the lower-right corner.
pub fn run_problem(config: &RunConfig) -> GridProblem {
    GridProblem::cantilever(config.grid, config.grid)
}

/// Exact-evaluation context for a run.
pub fn run_setup(config: &RunConfig) -> HfSetup {
    let mut setup = HfSetup::new(run_problem(config));
    setup.h_min = config.h_min;
    setup.h_max = config.h_max;
    setup
}

fn lf_config(config: &RunConfig, v_max: f64) -> LfConfig {
    let problem = run_problem(config);
    match config.mode {
        HfObjectiveKind::Stiffness => LfConfig::compliance(problem, v_max),
        HfObjectiveKind::Stress => LfConfig::stress(problem, v_max),
    }
}

/// The stratified `(v_max, h)` plan driving the seeding runs.
pub fn seeding_plan(config: &RunConfig) -> Vec<(f64, f64)> {
    latin_hypercube(
        config.n_lf_sd,
        &[
            (config.v_max_min, config.v_max_max),
            (config.h_min, config.h_max),
        ],
        derive_seed(config.seed, TAG_SEED_PLAN),
    )
    .into_iter()
    .map(|row| (row[0], row[1]))
    .collect()
}

/// Runs the `n_lf_sd` low-fidelity optimizations of the seeding stage in
/// parallel and returns the resulting unevaluated samples in plan order.
///
/// Individual optimizer failures drop that sample; if more than half of the
/// runs fail the whole stage aborts with a numerical error.
pub fn seed_initial_population(config: &RunConfig) -> Result<Vec<DesignSample>, CliError> {
    let plan = seeding_plan(config);
    let results: Vec<Result<DensityField, String>> = plan
        .par_iter()
        .map(|&(v_max, _)| {
            run_lf_optimization(&lf_config(config, v_max))
                .map(|run| run.density)
                .map_err(|e| e.to_string())
        })
        .collect();

    let failures = results.iter().filter(|r| r.is_err()).count();
    if 2 * failures > config.n_lf_sd {
        let first = results
            .iter()
            .find_map(|r| r.as_ref().err())
            .cloned()
            .unwrap_or_default();
        return Err(CliError::numeric(
            "seeding",
            format!(
                "{failures} of {} low-fidelity runs failed (first: {first})",
                config.n_lf_sd
            ),
        ));
    }

    let mut samples = Vec::with_capacity(plan.len() - failures);
    for (k, result) in results.into_iter().enumerate() {
        let Ok(density) = result else { continue };
        let h = plan[k].1;
        let t = normalize_hf(h, config.h_min, config.h_max);
        let hf_field = vec![t; density.len()];
        samples.push(DesignSample {
            id: k as u64,
            iteration_born: 0,
            origin: SampleOrigin::Seed,
            density,
            hf_field,
            h,
            objectives: None,
        });
    }
    Ok(samples)
}

/// Evaluates every sample in place, in parallel, preserving order.
pub fn evaluate_batch(samples: &mut [DesignSample], setup: &HfSetup, kind: HfObjectiveKind) {
    let results: Vec<HfObjectives> = samples
        .par_iter()
        .map(|s| hf::evaluate(&s.density, s.h, setup, kind))
        .collect();
    for (sample, objectives) in samples.iter_mut().zip(results) {
        sample.objectives = Some(objectives);
    }
}

/// Builds the two-channel training/export image of a sample: the layout
/// channel is smoothed with the standard radius, the thickness channel is
/// stored as-is (it is already smooth by construction).
pub fn sample_image(sample: &DesignSample, config: &RunConfig) -> MultiChannelImage {
    let smoothed = helmholtz_smooth(&sample.density, SMOOTHING_RADIUS);
    let mut pixels = Vec::with_capacity(2 * smoothed.len());
    pixels.extend(smoothed.values.iter().map(|v| v.clamp(0.0, 1.0)));
    pixels.extend_from_slice(&sample.hf_field);
    MultiChannelImage::new(config.channels, config.grid, config.grid, pixels)
}

/// NSGA-II style reduction of `pool` to the archive for the next iteration.
/// The first non-dominated front always survives in full, which makes the
/// archive hypervolume non-decreasing across iterations.
pub fn select_archive(pool: Vec<DesignSample>, target: usize) -> Vec<DesignSample> {
    let points: Vec<ObjectivePoint> = pool
        .iter()
        .enumerate()
        .map(|(i, s)| s.objective_point(i))
        .collect();
    let mut picked = select(&points, target, ARCHIVE_MIN_KEEP);
    picked.sort_unstable();
    let mut keep: Vec<Option<DesignSample>> = pool.into_iter().map(Some).collect();
    picked
        .into_iter()
        .map(|i| keep[i].take().expect("selection indices are unique"))
        .collect()
}

fn archive_points(archive: &[DesignSample]) -> Vec<ObjectivePoint> {
    archive
        .iter()
        .enumerate()
        .map(|(i, s)| s.objective_point(i))
        .collect()
}

/// Trains the crossover autoencoder on the archive (thickness-balanced via
/// oversampling) and decodes `n_vae` fresh candidates.
fn crossover_candidates(
    state: &mut RunState,
    iteration: usize,
) -> Result<(Vec<DesignSample>, TrainedVae), CliError> {
    let config = state.config.clone();
    let images: Vec<MultiChannelImage> = state
        .archive
        .iter()
        .map(|s| sample_image(s, &config))
        .collect();
    let h_values: Vec<f64> = state.archive.iter().map(|s| s.h).collect();
    let picks = oversample_indices(&h_values, OVERSAMPLE_BINS, config.h_min, config.h_max);
    let train_set: Vec<MultiChannelImage> = picks.iter().map(|&i| images[i].clone()).collect();

    let arch = VaeArchitecture::for_images(config.channels, config.grid, config.grid);
    let train_config = TrainConfig {
        seed: stage_seed(config.seed, TAG_VAE_TRAIN, iteration),
        ..TrainConfig::default()
    };
    let trained = train(&train_set, arch, &train_config)
        .map_err(|e| CliError::from_vae("autoencoder training", e))?;

    let decoded = generate(
        &trained.model,
        config.channels,
        config.grid,
        config.grid,
        config.n_vae,
        stage_seed(config.seed, TAG_VAE_GEN, iteration),
    )
    .map_err(|e| CliError::from_vae("candidate generation", e))?;

    let spacing = 1.0 / config.grid as f64;
    let mut candidates = Vec::with_capacity(decoded.len());
    for image in decoded {
        let density = DensityField::new(
            image.channel(0).to_vec(),
            config.grid,
            config.grid,
            spacing,
        );
        let h = extract_scalar_hf(&image, config.h_min, config.h_max);
        candidates.push(DesignSample {
            id: state.next_id,
            iteration_born: iteration,
            origin: SampleOrigin::Crossover,
            density,
            hf_field: image.channel(1).to_vec(),
            h,
            objectives: None,
        });
        state.next_id += 1;
    }
    Ok((candidates, trained))
}

/// Runs the constrained low-fidelity mutations for one mutation round:
/// `n_mut` optimizations whose references are drawn (shuffled, cycling) from
/// the current first front and whose `(v_max, h)` parameters come from an
/// `n_mut_sd`-point stratified plan.
fn mutation_candidates(
    state: &mut RunState,
    iteration: usize,
) -> Result<Vec<DesignSample>, CliError> {
    let config = state.config.clone();
    if state.archive.is_empty() {
        return Ok(Vec::new());
    }
    let fronts = non_dominated_sort(&archive_points(&state.archive));
    let mut front = fronts[0].clone();
    let mut rng = stream(stage_seed(config.seed, TAG_MUT_PICK, iteration), 0);
    front.shuffle(&mut rng);

    let plan = latin_hypercube(
        config.n_mut_sd,
        &[
            (config.v_max_min, config.v_max_max),
            (config.h_min, config.h_max),
        ],
        stage_seed(config.seed, TAG_MUT_PLAN, iteration),
    );

    let jobs: Vec<(usize, f64, f64)> = (0..config.n_mut)
        .map(|k| {
            let reference = front[k % front.len()];
            let row = &plan[k % config.n_mut_sd];
            (reference, row[0], row[1])
        })
        .collect();

    let results: Vec<Result<DensityField, String>> = jobs
        .par_iter()
        .map(|&(reference, v_max, _)| {
            let mut lf = lf_config(&config, v_max);
            lf.mutation = Some(MutationConstraint {
                reference: state.archive[reference].density.values.clone(),
                g_mut_max: G_MUT_MAX,
            });
            run_lf_optimization(&lf)
                .map(|run| run.density)
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut mutants = Vec::new();
    let mut failures = 0usize;
    for (k, result) in results.into_iter().enumerate() {
        let Ok(density) = result else {
            failures += 1;
            continue;
        };
        let h = jobs[k].2;
        let t = normalize_hf(h, config.h_min, config.h_max);
        let hf_field: Vec<f64> = density.values.iter().map(|g| t * g).collect();
        mutants.push(DesignSample {
            id: state.next_id,
            iteration_born: iteration,
            origin: SampleOrigin::Mutation,
            density,
            hf_field,
            h,
            objectives: None,
        });
        state.next_id += 1;
    }
    if failures > 0 {
        state.log(format!(
            "iteration {iteration}: {failures} of {} mutation runs failed and were dropped",
            config.n_mut
        ));
    }
    Ok(mutants)
}

fn record_evaluations(state: &mut RunState, samples: &[DesignSample], iteration: usize) {
    for sample in samples {
        let o = sample.objectives.as_ref().expect("evaluated");
        state.evaluations.push(EvalRecord {
            id: sample.id,
            iteration,
            origin: sample.origin,
            j1: o.feasible.then_some(o.j1),
            j2: o.feasible.then_some(o.j2),
            h: sample.h,
            feasible: o.feasible,
        });
    }
}

/// Folds evaluated candidates into the archive: drops infeasible ones,
/// unions with the current archive, reselects, and records hypervolume.
fn fold_into_archive(state: &mut RunState, candidates: Vec<DesignSample>) {
    let feasible: Vec<DesignSample> = candidates.into_iter().filter(|s| s.is_feasible()).collect();
    let mut pool = std::mem::take(&mut state.archive);
    pool.extend(feasible);
    state.archive = select_archive(pool, state.config.n_lf_sd);
    let hv = hypervolume_2d(&archive_points(&state.archive), state.reference_point());
    state.hv_history.push(hv);
}

/// Seeding: iteration 0 of a run. Populates the archive, fixes the
/// hypervolume reference point, and records the first hypervolume value.
pub fn initialize_run(config: &RunConfig) -> Result<RunState, CliError> {
    let mut state = RunState::new(config.clone());
    let mut seeds = seed_initial_population(config)?;
    state.next_id = seeds.iter().map(|s| s.id + 1).max().unwrap_or(0);

    let setup = run_setup(config);
    evaluate_batch(&mut seeds, &setup, config.mode);
    record_evaluations(&mut state, &seeds, 0);

    let generated = seeds.len();
    let feasible: Vec<DesignSample> = seeds.into_iter().filter(|s| s.is_feasible()).collect();
    if feasible.is_empty() {
        return Err(CliError::numeric(
            "seeding",
            "no feasible samples survived the exact evaluation",
        ));
    }
    let kept = feasible.len();
    state.archive = select_archive(feasible, config.n_lf_sd);

    let r_hv = match (config.r_hv_j1, config.r_hv_j2) {
        (Some(a), Some(b)) => [a, b],
        _ => {
            // Calibrate just beyond the initial front so every seed
            // contributes and later improvements stay measurable.
            let mut max1 = f64::MIN;
            let mut max2 = f64::MIN;
            for s in &state.archive {
                let o = s.objectives.as_ref().expect("evaluated");
                max1 = max1.max(o.j1);
                max2 = max2.max(o.j2);
            }
            [1.1 * max1, 1.1 * max2]
        }
    };
    state.r_hv = Some(r_hv);
    let hv = hypervolume_2d(&archive_points(&state.archive), r_hv);
    state.hv_history.push(hv);
    state.log(format!(
        "iteration 0: seeded {generated} candidates, {kept} feasible, archive {}, hypervolume {hv}",
        state.archive.len()
    ));
    Ok(state)
}

/// Runs iterations `state.iteration + 1 ..= n_max` (or until convergence),
/// checkpointing after every iteration. On a stage failure the current state
/// is dumped to the checkpoint before the error propagates.
pub fn advance_to_completion(state: &mut RunState, outdir: &Path) -> Result<(), CliError> {
    let checkpoint = outdir.join("checkpoint.json");
    write_checkpoint(state, &checkpoint)?;

    while !state.converged && state.iteration < state.config.n_max {
        let iteration = state.iteration + 1;
        match run_iteration(state, iteration, outdir) {
            Ok(()) => {}
            Err(err) => {
                state.log(format!("iteration {iteration}: failed: {err}"));
                let _ = write_checkpoint(state, &checkpoint);
                return Err(err);
            }
        }
        state.iteration = iteration;
        if converged(&state.hv_history, state.config.eps_hv, CONVERGENCE_WINDOW) {
            state.converged = true;
            state.log(format!(
                "iteration {iteration}: hypervolume converged within {}",
                state.config.eps_hv
            ));
        }
        write_checkpoint(state, &checkpoint)?;
    }
    Ok(())
}

fn run_iteration(state: &mut RunState, iteration: usize, outdir: &Path) -> Result<(), CliError> {
    let config = state.config.clone();
    let setup = run_setup(&config);

    let (mut candidates, trained) = crossover_candidates(state, iteration)?;
    state.vae_curve = trained.curve.clone();
    write_vae_model(
        &outdir.join("vae_model.bin"),
        &trained.model,
        &config,
        stage_seed(config.seed, TAG_VAE_TRAIN, iteration),
        trained.best_epoch,
    )?;
    write_vae_curve(&outdir.join("vae_curve.csv"), &trained.curve)?;

    let mutated = iteration % config.n_mut_int == 0;
    if mutated {
        candidates.extend(mutation_candidates(state, iteration)?);
    }

    state.pending = candidates;
    let mut batch = std::mem::take(&mut state.pending);
    evaluate_batch(&mut batch, &setup, config.mode);
    record_evaluations(state, &batch, iteration);

    let generated = batch.len();
    let feasible = batch.iter().filter(|s| s.is_feasible()).count();
    fold_into_archive(state, batch);
    let hv = *state.hv_history.last().expect("hypervolume recorded");
    state.log(format!(
        "iteration {iteration}: {generated} candidates ({feasible} feasible{}), archive {}, hypervolume {hv}",
        if mutated { ", mutation round" } else { "" },
        state.archive.len(),
    ));
    Ok(())
}

fn run_inner(config: &RunConfig, outdir: &Path) -> Result<RunState, CliError> {
    std::fs::create_dir_all(outdir).map_err(|e| CliError::io(outdir, e))?;
    let mut state = initialize_run(config)?;
    advance_to_completion(&mut state, outdir)?;
    export_artifacts(&state, outdir)?;
    Ok(state)
}

/// Full pipeline: seed, iterate to convergence or `n_max`, export artifacts.
pub fn run_mftd(config: &RunConfig, outdir: &Path) -> Result<RunState, CliError> {
    config.validate()?;
    if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(config, outdir))
    } else {
        run_inner(config, outdir)
    }
}

/// Continues a checkpointed run in `outdir` and re-exports artifacts.
pub fn resume_run(mut state: RunState, outdir: &Path) -> Result<RunState, CliError> {
    state.config.validate()?;
    std::fs::create_dir_all(outdir).map_err(|e| CliError::io(outdir, e))?;
    advance_to_completion(&mut state, outdir)?;
    export_artifacts(&state, outdir)?;
    Ok(state)
}
