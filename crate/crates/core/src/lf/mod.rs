//! Low-fidelity density-based topology optimization.
//!
//! Minimizes compliance or a p-norm stress aggregate over a structured grid
//! under a volume constraint (optionally plus a similarity constraint toward
//! a reference layout), using density filtering, smoothed Heaviside
//! projection, penalized material interpolation, and MMA updates.

mod filter;
mod mma;
mod objective;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use filter::{
    density_filter, heaviside_derivative, heaviside_project, heaviside_value, DensityFilter,
};
pub use mma::{mma_update, FunctionEval, MmaState};
pub use objective::{
    compliance_value_and_sensitivity, mutation_constraint_value_and_sensitivity,
    pnorm_stress_value_and_sensitivity, LfEngine,
};

use crate::fem::{FemError, GridProblem};

/// Per-element density field on an nx×ny grid (row-major, x fastest).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityField {
    pub values: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    /// Element width in length units (grids here are square-element).
    pub spacing: f64,
}

impl DensityField {
    pub fn new(values: Vec<f64>, nx: usize, ny: usize, spacing: f64) -> Self {
        assert_eq!(values.len(), nx * ny, "field length must match grid shape");
        debug_assert!(
            values.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)),
            "densities must lie in [0,1]"
        );
        Self {
            values,
            nx,
            ny,
            spacing,
        }
    }

    pub fn uniform(value: f64, nx: usize, ny: usize, spacing: f64) -> Self {
        Self::new(vec![value; nx * ny], nx, ny, spacing)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean density = volume fraction for uniform element volumes.
    pub fn volume_fraction(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn element_volume(&self) -> f64 {
        self.spacing * self.spacing
    }
}

/// Which objective the optimizer minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LfObjective {
    Compliance,
    PNormStress,
}

/// One stage of the stress-aggregate exponent continuation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PStage {
    pub start_iteration: usize,
    pub exponent: f64,
}

/// Similarity constraint toward a reference layout: keep
/// Σ(1 − |γ − γ_ref|)·v_e ≤ g_mut_max·Σv_e.
#[derive(Clone, Debug)]
pub struct MutationConstraint {
    pub reference: Vec<f64>,
    pub g_mut_max: f64,
}

/// Full problem description for one low-fidelity optimization run.
#[derive(Clone, Debug)]
pub struct LfConfig {
    pub problem: GridProblem,
    pub objective: LfObjective,
    pub v_max: f64,
    pub r_f: f64,
    pub beta: f64,
    pub eta: f64,
    /// Stiffness interpolation penalty.
    pub penal: f64,
    /// Stress relaxation exponent.
    pub q: f64,
    /// Exponent continuation for the stress aggregate (ignored for compliance).
    pub p_schedule: Vec<PStage>,
    pub move_limit: f64,
    pub max_iterations: usize,
    pub mutation: Option<MutationConstraint>,
}

impl LfConfig {
    pub fn compliance(problem: GridProblem, v_max: f64) -> Self {
        Self {
            problem,
            objective: LfObjective::Compliance,
            v_max,
            r_f: 0.03,
            beta: 4.0,
            eta: 0.5,
            penal: 3.0,
            q: 0.5,
            p_schedule: Vec::new(),
            move_limit: 0.05,
            max_iterations: 50,
            mutation: None,
        }
    }

    pub fn stress(problem: GridProblem, v_max: f64) -> Self {
        Self {
            objective: LfObjective::PNormStress,
            p_schedule: vec![
                PStage { start_iteration: 0, exponent: 8.0 },
                PStage { start_iteration: 30, exponent: 16.0 },
                PStage { start_iteration: 60, exponent: 32.0 },
                PStage { start_iteration: 90, exponent: 64.0 },
            ],
            max_iterations: 100,
            ..Self::compliance(problem, v_max)
        }
    }

    pub fn validate(&self) -> Result<(), LfError> {
        if !(self.v_max > 0.0 && self.v_max < 1.0) {
            return Err(LfError::InvalidConfig("v_max must lie in (0,1)"));
        }
        if !(self.beta > 0.0) {
            return Err(LfError::InvalidConfig("beta must be positive"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(LfError::InvalidConfig("eta must lie in (0,1)"));
        }
        if !(self.penal >= 1.0) {
            return Err(LfError::InvalidConfig("penalty must be at least 1"));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(LfError::InvalidConfig("move limit must lie in (0,1]"));
        }
        if !(self.r_f > 0.0) {
            return Err(LfError::InvalidConfig("filter radius must be positive"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(LfError::InvalidConfig("relaxation exponent must lie in (0,1]"));
        }
        if self.objective == LfObjective::PNormStress {
            if !self.p_schedule.iter().any(|s| s.start_iteration == 0) {
                return Err(LfError::InvalidConfig(
                    "exponent schedule must cover iteration 0",
                ));
            }
            if self.p_schedule.iter().any(|s| s.exponent < 1.0) {
                return Err(LfError::InvalidConfig("aggregate exponents must be at least 1"));
            }
        }
        if let Some(m) = &self.mutation {
            if m.reference.len() != self.problem.mesh.element_count() {
                return Err(LfError::InvalidConfig("mutation reference shape mismatch"));
            }
            if !(m.g_mut_max > 0.0 && m.g_mut_max < 1.0) {
                return Err(LfError::InvalidConfig("similarity bound must lie in (0,1)"));
            }
        }
        Ok(())
    }

    /// Aggregate exponent in effect at a given iteration.
    pub fn exponent_at(&self, iteration: usize) -> f64 {
        self.p_schedule
            .iter()
            .filter(|s| s.start_iteration <= iteration)
            .map(|s| s.exponent)
            .fold(f64::NAN, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LfError {
    InvalidConfig(&'static str),
    ShapeMismatch,
    Fem(FemError),
    /// Objective or gradient became non-finite; carries the iteration log up
    /// to the failure as a diagnostic dump.
    NonFinite {
        iteration: usize,
        log: Vec<LfIteration>,
    },
    /// MMA subproblem solve missed its KKT tolerance.
    MmaFailure { residual: f64 },
}

impl fmt::Display for LfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LfError::InvalidConfig(why) => write!(f, "invalid optimizer config: {why}"),
            LfError::ShapeMismatch => write!(f, "field shapes do not match"),
            LfError::Fem(e) => write!(f, "analysis failure: {e}"),
            LfError::NonFinite { iteration, .. } => {
                write!(f, "objective became non-finite at iteration {iteration}")
            }
            LfError::MmaFailure { residual } => {
                write!(f, "update subproblem stalled at KKT residual {residual:.3e}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LfError {}

impl From<FemError> for LfError {
    fn from(e: FemError) -> Self {
        LfError::Fem(e)
    }
}

/// One row of the optimization log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LfIteration {
    pub iteration: usize,
    pub objective: f64,
    pub volume_fraction: f64,
    /// Most-violated constraint value (≤ 0 means feasible).
    pub constraint_violation: f64,
    /// Largest design-variable change this step.
    pub change: f64,
    /// Aggregate exponent in effect (stress objective only).
    pub exponent: f64,
}

/// Outcome of a low-fidelity run.
#[derive(Clone, Debug)]
pub struct LfRun {
    /// Final filtered-and-projected (physical) density field.
    pub density: DensityField,
    pub log: Vec<LfIteration>,
}

/// Runs the full optimization loop from a uniform feasible start.
pub fn run_lf_optimization(config: &LfConfig) -> Result<LfRun, LfError> {
    config.validate()?;
    let engine = LfEngine::new(config)?;
    let mesh = &config.problem.mesh;
    let n = mesh.element_count();
    let spacing = mesh.dx;

    let mut x = vec![config.v_max; n];
    let mut state = MmaState::new(n);
    let mut log: Vec<LfIteration> = Vec::with_capacity(config.max_iterations);
    let mut objective_scale = 1.0;
    let mut previous_exponent = f64::NAN;

    for iteration in 0..config.max_iterations {
        let exponent = match config.objective {
            LfObjective::Compliance => f64::NAN,
            LfObjective::PNormStress => config.exponent_at(iteration),
        };

        let (objective, gradient) = match config.objective {
            LfObjective::Compliance => engine.compliance(&x)?,
            LfObjective::PNormStress => engine.pnorm_stress(&x, exponent)?,
        };
        if !objective.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(LfError::NonFinite { iteration, log });
        }

        // Rescale the objective whenever its magnitude regime changes (start
        // of the run and each exponent switch) so the update subproblem sees
        // gradients of comparable size across problems.
        let exponent_switched = exponent.is_finite() != previous_exponent.is_finite()
            || (exponent.is_finite() && exponent != previous_exponent);
        if iteration == 0 || exponent_switched {
            objective_scale = 1.0 / objective.abs().max(1e-12);
        }
        previous_exponent = exponent;

        let physical = engine.physical(&x);
        let volume_fraction = physical.iter().sum::<f64>() / n as f64;
        let mut constraints = Vec::with_capacity(2);
        let volume_grad_physical = vec![1.0 / (n as f64 * config.v_max); n];
        constraints.push(FunctionEval {
            value: volume_fraction / config.v_max - 1.0,
            gradient: engine.chain_to_design(&x, &volume_grad_physical),
        });
        if let Some(m) = &config.mutation {
            let field = DensityField::new(physical.clone(), mesh.nx, mesh.ny, spacing);
            let reference = DensityField::new(m.reference.clone(), mesh.nx, mesh.ny, spacing);
            let (g_mut, sens) =
                mutation_constraint_value_and_sensitivity(&field, &reference, m.g_mut_max)?;
            let total_volume = n as f64 * field.element_volume();
            let grad_physical: Vec<f64> = sens.iter().map(|s| s / total_volume).collect();
            constraints.push(FunctionEval {
                value: g_mut / total_volume - m.g_mut_max,
                gradient: engine.chain_to_design(&x, &grad_physical),
            });
        }
        let violation = constraints
            .iter()
            .map(|c| c.value)
            .fold(f64::NEG_INFINITY, f64::max);

        let scaled = FunctionEval {
            value: objective * objective_scale,
            gradient: gradient.iter().map(|g| g * objective_scale).collect(),
        };
        let x_new = mma_update(&mut state, &x, &scaled, &constraints, config.move_limit)?;
        let change = x
            .iter()
            .zip(&x_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = x_new;

        log.push(LfIteration {
            iteration,
            objective,
            volume_fraction,
            constraint_violation: violation,
            change,
            exponent,
        });

        // Settled and feasible: no further change possible within tolerance.
        if iteration >= 10 && change < 1e-4 && violation <= 1e-4 {
            break;
        }
    }

    let physical = engine.physical(&x);
    Ok(LfRun {
        density: DensityField::new(physical, mesh.nx, mesh.ny, spacing),
        log,
    })
}

/// Thresholds a field to {0,1} at the given cut (values ≥ cut become solid).
pub fn binarize(field: &DensityField, cut: f64) -> DensityField {
    DensityField {
        values: field
            .values
            .iter()
            .map(|&v| if v >= cut { 1.0 } else { 0.0 })
            .collect(),
        ..field.clone()
    }
}
