//! High-fidelity evaluation of candidate designs.
//!
//! A candidate is a density image plus one scalar thickness. Evaluation
//! thresholds the image into a binary layout, builds a plane-stress model
//! whose reinforcement elements carry the scalar thickness while the rest of
//! the domain is a thin skin panel at full modulus, and computes exact
//! objectives — strain energy or the true maximum von Mises stress over the
//! reinforcement, plus reinforcement volume — with no relaxation.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::fem::{FemProblem, GridProblem};
use crate::lf::DensityField;

/// Default thickness range in length units.
pub const DEFAULT_H_RANGE: (f64, f64) = (0.01, 0.1);
/// Densities at or above this value count as reinforcement material.
pub const SOLID_THRESHOLD: f64 = 0.5;

/// Which exact objective the evaluation reports as J1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HfObjectiveKind {
    /// J1 = strain energy of the loaded structure (lower is stiffer).
    Stiffness,
    /// J1 = maximum von Mises stress over reinforcement elements.
    Stress,
}

/// Fixed evaluation context: the load case plus the thickness range.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HfSetup {
    pub problem: GridProblem,
    pub h_min: f64,
    pub h_max: f64,
}

impl HfSetup {
    /// Wraps a load case with the default thickness range.
    pub fn new(problem: GridProblem) -> Self {
        Self { problem, h_min: DEFAULT_H_RANGE.0, h_max: DEFAULT_H_RANGE.1 }
    }

    /// Thickness of the skin panel covering non-reinforcement elements.
    pub fn skin_thickness(&self) -> f64 {
        self.h_min / 10.0
    }
}

/// A thickness-scaled analysis model built from a binary layout.
#[derive(Clone, Debug)]
pub struct HfModel {
    /// Reinforcement mask per element.
    pub solid: Vec<bool>,
    /// Reinforcement thickness in length units.
    pub h: f64,
    /// Plane-stress problem with per-element thickness.
    pub problem: FemProblem,
    pub solid_count: usize,
}

/// Exact objective values for one candidate.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HfObjectives {
    pub j1: f64,
    pub j2: f64,
    pub feasible: bool,
    /// Reason the candidate was rejected, when infeasible.
    pub diagnostic: Option<String>,
}

impl HfObjectives {
    fn infeasible(reason: &str) -> Self {
        Self {
            j1: f64::INFINITY,
            j2: f64::INFINITY,
            feasible: false,
            diagnostic: Some(reason.to_string()),
        }
    }
}

/// Thresholds a density image into a reinforcement mask (inclusive at the
/// threshold, so a density of exactly one half is material).
pub fn solid_mask(density: &DensityField, threshold: f64) -> Vec<bool> {
    density.values.iter().map(|g| *g >= threshold).collect()
}

/// Builds the thickness-scaled plane-stress model for a binary layout.
///
/// Reinforcement elements get thickness `h` and the full modulus; the rest
/// of the domain becomes a skin panel at one tenth of the minimum thickness,
/// also at full modulus, which keeps the stiffness matrix definite and lets
/// detached material islands deform without blowing up.
pub fn build_hf_model(solid: &[bool], h: f64, setup: &HfSetup) -> HfModel {
    let e0 = setup.problem.e0;
    let skin = setup.skin_thickness();
    let modulus = vec![e0; solid.len()];
    let thickness: Vec<f64> =
        solid.iter().map(|s| if *s { h } else { skin }).collect();
    let solid_count = solid.iter().filter(|s| **s).count();
    HfModel {
        solid: solid.to_vec(),
        h,
        problem: setup.problem.fem_problem(modulus, thickness),
        solid_count,
    }
}

/// True when some reinforcement element carries load and is joined to the
/// supported boundary through a 4-connected path of reinforcement elements.
///
/// This is the "valid structure" screen applied before archive insertion:
/// an empty layout, a layout floating free of the supports, or one whose
/// load region is void cannot carry the load through designed material.
pub fn load_path_exists(solid: &[bool], problem: &GridProblem) -> bool {
    let mesh = &problem.mesh;
    let (nx, ny) = (mesh.nx, mesh.ny);
    debug_assert_eq!(solid.len(), nx * ny);

    let mut fixed = vec![false; mesh.dof_count()];
    for &dof in &problem.fixed_dofs {
        fixed[dof] = true;
    }
    let element_flag = |predicate: &dyn Fn(usize) -> bool| -> Vec<bool> {
        (0..nx * ny)
            .map(|e| {
                mesh.element_dofs(e).iter().any(|&dof| predicate(dof))
            })
            .collect()
    };
    let supported = element_flag(&|dof| fixed[dof]);
    let loaded = element_flag(&|dof| problem.loads[dof] != 0.0);

    // Flood fill through reinforcement from support-touching elements.
    let mut reached = vec![false; nx * ny];
    let mut queue: Vec<usize> = (0..nx * ny)
        .filter(|&e| solid[e] && supported[e])
        .collect();
    for &e in &queue {
        reached[e] = true;
    }
    while let Some(e) = queue.pop() {
        if loaded[e] {
            return true;
        }
        let (ex, ey) = (e % nx, e / nx);
        let mut visit = |n: usize| {
            if solid[n] && !reached[n] {
                reached[n] = true;
                queue.push(n);
            }
        };
        if ex > 0 {
            visit(e - 1);
        }
        if ex + 1 < nx {
            visit(e + 1);
        }
        if ey > 0 {
            visit(e - nx);
        }
        if ey + 1 < ny {
            visit(e + nx);
        }
    }
    false
}

/// Evaluates one candidate exactly.
///
/// J1 is the strain energy or the true maximum von Mises stress over
/// reinforcement elements; J2 is the reinforcement volume `h * solid area`.
/// Candidates that are empty, have a thickness outside the configured range,
/// or lack a reinforcement path from load to support come back infeasible
/// with both objectives at infinity; an analysis failure does the same with
/// the solver's diagnostic. The evaluation is a pure function of its inputs.
pub fn evaluate(
    density: &DensityField,
    h: f64,
    setup: &HfSetup,
    kind: HfObjectiveKind,
) -> HfObjectives {
    let solid = solid_mask(density, SOLID_THRESHOLD);
    let solid_count = solid.iter().filter(|s| **s).count();
    if solid_count == 0 {
        return HfObjectives::infeasible("no reinforcement material");
    }
    if !(setup.h_min - 1e-12..=setup.h_max + 1e-12).contains(&h) {
        return HfObjectives::infeasible("thickness outside configured range");
    }
    if !load_path_exists(&solid, &setup.problem) {
        return HfObjectives::infeasible("no reinforcement path from load to support");
    }

    let model = build_hf_model(&solid, h, setup);
    let solution = match model.problem.solve() {
        Ok(s) => s,
        Err(err) => {
            let mut reason = String::from("analysis failed: ");
            reason.push_str(&err.to_string());
            return HfObjectives::infeasible(&reason);
        }
    };

    let j1 = match kind {
        HfObjectiveKind::Stiffness => solution.compliance,
        HfObjectiveKind::Stress => solution
            .von_mises
            .iter()
            .zip(&solid)
            .filter(|(_, s)| **s)
            .map(|(v, _)| *v)
            .fold(0.0f64, f64::max),
    };
    let j2 = h * solid_count as f64 * setup.problem.mesh.element_area();
    HfObjectives { j1, j2, feasible: true, diagnostic: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::QuadMesh;

    fn full_solid(nx: usize, ny: usize) -> Vec<bool> {
        vec![true; nx * ny]
    }

    #[test]
    fn mask_threshold_is_inclusive() {
        let field = DensityField::new(vec![0.49, 0.5, 0.51, 0.0], 2, 2, 0.5);
        assert_eq!(solid_mask(&field, 0.5), vec![false, true, true, false]);
    }

    #[test]
    fn membrane_stiffness_scales_inversely_with_thickness() {
        let setup = HfSetup::new(GridProblem::cantilever(8, 8));
        let solid = full_solid(8, 8);
        let thin = build_hf_model(&solid, 0.05, &setup).problem.solve().unwrap();
        let thick = build_hf_model(&solid, 0.1, &setup).problem.solve().unwrap();
        let ratio = thin.compliance / thick.compliance;
        assert!((ratio - 2.0).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn detached_island_still_solves() {
        let setup = HfSetup::new(GridProblem::cantilever(8, 8));
        // A support-to-load beam along the bottom plus a floating island.
        let mut solid = vec![false; 64];
        for ex in 0..8 {
            solid[ex] = true;
            solid[8 + ex] = true;
        }
        solid[7 * 8 + 4] = true; // island, top row
        let model = build_hf_model(&solid, 0.05, &setup);
        let solution = model.problem.solve().unwrap();
        assert!(solution.compliance.is_finite());
        assert!(model.solid_count == 17);
    }

    #[test]
    fn thinner_reinforcement_raises_peak_stress() {
        let setup = HfSetup::new(GridProblem::cantilever(12, 12));
        // Bottom-half beam: supported at the wall, covering the load corner.
        let mut density = vec![0.0; 144];
        for ey in 0..6 {
            for ex in 0..12 {
                density[ey * 12 + ex] = 1.0;
            }
        }
        let field = DensityField::new(density, 12, 12, 1.0 / 12.0);
        let thin = evaluate(&field, setup.h_min, &setup, HfObjectiveKind::Stress);
        let thick = evaluate(&field, setup.h_max, &setup, HfObjectiveKind::Stress);
        assert!(thin.feasible && thick.feasible);
        assert!(thin.j1 > thick.j1, "{} vs {}", thin.j1, thick.j1);
    }

    #[test]
    fn uniaxial_specimen_matches_nominal_stress() {
        // Horizontal strip pulled in x: left edge restrained in x (one node
        // also in y), consistent unit traction on the right edge. The exact
        // solution is uniform sigma_xx = F / (height * thickness).
        let (nx, ny) = (6, 4);
        let mesh = QuadMesh::new(nx, ny, 1.0 / nx as f64, 1.0 / nx as f64);
        let height = ny as f64 / nx as f64;
        let mut fixed = Vec::new();
        for iy in 0..=ny {
            fixed.push(2 * mesh.node_id(0, iy));
        }
        fixed.push(2 * mesh.node_id(0, 0) + 1);
        let mut loads = vec![0.0; mesh.dof_count()];
        let edge_nodes = ny + 1;
        for iy in 0..=ny {
            let weight = if iy == 0 || iy == ny { 0.5 } else { 1.0 };
            loads[2 * mesh.node_id(nx, iy)] = weight / (edge_nodes - 1) as f64;
        }
        let problem = GridProblem {
            mesh,
            loads,
            fixed_dofs: fixed,
            e0: 1.0,
            e_min: 1e-9,
            nu: 0.0,
        };
        let setup = HfSetup::new(problem);
        let field = DensityField::new(vec![1.0; nx * ny], nx, ny, 1.0 / nx as f64);
        for h in [0.01, 0.04, 0.1] {
            let result = evaluate(&field, h, &setup, HfObjectiveKind::Stress);
            assert!(result.feasible);
            let nominal = 1.0 / (height * h);
            assert!(
                (result.j1 - nominal).abs() < 1e-9 * nominal,
                "h {h}: {} vs {}",
                result.j1,
                nominal
            );
        }
    }

    #[test]
    fn volume_is_count_times_area_times_thickness() {
        let setup = HfSetup::new(GridProblem::cantilever(8, 8));
        let mut density = vec![0.0; 64];
        for ex in 0..8 {
            density[ex] = 1.0;
            density[8 + ex] = 0.8;
        }
        let field = DensityField::new(density, 8, 8, 1.0 / 8.0);
        let result = evaluate(&field, 0.05, &setup, HfObjectiveKind::Stiffness);
        assert!(result.feasible);
        let area = 1.0 / 64.0;
        assert!((result.j2 - 16.0 * area * 0.05).abs() < 1e-15);
    }

    #[test]
    fn doubling_thickness_halves_energy_and_doubles_volume() {
        let setup = HfSetup::new(GridProblem::cantilever(10, 10));
        let field = DensityField::new(vec![1.0; 100], 10, 10, 0.1);
        let a = evaluate(&field, 0.04, &setup, HfObjectiveKind::Stiffness);
        let b = evaluate(&field, 0.08, &setup, HfObjectiveKind::Stiffness);
        assert!(a.feasible && b.feasible);
        assert!((a.j1 / b.j1 - 2.0).abs() < 1e-9);
        assert!((b.j2 / a.j2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_candidates_are_flagged() {
        let setup = HfSetup::new(GridProblem::cantilever(8, 8));
        let void = DensityField::new(vec![0.0; 64], 8, 8, 1.0 / 8.0);
        let r = evaluate(&void, 0.05, &setup, HfObjectiveKind::Stiffness);
        assert!(!r.feasible && r.j1.is_infinite() && r.j2.is_infinite());

        // Material present but floating free of the wall.
        let mut floater = vec![0.0; 64];
        for ex in 3..8 {
            floater[ex] = 1.0; // bottom row, detached from column 0
        }
        let field = DensityField::new(floater, 8, 8, 1.0 / 8.0);
        let r = evaluate(&field, 0.05, &setup, HfObjectiveKind::Stiffness);
        assert!(!r.feasible, "floating layout must be rejected");

        // Attached to the wall but never reaching the loaded corner.
        let mut stub = vec![0.0; 64];
        for ex in 0..3 {
            stub[7 * 8 + ex] = 1.0; // top-left stub
        }
        let field = DensityField::new(stub, 8, 8, 1.0 / 8.0);
        let r = evaluate(&field, 0.05, &setup, HfObjectiveKind::Stiffness);
        assert!(!r.feasible, "load region must connect to the support");

        // Thickness outside the range.
        let beam = DensityField::new(vec![1.0; 64], 8, 8, 1.0 / 8.0);
        let r = evaluate(&beam, 0.2, &setup, HfObjectiveKind::Stiffness);
        assert!(!r.feasible);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let setup = HfSetup::new(GridProblem::cantilever(8, 8));
        let mut density = vec![0.2; 64];
        for ex in 0..8 {
            density[ex] = 0.9;
        }
        let field = DensityField::new(density, 8, 8, 1.0 / 8.0);
        let a = evaluate(&field, 0.03, &setup, HfObjectiveKind::Stress);
        let b = evaluate(&field, 0.03, &setup, HfObjectiveKind::Stress);
        assert_eq!(a, b);
    }
}
