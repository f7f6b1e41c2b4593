//! Plane-stress linear elasticity on structured quad grids.
//!
//! Serves both stages of the design loop: the low-fidelity optimizer calls it
//! with penalized moduli, the high-fidelity evaluator with binary moduli and
//! per-element thickness.

mod banded;
pub mod element;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use banded::{BandedCholesky, BandedSymMatrix};

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

/// Relative-residual bound every static solve must satisfy.
pub const SOLVE_TOLERANCE: f64 = 1e-9;

/// Band storage size above which the solver switches to conjugate gradients.
const DIRECT_STORAGE_LIMIT: usize = 8_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum FemError {
    /// Problem invariant violated before any numerics ran.
    InvalidProblem(&'static str),
    /// Factorization hit a non-positive pivot: the constraints leave this
    /// DOF free to move without resistance.
    SingularSystem { dof: usize },
    /// Iterative solve (or residual check) missed the tolerance.
    NonConvergence { residual: f64, iterations: usize },
}

impl fmt::Display for FemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FemError::InvalidProblem(why) => write!(f, "invalid FEM problem: {why}"),
            FemError::SingularSystem { dof } => {
                let (node, axis) = (dof / 2, if dof % 2 == 0 { "x" } else { "y" });
                write!(
                    f,
                    "singular stiffness system: unresisted motion at node {node} along {axis}"
                )
            }
            FemError::NonConvergence {
                residual,
                iterations,
            } => write!(
                f,
                "static solve did not reach tolerance: residual {residual:.3e} after {iterations} iterations"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FemError {}

/// Structured grid of nx×ny axis-aligned quad elements.
///
/// Nodes are numbered column-major (y fastest) to keep the stiffness
/// bandwidth proportional to ny; elements are numbered row-major (x fastest)
/// so element order matches row-major image pixels.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadMesh {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl QuadMesh {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Self {
        assert!(nx >= 1 && ny >= 1, "mesh needs at least one element");
        assert!(dx > 0.0 && dy > 0.0, "element size must be positive");
        Self { nx, ny, dx, dy }
    }

    /// Unit-length domain: square elements of size 1/nx.
    pub fn unit_domain(nx: usize, ny: usize) -> Self {
        let d = 1.0 / nx as f64;
        Self::new(nx, ny, d, d)
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dof_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nx && iy <= self.ny);
        ix * (self.ny + 1) + iy
    }

    pub fn node_position(&self, node: usize) -> (f64, f64) {
        let ix = node / (self.ny + 1);
        let iy = node % (self.ny + 1);
        (ix as f64 * self.dx, iy as f64 * self.dy)
    }

    /// Counterclockwise corner nodes of element e = ey·nx + ex.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let ex = e % self.nx;
        let ey = e / self.nx;
        [
            self.node_id(ex, ey),
            self.node_id(ex + 1, ey),
            self.node_id(ex + 1, ey + 1),
            self.node_id(ex, ey + 1),
        ]
    }

    pub fn element_center(&self, e: usize) -> (f64, f64) {
        let ex = e % self.nx;
        let ey = e / self.nx;
        (
            (ex as f64 + 0.5) * self.dx,
            (ey as f64 + 0.5) * self.dy,
        )
    }

    pub fn element_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Largest DOF index distance inside one element.
    fn half_bandwidth(&self) -> usize {
        2 * (self.ny + 2) + 1
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    fn element_coords(&self) -> [[f64; 2]; 4] {
        element::rect_coords(self.dx, self.dy)
    }
}

/// A fully specified linear-elastic analysis instance.
#[derive(Clone, Debug)]
pub struct FemProblem {
    pub mesh: QuadMesh,
    pub modulus: Vec<f64>,
    pub thickness: Vec<f64>,
    pub nu: f64,
    pub loads: Vec<f64>,
    pub fixed_dofs: Vec<usize>,
}

impl FemProblem {
    pub fn validate(&self) -> Result<(), FemError> {
        let n_elm = self.mesh.element_count();
        if self.modulus.len() != n_elm || self.thickness.len() != n_elm {
            return Err(FemError::InvalidProblem("per-element array length mismatch"));
        }
        if self.loads.len() != self.mesh.dof_count() {
            return Err(FemError::InvalidProblem("load vector length mismatch"));
        }
        if self.fixed_dofs.is_empty() {
            return Err(FemError::InvalidProblem("no fixed DOFs; rigid-body modes remain"));
        }
        if self.modulus.iter().any(|&e| !(e > 0.0)) {
            return Err(FemError::InvalidProblem("modulus must be positive"));
        }
        if self.thickness.iter().any(|&t| !(t > 0.0)) {
            return Err(FemError::InvalidProblem("thickness must be positive"));
        }
        Ok(())
    }

    /// Assembles, solves, and evaluates stresses in one call.
    pub fn solve(&self) -> Result<FemSolution, FemError> {
        self.validate()?;
        let k = assemble_stiffness(self);
        let solver = StaticSolver::new(&k, &self.fixed_dofs)?;
        let u = solver.solve(&self.loads)?;
        let von_mises = (0..self.mesh.element_count())
            .map(|e| element_von_mises(&u, self, e))
            .collect();
        let compliance = compliance(&u, &k);
        Ok(FemSolution {
            u,
            von_mises,
            compliance,
        })
    }

    pub fn gather_element_displacements(&self, u: &[f64], e: usize) -> [f64; 8] {
        let dofs = self.mesh.element_dofs(e);
        let mut out = [0.0; 8];
        for (slot, &d) in out.iter_mut().zip(dofs.iter()) {
            *slot = u[d];
        }
        out
    }
}

/// Result of a static solve.
#[derive(Clone, Debug)]
pub struct FemSolution {
    pub u: Vec<f64>,
    pub von_mises: Vec<f64>,
    pub compliance: f64,
}

/// Grid, boundary conditions, and material constants shared by a family of
/// analyses that differ only in per-element modulus and thickness.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridProblem {
    pub mesh: QuadMesh,
    pub loads: Vec<f64>,
    pub fixed_dofs: Vec<usize>,
    pub e0: f64,
    pub e_min: f64,
    pub nu: f64,
}

impl GridProblem {
    /// Cantilever: left wall fully fixed, unit downward load spread over the
    /// lower-right corner region of the right edge (one eighth of the height).
    pub fn cantilever(nx: usize, ny: usize) -> Self {
        let loaded = (ny / 8).max(1);
        Self::cantilever_with_load_extent(nx, ny, loaded)
    }

    /// Cantilever loaded across the entire right edge (beam benchmarks).
    pub fn cantilever_tip_loaded(nx: usize, ny: usize) -> Self {
        Self::cantilever_with_load_extent(nx, ny, ny)
    }

    fn cantilever_with_load_extent(nx: usize, ny: usize, loaded_elements: usize) -> Self {
        let mesh = QuadMesh::unit_domain(nx, ny);
        let mut fixed = Vec::with_capacity(2 * (ny + 1));
        for iy in 0..=ny {
            let n = mesh.node_id(0, iy);
            fixed.push(2 * n);
            fixed.push(2 * n + 1);
        }
        // Consistent nodal forces for a uniform downward traction of total 1
        // on the right-edge segment iy ∈ [0, loaded_elements].
        let mut loads = vec![0.0; mesh.dof_count()];
        let share = 1.0 / loaded_elements as f64;
        for ey in 0..loaded_elements {
            for iy in [ey, ey + 1] {
                let n = mesh.node_id(nx, iy);
                loads[2 * n + 1] -= 0.5 * share;
            }
        }
        Self {
            mesh,
            loads,
            fixed_dofs: fixed,
            e0: 1.0,
            e_min: 1e-9,
            nu: 0.3,
        }
    }

    pub fn fem_problem(&self, modulus: Vec<f64>, thickness: Vec<f64>) -> FemProblem {
        FemProblem {
            mesh: self.mesh.clone(),
            modulus,
            thickness,
            nu: self.nu,
            loads: self.loads.clone(),
            fixed_dofs: self.fixed_dofs.clone(),
        }
    }
}

/// Assembles K = Σ_e E_e·t_e·k₀ in band storage. All elements of the
/// structured grid are congruent, so the unit element matrix is built once.
pub fn assemble_stiffness(problem: &FemProblem) -> BandedSymMatrix {
    let mesh = &problem.mesh;
    let k0 = element::quad4_stiffness(&mesh.element_coords(), 1.0, 1.0, problem.nu);
    let mut k = BandedSymMatrix::zeros(mesh.dof_count(), mesh.half_bandwidth());
    for e in 0..mesh.element_count() {
        let scale = problem.modulus[e] * problem.thickness[e];
        let dofs = mesh.element_dofs(e);
        for a in 0..8 {
            // k0 is symmetric, so each unordered pair contributes one entry
            // at its canonical lower-triangle position.
            for b in 0..=a {
                let (i, j) = (dofs[a].max(dofs[b]), dofs[a].min(dofs[b]));
                k.add(i, j, scale * k0[a][b]);
            }
        }
    }
    k
}

/// Which linear-solver backend a [`StaticSolver`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    /// Direct for band storage up to a fixed budget, iterative beyond it.
    Auto,
    Direct,
    Iterative,
}

enum Backend {
    Direct(BandedCholesky),
    ConjugateGradient { diag_inv: Vec<f64> },
}

/// Reusable solver for one constrained stiffness matrix: factors (or
/// preconditions) once, then solves any number of right-hand sides.
pub struct StaticSolver {
    k_constrained: BandedSymMatrix,
    fixed_mask: Vec<bool>,
    backend: Backend,
}

impl StaticSolver {
    pub fn new(k: &BandedSymMatrix, fixed_dofs: &[usize]) -> Result<Self, FemError> {
        Self::with_kind(k, fixed_dofs, SolverKind::Auto)
    }

    pub fn with_kind(
        k: &BandedSymMatrix,
        fixed_dofs: &[usize],
        kind: SolverKind,
    ) -> Result<Self, FemError> {
        if fixed_dofs.is_empty() {
            return Err(FemError::InvalidProblem("no fixed DOFs; rigid-body modes remain"));
        }
        let mut k_constrained = k.clone();
        let mut fixed_mask = vec![false; k.dim()];
        for &d in fixed_dofs {
            k_constrained.eliminate_dof(d);
            fixed_mask[d] = true;
        }
        let direct = match kind {
            SolverKind::Auto => k.storage_len() <= DIRECT_STORAGE_LIMIT,
            SolverKind::Direct => true,
            SolverKind::Iterative => false,
        };
        let backend = if direct {
            Backend::Direct(k_constrained.clone().cholesky()?)
        } else {
            let diag_inv = k_constrained.diagonal().iter().map(|&d| 1.0 / d).collect();
            Backend::ConjugateGradient { diag_inv }
        };
        Ok(Self {
            k_constrained,
            fixed_mask,
            backend,
        })
    }

    /// Solves K u = f with fixed DOFs pinned to zero. The relative residual
    /// on the free DOFs is verified against [`SOLVE_TOLERANCE`].
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>, FemError> {
        let mut rhs = f.to_vec();
        for (v, &fixed) in rhs.iter_mut().zip(self.fixed_mask.iter()) {
            if fixed {
                *v = 0.0;
            }
        }
        let f_norm = norm(&rhs);
        if f_norm == 0.0 {
            return Ok(rhs);
        }
        let u = match &self.backend {
            Backend::Direct(chol) => chol.solve(&rhs),
            Backend::ConjugateGradient { diag_inv } => {
                conjugate_gradient(&self.k_constrained, &rhs, diag_inv)?
            }
        };
        let r = self.k_constrained.matvec(&u);
        let mut err = 0.0;
        for i in 0..u.len() {
            let d = r[i] - rhs[i];
            err += d * d;
        }
        let rel = err.sqrt() / f_norm;
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(FemError::NonConvergence {
                residual: rel,
                iterations: 0,
            });
        }
        Ok(u)
    }
}

/// One-shot convenience over [`StaticSolver`].
pub fn solve_static(
    k: &BandedSymMatrix,
    f: &[f64],
    fixed_dofs: &[usize],
) -> Result<Vec<f64>, FemError> {
    StaticSolver::new(k, fixed_dofs)?.solve(f)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn conjugate_gradient(
    k: &BandedSymMatrix,
    b: &[f64],
    diag_inv: &[f64],
) -> Result<Vec<f64>, FemError> {
    // Jacobi-preconditioned CG; iterates to a tighter tolerance than the
    // post-check so rounding in the residual verification has headroom.
    let tol = SOLVE_TOLERANCE * 0.1;
    let n = b.len();
    let max_iter = 40 * n;
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag_inv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        let kp = k.matvec(&p);
        let pkp: f64 = p.iter().zip(&kp).map(|(a, b)| a * b).sum();
        let alpha = rz / pkp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        if norm(&r) / b_norm <= tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * diag_inv[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NonConvergence {
        residual: norm(&r) / b_norm,
        iterations: max_iter,
    })
}

/// Von Mises stress at the centroid of element `e`, using that element's
/// modulus in the constitutive law.
pub fn element_von_mises(u: &[f64], problem: &FemProblem, e: usize) -> f64 {
    let u_e = problem.gather_element_displacements(u, e);
    let sigma = element::centroid_stress(
        &problem.mesh.element_coords(),
        &u_e,
        problem.modulus[e],
        problem.nu,
    );
    element::von_mises(&sigma)
}

/// Compliance UᵀKU (strain energy for the solved system equals FᵀU).
pub fn compliance(u: &[f64], k: &BandedSymMatrix) -> f64 {
    let ku = k.matvec(u);
    u.iter().zip(&ku).map(|(a, b)| a * b).sum()
}
