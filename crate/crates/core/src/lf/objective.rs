//! Objective/constraint values and design sensitivities for the optimizer.
//!
//! All public entry points take the raw design field and chain sensitivities
//! through projection and filtering, so the optimizer works entirely in
//! design variables while physics sees the filtered-projected field.

use alloc::vec;
use alloc::vec::Vec;

use super::filter::{heaviside_derivative, heaviside_value, DensityFilter};
use super::{DensityField, LfConfig, LfError};
use crate::fem::element;
use crate::fem::{assemble_stiffness, StaticSolver};

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

/// Precomputed machinery for repeated evaluations on one configuration.
pub struct LfEngine<'a> {
    config: &'a LfConfig,
    filter: DensityFilter,
    /// Element stiffness at unit modulus and thickness (congruent elements).
    k0: [[f64; 8]; 8],
    /// Centroid stress operator at the solid modulus.
    stress_op: [[f64; 8]; 3],
    n: usize,
}

struct Analysis {
    u: Vec<f64>,
    solver: StaticSolver,
    modulus_derivative: Vec<f64>,
}

impl<'a> LfEngine<'a> {
    pub fn new(config: &'a LfConfig) -> Result<Self, LfError> {
        config.validate()?;
        let mesh = &config.problem.mesh;
        let coords = element::rect_coords(mesh.dx, mesh.dy);
        Ok(Self {
            config,
            filter: DensityFilter::new(mesh.nx, mesh.ny, mesh.dx, config.r_f),
            k0: element::quad4_stiffness(&coords, 1.0, 1.0, config.problem.nu),
            stress_op: element::centroid_stress_operator(
                &coords,
                config.problem.e0,
                config.problem.nu,
            ),
            n: mesh.element_count(),
        })
    }

    pub fn filter(&self) -> &DensityFilter {
        &self.filter
    }

    /// Filtered-then-projected (physical) field.
    pub fn physical(&self, x: &[f64]) -> Vec<f64> {
        self.filter
            .apply(x)
            .into_iter()
            .map(|v| heaviside_value(v, self.config.beta, self.config.eta))
            .collect()
    }

    /// Pulls a physical-field sensitivity back to design variables:
    /// dφ/dx = Wᵀ(dφ/dγ̂ ⊙ dγ̂/dγ̃).
    pub fn chain_to_design(&self, x: &[f64], d_physical: &[f64]) -> Vec<f64> {
        let tilde = self.filter.apply(x);
        let scaled: Vec<f64> = d_physical
            .iter()
            .zip(&tilde)
            .map(|(d, &t)| d * heaviside_derivative(t, self.config.beta, self.config.eta))
            .collect();
        self.filter.apply_transpose(&scaled)
    }

    fn analyze(&self, physical: &[f64]) -> Result<Analysis, LfError> {
        let p = self.config.penal;
        let (e0, e_min) = (self.config.problem.e0, self.config.problem.e_min);
        let mut modulus = Vec::with_capacity(self.n);
        let mut modulus_derivative = Vec::with_capacity(self.n);
        for &g in physical {
            modulus.push(e_min + g.powf(p) * (e0 - e_min));
            modulus_derivative.push(p * g.powf(p - 1.0) * (e0 - e_min));
        }
        let problem = self
            .config
            .problem
            .fem_problem(modulus, vec![1.0; self.n]);
        problem.validate().map_err(LfError::Fem)?;
        let k = assemble_stiffness(&problem);
        let solver = StaticSolver::new(&k, &problem.fixed_dofs)?;
        let u = solver.solve(&problem.loads)?;
        Ok(Analysis {
            u,
            solver,
            modulus_derivative,
        })
    }

    fn gather(&self, u: &[f64], e: usize) -> [f64; 8] {
        let nodes = self.config.problem.mesh.element_nodes(e);
        let mut out = [0.0; 8];
        for (i, &node) in nodes.iter().enumerate() {
            out[2 * i] = u[2 * node];
            out[2 * i + 1] = u[2 * node + 1];
        }
        out
    }

    /// Compliance W = FᵀU and its design gradient (self-adjoint problem:
    /// dW/dγ̂_e = −E'(γ̂_e)·u_eᵀk₀u_e).
    pub fn compliance(&self, x: &[f64]) -> Result<(f64, Vec<f64>), LfError> {
        let physical = self.physical(x);
        let analysis = self.analyze(&physical)?;
        let w: f64 = self
            .config
            .problem
            .loads
            .iter()
            .zip(&analysis.u)
            .map(|(f, u)| f * u)
            .sum();
        let mut d_physical = Vec::with_capacity(self.n);
        for e in 0..self.n {
            let u_e = self.gather(&analysis.u, e);
            let energy = element::element_energy(&self.k0, &u_e);
            d_physical.push(-analysis.modulus_derivative[e] * energy);
        }
        Ok((w, self.chain_to_design(x, &d_physical)))
    }

    /// Per-element relaxed stresses σ̂_e = γ̂_e^q·σ_vm,e for the current
    /// design (σ_vm at the solid modulus), without any aggregation.
    pub fn relaxed_stresses(&self, x: &[f64]) -> Result<Vec<f64>, LfError> {
        let physical = self.physical(x);
        let analysis = self.analyze(&physical)?;
        let q = self.config.q;
        let mut out = Vec::with_capacity(self.n);
        for e in 0..self.n {
            let u_e = self.gather(&analysis.u, e);
            let mut s = [0.0; 3];
            for r in 0..3 {
                for c in 0..8 {
                    s[r] += self.stress_op[r][c] * u_e[c];
                }
            }
            out.push(physical[e].powf(q) * element::von_mises(&s));
        }
        Ok(out)
    }

    /// Relaxed p-norm stress aggregate and its design gradient via one
    /// adjoint solve on the already-factored stiffness.
    ///
    /// σ̂_e = γ̂_e^q·σ_vm,e with σ_vm evaluated at the solid modulus;
    /// σ_PN = ((1/N)Σσ̂^P)^{1/P}, computed in max-normalized form so large
    /// exponents cannot overflow.
    pub fn pnorm_stress(&self, x: &[f64], exponent: f64) -> Result<(f64, Vec<f64>), LfError> {
        let physical = self.physical(x);
        let analysis = self.analyze(&physical)?;
        let q = self.config.q;
        let nf = self.n as f64;

        // Centroid stress state and relaxed von Mises per element.
        let mut sigma = vec![[0.0; 3]; self.n];
        let mut vm = vec![0.0; self.n];
        let mut relaxed = vec![0.0; self.n];
        for e in 0..self.n {
            let u_e = self.gather(&analysis.u, e);
            let mut s = [0.0; 3];
            for r in 0..3 {
                for c in 0..8 {
                    s[r] += self.stress_op[r][c] * u_e[c];
                }
            }
            sigma[e] = s;
            vm[e] = element::von_mises(&s);
            relaxed[e] = physical[e].powf(q) * vm[e];
        }
        let max_relaxed = relaxed.iter().fold(0.0f64, |m, &v| m.max(v));
        if max_relaxed < 1e-300 {
            return Ok((0.0, vec![0.0; self.n]));
        }

        // σ_PN = σ̂_max·(S/N)^{1/P} with S = Σ(σ̂/σ̂_max)^P;
        // ∂σ_PN/∂σ̂_e = (S/N)^{(1−P)/P}·(σ̂_e/σ̂_max)^{P−1}/N.
        let p = exponent;
        let ratios: Vec<f64> = relaxed.iter().map(|&v| v / max_relaxed).collect();
        let s_sum: f64 = ratios.iter().map(|&r| r.powf(p)).sum();
        let sigma_pn = max_relaxed * (s_sum / nf).powf(1.0 / p);
        let outer = (s_sum / nf).powf((1.0 - p) / p) / nf;
        let weights: Vec<f64> = ratios.iter().map(|&r| outer * r.powf(p - 1.0)).collect();

        // Explicit part: ∂σ̂/∂γ̂ = q·γ̂^{q−1}·σ_vm.
        let mut d_physical = vec![0.0; self.n];
        for e in 0..self.n {
            d_physical[e] = weights[e] * q * physical[e].powf(q - 1.0) * vm[e];
        }

        // Adjoint load g = ∂σ_PN/∂U: per element, w_e·γ̂^q·Sᵀ(Vσ)/σ_vm.
        let mesh = &self.config.problem.mesh;
        let mut g = vec![0.0; mesh.dof_count()];
        for e in 0..self.n {
            if vm[e] <= 0.0 || weights[e] == 0.0 {
                continue;
            }
            let [sx, sy, txy] = sigma[e];
            let vsigma = [
                sx - 0.5 * sy,
                sy - 0.5 * sx,
                3.0 * txy,
            ];
            let coef = weights[e] * physical[e].powf(q) / vm[e];
            let nodes = mesh.element_nodes(e);
            for c in 0..8 {
                let dvm_du = (self.stress_op[0][c] * vsigma[0]
                    + self.stress_op[1][c] * vsigma[1]
                    + self.stress_op[2][c] * vsigma[2])
                    * coef;
                let dof = 2 * nodes[c / 2] + (c % 2);
                g[dof] += dvm_du;
            }
        }

        // Implicit part through K(γ̂)U = F: λ solves Kλ = −g, contribution
        // λ_eᵀ(∂K_e/∂γ̂_e)u_e.
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let lambda = analysis.solver.solve(&neg_g)?;
        for e in 0..self.n {
            let u_e = self.gather(&analysis.u, e);
            let l_e = self.gather(&lambda, e);
            let ku = element::element_matvec(&self.k0, &u_e);
            let lku: f64 = l_e.iter().zip(&ku).map(|(a, b)| a * b).sum();
            d_physical[e] += analysis.modulus_derivative[e] * lku;
        }

        Ok((sigma_pn, self.chain_to_design(x, &d_physical)))
    }
}

fn check_shape(field: &DensityField, config: &LfConfig) -> Result<(), LfError> {
    let mesh = &config.problem.mesh;
    if field.nx != mesh.nx || field.ny != mesh.ny {
        return Err(LfError::ShapeMismatch);
    }
    Ok(())
}

/// Compliance and its sensitivity with respect to the raw design field.
pub fn compliance_value_and_sensitivity(
    gamma: &DensityField,
    config: &LfConfig,
) -> Result<(f64, Vec<f64>), LfError> {
    check_shape(gamma, config)?;
    LfEngine::new(config)?.compliance(&gamma.values)
}

/// Stress aggregate and its sensitivity with respect to the raw design field.
pub fn pnorm_stress_value_and_sensitivity(
    gamma: &DensityField,
    config: &LfConfig,
    exponent: f64,
) -> Result<(f64, Vec<f64>), LfError> {
    check_shape(gamma, config)?;
    if exponent < 1.0 {
        return Err(LfError::InvalidConfig("aggregate exponents must be at least 1"));
    }
    LfEngine::new(config)?.pnorm_stress(&gamma.values, exponent)
}

/// Similarity toward a reference layout: G̃ = Σ_e(1 − |γ_e − γ_ref,e|)·v_e,
/// with sensitivity ∓v_e by the sign of (γ_e − γ_ref,e); exact ties take −v_e.
///
/// The constraint "stay at least this different" is G̃ ≤ g_mut_max·Σv_e; the
/// bound itself does not enter the value, it is returned for the caller to
/// compare against.
pub fn mutation_constraint_value_and_sensitivity(
    gamma: &DensityField,
    gamma_ref: &DensityField,
    _g_mut_max: f64,
) -> Result<(f64, Vec<f64>), LfError> {
    if gamma.nx != gamma_ref.nx || gamma.ny != gamma_ref.ny {
        return Err(LfError::ShapeMismatch);
    }
    let v_e = gamma.element_volume();
    let mut total = 0.0;
    let mut sens = Vec::with_capacity(gamma.len());
    for (&g, &r) in gamma.values.iter().zip(&gamma_ref.values) {
        let diff = g - r;
        total += (1.0 - diff.abs()) * v_e;
        sens.push(if diff < 0.0 { v_e } else { -v_e });
    }
    Ok((total, sens))
}
