//! Density filtering and smoothed Heaviside projection.

use alloc::vec;
use alloc::vec::Vec;

use super::DensityField;

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

/// Linear hat-weight density filter with precomputed neighbor stencil.
///
/// Weights are w_ij = max(0, r_f − |x_i − x_j|) over element centroids,
/// normalized so each row sums to one (boundary rows renormalize over the
/// truncated neighborhood).
pub struct DensityFilter {
    nx: usize,
    ny: usize,
    /// Stencil offsets (dex, dey) with the unnormalized hat weight.
    stencil: Vec<(isize, isize, f64)>,
    /// Per-element row normalization 1/Σw.
    row_scale: Vec<f64>,
    degenerate: bool,
}

impl DensityFilter {
    /// `spacing` is the element width; `radius` is in the same length units.
    pub fn new(nx: usize, ny: usize, spacing: f64, radius: f64) -> Self {
        let degenerate = radius < 0.5 * spacing;
        let mut stencil = Vec::new();
        if degenerate {
            stencil.push((0, 0, 1.0));
        } else {
            let reach = (radius / spacing) as isize;
            for dey in -reach..=reach {
                for dex in -reach..=reach {
                    let dist = spacing * ((dex * dex + dey * dey) as f64).sqrt();
                    let w = radius - dist;
                    if w > 0.0 {
                        stencil.push((dex, dey, w));
                    }
                }
            }
        }
        let mut row_scale = vec![0.0; nx * ny];
        for e in 0..nx * ny {
            let (ex, ey) = ((e % nx) as isize, (e / nx) as isize);
            let mut total = 0.0;
            for &(dex, dey, w) in &stencil {
                let (jx, jy) = (ex + dex, ey + dey);
                if jx >= 0 && jx < nx as isize && jy >= 0 && jy < ny as isize {
                    total += w;
                }
            }
            row_scale[e] = 1.0 / total;
        }
        Self {
            nx,
            ny,
            stencil,
            row_scale,
            degenerate,
        }
    }

    /// True when the radius is below half an element width, so the filter
    /// reduces to the identity. Callers may want to surface a warning.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// y_i = Σ_j w_ij x_j / Σ_j w_ij
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nx * self.ny);
        let mut out = vec![0.0; x.len()];
        for e in 0..x.len() {
            let (ex, ey) = ((e % self.nx) as isize, (e / self.nx) as isize);
            let mut acc = 0.0;
            for &(dex, dey, w) in &self.stencil {
                let (jx, jy) = (ex + dex, ey + dey);
                if jx >= 0 && jx < self.nx as isize && jy >= 0 && jy < self.ny as isize {
                    acc += w * x[jy as usize * self.nx + jx as usize];
                }
            }
            out[e] = acc * self.row_scale[e];
        }
        out
    }

    /// Transpose action s ↦ Wᵀs (with W the row-normalized filter matrix),
    /// used to chain sensitivities from filtered back to raw densities.
    pub fn apply_transpose(&self, s: &[f64]) -> Vec<f64> {
        debug_assert_eq!(s.len(), self.nx * self.ny);
        let mut out = vec![0.0; s.len()];
        for e in 0..s.len() {
            let (ex, ey) = ((e % self.nx) as isize, (e / self.nx) as isize);
            let scaled = s[e] * self.row_scale[e];
            for &(dex, dey, w) in &self.stencil {
                let (jx, jy) = (ex + dex, ey + dey);
                if jx >= 0 && jx < self.nx as isize && jy >= 0 && jy < self.ny as isize {
                    out[jy as usize * self.nx + jx as usize] += w * scaled;
                }
            }
        }
        out
    }
}

/// Filters a density field with hat weights of the given radius.
pub fn density_filter(gamma: &DensityField, r_f: f64) -> DensityField {
    let filter = DensityFilter::new(gamma.nx, gamma.ny, gamma.spacing, r_f);
    DensityField {
        values: filter.apply(&gamma.values),
        ..gamma.clone()
    }
}

/// Smoothed Heaviside projection: sharpness β, threshold η.
///
/// γ̂ = (tanh(βη) + tanh(β(γ̃ − η))) / (tanh(βη) + tanh(β(1 − η)))
pub fn heaviside_project(gamma_tilde: &DensityField, beta: f64, eta: f64) -> DensityField {
    DensityField {
        values: gamma_tilde
            .values
            .iter()
            .map(|&v| heaviside_value(v, beta, eta))
            .collect(),
        ..gamma_tilde.clone()
    }
}

pub fn heaviside_value(v: f64, beta: f64, eta: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    ((beta * eta).tanh() + (beta * (v - eta)).tanh()) / denom
}

/// dγ̂/dγ̃ of the projection above.
pub fn heaviside_derivative(v: f64, beta: f64, eta: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let t = (beta * (v - eta)).tanh();
    beta * (1.0 - t * t) / denom
}
