//! Design-domain mapping and field transport.
//!
//! Curved quad-patch meshes are flattened onto the unit square with a
//! harmonic map (cotangent-weighted Laplace solve with arc-length boundary
//! data), scalar fields move between the mesh and a regular cell grid by
//! bilinear interpolation in the flattened coordinates, and grid fields can
//! be smoothed by a screened-Poisson filter with zero-flux boundaries.

use alloc::vec;
use alloc::vec::Vec;

use crate::fem::BandedSymMatrix;
use crate::lf::DensityField;

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

/// Relative tolerance for the interior Laplace solve.
const LAPLACE_TOLERANCE: f64 = 1e-13;
/// Slack allowed when checking flattened coordinates against [0, 1].
const UV_SLACK: f64 = 1e-9;

/// A quadrilateral surface patch with its four oriented boundary chains.
///
/// The chains run in order: side 1 is mapped to the left edge of the unit
/// square, side 2 to the bottom, side 3 to the right, and side 4 to the top.
/// Their endpoints must glue into one closed loop: chain 1 and chain 2 start
/// at the same corner, chain 1 ends where chain 4 starts, chain 2 ends where
/// chain 3 starts, and chains 3 and 4 share their final corner.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfacePatchMesh {
    /// Node positions in 3-D length units.
    pub positions: Vec<[f64; 3]>,
    /// Counter-clockwise quads indexing into `positions`.
    pub quads: Vec<[usize; 4]>,
    /// Boundary node chains for sides 1-4.
    pub boundaries: [Vec<usize>; 4],
}

/// Flattened coordinates per mesh node, inside the unit square.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UvField {
    pub uv: Vec<[f64; 2]>,
}

/// Errors raised by mapping and resampling.
#[derive(Clone, Debug, PartialEq)]
pub enum MappingError {
    /// Structural defect: bad indices, unused nodes, or non-manifold edges.
    InvalidMesh(&'static str),
    /// A boundary chain is too short or has zero length.
    DegenerateBoundary { side: usize },
    /// The patch is not a topological disk.
    NonDiskTopology { euler_characteristic: i64 },
    /// A flattened coordinate strays outside the unit square.
    UvOutOfRange { node: usize },
    /// The interior solve failed to reach tolerance.
    SolveFailure(&'static str),
    /// A field buffer has the wrong length.
    ShapeMismatch { expected: usize, got: usize },
}

impl core::fmt::Display for MappingError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MappingError::InvalidMesh(what) => write!(f, "invalid mesh: {what}"),
            MappingError::DegenerateBoundary { side } => {
                write!(f, "boundary chain {side} is degenerate")
            }
            MappingError::NonDiskTopology { euler_characteristic } => write!(
                f,
                "patch is not a topological disk (Euler characteristic {euler_characteristic})"
            ),
            MappingError::UvOutOfRange { node } => {
                write!(f, "flattened coordinate of node {node} is outside the unit square")
            }
            MappingError::SolveFailure(what) => write!(f, "interior solve failed: {what}"),
            MappingError::ShapeMismatch { expected, got } => {
                write!(f, "field has {got} values, expected {expected}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MappingError {}

impl SurfacePatchMesh {
    /// Number of mesh nodes.
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    /// Triangles obtained by splitting every quad along its 0-2 diagonal.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut tris = Vec::with_capacity(2 * self.quads.len());
        for q in &self.quads {
            tris.push([q[0], q[1], q[2]]);
            tris.push([q[0], q[2], q[3]]);
        }
        tris
    }

    /// True for nodes lying on any boundary chain.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.node_count()];
        for chain in &self.boundaries {
            for &i in chain {
                mask[i] = true;
            }
        }
        mask
    }

    /// Checks the structural invariants: index bounds, manifold edges, one
    /// closed boundary loop covered by the four chains, disk topology, and
    /// non-degenerate chains.
    pub fn validate(&self) -> Result<(), MappingError> {
        let n = self.node_count();
        if n == 0 || self.quads.is_empty() {
            return Err(MappingError::InvalidMesh("mesh is empty"));
        }
        let mut referenced = vec![false; n];
        for q in &self.quads {
            for a in 0..4 {
                if q[a] >= n {
                    return Err(MappingError::InvalidMesh("quad index out of range"));
                }
                referenced[q[a]] = true;
                if q[a] == q[(a + 1) % 4] {
                    return Err(MappingError::InvalidMesh("quad repeats a node"));
                }
            }
        }
        if !referenced.iter().all(|r| *r) {
            return Err(MappingError::InvalidMesh("mesh has unreferenced nodes"));
        }

        // Face counts per undirected perimeter edge.
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(4 * self.quads.len());
        for q in &self.quads {
            for a in 0..4 {
                let (i, j) = (q[a], q[(a + 1) % 4]);
                edges.push((i.min(j), i.max(j)));
            }
        }
        edges.sort_unstable();
        let mut unique_edges = 0i64;
        let mut boundary_edges: Vec<(usize, usize)> = Vec::new();
        let mut k = 0;
        while k < edges.len() {
            let mut count = 1;
            while k + count < edges.len() && edges[k + count] == edges[k] {
                count += 1;
            }
            if count > 2 {
                return Err(MappingError::InvalidMesh("edge shared by more than two quads"));
            }
            if count == 1 {
                boundary_edges.push(edges[k]);
            }
            unique_edges += 1;
            k += count;
        }

        // Disk check via the Euler characteristic V - E + F = 1.
        let euler = n as i64 - unique_edges + self.quads.len() as i64;
        if euler != 1 {
            return Err(MappingError::NonDiskTopology { euler_characteristic: euler });
        }

        // Each chain must trace boundary edges and have positive length.
        let mut chain_edges: Vec<(usize, usize)> = Vec::new();
        for (side, chain) in self.boundaries.iter().enumerate() {
            if chain.len() < 2 {
                return Err(MappingError::DegenerateBoundary { side: side + 1 });
            }
            let mut length = 0.0;
            for pair in chain.windows(2) {
                let (i, j) = (pair[0], pair[1]);
                if i >= n || j >= n {
                    return Err(MappingError::InvalidMesh("boundary index out of range"));
                }
                chain_edges.push((i.min(j), i.max(j)));
                length += distance(self.positions[i], self.positions[j]);
            }
            if !(length > 0.0) {
                return Err(MappingError::DegenerateBoundary { side: side + 1 });
            }
        }
        chain_edges.sort_unstable();
        if chain_edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(MappingError::InvalidMesh("boundary chains overlap"));
        }
        if chain_edges != boundary_edges {
            return Err(MappingError::InvalidMesh(
                "boundary chains do not cover the mesh boundary exactly",
            ));
        }

        // Corner gluing into a single loop around the square.
        let [g1, g2, g3, g4] = &self.boundaries;
        let glued = g1[0] == g2[0]
            && *g1.last().unwrap() == g4[0]
            && *g2.last().unwrap() == g3[0]
            && *g3.last().unwrap() == *g4.last().unwrap();
        if !glued {
            return Err(MappingError::InvalidMesh("boundary chain corners do not glue"));
        }
        Ok(())
    }
}

impl UvField {
    /// Verifies every coordinate lies inside the unit square (tiny slack).
    pub fn validate_bounds(&self) -> Result<(), MappingError> {
        for (node, uv) in self.uv.iter().enumerate() {
            let inside = (-UV_SLACK..=1.0 + UV_SLACK).contains(&uv[0])
                && (-UV_SLACK..=1.0 + UV_SLACK).contains(&uv[1]);
            if !inside {
                return Err(MappingError::UvOutOfRange { node });
            }
        }
        Ok(())
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Cotangent edge weights of the triangulated mesh, as a per-node adjacency
/// list. The weight of edge (i, j) sums half-cotangents of the angles
/// opposite the edge, which makes the associated quadratic form the discrete
/// Dirichlet energy of piecewise-linear interpolation.
fn cotangent_weights(mesh: &SurfacePatchMesh) -> Vec<Vec<(usize, f64)>> {
    let n = mesh.node_count();
    let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let add = |weights: &mut Vec<Vec<(usize, f64)>>, i: usize, j: usize, w: f64| {
        for side in [(i, j), (j, i)] {
            let row = &mut weights[side.0];
            if let Some(entry) = row.iter_mut().find(|(k, _)| *k == side.1) {
                entry.1 += w;
            } else {
                row.push((side.1, w));
            }
        }
    };
    for tri in mesh.triangles() {
        for corner in 0..3 {
            let k = tri[corner];
            let i = tri[(corner + 1) % 3];
            let j = tri[(corner + 2) % 3];
            let pk = mesh.positions[k];
            let pi = mesh.positions[i];
            let pj = mesh.positions[j];
            let e1 = [pi[0] - pk[0], pi[1] - pk[1], pi[2] - pk[2]];
            let e2 = [pj[0] - pk[0], pj[1] - pk[1], pj[2] - pk[2]];
            let dot = e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2];
            let cx = e1[1] * e2[2] - e1[2] * e2[1];
            let cy = e1[2] * e2[0] - e1[0] * e2[2];
            let cz = e1[0] * e2[1] - e1[1] * e2[0];
            let cross = (cx * cx + cy * cy + cz * cz).sqrt().max(1e-300);
            add(&mut weights, i, j, 0.5 * dot / cross);
        }
    }
    weights
}

/// Arc-length-proportional boundary values on the unit square.
fn boundary_values(mesh: &SurfacePatchMesh) -> Vec<Option<[f64; 2]>> {
    let mut values: Vec<Option<[f64; 2]>> = vec![None; mesh.node_count()];
    for (side, chain) in mesh.boundaries.iter().enumerate() {
        let mut cumulative = vec![0.0; chain.len()];
        for k in 1..chain.len() {
            cumulative[k] = cumulative[k - 1]
                + distance(mesh.positions[chain[k - 1]], mesh.positions[chain[k]]);
        }
        let total = cumulative[chain.len() - 1];
        for (k, &node) in chain.iter().enumerate() {
            let t = cumulative[k] / total;
            let uv = match side {
                0 => [0.0, t],
                1 => [t, 0.0],
                2 => [1.0, t],
                _ => [t, 1.0],
            };
            values[node] = Some(uv);
        }
    }
    values
}

/// Flattens a curved quad patch onto the unit square.
///
/// Both flattened coordinates solve the cotangent-weighted Laplace equation
/// with Dirichlet data assigned by arc-length ratio along each boundary
/// chain, so the result minimizes the discrete Dirichlet energy over all
/// maps sharing those boundary values.
pub fn harmonic_map(mesh: &SurfacePatchMesh) -> Result<UvField, MappingError> {
    mesh.validate()?;
    let n = mesh.node_count();
    let weights = cotangent_weights(mesh);
    let fixed = boundary_values(mesh);

    let interior: Vec<usize> =
        (0..n).filter(|i| fixed[*i].is_none()).collect();
    let mut uv: Vec<[f64; 2]> = (0..n)
        .map(|i| fixed[i].unwrap_or([0.5, 0.5]))
        .collect();
    if interior.is_empty() {
        let field = UvField { uv };
        field.validate_bounds()?;
        return Ok(field);
    }

    let mut slot = vec![usize::MAX; n];
    for (s, &node) in interior.iter().enumerate() {
        slot[node] = s;
    }

    // Solve the reduced system L_II x = -L_IB x_B for each coordinate with
    // conjugate gradients; L restricted to the interior is positive definite
    // because the quadratic form is the (nonnegative) Dirichlet energy and
    // the mesh is connected to its boundary.
    for coord in 0..2 {
        let mut rhs = vec![0.0; interior.len()];
        for (s, &node) in interior.iter().enumerate() {
            for &(other, w) in &weights[node] {
                if let Some(bv) = fixed[other] {
                    rhs[s] += w * bv[coord];
                }
            }
        }
        let matvec = |x: &[f64], out: &mut [f64]| {
            for (s, &node) in interior.iter().enumerate() {
                let mut value = 0.0;
                let mut diag = 0.0;
                for &(other, w) in &weights[node] {
                    diag += w;
                    if slot[other] != usize::MAX {
                        value -= w * x[slot[other]];
                    }
                }
                out[s] = diag * x[s] + value;
            }
        };
        let solution = conjugate_gradient_dense(&matvec, &rhs, interior.len())?;
        for (s, &node) in interior.iter().enumerate() {
            uv[node][coord] = solution[s];
        }
    }

    let field = UvField { uv };
    field.validate_bounds()?;
    Ok(field)
}

/// Unpreconditioned conjugate gradients on a callback operator.
fn conjugate_gradient_dense(
    matvec: &dyn Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    n: usize,
) -> Result<Vec<f64>, MappingError> {
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let rhs_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return Ok(x);
    }
    let target = LAPLACE_TOLERANCE * rhs_norm;
    let mut rho = r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..20 * n.max(50) {
        if rho.sqrt() <= target {
            return Ok(x);
        }
        matvec(&p, &mut ap);
        let denominator = p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        if !(denominator > 0.0) {
            return Err(MappingError::SolveFailure("operator lost definiteness"));
        }
        let alpha = rho / denominator;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rho_next = r.iter().map(|v| v * v).sum::<f64>();
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rho.sqrt() <= target * 100.0 {
        Ok(x)
    } else {
        Err(MappingError::SolveFailure("conjugate gradients stalled"))
    }
}

/// Discrete Dirichlet energy of a flattened map over the mesh.
pub fn dirichlet_energy(mesh: &SurfacePatchMesh, field: &UvField) -> f64 {
    let weights = cotangent_weights(mesh);
    let mut energy = 0.0;
    for (i, row) in weights.iter().enumerate() {
        for &(j, w) in row {
            if j > i {
                let du = field.uv[i][0] - field.uv[j][0];
                let dv = field.uv[i][1] - field.uv[j][1];
                energy += 0.5 * w * (du * du + dv * dv);
            }
        }
    }
    energy
}

/// Bilinear interpolation inside a quad given its corner values.
fn bilinear(corners: [f64; 4], xi: f64, eta: f64) -> f64 {
    corners[0] * (1.0 - xi) * (1.0 - eta)
        + corners[1] * xi * (1.0 - eta)
        + corners[2] * xi * eta
        + corners[3] * (1.0 - xi) * eta
}

/// Inverts the bilinear map of a flattened quad at a query point.
///
/// Returns local coordinates when the Newton iteration converges and lands
/// inside the reference square (with tiny slack).
fn invert_bilinear(corners: [[f64; 2]; 4], p: [f64; 2]) -> Option<(f64, f64)> {
    let mut xi = 0.5;
    let mut eta = 0.5;
    for _ in 0..30 {
        let x = bilinear([corners[0][0], corners[1][0], corners[2][0], corners[3][0]], xi, eta);
        let y = bilinear([corners[0][1], corners[1][1], corners[2][1], corners[3][1]], xi, eta);
        let rx = x - p[0];
        let ry = y - p[1];
        if rx.abs() + ry.abs() < 1e-13 {
            break;
        }
        // Jacobian of the bilinear map.
        let dx_dxi = (corners[1][0] - corners[0][0]) * (1.0 - eta)
            + (corners[2][0] - corners[3][0]) * eta;
        let dx_deta = (corners[3][0] - corners[0][0]) * (1.0 - xi)
            + (corners[2][0] - corners[1][0]) * xi;
        let dy_dxi = (corners[1][1] - corners[0][1]) * (1.0 - eta)
            + (corners[2][1] - corners[3][1]) * eta;
        let dy_deta = (corners[3][1] - corners[0][1]) * (1.0 - xi)
            + (corners[2][1] - corners[1][1]) * xi;
        let det = dx_dxi * dy_deta - dx_deta * dy_dxi;
        if det.abs() < 1e-300 {
            return None;
        }
        xi -= (rx * dy_deta - ry * dx_deta) / det;
        eta -= (ry * dx_dxi - rx * dy_dxi) / det;
        xi = xi.clamp(-1.0, 2.0);
        eta = eta.clamp(-1.0, 2.0);
    }
    let slack = 1e-9;
    if (-slack..=1.0 + slack).contains(&xi) && (-slack..=1.0 + slack).contains(&eta) {
        Some((xi.clamp(0.0, 1.0), eta.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// Transfers a per-node mesh field onto a regular cell grid over the unit
/// square by sampling every cell center inside the flattened mesh.
///
/// Output values are clamped to [0, 1]. Cell centers that fall in the tiny
/// gaps between flattened quads are assigned from the nearest quad.
pub fn resample_to_grid(
    mesh: &SurfacePatchMesh,
    field: &UvField,
    node_values: &[f64],
    nx: usize,
    ny: usize,
) -> Result<DensityField, MappingError> {
    if field.uv.len() != mesh.node_count() {
        return Err(MappingError::ShapeMismatch {
            expected: mesh.node_count(),
            got: field.uv.len(),
        });
    }
    if node_values.len() != mesh.node_count() {
        return Err(MappingError::ShapeMismatch {
            expected: mesh.node_count(),
            got: node_values.len(),
        });
    }
    field.validate_bounds()?;

    // Flattened corner cache with bounding boxes for point location.
    struct QuadPatch {
        corners: [[f64; 2]; 4],
        values: [f64; 4],
        bbox: [f64; 4],
    }
    let patches: Vec<QuadPatch> = mesh
        .quads
        .iter()
        .map(|q| {
            let corners = [field.uv[q[0]], field.uv[q[1]], field.uv[q[2]], field.uv[q[3]]];
            let values = [
                node_values[q[0]],
                node_values[q[1]],
                node_values[q[2]],
                node_values[q[3]],
            ];
            let bbox = [
                corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min),
                corners.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max),
                corners.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min),
                corners.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max),
            ];
            QuadPatch { corners, values, bbox }
        })
        .collect();

    let mut values = vec![0.0; nx * ny];
    for ey in 0..ny {
        for ex in 0..nx {
            let p = [(ex as f64 + 0.5) / nx as f64, (ey as f64 + 0.5) / ny as f64];
            let mut sample = None;
            for patch in &patches {
                let margin = 1e-9;
                if p[0] < patch.bbox[0] - margin
                    || p[0] > patch.bbox[1] + margin
                    || p[1] < patch.bbox[2] - margin
                    || p[1] > patch.bbox[3] + margin
                {
                    continue;
                }
                if let Some((xi, eta)) = invert_bilinear(patch.corners, p) {
                    sample = Some(bilinear(patch.values, xi, eta));
                    break;
                }
            }
            let value = sample.unwrap_or_else(|| {
                // Nearest flattened quad centroid, clamped local coordinates.
                let mut best = (f64::INFINITY, 0usize);
                for (k, patch) in patches.iter().enumerate() {
                    let cx = patch.corners.iter().map(|c| c[0]).sum::<f64>() / 4.0;
                    let cy = patch.corners.iter().map(|c| c[1]).sum::<f64>() / 4.0;
                    let d = (cx - p[0]) * (cx - p[0]) + (cy - p[1]) * (cy - p[1]);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                let patch = &patches[best.1];
                let mean = patch.values.iter().sum::<f64>() / 4.0;
                mean
            });
            values[ey * nx + ex] = value.clamp(0.0, 1.0);
        }
    }
    Ok(DensityField::new(values, nx, ny, 1.0 / nx as f64))
}

/// Samples a cell grid at every mesh node's flattened coordinate.
///
/// Interpolation is bilinear between cell centers with linear extrapolation
/// in the half-cell border band, so fields linear in the flattened
/// coordinates are reproduced exactly; results are clamped to [0, 1].
pub fn resample_from_grid(
    grid: &DensityField,
    field: &UvField,
) -> Result<Vec<f64>, MappingError> {
    field.validate_bounds()?;
    let (nx, ny) = (grid.nx, grid.ny);
    if nx < 2 || ny < 2 {
        return Err(MappingError::ShapeMismatch { expected: 4, got: nx * ny });
    }
    let mut out = Vec::with_capacity(field.uv.len());
    for uv in &field.uv {
        let gx = uv[0] * nx as f64 - 0.5;
        let gy = uv[1] * ny as f64 - 0.5;
        let i0 = (gx.floor() as isize).clamp(0, nx as isize - 2) as usize;
        let j0 = (gy.floor() as isize).clamp(0, ny as isize - 2) as usize;
        let tx = gx - i0 as f64;
        let ty = gy - j0 as f64;
        let v00 = grid.values[j0 * nx + i0];
        let v10 = grid.values[j0 * nx + i0 + 1];
        let v01 = grid.values[(j0 + 1) * nx + i0];
        let v11 = grid.values[(j0 + 1) * nx + i0 + 1];
        let value = v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty;
        out.push(value.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Screened smoothing of a cell grid: solves
/// `-r^2 lap(smoothed) + smoothed = field` with zero-flux boundaries.
///
/// The finite-volume operator telescopes fluxes, so the total mass is
/// conserved, and its M-matrix structure keeps the output within the input's
/// range (then clamped to [0, 1]). A zero radius returns the field as-is.
pub fn helmholtz_smooth(field: &DensityField, r: f64) -> DensityField {
    assert!(r >= 0.0, "radius must be nonnegative");
    if r == 0.0 {
        return field.clone();
    }
    let (nx, ny) = (field.nx, field.ny);
    let h = field.spacing;
    let k = r * r / (h * h);
    let n = nx * ny;
    let mut matrix = BandedSymMatrix::zeros(n, nx + 1);
    for ey in 0..ny {
        for ex in 0..nx {
            let c = ey * nx + ex;
            let mut neighbors = 0.0;
            if ex > 0 {
                matrix.add(c, c - 1, -k);
                neighbors += 1.0;
            }
            if ex + 1 < nx {
                neighbors += 1.0;
            }
            if ey > 0 {
                matrix.add(c, c - nx, -k);
                neighbors += 1.0;
            }
            if ey + 1 < ny {
                neighbors += 1.0;
            }
            matrix.add(c, c, 1.0 + k * neighbors);
        }
    }
    let factor = matrix
        .cholesky()
        .expect("screened smoothing operator is positive definite");
    let mut smoothed = factor.solve(&field.values);
    for v in smoothed.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    DensityField::new(smoothed, nx, ny, h)
}
