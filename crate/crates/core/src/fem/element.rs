//! 4-node bilinear quadrilateral, plane stress, 2×2 Gauss quadrature.
//!
//! Local node order is counterclockwise from the lower-left corner:
//! (-1,-1), (1,-1), (1,1), (-1,1) in natural coordinates.

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

const GAUSS: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// 2×2 Gauss points, all with weight 1.
pub const GAUSS_POINTS: [(f64, f64); 4] = [
    (-GAUSS, -GAUSS),
    (GAUSS, -GAUSS),
    (GAUSS, GAUSS),
    (-GAUSS, GAUSS),
];

/// Plane-stress constitutive matrix for modulus `e` and Poisson ratio `nu`.
pub fn constitutive(e: f64, nu: f64) -> [[f64; 3]; 3] {
    let c = e / (1.0 - nu * nu);
    [
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * (1.0 - nu) / 2.0],
    ]
}

fn shape_derivatives(xi: f64, eta: f64) -> [(f64, f64); 4] {
    [
        (-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)),
        (0.25 * (1.0 - eta), -0.25 * (1.0 + xi)),
        (0.25 * (1.0 + eta), 0.25 * (1.0 + xi)),
        (-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)),
    ]
}

/// Strain-displacement matrix B (3×8) and Jacobian determinant at (ξ, η).
pub fn b_matrix(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> ([[f64; 8]; 3], f64) {
    let dn = shape_derivatives(xi, eta);

    let mut j = [[0.0; 2]; 2];
    for i in 0..4 {
        j[0][0] += dn[i].0 * coords[i][0];
        j[0][1] += dn[i].0 * coords[i][1];
        j[1][0] += dn[i].1 * coords[i][0];
        j[1][1] += dn[i].1 * coords[i][1];
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];

    let mut b = [[0.0; 8]; 3];
    for i in 0..4 {
        let dx = inv[0][0] * dn[i].0 + inv[0][1] * dn[i].1;
        let dy = inv[1][0] * dn[i].0 + inv[1][1] * dn[i].1;
        b[0][2 * i] = dx;
        b[1][2 * i + 1] = dy;
        b[2][2 * i] = dy;
        b[2][2 * i + 1] = dx;
    }
    (b, det)
}

/// Element stiffness k = t ∫ Bᵀ D B dA for modulus `e`, thickness `t`.
pub fn quad4_stiffness(coords: &[[f64; 2]; 4], e: f64, t: f64, nu: f64) -> [[f64; 8]; 8] {
    let d = constitutive(e, nu);
    let mut k = [[0.0; 8]; 8];
    for &(xi, eta) in &GAUSS_POINTS {
        let (b, det) = b_matrix(coords, xi, eta);
        // db = D·B (3×8)
        let mut db = [[0.0; 8]; 3];
        for r in 0..3 {
            for c in 0..8 {
                db[r][c] = d[r][0] * b[0][c] + d[r][1] * b[1][c] + d[r][2] * b[2][c];
            }
        }
        let w = t * det; // Gauss weight is 1
        for r in 0..8 {
            for c in 0..8 {
                k[r][c] += w * (b[0][r] * db[0][c] + b[1][r] * db[1][c] + b[2][r] * db[2][c]);
            }
        }
    }
    k
}

/// Linear map S = D·B from element displacements to centroid stress, so
/// [σx, σy, τxy] = S·u_e. Exposed separately because stress sensitivities
/// need the operator itself, not just its action.
pub fn centroid_stress_operator(coords: &[[f64; 2]; 4], e: f64, nu: f64) -> [[f64; 8]; 3] {
    let (b, _) = b_matrix(coords, 0.0, 0.0);
    let d = constitutive(e, nu);
    let mut s = [[0.0; 8]; 3];
    for r in 0..3 {
        for c in 0..8 {
            for k in 0..3 {
                s[r][c] += d[r][k] * b[k][c];
            }
        }
    }
    s
}

/// In-plane stress [σx, σy, τxy] at the element centroid.
pub fn centroid_stress(coords: &[[f64; 2]; 4], u_e: &[f64; 8], e: f64, nu: f64) -> [f64; 3] {
    let s = centroid_stress_operator(coords, e, nu);
    let mut sigma = [0.0; 3];
    for r in 0..3 {
        for c in 0..8 {
            sigma[r] += s[r][c] * u_e[c];
        }
    }
    sigma
}

/// Von Mises stress for a plane-stress state [σx, σy, τxy].
pub fn von_mises(sigma: &[f64; 3]) -> f64 {
    let [sx, sy, txy] = *sigma;
    (sx * sx - sx * sy + sy * sy + 3.0 * txy * txy).max(0.0).sqrt()
}

/// Strain energy density uᵀ k u for one element (used by sensitivities).
pub fn element_energy(k: &[[f64; 8]; 8], u_e: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for r in 0..8 {
        let mut row = 0.0;
        for c in 0..8 {
            row += k[r][c] * u_e[c];
        }
        acc += u_e[r] * row;
    }
    acc
}

/// k·u for one element.
pub fn element_matvec(k: &[[f64; 8]; 8], u_e: &[f64; 8]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for r in 0..8 {
        for c in 0..8 {
            out[r] += k[r][c] * u_e[c];
        }
    }
    out
}

/// Rectangle corner coordinates for an axis-aligned dx×dy element at the origin.
pub fn rect_coords(dx: f64, dy: f64) -> [[f64; 2]; 4] {
    [[0.0, 0.0], [dx, 0.0], [dx, dy], [0.0, dy]]
}
