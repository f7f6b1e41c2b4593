//! Closed-form and classical-beam oracles for the FEM layer.

use mftd_core::fem::{
    assemble_stiffness, compliance, element_von_mises, solve_static, FemProblem, GridProblem,
    QuadMesh, SolverKind, StaticSolver,
};

/// Uniaxial stretch of a single element with ν = 0 has an exact bilinear
/// solution: unit traction produces unit strain and zero transverse motion.
#[test]
fn single_element_uniaxial_stretch_is_exact() {
    let mesh = QuadMesh::new(1, 1, 1.0, 1.0);
    let n00 = mesh.node_id(0, 0);
    let n01 = mesh.node_id(0, 1);
    let n10 = mesh.node_id(1, 0);
    let n11 = mesh.node_id(1, 1);
    let mut loads = vec![0.0; mesh.dof_count()];
    loads[2 * n10] = 0.5;
    loads[2 * n11] = 0.5;
    let problem = FemProblem {
        mesh,
        modulus: vec![1.0],
        thickness: vec![1.0],
        nu: 0.0,
        loads,
        fixed_dofs: vec![2 * n00, 2 * n00 + 1, 2 * n01],
    };
    let sol = problem.solve().unwrap();
    assert!((sol.u[2 * n10] - 1.0).abs() < 1e-12, "right-edge x displacement");
    assert!((sol.u[2 * n11] - 1.0).abs() < 1e-12);
    assert!(sol.u[2 * n10 + 1].abs() < 1e-12, "no transverse motion at nu = 0");
    assert!(sol.u[2 * n01 + 1].abs() < 1e-12);
    assert!((sol.von_mises[0] - 1.0).abs() < 1e-12);
    assert!((sol.compliance - 1.0).abs() < 1e-12);
}

/// Patch test: an affine displacement field prescribed on the whole boundary
/// must be reproduced exactly in the interior, with constant stress.
#[test]
fn patch_test_reproduces_affine_field() {
    let mesh = QuadMesh::new(4, 3, 0.23, 0.31);
    let nu = 0.3;
    let n_elm = mesh.element_count();
    let problem = FemProblem {
        mesh: mesh.clone(),
        modulus: vec![1.7; n_elm],
        thickness: vec![0.9; n_elm],
        nu,
        loads: vec![0.0; mesh.dof_count()],
        fixed_dofs: vec![],
    };
    // u = [0.3 + 0.1x + 0.05y, -0.2 + 0.04x - 0.08y]
    let exact = |x: f64, y: f64| (0.3 + 0.1 * x + 0.05 * y, -0.2 + 0.04 * x - 0.08 * y);

    let mut boundary = Vec::new();
    for node in 0..mesh.node_count() {
        let ix = node / (mesh.ny + 1);
        let iy = node % (mesh.ny + 1);
        if ix == 0 || ix == mesh.nx || iy == 0 || iy == mesh.ny {
            boundary.push(node);
        }
    }
    let mut g_ext = vec![0.0; mesh.dof_count()];
    let mut fixed = Vec::new();
    for &node in &boundary {
        let (x, y) = mesh.node_position(node);
        let (ux, uy) = exact(x, y);
        g_ext[2 * node] = ux;
        g_ext[2 * node + 1] = uy;
        fixed.push(2 * node);
        fixed.push(2 * node + 1);
    }

    let k = assemble_stiffness(&problem);
    // Interior equations: K_ii u_i = -K_ib g. solve_static zeroes the fixed
    // entries of the right-hand side, which is exactly that reduced system.
    let kg = k.matvec(&g_ext);
    let rhs: Vec<f64> = kg.iter().map(|v| -v).collect();
    let w = solve_static(&k, &rhs, &fixed).unwrap();
    let u: Vec<f64> = w.iter().zip(&g_ext).map(|(a, b)| a + b).collect();

    for node in 0..mesh.node_count() {
        let (x, y) = mesh.node_position(node);
        let (ux, uy) = exact(x, y);
        assert!((u[2 * node] - ux).abs() < 1e-10, "node {node} x");
        assert!((u[2 * node + 1] - uy).abs() < 1e-10, "node {node} y");
    }

    // Constant strain everywhere: every element sees the same von Mises stress.
    let s0 = element_von_mises(&u, &problem, 0);
    assert!(s0 > 0.1);
    for e in 1..n_elm {
        let se = element_von_mises(&u, &problem, e);
        assert!((se - s0).abs() < 1e-10 * s0, "element {e}: {se} vs {s0}");
    }
}

/// Slender cantilever against Timoshenko beam theory.
///
/// 64×8 grid spanning 1.0×0.125, E = 1, ν = 0.3, t = 1, unit end load:
/// δ = PL³/(3EI) + PL/(κGA) with κ = 5/6 gives 2048.0 + 24.96 = 2072.96.
/// The work-equivalent FEM deflection FᵀU must land within 5%.
#[test]
fn cantilever_beam_matches_timoshenko_within_5_percent() {
    let grid = GridProblem::cantilever_tip_loaded(64, 8);
    let n = grid.mesh.element_count();
    let problem = grid.fem_problem(vec![1.0; n], vec![1.0; n]);
    let sol = problem.solve().unwrap();
    let delta_fem: f64 = problem
        .loads
        .iter()
        .zip(&sol.u)
        .map(|(f, u)| f * u)
        .sum::<f64>()
        .abs();
    let delta_beam = 2072.96;
    let rel = (delta_fem - delta_beam).abs() / delta_beam;
    assert!(
        rel < 0.05,
        "beam deflection {delta_fem:.2} vs theory {delta_beam:.2} (rel {rel:.4})"
    );
}

/// The iterative backend must agree with the direct factorization.
#[test]
fn iterative_and_direct_solutions_agree() {
    let grid = GridProblem::cantilever(16, 16);
    let n = grid.mesh.element_count();
    // Heterogeneous stiffness with 1000:1 contrast in a checkered pattern.
    let modulus: Vec<f64> = (0..n)
        .map(|e| if (e % 7) < 3 { 1.0 } else { 1e-3 })
        .collect();
    let problem = grid.fem_problem(modulus, vec![1.0; n]);
    let k = assemble_stiffness(&problem);
    let direct = StaticSolver::with_kind(&k, &problem.fixed_dofs, SolverKind::Direct)
        .unwrap()
        .solve(&problem.loads)
        .unwrap();
    let iterative = StaticSolver::with_kind(&k, &problem.fixed_dofs, SolverKind::Iterative)
        .unwrap()
        .solve(&problem.loads)
        .unwrap();
    let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in direct.iter().zip(&iterative) {
        assert!((a - b).abs() < 1e-7 * scale);
    }
    let c_direct = compliance(&direct, &k);
    let c_iter = compliance(&iterative, &k);
    assert!((c_direct - c_iter).abs() < 1e-8 * c_direct.abs());
}

/// A factored solver reused across right-hand sides must match one-shot solves.
#[test]
fn solver_reuse_matches_fresh_solves() {
    let grid = GridProblem::cantilever(8, 8);
    let n = grid.mesh.element_count();
    let problem = grid.fem_problem(vec![1.0; n], vec![1.0; n]);
    let k = assemble_stiffness(&problem);
    let solver = StaticSolver::new(&k, &problem.fixed_dofs).unwrap();
    let u1 = solver.solve(&problem.loads).unwrap();
    let mut other = vec![0.0; problem.loads.len()];
    other[2 * grid.mesh.node_id(8, 4)] = 1.0;
    let u2 = solver.solve(&other).unwrap();
    let f1 = solve_static(&k, &problem.loads, &problem.fixed_dofs).unwrap();
    let f2 = solve_static(&k, &other, &problem.fixed_dofs).unwrap();
    assert_eq!(u1, f1);
    assert_eq!(u2, f2);
}
