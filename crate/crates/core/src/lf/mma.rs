//! Method-of-moving-asymptotes design update.
//!
//! Each call builds the separable convex approximation around the current
//! iterate (asymptotes adapted from the oscillation history) and solves it
//! with a primal-dual interior-point method driven to a 1e-7 KKT residual.
//! Box bounds are fixed to [0,1] (density variables).

use alloc::vec;
use alloc::vec::Vec;

use super::LfError;

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

const X_MIN: f64 = 0.0;
const X_MAX: f64 = 1.0;
const ASY_INIT: f64 = 0.5;
const ASY_INCR: f64 = 1.2;
const ASY_DECR: f64 = 0.7;
const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;
/// Interior-point barrier is reduced down to 1e-7, so the final pass targets
/// a 0.9e-7 residual.
const EPSI_MIN: f64 = 1e-8;
/// Penalty weight making the elastic constraint variables prohibitively
/// expensive, so constraints are met whenever feasible.
const CONSTRAINT_PENALTY: f64 = 1000.0;

/// A function value with its gradient over the design variables.
#[derive(Clone, Debug)]
pub struct FunctionEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Persistent optimizer state between updates.
#[derive(Clone, Debug)]
pub struct MmaState {
    iteration: usize,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
    /// Dual multipliers of the last subproblem (one per constraint).
    pub lambda: Vec<f64>,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        Self {
            iteration: 0,
            xold1: vec![0.0; n],
            xold2: vec![0.0; n],
            low: vec![X_MIN; n],
            upp: vec![X_MAX; n],
            lambda: Vec::new(),
        }
    }

    pub fn asymptotes(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.upp)
    }
}

/// One design update. Returns the new iterate; guarantees box bounds, the
/// move limit, and asymptotes strictly bracketing the new point.
pub fn mma_update(
    state: &mut MmaState,
    x: &[f64],
    objective: &FunctionEval,
    constraints: &[FunctionEval],
    move_limit: f64,
) -> Result<Vec<f64>, LfError> {
    let n = x.len();
    let m = constraints.len();
    assert!(m >= 1, "at least one constraint is required");
    assert_eq!(objective.gradient.len(), n);
    for c in constraints {
        assert_eq!(c.gradient.len(), n);
    }
    assert!(move_limit > 0.0);
    state.iteration += 1;
    let range = X_MAX - X_MIN;

    // Asymptote adaptation: expand while the variable moves monotonically,
    // contract when it oscillates.
    if state.iteration <= 2 {
        for j in 0..n {
            state.low[j] = x[j] - ASY_INIT * range;
            state.upp[j] = x[j] + ASY_INIT * range;
        }
    } else {
        for j in 0..n {
            let trend = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
            let factor = if trend > 0.0 {
                ASY_INCR
            } else if trend < 0.0 {
                ASY_DECR
            } else {
                1.0
            };
            state.low[j] = x[j] - factor * (state.xold1[j] - state.low[j]);
            state.upp[j] = x[j] + factor * (state.upp[j] - state.xold1[j]);
            state.low[j] = state.low[j].clamp(x[j] - 10.0 * range, x[j] - 0.01 * range);
            state.upp[j] = state.upp[j].clamp(x[j] + 0.01 * range, x[j] + 10.0 * range);
        }
    }

    // Inner bounds: asymptote margin, move limit, and the box.
    let mut alfa = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for j in 0..n {
        alfa[j] = (state.low[j] + ALBEFA * (x[j] - state.low[j]))
            .max(x[j] - move_limit * range)
            .max(X_MIN);
        beta[j] = (state.upp[j] - ALBEFA * (state.upp[j] - x[j]))
            .min(x[j] + move_limit * range)
            .min(X_MAX);
    }

    // Separable approximation coefficients.
    let xmami = range.max(1e-5);
    let mut p0 = vec![0.0; n];
    let mut q0 = vec![0.0; n];
    for j in 0..n {
        let ux = state.upp[j] - x[j];
        let xl = x[j] - state.low[j];
        let dfp = objective.gradient[j].max(0.0);
        let dfm = (-objective.gradient[j]).max(0.0);
        p0[j] = (1.001 * dfp + 0.001 * dfm + RAA0 / xmami) * ux * ux;
        q0[j] = (0.001 * dfp + 1.001 * dfm + RAA0 / xmami) * xl * xl;
    }
    let mut pc = vec![0.0; m * n];
    let mut qc = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    for (i, cons) in constraints.iter().enumerate() {
        let mut gvec = 0.0;
        for j in 0..n {
            let ux = state.upp[j] - x[j];
            let xl = x[j] - state.low[j];
            let dgp = cons.gradient[j].max(0.0);
            let dgm = (-cons.gradient[j]).max(0.0);
            let p = (1.001 * dgp + 0.001 * dgm + RAA0 / xmami) * ux * ux;
            let q = (0.001 * dgp + 1.001 * dgm + RAA0 / xmami) * xl * xl;
            pc[i * n + j] = p;
            qc[i * n + j] = q;
            gvec += p / ux + q / xl;
        }
        b[i] = gvec - cons.value;
    }

    let sub = Subproblem {
        n,
        m,
        low: &state.low,
        upp: &state.upp,
        alfa: &alfa,
        beta: &beta,
        p0: &p0,
        q0: &q0,
        pc: &pc,
        qc: &qc,
        b: &b,
        a0: 1.0,
        a: vec![0.0; m],
        c: vec![CONSTRAINT_PENALTY; m],
        d: vec![1.0; m],
    };
    let (x_new, lambda, residual) = sub.solve();
    if !(residual <= 1e-7) {
        return Err(LfError::MmaFailure { residual });
    }

    state.xold2 = core::mem::replace(&mut state.xold1, x.to_vec());
    if state.iteration == 1 {
        state.xold2 = x.to_vec();
    }
    state.lambda = lambda;
    Ok(x_new)
}

/// min Σ_j(p0_j/(u_j−x_j) + q0_j/(x_j−l_j)) + a0·z + Σ_i(c_i·y_i + ½d_i·y_i²)
/// s.t. Σ_j(P_ij/(u_j−x_j) + Q_ij/(x_j−l_j)) − a_i·z − y_i ≤ b_i,
///      α ≤ x ≤ β, y ≥ 0, z ≥ 0.
struct Subproblem<'a> {
    n: usize,
    m: usize,
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    pc: &'a [f64],
    qc: &'a [f64],
    b: &'a [f64],
    a0: f64,
    a: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Subproblem<'_> {
    fn solve(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let (n, m) = (self.n, self.m);
        let mut pt = Point {
            x: (0..n).map(|j| 0.5 * (self.alfa[j] + self.beta[j])).collect(),
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            xsi: (0..n).map(|_| 1.0).collect(),
            eta: (0..n).map(|_| 1.0).collect(),
            mu: self.c.iter().map(|&c| (0.5 * c).max(1.0)).collect(),
            zet: 1.0,
            s: vec![1.0; m],
        };
        for j in 0..n {
            pt.xsi[j] = (1.0 / (pt.x[j] - self.alfa[j])).max(1.0);
            pt.eta[j] = (1.0 / (self.beta[j] - pt.x[j])).max(1.0);
        }

        let mut resmax = f64::INFINITY;
        let mut epsi = 1.0;
        while epsi > EPSI_MIN {
            let (mut norm, max0) = self.residual(&pt, epsi);
            resmax = max0;
            let mut inner = 0;
            while resmax > 0.9 * epsi && inner < 200 {
                inner += 1;
                let dir = self.newton_direction(&pt, epsi);
                let steg = step_length(&pt, &dir, self.alfa, self.beta);
                // Backtrack until the residual norm does not increase.
                let base = pt.clone();
                let mut t = steg;
                for attempt in 0..50 {
                    pt = advance(&base, &dir, t);
                    let (new_norm, new_max) = self.residual(&pt, epsi);
                    if new_norm <= norm || attempt == 49 {
                        norm = new_norm;
                        resmax = new_max;
                        break;
                    }
                    t *= 0.5;
                }
            }
            epsi *= 0.1;
        }
        (pt.x.clone(), pt.lam.clone(), resmax)
    }

    fn psi_terms(&self, pt: &Point) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut plam = self.p0.to_vec();
        let mut qlam = self.q0.to_vec();
        for i in 0..m {
            for j in 0..n {
                plam[j] += pt.lam[i] * self.pc[i * n + j];
                qlam[j] += pt.lam[i] * self.qc[i * n + j];
            }
        }
        let mut gvec = vec![0.0; m];
        for i in 0..m {
            for j in 0..n {
                gvec[i] += self.pc[i * n + j] / (self.upp[j] - pt.x[j])
                    + self.qc[i * n + j] / (pt.x[j] - self.low[j]);
            }
        }
        (plam, qlam, gvec)
    }

    fn residual(&self, pt: &Point, epsi: f64) -> (f64, f64) {
        let (n, m) = (self.n, self.m);
        let (plam, qlam, gvec) = self.psi_terms(pt);
        let mut sq = 0.0;
        let mut mx = 0.0f64;
        let mut push = |v: f64| {
            sq += v * v;
            mx = mx.max(v.abs());
        };
        for j in 0..n {
            let ux = self.upp[j] - pt.x[j];
            let xl = pt.x[j] - self.low[j];
            push(plam[j] / (ux * ux) - qlam[j] / (xl * xl) - pt.xsi[j] + pt.eta[j]);
        }
        for i in 0..m {
            push(self.c[i] + self.d[i] * pt.y[i] - pt.mu[i] - pt.lam[i]);
        }
        {
            let adot: f64 = self.a.iter().zip(&pt.lam).map(|(a, l)| a * l).sum();
            push(self.a0 - pt.zet - adot);
        }
        for i in 0..m {
            push(gvec[i] - self.a[i] * pt.z - pt.y[i] + pt.s[i] - self.b[i]);
        }
        for j in 0..n {
            push(pt.xsi[j] * (pt.x[j] - self.alfa[j]) - epsi);
            push(pt.eta[j] * (self.beta[j] - pt.x[j]) - epsi);
        }
        for i in 0..m {
            push(pt.mu[i] * pt.y[i] - epsi);
            push(pt.lam[i] * pt.s[i] - epsi);
        }
        push(pt.zet * pt.z - epsi);
        (sq.sqrt(), mx)
    }

    fn newton_direction(&self, pt: &Point, epsi: f64) -> Point {
        let (n, m) = (self.n, self.m);
        let (plam, qlam, gvec) = self.psi_terms(pt);

        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        let mut gg = vec![0.0; m * n];
        for j in 0..n {
            let ux = self.upp[j] - pt.x[j];
            let xl = pt.x[j] - self.low[j];
            let xa = pt.x[j] - self.alfa[j];
            let bx = self.beta[j] - pt.x[j];
            delx[j] = plam[j] / (ux * ux) - qlam[j] / (xl * xl) - epsi / xa + epsi / bx;
            diagx[j] = 2.0 * (plam[j] / (ux * ux * ux) + qlam[j] / (xl * xl * xl))
                + pt.xsi[j] / xa
                + pt.eta[j] / bx;
            for i in 0..m {
                gg[i * n + j] =
                    self.pc[i * n + j] / (ux * ux) - self.qc[i * n + j] / (xl * xl);
            }
        }
        let mut dely = vec![0.0; m];
        let mut diagy = vec![0.0; m];
        let mut dellam = vec![0.0; m];
        let mut diaglamyi = vec![0.0; m];
        for i in 0..m {
            dely[i] = self.c[i] + self.d[i] * pt.y[i] - pt.lam[i] - epsi / pt.y[i];
            diagy[i] = self.d[i] + pt.mu[i] / pt.y[i];
            dellam[i] =
                gvec[i] - self.a[i] * pt.z - pt.y[i] - self.b[i] + epsi / pt.lam[i];
            diaglamyi[i] = pt.s[i] / pt.lam[i] + 1.0 / diagy[i];
        }
        let adot: f64 = self.a.iter().zip(&pt.lam).map(|(a, l)| a * l).sum();
        let delz = self.a0 - adot - epsi / pt.z;

        // Reduced (m+1)×(m+1) system in (dlam, dz).
        let dim = m + 1;
        let mut aa = vec![0.0; dim * dim];
        let mut bb = vec![0.0; dim];
        for i in 0..m {
            for k in 0..m {
                let mut acc = if i == k { diaglamyi[i] } else { 0.0 };
                for j in 0..n {
                    acc += gg[i * n + j] * gg[k * n + j] / diagx[j];
                }
                aa[i * dim + k] = acc;
            }
            aa[i * dim + m] = self.a[i];
            aa[m * dim + i] = self.a[i];
            let mut rhs = dellam[i] + dely[i] / diagy[i];
            for j in 0..n {
                rhs -= gg[i * n + j] * delx[j] / diagx[j];
            }
            bb[i] = rhs;
        }
        aa[m * dim + m] = -pt.zet / pt.z;
        bb[m] = delz;
        let sol = solve_dense(&mut aa, &mut bb, dim);
        let dlam = sol[..m].to_vec();
        let dz = sol[m];

        let mut dx = vec![0.0; n];
        for j in 0..n {
            let mut gtd = 0.0;
            for i in 0..m {
                gtd += gg[i * n + j] * dlam[i];
            }
            dx[j] = -(delx[j] + gtd) / diagx[j];
        }
        let mut dy = vec![0.0; m];
        let mut dmu = vec![0.0; m];
        let mut ds = vec![0.0; m];
        for i in 0..m {
            dy[i] = (dlam[i] - dely[i]) / diagy[i];
            dmu[i] = -pt.mu[i] + (epsi - pt.mu[i] * dy[i]) / pt.y[i];
            ds[i] = -pt.s[i] + (epsi - pt.s[i] * dlam[i]) / pt.lam[i];
        }
        let mut dxsi = vec![0.0; n];
        let mut deta = vec![0.0; n];
        for j in 0..n {
            let xa = pt.x[j] - self.alfa[j];
            let bx = self.beta[j] - pt.x[j];
            dxsi[j] = -pt.xsi[j] + (epsi - pt.xsi[j] * dx[j]) / xa;
            deta[j] = -pt.eta[j] + (epsi + pt.eta[j] * dx[j]) / bx;
        }
        let dzet = -pt.zet + (epsi - pt.zet * dz) / pt.z;

        Point {
            x: dx,
            y: dy,
            z: dz,
            lam: dlam,
            xsi: dxsi,
            eta: deta,
            mu: dmu,
            zet: dzet,
            s: ds,
        }
    }
}

/// Largest step keeping all positive variables positive (with 1% margin)
/// and x strictly inside (alfa, beta), capped at 1.
fn step_length(pt: &Point, dir: &Point, alfa: &[f64], beta: &[f64]) -> f64 {
    let mut stm = 1.0f64;
    let mut scan = |vals: &[f64], dirs: &[f64]| {
        for (v, d) in vals.iter().zip(dirs) {
            stm = stm.max(-1.01 * d / v);
        }
    };
    scan(&pt.y, &dir.y);
    scan(&pt.lam, &dir.lam);
    scan(&pt.xsi, &dir.xsi);
    scan(&pt.eta, &dir.eta);
    scan(&pt.mu, &dir.mu);
    scan(&pt.s, &dir.s);
    stm = stm.max(-1.01 * dir.z / pt.z);
    stm = stm.max(-1.01 * dir.zet / pt.zet);
    for j in 0..pt.x.len() {
        stm = stm.max(-1.01 * dir.x[j] / (pt.x[j] - alfa[j]));
        stm = stm.max(1.01 * dir.x[j] / (beta[j] - pt.x[j]));
    }
    1.0 / stm
}

fn advance(base: &Point, dir: &Point, t: f64) -> Point {
    let lin = |v: &[f64], d: &[f64]| -> Vec<f64> {
        v.iter().zip(d).map(|(a, b)| a + t * b).collect()
    };
    Point {
        x: lin(&base.x, &dir.x),
        y: lin(&base.y, &dir.y),
        z: base.z + t * dir.z,
        lam: lin(&base.lam, &dir.lam),
        xsi: lin(&base.xsi, &dir.xsi),
        eta: lin(&base.eta, &dir.eta),
        mu: lin(&base.mu, &dir.mu),
        zet: base.zet + t * dir.zet,
        s: lin(&base.s, &dir.s),
    }
}

/// Gaussian elimination with partial pivoting on a tiny dense system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col * n + c] * x[c];
        }
        x[col] = acc / a[col * n + col];
    }
    x
}
