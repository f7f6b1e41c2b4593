//! Multi-objective evolutionary machinery: Pareto dominance, non-dominated
//! sorting, crowding distances, elitist selection, 2-D hypervolume, the
//! convergence test, and Latin hypercube sampling.
//!
//! Everything here is a pure function over immutable inputs; all tie-breaks
//! are deterministic (stable sample-id order) so pipeline runs reproduce
//! byte-for-byte.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

/// A bi-objective value attached to a sample (minimization in both).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectivePoint {
    pub j1: f64,
    pub j2: f64,
    pub id: usize,
}

/// Population snapshot with its Pareto structure and hypervolume history.
#[derive(Clone, Debug, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParetoArchive {
    pub points: Vec<ObjectivePoint>,
    /// 1-based front rank per point (parallel to `points`).
    pub ranks: Vec<usize>,
    pub crowding: Vec<f64>,
    pub hv_history: Vec<f64>,
    pub r_hv: [f64; 2],
}

impl ParetoArchive {
    /// Rebuilds ranks and crowding distances for the given points.
    pub fn rebuild(&mut self, points: Vec<ObjectivePoint>) {
        let fronts = non_dominated_sort(&points);
        let mut ranks = vec![0; points.len()];
        let mut crowding = vec![0.0; points.len()];
        for (f, front) in fronts.iter().enumerate() {
            let members: Vec<ObjectivePoint> = front.iter().map(|&i| points[i]).collect();
            let dists = crowding_distance(&members);
            for (&i, &d) in front.iter().zip(&dists) {
                ranks[i] = f + 1;
                crowding[i] = d;
            }
        }
        self.points = points;
        self.ranks = ranks;
        self.crowding = crowding;
    }

    /// Indices of the current first front.
    pub fn first_front(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.ranks[i] == 1)
            .collect()
    }

    /// Appends the hypervolume of the current points.
    pub fn record_hypervolume(&mut self) -> f64 {
        let hv = hypervolume_2d(&self.points, self.r_hv);
        self.hv_history.push(hv);
        hv
    }
}

/// Strict Pareto dominance for minimization: a is no worse in both
/// objectives and strictly better in at least one.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    a.j1 <= b.j1 && a.j2 <= b.j2 && (a.j1 < b.j1 || a.j2 < b.j2)
}

/// Fast non-dominated sort. Returns fronts as index lists into `points`;
/// front 0 in the result is rank 1. Indices within a front stay ascending,
/// so the partition is independent of input permutation as a set family.
pub fn non_dominated_sort(points: &[ObjectivePoint]) -> Vec<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if dominates(&points[i], &points[j]) {
                dominated_by[i].push(j);
            } else if dominates(&points[j], &points[i]) {
                domination_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(core::mem::replace(&mut current, next));
    }
    fronts
}

/// NSGA-II crowding distance for one front (parallel to the input order).
///
/// Boundary points per objective get +∞; interior points accumulate the
/// normalized gap between their neighbors. Equal objective values are
/// ordered by sample id so the assignment is deterministic; a front with
/// zero range in an objective takes no contribution from it.
pub fn crowding_distance(front: &[ObjectivePoint]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for objective in 0..2 {
        let value = |p: &ObjectivePoint| if objective == 0 { p.j1 } else { p.j2 };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| {
            value(&front[a])
                .total_cmp(&value(&front[b]))
                .then(front[a].id.cmp(&front[b].id))
        });
        let range = value(&front[order[n - 1]]) - value(&front[order[0]]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            let gap = value(&front[order[k + 1]]) - value(&front[order[k - 1]]);
            dist[order[k]] += gap / range;
        }
    }
    dist
}

/// Elitist environmental selection. Returns indices into `population`.
///
/// The entire first front always survives. When it alone exceeds
/// `min_offspring`, it is returned as the whole next population; otherwise
/// lower fronts fill up to `target_size`, admitting a partial front by
/// descending crowding distance (ties by ascending index).
pub fn select(
    population: &[ObjectivePoint],
    target_size: usize,
    min_offspring: usize,
) -> Vec<usize> {
    if population.len() <= target_size {
        return (0..population.len()).collect();
    }
    let fronts = non_dominated_sort(population);
    if fronts[0].len() > min_offspring {
        return fronts[0].clone();
    }
    let goal = target_size.max(fronts[0].len());
    let mut picked = Vec::with_capacity(goal);
    for front in &fronts {
        if picked.len() + front.len() <= goal {
            picked.extend_from_slice(front);
            if picked.len() == goal {
                break;
            }
        } else {
            let members: Vec<ObjectivePoint> = front.iter().map(|&i| population[i]).collect();
            let dists = crowding_distance(&members);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_unstable_by(|&a, &b| {
                dists[b].total_cmp(&dists[a]).then(front[a].cmp(&front[b]))
            });
            for &k in order.iter().take(goal - picked.len()) {
                picked.push(front[k]);
            }
            break;
        }
    }
    picked
}

/// Area dominated by the point set relative to the reference point
/// (minimization): the union of rectangles [j1, r1]×[j2, r2] over all
/// points strictly inside the reference box. Points at or beyond the
/// reference in either objective contribute nothing.
pub fn hypervolume_2d(points: &[ObjectivePoint], r_hv: [f64; 2]) -> f64 {
    let [r1, r2] = r_hv;
    let mut contributors: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.j1 < r1 && p.j2 < r2)
        .map(|p| (p.j1, p.j2))
        .collect();
    contributors.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut best_j2 = r2;
    for (j1, j2) in contributors {
        if j2 < best_j2 {
            area += (r1 - j1) * (best_j2 - j2);
            best_j2 = j2;
        }
    }
    area
}

/// True when every one of the last `window` relative hypervolume steps is
/// below `epsilon`. Histories shorter than window+1 are never converged.
pub fn converged(hv_history: &[f64], epsilon: f64, window: usize) -> bool {
    if window == 0 || hv_history.len() < window + 1 {
        return false;
    }
    hv_history
        .windows(2)
        .skip(hv_history.len() - 1 - window)
        .all(|pair| {
            let delta = (pair[1] - pair[0]).abs();
            delta / pair[1].abs().max(1e-300) < epsilon
        })
}

/// Latin hypercube sample: `n` points over the given per-dimension ranges,
/// exactly one point per stratum in every dimension, deterministic per seed.
pub fn latin_hypercube(n: usize, ranges: &[(f64, f64)], seed: u64) -> Vec<Vec<f64>> {
    assert!(n >= 1, "sample count must be positive");
    assert!(!ranges.is_empty(), "at least one dimension required");
    let mut rng = crate::rng::stream(seed, 0x4c48_5321);
    let mut out = vec![vec![0.0; ranges.len()]; n];
    for (d, &(lo, hi)) in ranges.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (i, point) in out.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            let v = (strata[i] as f64 + u) / n as f64;
            point[d] = lo + v * (hi - lo);
        }
    }
    out
}
