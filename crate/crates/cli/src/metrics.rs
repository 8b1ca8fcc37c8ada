//! Run-level metrics: reconstruction quality, Pareto front coverage, the
//! brute-force reference front, and log-log slope fitting.

use enki_core::{misfit, Ensemble, ForwardModel, Observation, ParetoApproximation};
use nalgebra::DVector;

use crate::HarnessError;

/// Radius in objective space within which a reference point counts as
/// covered by a front point.
pub const COVERAGE_RADIUS: f64 = 0.05;

/// Fraction of reference points whose nearest nondominated front point lies
/// within [`COVERAGE_RADIUS`] in objective space.
pub fn front_coverage(front: &ParetoApproximation, reference: &[Vec<f64>]) -> f64 {
    assert!(!reference.is_empty(), "reference front must be nonempty");
    let survivors: Vec<&Vec<f64>> = front
        .entries
        .iter()
        .filter(|e| !e.dominated)
        .map(|e| &e.front_point)
        .collect();
    if survivors.is_empty() {
        return 0.0;
    }
    let covered = reference
        .iter()
        .filter(|r| {
            survivors
                .iter()
                .map(|f| {
                    f.iter()
                        .zip(r.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
                <= COVERAGE_RADIUS
        })
        .count();
    covered as f64 / reference.len() as f64
}

/// Final-state quality of an inversion run: misfit of the mean, relative
/// truth residual, and max-norm state spread.
pub fn reconstruction_metrics(
    final_ens: &Ensemble,
    obs: &Observation,
    model: &dyn ForwardModel,
) -> Result<(f64, f64, f64), HarnessError> {
    let truth = obs.truth.as_ref().ok_or_else(|| {
        HarnessError::Runtime("reconstruction metrics need an observation with truth".into())
    })?;
    let mean = final_ens.mean();
    let phi = misfit(&mean, obs, model).map_err(HarnessError::from)?;
    let residual = (&mean - truth).norm() / truth.norm();
    let spread = final_ens
        .members()
        .iter()
        .map(|u| (u - &mean).norm())
        .fold(0.0f64, f64::max);
    Ok((phi, residual, spread))
}

/// Brute-force reference for the two-bump benchmark: objective pairs on a
/// dense grid over [−2, 2]², reduced to the nondominated subset.
///
/// Returns the nondominated controls and their objective pairs, in grid
/// order. The reduction uses a sort-and-sweep scan, which agrees with the
/// pairwise dominance filter (checked in tests) but stays O(n log n) for
/// the dense grid.
pub fn deb_reference(grid: usize) -> (Vec<DVector<f64>>, Vec<Vec<f64>>) {
    assert!(grid >= 2);
    let (g1, g2) = enki_core::deb_pair();
    let coord = |i: usize| -2.0 + 4.0 * i as f64 / (grid - 1) as f64;
    let mut points = Vec::with_capacity(grid * grid);
    let mut objectives = Vec::with_capacity(grid * grid);
    for iy in 0..grid {
        for ix in 0..grid {
            let u = DVector::from_vec(vec![coord(ix), coord(iy)]);
            let f1 = g1.apply(&u).expect("in-range input")[0];
            let f2 = g2.apply(&u).expect("in-range input")[0];
            points.push(u);
            objectives.push(vec![f1, f2]);
        }
    }
    let keep = nondominated_2d(&objectives);
    let mut ref_points = Vec::new();
    let mut ref_front = Vec::new();
    for (i, keep_it) in keep.iter().enumerate() {
        if *keep_it {
            ref_points.push(points[i].clone());
            ref_front.push(objectives[i].clone());
        }
    }
    (ref_points, ref_front)
}

/// Nondominated flags (true = keep) for two-objective minimization via a
/// single sweep over points sorted by the first objective.
pub fn nondominated_2d(objectives: &[Vec<f64>]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..objectives.len()).collect();
    order.sort_by(|&a, &b| {
        objectives[a][0]
            .total_cmp(&objectives[b][0])
            .then(objectives[a][1].total_cmp(&objectives[b][1]))
    });
    let mut keep = vec![true; objectives.len()];
    let mut best_prev = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        // Group of equal first objective.
        let mut j = i;
        while j < order.len() && objectives[order[j]][0] == objectives[order[i]][0] {
            j += 1;
        }
        let group_min = objectives[order[i]][1];
        for &idx in &order[i..j] {
            let f2 = objectives[idx][1];
            // Dominated by a strictly-better first objective with no worse
            // second, or by a same-first-objective point with strictly
            // better second.
            if best_prev <= f2 || group_min < f2 {
                keep[idx] = false;
            }
        }
        best_prev = best_prev.min(group_min);
        i = j;
    }
    keep
}

/// Least-squares slope of y against x.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
