//! Weighted-scalarization ensemble inversion over the weight simplex, with
//! uniform and gradient-adaptive λ grids for Pareto tracing.
//!
//! For each weight vector λ the coupled problem collapses to a single
//! inverse problem with model Σ λ_i·G_i and data Σ λ_i·y_i; the vanilla
//! flow run to a fixed horizon yields the ensemble mean m(λ, T) as the
//! minimizer proxy. The adaptive grid spaces successive λ so that the
//! first-order change ‖Δλ‖·‖∇m(λ)‖ stays below a tolerance δ.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{Ensemble, NoiseModel, Observation};
use crate::error::{Error, Result};
use crate::flow::{integrate, FlowConfig, RhsKind};
use crate::forward::ForwardModel;
use crate::io;
use crate::parallel::map_tasks;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("weight vector must be nonempty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!("weights must be nonnegative: {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Two-objective weights (s, 1 − s) for s ∈ [0, 1].
    pub fn pair(s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidInput(format!("pair parameter {s} outside [0, 1]")));
        }
        Ok(Self { weights: vec![s, 1.0 - s] })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// First weight, the scalar parameter of the two-objective family.
    pub fn scalar(&self) -> f64 {
        self.weights[0]
    }
}

/// l ≥ 2 forward models competing over shared controls, with one data
/// vector per model and a shared noise description.
pub struct MultiObjectiveProblem {
    models: Vec<Arc<dyn ForwardModel>>,
    data: Vec<DVector<f64>>,
    noise: NoiseModel,
}

impl MultiObjectiveProblem {
    pub fn new(
        models: Vec<Arc<dyn ForwardModel>>,
        data: Vec<DVector<f64>>,
        noise: NoiseModel,
    ) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::Config(format!(
                "multi-objective problem needs at least 2 models, got {}",
                models.len()
            )));
        }
        if data.len() != models.len() {
            return Err(Error::Config(format!(
                "{} models vs {} data vectors",
                models.len(),
                data.len()
            )));
        }
        let d = models[0].input_dim();
        let k = models[0].output_dim();
        for (i, m) in models.iter().enumerate() {
            if m.input_dim() != d || m.output_dim() != k {
                return Err(Error::DimensionMismatch(format!(
                    "model {i} is {}→{}, expected {d}→{k}",
                    m.input_dim(),
                    m.output_dim()
                )));
            }
        }
        for (i, y) in data.iter().enumerate() {
            if y.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "data vector {i} has length {}, expected {k}",
                    y.len()
                )));
            }
        }
        if noise.dim() != k {
            return Err(Error::DimensionMismatch(format!(
                "noise dimension {} vs output dimension {k}",
                noise.dim()
            )));
        }
        Ok(Self { models, data, noise })
    }

    pub fn objective_count(&self) -> usize {
        self.models.len()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.models[0].output_dim()
    }

    pub fn models(&self) -> &[Arc<dyn ForwardModel>] {
        &self.models
    }

    pub fn data(&self) -> &[DVector<f64>] {
        &self.data
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Per-objective values ‖Γ^(1/2)(y_i − G_i(u))‖.
    pub fn objective_values(&self, u: &DVector<f64>) -> Result<Vec<f64>> {
        self.models
            .iter()
            .zip(&self.data)
            .map(|(m, y)| Ok(self.noise.weighted_norm(&(y - m.apply(u)?))))
            .collect()
    }
}

/// The scalarized model Σ λ_i·G_i.
pub struct WeightedModel {
    models: Vec<Arc<dyn ForwardModel>>,
    weights: Vec<f64>,
}

impl ForwardModel for WeightedModel {
    fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.models[0].output_dim()
    }

    fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.output_dim());
        for (m, w) in self.models.iter().zip(&self.weights) {
            acc += m.apply(u)? * *w;
        }
        Ok(acc)
    }

    fn is_linear(&self) -> bool {
        self.models.iter().all(|m| m.is_linear())
    }

    fn apply_adjoint(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.input_dim());
        for (m, wt) in self.models.iter().zip(&self.weights) {
            acc += m.apply_adjoint(w)? * *wt;
        }
        Ok(acc)
    }

    fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(self.output_dim(), self.input_dim());
        for (m, w) in self.models.iter().zip(&self.weights) {
            acc += m.linear_matrix()? * *w;
        }
        Some(acc)
    }
}

/// Builds the scalarized model and observation (Σ λ_i·G_i, Σ λ_i·y_i) with
/// the shared noise description.
pub fn weighted_model(
    problem: &MultiObjectiveProblem,
    lambda: &WeightVector,
) -> Result<(WeightedModel, Observation)> {
    if lambda.len() != problem.objective_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights vs {} objectives",
            lambda.len(),
            problem.objective_count()
        )));
    }
    let mut y = DVector::zeros(problem.output_dim());
    for (yi, w) in problem.data.iter().zip(lambda.weights()) {
        y += yi * *w;
    }
    let obs = Observation::new(y, problem.noise.clone())?;
    let model = WeightedModel { models: problem.models.clone(), weights: lambda.weights().to_vec() };
    Ok((model, obs))
}

fn solve_inner(
    problem: &MultiObjectiveProblem,
    lambda: &WeightVector,
    ens0: &Ensemble,
    cfg: &FlowConfig,
) -> Result<(Ensemble, DVector<f64>)> {
    let (model, obs) = weighted_model(problem, lambda)?;
    let mut quiet = cfg.clone();
    quiet.trace_stride = usize::MAX;
    quiet.record_ensembles = false;
    let (final_ens, _) = integrate(RhsKind::Vanilla, ens0, &obs, &model, None, &quiet)
        .map_err(|e| tag_lambda(e, lambda))?;
    let mean = final_ens.mean();
    Ok((final_ens, mean))
}

fn tag_lambda(e: Error, lambda: &WeightVector) -> Error {
    let tag = format!("λ = {:?}", lambda.weights());
    match e {
        Error::Divergence { t, detail } => Error::Divergence { t, detail: format!("{tag}: {detail}") },
        Error::Numerical(msg) => Error::Numerical(format!("{tag}: {msg}")),
        other => other,
    }
}

/// Runs the vanilla flow on the scalarized problem to `cfg.t_final` and
/// returns the final ensemble mean m(λ, T), the minimizer proxy for u*(λ).
pub fn solve_scalarized(
    problem: &MultiObjectiveProblem,
    lambda: &WeightVector,
    ens0: &Ensemble,
    cfg: &FlowConfig,
) -> Result<DVector<f64>> {
    solve_inner(problem, lambda, ens0, cfg).map(|(_, mean)| mean)
}

/// Finite-difference sensitivity ∇_λ m(λ, T) over the (l−1)-dimensional
/// simplex parameterization (the last weight compensates each probe).
/// Central differences of step `h`, one-sided within `h` of the boundary;
/// every probe starts from the same initial ensemble.
pub fn gradient_m_lambda(
    problem: &MultiObjectiveProblem,
    lambda: &WeightVector,
    ens0: &Ensemble,
    cfg: &FlowConfig,
    h: f64,
) -> Result<DMatrix<f64>> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let l = problem.objective_count();
    if lambda.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "{} weights vs {} objectives",
            lambda.len(),
            l
        )));
    }
    let w = lambda.weights();
    let last = l - 1;

    // Probe weight vectors per free coordinate: forward and/or backward.
    enum Scheme {
        Central(usize, usize),
        Forward(usize, usize),
        Backward(usize, usize),
    }
    let mut probes: Vec<WeightVector> = Vec::new();
    let mut schemes = Vec::with_capacity(l - 1);
    let push_probe = |weights: Vec<f64>, probes: &mut Vec<WeightVector>| -> Result<usize> {
        probes.push(WeightVector::new(weights).map_err(|e| {
            Error::Config(format!("finite-difference probe left the simplex: {e}"))
        })?);
        Ok(probes.len() - 1)
    };
    for i in 0..l - 1 {
        let can_up = w[last] >= h;
        let can_down = w[i] >= h;
        let up = || {
            let mut p = w.to_vec();
            p[i] += h;
            p[last] -= h;
            p
        };
        let down = || {
            let mut p = w.to_vec();
            p[i] -= h;
            p[last] += h;
            p
        };
        let scheme = match (can_up, can_down) {
            (true, true) => {
                Scheme::Central(push_probe(up(), &mut probes)?, push_probe(down(), &mut probes)?)
            }
            (true, false) => {
                let base = push_probe(w.to_vec(), &mut probes)?;
                Scheme::Forward(push_probe(up(), &mut probes)?, base)
            }
            (false, true) => {
                let base = push_probe(w.to_vec(), &mut probes)?;
                Scheme::Backward(base, push_probe(down(), &mut probes)?)
            }
            (false, false) => {
                return Err(Error::Config(format!(
                    "simplex too tight for finite-difference step {h} at coordinate {i}"
                )))
            }
        };
        schemes.push(scheme);
    }

    let solutions: Result<Vec<DVector<f64>>> =
        map_tasks(probes, |p| solve_scalarized(problem, &p, ens0, cfg))
            .into_iter()
            .collect();
    let solutions = solutions?;

    let d = problem.input_dim();
    let mut grad = DMatrix::zeros(d, l - 1);
    for (i, scheme) in schemes.iter().enumerate() {
        let col = match scheme {
            Scheme::Central(up, down) => (&solutions[*up] - &solutions[*down]) / (2.0 * h),
            Scheme::Forward(up, base) => (&solutions[*up] - &solutions[*base]) / h,
            Scheme::Backward(base, down) => (&solutions[*base] - &solutions[*down]) / h,
        };
        grad.column_mut(i).copy_from(&col);
    }
    Ok(grad)
}

/// One accepted point of a λ-walk.
#[derive(Debug, Clone)]
pub struct ParetoEntry {
    pub lambda: WeightVector,
    /// m(λ, T), the minimizer proxy.
    pub minimizer: DVector<f64>,
    /// Objective values ‖Γ^(1/2)(y_i − G_i(m))‖, i = 1..l.
    pub front_point: Vec<f64>,
    pub dominated: bool,
    /// ‖m(λ^k) − m(λ^{k−1}) − Δλ·∇m(λ^{k−1})‖, NaN on the first entry.
    pub taylor_error: f64,
    /// ‖∇m(λ^k)‖ measured at this point (not serialized).
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Adaptive,
    Uniform,
}

/// Ordered λ-walk output with dominance flags.
#[derive(Debug, Clone)]
pub struct ParetoApproximation {
    pub entries: Vec<ParetoEntry>,
    /// Tolerance δ of the adaptive step rule; None for uniform grids.
    pub delta: Option<f64>,
    pub grid_kind: GridKind,
}

impl ParetoApproximation {
    /// Columns: lambda (first weight), minimizer components, objective
    /// values, dominance flag, Taylor error.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let first = self
            .entries
            .first()
            .ok_or_else(|| Error::InvalidInput("empty Pareto approximation".into()))?;
        let d = first.minimizer.len();
        let l = first.front_point.len();
        let mut header = vec!["lambda".to_string()];
        header.extend((0..d).map(|i| format!("m{i}")));
        header.extend((1..=l).map(|i| format!("g{i}")));
        header.push("dominated".to_string());
        header.push("taylor_error".to_string());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = self
            .entries
            .iter()
            .map(|e| {
                let mut row = Vec::with_capacity(header_refs.len());
                row.push(e.lambda.scalar());
                row.extend(e.minimizer.iter().copied());
                row.extend(e.front_point.iter().copied());
                row.push(if e.dominated { 1.0 } else { 0.0 });
                row.push(e.taylor_error);
                row
            })
            .collect();
        io::write_table_csv(path, &header_refs, &rows)
    }

    /// Reads back a two-objective walk CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = io::read_table_csv(path)?;
        let d = header.iter().filter(|h| h.starts_with('m')).count();
        let l = header.iter().filter(|h| h.starts_with('g')).count();
        if l != 2 || header.len() != 3 + d + l {
            return Err(Error::Parse(format!("unexpected Pareto CSV header {header:?}")));
        }
        let entries = rows
            .into_iter()
            .map(|row| {
                let lambda = WeightVector::pair(row[0])?;
                let minimizer = DVector::from_iterator(d, row[1..1 + d].iter().copied());
                let front_point = row[1 + d..1 + d + l].to_vec();
                Ok(ParetoEntry {
                    lambda,
                    minimizer,
                    front_point,
                    dominated: row[1 + d + l] != 0.0,
                    taylor_error: row[2 + d + l],
                    gradient_norm: f64::NAN,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, delta: None, grid_kind: GridKind::Uniform })
    }
}

/// Largest admissible λ step of the adaptive walk.
pub const MAX_LAMBDA_STEP: f64 = 0.1;
/// Smallest admissible λ step; the walk aborts below this.
pub const MIN_LAMBDA_STEP: f64 = 1e-4;
/// Floor added to ‖∇m‖ in the step rule.
pub const GRADIENT_FLOOR: f64 = 1e-12;
/// Default finite-difference step for the λ sensitivity.
pub const SENSITIVITY_FD_STEP: f64 = 1e-3;

/// Walk behavior toggles.
#[derive(Debug, Clone, Copy, Default)]
pub struct WalkOptions {
    /// Start each λ solve from the previous λ's final ensemble instead of
    /// re-initializing from `ens0`. Off by default.
    pub warm_start: bool,
}

struct PointEval {
    ensemble: Ensemble,
    minimizer: DVector<f64>,
    gradient: DMatrix<f64>,
}

fn eval_point(
    problem: &MultiObjectiveProblem,
    s: f64,
    init: &Ensemble,
    cfg: &FlowConfig,
) -> Result<PointEval> {
    let lambda = WeightVector::pair(s)?;
    let (ensemble, minimizer) = solve_inner(problem, &lambda, init, cfg)?;
    let gradient = gradient_m_lambda(problem, &lambda, init, cfg, SENSITIVITY_FD_STEP)?;
    Ok(PointEval { ensemble, minimizer, gradient })
}

fn make_entry(
    problem: &MultiObjectiveProblem,
    s: f64,
    eval: &PointEval,
    taylor_error: f64,
) -> Result<ParetoEntry> {
    Ok(ParetoEntry {
        lambda: WeightVector::pair(s)?,
        minimizer: eval.minimizer.clone(),
        front_point: problem.objective_values(&eval.minimizer)?,
        dominated: false,
        taylor_error,
        gradient_norm: eval.gradient.norm(),
    })
}

fn taylor_error(prev: Option<&(f64, PointEval)>, s: f64, minimizer: &DVector<f64>) -> f64 {
    match prev {
        Some((sp, eval)) => {
            let predicted = &eval.minimizer + (s - sp) * eval.gradient.column(0).into_owned();
            (minimizer - predicted).norm()
        }
        None => f64::NAN,
    }
}

fn apply_dominance(entries: &mut [ParetoEntry]) {
    let points: Vec<Vec<f64>> = entries.iter().map(|e| e.front_point.clone()).collect();
    for (entry, flag) in entries.iter_mut().zip(dominance_filter(&points)) {
        entry.dominated = flag;
    }
}

fn require_two_objectives(problem: &MultiObjectiveProblem) -> Result<()> {
    if problem.objective_count() != 2 {
        return Err(Error::Config(format!(
            "λ-walks use the scalar two-objective parameterization, got {} objectives",
            problem.objective_count()
        )));
    }
    Ok(())
}

/// Adaptive two-objective λ-walk from λ = 0 to λ = 1 with step rule
/// ‖Δλ‖ = min(δ/(‖∇m(λ)‖ + ε), Δλ_max), so that every accepted step
/// satisfies ‖Δλ‖·‖∇m(λ)‖ ≤ δ.
pub fn adaptive_walk(
    problem: &MultiObjectiveProblem,
    ens0: &Ensemble,
    delta: f64,
    cfg: &FlowConfig,
    opts: &WalkOptions,
) -> Result<ParetoApproximation> {
    require_two_objectives(problem)?;
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::Config(format!("tolerance must be positive, got {delta}")));
    }
    let mut entries = Vec::new();
    let mut init = ens0.clone();
    let mut prev: Option<(f64, PointEval)> = None;
    let mut s = 0.0;
    loop {
        let eval = eval_point(problem, s, &init, cfg)?;
        let taylor = taylor_error(prev.as_ref(), s, &eval.minimizer);
        entries.push(make_entry(problem, s, &eval, taylor)?);
        if s >= 1.0 {
            break;
        }
        let gnorm = eval.gradient.norm();
        let step = (delta / (gnorm + GRADIENT_FLOOR)).min(MAX_LAMBDA_STEP);
        if step < MIN_LAMBDA_STEP {
            return Err(Error::Numerical(format!(
                "λ-step underflow at λ = {s}: ‖∇m‖ = {gnorm:.6e} forces step {step:.3e} below {MIN_LAMBDA_STEP}"
            )));
        }
        if opts.warm_start {
            init = eval.ensemble.clone();
        }
        prev = Some((s, eval));
        s += step;
        if s >= 1.0 - 1e-12 {
            s = 1.0;
        }
    }
    apply_dominance(&mut entries);
    Ok(ParetoApproximation { entries, delta: Some(delta), grid_kind: GridKind::Adaptive })
}

/// Equidistant two-objective λ grid λ_k = k/(n−1); otherwise the same
/// pipeline as the adaptive walk.
pub fn uniform_walk(
    problem: &MultiObjectiveProblem,
    ens0: &Ensemble,
    n_points: usize,
    cfg: &FlowConfig,
    opts: &WalkOptions,
) -> Result<ParetoApproximation> {
    require_two_objectives(problem)?;
    if n_points < 2 {
        return Err(Error::Config(format!("uniform grid needs at least 2 points, got {n_points}")));
    }
    let mut entries = Vec::new();
    let mut init = ens0.clone();
    let mut prev: Option<(f64, PointEval)> = None;
    for k in 0..n_points {
        let s = k as f64 / (n_points - 1) as f64;
        let eval = eval_point(problem, s, &init, cfg)?;
        let taylor = taylor_error(prev.as_ref(), s, &eval.minimizer);
        entries.push(make_entry(problem, s, &eval, taylor)?);
        if opts.warm_start {
            init = eval.ensemble.clone();
        }
        prev = Some((s, eval));
    }
    apply_dominance(&mut entries);
    Ok(ParetoApproximation { entries, delta: None, grid_kind: GridKind::Uniform })
}

/// Componentwise-minimization dominance: point p is dominated iff some q
/// has q_i ≤ p_i for all i with strict inequality in at least one
/// coordinate.
pub fn dominance_filter(points: &[Vec<f64>]) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            points.iter().any(|q| {
                q.iter().zip(p).all(|(a, b)| a <= b) && q.iter().zip(p).any(|(a, b)| a < b)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{deb_pair, LinearModel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::dvector;

    fn deb_problem() -> MultiObjectiveProblem {
        let (g1, g2) = deb_pair();
        MultiObjectiveProblem::new(
            vec![Arc::new(g1), Arc::new(g2)],
            vec![dvector![0.0], dvector![0.0]],
            NoiseModel::identity(1),
        )
        .unwrap()
    }

    /// Two identical linear objectives with identical data: the scalarized
    /// minimizer is independent of λ.
    fn constant_problem() -> MultiObjectiveProblem {
        let g = LinearModel::identity(2);
        MultiObjectiveProblem::new(
            vec![Arc::new(g.clone()), Arc::new(g)],
            vec![dvector![0.5, -0.25], dvector![0.5, -0.25]],
            NoiseModel::identity(2),
        )
        .unwrap()
    }

    fn deb_ensemble(seed: u64, count: usize) -> Ensemble {
        let mut rng = crate::rng::seeded(seed);
        Ensemble::sample_uniform(count, 2, -2.0, 2.0, &mut rng).unwrap()
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.6, 0.5]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        assert!(WeightVector::pair(1.5).is_err());
        assert_eq!(WeightVector::pair(0.25).unwrap().weights(), &[0.25, 0.75]);
    }

    #[test]
    fn degenerate_weight_recovers_first_objective() {
        let problem = deb_problem();
        let lambda = WeightVector::new(vec![1.0, 0.0]).unwrap();
        let (model, obs) = weighted_model(&problem, &lambda).unwrap();
        let u = dvector![0.3, -0.8];
        let direct = problem.models()[0].apply(&u).unwrap();
        assert_eq!(model.apply(&u).unwrap(), direct);
        assert_eq!(obs.y, dvector![0.0]);
    }

    #[test]
    fn symmetric_weights_at_origin_hand_value() {
        let problem = deb_problem();
        let lambda = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let (model, _) = weighted_model(&problem, &lambda).unwrap();
        let v = model.apply(&dvector![0.0, 0.0]).unwrap()[0];
        assert_relative_eq!(v, 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn weighted_data_combines_linearly() {
        let g = LinearModel::identity(1);
        let problem = MultiObjectiveProblem::new(
            vec![Arc::new(g.clone()), Arc::new(g)],
            vec![dvector![2.0], dvector![-2.0]],
            NoiseModel::identity(1),
        )
        .unwrap();
        let lambda = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let (_, obs) = weighted_model(&problem, &lambda).unwrap();
        assert_eq!(obs.y, dvector![0.0]);
    }

    #[test]
    fn weighted_model_linearity_flags() {
        let problem = deb_problem();
        let lambda = WeightVector::pair(0.5).unwrap();
        let (model, _) = weighted_model(&problem, &lambda).unwrap();
        assert!(!model.is_linear());
        assert!(model.linear_matrix().is_none());

        let linear = constant_problem();
        let (model, _) = weighted_model(&linear, &lambda).unwrap();
        assert!(model.is_linear());
        let m = model.linear_matrix().unwrap();
        assert_relative_eq!(m, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn dominance_filter_examples() {
        let flags = dominance_filter(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(flags, vec![false, false, true]);

        let same = dominance_filter(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(same, vec![false, false]);

        assert_eq!(dominance_filter(&[vec![3.0, 4.0]]), vec![false]);
    }

    #[test]
    fn constant_minimizer_has_vanishing_gradient() {
        let problem = constant_problem();
        let mut rng = crate::rng::seeded(2);
        let ens0 = Ensemble::sample_normal(8, 2, 1.0, &mut rng).unwrap();
        let cfg = FlowConfig::new(5.0, 1e-2);
        let lambda = WeightVector::pair(0.4).unwrap();
        let grad = gradient_m_lambda(&problem, &lambda, &ens0, &cfg, SENSITIVITY_FD_STEP).unwrap();
        assert!(grad.norm() < 1e-6, "gradient norm {}", grad.norm());
    }

    #[test]
    fn scalarized_solve_finds_the_first_bump_center() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(42, 25);
        let cfg = FlowConfig::new(10.0, 5e-3);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let m1 = solve_scalarized(&problem, &WeightVector::pair(1.0).unwrap(), &ens0, &cfg).unwrap();
        assert!((m1 - dvector![c, c]).norm() < 0.15, "λ = 1 minimizer off target");
    }

    #[test]
    fn scalarized_solve_finds_the_second_bump_center() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(123, 25);
        let cfg = FlowConfig::new(10.0, 5e-3);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let m0 = solve_scalarized(&problem, &WeightVector::pair(0.0).unwrap(), &ens0, &cfg).unwrap();
        assert!((m0 - dvector![-c, -c]).norm() < 0.15, "λ = 0 minimizer off target");
    }

    #[test]
    fn deb_gradient_reflects_diagonal_symmetry() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(35, 25);
        let cfg = FlowConfig::new(10.0, 5e-3);
        let grad = gradient_m_lambda(
            &problem,
            &WeightVector::pair(0.5).unwrap(),
            &ens0,
            &cfg,
            SENSITIVITY_FD_STEP,
        )
        .unwrap();
        let (a, b) = (grad[(0, 0)], grad[(1, 0)]);
        assert!(
            (a - b).abs() <= 0.05 * a.abs().max(b.abs()),
            "components {a} and {b} should agree within 5%"
        );
    }

    #[test]
    fn gradient_is_second_order_in_the_probe_step() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(7, 9);
        let cfg = FlowConfig::new(2.0, 1e-2);
        let lambda = WeightVector::pair(0.3).unwrap();
        let g = |h: f64| gradient_m_lambda(&problem, &lambda, &ens0, &cfg, h).unwrap();
        let (g1, g2, g4) = (g(0.04), g(0.02), g(0.01));
        let coarse = (&g1 - &g4).norm();
        let fine = (&g2 - &g4).norm();
        let ratio = coarse / fine;
        assert!((2.5..8.0).contains(&ratio), "central differences should be O(h²), got ratio {ratio}");
    }

    #[test]
    fn constant_problem_walk_uses_maximal_steps() {
        let problem = constant_problem();
        let mut rng = crate::rng::seeded(5);
        let ens0 = Ensemble::sample_normal(8, 2, 1.0, &mut rng).unwrap();
        let cfg = FlowConfig::new(5.0, 1e-2);
        let walk = adaptive_walk(&problem, &ens0, 5e-3, &cfg, &WalkOptions::default()).unwrap();
        assert_eq!(walk.entries.len(), 11);
        for (k, e) in walk.entries.iter().enumerate() {
            assert_abs_diff_eq!(e.lambda.scalar(), 0.1 * k as f64, epsilon = 1e-9);
            assert!(!e.dominated);
        }
    }

    #[test]
    fn convex_linear_walk_minimizers_are_nondominated() {
        // Identical identity models with different data: u*(λ) sweeps the
        // segment between the two data vectors, a convex front.
        let g = LinearModel::identity(2);
        let problem = MultiObjectiveProblem::new(
            vec![Arc::new(g.clone()), Arc::new(g)],
            vec![dvector![1.0, 0.0], dvector![-1.0, 0.0]],
            NoiseModel::identity(2),
        )
        .unwrap();
        let mut rng = crate::rng::seeded(11);
        let ens0 = Ensemble::sample_normal(8, 2, 1.5, &mut rng).unwrap();
        // The vanilla collapse is algebraic, so the horizon must be long for
        // a tight position check.
        let cfg = FlowConfig::new(50.0, 1e-2);
        let walk = uniform_walk(&problem, &ens0, 6, &cfg, &WalkOptions::default()).unwrap();
        assert!(walk.entries.iter().all(|e| !e.dominated));
        for e in &walk.entries {
            let expected = 2.0 * e.lambda.scalar() - 1.0;
            assert_abs_diff_eq!(e.minimizer[0], expected, epsilon = 0.1);
        }
    }

    #[test]
    fn adaptive_steps_satisfy_the_tolerance_rule() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(123, 12);
        let cfg = FlowConfig::new(3.0, 1e-2);
        let delta = 0.08;
        let walk = adaptive_walk(&problem, &ens0, delta, &cfg, &WalkOptions::default()).unwrap();
        assert!(walk.entries.len() >= 3);
        for pair in walk.entries.windows(2) {
            let step = pair[1].lambda.scalar() - pair[0].lambda.scalar();
            assert!(step > 0.0, "λ must increase strictly");
            let grad = gradient_m_lambda(&problem, &pair[0].lambda, &ens0, &cfg, SENSITIVITY_FD_STEP)
                .unwrap();
            assert!(step * grad.norm() <= delta + 1e-12);
            let lam = WeightVector::new(pair[1].lambda.weights().to_vec());
            assert!(lam.is_ok(), "walk left the simplex");
        }
        let last = walk.entries.last().unwrap();
        assert_eq!(last.lambda.scalar(), 1.0);
    }

    #[test]
    fn warm_start_walk_completes() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(123, 12);
        let cfg = FlowConfig::new(3.0, 1e-2);
        let walk = uniform_walk(&problem, &ens0, 5, &cfg, &WalkOptions { warm_start: true }).unwrap();
        assert_eq!(walk.entries.len(), 5);
    }

    #[test]
    fn walks_reject_other_objective_counts() {
        let g = LinearModel::identity(1);
        let problem = MultiObjectiveProblem::new(
            vec![Arc::new(g.clone()), Arc::new(g.clone()), Arc::new(g)],
            vec![dvector![0.0], dvector![1.0], dvector![2.0]],
            NoiseModel::identity(1),
        )
        .unwrap();
        let ens0 = Ensemble::new(vec![dvector![0.0], dvector![1.0]]).unwrap();
        let cfg = FlowConfig::new(1.0, 0.1);
        assert!(adaptive_walk(&problem, &ens0, 0.1, &cfg, &WalkOptions::default()).is_err());
        assert!(uniform_walk(&problem, &ens0, 4, &cfg, &WalkOptions::default()).is_err());
    }

    #[test]
    fn pareto_csv_round_trips() {
        let problem = deb_problem();
        let ens0 = deb_ensemble(123, 10);
        let cfg = FlowConfig::new(2.0, 1e-2);
        let walk = uniform_walk(&problem, &ens0, 4, &cfg, &WalkOptions::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("enki-pareto-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("front.csv");
        walk.write_csv(&path).unwrap();
        let back = ParetoApproximation::read_csv(&path).unwrap();
        assert_eq!(walk.entries.len(), back.entries.len());
        for (a, b) in walk.entries.iter().zip(&back.entries) {
            assert_eq!(a.lambda.scalar().to_bits(), b.lambda.scalar().to_bits());
            assert_eq!(a.minimizer, b.minimizer);
            assert_eq!(a.front_point, b.front_point);
            assert_eq!(a.dominated, b.dominated);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
