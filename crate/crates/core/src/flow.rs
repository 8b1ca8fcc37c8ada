//! Continuous-time ensemble dynamics and the fixed-step integrator.
//!
//! Three right-hand sides are provided: the vanilla flow
//! du^j/dt = C_G(U)·Γ·(y − G(u^j)), its gradient-flow reformulation for
//! linear models (used as a cross-check), and the stabilized dynamics
//! du^j/dt = −C̃(U)·∇Φ(u^j) + β·C̃(U)·(u^j − ū) with the inflated
//! preconditioner C̃(U) = C(U) + (1−α)·Σ. The integrator is classical
//! four-stage Runge–Kutta with a fixed step: trajectories are smooth at desk
//! scale and bit-reproducibility matters more than step adaptivity.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{cross_gain, spread, Ensemble, Observation};
use crate::error::{Error, Result};
use crate::forward::{evaluate_ensemble, ForwardModel};
use crate::io;
use crate::parallel::map_members;

/// Covariance-inflation and acceleration parameters of the stabilized
/// dynamics. α = 1, β = 0 reproduces the vanilla flow exactly.
#[derive(Debug, Clone)]
pub struct StabilizationParams {
    alpha: f64,
    beta: f64,
    sigma: DMatrix<f64>,
    sigma_is_identity: bool,
}

impl StabilizationParams {
    pub fn new(alpha: f64, beta: f64, sigma: DMatrix<f64>) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Config("stabilization parameters must be finite".into()));
        }
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() != d {
            return Err(Error::Config("Σ must be square and nonempty".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::Config(format!("Σ is not symmetric (max asymmetry {asym:.3e})")));
        }
        let min_eig = sigma.clone().symmetric_eigen().eigenvalues.min();
        if min_eig <= 0.0 || min_eig.is_nan() {
            return Err(Error::Config(format!(
                "Σ is not positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        let sigma_is_identity = sigma == DMatrix::identity(d, d);
        Ok(Self { alpha, beta, sigma, sigma_is_identity })
    }

    /// Σ = I with the given inflation and acceleration parameters.
    pub fn identity(dim: usize, alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, sigma: DMatrix::identity(dim, dim), sigma_is_identity: true }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Σ·M (identity fast path skips the product).
    pub(crate) fn sigma_left(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.sigma_is_identity {
            m.clone()
        } else {
            &self.sigma * m
        }
    }

    /// M·Σ.
    pub(crate) fn sigma_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.sigma_is_identity {
            m.clone()
        } else {
            m * &self.sigma
        }
    }

    /// Σ·v.
    pub(crate) fn sigma_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.sigma_is_identity {
            v.clone()
        } else {
            &self.sigma * v
        }
    }
}

/// Integration horizon and trace controls; plain plumbing around the solvers.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub t_final: f64,
    pub step: f64,
    /// Trace every n-th step (the initial and final states are always
    /// recorded).
    pub trace_stride: usize,
    /// Along the vanilla flow with a linear model, retry a step at half
    /// length when the mean misfit increases beyond roundoff, then abort.
    pub monotonicity_guard: bool,
    /// Keep ensemble snapshots at trace instants (diagnostics only).
    pub record_ensembles: bool,
}

impl FlowConfig {
    pub fn new(t_final: f64, step: f64) -> Self {
        Self { t_final, step, trace_stride: 1, monotonicity_guard: false, record_ensembles: false }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.t_final <= 0.0 || !self.t_final.is_finite() {
            bad.push(format!("t_final = {} (must be positive)", self.t_final));
        }
        if self.step <= 0.0 || !self.step.is_finite() {
            bad.push(format!("step = {} (must be positive)", self.step));
        }
        if self.trace_stride == 0 {
            bad.push("trace_stride = 0 (must be at least 1)".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Which right-hand side the integrator advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsKind {
    Vanilla,
    Stabilized,
}

/// Relative tolerance of the monotonicity guard: a step may raise the mean
/// misfit by at most this fraction of (1 + Φ).
pub const MONOTONICITY_TOLERANCE: f64 = 1e-10;

/// Vanilla flow velocities C_G(U)·Γ·(y − G(u^j)) for every member.
pub fn vanilla_rhs(
    ens: &Ensemble,
    obs: &Observation,
    model: &dyn ForwardModel,
) -> Result<Vec<DVector<f64>>> {
    let resp = evaluate_ensemble(model, ens)?;
    if resp.dim() != obs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "response dimension {} vs observation dimension {}",
            resp.dim(),
            obs.dim()
        )));
    }
    let j = ens.member_count();
    let mut innovations = DMatrix::zeros(obs.dim(), j);
    for (col, g) in resp.responses().iter().enumerate() {
        innovations.column_mut(col).copy_from(&(&obs.y - g));
    }
    let weighted = obs.noise.apply_precision_cols(&innovations);
    let velocities = cross_gain(&ens.centered(), &resp.centered(), &weighted);
    Ok(columns_of(&velocities))
}

/// Stabilized velocities −C̃(U)·∇Φ(u^j) + β·C̃(U)·(u^j − ū); requires an
/// exactly linear model, which supplies ∇Φ(u) = Gᵀ·Γ·(G·u − y).
pub fn stabilized_rhs(
    ens: &Ensemble,
    obs: &Observation,
    model: &dyn ForwardModel,
    params: &StabilizationParams,
) -> Result<Vec<DVector<f64>>> {
    if !model.is_linear() {
        return Err(Error::Config(
            "stabilized dynamics are defined for exactly linear models only".into(),
        ));
    }
    if params.dim() != ens.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Σ dimension {} vs ensemble dimension {}",
            params.dim(),
            ens.dim()
        )));
    }
    let mean = ens.mean();
    let beta = params.beta();
    let directions: Result<Vec<DVector<f64>>> = map_members(ens.members(), |u| {
        let residual = model.apply(u)? - &obs.y;
        let grad = model.apply_adjoint(&obs.noise.apply_precision(&residual))?;
        Ok(beta * (u - &mean) - grad)
    })
    .into_iter()
    .collect();
    let directions = directions?;

    let j = ens.member_count();
    let d = ens.dim();
    let mut block = DMatrix::zeros(d, j);
    for (col, v) in directions.iter().enumerate() {
        block.column_mut(col).copy_from(v);
    }
    let centered = ens.centered();
    let mut velocities = cross_gain(&centered, &centered, &block);
    let inflation = 1.0 - params.alpha();
    if inflation != 0.0 {
        velocities += params.sigma_left(&block) * inflation;
    }
    Ok(columns_of(&velocities))
}

fn columns_of(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.ncols()).map(|c| m.column(c).into_owned()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub t: f64,
    pub misfit_mean: f64,
    /// ‖ū − u†‖/‖u†‖; NaN when the observation carries no truth.
    pub residual_truth: f64,
    pub spread_state: f64,
    pub spread_response: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
    /// Ensemble snapshots at trace instants, when requested.
    pub snapshots: Vec<(f64, Ensemble)>,
    /// Steps the monotonicity guard re-took at half length.
    pub guard_retries: usize,
    /// Largest accepted (Φ_new − Φ_old)/(1 + Φ_old); None when the guard
    /// was inactive.
    pub max_step_increase: Option<f64>,
}

impl FlowTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .records
            .iter()
            .map(|r| vec![r.t, r.misfit_mean, r.residual_truth, r.spread_state, r.spread_response])
            .collect();
        io::write_table_csv(
            path,
            &["t", "misfit_mean", "residual_truth", "spread_state", "spread_response"],
            &rows,
        )
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = io::read_table_csv(path)?;
        if header.len() != 5 || header[0] != "t" {
            return Err(Error::Parse(format!("unexpected flow-trace header {header:?}")));
        }
        let records = rows
            .into_iter()
            .map(|r| FlowRecord {
                t: r[0],
                misfit_mean: r[1],
                residual_truth: r[2],
                spread_state: r[3],
                spread_response: r[4],
            })
            .collect();
        Ok(Self { records, ..Self::default() })
    }
}

/// Integrates the chosen dynamics from `ens0` to `cfg.t_final`.
pub fn integrate(
    kind: RhsKind,
    ens0: &Ensemble,
    obs: &Observation,
    model: &dyn ForwardModel,
    params: Option<&StabilizationParams>,
    cfg: &FlowConfig,
) -> Result<(Ensemble, FlowTrace)> {
    cfg.validate()?;
    let params = match kind {
        RhsKind::Vanilla => None,
        RhsKind::Stabilized => Some(params.ok_or_else(|| {
            Error::Config("stabilized dynamics need stabilization parameters".into())
        })?),
    };
    let rhs = |state: &Ensemble| -> Result<Vec<DVector<f64>>> {
        match kind {
            RhsKind::Vanilla => vanilla_rhs(state, obs, model),
            RhsKind::Stabilized => stabilized_rhs(state, obs, model, params.expect("checked")),
        }
    };

    let guard = cfg.monotonicity_guard && kind == RhsKind::Vanilla && model.is_linear();
    let ratio = cfg.t_final / cfg.step;
    let full_steps = (ratio + 1e-9 * ratio.max(1.0)).floor() as usize;
    let remainder = cfg.t_final - full_steps as f64 * cfg.step;
    let tail = remainder > 1e-9 * cfg.step;
    let total_steps = full_steps + usize::from(tail);

    let mut trace = FlowTrace { max_step_increase: guard.then_some(0.0), ..FlowTrace::default() };
    let mut state = ens0.clone();
    let mut phi = if guard { Some(mean_misfit(&state, obs, model)?) } else { None };

    record(&mut trace, 0.0, &state, obs, model, cfg)?;

    // A stage evaluation rejecting non-finite input means the trajectory
    // left the floating-point range mid-step.
    let blew_up = |e: Error, t: f64| match e {
        Error::InvalidInput(detail) => Error::Divergence { t, detail },
        other => other,
    };

    for step_index in 0..total_steps {
        let t = step_index as f64 * cfg.step;
        let h = if step_index < full_steps { cfg.step } else { remainder };

        let mut next = rk4_step(&state, h, &rhs).map_err(|e| blew_up(e, t))?;
        if !next.is_finite() {
            return Err(Error::Divergence { t, detail: "non-finite ensemble state".into() });
        }

        if let Some(phi_old) = phi {
            let mut phi_new = mean_misfit(&next, obs, model).map_err(|e| blew_up(e, t))?;
            let bound = MONOTONICITY_TOLERANCE * (1.0 + phi_old);
            if phi_new - phi_old > bound {
                // One retry: the same interval as two half steps.
                trace.guard_retries += 1;
                let half = rk4_step(&state, h / 2.0, &rhs).map_err(|e| blew_up(e, t))?;
                next = rk4_step(&half, h / 2.0, &rhs).map_err(|e| blew_up(e, t))?;
                if !next.is_finite() {
                    return Err(Error::Divergence { t, detail: "non-finite ensemble state".into() });
                }
                phi_new = mean_misfit(&next, obs, model).map_err(|e| blew_up(e, t))?;
                if phi_new - phi_old > bound {
                    return Err(Error::Divergence {
                        t,
                        detail: format!(
                            "monotonicity guard: mean misfit rose from {phi_old:.6e} to {phi_new:.6e} despite step halving"
                        ),
                    });
                }
            }
            let increase = (phi_new - phi_old) / (1.0 + phi_old);
            trace.max_step_increase = trace.max_step_increase.map(|m| m.max(increase));
            phi = Some(phi_new);
        }

        state = next;
        let t_next = if step_index + 1 == total_steps {
            cfg.t_final
        } else {
            (step_index + 1) as f64 * cfg.step
        };
        if (step_index + 1) % cfg.trace_stride == 0 || step_index + 1 == total_steps {
            record(&mut trace, t_next, &state, obs, model, cfg)?;
        }
    }

    Ok((state, trace))
}

fn mean_misfit(ens: &Ensemble, obs: &Observation, model: &dyn ForwardModel) -> Result<f64> {
    crate::ensemble::misfit(&ens.mean(), obs, model)
}

fn record(
    trace: &mut FlowTrace,
    t: f64,
    state: &Ensemble,
    obs: &Observation,
    model: &dyn ForwardModel,
    cfg: &FlowConfig,
) -> Result<()> {
    let resp = evaluate_ensemble(model, state)?;
    let mean = state.mean();
    let sp = spread(state, &resp, &obs.noise)?;
    trace.records.push(FlowRecord {
        t,
        misfit_mean: crate::ensemble::misfit(&mean, obs, model)?,
        residual_truth: match &obs.truth {
            Some(truth) => (mean - truth).norm() / truth.norm(),
            None => f64::NAN,
        },
        spread_state: sp.state,
        spread_response: sp.response,
    });
    if cfg.record_ensembles {
        trace.snapshots.push((t, state.clone()));
    }
    Ok(())
}

/// One classical RK4 step of the member system.
fn rk4_step<F>(state: &Ensemble, h: f64, rhs: &F) -> Result<Ensemble>
where
    F: Fn(&Ensemble) -> Result<Vec<DVector<f64>>>,
{
    let k1 = rhs(state)?;
    let k2 = rhs(&shifted(state, 0.5 * h, &k1))?;
    let k3 = rhs(&shifted(state, 0.5 * h, &k2))?;
    let k4 = rhs(&shifted(state, h, &k3))?;
    let members = state
        .members()
        .iter()
        .enumerate()
        .map(|(j, u)| u + (h / 6.0) * (&k1[j] + 2.0 * &k2[j] + 2.0 * &k3[j] + &k4[j]))
        .collect();
    Ok(Ensemble::from_members_unchecked(members, state.dim()))
}

fn shifted(state: &Ensemble, scale: f64, direction: &[DVector<f64>]) -> Ensemble {
    let members = state
        .members()
        .iter()
        .zip(direction)
        .map(|(u, k)| u + scale * k)
        .collect();
    Ensemble::from_members_unchecked(members, state.dim())
}
