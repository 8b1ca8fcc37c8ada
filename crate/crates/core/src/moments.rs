//! Mean-field moment system of the stabilized dynamics in the simplified
//! setting K = d with Γ = G = I:
//!
//!   dm/dt = C·(y − m) + (1−α)·Σ·(y − m)
//!   dC/dt = −2·C·C − (1−α)·Σ·C − (1−α)·C·Σ
//!
//! α = 1 recovers the vanilla moment decay dC/dt = −2C², whose scalar
//! solution is C(t) = C(0)/(1 + 2·C(0)·t).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, StabilizationParams};
use crate::io;

/// First moment m and mean-field covariance C(f) = E − m·mᵀ; the second
/// moment is recoverable as E = C + m·mᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl MomentState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}×{}, mean has length {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = covariance.amax();
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let min_eig = covariance.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * scale.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive semi-definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Second moment E = C + m·mᵀ.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.covariance + &self.mean * self.mean.transpose()
    }

    /// Spectral norm of C.
    pub fn covariance_norm(&self) -> f64 {
        spectral_norm(&self.covariance)
    }
}

pub(crate) fn spectral_norm(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigen().eigenvalues.amax()
}

/// Moment velocities (dm/dt, dC/dt); dC is symmetrized to suppress roundoff
/// asymmetry. Dimensions must agree (caller contract).
pub fn moment_rhs(
    state: &MomentState,
    y: &DVector<f64>,
    params: &StabilizationParams,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = state.dim();
    assert_eq!(y.len(), d, "data dimension");
    assert_eq!(params.dim(), d, "Σ dimension");
    let inflation = 1.0 - params.alpha();
    let c = &state.covariance;

    let pull = y - &state.mean;
    let dm = c * &pull + inflation * params.sigma_vec(&pull);

    let mut dc = -2.0 * c * c;
    if inflation != 0.0 {
        dc -= inflation * params.sigma_left(c);
        dc -= inflation * params.sigma_right(c);
    }
    let dc = (&dc + dc.transpose()) / 2.0;
    (dm, dc)
}

/// Decay-rate matrices of the linearization at the target equilibrium
/// (m*, C*) = (y, 0): −(1−α)·Σ for δm and −4·(1−α)·Σ for δC.
pub fn linearized_rates(params: &StabilizationParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let inflation = 1.0 - params.alpha();
    let mean_rate = -inflation * params.sigma();
    let cov_rate = -4.0 * inflation * params.sigma();
    (mean_rate, cov_rate)
}

/// Moment trajectory sampled at the trace stride.
#[derive(Debug, Clone, Default)]
pub struct MomentTrajectory {
    pub samples: Vec<(f64, MomentState)>,
}

impl MomentTrajectory {
    pub fn state_at(&self, t: f64) -> Option<&MomentState> {
        self.samples
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|(_, m)| m)
    }

    /// Columns: t, mean components, covariance entries (row-major), spectral
    /// norm of the covariance.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = match self.samples.first() {
            Some((_, s)) => s.dim(),
            None => return Err(Error::InvalidInput("empty moment trajectory".into())),
        };
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("m{i}")));
        for i in 0..d {
            for j in 0..d {
                header.push(format!("c{i}_{j}"));
            }
        }
        header.push("c_spectral_norm".to_string());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .map(|(t, s)| {
                let mut row = Vec::with_capacity(2 + d + d * d);
                row.push(*t);
                row.extend(s.mean.iter().copied());
                for i in 0..d {
                    for j in 0..d {
                        row.push(s.covariance[(i, j)]);
                    }
                }
                row.push(s.covariance_norm());
                row
            })
            .collect();
        io::write_table_csv(path, &header_refs, &rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = io::read_table_csv(path)?;
        // Header layout: t, d means, d² covariance entries, norm.
        let cols = header.len();
        let d = (0..=cols).find(|d| 2 + d + d * d == cols).ok_or_else(|| {
            Error::Parse(format!("moment-trajectory header with {cols} columns has no valid dimension"))
        })?;
        let samples = rows
            .into_iter()
            .map(|row| {
                let mean = DVector::from_iterator(d, row[1..1 + d].iter().copied());
                let covariance = DMatrix::from_row_iterator(d, d, row[1 + d..1 + d + d * d].iter().copied());
                (row[0], MomentState { mean, covariance })
            })
            .collect();
        Ok(Self { samples })
    }
}

/// Fixed-step RK4 trajectory of the moment system. The covariance is
/// re-symmetrized every step; eigenvalues below −1e-8·‖C‖ abort.
pub fn integrate_moments(
    state0: &MomentState,
    y: &DVector<f64>,
    params: &StabilizationParams,
    cfg: &FlowConfig,
) -> Result<MomentTrajectory> {
    cfg.validate()?;
    if y.len() != state0.dim() || params.dim() != state0.dim() {
        return Err(Error::DimensionMismatch(format!(
            "moment state dimension {} vs data {} vs Σ {}",
            state0.dim(),
            y.len(),
            params.dim()
        )));
    }

    let ratio = cfg.t_final / cfg.step;
    let full_steps = (ratio + 1e-9 * ratio.max(1.0)).floor() as usize;
    let remainder = cfg.t_final - full_steps as f64 * cfg.step;
    let tail = remainder > 1e-9 * cfg.step;
    let total_steps = full_steps + usize::from(tail);

    let mut state = state0.clone();
    let mut trajectory = MomentTrajectory::default();
    trajectory.samples.push((0.0, state.clone()));

    for step_index in 0..total_steps {
        let h = if step_index < full_steps { cfg.step } else { remainder };
        state = rk4_moment_step(&state, y, params, h);

        let finite = state.mean.iter().all(|x| x.is_finite())
            && state.covariance.iter().all(|x| x.is_finite());
        let t_next = if step_index + 1 == total_steps {
            cfg.t_final
        } else {
            (step_index + 1) as f64 * cfg.step
        };
        if !finite {
            return Err(Error::Divergence {
                t: t_next,
                detail: "non-finite moment state".into(),
            });
        }
        let scale = state.covariance.amax();
        let min_eig = state.covariance.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-8 * scale.max(1.0) {
            return Err(Error::Divergence {
                t: t_next,
                detail: format!("covariance lost positive semi-definiteness (min eigenvalue {min_eig:.3e})"),
            });
        }

        if (step_index + 1) % cfg.trace_stride == 0 || step_index + 1 == total_steps {
            trajectory.samples.push((t_next, state.clone()));
        }
    }
    Ok(trajectory)
}

fn rk4_moment_step(
    state: &MomentState,
    y: &DVector<f64>,
    params: &StabilizationParams,
    h: f64,
) -> MomentState {
    let shift = |base: &MomentState, scale: f64, dm: &DVector<f64>, dc: &DMatrix<f64>| MomentState {
        mean: &base.mean + scale * dm,
        covariance: &base.covariance + scale * dc,
    };
    let (k1m, k1c) = moment_rhs(state, y, params);
    let s2 = shift(state, 0.5 * h, &k1m, &k1c);
    let (k2m, k2c) = moment_rhs(&s2, y, params);
    let s3 = shift(state, 0.5 * h, &k2m, &k2c);
    let (k3m, k3c) = moment_rhs(&s3, y, params);
    let s4 = shift(state, h, &k3m, &k3c);
    let (k4m, k4c) = moment_rhs(&s4, y, params);

    let mean = &state.mean + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
    let covariance = &state.covariance + (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
    let covariance = (&covariance + covariance.transpose()) / 2.0;
    MomentState { mean, covariance }
}
