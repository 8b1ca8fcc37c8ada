//! Forward-operator abstraction, the benchmark models, and noisy-data
//! synthesis.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::ensemble::{Ensemble, NoiseModel, Observation, ResponseSet};
use crate::error::{Error, Result};
use crate::parallel::map_members;
use crate::rng;

/// Map u ↦ G(u) from R^d to R^K.
///
/// Implementations must be pure and reentrant after construction; the
/// solvers evaluate members concurrently.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Evaluates G(u). Deterministic; rejects non-finite or misshaped input.
    fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Whether the map is exactly linear, G(u) = G·u.
    fn is_linear(&self) -> bool {
        false
    }

    /// Gᵀ·w for exactly linear models.
    fn apply_adjoint(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let _ = w;
        Err(Error::Config("model has no exact linear representation".into()))
    }

    /// Dense K×d matrix representation for exactly linear models; assembled
    /// on demand, potentially at O(d²) cost.
    fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        None
    }
}

fn check_input(u: &DVector<f64>, dim: usize) -> Result<()> {
    if u.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "input length {} vs model dimension {dim}",
            u.len()
        )));
    }
    if !u.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("model input has non-finite entries".into()));
    }
    Ok(())
}

/// Evaluates a model on every member, in member order.
pub fn evaluate_ensemble(model: &dyn ForwardModel, ens: &Ensemble) -> Result<ResponseSet> {
    if ens.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble dimension {} vs model input dimension {}",
            ens.dim(),
            model.input_dim()
        )));
    }
    let evaluated: Result<Vec<_>> = map_members(ens.members(), |u| model.apply(u))
        .into_iter()
        .collect();
    ResponseSet::new(evaluated?)
}

/// Exactly linear model G(u) = G·u.
#[derive(Debug, Clone)]
pub struct LinearModel {
    matrix: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Config("linear model matrix must be nonempty".into()));
        }
        if !matrix.iter().all(|x| x.is_finite()) {
            return Err(Error::Config("linear model matrix has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(u, self.input_dim())?;
        Ok(&self.matrix * u)
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply_adjoint(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(w, self.output_dim())?;
        Ok(self.matrix.tr_mul(w))
    }

    fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// Source-identification problem for −p″ + p = u on (0, π) with
/// p(0) = p(π) = 0, discretized with the three-point stencil on d interior
/// points. The forward map is u ↦ A⁻¹u with A = (1/h²)·tridiag(−1, 2, −1) + I,
/// so G = A⁻¹ and K = d.
#[derive(Debug, Clone)]
pub struct EllipticProblem {
    dim: usize,
    mesh_width: f64,
    diag: f64,
    off: f64,
    // Thomas-algorithm factorization of the constant-coefficient system,
    // shared by every solve.
    upper_ratio: Vec<f64>,
    pivot_inv: Vec<f64>,
}

/// Assembles the elliptic benchmark on d ≥ 2 interior points x_i = i·h,
/// h = π/(d+1).
pub fn build_elliptic(dim: usize) -> Result<EllipticProblem> {
    if dim < 2 {
        return Err(Error::Config(format!("elliptic grid needs at least 2 points, got {dim}")));
    }
    let h = std::f64::consts::PI / (dim + 1) as f64;
    let off = -1.0 / (h * h);
    let diag = 2.0 / (h * h) + 1.0;

    let mut upper_ratio = vec![0.0; dim - 1];
    let mut pivot_inv = vec![0.0; dim];
    pivot_inv[0] = 1.0 / diag;
    upper_ratio[0] = off / diag;
    for i in 1..dim {
        let pivot = diag - off * upper_ratio[i - 1];
        pivot_inv[i] = 1.0 / pivot;
        if i < dim - 1 {
            upper_ratio[i] = off * pivot_inv[i];
        }
    }

    Ok(EllipticProblem { dim, mesh_width: h, diag, off, upper_ratio, pivot_inv })
}

impl EllipticProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh_width(&self) -> f64 {
        self.mesh_width
    }

    /// Interior grid points x_i = i·h, i = 1..d.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.dim).map(|i| i as f64 * self.mesh_width).collect()
    }

    /// Dense system matrix A (for inspection and tests).
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            a[(i, i)] = self.diag;
            if i + 1 < self.dim {
                a[(i, i + 1)] = self.off;
                a[(i + 1, i)] = self.off;
            }
        }
        a
    }

    /// Solves A p = rhs with the cached factorization, O(d).
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut p = DVector::zeros(n);
        p[0] = rhs[0] * self.pivot_inv[0];
        for i in 1..n {
            p[i] = (rhs[i] - self.off * p[i - 1]) * self.pivot_inv[i];
        }
        for i in (0..n - 1).rev() {
            let next = p[i + 1];
            p[i] -= self.upper_ratio[i] * next;
        }
        p
    }
}

impl ForwardModel for EllipticProblem {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(u, self.dim)?;
        let p = self.solve(u);
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("elliptic solve produced non-finite values".into()));
        }
        Ok(p)
    }

    fn is_linear(&self) -> bool {
        true
    }

    // A is symmetric, so the adjoint is the same solve.
    fn apply_adjoint(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.apply(w)
    }

    /// A⁻¹ assembled column by column; O(d²) memory, only on request.
    fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        let mut e = DVector::zeros(self.dim);
        for j in 0..self.dim {
            e[j] = 1.0;
            g.column_mut(j).copy_from(&self.solve(&e));
            e[j] = 0.0;
        }
        Some(g)
    }
}

/// One bump objective of the two-objective benchmark:
/// G(u) = 1 − exp(−‖u − c‖²) on R², scalar-valued.
#[derive(Debug, Clone)]
pub struct DebObjective {
    center: [f64; 2],
}

impl DebObjective {
    pub fn center(&self) -> [f64; 2] {
        self.center
    }
}

/// The two competing bump objectives with centers ±(1/√2, 1/√2).
pub fn deb_pair() -> (DebObjective, DebObjective) {
    let c = std::f64::consts::FRAC_1_SQRT_2;
    (DebObjective { center: [c, c] }, DebObjective { center: [-c, -c] })
}

impl ForwardModel for DebObjective {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(u, 2)?;
        let dx = u[0] - self.center[0];
        let dy = u[1] - self.center[1];
        Ok(DVector::from_element(1, 1.0 - (-dx * dx - dy * dy).exp()))
    }
}

/// Synthesizes y = G(u†) + η with η ~ N(0, γ²·I) drawn componentwise from a
/// ChaCha8 stream at `seed`. γ = 0 produces noise-free data with Γ = I and
/// the noise-free flag set.
pub fn synthesize_observation(
    model: &dyn ForwardModel,
    truth: &DVector<f64>,
    gamma: f64,
    seed: u64,
) -> Result<Observation> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::Config(format!("noise level must be nonnegative, got {gamma}")));
    }
    let clean = model.apply(truth)?;
    let k = clean.len();
    let (y, noise, noise_free) = if gamma > 0.0 {
        let normal = Normal::new(0.0, gamma).expect("positive std dev");
        let mut stream = rng::seeded(seed);
        let mut perturbed = clean;
        for i in 0..k {
            perturbed[i] += normal.sample(&mut stream);
        }
        (perturbed, NoiseModel::from_std_dev(k, gamma)?, false)
    } else {
        (clean, NoiseModel::identity(k), true)
    };
    let mut obs = Observation::new(y, noise)?.with_truth(truth.clone());
    obs.seed = Some(seed);
    obs.noise_free = noise_free;
    Ok(obs)
}
