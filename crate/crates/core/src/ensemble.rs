//! Ensemble containers and the statistical primitives every solver variant
//! consumes: means, covariances, misfit, spread and subspace distance.
//!
//! All covariances use the 1/J normalization (no Bessel correction); the
//! moment-system analysis relies on exactly that scaling. Summations run in
//! fixed member-index order so results are reproducible regardless of how
//! callers parallelize around them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;

/// Collection of J candidate controls in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<DVector<f64>>,
    dim: usize,
}

impl Ensemble {
    /// Builds an ensemble, checking that it is nonempty, rectangular and
    /// free of NaN/Inf entries.
    pub fn new(members: Vec<DVector<f64>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble must have at least one member".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("ensemble members must be nonempty".into()));
        }
        for (j, m) in members.iter().enumerate() {
            if m.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "member {j} has length {}, expected {dim}",
                    m.len()
                )));
            }
            if !m.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("member {j} has non-finite entries")));
            }
        }
        Ok(Self { members, dim })
    }

    /// Internal constructor for integrator stages; finiteness is enforced
    /// once per accepted step instead of once per stage.
    pub(crate) fn from_members_unchecked(members: Vec<DVector<f64>>, dim: usize) -> Self {
        Self { members, dim }
    }

    /// Draws J members with i.i.d. N(0, std_dev^2) entries, filled in
    /// member-major order.
    pub fn sample_normal<R: Rng>(count: usize, dim: usize, std_dev: f64, rng: &mut R) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::InvalidInput("ensemble shape must be positive".into()));
        }
        let members = (0..count)
            .map(|_| DVector::from_fn(dim, |_, _| std_dev * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Ok(Self { members, dim })
    }

    /// Draws J members with i.i.d. U([lo, hi]) entries.
    pub fn sample_uniform<R: Rng>(count: usize, dim: usize, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::InvalidInput("ensemble shape must be positive".into()));
        }
        if lo >= hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidInput(format!("empty uniform range [{lo}, {hi}]")));
        }
        let members = (0..count)
            .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(lo..=hi)))
            .collect();
        Ok(Self { members, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[DVector<f64>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<DVector<f64>> {
        self.members
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Ensemble mean (1/J) Σ_j u^j.
    pub fn mean(&self) -> DVector<f64> {
        mean_of(&self.members, self.dim)
    }

    /// Member deviations from the mean, stacked as the d×J matrix Ũ.
    pub fn centered(&self) -> DMatrix<f64> {
        centered_matrix(&self.members, self.dim, &self.mean())
    }

    /// State covariance C(U) = (1/J) Σ_k (u^k − ū)(u^k − ū)ᵀ.
    pub fn state_covariance(&self) -> DMatrix<f64> {
        let centered = self.centered();
        let j = self.member_count() as f64;
        &centered * centered.transpose() / j
    }
}

/// Forward evaluations G(u^j) of one ensemble, J vectors in R^K.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    responses: Vec<DVector<f64>>,
    dim: usize,
}

impl ResponseSet {
    pub fn new(responses: Vec<DVector<f64>>) -> Result<Self> {
        let first = responses
            .first()
            .ok_or_else(|| Error::InvalidInput("response set must be nonempty".into()))?;
        let dim = first.len();
        for (j, r) in responses.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "response {j} has length {}, expected {dim}",
                    r.len()
                )));
            }
            if !r.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("response {j} has non-finite entries")));
            }
        }
        Ok(Self { responses, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.responses.len()
    }

    pub fn responses(&self) -> &[DVector<f64>] {
        &self.responses
    }

    /// Response mean (1/J) Σ_j G(u^j).
    pub fn mean(&self) -> DVector<f64> {
        mean_of(&self.responses, self.dim)
    }

    /// Response deviations from the mean, stacked as the K×J matrix G̃.
    pub fn centered(&self) -> DMatrix<f64> {
        centered_matrix(&self.responses, self.dim, &self.mean())
    }

    /// Response covariance D_G(U) = (1/J) Σ_k (G(u^k) − Ḡ)(G(u^k) − Ḡ)ᵀ.
    pub fn covariance(&self) -> DMatrix<f64> {
        let centered = self.centered();
        let j = self.count() as f64;
        &centered * centered.transpose() / j
    }
}

fn mean_of(vectors: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    for v in vectors {
        acc += v;
    }
    acc / vectors.len() as f64
}

fn centered_matrix(vectors: &[DVector<f64>], dim: usize, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.column_mut(j).copy_from(&(v - mean));
    }
    m
}

/// Cross covariance C_G(U) = (1/J) Σ_k (u^k − ū)(G(u^k) − Ḡ)ᵀ ∈ R^{d×K}.
pub fn cross_covariance(ens: &Ensemble, resp: &ResponseSet) -> Result<DMatrix<f64>> {
    if ens.member_count() != resp.count() {
        return Err(Error::DimensionMismatch(format!(
            "{} members vs {} responses",
            ens.member_count(),
            resp.count()
        )));
    }
    let j = ens.member_count() as f64;
    Ok(ens.centered() * resp.centered().transpose() / j)
}

/// Applies the cross-covariance gain to a K×n block: (1/J) Ũ G̃ᵀ V.
///
/// The d×K product is never materialized when J is small relative to d·K;
/// both association orders are exact, the cheaper one is chosen from the
/// operand shapes.
pub(crate) fn cross_gain(
    centered_states: &DMatrix<f64>,
    centered_responses: &DMatrix<f64>,
    block: &DMatrix<f64>,
) -> DMatrix<f64> {
    let j = centered_states.ncols();
    let d = centered_states.nrows();
    let k = centered_responses.nrows();
    if j * j <= d * k {
        centered_states * (centered_responses.tr_mul(block)) / j as f64
    } else {
        (centered_states * centered_responses.transpose() / j as f64) * block
    }
}

/// Observation-noise description stored as the precision matrix Γ.
///
/// The square root Γ^(1/2) and the covariance Γ⁻¹ are cached at construction;
/// the common Γ = γ⁻²·I case keeps a scalar fast path.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    precision: DMatrix<f64>,
    sqrt_precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    sqrt_covariance: DMatrix<f64>,
    /// Set when Γ = γ⁻²·I.
    gamma: Option<f64>,
}

impl NoiseModel {
    /// Γ = γ⁻²·I for a scalar noise standard deviation γ > 0.
    pub fn from_std_dev(dim: usize, gamma: f64) -> Result<Self> {
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(Error::Config(format!("noise std dev must be positive, got {gamma}")));
        }
        if dim == 0 {
            return Err(Error::Config("noise dimension must be positive".into()));
        }
        let prec = gamma.powi(-2);
        Ok(Self {
            precision: DMatrix::identity(dim, dim) * prec,
            sqrt_precision: DMatrix::identity(dim, dim) / gamma,
            covariance: DMatrix::identity(dim, dim) * gamma * gamma,
            sqrt_covariance: DMatrix::identity(dim, dim) * gamma,
            gamma: Some(gamma),
        })
    }

    /// Γ = I.
    pub fn identity(dim: usize) -> Self {
        Self::from_std_dev(dim, 1.0).expect("identity noise model")
    }

    /// Builds from a general symmetric positive-definite precision matrix.
    pub fn from_precision(precision: DMatrix<f64>) -> Result<Self> {
        let k = precision.nrows();
        if k == 0 || precision.ncols() != k {
            return Err(Error::Config("precision matrix must be square and nonempty".into()));
        }
        let scale = precision.amax();
        let asym = (&precision - precision.transpose()).amax();
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::Config(format!(
                "precision matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let eig = precision.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 0.0 || min_eig.is_nan() {
            return Err(Error::Config(format!(
                "precision matrix is not positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        let basis = &eig.eigenvectors;
        let transform = |f: fn(f64) -> f64| -> DMatrix<f64> {
            let scaled = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
            basis * scaled * basis.transpose()
        };
        Ok(Self {
            sqrt_precision: transform(f64::sqrt),
            covariance: transform(|x| 1.0 / x),
            sqrt_covariance: transform(|x| 1.0 / x.sqrt()),
            precision,
            gamma: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    /// Scalar γ when the model is the diagonal fast path Γ = γ⁻²·I.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Γ·v.
    pub fn apply_precision(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.gamma {
            Some(g) => v * g.powi(-2),
            None => &self.precision * v,
        }
    }

    /// Γ applied to every column of a matrix.
    pub fn apply_precision_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self.gamma {
            Some(g) => m * g.powi(-2),
            None => &self.precision * m,
        }
    }

    /// Γ^(1/2)·v.
    pub fn apply_sqrt(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.gamma {
            Some(g) => v / g,
            None => &self.sqrt_precision * v,
        }
    }

    /// ‖Γ^(1/2)·r‖.
    pub fn weighted_norm(&self, r: &DVector<f64>) -> f64 {
        match self.gamma {
            Some(g) => r.norm() / g,
            None => (&self.sqrt_precision * r).norm(),
        }
    }

    /// One draw η ~ N(0, Γ⁻¹).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        match self.gamma {
            Some(g) => xi * g,
            None => &self.sqrt_covariance * xi,
        }
    }
}

/// Measured data y with its noise description and synthesis metadata.
#[derive(Debug, Clone)]
pub struct Observation {
    pub y: DVector<f64>,
    pub noise: NoiseModel,
    /// Control the data was synthesized from, when known.
    pub truth: Option<DVector<f64>>,
    /// RNG seed used in synthesis, when applicable.
    pub seed: Option<u64>,
    /// Set when the data carries no noise (γ = 0 synthesis).
    pub noise_free: bool,
}

impl Observation {
    pub fn new(y: DVector<f64>, noise: NoiseModel) -> Result<Self> {
        if y.len() != noise.dim() {
            return Err(Error::DimensionMismatch(format!(
                "observation length {} vs noise dimension {}",
                y.len(),
                noise.dim()
            )));
        }
        if !y.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("observation has non-finite entries".into()));
        }
        Ok(Self { y, noise, truth: None, seed: None, noise_free: false })
    }

    pub fn with_truth(mut self, truth: DVector<f64>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

/// Least-squares misfit Φ(u, y) = ½‖Γ^(1/2)(y − G(u))‖².
pub fn misfit(u: &DVector<f64>, obs: &Observation, model: &dyn ForwardModel) -> Result<f64> {
    let g = model.apply(u)?;
    if g.len() != obs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model output {} vs observation {}",
            g.len(),
            obs.dim()
        )));
    }
    let r = &obs.y - g;
    let weighted = obs.noise.weighted_norm(&r);
    Ok(0.5 * weighted * weighted)
}

/// State- and response-space spreads around the ensemble means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    /// max_j ‖u^j − ū‖
    pub state: f64,
    /// max_j ‖Γ^(1/2)(G(u^j) − Ḡ)‖
    pub response: f64,
}

/// Ensemble spread; zero in both components iff all members (responses)
/// coincide.
pub fn spread(ens: &Ensemble, resp: &ResponseSet, noise: &NoiseModel) -> Result<Spread> {
    if ens.member_count() != resp.count() {
        return Err(Error::DimensionMismatch(format!(
            "{} members vs {} responses",
            ens.member_count(),
            resp.count()
        )));
    }
    let u_mean = ens.mean();
    let g_mean = resp.mean();
    let mut state: f64 = 0.0;
    let mut response: f64 = 0.0;
    for (u, g) in ens.members().iter().zip(resp.responses()) {
        state = state.max((u - &u_mean).norm());
        response = response.max(noise.weighted_norm(&(g - &g_mean)));
    }
    Ok(Spread { state, response })
}

/// Mean squared weighted response deviation (1/J) Σ_j ‖Γ^(1/2)(G(u^j) − Ḡ)‖².
///
/// This is the trace of the whitened response covariance, the quantity whose
/// large-time decay is O(J·t⁻¹) along the vanilla flow; the max-norm spread
/// above decays at half that log-log slope.
pub fn mean_square_response_deviation(resp: &ResponseSet, noise: &NoiseModel) -> f64 {
    let g_mean = resp.mean();
    let mut acc = 0.0;
    for g in resp.responses() {
        let w = noise.weighted_norm(&(g - &g_mean));
        acc += w * w;
    }
    acc / resp.count() as f64
}

/// Largest relative distance from a member of `ens` to the affine span of
/// `initial`: orthogonal-projection residual norm over member norm, with
/// 0/0 read as 0.
pub fn subspace_distance(ens: &Ensemble, initial: &Ensemble) -> Result<f64> {
    if ens.dim() != initial.dim() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble dimension {} vs initial dimension {}",
            ens.dim(),
            initial.dim()
        )));
    }
    let mean0 = initial.mean();
    let basis = orthonormal_range(&initial.centered());
    let mut worst: f64 = 0.0;
    for u in ens.members() {
        let v = u - &mean0;
        let residual = match &basis {
            Some(q) => &v - q * q.tr_mul(&v),
            None => v,
        };
        let r = residual.norm();
        let n = u.norm();
        let rel = if r == 0.0 { 0.0 } else { r / n };
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Orthonormal basis of the column range, rank-truncated by singular value.
fn orthonormal_range(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd.u?;
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return None;
    }
    let tol = smax * 1e-12 * (m.nrows().max(m.ncols()) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank == 0 {
        None
    } else {
        Some(u.columns(0, rank).into_owned())
    }
}
