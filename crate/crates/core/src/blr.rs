//! Bayesian linear regression on the network features.
//!
//! A [`Posterior`] is the Gaussian N(θ̄, σ²Λ⁻¹) over last-layer coefficients.
//! The prior is simply the posterior before any data. Every solve against Λ
//! goes through its cached Cholesky factor; Λ is never inverted explicitly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_net::FeatureNet;
use crate::stats::chi_square_quantile;
use crate::Vec2;

/// Label noise scale σ (meters).
pub const DEFAULT_SIGMA: f64 = 0.001;
/// δ giving 1 − 2δ = 0.95 coverage.
pub const DEFAULT_DELTA: f64 = 0.025;
/// Below this Λ⁻¹-norm the gradient of the bound term is not evaluated.
pub const GRAD_NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Posterior {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    sigma: f64,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub basis: DVector<f64>,
}

impl Posterior {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>, sigma: f64) -> Result<Self> {
        let d = mean.len();
        if precision.nrows() != d || precision.ncols() != d {
            return Err(Error::DomainError(format!(
                "precision is {}×{}, mean has length {d}",
                precision.nrows(),
                precision.ncols()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::DomainError(format!("σ must be positive, got {sigma}")));
        }
        let scale = precision.amax().max(1.0);
        if (&precision - precision.transpose()).amax() > 1e-10 * scale {
            return Err(Error::DomainError("precision matrix is not symmetric".into()));
        }
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            Error::NumericalBreakdown("precision matrix is not positive definite".into())
        })?;
        Ok(Posterior {
            mean,
            precision,
            sigma,
            chol,
        })
    }

    /// N(0, σ²(scale·I)⁻¹).
    pub fn isotropic(d: usize, scale: f64, sigma: f64) -> Result<Self> {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d) * scale, sigma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.mean.clone(), self.precision.clone(), sigma)
    }

    /// Λ' = Λ + FFᵀ, θ̄' = Λ'⁻¹(F·y + Λθ̄), with the features of each sample
    /// in a column of `features` (d × n).
    pub fn update_with_features(&self, features: &DMatrix<f64>, targets: &[f64]) -> Result<Self> {
        assert_eq!(features.ncols(), targets.len(), "one target per feature column");
        if targets.is_empty() {
            return Ok(self.clone());
        }
        if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite features or targets".into()));
        }
        let mut precision = self.precision.clone();
        precision += features * features.transpose();
        symmetrize(&mut precision);
        let y = DVector::from_column_slice(targets);
        let rhs = features * y + &self.precision * &self.mean;
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            Error::NumericalBreakdown("updated precision lost positive definiteness".into())
        })?;
        let mean = chol.solve(&rhs);
        Ok(Posterior {
            mean,
            precision,
            sigma: self.sigma,
            chol,
        })
    }

    /// Conditions on a batch of (z, y) through the feature network.
    pub fn update(&self, batch: &[(Vec2, f64)], net: &FeatureNet) -> Result<Self> {
        if batch.is_empty() {
            return Ok(self.clone());
        }
        let pts: Vec<Vec2> = batch.iter().map(|b| b.0).collect();
        let ys: Vec<f64> = batch.iter().map(|b| b.1).collect();
        self.update_with_features(&net.forward_batch(&pts), &ys)
    }

    /// Λ⁻¹a.
    pub fn solve(&self, a: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(a)
    }

    /// ‖a‖²_{Λ⁻¹} = aᵀΛ⁻¹a, from one triangular solve.
    pub fn inv_quad_form(&self, a: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let y = l
            .solve_lower_triangular(a)
            .expect("Cholesky factor has a nonzero diagonal");
        y.norm_squared()
    }

    /// ln det Λ from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// (smallest, largest) eigenvalue of Λ.
    pub fn eigen_range(&self) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.precision.clone());
        let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Predictive (mean, variance) for a precomputed basis vector.
    pub fn predict_basis(&self, phi: &DVector<f64>) -> (f64, f64) {
        let mean = self.mean.dot(phi);
        let var = self.sigma * self.sigma * (1.0 + self.inv_quad_form(phi));
        (mean, var)
    }

    /// μ = θ̄ᵀφ(z), Σ = σ²(1 + φᵀΛ⁻¹φ).
    pub fn predict(&self, z: Vec2, net: &FeatureNet) -> Result<Prediction> {
        let basis = net.forward(z);
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite basis vector".into()));
        }
        let (mean, variance) = self.predict_basis(&basis);
        Ok(Prediction {
            mean,
            variance,
            basis,
        })
    }

    pub fn to_data(&self) -> PosteriorData {
        PosteriorData {
            d: self.dim(),
            sigma: self.sigma,
            mean: self.mean.as_slice().to_vec(),
            precision: self.precision.as_slice().to_vec(),
        }
    }

    pub fn from_data(data: &PosteriorData) -> Result<Self> {
        let d = data.d;
        if data.mean.len() != d || data.precision.len() != d * d {
            return Err(Error::FormatMismatch("posterior array lengths disagree with d".into()));
        }
        Self::new(
            DVector::from_column_slice(&data.mean),
            DMatrix::from_column_slice(d, d, &data.precision),
            data.sigma,
        )
    }
}

/// Plain serialized form of a [`Posterior`] (precision column-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorData {
    pub d: usize,
    pub sigma: f64,
    pub mean: Vec<f64>,
    pub precision: Vec<f64>,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Prior-side quantities of the confidence radius, computed once per prior.
#[derive(Debug, Clone)]
pub struct ConfidenceBound {
    delta: f64,
    sigma: f64,
    dim: usize,
    prior_log_det: f64,
    prior_max_eig: f64,
    chi2: f64,
}

impl ConfidenceBound {
    pub fn new(prior: &Posterior, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::DomainError(format!("δ must lie in (0, 0.5), got {delta}")));
        }
        Ok(ConfidenceBound {
            delta,
            sigma: prior.sigma,
            dim: prior.dim(),
            prior_log_det: prior.log_det(),
            prior_max_eig: prior.eigen_range().1,
            chi2: chi_square_quantile(prior.dim() as u32, 1.0 - delta)?,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// β = σ(√(2 ln(δ⁻¹·det(Λ)^½/det(Λ₀)^½)) + √(λ̄(Λ₀)/λ̲(Λ)·χ²_d(1−δ))).
    pub fn radius(&self, post: &Posterior) -> Result<f64> {
        if post.dim() != self.dim || post.sigma != self.sigma {
            return Err(Error::DomainError(
                "posterior and prior disagree on d or σ".into(),
            ));
        }
        let radicand = 2.0 * ((1.0 / self.delta).ln() + 0.5 * (post.log_det() - self.prior_log_det));
        if !(radicand >= 0.0) {
            return Err(Error::DomainError(format!(
                "log-determinant term is negative ({radicand:e}); posterior precision below prior"
            )));
        }
        let (min_eig, _) = post.eigen_range();
        if !(min_eig > 0.0) {
            return Err(Error::NumericalBreakdown("posterior precision not positive".into()));
        }
        let ratio = self.prior_max_eig / min_eig;
        Ok(self.sigma * (radicand.sqrt() + (ratio * self.chi2).sqrt()))
    }
}

/// Confidence radius β of `post` relative to `prior` at level δ.
pub fn confidence_radius(post: &Posterior, prior: &Posterior, delta: f64) -> Result<f64> {
    ConfidenceBound::new(prior, delta)?.radius(post)
}

/// h^b for a basis vector: θ̄ᵀφ − β‖φ‖_{Λ⁻¹}.
pub fn lower_bound_basis(post: &Posterior, beta: f64, phi: &DVector<f64>) -> f64 {
    post.mean.dot(phi) - beta * post.inv_quad_form(phi).sqrt()
}

/// h^b at the point z = v(x).
pub fn cbf_lower_bound(post: &Posterior, beta: f64, z: Vec2, net: &FeatureNet) -> Result<f64> {
    let phi = net.forward(z);
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite basis vector".into()));
    }
    Ok(lower_bound_basis(post, beta, &phi))
}

/// h^b and ∇_z h^b = Jᵀθ̄ − β·JᵀΛ⁻¹φ/‖φ‖_{Λ⁻¹}.
///
/// Fails with [`Error::NearSingularNorm`] when ‖φ‖_{Λ⁻¹} ≤ [`GRAD_NORM_GUARD`];
/// see [`mean_gradient`] for the fallback.
pub fn cbf_lower_bound_gradient(
    post: &Posterior,
    beta: f64,
    z: Vec2,
    net: &FeatureNet,
) -> Result<(f64, Vec2)> {
    let (phi, jac) = net.forward_with_jacobian(z);
    let w = post.solve(&phi);
    let norm = phi.dot(&w).max(0.0).sqrt();
    let value = post.mean.dot(&phi) - beta * norm;
    if norm <= GRAD_NORM_GUARD {
        return Err(Error::NearSingularNorm { norm });
    }
    let g_mean = jac.tr_mul(&post.mean);
    let g_norm = jac.tr_mul(&w) / norm;
    let g = g_mean - g_norm * beta;
    Ok((value, Vec2::new(g[0], g[1])))
}

/// ∇_z μ = Jᵀθ̄, the mean-only gradient.
pub fn mean_gradient(post: &Posterior, z: Vec2, net: &FeatureNet) -> Vec2 {
    let g = net.input_jacobian(z).tr_mul(&post.mean);
    Vec2::new(g[0], g[1])
}

/// Mean over the test set of ½[ln(2πΣ) + (y − μ)²/Σ].
pub fn negative_log_likelihood(post: &Posterior, testset: &[(Vec2, f64)], net: &FeatureNet) -> f64 {
    assert!(!testset.is_empty(), "NLL needs test points");
    let pts: Vec<Vec2> = testset.iter().map(|t| t.0).collect();
    let feats = net.forward_batch(&pts);
    let total: f64 = testset
        .iter()
        .enumerate()
        .map(|(k, &(_, y))| {
            let phi = feats.column(k).into_owned();
            let (mu, var) = post.predict_basis(&phi);
            gaussian_nll(y, mu, var)
        })
        .sum();
    total / testset.len() as f64
}

/// ½[ln(2πΣ) + (y − μ)²/Σ].
pub fn gaussian_nll(y: f64, mean: f64, variance: f64) -> f64 {
    0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + (y - mean).powi(2) / variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_net::NetSpec;
    use approx::assert_relative_eq;

    #[test]
    fn empty_update_is_identity() {
        let prior = Posterior::isotropic(3, 2.0, 0.1).unwrap();
        let post = prior.update_with_features(&DMatrix::zeros(3, 0), &[]).unwrap();
        assert_eq!(post.mean(), prior.mean());
        assert_eq!(post.precision(), prior.precision());
    }

    #[test]
    fn zero_basis_prediction() {
        let net = FeatureNet::zeros(NetSpec::new(vec![4], 3, crate::feature_net::Activation::Tanh));
        let prior = Posterior::isotropic(3, 1.0, 0.01).unwrap();
        let p = prior.predict(Vec2::new(0.2, 0.3), &net).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_relative_eq!(p.variance, 1e-4, epsilon = 1e-18);
        assert_eq!(cbf_lower_bound(&prior, 3.0, Vec2::new(0.2, 0.3), &net).unwrap(), 0.0);
    }

    #[test]
    fn unit_basis_doubles_noise() {
        let prior = Posterior::isotropic(4, 1.0, 0.3).unwrap();
        let mut e1 = DVector::zeros(4);
        e1[0] = 1.0;
        let (mu, var) = prior.predict_basis(&e1);
        assert_eq!(mu, 0.0);
        assert_relative_eq!(var, 2.0 * 0.09, epsilon = 1e-15);
    }

    #[test]
    fn radius_without_data() {
        let prior = Posterior::isotropic(2, 1.0, 1.0).unwrap();
        let beta = confidence_radius(&prior, &prior, 0.05).unwrap();
        let expect = (2.0 * 20f64.ln()).sqrt() + chi_square_quantile(2, 0.95).unwrap().sqrt();
        assert_relative_eq!(beta, expect, epsilon = 1e-10);
        assert!((beta - 4.8955).abs() < 1e-4);
    }

    #[test]
    fn radius_scales_with_sigma() {
        let prior = Posterior::isotropic(3, 0.5, 0.2).unwrap();
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 0.5, 0.7, 0.1]);
        let post = prior.update_with_features(&f, &[0.1, -0.2]).unwrap();
        let b1 = confidence_radius(&post, &prior, 0.05).unwrap();
        let b2 = confidence_radius(&post.with_sigma(0.4).unwrap(), &prior.with_sigma(0.4).unwrap(), 0.05)
            .unwrap();
        assert_relative_eq!(b2, 2.0 * b1, epsilon = 1e-14);
    }

    #[test]
    fn radius_rejects_precision_below_prior() {
        let prior = Posterior::isotropic(2, 1.0, 1.0).unwrap();
        let shrunk = Posterior::isotropic(2, 1e-3, 1.0).unwrap();
        assert!(matches!(
            confidence_radius(&shrunk, &prior, 0.4),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn nll_zero_residual() {
        let sigma: f64 = 0.01;
        assert_relative_eq!(
            gaussian_nll(0.3, 0.3, sigma * sigma),
            0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
        );
        assert!(gaussian_nll(1.0, 0.0, 1.0) > gaussian_nll(0.5, 0.0, 1.0));
    }

    #[test]
    fn serialized_round_trip() {
        let prior = Posterior::isotropic(3, 0.5, 0.2).unwrap();
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 0.5, 0.7, 0.1]);
        let post = prior.update_with_features(&f, &[0.1, -0.2]).unwrap();
        let back = Posterior::from_data(&post.to_data()).unwrap();
        assert_eq!(back.mean(), post.mean());
        assert_eq!(back.precision(), post.precision());
    }

    #[test]
    fn non_spd_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Posterior::new(DVector::zeros(2), m, 1.0),
            Err(Error::NumericalBreakdown(_))
        ));
    }
}
