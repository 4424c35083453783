//! Barrier fields: the high-probability lower bound h^b of an obstacle's
//! signed distance, from either backend.

use crate::blr::{cbf_lower_bound_gradient, mean_gradient, Posterior};
use crate::error::Error;
use crate::feature_net::FeatureNet;
use crate::gp::GpModel;
use crate::Vec2;

pub trait BarrierField: Send + Sync {
    fn lower_bound(&self, z: Vec2) -> f64;

    /// h^b and ∇h^b at z.
    fn lower_bound_gradient(&self, z: Vec2) -> (f64, Vec2);

    /// Predictive mean and variance of the label at z (noise included).
    fn predict(&self, z: Vec2) -> (f64, f64);
}

/// Adapted posterior with a fixed confidence radius.
#[derive(Debug, Clone)]
pub struct MetaField<'a> {
    pub posterior: Posterior,
    pub beta: f64,
    pub net: &'a FeatureNet,
}

impl BarrierField for MetaField<'_> {
    fn lower_bound(&self, z: Vec2) -> f64 {
        let phi = self.net.forward(z);
        crate::blr::lower_bound_basis(&self.posterior, self.beta, &phi)
    }

    /// Falls back to the mean gradient where ‖φ‖_{Λ⁻¹} is below the guard.
    fn lower_bound_gradient(&self, z: Vec2) -> (f64, Vec2) {
        match cbf_lower_bound_gradient(&self.posterior, self.beta, z, self.net) {
            Ok(v) => v,
            Err(Error::NearSingularNorm { .. }) => (
                self.lower_bound(z),
                mean_gradient(&self.posterior, z, self.net),
            ),
            Err(e) => unreachable!("lower-bound gradient failed: {e}"),
        }
    }

    fn predict(&self, z: Vec2) -> (f64, f64) {
        self.posterior.predict_basis(&self.net.forward(z))
    }
}

impl BarrierField for GpModel {
    fn lower_bound(&self, z: Vec2) -> f64 {
        self.predict_bounds(z).lower
    }

    fn lower_bound_gradient(&self, z: Vec2) -> (f64, Vec2) {
        GpModel::lower_bound_gradient(self, z)
    }

    fn predict(&self, z: Vec2) -> (f64, f64) {
        let (m, v) = GpModel::predict(self, z);
        (m, v + self.hyper.noise_var)
    }
}
