//! Gaussian-process baseline with a squared-exponential kernel.
//!
//! Hyperparameters (signal variance s, length scale ℓ, noise variance σₙ²)
//! maximize the log marginal likelihood over a logarithmic grid followed by
//! coordinatewise refinement. The safety bound is the 2-σ lower bound
//! μ − 2√v of the latent function.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::SurfaceDataset;
use crate::error::{Error, Result};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_var: f64,
    pub length_scale: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn kernel(&self, a: Vec2, b: Vec2) -> f64 {
        self.signal_var * (-(a - b).norm_squared() / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Prior mean kind chosen at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanKind {
    Zero,
    /// ‖z − c‖ − r with c, r the centroid and mean radius of the surface
    /// points, so the prior itself is a signed distance to a circle.
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeanFunction {
    Zero,
    Spherical { center: Vec2, radius: f64 },
}

impl MeanFunction {
    pub fn value(&self, z: Vec2) -> f64 {
        match *self {
            MeanFunction::Zero => 0.0,
            MeanFunction::Spherical { center, radius } => (z - center).norm() - radius,
        }
    }

    pub fn gradient(&self, z: Vec2) -> Vec2 {
        match *self {
            MeanFunction::Zero => Vec2::zeros(),
            MeanFunction::Spherical { center, .. } => {
                let d = z - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec2::zeros()
                }
            }
        }
    }

    fn from_data(kind: MeanKind, data: &SurfaceDataset) -> Self {
        match kind {
            MeanKind::Zero => MeanFunction::Zero,
            MeanKind::Spherical => {
                let surface: Vec<Vec2> = data.samples.iter().filter(|s| s.y == 0.0).map(|s| s.z).collect();
                let pts = if surface.is_empty() {
                    data.inputs()
                } else {
                    surface
                };
                let n = pts.len() as f64;
                let center = pts.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
                let radius = pts.iter().map(|p| (p - center).norm()).sum::<f64>() / n;
                MeanFunction::Spherical { center, radius }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Training rows kept (uniform stride subsample).
    pub max_points: usize,
    /// Rows used for the hyperparameter search.
    pub search_points: usize,
    pub signal_var_range: [f64; 2],
    pub length_scale_range: [f64; 2],
    pub noise_var_range: [f64; 2],
    /// Grid sizes for (signal, length, noise).
    pub grid: [usize; 3],
    /// Refinement stops once the step falls below this many decades.
    pub refine_tolerance: f64,
    pub mean: MeanKind,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            max_points: 800,
            search_points: 200,
            signal_var_range: [1e-4, 10.0],
            length_scale_range: [0.03, 3.0],
            noise_var_range: [1e-8, 1e-2],
            grid: [7, 7, 5],
            refine_tolerance: 0.01,
            mean: MeanKind::Spherical,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("signal_var_range", self.signal_var_range),
            ("length_scale_range", self.length_scale_range),
            ("noise_var_range", self.noise_var_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name} must satisfy 0 < lo ≤ hi")));
            }
        }
        if self.max_points == 0 || self.search_points == 0 || self.grid.contains(&0) {
            return Err(Error::ConfigInvalid("GP sizes must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyper,
    pub mean: MeanFunction,
    inputs: Vec<Vec2>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpBounds {
    pub mean: f64,
    /// Latent-function variance (noise excluded).
    pub variance: f64,
    pub lower: f64,
}

fn kernel_matrix(x: &[Vec2], hyper: &GpHyper) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = hyper.kernel(x[i], x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyper.noise_var;
    }
    k
}

/// Log marginal likelihood of `y` (already centered by the prior mean);
/// `None` when the kernel matrix does not factor.
pub fn log_marginal_likelihood(x: &[Vec2], y: &[f64], hyper: &GpHyper) -> Option<f64> {
    let chol = Cholesky::new(kernel_matrix(x, hyper))?;
    let r = DVector::from_column_slice(y);
    let alpha = chol.solve(&r);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * x.len() as f64 * (std::f64::consts::TAU).ln();
    lml.is_finite().then_some(lml)
}

/// Indices ⌊i·n/k⌋ for i < k, or all of 0..n when n ≤ k.
pub fn stride_subsample(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

fn log_grid([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo.ln() + hi.ln()) / 2.0];
    }
    (0..n)
        .map(|i| lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Maximizes the log marginal likelihood over hyperparameters.
pub fn search_hyper(x: &[Vec2], y: &[f64], cfg: &GpConfig) -> Result<(GpHyper, f64)> {
    let ranges = [cfg.signal_var_range, cfg.length_scale_range, cfg.noise_var_range];
    let to_hyper = |p: [f64; 3]| GpHyper {
        signal_var: p[0].exp(),
        length_scale: p[1].exp(),
        noise_var: p[2].exp(),
    };
    let score = |p: [f64; 3]| log_marginal_likelihood(x, y, &to_hyper(p));

    let grids: Vec<Vec<f64>> = (0..3).map(|i| log_grid(ranges[i], cfg.grid[i])).collect();
    let mut best: Option<([f64; 3], f64)> = None;
    for &a in &grids[0] {
        for &b in &grids[1] {
            for &c in &grids[2] {
                if let Some(v) = score([a, b, c]) {
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some(([a, b, c], v));
                    }
                }
            }
        }
    }
    let (mut p, mut v) = best.ok_or_else(|| {
        Error::IllConditioned("no grid point gives a factorable kernel matrix".into())
    })?;

    let mut steps: Vec<f64> = (0..3)
        .map(|i| {
            let span = ranges[i][1].ln() - ranges[i][0].ln();
            span / (cfg.grid[i].max(2) - 1) as f64 / 2.0
        })
        .collect();
    let tol = cfg.refine_tolerance * std::f64::consts::LN_10;
    for _ in 0..200 {
        if steps.iter().all(|&s| s < tol) {
            break;
        }
        for i in 0..3 {
            if steps[i] < tol {
                continue;
            }
            let (lo, hi) = (ranges[i][0].ln(), ranges[i][1].ln());
            let mut improved = false;
            for dir in [1.0, -1.0] {
                let mut q = p;
                q[i] = (p[i] + dir * steps[i]).clamp(lo, hi);
                if q[i] == p[i] {
                    continue;
                }
                if let Some(qv) = score(q) {
                    if qv > v {
                        p = q;
                        v = qv;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                steps[i] /= 2.0;
            }
        }
    }
    Ok((to_hyper(p), v))
}

impl GpModel {
    /// Conditions on `(x, y)` with fixed hyperparameters.
    pub fn condition(x: Vec<Vec2>, y: &[f64], hyper: GpHyper, mean: MeanFunction) -> Result<Self> {
        assert_eq!(x.len(), y.len());
        let chol = Cholesky::new(kernel_matrix(&x, &hyper)).ok_or_else(|| {
            Error::IllConditioned(format!("kernel matrix does not factor at {hyper:?}"))
        })?;
        let r = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(z, y)| y - mean.value(*z)));
        let alpha = chol.solve(&r);
        Ok(GpModel {
            hyper,
            mean,
            inputs: x,
            alpha,
            chol,
        })
    }

    pub fn inputs(&self) -> &[Vec2] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn cross(&self, z: Vec2) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|x| self.hyper.kernel(z, *x)))
    }

    /// Posterior mean and latent variance at z.
    pub fn predict(&self, z: Vec2) -> (f64, f64) {
        let k = self.cross(z);
        let mean = self.mean.value(z) + k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).expect("Cholesky factor is invertible");
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        (mean, var)
    }

    pub fn predict_bounds(&self, z: Vec2) -> GpBounds {
        let (mean, variance) = self.predict(z);
        GpBounds {
            mean,
            variance,
            lower: mean - 2.0 * variance.sqrt(),
        }
    }

    /// Lower bound and its spatial gradient. Where the latent variance
    /// vanishes the square-root term is not differentiable and only the mean
    /// gradient is returned.
    pub fn lower_bound_gradient(&self, z: Vec2) -> (f64, Vec2) {
        let k = self.cross(z);
        let inv_l2 = 1.0 / (self.hyper.length_scale * self.hyper.length_scale);
        // ∂k_i/∂z = −k_i (z − x_i)/ℓ²
        let dk = DMatrix::from_fn(2, self.inputs.len(), |r, c| {
            -k[c] * (z[r] - self.inputs[c][r]) * inv_l2
        });
        let mean = self.mean.value(z) + k.dot(&self.alpha);
        let g_mean = self.mean.gradient(z) + &dk * &self.alpha;
        let w = self.chol.solve(&k);
        let var = (self.hyper.signal_var - k.dot(&w)).max(0.0);
        let sd = var.sqrt();
        let lower = mean - 2.0 * sd;
        if sd <= 1e-12 {
            return (lower, Vec2::new(g_mean[0], g_mean[1]));
        }
        let g_var = -2.0 * (&dk * &w);
        let g = g_mean - g_var / sd;
        (lower, Vec2::new(g[0], g[1]))
    }
}

/// Fits a GP to `data`: uniform-stride subsample to the caps, search the
/// hyperparameters on the smaller subset, condition on the larger one.
pub fn gp_fit(data: &SurfaceDataset, cfg: &GpConfig) -> Result<GpModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::ConfigInvalid("GP fit needs at least one point".into()));
    }
    let mean = MeanFunction::from_data(cfg.mean, data);
    let keep = stride_subsample(data.len(), cfg.max_points);
    if keep.len() < data.len() {
        log::debug!("GP training set capped at {} of {} rows", keep.len(), data.len());
    }
    let x: Vec<Vec2> = keep.iter().map(|&i| data.samples[i].z).collect();
    let y: Vec<f64> = keep.iter().map(|&i| data.samples[i].y).collect();
    let centered: Vec<f64> = x.iter().zip(&y).map(|(z, y)| y - mean.value(*z)).collect();

    let search = stride_subsample(x.len(), cfg.search_points);
    let xs: Vec<Vec2> = search.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = search.iter().map(|&i| centered[i]).collect();
    let (hyper, _) = search_hyper(&xs, &ys, cfg)?;
    GpModel::condition(x, &y, hyper, mean)
}
