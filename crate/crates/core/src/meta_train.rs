//! Offline meta-training of the feature network and the coefficient prior.
//!
//! Each iteration draws J single-obstacle tasks, scans them from a ring of
//! poses, splits every task into adaptation and evaluation points, and takes
//! one Adam step on the summed Gaussian negative log marginal likelihood of
//! the evaluation points under the adapted posterior, plus the regularizer
//! γ‖Λ⁻¹‖²_F‖Λ₀⁻¹‖²_F. Gradients are exact: they are propagated by hand
//! through the posterior update into θ̄₀, the Cholesky-like factor L of
//! Λ₀ = LLᵀ + εI, and the network weights.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blr::{ConfidenceBound, Posterior, DEFAULT_DELTA, DEFAULT_SIGMA};
use crate::dataset::{build_offset_dataset, OffsetConfig, SurfaceDataset};
use crate::environment::{Bounds, DistributionParams, EnvironmentSpec, Obstacle};
use crate::error::{Error, Result};
use crate::feature_net::{FeatureNet, NetGradient, NetSpec};
use crate::lidar::{cast_scan, LidarConfig, Pose};
use crate::Vec2;

const BUNDLE_MAGIC: &[u8; 8] = b"CBFM\x00\x01\x00\x00";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over `warmup` iterations, then cosine decay to
    /// `final_fraction` of the base rate at the last iteration.
    WarmupCosine { warmup: usize, final_fraction: f64 },
}

impl LrSchedule {
    pub fn factor(&self, iteration: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::WarmupCosine {
                warmup,
                final_fraction,
            } => {
                if iteration < warmup {
                    return (iteration + 1) as f64 / warmup as f64;
                }
                let span = total.saturating_sub(warmup).max(1) as f64;
                let progress = ((iteration - warmup) as f64 / span).min(1.0);
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub n_iterations: usize,
    pub tasks_per_iteration: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub gamma: f64,
    /// ε in Λ₀ = LLᵀ + εI.
    pub lambda0_epsilon: f64,
    /// Λ₀ at initialization is this multiple of the identity.
    pub init_prior_precision: f64,
    /// Multiplier on the output-layer weights at initialization.
    pub init_output_gain: f64,
    pub sigma: f64,
    pub seed: u64,
    pub net: NetSpec,
    /// Anchors kept per task per iteration (random subset); bounds the cost
    /// of one step.
    pub anchors_per_task: usize,
    pub ring_radius: f64,
    pub ring_poses: usize,
    pub distribution: DistributionParams,
    pub lidar: LidarConfig,
    pub offsets: OffsetConfig,
    /// Every `probe_every` iterations the mean β over the probe tasks is
    /// logged; 0 disables probing.
    pub probe_every: usize,
    pub probe_tasks: usize,
    pub probe_anchors: usize,
    pub probe_delta: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            n_iterations: 30_000,
            tasks_per_iteration: 4,
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            gamma: 1e-9,
            lambda0_epsilon: 1e-6,
            init_prior_precision: 0.03,
            init_output_gain: 10.0,
            sigma: DEFAULT_SIGMA,
            seed: 0,
            net: NetSpec::default(),
            anchors_per_task: 24,
            ring_radius: 2.0,
            ring_poses: 8,
            distribution: DistributionParams::default(),
            lidar: LidarConfig::default(),
            offsets: OffsetConfig::default(),
            probe_every: 100,
            probe_tasks: 10,
            probe_anchors: 10,
            probe_delta: DEFAULT_DELTA,
        }
    }
}

impl MetaConfig {
    /// Reduced budget for single-machine runs.
    pub fn desk_scale() -> Self {
        MetaConfig {
            n_iterations: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks_per_iteration == 0 {
            return Err(Error::ConfigInvalid("tasks_per_iteration must be ≥ 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::ConfigInvalid("gamma must be ≥ 0".into()));
        }
        if !(self.lambda0_epsilon > 0.0 && self.init_prior_precision > 0.0 && self.sigma > 0.0) {
            return Err(Error::ConfigInvalid(
                "lambda0_epsilon, init_prior_precision and sigma must be > 0".into(),
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid("learning rate must be > 0".into()));
        }
        if self.anchors_per_task == 0 || self.ring_poses == 0 || !(self.ring_radius > 0.0) {
            return Err(Error::ConfigInvalid("task geometry must be nonempty".into()));
        }
        self.net.validate()?;
        self.distribution.validate()?;
        self.lidar.validate()?;
        self.offsets.validate()
    }
}

/// Trainable meta-parameters (w, θ̄₀, L) plus the fixed σ and ε.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    pub net: FeatureNet,
    pub theta0: DVector<f64>,
    /// Lower-triangular; entries above the diagonal stay zero.
    pub l: DMatrix<f64>,
    pub sigma: f64,
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    d: usize,
    sigma: f64,
    epsilon: f64,
    theta0: Vec<f64>,
    /// Column-major d × d.
    l: Vec<f64>,
    net_bytes: usize,
}

impl MetaParams {
    pub fn init(cfg: &MetaConfig) -> Self {
        let d = cfg.net.output_dim;
        let mut net = FeatureNet::init(cfg.net.clone(), cfg.seed ^ 0x6e65_745f_696e_6974);
        if let Some(last) = net.layers_mut().last_mut() {
            last.weight *= cfg.init_output_gain;
        }
        MetaParams {
            net,
            theta0: DVector::zeros(d),
            l: DMatrix::identity(d, d) * cfg.init_prior_precision.sqrt(),
            sigma: cfg.sigma,
            epsilon: cfg.lambda0_epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn lambda0(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = &self.l * self.l.transpose() + DMatrix::identity(d, d) * self.epsilon;
        crate::blr::symmetrize(&mut m);
        m
    }

    pub fn prior(&self) -> Result<Posterior> {
        Posterior::new(self.theta0.clone(), self.lambda0(), self.sigma)
    }

    fn n_lower(&self) -> usize {
        let d = self.dim();
        d * (d + 1) / 2
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params() + self.dim() + self.n_lower()
    }

    /// [w, θ̄₀, lower(L) column by column].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.net.params_flat();
        v.extend_from_slice(self.theta0.as_slice());
        let d = self.dim();
        for c in 0..d {
            for r in c..d {
                v.push(self.l[(r, c)]);
            }
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.n_params(), "flat meta-parameter length");
        let nw = self.net.n_params();
        self.net.set_params_flat(&v[..nw]);
        let d = self.dim();
        self.theta0.as_mut_slice().copy_from_slice(&v[nw..nw + d]);
        let mut k = nw + d;
        for c in 0..d {
            for r in c..d {
                self.l[(r, c)] = v[k];
                k += 1;
            }
        }
    }

    /// Bundle layout: 8-byte magic, u64 LE header length, JSON header, then
    /// the feature-network checkpoint.
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = self.net.to_bytes();
        let header = BundleHeader {
            d: self.dim(),
            sigma: self.sigma,
            epsilon: self.epsilon,
            theta0: self.theta0.as_slice().to_vec(),
            l: self.l.as_slice().to_vec(),
            net_bytes: net.len(),
        };
        let json = serde_json::to_vec(&header).expect("bundle header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + net.len());
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&net);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::FormatMismatch(format!("meta bundle: {m}"));
        if bytes.len() < 16 || &bytes[..8] != BUNDLE_MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: BundleHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let net_bytes = &body[hlen..];
        if net_bytes.len() != header.net_bytes {
            return Err(bad("network section length"));
        }
        let net = FeatureNet::from_bytes(net_bytes)?;
        let d = header.d;
        if net.output_dim() != d || header.theta0.len() != d || header.l.len() != d * d {
            return Err(bad("dimension mismatch"));
        }
        let params = MetaParams {
            net,
            theta0: DVector::from_vec(header.theta0),
            l: DMatrix::from_vec(d, d, header.l),
            sigma: header.sigma,
            epsilon: header.epsilon,
        };
        params.prior()?;
        Ok(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::ArtifactWriteFailure {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Gradient of the meta-loss, laid out like [`MetaParams`].
#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub net: NetGradient,
    pub theta0: DVector<f64>,
    pub l: DMatrix<f64>,
}

impl MetaGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.net.to_flat();
        v.extend_from_slice(self.theta0.as_slice());
        let d = self.theta0.len();
        for c in 0..d {
            for r in c..d {
                v.push(self.l[(r, c)]);
            }
        }
        v
    }
}

/// One task split into adaptation and evaluation points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskBatch {
    pub train: Vec<(Vec2, f64)>,
    pub test: Vec<(Vec2, f64)>,
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `count` poses evenly spaced on a circle about `center`, each facing it.
pub fn ring_poses(center: Vec2, radius: f64, count: usize, phase: f64) -> Vec<Pose> {
    (0..count)
        .map(|k| {
            let a = phase + TAU * k as f64 / count as f64;
            let p = center + Vec2::new(a.cos(), a.sin()) * radius;
            Pose::new(p.x, p.y, wrap(a + std::f64::consts::PI))
        })
        .collect()
}

fn wrap(a: f64) -> f64 {
    crate::environment::wrap_angle(a)
}

/// Union of offset datasets from scans of a lone obstacle at `poses`.
pub fn build_task<R: RngCore + ?Sized>(
    obstacle: &Obstacle,
    lidar: &LidarConfig,
    offsets: &OffsetConfig,
    poses: &[Pose],
    rng: &mut R,
) -> Result<SurfaceDataset> {
    let env = EnvironmentSpec::new(vec![obstacle.clone()], Bounds::square(1e6), 0);
    let mut data = SurfaceDataset::default();
    for &pose in poses {
        let scan = cast_scan(&env, pose, lidar, rng);
        data.append(&build_offset_dataset(&scan, offsets));
    }
    if data.is_empty() {
        return Err(Error::EmptyTask);
    }
    Ok(data)
}

/// Draws an obstacle and builds its task from a randomly phased pose ring.
pub fn sample_task<R: Rng + ?Sized>(cfg: &MetaConfig, rng: &mut R) -> Result<(Obstacle, SurfaceDataset)> {
    let obstacle = cfg.distribution.sample_obstacle(rng);
    let phase = rng.random_range(0.0..TAU);
    let poses = ring_poses(obstacle.centroid(), cfg.ring_radius, cfg.ring_poses, phase);
    let data = build_task(&obstacle, &cfg.lidar, &cfg.offsets, &poses, rng)?;
    Ok((obstacle, data))
}

/// Keeps at most `max_anchors` random anchor groups, in their original
/// order.
pub fn subsample_anchors<R: Rng + ?Sized>(
    data: &SurfaceDataset,
    max_anchors: usize,
    rng: &mut R,
) -> SurfaceDataset {
    let groups: Vec<_> = data.anchor_groups().collect();
    if groups.len() <= max_anchors {
        return data.clone();
    }
    let mut idx: Vec<usize> = (0..groups.len()).collect();
    idx.shuffle(rng);
    idx.truncate(max_anchors);
    idx.sort_unstable();
    SurfaceDataset {
        samples: idx.iter().flat_map(|&i| groups[i].iter().copied()).collect(),
    }
}

/// Random split by surface anchor: n_tr anchor groups, uniform on
/// {1, …, n_j}, go to adaptation and the rest to evaluation.
pub fn split_task<R: Rng + ?Sized>(data: &SurfaceDataset, rng: &mut R) -> TaskBatch {
    let mut groups: Vec<_> = data.anchor_groups().collect();
    if groups.is_empty() {
        return TaskBatch::default();
    }
    groups.shuffle(rng);
    let n_tr = rng.random_range(1..=groups.len());
    let pairs = |gs: &[&[crate::dataset::Sample]]| -> Vec<(Vec2, f64)> {
        gs.iter().flat_map(|g| g.iter().map(|s| (s.z, s.y))).collect()
    };
    TaskBatch {
        train: pairs(&groups[..n_tr]),
        test: pairs(&groups[n_tr..]),
    }
}

/// Meta-loss and its exact gradient over a batch of tasks.
pub fn meta_loss(params: &MetaParams, tasks: &[TaskBatch], gamma: f64) -> Result<(f64, MetaGradient)> {
    let d = params.dim();
    let sigma2 = params.sigma * params.sigma;
    let lambda0 = params.lambda0();
    let chol0 = Cholesky::new(lambda0.clone())
        .ok_or_else(|| Error::NumericalBreakdown("Λ₀ lost positive definiteness".into()))?;
    let lambda0_inv = chol0.inverse();
    let lambda0_inv_fro2 = lambda0_inv.norm_squared();
    let lambda0_inv3 = &lambda0_inv * &lambda0_inv * &lambda0_inv;

    // One forward pass over every point of every task.
    let points: Vec<Vec2> = tasks
        .iter()
        .flat_map(|t| t.train.iter().chain(&t.test).map(|p| p.0))
        .collect();
    let trace = params.net.forward_trace(&points);
    let feats = trace.output();
    let mut adjoints = DMatrix::zeros(d, points.len());

    let mut loss = 0.0;
    let mut g_theta0 = DVector::zeros(d);
    let mut g_lambda0 = DMatrix::zeros(d, d);
    let mut offset = 0;
    for task in tasks {
        let n_tr = task.train.len();
        let n_ts = task.test.len();
        let phi = feats.columns(offset, n_tr).into_owned();
        let psi = feats.columns(offset + n_tr, n_ts).into_owned();
        let g = DVector::from_iterator(n_tr, task.train.iter().map(|p| p.1));
        let y = DVector::from_iterator(n_ts, task.test.iter().map(|p| p.1));

        let mut lambda = &lambda0 + &phi * phi.transpose();
        crate::blr::symmetrize(&mut lambda);
        let chol = Cholesky::new(lambda)
            .ok_or_else(|| Error::NumericalBreakdown("task precision not positive definite".into()))?;
        let lambda_inv = chol.inverse();
        let b = &phi * &g + &lambda0 * &params.theta0;
        let theta = chol.solve(&b);

        // Per-point terms.
        let w = &lambda_inv * &psi;
        let mut dmu = DVector::zeros(n_ts);
        let mut ds = DVector::zeros(n_ts);
        for i in 0..n_ts {
            let mu = theta.dot(&psi.column(i));
            let s = psi.column(i).dot(&w.column(i));
            let var = sigma2 * (1.0 + s);
            let r = y[i] - mu;
            loss += var.ln() + r * r / var;
            dmu[i] = -2.0 * r / var;
            ds[i] = sigma2 * (1.0 / var - r * r / (var * var));
        }
        let lambda_inv_fro2 = lambda_inv.norm_squared();
        loss += gamma * lambda_inv_fro2 * lambda0_inv_fro2;

        let g_theta = &psi * &dmu;
        let a = &lambda_inv * &g_theta;
        let w_scaled = DMatrix::from_fn(d, n_ts, |r, c| w[(r, c)] * ds[c]);
        let mut g_lambda = -(&w_scaled * w.transpose()) - &a * theta.transpose();
        if gamma > 0.0 {
            let inv3 = &lambda_inv * &lambda_inv * &lambda_inv;
            g_lambda -= inv3 * (2.0 * gamma * lambda0_inv_fro2);
            g_lambda0 -= &lambda0_inv3 * (2.0 * gamma * lambda_inv_fro2);
        }

        let d_psi = &theta * dmu.transpose() + w_scaled * 2.0;
        let d_phi = (&g_lambda + g_lambda.transpose()) * &phi + &a * g.transpose();
        adjoints.columns_mut(offset, n_tr).copy_from(&d_phi);
        adjoints.columns_mut(offset + n_tr, n_ts).copy_from(&d_psi);

        g_theta0 += &lambda0 * &a;
        g_lambda0 += &g_lambda + &a * params.theta0.transpose();
        offset += n_tr + n_ts;
    }

    if !loss.is_finite() {
        return Err(Error::NumericalBreakdown(format!("meta-loss is {loss}")));
    }
    let mut g_l = (&g_lambda0 + g_lambda0.transpose()) * &params.l;
    g_l.fill_upper_triangle(0.0, 1);
    let net_grad = if points.is_empty() {
        NetGradient::zeros_like(&params.net)
    } else {
        params.net.backward(&trace, &adjoints)
    };
    Ok((
        loss,
        MetaGradient {
            net: net_grad,
            theta0: g_theta0,
            l: g_l,
        },
    ))
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step_scaled(params, grad, 1.0);
    }

    /// One step with the learning rate multiplied by `scale`.
    pub fn step_scaled(&mut self, params: &mut [f64], grad: &[f64], scale: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c = &self.cfg;
        let lr = c.learning_rate * scale;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + c.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub loss: f64,
    pub mean_beta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    /// `iteration,loss,mean_beta` (mean_beta empty when not probed).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss,mean_beta")?;
        for r in &self.rows {
            match r.mean_beta {
                Some(b) => writeln!(w, "{},{:?},{:?}", r.iteration, r.loss, b)?,
                None => writeln!(w, "{},{:?},", r.iteration, r.loss)?,
            }
        }
        Ok(())
    }
}

/// Fixed probe tasks, each adapted on a few anchors, for tracking β.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub adaptation: Vec<Vec<(Vec2, f64)>>,
    pub delta: f64,
}

impl ProbeSet {
    pub fn sample(cfg: &MetaConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adaptation = Vec::with_capacity(cfg.probe_tasks);
        for _ in 0..cfg.probe_tasks {
            let (_, data) = sample_task(cfg, &mut rng)?;
            adaptation.push(subsample_anchors(&data, cfg.probe_anchors, &mut rng).pairs());
        }
        Ok(ProbeSet {
            adaptation,
            delta: cfg.probe_delta,
        })
    }

    pub fn mean_beta(&self, params: &MetaParams) -> Result<f64> {
        if self.adaptation.is_empty() {
            return Ok(0.0);
        }
        let prior = params.prior()?;
        let bound = ConfidenceBound::new(&prior, self.delta)?;
        let mut total = 0.0;
        for batch in &self.adaptation {
            total += bound.radius(&prior.update(batch, &params.net)?)?;
        }
        Ok(total / self.adaptation.len() as f64)
    }
}

/// Trains from freshly initialized parameters.
pub fn meta_train(cfg: &MetaConfig) -> Result<(MetaParams, TrainLog)> {
    cfg.validate()?;
    meta_train_from(MetaParams::init(cfg), cfg)
}

/// Runs `cfg.n_iterations` Adam steps starting at `params`.
pub fn meta_train_from(mut params: MetaParams, cfg: &MetaConfig) -> Result<(MetaParams, TrainLog)> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    if cfg.n_iterations == 0 {
        return Ok((params, log));
    }
    let probes = if cfg.probe_every > 0 && cfg.probe_tasks > 0 {
        Some(ProbeSet::sample(cfg, cfg.seed ^ 0x7072_6f62_6573)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.n_params(), cfg.adam.clone());
    let mut flat = params.to_flat();
    for it in 0..cfg.n_iterations {
        let mut tasks = Vec::with_capacity(cfg.tasks_per_iteration);
        while tasks.len() < cfg.tasks_per_iteration {
            match sample_task(cfg, &mut rng) {
                Ok((_, data)) => {
                    let sub = subsample_anchors(&data, cfg.anchors_per_task, &mut rng);
                    tasks.push(split_task(&sub, &mut rng));
                }
                Err(Error::EmptyTask) => continue,
                Err(e) => return Err(e),
            }
        }
        let (loss, grad) = match meta_loss(&params, &tasks, cfg.gamma) {
            Ok(v) => v,
            Err(Error::NumericalBreakdown(msg)) => {
                log::error!("iteration {it}: {msg}");
                return Err(Error::NonFiniteLoss { iteration: it });
            }
            Err(e) => return Err(e),
        };
        let g = grad.to_flat();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        adam.step_scaled(&mut flat, &g, cfg.schedule.factor(it, cfg.n_iterations));
        params.set_flat(&flat);
        params
            .prior()
            .map_err(|_| Error::NumericalBreakdown(format!("Λ₀ not SPD after iteration {it}")))?;

        let last = it + 1 == cfg.n_iterations;
        let mean_beta = match &probes {
            Some(p) if (it + 1) % cfg.probe_every == 0 || last => Some(p.mean_beta(&params)?),
            _ => None,
        };
        if it % 100 == 0 || last {
            log::info!("meta-train iteration {it}: loss {loss:.4}");
        }
        log.rows.push(TrainLogRow {
            iteration: it,
            loss,
            mean_beta,
        });
    }
    Ok((params, log))
}
