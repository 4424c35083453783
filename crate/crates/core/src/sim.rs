//! Closed-loop episodes: off-axis unicycle, periodic LiDAR-driven barrier
//! updates, and a CBF-CLF-QP at every step.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierField, MetaField};
use crate::blr::ConfidenceBound;
use crate::buffer::{default_eta, Buffer, DEFAULT_CAPACITY};
use crate::dataset::{build_offset_dataset, OffsetConfig, SurfaceDataset};
use crate::environment::{sample_environment, wrap_angle, DistributionParams, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::gp::{gp_fit, GpConfig, GpModel};
use crate::lidar::{cast_scan, LidarConfig, Pose};
use crate::meta_train::MetaParams;
use crate::qp::{
    assemble_cbf_clf_qp, solve_qp, BarrierRow, ControlAffine, GoalClf, InputPolytope, QpParams, QpStatus,
};
use crate::Vec2;

/// Pose of the off-axis point. θ is kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub qx: f64,
    pub qy: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(qx: f64, qy: f64, theta: f64) -> Self {
        RobotState {
            qx,
            qy,
            theta: wrap_angle(theta),
        }
    }

    /// v(x): state to position.
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.qx, self.qy)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.qx, self.qy, self.theta])
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.qx, self.qy, self.theta)
    }
}

/// Unicycle viewed at a point ℓ ahead of the axle; f ≡ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unicycle {
    pub ell: f64,
}

impl Unicycle {
    fn rate(&self, x: &[f64; 3], u: [f64; 2]) -> [f64; 3] {
        let (s, c) = x[2].sin_cos();
        [
            c * u[0] - self.ell * s * u[1],
            s * u[0] + self.ell * c * u[1],
            u[1],
        ]
    }
}

impl ControlAffine for Unicycle {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(3)
    }

    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        DMatrix::from_row_slice(3, 2, &[c, -self.ell * s, s, self.ell * c, 0.0, 1.0])
    }
}

/// One RK4 step with u held constant.
pub fn dynamics_step(model: &Unicycle, x: &RobotState, u: [f64; 2], dt: f64) -> RobotState {
    let x0 = [x.qx, x.qy, x.theta];
    let add = |a: &[f64; 3], k: &[f64; 3], h: f64| [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]];
    let k1 = model.rate(&x0, u);
    let k2 = model.rate(&add(&x0, &k1, dt / 2.0), u);
    let k3 = model.rate(&add(&x0, &k2, dt / 2.0), u);
    let k4 = model.rate(&add(&x0, &k3, dt), u);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    RobotState::new(out[0], out[1], out[2])
}

/// Σ‖q_k − goal‖² over the given samples.
pub fn cumulative_squared_error(positions: impl IntoIterator<Item = Vec2>, goal: Vec2) -> f64 {
    positions.into_iter().map(|p| (p - goal).norm_squared()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Meta,
    Gp,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Meta => "meta",
            BackendKind::Gp => "gp",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meta" => Ok(BackendKind::Meta),
            "gp" => Ok(BackendKind::Gp),
            other => Err(Error::ConfigInvalid(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    Meta(&'a MetaParams),
    Gp(&'a GpConfig),
}

impl Backend<'_> {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Meta(_) => BackendKind::Meta,
            Backend::Gp(_) => BackendKind::Gp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub duration: f64,
    pub lidar_period: f64,
    pub start: [f64; 3],
    pub goal: [f64; 2],
    pub ell: f64,
    pub delta: f64,
    pub qp: QpParams,
    pub input: InputPolytope,
    /// `None` means 2σ² of the meta prior.
    pub eta: Option<f64>,
    pub buffer_cap: usize,
    pub lidar: LidarConfig,
    pub offsets: OffsetConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dt: 0.02,
            duration: 30.0,
            lidar_period: 5.0,
            start: [-2.5, 0.0, 0.0],
            goal: [2.5, 0.0],
            ell: 0.1,
            delta: 0.025,
            qp: QpParams::default(),
            input: InputPolytope::default(),
            eta: None,
            buffer_cap: DEFAULT_CAPACITY,
            lidar: LidarConfig::default(),
            offsets: OffsetConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.dt > 0.0) || !(self.duration >= 0.0) {
            return bad(format!("need dt > 0 and duration ≥ 0, got {} and {}", self.dt, self.duration));
        }
        let ratio = self.lidar_period / self.dt;
        if !(self.lidar_period > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(format!(
                "lidar period {} is not a positive multiple of dt {}",
                self.lidar_period, self.dt
            ));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad(format!("δ must lie in (0, 0.5), got {}", self.delta));
        }
        if !(self.ell > 0.0) {
            return bad(format!("ℓ must be > 0, got {}", self.ell));
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0) {
                return bad(format!("η must be ≥ 0, got {eta}"));
            }
        }
        self.lidar.validate()?;
        self.offsets.validate()
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn period_steps(&self) -> usize {
        ((self.lidar_period / self.dt).round() as usize).max(1)
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::new(self.goal[0], self.goal[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Solved,
    Infeasible,
    IterationLimit,
    /// A barrier row with L_g h = 0 that cannot be satisfied.
    Degenerate,
}

impl StepStatus {
    fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Solved => "solved",
            StepStatus::Infeasible => "infeasible",
            StepStatus::IterationLimit => "iteration_limit",
            StepStatus::Degenerate => "degenerate",
        }
    }
}

/// Everything logged for the state at the start of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: RobotState,
    pub u: [f64; 2],
    pub eps: f64,
    pub status: StepStatus,
    /// Number of barrier updates so far; h^b is fixed within a segment.
    pub segment: usize,
    /// h^b per obstacle; `None` until detected.
    pub hb: Vec<Option<f64>>,
    pub true_sd: Vec<f64>,
    pub buffer_rows: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub scan_s: f64,
    pub update_s: f64,
    pub qp_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Largest |Δh^b|/dt between consecutive steps of one segment, per obstacle.
    pub kappa: Vec<f64>,
    /// min over checked steps of h^b_k − (min(h^b_seg, 0) − κ·dt).
    pub worst_margin: f64,
    pub checked_steps: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub backend: BackendKind,
    pub dt: f64,
    pub goal: Vec2,
    pub steps: Vec<StepRecord>,
    pub final_state: RobotState,
    pub first_detection: Vec<Option<f64>>,
    pub aborted: Option<String>,
    pub timing: PhaseTiming,
}

/// Machine-readable episode digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub backend: BackendKind,
    pub steps: usize,
    pub cse: f64,
    pub final_goal_distance: f64,
    pub reached_goal: bool,
    pub violations: usize,
    pub undetected_violations: usize,
    pub min_true_distance: f64,
    pub infeasible_steps: usize,
    pub aborted: Option<String>,
    pub first_detection: Vec<Option<f64>>,
    pub invariant: InvariantReport,
    pub timing: PhaseTiming,
}

/// Goal tolerance for `reached_goal`.
pub const GOAL_TOLERANCE: f64 = 0.1;

impl EpisodeLog {
    pub fn cse(&self) -> f64 {
        cumulative_squared_error(self.steps.iter().map(|s| s.state.position()), self.goal)
    }

    pub fn final_goal_distance(&self) -> f64 {
        (self.final_state.position() - self.goal).norm()
    }

    pub fn infeasible_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.status != StepStatus::Solved).count()
    }

    fn visited(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.steps.iter().map(|s| (s.t, s.true_sd.as_slice()))
    }

    /// Logged states (plus the final one) inside an obstacle already detected.
    pub fn violations(&self) -> usize {
        self.count_inside(true)
    }

    /// Logged states inside an obstacle not yet detected at that time.
    pub fn undetected_violations(&self) -> usize {
        self.count_inside(false)
    }

    fn count_inside(&self, detected: bool) -> usize {
        let t_end = self.steps.len() as f64 * self.dt;
        let fin = self.final_sd();
        self.visited()
            .chain(std::iter::once((t_end, fin.as_slice())))
            .filter(|(t, sd)| {
                sd.iter().enumerate().any(|(i, &d)| {
                    let seen = self.first_detection[i].is_some_and(|t0| t0 <= *t);
                    d < 0.0 && seen == detected
                })
            })
            .count()
    }

    fn final_sd(&self) -> Vec<f64> {
        self.steps.last().map(|s| s.true_sd.clone()).unwrap_or_default()
    }

    pub fn min_true_distance(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.true_sd.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Discrete-time barrier invariant: within each update segment,
    /// h^b_k ≥ min(h^b at segment start, 0) − κ·dt.
    pub fn invariant_report(&self) -> InvariantReport {
        let n_obs = self.first_detection.len();
        let mut kappa = vec![0.0_f64; n_obs];
        for w in self.steps.windows(2) {
            if w[0].segment != w[1].segment {
                continue;
            }
            for i in 0..n_obs {
                if let (Some(a), Some(b)) = (w[0].hb[i], w[1].hb[i]) {
                    kappa[i] = kappa[i].max((b - a).abs() / self.dt);
                }
            }
        }
        let mut worst = f64::INFINITY;
        let mut checked = 0;
        let mut seg_start: Vec<Option<f64>> = vec![None; n_obs];
        let mut seg = usize::MAX;
        for s in &self.steps {
            if s.segment != seg {
                seg = s.segment;
                seg_start = s.hb.clone();
            }
            for i in 0..n_obs {
                if let (Some(h0), Some(h)) = (seg_start[i], s.hb[i]) {
                    worst = worst.min(h - (h0.min(0.0) - kappa[i] * self.dt));
                    checked += 1;
                }
            }
        }
        InvariantReport {
            kappa,
            worst_margin: worst,
            checked_steps: checked,
            holds: worst >= 0.0,
        }
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            backend: self.backend,
            steps: self.steps.len(),
            cse: self.cse(),
            final_goal_distance: self.final_goal_distance(),
            reached_goal: self.final_goal_distance() < GOAL_TOLERANCE,
            violations: self.violations(),
            undetected_violations: self.undetected_violations(),
            min_true_distance: self.min_true_distance(),
            infeasible_steps: self.infeasible_steps(),
            aborted: self.aborted.clone(),
            first_detection: self.first_detection.clone(),
            invariant: self.invariant_report(),
            timing: self.timing,
        }
    }

    /// One row per step; per-obstacle columns `hb_i`, `sd_i` (h^b empty
    /// before detection). No wall-clock data, so equal seeds give equal bytes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "step,t,qx,qy,theta,v,omega,eps,status,segment,buffer_rows")?;
        for i in 0..self.first_detection.len() {
            write!(w, ",hb_{i},sd_{i}")?;
        }
        writeln!(w)?;
        for (k, s) in self.steps.iter().enumerate() {
            write!(
                w,
                "{k},{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.state.qx,
                s.state.qy,
                s.state.theta,
                s.u[0],
                s.u[1],
                s.eps,
                s.status.as_str(),
                s.segment,
                s.buffer_rows
            )?;
            for (h, d) in s.hb.iter().zip(&s.true_sd) {
                match h {
                    Some(h) => write!(w, ",{h},{d}")?,
                    None => write!(w, ",,{d}")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Positions (qx, qy) read back from [`EpisodeLog::write_csv`] output.
pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<Vec<Vec2>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FormatMismatch("empty episode log".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::FormatMismatch(format!("episode log lacks column `{name}`")))
    };
    let (ix, iy) = (find("qx")?, find("qy")?);
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| {
            f.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::FormatMismatch(format!("bad episode row `{line}`")))
        };
        out.push(Vec2::new(parse(ix)?, parse(iy)?));
    }
    Ok(out)
}

/// Per-obstacle estimator state.
enum Estimator<'a> {
    Meta {
        buffer: Buffer,
        bound: ConfidenceBound,
        params: &'a MetaParams,
        field: Option<MetaField<'a>>,
    },
    Gp {
        data: SurfaceDataset,
        cfg: &'a GpConfig,
        field: Option<GpModel>,
    },
}

impl<'a> Estimator<'a> {
    fn new(backend: Backend<'a>, cfg: &EpisodeConfig) -> Result<Self> {
        Ok(match backend {
            Backend::Meta(params) => {
                let prior = params.prior()?;
                let eta = cfg.eta.unwrap_or_else(|| default_eta(prior.sigma()));
                Estimator::Meta {
                    bound: ConfidenceBound::new(&prior, cfg.delta)?,
                    buffer: Buffer::new(prior, eta, cfg.buffer_cap)?,
                    params,
                    field: None,
                }
            }
            Backend::Gp(gp) => Estimator::Gp {
                data: SurfaceDataset::default(),
                cfg: gp,
                field: None,
            },
        })
    }

    fn ingest(&mut self, scan: &SurfaceDataset) -> Result<()> {
        match self {
            Estimator::Meta {
                buffer,
                bound,
                params,
                field,
            } => {
                buffer.update(scan, &params.net)?;
                let posterior = buffer.posterior().clone();
                *field = Some(MetaField {
                    beta: bound.radius(&posterior)?,
                    posterior,
                    net: &params.net,
                });
            }
            Estimator::Gp { data, cfg, field } => {
                data.append(scan);
                *field = Some(gp_fit(data, cfg)?);
            }
        }
        Ok(())
    }

    fn rows(&self) -> usize {
        match self {
            Estimator::Meta { buffer, .. } => buffer.len(),
            Estimator::Gp { data, .. } => data.len(),
        }
    }

    fn into_field(self) -> Option<Box<dyn BarrierField + 'a>> {
        match self {
            Estimator::Meta { field, .. } => field.map(|f| Box::new(f) as Box<dyn BarrierField>),
            Estimator::Gp { field, .. } => field.map(|f| Box::new(f) as Box<dyn BarrierField>),
        }
    }

    fn field(&self) -> Option<&dyn BarrierField> {
        match self {
            Estimator::Meta { field, .. } => field.as_ref().map(|f| f as &dyn BarrierField),
            Estimator::Gp { field, .. } => field.as_ref().map(|f| f as &dyn BarrierField),
        }
    }
}

pub struct EpisodeOutcome<'a> {
    pub log: EpisodeLog,
    /// Final barrier field per obstacle; `None` if never detected.
    pub fields: Vec<Option<Box<dyn BarrierField + 'a>>>,
}

/// Runs one episode. `seed` drives the LiDAR noise only.
pub fn run_episode<'a>(
    env: &EnvironmentSpec,
    backend: Backend<'a>,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeOutcome<'a>> {
    cfg.validate()?;
    let t_total = Instant::now();
    let mut timing = PhaseTiming::default();
    let model = Unicycle { ell: cfg.ell };
    let clf = GoalClf { goal: cfg.goal() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_obs = env.len();
    let mut estimators = (0..n_obs)
        .map(|_| Estimator::new(backend, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut first_detection = vec![None; n_obs];
    let mut x = RobotState::new(cfg.start[0], cfg.start[1], cfg.start[2]);
    let mut steps = Vec::with_capacity(cfg.n_steps());
    let mut segment = 0;
    let mut aborted = None;
    let period = cfg.period_steps();

    for k in 0..cfg.n_steps() {
        let t = k as f64 * cfg.dt;
        if k % period == 0 {
            let t0 = Instant::now();
            let scan = cast_scan(env, x.pose(), &cfg.lidar, &mut rng);
            let data = build_offset_dataset(&scan, &cfg.offsets);
            timing.scan_s += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            for id in scan.observed_obstacles() {
                let part = data.for_obstacle(id);
                if part.is_empty() {
                    continue;
                }
                estimators[id].ingest(&part)?;
                first_detection[id].get_or_insert(t);
            }
            timing.update_s += t1.elapsed().as_secs_f64();
            segment += 1;
        }

        let z = x.position();
        let mut hb = vec![None; n_obs];
        let mut rows = Vec::new();
        for (i, est) in estimators.iter().enumerate() {
            if let Some(f) = est.field() {
                let (h, g) = f.lower_bound_gradient(z);
                hb[i] = Some(h);
                rows.push(BarrierRow::from_position(h, g, 3));
            }
        }

        let t2 = Instant::now();
        let xv = x.to_vector();
        let (u, eps, status) = match assemble_cbf_clf_qp(&xv, &clf, &rows, &model, &cfg.qp, &cfg.input) {
            Ok(p) => {
                let sol = solve_qp(&p)?;
                match sol.status {
                    QpStatus::Solved => ([sol.x[0], sol.x[1]], sol.x[2], StepStatus::Solved),
                    QpStatus::Infeasible => ([0.0; 2], 0.0, StepStatus::Infeasible),
                    QpStatus::IterationLimit => ([0.0; 2], 0.0, StepStatus::IterationLimit),
                }
            }
            Err(Error::DegenerateRow { .. }) => ([0.0; 2], 0.0, StepStatus::Degenerate),
            Err(e) => return Err(e),
        };
        timing.qp_s += t2.elapsed().as_secs_f64();
        if status != StepStatus::Solved {
            log::debug!("step {k}: QP {}; applying u = 0", status.as_str());
        }

        steps.push(StepRecord {
            t,
            state: x,
            u,
            eps,
            status,
            segment,
            hb,
            true_sd: (0..n_obs).map(|i| env.signed_distance(i, z)).collect(),
            buffer_rows: estimators.iter().map(Estimator::rows).sum(),
        });

        x = dynamics_step(&model, &x, u, cfg.dt);
        if !env.world_bounds.contains(x.position()) {
            aborted = Some(format!("left world bounds at t = {}", t + cfg.dt));
            break;
        }
    }

    timing.total_s = t_total.elapsed().as_secs_f64();
    let log = EpisodeLog {
        backend: backend.kind(),
        dt: cfg.dt,
        goal: cfg.goal(),
        steps,
        final_state: x,
        first_detection,
        aborted,
        timing,
    };
    Ok(EpisodeOutcome {
        log,
        fields: estimators.into_iter().map(Estimator::into_field).collect(),
    })
}

/// Axis-aligned sampling grid for barrier heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            min: [-3.0, -3.0],
            max: [3.0, 3.0],
            nx: 61,
            ny: 61,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        let step = |lo: f64, hi: f64, n: usize, i: usize| {
            if n <= 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        (0..self.ny).flat_map(move |j| {
            (0..self.nx).map(move |i| {
                Vec2::new(
                    step(self.min[0], self.max[0], self.nx, i),
                    step(self.min[1], self.max[1], self.ny, j),
                )
            })
        })
    }
}

pub const GRID_HEADER: &str = "x,y,obstacle,hb,mean,true_sd";

/// Heatmap rows for every detected obstacle, each prefixed by `prefix,`
/// (no header; see [`GRID_HEADER`]).
pub fn write_grid_rows<W: Write>(
    mut w: W,
    prefix: &str,
    env: &EnvironmentSpec,
    fields: &[Option<Box<dyn BarrierField + '_>>],
    grid: &GridSpec,
) -> std::io::Result<()> {
    for z in grid.points() {
        for (i, f) in fields.iter().enumerate() {
            if let Some(f) = f {
                let (mean, _) = f.predict(z);
                writeln!(
                    w,
                    "{prefix},{},{},{i},{},{mean},{}",
                    z.x,
                    z.y,
                    f.lower_bound(z),
                    env.signed_distance(i, z)
                )?;
            }
        }
    }
    Ok(())
}

/// Seeds of the fixed benchmark scenes and their obstacle counts.
pub const BENCHMARK_SCENES: [(u64, usize); 3] = [(11, 1), (23, 2), (37, 2)];

pub fn benchmark_scenes() -> Result<Vec<EnvironmentSpec>> {
    BENCHMARK_SCENES
        .iter()
        .map(|&(seed, n)| sample_environment(&DistributionParams::default(), n, seed))
        .collect()
}
