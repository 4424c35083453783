//! Experiment orchestration behind the CLI: meta-training, NLL and timing
//! sweeps, closed-loop episodes, and report aggregation.
//!
//! Every CSV artifact except `timing.csv` is a pure function of the config,
//! the seed and the checkpoint.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::BarrierField;
use crate::blr::negative_log_likelihood;
use crate::dataset::SurfaceDataset;
use crate::environment::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::gp::{gp_fit, GpConfig};
use crate::meta_train::{meta_train, sample_task, MetaConfig, MetaParams};
use crate::sim::{benchmark_scenes, run_episode, Backend, BackendKind, EpisodeConfig, EpisodeSummary, GridSpec};
use crate::stats::{mean, std_dev};
use crate::Vec2;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const NLL_CURVE: &str = "nll_curve.csv";
pub const TIMING: &str = "timing.csv";
pub const CSE_TABLE: &str = "cse_table.csv";
pub const GRID_HB: &str = "grid_hb.csv";
pub const EPISODES_DIR: &str = "episodes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_tasks: usize,
    /// Adaptation sizes in surface points.
    pub counts: Vec<usize>,
    /// Anchors reserved for adaptation; the rest of each task is the test set.
    pub reserved: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_tasks: 100,
            counts: vec![1, 2, 5, 10, 20, 50],
            reserved: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub lidar_periods: Vec<f64>,
    pub episode: EpisodeConfig,
    /// `None` selects the built-in benchmark scenes.
    pub scenes: Option<Vec<EnvironmentSpec>>,
    pub grid: GridSpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            lidar_periods: vec![1.0, 3.0, 5.0],
            episode: EpisodeConfig::default(),
            scenes: None,
            grid: GridSpec {
                nx: 41,
                ny: 41,
                ..GridSpec::default()
            },
        }
    }
}

/// One JSON document with a section per stage; missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub meta: MetaConfig,
    pub gp: GpConfig,
    pub eval: EvalConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(format!("config does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Reduced budgets: 2000 meta iterations, 30 evaluation tasks, Δ_lidar = 5 only.
    pub fn desk_scale(mut self) -> Self {
        self.meta.n_iterations = MetaConfig::desk_scale().n_iterations;
        self.eval.n_tasks = self.eval.n_tasks.min(30);
        self.simulate.lidar_periods = vec![5.0];
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.meta.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.gp.validate()?;
        if self.eval.counts.is_empty() || self.eval.counts.contains(&0) {
            return Err(Error::ConfigInvalid("eval.counts must be nonempty and positive".into()));
        }
        if self.eval.counts.iter().any(|&k| k > self.eval.reserved) {
            return Err(Error::ConfigInvalid("eval.counts may not exceed eval.reserved".into()));
        }
        for &p in &self.simulate.lidar_periods {
            EpisodeConfig {
                lidar_period: p,
                ..self.simulate.episode.clone()
            }
            .validate()?;
        }
        if let Some(scenes) = &self.simulate.scenes {
            scenes.iter().try_for_each(EnvironmentSpec::validate)?;
        }
        Ok(())
    }

    pub fn scenes(&self) -> Result<Vec<EnvironmentSpec>> {
        match &self.simulate.scenes {
            Some(s) => Ok(s.clone()),
            None => benchmark_scenes(),
        }
    }
}

/// Independent stream for item `index` of stage `stage`.
pub fn derive_seed(seed: u64, stage: u64, index: u64) -> u64 {
    let mut x = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

const STAGE_EVAL: u64 = 1;
const STAGE_SIM: u64 = 2;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| write_failure(path, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| write_failure(path, e))
}

fn write_failure(path: &Path, source: std::io::Error) -> Error {
    Error::ArtifactWriteFailure {
        path: path.display().to_string(),
        source,
    }
}

fn write_artifact(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|e| write_failure(path, e))
}

/// Trains and writes `checkpoint.bin` and `train_log.csv`.
pub fn cmd_meta_train(cfg: &RunConfig, out: &Path) -> Result<MetaParams> {
    let (params, log) = meta_train(&cfg.meta)?;
    params.save(&out.join(CHECKPOINT))?;
    write_artifact(&out.join(TRAIN_LOG), |w| log.write_csv(w))?;
    Ok(params)
}

pub fn load_checkpoint(out: &Path) -> Result<MetaParams> {
    let path = out.join(CHECKPOINT);
    if !path.exists() {
        return Err(Error::ConfigInvalid(format!(
            "no checkpoint at {}; run meta-train first",
            path.display()
        )));
    }
    MetaParams::load(&path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllRow {
    pub n_points: usize,
    pub backend: BackendKind,
    pub mean_nll: f64,
    pub lower_3sigma: f64,
    pub upper_3sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n_points: usize,
    pub backend: BackendKind,
    pub mean_s: f64,
    pub std_s: f64,
}

/// An evaluation task: shuffled anchor groups split into reserved
/// adaptation groups and a held-out test set.
pub struct EvalTask {
    pub groups: Vec<SurfaceDataset>,
    pub test: Vec<(Vec2, f64)>,
}

impl EvalTask {
    pub fn adaptation(&self, k: usize) -> SurfaceDataset {
        SurfaceDataset {
            samples: self.groups[..k].iter().flat_map(|g| g.samples.iter().copied()).collect(),
        }
    }
}

/// Samples task `index`; retries until the task has more anchors than reserved.
pub fn eval_task(cfg: &RunConfig, index: usize) -> Result<EvalTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STAGE_EVAL, index as u64));
    for _ in 0..100 {
        let (_, data) = match sample_task(&cfg.meta, &mut rng) {
            Ok(t) => t,
            Err(Error::EmptyTask) => continue,
            Err(e) => return Err(e),
        };
        let mut groups: Vec<SurfaceDataset> = data
            .anchor_groups()
            .map(|g| SurfaceDataset { samples: g.to_vec() })
            .collect();
        if groups.len() <= cfg.eval.reserved {
            continue;
        }
        groups.shuffle(&mut rng);
        let test = groups[cfg.eval.reserved..]
            .iter()
            .flat_map(|g| g.pairs())
            .collect();
        groups.truncate(cfg.eval.reserved);
        return Ok(EvalTask { groups, test });
    }
    Err(Error::EmptyTask)
}

/// Mean per-point NLL on `test` under a field's predictive distribution.
pub fn field_nll(field: &dyn BarrierField, test: &[(Vec2, f64)]) -> f64 {
    test.iter()
        .map(|&(z, y)| {
            let (m, v) = field.predict(z);
            crate::blr::gaussian_nll(y, m, v)
        })
        .sum::<f64>()
        / test.len() as f64
}

struct TaskScores {
    /// Per count: (meta nll, meta seconds, gp nll, gp seconds).
    rows: Vec<(f64, f64, f64, f64)>,
}

fn score_task(cfg: &RunConfig, params: &MetaParams, index: usize) -> Result<TaskScores> {
    let task = eval_task(cfg, index)?;
    let prior = params.prior()?;
    let mut rows = Vec::with_capacity(cfg.eval.counts.len());
    for &k in &cfg.eval.counts {
        let data = task.adaptation(k);
        let t = Instant::now();
        let post = prior.update(&data.pairs(), &params.net)?;
        let meta_s = t.elapsed().as_secs_f64();
        let meta_nll = negative_log_likelihood(&post, &task.test, &params.net);
        let t = Instant::now();
        let gp = gp_fit(&data, &cfg.gp)?;
        let gp_s = t.elapsed().as_secs_f64();
        rows.push((meta_nll, meta_s, field_nll(&gp, &task.test), gp_s));
    }
    Ok(TaskScores { rows })
}

/// NLL and adaptation time against data count for both backends.
pub fn eval_nll(cfg: &RunConfig, params: &MetaParams) -> Result<(Vec<NllRow>, Vec<TimingRow>)> {
    let scores = (0..cfg.eval.n_tasks)
        .into_par_iter()
        .map(|j| score_task(cfg, params, j))
        .collect::<Result<Vec<_>>>()?;
    let mut nll = Vec::new();
    let mut timing = Vec::new();
    for (c, &k) in cfg.eval.counts.iter().enumerate() {
        let col = |f: fn(&(f64, f64, f64, f64)) -> f64| scores.iter().map(|s| f(&s.rows[c])).collect::<Vec<_>>();
        for (backend, n, t) in [
            (BackendKind::Meta, col(|r| r.0), col(|r| r.1)),
            (BackendKind::Gp, col(|r| r.2), col(|r| r.3)),
        ] {
            let (m, s) = (mean(&n), std_dev(&n));
            nll.push(NllRow {
                n_points: k,
                backend,
                mean_nll: m,
                lower_3sigma: m - 3.0 * s,
                upper_3sigma: m + 3.0 * s,
            });
            timing.push(TimingRow {
                n_points: k,
                backend,
                mean_s: mean(&t),
                std_s: std_dev(&t),
            });
        }
    }
    Ok((nll, timing))
}

pub fn write_nll_csv<W: Write>(mut w: W, rows: &[NllRow]) -> std::io::Result<()> {
    writeln!(w, "n_points,backend,mean_nll,lower_3sigma,upper_3sigma")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:?},{:?},{:?}",
            r.n_points, r.backend, r.mean_nll, r.lower_3sigma, r.upper_3sigma
        )?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(mut w: W, rows: &[TimingRow]) -> std::io::Result<()> {
    writeln!(w, "n_points,backend,mean_s,std_s")?;
    for r in rows {
        writeln!(w, "{},{},{:?},{:?}", r.n_points, r.backend, r.mean_s, r.std_s)?;
    }
    Ok(())
}

pub fn cmd_eval_nll(cfg: &RunConfig, params: &MetaParams, out: &Path) -> Result<(Vec<NllRow>, Vec<TimingRow>)> {
    let (nll, timing) = eval_nll(cfg, params)?;
    write_artifact(&out.join(NLL_CURVE), |w| write_nll_csv(w, &nll))?;
    write_artifact(&out.join(TIMING), |w| write_timing_csv(w, &timing))?;
    Ok((nll, timing))
}

/// Identifies one episode of a `simulate` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub environment: usize,
    pub lidar_period: f64,
    pub backend: BackendKind,
}

impl EpisodeKey {
    pub fn stem(&self) -> String {
        format!("env{}_dl{}_{}", self.environment, self.lidar_period, self.backend)
    }
}

/// `episodes/<stem>.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub key: EpisodeKey,
    pub summary: EpisodeSummary,
}

fn run_keyed(
    cfg: &RunConfig,
    scenes: &[EnvironmentSpec],
    params: &MetaParams,
    key: EpisodeKey,
    out: &Path,
) -> Result<(EpisodeRecord, Vec<u8>)> {
    let ep = EpisodeConfig {
        lidar_period: key.lidar_period,
        ..cfg.simulate.episode.clone()
    };
    let backend = match key.backend {
        BackendKind::Meta => Backend::Meta(params),
        BackendKind::Gp => Backend::Gp(&cfg.gp),
    };
    let env = &scenes[key.environment];
    let seed = derive_seed(cfg.seed, STAGE_SIM, key.environment as u64);
    let outcome = run_episode(env, backend, &ep, seed)?;
    let dir = out.join(EPISODES_DIR);
    write_artifact(&dir.join(format!("{}.csv", key.stem())), |w| outcome.log.write_csv(w))?;
    let record = EpisodeRecord {
        key,
        summary: outcome.log.summary(),
    };
    write_artifact(&dir.join(format!("{}.json", key.stem())), |w| {
        serde_json::to_writer_pretty(&mut *w, &record).map_err(std::io::Error::other)
    })?;
    let mut grid = Vec::new();
    let prefix = format!("{},{},{}", key.environment, key.lidar_period, key.backend);
    crate::sim::write_grid_rows(&mut grid, &prefix, env, &outcome.fields, &cfg.simulate.grid)
        .map_err(|e| write_failure(&out.join(GRID_HB), e))?;
    Ok((record, grid))
}

/// Episodes over scenes × Δ_lidar × backends; writes per-episode logs,
/// `grid_hb.csv` and `scenes.json`.
pub fn cmd_simulate(
    cfg: &RunConfig,
    params: &MetaParams,
    backends: &[BackendKind],
    out: &Path,
) -> Result<Vec<EpisodeRecord>> {
    let scenes = cfg.scenes()?;
    write_artifact(&out.join("scenes.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &scenes).map_err(std::io::Error::other)
    })?;
    let keys: Vec<EpisodeKey> = (0..scenes.len())
        .flat_map(|environment| {
            cfg.simulate.lidar_periods.iter().flat_map(move |&lidar_period| {
                backends.iter().map(move |&backend| EpisodeKey {
                    environment,
                    lidar_period,
                    backend,
                })
            })
        })
        .collect();
    let results = keys
        .par_iter()
        .map(|&k| run_keyed(cfg, &scenes, params, k, out))
        .collect::<Result<Vec<_>>>()?;
    write_artifact(&out.join(GRID_HB), |w| {
        writeln!(w, "environment,lidar_period,backend,{}", crate::sim::GRID_HEADER)?;
        results.iter().try_for_each(|(_, g)| w.write_all(g))
    })?;
    Ok(results.into_iter().map(|(r, _)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CseRow {
    pub environment: usize,
    pub lidar_period: f64,
    pub backend: BackendKind,
    pub cse: f64,
    pub violations: usize,
    pub infeasible_steps: usize,
}

/// Reads every `episodes/*.json`; sorted by environment, Δ_lidar, backend.
pub fn read_episode_records(out: &Path) -> Result<Vec<EpisodeRecord>> {
    let dir = out.join(EPISODES_DIR);
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(_) => {
            return Err(Error::ConfigInvalid(format!(
                "no episode logs under {}; run simulate first",
                dir.display()
            )))
        }
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records = paths
        .iter()
        .map(|p| {
            let r = BufReader::new(File::open(p)?);
            Ok(serde_json::from_reader(r)?)
        })
        .collect::<Result<Vec<EpisodeRecord>>>()?;
    if records.is_empty() {
        return Err(Error::ConfigInvalid(format!("no episode logs under {}", dir.display())));
    }
    records.sort_by(|a, b| {
        (a.key.environment, a.key.lidar_period, a.key.backend as u8)
            .partial_cmp(&(b.key.environment, b.key.lidar_period, b.key.backend as u8))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(records)
}

pub fn cse_table(records: &[EpisodeRecord]) -> Vec<CseRow> {
    records
        .iter()
        .map(|r| CseRow {
            environment: r.key.environment,
            lidar_period: r.key.lidar_period,
            backend: r.key.backend,
            cse: r.summary.cse,
            violations: r.summary.violations,
            infeasible_steps: r.summary.infeasible_steps,
        })
        .collect()
}

pub fn write_cse_csv<W: Write>(mut w: W, rows: &[CseRow]) -> std::io::Result<()> {
    writeln!(w, "environment,lidar_period,backend,cse,violations,infeasible_steps")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:?},{},{}",
            r.environment, r.lidar_period, r.backend, r.cse, r.violations, r.infeasible_steps
        )?;
    }
    Ok(())
}

/// Folds the episode summaries into `cse_table.csv`; never re-simulates.
pub fn cmd_report(out: &Path) -> Result<Vec<CseRow>> {
    let rows = cse_table(&read_episode_records(out)?);
    write_artifact(&out.join(CSE_TABLE), |w| write_cse_csv(w, &rows))?;
    Ok(rows)
}
