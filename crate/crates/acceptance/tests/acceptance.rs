//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.
//!
//! Run with `cargo test --release --test acceptance`; the desk-scale
//! pipelines dominate the runtime.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use cbfmeta::blr::{cbf_lower_bound, cbf_lower_bound_gradient, confidence_radius, Posterior};
use cbfmeta::environment::{sample_environment, DistributionParams};
use cbfmeta::feature_net::{Activation, FeatureNet, NetSpec};
use cbfmeta::gp::{GpHyper, GpModel, MeanFunction};
use cbfmeta::harness::*;
use cbfmeta::meta_train::{meta_loss, MetaParams, TaskBatch};
use cbfmeta::qp::{solve_qp, QpStatus};
use cbfmeta::sim::{run_episode, Backend, BackendKind, EpisodeConfig};
use cbfmeta::Vec2;
use common::{brute_force_qp, gauss, random_matrix, random_qp, random_spd, random_vector, rel_err};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} ({name}): {tag} [{:.1}s] {}", t.elapsed().as_secs_f64(), v.detail);
    v.pass
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// θ̄' = (Λ + ΦΦᵀ)⁻¹(Φy + Λθ̄) by explicit inverse.
fn posterior_algebra() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=32);
        let n = rng.random_range(0..=200);
        let sigma = 0.1;
        let prior = Posterior::new(random_vector(&mut rng, d), random_spd(&mut rng, d, 0.5), sigma).unwrap();
        let phi = random_matrix(&mut rng, d, n);
        let y: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let post = prior.update_with_features(&phi, &y).unwrap();

        let lam = prior.precision() + &phi * phi.transpose();
        let inv = lam.clone().try_inverse().unwrap();
        let mean = &inv * (&phi * DVector::from_column_slice(&y) + prior.precision() * prior.mean());
        let probe = random_vector(&mut rng, d);
        let var = sigma * sigma * (1.0 + (probe.transpose() * &inv * &probe)[0]);
        let var_fast = sigma * sigma * (1.0 + post.inv_quad_form(&probe));

        worst = worst
            .max((post.mean() - &mean).amax() / mean.amax().max(1.0))
            .max((post.precision() - &lam).amax() / lam.amax())
            .max(rel_err(var_fast, var, 1e-300));
    }
    let elapsed = t.elapsed();
    verdict(
        worst < 1e-10 && elapsed < Duration::from_secs(10),
        format!("1000 cases, worst scaled error {worst:.2e}, {:.2}s", secs(elapsed)),
    )
}

fn random_net(spec: NetSpec, rng: &mut ChaCha8Rng) -> FeatureNet {
    let mut net = FeatureNet::init(spec, rng.random());
    let w: Vec<f64> = net.params_flat().iter().map(|_| gauss(rng) * 0.7).collect();
    net.set_params_flat(&w);
    net
}

fn point(rng: &mut ChaCha8Rng, half: f64) -> Vec2 {
    Vec2::new(rng.random_range(-half..half), rng.random_range(-half..half))
}

fn central<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn toy_meta_params(rng: &mut ChaCha8Rng) -> MetaParams {
    let d = 4;
    let mut l = DMatrix::zeros(d, d);
    for c in 0..d {
        l[(c, c)] = rng.random_range(0.5..1.5);
        for r in c + 1..d {
            l[(r, c)] = rng.random_range(-0.3..0.3);
        }
    }
    MetaParams {
        net: random_net(NetSpec::new(vec![5], d, Activation::Tanh), rng),
        theta0: DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5)),
        l,
        sigma: 0.1,
        epsilon: 1e-6,
    }
}

fn toy_batch(rng: &mut ChaCha8Rng) -> TaskBatch {
    let n_tr = rng.random_range(1..=6);
    let n_ts = rng.random_range(1..=6);
    let mut pt = || {
        let z = point(rng, 1.0);
        (z, z.norm() - 0.5)
    };
    TaskBatch {
        train: (0..n_tr).map(|_| pt()).collect(),
        test: (0..n_ts).map(|_| pt()).collect(),
    }
}

/// Every analytic gradient against central differences at 100 random
/// configurations; one random coordinate subset per configuration.
fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..100 {
        // Network parameters.
        let mut net = random_net(NetSpec::new(vec![6, 6], 3, Activation::Tanh), &mut rng);
        let pts: Vec<Vec2> = (0..3).map(|_| point(&mut rng, 2.0)).collect();
        let adj = DMatrix::from_fn(3, 3, |_, _| gauss(&mut rng));
        let g = net.parameter_gradient(&pts, &adj).to_flat();
        let w = net.params_flat();
        for _ in 0..10 {
            let i = rng.random_range(0..w.len());
            let fd = central(
                |h| {
                    let mut wp = w.clone();
                    wp[i] += h;
                    net.set_params_flat(&wp);
                    net.forward_batch(&pts).component_mul(&adj).sum()
                },
                1e-5,
            );
            note("net parameters", rel_err(g[i], fd, 1e-4));
        }
        net.set_params_flat(&w);

        // Input Jacobian.
        let z = point(&mut rng, 2.0);
        let jac = net.input_jacobian(z);
        for c in 0..2 {
            let mut e = Vec2::zeros();
            e[c] = 1e-5;
            let fd = (net.forward(z + e) - net.forward(z - e)) / 2e-5;
            for r in 0..3 {
                note("input jacobian", rel_err(jac[(r, c)], fd[r], 1e-3));
            }
        }

        // Lower bound of the Bayesian field.
        let post = Posterior::new(random_vector(&mut rng, 3), random_spd(&mut rng, 3, 0.5), 0.01).unwrap();
        let beta = rng.random_range(0.0..1.0);
        let (_, g) = cbf_lower_bound_gradient(&post, beta, z, &net).unwrap();
        for c in 0..2 {
            let mut e = Vec2::zeros();
            e[c] = 1e-6;
            let fd = (cbf_lower_bound(&post, beta, z + e, &net).unwrap()
                - cbf_lower_bound(&post, beta, z - e, &net).unwrap())
                / 2e-6;
            note("bayes lower bound", rel_err(g[c], fd, 1e-3));
        }

        // Meta-loss.
        let mut params = toy_meta_params(&mut rng);
        let tasks = vec![toy_batch(&mut rng), toy_batch(&mut rng)];
        let gamma = 1e-3;
        let g = meta_loss(&params, &tasks, gamma).unwrap().1.to_flat();
        let x0 = params.to_flat();
        for _ in 0..10 {
            let i = rng.random_range(0..x0.len());
            let fd = central(
                |h| {
                    let mut x = x0.clone();
                    x[i] += h;
                    params.set_flat(&x);
                    meta_loss(&params, &tasks, gamma).unwrap().0
                },
                1e-5,
            );
            note("meta-loss", rel_err(g[i], fd, 1e-3));
        }

        // GP lower bound.
        let x: Vec<Vec2> = (0..20).map(|_| point(&mut rng, 1.0)).collect();
        let y: Vec<f64> = x.iter().map(|z| z.norm() - 0.5).collect();
        let hyper = GpHyper {
            signal_var: rng.random_range(0.1..1.0),
            length_scale: rng.random_range(0.2..0.8),
            noise_var: 1e-4,
        };
        let mean = MeanFunction::Spherical {
            center: Vec2::new(0.1, -0.1),
            radius: 0.5,
        };
        let model = GpModel::condition(x, &y, hyper, mean).unwrap();
        let z = point(&mut rng, 1.5);
        let (_, g) = model.lower_bound_gradient(z);
        for c in 0..2 {
            let mut e = Vec2::zeros();
            e[c] = 1e-5;
            let fd = (model.predict_bounds(z + e).lower - model.predict_bounds(z - e).lower) / 2e-5;
            note("gp lower bound", rel_err(g[c], fd, 1e-3));
        }
    }
    let pass = worst.values().all(|&e| e < 1e-4);
    let detail = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(pass, format!("100 configurations, worst relative error: {detail}"))
}

/// θ* drawn from the prior; the event holds if every probe direction stays
/// inside the confidence band.
fn coverage() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (d, n, sigma, delta) = (6, 30, 0.1, 0.05);
    let tasks = 500;
    let hits = (0..tasks)
        .filter(|_| {
            let prior = Posterior::new(random_vector(&mut rng, d), random_spd(&mut rng, d, 0.5), sigma).unwrap();
            let chol = prior.precision().clone().cholesky().unwrap();
            let xi = random_vector(&mut rng, d) * sigma;
            let theta = prior.mean() + chol.l().transpose().solve_upper_triangular(&xi).unwrap();
            let phi = random_matrix(&mut rng, d, n);
            let y: Vec<f64> = (0..n).map(|k| phi.column(k).dot(&theta) + sigma * gauss(&mut rng)).collect();
            let post = prior.update_with_features(&phi, &y).unwrap();
            let beta = confidence_radius(&post, &prior, delta).unwrap();
            let probes = random_matrix(&mut rng, d, 200);
            (0..200).all(|k| {
                let p = probes.column(k).into_owned();
                (p.dot(post.mean()) - p.dot(&theta)).abs() <= beta * post.inv_quad_form(&p).sqrt()
            })
        })
        .count();
    let frac = hits as f64 / tasks as f64;
    verdict(frac >= 0.87, format!("{hits}/{tasks} tasks covered ({frac:.3}), need ≥ 0.87"))
}

fn qp_vs_brute_force() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut gap, mut kkt, mut mismatched) = (0.0_f64, 0.0_f64, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=6);
        let p = random_qp(&mut rng, n, m);
        let sol = solve_qp(&p).unwrap();
        let Some(bf) = brute_force_qp(&p) else {
            mismatched += 1;
            continue;
        };
        if sol.status != QpStatus::Solved {
            mismatched += 1;
            continue;
        }
        gap = gap.max((sol.objective(&p) - bf.objective).abs());
        kkt = kkt.max(sol.kkt.max());
    }
    verdict(
        mismatched == 0 && gap < 1e-5 && kkt < 1e-8,
        format!("1000 QPs, worst objective gap {gap:.1e}, worst KKT residual {kkt:.1e}, status mismatches {mismatched}"),
    )
}

struct Pipeline {
    _dir: TempDir,
    out: std::path::PathBuf,
    nll: Vec<NllRow>,
    timing: Vec<TimingRow>,
    records: Vec<EpisodeRecord>,
    params: MetaParams,
    train_and_eval: Duration,
}

fn pipeline(cfg: &RunConfig) -> Pipeline {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_path_buf();
    let t = Instant::now();
    let params = cmd_meta_train(cfg, &out).unwrap();
    let (nll, timing) = cmd_eval_nll(cfg, &params, &out).unwrap();
    let train_and_eval = t.elapsed();
    let records = cmd_simulate(cfg, &params, &[BackendKind::Meta, BackendKind::Gp], &out).unwrap();
    cmd_report(&out).unwrap();
    Pipeline {
        _dir: dir,
        out,
        nll,
        timing,
        records,
        params,
        train_and_eval,
    }
}

fn nll_at(rows: &[NllRow], k: usize, b: BackendKind) -> f64 {
    rows.iter().find(|r| r.n_points == k && r.backend == b).unwrap().mean_nll
}

fn nll_comparison(p: &Pipeline) -> Verdict {
    let mut wins = Vec::new();
    let mut all = true;
    let mut counts: Vec<usize> = p.nll.iter().map(|r| r.n_points).filter(|&k| k <= 10).collect();
    counts.dedup();
    for &k in &counts {
        let (m, g) = (nll_at(&p.nll, k, BackendKind::Meta), nll_at(&p.nll, k, BackendKind::Gp));
        all &= m < g;
        wins.push(format!("k={k}: meta {m:.3} vs gp {g:.3}"));
    }
    let fast = p.train_and_eval < Duration::from_secs(30 * 60);
    verdict(
        all && fast && !counts.is_empty(),
        format!("{}; train+eval {:.0}s", wins.join(", "), secs(p.train_and_eval)),
    )
}

fn timing_comparison(p: &Pipeline) -> Verdict {
    let at = |b| p.timing.iter().find(|r| r.n_points == 50 && r.backend == b).unwrap().mean_s;
    let (m, g) = (at(BackendKind::Meta), at(BackendKind::Gp));
    verdict(
        10.0 * m <= g,
        format!("50 points: meta adaptation {:.3e}s, gp fit {:.3e}s, ratio {:.1}", m, g, g / m),
    )
}

fn episode_safety(params: &MetaParams) -> Verdict {
    let n = 200;
    let cfg = EpisodeConfig {
        lidar_period: 5.0,
        delta: 0.025,
        ..EpisodeConfig::default()
    };
    let dist = DistributionParams::default();
    let (mut violating, mut feasible, mut invariant_failures) = (0, 0, 0);
    for i in 0..n {
        let env = sample_environment(&dist, 1, 7000 + i).unwrap();
        let log = run_episode(&env, Backend::Meta(params), &cfg, 9000 + i).unwrap().log;
        if log.violations() > 0 {
            violating += 1;
        }
        if log.infeasible_steps() == 0 && log.aborted.is_none() {
            feasible += 1;
            if !log.invariant_report().holds {
                invariant_failures += 1;
            }
        }
    }
    let p0 = 0.05;
    let bound = p0 + 1.96 * (p0 * (1.0 - p0) / n as f64).sqrt();
    let frac = violating as f64 / n as f64;
    verdict(
        frac <= bound && invariant_failures == 0,
        format!(
            "{violating}/{n} episodes entered a detected obstacle ({frac:.3}, bound {bound:.3}); \
             invariant broken in {invariant_failures} of {feasible} fully feasible episodes"
        ),
    )
}

fn cse_comparison(p: &Pipeline) -> Verdict {
    let find = |env: usize, b: BackendKind| {
        p.records
            .iter()
            .find(|r| r.key.environment == env && r.key.backend == b && r.key.lidar_period == 5.0)
            .unwrap()
            .summary
            .clone()
    };
    let scenes = p.records.iter().map(|r| r.key.environment).max().unwrap() + 1;
    let mut wins = 0;
    let mut lines = Vec::new();
    for env in 0..scenes {
        let (m, g) = (find(env, BackendKind::Meta), find(env, BackendKind::Gp));
        let both = m.reached_goal && g.reached_goal;
        if both && m.cse < g.cse {
            wins += 1;
        }
        lines.push(format!(
            "scene {env}: meta cse {:.1} (goal {}), gp cse {:.1} (goal {})",
            m.cse, m.reached_goal, g.cse, g.reached_goal
        ));
    }
    verdict(wins >= 2, format!("{wins}/{scenes} scenes won with both at goal; {}", lines.join("; ")))
}

fn csv_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") && p.file_name().unwrap() != TIMING {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(a: &Pipeline, b: &Pipeline) -> Verdict {
    let fa = csv_files(&a.out);
    let fb = csv_files(&b.out);
    let differing: Vec<String> = fa
        .iter()
        .filter(|rel| fs::read(a.out.join(rel)).ok() != fs::read(b.out.join(rel)).ok())
        .map(|rel| rel.display().to_string())
        .collect();
    let same_ckpt = fs::read(a.out.join(CHECKPOINT)).unwrap() == fs::read(b.out.join(CHECKPOINT)).unwrap();
    verdict(
        fa == fb && differing.is_empty() && same_ckpt && !fa.is_empty(),
        format!(
            "{} CSV files compared, {} differ {:?}; checkpoint identical: {same_ckpt}",
            fa.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() {
    let mut ok = true;
    ok &= report(1, "posterior algebra", posterior_algebra);
    ok &= report(2, "gradients", gradients);
    ok &= report(3, "confidence coverage", coverage);
    ok &= report(4, "qp solver", qp_vs_brute_force);

    let cfg = RunConfig::default().desk_scale().with_seed(SEED);
    let a = catch_unwind(|| pipeline(&cfg));
    match &a {
        Ok(a) => {
            ok &= report(5, "few-shot nll", || nll_comparison(a));
            ok &= report(6, "adaptation time", || timing_comparison(a));
            ok &= report(7, "episode safety", || episode_safety(&a.params));
            ok &= report(8, "control effort", || cse_comparison(a));
            let b = catch_unwind(|| pipeline(&cfg));
            ok &= match &b {
                Ok(b) => report(9, "reproducibility", || reproducibility(a, b)),
                Err(_) => report(9, "reproducibility", || verdict(false, "second pipeline failed".into())),
            };
        }
        Err(_) => {
            for (id, name) in [(5, "few-shot nll"), (6, "adaptation time"), (7, "episode safety"), (8, "control effort"), (9, "reproducibility")] {
                ok &= report(id, name, || verdict(false, "pipeline failed".into()));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
