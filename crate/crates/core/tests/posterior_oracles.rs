mod common;

use cbfmeta::blr::*;
use cbfmeta::feature_net::{Activation, FeatureNet, Layer, NetSpec};
use cbfmeta::stats::chi_square_quantile;
use cbfmeta::Vec2;
use common::{gauss, random_matrix, random_spd, random_vector, rel_err};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Continuous, Normal};

/// θ̄' = (Λ + ΦΦᵀ)⁻¹(Φy + Λθ̄), by explicit inverse.
fn dense_posterior(mean: &DVector<f64>, prec: &DMatrix<f64>, phi: &DMatrix<f64>, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let lam = prec + phi * phi.transpose();
    let inv = lam.clone().try_inverse().unwrap();
    let rhs = phi * DVector::from_column_slice(y) + prec * mean;
    (inv * rhs, lam)
}

fn identity_net() -> FeatureNet {
    let spec = NetSpec::new(vec![], 2, Activation::Identity);
    let layer = Layer {
        weight: DMatrix::identity(2, 2),
        bias: DVector::zeros(2),
    };
    FeatureNet::from_layers(spec, vec![layer]).unwrap()
}

fn small_net(seed: u64) -> FeatureNet {
    FeatureNet::init(NetSpec::new(vec![24, 24], 8, Activation::Tanh), seed)
}

fn random_posterior<R: Rng>(rng: &mut R, d: usize, sigma: f64) -> Posterior {
    let prec = random_spd(rng, d, 0.5);
    Posterior::new(random_vector(rng, d), prec, sigma).unwrap()
}

#[test]
fn identity_features_match_normal_equations() {
    let net = identity_net();
    let prior = Posterior::new(DVector::from_column_slice(&[0.3, -0.2]), DMatrix::identity(2, 2) * 2.0, 0.1).unwrap();
    let data: Vec<(Vec2, f64)> = [(0.1, 0.2, 1.0), (-0.4, 0.5, 0.2), (0.9, -0.3, -0.7), (0.0, 1.0, 0.4), (0.6, 0.6, 0.0)]
        .iter()
        .map(|&(a, b, y)| (Vec2::new(a, b), y))
        .collect();
    let phi = DMatrix::from_fn(2, 5, |r, c| data[c].0[r]);
    let ys: Vec<f64> = data.iter().map(|d| d.1).collect();
    let (m, l) = dense_posterior(prior.mean(), prior.precision(), &phi, &ys);
    let post = prior.update(&data, &net).unwrap();
    assert!((post.mean() - m).amax() < 1e-10);
    assert!((post.precision() - l).amax() < 1e-10);
}

#[test]
fn random_updates_match_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let d = rng.random_range(1..=32);
        let n = rng.random_range(0..=200);
        let prior = random_posterior(&mut rng, d, 0.1);
        let phi = random_matrix(&mut rng, d, n);
        let y: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let post = prior.update_with_features(&phi, &y).unwrap();
        let (m, l) = dense_posterior(prior.mean(), prior.precision(), &phi, &y);
        let scale = m.amax().max(1.0);
        assert!((post.mean() - &m).amax() < 1e-10 * scale, "d={d} n={n}");
        assert!((post.precision() - &l).amax() < 1e-10 * l.amax());
    }
}

#[test]
fn sequential_equals_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prior = random_posterior(&mut rng, 6, 0.05);
    let phi = random_matrix(&mut rng, 6, 40);
    let y: Vec<f64> = (0..40).map(|_| gauss(&mut rng)).collect();
    let once = prior.update_with_features(&phi, &y).unwrap();
    let first = prior
        .update_with_features(&phi.columns(0, 15).into_owned(), &y[..15])
        .unwrap();
    let twice = first
        .update_with_features(&phi.columns(15, 25).into_owned(), &y[15..])
        .unwrap();
    assert!((once.mean() - twice.mean()).norm() < 1e-9);
    assert!((once.precision() - twice.precision()).norm() < 1e-9);
}

#[test]
fn predictions_match_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = small_net(4);
    let post = random_posterior(&mut rng, 8, 0.02);
    let inv = post.precision().clone().try_inverse().unwrap();
    for _ in 0..100 {
        let z = Vec2::new(gauss(&mut rng), gauss(&mut rng));
        let phi = net.forward(z);
        let p = post.predict(z, &net).unwrap();
        let var = 0.02f64.powi(2) * (1.0 + (phi.transpose() * &inv * &phi)[0]);
        assert!(rel_err(p.variance, var, 1e-300) < 1e-10);
        assert!((p.mean - post.mean().dot(&phi)).abs() < 1e-12);
    }
}

#[test]
fn chi_square_quantiles_match_reference() {
    assert!((chi_square_quantile(2, 0.95).unwrap() + 2.0 * 0.05f64.ln()).abs() < 1e-10);
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.75);
    assert!((chi_square_quantile(1, 0.5).unwrap() - z * z).abs() < 1e-8);
    for (d, p) in [(32, 0.95), (32, 0.975), (5, 0.01), (10, 0.5)] {
        let want = ChiSquared::new(d as f64).unwrap().inverse_cdf(p);
        assert!(rel_err(chi_square_quantile(d, p).unwrap(), want, 1.0) < 1e-7, "d={d} p={p}");
    }
    assert!((chi_square_quantile(32, 0.95).unwrap() - 46.194).abs() < 1e-3);
}

#[test]
fn radius_without_data_closed_form() {
    let prior = Posterior::isotropic(2, 1.0, 1.0).unwrap();
    let beta = confidence_radius(&prior, &prior, 0.05).unwrap();
    let half = (2.0 * 20f64.ln()).sqrt();
    assert!((beta - 2.0 * half).abs() < 1e-9);
    assert!((beta - 4.8955).abs() < 1e-4);
}

#[test]
fn smallest_precision_eigenvalue_never_drops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let d = rng.random_range(1..=12);
        let mut post = random_posterior(&mut rng, d, 0.1);
        for _ in 0..3 {
            let n = rng.random_range(0..5);
            let before = post.eigen_range().0;
            post = post
                .update_with_features(&random_matrix(&mut rng, d, n), &vec![0.0; n])
                .unwrap();
            assert!(post.eigen_range().0 >= before * (1.0 - 1e-10));
        }
    }
}

#[test]
fn lower_bound_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = small_net(8);
    let h = 1e-6;
    for trial in 0..100 {
        let post = random_posterior(&mut rng, 8, 0.01);
        let beta = if trial % 4 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        let z = Vec2::new(gauss(&mut rng), gauss(&mut rng));
        let (v, g) = cbf_lower_bound_gradient(&post, beta, z, &net).unwrap();
        assert!((v - cbf_lower_bound(&post, beta, z, &net).unwrap()).abs() < 1e-14);
        for i in 0..2 {
            let mut e = Vec2::zeros();
            e[i] = h;
            let fd = (cbf_lower_bound(&post, beta, z + e, &net).unwrap()
                - cbf_lower_bound(&post, beta, z - e, &net).unwrap())
                / (2.0 * h);
            assert!(rel_err(g[i], fd, 1e-3) < 1e-5, "{} vs {fd}", g[i]);
        }
        if beta == 0.0 {
            let m = mean_gradient(&post, z, &net);
            assert!((m - g).norm() < 1e-12);
        }
    }
}

#[test]
fn learned_circle_field_has_radial_gradient() {
    // Zero biases make a tanh net odd in z, which cannot fit an even field.
    let mut net = FeatureNet::init(NetSpec::new(vec![64, 64], 32, Activation::Tanh), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for layer in net.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    }
    let mut data = Vec::new();
    for i in 0..120 {
        let a = std::f64::consts::TAU * i as f64 / 120.0;
        for k in 0..7 {
            let r = 0.4 + 0.1 * k as f64;
            data.push((Vec2::new(r * a.cos(), r * a.sin()), r - 0.5));
        }
    }
    let post = Posterior::isotropic(32, 1e-6, 1e-3).unwrap().update(&data, &net).unwrap();
    for i in 0..36 {
        let a = 0.1 + std::f64::consts::TAU * i as f64 / 36.0;
        let u = Vec2::new(a.cos(), a.sin());
        let g = mean_gradient(&post, u * 0.65, &net);
        let angle = (g.dot(&u) / g.norm()).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 10.0, "angle {angle} at {a}");
    }
}

#[test]
fn nll_matches_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = small_net(10);
    let post = random_posterior(&mut rng, 8, 0.3);
    let test: Vec<(Vec2, f64)> = (0..50)
        .map(|_| (Vec2::new(gauss(&mut rng), gauss(&mut rng)), gauss(&mut rng)))
        .collect();
    let want: f64 = test
        .iter()
        .map(|&(z, y)| {
            let p = post.predict(z, &net).unwrap();
            -Normal::new(p.mean, p.variance.sqrt()).unwrap().ln_pdf(y)
        })
        .sum::<f64>()
        / 50.0;
    assert!((negative_log_likelihood(&post, &test, &net) - want).abs() < 1e-12);
}

#[test]
fn noiseless_linear_data_recovers_coefficients() {
    // With θ̄₀ = 0 the only error left is the prior shrinkage −Λ⁻¹Λ₀θ*,
    // which decays like 1/n.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 8;
    let theta = random_vector(&mut rng, d);
    let prior = Posterior::isotropic(d, 1e-3, 0.01).unwrap();
    let mut last = f64::INFINITY;
    for n in [10, 100, 1000] {
        let phi = random_matrix(&mut rng, d, n);
        let y: Vec<f64> = (0..n).map(|k| phi.column(k).dot(&theta)).collect();
        let post = prior.update_with_features(&phi, &y).unwrap();
        let shrink = -post.solve(&(prior.precision() * &theta));
        assert!((post.mean() - &theta - &shrink).amax() < 1e-12);
        let err = (post.mean() - &theta).amax();
        assert!(err < last);
        last = err;
        if n == 1000 {
            assert!(err < 1e-5, "{err:e}");
            let probe = random_matrix(&mut rng, d, 100);
            for k in 0..100 {
                let p = probe.column(k).into_owned();
                assert!((post.predict_basis(&p).0 - p.dot(&theta)).abs() < 1e-5);
            }
        }
    }
}

/// θ* ~ N(θ̄₀, σ²Λ₀⁻¹), y = φᵀθ* + N(0, σ²); returns whether
/// |φᵀ(θ̄ − θ*)| ≤ β‖φ‖_{Λ⁻¹} on every probe.
fn calibration_event<R: Rng>(rng: &mut R, delta: f64) -> bool {
    let (d, n, sigma) = (6, 30, 0.1);
    let prior = random_posterior(rng, d, sigma);
    let chol = prior.precision().clone().cholesky().unwrap();
    let xi = random_vector(rng, d) * sigma;
    let theta = prior.mean() + chol.l().transpose().solve_upper_triangular(&xi).unwrap();
    let phi = random_matrix(rng, d, n);
    let y: Vec<f64> = (0..n).map(|k| phi.column(k).dot(&theta) + sigma * gauss(rng)).collect();
    let post = prior.update_with_features(&phi, &y).unwrap();
    let beta = confidence_radius(&post, &prior, delta).unwrap();
    let probes = random_matrix(rng, d, 200);
    (0..200).all(|k| {
        let p = probes.column(k).into_owned();
        (p.dot(post.mean()) - p.dot(&theta)).abs() <= beta * post.inv_quad_form(&p).sqrt()
    })
}

#[test]
fn confidence_event_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let hits = (0..500).filter(|_| calibration_event(&mut rng, 0.05)).count();
    assert!(hits as f64 / 500.0 >= 0.9, "coverage {hits}/500");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn updates_never_raise_variance(seed in any::<u64>(), d in 1usize..10, n in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_posterior(&mut rng, d, 0.1);
        let post = prior
            .update_with_features(&random_matrix(&mut rng, d, n), &vec![0.0; n])
            .unwrap();
        for _ in 0..16 {
            let phi = random_vector(&mut rng, d);
            let (_, before) = prior.predict_basis(&phi);
            let (_, after) = post.predict_basis(&phi);
            prop_assert!(after <= before + 1e-10 * before);
        }
    }

    #[test]
    fn lower_bound_below_mean(seed in any::<u64>(), beta in 0.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = random_posterior(&mut rng, 5, 0.1);
        let phi = random_vector(&mut rng, 5);
        prop_assert!(lower_bound_basis(&post, beta, &phi) <= post.mean().dot(&phi));
    }
}
