//! Shared oracles for the integration tests.
#![allow(dead_code)]

use cbfmeta::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gauss(rng))
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gauss(rng))
}

/// A Aᵀ + shift·I.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * shift
}

/// |a − b| / max(|a|, |b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random feasible QP over `n` variables with `m` rows: c is chosen so a
/// random point satisfies every row with slack.
pub fn random_qp<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> QpProblem {
    let h = random_spd(rng, n, 0.1);
    let a = random_vector(rng, n);
    let g = random_matrix(rng, m, n);
    let x0 = random_vector(rng, n) * 2.0;
    let slack = DVector::from_fn(m, |_, _| gauss(rng).abs());
    let c = &g * x0 + slack;
    QpProblem::new(h, a, g, c)
}

#[derive(Debug, Clone)]
pub struct BruteForce {
    pub x: DVector<f64>,
    pub objective: f64,
    pub active: Vec<usize>,
}

/// Enumerates every candidate active set, solves its equality-constrained
/// KKT system densely, and keeps the best primal- and dual-feasible point.
/// `None` if no active set yields a feasible KKT point.
pub fn brute_force_qp(p: &QpProblem) -> Option<BruteForce> {
    let n = p.n_vars();
    let m = p.n_rows();
    let mut best: Option<BruteForce> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        for i in 0..n {
            rhs[i] = -p.linear[i];
        }
        for (j, &r) in set.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + j)] = p.g[(r, i)];
                kkt[(n + j, i)] = p.g[(r, i)];
            }
            rhs[n + j] = p.c[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let dual_ok = (0..k).all(|j| sol[n + j] >= -1e-9);
        let primal_ok = (0..m).all(|r| (p.g.row(r) * &x)[0] <= p.c[r] + 1e-9);
        if !(dual_ok && primal_ok) {
            continue;
        }
        let objective = p.objective(&x);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(BruteForce { x, objective, active: set });
        }
    }
    best
}
