//! CBF-CLF quadratic program: assembly and a dense dual active-set solver.
//!
//! Problems have the form
//!
//! ```text
//!   min ½ xᵀHx + aᵀx   s.t.  G x ≤ c
//! ```
//!
//! with x = [u; ε]. The solver follows Goldfarb–Idnani: it starts at the
//! unconstrained minimizer and adds the most violated row, taking partial
//! steps that drop rows whose multipliers would turn negative. Sizes here are
//! tiny (three variables, a handful of rows), so the reduced matrices are
//! formed densely at every step.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// rows × n
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// max(0, max_j (Gx − c)_j)
    pub primal: f64,
    /// ‖Hx + a + Gᵀλ‖_∞
    pub stationarity: f64,
    /// max_j |λ_j (c − Gx)_j|
    pub complementarity: f64,
    /// max(0, −min_j λ_j)
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.stationarity)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One nonnegative multiplier per row (zero for inactive rows).
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl QpSolution {
    pub fn objective(&self, p: &QpProblem) -> f64 {
        p.objective(&self.x)
    }
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, g: DMatrix<f64>, c: DVector<f64>) -> Self {
        assert_eq!(hessian.nrows(), hessian.ncols());
        assert_eq!(linear.len(), hessian.nrows());
        assert_eq!(g.ncols(), hessian.nrows());
        assert_eq!(g.nrows(), c.len());
        QpProblem {
            hessian,
            linear,
            g,
            c,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.g.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Same problem with rows reordered by `perm` (row i of the result is
    /// row perm[i] of `self`).
    pub fn permute_rows(&self, perm: &[usize]) -> QpProblem {
        let g = DMatrix::from_fn(perm.len(), self.n_vars(), |r, c| self.g[(perm[r], c)]);
        let c = DVector::from_fn(perm.len(), |r, _| self.c[perm[r]]);
        QpProblem::new(self.hessian.clone(), self.linear.clone(), g, c)
    }

    pub fn kkt_residuals(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
        let slack = &self.c - &self.g * x;
        let stat = &self.hessian * x + &self.linear + self.g.tr_mul(lambda);
        KktResiduals {
            primal: slack.iter().fold(0.0f64, |m, s| m.max(-s)),
            stationarity: stat.amax(),
            complementarity: slack
                .iter()
                .zip(lambda.iter())
                .fold(0.0f64, |m, (s, l)| m.max((s * l).abs())),
            dual: lambda.iter().fold(0.0f64, |m, l| m.max(-l)),
        }
    }

    /// Plain-text dump: `n rows`, then H (n lines), a, then each row of G
    /// followed by its bound. Values use Rust's shortest round-trip format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n = self.n_vars();
        writeln!(s, "{} {}", n, self.n_rows()).unwrap();
        let line = |vals: &mut dyn Iterator<Item = f64>| {
            vals.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
        };
        for r in 0..n {
            writeln!(s, "{}", line(&mut self.hessian.row(r).iter().copied())).unwrap();
        }
        writeln!(s, "{}", line(&mut self.linear.iter().copied())).unwrap();
        for r in 0..self.n_rows() {
            let mut vals: Vec<f64> = self.g.row(r).iter().copied().collect();
            vals.push(self.c[r]);
            writeln!(s, "{}", line(&mut vals.into_iter())).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<QpProblem> {
        let bad = |m: &str| Error::FormatMismatch(format!("QP text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let parse = |l: &str| -> Result<Vec<f64>> {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(&e.to_string())))
                .collect()
        };
        let head: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("header")))
            .collect::<Result<_>>()?;
        let [n, rows] = head[..] else {
            return Err(bad("header needs two integers"));
        };
        let mut h = DMatrix::zeros(n, n);
        for r in 0..n {
            let v = parse(lines.next().ok_or_else(|| bad("missing Hessian row"))?)?;
            if v.len() != n {
                return Err(bad("Hessian row length"));
            }
            h.row_mut(r).copy_from_slice(&v);
        }
        let a = parse(lines.next().ok_or_else(|| bad("missing linear term"))?)?;
        if a.len() != n {
            return Err(bad("linear term length"));
        }
        let mut g = DMatrix::zeros(rows, n);
        let mut c = DVector::zeros(rows);
        for r in 0..rows {
            let v = parse(lines.next().ok_or_else(|| bad("missing constraint row"))?)?;
            if v.len() != n + 1 {
                return Err(bad("constraint row length"));
            }
            g.row_mut(r).copy_from_slice(&v[..n]);
            c[r] = v[n];
        }
        Ok(QpProblem::new(h, DVector::from_vec(a), g, c))
    }
}

/// Dual active-set solve. Returns `Err` only when the Hessian is not SPD;
/// infeasibility and iteration exhaustion are reported through the status.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_qp_with_limit(p, (100 * p.n_rows()).max(1))
}

pub fn solve_qp_with_limit(p: &QpProblem, max_iterations: usize) -> Result<QpSolution> {
    let n = p.n_vars();
    let rows = p.n_rows();
    let chol = Cholesky::new(p.hessian.clone())
        .ok_or_else(|| Error::NumericalBreakdown("QP Hessian is not positive definite".into()))?;
    let hinv = chol.inverse();

    // Constraints in ≥ form: nⱼᵀx ≥ bⱼ with nⱼ = −Gⱼ, bⱼ = −cⱼ.
    let normal = |j: usize| -> DVector<f64> { -p.g.row(j).transpose() };
    let scale = 1.0 + p.c.amax() + p.g.amax();
    let feas_tol = 1e-12 * scale;

    let mut x = -(&hinv * &p.linear);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let finish = |x: DVector<f64>, active: Vec<usize>, u: Vec<f64>, status, iterations| {
        let mut lambda = DVector::zeros(rows);
        for (&j, &uj) in active.iter().zip(&u) {
            lambda[j] = uj;
        }
        let kkt = p.kkt_residuals(&x, &lambda);
        QpSolution {
            x,
            multipliers: lambda,
            active,
            status,
            iterations,
            kkt,
        }
    };

    loop {
        // Most violated inactive row.
        let slack = |j: usize, x: &DVector<f64>| p.c[j] - p.g.row(j).dot(&x.transpose());
        let candidate = (0..rows)
            .filter(|j| !active.contains(j))
            .map(|j| (j, slack(j, &x)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((pidx, s0)) = candidate else {
            return Ok(finish(x, active, u, QpStatus::Solved, iterations));
        };
        if s0 >= -feas_tol {
            return Ok(finish(x, active, u, QpStatus::Solved, iterations));
        }
        let np = normal(pidx);
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Ok(finish(x, active, u, QpStatus::IterationLimit, iterations));
            }
            let q = active.len();
            let (z, r) = if q == 0 {
                (&hinv * &np, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, q, |i, k| -p.g[(active[k], i)]);
                let hn = &hinv * &nmat;
                let m = nmat.tr_mul(&hn);
                let Some(mchol) = Cholesky::new(m) else {
                    return Err(Error::NumericalBreakdown(
                        "active constraint normals became dependent".into(),
                    ));
                };
                let r = mchol.solve(&hn.tr_mul(&np));
                let z = &hinv * &np - &hn * &r;
                (z, r)
            };

            // Partial step: largest dual step keeping active multipliers ≥ 0.
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for k in 0..q {
                if r[k] > 1e-14 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_k = Some(k);
                    }
                }
            }
            // Full step: primal step that makes row p active.
            let znp = z.dot(&np);
            let t2 = if z.amax() > 1e-14 * (1.0 + np.amax()) && znp > 0.0 {
                let viol = -slack(pidx, &x);
                viol / znp
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                return Ok(finish(x, active, u, QpStatus::Infeasible, iterations));
            }
            if t2.is_infinite() {
                for k in 0..q {
                    u[k] -= t1 * r[k];
                }
                up += t1;
                let k = drop_k.expect("finite partial step has a blocking row");
                active.remove(k);
                u.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += &z * t;
            for k in 0..q {
                u[k] -= t * r[k];
            }
            up += t;
            if t2 <= t1 {
                active.push(pidx);
                u.push(up);
                break;
            }
            let k = drop_k.expect("partial step has a blocking row");
            active.remove(k);
            u.remove(k);
        }
    }
}

/// Input polytope A u ≤ b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPolytope {
    /// Row-major k × m.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl InputPolytope {
    /// |u_i| ≤ limits[i].
    pub fn boxed(limits: &[f64]) -> Self {
        let m = limits.len();
        let mut a = Vec::with_capacity(2 * m);
        let mut b = Vec::with_capacity(2 * m);
        for (i, &lim) in limits.iter().enumerate() {
            let mut row = vec![0.0; m];
            row[i] = 1.0;
            a.push(row.clone());
            b.push(lim);
            row[i] = -1.0;
            a.push(row);
            b.push(lim);
        }
        InputPolytope { a, b }
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.a
            .iter()
            .zip(&self.b)
            .all(|(row, &b)| row.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() <= b + tol)
    }
}

impl Default for InputPolytope {
    /// |v| ≤ 1 m/s, |ω| ≤ 2 rad/s.
    fn default() -> Self {
        InputPolytope::boxed(&[1.0, 2.0])
    }
}

/// Control-affine dynamics ẋ = f(x) + g(x)u.
pub trait ControlAffine {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// V(x) = ‖v(x) − goal‖², with v the first two state coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalClf {
    pub goal: Vec2,
}

impl GoalClf {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (Vec2::new(x[0], x[1]) - self.goal).norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[0] = 2.0 * (x[0] - self.goal.x);
        g[1] = 2.0 * (x[1] - self.goal.y);
        g
    }
}

/// One barrier evaluated at the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierRow {
    pub value: f64,
    /// ∂h/∂x over the full state.
    pub gradient: DVector<f64>,
}

impl BarrierRow {
    /// Barrier defined on the position v(x) = (x₀, x₁).
    pub fn from_position(value: f64, grad_z: Vec2, state_dim: usize) -> Self {
        let mut gradient = DVector::zeros(state_dim);
        gradient[0] = grad_z.x;
        gradient[1] = grad_z.y;
        BarrierRow { value, gradient }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpParams {
    pub gamma_c: f64,
    pub gamma_v: f64,
    pub lambda: f64,
    /// Input cost H (row-major m × m); identity when empty.
    pub input_cost: Vec<f64>,
}

impl Default for QpParams {
    fn default() -> Self {
        QpParams {
            gamma_c: 1.0,
            gamma_v: 1.0,
            lambda: 10.0,
            input_cost: Vec::new(),
        }
    }
}

/// Builds the QP over [u; ε]: one relaxed CLF row, one row per barrier, then
/// the input polytope rows, in that order.
pub fn assemble_cbf_clf_qp<D: ControlAffine>(
    x: &DVector<f64>,
    clf: &GoalClf,
    barriers: &[BarrierRow],
    dynamics: &D,
    params: &QpParams,
    input: &InputPolytope,
) -> Result<QpProblem> {
    let m = dynamics.input_dim();
    let nv = m + 1;
    let f = dynamics.drift(x);
    let gx = dynamics.input_matrix(x);

    let mut hessian = DMatrix::zeros(nv, nv);
    if params.input_cost.is_empty() {
        hessian.view_mut((0, 0), (m, m)).fill_with_identity();
    } else {
        if params.input_cost.len() != m * m {
            return Err(Error::ConfigInvalid("input_cost must be m×m".into()));
        }
        hessian
            .view_mut((0, 0), (m, m))
            .copy_from(&DMatrix::from_row_slice(m, m, &params.input_cost));
    }
    hessian[(m, m)] = 2.0 * params.lambda;

    let rows = 1 + barriers.len() + input.n_rows();
    let mut g = DMatrix::zeros(rows, nv);
    let mut c = DVector::zeros(rows);

    let dv = clf.gradient(x);
    let lfv = dv.dot(&f);
    let lgv = gx.tr_mul(&dv);
    for j in 0..m {
        g[(0, j)] = lgv[j];
    }
    g[(0, m)] = -1.0;
    c[0] = -lfv - params.gamma_v * clf.value(x);

    for (k, b) in barriers.iter().enumerate() {
        let row = 1 + k;
        let lfh = b.gradient.dot(&f);
        let lgh = gx.tr_mul(&b.gradient);
        let rhs = lfh + params.gamma_c * b.value;
        if lgh.amax() == 0.0 && rhs < 0.0 {
            return Err(Error::DegenerateRow { row, h: b.value });
        }
        for j in 0..m {
            g[(row, j)] = -lgh[j];
        }
        c[row] = rhs;
    }

    for (k, (arow, &b)) in input.a.iter().zip(&input.b).enumerate() {
        let row = 1 + barriers.len() + k;
        if arow.len() != m {
            return Err(Error::ConfigInvalid("input polytope width mismatch".into()));
        }
        for j in 0..m {
            g[(row, j)] = arow[j];
        }
        c[row] = b;
    }
    Ok(QpProblem::new(hessian, DVector::zeros(nv), g, c))
}
