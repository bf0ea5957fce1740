//! Transductive G-optimal design over a finite arm set.
//!
//! For arms `X` and test vectors `A`, the design problem is
//!
//! ```text
//! rho(A) = min_{lambda in simplex(X)} max_{y in A} y' A(lambda)^+ y,   A(lambda) = sum_x lambda_x x x'
//! ```
//!
//! Every quadratic form is evaluated in an orthonormal basis of `span(X)`,
//! so rank-deficient arm sets are handled by working in the span; a test
//! vector with a component outside the span is rejected.
//!
//! The solver is a log-barrier interior-point method on the epigraph form of
//! the problem, with damped Newton steps. For any weights `w` on `A`,
//! `2 sum_y w_y g_y - max_x sum_y w_y (x' A^-1 y)^2` lower-bounds `rho(A)`;
//! the barrier's own multipliers supply such weights, and the solver stops
//! once the bound certifies the requested relative accuracy.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::LinearInstance;

const SPAN_RESIDUAL_TOL: f64 = 1e-9;
const PRUNE: f64 = 1e-9;
/// Factor applied to the barrier weight after each centring.
const BARRIER_GROWTH: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Target relative accuracy of the returned design value.
    pub tol: f64,
    pub max_iters: usize,
    /// Keep the per-iteration objective in [`Design::history`].
    #[serde(default)]
    pub record_history: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 10_000,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    /// Weights over the arm set, summing to one.
    pub lambda: Vec<f64>,
    /// `max_y y' A(lambda)^+ y` at `lambda`.
    pub rho: f64,
    pub iterations: usize,
    /// Relative gap between `rho` and the best certified lower bound.
    pub gap_certificate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<HistoryEntry>,
}

/// Objective at one solver iterate and the best lower bound so far.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub objective: f64,
    pub lower_bound: f64,
}

/// Integer pull counts produced by rounding a design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub counts: Vec<u64>,
    pub total: u64,
    /// `max_y y' (sum_x n_x x x')^+ y` for the rounded counts.
    pub achieved: f64,
    /// `(2 / N) max_y y' A(lambda)^+ y`, the value `achieved` must not exceed.
    pub bound: f64,
    /// Single-pull moves made after apportionment.
    pub repairs: usize,
}

/// All pairwise differences `x - x'` between distinct vectors of `set`,
/// deduplicated.
pub fn difference_set(set: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if set.len() < 2 {
        return Err(Error::DegenerateSet(set.len()));
    }
    let mut out = Vec::with_capacity(set.len() * (set.len() - 1));
    for (i, a) in set.iter().enumerate() {
        for (j, b) in set.iter().enumerate() {
            if i != j && a != b {
                out.push(a.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<f64>>());
            }
        }
    }
    dedup_vectors(&mut out);
    Ok(out)
}

/// Differences `x_best - x` for every other vector of `set`.
pub fn best_difference_set(set: &[Vec<f64>], best: usize) -> Result<Vec<Vec<f64>>> {
    if set.len() < 2 {
        return Err(Error::DegenerateSet(set.len()));
    }
    let top = set.get(best).ok_or(Error::InvalidArm {
        arm: best,
        num_arms: set.len(),
    })?;
    Ok(set
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, x)| top.iter().zip(x).map(|(p, q)| p - q).collect())
        .collect())
}

fn dedup_vectors(vs: &mut Vec<Vec<f64>>) {
    vs.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    vs.dedup();
}

/// An arm set expressed in an orthonormal basis of its span.
#[derive(Clone, Debug)]
pub struct ArmSpace {
    /// `d x k`, orthonormal columns spanning the arms.
    basis: DMatrix<f64>,
    /// `k x n`, arm coordinates in `basis`.
    coords: DMatrix<f64>,
}

impl ArmSpace {
    pub fn new(arms: &[Vec<f64>]) -> Result<Self> {
        let n = arms.len();
        let d = arms.first().map_or(0, Vec::len);
        if n == 0 || d == 0 {
            return Err(Error::InvalidInstance("empty arm set".into()));
        }
        if arms.iter().any(|x| x.len() != d) {
            return Err(Error::InvalidInstance("arms have mixed dimensions".into()));
        }
        let x = DMatrix::from_fn(d, n, |i, j| arms[j][i]);
        let svd = x.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let cutoff = smax * 1e-10 * d.max(n) as f64;
        let keep: Vec<_> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cutoff)
            .map(|i| u.column(i).into_owned())
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidInstance("arms span only the origin".into()));
        }
        let basis = DMatrix::from_columns(&keep);
        let coords = basis.transpose() * x;
        Ok(Self { basis, coords })
    }

    /// Dimension of the span.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn num_arms(&self) -> usize {
        self.coords.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }


    /// Coordinates of `y` in the span basis; `index` labels errors.
    pub fn project(&self, y: &[f64], index: usize) -> Result<DVector<f64>> {
        if y.len() != self.ambient_dim() {
            return Err(Error::InvalidInstance(format!(
                "test vector {index} has dimension {}, expected {}",
                y.len(),
                self.ambient_dim()
            )));
        }
        let y = DVector::from_column_slice(y);
        let z = self.basis.transpose() * &y;
        let residual = (&y - &self.basis * &z).norm();
        if residual > SPAN_RESIDUAL_TOL * y.norm().max(1.0) {
            return Err(Error::UnreachableDirection { index, residual });
        }
        Ok(z)
    }

    /// Maps span coordinates back to the ambient space.
    pub fn lift(&self, z: &DVector<f64>) -> Vec<f64> {
        (&self.basis * z).iter().copied().collect()
    }

    /// `sum_x weights_x z_x z_x'` in span coordinates.
    pub fn gram(&self, weights: &[f64]) -> DMatrix<f64> {
        let k = self.rank();
        let mut g = DMatrix::zeros(k, k);
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                let z = self.coords.column(j);
                g.ger(w, &z, &z, 1.0);
            }
        }
        g
    }

    fn project_all(&self, tests: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let cols = tests
            .iter()
            .enumerate()
            .map(|(i, y)| self.project(y, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// `max_y y' A(weights)^+ y`; infinite when some `y` is outside the
    /// range of `A(weights)`.
    pub fn max_quadratic(&self, weights: &[f64], tests: &[Vec<f64>]) -> Result<f64> {
        let v = self.project_all(tests)?;
        Ok(max_quadratic_pinv(&self.gram(weights), &v))
    }

    /// Solves the design problem for `tests` over this arm set.
    pub fn solve(&self, tests: &[Vec<f64>], opts: &DesignOptions) -> Result<Design> {
        if tests.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let v = self.project_all(tests)?;
        Ok(interior_point(&self.coords, &v, opts))
    }
}

/// `max_j v_j' G^+ v_j` with an explicit range check.
pub(crate) fn max_quadratic_pinv(g: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(g.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = top * 1e-12 * g.nrows() as f64;
    let mut worst: f64 = 0.0;
    for col in v.column_iter() {
        let norm = col.norm();
        let mut value = 0.0;
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            let c = eig.eigenvectors.column(i).dot(&col);
            if ev > cutoff {
                value += c * c / ev;
            } else if c.abs() > 1e-9 * norm.max(1.0) {
                return f64::INFINITY;
            }
        }
        worst = worst.max(value);
    }
    worst
}

/// Solves the design problem for test vectors `tests` over `arms`.
pub fn solve_design(arms: &[Vec<f64>], tests: &[Vec<f64>], opts: &DesignOptions) -> Result<Design> {
    ArmSpace::new(arms)?.solve(tests, opts)
}

/// `2 sum_y w_y g_y - max_x sum_y w_y p_xy^2`, a lower bound on the optimum
/// for any probability vector `w`.
fn dual_bound(w: &[f64], g: &[f64], p: &DMatrix<f64>) -> f64 {
    let s: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    let h_max = p
        .row_iter()
        .map(|row| row.iter().zip(w).map(|(v, a)| a * v * v).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    2.0 * s - h_max
}

fn gram_of(z: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(z.nrows(), z.nrows());
    for (j, &w) in lambda.iter().enumerate() {
        if w != 0.0 {
            g.ger(w, &z.column(j), &z.column(j), 1.0);
        }
    }
    g
}

/// Pseudo-inverse value at `lambda`, after dropping weights that are
/// negligible next to the largest one when that does not make it worse.
fn final_value(z: &DMatrix<f64>, v: &DMatrix<f64>, lambda: &mut Vec<f64>) -> f64 {
    let raw = max_quadratic_pinv(&gram_of(z, lambda), v);
    let top = lambda.iter().copied().fold(0.0, f64::max);
    let mut pruned: Vec<f64> = lambda.iter().map(|&l| if l < PRUNE * top { 0.0 } else { l }).collect();
    let total: f64 = pruned.iter().sum();
    pruned.iter_mut().for_each(|l| *l /= total);
    let tidy = max_quadratic_pinv(&gram_of(z, &pruned), v);
    if tidy <= raw {
        *lambda = pruned;
        tidy
    } else {
        raw
    }
}

/// Drops test vectors that are exact negatives (or copies) of earlier ones;
/// they have the same quadratic form.
fn distinct_up_to_sign(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut seen = std::collections::HashSet::new();
    let mut keep = Vec::new();
    for (j, col) in v.column_iter().enumerate() {
        let flip = col.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0);
        let key: Vec<u64> = col
            .iter()
            .map(|&c| (if flip { -c } else { c } + 0.0).to_bits())
            .collect();
        if seen.insert(key) {
            keep.push(j);
        }
    }
    v.select_columns(&keep)
}

/// Quantities at one design: `g_j = v_j' A^-1 v_j` and `p_xj = z_x' A^-1 v_j`.
struct Point {
    g: Vec<f64>,
    p: DMatrix<f64>,
    /// `z_x' A^-1 z_x'` for all arm pairs, only when requested.
    gz: Option<DMatrix<f64>>,
}

fn evaluate(z: &DMatrix<f64>, v: &DMatrix<f64>, lambda: &[f64], with_arms: bool) -> Option<Point> {
    let chol = gram_of(z, lambda).cholesky()?;
    let w = chol.solve(v);
    let g: Vec<f64> = v.column_iter().zip(w.column_iter()).map(|(a, b)| a.dot(&b)).collect();
    if g.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let p = z.transpose() * &w;
    let gz = with_arms.then(|| z.transpose() * chol.solve(z));
    Some(Point { g, p, gz })
}

/// Barrier objective `tau t - sum_y ln(t - g_y) - sum_x ln lambda_x`, or
/// `None` outside its domain.
fn barrier(tau: f64, t: f64, lambda: &[f64], g: &[f64]) -> Option<f64> {
    let mut f = tau * t;
    for &gy in g {
        let s = t - gy;
        if !(s > 0.0) {
            return None;
        }
        f -= s.ln();
    }
    for &l in lambda {
        if !(l > 0.0) {
            return None;
        }
        f -= l.ln();
    }
    Some(f)
}

/// Core solver in span coordinates: `z` is `k x n` (arms spanning `R^k`),
/// `v` is `k x m` (test vectors).
///
/// Log-barrier interior point on the epigraph form
/// `min t  s.t.  v_j' A(lambda)^-1 v_j <= t, lambda in the simplex`.
/// Newton steps are taken in variables scaled by the current iterate, which
/// keeps the system well conditioned as weights approach zero.
fn interior_point(z: &DMatrix<f64>, v: &DMatrix<f64>, opts: &DesignOptions) -> Design {
    let n = z.ncols();
    let v = distinct_up_to_sign(v);
    let m = v.ncols();
    let mut lambda = vec![1.0 / n as f64; n];
    let start = evaluate(z, &v, &lambda, false).expect("arms span their coordinates");
    let top = start.g.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Design {
            lambda,
            rho: 0.0,
            iterations: 0,
            gap_certificate: 0.0,
            history: Vec::new(),
        };
    }

    let mut t = 2.0 * top;
    // Centring at barrier weight tau leaves a duality gap of about
    // (m + n) / tau, so start with a gap comparable to the value.
    let mut tau = (m + n) as f64 / top;
    let mut best_value = f64::INFINITY;
    let mut best_lambda = lambda.clone();
    let mut best_lower: f64 = 0.0;
    let mut history = Vec::new();
    let mut iterations = 0;

    'outer: loop {
        // Centring.
        loop {
            let pt = evaluate(z, &v, &lambda, true).expect("iterate stays positive definite");
            let value = pt.g.iter().copied().fold(0.0, f64::max);
            if value < best_value {
                best_value = value;
                best_lambda.clone_from(&lambda);
            }
            let inv_s: Vec<f64> = pt.g.iter().map(|&gy| 1.0 / (t - gy)).collect();
            let total: f64 = inv_s.iter().sum();
            let w: Vec<f64> = inv_s.iter().map(|x| x / total).collect();
            best_lower = best_lower.max(dual_bound(&w, &pt.g, &pt.p));
            if opts.record_history {
                history.push(HistoryEntry {
                    objective: value,
                    lower_bound: best_lower,
                });
            }
            if (best_value - best_lower) <= opts.tol * best_value || iterations >= opts.max_iters {
                break 'outer;
            }
            iterations += 1;

            // Gradient and Hessian in (t, lambda), then scaled by
            // S = diag(t, lambda).
            let dim = n + 1;
            let mut grad = DVector::zeros(dim);
            grad[0] = tau - total;
            let sq = pt.p.map(|x| x * x);
            let inv_s2: Vec<f64> = inv_s.iter().map(|x| x * x).collect();
            for x in 0..n {
                let row = sq.row(x);
                grad[x + 1] = -row.iter().zip(&inv_s).map(|(a, b)| a * b).sum::<f64>() - 1.0 / lambda[x];
            }
            let mut h = DMatrix::zeros(dim, dim);
            h[(0, 0)] = inv_s2.iter().sum();
            let mut sq_scaled = sq.clone();
            let mut p_scaled = pt.p.clone();
            for j in 0..m {
                sq_scaled.column_mut(j).scale_mut(inv_s2[j]);
                p_scaled.column_mut(j).scale_mut(2.0 * inv_s[j]);
            }
            let cross = &sq * sq_scaled.transpose();
            let curv = (&pt.p * p_scaled.transpose()).component_mul(pt.gz.as_ref().unwrap());
            for x in 0..n {
                let c: f64 = sq.row(x).iter().zip(&inv_s2).map(|(a, b)| a * b).sum();
                h[(0, x + 1)] = c;
                h[(x + 1, 0)] = c;
                for y in 0..n {
                    h[(x + 1, y + 1)] = cross[(x, y)] + curv[(x, y)];
                }
                h[(x + 1, x + 1)] += 1.0 / (lambda[x] * lambda[x]);
            }
            let scale: Vec<f64> = std::iter::once(t).chain(lambda.iter().copied()).collect();
            let mut kkt = DMatrix::zeros(dim + 1, dim + 1);
            let mut rhs = DVector::zeros(dim + 1);
            for a in 0..dim {
                for b in 0..dim {
                    kkt[(a, b)] = scale[a] * h[(a, b)] * scale[b];
                }
                rhs[a] = -scale[a] * grad[a];
            }
            for x in 0..n {
                kkt[(x + 1, dim)] = lambda[x];
                kkt[(dim, x + 1)] = lambda[x];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                break 'outer;
            };
            let step: Vec<f64> = (0..dim).map(|a| scale[a] * sol[a]).collect();
            let slope: f64 = step.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) || -slope <= 1e-10 {
                break;
            }

            let f0 = barrier(tau, t, &lambda, &pt.g).unwrap();
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-12 {
                let t1 = t + alpha * step[0];
                let l1: Vec<f64> = lambda.iter().zip(&step[1..]).map(|(l, d)| l + alpha * d).collect();
                if l1.iter().all(|&l| l > 0.0) {
                    if let Some(p1) = evaluate(z, &v, &l1, false) {
                        if let Some(f1) = barrier(tau, t1, &l1, &p1.g) {
                            if f1 <= f0 + 0.25 * alpha * slope {
                                let sum: f64 = l1.iter().sum();
                                lambda = l1.into_iter().map(|l| l / sum).collect();
                                t = t1;
                                moved = true;
                                break;
                            }
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
            // Newton decrement small: centred.
            if -slope <= 1e-9 {
                break;
            }
        }
        tau *= BARRIER_GROWTH;
    }

    let rho = final_value(z, &v, &mut best_lambda);
    let gap_certificate = if rho > 0.0 {
        ((rho - best_lower) / rho).max(0.0)
    } else {
        0.0
    };
    Design {
        lambda: best_lambda,
        rho,
        iterations,
        gap_certificate,
        history,
    }
}

/// Rounds `lambda` to `total` integer pulls.
///
/// Largest-remainder apportionment of `total * lambda`, followed by
/// single-pull moves while the factor-2 guarantee
/// `max_y ||y||^2_{(sum n_x x x')^+} <= (2 / N) max_y ||y||^2_{A(lambda)^+}`
/// fails, at most `total` moves. A guarantee that cannot be met is an error.
pub fn round_design(
    lambda: &[f64],
    total: u64,
    space: &ArmSpace,
    tests: &[Vec<f64>],
) -> Result<Allocation> {
    let n = space.num_arms();
    if lambda.len() != n {
        return Err(Error::InvalidConfig(format!(
            "design has {} weights for {n} arms",
            lambda.len()
        )));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidConfig("design weights must be nonnegative".into()));
    }
    let dim = space.rank();
    if total as usize <= dim {
        return Err(Error::InsufficientBudget {
            total: total as usize,
            dim,
        });
    }
    if tests.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let v = space.project_all(tests)?;
    let weight_sum: f64 = lambda.iter().sum();
    let lambda: Vec<f64> = lambda.iter().map(|l| l / weight_sum).collect();
    let bound = 2.0 / total as f64 * max_quadratic_pinv(&space.gram(&lambda), &v);

    let mut counts = apportion(&lambda, total);
    let eval = |counts: &[u64]| {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        max_quadratic_pinv(&space.gram(&w), &v)
    };
    let mut achieved = eval(&counts);
    let mut repairs = 0;
    while achieved > bound && repairs < total as usize {
        // Best receiver for one extra pull, then the donor whose loss hurts least.
        let (mut recv, mut recv_val) = (0, f64::INFINITY);
        for x in 0..n {
            counts[x] += 1;
            let val = eval(&counts);
            counts[x] -= 1;
            if val < recv_val {
                recv = x;
                recv_val = val;
            }
        }
        counts[recv] += 1;
        let (mut donor, mut donor_val) = (None, f64::INFINITY);
        for x in 0..n {
            if x == recv || counts[x] == 0 {
                continue;
            }
            counts[x] -= 1;
            let val = eval(&counts);
            counts[x] += 1;
            if val < donor_val {
                donor = Some(x);
                donor_val = val;
            }
        }
        let Some(donor) = donor else {
            counts[recv] -= 1;
            break;
        };
        if donor_val >= achieved {
            counts[recv] -= 1;
            break;
        }
        counts[donor] -= 1;
        achieved = donor_val;
        repairs += 1;
    }
    if achieved > bound {
        return Err(Error::RoundingFailure { achieved, bound });
    }
    Ok(Allocation {
        counts,
        total,
        achieved,
        bound,
        repairs,
    })
}

/// Largest-remainder apportionment of `total` seats by `weights`
/// (normalized); ties go to the lower index.
pub fn apportion(weights: &[f64], total: u64) -> Vec<u64> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// `min_lambda max_{x != x*} ||x - x*||^2_{A(lambda)^+} / Delta_x^2`, with the
/// design that attains it. Uses the true parameter, so it is an evaluation
/// quantity only.
pub fn psi_star_design(instance: &LinearInstance, opts: &DesignOptions) -> Result<Design> {
    let best = instance.best();
    let gaps = instance.gaps();
    let tests = best_difference_set(instance.arms(), best)?;
    let others = (0..instance.arms().len()).filter(|&i| i != best);
    let scaled: Vec<Vec<f64>> = tests
        .into_iter()
        .zip(others)
        .map(|(y, i)| {
            let gap = gaps[i];
            if gap > 0.0 {
                Ok(y.into_iter().map(|c| c / gap).collect())
            } else {
                Err(Error::NonUniqueBest)
            }
        })
        .collect::<Result<_>>()?;
    solve_design(instance.arms(), &scaled, opts)
}

pub fn psi_star(instance: &LinearInstance, opts: &DesignOptions) -> Result<f64> {
    Ok(psi_star_design(instance, opts)?.rho)
}

/// Memoized design values of difference sets `Y(S)` for subsets `S` of a
/// fixed arm set.
pub struct DesignCache<'a> {
    arms: &'a [Vec<f64>],
    space: ArmSpace,
    opts: DesignOptions,
    cache: HashMap<Vec<usize>, Design>,
}

impl<'a> DesignCache<'a> {
    pub fn new(arms: &'a [Vec<f64>], opts: DesignOptions) -> Result<Self> {
        Ok(Self {
            arms,
            space: ArmSpace::new(arms)?,
            opts,
            cache: HashMap::new(),
        })
    }

    pub fn space(&self) -> &ArmSpace {
        &self.space
    }

    /// Design for `Y(subset)`. Since `Y(S)` is closed under negation, only one
    /// of each `+-y` pair is passed to the solver.
    pub fn differences(&mut self, subset: &[usize]) -> Result<&Design> {
        let mut key = subset.to_vec();
        key.sort_unstable();
        key.dedup();
        if key.len() < 2 {
            return Err(Error::DegenerateSet(key.len()));
        }
        if !self.cache.contains_key(&key) {
            let mut tests = Vec::with_capacity(key.len() * (key.len() - 1) / 2);
            for (a, &i) in key.iter().enumerate() {
                for &j in &key[a + 1..] {
                    let y: Vec<f64> = self.arms[i]
                        .iter()
                        .zip(&self.arms[j])
                        .map(|(p, q)| p - q)
                        .collect();
                    if y.iter().any(|&c| c != 0.0) {
                        tests.push(y);
                    }
                }
            }
            dedup_vectors(&mut tests);
            let design = self.space.solve(&tests, &self.opts)?;
            self.cache.insert(key.clone(), design);
        }
        Ok(&self.cache[&key])
    }

    pub fn rho(&mut self, subset: &[usize]) -> Result<f64> {
        Ok(self.differences(subset)?.rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn difference_set_of_two_basis_vectors() {
        let y = difference_set(&basis(2)).unwrap();
        assert_eq!(y, vec![vec![-1.0, 1.0], vec![1.0, -1.0]]);
        assert!(matches!(difference_set(&basis(2)[..1]), Err(Error::DegenerateSet(1))));
    }

    #[test]
    fn difference_set_counts() {
        let s = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![0.5, 0.5]];
        let y = difference_set(&s).unwrap();
        // (1,0) arises twice: 1-0 and 2-1.
        assert_eq!(y.len(), 10);
        assert!(y.len() <= s.len() * (s.len() - 1));
        assert_eq!(best_difference_set(&s, 2).unwrap().len(), s.len() - 1);
    }

    #[test]
    fn two_arm_design_is_balanced() {
        let d = solve_design(&basis(2), &[vec![1.0, -1.0]], &DesignOptions::default()).unwrap();
        assert!((d.rho - 4.0).abs() < 1e-3);
        assert!((d.lambda[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn single_arm_direction_has_unit_value() {
        // Only x = (1, 0) matters; concentrating on it gives ||x||^2 = 1.
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let d = solve_design(&arms, &[vec![1.0, 0.0]], &DesignOptions::default()).unwrap();
        assert!((d.rho - 1.0).abs() < 1e-3, "rho = {}", d.rho);
        assert!(d.lambda[0] > 0.99);
    }

    #[test]
    fn rank_deficient_arms_work_in_their_span() {
        let arms = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let space = ArmSpace::new(&arms).unwrap();
        assert_eq!(space.rank(), 2);
        let d = space.solve(&[vec![1.0, -1.0, 0.0]], &DesignOptions::default()).unwrap();
        assert!((d.rho - 4.0).abs() < 1e-3);
        assert!(matches!(
            space.solve(&[vec![0.0, 0.0, 1.0]], &DesignOptions::default()),
            Err(Error::UnreachableDirection { index: 0, .. })
        ));
        assert!(matches!(
            space.solve(&[], &DesignOptions::default()),
            Err(Error::EmptyTestSet)
        ));
    }

    #[test]
    fn singular_optimum_is_found() {
        // Only e_0 - e_4 is tested, so the other arms should get no weight
        // and the optimal design matrix is singular.
        let arms = basis(6);
        let mut y = vec![0.0; 6];
        y[0] = 1.0;
        y[4] = -1.0;
        let d = solve_design(&arms, &[y], &DesignOptions::default()).unwrap();
        assert!((d.rho - 4.0).abs() < 1e-3, "{}", d.rho);
        assert!((d.lambda[0] - 0.5).abs() < 1e-2 && (d.lambda[4] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn certificate_brackets_the_optimum() {
        let arms = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.6, 0.6, 0.0],
            vec![0.1, -0.5, 0.7],
        ];
        let tests = difference_set(&arms).unwrap();
        let loose = solve_design(&arms, &tests, &DesignOptions::default()).unwrap();
        let tight_opts = DesignOptions {
            tol: 1e-8,
            max_iters: 50_000,
            ..DesignOptions::default()
        };
        let tight = solve_design(&arms, &tests, &tight_opts).unwrap();
        assert!(loose.gap_certificate < 1e-2);
        assert!(tight.rho <= loose.rho * (1.0 + 1e-9));
        assert!(tight.rho >= loose.rho * (1.0 - loose.gap_certificate) - 1e-9);
        assert!((loose.rho - tight.rho) / tight.rho < 1e-4);
        assert!((loose.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(loose.lambda.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn lower_bounds_stay_below_every_iterate() {
        let arms = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.7, 0.7],
            vec![-0.3, 0.9],
        ];
        let opts = DesignOptions {
            record_history: true,
            ..DesignOptions::default()
        };
        let d = solve_design(&arms, &difference_set(&arms).unwrap(), &opts).unwrap();
        assert!(d.history.len() > 1);
        let lowest = d.history.iter().map(|e| e.objective).fold(f64::INFINITY, f64::min);
        let last = d.history.last().unwrap();
        assert!(last.lower_bound <= lowest);
        assert!(d.history.windows(2).all(|w| w[1].lower_bound >= w[0].lower_bound));
        assert!(last.objective - last.lower_bound <= 1e-4 * last.objective);
    }

    #[test]
    fn apportion_is_exact_for_proportional_weights() {
        assert_eq!(apportion(&[0.25; 4], 8), vec![2, 2, 2, 2]);
        assert_eq!(apportion(&[0.5, 0.3, 0.2, 0.0], 7), vec![4, 2, 1, 0]);
        assert_eq!(apportion(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
    }

    #[test]
    fn round_uniform_basis() {
        let arms = basis(4);
        let space = ArmSpace::new(&arms).unwrap();
        let tests = difference_set(&arms).unwrap();
        let alloc = round_design(&[0.25; 4], 8, &space, &tests).unwrap();
        assert_eq!(alloc.counts, vec![2, 2, 2, 2]);
        assert_eq!(alloc.repairs, 0);
        assert!(matches!(
            round_design(&[0.25; 4], 4, &space, &tests),
            Err(Error::InsufficientBudget { total: 4, dim: 4 })
        ));
    }

    #[test]
    fn zero_weight_arm_may_go_unpulled() {
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let space = ArmSpace::new(&arms).unwrap();
        let alloc = round_design(&[0.5, 0.5, 0.0], 10, &space, &[vec![1.0, -1.0]]).unwrap();
        assert_eq!(alloc.counts, vec![5, 5, 0]);
    }

    #[test]
    fn psi_star_two_arm_basis() {
        let inst = LinearInstance::new(basis(2), vec![1.0, 0.0], 1.0).unwrap();
        let psi = psi_star(&inst, &DesignOptions::default()).unwrap();
        assert!((psi - 4.0).abs() < 1e-3);
    }

    #[test]
    fn cache_matches_direct_solve() {
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]];
        let mut cache = DesignCache::new(&arms, DesignOptions::default()).unwrap();
        let cached = cache.rho(&[2, 0, 1]).unwrap();
        let direct = solve_design(&arms, &difference_set(&arms).unwrap(), &DesignOptions::default())
            .unwrap()
            .rho;
        assert!((cached - direct).abs() <= 2e-4 * direct);
        assert!(matches!(cache.rho(&[1]), Err(Error::DegenerateSet(1))));
    }

    fn arb_arms() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..5).prop_flat_map(|d| {
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), d..d + 4).prop_map(|arms| {
                arms.into_iter()
                    .map(|x| {
                        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                        x.into_iter().map(|v| v / norm).collect()
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn subsets_never_need_more(arms in arb_arms()) {
            let opts = DesignOptions::default();
            let Ok(space) = ArmSpace::new(&arms) else {
                return Ok(());
            };
            prop_assume!(arms[..arms.len() - 1].iter().any(|x| x != &arms[0]));
            let full = difference_set(&arms).unwrap();
            let sub = difference_set(&arms[..arms.len() - 1]).unwrap();
            let big = space.solve(&full, &opts).unwrap();
            let small = space.solve(&sub, &opts).unwrap();
            prop_assert!(small.rho <= big.rho * (1.0 + 2.0 * opts.tol));
            // The returned value is the objective at the returned weights.
            let at = space.max_quadratic(&big.lambda, &full).unwrap();
            prop_assert!((at - big.rho).abs() <= 1e-9 * big.rho);
        }

        #[test]
        fn psi_star_is_permutation_invariant_and_bounded(arms in arb_arms(), shift in 0usize..8) {
            let d = arms[0].len();
            let theta: Vec<f64> = (0..d).map(|i| 1.0 / (i as f64 + 1.5)).collect();
            let Ok(inst) = LinearInstance::new(arms.clone(), theta.clone(), 1.0) else {
                return Ok(());
            };
            let opts = DesignOptions::default();
            let psi = psi_star(&inst, &opts).unwrap();
            let mut rotated = arms.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            let inst2 = LinearInstance::new(rotated, theta, 1.0).unwrap();
            let psi2 = psi_star(&inst2, &opts).unwrap();
            prop_assert!((psi - psi2).abs() <= 2.0 * opts.tol * psi.max(psi2));

            let best = inst.best();
            let max_gap = inst.gaps().into_iter().fold(0.0, f64::max);
            let rho_star = solve_design(&arms, &best_difference_set(&arms, best).unwrap(), &opts).unwrap().rho;
            prop_assert!(psi >= rho_star / (max_gap * max_gap) * (1.0 - 2.0 * opts.tol));
        }
    }
}
