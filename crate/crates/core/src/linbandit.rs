//! Instance-sensitive RAGE for transductive linear bandits.
//!
//! Batch `r` solves the design problem on the surviving difference set,
//! spends
//!
//! ```text
//! N_r = max(ceil(4 max{2 ln(|S_r|^2 / delta_r) rho_r L_r, d}), d + 1),   delta_r = delta / r^2
//! ```
//!
//! pulls rounded from that design, fits least squares on the batch's own
//! samples, and eliminates every arm whose estimated gap is at least
//! `beta_conf / sqrt(L_r)`. The next budget is
//!
//! ```text
//! L_{r+1} = beta_grid L_r
//!         + sum_{t=1}^{T_r} beta_grid^t rho(Y(X \ {x eliminated : eps_x > beta_sample beta_grid^{-t/2}}))
//!           / rho(Y(S_{r+1}))
//! ```
//!
//! with `beta_grid^{T_r} <= L_r < beta_grid^{T_r + 1}` and `eps_x` frozen at
//! elimination. With `beta_sample = 0` the sum is dropped entirely, which is
//! RAGE on a geometric grid.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::complexity::{grid_batches, ComplexityKind, ComplexityReport};
use crate::error::{Error, Result};
use crate::instance::{LinearInstance, RewardModel};
use crate::mab::{default_max_batches, validate_params};
use crate::optdesign::{best_difference_set, psi_star, round_design, DesignCache, DesignOptions};
use crate::rng::batch_rng;
use crate::trace::{BatchRecord, LinearBatchInfo, RunTrace};

/// Elimination constant of the linear recursion.
pub const LINEAR_RECURSION_C: f64 = 15.0;
/// Growth of the linear potential while `U_r` is unchanged.
pub const LINEAR_POTENTIAL_GROWTH: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RageConfig {
    pub beta_conf: f64,
    pub beta_sample: f64,
    pub beta_grid: f64,
    pub delta: f64,
    #[serde(default = "default_max_batches")]
    pub max_batches: usize,
    #[serde(default)]
    pub solver: DesignOptions,
}

impl Default for RageConfig {
    fn default() -> Self {
        Self::theory()
    }
}

impl RageConfig {
    /// `beta_conf = 5`, `beta_sample = 5/3`, `beta_grid = 4`.
    pub fn theory() -> Self {
        Self {
            beta_conf: 5.0,
            beta_sample: 5.0 / 3.0,
            beta_grid: 4.0,
            delta: 0.1,
            max_batches: default_max_batches(),
            solver: DesignOptions::default(),
        }
    }

    /// Classical RAGE on a geometric grid.
    pub fn rage(beta_conf: f64, beta_grid: f64, delta: f64) -> Self {
        Self {
            beta_conf,
            beta_sample: 0.0,
            beta_grid,
            delta,
            max_batches: default_max_batches(),
            solver: DesignOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_params(
            self.beta_conf,
            self.beta_sample,
            self.beta_grid,
            self.delta,
            self.max_batches,
        )?;
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return Err(Error::InvalidConfig(
                "solver tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Total pulls `N_r` of batch `batch` (1-based).
pub fn total_pulls(rho: f64, budget: f64, survivors: usize, batch: usize, delta: f64, dim: usize) -> u64 {
    let r = batch as f64;
    let delta_r = delta / (r * r);
    let s = survivors as f64;
    let raw = 4.0 * (2.0 * (s * s / delta_r).ln() * rho * budget).max(dim as f64);
    (raw.ceil() as u64).max(dim as u64 + 1)
}

/// The integer `T` with `base^T <= value < base^{T+1}`, by repeated
/// multiplication so exact powers land on themselves. Non-finite values and
/// bases at most 1 give 0.
pub fn grid_exponent(value: f64, base: f64) -> u32 {
    let mut t = 0;
    let mut power = 1.0;
    if !value.is_finite() || base <= 1.0 {
        return 0;
    }
    while power * base <= value {
        power *= base;
        t += 1;
    }
    t
}

/// Differences `x_i - x_j` for `i < j` in `subset`.
pub fn half_differences(arms: &[Vec<f64>], subset: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            out.push(arms[i].iter().zip(&arms[j]).map(|(p, q)| p - q).collect());
        }
    }
    out
}

/// Least-squares fit in span coordinates from per-arm pull counts and
/// reward sums, using the pseudo-inverse when the pulled arms do not span.
fn least_squares(coords: &[DVector<f64>], counts: &[u64], sums: &[f64]) -> DVector<f64> {
    let k = coords[0].len();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for ((z, &c), &s) in coords.iter().zip(counts).zip(sums) {
        if c > 0 {
            gram.ger(c as f64, z, z, 1.0);
            rhs.axpy(s, z, 1.0);
        }
    }
    match nalgebra::Cholesky::new(gram.clone()) {
        Some(ch) => ch.solve(&rhs),
        None => {
            let top = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let pinv = gram
                .pseudo_inverse(top * 1e-12 * k as f64)
                .expect("pseudo-inverse of a symmetric matrix");
            pinv * rhs
        }
    }
}

/// Runs IS-RAGE on `instance`.
///
/// Ties for the empirical leader go to the lowest arm index. Design-solver
/// and rounding errors propagate; exceeding `max_batches` returns
/// [`Error::BudgetExhausted`] with the partial trace.
pub fn run_is_rage(instance: &LinearInstance, config: &RageConfig, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let arms = instance.arms();
    let n = arms.len();
    if n < 2 {
        return Err(Error::InvalidInstance(format!("need at least 2 arms, got {n}")));
    }
    let mut cache = DesignCache::new(arms, config.solver.clone())?;
    let dim = cache.space().rank();
    let coords = arms
        .iter()
        .enumerate()
        .map(|(i, x)| cache.space().project(x, i))
        .collect::<Result<Vec<_>>>()?;

    let mut trace = RunTrace::new(seed);
    let mut alive: Vec<usize> = (0..n).collect();
    let mut frozen: BTreeMap<usize, f64> = BTreeMap::new();
    let mut budget = config.beta_grid;
    let mut batch = 1;

    while alive.len() > 1 {
        if batch > config.max_batches {
            return Err(Error::BudgetExhausted {
                max_batches: config.max_batches,
                trace: Box::new(trace),
            });
        }
        let design = cache.differences(&alive)?.clone();
        let n_r = total_pulls(design.rho, budget, alive.len(), batch, config.delta, dim);
        let tests = half_differences(arms, &alive);
        let alloc = round_design(&design.lambda, n_r, cache.space(), &tests)?;

        let mut rng = batch_rng(seed, batch);
        let mut sums = vec![0.0; n];
        for (arm, &count) in alloc.counts.iter().enumerate() {
            if count > 0 {
                sums[arm] = instance.pull_sum(arm, count, &mut rng)?;
            }
        }
        let theta = least_squares(&coords, &alloc.counts, &sums);
        let estimates: Vec<f64> = alive.iter().map(|&x| theta.dot(&coords[x])).collect();
        let leader = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = config.beta_conf / budget.sqrt();

        let mut eliminated = Vec::new();
        let mut survivors = Vec::new();
        let mut gap_estimates = BTreeMap::new();
        for (&arm, &p) in alive.iter().zip(&estimates) {
            let eps = leader - p;
            gap_estimates.insert(arm, eps);
            if eps >= threshold {
                frozen.insert(arm, eps);
                eliminated.push(arm);
            } else {
                survivors.push(arm);
            }
        }

        let next = if survivors.len() > 1 {
            Some(next_budget(config, budget, &survivors, &frozen, &mut cache)?)
        } else {
            None
        };
        trace.push(BatchRecord {
            batch,
            budget,
            next_budget: next,
            pulls_per_arm: alloc
                .counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(a, &c)| (a, c))
                .collect(),
            empirical_means: alive.iter().copied().zip(estimates.iter().copied()).collect(),
            gap_estimates,
            eliminated,
            survivors: survivors.clone(),
            linear: Some(LinearBatchInfo {
                total_pulls: n_r,
                design: design.lambda,
                rho: design.rho,
                theta_hat: cache.space().lift(&theta),
            }),
        });

        alive = survivors;
        if let Some(next) = next {
            budget = next;
        }
        batch += 1;
    }

    trace.finish(alive[0], Some(instance.best()));
    Ok(trace)
}

fn next_budget(
    config: &RageConfig,
    budget: f64,
    survivors: &[usize],
    frozen: &BTreeMap<usize, f64>,
    cache: &mut DesignCache<'_>,
) -> Result<f64> {
    let base = config.beta_grid * budget;
    if config.beta_sample == 0.0 {
        return Ok(base);
    }
    let n = cache.space().num_arms();
    let denom = cache.rho(survivors)?;
    let mut total = 0.0;
    let mut power = 1.0;
    for t in 1..=grid_exponent(budget, config.beta_grid) {
        power *= config.beta_grid;
        let cut = config.beta_sample * config.beta_grid.powf(-(t as f64) / 2.0);
        let keep: Vec<usize> = (0..n)
            .filter(|x| frozen.get(x).is_none_or(|&eps| eps <= cut))
            .collect();
        total += power * cache.rho(&keep)?;
    }
    Ok(base + total / denom)
}

/// Survivors of each batch whose true gap exceeds `factor / sqrt(L_r)`.
///
/// With `factor = 3 beta_conf` this is empty on the high-probability event;
/// it is a diagnostic, not an invariant.
pub fn containment_violations(
    trace: &RunTrace,
    instance: &LinearInstance,
    factor: f64,
) -> Vec<(usize, Vec<usize>)> {
    let gaps = instance.gaps();
    trace
        .batches
        .iter()
        .filter_map(|b| {
            let limit = factor / b.budget.sqrt();
            let bad: Vec<usize> = b.survivors.iter().copied().filter(|&x| gaps[x] > limit).collect();
            (!bad.is_empty()).then_some((b.batch, bad))
        })
        .collect()
}

fn rho_or_zero(cache: &mut DesignCache<'_>, subset: &[usize]) -> Result<f64> {
    if subset.len() < 2 {
        Ok(0.0)
    } else {
        cache.rho(subset)
    }
}

/// Runs the linear batch-complexity recursion and its bound.
///
/// Starts from `Lbar_1 = 4` with `U_r = {x : Delta_x > 15 / sqrt(Lbar_r)}`
/// and updates
///
/// ```text
/// Lhat_{r+1} = 4 Lbar_r + sum_{t=1}^{Tbar_r} 4^t rho(Y(X \ {x in U_r : Delta_x > 15 2^-t})) / rho(Y(X \ U_r))
/// ```
///
/// rounding `Lhat_{r+1}` down to a power of four. The loop stops once `U_r`
/// holds every suboptimal arm. The reported potential is the numerator above,
/// with `rho` of a singleton taken as zero. `bound_value` is NaN when the
/// smallest gap is at least 1, where the bound is undefined.
pub fn batch_complexity_linear(instance: &LinearInstance, opts: &DesignOptions) -> Result<ComplexityReport> {
    let arms = instance.arms();
    let n = arms.len();
    let best = instance.best();
    let gaps = instance.gaps();
    let mut cache = DesignCache::new(arms, opts.clone())?;
    let psi = psi_star(instance, opts)?;
    let rho_star = cache
        .space()
        .solve(&best_difference_set(arms, best)?, opts)?
        .rho;

    let mut lbar_sequence = Vec::new();
    let mut u_sequence: Vec<Vec<usize>> = Vec::new();
    let mut potential = Vec::new();
    let mut exponent: u32 = 1;
    loop {
        let lbar = 4f64.powi(exponent as i32);
        let cut = LINEAR_RECURSION_C / lbar.sqrt();
        let u: Vec<usize> = (0..n).filter(|&x| gaps[x] > cut).collect();
        let mut numerator = 0.0;
        for t in 1..=exponent {
            let cut_t = LINEAR_RECURSION_C * 2f64.powi(-(t as i32));
            let keep: Vec<usize> = (0..n)
                .filter(|&x| !(u.contains(&x) && gaps[x] > cut_t))
                .collect();
            numerator += 4f64.powi(t as i32) * rho_or_zero(&mut cache, &keep)?;
        }
        lbar_sequence.push(lbar);
        potential.push(numerator);
        let done = u.len() == n - 1;
        u_sequence.push(u);
        if done {
            break;
        }
        let rest: Vec<usize> = (0..n).filter(|x| !u_sequence.last().unwrap().contains(x)).collect();
        let lhat = 4.0 * lbar + numerator / cache.rho(&rest)?;
        if !lhat.is_finite() {
            return Err(Error::InvalidInstance(format!("design value diverged at L = {lbar}")));
        }
        exponent = grid_exponent(lhat, 4.0);
    }

    let r_instance = lbar_sequence.len();
    let alpha = u_sequence.iter().collect::<BTreeSet<_>>().len();
    let gap = instance.smallest_gap();
    let log_gap = (1.0 / gap).log2();
    let bound_value = if log_gap > 0.0 {
        alpha as f64 + (900.0 * log_gap * psi / rho_star).ln() / LINEAR_POTENTIAL_GROWTH.ln()
    } else {
        f64::NAN
    };
    Ok(ComplexityReport {
        kind: ComplexityKind::Linear,
        h_instance: None,
        psi_star: Some(psi),
        rho_best_differences: Some(rho_star),
        r_instance,
        alpha,
        bound_value,
        grid_batches: grid_batches(LINEAR_RECURSION_C * LINEAR_RECURSION_C, gap),
        smallest_gap: gap,
        lbar_sequence,
        u_sequence,
        potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn grid_exponent_brackets() {
        assert_eq!(grid_exponent(4.0, 4.0), 1);
        assert_eq!(grid_exponent(15.9, 4.0), 1);
        assert_eq!(grid_exponent(16.0, 4.0), 2);
        assert_eq!(grid_exponent(1.0, 4.0), 0);
        assert_eq!(grid_exponent(125.0, 5.0), 3);
    }

    #[test]
    fn first_batch_pull_count() {
        // 4 * 2 ln(16 / 0.1) * 8 * 4
        let n1 = total_pulls(8.0, 4.0, 4, 1, 0.1, 4);
        assert_eq!(n1, (256.0 * 160f64.ln()).ceil() as u64);
        assert_eq!(n1, 1300);
        // Floor at d + 1.
        assert_eq!(total_pulls(1e-9, 4.0, 2, 1, 0.1, 3), 12);
        assert_eq!(total_pulls(0.0, 4.0, 2, 1, 0.1, 0), 1);
    }

    #[test]
    fn zero_noise_two_arms_finishes_in_one_batch() {
        let inst = LinearInstance::new(basis(2), vec![1.0, 0.0], 1e-12).unwrap();
        let config = RageConfig {
            beta_conf: 1.0,
            ..RageConfig::theory()
        };
        let trace = run_is_rage(&inst, &config, 7).unwrap();
        assert_eq!(trace.total_batches, 1);
        assert_eq!(trace.returned_arm, Some(0));
        assert_eq!(trace.batches[0].eliminated, vec![1]);
        assert_eq!(trace.batches[0].next_budget, None);
        let theta = &trace.batches[0].linear.as_ref().unwrap().theta_hat;
        assert!((theta[0].abs() - 1.0).abs() < 1e-6);
        assert_eq!(trace.validate(2), Ok(()));
    }

    #[test]
    fn rage_budgets_are_geometric() {
        let mut theta = vec![0.0; 4];
        theta[0] = 0.5;
        theta[3] = 0.25;
        let inst = LinearInstance::new(basis(4), theta, 1.0).unwrap();
        let trace = run_is_rage(&inst, &RageConfig::rage(5.0, 4.0, 0.1), 3).unwrap();
        for b in &trace.batches {
            if let Some(next) = b.next_budget {
                assert_eq!(next, 4.0 * b.budget);
            }
        }
        assert_eq!(trace.validate(4), Ok(()));
    }

    #[test]
    fn is_rage_budget_grows_at_least_geometrically() {
        let mut theta = vec![0.0; 4];
        theta[0] = 0.5;
        theta[1] = 0.3;
        let inst = LinearInstance::new(basis(4), theta, 0.5).unwrap();
        let trace = run_is_rage(&inst, &RageConfig::theory(), 11).unwrap();
        for b in &trace.batches {
            let lin = b.linear.as_ref().unwrap();
            assert_eq!(b.total_pulls(), lin.total_pulls);
            assert!(lin.total_pulls > 4);
            if let Some(next) = b.next_budget {
                assert!(next >= 4.0 * b.budget);
            }
            let leader = b
                .empirical_means
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(&a, _)| a)
                .unwrap();
            assert!(!b.eliminated.contains(&leader));
        }
        assert_eq!(trace.validate(4), Ok(()));
        let again = run_is_rage(&inst, &RageConfig::theory(), 11).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn two_arm_recursion_reaches_256() {
        let inst = LinearInstance::new(basis(2), vec![1.0, 0.0], 1.0).unwrap();
        let report = batch_complexity_linear(&inst, &DesignOptions::default()).unwrap();
        assert_eq!(report.lbar_sequence, vec![4.0, 16.0, 64.0, 256.0]);
        assert_eq!(report.r_instance, 4);
        assert_eq!(report.u_sequence[2], Vec::<usize>::new());
        assert_eq!(report.u_sequence[3], vec![1]);
        assert_eq!(report.alpha, 2);
        // Smallest gap is 1: the bound's log term vanishes.
        assert!(report.bound_value.is_nan());
    }

    #[test]
    fn recursion_potential_grows_while_u_is_fixed() {
        let arms = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.8, 0.5, 0.0],
            vec![0.7, 0.0, 0.6],
        ];
        let inst = LinearInstance::new(arms, vec![0.9, 0.2, -0.1], 1.0).unwrap();
        let report = batch_complexity_linear(&inst, &DesignOptions::default()).unwrap();
        let h = &report.potential;
        for r in 0..h.len() - 1 {
            if report.u_sequence[r] == report.u_sequence[r + 1] {
                assert!(h[r + 1] >= LINEAR_POTENTIAL_GROWTH * h[r]);
            }
        }
        for w in report.lbar_sequence.windows(2) {
            assert!(w[1] >= 4.0 * w[0]);
        }
        assert!((report.r_instance as f64) <= report.bound_value);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let inst = LinearInstance::new(basis(2), vec![1.0, 0.0], 1.0).unwrap();
        let mut config = RageConfig::theory();
        config.beta_grid = 1.0;
        assert!(matches!(run_is_rage(&inst, &config, 0), Err(Error::InvalidConfig(_))));
    }
}
