//! Ground-truth bandit instances and their reward models.
//!
//! Instances are validated on construction and on deserialization, so any
//! value of these types has at least two arms and a unique best arm (when the
//! truth is known).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the unit-norm constraint for linear arms.
const NORM_SLACK: f64 = 1e-9;

fn default_noise_sd() -> f64 {
    1.0
}

/// Source of stochastic rewards indexed by arm.
pub trait RewardModel {
    fn num_arms(&self) -> usize;

    /// Draw one reward for `arm`, advancing `rng`.
    fn pull<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<f64>;

    /// Index of the true best arm, if the ground truth is known and unique.
    fn best_arm(&self) -> Option<usize>;

    /// Sum of `count` independent pulls of `arm`.
    fn pull_sum<R: Rng + ?Sized>(&self, arm: usize, count: u64, rng: &mut R) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..count {
            total += self.pull(arm, rng)?;
        }
        Ok(total)
    }
}

/// Index of the strict maximum of `values`, or `None` on a tie.
fn unique_argmax(values: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    let tied = values
        .iter()
        .enumerate()
        .any(|(i, &v)| i != best && v == values[best]);
    (!tied).then_some(best)
}

fn gaussian_sum<R: Rng + ?Sized>(mean: f64, noise_sd: f64, count: u64, rng: &mut R) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    let c = count as f64;
    c * mean + noise_sd * c.sqrt() * z
}

fn check_noise(noise_sd: f64) -> Result<()> {
    if noise_sd.is_finite() && noise_sd > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInstance(format!(
            "noise_sd must be positive and finite, got {noise_sd}"
        )))
    }
}

/// Gaussian multi-armed bandit: arm `i` pays `N(means[i], noise_sd^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMab")]
pub struct MabInstance {
    means: Vec<f64>,
    noise_sd: f64,
}

#[derive(Deserialize)]
struct RawMab {
    means: Vec<f64>,
    #[serde(default = "default_noise_sd")]
    noise_sd: f64,
}

impl TryFrom<RawMab> for MabInstance {
    type Error = Error;

    fn try_from(raw: RawMab) -> Result<Self> {
        MabInstance::new(raw.means, raw.noise_sd)
    }
}

impl MabInstance {
    pub fn new(means: Vec<f64>, noise_sd: f64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::InvalidInstance(format!(
                "need at least 2 arms, got {}",
                means.len()
            )));
        }
        if let Some(bad) = means.iter().find(|m| !m.is_finite()) {
            return Err(Error::InvalidInstance(format!("non-finite mean {bad}")));
        }
        check_noise(noise_sd)?;
        unique_argmax(&means).ok_or(Error::NonUniqueBest)?;
        Ok(Self { means, noise_sd })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        check_noise(noise_sd)?;
        self.noise_sd = noise_sd;
        Ok(self)
    }

    pub fn best(&self) -> usize {
        unique_argmax(&self.means).expect("validated on construction")
    }

    pub fn gap_profile(&self) -> GapProfile {
        GapProfile::from_means(&self.means).expect("validated on construction")
    }
}

impl RewardModel for MabInstance {
    fn num_arms(&self) -> usize {
        self.means.len()
    }

    fn pull<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<f64> {
        let mean = *self.means.get(arm).ok_or(Error::InvalidArm {
            arm,
            num_arms: self.means.len(),
        })?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(mean + self.noise_sd * z)
    }

    /// Draws the sum directly from `N(count * mean, count * noise_sd^2)`.
    fn pull_sum<R: Rng + ?Sized>(&self, arm: usize, count: u64, rng: &mut R) -> Result<f64> {
        let mean = *self.means.get(arm).ok_or(Error::InvalidArm {
            arm,
            num_arms: self.means.len(),
        })?;
        Ok(gaussian_sum(mean, self.noise_sd, count, rng))
    }

    fn best_arm(&self) -> Option<usize> {
        Some(self.best())
    }
}

/// Suboptimality gaps of a MAB instance, sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    /// `deltas[k]` is the gap of arm `arms[k]`; `deltas[0]` is the smallest gap.
    pub deltas: Vec<f64>,
    pub arms: Vec<usize>,
    pub best_index: usize,
}

impl GapProfile {
    pub fn from_means(means: &[f64]) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::InvalidInstance("need at least 2 arms".into()));
        }
        let best = unique_argmax(means).ok_or(Error::NonUniqueBest)?;
        let mut pairs: Vec<(f64, usize)> = means
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(i, &m)| (means[best] - m, i))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Self {
            deltas: pairs.iter().map(|p| p.0).collect(),
            arms: pairs.iter().map(|p| p.1).collect(),
            best_index: best,
        })
    }

    /// Profile with arm 0 as the best arm and arms `1..` carrying `gaps`.
    pub fn from_gaps(gaps: &[f64]) -> Result<Self> {
        if gaps.is_empty() {
            return Err(Error::InvalidInstance("need at least one gap".into()));
        }
        if gaps.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::NonUniqueBest);
        }
        let mut means = vec![0.0];
        means.extend(gaps.iter().map(|g| -g));
        Self::from_means(&means)
    }

    /// Total number of arms, best arm included.
    pub fn num_arms(&self) -> usize {
        self.deltas.len() + 1
    }

    pub fn smallest_gap(&self) -> f64 {
        self.deltas[0]
    }

    /// Gap of `arm`, zero for the best arm.
    pub fn gap_of(&self, arm: usize) -> Option<f64> {
        if arm == self.best_index {
            return Some(0.0);
        }
        self.arms.iter().position(|&a| a == arm).map(|k| self.deltas[k])
    }
}

/// Linear bandit: arm `x_i` pays `x_i . theta_star + N(0, noise_sd^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinear")]
pub struct LinearInstance {
    arms: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
    noise_sd: f64,
}

#[derive(Deserialize)]
struct RawLinear {
    arms: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
    #[serde(default = "default_noise_sd")]
    noise_sd: f64,
}

impl TryFrom<RawLinear> for LinearInstance {
    type Error = Error;

    fn try_from(raw: RawLinear) -> Result<Self> {
        LinearInstance::new(raw.arms, raw.theta_star, raw.noise_sd)
    }
}

impl LinearInstance {
    pub fn new(arms: Vec<Vec<f64>>, theta_star: Vec<f64>, noise_sd: f64) -> Result<Self> {
        if arms.len() < 2 {
            return Err(Error::InvalidInstance(format!(
                "need at least 2 arms, got {}",
                arms.len()
            )));
        }
        let d = theta_star.len();
        if d == 0 {
            return Err(Error::InvalidInstance("dimension must be positive".into()));
        }
        for (i, x) in arms.iter().enumerate() {
            if x.len() != d {
                return Err(Error::InvalidInstance(format!(
                    "arm {i} has dimension {} but theta_star has {d}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInstance(format!("arm {i} is not finite")));
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + NORM_SLACK {
                return Err(Error::InvalidInstance(format!(
                    "arm {i} has norm {norm} > 1"
                )));
            }
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("theta_star is not finite".into()));
        }
        if arms.iter().all(|x| x.iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidInstance("arms span only the origin".into()));
        }
        check_noise(noise_sd)?;
        let inst = Self {
            arms,
            theta_star,
            noise_sd,
        };
        unique_argmax(&inst.expected_rewards()).ok_or(Error::NonUniqueBest)?;
        Ok(inst)
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn expected_reward(&self, arm: usize) -> f64 {
        dot(&self.arms[arm], &self.theta_star)
    }

    pub fn expected_rewards(&self) -> Vec<f64> {
        (0..self.arms.len()).map(|i| self.expected_reward(i)).collect()
    }

    pub fn best(&self) -> usize {
        unique_argmax(&self.expected_rewards()).expect("validated on construction")
    }

    /// Gap of every arm (zero for the best arm), in arm order.
    pub fn gaps(&self) -> Vec<f64> {
        let rewards = self.expected_rewards();
        let top = rewards[self.best()];
        rewards.iter().map(|r| top - r).collect()
    }

    /// Smallest positive gap.
    pub fn smallest_gap(&self) -> f64 {
        let best = self.best();
        self.gaps()
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, g)| g)
            .fold(f64::INFINITY, f64::min)
    }
}

impl RewardModel for LinearInstance {
    fn num_arms(&self) -> usize {
        self.arms.len()
    }

    fn pull<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<f64> {
        if arm >= self.arms.len() {
            return Err(Error::InvalidArm {
                arm,
                num_arms: self.arms.len(),
            });
        }
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.expected_reward(arm) + self.noise_sd * z)
    }

    fn pull_sum<R: Rng + ?Sized>(&self, arm: usize, count: u64, rng: &mut R) -> Result<f64> {
        if arm >= self.arms.len() {
            return Err(Error::InvalidArm {
                arm,
                num_arms: self.arms.len(),
            });
        }
        Ok(gaussian_sum(self.expected_reward(arm), self.noise_sd, count, rng))
    }

    fn best_arm(&self) -> Option<usize> {
        Some(self.best())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Arms backed by finite reward pools; a pull draws uniformly with
/// replacement from the arm's pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmpirical")]
pub struct EmpiricalArms {
    pools: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u64>>,
}

#[derive(Deserialize)]
struct RawEmpirical {
    pools: Vec<Vec<f64>>,
    #[serde(default)]
    labels: Option<Vec<u64>>,
}

impl TryFrom<RawEmpirical> for EmpiricalArms {
    type Error = Error;

    fn try_from(raw: RawEmpirical) -> Result<Self> {
        let arms = EmpiricalArms::new(raw.pools)?;
        match raw.labels {
            Some(labels) => arms.with_labels(labels),
            None => Ok(arms),
        }
    }
}

impl EmpiricalArms {
    pub fn new(pools: Vec<Vec<f64>>) -> Result<Self> {
        if pools.len() < 2 {
            return Err(Error::InvalidInstance(format!(
                "need at least 2 arms, got {}",
                pools.len()
            )));
        }
        if let Some(i) = pools.iter().position(|p| p.is_empty()) {
            return Err(Error::InvalidInstance(format!("arm {i} has an empty pool")));
        }
        if pools.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite reward in pool".into()));
        }
        Ok(Self { pools, labels: None })
    }

    /// Attach external identifiers (e.g. movie ids), one per arm.
    pub fn with_labels(mut self, labels: Vec<u64>) -> Result<Self> {
        if labels.len() != self.pools.len() {
            return Err(Error::InvalidInstance(format!(
                "{} labels for {} arms",
                labels.len(),
                self.pools.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn pools(&self) -> &[Vec<f64>] {
        &self.pools
    }

    pub fn labels(&self) -> Option<&[u64]> {
        self.labels.as_deref()
    }

    pub fn pool_means(&self) -> Vec<f64> {
        self.pools
            .iter()
            .map(|p| p.iter().sum::<f64>() / p.len() as f64)
            .collect()
    }
}

impl RewardModel for EmpiricalArms {
    fn num_arms(&self) -> usize {
        self.pools.len()
    }

    fn pull<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<f64> {
        let pool = self.pools.get(arm).ok_or(Error::InvalidArm {
            arm,
            num_arms: self.pools.len(),
        })?;
        Ok(pool[rng.random_range(0..pool.len())])
    }

    fn best_arm(&self) -> Option<usize> {
        unique_argmax(&self.pool_means())
    }
}

/// Any instance kind, in its on-disk JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Instance {
    Mab(MabInstance),
    Linear(LinearInstance),
    Empirical(EmpiricalArms),
}

impl Instance {
    pub fn num_arms(&self) -> usize {
        match self {
            Instance::Mab(m) => m.num_arms(),
            Instance::Linear(l) => l.num_arms(),
            Instance::Empirical(e) => e.num_arms(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
