//! Synthetic instances with prescribed gap structure.
//!
//! Every example has a best arm at mean 1/2 (listed first) and a smallest
//! gap of `1/sqrt(n)`:
//!
//! - Example 1: `n - 2` arms at gap 1/2 and one arm at gap `1/sqrt(n)`.
//! - Example 2: one arm at each gap `2^-j`, `j >= 2`, above `1/sqrt(n)`, one
//!   arm at `1/sqrt(n)`, and the rest at gap 1/2.
//! - Example 3: tiers at gap `2^-j` holding about `x / 4^(j-1)` arms with
//!   `x = floor((3n - 2) / 4)`, one arm at `1/sqrt(n)`; the gap-1/2 tier
//!   absorbs rounding so the total is exactly `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{LinearInstance, MabInstance};

pub const BEST_MEAN: f64 = 0.5;

/// One group of equal-gap arms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub gap: f64,
    pub count: usize,
}

/// Suboptimal tiers of example `which` with `n` arms, in arm order.
pub fn example_roster(which: u8, n: usize) -> Result<Vec<Tier>> {
    if n < 2 {
        return Err(Error::GeneratorParameter(format!("need n >= 2, got {n}")));
    }
    let floor_gap = 1.0 / (n as f64).sqrt();
    let halvings = || (2..).map(|j| (j, 0.5f64.powi(j))).take_while(move |&(_, g)| g > floor_gap);
    let mut tiers = match which {
        1 => vec![Tier { gap: 0.5, count: n - 2 }],
        2 => {
            let mut tiers = vec![Tier { gap: 0.5, count: 0 }];
            tiers.extend(halvings().map(|(_, gap)| Tier { gap, count: 1 }));
            tiers
        }
        3 => {
            let x = (3 * n - 2) / 4;
            let mut tiers = vec![Tier { gap: 0.5, count: 0 }];
            tiers.extend(halvings().map(|(j, gap)| Tier {
                gap,
                count: (x / 4usize.pow(j as u32 - 1)).max(1),
            }));
            tiers
        }
        other => {
            return Err(Error::GeneratorParameter(format!(
                "unknown example {other}, expected 1, 2 or 3"
            )))
        }
    };
    tiers.push(Tier { gap: floor_gap, count: 1 });
    if which != 1 {
        let others: usize = tiers[1..].iter().map(|t| t.count).sum();
        if others + 1 > n {
            return Err(Error::GeneratorParameter(format!(
                "example {which} needs more than {n} arms"
            )));
        }
        tiers[0].count = n - 1 - others;
    }
    tiers.retain(|t| t.count > 0);
    Ok(tiers)
}

/// Means of example `which`: best arm first, then the roster in order.
pub fn example_means(which: u8, n: usize) -> Result<Vec<f64>> {
    let mut means = vec![BEST_MEAN];
    for t in example_roster(which, n)? {
        means.extend(std::iter::repeat_n(BEST_MEAN - t.gap, t.count));
    }
    debug_assert_eq!(means.len(), n);
    Ok(means)
}

pub fn gen_example(which: u8, n: usize, noise_sd: f64) -> Result<MabInstance> {
    MabInstance::new(example_means(which, n)?, noise_sd)
}

/// Standard-basis arms in `R^n` with `theta* = ` the example means, so arm
/// `e_i` has expected reward `mu_i`.
pub fn gen_basis_linear(which: u8, n: usize, noise_sd: f64) -> Result<LinearInstance> {
    basis_linear(example_means(which, n)?, noise_sd)
}

/// Standard-basis embedding of a mean vector.
pub fn basis_linear(means: Vec<f64>, noise_sd: f64) -> Result<LinearInstance> {
    let n = means.len();
    let arms = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    LinearInstance::new(arms, means, noise_sd)
}
