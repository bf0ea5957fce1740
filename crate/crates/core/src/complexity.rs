//! Deterministic instance complexities for the multi-armed case.
//!
//! The batch-complexity recursion runs on true gaps with `Lbar_0 = 1`,
//! `U_0 = {}` and `C = 15 sqrt 2`:
//!
//! ```text
//! Lbar_r = 4 Lbar_{r-1} + (1 / (n - |U_{r-1}|)) * sum_{j in U_{r-1}} Delta_j^-2
//! U_r    = { j : Delta_j >= C / sqrt(Lbar_r) }
//! ```
//!
//! and stops at the first `r` (called `R_I`) where `U_r` holds every
//! suboptimal arm. Along the way the potential
//! `H_r = Lbar_r (n - |U_r|) + sum_{j in U_r} 450 / Delta_j^2` is tracked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::GapProfile;

/// Elimination constant of the recursion.
pub const RECURSION_C: f64 = 15.0 * std::f64::consts::SQRT_2;
/// `RECURSION_C^2`, kept exact.
pub const RECURSION_C_SQ: f64 = 450.0;
/// Per-step growth of the potential while `U_r` is unchanged.
pub const POTENTIAL_GROWTH: f64 = 451.0 / 450.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityKind {
    Mab,
    Linear,
}

/// Batch-complexity summary of one instance.
///
/// Sequence fields are indexed by recursion step. For MAB reports index 0
/// holds `Lbar_0 = 1` and `U_0 = {}`; linear reports start at step 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub kind: ComplexityKind,
    /// `sum 1/Delta_i^2` (MAB only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_instance: Option<f64>,
    /// Gap-weighted design value (linear only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_star: Option<f64>,
    /// Design value of the differences to the best arm (linear only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_best_differences: Option<f64>,
    pub r_instance: usize,
    pub alpha: usize,
    /// Upper bound on `r_instance` predicted from `alpha` and the instance complexity.
    pub bound_value: f64,
    /// `ceil(log_4(c^2 / Delta_2^2))` for the recursion constant `c`.
    pub grid_batches: usize,
    pub smallest_gap: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lbar_sequence: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u_sequence: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub potential: Vec<f64>,
}

impl ComplexityReport {
    /// Drops the per-step sequences.
    pub fn summary(mut self) -> Self {
        self.lbar_sequence.clear();
        self.u_sequence.clear();
        self.potential.clear();
        self
    }
}

/// `H_I = sum_i 1 / Delta_i^2`.
pub fn h_index(profile: &GapProfile) -> Result<f64> {
    if profile.deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NonUniqueBest);
    }
    Ok(profile.deltas.iter().map(|d| d.powi(-2)).sum())
}

struct Recursion {
    lbar: Vec<f64>,
    /// `|U_r|`; `U_r` is the suffix of the ascending gaps of that length.
    u_size: Vec<usize>,
}

fn run_recursion(profile: &GapProfile) -> Recursion {
    let deltas = &profile.deltas;
    let m = deltas.len();
    let n = m + 1;
    // suffix[k] = sum_{i >= k} Delta_i^-2
    let mut suffix = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] + deltas[k].powi(-2);
    }

    let mut lbar = vec![1.0];
    let mut u_size = vec![0usize];
    loop {
        let prev_l = *lbar.last().unwrap();
        let prev_u = *u_size.last().unwrap();
        let l = 4.0 * prev_l + suffix[m - prev_u] / (n - prev_u) as f64;
        let threshold = RECURSION_C / l.sqrt();
        let first_in = deltas.partition_point(|&d| d < threshold);
        lbar.push(l);
        u_size.push(m - first_in);
        if first_in == 0 {
            break;
        }
    }
    Recursion { lbar, u_size }
}

fn potential_of(rec: &Recursion, profile: &GapProfile) -> Vec<f64> {
    let deltas = &profile.deltas;
    let n = profile.num_arms();
    rec.lbar
        .iter()
        .zip(&rec.u_size)
        .map(|(&l, &u)| {
            let eliminated: f64 = deltas[deltas.len() - u..]
                .iter()
                .map(|d| RECURSION_C_SQ / (d * d))
                .sum();
            l * (n - u) as f64 + eliminated
        })
        .collect()
}

/// Runs the MAB batch-complexity recursion and its bound.
pub fn batch_complexity_mab(profile: &GapProfile) -> Result<ComplexityReport> {
    let h = h_index(profile)?;
    let rec = run_recursion(profile);
    let r_instance = rec.lbar.len() - 1;
    let alpha = rec.u_size.windows(2).filter(|w| w[0] != w[1]).count();
    let n = profile.num_arms() as f64;
    let bound_value =
        alpha as f64 + (RECURSION_C_SQ * h / n).ln() / POTENTIAL_GROWTH.ln();
    let gap = profile.smallest_gap();
    let m = profile.deltas.len();
    let u_sequence = rec
        .u_size
        .iter()
        .map(|&u| {
            let mut ids = profile.arms[m - u..].to_vec();
            ids.sort_unstable();
            ids
        })
        .collect();
    Ok(ComplexityReport {
        kind: ComplexityKind::Mab,
        h_instance: Some(h),
        psi_star: None,
        rho_best_differences: None,
        r_instance,
        alpha,
        bound_value,
        grid_batches: grid_batches(RECURSION_C_SQ, gap),
        smallest_gap: gap,
        potential: potential_of(&rec, profile),
        lbar_sequence: rec.lbar,
        u_sequence,
    })
}

/// `H_0, ..., H_{R_I}` along the recursion.
pub fn potential_sequence(profile: &GapProfile) -> Result<Vec<f64>> {
    h_index(profile)?;
    let rec = run_recursion(profile);
    Ok(potential_of(&rec, profile))
}

/// `ceil(log_4(c_sq / gap^2))`, the batch count of a pure factor-4 grid.
pub fn grid_batches(c_sq: f64, gap: f64) -> usize {
    (c_sq / (gap * gap)).log(4.0).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn h_index_examples() {
        let p = GapProfile::from_gaps(&[0.5]).unwrap();
        assert_eq!(h_index(&p).unwrap(), 4.0);
        let p = GapProfile::from_gaps(&[0.5, 1.0]).unwrap();
        assert_eq!(h_index(&p).unwrap(), 5.0);
        let mut gaps = vec![0.5; 98];
        gaps.push(0.1);
        let p = GapProfile::from_gaps(&gaps).unwrap();
        assert!((h_index(&p).unwrap() - 492.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gap_is_rejected() {
        let p = GapProfile {
            deltas: vec![0.0, 1.0],
            arms: vec![1, 2],
            best_index: 0,
        };
        assert!(matches!(h_index(&p), Err(Error::NonUniqueBest)));
        assert!(batch_complexity_mab(&p).is_err());
    }

    #[test]
    fn two_arm_unit_gap_needs_five_steps() {
        // U_r stays empty until Lbar_r >= 450, so Lbar_r = 4^r up to 1024.
        let p = GapProfile::from_gaps(&[1.0]).unwrap();
        let report = batch_complexity_mab(&p).unwrap();
        assert_eq!(report.lbar_sequence, vec![1.0, 4.0, 16.0, 64.0, 256.0, 1024.0]);
        assert_eq!(report.r_instance, 5);
        assert_eq!(report.alpha, 1);
        assert_eq!(report.u_sequence.last().unwrap(), &vec![1]);
    }

    #[test]
    fn potential_starts_at_n() {
        let p = GapProfile::from_gaps(&[0.3, 0.7, 0.2]).unwrap();
        assert_eq!(potential_sequence(&p).unwrap()[0], 4.0);
    }

    fn arb_profile() -> impl Strategy<Value = GapProfile> {
        prop::collection::vec(0.05f64..1.0, 1..50)
            .prop_map(|gaps| GapProfile::from_gaps(&gaps).unwrap())
    }

    proptest! {
        #[test]
        fn recursion_properties(p in arb_profile()) {
            let report = batch_complexity_mab(&p).unwrap();
            let l = &report.lbar_sequence;
            for w in l.windows(2) {
                prop_assert!(w[1] >= 4.0 * w[0]);
            }
            for w in report.u_sequence.windows(2) {
                prop_assert!(w[0].iter().all(|a| w[1].contains(a)));
            }
            let r = report.r_instance;
            prop_assert!((r as f64) <= report.bound_value);
            prop_assert!(r <= grid_batches(RECURSION_C_SQ, p.smallest_gap()) + 1);
            prop_assert!(report.alpha <= r);
            prop_assert!(report.alpha < p.num_arms());

            let h = &report.potential;
            for k in 0..h.len() - 1 {
                prop_assert!(h[k + 1] >= h[k]);
                if report.u_sequence[k] == report.u_sequence[k + 1] {
                    prop_assert!(h[k + 1] >= POTENTIAL_GROWTH * h[k]);
                }
            }
        }
    }
}
