//! Fixed workloads for the benchmarks.

use batchbai::LinearInstance;

/// `n` unit vectors in `R^d` spread by a deterministic trigonometric map, with
/// `theta*` along the first arm so rewards are distinct.
pub fn spread_arms(n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..d).map(|j| ((i * d + j) as f64 * 0.7 + j as f64).sin() + 0.1).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn spread_instance(n: usize, d: usize) -> LinearInstance {
    let arms = spread_arms(n, d);
    let theta = arms[0].clone();
    LinearInstance::new(arms, theta, 1.0).expect("distinct arms")
}
