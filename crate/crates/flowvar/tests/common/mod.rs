//! Shared helpers for the integration suites.

use rand::Rng;

use flowvar::network::NetworkSpec;

/// Random open network: substochastic routing with row sums below 0.9
/// (which bounds the spectral radius by 0.9), self-loops allowed,
/// arrival rates in (0, 5], variance rates in [0, 10].
pub fn random_stable_network(rng: &mut impl Rng, max_k: usize) -> NetworkSpec {
    let k = rng.random_range(1..=max_k);
    let mut p = vec![vec![0.0; k]; k];
    for row in p.iter_mut() {
        let total: f64 = rng.random_range(0.0..0.9);
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            for (cell, r) in row.iter_mut().zip(&raw) {
                *cell = r * total / sum;
            }
        }
    }
    let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..=5.0)).collect();
    let v2: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=10.0)).collect();
    let mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..=20.0)).collect();
    NetworkSpec::new(p, alpha, v2, mu)
}
