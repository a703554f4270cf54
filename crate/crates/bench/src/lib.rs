//! Problem generators shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tcp_core::{CandidateGrid, Dataset};

/// Gaussian design with `k` unit-two coefficients and unit noise, plus a
/// test point.
pub fn problem(n: usize, p: usize, k: usize, seed: u64) -> (Dataset, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let beta = DVector::from_fn(p, |j, _| if j < k { 2.0 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let x_new = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
    (Dataset::new(x, y).expect("finite draw"), x_new)
}

/// `sqrt(n ln p)`.
pub fn lambda(n: usize, p: usize) -> f64 {
    (n as f64 * (p as f64).ln()).sqrt()
}

/// `points` candidates spanning `[-max|Y|, max|Y|]`.
pub fn grid(data: &Dataset, points: usize) -> CandidateGrid {
    let m = data.y().amax();
    CandidateGrid::with_count(-m, m, points - 1).expect("nonempty range")
}
