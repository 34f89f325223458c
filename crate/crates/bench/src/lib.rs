//! Fixed workloads shared by the benchmarks.

use prox_adc::instances::{gen_unconstrained, GenConfig, InverseOptValInstance};
use prox_adc::qp::{LinearRow, Matrix, QpProblem, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Strictly convex QP in `n` variables with `m` random rows, feasible at a known interior point.
pub fn random_qp(seed: u64, n: usize, m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = a.transpose() * &a + Matrix::identity(n, n);
    let q = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let mut prob = QpProblem::new(p, q);
    for _ in 0..m {
        let g = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let h = rng.random_range(0.1..1.0);
        prob.lin_ineq.push(LinearRow::new(g, h));
    }
    prob
}

/// The default unconstrained instance for `seed`.
pub fn default_instance(seed: u64) -> InverseOptValInstance {
    let c = GenConfig::unconstrained();
    gen_unconstrained(seed, c.n, c.m, c.d, c.l).expect("instance generation")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        let prob = random_qp(1, 6, 9);
        assert!(prob.validate().is_ok());
        // The origin is strictly feasible.
        assert!(prob.lin_ineq.iter().all(|r| r.h > 0.0));
        assert_eq!(default_instance(1).n, 10);
    }
}
