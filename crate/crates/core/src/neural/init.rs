use rand::Rng;

use super::tensor::{Matrix, Real};

/// Default weight range for recurrent, input and projection weights.
pub const INIT_SCALE: f64 = 0.08;

pub fn uniform_matrix<F: Real, R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix<F> {
    Matrix::from_fn(rows, cols, |_, _| F::lit(rng.random_range(-scale..=scale)))
}
