use rand::Rng;

use super::init::uniform_matrix;
use super::tensor::{Matrix, Real};
use super::{join, Parameters};

/// Affine layer `y = W x + b` with `W: out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<F> {
    pub w: Matrix<F>,
    pub b: Matrix<F>,
}

impl<F: Real> DenseParams<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: Matrix::zeros(output, 1),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w: uniform_matrix(output, input, scale, rng),
            b: Matrix::zeros(output, 1),
        }
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    pub fn output(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.output()];
        self.w.affine(x, self.b.as_slice(), &mut out);
        out
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// and adds `W^T dy` into `dx` when given.
    pub fn backward(&self, x: &[F], dy: &[F], grads: &mut DenseParams<F>, dx: Option<&mut [F]>) {
        grads.w.outer_acc(dy, x);
        for (gb, &d) in grads.b.as_mut_slice().iter_mut().zip(dy) {
            *gb += d;
        }
        if let Some(dx) = dx {
            self.w.matvec_t_acc(dy, dx);
        }
    }
}

impl<F: Real> Parameters<F> for DenseParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>) {
        out.push((join(prefix, "w"), &self.w));
        out.push((join(prefix, "b"), &self.b));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>) {
        out.push((join(prefix, "w"), &mut self.w));
        out.push((join(prefix, "b"), &mut self.b));
    }
}
