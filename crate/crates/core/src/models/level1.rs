use rand::Rng;

use crate::neural::init::INIT_SCALE;
use crate::neural::{
    bilstm_backward, bilstm_forward, join, softmax, softmax_xent, BiLstmParams, BiLstmTrace, DenseParams, Matrix,
    NeuralError, Parameters, Real,
};

/// Per-token distributions and their argmax labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagging<F> {
    pub probs: Vec<Vec<F>>,
    pub labels: Vec<usize>,
}

pub(crate) fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn tagging<F: Real>(logits: &[Vec<F>]) -> Tagging<F> {
    let probs: Vec<Vec<F>> = logits.iter().map(|l| softmax(l)).collect();
    let labels = probs.iter().map(|p| argmax(p)).collect();
    Tagging { probs, labels }
}

/// Bi-LSTM keyword/slot tagger with a per-token dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct Level1Tagger<F> {
    pub bilstm: BiLstmParams<F>,
    pub head: DenseParams<F>,
}

impl<F: Real> Level1Tagger<F> {
    pub fn init<R: Rng>(input: usize, hidden: usize, slots: usize, rng: &mut R) -> Self {
        Self {
            bilstm: BiLstmParams::init(input, hidden, INIT_SCALE, rng),
            head: DenseParams::init(2 * hidden, slots, INIT_SCALE, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, slots: usize) -> Self {
        Self {
            bilstm: BiLstmParams::zeros(input, hidden),
            head: DenseParams::zeros(2 * hidden, slots),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.head.output()
    }

    pub fn forward(&self, x: &Matrix<F>) -> Result<(BiLstmTrace<F>, Vec<Vec<F>>), NeuralError> {
        let trace = bilstm_forward(&self.bilstm, x)?;
        let logits = (0..x.rows()).map(|t| self.head.forward(trace.states.row(t))).collect();
        Ok((trace, logits))
    }

    pub fn tag(&self, x: &Matrix<F>) -> Result<Tagging<F>, NeuralError> {
        Ok(tagging(&self.forward(x)?.1))
    }

    /// Summed per-token cross-entropy; gradients are added into `grads`.
    pub fn loss_and_grad(&self, x: &Matrix<F>, targets: &[usize], grads: &mut Self) -> Result<F, NeuralError> {
        check_targets(x, targets)?;
        let (trace, logits) = self.forward(x)?;
        let mut d_states = trace.states.zeros_like();
        let mut loss = F::zero();
        for (t, (l, &y)) in logits.iter().zip(targets).enumerate() {
            let (lt, dl) = softmax_xent(l, y)?;
            loss += lt;
            self.head
                .backward(trace.states.row(t), &dl, &mut grads.head, Some(d_states.row_mut(t)));
        }
        bilstm_backward(&self.bilstm, x, &trace, &d_states, &mut grads.bilstm);
        Ok(loss)
    }

    pub fn loss(&self, x: &Matrix<F>, targets: &[usize]) -> Result<F, NeuralError> {
        check_targets(x, targets)?;
        let (_, logits) = self.forward(x)?;
        let mut loss = F::zero();
        for (l, &y) in logits.iter().zip(targets) {
            loss += softmax_xent(l, y)?.0;
        }
        Ok(loss)
    }
}

pub(crate) fn check_targets<F: Real>(x: &Matrix<F>, targets: &[usize]) -> Result<(), NeuralError> {
    if targets.len() != x.rows() {
        return Err(NeuralError::ShapeMismatch {
            what: "slot targets".into(),
            expected: (x.rows(), 1),
            got: (targets.len(), 1),
        });
    }
    Ok(())
}

impl<F: Real> Parameters<F> for Level1Tagger<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>) {
        self.bilstm.visit(&join(prefix, "bilstm"), out);
        self.head.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>) {
        self.bilstm.visit_mut(&join(prefix, "bilstm"), out);
        self.head.visit_mut(&join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn untrained_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Level1Tagger::<f64>::init(6, 4, 8, &mut rng);
        for t in [1, 5] {
            let x = Matrix::from_fn(t, 6, |r, c| ((r * 7 + c) as f64).sin());
            let tag = m.tag(&x).unwrap();
            assert_eq!(tag.probs.len(), t);
            for row in &tag.probs {
                assert_eq!(row.len(), 8);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(matches!(m.tag(&Matrix::zeros(0, 6)), Err(NeuralError::EmptySequence)));
    }

    #[test]
    fn doubling_the_loss_doubles_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Level1Tagger::<f64>::init(3, 2, 4, &mut rng);
        let x = Matrix::from_fn(3, 3, |r, c| (r as f64 - c as f64) * 0.3);
        let mut g1 = m.zeroed();
        m.loss_and_grad(&x, &[0, 1, 3], &mut g1).unwrap();
        let mut g2 = m.zeroed();
        m.loss_and_grad(&x, &[0, 1, 3], &mut g2).unwrap();
        m.loss_and_grad(&x, &[0, 1, 3], &mut g2).unwrap();
        for ((_, a), (_, b)) in g1.named().iter().zip(g2.named()) {
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((2.0 * u - v).abs() <= 1e-14 * v.abs().max(1.0));
            }
        }
    }
}
