use rand::Rng;

use super::level1::{argmax, check_targets, tagging, Tagging};
use crate::fusion::{FeatureSchema, FusionLayer, FusionPolicy};
use crate::neural::init::INIT_SCALE;
use crate::neural::{
    bilstm_backward, bilstm_forward, join, softmax, softmax_xent, BiLstmParams, BiLstmTrace, DenseParams, Matrix,
    NeuralError, Parameters, Real,
};

/// Joint slot tagger and intent classifier over the gated token sequence.
///
/// The intent head reads `[final forward state ; final backward state ;
/// fused utterance features]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Level2Joint<F> {
    pub bilstm: BiLstmParams<F>,
    pub slot_head: DenseParams<F>,
    pub intent_head: DenseParams<F>,
    pub fusion: FusionLayer<F>,
}

/// Cached activations of one Level-2 forward pass.
#[derive(Clone, Debug)]
pub struct Level2Forward<F> {
    pub trace: BiLstmTrace<F>,
    pub slot_logits: Vec<Vec<F>>,
    pub fused: Vec<F>,
    pub readout: Vec<F>,
    pub intent_logits: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level2Output<F> {
    pub intent_probs: Vec<F>,
    pub intent: usize,
    pub slots: Tagging<F>,
}

impl<F: Real> Level2Joint<F> {
    pub fn init<R: Rng>(
        input: usize,
        hidden: usize,
        slots: usize,
        intents: usize,
        fusion: &FusionPolicy,
        schema: &FeatureSchema,
        rng: &mut R,
    ) -> Self {
        let bilstm = BiLstmParams::init(input, hidden, INIT_SCALE, rng);
        let slot_head = DenseParams::init(2 * hidden, slots, INIT_SCALE, rng);
        let fusion = FusionLayer::init(fusion, schema, rng);
        let intent_head = DenseParams::init(2 * hidden + fusion.width(), intents, INIT_SCALE, rng);
        Self {
            bilstm,
            slot_head,
            intent_head,
            fusion,
        }
    }

    pub fn zeros(
        input: usize,
        hidden: usize,
        slots: usize,
        intents: usize,
        fusion: &FusionPolicy,
        schema: &FeatureSchema,
    ) -> Self {
        let fusion = FusionLayer::zeros(fusion, schema);
        Self {
            bilstm: BiLstmParams::zeros(input, hidden),
            slot_head: DenseParams::zeros(2 * hidden, slots),
            intent_head: DenseParams::zeros(2 * hidden + fusion.width(), intents),
            fusion,
        }
    }

    pub fn intent_input_width(&self) -> usize {
        self.intent_head.input()
    }

    fn check_features(&self, feats: &[Vec<F>]) -> Result<(), NeuralError> {
        if feats.len() != self.fusion.projections.len() {
            return Err(NeuralError::ShapeMismatch {
                what: "fused modality count".into(),
                expected: (self.fusion.projections.len(), 1),
                got: (feats.len(), 1),
            });
        }
        for ((m, p), v) in self.fusion.modalities.iter().zip(&self.fusion.projections).zip(feats) {
            if v.len() != p.input() {
                return Err(NeuralError::ShapeMismatch {
                    what: format!("{m} feature vector"),
                    expected: (p.input(), 1),
                    got: (v.len(), 1),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<F>, feats: &[Vec<F>]) -> Result<Level2Forward<F>, NeuralError> {
        self.check_features(feats)?;
        let trace = bilstm_forward(&self.bilstm, x)?;
        let slot_logits = (0..x.rows())
            .map(|t| self.slot_head.forward(trace.states.row(t)))
            .collect();
        let fused = self.fusion.fuse(feats);
        let mut readout = Vec::with_capacity(self.intent_head.input());
        readout.extend_from_slice(trace.final_forward());
        readout.extend_from_slice(trace.final_backward());
        readout.extend_from_slice(&fused);
        let intent_logits = self.intent_head.forward(&readout);
        Ok(Level2Forward {
            trace,
            slot_logits,
            fused,
            readout,
            intent_logits,
        })
    }

    pub fn predict(&self, x: &Matrix<F>, feats: &[Vec<F>]) -> Result<Level2Output<F>, NeuralError> {
        let f = self.forward(x, feats)?;
        let intent_probs = softmax(&f.intent_logits);
        Ok(Level2Output {
            intent: argmax(&intent_probs),
            intent_probs,
            slots: tagging(&f.slot_logits),
        })
    }

    /// `sum_t xent(slot_t) + lambda * xent(intent)`, with gradients added into
    /// `grads`.
    pub fn loss_and_grad(
        &self,
        x: &Matrix<F>,
        feats: &[Vec<F>],
        slot_targets: &[usize],
        intent: usize,
        lambda: F,
        grads: &mut Self,
    ) -> Result<F, NeuralError> {
        check_targets(x, slot_targets)?;
        let f = self.forward(x, feats)?;
        let h = self.bilstm.hidden();
        let t_last = x.rows() - 1;
        let mut d_states = f.trace.states.zeros_like();
        let mut loss = F::zero();
        for (t, (l, &y)) in f.slot_logits.iter().zip(slot_targets).enumerate() {
            let (lt, dl) = softmax_xent(l, y)?;
            loss += lt;
            self.slot_head.backward(
                f.trace.states.row(t),
                &dl,
                &mut grads.slot_head,
                Some(d_states.row_mut(t)),
            );
        }

        let (li, mut di) = softmax_xent(&f.intent_logits, intent)?;
        loss += lambda * li;
        for v in di.iter_mut() {
            *v *= lambda;
        }
        let mut d_readout = vec![F::zero(); f.readout.len()];
        self.intent_head
            .backward(&f.readout, &di, &mut grads.intent_head, Some(&mut d_readout));
        for k in 0..h {
            d_states.row_mut(t_last)[k] += d_readout[k];
            d_states.row_mut(0)[h + k] += d_readout[h + k];
        }
        self.fusion
            .backward(feats, &f.fused, &d_readout[2 * h..], &mut grads.fusion);
        bilstm_backward(&self.bilstm, x, &f.trace, &d_states, &mut grads.bilstm);
        Ok(loss)
    }

    pub fn loss(
        &self,
        x: &Matrix<F>,
        feats: &[Vec<F>],
        slot_targets: &[usize],
        intent: usize,
        lambda: F,
    ) -> Result<F, NeuralError> {
        check_targets(x, slot_targets)?;
        let f = self.forward(x, feats)?;
        let mut loss = F::zero();
        for (l, &y) in f.slot_logits.iter().zip(slot_targets) {
            loss += softmax_xent(l, y)?.0;
        }
        Ok(loss + lambda * softmax_xent(&f.intent_logits, intent)?.0)
    }
}

impl<F: Real> Parameters<F> for Level2Joint<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>) {
        self.bilstm.visit(&join(prefix, "bilstm"), out);
        self.slot_head.visit(&join(prefix, "slot_head"), out);
        self.intent_head.visit(&join(prefix, "intent_head"), out);
        self.fusion.visit(&join(prefix, "fusion"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>) {
        self.bilstm.visit_mut(&join(prefix, "bilstm"), out);
        self.slot_head.visit_mut(&join(prefix, "slot_head"), out);
        self.intent_head.visit_mut(&join(prefix, "intent_head"), out);
        self.fusion.visit_mut(&join(prefix, "fusion"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Modality;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> FeatureSchema {
        FeatureSchema {
            audio: 5,
            video_cabin: 3,
            video_road: 3,
        }
    }

    #[test]
    fn intent_head_width_follows_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Level2Joint::<f64>::init(4, 6, 8, 9, &FusionPolicy::none(), &schema(), &mut rng);
        assert_eq!(m.intent_input_width(), 12);
        let m = Level2Joint::<f64>::init(
            4,
            6,
            8,
            9,
            &FusionPolicy::new(&[Modality::Audio], 64),
            &schema(),
            &mut rng,
        );
        assert_eq!(m.intent_input_width(), 12 + 64);
    }

    #[test]
    fn intent_head_gradient_is_linear_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FusionPolicy::new(&[Modality::Audio], 4);
        let m = Level2Joint::<f64>::init(3, 2, 4, 3, &p, &schema(), &mut rng);
        let x = Matrix::from_fn(2, 3, |r, c| (r + c) as f64 * 0.2 - 0.3);
        let feats = vec![vec![0.5, -0.2, 0.1, 0.9, -1.0]];
        let norm = |lambda: f64| {
            let mut g = m.zeroed();
            m.loss_and_grad(&x, &feats, &[1, 2], 0, lambda, &mut g).unwrap();
            g.intent_head.global_norm()
        };
        let (a, b) = (norm(0.25), norm(0.5));
        assert!((b / a - 2.0).abs() < 1e-12);
        assert!(norm(1e-9) < 1e-8);
    }

    #[test]
    fn rejects_wrong_feature_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FusionPolicy::new(&[Modality::Audio], 4);
        let m = Level2Joint::<f64>::init(3, 2, 4, 3, &p, &schema(), &mut rng);
        let x = Matrix::zeros(2, 3);
        assert!(m.predict(&x, &[]).is_err());
        assert!(m.predict(&x, &[vec![0.0; 4]]).is_err());
        let out = m.predict(&x, &[vec![0.0; 5]]).unwrap();
        assert!((out.intent_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
