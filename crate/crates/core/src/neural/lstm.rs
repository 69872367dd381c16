//! LSTM cell, bidirectional sequence encoder and their backward passes.
//!
//! Gate blocks are stacked in the order (input, forget, cell, output):
//!
//! ```text
//! i = σ(W_x[i] x + W_h[i] h + b[i])      c = f ⊙ c_prev + i ⊙ g
//! f = σ(W_x[f] x + W_h[f] h + b[f])      h = o ⊙ tanh(c)
//! g = tanh(W_x[g] x + W_h[g] h + b[g])
//! o = σ(W_x[o] x + W_h[o] h + b[o])
//! ```

use rand::Rng;

use super::init::uniform_matrix;
use super::tensor::{sigmoid, Matrix, Real};
use super::{join, NeuralError, Parameters, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<F> {
    /// `4h x d`
    pub w_x: Matrix<F>,
    /// `4h x h`
    pub w_h: Matrix<F>,
    /// `4h x 1`
    pub b: Matrix<F>,
}

impl<F: Real> LstmParams<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(4 * hidden, 1),
        }
    }

    /// Weights uniform in `±scale`, biases zero except the forget gate at 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut b = Matrix::zeros(4 * hidden, 1);
        for k in hidden..2 * hidden {
            b.set(k, 0, F::one());
        }
        Self {
            w_x: uniform_matrix(4 * hidden, input, scale, rng),
            w_h: uniform_matrix(4 * hidden, hidden, scale, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input(&self) -> usize {
        self.w_x.cols()
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden();
        let expect = |what: &str, m: &Matrix<F>, shape: (usize, usize)| {
            if m.shape() != shape {
                Err(NeuralError::ShapeMismatch {
                    what: what.to_string(),
                    expected: shape,
                    got: m.shape(),
                })
            } else {
                Ok(())
            }
        };
        expect("w_x", &self.w_x, (4 * h, self.input()))?;
        expect("w_h", &self.w_h, (4 * h, h))?;
        expect("b", &self.b, (4 * h, 1))
    }
}

impl<F: Real> Parameters<F> for LstmParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>) {
        out.push((join(prefix, "w_x"), &self.w_x));
        out.push((join(prefix, "w_h"), &self.w_h));
        out.push((join(prefix, "b"), &self.b));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>) {
        out.push((join(prefix, "w_x"), &mut self.w_x));
        out.push((join(prefix, "w_h"), &mut self.w_h));
        out.push((join(prefix, "b"), &mut self.b));
    }
}

/// Activations of one cell step, kept for the backward pass.
#[derive(Clone, Debug)]
struct StepCache<F> {
    /// Post-activation gates `[i; f; g; o]`.
    gates: Vec<F>,
    c: Vec<F>,
    tanh_c: Vec<F>,
    h: Vec<F>,
}

fn step_cached<F: Real>(p: &LstmParams<F>, x: &[F], h_prev: &[F], c_prev: &[F]) -> StepCache<F> {
    let h = p.hidden();
    let mut z = vec![F::zero(); 4 * h];
    p.w_x.affine(x, p.b.as_slice(), &mut z);
    p.w_h.matvec_acc(h_prev, &mut z);
    for k in 0..h {
        z[k] = sigmoid(z[k]);
        z[h + k] = sigmoid(z[h + k]);
        z[2 * h + k] = z[2 * h + k].tanh();
        z[3 * h + k] = sigmoid(z[3 * h + k]);
    }
    let mut c = vec![F::zero(); h];
    let mut tanh_c = vec![F::zero(); h];
    let mut hv = vec![F::zero(); h];
    for k in 0..h {
        c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
        tanh_c[k] = c[k].tanh();
        hv[k] = z[3 * h + k] * tanh_c[k];
    }
    StepCache {
        gates: z,
        c,
        tanh_c,
        h: hv,
    }
}

/// One LSTM step. Returns `(h, c)`.
pub fn lstm_step<F: Real>(p: &LstmParams<F>, x: &[F], h_prev: &[F], c_prev: &[F]) -> Result<(Vec<F>, Vec<F>)> {
    p.check_shapes()?;
    let h = p.hidden();
    if x.len() != p.input() {
        return Err(NeuralError::ShapeMismatch {
            what: "x_t".into(),
            expected: (p.input(), 1),
            got: (x.len(), 1),
        });
    }
    for (what, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        if v.len() != h {
            return Err(NeuralError::ShapeMismatch {
                what: what.into(),
                expected: (h, 1),
                got: (v.len(), 1),
            });
        }
    }
    if !x.iter().chain(h_prev).chain(c_prev).all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("lstm_step input".into()));
    }
    let s = step_cached(p, x, h_prev, c_prev);
    Ok((s.h, s.c))
}

/// Forward activations of one direction, indexed by processing step.
#[derive(Clone, Debug)]
struct DirectionTrace<F> {
    /// Sequence position consumed at each processing step.
    order: Vec<usize>,
    steps: Vec<StepCache<F>>,
}

fn run_direction<F: Real>(p: &LstmParams<F>, xs: &Matrix<F>, reverse: bool) -> DirectionTrace<F> {
    let t_len = xs.rows();
    let h = p.hidden();
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    let zeros = vec![F::zero(); h];
    let mut steps: Vec<StepCache<F>> = Vec::with_capacity(t_len);
    for &pos in &order {
        let (hp, cp) = match steps.last() {
            Some(s) => (&s.h[..], &s.c[..]),
            None => (&zeros[..], &zeros[..]),
        };
        let s = step_cached(p, xs.row(pos), hp, cp);
        steps.push(s);
    }
    DirectionTrace { order, steps }
}

/// Accumulates parameter gradients for one direction given `dh` for every
/// position (already in sequence coordinates).
fn backprop_direction<F: Real>(
    p: &LstmParams<F>,
    xs: &Matrix<F>,
    trace: &DirectionTrace<F>,
    dh_seq: &dyn Fn(usize) -> Vec<F>,
    grads: &mut LstmParams<F>,
) {
    let h = p.hidden();
    let zeros = vec![F::zero(); h];
    let mut dh_next = vec![F::zero(); h];
    let mut dc_next = vec![F::zero(); h];
    let mut dz = vec![F::zero(); 4 * h];
    let one = F::one();
    for step in (0..trace.steps.len()).rev() {
        let pos = trace.order[step];
        let s = &trace.steps[step];
        let (h_prev, c_prev) = if step == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&trace.steps[step - 1].h[..], &trace.steps[step - 1].c[..])
        };
        let mut dh = dh_seq(pos);
        for k in 0..h {
            dh[k] += dh_next[k];
        }
        for k in 0..h {
            let i = s.gates[k];
            let f = s.gates[h + k];
            let g = s.gates[2 * h + k];
            let o = s.gates[3 * h + k];
            let tc = s.tanh_c[k];
            let d_o = dh[k] * tc;
            let dc = dc_next[k] + dh[k] * o * (one - tc * tc);
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev[k];
            dc_next[k] = dc * f;
            dz[k] = d_i * i * (one - i);
            dz[h + k] = d_f * f * (one - f);
            dz[2 * h + k] = d_g * (one - g * g);
            dz[3 * h + k] = d_o * o * (one - o);
        }
        grads.w_x.outer_acc(&dz, xs.row(pos));
        grads.w_h.outer_acc(&dz, h_prev);
        for (gb, &d) in grads.b.as_mut_slice().iter_mut().zip(&dz) {
            *gb += d;
        }
        dh_next.iter_mut().for_each(|v| *v = F::zero());
        p.w_h.matvec_t_acc(&dz, &mut dh_next);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams<F> {
    pub forward: LstmParams<F>,
    pub backward: LstmParams<F>,
}

impl<F: Real> BiLstmParams<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            forward: LstmParams::zeros(input, hidden),
            backward: LstmParams::zeros(input, hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let forward = LstmParams::init(input, hidden, scale, rng);
        let backward = LstmParams::init(input, hidden, scale, rng);
        Self { forward, backward }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn input(&self) -> usize {
        self.forward.input()
    }
}

impl<F: Real> Parameters<F> for BiLstmParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>) {
        self.forward.visit(&join(prefix, "fwd"), out);
        self.backward.visit(&join(prefix, "bwd"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>) {
        self.forward.visit_mut(&join(prefix, "fwd"), out);
        self.backward.visit_mut(&join(prefix, "bwd"), out);
    }
}

/// Output of [`bilstm_forward`] together with the cached activations needed
/// by [`bilstm_backward`].
#[derive(Clone, Debug)]
pub struct BiLstmTrace<F> {
    /// `T x 2h`; row `t` is `[forward h_t ; backward h_t]`.
    pub states: Matrix<F>,
    fwd: DirectionTrace<F>,
    bwd: DirectionTrace<F>,
}

impl<F: Real> BiLstmTrace<F> {
    fn hidden(&self) -> usize {
        self.states.cols() / 2
    }

    /// Forward state after consuming the last position.
    pub fn final_forward(&self) -> &[F] {
        let h = self.hidden();
        &self.states.row(self.states.rows() - 1)[..h]
    }

    /// Backward state after consuming the first position.
    pub fn final_backward(&self) -> &[F] {
        let h = self.hidden();
        &self.states.row(0)[h..]
    }
}

pub fn bilstm_forward<F: Real>(p: &BiLstmParams<F>, xs: &Matrix<F>) -> Result<BiLstmTrace<F>> {
    if xs.rows() == 0 {
        return Err(NeuralError::EmptySequence);
    }
    p.forward.check_shapes()?;
    p.backward.check_shapes()?;
    if p.backward.hidden() != p.hidden() || p.backward.input() != p.input() {
        return Err(NeuralError::ShapeMismatch {
            what: "backward direction".into(),
            expected: (p.hidden(), p.input()),
            got: (p.backward.hidden(), p.backward.input()),
        });
    }
    if xs.cols() != p.input() {
        return Err(NeuralError::ShapeMismatch {
            what: "input sequence".into(),
            expected: (xs.rows(), p.input()),
            got: xs.shape(),
        });
    }
    let h = p.hidden();
    let fwd = run_direction(&p.forward, xs, false);
    let bwd = run_direction(&p.backward, xs, true);
    let mut states = Matrix::zeros(xs.rows(), 2 * h);
    for (step, &pos) in fwd.order.iter().enumerate() {
        states.row_mut(pos)[..h].copy_from_slice(&fwd.steps[step].h);
    }
    for (step, &pos) in bwd.order.iter().enumerate() {
        states.row_mut(pos)[h..].copy_from_slice(&bwd.steps[step].h);
    }
    Ok(BiLstmTrace { states, fwd, bwd })
}

/// Backpropagates `d_states` (`T x 2h`, the loss gradient with respect to
/// every row of [`BiLstmTrace::states`]) into `grads`.
pub fn bilstm_backward<F: Real>(
    p: &BiLstmParams<F>,
    xs: &Matrix<F>,
    trace: &BiLstmTrace<F>,
    d_states: &Matrix<F>,
    grads: &mut BiLstmParams<F>,
) {
    let h = p.hidden();
    debug_assert_eq!(d_states.shape(), trace.states.shape());
    let fwd_slice = |pos: usize| d_states.row(pos)[..h].to_vec();
    let bwd_slice = |pos: usize| d_states.row(pos)[h..].to_vec();
    backprop_direction(&p.forward, xs, &trace.fwd, &fwd_slice, &mut grads.forward);
    backprop_direction(&p.backward, xs, &trace.bwd, &bwd_slice, &mut grads.backward);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar reference: explicit index loops, no shared helpers.
    fn reference_step(p: &LstmParams<f64>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = h_prev.len();
        let pre = |row: usize| {
            let mut s = p.b.get(row, 0);
            for j in 0..x.len() {
                s += p.w_x.get(row, j) * x[j];
            }
            for j in 0..h {
                s += p.w_h.get(row, j) * h_prev[j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for k in 0..h {
            let i = sig(pre(k));
            let f = sig(pre(h + k));
            let g = pre(2 * h + k).tanh();
            let o = sig(pre(3 * h + k));
            cs[k] = f * c_prev[k] + i * g;
            hs[k] = o * cs[k].tanh();
        }
        (hs, cs)
    }

    fn random_params(d: usize, h: usize, seed: u64) -> LstmParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::init(d, h, 0.8, &mut rng);
        p.b = uniform_matrix(4 * h, 1, 0.5, &mut rng);
        p
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::<f64>::zeros(3, 4);
        let (h, c) = lstm_step(&p, &[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmParams::<f64>::zeros(2, 3);
        let (h, c) = lstm_step(&p, &[0.3, 0.1], &[0.0; 3], &[1.0; 3]).unwrap();
        for k in 0..3 {
            assert!((c[k] - 0.5).abs() < 1e-15);
            assert!((h[k] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
            assert!((h[k] - 0.231059).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        for seed in 0..20 {
            let (d, h) = (5, 6);
            let p = random_params(d, h, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hp: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cp: Vec<f64> = (0..h).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (h1, c1) = lstm_step(&p, &x, &hp, &cp).unwrap();
            let (h2, c2) = reference_step(&p, &x, &hp, &cp);
            for k in 0..h {
                assert!((h1[k] - h2[k]).abs() < 1e-12);
                assert!((c1[k] - c2[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes_and_nonfinite() {
        let p = LstmParams::<f64>::zeros(2, 3);
        assert!(matches!(
            lstm_step(&p, &[0.0; 3], &[0.0; 3], &[0.0; 3]),
            Err(NeuralError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            lstm_step(&p, &[f64::NAN, 0.0], &[0.0; 3], &[0.0; 3]),
            Err(NeuralError::NonFinite(_))
        ));
    }

    #[test]
    fn permuting_hidden_units_permutes_outputs() {
        let (d, h) = (3, 4);
        let p = random_params(d, h, 9);
        let perm = [2usize, 0, 3, 1];
        let mut q = LstmParams::<f64>::zeros(d, h);
        for gate in 0..4 {
            for k in 0..h {
                let src = gate * h + perm[k];
                let dst = gate * h + k;
                for j in 0..d {
                    q.w_x.set(dst, j, p.w_x.get(src, j));
                }
                for j in 0..h {
                    q.w_h.set(dst, j, p.w_h.get(src, perm[j]));
                }
                q.b.set(dst, 0, p.b.get(src, 0));
            }
        }
        let x = [0.2, -0.7, 0.4];
        let hp = [0.1, -0.3, 0.5, 0.9];
        let cp = [1.0, -0.5, 0.25, 0.0];
        let hq: Vec<f64> = perm.iter().map(|&i| hp[i]).collect();
        let cq: Vec<f64> = perm.iter().map(|&i| cp[i]).collect();
        let (h1, c1) = lstm_step(&p, &x, &hp, &cp).unwrap();
        let (h2, c2) = lstm_step(&q, &x, &hq, &cq).unwrap();
        for k in 0..h {
            assert!((h2[k] - h1[perm[k]]).abs() < 1e-14);
            assert!((c2[k] - c1[perm[k]]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_sequence_runs_both_directions_on_same_input() {
        let p = BiLstmParams {
            forward: random_params(3, 2, 1),
            backward: random_params(3, 2, 2),
        };
        let xs = Matrix::from_vec(1, 3, vec![0.5, -0.1, 0.3]);
        let tr = bilstm_forward(&p, &xs).unwrap();
        let (hf, _) = lstm_step(&p.forward, xs.row(0), &[0.0; 2], &[0.0; 2]).unwrap();
        let (hb, _) = lstm_step(&p.backward, xs.row(0), &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(tr.final_forward(), &hf[..]);
        assert_eq!(tr.final_backward(), &hb[..]);
    }

    #[test]
    fn palindrome_symmetry() {
        let dir = random_params(2, 3, 4);
        let p = BiLstmParams {
            forward: dir.clone(),
            backward: dir,
        };
        let rows = [[0.1, 0.9], [-0.4, 0.2], [0.7, -0.3], [-0.4, 0.2], [0.1, 0.9]];
        let xs = Matrix::from_fn(5, 2, |r, c| rows[r][c]);
        let tr = bilstm_forward(&p, &xs).unwrap();
        for t in 0..5 {
            let fwd = &tr.states.row(t)[..3];
            let bwd = &tr.states.row(4 - t)[3..];
            for k in 0..3 {
                assert!((fwd[k] - bwd[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_states_and_empty_input_errors() {
        let p = BiLstmParams::<f64>::zeros(2, 3);
        let xs = Matrix::from_fn(4, 2, |r, c| (r + c) as f64);
        let tr = bilstm_forward(&p, &xs).unwrap();
        assert!(tr.states.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(
            bilstm_forward(&p, &Matrix::zeros(0, 2)),
            Err(NeuralError::EmptySequence)
        ));
    }
}
