use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Level1Tagger, Level2Joint};
use crate::fusion::{FeatureSchema, FusionPolicy, Modality};
use crate::neural::{grad_check, GradCheckOptions, GradCheckReport, Matrix, Parameters};

/// Size of a random float64 instance for gradient checking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckCase {
    pub hidden: usize,
    pub steps: usize,
    pub input: usize,
    pub slots: usize,
    pub intents: usize,
    /// Fused modalities and their projection width.
    pub fusion: Vec<Modality>,
    pub fused_width: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GradCheckCase {
    fn default() -> Self {
        Self {
            hidden: 8,
            steps: 5,
            input: 12,
            slots: 8,
            intents: 9,
            fusion: Vec::new(),
            fused_width: 16,
            lambda: 0.7,
            seed: 0,
        }
    }
}

const SCHEMA: FeatureSchema = FeatureSchema {
    audio: 10,
    video_cabin: 7,
    video_road: 6,
};

fn randomize<P: Parameters<f64>, R: Rng>(p: &mut P, rng: &mut R) {
    for (_, m) in p.named_mut() {
        for v in m.as_mut_slice() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

fn inputs<R: Rng>(c: &GradCheckCase, rng: &mut R) -> (Matrix<f64>, Vec<usize>) {
    let x = Matrix::from_fn(c.steps, c.input, |_, _| rng.random_range(-1.0..1.0));
    let y = (0..c.steps).map(|_| rng.random_range(0..c.slots)).collect();
    (x, y)
}

pub fn check_level1(c: &GradCheckCase, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut m = Level1Tagger::<f64>::zeros(c.input, c.hidden, c.slots);
    randomize(&mut m, &mut rng);
    let (x, y) = inputs(c, &mut rng);
    let mut g = m.zeroed();
    m.loss_and_grad(&x, &y, &mut g).expect("valid instance");
    grad_check(&m, &g, |p| p.loss(&x, &y).expect("valid instance"), opts)
}

pub fn check_level2(c: &GradCheckCase, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let policy = FusionPolicy::new(&c.fusion, c.fused_width);
    let mut m = Level2Joint::<f64>::zeros(c.input, c.hidden, c.slots, c.intents, &policy, &SCHEMA);
    randomize(&mut m, &mut rng);
    let (x, y) = inputs(c, &mut rng);
    let feats: Vec<Vec<f64>> = policy
        .modalities()
        .iter()
        .map(|&md| (0..SCHEMA.dim(md)).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let intent = rng.random_range(0..c.intents);
    let mut g = m.zeroed();
    m.loss_and_grad(&x, &feats, &y, intent, c.lambda, &mut g)
        .expect("valid instance");
    grad_check(
        &m,
        &g,
        |p| p.loss(&x, &feats, &y, intent, c.lambda).expect("valid instance"),
        opts,
    )
}
