//! One-hidden-layer humanizer: the flattened score goes through a ReLU
//! layer and a linear layer that emits the whole performance at once.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{clip_global_norm, collect_gradients, Adam, ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use super::{check_finite, target_row, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::representation::{clamp_offset, GrooveTensor, NUM_INSTRUMENTS};

const M: usize = NUM_INSTRUMENTS;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub steps: usize,
    pub hidden: usize,
    pub store: ParamStore,
    pub trained_steps: u64,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Flattened score, `1 x T*M`.
fn score_row(g: &GrooveTensor) -> Vec<f64> {
    g.hits_f64()
}

/// Flattened target, `1 x T*3M`, step-major with `[h | v | o]` per step.
fn target_flat(g: &GrooveTensor) -> Vec<f64> {
    let mut out = vec![0.0; g.steps() * 3 * M];
    for t in 0..g.steps() {
        target_row(g, t, &mut out[t * 3 * M..(t + 1) * 3 * M]);
    }
    out
}

impl Mlp {
    pub fn new(steps: usize, hidden: usize, seed: u64) -> Result<Self> {
        if steps == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w1 = store.add_uniform("hidden.w", steps * M, hidden, &mut rng);
        let b1 = store.add_zeros("hidden.b", 1, hidden);
        let w2 = store.add_uniform("out.w", hidden, steps * 3 * M, &mut rng);
        let b2 = store.add_zeros("out.b", 1, steps * 3 * M);
        Ok(Self { steps, hidden, store, trained_steps: 0, w1, b1, w2, b2 })
    }

    /// All weights zero: the output is the output bias for every input.
    pub fn zeros(steps: usize, hidden: usize) -> Result<Self> {
        let mut mlp = Self::new(steps, hidden, 0)?;
        for id in mlp.store.ids().collect::<Vec<_>>() {
            mlp.store.value_mut(id).fill(0.0);
        }
        Ok(mlp)
    }

    pub fn output_bias_mut(&mut self) -> &mut Mat {
        self.store.value_mut(self.b2)
    }

    fn forward(&self, tape: &mut Tape, x: Mat) -> Var {
        let x = tape.constant(x);
        let w1 = tape.param(&self.store, self.w1);
        let b1 = tape.param(&self.store, self.b1);
        let w2 = tape.param(&self.store, self.w2);
        let b2 = tape.param(&self.store, self.b2);
        let h = tape.affine(x, w1, b1);
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }

    /// Squared error against the flattened performances, divided by batch size.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[&GrooveTensor]) -> Var {
        let inputs: Vec<f64> = batch.iter().flat_map(|g| score_row(g)).collect();
        let targets: Vec<f64> = batch.iter().flat_map(|g| target_flat(g)).collect();
        let b = batch.len();
        let x = Mat::from_row_slice(b, self.steps * M, &inputs);
        let y = Mat::from_row_slice(b, self.steps * 3 * M, &targets);
        let out = self.forward(tape, x);
        let se = tape.squared_error(out, y);
        tape.scale(se, 1.0 / b as f64)
    }

    /// Raw network output for a score, `T*3M` values.
    pub fn predict_raw(&self, score: &GrooveTensor) -> Result<Vec<f64>> {
        if score.steps() != self.steps {
            return Err(Error::ShapeMismatch {
                expected: format!("{} steps", self.steps),
                found: format!("{} steps", score.steps()),
            });
        }
        let mut tape = Tape::new();
        let x = Mat::from_row_slice(1, self.steps * M, &score_row(score));
        let out = self.forward(&mut tape, x);
        Ok(tape.value(out).iter().copied().collect())
    }

    /// Keeps the score's hits; velocities and offsets come from the output,
    /// clamped to their valid ranges.
    pub fn humanize(&self, score: &GrooveTensor) -> Result<GrooveTensor> {
        if self.trained_steps == 0 {
            return Err(Error::UntrainedModel);
        }
        let raw = self.predict_raw(score)?;
        let mut out = score.hits_only();
        for (t, m) in score.hit_cells() {
            let base = t * 3 * M;
            let v = raw[base + M + m].clamp(0.0, 1.0);
            let o = clamp_offset(raw[base + 2 * M + m]);
            out.set_hit(t, m, v, o);
        }
        Ok(out)
    }
}

pub fn mlp_train(corpus: &[GrooveTensor], cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    let steps = corpus.first().ok_or(Error::EmptyTrainingSet)?.steps();
    if corpus.iter().any(|g| g.steps() != steps) {
        return Err(Error::ShapeMismatch { expected: format!("{steps} steps in every window"), found: "mixed".into() });
    }
    let mut model = Mlp::new(steps, cfg.mlp_hidden, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    let mut last_finite = f64::NAN;
    'epochs: for _ in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if report.steps >= limit {
                break 'epochs;
            }
            let batch: Vec<&GrooveTensor> = chunk.iter().map(|&i| &corpus[i]).collect();
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &batch);
            let value = tape.scalar(loss);
            check_finite(value, report.steps, last_finite)?;
            let mut grads = collect_gradients(&model.store, &tape.backward(loss));
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.update(&mut model.store, &grads);
            last_finite = value;
            report.losses.push(value);
            report.steps += 1;
            model.trained_steps += 1;
        }
    }
    Ok((model, report))
}
