//! Bidirectional-LSTM encoder, two-layer LSTM decoder.
//!
//! The encoder reads one input row per step and its final forward and
//! backward states are projected to a latent mean and log-variance. The
//! latent sets the initial `(h, c)` of both decoder layers through an affine
//! map. Each decoder step sees the previous step's hits, velocities and
//! offsets (zeros at step 0), plus the current score row when conditioned.
//! Outputs are hit logits, `sigmoid` velocities and `0.5 * tanh` offsets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::{clip_global_norm, collect_gradients, Adam, ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use super::{check_finite, target_row, Task, TrainConfig, TrainReport};
use crate::baseline::KnnIndex;
use crate::error::{Error, Result};
use crate::representation::{DrumCategory, GrooveTensor, NUM_INSTRUMENTS};
use crate::transforms::{flatten_to_taps, remove_voice, TapTensor};

const M: usize = NUM_INSTRUMENTS;
/// Width of one decoder target row.
const ROW: usize = 3 * M;
/// Hit probability above which a hit is emitted.
pub const HIT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqDims {
    pub encoder: usize,
    pub latent: usize,
    pub decoder: usize,
}

impl Seq2SeqDims {
    pub fn full() -> Self {
        Self { encoder: 512, latent: 256, decoder: 256 }
    }

    pub fn uniform(n: usize) -> Self {
        Self { encoder: n, latent: n, decoder: n }
    }
}

impl Default for Seq2SeqDims {
    fn default() -> Self {
        Self { encoder: 64, latent: 32, decoder: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ids {
    enc_fw_w: ParamId,
    enc_fw_b: ParamId,
    enc_bw_w: ParamId,
    enc_bw_b: ParamId,
    mu_w: ParamId,
    mu_b: ParamId,
    logvar_w: ParamId,
    logvar_b: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    dec1_w: ParamId,
    dec1_b: ParamId,
    dec2_w: ParamId,
    dec2_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// How the latent is chosen at inference time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentMode {
    Mean,
    /// `mu + temperature * sigma * eps` with a seeded draw.
    Sample { temperature: f64, seed: u64 },
}

/// One training pair: encoder input rows, optional decoder conditioning rows
/// and the full target performance.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Mat,
    pub condition: Option<Mat>,
    pub target: GrooveTensor,
}

/// Encoder input width for a task.
pub fn input_width(task: Task, conditioned: bool) -> usize {
    match (task, conditioned) {
        (Task::Humanize, true) => ROW,
        (Task::Humanize, false) | (Task::Infill, _) => M,
        (Task::Tap2Drum, _) => 2,
    }
}

/// Score rows, `T x M`.
pub fn hit_rows(g: &GrooveTensor) -> Mat {
    Mat::from_fn(g.steps(), M, |t, m| if g.hit(t, m) { 1.0 } else { 0.0 })
}

/// Full performance rows `[h | v | o]`, `T x 3M`.
pub fn performance_rows(g: &GrooveTensor) -> Mat {
    let mut row = [0.0; ROW];
    let mut out = Mat::zeros(g.steps(), ROW);
    for t in 0..g.steps() {
        target_row(g, t, &mut row);
        for (j, &x) in row.iter().enumerate() {
            out[(t, j)] = x;
        }
    }
    out
}

pub fn tap_rows(taps: &TapTensor) -> Mat {
    Mat::from_fn(taps.steps(), 2, |t, j| match j {
        0 => {
            if taps.tap(t) {
                1.0
            } else {
                0.0
            }
        }
        _ => taps.offset(t),
    })
}

/// Builds training pairs for a task. Infilling windows that become empty
/// once the voice is removed are skipped.
pub fn make_examples(
    corpus: &[GrooveTensor],
    task: Task,
    conditioned: bool,
    infill_categories: &[DrumCategory],
) -> Vec<Example> {
    corpus
        .iter()
        .filter_map(|g| {
            let (input, condition) = match (task, conditioned) {
                (Task::Humanize, false) => (hit_rows(g), None),
                (Task::Humanize, true) => (performance_rows(g), Some(hit_rows(g))),
                (Task::Infill, _) => {
                    let (missing, _) = remove_voice(g, infill_categories);
                    if missing.is_empty() {
                        return None;
                    }
                    (hit_rows(&missing), None)
                }
                (Task::Tap2Drum, _) => (tap_rows(&flatten_to_taps(g)), None),
            };
            Some(Example { input, condition, target: g.clone() })
        })
        .collect()
}

/// Per-step reconstruction loss on probabilities: binary cross-entropy per
/// instrument plus squared velocity and offset errors, all summed.
pub fn loss_step(
    hit_probs: &[f64],
    velocities: &[f64],
    offsets: &[f64],
    hits: &[f64],
    target_velocities: &[f64],
    target_offsets: &[f64],
) -> f64 {
    let ce: f64 = hit_probs
        .iter()
        .zip(hits)
        .map(|(&p, &h)| {
            let p = p.clamp(1e-300, 1.0);
            let q = (1.0 - p).max(1e-300);
            -(h * p.ln() + (1.0 - h) * q.ln())
        })
        .sum();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    ce + sq(velocities, target_velocities) + sq(offsets, target_offsets)
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn kl_gaussian_prior(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// Loss components of one batch, each averaged over windows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub hits: f64,
    pub velocities: f64,
    pub offsets: f64,
    pub kl: f64,
    pub total: f64,
}

/// Decoded outputs before and after thresholding.
#[derive(Debug, Clone)]
pub struct Decoded {
    /// Row-major `T x M` hit probabilities.
    pub hit_probs: Vec<f64>,
    pub velocities: Vec<f64>,
    pub offsets: Vec<f64>,
    pub tensor: GrooveTensor,
}

/// Which hits are fixed during decoding and which the model chooses.
#[derive(Debug, Clone, Copy)]
pub struct Feedback<'a> {
    /// Known hits for columns that are not free.
    pub known: Option<&'a GrooveTensor>,
    /// Columns decided by thresholding the model's hit probabilities.
    pub free: [bool; M],
    /// Keep the known tensor's velocities and offsets on its fixed columns
    /// instead of predicting them.
    pub keep_known_values: bool,
}

impl<'a> Feedback<'a> {
    pub fn free_all() -> Self {
        Self { known: None, free: [true; M], keep_known_values: false }
    }

    pub fn fixed_hits(score: &'a GrooveTensor) -> Self {
        Self { known: Some(score), free: [false; M], keep_known_values: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub task: Task,
    pub dims: Seq2SeqDims,
    pub steps: usize,
    pub conditioned: bool,
    pub vib: bool,
    pub infill_categories: Vec<DrumCategory>,
    pub store: ParamStore,
    pub trained_steps: u64,
    ids: Ids,
}

struct LstmState {
    h: Var,
    c: Var,
}

fn lstm_step(tape: &mut Tape, w: Var, b: Var, x: Var, state: &LstmState, hidden: usize) -> LstmState {
    let xh = tape.concat_cols(&[x, state.h]);
    let gates = tape.affine(xh, w, b);
    let i = tape.slice_cols(gates, 0, hidden);
    let f = tape.slice_cols(gates, hidden, hidden);
    let g = tape.slice_cols(gates, 2 * hidden, hidden);
    let o = tape.slice_cols(gates, 3 * hidden, hidden);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, state.c);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    LstmState { h, c }
}

/// Rows `t` of each example's matrix, stacked into a `B x cols` batch.
fn batch_rows(mats: &[&Mat], t: usize) -> Mat {
    let cols = mats[0].ncols();
    Mat::from_fn(mats.len(), cols, |b, j| mats[b][(t, j)])
}

impl Seq2Seq {
    pub fn new(task: Task, dims: Seq2SeqDims, steps: usize, conditioned: bool, vib: bool, seed: u64) -> Result<Self> {
        if conditioned && task != Task::Humanize {
            return Err(Error::InvalidArgument("conditioning is only defined for humanization".into()));
        }
        if dims.encoder == 0 || dims.latent == 0 || dims.decoder == 0 || steps == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (e, z, d) = (dims.encoder, dims.latent, dims.decoder);
        let input = input_width(task, conditioned);
        let dec_in = ROW + if conditioned { M } else { 0 };
        let mut lstm = |store: &mut ParamStore, name: &str, inputs: usize, hidden: usize| {
            let w = store.add_uniform(format!("{name}.w"), inputs + hidden, 4 * hidden, &mut rng);
            let b = store.add_zeros(format!("{name}.b"), 1, 4 * hidden);
            store.value_mut(b).columns_mut(hidden, hidden).fill(1.0);
            (w, b)
        };
        let (enc_fw_w, enc_fw_b) = lstm(&mut store, "encoder.forward", input, e);
        let (enc_bw_w, enc_bw_b) = lstm(&mut store, "encoder.backward", input, e);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
        let mu_w = store.add_uniform("latent.mu.w", 2 * e, z, &mut rng);
        let mu_b = store.add_zeros("latent.mu.b", 1, z);
        let logvar_w = store.add_uniform("latent.logvar.w", 2 * e, z, &mut rng);
        let logvar_b = store.add_zeros("latent.logvar.b", 1, z);
        let init_w = store.add_uniform("decoder.init.w", z, 4 * d, &mut rng);
        let init_b = store.add_zeros("decoder.init.b", 1, 4 * d);
        let mut lstm = |store: &mut ParamStore, name: &str, inputs: usize, hidden: usize| {
            let w = store.add_uniform(format!("{name}.w"), inputs + hidden, 4 * hidden, &mut rng);
            let b = store.add_zeros(format!("{name}.b"), 1, 4 * hidden);
            store.value_mut(b).columns_mut(hidden, hidden).fill(1.0);
            (w, b)
        };
        let (dec1_w, dec1_b) = lstm(&mut store, "decoder.layer1", dec_in, d);
        let (dec2_w, dec2_b) = lstm(&mut store, "decoder.layer2", d, d);
        let out_w = store.add_uniform("decoder.out.w", d, ROW, &mut rng);
        let out_b = store.add_zeros("decoder.out.b", 1, ROW);
        let ids = Ids {
            enc_fw_w,
            enc_fw_b,
            enc_bw_w,
            enc_bw_b,
            mu_w,
            mu_b,
            logvar_w,
            logvar_b,
            init_w,
            init_b,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            out_w,
            out_b,
        };
        Ok(Self {
            task,
            dims,
            steps,
            conditioned,
            vib,
            infill_categories: crate::transforms::HI_HATS.to_vec(),
            store,
            trained_steps: 0,
            ids,
        })
    }

    pub fn input_width(&self) -> usize {
        input_width(self.task, self.conditioned)
    }

    /// Encodes a batch of `T x input` matrices into `(mu, logvar)`, each `B x Z`.
    fn encode_batch(&self, tape: &mut Tape, inputs: &[&Mat]) -> (Var, Var) {
        let e = self.dims.encoder;
        let b = inputs.len();
        let steps = inputs[0].nrows();
        let fw_w = tape.param(&self.store, self.ids.enc_fw_w);
        let fw_b = tape.param(&self.store, self.ids.enc_fw_b);
        let bw_w = tape.param(&self.store, self.ids.enc_bw_w);
        let bw_b = tape.param(&self.store, self.ids.enc_bw_b);
        let xs: Vec<Var> = (0..steps).map(|t| tape.constant(batch_rows(inputs, t))).collect();
        let mut fw = LstmState { h: tape.zeros(b, e), c: tape.zeros(b, e) };
        for &x in &xs {
            fw = lstm_step(tape, fw_w, fw_b, x, &fw, e);
        }
        let mut bw = LstmState { h: tape.zeros(b, e), c: tape.zeros(b, e) };
        for &x in xs.iter().rev() {
            bw = lstm_step(tape, bw_w, bw_b, x, &bw, e);
        }
        let joined = tape.concat_cols(&[fw.h, bw.h]);
        let mu_w = tape.param(&self.store, self.ids.mu_w);
        let mu_b = tape.param(&self.store, self.ids.mu_b);
        let lv_w = tape.param(&self.store, self.ids.logvar_w);
        let lv_b = tape.param(&self.store, self.ids.logvar_b);
        let mu = tape.affine(joined, mu_w, mu_b);
        let logvar = tape.affine(joined, lv_w, lv_b);
        (mu, logvar)
    }

    fn initial_states(&self, tape: &mut Tape, z: Var) -> [LstmState; 2] {
        let d = self.dims.decoder;
        let w = tape.param(&self.store, self.ids.init_w);
        let b = tape.param(&self.store, self.ids.init_b);
        let init = tape.affine(z, w, b);
        let h1 = tape.slice_cols(init, 0, d);
        let c1 = tape.slice_cols(init, d, d);
        let h2 = tape.slice_cols(init, 2 * d, d);
        let c2 = tape.slice_cols(init, 3 * d, d);
        [LstmState { h: h1, c: c1 }, LstmState { h: h2, c: c2 }]
    }

    /// One decoder step; returns `(hit_logits, velocities, offsets)`.
    fn decoder_step(&self, tape: &mut Tape, x: Var, states: &mut [LstmState; 2]) -> (Var, Var, Var) {
        let d = self.dims.decoder;
        let w1 = tape.param(&self.store, self.ids.dec1_w);
        let b1 = tape.param(&self.store, self.ids.dec1_b);
        let w2 = tape.param(&self.store, self.ids.dec2_w);
        let b2 = tape.param(&self.store, self.ids.dec2_b);
        let ow = tape.param(&self.store, self.ids.out_w);
        let ob = tape.param(&self.store, self.ids.out_b);
        states[0] = lstm_step(tape, w1, b1, x, &states[0], d);
        let h1 = states[0].h;
        states[1] = lstm_step(tape, w2, b2, h1, &states[1], d);
        let out = tape.affine(states[1].h, ow, ob);
        let logits = tape.slice_cols(out, 0, M);
        let vel = tape.slice_cols(out, M, M);
        let off = tape.slice_cols(out, 2 * M, M);
        let vel = tape.sigmoid(vel);
        let off = tape.tanh(off);
        let off = tape.scale(off, 0.5);
        (logits, vel, off)
    }

    /// Teacher-forced loss for a batch. `noise` (`B x Z`) enables the
    /// reparameterized latent; without it the latent is the mean.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[&Example], noise: Option<&Mat>, beta: f64) -> (Var, LossParts) {
        let b = batch.len();
        let inputs: Vec<&Mat> = batch.iter().map(|ex| &ex.input).collect();
        let (mu, logvar) = self.encode_batch(tape, &inputs);
        let z = match noise {
            Some(eps) => {
                let half = tape.scale(logvar, 0.5);
                let sigma = tape.exp(half);
                let eps = tape.constant(eps.clone());
                let scaled = tape.mul(sigma, eps);
                tape.add(mu, scaled)
            }
            None => mu,
        };
        let mut states = self.initial_states(tape, z);
        let targets: Vec<Mat> = batch.iter().map(|ex| performance_rows(&ex.target)).collect();
        let target_refs: Vec<&Mat> = targets.iter().collect();
        let conditions: Option<Vec<&Mat>> = if self.conditioned {
            Some(batch.iter().map(|ex| ex.condition.as_ref().expect("conditioned example")).collect())
        } else {
            None
        };
        let mut hit_terms = Vec::with_capacity(self.steps);
        let mut vel_terms = Vec::with_capacity(self.steps);
        let mut off_terms = Vec::with_capacity(self.steps);
        for t in 0..self.steps {
            let prev = if t == 0 { Mat::zeros(b, ROW) } else { batch_rows(&target_refs, t - 1) };
            let prev = tape.constant(prev);
            let x = match &conditions {
                Some(c) => {
                    let cond = tape.constant(batch_rows(c, t));
                    tape.concat_cols(&[prev, cond])
                }
                None => prev,
            };
            let (logits, vel, off) = self.decoder_step(tape, x, &mut states);
            let row = batch_rows(&target_refs, t);
            hit_terms.push(tape.bce_with_logits(logits, row.columns(0, M).into_owned()));
            vel_terms.push(tape.squared_error(vel, row.columns(M, M).into_owned()));
            off_terms.push(tape.squared_error(off, row.columns(2 * M, M).into_owned()));
        }
        let mut parts = LossParts::default();
        let scale = 1.0 / b as f64;
        let sum_terms = |tape: &mut Tape, terms: &[Var]| {
            let joined = tape.concat_cols(terms);
            tape.sum(joined)
        };
        let hits = sum_terms(tape, &hit_terms);
        let vels = sum_terms(tape, &vel_terms);
        let offs = sum_terms(tape, &off_terms);
        parts.hits = tape.scalar(hits) * scale;
        parts.velocities = tape.scalar(vels) * scale;
        parts.offsets = tape.scalar(offs) * scale;
        let recon = tape.add(hits, vels);
        let mut total = tape.add(recon, offs);
        if noise.is_some() && beta > 0.0 {
            let kl = tape.gaussian_kl(mu, logvar);
            parts.kl = tape.scalar(kl) * scale;
            let weighted = tape.scale(kl, beta);
            total = tape.add(total, weighted);
        } else if noise.is_some() {
            let kl = tape.gaussian_kl(mu, logvar);
            parts.kl = tape.scalar(kl) * scale;
        }
        let total = tape.scale(total, scale);
        parts.total = tape.scalar(total);
        (total, parts)
    }

    /// Latent mean and standard deviation for one input matrix.
    pub fn encode(&self, input: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.ncols() != self.input_width() || input.nrows() != self.steps {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.steps, self.input_width()),
                found: format!("{}x{}", input.nrows(), input.ncols()),
            });
        }
        let mut tape = Tape::new();
        let (mu, logvar) = self.encode_batch(&mut tape, &[input]);
        let mu = tape.value(mu).iter().copied().collect();
        let sigma = tape.value(logvar).iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok((mu, sigma))
    }

    fn latent(&self, input: &Mat, mode: LatentMode) -> Result<Vec<f64>> {
        let (mu, sigma) = self.encode(input)?;
        Ok(match mode {
            LatentMode::Mean => mu,
            LatentMode::Sample { temperature, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                mu.iter()
                    .zip(&sigma)
                    .map(|(m, s)| {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        m + temperature * s * eps
                    })
                    .collect()
            }
        })
    }

    /// Autoregressive decoding from a latent vector.
    ///
    /// Each step's hits come from `feedback`: fixed columns copy the known
    /// hits, free columns threshold the predicted probabilities. Velocities
    /// and offsets are kept only where a hit is emitted, and the resulting
    /// row is fed to the next step.
    pub fn decode(
        &self,
        z: &[f64],
        tempo_bpm: f64,
        condition: Option<&GrooveTensor>,
        feedback: &Feedback<'_>,
    ) -> Result<Decoded> {
        if z.len() != self.dims.latent {
            return Err(Error::ShapeMismatch {
                expected: format!("latent of {}", self.dims.latent),
                found: format!("{}", z.len()),
            });
        }
        if self.conditioned != condition.is_some() {
            return Err(Error::InvalidArgument(
                "a conditioning score is required exactly when the model is conditioned".into(),
            ));
        }
        for g in condition.iter().chain(feedback.known.iter()) {
            if g.steps() != self.steps {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} steps", self.steps),
                    found: format!("{} steps", g.steps()),
                });
            }
        }
        let mut tape = Tape::new();
        let zv = tape.constant(Mat::from_row_slice(1, z.len(), z));
        let mut states = self.initial_states(&mut tape, zv);
        let mut out = GrooveTensor::empty(self.steps, tempo_bpm);
        let mut hit_probs = Vec::with_capacity(self.steps * M);
        let mut velocities = Vec::with_capacity(self.steps * M);
        let mut offsets = Vec::with_capacity(self.steps * M);
        let mut prev = [0.0; ROW];
        for t in 0..self.steps {
            let prev_v = tape.constant(Mat::from_row_slice(1, ROW, &prev));
            let x = match condition {
                Some(c) => {
                    let row = Mat::from_fn(1, M, |_, m| if c.hit(t, m) { 1.0 } else { 0.0 });
                    let cond = tape.constant(row);
                    tape.concat_cols(&[prev_v, cond])
                }
                None => prev_v,
            };
            let (logits, vel, off) = self.decoder_step(&mut tape, x, &mut states);
            for m in 0..M {
                let p = 1.0 / (1.0 + (-tape.value(logits)[(0, m)]).exp());
                let v = tape.value(vel)[(0, m)];
                let o = tape.value(off)[(0, m)];
                hit_probs.push(p);
                velocities.push(v);
                offsets.push(o);
                let (hit, v_out, o_out) = if feedback.free[m] {
                    (p > HIT_THRESHOLD, v, o)
                } else {
                    match feedback.known {
                        Some(k) if feedback.keep_known_values => (k.hit(t, m), k.velocity(t, m), k.offset(t, m)),
                        Some(k) => (k.hit(t, m), v, o),
                        None => (false, 0.0, 0.0),
                    }
                };
                if hit {
                    out.set_hit(t, m, v_out, o_out);
                }
            }
            target_row(&out, t, &mut prev);
        }
        Ok(Decoded { hit_probs, velocities, offsets, tensor: out })
    }

    fn require(&self, task: Task, conditioned: bool) -> Result<()> {
        if self.trained_steps == 0 {
            return Err(Error::UntrainedModel);
        }
        if self.task != task || self.conditioned != conditioned {
            let describe = |t: Task, c: bool| format!("{t}{}", if c { " (groove transfer)" } else { "" });
            return Err(Error::TaskMismatch {
                trained: describe(self.task, self.conditioned),
                requested: describe(task, conditioned),
            });
        }
        Ok(())
    }

    /// Performs a score: hits are kept verbatim, velocities and offsets predicted.
    pub fn humanize(&self, score: &GrooveTensor, mode: LatentMode) -> Result<GrooveTensor> {
        self.require(Task::Humanize, false)?;
        let score = score.hits_only();
        let z = self.latent(&hit_rows(&score), mode)?;
        Ok(self.decode(&z, score.tempo_bpm(), None, &Feedback::fixed_hits(&score))?.tensor)
    }

    /// Regenerates the removed categories; every other voice is copied through.
    pub fn infill(&self, partial: &GrooveTensor, mode: LatentMode) -> Result<GrooveTensor> {
        self.require(Task::Infill, false)?;
        let (missing, _) = remove_voice(partial, &self.infill_categories);
        let z = self.latent(&hit_rows(&missing), mode)?;
        let mut free = [false; M];
        for c in &self.infill_categories {
            free[c.index()] = true;
        }
        let feedback = Feedback { known: Some(&missing), free, keep_known_values: true };
        Ok(self.decode(&z, missing.tempo_bpm(), None, &feedback)?.tensor)
    }

    /// Generates a full kit performance from a tap track.
    pub fn tap2drum(&self, taps: &TapTensor, mode: LatentMode) -> Result<GrooveTensor> {
        self.require(Task::Tap2Drum, false)?;
        let z = self.latent(&tap_rows(taps), mode)?;
        Ok(self.decode(&z, taps.tempo_bpm(), None, &Feedback::free_all())?.tensor)
    }

    /// Groove embedding (latent mean) of a full performance.
    pub fn groove_embedding(&self, performance: &GrooveTensor) -> Result<Vec<f64>> {
        if !self.conditioned {
            return Err(Error::InvalidArgument("groove embeddings need a groove transfer model".into()));
        }
        Ok(self.encode(&performance_rows(performance))?.0)
    }

    /// Decodes `score` with a given groove embedding.
    pub fn transfer(&self, score: &GrooveTensor, z: &[f64]) -> Result<GrooveTensor> {
        self.require(Task::Humanize, true)?;
        let score = score.hits_only();
        Ok(self.decode(z, score.tempo_bpm(), Some(&score), &Feedback::fixed_hits(&score))?.tensor)
    }

    /// Humanizes with the averaged groove embedding of the `k` training
    /// windows sharing the most hits with `score`.
    pub fn groove_transfer_humanize(&self, score: &GrooveTensor, index: &KnnIndex<'_>, k: usize) -> Result<GrooveTensor> {
        self.require(Task::Humanize, true)?;
        let neighbors = index.neighbors(score, k)?;
        let mut z = vec![0.0; self.dims.latent];
        for i in &neighbors {
            let e = self.groove_embedding(index.window(*i))?;
            z.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        }
        z.iter_mut().for_each(|a| *a /= neighbors.len() as f64);
        self.transfer(score, &z)
    }
}

/// Trains a sequence model with Adam under teacher forcing. Deterministic
/// for a given config and corpus.
pub fn train_seq2seq(corpus: &[GrooveTensor], cfg: &TrainConfig) -> Result<(Seq2Seq, TrainReport)> {
    cfg.validate()?;
    let steps = corpus.first().ok_or(Error::EmptyTrainingSet)?.steps();
    if corpus.iter().any(|g| g.steps() != steps) {
        return Err(Error::ShapeMismatch { expected: format!("{steps} steps in every window"), found: "mixed".into() });
    }
    let mut model = Seq2Seq::new(cfg.task, cfg.dims, steps, cfg.transfer_conditioning, cfg.vib, cfg.seed)?;
    model.infill_categories = cfg.infill_categories.clone();
    let examples = make_examples(corpus, cfg.task, cfg.transfer_conditioning, &cfg.infill_categories);
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let report = continue_training(&mut model, &examples, cfg)?;
    Ok((model, report))
}

/// Runs the optimizer over prepared examples, updating `model` in place.
pub fn continue_training(model: &mut Seq2Seq, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    let mut last_finite = f64::NAN;
    'epochs: for _ in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if report.steps >= limit {
                break 'epochs;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let noise = model.vib.then(|| {
                Mat::from_fn(batch.len(), model.dims.latent, |_, _| StandardNormal.sample(&mut rng))
            });
            let beta = if cfg.kl_anneal_steps > 0 {
                cfg.beta_vib * ((report.steps + 1) as f64 / cfg.kl_anneal_steps as f64).min(1.0)
            } else {
                cfg.beta_vib
            };
            let mut tape = Tape::new();
            let (loss, parts) = model.batch_loss(&mut tape, &batch, noise.as_ref(), beta);
            check_finite(parts.total, report.steps, last_finite)?;
            let grads = tape.backward(loss);
            let mut grads = collect_gradients(&model.store, &grads);
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.update(&mut model.store, &grads);
            last_finite = parts.total;
            report.losses.push(parts.total);
            report.steps += 1;
            model.trained_steps += 1;
        }
    }
    if !model.store.is_finite() {
        return Err(Error::NonFiniteLoss { step: report.steps, last_finite });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_window(rng: &mut ChaCha8Rng, steps: usize) -> GrooveTensor {
        let mut g = GrooveTensor::empty(steps, 100.0);
        for t in 0..steps {
            for m in 0..M {
                if rng.random_bool(0.2) {
                    g.set_hit(t, m, rng.random_range(0.1..1.0), rng.random_range(-0.4..0.4));
                }
            }
        }
        g
    }

    fn toy(task: Task, conditioned: bool, vib: bool) -> Seq2Seq {
        Seq2Seq::new(task, Seq2SeqDims::uniform(6), 8, conditioned, vib, 7).unwrap()
    }

    #[test]
    fn loss_step_examples() {
        let h = [1.0, 0.0, 1.0];
        let v = [0.7, 0.0, 0.2];
        let o = [0.1, 0.0, -0.3];
        assert!(loss_step(&h, &v, &o, &h, &v, &o).abs() < 1e-12);
        let half = [0.5; 9];
        let zeros = [0.0; 9];
        let hits: Vec<f64> = (0..9).map(|i| (i % 2) as f64).collect();
        let l = loss_step(&half, &zeros, &zeros, &hits, &zeros, &zeros);
        assert!((l - 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_prior_examples() {
        assert_eq!(kl_gaussian_prior(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!((kl_gaussian_prior(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_equals_sum_of_step_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = toy(Task::Humanize, false, false);
        let corpus: Vec<_> = (0..3).map(|_| random_window(&mut rng, 8)).collect();
        let examples = make_examples(&corpus, Task::Humanize, false, &[]);
        let refs: Vec<&Example> = examples.iter().collect();
        let mut tape = Tape::new();
        let (_, parts) = model.batch_loss(&mut tape, &refs, None, 0.0);

        // Recompute each window with scalar step losses on the decoder outputs.
        let mut expected = 0.0;
        for ex in &examples {
            let mut tape = Tape::new();
            let (mu, _) = model.encode_batch(&mut tape, &[&ex.input]);
            let mut states = model.initial_states(&mut tape, mu);
            let rows = performance_rows(&ex.target);
            for t in 0..8 {
                let prev = if t == 0 { Mat::zeros(1, ROW) } else { rows.rows(t - 1, 1).into_owned() };
                let x = tape.constant(prev);
                let (logits, vel, off) = model.decoder_step(&mut tape, x, &mut states);
                let p: Vec<f64> = tape.value(logits).iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect();
                let v: Vec<f64> = tape.value(vel).iter().copied().collect();
                let o: Vec<f64> = tape.value(off).iter().copied().collect();
                let r: Vec<f64> = rows.row(t).iter().copied().collect();
                expected += loss_step(&p, &v, &o, &r[..M], &r[M..2 * M], &r[2 * M..]);
            }
        }
        expected /= examples.len() as f64;
        assert!((parts.total - expected).abs() < 1e-9 * expected.abs(), "{} vs {expected}", parts.total);
        assert!((parts.hits + parts.velocities + parts.offsets - parts.total).abs() < 1e-9);
    }

    #[test]
    fn beta_zero_matches_plain_loss_with_same_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = toy(Task::Humanize, false, true);
        let corpus: Vec<_> = (0..2).map(|_| random_window(&mut rng, 8)).collect();
        let examples = make_examples(&corpus, Task::Humanize, false, &[]);
        let refs: Vec<&Example> = examples.iter().collect();
        let zero_noise = Mat::zeros(2, 6);
        let (_, with_vib) = model.batch_loss(&mut Tape::new(), &refs, Some(&zero_noise), 0.0);
        let (_, plain) = model.batch_loss(&mut Tape::new(), &refs, None, 0.0);
        assert!((with_vib.total - plain.total).abs() < 1e-12);
        assert!(with_vib.kl > 0.0);
        let (_, weighted) = model.batch_loss(&mut Tape::new(), &refs, Some(&zero_noise), 0.2);
        assert!((weighted.total - plain.total - 0.2 * with_vib.kl).abs() < 1e-9);
    }

    #[test]
    fn encoder_is_deterministic_and_sensitive() {
        let model = toy(Task::Humanize, false, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_window(&mut rng, 8);
        let input = hit_rows(&g);
        let (mu1, s1) = model.encode(&input).unwrap();
        let (mu2, s2) = model.encode(&input).unwrap();
        assert_eq!(mu1, mu2);
        assert_eq!(s1, s2);
        assert!(s1.iter().all(|&s| s > 0.0));
        let (mu0, s0) = model.encode(&Mat::zeros(8, M)).unwrap();
        assert!(mu0.iter().chain(&s0).all(|x| x.is_finite()));
        let mut flipped = input.clone();
        flipped[(3, 2)] = 1.0 - flipped[(3, 2)];
        let (mu3, _) = model.encode(&flipped).unwrap();
        assert_ne!(mu1, mu3);
        assert!(model.encode(&Mat::zeros(8, 2)).is_err());
    }

    #[test]
    fn decoder_ranges_and_determinism() {
        let model = toy(Task::Tap2Drum, false, false);
        let z: Vec<f64> = (0..6).map(|i| i as f64 * 0.7 - 2.0).collect();
        let a = model.decode(&z, 120.0, None, &Feedback::free_all()).unwrap();
        let b = model.decode(&z, 120.0, None, &Feedback::free_all()).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_eq!(a.hit_probs, b.hit_probs);
        assert!(a.hit_probs.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(a.velocities.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.offsets.iter().all(|&o| (-0.5..0.5).contains(&o)));
        a.tensor.validate().unwrap();
        assert!(model.decode(&[0.0; 3], 120.0, None, &Feedback::free_all()).is_err());
    }

    #[test]
    fn untrained_and_mismatched_models_are_rejected() {
        let mut model = toy(Task::Humanize, false, false);
        let score = GrooveTensor::empty(8, 120.0);
        assert_eq!(model.humanize(&score, LatentMode::Mean), Err(Error::UntrainedModel));
        model.trained_steps = 1;
        assert!(model.humanize(&score, LatentMode::Mean).is_ok());
        assert!(matches!(
            model.tap2drum(&TapTensor::empty(8, 120.0), LatentMode::Mean),
            Err(Error::TaskMismatch { .. })
        ));
        assert!(Seq2Seq::new(Task::Infill, Seq2SeqDims::uniform(4), 8, true, false, 0).is_err());
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let corpus: Vec<_> = (0..6).map(|_| random_window(&mut rng, 8)).collect();
        let cfg = TrainConfig {
            dims: Seq2SeqDims::uniform(6),
            batch_size: 2,
            max_steps: Some(12),
            vib: true,
            seed: 42,
            ..TrainConfig::default()
        };
        let (a, ra) = train_seq2seq(&corpus, &cfg).unwrap();
        let (b, rb) = train_seq2seq(&corpus, &cfg).unwrap();
        assert_eq!(ra.steps, 12);
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(a.store, b.store);
        let (c, _) = train_seq2seq(&corpus, &TrainConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn infill_only_touches_removed_categories() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = toy(Task::Infill, false, false);
        model.trained_steps = 1;
        for _ in 0..20 {
            let g = random_window(&mut rng, 8);
            let out = model.infill(&g, LatentMode::Mean).unwrap();
            for t in 0..8 {
                for m in 0..M {
                    if !model.infill_categories.iter().any(|c| c.index() == m) {
                        assert_eq!(out.hit(t, m), g.hit(t, m));
                        assert_eq!(out.velocity(t, m), g.velocity(t, m));
                        assert_eq!(out.offset(t, m), g.offset(t, m));
                    }
                }
            }
        }
    }

    #[test]
    fn groove_transfer_keeps_score_and_self_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = toy(Task::Humanize, true, false);
        model.trained_steps = 1;
        let train: Vec<_> = (0..5).map(|_| random_window(&mut rng, 8)).collect();
        let index = KnnIndex::new(&train);
        let score = train[2].hits_only();
        let out = model.groove_transfer_humanize(&score, &index, 1).unwrap();
        assert_eq!(out.hits(), score.hits());
        let direct = model.transfer(&score, &model.groove_embedding(&train[2]).unwrap()).unwrap();
        assert_eq!(out, direct);
        let out3 = model.groove_transfer_humanize(&score, &index, 3).unwrap();
        assert_eq!(out3.hits(), score.hits());
    }
}
