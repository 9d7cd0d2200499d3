//! Neural humanizers trained with an in-crate differentiation tape: a
//! one-hidden-layer MLP and an LSTM encoder/decoder, optionally with a
//! variational bottleneck and with the decoder conditioned on the score
//! (groove transfer).

pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod seq2seq;
pub mod tape;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::representation::{DrumCategory, GrooveTensor, NUM_INSTRUMENTS};
use crate::transforms::HI_HATS;

pub use mlp::{mlp_train, Mlp};
pub use seq2seq::{kl_gaussian_prior, loss_step, train_seq2seq, LatentMode, Seq2Seq, Seq2SeqDims};
pub use tape::{Mat, Tape, Var};

/// Which forward compression a model learns to invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Humanize,
    Infill,
    Tap2Drum,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Humanize => "humanize",
            Task::Infill => "infill",
            Task::Tap2Drum => "tap2drum",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "humanize" => Ok(Task::Humanize),
            "infill" => Ok(Task::Infill),
            "tap2drum" => Ok(Task::Tap2Drum),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// Optimizer and architecture settings for neural training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops training after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Weight of the KL term when the bottleneck is enabled.
    pub beta_vib: f64,
    /// Enables the variational bottleneck (sampled latent plus KL term).
    pub vib: bool,
    /// Linear KL warm-up length in steps; 0 disables annealing.
    pub kl_anneal_steps: usize,
    pub seed: u64,
    /// Training always feeds ground-truth previous steps to the decoder.
    pub teacher_forcing: bool,
    pub task: Task,
    /// Appends the score row to every decoder input (groove transfer).
    pub transfer_conditioning: bool,
    pub clip_norm: Option<f64>,
    pub dims: Seq2SeqDims,
    pub mlp_hidden: usize,
    /// Categories removed for infilling.
    pub infill_categories: Vec<DrumCategory>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 10,
            batch_size: 64,
            max_steps: None,
            beta_vib: 0.2,
            vib: false,
            kl_anneal_steps: 0,
            seed: 0,
            teacher_forcing: true,
            task: Task::Humanize,
            transfer_conditioning: false,
            clip_norm: None,
            dims: Seq2SeqDims::default(),
            mlp_hidden: 256,
            infill_categories: HI_HATS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.beta_vib >= 0.0) {
            return Err(Error::InvalidArgument("beta must be non-negative".into()));
        }
        if !self.teacher_forcing {
            return Err(Error::InvalidArgument("training requires teacher forcing".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.transfer_conditioning && self.task != Task::Humanize {
            return Err(Error::InvalidArgument("groove transfer conditioning is only defined for humanization".into()));
        }
        if self.task == Task::Infill && self.infill_categories.is_empty() {
            return Err(Error::InvalidArgument("infilling needs at least one category to remove".into()));
        }
        Ok(())
    }
}

/// Training-loss trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Decoder target row layout: `[hits | velocities | offsets]`, each `M` wide.
pub(crate) fn target_row(g: &GrooveTensor, t: usize, out: &mut [f64]) {
    for m in 0..NUM_INSTRUMENTS {
        out[m] = if g.hit(t, m) { 1.0 } else { 0.0 };
        out[NUM_INSTRUMENTS + m] = g.velocity(t, m);
        out[2 * NUM_INSTRUMENTS + m] = g.offset(t, m);
    }
}

pub(crate) fn check_finite(loss: f64, step: usize, last_finite: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, last_finite })
    }
}
