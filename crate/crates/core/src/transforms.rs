//! Forward compressions of a performance. Each task model learns to invert one.

use crate::representation::{
    nearest_step, step_seconds, DrumCategory, GrooveTensor, TimedNote, NUM_INSTRUMENTS,
};

/// A single-voice rhythm: which steps were tapped and how early or late.
#[derive(Debug, Clone, PartialEq)]
pub struct TapTensor {
    taps: Vec<bool>,
    offsets: Vec<f64>,
    tempo_bpm: f64,
}

impl TapTensor {
    pub fn empty(steps: usize, tempo_bpm: f64) -> Self {
        Self { taps: vec![false; steps], offsets: vec![0.0; steps], tempo_bpm }
    }

    pub fn steps(&self) -> usize {
        self.taps.len()
    }

    pub fn tempo_bpm(&self) -> f64 {
        self.tempo_bpm
    }

    pub fn tap(&self, t: usize) -> bool {
        self.taps[t]
    }

    pub fn offset(&self, t: usize) -> f64 {
        self.offsets[t]
    }

    pub fn set_tap(&mut self, t: usize, offset: f64) {
        self.taps[t] = true;
        self.offsets[t] = crate::representation::clamp_offset(offset);
    }

    pub fn tap_count(&self) -> usize {
        self.taps.iter().filter(|&&t| t).count()
    }

    /// Encoder rows: `[tap, tap_offset]` per step.
    pub fn encoder_rows(&self) -> Vec<f64> {
        self.taps
            .iter()
            .zip(&self.offsets)
            .flat_map(|(&tap, &o)| [if tap { 1.0 } else { 0.0 }, o])
            .collect()
    }
}

/// Strips velocities and offsets, leaving the drum score.
pub fn to_score(g: &GrooveTensor) -> GrooveTensor {
    g.hits_only()
}

/// The hi-hat categories removed together by default for infilling.
pub const HI_HATS: [DrumCategory; 2] = [DrumCategory::ClosedHiHat, DrumCategory::OpenHiHat];

/// Removes the given categories. Returns `(input, target)` where `target`
/// is the untouched performance.
pub fn remove_voice(g: &GrooveTensor, categories: &[DrumCategory]) -> (GrooveTensor, GrooveTensor) {
    let mut input = g.clone();
    for c in categories {
        input.clear_instrument(c.index());
    }
    (input, g.clone())
}

/// Collapses all voices into one tap track. Where several drums share a
/// step, the loudest hit's offset is kept.
pub fn flatten_to_taps(g: &GrooveTensor) -> TapTensor {
    let mut taps = TapTensor::empty(g.steps(), g.tempo_bpm());
    for t in 0..g.steps() {
        let loudest = (0..NUM_INSTRUMENTS)
            .filter(|&m| g.hit(t, m))
            // Equal velocities keep the lower category index.
            .fold(None::<usize>, |best, m| match best {
                Some(b) if g.velocity(t, b) >= g.velocity(t, m) => Some(b),
                _ => Some(m),
            });
        if let Some(m) = loudest {
            taps.set_tap(t, g.offset(t, m));
        }
    }
    taps
}

/// Builds a tap track from arbitrary onsets (any pitch), quantized as in
/// [`crate::representation::quantize`]. Multiple taps on one step keep
/// the loudest.
pub fn taps_from_notes(notes: &[TimedNote], tempo_bpm: f64, steps: usize) -> TapTensor {
    let mut taps = TapTensor::empty(steps, tempo_bpm);
    let mut best = vec![f64::NEG_INFINITY; steps];
    let step = step_seconds(tempo_bpm);
    for n in notes {
        let (t, offset) = nearest_step(n.onset_seconds / step);
        if t < 0 || t >= steps as i64 {
            continue;
        }
        let t = t as usize;
        if n.velocity > best[t] {
            best[t] = n.velocity;
            taps.set_tap(t, offset);
        }
    }
    taps
}
