//! MIDI files in and out of model-sized windows.
//!
//! Inputs longer than one window are cut into consecutive, non-overlapping
//! windows; each is processed on its own and the results are laid end to end.

use std::path::Path;

use groove::midi_io::{parse_smf, write_smf, MidiSequence};
use groove::representation::{nearest_step, quantize, step_seconds, timed_notes, to_midi, velocity_to_unit, DrumCategoryMap, DEFAULT_PPQ};
use groove::transforms::taps_from_notes;
use groove::{DrumCategory, GrooveTensor, TapTensor, TimedNote, NUM_INSTRUMENTS};

use crate::failure::{at_path, Failure};

pub struct Performance {
    pub notes: Vec<TimedNote>,
    pub tempo_bpm: f64,
    pub unmapped: usize,
}

pub fn read_midi(path: &Path) -> Result<MidiSequence, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    at_path(parse_smf(&bytes), path)
}

/// Drum notes mapped to categories.
pub fn drum_performance(seq: &MidiSequence) -> Performance {
    let (notes, unmapped) = timed_notes(seq, &DrumCategoryMap::gmd());
    Performance { notes, tempo_bpm: seq.initial_tempo_bpm(), unmapped }
}

/// Every note of any pitch, as a tap.
pub fn tap_performance(seq: &MidiSequence) -> Performance {
    let notes = seq
        .notes
        .iter()
        .map(|n| TimedNote {
            onset_seconds: seq.tick_to_seconds(n.tick),
            category: DrumCategory::Kick,
            velocity: velocity_to_unit(n.velocity),
            source_pitch: n.pitch,
        })
        .collect();
    Performance { notes, tempo_bpm: seq.initial_tempo_bpm(), unmapped: 0 }
}

/// Notes of each `steps`-long window, shifted so the window starts at 0.
fn segments(perf: &Performance, steps: usize) -> Vec<Vec<TimedNote>> {
    let step = step_seconds(perf.tempo_bpm);
    let last = perf.notes.iter().map(|n| nearest_step(n.onset_seconds / step).0.max(0) as usize).max();
    let count = last.map_or(1, |l| l / steps + 1);
    (0..count)
        .map(|i| {
            let start = (i * steps) as f64 * step;
            perf.notes.iter().map(|n| TimedNote { onset_seconds: n.onset_seconds - start, ..*n }).collect()
        })
        .collect()
}

pub fn drum_windows(perf: &Performance, steps: usize) -> Vec<GrooveTensor> {
    segments(perf, steps).iter().map(|notes| quantize(notes, perf.tempo_bpm, steps).0).collect()
}

pub fn tap_windows(perf: &Performance, steps: usize) -> Vec<TapTensor> {
    segments(perf, steps).iter().map(|notes| taps_from_notes(notes, perf.tempo_bpm, steps)).collect()
}

/// Lays windows end to end as one tensor.
pub fn concatenate(windows: &[GrooveTensor], tempo_bpm: f64) -> GrooveTensor {
    let total: usize = windows.iter().map(GrooveTensor::steps).sum();
    let mut out = GrooveTensor::empty(total, tempo_bpm);
    let mut base = 0;
    for w in windows {
        for (t, m) in w.hit_cells() {
            out.set_hit(base + t, m, w.velocity(t, m), w.offset(t, m));
        }
        base += w.steps();
    }
    out
}

pub fn write_performance(path: &Path, windows: &[GrooveTensor], tempo_bpm: f64) -> Result<usize, Failure> {
    let g = concatenate(windows, tempo_bpm);
    std::fs::write(path, write_smf(&to_midi(&g, DEFAULT_PPQ))).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(g.hit_count())
}

pub fn cells_changed(before: &GrooveTensor, after: &GrooveTensor) -> [usize; NUM_INSTRUMENTS] {
    let mut changed = [0; NUM_INSTRUMENTS];
    for t in 0..before.steps() {
        for (m, c) in changed.iter_mut().enumerate() {
            if before.hit(t, m) != after.hit(t, m) {
                *c += 1;
            }
        }
    }
    changed
}
