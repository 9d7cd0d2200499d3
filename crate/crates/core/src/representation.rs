//! The groove representation: hits, velocities and microtiming offsets on a
//! 16th-note grid of `T` steps by 9 drum categories.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::midi_io::{MidiSequence, NoteEvent, TempoEvent, TimeSignatureEvent};

pub const NUM_INSTRUMENTS: usize = 9;
pub const STEPS_PER_BAR: usize = 16;
pub const DEFAULT_STEPS: usize = 32;
/// MIDI channel used when rendering drums (channel 10, zero-based).
pub const DRUM_CHANNEL: u8 = 9;
pub const DEFAULT_PPQ: u16 = 480;

/// The nine canonical drum categories, in tensor column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DrumCategory {
    Kick,
    Snare,
    ClosedHiHat,
    OpenHiHat,
    HighFloorTom,
    LowMidTom,
    HighTom,
    Crash,
    Ride,
}

impl DrumCategory {
    pub const ALL: [DrumCategory; NUM_INSTRUMENTS] = [
        DrumCategory::Kick,
        DrumCategory::Snare,
        DrumCategory::ClosedHiHat,
        DrumCategory::OpenHiHat,
        DrumCategory::HighFloorTom,
        DrumCategory::LowMidTom,
        DrumCategory::HighTom,
        DrumCategory::Crash,
        DrumCategory::Ride,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Pitch used when rendering this category back to MIDI.
    pub fn canonical_pitch(self) -> u8 {
        match self {
            DrumCategory::Kick => 36,
            DrumCategory::Snare => 38,
            DrumCategory::ClosedHiHat => 42,
            DrumCategory::OpenHiHat => 46,
            DrumCategory::HighFloorTom => 43,
            DrumCategory::LowMidTom => 47,
            DrumCategory::HighTom => 50,
            DrumCategory::Crash => 49,
            DrumCategory::Ride => 51,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DrumCategory::Kick => "kick",
            DrumCategory::Snare => "snare",
            DrumCategory::ClosedHiHat => "closed-hihat",
            DrumCategory::OpenHiHat => "open-hihat",
            DrumCategory::HighFloorTom => "high-floor-tom",
            DrumCategory::LowMidTom => "low-mid-tom",
            DrumCategory::HighTom => "high-tom",
            DrumCategory::Crash => "crash",
            DrumCategory::Ride => "ride",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }
}

impl fmt::Display for DrumCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps input pitches (Roland TD-11 and General MIDI) to drum categories.
#[derive(Debug, Clone)]
pub struct DrumCategoryMap {
    table: [Option<DrumCategory>; 128],
}

impl DrumCategoryMap {
    /// The 22-pitch mapping used for the Groove MIDI Dataset.
    pub fn gmd() -> Self {
        use DrumCategory::*;
        let entries: [(u8, DrumCategory); 22] = [
            (36, Kick),
            (38, Snare),
            (40, Snare),
            (37, Snare),
            (48, HighTom),
            (50, HighTom),
            (45, LowMidTom),
            (47, LowMidTom),
            (43, HighFloorTom),
            (58, HighFloorTom),
            (46, OpenHiHat),
            (26, OpenHiHat),
            (42, ClosedHiHat),
            (22, ClosedHiHat),
            (44, ClosedHiHat),
            (49, Crash),
            (55, Crash),
            (57, Crash),
            (52, Crash),
            (51, Ride),
            (59, Ride),
            (53, Ride),
        ];
        let mut table = [None; 128];
        for (pitch, cat) in entries {
            table[pitch as usize] = Some(cat);
        }
        Self { table }
    }

    pub fn map(&self, pitch: u8) -> Option<DrumCategory> {
        self.table.get(pitch as usize).copied().flatten()
    }

    pub fn mapped_pitches(&self) -> impl Iterator<Item = (u8, DrumCategory)> + '_ {
        self.table
            .iter()
            .enumerate()
            .filter_map(|(p, c)| c.map(|c| (p as u8, c)))
    }
}

impl Default for DrumCategoryMap {
    fn default() -> Self {
        Self::gmd()
    }
}

/// Looks a pitch up in the standard mapping; `None` means unmapped.
pub fn map_pitch(pitch: u8) -> Option<DrumCategory> {
    DrumCategoryMap::gmd().map(pitch)
}

pub fn velocity_to_unit(velocity: u8) -> f64 {
    velocity.min(127) as f64 / 127.0
}

pub fn unit_to_velocity(unit: f64) -> u8 {
    (unit.clamp(0.0, 1.0) * 127.0).round() as u8
}

/// Largest representable offset (the range is half-open at 0.5).
pub const MAX_OFFSET: f64 = 0.499_999_999_999_999_94;

/// Clamps an offset into `[-0.5, 0.5)`.
pub fn clamp_offset(offset: f64) -> f64 {
    if offset.is_nan() {
        0.0
    } else {
        offset.clamp(-0.5, MAX_OFFSET)
    }
}

/// Hits, velocities and offsets over a `steps x 9` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrooveTensor {
    steps: usize,
    tempo_bpm: f64,
    hits: Vec<bool>,
    velocities: Vec<f64>,
    offsets: Vec<f64>,
}

impl GrooveTensor {
    /// An empty tensor. `steps` is normally a whole number of bars
    /// (a multiple of 16); smaller grids are accepted for toy models.
    pub fn empty(steps: usize, tempo_bpm: f64) -> Self {
        assert!(steps > 0, "a groove tensor needs at least one step");
        assert!(tempo_bpm > 0.0 && tempo_bpm.is_finite(), "tempo must be positive");
        let n = steps * NUM_INSTRUMENTS;
        Self {
            steps,
            tempo_bpm,
            hits: vec![false; n],
            velocities: vec![0.0; n],
            offsets: vec![0.0; n],
        }
    }

    /// Builds a tensor from row-major slices, checking every invariant.
    pub fn from_parts(
        steps: usize,
        tempo_bpm: f64,
        hits: Vec<bool>,
        velocities: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        let n = steps * NUM_INSTRUMENTS;
        if steps == 0 || hits.len() != n || velocities.len() != n || offsets.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{steps}x{NUM_INSTRUMENTS} (non-empty)"),
                found: format!("{}/{}/{}", hits.len(), velocities.len(), offsets.len()),
            });
        }
        if !(tempo_bpm > 0.0 && tempo_bpm.is_finite()) {
            return Err(Error::InvalidArgument(format!("tempo {tempo_bpm} must be positive")));
        }
        let g = Self { steps, tempo_bpm, hits, velocities, offsets };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.hits.len() {
            let (v, o) = (self.velocities[i], self.offsets[i]);
            if !self.hits[i] && (v != 0.0 || o != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cell {i}: velocity/offset set where there is no hit"
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("cell {i}: velocity {v} outside [0,1]")));
            }
            if !(-0.5..0.5).contains(&o) {
                return Err(Error::InvalidArgument(format!("cell {i}: offset {o} outside [-0.5,0.5)")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn instruments(&self) -> usize {
        NUM_INSTRUMENTS
    }

    pub fn tempo_bpm(&self) -> f64 {
        self.tempo_bpm
    }

    pub fn set_tempo_bpm(&mut self, tempo_bpm: f64) {
        assert!(tempo_bpm > 0.0 && tempo_bpm.is_finite());
        self.tempo_bpm = tempo_bpm;
    }

    /// Duration of one 16th note in seconds.
    pub fn step_seconds(&self) -> f64 {
        step_seconds(self.tempo_bpm)
    }

    #[inline]
    fn idx(&self, t: usize, m: usize) -> usize {
        debug_assert!(t < self.steps && m < NUM_INSTRUMENTS);
        t * NUM_INSTRUMENTS + m
    }

    pub fn hit(&self, t: usize, m: usize) -> bool {
        self.hits[self.idx(t, m)]
    }

    pub fn velocity(&self, t: usize, m: usize) -> f64 {
        self.velocities[self.idx(t, m)]
    }

    pub fn offset(&self, t: usize, m: usize) -> f64 {
        self.offsets[self.idx(t, m)]
    }

    /// Places a hit, clamping velocity into `[0,1]` and offset into `[-0.5, 0.5)`.
    pub fn set_hit(&mut self, t: usize, m: usize, velocity: f64, offset: f64) {
        let i = self.idx(t, m);
        self.hits[i] = true;
        self.velocities[i] = if velocity.is_nan() { 0.0 } else { velocity.clamp(0.0, 1.0) };
        self.offsets[i] = clamp_offset(offset);
    }

    pub fn clear(&mut self, t: usize, m: usize) {
        let i = self.idx(t, m);
        self.hits[i] = false;
        self.velocities[i] = 0.0;
        self.offsets[i] = 0.0;
    }

    pub fn clear_instrument(&mut self, m: usize) {
        for t in 0..self.steps {
            self.clear(t, m);
        }
    }

    pub fn hits(&self) -> &[bool] {
        &self.hits
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|&&h| h).count()
    }

    pub fn instrument_hit_count(&self, m: usize) -> usize {
        (0..self.steps).filter(|&t| self.hit(t, m)).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.hits.iter().any(|&h| h)
    }

    /// Iterates over `(t, m)` of every hit in row-major order.
    pub fn hit_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.hits
            .iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(i, _)| (i / NUM_INSTRUMENTS, i % NUM_INSTRUMENTS))
    }

    /// The hit matrix as 0/1 reals, row-major.
    pub fn hits_f64(&self) -> Vec<f64> {
        self.hits.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect()
    }

    /// Copies the hit pattern with velocities and offsets removed.
    pub fn hits_only(&self) -> GrooveTensor {
        let mut g = GrooveTensor::empty(self.steps, self.tempo_bpm);
        g.hits.copy_from_slice(&self.hits);
        g
    }
}

pub fn step_seconds(tempo_bpm: f64) -> f64 {
    60.0 / (tempo_bpm * 4.0)
}

/// A note onset in absolute time, already mapped to a category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedNote {
    pub onset_seconds: f64,
    pub category: DrumCategory,
    pub velocity: f64,
    /// Original MIDI pitch; breaks velocity ties during quantization.
    pub source_pitch: u8,
}

/// Counts of notes discarded while building a tensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuantizeStats {
    /// Notes whose nearest step fell outside `[0, T)`.
    pub out_of_window: usize,
    /// Notes that lost a same-step, same-category collision.
    pub collisions: usize,
}

/// Splits a position measured in steps into the nearest step and a
/// fractional offset in `[-0.5, 0.5)`. Exact midpoints go to the later step.
pub fn nearest_step(position: f64) -> (i64, f64) {
    let mut step = (position + 0.5).floor();
    let mut offset = position - step;
    // Guard against rounding in `position + 0.5`.
    if offset < -0.5 {
        step -= 1.0;
        offset += 1.0;
    } else if offset >= 0.5 {
        step += 1.0;
        offset -= 1.0;
    }
    (step as i64, clamp_offset(offset))
}

/// Snaps notes onto a `steps`-long grid at a constant tempo; onset 0 is the
/// first step. Same-step collisions within a category keep the loudest note,
/// then the earliest, then the lowest source pitch.
pub fn quantize(notes: &[TimedNote], tempo_bpm: f64, steps: usize) -> (GrooveTensor, QuantizeStats) {
    let mut g = GrooveTensor::empty(steps, tempo_bpm);
    let mut stats = QuantizeStats::default();
    let step = step_seconds(tempo_bpm);
    let mut occupant: Vec<Option<(f64, u8)>> = vec![None; steps * NUM_INSTRUMENTS];
    for note in notes {
        let (t, offset) = nearest_step(note.onset_seconds / step);
        if t < 0 || t >= steps as i64 {
            stats.out_of_window += 1;
            continue;
        }
        let t = t as usize;
        let m = note.category.index();
        let i = g.idx(t, m);
        let velocity = note.velocity.clamp(0.0, 1.0);
        let wins = match occupant[i] {
            None => true,
            Some((onset, pitch)) => {
                stats.collisions += 1;
                let current = g.velocities[i];
                velocity > current
                    || (velocity == current
                        && (note.onset_seconds < onset
                            || (note.onset_seconds == onset && note.source_pitch < pitch)))
            }
        };
        if wins {
            occupant[i] = Some((note.onset_seconds, note.source_pitch));
            g.set_hit(t, m, velocity, offset);
        }
    }
    (g, stats)
}

/// Converts parsed MIDI into timed notes, dropping unmapped pitches.
/// Returns the notes and the number of unmapped notes.
pub fn timed_notes(seq: &MidiSequence, map: &DrumCategoryMap) -> (Vec<TimedNote>, usize) {
    let mut unmapped = 0;
    let mut out = Vec::with_capacity(seq.notes.len());
    for n in &seq.notes {
        match map.map(n.pitch) {
            Some(category) => out.push(TimedNote {
                onset_seconds: seq.tick_to_seconds(n.tick),
                category,
                velocity: velocity_to_unit(n.velocity),
                source_pitch: n.pitch,
            }),
            None => unmapped += 1,
        }
    }
    out.sort_by(|a, b| a.onset_seconds.total_cmp(&b.onset_seconds));
    (out, unmapped)
}

/// Renders a tensor as a single-track MIDI sequence at `ppq` resolution.
///
/// Hits become notes at `(t + offset)` steps, using canonical pitches.
/// Onsets before the start of the sequence are clamped to tick 0.
pub fn to_midi(g: &GrooveTensor, ppq: u16) -> MidiSequence {
    let us_per_quarter = (60_000_000.0 / g.tempo_bpm()).round() as u32;
    let ticks_per_step = ppq as f64 / 4.0;
    let mut notes: Vec<NoteEvent> = g
        .hit_cells()
        .map(|(t, m)| {
            let position = (t as f64 + g.offset(t, m)) * ticks_per_step;
            NoteEvent {
                tick: position.round().max(0.0) as u64,
                pitch: DrumCategory::ALL[m].canonical_pitch(),
                velocity: unit_to_velocity(g.velocity(t, m)).max(1),
                channel: DRUM_CHANNEL,
            }
        })
        .collect();
    notes.sort_by_key(|n| (n.tick, n.channel, n.pitch));
    notes.dedup_by_key(|n| (n.tick, n.channel, n.pitch));
    MidiSequence {
        ppq,
        tempo_events: vec![TempoEvent { tick: 0, us_per_quarter }],
        time_signature_events: vec![TimeSignatureEvent { tick: 0, numerator: 4, denominator: 4 }],
        notes,
    }
}

/// Number of whole bars spanned by a performance.
pub fn bar_count(notes: &[TimedNote], tempo_bpm: f64) -> usize {
    let step = step_seconds(tempo_bpm);
    notes
        .iter()
        .map(|n| nearest_step(n.onset_seconds / step).0)
        .max()
        .map(|last| (last.max(0) as usize) / STEPS_PER_BAR + 1)
        .unwrap_or(0)
}

/// A window together with its position in the source performance.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub tensor: GrooveTensor,
    pub stats: QuantizeStats,
}

/// Slides a `bars`-long window over a performance with a hop of `hop_bars`,
/// discarding windows without hits. Performances shorter than one window
/// produce a single zero-padded window.
pub fn windows_indexed(notes: &[TimedNote], tempo_bpm: f64, bars: usize, hop_bars: usize) -> Vec<Window> {
    assert!(bars >= 1 && hop_bars >= 1);
    let total_bars = bar_count(notes, tempo_bpm);
    if total_bars == 0 {
        return Vec::new();
    }
    let count = total_bars.saturating_sub(bars) / hop_bars + 1;
    let steps = bars * STEPS_PER_BAR;
    let step = step_seconds(tempo_bpm);
    let mut sorted: Vec<TimedNote> = notes.to_vec();
    sorted.sort_by(|a, b| a.onset_seconds.total_cmp(&b.onset_seconds));
    let mut out = Vec::new();
    for index in 0..count {
        let start = (index * hop_bars * STEPS_PER_BAR) as f64 * step;
        let lo = sorted.partition_point(|n| n.onset_seconds < start - 0.5 * step);
        let hi = sorted.partition_point(|n| n.onset_seconds < start + (steps as f64 - 0.5) * step);
        let local: Vec<TimedNote> = sorted[lo..hi]
            .iter()
            .map(|n| TimedNote { onset_seconds: n.onset_seconds - start, ..*n })
            .collect();
        let (tensor, stats) = quantize(&local, tempo_bpm, steps);
        if !tensor.is_empty() {
            out.push(Window { index, tensor, stats });
        }
    }
    out
}

pub fn windows(notes: &[TimedNote], tempo_bpm: f64, bars: usize, hop_bars: usize) -> Vec<GrooveTensor> {
    windows_indexed(notes, tempo_bpm, bars, hop_bars)
        .into_iter()
        .map(|w| w.tensor)
        .collect()
}
