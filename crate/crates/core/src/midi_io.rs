//! Standard MIDI File reading and writing.
//!
//! Only note onsets are kept: a note-on and its matching note-off collapse
//! into a single [`NoteEvent`] carrying the onset tick and onset velocity.
//! Tracks of a format 1 file are merged into one stream ordered by tick.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// Tempo assumed when a file carries no tempo meta event (120 BPM).
pub const DEFAULT_TEMPO_US: u32 = 500_000;

/// A note onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub tick: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoEvent {
    pub tick: u64,
    pub us_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignatureEvent {
    pub tick: u64,
    pub numerator: u8,
    /// Actual denominator (4 for x/4), not the power-of-two exponent stored on disk.
    pub denominator: u8,
}

/// Parsed SMF content.
///
/// Notes are kept in canonical order `(tick, channel, pitch)`; no two notes
/// share that key.
#[derive(Debug, Clone, PartialEq)]
pub struct MidiSequence {
    pub ppq: u16,
    pub tempo_events: Vec<TempoEvent>,
    pub time_signature_events: Vec<TimeSignatureEvent>,
    pub notes: Vec<NoteEvent>,
}

/// Non-fatal problems found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// A note-on never received a matching note-off; the note was dropped.
    UnpairedNoteOn { tick: u64, channel: u8, pitch: u8 },
    /// A note-off arrived with no open note to close.
    OrphanNoteOff { tick: u64, channel: u8, pitch: u8 },
    /// A second note-on for the same pitch and channel at the same tick; the louder was kept.
    DuplicateOnset { tick: u64, channel: u8, pitch: u8 },
}

impl MidiSequence {
    pub fn new(ppq: u16) -> Self {
        Self {
            ppq,
            tempo_events: vec![TempoEvent { tick: 0, us_per_quarter: DEFAULT_TEMPO_US }],
            time_signature_events: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Tempo in effect at tick 0, in beats per minute.
    pub fn initial_tempo_bpm(&self) -> f64 {
        let us = match self.tempo_events.first() {
            Some(t) if t.tick == 0 => t.us_per_quarter,
            _ => DEFAULT_TEMPO_US,
        };
        60_000_000.0 / us as f64
    }

    /// True when every time-signature event is 4/4. Files without any
    /// time-signature event are 4/4 by MIDI convention.
    pub fn is_four_four(&self) -> bool {
        self.time_signature_events
            .iter()
            .all(|ts| ts.numerator == 4 && ts.denominator == 4)
    }

    /// True when the tempo never changes.
    pub fn has_constant_tempo(&self) -> bool {
        self.tempo_events
            .windows(2)
            .all(|w| w[0].us_per_quarter == w[1].us_per_quarter)
    }

    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        tick_to_seconds(self, tick)
    }

    /// Sorts notes into canonical order.
    pub fn canonicalize(&mut self) {
        self.notes.sort_by_key(|n| (n.tick, n.channel, n.pitch));
        self.tempo_events.sort_by_key(|t| t.tick);
        self.time_signature_events.sort_by_key(|t| t.tick);
    }
}

/// Converts an absolute tick to seconds by accumulating over the tempo map.
pub fn tick_to_seconds(seq: &MidiSequence, tick: u64) -> f64 {
    let ppq = seq.ppq as f64;
    let mut seconds = 0.0;
    let mut seg_start = 0u64;
    let mut tempo = DEFAULT_TEMPO_US;
    for ev in &seq.tempo_events {
        if ev.tick >= tick {
            break;
        }
        seconds += (ev.tick - seg_start) as f64 / ppq * tempo as f64 / 1e6;
        seg_start = ev.tick;
        tempo = ev.us_per_quarter;
    }
    seconds + (tick - seg_start) as f64 / ppq * tempo as f64 / 1e6
}

/// Inverse of [`tick_to_seconds`], rounding to the nearest tick. Negative
/// times map to tick 0.
pub fn seconds_to_tick(seq: &MidiSequence, seconds: f64) -> u64 {
    if seconds <= 0.0 {
        return 0;
    }
    let ppq = seq.ppq as f64;
    let mut elapsed = 0.0;
    let mut seg_start = 0u64;
    let mut tempo = DEFAULT_TEMPO_US;
    for ev in &seq.tempo_events {
        let seg_len = (ev.tick - seg_start) as f64 / ppq * tempo as f64 / 1e6;
        if elapsed + seg_len > seconds {
            break;
        }
        elapsed += seg_len;
        seg_start = ev.tick;
        tempo = ev.us_per_quarter;
    }
    let ticks = (seconds - elapsed) * 1e6 / tempo as f64 * ppq;
    seg_start + ticks.round().max(0.0) as u64
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::TruncatedChunk(format!(
                "{what}: needed {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self, what: &str) -> Result<u32> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8(what)?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::TruncatedChunk(format!("{what}: variable-length quantity exceeds 4 bytes")))
    }
}

enum RawEvent {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    Tempo(u32),
    TimeSignature { numerator: u8, denominator: u8 },
}

pub fn parse_smf(bytes: &[u8]) -> Result<MidiSequence> {
    parse_smf_with_warnings(bytes).map(|(seq, _)| seq)
}

/// Parses a format 0 or 1 Standard MIDI File, also returning the
/// recoverable problems that were encountered.
pub fn parse_smf_with_warnings(bytes: &[u8]) -> Result<(MidiSequence, Vec<ParseWarning>)> {
    let mut r = Reader::new(bytes);
    if r.remaining() < 8 || &bytes[..4] != b"MThd" {
        return Err(Error::MalformedHeader("missing MThd magic".into()));
    }
    r.pos = 4;
    let header_len = r.u32_be("header length")? as usize;
    if header_len < 6 {
        return Err(Error::MalformedHeader(format!("header length {header_len} < 6")));
    }
    let header = r
        .take(header_len, "header chunk")
        .map_err(|_| Error::MalformedHeader("header chunk shorter than declared".into()))?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    match format {
        0 | 1 => {}
        2 => return Err(Error::UnsupportedFormat(2)),
        other => return Err(Error::MalformedHeader(format!("unknown format {other}"))),
    }
    if division & 0x8000 != 0 {
        return Err(Error::UnsupportedTimeDivision(division));
    }
    if division == 0 {
        return Err(Error::MalformedHeader("ticks per quarter note is zero".into()));
    }

    let mut events: Vec<(u64, usize, RawEvent)> = Vec::new();
    let mut seen_tracks = 0usize;
    while r.remaining() > 0 && seen_tracks < ntracks as usize {
        let id = r.take(4, "chunk id")?;
        let len = r.u32_be("chunk length")? as usize;
        let body = r.take(len, "chunk body")?;
        if id != b"MTrk" {
            continue;
        }
        parse_track(body, &mut events)?;
        seen_tracks += 1;
    }
    if seen_tracks < ntracks as usize {
        return Err(Error::TruncatedChunk(format!(
            "header declares {ntracks} tracks, found {seen_tracks}"
        )));
    }

    // Stable by tick; the sequence number keeps per-track order and puts
    // earlier tracks first at equal ticks.
    events.sort_by_key(|(tick, seq, _)| (*tick, *seq));

    let mut warnings = Vec::new();
    let mut tempo_events = Vec::new();
    let mut time_signature_events = Vec::new();
    let mut open: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
    let mut notes = Vec::new();

    for (tick, _, ev) in events {
        match ev {
            RawEvent::Tempo(us) => tempo_events.push(TempoEvent { tick, us_per_quarter: us }),
            RawEvent::TimeSignature { numerator, denominator } => {
                time_signature_events.push(TimeSignatureEvent { tick, numerator, denominator })
            }
            RawEvent::NoteOn { channel, pitch, velocity } => {
                let queue = open.entry((channel, pitch)).or_default();
                if let Some(last) = queue.back_mut() {
                    if last.0 == tick {
                        warnings.push(ParseWarning::DuplicateOnset { tick, channel, pitch });
                        last.1 = last.1.max(velocity);
                        continue;
                    }
                }
                queue.push_back((tick, velocity));
            }
            RawEvent::NoteOff { channel, pitch } => {
                match open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                    Some((on_tick, velocity)) => notes.push(NoteEvent {
                        tick: on_tick,
                        pitch,
                        velocity,
                        channel,
                    }),
                    None => warnings.push(ParseWarning::OrphanNoteOff { tick, channel, pitch }),
                }
            }
        }
    }
    for ((channel, pitch), queue) in open {
        for (tick, _) in queue {
            warnings.push(ParseWarning::UnpairedNoteOn { tick, channel, pitch });
        }
    }

    // Pairing is per (channel, pitch), so collisions on the canonical key
    // can only come from two closed notes at one tick; keep the louder.
    notes.sort_by_key(|n: &NoteEvent| (n.tick, n.channel, n.pitch, std::cmp::Reverse(n.velocity)));
    notes.dedup_by_key(|n| (n.tick, n.channel, n.pitch));

    if tempo_events.is_empty() {
        tempo_events.push(TempoEvent { tick: 0, us_per_quarter: DEFAULT_TEMPO_US });
    }

    Ok((
        MidiSequence { ppq: division, tempo_events, time_signature_events, notes },
        warnings,
    ))
}

fn parse_track(body: &[u8], out: &mut Vec<(u64, usize, RawEvent)>) -> Result<()> {
    let mut r = Reader::new(body);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    while r.remaining() > 0 {
        tick += r.vlq("delta time")? as u64;
        let first = r.u8("status byte")?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => {
                    return Err(Error::TruncatedChunk(format!(
                        "data byte {first:#04x} with no running status"
                    )))
                }
            }
        };
        let seq = out.len();
        match status {
            0x80..=0xef => {
                running = Some(status);
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let d1 = match first_data {
                    Some(d) => d,
                    None => r.u8("channel message data")?,
                };
                let d2 = if kind == 0xc0 || kind == 0xd0 { 0 } else { r.u8("channel message data")? };
                match kind {
                    0x90 if d2 > 0 => {
                        out.push((tick, seq, RawEvent::NoteOn { channel, pitch: d1 & 0x7f, velocity: d2 }))
                    }
                    0x90 | 0x80 => out.push((tick, seq, RawEvent::NoteOff { channel, pitch: d1 & 0x7f })),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                let len = r.vlq("sysex length")? as usize;
                r.take(len, "sysex data")?;
            }
            0xff => {
                let meta_type = r.u8("meta type")?;
                let len = r.vlq("meta length")? as usize;
                let data = r.take(len, "meta data")?;
                match meta_type {
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        out.push((tick, seq, RawEvent::Tempo(us)));
                    }
                    0x58 if len >= 2 => out.push((
                        tick,
                        seq,
                        RawEvent::TimeSignature {
                            numerator: data[0],
                            denominator: 1u8.checked_shl(data[1] as u32).unwrap_or(0),
                        },
                    )),
                    0x2f => break,
                    _ => {}
                }
            }
            other => {
                return Err(Error::TruncatedChunk(format!("unexpected status byte {other:#04x}")));
            }
        }
    }
    Ok(())
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7f) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serializes a sequence as a single-track format 0 file. Every event
/// carries an explicit status byte.
///
/// Note durations are not part of the model, so each note-off is placed
/// `ppq / 8` ticks after its onset, or earlier when the same pitch and
/// channel sound again sooner.
pub fn write_smf(seq: &MidiSequence) -> Vec<u8> {
    // (tick, order, bytes): metas first, then note-offs, then note-ons.
    let mut events: Vec<(u64, u8, Vec<u8>)> = Vec::new();
    for t in &seq.tempo_events {
        let us = t.us_per_quarter.to_be_bytes();
        events.push((t.tick, 0, vec![0xff, 0x51, 0x03, us[1], us[2], us[3]]));
    }
    for ts in &seq.time_signature_events {
        let exp = ts.denominator.max(1).trailing_zeros() as u8;
        events.push((ts.tick, 0, vec![0xff, 0x58, 0x04, ts.numerator, exp, 24, 8]));
    }

    let default_len = (seq.ppq as u64 / 8).max(1);
    let mut next_onset: BTreeMap<(u8, u8), Vec<u64>> = BTreeMap::new();
    for n in &seq.notes {
        next_onset.entry((n.channel, n.pitch)).or_default().push(n.tick);
    }
    for onsets in next_onset.values_mut() {
        onsets.sort_unstable();
    }
    for n in &seq.notes {
        let onsets = &next_onset[&(n.channel, n.pitch)];
        let idx = onsets.partition_point(|&t| t <= n.tick);
        let len = match onsets.get(idx) {
            Some(&next) => default_len.min(next - n.tick),
            None => default_len,
        };
        events.push((n.tick, 2, vec![0x90 | (n.channel & 0x0f), n.pitch & 0x7f, n.velocity.max(1)]));
        events.push((n.tick + len, 1, vec![0x80 | (n.channel & 0x0f), n.pitch & 0x7f, 0x40]));
    }
    events.sort_by_key(|(tick, order, _)| (*tick, *order));

    let mut track = Vec::new();
    let mut last = 0u64;
    for (tick, _, bytes) in &events {
        write_vlq(&mut track, (tick - last) as u32);
        track.extend_from_slice(bytes);
        last = *tick;
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&seq.ppq.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One track, tempo 500000, note-on 36/100 at tick 0, note-off at tick 96.
    fn minimal_file() -> Vec<u8> {
        vec![
            b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0, // ppq 480
            b'M', b'T', b'r', b'k', 0, 0, 0, 19, //
            0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // tempo 500000
            0x00, 0x99, 36, 100, // note on, channel 9
            0x60, 0x89, 36, 64, // delta 96, note off
            0x00, 0xff, 0x2f, 0x00,
        ]
    }

    #[test]
    fn parses_minimal_file() {
        let seq = parse_smf(&minimal_file()).unwrap();
        assert_eq!(seq.ppq, 480);
        assert_eq!(seq.tempo_events, vec![TempoEvent { tick: 0, us_per_quarter: 500_000 }]);
        assert_eq!(seq.notes, vec![NoteEvent { tick: 0, pitch: 36, velocity: 100, channel: 9 }]);
    }

    #[test]
    fn missing_tempo_defaults_to_120_bpm() {
        let bytes = vec![
            b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0, 96, //
            b'M', b'T', b'r', b'k', 0, 0, 0, 12, //
            0x00, 0x90, 38, 90, 0x10, 0x90, 38, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let seq = parse_smf(&bytes).unwrap();
        assert_eq!(seq.tempo_events, vec![TempoEvent { tick: 0, us_per_quarter: DEFAULT_TEMPO_US }]);
        assert!((seq.initial_tempo_bpm() - 120.0).abs() < 1e-12);
        assert_eq!(seq.notes.len(), 1);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(parse_smf(b"RIFF\0\0\0\x06\0\0\0\x01\0\x60"), Err(Error::MalformedHeader(_))));
        assert!(matches!(parse_smf(b""), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn rejects_format_two() {
        let bytes = [b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 2, 0, 1, 0, 96];
        assert_eq!(parse_smf(&bytes), Err(Error::UnsupportedFormat(2)));
    }

    #[test]
    fn truncated_track_is_reported() {
        let mut bytes = minimal_file();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(parse_smf(&bytes), Err(Error::TruncatedChunk(_))));
    }

    #[test]
    fn running_status_and_unpaired_notes() {
        let bytes = vec![
            b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0, 96, //
            b'M', b'T', b'r', b'k', 0, 0, 0, 14, //
            0x00, 0x99, 36, 100, // kick on
            0x00, 42, 80, // running status: hat on
            0x10, 36, 0, // running status: kick off (velocity 0)
            0x00, 0xff, 0x2f, 0x00,
        ];
        let (seq, warnings) = parse_smf_with_warnings(&bytes).unwrap();
        assert_eq!(seq.notes, vec![NoteEvent { tick: 0, pitch: 36, velocity: 100, channel: 9 }]);
        assert_eq!(warnings, vec![ParseWarning::UnpairedNoteOn { tick: 0, channel: 9, pitch: 42 }]);
    }

    #[test]
    fn simultaneous_same_pitch_keeps_loudest() {
        let bytes = vec![
            b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0, 96, //
            b'M', b'T', b'r', b'k', 0, 0, 0, 20, //
            0x00, 0x90, 38, 50, 0x00, 0x90, 38, 110, 0x10, 0x80, 38, 0, 0x00, 0x80, 38, 0, //
            0x00, 0xff, 0x2f, 0x00,
        ];
        let (seq, warnings) = parse_smf_with_warnings(&bytes).unwrap();
        assert_eq!(seq.notes, vec![NoteEvent { tick: 0, pitch: 38, velocity: 110, channel: 0 }]);
        assert!(warnings.contains(&ParseWarning::DuplicateOnset { tick: 0, channel: 0, pitch: 38 }));
    }

    #[test]
    fn format_one_tracks_are_merged() {
        // Build a format 1 file by hand: tempo track plus two note tracks.
        let mut bytes = vec![b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 1, 0, 3, 0, 96];
        let tempo_track = [0x00, 0xff, 0x51, 0x03, 0x03, 0xd0, 0x90, 0x00, 0xff, 0x2f, 0x00];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(tempo_track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&tempo_track);
        for (delta, pitch) in [(20u8, 38u8), (4, 42)] {
            let body = [delta, 0x99, pitch, 70, 0x05, 0x89, pitch, 0, 0x00, 0xff, 0x2f, 0x00];
            bytes.extend_from_slice(b"MTrk");
            bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
            bytes.extend_from_slice(&body);
        }
        let parsed = parse_smf(&bytes).unwrap();
        assert_eq!(parsed.tempo_events, vec![TempoEvent { tick: 0, us_per_quarter: 250_000 }]);
        let ticks: Vec<_> = parsed.notes.iter().map(|n| (n.tick, n.pitch)).collect();
        assert_eq!(ticks, vec![(4, 42), (20, 38)]);
    }

    #[test]
    fn round_trip_minimal_and_empty() {
        let seq = parse_smf(&minimal_file()).unwrap();
        assert_eq!(parse_smf(&write_smf(&seq)).unwrap(), seq);

        let empty = MidiSequence::new(480);
        let bytes = write_smf(&empty);
        let back = parse_smf(&bytes).unwrap();
        assert!(back.notes.is_empty());
        assert_eq!(back, empty);
    }

    #[test]
    fn time_signatures_round_trip() {
        let mut seq = MidiSequence::new(480);
        seq.time_signature_events = vec![
            TimeSignatureEvent { tick: 0, numerator: 3, denominator: 4 },
            TimeSignatureEvent { tick: 1440, numerator: 6, denominator: 8 },
        ];
        let back = parse_smf(&write_smf(&seq)).unwrap();
        assert_eq!(back.time_signature_events, seq.time_signature_events);
        assert!(!back.is_four_four());
        assert!(MidiSequence::new(480).is_four_four());
    }

    #[test]
    fn seconds_from_ticks() {
        let mut seq = MidiSequence::new(480);
        assert_eq!(seq.tick_to_seconds(0), 0.0);
        assert!((seq.tick_to_seconds(480) - 0.5).abs() < 1e-12);
        seq.tempo_events.push(TempoEvent { tick: 480, us_per_quarter: 250_000 });
        // 480 ticks at 0.5 s/quarter + 480 ticks at 0.25 s/quarter.
        assert!((seq.tick_to_seconds(960) - 0.75).abs() < 1e-12);
        assert_eq!(seconds_to_tick(&seq, 0.75), 960);
        assert_eq!(seconds_to_tick(&seq, 0.25), 240);
        assert_eq!(seconds_to_tick(&seq, -1.0), 0);
    }

    #[test]
    fn tempo_before_first_event_uses_default() {
        let mut seq = MidiSequence::new(100);
        seq.tempo_events = vec![TempoEvent { tick: 100, us_per_quarter: 1_000_000 }];
        assert!((seq.tick_to_seconds(100) - 0.5).abs() < 1e-12);
        assert!((seq.tick_to_seconds(200) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn vlq_encoding_matches_reference_values() {
        for (value, expected) in [
            (0u32, vec![0x00]),
            (0x40, vec![0x40]),
            (0x7f, vec![0x7f]),
            (0x80, vec![0x81, 0x00]),
            (0x2000, vec![0xc0, 0x00]),
            (0x1f_ffff, vec![0xff, 0xff, 0x7f]),
            (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f]),
        ] {
            let mut out = Vec::new();
            write_vlq(&mut out, value);
            assert_eq!(out, expected);
            assert_eq!(Reader::new(&out).vlq("test").unwrap(), value);
        }
    }
}
