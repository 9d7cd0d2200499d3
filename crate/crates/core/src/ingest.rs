//! MIDI files to a windowed corpus: parse, keep 4/4, map pitches, slide
//! two-bar windows and quantize.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{Corpus, SourceInfo, Split, WindowMeta};
use crate::error::Result;
use crate::midi_io::{parse_smf_with_warnings, MidiSequence};
use crate::representation::{bar_count, timed_notes, windows_indexed, DrumCategoryMap, Window};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub bars: usize,
    pub hop_bars: usize,
    pub map: DrumCategoryMap,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { bars: 2, hop_bars: 1, map: DrumCategoryMap::gmd() }
    }
}

/// Raw bytes of one MIDI file, named by its path relative to the corpus root
/// with `/` separators.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub files: usize,
    pub ingested_files: usize,
    pub parse_errors: Vec<(String, String)>,
    pub parse_warnings: usize,
    pub not_four_four: usize,
    /// Files whose tempo changes; they are windowed at their initial tempo.
    pub tempo_changes: usize,
    pub unmapped_notes: usize,
    /// Counted per window, so a note outside one window may be counted once
    /// for each window that sees it.
    pub out_of_window_notes: usize,
    pub collisions: usize,
    pub empty_windows: usize,
    pub windows: usize,
}

/// Windows of one parsed performance and the number of empty windows dropped.
pub fn performance_windows(seq: &MidiSequence, opts: &IngestOptions) -> (Vec<Window>, usize, usize) {
    let tempo = seq.initial_tempo_bpm();
    let (notes, unmapped) = timed_notes(seq, &opts.map);
    let windows = windows_indexed(&notes, tempo, opts.bars, opts.hop_bars);
    let total = match bar_count(&notes, tempo) {
        0 => 0,
        bars => bars.saturating_sub(opts.bars) / opts.hop_bars + 1,
    };
    let empty = total - windows.len();
    (windows, empty, unmapped)
}

fn default_drummer(name: &str) -> String {
    name.split('/').next().filter(|_| name.contains('/')).unwrap_or("").to_string()
}

/// Builds a corpus from files, in order of file name then window index.
/// Metadata, when given, supplies drummer, genre and split; otherwise the
/// split comes from a hash of the file name.
pub fn ingest(files: &[SourceFile], info: Option<&BTreeMap<String, SourceInfo>>, opts: &IngestOptions) -> (Corpus, IngestReport) {
    let mut order: Vec<&SourceFile> = files.iter().collect();
    order.sort_by(|a, b| a.name.cmp(&b.name));
    let mut report = IngestReport { files: files.len(), ..IngestReport::default() };
    let mut corpus = Corpus::default();
    for file in order {
        let (seq, warnings) = match parse_smf_with_warnings(&file.bytes) {
            Ok(x) => x,
            Err(e) => {
                report.parse_errors.push((file.name.clone(), e.to_string()));
                continue;
            }
        };
        report.parse_warnings += warnings.len();
        let meta = info.and_then(|i| i.get(&file.name));
        let sheet_four_four = meta
            .and_then(|m| m.time_signature.as_deref())
            .is_none_or(|ts| matches!(ts.trim(), "4-4" | "4/4"));
        if !seq.is_four_four() || !sheet_four_four {
            report.not_four_four += 1;
            continue;
        }
        if !seq.has_constant_tempo() {
            report.tempo_changes += 1;
        }
        let (windows, empty, unmapped) = performance_windows(&seq, opts);
        report.ingested_files += 1;
        report.unmapped_notes += unmapped;
        report.empty_windows += empty;
        let split = meta.and_then(|m| m.split).unwrap_or_else(|| Split::from_source_hash(&file.name));
        let drummer = meta.map(|m| m.drummer.clone()).unwrap_or_else(|| default_drummer(&file.name));
        let genre = meta.map(|m| m.genre.clone()).unwrap_or_default();
        for w in windows {
            report.out_of_window_notes += w.stats.out_of_window;
            report.collisions += w.stats.collisions;
            corpus.meta.push(WindowMeta {
                source: file.name.clone(),
                window: w.index,
                split,
                drummer: drummer.clone(),
                genre: genre.clone(),
                tempo_bpm: w.tensor.tempo_bpm(),
            });
            corpus.windows.push(w.tensor);
        }
    }
    report.windows = corpus.len();
    (corpus, report)
}

/// Reads every `.mid`/`.midi` file under `root`, named relative to it.
pub fn read_midi_dir(root: &std::path::Path) -> Result<Vec<SourceFile>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
            {
                let rel = path.strip_prefix(root).unwrap_or(&path);
                let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push(SourceFile { name, bytes: std::fs::read(&path)? });
            }
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::encode_corpus;
    use crate::midi_io::{write_smf, NoteEvent, TimeSignatureEvent};

    fn file(name: &str, bars: u64, numerator: u8, skip_bar: Option<u64>) -> SourceFile {
        let mut seq = MidiSequence::new(480);
        seq.time_signature_events.push(TimeSignatureEvent { tick: 0, numerator, denominator: 4 });
        for bar in 0..bars {
            if Some(bar) == skip_bar {
                continue;
            }
            for beat in 0..4 {
                let tick = bar * 1920 + beat * 480;
                seq.notes.push(NoteEvent { tick, pitch: 36, velocity: 100, channel: 9 });
                seq.notes.push(NoteEvent { tick: tick + 3, pitch: 42, velocity: 60, channel: 9 });
            }
        }
        seq.notes.push(NoteEvent { tick: 5, pitch: 20, velocity: 10, channel: 9 });
        SourceFile { name: name.into(), bytes: write_smf(&seq) }
    }

    #[test]
    fn four_bar_file_gives_three_windows() {
        let (corpus, report) = ingest(&[file("d1/a.mid", 4, 4, None)], None, &IngestOptions::default());
        assert_eq!(corpus.len(), 3);
        assert_eq!(report.windows, 3);
        assert_eq!(report.unmapped_notes, 1);
        assert_eq!(corpus.meta.iter().map(|m| m.window).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(corpus.meta[0].drummer, "d1");
        assert_eq!(corpus.windows[0].steps(), 32);
        assert!(corpus.windows.iter().all(|g| g.hit_count() == 16));
    }

    #[test]
    fn three_four_is_excluded_and_empty_windows_counted() {
        let files = [file("b.mid", 4, 3, None), file("a.mid", 5, 4, Some(1)), file("c.mid", 1, 4, None)];
        let (corpus, report) = ingest(&files, None, &IngestOptions::default());
        assert_eq!(report.not_four_four, 1);
        assert_eq!(report.ingested_files, 2);
        // a.mid: 5 bars -> 4 windows, none empty since each spans 2 bars.
        // c.mid: shorter than a window -> one padded window.
        assert_eq!(corpus.len(), 5);
        assert_eq!(corpus.meta[4].source, "c.mid");
        let (_, gap) = ingest(&[file("g.mid", 6, 4, None)], None, &IngestOptions { bars: 1, ..IngestOptions::default() });
        assert_eq!(gap.windows, 6);
        let mut sparse = file("h.mid", 6, 4, Some(2));
        sparse.name = "h.mid".into();
        let (_, gap) = ingest(&[sparse], None, &IngestOptions { bars: 1, ..IngestOptions::default() });
        assert_eq!((gap.windows, gap.empty_windows), (5, 1));
    }

    #[test]
    fn ingest_is_idempotent_and_order_independent() {
        let files = vec![file("x/2.mid", 3, 4, None), file("x/1.mid", 4, 4, None)];
        let mut reversed = files.clone();
        reversed.reverse();
        let (a, _) = ingest(&files, None, &IngestOptions::default());
        let (b, _) = ingest(&reversed, None, &IngestOptions::default());
        assert_eq!(encode_corpus(&a.windows), encode_corpus(&b.windows));
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn metadata_sets_split_and_filters_signature() {
        let mut info = BTreeMap::new();
        info.insert(
            "a.mid".to_string(),
            SourceInfo { midi_filename: "a.mid".into(), drummer: "drummer7".into(), genre: "jazz".into(), split: Some(Split::Test), ..Default::default() },
        );
        info.insert(
            "b.mid".to_string(),
            SourceInfo { midi_filename: "b.mid".into(), time_signature: Some("6-8".into()), ..Default::default() },
        );
        let (corpus, report) = ingest(&[file("a.mid", 2, 4, None), file("b.mid", 2, 4, None)], Some(&info), &IngestOptions::default());
        assert_eq!(report.not_four_four, 1);
        assert!(corpus.meta.iter().all(|m| m.split == Split::Test && m.genre == "jazz" && m.drummer == "drummer7"));
    }

    #[test]
    fn parse_errors_are_skipped() {
        let bad = SourceFile { name: "bad.mid".into(), bytes: b"nope".to_vec() };
        let (corpus, report) = ingest(&[bad, file("ok.mid", 2, 4, None)], None, &IngestOptions::default());
        assert_eq!(report.parse_errors.len(), 1);
        assert_eq!(corpus.len(), 1);
    }
}
