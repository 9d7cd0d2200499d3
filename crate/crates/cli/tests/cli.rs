use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groove::midi_io::{parse_smf, write_smf, NoteEvent, TimeSignatureEvent};
use groove::representation::{quantize, timed_notes, DrumCategoryMap};
use groove::{MidiSequence, NUM_INSTRUMENTS};
use tempfile::TempDir;

fn groove(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groove")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = groove(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8")
}

fn code(args: &[&str]) -> i32 {
    groove(args).status.code().expect("exit code")
}

/// A 120 bpm groove: 16th hi-hats played late on eighths and early between,
/// kick and snare on the beats.
fn performance(bars: u64, numerator: u8, variation: u64) -> MidiSequence {
    let mut seq = MidiSequence::new(480);
    seq.time_signature_events.push(TimeSignatureEvent { tick: 0, numerator, denominator: 4 });
    for bar in 0..bars {
        for s in 0..16u64 {
            let tick = bar * 1920 + s * 120;
            let hat = if s % 2 == 0 { tick + 6 } else { tick - 9 };
            seq.notes.push(NoteEvent { tick: hat, pitch: 42, velocity: if s % 4 == 0 { 100 } else { 60 }, channel: 9 });
            if s == 0 || s == 8 || (s == 10 && (bar + variation) % 2 == 0) {
                seq.notes.push(NoteEvent { tick: tick + 3, pitch: 36, velocity: 110, channel: 9 });
            }
            if s == 4 || s == 12 {
                seq.notes.push(NoteEvent { tick, pitch: 38, velocity: 105, channel: 9 });
            }
        }
    }
    seq
}

fn write(path: &Path, seq: &MidiSequence) {
    std::fs::create_dir_all(path.parent().expect("parent")).expect("mkdir");
    std::fs::write(path, write_smf(seq)).expect("write");
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Four 4/4 files (three train, one test) and one 3/4 file.
    fn new() -> Self {
        let dir = TempDir::new().expect("tempdir");
        let data = dir.path().join("midi");
        for (i, name) in ["d1/a.mid", "d1/b.mid", "d2/c.mid", "d2/t.mid"].iter().enumerate() {
            write(&data.join(name), &performance(4, 4, i as u64));
        }
        write(&data.join("d2/waltz.mid"), &performance(4, 3, 0));
        let sheet = "drummer,style,midi_filename,time_signature,split\n\
                     drummer1,rock,d1/a.mid,4-4,train\n\
                     drummer1,rock,d1/b.mid,4-4,train\n\
                     drummer2,funk,d2/c.mid,4-4,train\n\
                     drummer2,funk,d2/t.mid,4-4,test\n\
                     drummer2,jazz,d2/waltz.mid,3-4,train\n";
        std::fs::write(data.join("info.csv"), sheet).expect("sheet");
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn corpus(&self) -> String {
        let corpus = self.path("corpus.grv");
        if !Path::new(&corpus).exists() {
            ok(&["ingest", &self.path("midi"), "--out", &corpus]);
        }
        corpus
    }

    fn train(&self, name: &str, extra: &[&str]) -> String {
        let checkpoint = self.path(name);
        let corpus = self.corpus();
        let mut args = vec!["train", "--corpus", &corpus, "--checkpoint", &checkpoint];
        args.extend_from_slice(extra);
        ok(&args);
        checkpoint
    }
}

fn read_tensor(path: &str, steps: usize) -> groove::GrooveTensor {
    let seq = parse_smf(&std::fs::read(path).expect("output")).expect("valid SMF");
    let (notes, _) = timed_notes(&seq, &DrumCategoryMap::gmd());
    quantize(&notes, seq.initial_tempo_bpm(), steps).0
}

#[test]
fn ingest_reports_counts_and_is_idempotent() {
    let f = Fixture::new();
    let report: serde_json::Value = serde_json::from_str(&ok(&["ingest", &f.path("midi"), "--out", &f.path("a.grv"), "--report", "json"])).unwrap();
    assert_eq!(report["not_four_four"], 1);
    assert_eq!(report["windows"], 12);
    assert_eq!(report["splits"]["test"], 3);
    ok(&["ingest", &f.path("midi"), "--out", &f.path("b.grv")]);
    assert_eq!(std::fs::read(f.path("a.grv")).unwrap(), std::fs::read(f.path("b.grv")).unwrap());
    assert_eq!(std::fs::read(f.path("a.csv")).unwrap(), std::fs::read(f.path("b.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--corpus", "x", "--checkpoint", "y", "--model", "nope"]), 1);
    std::fs::create_dir_all(f.path("empty")).unwrap();
    assert_eq!(code(&["ingest", &f.path("empty"), "--out", &f.path("e.grv")]), 2);
    assert_eq!(code(&["stats", "--corpus", &f.path("missing.grv")]), 2);
    assert_eq!(code(&["gradcheck", "--model", "mlp", "--dims", "2", "--tolerance", "0"]), 3);
    let corpus = f.corpus();
    assert_eq!(code(&["train", "--corpus", &corpus, "--checkpoint", &f.path("k.grvm"), "--model", "knn", "--task", "infill"]), 1);
}

#[test]
fn stats_show_late_eighths_and_early_sixteenths() {
    let f = Fixture::new();
    let stats: serde_json::Value = serde_json::from_str(&ok(&["stats", "--corpus", &f.corpus(), "--split", "all", "--report", "json"])).unwrap();
    assert!(stats["on_beat_mean"].as_f64().unwrap() > 0.0);
    assert!(stats["off_beat_mean"].as_f64().unwrap() < 0.0);
}

#[test]
fn humanize_keeps_the_score() {
    let f = Fixture::new();
    let input = f.path("midi/d2/t.mid");
    let input_score = read_tensor(&input, 64).hits().to_vec();
    for (name, model) in [("q.grvm", "quantized"), ("k.grvm", "knn"), ("l.grvm", "linear")] {
        let checkpoint = f.train(name, &["--model", model, "--k", "3"]);
        let out = f.path(&format!("{model}.mid"));
        ok(&["humanize", &input, "--checkpoint", &checkpoint, "--out", &out]);
        assert_eq!(read_tensor(&out, 64).hits(), &input_score[..], "{model}");
    }
}

#[test]
fn infill_touches_only_the_hi_hats() {
    let f = Fixture::new();
    let checkpoint = f.train("infill.grvm", &["--model", "seq2seq", "--task", "infill", "--dims", "4", "--steps", "3", "--batch", "4"]);
    let input = f.path("midi/d1/a.mid");
    let out = f.path("infilled.mid");
    ok(&["infill", &input, "--checkpoint", &checkpoint, "--out", &out, "--category", "hihat"]);
    let (before, after) = (read_tensor(&input, 64), read_tensor(&out, 64));
    for t in 0..64 {
        for m in (0..NUM_INSTRUMENTS).filter(|&m| m != 2 && m != 3) {
            assert_eq!(before.hit(t, m), after.hit(t, m), "step {t} voice {m}");
        }
    }
    assert_eq!(code(&["infill", &input, "--checkpoint", &checkpoint, "--out", &out, "--category", "kick"]), 1);
    assert_eq!(code(&["humanize", &input, "--checkpoint", &checkpoint, "--out", &out]), 1);
}

#[test]
fn tap2drum_renders_a_valid_performance() {
    let f = Fixture::new();
    let checkpoint = f.train("taps.grvm", &["--model", "seq2seq", "--task", "tap2drum", "--dims", "4", "--steps", "3"]);
    let mut taps = MidiSequence::new(96);
    for i in 0..8 {
        taps.notes.push(NoteEvent { tick: i * 48 + 2, pitch: 60, velocity: 90, channel: 0 });
    }
    let input = f.path("taps.mid");
    write(Path::new(&input), &taps);
    let out = f.path("drums.mid");
    ok(&["tap2drum", &input, "--checkpoint", &checkpoint, "--out", &out]);
    let g = read_tensor(&out, 32);
    assert!(g.validate().is_ok());
}

#[test]
fn runs_reproduce_from_their_record() {
    let f = Fixture::new();
    let first = f.train("s.grvm", &["--model", "seq2seq-vib", "--dims", "4", "--steps", "4", "--batch", "2", "--seed", "9"]);
    let record = PathBuf::from(&first).with_extension("json");
    let again = f.train("again.grvm", &["--from-record", &record.display().to_string()]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&again).unwrap());
    let corpus = f.corpus();
    let eval = |checkpoint: &str| {
        let out = ok(&["eval", "--corpus", &corpus, "--checkpoint", checkpoint, "--k", "3", "--resamples", "50", "--report", "json"]);
        let mut v: serde_json::Value = serde_json::from_str(&out).unwrap();
        v["checkpoint"] = serde_json::Value::Null;
        v
    };
    let report = eval(&first);
    assert_eq!(report, eval(&again));
    let models = report["models"].as_object().unwrap();
    for name in ["seq2seq-vib", "quantized", "linear", "knn-3"] {
        let mae = &models[name]["mae_ms"];
        assert!(mae["ci_low"].as_f64().unwrap() <= mae["value"].as_f64().unwrap(), "{name}");
    }
}

#[test]
fn gradcheck_passes_for_one_architecture() {
    let out = ok(&["gradcheck", "--model", "seq2seq", "--dims", "3", "--report", "json"]);
    let rows: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(rows[0]["pass"], true);
}
