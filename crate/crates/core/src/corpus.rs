//! Persisted corpora: a flat binary file of windows plus a comma-separated
//! manifest describing where each window came from.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic "GRVC" | version u8 | window count u32
//! per window: tempo f64 | T u32 | M u32
//!             | H: T rows of ceil(M/8) bytes, bit m%8 of byte m/8
//!             | V: T*M f32 | O: T*M f32   (row-major)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::representation::{clamp_offset, GrooveTensor, NUM_INSTRUMENTS};

pub const CORPUS_MAGIC: &[u8; 4] = b"GRVC";
pub const CORPUS_VERSION: u8 = 1;

pub fn encode_corpus(windows: &[GrooveTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CORPUS_MAGIC);
    out.push(CORPUS_VERSION);
    out.extend_from_slice(&(windows.len() as u32).to_le_bytes());
    let row_bytes = NUM_INSTRUMENTS.div_ceil(8);
    for g in windows {
        out.extend_from_slice(&g.tempo_bpm().to_le_bytes());
        out.extend_from_slice(&(g.steps() as u32).to_le_bytes());
        out.extend_from_slice(&(NUM_INSTRUMENTS as u32).to_le_bytes());
        for t in 0..g.steps() {
            let mut row = vec![0u8; row_bytes];
            for m in 0..NUM_INSTRUMENTS {
                if g.hit(t, m) {
                    row[m / 8] |= 1 << (m % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        for &v in g.velocities() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &o in g.offsets() {
            out.extend_from_slice(&(o as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::CorpusFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_corpus(data: &[u8]) -> Result<Vec<GrooveTensor>> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(4)? != CORPUS_MAGIC {
        return Err(Error::CorpusFormat("bad magic".into()));
    }
    let version = c.take(1)?[0];
    if version != CORPUS_VERSION {
        return Err(Error::CorpusFormat(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut windows = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let tempo = c.f64()?;
        let steps = c.u32()? as usize;
        let m = c.u32()? as usize;
        if m != NUM_INSTRUMENTS || steps == 0 || steps > 1 << 16 {
            return Err(Error::CorpusFormat(format!("window {i}: bad shape {steps}x{m}")));
        }
        let row_bytes = m.div_ceil(8);
        let packed = c.take(steps * row_bytes)?;
        let hits: Vec<bool> = (0..steps * m)
            .map(|k| {
                let (t, j) = (k / m, k % m);
                packed[t * row_bytes + j / 8] & (1 << (j % 8)) != 0
            })
            .collect();
        let velocities = (0..steps * m).map(|_| c.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        // Offsets just below 0.5 round up to 0.5 in f32.
        let offsets = (0..steps * m).map(|_| c.f32().map(|o| clamp_offset(o.into()))).collect::<Result<Vec<_>>>()?;
        let g = GrooveTensor::from_parts(steps, tempo, hits, velocities, offsets)
            .map_err(|e| Error::CorpusFormat(format!("window {i}: {e}")))?;
        windows.push(g);
    }
    if c.pos != data.len() {
        return Err(Error::CorpusFormat(format!("{} trailing bytes", data.len() - c.pos)));
    }
    Ok(windows)
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// 80/10/10 assignment from a hash of the source name, so every window
    /// of a file lands in the same split.
    pub fn from_source_hash(source: &str) -> Split {
        let digest = Sha256::digest(source.as_bytes());
        let v = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        match v % 10 {
            0..=7 => Split::Train,
            8 => Split::Validation,
            _ => Split::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Provenance of one corpus window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub source: String,
    pub window: usize,
    pub split: Split,
    pub drummer: String,
    pub genre: String,
    pub tempo_bpm: f64,
}

pub fn write_manifest<W: Write>(rows: &[WindowMeta], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<WindowMeta>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::CorpusFormat(format!("manifest: {e}"))))
        .collect()
}

/// One row of a dataset metadata sheet, keyed by MIDI path. Columns other
/// than the recognized ones are kept verbatim in `extra`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceInfo {
    pub midi_filename: String,
    pub drummer: String,
    pub genre: String,
    pub split: Option<Split>,
    pub time_signature: Option<String>,
    pub extra: BTreeMap<String, String>,
}

/// Reads a metadata sheet such as the Groove MIDI Dataset's `info.csv`.
/// Recognized columns: `midi_filename`, `drummer`, `style` (or `genre`),
/// `split`, `time_signature`.
pub fn read_source_info<R: Read>(input: R) -> Result<BTreeMap<String, SourceInfo>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| Error::CorpusFormat(e.to_string()))?.clone();
    if !headers.iter().any(|h| h == "midi_filename") {
        return Err(Error::CorpusFormat("metadata sheet has no `midi_filename` column".into()));
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::CorpusFormat(e.to_string()))?;
        let mut info = SourceInfo::default();
        for (h, v) in headers.iter().zip(record.iter()) {
            match h {
                "midi_filename" => info.midi_filename = v.to_string(),
                "drummer" => info.drummer = v.to_string(),
                "style" | "genre" => info.genre = v.to_string(),
                "split" => info.split = v.parse().ok(),
                "time_signature" => info.time_signature = Some(v.to_string()),
                _ => {
                    info.extra.insert(h.to_string(), v.to_string());
                }
            }
        }
        out.insert(info.midi_filename.clone(), info);
    }
    Ok(out)
}

/// Windows and their provenance, kept in the same order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub windows: Vec<GrooveTensor>,
    pub meta: Vec<WindowMeta>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<GrooveTensor> {
        self.windows
            .iter()
            .zip(&self.meta)
            .filter(|(_, m)| m.split == split)
            .map(|(g, _)| g.clone())
            .collect()
    }

    /// Path of the manifest stored next to a corpus file.
    pub fn manifest_path(corpus_path: &Path) -> std::path::PathBuf {
        corpus_path.with_extension("csv")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_corpus(&self.windows))?;
        let f = std::fs::File::create(Self::manifest_path(path))?;
        write_manifest(&self.meta, std::io::BufWriter::new(f))
    }

    /// Loads a corpus; without a manifest every window is assigned to the
    /// training split.
    pub fn load(path: &Path) -> Result<Self> {
        let windows = decode_corpus(&std::fs::read(path)?)?;
        let manifest = Self::manifest_path(path);
        let meta = if manifest.exists() {
            let meta = read_manifest(std::fs::File::open(manifest)?)?;
            if meta.len() != windows.len() {
                return Err(Error::CorpusFormat(format!(
                    "manifest has {} rows for {} windows",
                    meta.len(),
                    windows.len()
                )));
            }
            meta
        } else {
            windows
                .iter()
                .enumerate()
                .map(|(i, g)| WindowMeta {
                    source: String::new(),
                    window: i,
                    split: Split::Train,
                    drummer: String::new(),
                    genre: String::new(),
                    tempo_bpm: g.tempo_bpm(),
                })
                .collect()
        };
        Ok(Self { windows, meta })
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&encode_corpus(&self.windows))
    }
}
