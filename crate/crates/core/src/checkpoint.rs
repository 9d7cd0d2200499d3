//! Trained models on disk.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic "GRVM" | version u8 | family u8
//! header: steps u32 | task u8 | flags u8 (bit 0 bottleneck, bit 1 transfer)
//!         | encoder u32 | latent u32 | decoder u32 | hidden u32 | k u32
//!         | category count u8 | category indices u8... | trained steps u64
//! tensor count u32
//! per tensor: name length u16 | name (UTF-8) | rows u32 | cols u32
//!             | rows*cols f32, row-major
//! ```
//!
//! A JSON sidecar (same path, `.json` extension) records how the model was
//! produced.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{quantized_baseline, KnnIndex, LinearParams, TrainStats};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::neural::{LatentMode, Mat, Mlp, Seq2Seq, Seq2SeqDims, Task, TrainConfig};
use crate::representation::{clamp_offset, DrumCategory, GrooveTensor, NUM_INSTRUMENTS};
use crate::transforms::TapTensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GRVM";
pub const CHECKPOINT_VERSION: u8 = 1;
/// Neighbors averaged for groove-transfer embeddings.
pub const TRANSFER_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Quantized,
    Linear,
    Knn,
    Mlp,
    Seq2Seq,
    Seq2SeqVib,
    Transfer,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Quantized,
        Family::Linear,
        Family::Knn,
        Family::Mlp,
        Family::Seq2Seq,
        Family::Seq2SeqVib,
        Family::Transfer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Quantized => "quantized",
            Family::Linear => "linear",
            Family::Knn => "knn",
            Family::Mlp => "mlp",
            Family::Seq2Seq => "seq2seq",
            Family::Seq2SeqVib => "seq2seq-vib",
            Family::Transfer => "transfer",
        }
    }

    fn tag(self) -> u8 {
        Family::ALL.iter().position(|&f| f == self).expect("listed") as u8
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Family::Mlp | Family::Seq2Seq | Family::Seq2SeqVib | Family::Transfer)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model family `{s}`")))
    }
}

/// A trained model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Quantized(TrainStats),
    Linear(LinearParams),
    Knn { k: usize, train: Vec<GrooveTensor> },
    Mlp(Mlp),
    Seq2Seq(Seq2Seq),
    Transfer { model: Seq2Seq, train: Vec<GrooveTensor> },
}

fn unsupported(family: Family, task: Task) -> Error {
    Error::TaskMismatch { trained: format!("{family} (humanize)"), requested: task.to_string() }
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Quantized(_) => Family::Quantized,
            Model::Linear(_) => Family::Linear,
            Model::Knn { .. } => Family::Knn,
            Model::Mlp(_) => Family::Mlp,
            Model::Seq2Seq(m) if m.vib => Family::Seq2SeqVib,
            Model::Seq2Seq(_) => Family::Seq2Seq,
            Model::Transfer { .. } => Family::Transfer,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Seq2Seq(m) => m.task,
            _ => Task::Humanize,
        }
    }

    pub fn steps(&self) -> Option<usize> {
        match self {
            Model::Quantized(_) => None,
            Model::Linear(p) => Some(p.steps),
            Model::Knn { train, .. } => train.first().map(GrooveTensor::steps),
            Model::Mlp(m) => Some(m.steps),
            Model::Seq2Seq(m) | Model::Transfer { model: m, .. } => Some(m.steps),
        }
    }

    pub fn humanize(&self, score: &GrooveTensor) -> Result<GrooveTensor> {
        let score = score.hits_only();
        match self {
            Model::Quantized(stats) => Ok(quantized_baseline(&score, stats)),
            Model::Linear(p) => p.humanize(&score),
            Model::Knn { k, train } => KnnIndex::new(train).humanize(&score, *k),
            Model::Mlp(m) => m.humanize(&score),
            Model::Seq2Seq(m) => m.humanize(&score, LatentMode::Mean),
            Model::Transfer { model, train } => {
                model.groove_transfer_humanize(&score, &KnnIndex::new(train), TRANSFER_K.min(train.len()))
            }
        }
    }

    pub fn infill(&self, partial: &GrooveTensor) -> Result<GrooveTensor> {
        match self {
            Model::Seq2Seq(m) => m.infill(partial, LatentMode::Mean),
            _ => Err(unsupported(self.family(), Task::Infill)),
        }
    }

    pub fn tap2drum(&self, taps: &TapTensor) -> Result<GrooveTensor> {
        match self {
            Model::Seq2Seq(m) => m.tap2drum(taps, LatentMode::Mean),
            _ => Err(unsupported(self.family(), Task::Tap2Drum)),
        }
    }
}

/// How a checkpoint was produced; written as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub family: Family,
    pub task: Task,
    pub seed: u64,
    pub corpus_fingerprint: String,
    /// Corpus split trained on; `None` means every window.
    pub split: Option<Split>,
    pub train_windows: usize,
    pub config: Option<TrainConfig>,
    pub ridge: Option<f64>,
    pub k: Option<usize>,
    pub final_loss: Option<f64>,
    pub steps: Option<usize>,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

struct Header {
    steps: u32,
    task: Task,
    vib: bool,
    conditioned: bool,
    dims: Seq2SeqDims,
    hidden: u32,
    k: u32,
    categories: Vec<DrumCategory>,
    trained_steps: u64,
}

fn task_tag(t: Task) -> u8 {
    match t {
        Task::Humanize => 0,
        Task::Infill => 1,
        Task::Tap2Drum => 2,
    }
}

fn windows_to_tensors(train: &[GrooveTensor]) -> Vec<(String, Mat)> {
    let n = train.len();
    let cells = train.first().map_or(0, |g| g.steps() * NUM_INSTRUMENTS);
    vec![
        ("train.tempo".into(), Mat::from_fn(n, 1, |i, _| train[i].tempo_bpm())),
        ("train.hits".into(), Mat::from_fn(n, cells, |i, j| if train[i].hits()[j] { 1.0 } else { 0.0 })),
        ("train.velocities".into(), Mat::from_fn(n, cells, |i, j| train[i].velocities()[j])),
        ("train.offsets".into(), Mat::from_fn(n, cells, |i, j| train[i].offsets()[j])),
    ]
}

fn windows_from_tensors(tensors: &[(String, Mat)], steps: usize) -> Result<Vec<GrooveTensor>> {
    let find = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor `{name}`")))
    };
    let (tempo, hits, vel, off) = (find("train.tempo")?, find("train.hits")?, find("train.velocities")?, find("train.offsets")?);
    let cells = steps * NUM_INSTRUMENTS;
    if hits.ncols() != cells || vel.shape() != hits.shape() || off.shape() != hits.shape() || tempo.nrows() != hits.nrows() {
        return Err(Error::CheckpointFormat("training windows have inconsistent shapes".into()));
    }
    (0..hits.nrows())
        .map(|i| {
            GrooveTensor::from_parts(
                steps,
                tempo[(i, 0)],
                (0..cells).map(|j| hits[(i, j)] != 0.0).collect(),
                (0..cells).map(|j| vel[(i, j)]).collect(),
                (0..cells).map(|j| clamp_offset(off[(i, j)])).collect(),
            )
            .map_err(|e| Error::CheckpointFormat(format!("training window {i}: {e}")))
        })
        .collect()
}

fn header_and_tensors(model: &Model) -> (Header, Vec<(String, Mat)>) {
    let mut h = Header {
        steps: model.steps().unwrap_or(0) as u32,
        task: model.task(),
        vib: false,
        conditioned: false,
        dims: Seq2SeqDims::default(),
        hidden: 0,
        k: 0,
        categories: Vec::new(),
        trained_steps: 0,
    };
    let store_tensors = |s: &crate::neural::params::ParamStore| {
        s.iter().map(|(n, m)| (n.to_string(), m.clone())).collect::<Vec<_>>()
    };
    let tensors = match model {
        Model::Quantized(stats) => vec![("mean_velocity".into(), Mat::from_element(1, 1, stats.mean_velocity))],
        Model::Linear(p) => vec![
            ("velocity_weights".into(), p.velocity_weights.clone()),
            ("offset_weights".into(), p.offset_weights.clone()),
        ],
        Model::Knn { k, train } => {
            h.k = *k as u32;
            windows_to_tensors(train)
        }
        Model::Mlp(m) => {
            h.hidden = m.hidden as u32;
            h.trained_steps = m.trained_steps;
            store_tensors(&m.store)
        }
        Model::Seq2Seq(m) | Model::Transfer { model: m, .. } => {
            h.vib = m.vib;
            h.conditioned = m.conditioned;
            h.dims = m.dims;
            h.categories = m.infill_categories.clone();
            h.trained_steps = m.trained_steps;
            let mut t = store_tensors(&m.store);
            if let Model::Transfer { train, .. } = model {
                h.k = TRANSFER_K as u32;
                t.extend(windows_to_tensors(train));
            }
            t
        }
    };
    (h, tensors)
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let (h, tensors) = header_and_tensors(model);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(model.family().tag());
    out.extend_from_slice(&h.steps.to_le_bytes());
    out.push(task_tag(h.task));
    out.push(u8::from(h.vib) | (u8::from(h.conditioned) << 1));
    for d in [h.dims.encoder as u32, h.dims.latent as u32, h.dims.decoder as u32, h.hidden, h.k] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(h.categories.len() as u8);
    out.extend(h.categories.iter().map(|c| c.index() as u8));
    out.extend_from_slice(&h.trained_steps.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::CheckpointFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(data: &[u8]) -> Result<Model> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!("unsupported version {version}")));
    }
    let tag = r.u8()? as usize;
    let family = *Family::ALL.get(tag).ok_or_else(|| Error::CheckpointFormat(format!("unknown family tag {tag}")))?;
    let steps = r.u32()? as usize;
    let task = match r.u8()? {
        0 => Task::Humanize,
        1 => Task::Infill,
        2 => Task::Tap2Drum,
        t => return Err(Error::CheckpointFormat(format!("unknown task tag {t}"))),
    };
    let flags = r.u8()?;
    let dims = Seq2SeqDims { encoder: r.u32()? as usize, latent: r.u32()? as usize, decoder: r.u32()? as usize };
    let hidden = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n_categories = r.u8()? as usize;
    let categories = (0..n_categories)
        .map(|_| {
            let i = r.u8()? as usize;
            DrumCategory::from_index(i).ok_or_else(|| Error::CheckpointFormat(format!("bad category {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let trained_steps = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let bytes = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::CheckpointFormat("tensor too large".into()))?)?;
        let values: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
        tensors.push((name, Mat::from_row_slice(rows, cols, &values)));
    }
    if r.pos != data.len() {
        return Err(Error::CheckpointFormat(format!("{} trailing bytes", data.len() - r.pos)));
    }
    let bad = |e: String| Error::CheckpointFormat(e);
    let tensor = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor `{name}`")))
    };
    let seq2seq = |tensors: Vec<(String, Mat)>| -> Result<Seq2Seq> {
        let mut m = Seq2Seq::new(task, dims, steps, flags & 2 != 0, flags & 1 != 0, 0)
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        m.store.load(tensors).map_err(bad)?;
        m.infill_categories = categories.clone();
        m.trained_steps = trained_steps;
        Ok(m)
    };
    Ok(match family {
        Family::Quantized => Model::Quantized(TrainStats { mean_velocity: tensor("mean_velocity")?[(0, 0)] }),
        Family::Linear => {
            let velocity_weights = tensor("velocity_weights")?;
            let offset_weights = tensor("offset_weights")?;
            let cells = steps * NUM_INSTRUMENTS;
            if velocity_weights.shape() != (cells + 1, cells) || offset_weights.shape() != (cells + 1, cells) {
                return Err(Error::CheckpointFormat("linear weights have the wrong shape".into()));
            }
            Model::Linear(LinearParams { steps, velocity_weights, offset_weights })
        }
        Family::Knn => Model::Knn { k, train: windows_from_tensors(&tensors, steps)? },
        Family::Mlp => {
            let mut m = Mlp::new(steps, hidden, 0).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
            m.store.load(tensors).map_err(bad)?;
            m.trained_steps = trained_steps;
            Model::Mlp(m)
        }
        Family::Seq2Seq | Family::Seq2SeqVib => Model::Seq2Seq(seq2seq(tensors)?),
        Family::Transfer => {
            let train = windows_from_tensors(&tensors, steps)?;
            let params = tensors.into_iter().filter(|(n, _)| !n.starts_with("train.")).collect();
            Model::Transfer { model: seq2seq(params)?, train }
        }
    })
}

pub fn save(path: &Path, model: &Model, record: &RunRecord) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    let json = serde_json::to_string_pretty(record).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::CheckpointFormat(format!("sidecar: {e}")))
}

/// Rounds every parameter to `f32`, as saving and loading would.
pub fn round_trip(model: &Model) -> Result<Model> {
    decode_checkpoint(&encode_checkpoint(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::linear_fit;
    use crate::neural::gradcheck::toy_corpus;

    fn models() -> Vec<Model> {
        let train = toy_corpus(5, 16, 1);
        let mut s2s = Seq2Seq::new(Task::Infill, Seq2SeqDims::uniform(4), 16, false, false, 3).unwrap();
        s2s.trained_steps = 7;
        let mut vib = Seq2Seq::new(Task::Humanize, Seq2SeqDims { encoder: 3, latent: 2, decoder: 5 }, 16, false, true, 4).unwrap();
        vib.trained_steps = 1;
        let mut transfer = Seq2Seq::new(Task::Humanize, Seq2SeqDims::uniform(3), 16, true, false, 5).unwrap();
        transfer.trained_steps = 2;
        let mut mlp = Mlp::new(16, 6, 2).unwrap();
        mlp.trained_steps = 9;
        vec![
            Model::Quantized(TrainStats::from_corpus(&train).unwrap()),
            Model::Linear(linear_fit(&train, 1e-2).unwrap()),
            Model::Knn { k: 2, train: train.clone() },
            Model::Mlp(mlp),
            Model::Seq2Seq(s2s),
            Model::Seq2Seq(vib),
            Model::Transfer { model: transfer, train },
        ]
    }

    #[test]
    fn every_family_round_trips_after_f32_rounding() {
        for (model, family) in models().into_iter().zip(Family::ALL) {
            assert_eq!(model.family(), family);
            let bytes = encode_checkpoint(&model);
            assert_eq!(&bytes[..4], b"GRVM");
            assert_eq!(bytes[5], family.tag());
            let once = decode_checkpoint(&bytes).unwrap();
            assert_eq!(once.family(), family);
            // f32 rounding is idempotent, so the second pass is exact.
            assert_eq!(encode_checkpoint(&once), bytes);
            assert_eq!(decode_checkpoint(&encode_checkpoint(&once)).unwrap(), once);
            let score = toy_corpus(1, 16, 9)[0].hits_only();
            match family {
                Family::Seq2Seq => assert!(once.infill(&score).is_ok()),
                _ => assert_eq!(once.humanize(&score).unwrap().hits(), score.hits()),
            }
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let bytes = encode_checkpoint(&models()[0]);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad = bytes;
        bad[5] = 99;
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn baselines_reject_other_tasks() {
        let m = &models()[0];
        assert!(matches!(m.tap2drum(&TapTensor::empty(16, 120.0)), Err(Error::TaskMismatch { .. })));
        assert!(matches!(m.infill(&GrooveTensor::empty(16, 120.0)), Err(Error::TaskMismatch { .. })));
    }

    #[test]
    fn family_names_parse() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("bogus".parse::<Family>().is_err());
    }
}
