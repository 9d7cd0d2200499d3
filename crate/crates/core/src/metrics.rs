//! Timing error, distribution KL and bootstrap intervals for evaluating
//! humanized performances against ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::representation::GrooveTensor;

/// Smallest standard deviation accepted by [`gaussian_kl`].
pub const STD_TOLERANCE: f64 = 1e-6;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const POSITION_GROUPS: usize = 4;

fn ms_per_step(tempo_bpm: f64) -> f64 {
    60_000.0 / (tempo_bpm * 4.0)
}

fn check_pair(pred: &GrooveTensor, truth: &GrooveTensor) -> Result<()> {
    if pred.steps() != truth.steps() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} steps", truth.steps()),
            found: format!("{} steps", pred.steps()),
        });
    }
    Ok(())
}

/// Per-hit absolute offset errors in milliseconds over the truth's hits.
pub fn timing_errors_ms(pred: &GrooveTensor, truth: &GrooveTensor) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    let scale = ms_per_step(truth.tempo_bpm());
    Ok(truth
        .hit_cells()
        .map(|(t, m)| (pred.offset(t, m) - truth.offset(t, m)).abs() * scale)
        .collect())
}

/// Per-hit squared offset errors in 16th-note units.
pub fn timing_sq_errors(pred: &GrooveTensor, truth: &GrooveTensor) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    Ok(truth
        .hit_cells()
        .map(|(t, m)| {
            let d = pred.offset(t, m) - truth.offset(t, m);
            d * d
        })
        .collect())
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn timing_mae_ms(pred: &GrooveTensor, truth: &GrooveTensor) -> Result<f64> {
    mean(&timing_errors_ms(pred, truth)?)
}

pub fn timing_mse_16th(pred: &GrooveTensor, truth: &GrooveTensor) -> Result<f64> {
    mean(&timing_sq_errors(pred, truth)?)
}

/// `KL(N(mu1, s1^2) || N(mu2, s2^2))`.
pub fn gaussian_kl(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<f64> {
    for s in [s1, s2] {
        if !(s > STD_TOLERANCE) {
            return Err(Error::DegenerateStd(s));
        }
    }
    if mu1 == mu2 && s1 == s2 {
        return Ok(0.0);
    }
    let d = mu1 - mu2;
    Ok(((s2 / s1).ln() + (s1 * s1 + d * d) / (2.0 * s2 * s2) - 0.5).max(0.0))
}

/// Which note attribute a distribution statistic is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Offsets,
    Velocities,
}

/// Argument order of the divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KlDirection {
    #[default]
    PredictedToTruth,
    TruthToPredicted,
}

impl KlDirection {
    pub fn label(self) -> &'static str {
        match self {
            KlDirection::PredictedToTruth => "KL(pred || truth)",
            KlDirection::TruthToPredicted => "KL(truth || pred)",
        }
    }
}

/// One note's position group and attribute value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedValue {
    pub group: usize,
    pub value: f64,
}

/// All notes of a set of windows, grouped by 16th position within the beat.
pub fn grouped_values(windows: &[GrooveTensor], field: Field) -> Vec<GroupedValue> {
    windows
        .iter()
        .flat_map(|g| {
            g.hit_cells().map(move |(t, m)| GroupedValue {
                group: t % POSITION_GROUPS,
                value: match field {
                    Field::Offsets => g.offset(t, m),
                    Field::Velocities => g.velocity(t, m),
                },
            })
        })
        .collect()
}

/// Mean and unbiased standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
    Some((mu, var.sqrt()))
}

/// Mean and standard deviation per position group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

fn group_stats(values: &[GroupedValue]) -> Result<[GroupStats; POSITION_GROUPS]> {
    let mut buckets: [Vec<f64>; POSITION_GROUPS] = Default::default();
    for v in values {
        buckets[v.group].push(v.value);
    }
    let mut out = [GroupStats { count: 0, mean: 0.0, std: 0.0 }; POSITION_GROUPS];
    for (g, b) in buckets.iter().enumerate() {
        let (mean, std) = mean_std(b).ok_or(Error::InsufficientGroup { group: g, count: b.len() })?;
        out[g] = GroupStats { count: b.len(), mean, std };
    }
    Ok(out)
}

/// Average over the four position groups of the Gaussian KL between fitted
/// predicted and true distributions.
pub fn distribution_kl_values(pred: &[GroupedValue], truth: &[GroupedValue], direction: KlDirection) -> Result<f64> {
    let p = group_stats(pred)?;
    let q = group_stats(truth)?;
    let mut total = 0.0;
    for g in 0..POSITION_GROUPS {
        let (a, b) = match direction {
            KlDirection::PredictedToTruth => (p[g], q[g]),
            KlDirection::TruthToPredicted => (q[g], p[g]),
        };
        total += gaussian_kl(a.mean, a.std, b.mean, b.std)?;
    }
    Ok(total / POSITION_GROUPS as f64)
}

pub fn distribution_kl(pred: &[GrooveTensor], truth: &[GrooveTensor], field: Field, direction: KlDirection) -> Result<f64> {
    distribution_kl_values(&grouped_values(pred, field), &grouped_values(truth, field), direction)
}

/// Percentile of sorted data with linear interpolation.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95% percentile-bootstrap interval of a statistic over resampled items.
pub fn bootstrap<T, F>(items: &[T], resamples: usize, seed: u64, stat: F) -> Result<(f64, f64)>
where
    T: Clone,
    F: Fn(&[T]) -> Result<f64>,
{
    if items.len() < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = items.to_vec();
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for s in sample.iter_mut() {
            *s = items[rng.random_range(0..items.len())].clone();
        }
        // Resamples too sparse to evaluate (e.g. an emptied group) are skipped.
        if let Ok(v) = stat(&sample) {
            stats.push(v);
        }
    }
    if stats.is_empty() {
        return Err(Error::InvalidArgument("no bootstrap resample produced a value".into()));
    }
    stats.sort_by(f64::total_cmp);
    Ok((percentile(&stats, 0.025), percentile(&stats, 0.975)))
}

/// Bootstrap interval of the mean of per-note values.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    bootstrap(values, resamples, seed, mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Named metric values, serialized as `{name: {value, ci_low, ci_high, n}}`.
/// A metric that is undefined for the predictions (a distribution KL when a
/// model's offsets or velocities do not vary) is `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, Option<MetricValue>>,
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub resamples: usize,
    pub seed: u64,
    pub direction: KlDirection,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { resamples: BOOTSTRAP_RESAMPLES, seed: 0, direction: KlDirection::default() }
    }
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.get(name).and_then(Option::as_ref)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        self.metrics
            .iter()
            .map(|(k, m)| match m {
                Some(m) => format!("{k:<14} {:>10.4}  [{:.4}, {:.4}]  n={}\n", m.value, m.ci_low, m.ci_high, m.n),
                None => format!("{k:<14} {:>10}\n", "N/A"),
            })
            .collect()
    }

    /// Timing MAE/MSE and offset/velocity distribution KL of predictions
    /// against their ground-truth windows.
    pub fn evaluate(pred: &[GrooveTensor], truth: &[GrooveTensor], cfg: &EvalConfig) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} windows", truth.len()),
                found: format!("{} windows", pred.len()),
            });
        }
        let mut abs_ms = Vec::new();
        let mut sq = Vec::new();
        for (p, t) in pred.iter().zip(truth) {
            abs_ms.extend(timing_errors_ms(p, t)?);
            sq.extend(timing_sq_errors(p, t)?);
        }
        let mut report = Self::default();
        let mut put = |name: &str, metric: Option<(f64, (f64, f64), usize)>| {
            let metric = metric.map(|(value, ci, n)| MetricValue { value, ci_low: ci.0, ci_high: ci.1, n });
            report.metrics.insert(name.to_string(), metric);
        };
        put("mae_ms", Some((mean(&abs_ms)?, bootstrap_ci(&abs_ms, cfg.resamples, cfg.seed)?, abs_ms.len())));
        put("mse_16th", Some((mean(&sq)?, bootstrap_ci(&sq, cfg.resamples, cfg.seed.wrapping_add(1))?, sq.len())));
        for (name, field, salt) in [("timing_kl", Field::Offsets, 2u64), ("velocity_kl", Field::Velocities, 3)] {
            // Notes are paired per window, so windows are the resampling unit.
            let pairs: Vec<(Vec<GroupedValue>, Vec<GroupedValue>)> = pred
                .iter()
                .zip(truth)
                .map(|(p, t)| (grouped_values(std::slice::from_ref(p), field), grouped_values(std::slice::from_ref(t), field)))
                .collect();
            let stat = |sample: &[(Vec<GroupedValue>, Vec<GroupedValue>)]| {
                let p: Vec<GroupedValue> = sample.iter().flat_map(|s| s.0.iter().copied()).collect();
                let t: Vec<GroupedValue> = sample.iter().flat_map(|s| s.1.iter().copied()).collect();
                distribution_kl_values(&p, &t, cfg.direction)
            };
            let value = match stat(&pairs) {
                Ok(v) => v,
                Err(Error::DegenerateStd(_) | Error::InsufficientGroup { .. }) => {
                    put(name, None);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let ci = bootstrap(&pairs, cfg.resamples, cfg.seed.wrapping_add(salt), stat)?;
            let n = pairs.iter().map(|p| p.0.len()).sum();
            put(name, Some((value, ci, n)));
        }
        Ok(report)
    }
}

/// Offset statistics for eighth-note (even step) and in-between (odd step)
/// positions, with histograms over `[-0.5, 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionGroupStats {
    pub on_beat_mean: f64,
    pub off_beat_mean: f64,
    pub on_beat_count: usize,
    pub off_beat_count: usize,
    pub on_beat_histogram: Vec<usize>,
    pub off_beat_histogram: Vec<usize>,
    /// Offset mean/std per 16th position within the beat, where defined.
    pub groups: Vec<Option<GroupStats>>,
}

pub const HISTOGRAM_BINS: usize = 20;

fn bin(offset: f64) -> usize {
    (((offset + 0.5) * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

pub fn onbeat_offbeat_stats(corpus: &[GrooveTensor]) -> Result<PositionGroupStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    let mut hist = [vec![0usize; HISTOGRAM_BINS], vec![0usize; HISTOGRAM_BINS]];
    let mut per_group: [Vec<f64>; POSITION_GROUPS] = Default::default();
    for g in corpus {
        for (t, m) in g.hit_cells() {
            let o = g.offset(t, m);
            let k = t % 2;
            sums[k] += o;
            counts[k] += 1;
            hist[k][bin(o)] += 1;
            per_group[t % POSITION_GROUPS].push(o);
        }
    }
    let avg = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    let [on_hist, off_hist] = hist;
    Ok(PositionGroupStats {
        on_beat_mean: avg(0),
        off_beat_mean: avg(1),
        on_beat_count: counts[0],
        off_beat_count: counts[1],
        on_beat_histogram: on_hist,
        off_beat_histogram: off_hist,
        groups: per_group
            .iter()
            .map(|b| mean_std(b).map(|(mean, std)| GroupStats { count: b.len(), mean, std }))
            .collect(),
    })
}
