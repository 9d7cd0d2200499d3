//! Non-neural humanizers: the quantized baseline, ridge regression from hits
//! to velocities/offsets, and sequence-level nearest-neighbor groove templates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::representation::{clamp_offset, GrooveTensor, NUM_INSTRUMENTS};

/// Default ridge strength for [`linear_fit`].
pub const DEFAULT_RIDGE: f64 = 1e-3;
/// Neighbor count used for the nearest-neighbor humanizer.
pub const DEFAULT_K: usize = 20;

/// Corpus statistics needed by the quantized baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub mean_velocity: f64,
}

impl TrainStats {
    /// Mean velocity over every hit in the corpus.
    pub fn from_corpus(corpus: &[GrooveTensor]) -> Result<Self> {
        let (sum, count) = corpus.iter().flat_map(|g| g.hit_cells().map(move |(t, m)| g.velocity(t, m))).fold(
            (0.0, 0usize),
            |(s, n), v| (s + v, n + 1),
        );
        if count == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(Self { mean_velocity: sum / count as f64 })
    }
}

/// Every hit at the training-set mean velocity, exactly on the grid.
pub fn quantized_baseline(score: &GrooveTensor, stats: &TrainStats) -> GrooveTensor {
    let mut out = score.hits_only();
    for (t, m) in score.hit_cells() {
        out.set_hit(t, m, stats.mean_velocity, 0.0);
    }
    out
}

/// Ridge-regression weights mapping the flattened hit matrix (plus a bias
/// input) to flattened velocities and offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub steps: usize,
    /// `(T*M + 1) x (T*M)`; the last row is the bias.
    pub velocity_weights: DMatrix<f64>,
    pub offset_weights: DMatrix<f64>,
}

fn design_row(g: &GrooveTensor) -> Vec<f64> {
    let mut row = g.hits_f64();
    row.push(1.0);
    row
}

fn check_steps(expected: usize, g: &GrooveTensor) -> Result<()> {
    if g.steps() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected} steps"),
            found: format!("{} steps", g.steps()),
        });
    }
    Ok(())
}

/// Closed-form ridge regression. The bias column is not penalized, so the
/// normal equations stay positive definite for any `ridge > 0`.
pub fn linear_fit(corpus: &[GrooveTensor], ridge: f64) -> Result<LinearParams> {
    let first = corpus.first().ok_or(Error::EmptyTrainingSet)?;
    if !(ridge > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be positive, got {ridge}")));
    }
    let steps = first.steps();
    let cells = steps * NUM_INSTRUMENTS;
    let p = cells + 1;
    let n = corpus.len();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut yv = DMatrix::<f64>::zeros(n, cells);
    let mut yo = DMatrix::<f64>::zeros(n, cells);
    for (i, g) in corpus.iter().enumerate() {
        check_steps(steps, g)?;
        for (j, v) in design_row(g).into_iter().enumerate() {
            x[(i, j)] = v;
        }
        for j in 0..cells {
            yv[(i, j)] = g.velocities()[j];
            yo[(i, j)] = g.offsets()[j];
        }
    }
    let xt = x.transpose();
    let mut gram = &xt * &x;
    for j in 0..cells {
        gram[(j, j)] += ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("normal equations are not positive definite".into()))?;
    let velocity_weights = chol.solve(&(&xt * &yv));
    let offset_weights = chol.solve(&(&xt * &yo));
    Ok(LinearParams { steps, velocity_weights, offset_weights })
}

impl LinearParams {
    /// Raw (unclamped, unmasked) predictions for a score.
    pub fn predict_raw(&self, score: &GrooveTensor) -> Result<(Vec<f64>, Vec<f64>)> {
        check_steps(self.steps, score)?;
        let x = DVector::from_vec(design_row(score));
        let v = self.velocity_weights.tr_mul(&x);
        let o = self.offset_weights.tr_mul(&x);
        Ok((v.iter().copied().collect(), o.iter().copied().collect()))
    }

    /// Humanizes a score; predictions are clamped into range and kept only at hits.
    pub fn humanize(&self, score: &GrooveTensor) -> Result<GrooveTensor> {
        let (v, o) = self.predict_raw(score)?;
        let mut out = score.hits_only();
        for (t, m) in score.hit_cells() {
            let i = t * NUM_INSTRUMENTS + m;
            out.set_hit(t, m, v[i], clamp_offset(o[i]));
        }
        Ok(out)
    }
}

/// Hit matrix packed into 64-bit words for fast overlap counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedHits {
    steps: usize,
    words: Vec<u64>,
}

impl PackedHits {
    pub fn new(g: &GrooveTensor) -> Self {
        let hits = g.hits();
        let mut words = vec![0u64; hits.len().div_ceil(64)];
        for (i, _) in hits.iter().enumerate().filter(|(_, &h)| h) {
            words[i / 64] |= 1 << (i % 64);
        }
        Self { steps: g.steps(), words }
    }

    pub fn overlap(&self, other: &PackedHits) -> Result<u32> {
        if self.steps != other.steps {
            return Err(Error::ShapeMismatch {
                expected: format!("{} steps", self.steps),
                found: format!("{} steps", other.steps),
            });
        }
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum())
    }
}

/// Number of hits two scores share (sum of the element-wise product of
/// their hit matrices). Larger means more similar.
pub fn knn_similarity(a: &GrooveTensor, b: &GrooveTensor) -> Result<u32> {
    PackedHits::new(a).overlap(&PackedHits::new(b))
}

/// A training set prepared for sequence-level neighbor retrieval.
#[derive(Debug, Clone)]
pub struct KnnIndex<'a> {
    train: &'a [GrooveTensor],
    packed: Vec<PackedHits>,
}

impl<'a> KnnIndex<'a> {
    pub fn new(train: &'a [GrooveTensor]) -> Self {
        Self { train, packed: train.iter().map(PackedHits::new).collect() }
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn window(&self, i: usize) -> &'a GrooveTensor {
        &self.train[i]
    }

    /// Indices of the `k` training windows sharing the most hits with
    /// `score`, most similar first; ties go to the lower index.
    pub fn neighbors(&self, score: &GrooveTensor, k: usize) -> Result<Vec<usize>> {
        if self.train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if k == 0 || k > self.train.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must be in 1..={}",
                self.train.len()
            )));
        }
        let query = PackedHits::new(score);
        let mut ranked = self
            .packed
            .iter()
            .enumerate()
            .map(|(i, p)| query.overlap(p).map(|s| (std::cmp::Reverse(s), i)))
            .collect::<Result<Vec<_>>>()?;
        if k < ranked.len() {
            ranked.select_nth_unstable(k - 1);
            ranked.truncate(k);
        }
        ranked.sort_unstable();
        Ok(ranked.into_iter().map(|(_, i)| i).collect())
    }

    /// Element-wise mean velocities and offsets of the `k` nearest windows,
    /// kept only where `score` has hits.
    pub fn humanize(&self, score: &GrooveTensor, k: usize) -> Result<GrooveTensor> {
        let neighbors = self.neighbors(score, k)?;
        let cells = score.steps() * NUM_INSTRUMENTS;
        let mut v = vec![0.0; cells];
        let mut o = vec![0.0; cells];
        for &i in &neighbors {
            let g = &self.train[i];
            for c in 0..cells {
                v[c] += g.velocities()[c];
                o[c] += g.offsets()[c];
            }
        }
        let k = k as f64;
        let mut out = score.hits_only();
        for (t, m) in score.hit_cells() {
            let c = t * NUM_INSTRUMENTS + m;
            out.set_hit(t, m, v[c] / k, o[c] / k);
        }
        Ok(out)
    }
}

pub fn knn_humanize(score: &GrooveTensor, trainset: &[GrooveTensor], k: usize) -> Result<GrooveTensor> {
    KnnIndex::new(trainset).humanize(score, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, steps: usize, density: f64) -> GrooveTensor {
        let mut g = GrooveTensor::empty(steps, 120.0);
        for t in 0..steps {
            for m in 0..NUM_INSTRUMENTS {
                if rng.random_bool(density) {
                    g.set_hit(t, m, rng.random_range(0.05..1.0), rng.random_range(-0.45..0.45));
                }
            }
        }
        g
    }

    #[test]
    fn quantized_baseline_uses_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_tensor(&mut rng, 16, 0.3);
        let out = quantized_baseline(&g, &TrainStats { mean_velocity: 0.6 });
        assert_eq!(out.hits(), g.hits());
        for (t, m) in out.hit_cells() {
            assert_eq!(out.velocity(t, m), 0.6);
            assert_eq!(out.offset(t, m), 0.0);
        }
        let empty = GrooveTensor::empty(16, 120.0);
        assert_eq!(quantized_baseline(&empty, &TrainStats { mean_velocity: 0.6 }), empty);
    }

    #[test]
    fn train_stats_mean() {
        let mut a = GrooveTensor::empty(16, 120.0);
        a.set_hit(0, 0, 0.2, 0.0);
        a.set_hit(1, 1, 0.4, 0.0);
        let mut b = GrooveTensor::empty(16, 120.0);
        b.set_hit(0, 0, 0.9, 0.0);
        let stats = TrainStats::from_corpus(&[a, b]).unwrap();
        assert!((stats.mean_velocity - 0.5).abs() < 1e-12);
        assert_eq!(TrainStats::from_corpus(&[]), Err(Error::EmptyTrainingSet));
    }

    #[test]
    fn linear_recovers_realizable_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus: Vec<_> = (0..40)
            .map(|_| {
                let h = random_tensor(&mut rng, 16, 0.25);
                let mut g = h.hits_only();
                for (t, m) in h.hit_cells() {
                    g.set_hit(t, m, 0.5, 0.0);
                }
                g
            })
            .collect();
        let params = linear_fit(&corpus, 1e-9).unwrap();
        for g in &corpus {
            let (v, _) = params.predict_raw(g).unwrap();
            for (i, &pred) in v.iter().enumerate() {
                let want = if g.hits()[i] { 0.5 } else { 0.0 };
                assert!((pred - want).abs() < 1e-6, "cell {i}: {pred} vs {want}");
            }
        }
    }

    #[test]
    fn linear_large_ridge_is_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus: Vec<_> = (0..10).map(|_| random_tensor(&mut rng, 16, 0.3)).collect();
        let params = linear_fit(&corpus, 1e12).unwrap();
        let cells = 16 * NUM_INSTRUMENTS;
        let max_w = params.velocity_weights.rows(0, cells).amax();
        assert!(max_w < 1e-9, "weights {max_w}");
        let bias = params.velocity_weights.row(cells);
        for c in 0..cells {
            let mean: f64 = corpus.iter().map(|g| g.velocities()[c]).sum::<f64>() / corpus.len() as f64;
            assert!((bias[c] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_output_is_clamped_and_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corpus: Vec<_> = (0..5).map(|_| random_tensor(&mut rng, 16, 0.3)).collect();
        let params = linear_fit(&corpus, DEFAULT_RIDGE).unwrap();
        let score = random_tensor(&mut rng, 16, 0.5).hits_only();
        let out = params.humanize(&score).unwrap();
        assert_eq!(out.hits(), score.hits());
        out.validate().unwrap();
        assert!(matches!(
            params.humanize(&GrooveTensor::empty(32, 120.0)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(linear_fit(&[], 1.0).is_err());
        assert!(linear_fit(&corpus, 0.0).is_err());
    }

    #[test]
    fn similarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = GrooveTensor::empty(32, 120.0);
        for i in 0..7 {
            g.set_hit(i * 4, i % NUM_INSTRUMENTS, 0.5, 0.0);
        }
        assert_eq!(knn_similarity(&g, &g).unwrap(), 7);
        let mut other = GrooveTensor::empty(32, 120.0);
        other.set_hit(1, 0, 0.5, 0.0);
        assert_eq!(knn_similarity(&g, &other).unwrap(), 0);
        let r = random_tensor(&mut rng, 16, 0.5);
        assert!(matches!(knn_similarity(&g, &r), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn knn_two_window_means() {
        let mut a = GrooveTensor::empty(16, 120.0);
        a.set_hit(0, 0, 0.8, 0.1);
        a.set_hit(4, 1, 0.6, -0.2);
        let mut b = GrooveTensor::empty(16, 120.0);
        b.set_hit(0, 0, 0.4, -0.1);
        b.set_hit(8, 1, 1.0, 0.3);
        let mut score = GrooveTensor::empty(16, 120.0);
        score.set_hit(0, 0, 0.0, 0.0);
        score.set_hit(4, 1, 0.0, 0.0);
        score.set_hit(8, 1, 0.0, 0.0);
        let out = knn_humanize(&score, &[a, b], 2).unwrap();
        assert!((out.velocity(0, 0) - 0.6).abs() < 1e-12);
        assert!((out.offset(0, 0) - 0.0).abs() < 1e-12);
        assert!((out.velocity(4, 1) - 0.3).abs() < 1e-12);
        assert!((out.offset(4, 1) + 0.1).abs() < 1e-12);
        assert!((out.velocity(8, 1) - 0.5).abs() < 1e-12);
        assert!((out.offset(8, 1) - 0.15).abs() < 1e-12);
        assert_eq!(out.hit_count(), 3);
    }

    #[test]
    fn knn_errors_and_ties() {
        let score = GrooveTensor::empty(16, 120.0);
        assert_eq!(knn_humanize(&score, &[], 1), Err(Error::EmptyTrainingSet));
        let train = vec![GrooveTensor::empty(16, 120.0); 3];
        assert!(knn_humanize(&score, &train, 4).is_err());
        // All similarities tie at zero: lowest indices win.
        assert_eq!(KnnIndex::new(&train).neighbors(&score, 2).unwrap(), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_tensor(&mut rng, 32, 0.3);
            let b = random_tensor(&mut rng, 32, 0.3);
            prop_assert_eq!(knn_similarity(&a, &b).unwrap(), knn_similarity(&b, &a).unwrap());
        }

        #[test]
        fn knn_stays_in_neighbor_envelope(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train: Vec<_> = (0..8).map(|_| random_tensor(&mut rng, 16, 0.3)).collect();
            let score = random_tensor(&mut rng, 16, 0.3).hits_only();
            let index = KnnIndex::new(&train);
            let nb = index.neighbors(&score, k).unwrap();
            let out = index.humanize(&score, k).unwrap();
            prop_assert_eq!(out.hits(), score.hits());
            for (t, m) in out.hit_cells() {
                let vs: Vec<f64> = nb.iter().map(|&i| train[i].velocity(t, m)).collect();
                let os: Vec<f64> = nb.iter().map(|&i| train[i].offset(t, m)).collect();
                let (vmin, vmax) = vs.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
                let (omin, omax) = os.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
                prop_assert!(out.velocity(t, m) >= vmin - 1e-12 && out.velocity(t, m) <= vmax + 1e-12);
                prop_assert!(out.offset(t, m) >= omin - 1e-12 && out.offset(t, m) <= omax + 1e-12);
            }
            prop_assert_eq!(index.neighbors(&score, k).unwrap(), nb);
        }
    }
}
