use rand::Rng;

use super::tape::{Gradients, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in a fixed registration order. The order is the
/// on-disk order in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)` where `fan_in` is the row count.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let value = Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces every tensor, checking names and shapes against `self`.
    pub fn load(&mut self, tensors: Vec<(String, Mat)>) -> Result<(), String> {
        if tensors.len() != self.values.len() {
            return Err(format!("expected {} tensors, found {}", self.values.len(), tensors.len()));
        }
        for (i, (name, value)) in tensors.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(format!("tensor {i}: expected `{}`, found `{name}`", self.names[i]));
            }
            if value.shape() != self.values[i].shape() {
                return Err(format!(
                    "tensor `{name}`: expected shape {:?}, found {:?}",
                    self.values[i].shape(),
                    value.shape()
                ));
            }
            self.values[i] = value;
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Dense per-parameter gradients, zero where a parameter was unused.
pub fn collect_gradients(store: &ParamStore, grads: &Gradients) -> Vec<Mat> {
    store
        .ids()
        .map(|id| {
            grads
                .param(id)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(store.value(id).nrows(), store.value(id).ncols()))
        })
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || store.values.iter().map(|v| Mat::zeros(v.nrows(), v.ncols())).collect();
        Self { learning_rate, beta1, beta2, epsilon, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Mat]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let w = &mut store.values[i];
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::from_row_slice(1, 2, &[1.0, -1.0]));
        let mut adam = Adam::new(&store, 0.1, 0.9, 0.999, 1e-8);
        adam.update(&mut store, &[Mat::from_row_slice(1, 2, &[3.0, -0.5])]);
        // Bias-corrected first step is lr * sign(g).
        assert!((store.value(id)[0] - 0.9).abs() < 1e-6);
        assert!((store.value(id)[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::from_row_slice(1, 1, &[5.0]));
        let mut adam = Adam::new(&store, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let w = store.value(id)[0];
            adam.update(&mut store, &[Mat::from_element(1, 1, 2.0 * (w - 1.5))]);
        }
        assert!((store.value(id)[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Mat::from_row_slice(1, 2, &[3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let mut store = ParamStore::new();
        store.add_zeros("a", 2, 2);
        assert!(store.load(vec![("b".into(), Mat::zeros(2, 2))]).is_err());
        assert!(store.load(vec![("a".into(), Mat::zeros(1, 2))]).is_err());
        store.load(vec![("a".into(), Mat::from_element(2, 2, 1.0))]).unwrap();
        assert_eq!(store.value(ParamId(0))[(1, 1)], 1.0);
    }
}
