//! Central-difference checks of the tape gradients on toy-sized models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::Mlp;
use super::params::{collect_gradients, ParamStore};
use super::seq2seq::{make_examples, Example, Seq2Seq, Seq2SeqDims};
use super::tape::{Mat, Tape, Var};
use super::Task;
use crate::representation::{GrooveTensor, NUM_INSTRUMENTS};
use crate::transforms::HI_HATS;

/// Initial finite-difference step used by the architecture checks.
pub const DEFAULT_STEP: f64 = 0.1;

/// Result of comparing analytic and numerical gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|ga - gn| / max(1e-8, |ga| + |gn|)` over checked entries.
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Derivative at 0 of `f` by Ridders' polynomial extrapolation of central
/// differences, starting from step `h` and shrinking it geometrically. The
/// tableau entry with the smallest error estimate is returned.
pub fn ridders<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const SIZE: usize = 10;
    let shrink2 = SHRINK * SHRINK;
    let mut table = [[0.0f64; SIZE]; SIZE];
    let mut h = h;
    let mut central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    table[0][0] = central(h);
    let mut best = table[0][0];
    let mut err = f64::INFINITY;
    for i in 1..SIZE {
        h /= SHRINK;
        table[0][i] = central(h);
        let mut fac = shrink2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (table[j][i] - table[j - 1][i]).abs().max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}

/// Compares tape gradients of `loss` with numerical derivatives (see
/// [`ridders`], initial step `eps`) on up to `per_tensor` entries of every
/// parameter tensor. The step is shrunk until it crosses no ReLU kink;
/// entries sitting on a kink are counted as skipped.
pub fn check_store<F>(store: &mut ParamStore, loss: F, eps: f64, per_tensor: usize) -> GradCheck
where
    F: Fn(&ParamStore, &mut Tape) -> Var,
{
    let (analytic, base_pattern) = {
        let mut tape = Tape::new();
        let root = loss(store, &mut tape);
        (collect_gradients(store, &tape.backward(root)), tape.relu_pattern())
    };
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let root = loss(store, &mut tape);
        (tape.scalar(root), tape.relu_pattern())
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let len = store.value(id).len();
        let stride = (len / per_tensor.max(1)).max(1);
        for j in (0..len).step_by(stride).take(per_tensor) {
            let orig = store.value(id)[j];
            let mut at = |delta: f64| {
                store.value_mut(id)[j] = orig + delta;
                let r = eval(store);
                store.value_mut(id)[j] = orig;
                r
            };
            let mut h = eps;
            while h > eps * 1e-6 && (at(h).1 != base_pattern || at(-h).1 != base_pattern) {
                h /= 10.0;
            }
            if at(h).1 != base_pattern || at(-h).1 != base_pattern {
                skipped += 1;
                continue;
            }
            let gn = ridders(|delta| at(delta).0, h);
            let ga = analytic[k][j];
            worst = worst.max((ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-8));
            checked += 1;
        }
    }
    GradCheck { max_relative_error: worst, checked, skipped }
}

/// Toy architectures covered by [`check_architecture`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Mlp,
    Seq2Seq,
    Seq2SeqVib,
    GrooveTransfer,
    Tap2Drum,
    Infill,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Mlp,
        Architecture::Seq2Seq,
        Architecture::Seq2SeqVib,
        Architecture::GrooveTransfer,
        Architecture::Tap2Drum,
        Architecture::Infill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Seq2Seq => "seq2seq",
            Architecture::Seq2SeqVib => "seq2seq-vib",
            Architecture::GrooveTransfer => "transfer",
            Architecture::Tap2Drum => "tap2drum",
            Architecture::Infill => "infill",
        }
    }
}

/// Random windows with moderate density, used as toy training data.
pub fn toy_corpus(count: usize, steps: usize, seed: u64) -> Vec<GrooveTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut g = GrooveTensor::empty(steps, 110.0);
            for t in 0..steps {
                for m in 0..NUM_INSTRUMENTS {
                    if rng.random_bool(0.25) {
                        g.set_hit(t, m, rng.random_range(0.05..1.0), rng.random_range(-0.45..0.45));
                    }
                }
            }
            g
        })
        .collect()
}

/// Gradient check of one toy architecture (width `dim`, 8 steps, batch 2).
/// Bottleneck noise is drawn once and held fixed.
pub fn check_architecture(arch: Architecture, dim: usize, eps: f64, seed: u64) -> GradCheck {
    let steps = 8;
    let corpus = toy_corpus(2, steps, seed);
    let per_tensor = usize::MAX;
    if arch == Architecture::Mlp {
        let mut mlp = Mlp::new(steps, dim, seed).expect("valid toy dims");
        let refs: Vec<&GrooveTensor> = corpus.iter().collect();
        let template = mlp.clone();
        return check_store(
            &mut mlp.store,
            |store, tape| {
                let mut m = template.clone();
                m.store = store.clone();
                m.batch_loss(tape, &refs)
            },
            eps,
            per_tensor,
        );
    }
    let (task, conditioned, vib) = match arch {
        Architecture::Seq2Seq => (Task::Humanize, false, false),
        Architecture::Seq2SeqVib => (Task::Humanize, false, true),
        Architecture::GrooveTransfer => (Task::Humanize, true, false),
        Architecture::Tap2Drum => (Task::Tap2Drum, false, false),
        Architecture::Infill => (Task::Infill, false, false),
        Architecture::Mlp => unreachable!(),
    };
    let mut model = Seq2Seq::new(task, Seq2SeqDims::uniform(dim), steps, conditioned, vib, seed).expect("valid toy dims");
    let examples: Vec<Example> = make_examples(&corpus, task, conditioned, &HI_HATS);
    let refs: Vec<&Example> = examples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let noise = vib.then(|| Mat::from_fn(refs.len(), dim, |_, _| StandardNormal.sample(&mut rng)));
    let template = model.clone();
    check_store(
        &mut model.store,
        |store, tape| {
            let mut m = template.clone();
            m.store = store.clone();
            m.batch_loss(tape, &refs, noise.as_ref(), 0.2).0
        },
        eps,
        per_tensor,
    )
}
