//! Generators and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use groove::midi_io::{MidiSequence, NoteEvent, TempoEvent, TimeSignatureEvent};
use groove::representation::{GrooveTensor, NUM_INSTRUMENTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid sequence: distinct (tick, channel, pitch) onsets, nonzero
/// velocities, tempo events at distinct ticks starting at 0.
pub fn random_sequence(rng: &mut ChaCha8Rng) -> MidiSequence {
    let ppq = rng.random_range(24..=960u16);
    let mut seq = MidiSequence::new(ppq);
    let tempo_count = rng.random_range(1..=3);
    let mut ticks: Vec<u64> = (1..tempo_count).map(|_| rng.random_range(1..50_000)).collect();
    ticks.insert(0, 0);
    ticks.sort_unstable();
    ticks.dedup();
    seq.tempo_events = ticks
        .into_iter()
        .map(|tick| TempoEvent { tick, us_per_quarter: rng.random_range(200_000..1_500_000) })
        .collect();
    if rng.random_bool(0.5) {
        seq.time_signature_events.push(TimeSignatureEvent { tick: 0, numerator: rng.random_range(1..=12), denominator: 1 << rng.random_range(0..5) });
    }
    let n = rng.random_range(0..200);
    let mut notes: Vec<NoteEvent> = (0..n)
        .map(|_| NoteEvent {
            tick: rng.random_range(0..60_000),
            pitch: rng.random_range(0..128),
            velocity: rng.random_range(1..128),
            channel: rng.random_range(0..16),
        })
        .collect();
    notes.sort_by_key(|n| (n.tick, n.channel, n.pitch));
    notes.dedup_by_key(|n| (n.tick, n.channel, n.pitch));
    seq.notes = notes;
    seq
}

/// Random tensor whose hits survive rendering to MIDI at whole ticks:
/// offsets within ±0.49, no early hit at step 0, velocities of at least 1/127.
pub fn random_renderable_tensor(rng: &mut ChaCha8Rng, steps: usize) -> GrooveTensor {
    let tempo = rng.random_range(60.0..200.0);
    let mut g = GrooveTensor::empty(steps, tempo);
    let density = rng.random_range(0.05..0.5);
    for t in 0..steps {
        for m in 0..NUM_INSTRUMENTS {
            if rng.random_bool(density) {
                let lo = if t == 0 { 0.0 } else { -0.49 };
                g.set_hit(t, m, rng.random_range(1.0 / 127.0..=1.0), rng.random_range(lo..0.49));
            }
        }
    }
    g
}

/// Any valid tensor.
pub fn random_tensor(rng: &mut ChaCha8Rng, steps: usize, density: f64) -> GrooveTensor {
    let mut g = GrooveTensor::empty(steps, rng.random_range(60.0..200.0));
    for t in 0..steps {
        for m in 0..NUM_INSTRUMENTS {
            if rng.random_bool(density) {
                g.set_hit(t, m, rng.random_range(0.0..=1.0), rng.random_range(-0.5..0.5));
            }
        }
    }
    g
}

/// Nearest-neighbor humanization written out directly: dense similarity as
/// an explicit sum of products, a full sort, and summed-then-divided means.
pub fn brute_force_knn(score: &GrooveTensor, train: &[GrooveTensor], k: usize) -> GrooveTensor {
    let cells = score.steps() * NUM_INSTRUMENTS;
    let h = |g: &GrooveTensor, c: usize| if g.hits()[c] { 1.0 } else { 0.0 };
    let mut ranked: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, g)| ((0..cells).map(|c| h(score, c) * h(g, c)).sum::<f64>(), i))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let chosen: Vec<usize> = ranked.iter().take(k).map(|&(_, i)| i).collect();
    let mut out = GrooveTensor::empty(score.steps(), score.tempo_bpm());
    for c in 0..cells {
        if !score.hits()[c] {
            continue;
        }
        let mut v = 0.0;
        let mut o = 0.0;
        for &i in &chosen {
            v += train[i].velocities()[c];
            o += train[i].offsets()[c];
        }
        out.set_hit(c / NUM_INSTRUMENTS, c % NUM_INSTRUMENTS, v / k as f64, o / k as f64);
    }
    out
}

/// `KL(N(m1, s1^2) || N(m2, s2^2))` by composite Simpson integration of
/// `p ln(p/q)` over `m1 ± 12 s1`.
pub fn quadrature_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let log_pdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |x: f64| {
        let lp = log_pdf(x, m1, s1);
        lp.exp() * (lp - log_pdf(x, m2, s2))
    };
    let (a, b) = (m1 - 12.0 * s1, m1 + 12.0 * s1);
    let n = 200_000;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Offset and velocity of a hit at step `t` under the fixed groove rule:
/// eighth-note positions are played 0.04 late, the 16ths between them 0.08
/// early, beats are accented.
pub fn groove_rule(t: usize) -> (f64, f64) {
    let offset = if t % 2 == 0 { 0.04 } else { -0.08 };
    let velocity = if t % 4 == 0 { 0.9 } else { 0.5 };
    (velocity, offset)
}

/// One-bar hit patterns: hi-hat mostly on eighths, other voices sparse.
pub fn bar_vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<Vec<(usize, usize)>> {
    (0..size)
        .map(|_| {
            let mut cells = Vec::new();
            for t in 0..16 {
                for m in 0..NUM_INSTRUMENTS {
                    let p = match m {
                        2 if t % 2 == 0 => 0.9,
                        2 => 0.3,
                        _ => 0.1,
                    };
                    if rng.random_bool(p) {
                        cells.push((t, m));
                    }
                }
            }
            cells
        })
        .collect()
}

/// A performance of the bars `bars` from `vocabulary` played with the fixed
/// groove rule at a random tempo.
pub fn rule_groove(rng: &mut ChaCha8Rng, vocabulary: &[Vec<(usize, usize)>], bars: &[usize]) -> GrooveTensor {
    let mut g = GrooveTensor::empty(16 * bars.len(), rng.random_range(80.0..120.0));
    for (b, &bar) in bars.iter().enumerate() {
        for &(t, m) in &vocabulary[bar] {
            let (velocity, offset) = groove_rule(16 * b + t);
            g.set_hit(16 * b + t, m, velocity, offset);
        }
    }
    g
}

/// Index of the most similar training window, ties to the lowest index.
pub fn brute_force_knn_index(score: &GrooveTensor, train: &[GrooveTensor]) -> usize {
    let overlap = |g: &GrooveTensor| score.hits().iter().zip(g.hits()).filter(|(a, b)| **a && **b).count();
    let mut best = 0;
    for i in 1..train.len() {
        if overlap(&train[i]) > overlap(&train[best]) {
            best = i;
        }
    }
    best
}
