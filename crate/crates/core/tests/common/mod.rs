//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use riskconv::measures::DistortionFunction;
use riskconv::space::{FiniteProbabilitySpace, Position};

pub fn equiprobable(d: usize) -> Arc<FiniteProbabilitySpace> {
    FiniteProbabilitySpace::equiprobable(d).unwrap().into_shared()
}

pub fn random_space(rng: &mut ChaCha8Rng, d: usize) -> Arc<FiniteProbabilitySpace> {
    let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    FiniteProbabilitySpace::new(raw.iter().map(|r| r / total).collect())
        .unwrap()
        .into_shared()
}

pub fn random_position(rng: &mut ChaCha8Rng, space: &Arc<FiniteProbabilitySpace>, scale: f64) -> Position {
    let v = (0..space.atom_count()).map(|_| rng.gen_range(-scale..scale)).collect();
    Position::new(space.clone(), v).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    // make the sum exactly one
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    w
}

/// Random concave piecewise-linear distortion with three pieces.
pub fn random_concave_distortion(rng: &mut ChaCha8Rng) -> DistortionFunction {
    let mut b = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
    b.sort_by(f64::total_cmp);
    if b[1] - b[0] < 0.02 {
        b[1] = (b[0] + 0.02).min(0.99);
    }
    let mut slopes: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    slopes.sort_by(|a, c| c.total_cmp(a));
    let xs = [0.0, b[0], b[1], 1.0];
    let mut vs = vec![0.0];
    for j in 0..3 {
        vs.push(vs[j] + slopes[j] * (xs[j + 1] - xs[j]));
    }
    let top = vs[3];
    let vs: Vec<f64> = vs.iter().map(|v| v / top).collect();
    DistortionFunction::new(xs.to_vec(), vs).unwrap()
}

fn sorted_pairs(x: &Position) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = x.values().iter().copied().zip(x.probabilities().iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

pub fn var_ref(x: &Position, alpha: f64) -> f64 {
    let mut cum = 0.0;
    for (v, p) in sorted_pairs(x) {
        cum += p;
        if cum >= alpha - 1e-12 {
            return -v;
        }
    }
    unreachable!("probabilities sum to one")
}

pub fn es_ref(x: &Position, alpha: f64) -> f64 {
    let mut left = alpha;
    let mut acc = 0.0;
    for (v, p) in sorted_pairs(x) {
        let take = p.min(left);
        acc += take * v;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    -acc / alpha
}

pub fn entropic_ref(x: &Position, gamma: f64) -> f64 {
    let e: Vec<f64> = x.values().iter().map(|v| -gamma * v).collect();
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = e.iter().zip(x.probabilities()).map(|(a, p)| p * (a - m).exp()).sum();
    (m + s.ln()) / gamma
}

pub fn expected_loss_ref(x: &Position) -> f64 {
    -x.values().iter().zip(x.probabilities()).map(|(v, p)| v * p).sum::<f64>()
}

pub fn max_loss_ref(x: &Position) -> f64 {
    -x.values().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn kl_ref(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn upper_moment_ref(x: &Position, t: f64) -> f64 {
    x.values()
        .iter()
        .zip(x.probabilities())
        .map(|(v, p)| p * (v - t).max(0.0))
        .sum()
}

/// Largest `(a - b)(c - d)` violation of comonotonicity, as a negative number or zero.
pub fn comonotone_defect(x: &Position, y: &Position) -> f64 {
    let (a, b) = (x.values(), y.values());
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            worst = worst.min((a[i] - a[j]) * (b[i] - b[j]));
        }
    }
    worst
}
