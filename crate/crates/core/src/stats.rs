//! Deterministic parallel Monte Carlo reductions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, SimRng};

/// Outcome of a statistical check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    /// The confidence interval straddles the threshold.
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Verdict for the claim `value >= threshold` given a CI halfwidth.
    pub fn at_least(value: f64, halfwidth: f64, threshold: f64) -> Self {
        if value - halfwidth >= threshold {
            Verdict::Pass
        } else if value + halfwidth < threshold {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }

    /// Verdict for the claim `value <= threshold` given a CI halfwidth.
    pub fn at_most(value: f64, halfwidth: f64, threshold: f64) -> Self {
        if value + halfwidth <= threshold {
            Verdict::Pass
        } else if value - halfwidth > threshold {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }

    /// Worst of several verdicts: any Fail, else any Inconclusive, else Pass.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        let mut out = Verdict::Pass;
        for v in verdicts {
            match v {
                Verdict::Fail => return Verdict::Fail,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Pass => {}
            }
        }
        out
    }
}

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

const CHUNK: u64 = 4096;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl MeanEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let mut acc = Moments::default();
        for &v in values {
            acc.push(v);
        }
        acc.finish()
    }

    pub fn ci99(&self) -> f64 {
        Z99 * self.std_err
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    fn finish(self) -> MeanEstimate {
        let std_err = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
        } else {
            0.0
        };
        MeanEstimate {
            mean: self.mean,
            std_err,
            samples: self.count,
        }
    }
}

/// Mean of `f` over `trials` independent trials, trial `t` drawing from
/// `stream_rng(seed, t)`. Chunks are reduced in a fixed order so the result
/// is bit-identical for any thread count.
pub fn par_mean<F>(trials: u64, seed: u64, f: F) -> MeanEstimate
where
    F: Fn(&mut SimRng) -> f64 + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::default();
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                acc.push(f(&mut stream_rng(seed, t)));
            }
            acc
        })
        .collect();
    partials
        .into_iter()
        .fold(Moments::default(), Moments::merge)
        .finish()
}

/// Per-trial records in trial order.
pub fn par_trials<T, F>(trials: u64, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut SimRng) -> T + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(t, &mut stream_rng(seed, t)))
        .collect()
}

/// Standard deviation of a binomial proportion.
pub fn binomial_sigma(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Ordinary least squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
