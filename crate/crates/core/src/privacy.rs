//! Laplace noise, the perturb-and-clamp step, and histogram-based DP audits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::mechanism::Report;
use crate::rng::{derive_seed, open_unit, stream_rng, SimRng};
use crate::stats::Verdict;

/// Default slack, in log space, before an audit is declared failed.
pub const DEFAULT_AUDIT_TOLERANCE: f64 = 0.05;
/// Bins observed fewer times than this in either histogram are ignored.
pub const MIN_BIN_COUNT: u64 = 50;

/// How the mechanism's aggregate noise is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Sample,
    /// Test hook: no noise at all.
    Disabled,
    /// Test hook: every draw returns this value.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn laplace(epsilon: f64) -> Result<Self> {
        ensure_positive("epsilon", epsilon)?;
        Ok(Self {
            epsilon,
            mode: NoiseMode::Sample,
        })
    }

    /// Zero noise. Behaves like the `epsilon -> infinity` limit.
    pub fn disabled_for_tests() -> Self {
        Self {
            epsilon: f64::INFINITY,
            mode: NoiseMode::Disabled,
        }
    }

    pub fn fixed_for_tests(draw: f64) -> Self {
        Self {
            epsilon: f64::INFINITY,
            mode: NoiseMode::Fixed(draw),
        }
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.epsilon
    }

    pub fn draw(&self, rng: &mut SimRng) -> f64 {
        match self.mode {
            NoiseMode::Sample => laplace_sample(self.scale(), rng),
            NoiseMode::Disabled => 0.0,
            NoiseMode::Fixed(x) => x,
        }
    }
}

/// Inverse CDF of the zero-centred Laplace distribution at `u` in (0, 1).
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

pub fn laplace_sample(scale: f64, rng: &mut SimRng) -> f64 {
    laplace_from_uniform(scale, open_unit(rng))
}

pub fn laplace_cdf(x: f64, center: f64, scale: f64) -> f64 {
    let z = (x - center) / scale;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// The published estimate and one agent's leave-one-out estimate, both
/// derived from a single noisy aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbed {
    pub p_tilde: f64,
    pub p_tilde_minus_i: f64,
    pub b_bar: f64,
}

impl Perturbed {
    pub fn from_b_bar(b_bar: f64, own_report_bit: u8, n: usize) -> Self {
        Self {
            p_tilde: estimate_from_b_bar(b_bar, n),
            p_tilde_minus_i: peer_estimate_from_b_bar(b_bar, own_report_bit, n),
            b_bar,
        }
    }
}

pub fn estimate_from_b_bar(b_bar: f64, n: usize) -> f64 {
    clamp_unit(b_bar / n as f64)
}

pub fn peer_estimate_from_b_bar(b_bar: f64, own_report_bit: u8, n: usize) -> f64 {
    clamp_unit((b_bar - f64::from(own_report_bit)) / (n - 1) as f64)
}

pub fn perturb_and_clamp(
    bhat_sum: u64,
    own_report_bit: u8,
    n: usize,
    noise: &NoiseSpec,
    rng: &mut SimRng,
) -> Result<Perturbed> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two agents"));
    }
    if bhat_sum > n as u64 {
        return Err(Error::invalid(
            "bhat_sum",
            format!("{bhat_sum} exceeds n = {n}"),
        ));
    }
    if own_report_bit > 1 || u64::from(own_report_bit) > bhat_sum {
        return Err(Error::invalid(
            "own_report_bit",
            format!("{own_report_bit} inconsistent with bhat_sum = {bhat_sum}"),
        ));
    }
    let b_bar = bhat_sum as f64 + noise.draw(rng);
    Ok(Perturbed::from_b_bar(b_bar, own_report_bit, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub trials: u64,
    pub bins: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Observable range split into equal-width bins. Values outside are
    /// counted in the edge bins.
    pub range: (f64, f64),
}

impl AuditSettings {
    pub fn new(trials: u64, bins: usize, seed: u64) -> Self {
        Self {
            trials,
            bins,
            seed,
            tolerance: DEFAULT_AUDIT_TOLERANCE,
            range: (0.0, 1.0),
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = (lo, hi);
        self
    }

    fn bin_of(&self, x: f64) -> usize {
        let (lo, hi) = self.range;
        let pos = (x - lo) / (hi - lo) * self.bins as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.bins - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpAuditReport {
    pub epsilon_claimed: f64,
    /// Infinite (serialized as `null`) when one input puts well-populated
    /// mass where the other puts none.
    pub max_log_ratio: f64,
    pub bins: usize,
    pub trials: u64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Histogram of `observable` under `trials` runs.
pub fn histogram<M>(mech: &M, reports: &[Report], settings: &AuditSettings, seed: u64) -> Vec<u64>
where
    M: Fn(&[Report], &mut SimRng) -> f64 + Sync,
{
    const CHUNK: u64 = 8192;
    let chunks = settings.trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; settings.bins];
            for t in c * CHUNK..((c + 1) * CHUNK).min(settings.trials) {
                let x = mech(reports, &mut stream_rng(seed, t));
                counts[settings.bin_of(x)] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; settings.bins],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Largest absolute log count-ratio between two histograms over bins
/// populated at least `MIN_BIN_COUNT` times in both.
pub fn max_log_ratio(a: &[u64], b: &[u64]) -> Result<f64> {
    let mut worst: Option<f64> = None;
    for (&x, &y) in a.iter().zip(b) {
        if x.min(y) >= MIN_BIN_COUNT {
            let r = ((x as f64) / (y as f64)).ln().abs();
            worst = Some(worst.map_or(r, |w| w.max(r)));
        } else if x.max(y) >= MIN_BIN_COUNT && x.min(y) == 0 {
            return Ok(f64::INFINITY);
        }
    }
    worst.ok_or_else(|| Error::InsufficientData("every bin fell below the count floor".into()))
}

/// Runs `mech` on `reports` and on the neighbour that differs only at `i`,
/// and compares the output histograms.
///
/// An audit can refute a privacy claim but never prove one.
pub fn dp_audit<M>(
    mech: M,
    reports: &[Report],
    i: usize,
    flipped: Report,
    epsilon_claimed: f64,
    settings: &AuditSettings,
) -> Result<DpAuditReport>
where
    M: Fn(&[Report], &mut SimRng) -> f64 + Sync,
{
    dp_audit_histograms(mech, reports, i, flipped, epsilon_claimed, settings).map(|a| a.report)
}

/// A [`DpAuditReport`] together with the two histograms behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct DpAudit {
    pub report: DpAuditReport,
    pub original: Vec<u64>,
    pub neighbour: Vec<u64>,
}

pub fn dp_audit_histograms<M>(
    mech: M,
    reports: &[Report],
    i: usize,
    flipped: Report,
    epsilon_claimed: f64,
    settings: &AuditSettings,
) -> Result<DpAudit>
where
    M: Fn(&[Report], &mut SimRng) -> f64 + Sync,
{
    ensure_positive("epsilon_claimed", epsilon_claimed)?;
    if settings.trials < 100_000 {
        return Err(Error::invalid(
            "trials",
            "an audit needs at least 1e5 trials",
        ));
    }
    if settings.bins < 2 {
        return Err(Error::invalid("bins", "need at least two bins"));
    }
    if !(settings.range.1 > settings.range.0) {
        return Err(Error::invalid("range", "empty observable range"));
    }
    if i >= reports.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: reports.len(),
        });
    }
    if reports[i] == flipped {
        return Err(Error::invalid(
            "flipped",
            "neighbouring inputs are identical",
        ));
    }
    let mut neighbour = reports.to_vec();
    neighbour[i] = flipped;

    let a = histogram(
        &mech,
        reports,
        settings,
        derive_seed(settings.seed, "audit-a"),
    );
    let b = histogram(
        &mech,
        &neighbour,
        settings,
        derive_seed(settings.seed, "audit-b"),
    );
    let ratio = max_log_ratio(&a, &b)?;
    Ok(DpAudit {
        report: DpAuditReport {
            epsilon_claimed,
            max_log_ratio: ratio,
            bins: settings.bins,
            trials: settings.trials,
            tolerance: settings.tolerance,
            verdict: Verdict::from_bool(ratio <= epsilon_claimed + settings.tolerance),
        },
        original: a,
        neighbour: b,
    })
}
