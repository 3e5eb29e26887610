//! Brier scoring rules used to price reports.
//!
//! `b_score(p, q)` is the expected Brier payment for predicting `q` when the
//! predicted event occurs with probability `p`. It is linear in `p`, which is
//! what lets noisy peer estimates stand in for the true event probability:
//! the expected score only depends on the mean of the estimate.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_open_unit, ensure_positive, ensure_probability, Error, Result};

/// Brier payment for prediction `q` of a realized indicator `i`.
pub fn basic_brier(i: u8, q: f64) -> Result<f64> {
    if i > 1 {
        return Err(Error::invalid("i", format!("{i} is not a bit")));
    }
    ensure_probability("q", q)?;
    let i = f64::from(i);
    Ok(2.0 * i * q + 2.0 * (1.0 - i) * (1.0 - q) - q * q - (1.0 - q) * (1.0 - q))
}

/// Expected Brier payment `1 - 2(p - 2pq + q^2)`; defined on all reals.
pub fn b_score(p: f64, q: f64) -> f64 {
    1.0 - 2.0 * (p - 2.0 * p * q + q * q)
}

/// Shift-and-scale parameters of the rule `rho * (B(p - c, q - c) - d)`,
/// together with the inputs they were derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub c: f64,
    pub d: f64,
    pub rho: f64,
    pub p0: f64,
    pub p1: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ScoringParams {
    /// Chooses `(c, d, rho)` so that a truthful prediction against its own
    /// posterior earns `beta + 2 rho alpha |p0 - p1|` and a lie earns
    /// `-2 rho alpha |p0 - p1|`, with slack `alpha` on the peer estimate.
    pub fn new(p0: f64, p1: f64, alpha: f64, beta: f64) -> Result<Self> {
        ensure_probability("p0", p0)?;
        ensure_probability("p1", p1)?;
        ensure_open_unit("alpha", alpha)?;
        ensure_positive("beta", beta)?;
        if p0 == p1 {
            return Err(Error::DegeneratePrior { p: p0 });
        }
        let gap = (p0 - p1).abs();
        if alpha >= gap / 2.0 {
            return Err(Error::AlphaTooLarge {
                alpha,
                limit: gap / 2.0,
            });
        }
        let c = (p0 + p1 - 1.0) / 2.0;
        let d = 0.5 - 1.5 * (p1 - p0) * (p1 - p0) + 2.0 * alpha * gap;
        let rho = beta / (2.0 * (p1 - p0) * (p1 - p0) - 4.0 * alpha * gap);
        Ok(Self {
            c,
            d,
            rho,
            p0,
            p1,
            alpha,
            beta,
        })
    }

    /// Posterior prediction attached to a reported bit.
    pub fn prediction(&self, bit: u8) -> f64 {
        if bit == 0 {
            self.p0
        } else {
            self.p1
        }
    }

    pub fn gap(&self) -> f64 {
        (self.p0 - self.p1).abs()
    }

    /// Lipschitz constant of `p -> scaled_score(self, p, q)`.
    pub fn lipschitz(&self, q: f64) -> f64 {
        (self.rho * (2.0 - 4.0 * (q - self.c))).abs()
    }

    /// Expected payment to a truthful reporter whose peers match the
    /// posterior exactly.
    pub fn truthful_payoff(&self) -> f64 {
        2.0 * self.rho * self.alpha * self.gap() + self.beta
    }

    pub fn lying_payoff(&self) -> f64 {
        -2.0 * self.rho * self.alpha * self.gap()
    }

    /// Upper bound on the expected truthful payment when the peer estimate
    /// is within `alpha_prime` of the posterior.
    pub fn payment_upper_bound(&self, alpha_prime: f64) -> f64 {
        self.beta + 2.0 * self.rho * (self.alpha + alpha_prime) * self.gap()
    }
}

pub fn scaled_score(params: &ScoringParams, p: f64, q: f64) -> f64 {
    params.rho * (b_score(p - params.c, q - params.c) - params.d)
}
