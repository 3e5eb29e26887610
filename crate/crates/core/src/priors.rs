//! Exchangeable priors over (bit, cost) populations.
//!
//! A latent frequency `theta` is drawn from the mixing distribution; bits
//! are then i.i.d. Bernoulli(`theta`) and each agent's cost is drawn from
//! the cost distribution selected by that agent's own bit. Costs therefore
//! carry no information about other agents' bits beyond the agent's bit.

use rand_distr::{Beta, Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{
    Binomial as BinomialLaw, ContinuousCDF, DiscreteCDF, Normal as NormalLaw,
};

use crate::agents::AgentType;
use crate::error::{ensure_open_unit, ensure_positive, Error, Result};
use crate::privacy::{clamp_unit, NoiseSpec};
use crate::rng::{open_unit, stream_rng, SimRng};
use crate::stats::{par_mean, MeanEstimate};

/// Resolution of the cost axis searched by [`cost_threshold`].
pub const COST_GRID_STEP: f64 = 1e-4;
/// Quantile of the cost distributions beyond which the threshold search
/// gives up.
pub const SEARCH_CAP_QUANTILE: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    ConditionalIid,
    /// Bits independent with constant frequency equal to the mixing mean.
    IndependentBits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mixing {
    Beta {
        a: f64,
        b: f64,
    },
    /// `(weight, theta)` pairs; weights need not be normalized.
    PointMasses {
        atoms: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostDist {
    Uniform {
        lo: f64,
        hi: f64,
    },
    PointMass {
        value: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Log-normal conditioned on not exceeding `cap`.
    #[serde(rename = "lognormal")]
    LogNormal {
        mu: f64,
        sigma: f64,
        cap: f64,
    },
}

impl CostDist {
    fn validate(&self, name: &'static str) -> Result<()> {
        let ok = match *self {
            CostDist::Uniform { lo, hi } => lo >= 0.0 && hi >= lo && hi.is_finite(),
            CostDist::PointMass { value } => value >= 0.0 && value.is_finite(),
            CostDist::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            CostDist::LogNormal { mu, sigma, cap } => {
                mu.is_finite() && sigma > 0.0 && sigma.is_finite() && cap > 0.0 && cap.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                name,
                format!("{self:?} is not a valid cost distribution"),
            ))
        }
    }

    fn log_normal_mass_below_cap(mu: f64, sigma: f64, cap: f64) -> f64 {
        standard_normal().cdf((cap.ln() - mu) / sigma)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            CostDist::Uniform { lo, hi } => {
                if x >= hi {
                    1.0
                } else if x < lo {
                    0.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            CostDist::PointMass { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            CostDist::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-rate * x).exp()
                }
            }
            CostDist::LogNormal { mu, sigma, cap } => {
                if x >= cap {
                    1.0
                } else if x <= 0.0 {
                    0.0
                } else {
                    standard_normal().cdf((x.ln() - mu) / sigma)
                        / Self::log_normal_mass_below_cap(mu, sigma, cap)
                }
            }
        }
    }

    /// Smallest `x` with `cdf(x) >= q`, for `q` in [0, 1).
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            CostDist::Uniform { lo, hi } => lo + (hi - lo) * q,
            CostDist::PointMass { value } => value,
            CostDist::Exponential { rate } => -(-q).ln_1p() / rate,
            CostDist::LogNormal { mu, sigma, cap } => {
                let mass = Self::log_normal_mass_below_cap(mu, sigma, cap);
                if q <= 0.0 {
                    0.0
                } else {
                    (mu + sigma * standard_normal().inverse_cdf(q * mass))
                        .exp()
                        .min(cap)
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            CostDist::PointMass { value } => value,
            _ => self.quantile(open_unit(rng)),
        }
    }

    fn atom(&self) -> Option<f64> {
        match *self {
            CostDist::PointMass { value } => Some(value),
            CostDist::Uniform { lo, hi } if lo == hi => Some(lo),
            _ => None,
        }
    }
}

fn standard_normal() -> NormalLaw {
    NormalLaw::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub family: PriorFamily,
    pub mixing: Mixing,
    pub cost0: CostDist,
    pub cost1: CostDist,
}

impl PriorSpec {
    pub fn beta(a: f64, b: f64, cost0: CostDist, cost1: CostDist) -> Self {
        Self {
            family: PriorFamily::ConditionalIid,
            mixing: Mixing::Beta { a, b },
            cost0,
            cost1,
        }
    }

    pub fn point_mass(theta: f64, cost0: CostDist, cost1: CostDist) -> Self {
        Self {
            family: PriorFamily::ConditionalIid,
            mixing: Mixing::PointMasses {
                atoms: vec![(1.0, theta)],
            },
            cost0,
            cost1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mixing {
            Mixing::Beta { a, b } => {
                ensure_positive("mixing.a", *a)?;
                ensure_positive("mixing.b", *b)?;
            }
            Mixing::PointMasses { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::invalid("mixing.atoms", "no atoms"));
                }
                for &(w, theta) in atoms {
                    if !(w >= 0.0 && w.is_finite()) || !(0.0..=1.0).contains(&theta) {
                        return Err(Error::invalid(
                            "mixing.atoms",
                            format!("bad atom (weight {w}, theta {theta})"),
                        ));
                    }
                }
                if atoms.iter().map(|a| a.0).sum::<f64>() <= 0.0 {
                    return Err(Error::invalid("mixing.atoms", "weights sum to zero"));
                }
            }
        }
        self.cost0.validate("cost0")?;
        self.cost1.validate("cost1")
    }

    pub fn cost_dist(&self, bit: u8) -> &CostDist {
        if bit == 0 {
            &self.cost0
        } else {
            &self.cost1
        }
    }

    fn mixing_mean(&self) -> f64 {
        match &self.mixing {
            Mixing::Beta { a, b } => a / (a + b),
            Mixing::PointMasses { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.0).sum();
                atoms.iter().map(|&(w, t)| w * t).sum::<f64>() / total
            }
        }
    }

    fn draw_theta(&self, rng: &mut SimRng, given_bit: Option<u8>) -> f64 {
        if self.family == PriorFamily::IndependentBits {
            return self.mixing_mean();
        }
        match &self.mixing {
            Mixing::Beta { a, b } => {
                let (a, b) = match given_bit {
                    Some(1) => (a + 1.0, *b),
                    Some(_) => (*a, b + 1.0),
                    None => (*a, *b),
                };
                Beta::new(a, b).expect("validated beta").sample(rng)
            }
            Mixing::PointMasses { atoms } => {
                let weight = |&(w, t): &(f64, f64)| match given_bit {
                    Some(1) => w * t,
                    Some(_) => w * (1.0 - t),
                    None => w,
                };
                let total: f64 = atoms.iter().map(weight).sum();
                let mut u = open_unit(rng) * total;
                for atom in atoms {
                    u -= weight(atom);
                    if u < 0.0 {
                        return atom.1;
                    }
                }
                atoms
                    .iter()
                    .rev()
                    .find(|a| weight(a) > 0.0)
                    .map_or(0.0, |a| a.1)
            }
        }
    }

    /// Latent frequency drawn from the prior.
    pub fn sample_theta(&self, rng: &mut SimRng) -> f64 {
        self.draw_theta(rng, None)
    }

    /// Latent frequency drawn from its posterior after observing one bit.
    pub fn sample_theta_given_bit(&self, rng: &mut SimRng, bit: u8) -> f64 {
        self.draw_theta(rng, Some(bit))
    }

    pub fn sample_agent(&self, theta: f64, rng: &mut SimRng) -> AgentType {
        let bit = u8::from(open_unit(rng) < theta);
        let cost = self.cost_dist(bit).sample(rng);
        AgentType { bit, cost }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<AgentType>,
}

impl Population {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn bits(&self) -> impl Iterator<Item = u8> + '_ {
        self.agents.iter().map(|a| a.bit)
    }

    pub(crate) fn sample_with(prior: &PriorSpec, n: usize, rng: &mut SimRng) -> Self {
        let theta = prior.sample_theta(rng);
        let agents = (0..n).map(|_| prior.sample_agent(theta, rng)).collect();
        Self { agents }
    }
}

pub fn sample_population(prior: &PriorSpec, n: usize, seed: u64) -> Result<Population> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "population must be nonempty"));
    }
    Ok(Population::sample_with(prior, n, &mut stream_rng(seed, 0)))
}

/// `Pr[b_j = 1 | b_i = bit]` for two distinct agents, in closed form.
pub fn posterior_bit_prob(prior: &PriorSpec, bit: u8) -> Result<f64> {
    prior.validate()?;
    if bit > 1 {
        return Err(Error::invalid("bit", format!("{bit} is not a bit")));
    }
    if prior.family == PriorFamily::IndependentBits {
        return Ok(prior.mixing_mean());
    }
    match &prior.mixing {
        Mixing::Beta { a, b } => Ok(if bit == 1 {
            (a + 1.0) / (a + b + 1.0)
        } else {
            a / (a + b + 1.0)
        }),
        Mixing::PointMasses { atoms } => {
            let like = |t: f64| if bit == 1 { t } else { 1.0 - t };
            let evidence: f64 = atoms.iter().map(|&(w, t)| w * like(t)).sum();
            if evidence <= 0.0 {
                return Err(Error::invalid(
                    "bit",
                    format!("observing bit {bit} has zero prior probability"),
                ));
            }
            Ok(atoms.iter().map(|&(w, t)| w * like(t) * t).sum::<f64>() / evidence)
        }
    }
}

/// `(p0, p1)` from [`posterior_bit_prob`], rejecting priors under which the
/// two posteriors coincide.
pub fn posterior_gap(prior: &PriorSpec) -> Result<(f64, f64)> {
    let p0 = posterior_bit_prob(prior, 0)?;
    let p1 = posterior_bit_prob(prior, 1)?;
    if p0 == p1 {
        return Err(Error::DegeneratePrior { p: p0 });
    }
    Ok((p0, p1))
}

/// Monte Carlo estimate of `E[p~_{-i} | b_i = bit]` when every other agent
/// reports truthfully.
///
/// The sum of the other `n - 1` bits is drawn as Binomial(`n - 1`, `theta`)
/// with `theta` from its posterior, which has the same law as drawing the
/// bits one by one.
pub fn posterior_clamped_mean(
    prior: &PriorSpec,
    bit: u8,
    n: usize,
    noise: &NoiseSpec,
    samples: u64,
    seed: u64,
) -> Result<MeanEstimate> {
    prior.validate()?;
    if n < 2 {
        return Err(Error::invalid("n", "need at least two agents"));
    }
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    if bit > 1 {
        return Err(Error::invalid("bit", format!("{bit} is not a bit")));
    }
    let others = (n - 1) as u64;
    Ok(par_mean(samples, seed, |rng| {
        let theta = prior.sample_theta_given_bit(rng, bit);
        let sum = Binomial::new(others, theta)
            .expect("theta in [0,1]")
            .sample(rng);
        clamp_unit((sum as f64 + noise.draw(rng)) / others as f64)
    }))
}

/// The two components of the cost threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostThreshold {
    /// Population-level component: with probability at least `1 - delta`, a
    /// `1 - alpha` fraction of agents have cost at or below it.
    pub tau_population: f64,
    /// Per-agent component: given either bit, another agent's cost is at
    /// or below it with probability at least `1 - alpha`.
    pub tau_conditional: f64,
    pub tau: f64,
}

/// Cost threshold `max(tau_population, tau_conditional)`.
///
/// The population component is searched on a grid of [`COST_GRID_STEP`].
/// Its tail probability is exact when every agent's cost law is the same
/// (or the mixing is a finite set of atoms); otherwise it averages exact
/// binomial tails over `trials` draws of `theta`, reusing the draws for
/// every candidate so the estimate stays monotone.
pub fn cost_threshold(
    prior: &PriorSpec,
    alpha: f64,
    delta: f64,
    n: usize,
    trials: u64,
    seed: u64,
) -> Result<CostThreshold> {
    prior.validate()?;
    ensure_open_unit("alpha", alpha)?;
    ensure_open_unit("delta", delta)?;
    if n < 2 {
        return Err(Error::invalid("n", "need at least two agents"));
    }
    let cap = prior
        .cost0
        .quantile(SEARCH_CAP_QUANTILE)
        .max(prior.cost1.quantile(SEARCH_CAP_QUANTILE));

    let tau_conditional = conditional_threshold(prior, 1.0 - alpha)?;
    if tau_conditional > cap {
        return Err(Error::UnboundedQuantile { cap });
    }

    let thetas = theta_support(prior, trials, seed);
    let needed = ((1.0 - alpha) * n as f64 - 1e-9).ceil().max(0.0) as u64;
    let holds = |tau: f64| -> bool {
        let f0 = prior.cost0.cdf(tau);
        let f1 = prior.cost1.cdf(tau);
        let prob = if f0 == f1 {
            binomial_upper_tail(n as u64, f0, needed)
        } else {
            thetas
                .iter()
                .map(|&(w, theta)| {
                    w * binomial_upper_tail(n as u64, theta * f1 + (1.0 - theta) * f0, needed)
                })
                .sum()
        };
        prob >= 1.0 - delta
    };

    let last = (cap / COST_GRID_STEP).ceil() as u64;
    let grid = |k: u64| k as f64 / (1.0 / COST_GRID_STEP);
    if !holds(grid(last)) {
        return Err(Error::UnboundedQuantile { cap });
    }
    let (mut lo, mut hi) = (0u64, last);
    if holds(grid(0)) {
        hi = 0;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(grid(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut tau_population = grid(hi);
    // An atom inside the last grid cell is the exact infimum.
    for atom in [prior.cost0.atom(), prior.cost1.atom()]
        .into_iter()
        .flatten()
    {
        if atom < tau_population && atom > tau_population - COST_GRID_STEP && holds(atom) {
            tau_population = atom;
        }
    }
    Ok(CostThreshold {
        tau_population,
        tau_conditional,
        tau: tau_population.max(tau_conditional),
    })
}

/// Weighted `theta` values representing the mixing law: exact atoms when
/// the law is discrete, Monte Carlo draws otherwise.
fn theta_support(prior: &PriorSpec, trials: u64, seed: u64) -> Vec<(f64, f64)> {
    if prior.family == PriorFamily::IndependentBits {
        return vec![(1.0, prior.mixing_mean())];
    }
    match &prior.mixing {
        Mixing::PointMasses { atoms } => {
            let total: f64 = atoms.iter().map(|a| a.0).sum();
            atoms.iter().map(|&(w, t)| (w / total, t)).collect()
        }
        Mixing::Beta { .. } => {
            let trials = trials.max(1);
            let w = 1.0 / trials as f64;
            (0..trials)
                .map(|t| (w, prior.sample_theta(&mut stream_rng(seed, t))))
                .collect()
        }
    }
}

/// Smallest cost `tau` such that, conditioned on either bit, another
/// agent's cost is at most `tau` with probability at least `q`.
fn conditional_threshold(prior: &PriorSpec, q: f64) -> Result<f64> {
    let mut tau: f64 = 0.0;
    for bit in 0..=1u8 {
        let w1 = match posterior_bit_prob(prior, bit) {
            Ok(p) => p,
            // The bit never occurs, so its condition is vacuous.
            Err(Error::InvalidParameter { name: "bit", .. }) => continue,
            Err(e) => return Err(e),
        };
        tau = tau.max(mixture_quantile(w1, &prior.cost0, &prior.cost1, q));
    }
    Ok(tau)
}

fn mixture_quantile(w1: f64, d0: &CostDist, d1: &CostDist, q: f64) -> f64 {
    if d0 == d1 || w1 == 0.0 {
        return d0.quantile(q);
    }
    if w1 == 1.0 {
        return d1.quantile(q);
    }
    let cdf = |x: f64| w1 * d1.cdf(x) + (1.0 - w1) * d0.cdf(x);
    let (q0, q1) = (d0.quantile(q), d1.quantile(q));
    let (mut lo, mut hi) = (q0.min(q1), q0.max(q1));
    if cdf(lo) >= q {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) >= q {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    for atom in [d0.atom(), d1.atom()].into_iter().flatten() {
        if atom > lo && atom <= hi {
            return atom;
        }
    }
    hi
}

/// `Pr[Binomial(n, p) >= k]`.
fn binomial_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    BinomialLaw::new(p, n).expect("valid binomial").sf(k - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform01() -> CostDist {
        CostDist::Uniform { lo: 0.0, hi: 1.0 }
    }

    #[test]
    fn beta_posteriors() {
        let p = PriorSpec::beta(1.0, 1.0, uniform01(), uniform01());
        assert!((posterior_bit_prob(&p, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((posterior_bit_prob(&p, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let p = PriorSpec::beta(2.0, 2.0, uniform01(), uniform01());
        assert!((posterior_bit_prob(&p, 1).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn point_mass_posterior_is_flat_and_flagged() {
        let p = PriorSpec::point_mass(0.5, uniform01(), uniform01());
        assert_eq!(posterior_bit_prob(&p, 0).unwrap(), 0.5);
        assert_eq!(posterior_bit_prob(&p, 1).unwrap(), 0.5);
        assert_eq!(posterior_gap(&p), Err(Error::DegeneratePrior { p: 0.5 }));
    }

    #[test]
    fn two_atom_mixture_posterior() {
        // Weighted Bayes rule by hand: atoms 0.2 and 0.8, equal weight.
        let p = PriorSpec {
            family: PriorFamily::ConditionalIid,
            mixing: Mixing::PointMasses {
                atoms: vec![(1.0, 0.2), (1.0, 0.8)],
            },
            cost0: uniform01(),
            cost1: uniform01(),
        };
        let p1 = (0.2 * 0.2 + 0.8 * 0.8) / (0.2 + 0.8);
        let p0 = (0.8 * 0.2 + 0.2 * 0.8) / (0.8 + 0.2);
        assert!((posterior_bit_prob(&p, 1).unwrap() - p1).abs() < 1e-15);
        assert!((posterior_bit_prob(&p, 0).unwrap() - p0).abs() < 1e-15);
    }

    #[test]
    fn independent_bits_use_mixing_mean() {
        let mut p = PriorSpec::beta(1.0, 3.0, uniform01(), uniform01());
        p.family = PriorFamily::IndependentBits;
        assert_eq!(posterior_bit_prob(&p, 0).unwrap(), 0.25);
        assert_eq!(posterior_bit_prob(&p, 1).unwrap(), 0.25);
    }

    #[test]
    fn invalid_priors_rejected() {
        let p = PriorSpec::beta(0.0, 1.0, uniform01(), uniform01());
        assert!(p.validate().is_err());
        let p = PriorSpec::beta(1.0, 1.0, CostDist::Exponential { rate: -1.0 }, uniform01());
        assert!(p.validate().is_err());
        let p = PriorSpec::point_mass(1.5, uniform01(), uniform01());
        assert!(p.validate().is_err());
    }

    #[test]
    fn degenerate_population() {
        let p = PriorSpec::point_mass(
            1.0,
            CostDist::PointMass { value: 0.2 },
            CostDist::PointMass { value: 0.2 },
        );
        let pop = sample_population(&p, 3, 9).unwrap();
        assert_eq!(pop.bits().collect::<Vec<_>>(), vec![1, 1, 1]);
        assert!(pop.agents.iter().all(|a| a.cost == 0.2));
    }

    #[test]
    fn population_is_deterministic() {
        let p = PriorSpec::beta(1.0, 1.0, uniform01(), CostDist::Exponential { rate: 2.0 });
        assert_eq!(
            sample_population(&p, 50, 4).unwrap(),
            sample_population(&p, 50, 4).unwrap()
        );
        assert_ne!(
            sample_population(&p, 50, 4).unwrap(),
            sample_population(&p, 50, 5).unwrap()
        );
        assert!(sample_population(&p, 0, 4).is_err());
    }

    #[test]
    fn cdf_quantile_consistency() {
        let dists = [
            uniform01(),
            CostDist::Uniform { lo: 0.5, hi: 2.0 },
            CostDist::Exponential { rate: 3.0 },
            CostDist::LogNormal {
                mu: -1.0,
                sigma: 0.5,
                cap: 2.0,
            },
        ];
        for d in dists {
            for i in 1..100 {
                let q = i as f64 / 100.0;
                let x = d.quantile(q);
                assert!((d.cdf(x) - q).abs() < 1e-9, "{d:?} q={q}");
            }
        }
    }

    #[test]
    fn lognormal_samples_respect_cap() {
        let d = CostDist::LogNormal {
            mu: 0.0,
            sigma: 2.0,
            cap: 0.5,
        };
        let mut rng = stream_rng(1, 1);
        for _ in 0..10_000 {
            let c = d.sample(&mut rng);
            assert!((0.0..=0.5).contains(&c));
        }
    }

    #[test]
    fn threshold_of_point_masses() {
        let zero = CostDist::PointMass { value: 0.0 };
        let p = PriorSpec::beta(1.0, 1.0, zero, zero);
        let t = cost_threshold(&p, 0.1, 0.1, 50, 100, 0).unwrap();
        assert_eq!(t.tau, 0.0);

        let c = CostDist::PointMass { value: 0.7 };
        let p = PriorSpec::beta(1.0, 1.0, c, c);
        for (alpha, delta) in [(0.1, 0.1), (0.3, 0.01), (0.05, 0.5)] {
            assert_eq!(
                cost_threshold(&p, alpha, delta, 50, 100, 0).unwrap().tau,
                0.7
            );
        }

        let c = CostDist::PointMass { value: 0.70005 };
        let p = PriorSpec::beta(1.0, 1.0, c, c);
        assert_eq!(
            cost_threshold(&p, 0.1, 0.1, 50, 100, 0).unwrap().tau,
            0.70005
        );
    }

    #[test]
    fn conditional_threshold_uses_posterior_mixture() {
        // Bit-0 agents cost 0, bit-1 agents cost 1. Given b_i = 0, another
        // agent has bit 1 with probability 1/3, so min-probability 0.9
        // forces tau = 1; at 0.6 the zero atom suffices for b_i = 0 but
        // not for b_i = 1 (p1 = 2/3 > 0.4).
        let p = PriorSpec::beta(
            1.0,
            1.0,
            CostDist::PointMass { value: 0.0 },
            CostDist::PointMass { value: 1.0 },
        );
        assert_eq!(conditional_threshold(&p, 0.9).unwrap(), 1.0);
        assert_eq!(conditional_threshold(&p, 0.3).unwrap(), 0.0);
        assert_eq!(conditional_threshold(&p, 0.6).unwrap(), 1.0);
    }

    #[test]
    fn unbounded_threshold_flagged() {
        // Costs are Exp(1) and every agent must lie below the cap.
        let e = CostDist::Exponential { rate: 1.0 };
        let p = PriorSpec::beta(1.0, 1.0, e, e);
        let r = cost_threshold(&p, 1e-7, 1e-9, 10_000_000, 10, 0);
        assert!(matches!(r, Err(Error::UnboundedQuantile { .. })), "{r:?}");
    }

    #[test]
    fn binomial_tail_edges() {
        assert_eq!(binomial_upper_tail(10, 0.3, 0), 1.0);
        assert_eq!(binomial_upper_tail(10, 0.3, 11), 0.0);
        assert_eq!(binomial_upper_tail(10, 1.0, 10), 1.0);
        assert_eq!(binomial_upper_tail(10, 0.0, 1), 0.0);
        assert!((binomial_upper_tail(2, 0.5, 2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clamped_mean_without_noise_on_fair_coin() {
        let p = PriorSpec::point_mass(0.5, uniform01(), uniform01());
        let noise = NoiseSpec::disabled_for_tests();
        for bit in 0..=1 {
            let m = posterior_clamped_mean(&p, bit, 2001, &noise, 20_000, 3).unwrap();
            assert!((m.mean - 0.5).abs() < 1e-3, "{m:?}");
        }
    }

    #[test]
    fn prior_json_round_trip() {
        let p = PriorSpec {
            family: PriorFamily::ConditionalIid,
            mixing: Mixing::PointMasses {
                atoms: vec![(0.5, 0.2), (0.5, 0.9)],
            },
            cost0: CostDist::LogNormal {
                mu: 0.0,
                sigma: 1.0,
                cap: 5.0,
            },
            cost1: CostDist::Exponential { rate: 2.0 },
        };
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"family\":\"conditional_iid\""));
        assert!(text.contains("\"cost0\""));
        assert_eq!(serde_json::from_str::<PriorSpec>(&text).unwrap(), p);
    }
}
