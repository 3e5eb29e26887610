//! The survey mechanism: sum the reports, perturb the sum once with Laplace
//! noise, pay every participant by how well its report's posterior predicts
//! the noisy average of the others, and publish the noisy average.

use serde::{Deserialize, Serialize};

use crate::agents::payment_for;
use crate::error::{ensure_open_unit, ensure_positive, ensure_probability, Error, Result};
use crate::priors::Population;
use crate::privacy::{estimate_from_b_bar, peer_estimate_from_b_bar, NoiseMode, NoiseSpec};
use crate::rng::SimRng;
use crate::scoring::ScoringParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Zero,
    One,
    /// Declined to participate.
    Abstain,
}

impl Report {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Report::Zero
        } else {
            Report::One
        }
    }

    pub fn bit(self) -> Option<u8> {
        match self {
            Report::Zero => Some(0),
            Report::One => Some(1),
            Report::Abstain => None,
        }
    }

    /// Contribution to the reported sum; abstentions count as zero.
    pub fn counted_bit(self) -> u8 {
        self.bit().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub p0: f64,
    pub p1: f64,
    /// Floor payments at zero. The analysed mechanism pays negative
    /// amounts to liars, so this changes its incentives.
    #[serde(default)]
    pub clamp_payments: bool,
    #[serde(skip, default = "sampled_noise")]
    noise: NoiseMode,
}

fn sampled_noise() -> NoiseMode {
    NoiseMode::Sample
}

impl MechanismConfig {
    pub fn new(n: usize, alpha: f64, beta: f64, epsilon: f64, p0: f64, p1: f64) -> Result<Self> {
        let config = Self {
            n,
            alpha,
            beta,
            epsilon,
            p0,
            p1,
            clamp_payments: false,
            noise: NoiseMode::Sample,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_clamped_payments(mut self, clamp: bool) -> Self {
        self.clamp_payments = clamp;
        self
    }

    /// Replaces the Laplace draw with a test hook.
    pub fn with_test_noise(mut self, mode: NoiseMode) -> Self {
        self.noise = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n", "need at least two agents"));
        }
        ensure_open_unit("alpha", self.alpha)?;
        ensure_positive("beta", self.beta)?;
        ensure_positive("epsilon", self.epsilon)?;
        ensure_probability("p0", self.p0)?;
        ensure_probability("p1", self.p1)?;
        self.scoring_params().map(|_| ())
    }

    pub fn scoring_params(&self) -> Result<ScoringParams> {
        ScoringParams::new(self.p0, self.p1, self.alpha, self.beta)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        match self.noise {
            NoiseMode::Sample => NoiseSpec {
                epsilon: self.epsilon,
                mode: NoiseMode::Sample,
            },
            NoiseMode::Disabled => NoiseSpec::disabled_for_tests(),
            NoiseMode::Fixed(x) => NoiseSpec::fixed_for_tests(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub estimate: f64,
    pub payments: Vec<f64>,
    /// Noisy report sum. Not published.
    pub b_bar: f64,
    /// Not published.
    pub noise_draw: f64,
}

/// What everyone other than agent `i` gets to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableView {
    pub estimate: f64,
    pub payments: Vec<f64>,
}

impl MechanismOutcome {
    pub fn observable_view(&self, i: usize) -> Result<ObservableView> {
        if i >= self.payments.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.payments.len(),
            });
        }
        let payments = self
            .payments
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &p)| p)
            .collect();
        Ok(ObservableView {
            estimate: self.estimate,
            payments,
        })
    }

    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }
}

/// A configured mechanism with its scoring parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mechanism {
    config: MechanismConfig,
    params: ScoringParams,
}

impl Mechanism {
    pub fn new(config: MechanismConfig) -> Result<Self> {
        config.validate()?;
        let params = config.scoring_params()?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn params(&self) -> &ScoringParams {
        &self.params
    }

    /// Payment to an agent that reported `report`, given only the noisy
    /// sum. Every payment is a function of these two values.
    pub fn billboard_payment(&self, report: Report, b_bar: f64) -> f64 {
        let peer = peer_estimate_from_b_bar(b_bar, report.counted_bit(), self.config.n);
        payment_for(&self.params, self.config.clamp_payments, peer, report)
    }

    /// Runs the mechanism. The single noise draw is the only randomness
    /// consumed from `rng`.
    pub fn run(&self, reports: &[Report], rng: &mut SimRng) -> Result<MechanismOutcome> {
        let n = self.config.n;
        if reports.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: reports.len(),
            });
        }
        let bhat: u64 = reports.iter().map(|r| u64::from(r.counted_bit())).sum();
        let noise_draw = self.config.noise_spec().draw(rng);
        let b_bar = bhat as f64 + noise_draw;
        // Only two distinct payments exist, one per reported bit.
        let pay_zero = self.billboard_payment(Report::Zero, b_bar);
        let pay_one = self.billboard_payment(Report::One, b_bar);
        let payments = reports
            .iter()
            .map(|r| match r {
                Report::Zero => pay_zero,
                Report::One => pay_one,
                Report::Abstain => 0.0,
            })
            .collect();
        Ok(MechanismOutcome {
            estimate: estimate_from_b_bar(b_bar, n),
            payments,
            b_bar,
            noise_draw,
        })
    }
}

pub fn run(
    config: &MechanismConfig,
    reports: &[Report],
    rng: &mut SimRng,
) -> Result<MechanismOutcome> {
    Mechanism::new(*config)?.run(reports, rng)
}

/// Fraction of the population holding bit 1.
pub fn true_statistic(population: &Population) -> Result<f64> {
    if population.agents.is_empty() {
        return Err(Error::invalid("population", "empty population"));
    }
    let ones = population.bits().filter(|&b| b == 1).count();
    Ok(ones as f64 / population.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentType;
    use crate::rng::stream_rng;
    use crate::scoring::scaled_score;

    fn quiet(n: usize) -> MechanismConfig {
        MechanismConfig::new(n, 0.1, 1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0)
            .unwrap()
            .with_test_noise(NoiseMode::Disabled)
    }

    fn population(bits: &[u8]) -> Population {
        Population {
            agents: bits
                .iter()
                .map(|&b| AgentType::new(b, 0.0).unwrap())
                .collect(),
        }
    }

    #[test]
    fn all_abstain() {
        let out = run(&quiet(5), &[Report::Abstain; 5], &mut stream_rng(0, 0)).unwrap();
        assert_eq!(out.estimate, 0.0);
        assert_eq!(out.b_bar, 0.0);
        assert!(out.payments.iter().all(|&p| p == 0.0));
        let view = out.observable_view(2).unwrap();
        assert_eq!(view.payments, vec![0.0; 4]);
    }

    #[test]
    fn sixty_forty_split() {
        let mut reports = vec![Report::One; 60];
        reports.extend(vec![Report::Zero; 40]);
        let config = quiet(100);
        let out = run(&config, &reports, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(out.estimate, 0.6);
        // Hand evaluation: c = 0, |p1 - p0| = 1/3,
        // d = 1/2 - (3/2)(1/9) + 2(0.1)(1/3) = 0.4,
        // rho = 1 / (2/9 - 0.4/3) = 11.25.
        let params = config.scoring_params().unwrap();
        assert!(params.c.abs() < 1e-15);
        assert!((params.d - 0.4).abs() < 1e-15);
        assert!((params.rho - 11.25).abs() < 1e-12);
        let peer_one = 59.0 / 99.0;
        let b = 1.0 - 2.0 * (peer_one - 2.0 * peer_one * (2.0 / 3.0) + 4.0 / 9.0);
        let expected_one = 11.25 * (b - 0.4);
        assert!((out.payments[0] - expected_one).abs() < 1e-12);
        assert_eq!(out.payments[0], scaled_score(&params, peer_one, 2.0 / 3.0));
        assert_eq!(
            out.payments[99],
            scaled_score(&params, 60.0 / 99.0, 1.0 / 3.0)
        );
    }

    #[test]
    fn unanimous_reports_are_paid_equally() {
        let out = run(&quiet(10), &[Report::One; 10], &mut stream_rng(0, 0)).unwrap();
        assert_eq!(out.estimate, 1.0);
        assert!(out.payments.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rejects_length_mismatch() {
        let r = run(&quiet(10), &[Report::One; 9], &mut stream_rng(0, 0));
        assert_eq!(
            r,
            Err(Error::LengthMismatch {
                expected: 10,
                got: 9
            })
        );
    }

    #[test]
    fn rejects_invalid_scoring() {
        assert!(MechanismConfig::new(10, 0.2, 1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0).is_err());
        assert!(MechanismConfig::new(10, 0.1, 1.0, 1.0, 0.5, 0.5).is_err());
        assert!(MechanismConfig::new(1, 0.1, 1.0, 1.0, 0.2, 0.8).is_err());
    }

    #[test]
    fn observable_view_projection() {
        let out = MechanismOutcome {
            estimate: 0.4,
            payments: vec![2.0, 3.0, 4.0],
            b_bar: 1.3,
            noise_draw: 0.3,
        };
        let v = out.observable_view(1).unwrap();
        assert_eq!(v.estimate, 0.4);
        assert_eq!(v.payments, vec![2.0, 4.0]);
        assert!(out.observable_view(3).is_err());
    }

    #[test]
    fn true_statistic_examples() {
        assert_eq!(true_statistic(&population(&[1, 1, 1, 1])).unwrap(), 1.0);
        assert_eq!(true_statistic(&population(&[0, 1, 0, 1])).unwrap(), 0.5);
        assert_eq!(true_statistic(&population(&[1, 0, 0, 0, 0])).unwrap(), 0.2);
        assert!(true_statistic(&population(&[])).is_err());
    }

    #[test]
    fn clamped_payments_are_nonnegative() {
        let config = quiet(10).with_clamped_payments(true);
        let mut reports = vec![Report::Zero; 9];
        reports.push(Report::One);
        let out = run(&config, &reports, &mut stream_rng(0, 0)).unwrap();
        assert!(out.payments.iter().all(|&p| p >= 0.0));
        let raw = run(&quiet(10), &reports, &mut stream_rng(0, 0)).unwrap();
        assert!(raw.payments.iter().any(|&p| p < 0.0));
    }

    #[test]
    fn single_noise_draw_reproducible() {
        let config = MechanismConfig::new(50, 0.1, 1.0, 0.3, 0.3, 0.7).unwrap();
        let reports: Vec<Report> = (0..50)
            .map(|i| Report::from_bit((i % 3 == 0) as u8))
            .collect();
        let a = run(&config, &reports, &mut stream_rng(9, 2)).unwrap();
        let b = run(&config, &reports, &mut stream_rng(9, 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.b_bar, 17.0 + a.noise_draw);
    }
}
