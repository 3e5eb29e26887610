//! Parameter rules and the Monte Carlo experiments that check the
//! mechanism's equilibrium, accuracy, and total-cost guarantees.

use serde::{Deserialize, Serialize};

use crate::agents::{
    payment_for, privacy_cost_bound, sample_peer_estimates, utility_from_samples, Action,
    AgentType, CostModel, CostModelKind, OffThreshold, Strategy, StrategyProfile, UtilityEstimate,
};
use crate::error::{ensure_open_unit, ensure_positive, Error, Result};
use crate::mechanism::{true_statistic, Mechanism, MechanismConfig, Report};
use crate::priors::{cost_threshold, posterior_clamped_mean, Population, PriorSpec};
use crate::privacy::{NoiseMode, NoiseSpec};
use crate::rng::derive_seed;
use crate::stats::{binomial_sigma, ols_slope, par_trials, MeanEstimate, Verdict};

/// Probe agents sit just below the threshold, where participating is
/// hardest to justify.
pub const PROBE_COST_FACTOR: f64 = 1.0 - 1e-6;
pub const DEFAULT_POSTERIOR_SAMPLES: u64 = 1_000_000;
pub const DEFAULT_THRESHOLD_TRIALS: u64 = 20_000;
/// Accepted range for the fitted log-log slope of total payment against n.
pub const SLOPE_RANGE: (f64, f64) = (-1.2, -0.8);

/// Surplus payment that covers the worst-case privacy cost of an agent at
/// the threshold.
pub fn beta_rule(model: CostModelKind, epsilon: f64, tau: f64) -> Result<f64> {
    ensure_positive("epsilon", epsilon)?;
    if !(tau > 0.0) {
        return Err(Error::invalid(
            "tau",
            format!("{tau}: the surplus payment must be positive"),
        ));
    }
    match model {
        CostModelKind::LinearBound => Ok(epsilon * tau),
        CostModelKind::ChenBound if epsilon > 1.0 => Err(Error::invalid(
            "epsilon",
            format!("{epsilon} > 1; the quadratic rule needs epsilon <= 1"),
        )),
        CostModelKind::ChenBound => Ok(4.0 * epsilon * epsilon * tau),
    }
}

/// Privacy level at which the noise error is about `alpha` with
/// probability `1 - delta`.
pub fn epsilon_rule(alpha: f64, delta: f64, n: usize) -> Result<f64> {
    ensure_open_unit("alpha", alpha)?;
    ensure_open_unit("delta", delta)?;
    if n == 0 {
        return Err(Error::invalid("n", "need at least one agent"));
    }
    Ok((1.0 / delta).ln() / (alpha * n as f64))
}

/// Accuracy radius `ln(2/delta)/(epsilon n) + alpha`.
pub fn alpha_prime(alpha: f64, delta: f64, epsilon: f64, n: usize) -> f64 {
    (2.0 / delta).ln() / (epsilon * n as f64) + alpha
}

/// Whether `epsilon` is large enough for the accuracy radius to stay
/// within `2 alpha`.
pub fn accuracy_target_met(alpha: f64, delta: f64, epsilon: f64, n: usize) -> bool {
    epsilon >= (2.0 / delta).ln() / (alpha * n as f64)
}

/// Bound on one agent's expected payment, `beta + 4 rho alpha |p0 - p1|`,
/// written in terms of beta.
pub fn per_agent_payment_bound(beta: f64, alpha: f64, p0: f64, p1: f64) -> f64 {
    let gap = (p0 - p1).abs();
    beta * (1.0 + 4.0 * alpha * gap / (2.0 * (p1 - p0) * (p1 - p0) - 4.0 * alpha * gap))
}

pub fn total_payment_bound(beta: f64, alpha: f64, p0: f64, p1: f64, n: usize) -> f64 {
    n as f64 * per_agent_payment_bound(beta, alpha, p0, p1)
}

/// Closed form of [`total_payment_bound`] under the quadratic cost rules
/// `beta = 4 eps^2 tau` and `eps = ln(1/delta)/(alpha n)`.
pub fn quadratic_total_payment_bound(
    alpha: f64,
    delta: f64,
    tau: f64,
    p0: f64,
    p1: f64,
    n: usize,
) -> f64 {
    let gap = (p0 - p1).abs();
    let log = (1.0 / delta).ln();
    4.0 * log * log * tau / (alpha * alpha * n as f64)
        * (1.0 + 4.0 * alpha * gap / (2.0 * (p1 - p0) * (p1 - p0) - 4.0 * alpha * gap))
}

/// Everything an experiment needs besides its trial count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub prior: PriorSpec,
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub cost_model: CostModel,
    /// Replaces the surplus payment from [`beta_rule`].
    pub beta_override: Option<f64>,
    pub posterior_samples: u64,
    pub threshold_trials: u64,
    pub off_threshold: OffThreshold,
    #[serde(default)]
    pub clamp_payments: bool,
    #[serde(skip, default = "sampled_noise")]
    pub noise: NoiseMode,
}

fn sampled_noise() -> NoiseMode {
    NoiseMode::Sample
}

impl Scenario {
    pub fn new(
        prior: PriorSpec,
        n: usize,
        alpha: f64,
        delta: f64,
        epsilon: f64,
        cost_model: CostModel,
    ) -> Self {
        Self {
            prior,
            n,
            alpha,
            delta,
            epsilon,
            cost_model,
            beta_override: None,
            posterior_samples: DEFAULT_POSTERIOR_SAMPLES,
            threshold_trials: DEFAULT_THRESHOLD_TRIALS,
            off_threshold: OffThreshold::Abstain,
            clamp_payments: false,
            noise: NoiseMode::Sample,
        }
    }

    fn noise_spec(&self) -> Result<NoiseSpec> {
        Ok(match self.noise {
            NoiseMode::Sample => NoiseSpec::laplace(self.epsilon)?,
            NoiseMode::Disabled => NoiseSpec::disabled_for_tests(),
            NoiseMode::Fixed(x) => NoiseSpec::fixed_for_tests(x),
        })
    }

    /// Resolves the threshold, surplus payment, and posterior predictions.
    /// The threshold uses confidence `delta / 2`; the other half of `delta`
    /// is reserved for the noise.
    pub fn resolve(&self, seed: u64) -> Result<ResolvedParams> {
        ensure_open_unit("alpha", self.alpha)?;
        ensure_open_unit("delta", self.delta)?;
        ensure_positive("epsilon", self.epsilon)?;
        let threshold = cost_threshold(
            &self.prior,
            self.alpha,
            self.delta / 2.0,
            self.n,
            self.threshold_trials,
            derive_seed(seed, "threshold"),
        )?;
        let beta_from_rule = beta_rule(self.cost_model.kind, self.epsilon, threshold.tau);
        let beta = match self.beta_override {
            Some(b) => {
                ensure_positive("beta", b)?;
                b
            }
            None => beta_from_rule?,
        };
        let noise = self.noise_spec()?;
        let posterior = |bit: u8, tag: &str| {
            posterior_clamped_mean(
                &self.prior,
                bit,
                self.n,
                &noise,
                self.posterior_samples,
                derive_seed(seed, tag),
            )
        };
        let p0 = posterior(0, "posterior-0")?.mean;
        let p1 = posterior(1, "posterior-1")?.mean;
        Ok(ResolvedParams {
            epsilon: self.epsilon,
            beta,
            tau: threshold.tau,
            tau_population: threshold.tau_population,
            tau_conditional: threshold.tau_conditional,
            p0,
            p1,
        })
    }

    pub fn mechanism_config(&self, resolved: &ResolvedParams) -> Result<MechanismConfig> {
        Ok(MechanismConfig::new(
            self.n,
            self.alpha,
            resolved.beta,
            self.epsilon,
            resolved.p0,
            resolved.p1,
        )?
        .with_clamped_payments(self.clamp_payments)
        .with_test_noise(self.noise))
    }

    /// Equilibrium play: everyone at or below the threshold reports truthfully.
    pub fn equilibrium_profile(&self, resolved: &ResolvedParams) -> StrategyProfile {
        StrategyProfile::Symmetric(Strategy::Threshold {
            tau: resolved.tau,
            off: self.off_threshold,
        })
    }

    fn effective_epsilon(&self) -> f64 {
        match self.noise {
            NoiseMode::Sample => self.epsilon,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub epsilon: f64,
    pub beta: f64,
    pub tau: f64,
    pub tau_population: f64,
    pub tau_conditional: f64,
    pub p0: f64,
    pub p1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitAudit {
    pub bit: u8,
    pub probe_cost: f64,
    pub truth: UtilityEstimate,
    pub lie: UtilityEstimate,
    pub abstain: UtilityEstimate,
    /// Simulated `E[p~_{-i} | b_i]` under the threshold profile.
    pub peer_mean: f64,
    pub peer_ci: f64,
    /// Posterior prediction `p_b` the mechanism pays against.
    pub prediction: f64,
    /// `|peer_mean - prediction|`; the analysis assumes at most alpha.
    pub deviation: f64,
    pub deviation_within_alpha: Verdict,
    /// Upper 99% confidence limit of `deviation`.
    pub alpha_prime_measured: f64,
    /// `beta + 2 rho (alpha + alpha_prime_measured) |p0 - p1|`.
    pub payment_upper_bound: f64,
    pub within_payment_bound: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumVerdicts {
    pub truth_ge_beta: Verdict,
    pub lie_le_zero: Verdict,
    pub truth_dominates: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumAuditReport {
    pub truth_payment_mean: f64,
    pub truth_payment_ci: f64,
    pub lie_payment_mean: f64,
    pub lie_payment_ci: f64,
    pub abstain_utility_bound: f64,
    pub beta: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub p0: f64,
    pub p1: f64,
    /// Worst-case privacy cost of an agent at the threshold.
    pub privacy_cost_at_tau: f64,
    /// Whether beta covers `privacy_cost_at_tau`.
    pub privacy_margin: Verdict,
    pub verdicts: EquilibriumVerdicts,
    pub per_bit: Vec<BitAudit>,
    pub trials: u64,
}

impl EquilibriumAuditReport {
    pub fn overall(&self) -> Verdict {
        Verdict::combine([
            self.verdicts.truth_ge_beta,
            self.verdicts.lie_le_zero,
            self.verdicts.truth_dominates,
            self.privacy_margin,
        ])
    }
}

/// One simulated survey from the probe agent's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub bit: u8,
    pub trial: u64,
    pub peer_estimate: f64,
    pub truth_payment: f64,
    pub lie_payment: f64,
}

/// Checks that a probe agent just below the threshold prefers truthful
/// participation when everyone else plays the threshold strategy.
pub fn best_response_audit(
    scenario: &Scenario,
    trials: u64,
    seed: u64,
) -> Result<EquilibriumAuditReport> {
    let resolved = scenario.resolve(seed)?;
    best_response_audit_with(scenario, &resolved, trials, seed).map(|(report, _)| report)
}

pub fn best_response_audit_with(
    scenario: &Scenario,
    resolved: &ResolvedParams,
    trials: u64,
    seed: u64,
) -> Result<(EquilibriumAuditReport, Vec<ProbeRecord>)> {
    if trials < 1000 {
        return Err(Error::invalid("trials", "need at least 1000 trials"));
    }
    let config = scenario.mechanism_config(resolved)?;
    let params = config.scoring_params()?;
    let others = scenario.equilibrium_profile(resolved);
    let probe_cost = resolved.tau * PROBE_COST_FACTOR;

    let mut per_bit = Vec::with_capacity(2);
    let mut records = Vec::with_capacity(2 * trials as usize);
    for bit in 0..=1u8 {
        let agent = AgentType::new(bit, probe_cost)?;
        let tag = if bit == 0 { "probe-0" } else { "probe-1" };
        let peers = sample_peer_estimates(
            bit,
            &others,
            &scenario.prior,
            &config,
            trials,
            derive_seed(seed, tag),
        )?;
        let eval =
            |action| utility_from_samples(&agent, action, &peers, &config, &scenario.cost_model);
        let truth = eval(Action::Truth)?;
        let peer = MeanEstimate::from_values(&peers);
        let prediction = params.prediction(bit);
        let deviation = (peer.mean - prediction).abs();
        let alpha_prime_measured = deviation + peer.ci99();
        let payment_upper_bound = params.payment_upper_bound(alpha_prime_measured);
        per_bit.push(BitAudit {
            bit,
            probe_cost,
            truth,
            lie: eval(Action::Lie)?,
            abstain: eval(Action::Abstain)?,
            peer_mean: peer.mean,
            peer_ci: peer.ci99(),
            prediction,
            deviation,
            deviation_within_alpha: Verdict::at_most(deviation, peer.ci99(), scenario.alpha),
            alpha_prime_measured,
            payment_upper_bound,
            // Payments are affine in the peer estimate, so the sampling
            // error is already carried by alpha_prime_measured.
            within_payment_bound: Verdict::from_bool(truth.mean_payment <= payment_upper_bound),
        });
        let truth_report = Action::Truth.report(bit);
        let lie_report = Action::Lie.report(bit);
        records.extend(peers.iter().enumerate().map(|(t, &p)| ProbeRecord {
            bit,
            trial: t as u64,
            peer_estimate: p,
            truth_payment: payment_for(&params, config.clamp_payments, p, truth_report),
            lie_payment: payment_for(&params, config.clamp_payments, p, lie_report),
        }));
    }

    let worst_truth = per_bit
        .iter()
        .min_by(|a, b| {
            (a.truth.mean_payment - a.truth.payment_ci_halfwidth)
                .total_cmp(&(b.truth.mean_payment - b.truth.payment_ci_halfwidth))
        })
        .expect("two bits");
    let worst_lie = per_bit
        .iter()
        .max_by(|a, b| {
            (a.lie.mean_payment + a.lie.payment_ci_halfwidth)
                .total_cmp(&(b.lie.mean_payment + b.lie.payment_ci_halfwidth))
        })
        .expect("two bits");
    let abstain_utility_bound = per_bit
        .iter()
        .map(|b| b.abstain.utility_lower_bound)
        .fold(f64::NEG_INFINITY, f64::max);

    let truth_ge_beta = Verdict::at_least(
        worst_truth.truth.mean_payment,
        worst_truth.truth.payment_ci_halfwidth,
        resolved.beta,
    );
    let lie_le_zero = Verdict::at_most(
        worst_lie.lie.mean_payment,
        worst_lie.lie.payment_ci_halfwidth,
        0.0,
    );
    let truth_dominates = match (truth_ge_beta, lie_le_zero) {
        (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
        (Verdict::Pass, Verdict::Pass) => Verdict::at_least(
            worst_truth.truth.utility_lower_bound,
            worst_truth.truth.payment_ci_halfwidth,
            0.0,
        ),
        _ => Verdict::Inconclusive,
    };
    let privacy_cost_at_tau =
        privacy_cost_bound(&scenario.cost_model, resolved.tau, resolved.epsilon)?;

    let report = EquilibriumAuditReport {
        truth_payment_mean: worst_truth.truth.mean_payment,
        truth_payment_ci: worst_truth.truth.payment_ci_halfwidth,
        lie_payment_mean: worst_lie.lie.mean_payment,
        lie_payment_ci: worst_lie.lie.payment_ci_halfwidth,
        abstain_utility_bound,
        beta: resolved.beta,
        tau: resolved.tau,
        epsilon: resolved.epsilon,
        p0: resolved.p0,
        p1: resolved.p1,
        privacy_cost_at_tau,
        privacy_margin: Verdict::from_bool(resolved.beta >= privacy_cost_at_tau),
        verdicts: EquilibriumVerdicts {
            truth_ge_beta,
            lie_le_zero,
            truth_dominates,
        },
        per_bit,
        trials,
    };
    Ok((report, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub trial: u64,
    pub p_hat: f64,
    pub p_tilde: f64,
    pub abs_error: f64,
    pub success: bool,
    /// Agents whose report differs from their bit, abstentions included.
    pub non_truthful: usize,
    pub participants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub alpha_prime: f64,
    pub success_fraction: f64,
    pub trials: u64,
    pub delta: f64,
    /// Three binomial standard deviations below `1 - delta`.
    pub allowance: f64,
    pub mean_abs_error: f64,
    pub verdict: Verdict,
}

/// Samples populations, applies `profile`, runs the mechanism, and counts
/// how often the estimate lands within `alpha_prime` of the truth.
pub fn accuracy_experiment(
    scenario: &Scenario,
    resolved: &ResolvedParams,
    profile: &StrategyProfile,
    trials: u64,
    seed: u64,
) -> Result<(AccuracyReport, Vec<AccuracyRecord>)> {
    if trials < 100 {
        return Err(Error::invalid("trials", "need at least 100 trials"));
    }
    profile.validate()?;
    scenario.prior.validate()?;
    let mechanism = Mechanism::new(scenario.mechanism_config(resolved)?)?;
    let radius = alpha_prime(
        scenario.alpha,
        scenario.delta,
        scenario.effective_epsilon(),
        scenario.n,
    );
    let records = par_trials(trials, derive_seed(seed, "accuracy"), |trial, rng| {
        let population = Population::sample_with(&scenario.prior, scenario.n, rng);
        let reports = profile.apply(&population.agents);
        let outcome = mechanism.run(&reports, rng).expect("length matches n");
        let p_hat = true_statistic(&population).expect("nonempty");
        let abs_error = (p_hat - outcome.estimate).abs();
        AccuracyRecord {
            trial,
            p_hat,
            p_tilde: outcome.estimate,
            abs_error,
            success: abs_error <= radius,
            non_truthful: population
                .agents
                .iter()
                .zip(&reports)
                .filter(|(a, r)| r.bit() != Some(a.bit))
                .count(),
            participants: reports.iter().filter(|r| **r != Report::Abstain).count(),
        }
    });
    let successes = records.iter().filter(|r| r.success).count();
    let success_fraction = successes as f64 / trials as f64;
    let target = 1.0 - scenario.delta;
    let allowance = 3.0 * binomial_sigma(target, trials);
    let mean_abs_error = records.iter().map(|r| r.abs_error).sum::<f64>() / trials as f64;
    Ok((
        AccuracyReport {
            alpha_prime: radius,
            success_fraction,
            trials,
            delta: scenario.delta,
            allowance,
            mean_abs_error,
            verdict: Verdict::from_bool(success_fraction >= target - allowance),
        },
        records,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub n: usize,
    pub trial: u64,
    pub total_payment: f64,
    pub participants: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostScalingRow {
    pub n: usize,
    pub resolved: ResolvedParams,
    pub total_payment_mean: f64,
    pub total_payment_se: f64,
    pub cost_bound: f64,
    pub within_bound: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostScalingReport {
    pub alpha: f64,
    pub delta: f64,
    pub rows: Vec<CostScalingRow>,
    /// Least-squares slope of ln(mean total payment) against ln(n).
    pub slope: f64,
    pub verdict: Verdict,
}

/// Measures the surveyor's total payment in threshold equilibrium under the
/// quadratic cost model, with epsilon and beta set by their rules at each
/// population size.
pub fn cost_scaling_experiment(
    base: &Scenario,
    ns: &[usize],
    trials: u64,
    seed: u64,
) -> Result<(CostScalingReport, Vec<CostRecord>)> {
    if ns.len() < 2 {
        return Err(Error::invalid("ns", "need at least two population sizes"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let mut rows = Vec::with_capacity(ns.len());
    let mut records = Vec::new();
    for &n in ns {
        let epsilon = epsilon_rule(base.alpha, base.delta, n)?;
        if epsilon > 1.0 {
            return Err(Error::invalid(
                "ns",
                format!("n = {n} gives epsilon = {epsilon} > 1"),
            ));
        }
        let scenario = Scenario {
            n,
            epsilon,
            cost_model: CostModel {
                kind: CostModelKind::ChenBound,
                ..base.cost_model
            },
            beta_override: None,
            ..base.clone()
        };
        let n_seed = derive_seed(seed, &format!("cost-scaling-{n}"));
        let resolved = scenario.resolve(n_seed)?;
        let mechanism = Mechanism::new(scenario.mechanism_config(&resolved)?)?;
        let profile = scenario.equilibrium_profile(&resolved);
        let batch = par_trials(trials, derive_seed(n_seed, "trials"), |trial, rng| {
            let population = Population::sample_with(&scenario.prior, n, rng);
            let reports = profile.apply(&population.agents);
            let outcome = mechanism.run(&reports, rng).expect("length matches n");
            CostRecord {
                n,
                trial,
                total_payment: outcome.total_payment(),
                participants: reports.iter().filter(|r| **r != Report::Abstain).count(),
            }
        });
        let totals: Vec<f64> = batch.iter().map(|r| r.total_payment).collect();
        let est = MeanEstimate::from_values(&totals);
        let bound = quadratic_total_payment_bound(
            base.alpha,
            base.delta,
            resolved.tau,
            resolved.p0,
            resolved.p1,
            n,
        );
        rows.push(CostScalingRow {
            n,
            resolved,
            total_payment_mean: est.mean,
            total_payment_se: est.std_err,
            cost_bound: bound,
            within_bound: Verdict::from_bool(est.mean <= bound + 3.0 * est.std_err),
        });
        records.extend(batch);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.total_payment_mean.ln()))
        .unzip();
    let slope = ols_slope(&xs, &ys);
    let slope_ok = slope >= SLOPE_RANGE.0 && slope <= SLOPE_RANGE.1;
    let verdict = Verdict::combine(
        rows.iter()
            .map(|r| r.within_bound)
            .chain(std::iter::once(Verdict::from_bool(slope_ok))),
    );
    Ok((
        CostScalingReport {
            alpha: base.alpha,
            delta: base.delta,
            rows,
            slope,
            verdict,
        },
        records,
    ))
}
